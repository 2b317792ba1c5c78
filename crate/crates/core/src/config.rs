//! Scalar system parameters shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a power level in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Spatial correlation model used to build the per-link covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FadingModel {
    /// `R = alpha * I`.
    #[default]
    Uncorrelated,
    /// Exponential correlation along a uniform linear array,
    /// `[R]_{ij} = alpha * (c * e^{j theta})^{i-j}` with `theta` the
    /// terminal's azimuth seen from the AP.
    Exponential { magnitude: f64 },
}

impl FadingModel {
    pub fn is_uncorrelated(&self) -> bool {
        matches!(self, FadingModel::Uncorrelated)
    }
}

/// Pilot length and uplink data length derived from the terminal count:
/// `tau_p = ceil((Ku + Kd) / 2)`, `tau_u = floor((tau_c - tau_p) / 2)`.
pub fn derive_tau(num_users: usize, num_devices: usize, coherence_samples: usize) -> Result<(usize, usize)> {
    let tau_p = (num_users + num_devices).div_ceil(2).max(1);
    if tau_p >= coherence_samples {
        return Err(Error::Config(format!(
            "pilot length {tau_p} does not fit in a coherence block of {coherence_samples} samples"
        )));
    }
    let tau_u = (coherence_samples - tau_p) / 2;
    Ok((tau_p, tau_u))
}

/// All scalar parameters of a deployment.
///
/// Powers are in watts, frequencies in hertz, distances in meters. The
/// per-terminal pilot powers are vectors. In a config file, an omitted
/// pilot-power vector means "pilot at the terminal's peak power" and an
/// omitted `pilot_len` or `ul_symbols` is derived from the terminal count;
/// [`SystemConfig::from_toml`] resolves both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_users: usize,
    pub num_devices: usize,
    /// Number of PRBs, equal to the spreading gain (chips per device symbol).
    pub num_prbs: usize,
    pub serving_aps: usize,
    pub area_side_m: f64,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub coherence_samples: usize,
    #[serde(default)]
    pub pilot_len: usize,
    #[serde(default)]
    pub ul_symbols: usize,
    pub max_user_power_w: f64,
    pub max_device_power_w: f64,
    #[serde(default)]
    pub pilot_power_user_w: Vec<f64>,
    #[serde(default)]
    pub pilot_power_device_w: Vec<f64>,
    pub qos_rate_bps: f64,
    /// Minimum device SINR, linear.
    pub sinr_floor: f64,
    /// Log-normal shadowing standard deviation in dB; `None` disables shadowing.
    pub shadowing_std_db: Option<f64>,
    pub fading: FadingModel,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self::reference_defaults()
    }
}

impl SystemConfig {
    /// Reference deployment: 50 APs with 8 antennas over 1 km², 10 users,
    /// 50 devices, 255 PRBs, 5 serving APs per terminal.
    pub fn reference_defaults() -> Self {
        let num_users = 10;
        let num_devices = 50;
        let coherence_samples = 200;
        let (pilot_len, ul_symbols) =
            derive_tau(num_users, num_devices, coherence_samples).expect("default frame fits");
        let max_user_power_w = dbm_to_watts(20.0);
        let max_device_power_w = dbm_to_watts(10.0);
        SystemConfig {
            num_aps: 50,
            antennas_per_ap: 8,
            num_users,
            num_devices,
            num_prbs: 255,
            serving_aps: 5,
            area_side_m: 1000.0,
            carrier_freq_hz: 2e9,
            bandwidth_hz: 20e6,
            noise_density_dbm_hz: -174.0,
            coherence_samples,
            pilot_len,
            ul_symbols,
            max_user_power_w,
            max_device_power_w,
            pilot_power_user_w: vec![max_user_power_w; num_users],
            pilot_power_device_w: vec![max_device_power_w; num_devices],
            qos_rate_bps: 10e3,
            sinr_floor: db_to_linear(-6.7),
            shadowing_std_db: None,
            fading: FadingModel::Uncorrelated,
        }
    }

    /// Same deployment with new terminal counts; pilot/data lengths are
    /// re-derived and pilot-power vectors resized to the peak powers.
    pub fn with_terminals(&self, num_users: usize, num_devices: usize) -> Result<Self> {
        let (pilot_len, ul_symbols) = derive_tau(num_users, num_devices, self.coherence_samples)?;
        Ok(SystemConfig {
            num_users,
            num_devices,
            pilot_len,
            ul_symbols,
            pilot_power_user_w: vec![self.max_user_power_w; num_users],
            pilot_power_device_w: vec![self.max_device_power_w; num_devices],
            ..self.clone()
        })
    }

    /// Fills empty pilot-power vectors with the peak powers.
    pub fn fill_pilot_powers(&mut self) {
        if self.pilot_power_user_w.is_empty() {
            self.pilot_power_user_w = vec![self.max_user_power_w; self.num_users];
        }
        if self.pilot_power_device_w.is_empty() {
            self.pilot_power_device_w = vec![self.max_device_power_w; self.num_devices];
        }
    }

    /// Derives `pilot_len`/`ul_symbols` when left at zero and fills empty
    /// pilot-power vectors.
    pub fn resolve(&mut self) -> Result<()> {
        if self.pilot_len == 0 || self.ul_symbols == 0 {
            let (tau_p, tau_u) = derive_tau(self.num_users, self.num_devices, self.coherence_samples)?;
            if self.pilot_len == 0 {
                self.pilot_len = tau_p;
            }
            if self.ul_symbols == 0 {
                self.ul_symbols = tau_u;
            }
        }
        self.fill_pilot_powers();
        Ok(())
    }

    /// Parses, resolves and validates a TOML config.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: SystemConfig = toml::from_str(text)?;
        cfg.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Noise power per AP, `N0 * B`, in watts.
    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_density_dbm_hz) * self.bandwidth_hz
    }

    /// Fraction of the coherence block used for uplink data, `tau_u / tau_c`.
    pub fn prelog(&self) -> f64 {
        self.ul_symbols as f64 / self.coherence_samples as f64
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_aps", self.num_aps),
            ("antennas_per_ap", self.antennas_per_ap),
            ("num_prbs", self.num_prbs),
            ("serving_aps", self.serving_aps),
            ("coherence_samples", self.coherence_samples),
            ("pilot_len", self.pilot_len),
            ("ul_symbols", self.ul_symbols),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.num_users + self.num_devices == 0 {
            return Err(Error::Config("at least one terminal is required".into()));
        }
        if self.serving_aps > self.num_aps {
            return Err(Error::Config(format!(
                "serving_aps ({}) exceeds num_aps ({})",
                self.serving_aps, self.num_aps
            )));
        }
        if self.pilot_len + self.ul_symbols > self.coherence_samples {
            return Err(Error::Config(format!(
                "pilot_len + ul_symbols = {} exceeds coherence_samples = {}",
                self.pilot_len + self.ul_symbols,
                self.coherence_samples
            )));
        }
        if !is_spreading_gain(self.num_prbs) {
            return Err(Error::Config(format!(
                "num_prbs = {} is not of the form 2^n - 1",
                self.num_prbs
            )));
        }
        let positives = [
            ("area_side_m", self.area_side_m),
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("max_user_power_w", self.max_user_power_w),
            ("max_device_power_w", self.max_device_power_w),
            ("sinr_floor", self.sinr_floor),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.qos_rate_bps >= 0.0 && self.qos_rate_bps.is_finite()) {
            return Err(Error::Config("qos_rate_bps must be non-negative".into()));
        }
        if !self.noise_density_dbm_hz.is_finite() {
            return Err(Error::Config("noise_density_dbm_hz must be finite".into()));
        }
        if self.pilot_power_user_w.len() != self.num_users {
            return Err(Error::Config(format!(
                "pilot_power_user_w has {} entries for {} users",
                self.pilot_power_user_w.len(),
                self.num_users
            )));
        }
        if self.pilot_power_device_w.len() != self.num_devices {
            return Err(Error::Config(format!(
                "pilot_power_device_w has {} entries for {} devices",
                self.pilot_power_device_w.len(),
                self.num_devices
            )));
        }
        if self
            .pilot_power_user_w
            .iter()
            .chain(&self.pilot_power_device_w)
            .any(|&p| !(p > 0.0 && p.is_finite()))
        {
            return Err(Error::Config("pilot powers must be positive".into()));
        }
        if let Some(std) = self.shadowing_std_db {
            if !(std >= 0.0 && std.is_finite()) {
                return Err(Error::Config("shadowing_std_db must be non-negative".into()));
            }
        }
        if let FadingModel::Exponential { magnitude } = self.fading {
            if !(0.0..1.0).contains(&magnitude) {
                return Err(Error::Config("exponential correlation magnitude must lie in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// True for `N = 2^n - 1` with `n >= 1`.
pub fn is_spreading_gain(n: usize) -> bool {
    n >= 1 && (n + 1).is_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_from_reference_counts() {
        assert_eq!(derive_tau(10, 50, 200).unwrap(), (30, 85));
        assert_eq!(derive_tau(1, 1, 200).unwrap(), (1, 99));
        assert_eq!(derive_tau(3, 0, 200).unwrap(), (2, 99));
        assert!(matches!(derive_tau(200, 200, 200), Err(Error::Config(_))));
    }

    #[test]
    fn noise_power_matches_density_times_bandwidth() {
        let cfg = SystemConfig::reference_defaults();
        let dbm = watts_to_dbm(cfg.noise_power_w());
        assert!((dbm - (-174.0 + 10.0 * 2e7f64.log10())).abs() < 1e-9);
        assert!((dbm + 100.99).abs() < 5e-3);
    }

    #[test]
    fn defaults_validate() {
        let cfg = SystemConfig::reference_defaults();
        cfg.validate().unwrap();
        assert!((cfg.max_user_power_w - 0.1).abs() < 1e-12);
        assert!((cfg.max_device_power_w - 0.01).abs() < 1e-12);
        assert!((cfg.sinr_floor - 0.2138).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_spreading_gain() {
        let mut cfg = SystemConfig::reference_defaults();
        cfg.num_prbs = 254;
        assert!(cfg.validate().is_err());
        cfg.num_prbs = 1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_too_many_serving_aps() {
        let mut cfg = SystemConfig::reference_defaults();
        cfg.serving_aps = 51;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_overrides_and_derives() {
        let cfg = SystemConfig::from_toml("num_users = 4\nnum_devices = 6\nnum_aps = 5\nserving_aps = 3\n").unwrap();
        assert_eq!((cfg.pilot_len, cfg.ul_symbols), (5, 97));
        assert_eq!(cfg.pilot_power_user_w, vec![cfg.max_user_power_w; 4]);
        assert_eq!(cfg.antennas_per_ap, 8);
        let cfg = SystemConfig::from_toml("[fading]\nkind = \"exponential\"\nmagnitude = 0.5\n").unwrap();
        assert_eq!(cfg.fading, FadingModel::Exponential { magnitude: 0.5 });
        assert!(SystemConfig::from_toml("num_prbs = 6").is_err());
        assert!(SystemConfig::from_toml("num_users = 2\npilot_power_user_w = [0.1]").is_err());
        assert!(SystemConfig::from_toml("num_users = 'x'").is_err());
        assert!(SystemConfig::from_toml("num_user = 3").is_err());
    }

    #[test]
    fn resize_keeps_pilot_vectors_consistent() {
        let cfg = SystemConfig::reference_defaults().with_terminals(4, 6).unwrap();
        assert_eq!(cfg.pilot_power_user_w.len(), 4);
        assert_eq!(cfg.pilot_power_device_w.len(), 6);
        assert_eq!((cfg.pilot_len, cfg.ul_symbols), (5, 97));
        cfg.validate().unwrap();
    }
}
