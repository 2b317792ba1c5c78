//! Random deployments: geometry on a wrapped square, large-scale fading,
//! spatial correlation and terminal-centric AP association.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{FadingModel, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{is_hermitian, is_scaled_identity, scaled_identity, trace, CMatrix, C64};
use crate::rng::stream_rng;

pub type Point = [f64; 2];

/// Distances below this are clamped before evaluating the path loss.
pub const MIN_DISTANCE_M: f64 = 10.0;

const STREAM_APS: u64 = 1;
const STREAM_USERS: u64 = 2;
const STREAM_DEVICES: u64 = 3;
const STREAM_SHADOWING: u64 = 4;

/// Signed per-axis offset from `from` to `to` on a torus of the given side.
fn wrapped_delta(from: Point, to: Point, side: f64) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let mut d = (to[k] - from[k]).rem_euclid(side);
        if d > side / 2.0 {
            d -= side;
        }
        *o = d;
    }
    out
}

/// Euclidean distance on the square `[0, side)^2` with its edges wrapped.
pub fn wrap_distance(p1: Point, p2: Point, side: f64) -> f64 {
    let mut acc = 0.0;
    for k in 0..2 {
        let d = (p1[k] - p2[k]).abs();
        let d = d.min(side - d);
        acc += d * d;
    }
    acc.sqrt()
}

/// Urban-micro NLoS path loss in dB,
/// `36.7 log10(d) + 22.7 + 26 log10(fc / 1 GHz)` with `d` floored at 10 m.
pub fn path_loss_db(distance_m: f64, carrier_freq_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!("distance must be positive, got {distance_m}")));
    }
    if !(carrier_freq_hz > 0.0) {
        return Err(Error::Domain(format!("carrier frequency must be positive, got {carrier_freq_hz}")));
    }
    let d = distance_m.max(MIN_DISTANCE_M);
    Ok(36.7 * d.log10() + 22.7 + 26.0 * (carrier_freq_hz / 1e9).log10())
}

/// Linear large-scale fading coefficient for a path loss in dB.
pub fn lsf_from_db(path_loss_db: f64) -> f64 {
    10f64.powf(-path_loss_db / 10.0)
}

/// Selects the `serving` APs with the largest LSF; ties go to the lower index.
pub fn associate(lsf_row: &[f64], serving: usize) -> Result<Vec<bool>> {
    if serving > lsf_row.len() {
        return Err(Error::Domain(format!(
            "cannot associate {serving} APs out of {}",
            lsf_row.len()
        )));
    }
    let mut order: Vec<usize> = (0..lsf_row.len()).collect();
    order.sort_by(|&i, &j| lsf_row[j].total_cmp(&lsf_row[i]).then(i.cmp(&j)));
    let mut mask = vec![false; lsf_row.len()];
    for &i in &order[..serving] {
        mask[i] = true;
    }
    Ok(mask)
}

/// Builds the spatial covariance of one terminal-AP link.
///
/// Implementations must return a Hermitian PSD `L x L` matrix whose trace
/// equals `L * lsf`.
pub trait CorrelationProvider {
    fn correlation(&self, lsf: f64, terminal: Point, ap: Point, antennas: usize, side: f64) -> CMatrix;

    fn is_uncorrelated(&self) -> bool {
        false
    }
}

impl CorrelationProvider for FadingModel {
    fn correlation(&self, lsf: f64, terminal: Point, ap: Point, antennas: usize, side: f64) -> CMatrix {
        match *self {
            FadingModel::Uncorrelated => scaled_identity(antennas, lsf),
            FadingModel::Exponential { magnitude } => {
                let delta = wrapped_delta(ap, terminal, side);
                let azimuth = delta[1].atan2(delta[0]);
                CMatrix::from_fn(antennas, antennas, |i, j| {
                    let lag = i as i32 - j as i32;
                    C64::from_polar(lsf * magnitude.powi(lag.abs()), azimuth * lag as f64)
                })
            }
        }
    }

    fn is_uncorrelated(&self) -> bool {
        FadingModel::is_uncorrelated(self)
    }
}

/// A generated deployment. Immutable once built.
///
/// Tables are indexed `[terminal][ap]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_side_m: f64,
    pub antennas_per_ap: usize,
    pub serving_aps: usize,
    pub ap_positions: Vec<Point>,
    pub user_positions: Vec<Point>,
    pub device_positions: Vec<Point>,
    /// User LSF coefficients (linear).
    pub alpha: Vec<Vec<f64>>,
    /// Device LSF coefficients (linear).
    pub beta: Vec<Vec<f64>>,
    /// User spatial covariances.
    pub r: Vec<Vec<CMatrix>>,
    /// Device spatial covariances.
    pub q: Vec<Vec<CMatrix>>,
    /// User-AP association mask.
    pub a: Vec<Vec<bool>>,
    /// Device-AP association mask.
    pub b: Vec<Vec<bool>>,
    /// Noise power per AP in watts.
    pub noise_power: Vec<f64>,
    /// Whether every covariance is a scaled identity.
    pub uncorrelated: bool,
}

impl Scenario {
    /// Builds an uncorrelated scenario directly from LSF tables and masks,
    /// with all terminals and APs placed at the origin.
    pub fn from_tables(
        alpha: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        a: Vec<Vec<bool>>,
        b: Vec<Vec<bool>>,
        noise_power: Vec<f64>,
        antennas: usize,
    ) -> Result<Self> {
        let aps = noise_power.len();
        if alpha.iter().chain(&beta).any(|row| row.len() != aps)
            || a.len() != alpha.len()
            || b.len() != beta.len()
            || a.iter().chain(&b).any(|row| row.len() != aps)
        {
            return Err(Error::Domain("inconsistent table shapes".into()));
        }
        let serving = a.iter().chain(&b).map(|row| row.iter().filter(|&&x| x).count()).next().unwrap_or(aps);
        let cov = |lsf: &[Vec<f64>]| -> Vec<Vec<CMatrix>> {
            lsf.iter().map(|row| row.iter().map(|&v| scaled_identity(antennas, v)).collect()).collect()
        };
        Ok(Scenario {
            area_side_m: 1.0,
            antennas_per_ap: antennas,
            serving_aps: serving,
            ap_positions: vec![[0.0; 2]; aps],
            user_positions: vec![[0.0; 2]; alpha.len()],
            device_positions: vec![[0.0; 2]; beta.len()],
            r: cov(&alpha),
            q: cov(&beta),
            alpha,
            beta,
            a,
            b,
            noise_power,
            uncorrelated: true,
        })
    }

    pub fn num_aps(&self) -> usize {
        self.noise_power.len()
    }

    pub fn num_users(&self) -> usize {
        self.alpha.len()
    }

    pub fn num_devices(&self) -> usize {
        self.beta.len()
    }

    pub fn antennas(&self) -> usize {
        self.antennas_per_ap
    }

    /// Checks the structural invariants: LSF equals normalized trace,
    /// Hermitian covariances, `serving_aps` ones per association row.
    pub fn check_invariants(&self) -> Result<()> {
        let l = self.antennas_per_ap as f64;
        let tables = [(&self.alpha, &self.r, &self.a, "user"), (&self.beta, &self.q, &self.b, "device")];
        for (lsf, cov, mask, kind) in tables {
            for (t, row) in lsf.iter().enumerate() {
                for (m, &v) in row.iter().enumerate() {
                    let tr = trace(&cov[t][m]).re / l;
                    if (tr - v).abs() > 1e-12 * v.abs() {
                        return Err(Error::Numerical(format!("{kind} {t} AP {m}: trace/L = {tr} but LSF = {v}")));
                    }
                    if !is_hermitian(&cov[t][m], 1e-12) {
                        return Err(Error::Numerical(format!("{kind} {t} AP {m}: covariance not Hermitian")));
                    }
                }
                let ones = mask[t].iter().filter(|&&x| x).count();
                if ones != self.serving_aps {
                    return Err(Error::Numerical(format!("{kind} {t} has {ones} serving APs")));
                }
            }
        }
        Ok(())
    }

    /// True when all covariances equal `LSF * I` exactly.
    pub fn has_scaled_identity_covariances(&self) -> bool {
        let tables = [(&self.alpha, &self.r), (&self.beta, &self.q)];
        tables.iter().all(|(lsf, cov)| {
            lsf.iter()
                .zip(cov.iter())
                .all(|(lrow, crow)| lrow.iter().zip(crow).all(|(&v, c)| is_scaled_identity(c, v, 0.0)))
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn uniform_points(count: usize, side: f64, seed: u64, stream: u64) -> Vec<Point> {
    let mut rng = stream_rng(seed, stream);
    (0..count)
        .map(|_| [rng.random::<f64>() * side, rng.random::<f64>() * side])
        .collect()
}

/// Generates a deployment using the fading model named in the config.
pub fn generate_scenario(cfg: &SystemConfig, seed: u64) -> Result<Scenario> {
    generate_scenario_with(cfg, seed, &cfg.fading)
}

/// Generates a deployment with a caller-supplied correlation model.
///
/// APs, users and devices are drawn from separate random streams, so
/// changing one population size leaves the other positions untouched.
pub fn generate_scenario_with(
    cfg: &SystemConfig,
    seed: u64,
    provider: &dyn CorrelationProvider,
) -> Result<Scenario> {
    cfg.validate()?;
    let side = cfg.area_side_m;
    let aps = uniform_points(cfg.num_aps, side, seed, STREAM_APS);
    let users = uniform_points(cfg.num_users, side, seed, STREAM_USERS);
    let devices = uniform_points(cfg.num_devices, side, seed, STREAM_DEVICES);
    let mut shadow_rng = stream_rng(seed, STREAM_SHADOWING);

    let mut lsf_table = |terminals: &[Point]| -> Result<Vec<Vec<f64>>> {
        terminals
            .iter()
            .map(|&t| {
                aps.iter()
                    .map(|&ap| {
                        let mut pl = path_loss_db(wrap_distance(t, ap, side), cfg.carrier_freq_hz)?;
                        if let Some(std) = cfg.shadowing_std_db {
                            let z: f64 = shadow_rng.sample(StandardNormal);
                            pl += std * z;
                        }
                        Ok(lsf_from_db(pl))
                    })
                    .collect()
            })
            .collect()
    };
    let alpha = lsf_table(&users)?;
    let beta = lsf_table(&devices)?;

    let l = cfg.antennas_per_ap;
    let cov_table = |terminals: &[Point], lsf: &[Vec<f64>]| -> Vec<Vec<CMatrix>> {
        terminals
            .iter()
            .zip(lsf)
            .map(|(&t, row)| {
                aps.iter()
                    .zip(row)
                    .map(|(&ap, &v)| provider.correlation(v, t, ap, l, side))
                    .collect()
            })
            .collect()
    };
    let r = cov_table(&users, &alpha);
    let q = cov_table(&devices, &beta);

    let a = alpha.iter().map(|row| associate(row, cfg.serving_aps)).collect::<Result<Vec<_>>>()?;
    let b = beta.iter().map(|row| associate(row, cfg.serving_aps)).collect::<Result<Vec<_>>>()?;

    let mut scenario = Scenario {
        area_side_m: side,
        antennas_per_ap: l,
        serving_aps: cfg.serving_aps,
        ap_positions: aps,
        user_positions: users,
        device_positions: devices,
        alpha,
        beta,
        r,
        q,
        a,
        b,
        noise_power: vec![cfg.noise_power_w(); cfg.num_aps],
        uncorrelated: false,
    };
    scenario.uncorrelated = provider.is_uncorrelated() || scenario.has_scaled_identity_covariances();
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wrap_distance_examples() {
        assert_eq!(wrap_distance([0.0, 0.0], [999.0, 0.0], 1000.0), 1.0);
        assert!((wrap_distance([0.0, 0.0], [500.0, 500.0], 1000.0) - 707.1067811865476).abs() < 1e-9);
        assert_eq!(wrap_distance([100.0, 100.0], [100.0, 100.0], 1000.0), 0.0);
    }

    #[test]
    fn path_loss_examples() {
        let pl100 = path_loss_db(100.0, 2e9).unwrap();
        assert!((pl100 - 103.926_779_887).abs() < 1e-6, "{pl100}");
        // 36.7 + 22.7 + 26 log10(2)
        let pl10 = path_loss_db(10.0, 2e9).unwrap();
        assert!((pl10 - 67.226_779_887).abs() < 1e-6, "{pl10}");
        assert_eq!(path_loss_db(5.0, 2e9).unwrap(), pl10);
        assert!(matches!(path_loss_db(0.0, 2e9), Err(Error::Domain(_))));
        assert!(matches!(path_loss_db(-3.0, 2e9), Err(Error::Domain(_))));
    }

    #[test]
    fn association_examples() {
        assert_eq!(associate(&[3.0, 1.0, 2.0], 2).unwrap(), vec![true, false, true]);
        assert_eq!(associate(&[1.0, 1.0, 1.0], 1).unwrap(), vec![true, false, false]);
        assert_eq!(associate(&[0.2, 0.9, 0.4], 3).unwrap(), vec![true; 3]);
        assert!(matches!(associate(&[1.0, 2.0], 3), Err(Error::Domain(_))));
    }

    fn small_cfg() -> SystemConfig {
        let mut cfg = SystemConfig::reference_defaults().with_terminals(15, 10).unwrap();
        cfg.num_aps = 9;
        cfg.antennas_per_ap = 3;
        cfg
    }

    #[test]
    fn generated_cardinalities_and_invariants() {
        let cfg = small_cfg();
        let s = generate_scenario(&cfg, 11).unwrap();
        assert_eq!(s.num_aps(), 9);
        assert_eq!(s.num_users(), 15);
        assert_eq!(s.num_devices(), 10);
        assert!(s.uncorrelated);
        s.check_invariants().unwrap();
        for row in s.a.iter().chain(&s.b) {
            assert_eq!(row.iter().filter(|&&x| x).count(), cfg.serving_aps);
        }
        for &sigma2 in &s.noise_power {
            assert!((crate::config::watts_to_dbm(sigma2) + 100.99).abs() < 5e-3);
        }
    }

    #[test]
    fn association_is_exhaustive_top_k() {
        let s = generate_scenario(&small_cfg(), 5).unwrap();
        for (row, mask) in s.alpha.iter().zip(&s.a) {
            let served_min = row.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::INFINITY, f64::min);
            let unserved_max = row.iter().zip(mask).filter(|(_, &m)| !m).map(|(v, _)| *v).fold(0.0, f64::max);
            assert!(served_min >= unserved_max);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_scenario(&cfg, 42).unwrap();
        let b = generate_scenario(&cfg, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_scenario(&cfg, 43).unwrap();
        assert_ne!(a.ap_positions, c.ap_positions);
    }

    #[test]
    fn correlated_model_keeps_trace() {
        let mut cfg = small_cfg();
        cfg.fading = FadingModel::Exponential { magnitude: 0.7 };
        let s = generate_scenario(&cfg, 3).unwrap();
        assert!(!s.uncorrelated);
        s.check_invariants().unwrap();
        let eig = nalgebra::SymmetricEigen::new(s.r[0][0].clone());
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-20));
    }

    #[test]
    fn json_round_trip() {
        let s = generate_scenario(&small_cfg(), 9).unwrap();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn shadowing_changes_lsf_but_not_positions() {
        let cfg = small_cfg();
        let mut shadowed = cfg.clone();
        shadowed.shadowing_std_db = Some(4.0);
        let a = generate_scenario(&cfg, 1).unwrap();
        let b = generate_scenario(&shadowed, 1).unwrap();
        assert_eq!(a.user_positions, b.user_positions);
        assert_ne!(a.alpha, b.alpha);
    }

    fn point(side: f64) -> impl Strategy<Value = Point> {
        (0.0..side, 0.0..side).prop_map(|(x, y)| [x, y])
    }

    proptest! {
        #[test]
        fn wrap_distance_is_a_metric(p in point(1000.0), q in point(1000.0), r in point(1000.0)) {
            let side = 1000.0;
            let pq = wrap_distance(p, q, side);
            prop_assert!((pq - wrap_distance(q, p, side)).abs() < 1e-9);
            prop_assert_eq!(wrap_distance(p, p, side), 0.0);
            if p != q {
                prop_assert!(pq > 0.0);
            }
            prop_assert!(pq <= wrap_distance(p, r, side) + wrap_distance(r, q, side) + 1e-9);
            prop_assert!(pq <= side / 2.0 * 2f64.sqrt() + 1e-9);
        }

        #[test]
        fn lsf_monotone_in_distance(d1 in 0.1f64..2000.0, d2 in 0.1f64..2000.0) {
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let l_near = lsf_from_db(path_loss_db(near, 2e9).unwrap());
            let l_far = lsf_from_db(path_loss_db(far, 2e9).unwrap());
            prop_assert!(l_near >= l_far);
        }

        #[test]
        fn association_selects_top_entries(row in prop::collection::vec(0.0f64..1.0, 1..12), k in 0usize..12) {
            let k = k.min(row.len());
            let mask = associate(&row, k).unwrap();
            prop_assert_eq!(mask.iter().filter(|&&m| m).count(), k);
            for (i, &mi) in mask.iter().enumerate() {
                for (j, &mj) in mask.iter().enumerate() {
                    if mi && !mj {
                        prop_assert!(row[i] > row[j] || (row[i] == row[j] && i < j));
                    }
                }
            }
        }
    }
}
