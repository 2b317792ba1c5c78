//! Rate-bound statistics for both service classes.
//!
//! Every moment is power-independent: transmit powers enter only through
//! [`sinr_user`] and [`sinr_device`], which keeps each SINR constraint
//! linear in the powers.

mod closed;
mod monte_carlo;
mod report;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;

pub use closed::{device_moments_closed, device_moments_corrected, user_moments_closed, DeviceLsfTerms};
pub use monte_carlo::{mc_device_moments, mc_moments, mc_user_moments, McEstimate, McOutput};
pub use report::{compare_devices, compare_users, compare_values, ComparisonEntry, ComparisonReport, Tolerances};

/// Statistics of the broadband-user UatF bound under MRC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserMoments {
    /// Desired-signal gain `|D_u|^2`.
    pub delta: Vec<f64>,
    /// Channel-uncertainty power.
    pub upsilon: Vec<f64>,
    /// User-to-user interference `kappa[u][k]`; the diagonal is unused.
    pub kappa: Vec<Vec<f64>>,
    /// Device-to-user interference `varkappa[u][d]`.
    pub varkappa: Vec<Vec<f64>>,
    /// Noise power after combining.
    pub xi: Vec<f64>,
}

/// Statistics of the despread device UatF bound under MRC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceMoments {
    /// Desired-signal gain `|S_d|^2`.
    pub lambda: Vec<f64>,
    /// Channel-uncertainty power; may be negative when evaluated from the
    /// closed form, never when estimated.
    pub nu: Vec<f64>,
    /// Device-to-device interference `epsilon[d][k]`; the diagonal is unused.
    pub epsilon: Vec<Vec<f64>>,
    /// Total user-to-device interference over all PRBs, `varepsilon[d][u]`.
    pub varepsilon: Vec<Vec<f64>>,
    /// Noise power after despreading.
    pub chi: Vec<f64>,
}

impl UserMoments {
    pub fn zeros(users: usize, devices: usize) -> Self {
        UserMoments {
            delta: vec![0.0; users],
            upsilon: vec![0.0; users],
            kappa: vec![vec![0.0; users]; users],
            varkappa: vec![vec![0.0; devices]; users],
            xi: vec![0.0; users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.delta.len()
    }

    /// Multiplies every moment by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * c).collect::<Vec<_>>();
        UserMoments {
            delta: s(&self.delta),
            upsilon: s(&self.upsilon),
            kappa: self.kappa.iter().map(s).collect(),
            varkappa: self.varkappa.iter().map(s).collect(),
            xi: s(&self.xi),
        }
    }
}

impl DeviceMoments {
    pub fn zeros(devices: usize, users: usize) -> Self {
        DeviceMoments {
            lambda: vec![0.0; devices],
            nu: vec![0.0; devices],
            epsilon: vec![vec![0.0; devices]; devices],
            varepsilon: vec![vec![0.0; users]; devices],
            chi: vec![0.0; devices],
        }
    }

    pub fn num_devices(&self) -> usize {
        self.lambda.len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * c).collect::<Vec<_>>();
        DeviceMoments {
            lambda: s(&self.lambda),
            nu: s(&self.nu),
            epsilon: self.epsilon.iter().map(s).collect(),
            varepsilon: self.varepsilon.iter().map(s).collect(),
            chi: s(&self.chi),
        }
    }
}

/// User SINRs
/// `p_u delta_u / (p_u upsilon_u + sum_{k != u} p_k kappa_uk + sum_d q_d varkappa_ud + xi_u)`.
pub fn sinr_user(p: &[f64], q: &[f64], um: &UserMoments) -> Vec<f64> {
    (0..um.num_users())
        .map(|u| {
            let users: f64 = (0..p.len()).filter(|&k| k != u).map(|k| p[k] * um.kappa[u][k]).sum();
            let devices: f64 = q.iter().zip(&um.varkappa[u]).map(|(qd, v)| qd * v).sum();
            let signal = p[u] * um.delta[u];
            if signal == 0.0 {
                return 0.0;
            }
            signal / (p[u] * um.upsilon[u] + users + devices + um.xi[u])
        })
        .collect()
}

/// Device SINRs
/// `q_d lambda_d / (q_d nu_d + sum_{k != d} q_k epsilon_dk + sum_u p_u varepsilon_du + chi_d)`.
pub fn sinr_device(p: &[f64], q: &[f64], dm: &DeviceMoments) -> Vec<f64> {
    (0..dm.num_devices())
        .map(|d| {
            let devices: f64 = (0..q.len()).filter(|&k| k != d).map(|k| q[k] * dm.epsilon[d][k]).sum();
            let users: f64 = p.iter().zip(&dm.varepsilon[d]).map(|(pu, v)| pu * v).sum();
            let signal = q[d] * dm.lambda[d];
            if signal == 0.0 {
                return 0.0;
            }
            signal / (q[d] * dm.nu[d] + devices + users + dm.chi[d])
        })
        .collect()
}

/// `(tau_u / tau_c) B log2(1 + gamma)`.
pub fn rate_user(gamma: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    let scale = cfg.prelog() * cfg.bandwidth_hz;
    gamma.iter().map(|g| scale * g.ln_1p() / std::f64::consts::LN_2).collect()
}

/// `(tau_u / tau_c) (B / N) log2(1 + rho)`.
pub fn rate_device(rho: &[f64], cfg: &SystemConfig) -> Vec<f64> {
    let scale = cfg.prelog() * cfg.bandwidth_hz / cfg.num_prbs as f64;
    rho.iter().map(|r| scale * r.ln_1p() / std::f64::consts::LN_2).collect()
}
