//! Closed-form UatF moments under MRC.

use crate::channel::EstimatorSet;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{is_scaled_identity, trace, trace_prod, trace_prod3};
use crate::scenario::Scenario;
use crate::sequences::PilotBook;

use super::{DeviceMoments, UserMoments};

/// User moments from trace expressions over the MMSE operators; valid for
/// arbitrary spatial correlation.
pub fn user_moments_closed(
    scenario: &Scenario,
    est: &EstimatorSet,
    pilots: &PilotBook,
    cfg: &SystemConfig,
) -> UserMoments {
    let (ku, kd, aps) = (scenario.num_users(), scenario.num_devices(), scenario.num_aps());
    let eta = &cfg.pilot_power_user_w;
    let zeta = &cfg.pilot_power_device_w;
    let mut um = UserMoments::zeros(ku, kd);

    for u in 0..ku {
        let serving: Vec<usize> = (0..aps).filter(|&m| scenario.a[u][m]).collect();
        // tr(A R) is real: A R = R C^{-1} R is Hermitian PSD.
        let tr_ar: Vec<f64> = serving
            .iter()
            .map(|&m| trace_prod(&est.a[u][m], &scenario.r[u][m]).re)
            .collect();
        let sum_tr_ar: f64 = tr_ar.iter().sum();
        um.delta[u] = eta[u] * eta[u] * sum_tr_ar * sum_tr_ar;
        um.upsilon[u] = eta[u]
            * serving
                .iter()
                .map(|&m| trace_prod3(&est.a[u][m], &scenario.r[u][m], &scenario.r[u][m]).re)
                .sum::<f64>();
        um.xi[u] = eta[u]
            * serving
                .iter()
                .zip(&tr_ar)
                .map(|(&m, t)| scenario.noise_power[m] * t)
                .sum::<f64>();

        for k in 0..ku {
            if k == u {
                continue;
            }
            let mut incoherent = 0.0;
            let mut coherent = num_complex::Complex64::new(0.0, 0.0);
            for &m in &serving {
                let ar = &est.a[u][m] * &scenario.r[u][m];
                incoherent += trace_prod(&ar, &scenario.r[k][m]).re;
                coherent += trace_prod(&est.a[u][m], &scenario.r[k][m]);
            }
            let g = pilots.gram_uu(k, u);
            um.kappa[u][k] = eta[u] * incoherent + eta[u] * eta[k] * g * g * coherent.norm_sqr();
        }
        for d in 0..kd {
            let mut incoherent = 0.0;
            let mut coherent = num_complex::Complex64::new(0.0, 0.0);
            for &m in &serving {
                let ar = &est.a[u][m] * &scenario.r[u][m];
                incoherent += trace_prod(&ar, &scenario.q[d][m]).re;
                coherent += trace_prod(&est.a[u][m], &scenario.q[d][m]);
            }
            let g = pilots.gram_ud(u, d);
            um.varkappa[u][d] = eta[u] * incoherent + eta[u] * zeta[d] * g * g * coherent.norm_sqr();
        }
    }
    um
}

/// Per-(device, AP) scalars of the uncorrelated-fading device closed form.
#[derive(Debug, Clone)]
pub struct DeviceLsfTerms {
    /// `tr(B_dm) / L`, indexed `[d][m]`.
    pub beta_hat: Vec<Vec<f64>>,
    /// Total pilot-observation power `sum_k beta~_kdm + sum_u alpha~_udm + sigma_m^2`.
    pub beta_bar: Vec<Vec<f64>>,
    /// `zeta_k beta_km |pi_k^H pi_d|^2`, indexed `[k][d][m]`.
    pub beta_tilde: Vec<Vec<Vec<f64>>>,
    /// `eta_u alpha_um |phi_u^H pi_d|^2`, indexed `[u][d][m]`.
    pub alpha_tilde: Vec<Vec<Vec<f64>>>,
}

impl DeviceLsfTerms {
    pub fn new(scenario: &Scenario, est: &EstimatorSet, pilots: &PilotBook, cfg: &SystemConfig) -> Self {
        let (ku, kd, aps) = (scenario.num_users(), scenario.num_devices(), scenario.num_aps());
        let l = scenario.antennas() as f64;
        let eta = &cfg.pilot_power_user_w;
        let zeta = &cfg.pilot_power_device_w;
        let beta_tilde: Vec<Vec<Vec<f64>>> = (0..kd)
            .map(|k| {
                (0..kd)
                    .map(|d| {
                        let g = pilots.gram_dd(k, d);
                        (0..aps).map(|m| zeta[k] * scenario.beta[k][m] * g * g).collect()
                    })
                    .collect()
            })
            .collect();
        let alpha_tilde: Vec<Vec<Vec<f64>>> = (0..ku)
            .map(|u| {
                (0..kd)
                    .map(|d| {
                        let g = pilots.gram_ud(u, d);
                        (0..aps).map(|m| eta[u] * scenario.alpha[u][m] * g * g).collect()
                    })
                    .collect()
            })
            .collect();
        let beta_bar = (0..kd)
            .map(|d| {
                (0..aps)
                    .map(|m| {
                        let devices: f64 = (0..kd).map(|k| beta_tilde[k][d][m]).sum();
                        let users: f64 = (0..ku).map(|u| alpha_tilde[u][d][m]).sum();
                        devices + users + scenario.noise_power[m]
                    })
                    .collect()
            })
            .collect();
        let beta_hat = (0..kd)
            .map(|d| (0..aps).map(|m| trace(&est.b[d][m]).re / l).collect())
            .collect();
        DeviceLsfTerms { beta_hat, beta_bar, beta_tilde, alpha_tilde }
    }
}

/// Device moments for uncorrelated fading from the reference closed-form
/// expressions, evaluated term by term.
///
/// The expressions for `nu`, `epsilon` and `varepsilon` are not verified
/// against the signal model; compare them with [`super::mc_device_moments`]
/// before relying on them.
pub fn device_moments_closed(
    scenario: &Scenario,
    est: &EstimatorSet,
    pilots: &PilotBook,
    cfg: &SystemConfig,
) -> Result<DeviceMoments> {
    let correlated = |lsf: &[Vec<f64>], cov: &[Vec<crate::linalg::CMatrix>]| {
        lsf.iter()
            .zip(cov)
            .any(|(lr, cr)| lr.iter().zip(cr).any(|(&v, c)| !is_scaled_identity(c, v, 1e-12)))
    };
    if correlated(&scenario.alpha, &scenario.r) || correlated(&scenario.beta, &scenario.q) {
        return Err(Error::UnsupportedModel(
            "closed-form device moments require uncorrelated fading; use the Monte Carlo estimator".into(),
        ));
    }
    let (ku, kd, aps) = (scenario.num_users(), scenario.num_devices(), scenario.num_aps());
    let l = scenario.antennas() as f64;
    let n = cfg.num_prbs as f64;
    let eta = &cfg.pilot_power_user_w;
    let zeta = &cfg.pilot_power_device_w;
    let t = DeviceLsfTerms::new(scenario, est, pilots, cfg);
    let mut dm = DeviceMoments::zeros(kd, ku);

    for d in 0..kd {
        let serving: Vec<usize> = (0..aps).filter(|&m| scenario.b[d][m]).collect();
        let bh = |m: usize| t.beta_hat[d][m];
        let bb = |m: usize| t.beta_bar[d][m];
        let own = |m: usize| t.beta_tilde[d][d][m];

        let s: f64 = serving.iter().map(|&m| bh(m).powi(2) * own(m) * (bb(m) + l * own(m))).sum();
        dm.lambda[d] = n * n * l * l * s * s;

        dm.nu[d] = n
            * l
            * (l + 1.0)
            * serving
                .iter()
                .map(|&m| {
                    let (bh, bb, own) = (bh(m), bb(m), own(m));
                    bh.powi(4)
                        * own.powi(2)
                        * (l * (l + 1.0) * own.powi(2) + 2.0 * bb * (2.0 * (l + 1.0) * own + bb)
                            - l * (bb + l * bh).powi(2))
                })
                .sum::<f64>();

        for k in 0..kd {
            if k == d {
                continue;
            }
            let mut incoherent = 0.0;
            let mut coherent = 0.0;
            for &m in &serving {
                let (bh, bb, own) = (bh(m), bb(m), own(m));
                let cross = t.beta_tilde[k][d][m];
                let beta_k = scenario.beta[k][m];
                incoherent += bh.powi(4)
                    * own
                    * beta_k
                    * ((l + 1.0) * bb * bb
                        + (l + 1.0).powi(2) * bb * (own + cross)
                        + l * (2.0 * l + 1.0) * own * cross);
                coherent += bh.powi(2) * own * beta_k;
            }
            let g = pilots.gram_dd(k, d);
            dm.epsilon[d][k] =
                n * l * zeta[d] * incoherent + l.powi(4) * zeta[d] * zeta[k] * g * g * coherent * coherent;
        }

        for u in 0..ku {
            let mut incoherent = 0.0;
            let mut coherent = 0.0;
            for &m in &serving {
                let (bh, bb, own) = (bh(m), bb(m), own(m));
                let cross = t.alpha_tilde[u][d][m];
                let alpha_u = scenario.alpha[u][m];
                incoherent += bh.powi(4)
                    * own
                    * alpha_u
                    * ((l + 1.0) * bb * bb
                        + (l + 1.0).powi(2) * bb * (own + cross)
                        + l * (2.0 * l + 1.0) * own * cross);
                coherent += bh.powi(2) * own * alpha_u;
            }
            let g = pilots.gram_ud(u, d);
            dm.varepsilon[d][u] =
                n * l * zeta[d] * incoherent + n * l.powi(4) * zeta[d] * eta[u] * g * g * coherent * coherent;
        }

        dm.chi[d] = n
            * l
            * (l + 1.0)
            * zeta[d]
            * serving
                .iter()
                .map(|&m| {
                    let (bh, bb, own) = (bh(m), bb(m), own(m));
                    bh.powi(4) * own * bb * scenario.noise_power[m] * ((l + 1.0) * own + bb)
                })
                .sum::<f64>();
    }
    Ok(dm)
}

/// Device moments with `nu` replaced by the exact variance of the despread
/// self-gain under uncorrelated fading,
/// `N sum_m b beta^4 bt^2 [L(L+1)(L(L+1) bt^2 + 2 bb(2(L+1) bt + bb)) - L^2 (bb + L bt)^2]`
/// with `beta^ = tr(B)/L`, `bt = beta~_dd`, `bb = beta-bar`.
///
/// The other four moments are returned as from [`device_moments_closed`].
pub fn device_moments_corrected(
    scenario: &Scenario,
    est: &EstimatorSet,
    pilots: &PilotBook,
    cfg: &SystemConfig,
) -> Result<DeviceMoments> {
    let mut dm = device_moments_closed(scenario, est, pilots, cfg)?;
    let t = DeviceLsfTerms::new(scenario, est, pilots, cfg);
    let l = scenario.antennas() as f64;
    let n = cfg.num_prbs as f64;
    for (d, nu) in dm.nu.iter_mut().enumerate() {
        *nu = n * (0..scenario.num_aps())
            .filter(|&m| scenario.b[d][m])
            .map(|m| {
                let (bh, bb, own) = (t.beta_hat[d][m], t.beta_bar[d][m], t.beta_tilde[d][d][m]);
                let fourth = l * (l + 1.0) * (l * (l + 1.0) * own * own + 2.0 * bb * (2.0 * (l + 1.0) * own + bb));
                bh.powi(4) * own * own * (fourth - l * l * (bb + l * own).powi(2))
            })
            .sum::<f64>();
    }
    Ok(dm)
}
