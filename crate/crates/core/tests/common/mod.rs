#![allow(dead_code)]

use cellfree::channel::{build_estimators, EstimatorSet};
use cellfree::scenario::{generate_scenario, Scenario};
use cellfree::sequences::{build_pilot_book, spreading_book_for_gain, PilotBook, SpreadingBook};
use cellfree::SystemConfig;

pub struct Instance {
    pub cfg: SystemConfig,
    pub scenario: Scenario,
    pub pilots: PilotBook,
    pub est: EstimatorSet,
    pub codes: SpreadingBook,
}

pub fn config(aps: usize, antennas: usize, ku: usize, kd: usize, prbs: usize) -> SystemConfig {
    let mut cfg = SystemConfig::reference_defaults().with_terminals(ku, kd).unwrap();
    cfg.num_aps = aps;
    cfg.antennas_per_ap = antennas;
    cfg.serving_aps = cfg.serving_aps.min(aps);
    cfg.num_prbs = prbs;
    cfg
}

pub fn instance(cfg: SystemConfig, seed: u64) -> Instance {
    let scenario = generate_scenario(&cfg, seed).unwrap();
    let pilots = build_pilot_book(cfg.pilot_len, cfg.num_users, cfg.num_devices, seed).unwrap();
    let est = build_estimators(&scenario, &pilots, &cfg).unwrap();
    let codes = spreading_book_for_gain(cfg.num_prbs, cfg.num_devices).unwrap();
    Instance { cfg, scenario, pilots, est, codes }
}

/// M=5, L=2, Ku=4, Kd=6, N=7.
pub fn desk(seed: u64) -> Instance {
    instance(config(5, 2, 4, 6, 7), seed)
}

/// Sampled MMSE statistics for one terminal at one AP.
pub struct MmseCheck {
    /// `||S_err - (R - eta A R)||_F / ||R - eta A R||_F`.
    pub error_gap: f64,
    /// `||S_est - eta A C A^H||_F / ||eta A C A^H||_F`.
    pub estimate_gap: f64,
    /// `||E[h_hat e^H]||_F / ||E[h_hat h_hat^H]||_F`.
    pub cross_ratio: f64,
}

/// Draws `draws` PRBs of user 0 at AP 0 and compares sample covariances
/// with the MMSE identities.
pub fn mmse_check(scenario: &Scenario, cfg: &SystemConfig, pilots: &PilotBook, draws: usize, seed: u64) -> MmseCheck {
    use cellfree::channel::{draw_channels, estimate_channels};
    use cellfree::linalg::CMatrix;
    use num_complex::Complex64;

    let est = build_estimators(scenario, pilots, cfg).unwrap();
    let draw = draw_channels(scenario, draws, seed);
    let hat = estimate_channels(&draw, &est, pilots, scenario, cfg, seed ^ 0x5eed).unwrap();
    let l = scenario.antennas();
    let outer = |x: &[Complex64], y: &[Complex64]| CMatrix::from_fn(l, l, |i, j| x[i] * y[j].conj());
    let mut s_err = CMatrix::zeros(l, l);
    let mut s_est = CMatrix::zeros(l, l);
    let mut s_cross = CMatrix::zeros(l, l);
    for n in 0..draws {
        let h = draw.h.get(n, 0, 0);
        let e_hat = hat.h_hat.get(n, 0, 0);
        let e: Vec<Complex64> = h.iter().zip(e_hat).map(|(a, b)| a - b).collect();
        s_err += outer(&e, &e);
        s_est += outer(e_hat, e_hat);
        s_cross += outer(e_hat, &e);
    }
    let k = draws as f64;
    let (s_err, s_est, s_cross) = (s_err.unscale(k), s_est.unscale(k), s_cross.unscale(k));
    let eta = cfg.pilot_power_user_w[0];
    let (r, a, c) = (&scenario.r[0][0], &est.a[0][0], &est.c[0][0]);
    let err_ref = r - (a * r).scale(eta);
    let est_ref = (a * c * a.adjoint()).scale(eta);
    MmseCheck {
        error_gap: (&s_err - &err_ref).norm() / err_ref.norm(),
        estimate_gap: (&s_est - &est_ref).norm() / est_ref.norm(),
        cross_ratio: s_cross.norm() / s_est.norm(),
    }
}

/// One AP, `users` users all on pilot 0, exponential correlation 0.7.
pub fn single_ap(users: usize, antennas: usize, seed: u64) -> (Scenario, SystemConfig, PilotBook) {
    let mut cfg = config(1, antennas, users, 0, 1);
    cfg.serving_aps = 1;
    cfg.fading = cellfree::FadingModel::Exponential { magnitude: 0.7 };
    let scenario = generate_scenario(&cfg, seed).unwrap();
    let pilots = PilotBook::from_assignment(cfg.pilot_len, vec![0; users], vec![]).unwrap();
    (scenario, cfg, pilots)
}
