//! Sample-mean estimators of every moment, built from the raw received
//! signal model with MRC combining and despreading.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSampler, EstimatorSet, PilotStage};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{dotc, C64};
use crate::rng::{complex_normal, stream_rng};
use crate::scenario::Scenario;
use crate::sequences::{PilotBook, SpreadingBook};

use super::{DeviceMoments, UserMoments};

const MAX_BATCHES: usize = 64;

/// A Monte Carlo estimate and its batch-means standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate<T> {
    pub value: T,
    /// Same shape as `value`; `NaN` when fewer than two batches ran.
    pub std_err: T,
    pub trials: usize,
    /// PRBs per trial for users (each PRB is one sample), 1 for devices.
    pub samples_per_trial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutput {
    pub users: Option<McEstimate<UserMoments>>,
    pub devices: Option<McEstimate<DeviceMoments>>,
}

trait Flat: Sized {
    fn flat(&self) -> Vec<f64>;
    fn with_flat(&self, v: &[f64]) -> Self;
}

fn take(it: &mut std::slice::Iter<'_, f64>, n: usize) -> Vec<f64> {
    it.by_ref().take(n).copied().collect()
}

impl Flat for UserMoments {
    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.delta);
        v.extend(&self.upsilon);
        self.kappa.iter().for_each(|r| v.extend(r));
        self.varkappa.iter().for_each(|r| v.extend(r));
        v.extend(&self.xi);
        v
    }

    fn with_flat(&self, v: &[f64]) -> Self {
        let mut it = v.iter();
        let ku = self.delta.len();
        let kd = self.varkappa.first().map_or(0, Vec::len);
        UserMoments {
            delta: take(&mut it, ku),
            upsilon: take(&mut it, ku),
            kappa: (0..ku).map(|_| take(&mut it, ku)).collect(),
            varkappa: (0..ku).map(|_| take(&mut it, kd)).collect(),
            xi: take(&mut it, ku),
        }
    }
}

impl Flat for DeviceMoments {
    fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&self.lambda);
        v.extend(&self.nu);
        self.epsilon.iter().for_each(|r| v.extend(r));
        self.varepsilon.iter().for_each(|r| v.extend(r));
        v.extend(&self.chi);
        v
    }

    fn with_flat(&self, v: &[f64]) -> Self {
        let mut it = v.iter();
        let kd = self.lambda.len();
        let ku = self.varepsilon.first().map_or(0, Vec::len);
        DeviceMoments {
            lambda: take(&mut it, kd),
            nu: take(&mut it, kd),
            epsilon: (0..kd).map(|_| take(&mut it, kd)).collect(),
            varepsilon: (0..kd).map(|_| take(&mut it, ku)).collect(),
            chi: take(&mut it, kd),
        }
    }
}

/// Running sums for the user statistics; one sample per PRB.
#[derive(Debug, Clone)]
struct UserSums {
    count: f64,
    signal: Vec<C64>,
    signal_sq: Vec<f64>,
    kappa: Vec<Vec<f64>>,
    varkappa: Vec<Vec<f64>>,
    xi: Vec<f64>,
}

impl UserSums {
    fn new(ku: usize, kd: usize) -> Self {
        UserSums {
            count: 0.0,
            signal: vec![C64::new(0.0, 0.0); ku],
            signal_sq: vec![0.0; ku],
            kappa: vec![vec![0.0; ku]; ku],
            varkappa: vec![vec![0.0; kd]; ku],
            xi: vec![0.0; ku],
        }
    }

    fn merge(&mut self, o: &UserSums) {
        self.count += o.count;
        add_c(&mut self.signal, &o.signal);
        add(&mut self.signal_sq, &o.signal_sq);
        self.kappa.iter_mut().zip(&o.kappa).for_each(|(a, b)| add(a, b));
        self.varkappa.iter_mut().zip(&o.varkappa).for_each(|(a, b)| add(a, b));
        add(&mut self.xi, &o.xi);
    }

    fn finish(&self) -> UserMoments {
        let n = self.count;
        let mean: Vec<C64> = self.signal.iter().map(|s| s / n).collect();
        UserMoments {
            delta: mean.iter().map(|m| m.norm_sqr()).collect(),
            upsilon: sample_variance(&self.signal_sq, &mean, n),
            kappa: self.kappa.iter().map(|r| r.iter().map(|v| v / n).collect()).collect(),
            varkappa: self.varkappa.iter().map(|r| r.iter().map(|v| v / n).collect()).collect(),
            xi: self.xi.iter().map(|v| v / n).collect(),
        }
    }
}

/// Running sums for the despread device statistics; one sample per trial.
#[derive(Debug, Clone)]
struct DeviceSums {
    count: f64,
    signal: Vec<f64>,
    signal_sq: Vec<f64>,
    epsilon: Vec<Vec<f64>>,
    varepsilon: Vec<Vec<f64>>,
    chi: Vec<f64>,
}

impl DeviceSums {
    fn new(kd: usize, ku: usize) -> Self {
        DeviceSums {
            count: 0.0,
            signal: vec![0.0; kd],
            signal_sq: vec![0.0; kd],
            epsilon: vec![vec![0.0; kd]; kd],
            varepsilon: vec![vec![0.0; ku]; kd],
            chi: vec![0.0; kd],
        }
    }

    fn merge(&mut self, o: &DeviceSums) {
        self.count += o.count;
        add(&mut self.signal, &o.signal);
        add(&mut self.signal_sq, &o.signal_sq);
        self.epsilon.iter_mut().zip(&o.epsilon).for_each(|(a, b)| add(a, b));
        self.varepsilon.iter_mut().zip(&o.varepsilon).for_each(|(a, b)| add(a, b));
        add(&mut self.chi, &o.chi);
    }

    fn finish(&self) -> DeviceMoments {
        let n = self.count;
        let mean: Vec<C64> = self.signal.iter().map(|s| C64::new(s / n, 0.0)).collect();
        DeviceMoments {
            lambda: mean.iter().map(|m| m.norm_sqr()).collect(),
            nu: sample_variance(&self.signal_sq, &mean, n),
            epsilon: self.epsilon.iter().map(|r| r.iter().map(|v| v / n).collect()).collect(),
            varepsilon: self.varepsilon.iter().map(|r| r.iter().map(|v| v / n).collect()).collect(),
            chi: self.chi.iter().map(|v| v / n).collect(),
        }
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn add_c(a: &mut [C64], b: &[C64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn sample_variance(sum_sq: &[f64], mean: &[C64], n: f64) -> Vec<f64> {
    sum_sq
        .iter()
        .zip(mean)
        .map(|(s, m)| {
            if n > 1.0 {
                ((s - n * m.norm_sqr()) / (n - 1.0)).max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-thread buffers for one trial.
struct Trial<'a> {
    scenario: &'a Scenario,
    codes: Option<&'a SpreadingBook>,
    sampler: &'a ChannelSampler,
    stage: PilotStage<'a>,
    prbs: usize,
    h: Vec<C64>,
    g: Vec<C64>,
    h_hat: Vec<C64>,
    g_hat: Vec<C64>,
    noise: Vec<C64>,
    dev_signal: Vec<f64>,
    dev_j: Vec<Vec<C64>>,
    dev_je: Vec<C64>,
    dev_w: Vec<C64>,
}

impl Trial<'_> {
    fn run(&mut self, seed: u64, index: u64, users: Option<&mut UserSums>, devices: Option<&mut DeviceSums>) {
        let s = self.scenario;
        let (ku, kd, aps, l) = (s.num_users(), s.num_devices(), s.num_aps(), s.antennas());
        let link = |t: usize, m: usize| (t * aps + m) * l..(t * aps + m + 1) * l;
        let mut rng = stream_rng(seed, index);
        let mut users = users;
        let track_devices = devices.is_some();
        if track_devices {
            self.dev_signal.iter_mut().for_each(|v| *v = 0.0);
            self.dev_j.iter_mut().flatten().for_each(|v| *v = C64::new(0.0, 0.0));
            self.dev_w.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        }
        let mut je_total = vec![vec![0.0; ku]; if track_devices { kd } else { 0 }];

        for n in 0..self.prbs {
            self.sampler.draw_prb(&mut rng, &mut self.h, &mut self.g);
            self.stage.estimate_prb(&mut rng, &self.h, &self.g, &mut self.h_hat, &mut self.g_hat);
            for m in 0..aps {
                let sigma = s.noise_power[m].sqrt();
                for v in &mut self.noise[m * l..(m + 1) * l] {
                    *v = complex_normal(&mut rng) * sigma;
                }
            }

            if let Some(acc) = users.as_deref_mut() {
                acc.count += 1.0;
                for u in 0..ku {
                    let mut x = C64::new(0.0, 0.0);
                    let mut inter_u = vec![C64::new(0.0, 0.0); ku];
                    let mut inter_d = vec![C64::new(0.0, 0.0); kd];
                    let mut w = C64::new(0.0, 0.0);
                    for m in (0..aps).filter(|&m| s.a[u][m]) {
                        let f = &self.h_hat[link(u, m)];
                        x += dotc(f, &self.h[link(u, m)]);
                        for (k, acc_k) in inter_u.iter_mut().enumerate() {
                            if k != u {
                                *acc_k += dotc(f, &self.h[link(k, m)]);
                            }
                        }
                        for (d, acc_d) in inter_d.iter_mut().enumerate() {
                            *acc_d += dotc(f, &self.g[link(d, m)]);
                        }
                        w += dotc(f, &self.noise[m * l..(m + 1) * l]);
                    }
                    acc.signal[u] += x;
                    acc.signal_sq[u] += x.norm_sqr();
                    for k in 0..ku {
                        acc.kappa[u][k] += inter_u[k].norm_sqr();
                    }
                    for d in 0..kd {
                        acc.varkappa[u][d] += inter_d[d].norm_sqr();
                    }
                    acc.xi[u] += w.norm_sqr();
                }
            }

            if track_devices {
                let codes = self.codes.expect("codes present when devices are tracked");
                for d in 0..kd {
                    let cd = codes.chip(d, n);
                    self.dev_je.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                    for m in (0..aps).filter(|&m| s.b[d][m]) {
                        let t = &self.g_hat[link(d, m)];
                        let mu = dotc(&self.g[link(d, m)], t);
                        self.dev_signal[d] += mu.norm_sqr();
                        for k in 0..kd {
                            if k != d {
                                self.dev_j[d][k] += cd * codes.chip(k, n) * mu * dotc(t, &self.g[link(k, m)]);
                            }
                        }
                        for u in 0..ku {
                            self.dev_je[u] += cd * mu * dotc(t, &self.h[link(u, m)]);
                        }
                        self.dev_w[d] += cd * mu * dotc(t, &self.noise[m * l..(m + 1) * l]);
                    }
                    for u in 0..ku {
                        je_total[d][u] += self.dev_je[u].norm_sqr();
                    }
                }
            }
        }

        if let Some(acc) = devices {
            acc.count += 1.0;
            for d in 0..kd {
                acc.signal[d] += self.dev_signal[d];
                acc.signal_sq[d] += self.dev_signal[d] * self.dev_signal[d];
                for k in 0..kd {
                    acc.epsilon[d][k] += self.dev_j[d][k].norm_sqr();
                }
                add(&mut acc.varepsilon[d], &je_total[d]);
                acc.chi[d] += self.dev_w[d].norm_sqr();
            }
        }
    }
}

fn batch_std_err<T: Flat>(value: &T, batches: &[T]) -> T {
    let nb = batches.len();
    let flat: Vec<Vec<f64>> = batches.iter().map(Flat::flat).collect();
    let len = value.flat().len();
    let se: Vec<f64> = (0..len)
        .map(|i| {
            if nb < 2 {
                return f64::NAN;
            }
            let mean = flat.iter().map(|b| b[i]).sum::<f64>() / nb as f64;
            let var = flat.iter().map(|b| (b[i] - mean).powi(2)).sum::<f64>() / (nb - 1) as f64;
            (var / nb as f64).sqrt()
        })
        .collect();
    value.with_flat(&se)
}

/// Joint estimator for users and (when `codes` is given) devices, sharing
/// the same channel, pilot-noise and data-noise draws.
///
/// Trial `i` draws everything from stream `i` of `seed`, so the result does
/// not depend on the thread count.
pub fn mc_moments(
    scenario: &Scenario,
    est: &EstimatorSet,
    pilots: &PilotBook,
    codes: Option<&SpreadingBook>,
    cfg: &SystemConfig,
    trials: usize,
    seed: u64,
    with_users: bool,
) -> Result<McOutput> {
    if trials == 0 {
        return Err(Error::Domain("Monte Carlo needs at least one trial".into()));
    }
    let (ku, kd, aps, l) = (scenario.num_users(), scenario.num_devices(), scenario.num_aps(), scenario.antennas());
    let prbs = cfg.num_prbs;
    if let Some(c) = codes {
        if c.spreading_gain() != prbs {
            return Err(Error::Domain(format!(
                "spreading gain {} does not match {} PRBs",
                c.spreading_gain(),
                prbs
            )));
        }
        if c.num_devices() != kd {
            return Err(Error::Domain(format!("{} codes for {} devices", c.num_devices(), kd)));
        }
    }
    let with_devices = codes.is_some() && kd > 0;
    let with_users = with_users && ku > 0;
    let sampler = ChannelSampler::new(scenario);
    let nb = trials.min(MAX_BATCHES);

    let batches: Vec<(UserSums, DeviceSums)> = (0..nb)
        .into_par_iter()
        .map(|b| {
            let start = b * trials / nb;
            let end = (b + 1) * trials / nb;
            let mut trial = Trial {
                scenario,
                codes,
                sampler: &sampler,
                stage: PilotStage::new(scenario, est, pilots, cfg),
                prbs,
                h: vec![C64::new(0.0, 0.0); ku * aps * l],
                g: vec![C64::new(0.0, 0.0); kd * aps * l],
                h_hat: vec![C64::new(0.0, 0.0); ku * aps * l],
                g_hat: vec![C64::new(0.0, 0.0); kd * aps * l],
                noise: vec![C64::new(0.0, 0.0); aps * l],
                dev_signal: vec![0.0; kd],
                dev_j: vec![vec![C64::new(0.0, 0.0); kd]; kd],
                dev_je: vec![C64::new(0.0, 0.0); ku],
                dev_w: vec![C64::new(0.0, 0.0); kd],
            };
            let mut us = UserSums::new(ku, kd);
            let mut ds = DeviceSums::new(kd, ku);
            for i in start..end {
                trial.run(
                    seed,
                    i as u64,
                    with_users.then_some(&mut us),
                    with_devices.then_some(&mut ds),
                );
            }
            (us, ds)
        })
        .collect();

    let users = with_users.then(|| {
        let mut total = UserSums::new(ku, kd);
        batches.iter().for_each(|(u, _)| total.merge(u));
        let value = total.finish();
        let per_batch: Vec<UserMoments> = batches.iter().map(|(u, _)| u.finish()).collect();
        McEstimate { std_err: batch_std_err(&value, &per_batch), value, trials, samples_per_trial: prbs }
    });
    let devices = with_devices.then(|| {
        let mut total = DeviceSums::new(kd, ku);
        batches.iter().for_each(|(_, d)| total.merge(d));
        let value = total.finish();
        let per_batch: Vec<DeviceMoments> = batches.iter().map(|(_, d)| d.finish()).collect();
        McEstimate { std_err: batch_std_err(&value, &per_batch), value, trials, samples_per_trial: 1 }
    });
    Ok(McOutput { users, devices })
}

/// Estimates the user moments; each of the `trials` draws contributes one
/// sample per PRB.
pub fn mc_user_moments(
    scenario: &Scenario,
    est: &EstimatorSet,
    pilots: &PilotBook,
    cfg: &SystemConfig,
    trials: usize,
    seed: u64,
) -> Result<McEstimate<UserMoments>> {
    if scenario.num_users() == 0 {
        return Err(Error::Domain("scenario has no users".into()));
    }
    let out = mc_moments(scenario, est, pilots, None, cfg, trials, seed, true)?;
    Ok(out.users.expect("users requested"))
}

/// Estimates the despread device moments; each trial is one full
/// realization over all PRBs.
pub fn mc_device_moments(
    scenario: &Scenario,
    est: &EstimatorSet,
    pilots: &PilotBook,
    codes: &SpreadingBook,
    cfg: &SystemConfig,
    trials: usize,
    seed: u64,
) -> Result<McEstimate<DeviceMoments>> {
    if scenario.num_devices() == 0 {
        return Err(Error::Domain("scenario has no devices".into()));
    }
    let out = mc_moments(scenario, est, pilots, Some(codes), cfg, trials, seed, false)?;
    Ok(out.devices.expect("devices requested"))
}
