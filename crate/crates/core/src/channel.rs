//! Rayleigh channel realizations per PRB and MMSE channel estimation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_sqrt, matvec, right_solve_hpd, scaled_identity, CMatrix, C64};
use crate::rng::{complex_normal, stream_rng};
use crate::scenario::Scenario;
use crate::sequences::PilotBook;

/// Dense `[prb][terminal][ap]` table of `L`-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Links {
    pub prbs: usize,
    pub terminals: usize,
    pub aps: usize,
    pub antennas: usize,
    pub data: Vec<C64>,
}

impl Links {
    pub fn zeros(prbs: usize, terminals: usize, aps: usize, antennas: usize) -> Self {
        Links { prbs, terminals, aps, antennas, data: vec![C64::new(0.0, 0.0); prbs * terminals * aps * antennas] }
    }

    #[inline]
    fn offset(&self, prb: usize, terminal: usize, ap: usize) -> usize {
        ((prb * self.terminals + terminal) * self.aps + ap) * self.antennas
    }

    #[inline]
    pub fn get(&self, prb: usize, terminal: usize, ap: usize) -> &[C64] {
        let o = self.offset(prb, terminal, ap);
        &self.data[o..o + self.antennas]
    }

    /// All links of one PRB, laid out `[terminal][ap][antenna]`.
    pub fn prb(&self, prb: usize) -> &[C64] {
        let len = self.terminals * self.aps * self.antennas;
        &self.data[prb * len..(prb + 1) * len]
    }

    pub fn prb_mut(&mut self, prb: usize) -> &mut [C64] {
        let len = self.terminals * self.aps * self.antennas;
        &mut self.data[prb * len..(prb + 1) * len]
    }
}

/// One realization of every user and device channel over all PRBs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDraw {
    /// User-AP channels.
    pub h: Links,
    /// Device-AP channels.
    pub g: Links,
    pub seed: u64,
    pub draw_index: u64,
}

/// Channel estimates, same layout as [`ChannelDraw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub h_hat: Links,
    pub g_hat: Links,
}

/// Precomputed covariance square roots for sampling `CN(0, R)`.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    aps: usize,
    antennas: usize,
    users: Vec<Vec<CMatrix>>,
    devices: Vec<Vec<CMatrix>>,
}

impl ChannelSampler {
    pub fn new(scenario: &Scenario) -> Self {
        let roots = |cov: &[Vec<CMatrix>]| -> Vec<Vec<CMatrix>> {
            cov.iter().map(|row| row.iter().map(hermitian_sqrt).collect()).collect()
        };
        ChannelSampler {
            aps: scenario.num_aps(),
            antennas: scenario.antennas(),
            users: roots(&scenario.r),
            devices: roots(&scenario.q),
        }
    }

    fn fill<R: Rng + ?Sized>(&self, rng: &mut R, roots: &[Vec<CMatrix>], out: &mut [C64], z: &mut [C64]) {
        let l = self.antennas;
        for (t, row) in roots.iter().enumerate() {
            for (m, root) in row.iter().enumerate() {
                for zi in z.iter_mut() {
                    *zi = complex_normal(rng);
                }
                let o = (t * self.aps + m) * l;
                matvec(root, z, &mut out[o..o + l]);
            }
        }
    }

    /// Draws one PRB: users first, then devices, each `[terminal][ap]`.
    pub fn draw_prb<R: Rng + ?Sized>(&self, rng: &mut R, h: &mut [C64], g: &mut [C64]) {
        let mut z = vec![C64::new(0.0, 0.0); self.antennas];
        self.fill(rng, &self.users, h, &mut z);
        self.fill(rng, &self.devices, g, &mut z);
    }
}

/// Draws `prbs` independent realizations of all channels.
pub fn draw_channels(scenario: &Scenario, prbs: usize, seed: u64) -> ChannelDraw {
    draw_channels_indexed(scenario, prbs, seed, 0)
}

/// Draw number `draw_index` of the stream defined by `seed`.
pub fn draw_channels_indexed(scenario: &Scenario, prbs: usize, seed: u64, draw_index: u64) -> ChannelDraw {
    let sampler = ChannelSampler::new(scenario);
    let (ku, kd, m, l) = (scenario.num_users(), scenario.num_devices(), scenario.num_aps(), scenario.antennas());
    let mut h = Links::zeros(prbs, ku, m, l);
    let mut g = Links::zeros(prbs, kd, m, l);
    let mut rng = stream_rng(seed, draw_index);
    for n in 0..prbs {
        sampler.draw_prb(&mut rng, h.prb_mut(n), g.prb_mut(n));
    }
    ChannelDraw { h, g, seed, draw_index }
}

/// MMSE operators and observation covariances, indexed `[terminal][ap]`.
#[derive(Debug, Clone)]
pub struct EstimatorSet {
    /// User MMSE matrices `A = R C^{-1}`.
    pub a: Vec<Vec<CMatrix>>,
    /// User observation covariances.
    pub c: Vec<Vec<CMatrix>>,
    /// Device MMSE matrices `B = Q D^{-1}`.
    pub b: Vec<Vec<CMatrix>>,
    /// Device observation covariances.
    pub d: Vec<Vec<CMatrix>>,
}

/// Assembles the pilot-observation covariances (own channel, co-pilot users
/// and devices, noise) and the resulting MMSE operators.
pub fn build_estimators(scenario: &Scenario, pilots: &PilotBook, cfg: &SystemConfig) -> Result<EstimatorSet> {
    let (ku, kd, aps, l) = (scenario.num_users(), scenario.num_devices(), scenario.num_aps(), scenario.antennas());
    if pilots.num_users() != ku || pilots.num_devices() != kd {
        return Err(Error::Domain("pilot book does not match the scenario's terminal counts".into()));
    }
    if cfg.pilot_power_user_w.len() != ku || cfg.pilot_power_device_w.len() != kd {
        return Err(Error::Domain("pilot power vectors do not match the scenario".into()));
    }
    let eta = &cfg.pilot_power_user_w;
    let zeta = &cfg.pilot_power_device_w;

    // Covariance of the observation taken with pilot `gram_user(k)` /
    // `gram_device(d)` weights.
    let observation = |m: usize, gram_user: &dyn Fn(usize) -> f64, gram_device: &dyn Fn(usize) -> f64| {
        let mut c = scaled_identity(l, scenario.noise_power[m]);
        for k in 0..ku {
            let w = gram_user(k);
            if w != 0.0 {
                c += &scenario.r[k][m] * C64::new(eta[k] * w * w, 0.0);
            }
        }
        for d in 0..kd {
            let w = gram_device(d);
            if w != 0.0 {
                c += &scenario.q[d][m] * C64::new(zeta[d] * w * w, 0.0);
            }
        }
        c
    };

    let mut set = EstimatorSet {
        a: Vec::with_capacity(ku),
        c: Vec::with_capacity(ku),
        b: Vec::with_capacity(kd),
        d: Vec::with_capacity(kd),
    };
    for u in 0..ku {
        let (mut a_row, mut c_row) = (Vec::with_capacity(aps), Vec::with_capacity(aps));
        for m in 0..aps {
            let c = observation(m, &|k| pilots.gram_uu(k, u), &|d| pilots.gram_ud(u, d));
            a_row.push(right_solve_hpd(&scenario.r[u][m], &c)?);
            c_row.push(c);
        }
        set.a.push(a_row);
        set.c.push(c_row);
    }
    for d in 0..kd {
        let (mut b_row, mut d_row) = (Vec::with_capacity(aps), Vec::with_capacity(aps));
        for m in 0..aps {
            let c = observation(m, &|u| pilots.gram_ud(u, d), &|k| pilots.gram_dd(k, d));
            b_row.push(right_solve_hpd(&scenario.q[d][m], &c)?);
            d_row.push(c);
        }
        set.b.push(b_row);
        set.d.push(d_row);
    }
    Ok(set)
}

/// Reusable buffers and constants for per-PRB estimation.
pub(crate) struct PilotStage<'a> {
    scenario: &'a Scenario,
    est: &'a EstimatorSet,
    pilots: &'a PilotBook,
    sqrt_eta: Vec<f64>,
    sqrt_zeta: Vec<f64>,
    received: Vec<C64>,
    obs: Vec<C64>,
}

impl<'a> PilotStage<'a> {
    pub(crate) fn new(scenario: &'a Scenario, est: &'a EstimatorSet, pilots: &'a PilotBook, cfg: &SystemConfig) -> Self {
        let l = scenario.antennas();
        PilotStage {
            scenario,
            est,
            pilots,
            sqrt_eta: cfg.pilot_power_user_w.iter().map(|p| p.sqrt()).collect(),
            sqrt_zeta: cfg.pilot_power_device_w.iter().map(|p| p.sqrt()).collect(),
            received: vec![C64::new(0.0, 0.0); l * pilots.pilot_len],
            obs: vec![C64::new(0.0, 0.0); l],
        }
    }

    /// Forms the received pilot block `Y_m = sum_k sqrt(p_k) h_k s_k^T + N_m`
    /// at every AP, correlates it with each terminal's pilot and applies
    /// the MMSE operator.
    pub(crate) fn estimate_prb<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        h: &[C64],
        g: &[C64],
        h_hat: &mut [C64],
        g_hat: &mut [C64],
    ) {
        let s = self.scenario;
        let (ku, kd, aps, l) = (s.num_users(), s.num_devices(), s.num_aps(), s.antennas());
        let tau = self.pilots.pilot_len;
        for m in 0..aps {
            let sigma = s.noise_power[m].sqrt();
            // received[i * tau + t]
            for y in self.received.iter_mut() {
                *y = complex_normal(rng) * sigma;
            }
            for u in 0..ku {
                let ch = &h[(u * aps + m) * l..(u * aps + m + 1) * l];
                add_outer(&mut self.received, ch, self.pilots.phi(u), self.sqrt_eta[u], tau);
            }
            for d in 0..kd {
                let ch = &g[(d * aps + m) * l..(d * aps + m + 1) * l];
                add_outer(&mut self.received, ch, self.pilots.pi(d), self.sqrt_zeta[d], tau);
            }
            for u in 0..ku {
                correlate(&self.received, self.pilots.phi(u), tau, &mut self.obs);
                let o = (u * aps + m) * l;
                matvec(&self.est.a[u][m], &self.obs, &mut h_hat[o..o + l]);
                for v in &mut h_hat[o..o + l] {
                    *v *= self.sqrt_eta[u];
                }
            }
            for d in 0..kd {
                correlate(&self.received, self.pilots.pi(d), tau, &mut self.obs);
                let o = (d * aps + m) * l;
                matvec(&self.est.b[d][m], &self.obs, &mut g_hat[o..o + l]);
                for v in &mut g_hat[o..o + l] {
                    *v *= self.sqrt_zeta[d];
                }
            }
        }
    }
}

#[inline]
fn add_outer(received: &mut [C64], ch: &[C64], pilot: &[C64], amp: f64, tau: usize) {
    for (i, hi) in ch.iter().enumerate() {
        let hi = hi * amp;
        for (t, pt) in pilot.iter().enumerate() {
            received[i * tau + t] += hi * pt;
        }
    }
}

/// `obs = Y conj(pilot)`.
#[inline]
fn correlate(received: &[C64], pilot: &[C64], tau: usize, obs: &mut [C64]) {
    for (i, o) in obs.iter_mut().enumerate() {
        *o = received[i * tau..(i + 1) * tau].iter().zip(pilot).map(|(y, p)| y * p.conj()).sum();
    }
}

/// MMSE estimates of a channel draw, one estimate per PRB with fresh pilot
/// noise drawn from `noise_seed`.
pub fn estimate_channels(
    draw: &ChannelDraw,
    est: &EstimatorSet,
    pilots: &PilotBook,
    scenario: &Scenario,
    cfg: &SystemConfig,
    noise_seed: u64,
) -> Result<ChannelEstimate> {
    if draw.h.terminals != scenario.num_users()
        || draw.g.terminals != scenario.num_devices()
        || draw.h.aps != scenario.num_aps()
        || draw.h.antennas != scenario.antennas()
    {
        return Err(Error::Domain("channel draw does not match the scenario".into()));
    }
    let mut stage = PilotStage::new(scenario, est, pilots, cfg);
    let mut h_hat = Links::zeros(draw.h.prbs, draw.h.terminals, draw.h.aps, draw.h.antennas);
    let mut g_hat = Links::zeros(draw.g.prbs, draw.g.terminals, draw.g.aps, draw.g.antennas);
    let mut rng = stream_rng(noise_seed, draw.draw_index);
    for n in 0..draw.h.prbs {
        stage.estimate_prb(&mut rng, draw.h.prb(n), draw.g.prb(n), h_hat.prb_mut(n), g_hat.prb_mut(n));
    }
    Ok(ChannelEstimate { h_hat, g_hat })
}
