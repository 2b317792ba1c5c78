//! Max-min user rate under device QoS and SINR-floor constraints, plus the
//! uniform and fractional benchmarks.
//!
//! For a fixed user SINR target every constraint isolates one power on the
//! left-hand side, `x_i >= sum_j D_ij x_j + b_i`, so the minimal feasible
//! power vector is the least fixed point of a monotone affine map. The
//! max-min problem is a bisection over that feasibility test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::moments::{rate_user, sinr_device, sinr_user, DeviceMoments, UserMoments};

/// A single constraint of the power-control problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Constraint {
    UserSinr(usize),
    DeviceSinr(usize),
    UserPower(usize),
    DevicePower(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleReason {
    /// The target exceeds the interference-free SINR, `signal - target * self_noise <= 0`.
    NoSinrHeadroom,
    /// The minimal power vector exceeds a power limit.
    PowerLimit,
    /// The fixed-point iteration did not settle within the iteration budget.
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub reason: InfeasibleReason,
    pub binding: Constraint,
    pub iterations: usize,
}

/// Bisection bracket at termination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub feasible_at: f64,
    pub infeasible_at: f64,
    /// Whether the feasibility test really failed at `infeasible_at`.
    pub verified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Scheme {
    Opc,
    Upc,
    Fpc { theta: f64 },
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::Opc => "OPC".into(),
            Scheme::Upc => "UPC".into(),
            Scheme::Fpc { theta } => format!("FPC({theta})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub scheme: Scheme,
    /// User powers in watts.
    pub p: Vec<f64>,
    /// Device powers in watts.
    pub q: Vec<f64>,
    /// Minimum user rate achieved by `(p, q)`, bits/s.
    pub objective_t: f64,
    /// Rate level the allocation was solved for, bits/s.
    pub level_t: f64,
    pub feasible: bool,
    /// Fixed-point iterations summed over every feasibility test.
    pub iterations: usize,
    pub bisection_steps: usize,
    /// Every fixed-point iterate was componentwise non-decreasing.
    pub monotone: bool,
    pub certificate: Option<Certificate>,
    /// Constraints holding with equality (within `1e-9` relative); for an
    /// infeasible verdict, the constraint that failed.
    pub binding: Vec<Constraint>,
    pub infeasibility: Option<Infeasibility>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub max_bisection_steps: usize,
    /// Relative slack accepted when re-checking constraints.
    pub check_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iters: 10_000, rel_tol: 1e-10, max_bisection_steps: 60, check_tol: 1e-9 }
    }
}

/// Per-terminal SINR targets for one feasibility test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosTargets {
    pub gamma_target: f64,
    pub rho_target: Vec<f64>,
}

impl QosTargets {
    /// Targets at user rate level `t` with the configured device QoS.
    pub fn at_level(t: f64, cfg: &SystemConfig) -> Self {
        QosTargets { gamma_target: gamma_required(t, cfg), rho_target: vec![device_target(cfg); cfg.num_devices] }
    }
}

/// Device SINR needed for rate `r`: `2^(r N tau_c / (tau_u B)) - 1`.
pub fn rho_required(r: f64, cfg: &SystemConfig) -> f64 {
    (r * cfg.num_prbs as f64 / (cfg.prelog() * cfg.bandwidth_hz)).exp2() - 1.0
}

/// User SINR needed for rate `t`: `2^(t tau_c / (tau_u B)) - 1`.
pub fn gamma_required(t: f64, cfg: &SystemConfig) -> f64 {
    (t / (cfg.prelog() * cfg.bandwidth_hz)).exp2() - 1.0
}

/// Effective device target, `max(s, rho_required(r))`.
pub fn device_target(cfg: &SystemConfig) -> f64 {
    cfg.sinr_floor.max(rho_required(cfg.qos_rate_bps, cfg))
}

/// Constraints violated by `(p, q)` beyond relative slack `tol`, evaluated
/// through the public SINR functions.
pub fn violations(
    p: &[f64],
    q: &[f64],
    targets: &QosTargets,
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    tol: f64,
) -> Vec<Constraint> {
    let mut out = Vec::new();
    for (u, g) in sinr_user(p, q, um).iter().enumerate() {
        if *g < targets.gamma_target * (1.0 - tol) {
            out.push(Constraint::UserSinr(u));
        }
    }
    for (d, r) in sinr_device(p, q, dm).iter().enumerate() {
        if *r < targets.rho_target[d] * (1.0 - tol) {
            out.push(Constraint::DeviceSinr(d));
        }
    }
    for (u, &pu) in p.iter().enumerate() {
        if !(0.0..=cfg.max_user_power_w * (1.0 + tol)).contains(&pu) {
            out.push(Constraint::UserPower(u));
        }
    }
    for (d, &qd) in q.iter().enumerate() {
        if !(0.0..=cfg.max_device_power_w * (1.0 + tol)).contains(&qd) {
            out.push(Constraint::DevicePower(d));
        }
    }
    out
}

fn binding_set(
    p: &[f64],
    q: &[f64],
    targets: &QosTargets,
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    tol: f64,
    users_free: bool,
) -> Vec<Constraint> {
    let tight = |v: f64, target: f64| target > 0.0 && (v - target).abs() <= tol * target;
    let mut out = Vec::new();
    if users_free {
        for (u, g) in sinr_user(p, q, um).iter().enumerate() {
            if tight(*g, targets.gamma_target) {
                out.push(Constraint::UserSinr(u));
            }
        }
    }
    for (d, r) in sinr_device(p, q, dm).iter().enumerate() {
        if tight(*r, targets.rho_target[d]) {
            out.push(Constraint::DeviceSinr(d));
        }
    }
    for (u, &pu) in p.iter().enumerate() {
        if tight(pu, cfg.max_user_power_w) {
            out.push(Constraint::UserPower(u));
        }
    }
    for (d, &qd) in q.iter().enumerate() {
        if tight(qd, cfg.max_device_power_w) {
            out.push(Constraint::DevicePower(d));
        }
    }
    out
}

/// `x = D x + b` over users then devices.
struct AffineMap {
    ku: usize,
    d: DMatrix<f64>,
    b: DVector<f64>,
    caps: Vec<f64>,
}

impl AffineMap {
    fn constraint(&self, i: usize, power: bool) -> Constraint {
        match (i < self.ku, power) {
            (true, true) => Constraint::UserPower(i),
            (true, false) => Constraint::UserSinr(i),
            (false, true) => Constraint::DevicePower(i - self.ku),
            (false, false) => Constraint::DeviceSinr(i - self.ku),
        }
    }

    /// With `fixed_users`, user rows become the constants `p_u`.
    fn build(
        targets: &QosTargets,
        um: &UserMoments,
        dm: &DeviceMoments,
        cfg: &SystemConfig,
        fixed_users: Option<&[f64]>,
    ) -> Result<Self, Infeasibility> {
        let (ku, kd) = (cfg.num_users, cfg.num_devices);
        let n = ku + kd;
        let mut d = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let no_headroom = |c| Infeasibility { reason: InfeasibleReason::NoSinrHeadroom, binding: c, iterations: 0 };

        let gamma = targets.gamma_target;
        for u in 0..ku {
            if let Some(p) = fixed_users {
                b[u] = p[u];
                continue;
            }
            if gamma <= 0.0 {
                continue;
            }
            let den = um.delta[u] - gamma * um.upsilon[u];
            if !(den > 0.0) {
                return Err(no_headroom(Constraint::UserSinr(u)));
            }
            for k in (0..ku).filter(|&k| k != u) {
                d[(u, k)] = gamma * um.kappa[u][k] / den;
            }
            for j in 0..kd {
                d[(u, ku + j)] = gamma * um.varkappa[u][j] / den;
            }
            b[u] = gamma * um.xi[u] / den;
        }
        for j in 0..kd {
            let rho = targets.rho_target[j];
            if rho <= 0.0 {
                continue;
            }
            let den = dm.lambda[j] - rho * dm.nu[j];
            if !(den > 0.0) {
                return Err(no_headroom(Constraint::DeviceSinr(j)));
            }
            for k in (0..kd).filter(|&k| k != j) {
                d[(ku + j, ku + k)] = rho * dm.epsilon[j][k] / den;
            }
            for u in 0..ku {
                d[(ku + j, u)] = rho * dm.varepsilon[j][u] / den;
            }
            b[ku + j] = rho * dm.chi[j] / den;
        }
        let mut caps = vec![cfg.max_user_power_w; ku];
        caps.extend(std::iter::repeat_n(cfg.max_device_power_w, kd));
        Ok(AffineMap { ku, d, b, caps })
    }

    /// Exact solution of `(I - D) x = b`, accepted only if it lies above the
    /// last iterate (the least fixed point dominates every iterate).
    fn direct(&self, lower: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.b.len();
        let a = DMatrix::identity(n, n) - &self.d;
        let x = a.lu().solve(&self.b)?;
        let ok = x.iter().zip(lower.iter()).all(|(xi, li)| xi.is_finite() && *xi >= li * (1.0 - 1e-9) && *xi >= 0.0);
        ok.then_some(x)
    }
}

struct FixedPoint {
    x: DVector<f64>,
    iterations: usize,
    monotone: bool,
}

fn least_fixed_point(map: &AffineMap, opts: &SolverOptions) -> Result<FixedPoint, Infeasibility> {
    let n = map.b.len();
    let mut x = DVector::zeros(n);
    let mut monotone = true;
    let cap_check = |x: &DVector<f64>, iterations| {
        for i in 0..n {
            if x[i] > map.caps[i] {
                return Err(Infeasibility {
                    reason: InfeasibleReason::PowerLimit,
                    binding: map.constraint(i, true),
                    iterations,
                });
            }
        }
        Ok(())
    };
    for it in 1..=opts.max_iters {
        let next = &map.d * &x + &map.b;
        let mut change: f64 = 0.0;
        for i in 0..n {
            if next[i] < x[i] * (1.0 - 1e-12) {
                monotone = false;
            }
            let scale = next[i].abs().max(f64::MIN_POSITIVE);
            change = change.max((next[i] - x[i]).abs() / scale);
        }
        x = next;
        cap_check(&x, it)?;
        if change <= opts.rel_tol {
            // Polish to machine precision; the iterate alone is accurate to `rel_tol`.
            if let Some(exact) = map.direct(&x) {
                if exact.iter().zip(x.iter()).all(|(e, v)| (e - v).abs() <= 1e-6 * e.abs().max(f64::MIN_POSITIVE)) {
                    cap_check(&exact, it)?;
                    x = exact;
                }
            }
            return Ok(FixedPoint { x, iterations: it, monotone });
        }
    }
    // Slow contraction near the feasibility boundary: fall back to the
    // direct solve if it is consistent with the iterates.
    if let Some(exact) = map.direct(&x) {
        cap_check(&exact, opts.max_iters)?;
        return Ok(FixedPoint { x: exact, iterations: opts.max_iters, monotone });
    }
    let worst = (0..n).max_by(|&a, &b| (x[a] / map.caps[a]).total_cmp(&(x[b] / map.caps[b]))).unwrap_or(0);
    Err(Infeasibility {
        reason: InfeasibleReason::NotConverged,
        binding: map.constraint(worst, false),
        iterations: opts.max_iters,
    })
}

fn min_user_rate(p: &[f64], q: &[f64], um: &UserMoments, cfg: &SystemConfig) -> f64 {
    rate_user(&sinr_user(p, q, um), cfg).into_iter().fold(f64::INFINITY, f64::min)
}

fn infeasible(scheme: Scheme, level: f64, cfg: &SystemConfig, why: Infeasibility) -> PowerAllocation {
    PowerAllocation {
        scheme,
        p: vec![0.0; cfg.num_users],
        q: vec![0.0; cfg.num_devices],
        objective_t: 0.0,
        level_t: level,
        feasible: false,
        iterations: why.iterations,
        bisection_steps: 0,
        monotone: true,
        certificate: None,
        binding: vec![why.binding],
        infeasibility: Some(why),
    }
}

fn solve_targets(
    scheme: Scheme,
    level: f64,
    targets: &QosTargets,
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    opts: &SolverOptions,
    fixed_users: Option<&[f64]>,
) -> PowerAllocation {
    let fp = match AffineMap::build(targets, um, dm, cfg, fixed_users).and_then(|m| least_fixed_point(&m, opts)) {
        Ok(fp) => fp,
        Err(why) => return infeasible(scheme, level, cfg, why),
    };
    let ku = cfg.num_users;
    let p: Vec<f64> = fp.x.iter().take(ku).copied().collect();
    let q: Vec<f64> = fp.x.iter().skip(ku).copied().collect();
    let mut checked = targets.clone();
    if fixed_users.is_some() {
        checked.gamma_target = 0.0;
    }
    if let Some(&c) = violations(&p, &q, &checked, um, dm, cfg, opts.check_tol).first() {
        let why = Infeasibility { reason: InfeasibleReason::NotConverged, binding: c, iterations: fp.iterations };
        return infeasible(scheme, level, cfg, why);
    }
    let binding = binding_set(&p, &q, targets, um, dm, cfg, opts.check_tol, fixed_users.is_none());
    let objective_t = if ku == 0 { 0.0 } else { min_user_rate(&p, &q, um, cfg) };
    PowerAllocation {
        scheme,
        p,
        q,
        objective_t,
        level_t: level,
        feasible: true,
        iterations: fp.iterations,
        bisection_steps: 0,
        monotone: fp.monotone,
        certificate: None,
        binding,
        infeasibility: None,
    }
}

/// Minimal powers giving every user rate `t` and every device its QoS
/// target, or the reason none exist.
pub fn feasibility(
    t: f64,
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
) -> Result<PowerAllocation, Infeasibility> {
    feasibility_with(t, um, dm, cfg, &SolverOptions::default())
}

pub fn feasibility_with(
    t: f64,
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    opts: &SolverOptions,
) -> Result<PowerAllocation, Infeasibility> {
    let targets = QosTargets::at_level(t.max(0.0), cfg);
    let alloc = solve_targets(Scheme::Opc, t, &targets, um, dm, cfg, opts, None);
    match alloc.infeasibility {
        Some(why) => Err(why),
        None => Ok(alloc),
    }
}

/// Upper end of the bisection bracket, the largest interference-free user
/// rate at full power.
pub fn rate_upper_bound(um: &UserMoments, cfg: &SystemConfig) -> f64 {
    let gains: Vec<f64> = (0..um.num_users()).map(|u| cfg.max_user_power_w * um.delta[u] / um.xi[u]).collect();
    rate_user(&gains, cfg).into_iter().fold(0.0, f64::max)
}

/// Max-min user rate by bisection over [`feasibility`], warm-started from
/// the uniform benchmark.
pub fn solve_opc(um: &UserMoments, dm: &DeviceMoments, cfg: &SystemConfig) -> PowerAllocation {
    let upc = solve_upc(um, dm, cfg);
    solve_opc_with(um, dm, cfg, &SolverOptions::default(), &[upc])
}

/// Bisection whose lower bracket starts at the best min-rate among the
/// feasible `warm_start` allocations, so the result never falls below any
/// of them.
pub fn solve_opc_with(
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    opts: &SolverOptions,
    warm_start: &[PowerAllocation],
) -> PowerAllocation {
    let mut iterations = 0;
    let base = match feasibility_with(0.0, um, dm, cfg, opts) {
        Ok(a) => a,
        Err(why) => return infeasible(Scheme::Opc, 0.0, cfg, why),
    };
    iterations += base.iterations;
    if cfg.num_users == 0 {
        return PowerAllocation { iterations, ..base };
    }

    let mut best = base;
    for bench in warm_start {
        if bench.feasible && bench.objective_t > best.level_t {
            match feasibility_with(bench.objective_t, um, dm, cfg, opts) {
                Ok(a) => {
                    iterations += a.iterations;
                    best = a;
                }
                // The benchmark itself is a feasible point at this level.
                Err(_) => best = PowerAllocation { scheme: Scheme::Opc, level_t: bench.objective_t, ..bench.clone() },
            }
        }
    }

    let mut lo = best.level_t;
    let mut hi = rate_upper_bound(um, cfg).max(lo);
    let eps = 1f64.max(1e-6 * hi);
    let mut steps = 0;
    while hi - lo > eps && steps < opts.max_bisection_steps {
        let mid = 0.5 * (lo + hi);
        steps += 1;
        match feasibility_with(mid, um, dm, cfg, opts) {
            Ok(a) => {
                iterations += a.iterations;
                lo = mid;
                best = a;
            }
            Err(why) => {
                iterations += why.iterations;
                hi = mid;
            }
        }
    }
    let probe = lo + 2.0 * eps;
    let verified = match feasibility_with(probe, um, dm, cfg, opts) {
        Ok(a) => {
            iterations += a.iterations;
            false
        }
        Err(why) => {
            iterations += why.iterations;
            true
        }
    };
    PowerAllocation {
        scheme: Scheme::Opc,
        level_t: lo,
        iterations,
        bisection_steps: steps,
        certificate: Some(Certificate { feasible_at: lo, infeasible_at: probe, verified }),
        ..best
    }
}

fn solve_fixed_users(
    scheme: Scheme,
    p: &[f64],
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    opts: &SolverOptions,
) -> PowerAllocation {
    let targets = QosTargets { gamma_target: 0.0, rho_target: vec![device_target(cfg); cfg.num_devices] };
    let mut alloc = solve_targets(scheme, 0.0, &targets, um, dm, cfg, opts, Some(p));
    if alloc.feasible {
        alloc.level_t = alloc.objective_t;
    }
    alloc
}

/// Every user at full power; minimal device powers against that interference.
pub fn solve_upc(um: &UserMoments, dm: &DeviceMoments, cfg: &SystemConfig) -> PowerAllocation {
    solve_upc_with(um, dm, cfg, &SolverOptions::default())
}

pub fn solve_upc_with(um: &UserMoments, dm: &DeviceMoments, cfg: &SystemConfig, opts: &SolverOptions) -> PowerAllocation {
    let p = vec![cfg.max_user_power_w; cfg.num_users];
    solve_fixed_users(Scheme::Upc, &p, um, dm, cfg, opts)
}

/// Fractional user powers `Pu (A_u / min_k A_k)^(-theta)` with `A_u` the
/// aggregate serving LSF, so the weakest user transmits at full power;
/// devices as in [`solve_upc`].
pub fn fpc_user_powers(aggregate_lsf: &[f64], theta: f64, max_power: f64) -> Vec<f64> {
    let weakest = aggregate_lsf.iter().copied().fold(f64::INFINITY, f64::min);
    aggregate_lsf
        .iter()
        .map(|&a| {
            if a > 0.0 && weakest > 0.0 {
                (max_power * (a / weakest).powf(-theta)).clamp(0.0, max_power)
            } else {
                max_power
            }
        })
        .collect()
}

/// `sum_m a_um alpha_um` per user.
pub fn aggregate_serving_lsf(scenario: &crate::scenario::Scenario) -> Vec<f64> {
    scenario
        .alpha
        .iter()
        .zip(&scenario.a)
        .map(|(row, mask)| row.iter().zip(mask).filter(|(_, &s)| s).map(|(v, _)| v).sum())
        .collect()
}

/// Fractional benchmark for users with aggregate serving LSF `aggregate_lsf`
/// (see [`aggregate_serving_lsf`]).
pub fn solve_fpc(
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    aggregate_lsf: &[f64],
    theta: f64,
) -> PowerAllocation {
    solve_fpc_with(um, dm, cfg, aggregate_lsf, theta, &SolverOptions::default())
}

pub fn solve_fpc_with(
    um: &UserMoments,
    dm: &DeviceMoments,
    cfg: &SystemConfig,
    aggregate_lsf: &[f64],
    theta: f64,
    opts: &SolverOptions,
) -> PowerAllocation {
    let p = fpc_user_powers(aggregate_lsf, theta, cfg.max_user_power_w);
    solve_fixed_users(Scheme::Fpc { theta }, &p, um, dm, cfg, opts)
}
