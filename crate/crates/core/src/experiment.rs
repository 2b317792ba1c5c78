//! Parameter sweeps over random deployments and closed-form/Monte Carlo
//! oracle runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::build_estimators;
use crate::config::{is_spreading_gain, SystemConfig};
use crate::error::{Error, Result};
use crate::moments::{
    compare_devices, compare_users, compare_values, device_moments_closed, device_moments_corrected, mc_moments,
    rate_user, sinr_user, user_moments_closed, ComparisonReport, Tolerances,
};
use crate::powercontrol::{
    aggregate_serving_lsf, solve_fpc, solve_opc_with, solve_upc, violations, PowerAllocation, QosTargets, Scheme,
    SolverOptions,
};
use crate::rng::derive_seed;
use crate::scenario::generate_scenario;
use crate::sequences::{build_pilot_book, spreading_book_for_gain};

pub use crate::config::derive_tau;

/// Upper bound on `N * Ku * Kd * M * L * trials` for an oracle run.
pub const MC_BUDGET: f64 = 2e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariable {
    Kd,
    Ku,
    Ms,
    N,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::Kd => "Kd",
            SweepVariable::Ku => "Ku",
            SweepVariable::Ms => "Ms",
            SweepVariable::N => "N",
        }
    }

    /// `base` with the swept parameter set to `value`; terminal-count
    /// changes re-derive the frame and pilot powers.
    pub fn apply(&self, base: &SystemConfig, value: usize) -> Result<SystemConfig> {
        let cfg = match self {
            SweepVariable::Kd => base.with_terminals(base.num_users, value)?,
            SweepVariable::Ku => base.with_terminals(value, base.num_devices)?,
            SweepVariable::Ms => SystemConfig { serving_aps: value, ..base.clone() },
            SweepVariable::N => SystemConfig { num_prbs: value, ..base.clone() },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub values: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Opc,
    Upc,
    Fpc,
}

fn default_schemes() -> Vec<SchemeKind> {
    vec![SchemeKind::Opc, SchemeKind::Upc, SchemeKind::Fpc]
}

fn default_theta() -> f64 {
    0.5
}

fn default_scenarios() -> usize {
    100
}

fn default_trials() -> usize {
    100_000
}

/// A sweep definition, usually read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: SystemConfig,
    pub sweep: Sweep,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SchemeKind>,
    #[serde(default = "default_theta")]
    pub fpc_theta: f64,
    #[serde(default = "default_scenarios")]
    pub num_scenarios: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub mc_trials: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut spec: ExperimentSpec = toml::from_str(text)?;
        spec.base.resolve()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.num_scenarios == 0 {
            return Err(Error::Config("num_scenarios must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        if !(0.0..=1.0).contains(&self.fpc_theta) {
            return Err(Error::Config("fpc_theta must lie in [0, 1]".into()));
        }
        for &v in &self.sweep.values {
            let ok = match self.sweep.variable {
                SweepVariable::N => is_spreading_gain(v),
                SweepVariable::Ms => v >= 1 && v <= self.base.num_aps,
                SweepVariable::Ku | SweepVariable::Kd => true,
            };
            if !ok {
                return Err(Error::Config(format!("invalid {} value {v}", self.sweep.variable.name())));
            }
            self.sweep.variable.apply(&self.base, v)?;
        }
        Ok(())
    }
}

/// One (sweep value, scenario, scheme) outcome. Infeasible rows carry no
/// rate or power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_variable: String,
    pub sweep_value: usize,
    pub scheme: String,
    pub scenario: usize,
    pub seed: u64,
    pub feasible: bool,
    pub min_user_rate_bps: Option<f64>,
    pub max_device_power_w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub x: f64,
    pub p: f64,
}

/// Step CDF starting at probability 0 at the smallest sample.
pub fn empirical_cdf(samples: &[f64]) -> Vec<CdfPoint> {
    let mut v: Vec<f64> = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out = Vec::with_capacity(v.len() + 1);
    if let Some(&first) = v.first() {
        out.push(CdfPoint { x: first, p: 0.0 });
    }
    out.extend(v.iter().enumerate().map(|(i, &x)| CdfPoint { x, p: (i + 1) as f64 / n }));
    out
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub sweep_value: usize,
    pub scheme: String,
    pub scenarios: usize,
    pub feasible_fraction: f64,
    pub median_min_user_rate_bps: Option<f64>,
    pub median_max_device_power_w: Option<f64>,
    /// Median over every device of every feasible scenario.
    pub median_device_power_w: Option<f64>,
    pub rate_cdf: Vec<CdfPoint>,
    pub max_power_cdf: Vec<CdfPoint>,
    /// CDF of individual device powers pooled over feasible scenarios.
    pub device_power_cdf: Vec<CdfPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub sweep_variable: String,
    pub seed: u64,
    pub num_scenarios: usize,
    pub points: Vec<PointSummary>,
}

impl ExperimentSummary {
    pub fn point(&self, value: usize, scheme: &str) -> Option<&PointSummary> {
        self.points.iter().find(|p| p.sweep_value == value && p.scheme == scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub summary: ExperimentSummary,
}

impl ExperimentOutput {
    pub fn all_infeasible(&self) -> bool {
        self.rows.iter().all(|r| !r.feasible)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Numerical(e.to_string()))
    }

    /// Writes `rows.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("rows.csv"), self.to_csv()?)?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

/// All requested schemes on one deployment.
pub fn solve_scenario(
    cfg: &SystemConfig,
    seed: u64,
    schemes: &[SchemeKind],
    fpc_theta: f64,
) -> Result<Vec<(SchemeKind, PowerAllocation)>> {
    let scenario = generate_scenario(cfg, seed)?;
    let pilots = build_pilot_book(cfg.pilot_len, cfg.num_users, cfg.num_devices, seed)?;
    let est = build_estimators(&scenario, &pilots, cfg)?;
    let um = user_moments_closed(&scenario, &est, &pilots, cfg);
    let dm = device_moments_corrected(&scenario, &est, &pilots, cfg)?;

    let upc = solve_upc(&um, &dm, cfg);
    let fpc = solve_fpc(&um, &dm, cfg, &aggregate_serving_lsf(&scenario), fpc_theta);
    let opc = schemes
        .contains(&SchemeKind::Opc)
        .then(|| solve_opc_with(&um, &dm, cfg, &SolverOptions::default(), &[upc.clone(), fpc.clone()]));

    let mut out = Vec::new();
    for &kind in schemes {
        let alloc = match kind {
            SchemeKind::Opc => opc.clone().expect("computed above"),
            SchemeKind::Upc => upc.clone(),
            SchemeKind::Fpc => fpc.clone(),
        };
        if alloc.feasible {
            recheck(&alloc, &um, &dm, cfg)?;
        }
        out.push((kind, alloc));
    }
    Ok(out)
}

/// Re-evaluates a feasible allocation through the public SINR and rate
/// functions.
fn recheck(
    alloc: &PowerAllocation,
    um: &crate::moments::UserMoments,
    dm: &crate::moments::DeviceMoments,
    cfg: &SystemConfig,
) -> Result<()> {
    let tol = SolverOptions::default().check_tol;
    let mut targets = QosTargets::at_level(0.0, cfg);
    if alloc.scheme == Scheme::Opc {
        targets = QosTargets::at_level(alloc.level_t, cfg);
    }
    let bad = violations(&alloc.p, &alloc.q, &targets, um, dm, cfg, tol);
    if !bad.is_empty() {
        return Err(Error::Numerical(format!("{} allocation violates {bad:?}", alloc.scheme.label())));
    }
    if cfg.num_users > 0 {
        let min_rate = rate_user(&sinr_user(&alloc.p, &alloc.q, um), cfg).into_iter().fold(f64::INFINITY, f64::min);
        if (min_rate - alloc.objective_t).abs() > 1e-9 * min_rate.abs().max(1.0) {
            return Err(Error::Numerical("reported objective does not match the re-evaluated rate".into()));
        }
    }
    Ok(())
}

fn scheme_label(kind: SchemeKind, theta: f64) -> String {
    match kind {
        SchemeKind::Opc => Scheme::Opc.label(),
        SchemeKind::Upc => Scheme::Upc.label(),
        SchemeKind::Fpc => Scheme::Fpc { theta }.label(),
    }
}

/// Runs every (sweep value, scenario) pair. Scenario `i` uses seed
/// `derive_seed(spec.seed, i)` at every sweep value, so the sweep compares
/// the same deployments. Output order is fixed regardless of threading.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let jobs: Vec<(usize, usize)> = spec
        .sweep
        .values
        .iter()
        .flat_map(|&v| (0..spec.num_scenarios).map(move |i| (v, i)))
        .collect();
    let results: Vec<Vec<(ResultRow, Vec<f64>)>> = jobs
        .par_iter()
        .map(|&(value, i)| -> Result<Vec<(ResultRow, Vec<f64>)>> {
            let cfg = spec.sweep.variable.apply(&spec.base, value)?;
            let seed = derive_seed(spec.seed, i as u64);
            let solved = solve_scenario(&cfg, seed, &spec.schemes, spec.fpc_theta)?;
            Ok(solved
                .into_iter()
                .map(|(kind, a)| {
                    let row = ResultRow {
                        sweep_variable: spec.sweep.variable.name().into(),
                        sweep_value: value,
                        scheme: scheme_label(kind, spec.fpc_theta),
                        scenario: i,
                        seed,
                        feasible: a.feasible,
                        min_user_rate_bps: a.feasible.then_some(a.objective_t),
                        max_device_power_w: a.feasible.then(|| a.q.iter().copied().fold(0.0, f64::max)),
                    };
                    (row, if a.feasible { a.q } else { Vec::new() })
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let (rows, device_powers): (Vec<ResultRow>, Vec<Vec<f64>>) = results.into_iter().flatten().unzip();

    let mut points = Vec::new();
    for &value in &spec.sweep.values {
        for &kind in &spec.schemes {
            let label = scheme_label(kind, spec.fpc_theta);
            let selected = |r: &ResultRow| r.sweep_value == value && r.scheme == label;
            let sel: Vec<&ResultRow> = rows.iter().filter(|r| selected(r)).collect();
            let rates: Vec<f64> = sel.iter().filter_map(|r| r.min_user_rate_bps).collect();
            let powers: Vec<f64> = sel.iter().filter_map(|r| r.max_device_power_w).collect();
            let pooled: Vec<f64> = rows
                .iter()
                .zip(&device_powers)
                .filter(|(r, _)| selected(r))
                .flat_map(|(_, q)| q.iter().copied())
                .collect();
            points.push(PointSummary {
                sweep_value: value,
                scheme: label,
                scenarios: sel.len(),
                feasible_fraction: rates.len() as f64 / sel.len().max(1) as f64,
                median_min_user_rate_bps: median(&rates),
                median_max_device_power_w: median(&powers),
                median_device_power_w: median(&pooled),
                rate_cdf: empirical_cdf(&rates),
                max_power_cdf: empirical_cdf(&powers),
                device_power_cdf: empirical_cdf(&pooled),
            });
        }
    }
    let summary = ExperimentSummary {
        name: spec.name.clone(),
        sweep_variable: spec.sweep.variable.name().into(),
        seed: spec.seed,
        num_scenarios: spec.num_scenarios,
        points,
    };
    Ok(ExperimentOutput { rows, summary })
}

/// Plain-text table of medians per sweep point.
pub fn summary_table(summary: &ExperimentSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>10} {:>9} {:>16} {:>16} {:>16}",
        summary.sweep_variable, "scheme", "feasible", "med rate [b/s]", "med q [W]", "med max q [W]"
    );
    for p in &summary.points {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4e}"));
        let _ = writeln!(
            out,
            "{:>6} {:>10} {:>9.3} {:>16} {:>16} {:>16}",
            p.sweep_value,
            p.scheme,
            p.feasible_fraction,
            fmt(p.median_min_user_rate_bps),
            fmt(p.median_device_power_w),
            fmt(p.median_max_device_power_w)
        );
    }
    out
}

/// Oracle run definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "desk_config")]
    pub base: SystemConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub mc_trials: usize,
    /// Number of independent deployments, seeded `derive_seed(seed, i)`.
    #[serde(default = "one")]
    pub instances: usize,
}

fn one() -> usize {
    1
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { base: desk_config(), seed: 0, mc_trials: default_trials(), instances: 1 }
    }
}

impl OracleSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut spec: OracleSpec = toml::from_str(text)?;
        spec.base.resolve()?;
        spec.base.validate()?;
        Ok(spec)
    }

    /// `N * Ku * Kd * M * L * trials` with empty classes counted as one.
    pub fn cost(&self) -> f64 {
        let c = &self.base;
        [c.num_prbs, c.num_users.max(1), c.num_devices.max(1), c.num_aps, c.antennas_per_ap, self.mc_trials]
            .iter()
            .map(|&v| v as f64)
            .product::<f64>()
            * self.instances as f64
    }
}

/// Small deployment for oracle checks: M=5, L=2, Ku=4, Kd=6, N=7.
pub fn desk_config() -> SystemConfig {
    let mut cfg = SystemConfig::reference_defaults().with_terminals(4, 6).expect("desk frame fits");
    cfg.num_aps = 5;
    cfg.antennas_per_ap = 2;
    cfg.num_prbs = 7;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub report: ComparisonReport,
    pub notices: Vec<String>,
}

/// Closed forms against Monte Carlo on `spec.instances` deployments.
///
/// The report lists the reference device expressions under their own names
/// and the exact self-gain variance as `nu_corrected`.
pub fn run_oracle_check(spec: &OracleSpec) -> Result<OracleOutcome> {
    if spec.mc_trials == 0 {
        return Err(Error::Config("mc_trials must be at least 1".into()));
    }
    if spec.instances == 0 {
        return Err(Error::Config("instances must be at least 1".into()));
    }
    let cost = spec.cost();
    if cost > MC_BUDGET {
        let per_trial = cost / spec.mc_trials as f64;
        return Err(Error::Budget(format!(
            "oracle cost {cost:.3e} exceeds the budget {MC_BUDGET:.1e}; use at most {} trials or a smaller instance",
            (MC_BUDGET / per_trial).floor()
        )));
    }
    let cfg = &spec.base;
    let tol = Tolerances::default();
    let mut report = ComparisonReport { trials: spec.mc_trials, entries: Vec::new() };
    let mut notices = Vec::new();
    for i in 0..spec.instances {
        let seed = derive_seed(spec.seed, i as u64);
        let scenario = generate_scenario(cfg, seed)?;
        let pilots = build_pilot_book(cfg.pilot_len, cfg.num_users, cfg.num_devices, seed)?;
        let est = build_estimators(&scenario, &pilots, cfg)?;
        let codes = spreading_book_for_gain(cfg.num_prbs, cfg.num_devices)?;
        let mc = mc_moments(&scenario, &est, &pilots, Some(&codes), cfg, spec.mc_trials, seed ^ 0x0ac1e, true)?;
        if let Some(users) = &mc.users {
            let um = user_moments_closed(&scenario, &est, &pilots, cfg);
            report.merge(tag(compare_users(&um, users, &tol), i));
        }
        if let Some(devices) = &mc.devices {
            match device_moments_closed(&scenario, &est, &pilots, cfg) {
                Ok(dm) => {
                    report.merge(tag(compare_devices(&dm, devices, &tol), i));
                    let fixed = device_moments_corrected(&scenario, &est, &pilots, cfg)?;
                    report.merge(tag(
                        compare_values(
                            "nu_corrected",
                            &fixed.nu,
                            &devices.value.nu,
                            &devices.std_err.nu,
                            tol.device_exact,
                            spec.mc_trials,
                        ),
                        i,
                    ));
                }
                Err(Error::UnsupportedModel(msg)) => {
                    notices.push(format!("instance {i}: closed-form device moments skipped: {msg}"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(OracleOutcome { report, notices })
}

/// Prefixes entry indices with the instance number.
fn tag(mut r: ComparisonReport, instance: usize) -> ComparisonReport {
    for e in &mut r.entries {
        e.index.insert(0, instance);
    }
    r
}

/// Named sweep definitions.
pub fn presets() -> Vec<ExperimentSpec> {
    let full = SystemConfig::reference_defaults();
    let mut desk = full.with_terminals(6, 20).expect("desk frame fits");
    desk.num_aps = 20;
    desk.antennas_per_ap = 4;
    let spec = |name: &str, base: &SystemConfig, variable, values: Vec<usize>, scenarios| ExperimentSpec {
        name: name.into(),
        base: base.clone(),
        sweep: Sweep { variable, values },
        schemes: default_schemes(),
        fpc_theta: default_theta(),
        num_scenarios: scenarios,
        seed: 2024,
        mc_trials: default_trials(),
        output: None,
    };
    vec![
        spec("fig2", &full, SweepVariable::Kd, vec![10, 20, 30, 40, 50], 100),
        spec("fig3", &full, SweepVariable::Ku, vec![2, 4, 6, 8, 10], 100),
        spec("fig4", &full, SweepVariable::Ms, vec![1, 2, 5, 10, 50], 100),
        spec("fig5", &full, SweepVariable::N, vec![1, 3, 7, 15, 31, 63, 127, 255, 511], 100),
        spec("desk-fig2", &desk, SweepVariable::Kd, vec![5, 10, 20, 40], 50),
        spec("desk-fig3", &desk, SweepVariable::Ku, vec![2, 4, 8], 50),
        spec("desk-fig4", &desk, SweepVariable::Ms, vec![1, 2, 5, 10, 20], 50),
        spec("desk-fig5", &desk, SweepVariable::N, vec![1, 7, 31, 127], 50),
    ]
}

pub fn preset(name: &str) -> Option<ExperimentSpec> {
    presets().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_spans_unit_interval() {
        let cdf = empirical_cdf(&[3.0, 1.0, 2.0]);
        assert_eq!(cdf.first().unwrap().p, 0.0);
        assert_eq!(cdf.last().unwrap().p, 1.0);
        assert!(cdf.windows(2).all(|w| w[0].x <= w[1].x && w[0].p <= w[1].p));
        assert!(empirical_cdf(&[]).is_empty());
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn presets_validate() {
        for p in presets() {
            p.validate().unwrap();
        }
        assert!(preset("fig5").unwrap().sweep.values.contains(&511));
    }

    #[test]
    fn spec_from_toml() {
        let text = r#"
            name = "t"
            seed = 5
            num_scenarios = 2
            schemes = ["opc", "upc"]
            [base]
            num_aps = 6
            antennas_per_ap = 2
            num_users = 2
            num_devices = 3
            num_prbs = 7
            serving_aps = 2
            [sweep]
            variable = "ms"
            values = [1, 2]
        "#;
        let spec = ExperimentSpec::from_toml(text).unwrap();
        assert_eq!(spec.base.pilot_len, 3);
        assert_eq!(spec.sweep.variable, SweepVariable::Ms);
        assert!(ExperimentSpec::from_toml(&text.replace("values = [1, 2]", "values = [7]")).is_err());
        assert!(ExperimentSpec::from_toml(&text.replace("\"ms\"", "\"n\"")).is_err());
    }

    #[test]
    fn oracle_budget_and_trials() {
        let mut spec = OracleSpec { mc_trials: 0, ..OracleSpec::default() };
        assert!(matches!(run_oracle_check(&spec), Err(Error::Config(_))));
        spec.mc_trials = 1_000_000_000;
        assert!(matches!(run_oracle_check(&spec), Err(Error::Budget(_))));
    }
}
