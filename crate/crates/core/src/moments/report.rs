//! Closed-form versus Monte Carlo comparison tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{DeviceMoments, McEstimate, UserMoments};

/// Relative-gap thresholds per moment family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Every user moment.
    pub user: f64,
    /// Device `lambda` and `chi`.
    pub device_exact: f64,
    /// Device `nu`, `epsilon` and `varepsilon`; exceeding it flags the entry.
    pub device_flag: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { user: 0.02, device_exact: 0.03, device_flag: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub moment: String,
    /// Terminal indices, e.g. `[u]` or `[d, k]`.
    pub index: Vec<usize>,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub mc_std_err: f64,
    /// `|closed - mc| / max(|mc|, floor)`, with the floor `1e-12` times
    /// the largest magnitude in the moment family.
    pub rel_gap: f64,
    pub tolerance: f64,
    /// Gap above tolerance.
    pub flagged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub trials: usize,
    pub entries: Vec<ComparisonEntry>,
}

impl ComparisonReport {
    pub fn merge(&mut self, other: ComparisonReport) {
        self.trials = self.trials.max(other.trials);
        self.entries.extend(other.entries);
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ComparisonEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    pub fn entries_for<'a>(&'a self, moment: &'a str) -> impl Iterator<Item = &'a ComparisonEntry> + 'a {
        self.entries.iter().filter(move |e| e.moment == moment)
    }

    /// Largest relative gap among the named moments.
    pub fn max_gap(&self, moments: &[&str]) -> f64 {
        self.entries
            .iter()
            .filter(|e| moments.contains(&e.moment.as_str()))
            .map(|e| e.rel_gap)
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

struct Family<'a> {
    name: &'a str,
    closed: Vec<(Vec<usize>, f64)>,
    mc: Vec<f64>,
    se: Vec<f64>,
    tolerance: f64,
}

fn vector(v: &[f64]) -> Vec<(Vec<usize>, f64)> {
    v.iter().enumerate().map(|(i, &x)| (vec![i], x)).collect()
}

fn matrix(v: &[Vec<f64>], skip_diagonal: bool) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::new();
    for (i, row) in v.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if !(skip_diagonal && i == j) {
                out.push((vec![i, j], x));
            }
        }
    }
    out
}

fn pick(v: &[Vec<f64>], skip_diagonal: bool) -> Vec<f64> {
    matrix(v, skip_diagonal).into_iter().map(|(_, x)| x).collect()
}

fn entries(family: Family<'_>) -> Vec<ComparisonEntry> {
    let scale = family
        .closed
        .iter()
        .map(|(_, c)| c.abs())
        .chain(family.mc.iter().map(|m| m.abs()))
        .fold(0.0, f64::max);
    let floor = (1e-12 * scale).max(f64::MIN_POSITIVE);
    family
        .closed
        .into_iter()
        .zip(family.mc)
        .zip(family.se)
        .map(|(((index, c), m), se)| {
            let rel_gap = (c - m).abs() / m.abs().max(floor);
            ComparisonEntry {
                moment: family.name.to_string(),
                index,
                closed_form: c,
                monte_carlo: m,
                mc_std_err: se,
                rel_gap,
                tolerance: family.tolerance,
                flagged: !(rel_gap <= family.tolerance),
            }
        })
        .collect()
}

/// Report for one vector-valued moment under an arbitrary name.
pub fn compare_values(
    name: &str,
    closed: &[f64],
    mc: &[f64],
    std_err: &[f64],
    tolerance: f64,
    trials: usize,
) -> ComparisonReport {
    let family = Family { name, closed: vector(closed), mc: mc.to_vec(), se: std_err.to_vec(), tolerance };
    ComparisonReport { trials, entries: entries(family) }
}

pub fn compare_users(closed: &UserMoments, mc: &McEstimate<UserMoments>, tol: &Tolerances) -> ComparisonReport {
    let (v, s) = (&mc.value, &mc.std_err);
    let t = tol.user;
    let families = [
        Family { name: "delta", closed: vector(&closed.delta), mc: v.delta.clone(), se: s.delta.clone(), tolerance: t },
        Family {
            name: "upsilon",
            closed: vector(&closed.upsilon),
            mc: v.upsilon.clone(),
            se: s.upsilon.clone(),
            tolerance: t,
        },
        Family {
            name: "kappa",
            closed: matrix(&closed.kappa, true),
            mc: pick(&v.kappa, true),
            se: pick(&s.kappa, true),
            tolerance: t,
        },
        Family {
            name: "varkappa",
            closed: matrix(&closed.varkappa, false),
            mc: pick(&v.varkappa, false),
            se: pick(&s.varkappa, false),
            tolerance: t,
        },
        Family { name: "xi", closed: vector(&closed.xi), mc: v.xi.clone(), se: s.xi.clone(), tolerance: t },
    ];
    ComparisonReport { trials: mc.trials, entries: families.into_iter().flat_map(entries).collect() }
}

pub fn compare_devices(closed: &DeviceMoments, mc: &McEstimate<DeviceMoments>, tol: &Tolerances) -> ComparisonReport {
    let (v, s) = (&mc.value, &mc.std_err);
    let families = [
        Family {
            name: "lambda",
            closed: vector(&closed.lambda),
            mc: v.lambda.clone(),
            se: s.lambda.clone(),
            tolerance: tol.device_exact,
        },
        Family { name: "nu", closed: vector(&closed.nu), mc: v.nu.clone(), se: s.nu.clone(), tolerance: tol.device_flag },
        Family {
            name: "epsilon",
            closed: matrix(&closed.epsilon, true),
            mc: pick(&v.epsilon, true),
            se: pick(&s.epsilon, true),
            tolerance: tol.device_flag,
        },
        Family {
            name: "varepsilon",
            closed: matrix(&closed.varepsilon, false),
            mc: pick(&v.varepsilon, false),
            se: pick(&s.varepsilon, false),
            tolerance: tol.device_flag,
        },
        Family {
            name: "chi",
            closed: vector(&closed.chi),
            mc: v.chi.clone(),
            se: s.chi.clone(),
            tolerance: tol.device_exact,
        },
    ];
    ComparisonReport { trials: mc.trials, entries: families.into_iter().flat_map(entries).collect() }
}
