use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cellfree::experiment::{
    preset, presets, run_experiment, run_oracle_check, summary_table, ExperimentSpec, OracleSpec,
};
use cellfree::{Error, SystemConfig};

#[derive(Parser)]
#[command(name = "cellfree", version, about = "Cell-free massive MIMO uplink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep from a spec file or a named preset.
    Run {
        /// Experiment spec (TOML).
        spec: Option<PathBuf>,
        /// Use a built-in preset instead of a file.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Output directory for rows.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of scenarios per sweep point.
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare closed-form moments with Monte Carlo.
    Oracle {
        /// Oracle spec (TOML); the desk instance is used when omitted.
        spec: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        instances: Option<usize>,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
    /// Check a system config or experiment spec without running it.
    ValidateConfig { path: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_BUDGET: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Toml(_) => EXIT_CONFIG,
        Error::Budget(_) => EXIT_BUDGET,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> cellfree::Result<u8> {
    match cmd {
        Command::Run { spec, preset: name, out, scenarios, seed } => {
            let mut spec = match (spec, name) {
                (Some(path), _) => ExperimentSpec::load(&path)?,
                (None, Some(name)) => preset(&name).ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?,
                (None, None) => return Err(Error::Config("give a spec file or --preset".into())),
            };
            if let Some(n) = scenarios {
                spec.num_scenarios = n;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            let output = run_experiment(&spec)?;
            print!("{}", summary_table(&output.summary));
            if let Some(dir) = out.or_else(|| spec.output.clone()) {
                output.write(&dir)?;
                eprintln!("wrote {}", dir.display());
            }
            if output.all_infeasible() {
                eprintln!("every scenario was infeasible");
                return Ok(EXIT_INFEASIBLE);
            }
            Ok(0)
        }
        Command::Oracle { spec, trials, seed, instances, out } => {
            let mut spec = match spec {
                Some(path) => OracleSpec::from_toml(&std::fs::read_to_string(path)?)?,
                None => OracleSpec::default(),
            };
            if let Some(t) = trials {
                spec.mc_trials = t;
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(k) = instances {
                spec.instances = k;
            }
            let outcome = run_oracle_check(&spec)?;
            for n in &outcome.notices {
                eprintln!("notice: {n}");
            }
            println!("{:<14} {:>12} {:>10}", "moment", "max gap", "flagged");
            let mut names: Vec<&str> = Vec::new();
            for e in &outcome.report.entries {
                if !names.contains(&e.moment.as_str()) {
                    names.push(&e.moment);
                }
            }
            for name in names {
                let flagged = outcome.report.entries_for(name).filter(|e| e.flagged).count();
                println!("{:<14} {:>12.4e} {:>10}", name, outcome.report.max_gap(&[name]), flagged);
            }
            if let Some(path) = out {
                outcome.report.save(&path)?;
                eprintln!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Presets => {
            for p in presets() {
                println!(
                    "{:<10} sweep {:<2} over {:?}, {} scenarios, M={} L={} Ku={} Kd={} N={}",
                    p.name,
                    p.sweep.variable.name(),
                    p.sweep.values,
                    p.num_scenarios,
                    p.base.num_aps,
                    p.base.antennas_per_ap,
                    p.base.num_users,
                    p.base.num_devices,
                    p.base.num_prbs
                );
            }
            Ok(0)
        }
        Command::ValidateConfig { path } => {
            let text = std::fs::read_to_string(&path)?;
            // A file with a [sweep] table is an experiment spec.
            let is_spec = toml::from_str::<toml::Table>(&text)?.contains_key("sweep");
            if is_spec {
                let spec = ExperimentSpec::from_toml(&text)?;
                println!("experiment spec ok: {} values of {}", spec.sweep.values.len(), spec.sweep.variable.name());
            } else {
                let cfg = SystemConfig::from_toml(&text)?;
                println!("system config ok: tau_p={} tau_u={}", cfg.pilot_len, cfg.ul_symbols);
            }
            Ok(0)
        }
    }
}
