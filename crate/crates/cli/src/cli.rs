//! Argument parsing. Flags are shorthands for configuration keys and are
//! applied after the config file and `--set` pairs.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{execute, Command, Output};
use crate::config::{KeyValues, RunConfig, KEYS};
use crate::error::CliError;
use crate::output::{json_bytes, write_file, write_stdout};

#[derive(Debug, Parser)]
#[command(name = "pairdiff", version, about = "Pairwise-difference estimation with jackknife debiasing and a rescaled bootstrap")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Point estimate at the configured bandwidth and debiasing plan
    Estimate,
    /// Point estimate plus a rescaled percentile bootstrap interval
    BootstrapCi,
    /// Monte Carlo validation studies on a synthetic design
    Validate {
        #[command(subcommand)]
        study: Study,
    },
    /// Moments of the equivalent kernel
    KernelCheck,
    /// List every configuration key
    Keys,
}

#[derive(Debug, Subcommand)]
pub enum Study {
    /// Log-log slope of the bias against the bandwidth
    BiasOrder,
    /// Variance formula against the simulated sampling variance
    VarianceMatch,
    /// Naive against rescaled bootstrap variance
    BootInflation,
    /// Empirical coverage of the bootstrap interval
    Coverage,
}

#[derive(Debug, Default, Args)]
pub struct Common {
    /// Key-value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set dgp.n=500`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, global = true, value_name = "plr|pll|plt")]
    pub model: Option<String>,
    /// CSV with header y,x1..xk,w1..wd
    #[arg(long, global = true, value_name = "PATH")]
    pub data: Option<String>,
    #[arg(long, global = true, value_name = "FAMILY")]
    pub kernel: Option<String>,
    #[arg(long = "h", global = true, value_name = "H")]
    pub h: Option<String>,
    /// `C,kappa` for h = C n^-kappa
    #[arg(long = "h-rule", global = true, value_name = "C,KAPPA", allow_hyphen_values = true)]
    pub h_rule: Option<String>,
    /// Debiasing order (even)
    #[arg(long = "L", global = true)]
    pub order: Option<String>,
    /// Bandwidth multipliers, comma-separated
    #[arg(long = "c", global = true, value_name = "C1,C2,..")]
    pub c: Option<String>,
    /// Bootstrap replicates
    #[arg(long = "B", global = true)]
    pub replicates: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<String>,
    #[arg(long, global = true, value_name = "A1,..,AK", allow_hyphen_values = true)]
    pub contrast: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Monte Carlo replications for validate
    #[arg(long, global = true)]
    pub reps: Option<String>,
    /// JSON result path (stdout when absent)
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<String>,
    /// CSV table path
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<String>,
    #[arg(long, global = true)]
    pub verbose: bool,
}

impl Common {
    /// Config file, then `--set`, then flags.
    pub fn key_values(&self) -> Result<KeyValues, CliError> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        for pair in &self.set {
            kv.set_pair(pair)?;
        }
        let flags = [
            ("model", &self.model),
            ("data.path", &self.data),
            ("kernel", &self.kernel),
            ("h", &self.h),
            ("h.rule", &self.h_rule),
            ("debias.L", &self.order),
            ("debias.c", &self.c),
            ("bootstrap.B", &self.replicates),
            ("bootstrap.alpha", &self.alpha),
            ("bootstrap.contrast", &self.contrast),
            ("seed", &self.seed),
            ("validate.reps", &self.reps),
            ("output.json", &self.out),
            ("output.csv", &self.csv),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                kv.set(key, v).map_err(CliError::Config)?;
            }
        }
        // A flag for one bandwidth form replaces a file entry for the other.
        if self.h.is_some() {
            kv.remove("h.rule");
        }
        if self.h_rule.is_some() {
            kv.remove("h");
        }
        if self.verbose {
            kv.set("verbose", "true").map_err(CliError::Config)?;
        }
        Ok(kv)
    }
}

impl Cmd {
    pub fn command(&self) -> Option<Command> {
        Some(match self {
            Cmd::Estimate => Command::Estimate,
            Cmd::BootstrapCi => Command::BootstrapCi,
            Cmd::KernelCheck => Command::KernelCheck,
            Cmd::Keys => return None,
            Cmd::Validate { study } => match study {
                Study::BiasOrder => Command::BiasOrder,
                Study::VarianceMatch => Command::VarianceMatch,
                Study::BootInflation => Command::BootInflation,
                Study::Coverage => Command::Coverage,
            },
        })
    }
}

/// Caps the global worker pool from `PAIRDIFF_THREADS`.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var("PAIRDIFF_THREADS") else {
        return Ok(());
    };
    let n: usize = text.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config(format!("PAIRDIFF_THREADS must be a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

pub fn resolve(cli: &Cli) -> Result<Option<(Command, RunConfig)>, CliError> {
    let Some(cmd) = cli.command.command() else {
        return Ok(None);
    };
    let kv = cli.common.key_values()?;
    let cfg = RunConfig::resolve(cmd.name(), &kv, cmd.needs_data())?;
    Ok(Some((cmd, cfg)))
}

/// Writes the JSON to `output.json` (or stdout) and the table to
/// `output.csv`, defaulting to the JSON path with a `.csv` extension.
pub fn emit(out: &Output, cfg: &RunConfig) -> Result<(), CliError> {
    let json = json_bytes(&out.json);
    match &cfg.output.json {
        Some(p) => write_file(p, &json)?,
        None => write_stdout(&json)?,
    }
    if let Some(table) = &out.table {
        let path = cfg.output.csv.clone().or_else(|| cfg.output.json.as_ref().map(|p| p.with_extension("csv")));
        if let Some(p) = path {
            write_file(&p, &table.to_bytes())?;
        }
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    configure_threads()?;
    match resolve(cli)? {
        None => {
            let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            let text: String = KEYS.iter().map(|(k, d)| format!("{k:width$}  {d}\n")).collect();
            write_stdout(text.as_bytes())
        }
        Some((cmd, cfg)) => {
            let out = execute(cmd, &cfg)?;
            emit(&out, &cfg)
        }
    }
}
