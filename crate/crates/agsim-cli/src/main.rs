use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agsim_cli::bench::{cmd_bench, BenchOptions, Suite};
use agsim_cli::spec::{self, parse_prefix};
use agsim_cli::{cmd_estimate, cmd_marginal, cmd_oracle_check, cmd_sample, resolve_workers, CliError, Overrides};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Classical mean-value estimation and sampling for Gaussian bosonic circuits.
///
/// Exit codes: 0 ok, 2 spec error, 3 guard exceeded, 4 numerical failure.
#[derive(Parser)]
#[command(name = "agsim", version = agsim_cli::BUILD_ID)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Human,
    Json,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "AGSIM_WORKERS")]
    workers: Option<usize>,
    /// Lift the size guards.
    #[arg(long)]
    force: bool,
    /// Also evaluate the brute-force Fock oracle.
    #[arg(long)]
    oracle: bool,
    /// Per-mode photon-number resolution of the outcome tables.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long, value_enum, default_value = "human")]
    format: Format,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            resolution: self.resolution,
            workers: resolve_workers(self.workers),
            force: self.force,
            oracle: self.oracle,
            ..Overrides::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the observable's mean value.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        /// Fixed sample count instead of the auto-sized one.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Photon-number marginal probabilities on the leading modes.
    Marginal {
        #[command(flatten)]
        common: Common,
        /// Comma-separated outcome prefix, e.g. 1,0.
        #[arg(long, default_value = "")]
        prefix: String,
        /// Print every prefix of length --len and the table sum.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        len: Option<usize>,
    },
    /// Draw photon-number patterns by the chain rule, one per line.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Number of leading modes per pattern; defaults to all modes.
        #[arg(long)]
        len: Option<usize>,
    },
    /// Compare the fast paths with the Fock oracle.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        len: Option<usize>,
    },
    /// Timing sweeps as CSV on stdout, fits on stderr.
    Bench {
        /// ryser, loop-hafnian, linear-gurvits or all.
        #[arg(default_value = "all")]
        suite: String,
        #[arg(long)]
        max: Option<usize>,
        #[arg(long, default_value_t = 0.05)]
        min_time: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "human")]
        format: Format,
    },
}

fn render<T: Serialize>(v: &T, human: impl FnOnce(&T) -> String, format: Format) -> Result<String, CliError> {
    match format {
        Format::Human => Ok(human(v)),
        Format::Json => serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Numerical(e.to_string())),
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(p) = out {
        std::fs::write(p, text).map_err(|e| CliError::Spec(format!("{}: {e}", p.display())))?;
    }
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Estimate { common, eps, delta, samples } => {
            let exp = spec::load(&common.spec)?;
            let ov = Overrides { epsilon: eps, delta, samples, ..common.overrides() };
            let r = cmd_estimate(&exp, &ov)?;
            emit(&render(&r, |r| r.human(), common.format)?, common.out.as_deref())
        }
        Cmd::Marginal { common, prefix, all, len } => {
            let exp = spec::load(&common.spec)?;
            let prefix = parse_prefix(&prefix).map_err(CliError::Spec)?;
            let r = cmd_marginal(&exp, &prefix, all, len, &common.overrides())?;
            emit(&render(&r, |r| r.human(), common.format)?, common.out.as_deref())
        }
        Cmd::Sample { common, count, len } => {
            let exp = spec::load(&common.spec)?;
            let len = len.unwrap_or(exp.spec.modes);
            let pats = cmd_sample(&exp, count, len, &common.overrides())?;
            let text = match common.format {
                Format::Human => pats.iter().map(|p| p.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ") + "\n").collect(),
                Format::Json => serde_json::to_string(&pats).map_err(|e| CliError::Numerical(e.to_string()))? + "\n",
            };
            emit(&text, common.out.as_deref())
        }
        Cmd::OracleCheck { common, len } => {
            let exp = spec::load(&common.spec)?;
            let r = cmd_oracle_check(&exp, len, &common.overrides())?;
            emit(&render(&r, |r| r.human(), common.format)?, common.out.as_deref())?;
            if r.passed {
                Ok(())
            } else {
                Err(CliError::Numerical(format!("oracle deviation {:.3e}", r.marginal_max_deviation)))
            }
        }
        Cmd::Bench { suite, max, min_time, seed, out, format } => {
            let suites = Suite::parse(&suite)?;
            let r = cmd_bench(&suites, &BenchOptions { min_time, max, seed })?;
            eprint!("{}", r.summary());
            emit(&render(&r, |r| r.csv(), format)?, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("agsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
