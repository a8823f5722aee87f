//! Command implementations behind the `agsim` binary.
//!
//! Every command is a pure function of the experiment, the flags and the seed,
//! apart from timing fields.

pub mod bench;
pub mod spec;

use std::fmt::Write as _;

use agsim_core::estimators::{estimate_mean_value, EstimateReport, EstimatorConfig, VarianceMode};
use agsim_core::fock::oracle_marginal_table;
use agsim_core::marginal::{ChainSampler, FrequencyVector, GeneratingFunctionTable, MarginalConfig};
use agsim_core::oracle::{oracle_mean_value, OracleConfig};
use agsim_core::{Error, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::spec::Experiment;

pub const BUILD_ID: &str = env!("AGSIM_BUILD");
/// Oracle tolerance for `oracle-check` marginals.
pub const MARGINAL_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("guard exceeded: {0}")]
    Guard(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Spec(_) => 2,
            Self::Guard(_) => 3,
            Self::Numerical(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::GuardExceeded(_) | Error::TooLarge { .. } | Error::RankTooLarge { .. } | Error::CapOverflow { .. } => {
                Self::Guard(e.to_string())
            }
            Error::DimensionMismatch { .. }
            | Error::NonUnitaryInput(_)
            | Error::NotSymplectic(_)
            | Error::NotSquare(..)
            | Error::CutoffExceeded { .. }
            | Error::BranchTableIncomplete(_)
            | Error::ZeroNormObservable(_)
            | Error::InvalidInput(_) => Self::Spec(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub samples: Option<usize>,
    pub resolution: Option<usize>,
    pub workers: usize,
    pub force: bool,
    pub oracle: bool,
}

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub workers: usize,
    pub variance_mode: String,
    pub samples: Option<usize>,
    pub resolution: Option<usize>,
    pub force: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleComparison {
    pub value: [f64; 2],
    pub deviation: f64,
    pub leakage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOutput {
    pub build: String,
    pub config: ResolvedConfig,
    pub estimate: [f64; 2],
    pub n_samples: usize,
    pub groups: usize,
    pub variance_bound_used: f64,
    pub auto_sized: bool,
    pub sample_variance: f64,
    pub imag_check: Option<bool>,
    pub outcome_deficit: f64,
    pub wall_time: f64,
    pub oracle: Option<OracleComparison>,
}

impl EstimateOutput {
    pub fn human(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "agsim estimate ({})", self.build);
        let _ = writeln!(s, "  estimate        {:+.6} {:+.6}i", self.estimate[0], self.estimate[1]);
        let _ = writeln!(s, "  epsilon, delta  {}, {}", self.config.epsilon, self.config.delta);
        let _ = writeln!(s, "  samples         {} in {} groups{}", self.n_samples, self.groups, if self.auto_sized { " (auto)" } else { "" });
        let _ = writeln!(s, "  variance bound  {:.6} ({})", self.variance_bound_used, self.config.variance_mode);
        let _ = writeln!(s, "  sample variance {:.6}", self.sample_variance);
        if let Some(ok) = self.imag_check {
            let _ = writeln!(s, "  imag check      {}", if ok { "ok" } else { "FAILED" });
        }
        if self.outcome_deficit != 0.0 {
            let _ = writeln!(s, "  outcome deficit {:.3e}", self.outcome_deficit);
        }
        let _ = writeln!(s, "  seed, workers   {}, {}", self.config.seed, self.config.workers);
        let _ = writeln!(s, "  wall time       {:.3}s", self.wall_time);
        if let Some(o) = &self.oracle {
            let _ = writeln!(s, "  oracle          {:+.6} {:+.6}i (deviation {:.3e}, leakage {:.1e})", o.value[0], o.value[1], o.deviation, o.leakage);
        }
        s
    }
}

pub fn estimator_config(exp: &Experiment, ov: &Overrides) -> EstimatorConfig {
    let est = &exp.spec.estimation;
    EstimatorConfig {
        epsilon: ov.epsilon.unwrap_or(est.epsilon),
        delta: ov.delta.unwrap_or(est.delta),
        seed: ov.seed.unwrap_or(est.seed),
        workers: ov.workers.max(1),
        variance: exp.variance,
        samples: ov.samples.or(est.samples),
        resolution: ov.resolution.or(est.resolution),
        oracle: OracleConfig::default(),
        force: ov.force,
    }
}

fn resolved(cfg: &EstimatorConfig) -> ResolvedConfig {
    ResolvedConfig {
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        seed: cfg.seed,
        workers: cfg.workers,
        variance_mode: match cfg.variance {
            VarianceMode::User(v) => format!("user:{v}"),
            m => m.label().to_string(),
        },
        samples: cfg.samples,
        resolution: cfg.resolution,
        force: cfg.force,
    }
}

/// One line on stderr before a forced run.
pub fn cost_notice(table: usize, what: &str) -> String {
    format!("forced run: {table} generating-function evaluations for {what}")
}

pub fn cmd_estimate(exp: &Experiment, ov: &Overrides) -> Result<EstimateOutput, CliError> {
    let cfg = estimator_config(exp, ov);
    if cfg.force && exp.circuit.measured() > 0 {
        let k = cfg.resolution.unwrap_or_else(|| exp.state.cutoff().max(exp.state.total_degree()));
        eprintln!("{}", cost_notice((k + 1).saturating_pow(exp.circuit.measured() as u32), "the outcome table"));
    }
    let r: EstimateReport = estimate_mean_value(&exp.state, &exp.circuit, &exp.observable, &cfg)?;
    let oracle = if ov.oracle {
        let o = oracle_mean_value(&exp.state, &exp.circuit, &exp.observable, &cfg.oracle)?;
        Some(OracleComparison { value: pair(o.value), deviation: (o.value - r.estimate).norm(), leakage: o.leakage })
    } else {
        None
    };
    Ok(EstimateOutput {
        build: BUILD_ID.to_string(),
        config: resolved(&cfg),
        estimate: pair(r.estimate),
        n_samples: r.n_samples,
        groups: r.groups,
        variance_bound_used: r.variance_bound_used,
        auto_sized: r.auto_sized,
        sample_variance: r.sample_variance,
        imag_check: r.imag_check,
        outcome_deficit: r.outcome_deficit,
        wall_time: r.wall_time,
        oracle,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalRow {
    pub prefix: Vec<usize>,
    pub probability: f64,
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginalOutput {
    pub build: String,
    pub resolution: usize,
    pub len: usize,
    pub path: String,
    pub rows: Vec<MarginalRow>,
    /// Sum over the full table when every prefix was requested.
    pub sum: Option<f64>,
    pub max_deviation: Option<f64>,
    pub leakage: Option<f64>,
}

impl MarginalOutput {
    pub fn human(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "agsim marginal ({}) resolution {} path {}", self.build, self.resolution, self.path);
        for r in &self.rows {
            let p = r.prefix.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",");
            match r.oracle {
                Some(o) => {
                    let _ = writeln!(s, "  {p:>12}  {:.12}  oracle {:.12}", r.probability, o);
                }
                None => {
                    let _ = writeln!(s, "  {p:>12}  {:.12}", r.probability);
                }
            }
        }
        if let Some(t) = self.sum {
            let _ = writeln!(s, "  sum           {t:.12}");
        }
        if let Some(d) = self.max_deviation {
            let _ = writeln!(s, "  max deviation {d:.3e}");
        }
        s
    }
}

fn marginal_config(ov: &Overrides, exp: &Experiment) -> MarginalConfig {
    MarginalConfig { resolution: ov.resolution.or(exp.spec.estimation.resolution), force: ov.force, ..MarginalConfig::default() }
}

fn oracle_cutoff(exp: &Experiment) -> Option<usize> {
    (!exp.front().is_linear()).then(|| exp.state.cutoff().max(24))
}

/// Photon-number marginals of the state produced by the Gaussian in front of
/// the first measurement. With `all`, every prefix of length `len`.
pub fn cmd_marginal(exp: &Experiment, prefix: &[usize], all: bool, len: Option<usize>, ov: &Overrides) -> Result<MarginalOutput, CliError> {
    let g = exp.front();
    let len = if all { len.unwrap_or(prefix.len().max(1)) } else { prefix.len() };
    if len == 0 {
        return Err(CliError::Spec("marginal needs a prefix or --all".into()));
    }
    let cfg = marginal_config(ov, exp);
    if ov.force {
        let k = cfg.resolve_resolution(g, &exp.state, &exp.state);
        eprintln!("{}", cost_notice((k + 1).saturating_pow(len as u32), "the marginal table"));
    }
    let table = GeneratingFunctionTable::compute(g, &exp.state, &exp.state, len, &cfg)?;
    let freq: &FrequencyVector = &table.freq;
    let mut rows = Vec::new();
    let mut sum = None;
    if all {
        let probs = table.invert_all();
        sum = Some(probs.iter().map(|z| z.re).sum());
        for (idx, p) in probs.iter().enumerate() {
            rows.push(MarginalRow { prefix: freq.prefix(idx), probability: p.re, oracle: None });
        }
    } else {
        rows.push(MarginalRow { prefix: prefix.to_vec(), probability: table.marginal(prefix)?.re, oracle: None });
    }
    let (mut max_deviation, mut leakage) = (None, None);
    if ov.oracle {
        let o = oracle_marginal_table(&exp.state, g, len, &exp.state, oracle_cutoff(exp))?;
        let mut dev: f64 = 0.0;
        for r in &mut rows {
            let v = o.values.get(&r.prefix).map_or(0.0, |z| z.re);
            dev = dev.max((v - r.probability).abs());
            r.oracle = Some(v);
        }
        max_deviation = Some(dev);
        leakage = Some(o.leakage);
    }
    Ok(MarginalOutput {
        build: BUILD_ID.to_string(),
        resolution: freq.resolution(),
        len,
        path: format!("{:?}", table.path).to_lowercase(),
        rows,
        sum,
        max_deviation,
        leakage,
    })
}

/// `count` chain-rule samples over the first `len` modes.
pub fn cmd_sample(exp: &Experiment, count: usize, len: usize, ov: &Overrides) -> Result<Vec<Vec<usize>>, CliError> {
    let cfg = marginal_config(ov, exp);
    let g = exp.front();
    if ov.force {
        let k = cfg.resolve_resolution(g, &exp.state, &exp.state);
        eprintln!("{}", cost_notice((k + 1).saturating_pow(len as u32), "the sampling tables"));
    }
    let s = ChainSampler::new(g, &exp.state, len, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ov.seed.unwrap_or(exp.spec.estimation.seed));
    (0..count).map(|_| s.sample(&mut rng).map_err(CliError::from)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheckOutput {
    pub build: String,
    pub marginal_len: usize,
    pub marginal_max_deviation: f64,
    pub marginal_sum: f64,
    pub oracle_mean: [f64; 2],
    pub purity_average: f64,
    pub leakage: f64,
    pub quadrature_error: f64,
    pub passed: bool,
}

impl OracleCheckOutput {
    pub fn human(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "agsim oracle-check ({})", self.build);
        let _ = writeln!(s, "  marginals over {} modes: max deviation {:.3e}, sum {:.12}", self.marginal_len, self.marginal_max_deviation, self.marginal_sum);
        let _ = writeln!(s, "  oracle mean     {:+.9} {:+.9}i", self.oracle_mean[0], self.oracle_mean[1]);
        let _ = writeln!(s, "  purity average  {:.6}", self.purity_average);
        let _ = writeln!(s, "  leakage         {:.1e}", self.leakage);
        if self.quadrature_error > 0.0 {
            let _ = writeln!(s, "  quadrature err  {:.1e}", self.quadrature_error);
        }
        let _ = writeln!(s, "  {}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

/// Fast marginals against the Fock oracle, plus the oracle mean value.
pub fn cmd_oracle_check(exp: &Experiment, len: Option<usize>, ov: &Overrides) -> Result<OracleCheckOutput, CliError> {
    let len = len.unwrap_or(1).min(exp.spec.modes);
    let m = cmd_marginal(exp, &[], true, Some(len), &Overrides { oracle: true, ..ov.clone() })?;
    let dev = m.max_deviation.unwrap_or(f64::INFINITY);
    let sum = m.sum.unwrap_or(0.0);
    let o = oracle_mean_value(&exp.state, &exp.circuit, &exp.observable, &OracleConfig::default())?;
    let passed = dev <= MARGINAL_CHECK_TOL && (sum - exp.state.norm().powi(2)).abs() <= MARGINAL_CHECK_TOL + m.leakage.unwrap_or(0.0);
    Ok(OracleCheckOutput {
        build: BUILD_ID.to_string(),
        marginal_len: len,
        marginal_max_deviation: dev,
        marginal_sum: sum,
        oracle_mean: pair(o.value),
        purity_average: o.purity_average,
        leakage: o.leakage.max(m.leakage.unwrap_or(0.0)),
        quadrature_error: o.quadrature_error,
        passed,
    })
}

/// `--workers`, then `AGSIM_WORKERS`, then the available parallelism.
pub fn resolve_workers(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("AGSIM_WORKERS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}
