//! Timing sweeps against operation-count models.
//!
//! Each suite times one kernel over a parameter sweep, pairs every point with
//! its model count, and checks the measured growth per step against the model
//! growth. Models are worst-case counts, so every step is bounded above by
//! STEP_FACTOR times the model growth and only the largest step is bounded below.

use std::fmt::Write as _;
use std::time::Instant;

use agsim_core::fock::ProductState;
use agsim_core::linalg::{haar_unitary, random_complex_matrix};
use agsim_core::marginal::{generating_function_linear, FrequencyVector};
use agsim_core::matfun::{loop_hafnian_lowrank, permanent_ryser, LowRankSymmetric};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

/// Allowed factor between measured and model growth per step.
pub const STEP_FACTOR: f64 = 3.0;
/// Allowed time ratio per +1 in the permanent size.
pub const RYSER_DOUBLING: (f64, f64) = (1.6, 2.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Ryser,
    LoopHafnian,
    LinearGurvits,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Ryser, Suite::LoopHafnian, Suite::LinearGurvits];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ryser => "ryser",
            Self::LoopHafnian => "loop-hafnian",
            Self::LinearGurvits => "linear-gurvits",
        }
    }

    pub fn parse(s: &str) -> Result<Vec<Suite>, CliError> {
        match s {
            "all" => Ok(Self::ALL.to_vec()),
            _ => Self::ALL.into_iter().find(|x| x.name() == s).map(|x| vec![x]).ok_or_else(|| CliError::Spec(format!("unknown bench suite {s:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Minimum accumulated time per measurement, in seconds.
    pub min_time: f64,
    /// Overrides the top of the sweep.
    pub max: Option<usize>,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { min_time: 0.05, max: None, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub suite: &'static str,
    pub m: usize,
    pub n_max: usize,
    pub l: usize,
    pub r: usize,
    pub n: usize,
    pub seconds: f64,
    pub model: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepCheck {
    pub from: usize,
    pub to: usize,
    pub measured_ratio: f64,
    pub model_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteFit {
    pub suite: &'static str,
    /// Least-squares slope of log time against log model count.
    pub exponent: f64,
    pub steps: Vec<StepCheck>,
    pub monotone: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOutput {
    pub build: String,
    pub rows: Vec<BenchRow>,
    pub fits: Vec<SuiteFit>,
}

impl BenchOutput {
    pub fn csv(&self) -> String {
        let mut s = String::from("suite,m,n_max,l,r,n,seconds,model\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{:.9e},{:.6e}", r.suite, r.m, r.n_max, r.l, r.r, r.n, r.seconds, r.model);
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for f in &self.fits {
            let _ = writeln!(s, "# {}: exponent {:.3} vs model, monotone {}, {}", f.suite, f.exponent, f.monotone, if f.passed { "PASS" } else { "FAIL" });
            for st in &f.steps {
                let _ = writeln!(
                    s,
                    "#   {} -> {}: measured x{:.2}, model x{:.2}{}",
                    st.from,
                    st.to,
                    st.measured_ratio,
                    st.model_ratio,
                    if st.passed { "" } else { "  <- out of range" }
                );
            }
        }
        s
    }
}

/// Seconds per call: the best of five batches, each grown until it takes
/// at least `min_time`.
pub fn time_call<F: FnMut() -> Result<(), CliError>>(mut f: F, min_time: f64) -> Result<f64, CliError> {
    f()?;
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let mut reps = 1usize;
        loop {
            let t = Instant::now();
            for _ in 0..reps {
                f()?;
            }
            let el = t.elapsed().as_secs_f64();
            if el >= min_time || reps >= 1 << 24 {
                best = best.min(el / reps as f64);
                break;
            }
            reps = (reps * 2).max((reps as f64 * min_time / el.max(1e-9)) as usize / 2);
        }
    }
    Ok(best)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_top(top: usize, limit: usize, what: &str) -> Result<(), CliError> {
    if top > limit {
        return Err(CliError::Guard(format!("{what} sweep point {top} exceeds the guard {limit}")));
    }
    Ok(())
}

fn ryser(opts: &BenchOptions) -> Result<Vec<BenchRow>, CliError> {
    let top = opts.max.unwrap_or(20);
    check_top(top, agsim_core::matfun::RYSER_LIMIT, "permanent")?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    for n in 10..=top {
        let a = random_complex_matrix(n, n, &mut rng);
        let t = time_call(|| permanent_ryser(&a).map(|_| ()).map_err(CliError::from), opts.min_time)?;
        rows.push(BenchRow { suite: "ryser", m: n, n_max: 1, l: 0, r: n, n, seconds: t, model: n as f64 * 2f64.powi(n as i32) });
    }
    Ok(rows)
}

fn loop_hafnian(opts: &BenchOptions) -> Result<Vec<BenchRow>, CliError> {
    let top = opts.max.unwrap_or(12);
    let r = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    for n in 4..=top {
        let g = random_complex_matrix(n, r, &mut rng);
        let mu = random_complex_matrix(n, 1, &mut rng).column(0).into_owned();
        let s = LowRankSymmetric::new(g, mu)?;
        let t = time_call(|| loop_hafnian_lowrank(&s).map(|_| ()).map_err(CliError::from), opts.min_time)?;
        rows.push(BenchRow { suite: "loop-hafnian", m: n, n_max: 1, l: 0, r, n, seconds: t, model: n as f64 * binomial(2 * n + r - 1, r - 1) });
    }
    Ok(rows)
}

/// One generating-function evaluation over L modes for |n_max⟩^⊗M through a
/// Haar-random linear circuit.
fn linear_gurvits(opts: &BenchOptions) -> Result<Vec<BenchRow>, CliError> {
    let (m, n_max) = (4, 2);
    let top = opts.max.unwrap_or(3);
    check_top(top, agsim_core::marginal::LINEAR_LEN_GUARD, "prefix length")?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let u = haar_unitary(m, &mut rng);
    let psi = ProductState::fock(&vec![n_max; m], n_max)?;
    let k = m * n_max;
    let mut rows = Vec::new();
    for l in 1..=top {
        let phases = FrequencyVector::new(m, l, k)?.phases(1);
        let t = time_call(|| generating_function_linear(&u, &phases, &psi, &psi).map(|_| ()).map_err(CliError::from), opts.min_time)?;
        let model = m as f64 * ((m * n_max + 1) as f64).powi(2 * l as i32);
        rows.push(BenchRow { suite: "linear-gurvits", m, n_max, l, r: 2 * l, n: l, seconds: t, model });
    }
    Ok(rows)
}

pub fn fit(suite: Suite, rows: &[BenchRow]) -> SuiteFit {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.model.ln(), r.seconds.ln())).collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let exponent = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let last = rows.len().saturating_sub(2);
    let steps: Vec<StepCheck> = rows
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let measured_ratio = w[1].seconds / w[0].seconds;
            let model_ratio = w[1].model / w[0].model;
            let floor = if i == last { model_ratio / STEP_FACTOR } else { 0.0 };
            let passed = match suite {
                Suite::Ryser => (RYSER_DOUBLING.0..=RYSER_DOUBLING.1).contains(&measured_ratio),
                _ => (floor..=model_ratio * STEP_FACTOR).contains(&measured_ratio),
            };
            StepCheck { from: w[0].n, to: w[1].n, measured_ratio, model_ratio, passed }
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].seconds >= w[0].seconds);
    let passed = steps.iter().all(|s| s.passed);
    SuiteFit { suite: suite.name(), exponent, steps, monotone, passed }
}

/// Runs the suites on a single worker so timings are not spread over threads.
pub fn cmd_bench(suites: &[Suite], opts: &BenchOptions) -> Result<BenchOutput, CliError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| CliError::Numerical(e.to_string()))?;
    pool.install(|| {
        let mut rows = Vec::new();
        let mut fits = Vec::new();
        for &s in suites {
            let r = match s {
                Suite::Ryser => ryser(opts)?,
                Suite::LoopHafnian => loop_hafnian(opts)?,
                Suite::LinearGurvits => linear_gurvits(opts)?,
            };
            fits.push(fit(s, &r));
            rows.extend(r);
        }
        Ok(BenchOutput { build: crate::BUILD_ID.to_string(), rows, fits })
    })
}
