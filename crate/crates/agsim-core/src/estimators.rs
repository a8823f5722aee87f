//! Mean-value estimators built on characteristic-function importance sampling
//! and the median of means.
//!
//! Every estimator draws α_A from p(α) = Π_i |χ_{O_i}(α_i)|² / (π ‖O_i‖₂²) and
//! returns X = conj(χ_ρ(α)) ‖O‖₂² / conj(χ_O(α)), possibly with an outcome of
//! the mid-circuit measurement drawn first and divided out.

use std::cell::RefCell;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::circuit::{AdaptiveCircuit, GaussianFeedforward, PhotonFeedforward};
use crate::error::{Error, Result};
use crate::fock::{PhotonPattern, ProductObservable, ProductState};
use crate::gaussian::GaussianUnitary;
use crate::kernel::{GaussianKernel, QuadratureEvaluator};
use crate::linalg::{c, conj, ComplexMatrix, ComplexVector, C64, ONE, ZERO};
use crate::marginal::{self, FrequencyVector, GfPath, MarginalConfig};
use crate::oracle::{oracle_mean_value, OracleConfig};

pub const PROPOSAL_VARIANCE: f64 = 1.25;
/// Proposal variances tried per mode; the one with the smallest envelope wins.
pub const PROPOSAL_CANDIDATES: [f64; 6] = [PROPOSAL_VARIANCE, 2.0, 3.0, 4.0, 6.0, 8.0];
pub const ENVELOPE_GRID: usize = 101;
pub const ENVELOPE_RADIUS: f64 = 6.0;
pub const ENVELOPE_INFLATION: f64 = 1.2;
pub const MAX_PROPOSALS: usize = 1_000_000;
pub const SIZING_CONSTANT: f64 = 544.0;
/// Half-width of the box scanned for heterodyne outcome moments.
pub const OUTCOME_SCAN_RADIUS: f64 = 8.0;
/// Photon-number outcomes lighter than this are dropped from the table.
pub const OUTCOME_FLOOR: f64 = 1e-14;

/// ⟨m|D(α)|n⟩ for m, n < d, row-major into `out`.
fn displacement_into(alpha: C64, d: usize, out: &mut Vec<C64>) {
    out.clear();
    out.resize(d * d, ZERO);
    if d == 0 {
        return;
    }
    out[0] = c((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for m in 1..d {
        out[m * d] = out[(m - 1) * d] * alpha / (m as f64).sqrt();
    }
    let ab = alpha.conj();
    for n in 0..d - 1 {
        let s = 1.0 / ((n + 1) as f64).sqrt();
        for m in 0..d {
            let up = if m > 0 { out[(m - 1) * d + n] * (m as f64).sqrt() } else { ZERO };
            out[m * d + n + 1] = (up - ab * out[m * d + n]) * s;
        }
    }
}

thread_local! {
    static SCRATCH: RefCell<Vec<C64>> = const { RefCell::new(Vec::new()) };
}

/// χ_O(α) = Tr[D(α) O].
pub fn char_function(o: &ComplexMatrix, alpha: C64) -> C64 {
    let d = o.nrows();
    SCRATCH.with_borrow_mut(|buf| {
        displacement_into(alpha, d, buf);
        let mut s = ZERO;
        for m in 0..d {
            for n in 0..d {
                s += buf[m * d + n] * o[(n, m)];
            }
        }
        s
    })
}

/// χ_ψ(β) = ⟨ψ|D(β)|ψ⟩ for a single-mode vector.
pub fn char_state(coeffs: &[C64], beta: C64) -> C64 {
    let d = coeffs.iter().rposition(|z| *z != ZERO).map_or(1, |k| k + 1);
    SCRATCH.with_borrow_mut(|buf| {
        displacement_into(beta, d, buf);
        let mut s = ZERO;
        for m in 0..d {
            let mut row = ZERO;
            for n in 0..d {
                row += buf[m * d + n] * coeffs[n];
            }
            s += coeffs[m].conj() * row;
        }
        s
    })
}

/// Rejection sampler on the complex plane with a complex-Gaussian proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub center: C64,
    /// E|z − center|² under the proposal.
    pub variance: f64,
    pub constant: f64,
}

impl Envelope {
    pub fn proposal_density(&self, z: C64) -> f64 {
        (-(z - self.center).norm_sqr() / self.variance).exp() / (std::f64::consts::PI * self.variance)
    }

    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> C64 {
        let s = (0.5 * self.variance).sqrt();
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        self.center + c(s * re, s * im)
    }

    /// Scans a square grid of half-width `radius` and inflates the worst
    /// density-to-proposal ratio.
    pub fn scan<F: Fn(C64) -> Result<f64>>(density: F, center: C64, variance: f64, radius: f64) -> Result<Self> {
        let mut env = Self { center, variance, constant: 0.0 };
        let step = 2.0 * radius / (ENVELOPE_GRID - 1) as f64;
        let mut worst: f64 = 0.0;
        for i in 0..ENVELOPE_GRID {
            for j in 0..ENVELOPE_GRID {
                let off = c(-radius + step * i as f64, -radius + step * j as f64);
                if off.norm() > radius {
                    continue;
                }
                let z = center + off;
                worst = worst.max(density(z)? / env.proposal_density(z));
            }
        }
        if !(worst > 0.0 && worst.is_finite()) {
            return Err(Error::SamplerFailure("density vanishes on the envelope grid".into()));
        }
        env.constant = ENVELOPE_INFLATION * worst;
        Ok(env)
    }

    /// Draws z with probability ∝ density(z); returns z and whatever the
    /// density closure attached to it.
    pub fn draw<R, T, F>(&self, rng: &mut R, density: F) -> Result<(C64, f64, T)>
    where
        R: Rng + ?Sized,
        F: Fn(C64) -> Result<(f64, T)>,
    {
        for _ in 0..MAX_PROPOSALS {
            let z = self.propose(rng);
            let (f, extra) = density(z)?;
            let ratio = f / (self.constant * self.proposal_density(z));
            if ratio > 1.0 {
                return Err(Error::EnvelopeViolation { ratio, re: z.re, im: z.im });
            }
            if rng.random::<f64>() < ratio {
                return Ok((z, f, extra));
            }
        }
        Err(Error::SamplerFailure(format!("no acceptance in {MAX_PROPOSALS} proposals")))
    }

    /// Expected acceptance probability 1 / constant.
    pub fn acceptance(&self) -> f64 {
        1.0 / self.constant
    }
}

/// Per-mode sampler of |χ_{O_i}(α)|² / (π ‖O_i‖₂²).
#[derive(Debug, Clone)]
pub struct CharSampler {
    support: Vec<usize>,
    ops: Vec<ComplexMatrix>,
    norms: Vec<f64>,
    envelopes: Vec<Envelope>,
}

/// One draw of α_A together with Π_i χ_{O_i}(α_i).
#[derive(Debug, Clone, PartialEq)]
pub struct CharDraw {
    pub alpha: Vec<C64>,
    pub chi: C64,
}

impl CharSampler {
    pub fn new(o: &ProductObservable) -> Result<Self> {
        let norms = o.mode_norms_sqr();
        if let Some(k) = norms.iter().position(|n| *n <= 0.0) {
            return Err(Error::ZeroNormObservable(o.support()[k]));
        }
        let ops = o.ops().to_vec();
        let envelopes = ops
            .iter()
            .zip(&norms)
            .map(|(op, &nrm)| mode_envelope(op, nrm))
            .collect::<Result<_>>()?;
        Ok(Self { support: o.support().to_vec(), ops, norms, envelopes })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn norm_sqr(&self) -> f64 {
        self.norms.iter().product()
    }

    pub fn envelopes(&self) -> &[Envelope] {
        &self.envelopes
    }

    /// Density of mode k at α.
    pub fn density(&self, k: usize, alpha: C64) -> f64 {
        mode_density(&self.ops[k], self.norms[k], alpha)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CharDraw> {
        let mut alpha = Vec::with_capacity(self.ops.len());
        let mut chi = ONE;
        for (k, env) in self.envelopes.iter().enumerate() {
            let op = &self.ops[k];
            let nrm = self.norms[k];
            let (z, _, x) = env.draw(rng, |z| {
                let x = char_function(op, z);
                Ok((x.norm_sqr() / (std::f64::consts::PI * nrm), x))
            })?;
            alpha.push(z);
            chi *= x;
        }
        Ok(CharDraw { alpha, chi })
    }
}

/// Scan radius grows with the proposal width so the tails stay covered.
fn mode_envelope(op: &ComplexMatrix, norm_sqr: f64) -> Result<Envelope> {
    let mut best: Option<Envelope> = None;
    for v in PROPOSAL_CANDIDATES {
        let radius = ENVELOPE_RADIUS * (v / PROPOSAL_VARIANCE).sqrt();
        let env = Envelope::scan(|z| Ok(mode_density(op, norm_sqr, z)), ZERO, v, radius)?;
        if best.is_none_or(|b| env.constant < b.constant) {
            best = Some(env);
        }
    }
    best.ok_or(Error::EmptyInput)
}

fn mode_density(op: &ComplexMatrix, norm_sqr: f64, z: C64) -> f64 {
    char_function(op, z).norm_sqr() / (std::f64::consts::PI * norm_sqr)
}

pub fn sample_char_density<R: Rng + ?Sized>(s: &CharSampler, rng: &mut R) -> Result<Vec<C64>> {
    Ok(s.sample(rng)?.alpha)
}

/// ceil(8 ln(1/δ)).
pub fn group_count(delta: f64) -> usize {
    ((8.0 * (1.0 / delta).ln()).ceil() as usize).max(1)
}

/// ceil(544 · Var · ε⁻² · ln(1/δ)).
pub fn sample_floor(variance: f64, epsilon: f64, delta: f64) -> usize {
    (SIZING_CONSTANT * variance * (1.0 / delta).ln() / (epsilon * epsilon)).ceil() as usize
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Componentwise median of group means.
pub fn median_of_group_means(means: &[C64]) -> Result<C64> {
    if means.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(c(median(means.iter().map(|z| z.re).collect()), median(means.iter().map(|z| z.im).collect())))
}

/// Splits the samples into `groups` equal consecutive blocks, dropping the
/// remainder, and takes the componentwise median of the block means.
pub fn median_of_means(samples: &[C64], groups: usize) -> Result<C64> {
    if samples.is_empty() || groups == 0 {
        return Err(Error::EmptyInput);
    }
    let per = samples.len() / groups;
    if per == 0 {
        return Err(Error::InvalidInput(format!("{} samples cannot fill {groups} groups", samples.len())));
    }
    let means: Vec<C64> = samples.chunks_exact(per).take(groups).map(|ch| ch.iter().sum::<C64>() / per as f64).collect();
    median_of_group_means(&means)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceMode {
    User(f64),
    /// ‖O_A‖₂² times the purity average from the Fock oracle.
    OraclePurity,
    /// ‖O_A‖₂².
    Trivial,
}

impl VarianceMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::User(_) => "user",
            Self::OraclePurity => "oracle-purity",
            Self::Trivial => "trivial",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub workers: usize,
    pub variance: VarianceMode,
    /// Fixed total sample count instead of the auto-sized floor.
    pub samples: Option<usize>,
    /// Per-mode resolution for photon-number outcomes.
    pub resolution: Option<usize>,
    pub oracle: OracleConfig,
    pub force: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            delta: 0.05,
            seed: 0,
            workers: 1,
            variance: VarianceMode::Trivial,
            samples: None,
            resolution: None,
            oracle: OracleConfig::default(),
            force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: C64,
    pub epsilon: f64,
    pub delta: f64,
    pub n_samples: usize,
    pub groups: usize,
    pub variance_bound_used: f64,
    pub variance_mode: String,
    pub auto_sized: bool,
    pub seed: u64,
    pub workers: usize,
    pub wall_time: f64,
    /// Unbiased variance of the raw X samples.
    pub sample_variance: f64,
    /// |Im estimate| ≤ ε/10 for Hermitian observables.
    pub imag_check: Option<bool>,
    /// Outcome probability missing from the truncated outcome alphabet.
    pub outcome_deficit: f64,
}

/// A source of i.i.d. unbiased samples X.
pub trait XSampler: Sync {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<C64>;
}

/// Group sums Σx and Σ|x|², one ChaCha8 stream per group.
pub fn run_groups<S: XSampler + ?Sized>(s: &S, seed: u64, groups: usize, per_group: usize, workers: usize) -> Result<Vec<(C64, f64)>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| {
        (0..groups)
            .into_par_iter()
            .map(|g| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(g as u64);
                let mut sum = ZERO;
                let mut sq = 0.0;
                for _ in 0..per_group {
                    let x = s.draw(&mut rng)?;
                    sum += x;
                    sq += x.norm_sqr();
                }
                Ok((sum, sq))
            })
            .collect()
    })
}

/// Draws `n` raw samples from group stream 0.
pub fn raw_samples<S: XSampler + ?Sized>(s: &S, seed: u64, n: usize) -> Result<Vec<C64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| s.draw(&mut rng)).collect()
}

struct Sizing {
    groups: usize,
    per_group: usize,
    auto: bool,
}

fn size_run(cfg: &EstimatorConfig, variance: f64) -> Result<Sizing> {
    if !(cfg.epsilon.is_finite() && cfg.epsilon > 0.0) || !(cfg.delta.is_finite() && cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::InvalidInput("need ε > 0 and 0 < δ < 1".into()));
    }
    let groups = group_count(cfg.delta);
    match cfg.samples {
        Some(n) => {
            let per_group = n / groups;
            if per_group == 0 {
                return Err(Error::InvalidInput(format!("{n} samples cannot fill {groups} groups")));
            }
            Ok(Sizing { groups, per_group, auto: false })
        }
        None => {
            let floor = sample_floor(variance, cfg.epsilon, cfg.delta);
            Ok(Sizing { groups, per_group: floor.div_ceil(groups).max(1), auto: true })
        }
    }
}

fn variance_bound(cfg: &EstimatorConfig, norm_sqr: f64, oracle: impl FnOnce() -> Result<f64>) -> Result<f64> {
    match cfg.variance {
        VarianceMode::User(v) if v > 0.0 && v.is_finite() => Ok(v),
        VarianceMode::User(v) => Err(Error::InvalidInput(format!("variance bound {v} is not positive"))),
        VarianceMode::Trivial => Ok(norm_sqr),
        VarianceMode::OraclePurity => Ok(norm_sqr * oracle()?),
    }
}

fn run_estimate<S: XSampler + ?Sized>(s: &S, o: &ProductObservable, cfg: &EstimatorConfig, variance: f64, deficit: f64) -> Result<EstimateReport> {
    let start = Instant::now();
    let sz = size_run(cfg, variance)?;
    let sums = run_groups(s, cfg.seed, sz.groups, sz.per_group, cfg.workers)?;
    let means: Vec<C64> = sums.iter().map(|(sum, _)| sum / sz.per_group as f64).collect();
    let estimate = median_of_group_means(&means)?;
    let n = sz.groups * sz.per_group;
    let total: C64 = sums.iter().map(|p| p.0).sum();
    let sq: f64 = sums.iter().map(|p| p.1).sum();
    let mean = total / n as f64;
    let sample_variance = if n > 1 { (sq - n as f64 * mean.norm_sqr()) / (n - 1) as f64 } else { 0.0 };
    Ok(EstimateReport {
        estimate,
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        n_samples: n,
        groups: sz.groups,
        variance_bound_used: variance,
        variance_mode: cfg.variance.label().to_string(),
        auto_sized: sz.auto,
        seed: cfg.seed,
        workers: cfg.workers,
        wall_time: start.elapsed().as_secs_f64(),
        sample_variance,
        imag_check: o.is_hermitian().then(|| estimate.im.abs() <= cfg.epsilon / 10.0),
        outcome_deficit: deficit,
    })
}

/// Columns of (A, B) on the observable support, so that a displacement α_A
/// pushes to A_S α + B_S ᾱ.
#[derive(Debug, Clone)]
struct SupportMap {
    a: ComplexMatrix,
    b: ComplexMatrix,
}

impl SupportMap {
    fn new(a: &ComplexMatrix, b: &ComplexMatrix, support: &[usize]) -> Self {
        let m = a.nrows();
        let pick = |x: &ComplexMatrix| ComplexMatrix::from_fn(m, support.len(), |i, k| x[(i, support[k])]);
        Self { a: pick(a), b: pick(b) }
    }

    fn of(g: &GaussianUnitary, support: &[usize]) -> Self {
        Self::new(g.transform_a(), g.transform_b(), support)
    }

    /// The map α ↦ push(outer, push(inner_map(α))) where `self` is the inner map.
    fn then(&self, outer: &GaussianUnitary) -> Self {
        let (ae, be) = (outer.transform_a(), outer.transform_b());
        Self { a: ae * &self.a + be * conj(&self.b), b: ae * &self.b + be * conj(&self.a) }
    }

    fn apply(&self, alpha: &[C64]) -> ComplexVector {
        let m = self.a.nrows();
        let mut out = ComplexVector::zeros(m);
        for (k, &z) in alpha.iter().enumerate() {
            let zb = z.conj();
            for i in 0..m {
                out[i] += self.a[(i, k)] * z + self.b[(i, k)] * zb;
            }
        }
        out
    }
}

/// X(α_A) for a circuit without mid-circuit measurements.
#[derive(Debug, Clone)]
pub struct NoFeedforwardSampler {
    chars: CharSampler,
    push: SupportMap,
    psi: Vec<Vec<C64>>,
}

impl NoFeedforwardSampler {
    pub fn new(psi: &ProductState, g: &GaussianUnitary, o: &ProductObservable) -> Result<Self> {
        if psi.modes() != g.modes() {
            return Err(Error::DimensionMismatch { expected: g.modes(), got: psi.modes() });
        }
        if let Some(&bad) = o.support().iter().find(|&&s| s >= g.modes()) {
            return Err(Error::DimensionMismatch { expected: g.modes(), got: bad });
        }
        Ok(Self { chars: CharSampler::new(o)?, push: SupportMap::of(g, o.support()), psi: psi.coeffs().to_vec() })
    }

    pub fn char_sampler(&self) -> &CharSampler {
        &self.chars
    }
}

impl XSampler for NoFeedforwardSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<C64> {
        let d = self.chars.sample(rng)?;
        let ap = self.push.apply(&d.alpha);
        let mut chi_rho = ONE;
        for (i, coeffs) in self.psi.iter().enumerate() {
            chi_rho *= char_state(coeffs, ap[i]);
        }
        Ok(chi_rho.conj() * self.chars.norm_sqr() / d.chi.conj())
    }
}

pub fn estimate_mean_value_no_ff(psi: &ProductState, g: &GaussianUnitary, o: &ProductObservable, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let s = NoFeedforwardSampler::new(psi, g, o)?;
    let var = variance_bound(cfg, o.norm_sqr(), || {
        Ok(oracle_mean_value(psi, &AdaptiveCircuit::Static(g.clone()), o, &cfg.oracle)?.purity_average)
    })?;
    run_estimate(&s, o, cfg, var, 0.0)
}

/// One photon-number outcome of the last round with what X needs for it.
#[derive(Debug, Clone)]
struct Outcome {
    pattern: PhotonPattern,
    prob: f64,
    omega: usize,
    kernels: usize,
    push: SupportMap,
}

/// Conjugated kernels G_eff† T(k) G_eff with their quadrature evaluators.
#[derive(Debug, Clone)]
struct KernelSet {
    kernels: Vec<(GaussianKernel, QuadratureEvaluator)>,
}

/// X(n, α_A) for photon-number feedforward.
#[derive(Debug, Clone)]
pub struct PhotonFeedforwardSampler {
    chars: CharSampler,
    freq: FrequencyVector,
    sets: Vec<KernelSet>,
    outcomes: Vec<Outcome>,
    cumulative: Vec<f64>,
    total: f64,
    psi: ProductState,
}

impl PhotonFeedforwardSampler {
    pub fn new(psi: &ProductState, ff: &PhotonFeedforward, o: &ProductObservable, resolution: Option<usize>, force: bool) -> Result<Self> {
        let l = ff.measured();
        if l == 0 {
            return Err(Error::InvalidInput("photon feedforward sampler needs at least one measurement".into()));
        }
        AdaptiveCircuit::Photon(ff.clone()).check_readout(o.support())?;
        let chars = CharSampler::new(o)?;
        let mcfg = MarginalConfig { resolution, path: GfPath::Auto, force };
        let linear = ff.first().is_linear() && ff.layers().iter().all(|(key, g)| key.len() == l || g.is_linear());
        let probe = if linear { ff.first().clone() } else { GaussianUnitary::squeezers(&vec![1.0; ff.modes()]) };
        mcfg.check_guard(mcfg.resolve_path(&probe)?, l)?;
        let k = mcfg.resolve_resolution(&probe, psi, psi);
        let freq = FrequencyVector::new(ff.modes(), l, k)?;
        let earlier = FrequencyVector::new(ff.modes(), l - 1, k)?;
        let mut sets = Vec::new();
        let mut outcomes = Vec::new();
        for e in 0..earlier.table_size() {
            let prefix = earlier.prefix(e);
            let geff = ff.effective(&prefix)?;
            let table = marginal::GeneratingFunctionTable::compute_with(&geff, psi, psi, freq.clone(), mcfg.resolve_path(&geff)?)?;
            let probs = table.invert_all();
            let kernels = (0..freq.table_size())
                .into_par_iter()
                .map(|kk| {
                    let kern = GaussianKernel::conjugated(&geff, &freq.phases(kk))?;
                    let ev = QuadratureEvaluator::new(&kern.factor()?, psi, psi)?;
                    Ok((kern, ev))
                })
                .collect::<Result<Vec<_>>>()?;
            let set = sets.len();
            sets.push(KernelSet { kernels });
            for last in 0..=k {
                let mut pattern = prefix.clone();
                pattern.push(last);
                let omega = freq.index(&pattern)?;
                let prob = probs[omega].re;
                if prob <= OUTCOME_FLOOR {
                    continue;
                }
                let push = SupportMap::of(ff.final_layer(&pattern)?, o.support()).then(&geff);
                outcomes.push(Outcome { pattern, prob, omega, kernels: set, push });
            }
        }
        let mut cumulative = Vec::with_capacity(outcomes.len());
        let mut acc = 0.0;
        for oc in &outcomes {
            acc += oc.prob;
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::SamplerFailure("outcome table has no mass".into()));
        }
        Ok(Self { chars, freq, sets, outcomes, cumulative, total: acc, psi: psi.clone() })
    }

    /// Exact outcome probabilities p(n) over the truncated alphabet.
    pub fn outcome_probabilities(&self) -> Vec<(PhotonPattern, f64)> {
        self.outcomes.iter().map(|o| (o.pattern.clone(), o.prob)).collect()
    }

    /// 1 − Σ p(n) relative to ‖ψ‖².
    pub fn deficit(&self) -> f64 {
        self.psi.norm().powi(2) - self.total
    }

    pub fn resolution(&self) -> usize {
        self.freq.resolution()
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.total;
        self.cumulative.partition_point(|&c| c <= u).min(self.outcomes.len() - 1)
    }

    pub fn sample_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> PhotonPattern {
        self.outcomes[self.pick(rng)].pattern.clone()
    }
}

impl PhotonFeedforwardSampler {
    fn outcome_char(&self, oc: &Outcome, alpha: &[C64]) -> C64 {
        let beta = oc.push.apply(alpha);
        let vals: Vec<C64> = self.sets[oc.kernels]
            .kernels
            .iter()
            .map(|(k, ev)| k.displaced_left_amplitude(beta.as_slice(), ev))
            .collect();
        marginal::invert_at(&vals, oc.omega)
    }

    /// Tr[ρ_n D(α)] for the unnormalized output state of branch n.
    pub fn branch_char(&self, pattern: &[usize], alpha: &[C64]) -> Result<C64> {
        let oc = self
            .outcomes
            .iter()
            .find(|o| o.pattern == pattern)
            .ok_or_else(|| Error::InvalidInput(format!("outcome {pattern:?} has no weight")))?;
        Ok(self.outcome_char(oc, alpha))
    }
}

impl XSampler for PhotonFeedforwardSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<C64> {
        let oc = &self.outcomes[self.pick(rng)];
        let d = self.chars.sample(rng)?;
        let num = self.outcome_char(oc, &d.alpha);
        let q = oc.prob / self.total;
        Ok(num.conj() * self.chars.norm_sqr() / (q * d.chi.conj()))
    }
}

pub fn estimate_mean_value_photon_ff(psi: &ProductState, ff: &PhotonFeedforward, o: &ProductObservable, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    if ff.measured() == 0 {
        let g = ff.final_layer(&[])?.after(ff.first())?;
        return estimate_mean_value_no_ff(psi, &g, o, cfg);
    }
    let s = PhotonFeedforwardSampler::new(psi, ff, o, cfg.resolution, cfg.force)?;
    let var = variance_bound(cfg, o.norm_sqr(), || {
        Ok(oracle_mean_value(psi, &AdaptiveCircuit::Photon(ff.clone()), o, &cfg.oracle)?.purity_average)
    })?;
    run_estimate(&s, o, cfg, var, s.deficit())
}

/// X(β, α_A) for one Gaussian measurement with displacement feedforward.
#[derive(Debug, Clone)]
pub struct GaussianFeedforwardSampler {
    chars: CharSampler,
    kernel: GaussianKernel,
    eval: QuadratureEvaluator,
    beta_push: (ComplexVector, ComplexVector),
    gain: ComplexVector,
    alpha_last: SupportMap,
    alpha_first: SupportMap,
    envelope: Envelope,
}

impl GaussianFeedforwardSampler {
    pub fn new(psi: &ProductState, ff: &GaussianFeedforward, o: &ProductObservable) -> Result<Self> {
        if ff.measured() != 1 {
            return Err(Error::GuardExceeded(format!("Gaussian feedforward supports one measured mode, got {}", ff.measured())));
        }
        AdaptiveCircuit::Gaussian(ff.clone()).check_readout(o.support())?;
        let m = ff.modes();
        let chars = CharSampler::new(o)?;
        let mut seed = vec![0.0; m];
        seed[0] = -ff.seed_squeeze()[0];
        let g0 = GaussianUnitary::squeezers(&seed).after(ff.first())?;
        let mut t = vec![ONE; m];
        t[0] = ZERO;
        let kernel = GaussianKernel::conjugated(&g0, &t)?;
        let eval = QuadratureEvaluator::new(&kernel.factor()?, psi, psi)?;
        let a1 = ff.first().transform_a();
        let b1 = ff.first().transform_b();
        let beta_push = (a1.column(0).into_owned(), b1.column(0).into_owned());
        let gain = ff.gain().column(0).into_owned();
        let alpha_last = SupportMap::of(ff.last(), o.support());
        let alpha_first = alpha_last.then(ff.first());
        let mut s = Self {
            chars,
            kernel,
            eval,
            beta_push,
            gain,
            alpha_last,
            alpha_first,
            envelope: Envelope { center: ZERO, variance: 1.0, constant: 1.0 },
        };
        s.envelope = s.outcome_envelope()?;
        Ok(s)
    }

    fn beta_prime(&self, beta: C64) -> ComplexVector {
        &self.beta_push.0 * beta + &self.beta_push.1 * beta.conj()
    }

    /// p(β) = (1/π) ⟨ψ|G1† D(β)|s⟩⟨s|D(β)† G1|ψ⟩.
    pub fn outcome_density(&self, beta: C64) -> f64 {
        let bp = self.beta_prime(beta);
        let minus = -&bp;
        self.kernel.displaced_amplitude(bp.as_slice(), &[minus.as_slice()], &self.eval).re / std::f64::consts::PI
    }

    pub fn envelope(&self) -> &Envelope {
        &self.envelope
    }

    fn outcome_envelope(&self) -> Result<Envelope> {
        let n = ENVELOPE_GRID;
        let r = OUTCOME_SCAN_RADIUS;
        let step = 2.0 * r / (n - 1) as f64;
        let mut w = 0.0;
        let mut mean = ZERO;
        let mut pts = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let z = c(-r + step * i as f64, -r + step * j as f64);
                let p = self.outcome_density(z).max(0.0);
                w += p;
                mean += z * p;
                pts.push((z, p));
            }
        }
        if w <= 0.0 {
            return Err(Error::SamplerFailure("outcome density vanishes on the scan box".into()));
        }
        mean /= w;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for (z, p) in &pts {
            let d = z - mean;
            sxx += p * d.re * d.re;
            syy += p * d.im * d.im;
            sxy += p * d.re * d.im;
        }
        let (sxx, syy, sxy) = (sxx / w, syy / w, sxy / w);
        let lmax = 0.5 * (sxx + syy) + (0.25 * (sxx - syy).powi(2) + sxy * sxy).sqrt();
        let variance = 2.0 * PROPOSAL_VARIANCE * lmax;
        let radius = ENVELOPE_RADIUS * (variance / PROPOSAL_VARIANCE).sqrt();
        Envelope::scan(|z| Ok(self.outcome_density(z)), mean, variance, radius)
    }

    /// Draws β from p(β).
    pub fn sample_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(C64, f64)> {
        let (z, p, _) = self.envelope.draw(rng, |z| Ok((self.outcome_density(z), ())))?;
        Ok((z, p))
    }
}

impl GaussianFeedforwardSampler {
    /// Tr[ρ_β D(α)] for the unnormalized output state at outcome β, so that
    /// α = 0 returns p(β).
    pub fn outcome_char(&self, beta: C64, alpha: &[C64]) -> C64 {
        let a_last = self.alpha_last.apply(alpha);
        let nu = &self.gain * beta;
        let mut ph = ZERO;
        for i in 0..nu.len() {
            ph += a_last[i] * nu[i].conj() - a_last[i].conj() * nu[i];
        }
        let a_first = self.alpha_first.apply(alpha);
        let bp = self.beta_prime(beta);
        let minus = -&bp;
        let amp = self.kernel.displaced_amplitude(bp.as_slice(), &[minus.as_slice(), a_first.as_slice()], &self.eval);
        ph.exp() * amp / std::f64::consts::PI
    }
}

impl XSampler for GaussianFeedforwardSampler {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<C64> {
        let (beta, p) = self.sample_outcome(rng)?;
        let d = self.chars.sample(rng)?;
        let num = self.outcome_char(beta, &d.alpha);
        Ok(num.conj() * self.chars.norm_sqr() / (p * d.chi.conj()))
    }
}

pub fn estimate_mean_value_gaussian_ff(psi: &ProductState, ff: &GaussianFeedforward, o: &ProductObservable, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    if ff.measured() == 0 {
        let g = ff.last().after(ff.first())?;
        return estimate_mean_value_no_ff(psi, &g, o, cfg);
    }
    let s = GaussianFeedforwardSampler::new(psi, ff, o)?;
    let var = variance_bound(cfg, o.norm_sqr(), || {
        Ok(oracle_mean_value(psi, &AdaptiveCircuit::Gaussian(ff.clone()), o, &cfg.oracle)?.purity_average)
    })?;
    run_estimate(&s, o, cfg, var, 0.0)
}

pub fn estimate_mean_value(psi: &ProductState, circuit: &AdaptiveCircuit, o: &ProductObservable, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    match circuit {
        AdaptiveCircuit::Static(g) => estimate_mean_value_no_ff(psi, g, o, cfg),
        AdaptiveCircuit::Photon(ff) => estimate_mean_value_photon_ff(psi, ff, o, cfg),
        AdaptiveCircuit::Gaussian(ff) => estimate_mean_value_gaussian_ff(psi, ff, o, cfg),
    }
}
