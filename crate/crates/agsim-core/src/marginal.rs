//! Photon-number marginals from phase-shifter generating functions.
//!
//! G̃(k) = ⟨φ|G0† e^{−ikθ n̂·ω} G0|ψ⟩ is evaluated for every k and inverted by
//! a discrete Fourier transform. Linear-optical G0 goes through the low-rank
//! permanent polynomial; squeezed G0 goes through the conjugated Bargmann
//! kernel.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{PhotonPattern, ProductState};
use crate::gaussian::GaussianUnitary;
use crate::kernel::{GaussianKernel, GfStats, KernelFactor, ModePoly};
use crate::linalg::{self, ComplexMatrix, ComplexVector, C64, ONE, ZERO};
use crate::poly::{box_size, SparsePoly, Weight, MAX_CAP, MAX_VARS};

/// Default prefix-length guard on the squeezed path.
pub const GAUSSIAN_LEN_GUARD: usize = 2;
/// Default prefix-length guard on the linear path.
pub const LINEAR_LEN_GUARD: usize = 4;
/// Default per-mode resolution on the squeezed path.
pub const GAUSSIAN_DEFAULT_RESOLUTION: usize = 40;
/// Limit on (K+1)^L table sizes.
pub const TABLE_LIMIT: usize = 1 << 20;
/// Coefficient box limit for the linear and low-mode polynomials.
pub const POLY_BOX_LIMIT: u128 = 1 << 26;
/// Allowed gap between a parent marginal and the sum of its children.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Mixed-radix frequencies over the first `len` modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyVector {
    modes: usize,
    len: usize,
    resolution: usize,
    omega: Vec<usize>,
}

impl FrequencyVector {
    pub fn new(modes: usize, len: usize, resolution: usize) -> Result<Self> {
        if len > modes {
            return Err(Error::DimensionMismatch { expected: modes, got: len });
        }
        let base = resolution + 1;
        let mut omega = vec![0; modes];
        let mut w: usize = 1;
        for o in omega.iter_mut().take(len) {
            *o = w;
            w = w
                .checked_mul(base)
                .filter(|&x| x <= TABLE_LIMIT)
                .ok_or(Error::TooLarge { what: "frequency table", size: w.saturating_mul(base), limit: TABLE_LIMIT })?;
        }
        Ok(Self { modes, len, resolution, omega })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn omega_max(&self) -> usize {
        self.table_size() - 1
    }

    pub fn table_size(&self) -> usize {
        (self.resolution + 1).pow(self.len as u32)
    }

    pub fn theta(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.table_size() as f64
    }

    /// Ω = Σ ω_i n_i.
    pub fn index(&self, prefix: &[usize]) -> Result<usize> {
        if prefix.len() != self.len {
            return Err(Error::DimensionMismatch { expected: self.len, got: prefix.len() });
        }
        let mut w = 0;
        for (i, &n) in prefix.iter().enumerate() {
            if n > self.resolution {
                return Err(Error::CutoffExceeded { value: n, cutoff: self.resolution });
            }
            w += self.omega[i] * n;
        }
        Ok(w)
    }

    pub fn prefix(&self, mut idx: usize) -> PhotonPattern {
        let base = self.resolution + 1;
        (0..self.len)
            .map(|_| {
                let d = idx % base;
                idx /= base;
                d
            })
            .collect()
    }

    /// t_j = e^{−ikθω_j} on every mode.
    pub fn phases(&self, k: usize) -> Vec<C64> {
        let th = self.theta();
        let n = self.table_size();
        self.omega
            .iter()
            .map(|&w| if w == 0 { ONE } else { C64::from_polar(1.0, -th * ((k * w) % n) as f64) })
            .collect()
    }
}

/// Which evaluator produces G̃(k).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GfPath {
    Auto,
    Linear,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalConfig {
    pub resolution: Option<usize>,
    pub path: GfPath,
    pub force: bool,
}

impl Default for MarginalConfig {
    fn default() -> Self {
        Self { resolution: None, path: GfPath::Auto, force: false }
    }
}

impl MarginalConfig {
    pub fn forced() -> Self {
        Self { force: true, ..Self::default() }
    }

    pub(crate) fn resolve_path(&self, g0: &GaussianUnitary) -> Result<GfPath> {
        match self.path {
            GfPath::Auto if g0.is_linear() => Ok(GfPath::Linear),
            GfPath::Auto => Ok(GfPath::Gaussian),
            GfPath::Linear if !g0.is_linear() => Err(Error::InvalidInput("linear path needs a squeeze-free circuit".into())),
            p => Ok(p),
        }
    }

    /// Per-mode resolution K. The linear path is alias free once K reaches the
    /// smaller total photon number of the two states.
    pub fn resolve_resolution(&self, g0: &GaussianUnitary, phi: &ProductState, psi: &ProductState) -> usize {
        if let Some(k) = self.resolution {
            return k;
        }
        let nmax = phi.cutoff().max(psi.cutoff());
        if g0.is_linear() {
            nmax.max(phi.total_degree().min(psi.total_degree()))
        } else {
            nmax.max(GAUSSIAN_DEFAULT_RESOLUTION)
        }
    }

    pub(crate) fn check_guard(&self, path: GfPath, len: usize) -> Result<()> {
        let limit = if path == GfPath::Linear { LINEAR_LEN_GUARD } else { GAUSSIAN_LEN_GUARD };
        if len > limit && !self.force {
            return Err(Error::GuardExceeded(format!("prefix length {len} exceeds the default guard {limit}; pass force to lift it")));
        }
        Ok(())
    }
}

/// ⟨φ|V̂|ψ⟩ for V = U†TU with U the linear matrix of G0 and T = diag(t).
///
/// With W = V − I = Σ_s u_s v_sᵀ over the modes where t_s ≠ 1, the amplitude is
/// Σ_k Π k_s! [xᵏyᵏ] Π_i Λ_i(p_i, q_i), p_i = Σ x_s u_s[i], q_i = Σ y_s v_s[i].
pub fn generating_function_linear(u: &ComplexMatrix, t: &[C64], phi: &ProductState, psi: &ProductState) -> Result<C64> {
    generating_function_linear_with(u, t, phi, psi, &mut GfStats::default())
}

pub fn generating_function_linear_with(
    u: &ComplexMatrix,
    t: &[C64],
    phi: &ProductState,
    psi: &ProductState,
    stats: &mut GfStats,
) -> Result<C64> {
    let m = linalg::check_square(u)?;
    if t.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: t.len() });
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for (s, &ts) in t.iter().enumerate() {
        if ts != ONE {
            let row: ComplexVector = u.row(s).transpose();
            left.push(linalg::conj_vec(&row) * (ts - ONE));
            right.push(row);
        }
    }
    lowrank_amplitude(&left, &right, phi, psi, stats)
}

/// ⟨φ|Γ(I + Σ_s u_s v_sᵀ)|ψ⟩ for product states.
pub fn lowrank_amplitude(
    left: &[ComplexVector],
    right: &[ComplexVector],
    phi: &ProductState,
    psi: &ProductState,
    stats: &mut GfStats,
) -> Result<C64> {
    let m = phi.modes();
    if psi.modes() != m {
        return Err(Error::DimensionMismatch { expected: m, got: psi.modes() });
    }
    if left.len() != right.len() {
        return Err(Error::DimensionMismatch { expected: left.len(), got: right.len() });
    }
    let lams: Vec<ModePoly> = (0..m).map(|i| ModePoly::new(phi.mode(i), psi.mode(i))).collect();
    let rank = left.len();
    stats.evaluations += 1;
    stats.variables = 2 * rank;
    if rank == 0 {
        return Ok(lams.iter().map(|l| l.eval(ZERO, ZERO)).product());
    }
    if 2 * rank > MAX_VARS {
        return Err(Error::RankTooLarge { rank, limit: MAX_VARS / 2 });
    }
    let dphi = phi.total_degree();
    let dpsi = psi.total_degree();
    let needed = dphi.max(dpsi);
    if needed > MAX_CAP as usize {
        return Err(Error::CapOverflow { needed: needed as u128, limit: MAX_CAP as u128 });
    }
    let mut caps = vec![dphi as u8; rank];
    caps.extend(std::iter::repeat_n(dpsi as u8, rank));
    let size = box_size(&caps);
    if size > POLY_BOX_LIMIT {
        return Err(Error::CapOverflow { needed: size, limit: POLY_BOX_LIMIT });
    }
    let mut acc = SparsePoly::one(&caps)?;
    for (i, lam) in lams.iter().enumerate() {
        let mut pc = vec![ZERO; 2 * rank];
        let mut qc = vec![ZERO; 2 * rank];
        for s in 0..rank {
            pc[s] = left[s][i];
            qc[rank + s] = right[s][i];
        }
        let p = SparsePoly::linear(&caps, &pc, ZERO)?;
        let q = SparsePoly::linear(&caps, &qc, ZERO)?;
        acc = acc.mul_truncated(&lam.compose(&p, &q)?)?;
        stats.peak_terms = stats.peak_terms.max(acc.term_count());
    }
    let ga: Vec<usize> = (0..rank).collect();
    let gb: Vec<usize> = (rank..2 * rank).collect();
    acc.extract_matched_degree_sum(&ga, &gb, Weight::Factorial)
}

/// ⟨φ|G0† T G0|ψ⟩ through the conjugated Bargmann kernel.
pub fn generating_function_gaussian(g0: &GaussianUnitary, t: &[C64], phi: &ProductState, psi: &ProductState) -> Result<C64> {
    GaussianKernel::conjugated(g0, t)?.amplitude(phi, psi)
}

/// ⟨φ ⊗ vac|Û|ψ⟩ where φ lives on the first L modes.
///
/// Û|ψ⟩ = Π_i Σ_m a⁽ⁱ⁾_m (Σ_j U_ji a_j†)^m / √m! |0⟩, and only creation
/// operators on the first L modes survive the vacuum projection.
pub fn amplitude_low_mode(u: &ComplexMatrix, psi: &ProductState, phi: &ProductState) -> Result<C64> {
    let m = linalg::check_square(u)?;
    if psi.modes() != m {
        return Err(Error::DimensionMismatch { expected: m, got: psi.modes() });
    }
    let l = phi.modes();
    if l > m {
        return Err(Error::DimensionMismatch { expected: m, got: l });
    }
    if l == 0 {
        return Ok(psi.coeffs().iter().map(|c| c[0]).product());
    }
    if l > MAX_VARS {
        return Err(Error::RankTooLarge { rank: l, limit: MAX_VARS });
    }
    let caps: Vec<u8> = (0..l).map(|j| phi.degree(j).min(MAX_CAP as usize) as u8).collect();
    if (0..l).any(|j| phi.degree(j) > MAX_CAP as usize) {
        return Err(Error::CapOverflow { needed: phi.cutoff() as u128, limit: MAX_CAP as u128 });
    }
    let size = box_size(&caps);
    if size > POLY_BOX_LIMIT {
        return Err(Error::CapOverflow { needed: size, limit: POLY_BOX_LIMIT });
    }
    let fact = crate::poly::factorials(psi.cutoff().max(phi.cutoff()) + 1);
    let mut acc = SparsePoly::one(&caps)?;
    for i in 0..m {
        let lin: Vec<C64> = (0..l).map(|j| u[(j, i)]).collect();
        let ell = SparsePoly::linear(&caps, &lin, ZERO)?;
        let mut power = SparsePoly::one(&caps)?;
        let mut factor = SparsePoly::zero(&caps)?;
        let coeffs = psi.mode(i);
        let deg = psi.degree(i);
        for (mm, &a) in coeffs.iter().enumerate().take(deg + 1) {
            if mm > 0 {
                power = power.mul_truncated(&ell)?;
            }
            if a != ZERO {
                factor = factor.add(&power.scale(a / fact[mm].sqrt()))?;
            }
        }
        acc = acc.mul_truncated(&factor)?;
    }
    let mut total = ZERO;
    for (exps, coeff) in acc.terms() {
        let mut w = coeff;
        for (j, &n) in exps.iter().enumerate() {
            let n = n as usize;
            w *= phi.mode(j)[n].conj() * fact[n].sqrt();
        }
        total += w;
    }
    Ok(total)
}

/// G̃(k) for k = 0..Ω_max.
#[derive(Debug, Clone)]
pub struct GeneratingFunctionTable {
    pub freq: FrequencyVector,
    pub path: GfPath,
    pub values: Vec<C64>,
    pub stats: GfStats,
}

impl GeneratingFunctionTable {
    pub fn compute(
        g0: &GaussianUnitary,
        phi: &ProductState,
        psi: &ProductState,
        len: usize,
        config: &MarginalConfig,
    ) -> Result<Self> {
        let m = g0.modes();
        if phi.modes() != m || psi.modes() != m {
            return Err(Error::DimensionMismatch { expected: m, got: phi.modes().min(psi.modes()) });
        }
        let path = config.resolve_path(g0)?;
        config.check_guard(path, len)?;
        let freq = FrequencyVector::new(m, len, config.resolve_resolution(g0, phi, psi))?;
        Self::compute_with(g0, phi, psi, freq, path)
    }

    pub fn compute_with(
        g0: &GaussianUnitary,
        phi: &ProductState,
        psi: &ProductState,
        freq: FrequencyVector,
        path: GfPath,
    ) -> Result<Self> {
        let u = if path == GfPath::Linear {
            Some(g0.linear_matrix().ok_or_else(|| Error::InvalidInput("linear path needs a squeeze-free circuit".into()))?)
        } else {
            None
        };
        let evals: Vec<(C64, GfStats)> = (0..freq.table_size())
            .into_par_iter()
            .map(|k| {
                let t = freq.phases(k);
                let mut st = GfStats::default();
                let v = match &u {
                    Some(u) => generating_function_linear_with(u, &t, phi, psi, &mut st)?,
                    None => {
                        let kern = GaussianKernel::conjugated(g0, &t)?;
                        let fac = kern.factor()?;
                        kern.amplitude_with(&fac, phi, psi, &mut st)?
                    }
                };
                Ok((v, st))
            })
            .collect::<Result<_>>()?;
        let mut stats = GfStats::default();
        let mut values = Vec::with_capacity(evals.len());
        for (v, st) in evals {
            values.push(v);
            stats.evaluations += st.evaluations;
            stats.variables = stats.variables.max(st.variables);
            stats.peak_terms = stats.peak_terms.max(st.peak_terms);
        }
        Ok(Self { freq, path: if path == GfPath::Auto { GfPath::Gaussian } else { path }, values, stats })
    }

    /// q(prefix) = (1/(Ω_max+1)) Σ_k G̃(k) e^{ikθΩ}.
    pub fn marginal(&self, prefix: &[usize]) -> Result<C64> {
        let w = self.freq.index(prefix)?;
        Ok(invert_at(&self.values, w))
    }

    /// Every marginal, indexed by Ω.
    pub fn invert_all(&self) -> Vec<C64> {
        let n = self.values.len();
        let roots = roots_of_unity(n);
        (0..n)
            .into_par_iter()
            .map(|w| {
                let mut s = ZERO;
                for (k, v) in self.values.iter().enumerate() {
                    s += v * roots[(k * w) % n];
                }
                s / n as f64
            })
            .collect()
    }
}

fn roots_of_unity(n: usize) -> Vec<C64> {
    let th = 2.0 * std::f64::consts::PI / n as f64;
    (0..n).map(|j| C64::from_polar(1.0, th * j as f64)).collect()
}

pub(crate) fn invert_at(values: &[C64], w: usize) -> C64 {
    let n = values.len();
    let th = 2.0 * std::f64::consts::PI / n as f64;
    let mut s = ZERO;
    for (k, v) in values.iter().enumerate() {
        s += v * C64::from_polar(1.0, th * ((k * w) % n) as f64);
    }
    s / n as f64
}

/// q(n₁..n_L) = ⟨φ|G0†(|n⟩⟨n| ⊗ 1)G0|ψ⟩ on the first L modes.
pub fn marginal_probability(
    g0: &GaussianUnitary,
    psi: &ProductState,
    phi: &ProductState,
    prefix: &[usize],
    config: &MarginalConfig,
) -> Result<C64> {
    let k = config.resolve_resolution(g0, phi, psi);
    if let Some(&bad) = prefix.iter().find(|&&n| n > k) {
        return Err(Error::CutoffExceeded { value: bad, cutoff: k });
    }
    GeneratingFunctionTable::compute(g0, phi, psi, prefix.len(), config)?.marginal(prefix)
}

/// Conjugated kernels G0† T(k) G0 with their factors, one per k. Displacing
/// the bra or ket leaves X, Y, V alone, so the factors are reused.
#[derive(Debug, Clone)]
pub struct PhaseKernelTable {
    pub freq: FrequencyVector,
    kernels: Vec<(GaussianKernel, KernelFactor)>,
}

impl PhaseKernelTable {
    pub fn new(g0: &GaussianUnitary, freq: FrequencyVector) -> Result<Self> {
        if freq.modes() != g0.modes() {
            return Err(Error::DimensionMismatch { expected: g0.modes(), got: freq.modes() });
        }
        let kernels = (0..freq.table_size())
            .into_par_iter()
            .map(|k| {
                let kern = GaussianKernel::conjugated(g0, &freq.phases(k))?;
                let fac = kern.factor()?;
                Ok((kern, fac))
            })
            .collect::<Result<_>>()?;
        Ok(Self { freq, kernels })
    }

    /// ⟨φ|D(β) G0† Π_prefix G0|ψ⟩.
    pub fn marginal_left_displaced(&self, phi: &ProductState, beta: &ComplexVector, psi: &ProductState, prefix: &[usize]) -> Result<C64> {
        let w = self.freq.index(prefix)?;
        let mut st = GfStats::default();
        let vals = self
            .kernels
            .iter()
            .map(|(k, f)| k.displaced_left(beta).amplitude_with(f, phi, psi, &mut st))
            .collect::<Result<Vec<_>>>()?;
        Ok(invert_at(&vals, w))
    }
}

/// Exact marginal tables for every prefix length up to L, used for
/// sequential conditional sampling.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    pub resolution: usize,
    pub norm: f64,
    tables: Vec<Vec<f64>>,
    freqs: Vec<FrequencyVector>,
}

impl ChainSampler {
    pub fn new(g0: &GaussianUnitary, psi: &ProductState, len: usize, config: &MarginalConfig) -> Result<Self> {
        let path = config.resolve_path(g0)?;
        config.check_guard(path, len)?;
        let k = config.resolve_resolution(g0, psi, psi);
        let mut tables = Vec::with_capacity(len);
        let mut freqs = Vec::with_capacity(len);
        for l in 1..=len {
            let freq = FrequencyVector::new(g0.modes(), l, k)?;
            let gf = GeneratingFunctionTable::compute_with(g0, psi, psi, freq.clone(), path)?;
            tables.push(gf.invert_all().into_iter().map(|z| z.re).collect());
            freqs.push(freq);
        }
        let norm = psi.norm().powi(2);
        let s = Self { resolution: k, norm, tables, freqs };
        s.check_consistency()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    /// p(n₁..n_l) for l = prefix length.
    pub fn probability(&self, prefix: &[usize]) -> Result<f64> {
        if prefix.is_empty() {
            return Ok(self.norm);
        }
        let l = prefix.len();
        if l > self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: l });
        }
        Ok(self.tables[l - 1][self.freqs[l - 1].index(prefix)?])
    }

    fn check_consistency(&self) -> Result<()> {
        for l in 0..self.len() {
            let parents = if l == 0 { 1 } else { self.tables[l - 1].len() };
            for pidx in 0..parents {
                let prefix = if l == 0 { Vec::new() } else { self.freqs[l - 1].prefix(pidx) };
                let parent = self.probability(&prefix)?;
                let mut children = 0.0;
                let mut child = prefix.clone();
                child.push(0);
                for n in 0..=self.resolution {
                    child[l] = n;
                    children += self.probability(&child)?;
                }
                if (children - parent).abs() > NORMALIZATION_TOL {
                    return Err(Error::NormalizationFailure { parent, children });
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PhotonPattern> {
        let mut prefix = Vec::with_capacity(self.len());
        for l in 0..self.len() {
            let parent = self.probability(&prefix)?;
            let mut weights = Vec::with_capacity(self.resolution + 1);
            let mut child = prefix.clone();
            child.push(0);
            for n in 0..=self.resolution {
                child[l] = n;
                weights.push(self.probability(&child)?.max(0.0));
            }
            let total: f64 = weights.iter().sum();
            if (total - parent).abs() > NORMALIZATION_TOL || total <= 0.0 {
                return Err(Error::NormalizationFailure { parent, children: total });
            }
            let mut u = rng.random::<f64>() * total;
            let mut pick = self.resolution;
            for (n, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = n;
                    break;
                }
                u -= w;
            }
            while weights[pick] == 0.0 && pick > 0 {
                pick -= 1;
            }
            prefix.push(pick);
        }
        Ok(prefix)
    }
}

pub fn chain_rule_sample<R: Rng + ?Sized>(
    g0: &GaussianUnitary,
    psi: &ProductState,
    len: usize,
    config: &MarginalConfig,
    rng: &mut R,
) -> Result<PhotonPattern> {
    ChainSampler::new(g0, psi, len, config)?.sample(rng)
}
