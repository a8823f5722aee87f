//! Dense truncated-Fock-space simulator used as ground truth.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::gaussian::GaussianUnitary;
use crate::linalg::{c, check_square, ComplexMatrix, C64, ONE, ZERO};
use crate::poly::factorials;

/// Guard on the dense Hilbert-space dimension.
pub const DENSE_DIM_LIMIT: usize = 1 << 22;
/// Extra levels used when exponentiating a squeezing generator.
pub const SQUEEZE_PADDING: usize = 48;

pub type PhotonPattern = Vec<usize>;

/// Per-mode Fock coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductState {
    cutoff: usize,
    coeffs: Vec<Vec<C64>>,
}

impl ProductState {
    /// Each mode vector may be shorter than `cutoff + 1` and is zero padded.
    pub fn new(cutoff: usize, coeffs: Vec<Vec<C64>>) -> Result<Self> {
        let mut out = Vec::with_capacity(coeffs.len());
        for (i, mut v) in coeffs.into_iter().enumerate() {
            if v.len() > cutoff + 1 {
                if v[cutoff + 1..].iter().any(|z| *z != ZERO) {
                    return Err(Error::CutoffExceeded { value: v.len() - 1, cutoff });
                }
                v.truncate(cutoff + 1);
            }
            if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidInput(format!("mode {i} has non-finite coefficients")));
            }
            v.resize(cutoff + 1, ZERO);
            out.push(v);
        }
        Ok(Self { cutoff, coeffs: out })
    }

    pub fn vacuum(modes: usize, cutoff: usize) -> Self {
        Self::fock(&vec![0; modes], cutoff).expect("vacuum fits any cutoff")
    }

    pub fn fock(counts: &[usize], cutoff: usize) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(counts.len());
        for &n in counts {
            if n > cutoff {
                return Err(Error::CutoffExceeded { value: n, cutoff });
            }
            let mut v = vec![ZERO; cutoff + 1];
            v[n] = ONE;
            coeffs.push(v);
        }
        Ok(Self { cutoff, coeffs })
    }

    pub fn modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn mode(&self, i: usize) -> &[C64] {
        &self.coeffs[i]
    }

    pub fn coeffs(&self) -> &[Vec<C64>] {
        &self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .product()
    }

    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for v in out.coeffs.iter_mut() {
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::InvalidInput("cannot normalize a zero mode vector".into()));
            }
            for z in v.iter_mut() {
                *z /= n;
            }
        }
        Ok(out)
    }

    /// Highest photon number with a nonzero coefficient on mode i.
    pub fn degree(&self, i: usize) -> usize {
        self.coeffs[i].iter().rposition(|z| *z != ZERO).unwrap_or(0)
    }

    pub fn total_degree(&self) -> usize {
        (0..self.modes()).map(|i| self.degree(i)).sum()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.modes() != other.modes() {
            return Err(Error::DimensionMismatch { expected: self.modes(), got: other.modes() });
        }
        let mut prod = ONE;
        for (a, b) in self.coeffs.iter().zip(&other.coeffs) {
            let s: C64 = a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum();
            prod *= s;
        }
        Ok(prod)
    }

    pub fn to_dense(&self, cutoff: usize) -> Result<DenseState> {
        let m = self.modes();
        for i in 0..m {
            if self.degree(i) > cutoff {
                return Err(Error::CutoffExceeded { value: self.degree(i), cutoff });
            }
        }
        let mut st = DenseState::zeros(m, cutoff)?;
        let dim = st.amps.len();
        let d = cutoff + 1;
        for idx in 0..dim {
            let mut rem = idx;
            let mut amp = ONE;
            for i in 0..m {
                let n = rem % d;
                rem /= d;
                amp *= if n < self.coeffs[i].len() { self.coeffs[i][n] } else { ZERO };
                if amp == ZERO {
                    break;
                }
            }
            st.amps[idx] = amp;
        }
        Ok(st)
    }
}

/// Amplitudes indexed little-endian in mode order: mode 0 varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    modes: usize,
    cutoff: usize,
    pub amps: Vec<C64>,
}

fn dense_dim(modes: usize, cutoff: usize) -> Result<usize> {
    let mut dim: usize = 1;
    for _ in 0..modes {
        dim = dim.checked_mul(cutoff + 1).filter(|&d| d <= DENSE_DIM_LIMIT).ok_or(Error::TooLarge {
            what: "dense dimension",
            size: (cutoff + 1).saturating_pow(modes as u32),
            limit: DENSE_DIM_LIMIT,
        })?;
    }
    Ok(dim)
}

impl DenseState {
    pub fn zeros(modes: usize, cutoff: usize) -> Result<Self> {
        let dim = dense_dim(modes, cutoff)?;
        Ok(Self { modes, cutoff, amps: vec![ZERO; dim] })
    }

    pub fn basis(counts: &[usize], cutoff: usize) -> Result<Self> {
        let mut s = Self::zeros(counts.len(), cutoff)?;
        let idx = s.index(counts)?;
        s.amps[idx] = ONE;
        Ok(s)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn index(&self, counts: &[usize]) -> Result<usize> {
        if counts.len() != self.modes {
            return Err(Error::DimensionMismatch { expected: self.modes, got: counts.len() });
        }
        let d = self.cutoff + 1;
        let mut idx = 0;
        for &n in counts.iter().rev() {
            if n > self.cutoff {
                return Err(Error::CutoffExceeded { value: n, cutoff: self.cutoff });
            }
            idx = idx * d + n;
        }
        Ok(idx)
    }

    pub fn pattern(&self, mut idx: usize) -> PhotonPattern {
        let d = self.cutoff + 1;
        (0..self.modes)
            .map(|_| {
                let n = idx % d;
                idx /= d;
                n
            })
            .collect()
    }

    pub fn amplitude(&self, counts: &[usize]) -> Result<C64> {
        Ok(self.amps[self.index(counts)?])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum()
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.modes != other.modes || self.cutoff != other.cutoff {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum())
    }

    fn stride(&self, mode: usize) -> usize {
        (self.cutoff + 1).pow(mode as u32)
    }

    /// Applies a single-mode matrix whose entries are ⟨m|O|n⟩ for m, n ≤ cutoff.
    pub fn apply_single_mode(&mut self, mode: usize, op: &ComplexMatrix) {
        let d = self.cutoff + 1;
        let st = self.stride(mode);
        let mut col = vec![ZERO; d];
        let block = st * d;
        for base in (0..self.amps.len()).step_by(block) {
            for off in 0..st {
                let start = base + off;
                for (n, cval) in col.iter_mut().enumerate() {
                    *cval = self.amps[start + n * st];
                }
                for m in 0..d {
                    let mut s = ZERO;
                    for (n, cval) in col.iter().enumerate() {
                        s += op[(m, n)] * cval;
                    }
                    self.amps[start + m * st] = s;
                }
            }
        }
    }

    /// Projects mode `mode` onto |n⟩ (keeps it in the register).
    pub fn project(&mut self, mode: usize, n: usize) {
        let d = self.cutoff + 1;
        let st = self.stride(mode);
        for (idx, a) in self.amps.iter_mut().enumerate() {
            if (idx / st) % d != n {
                *a = ZERO;
            }
        }
    }

    /// Applies the linear-optical unitary on modes (p, q) with 2×2 matrix t,
    /// a_p† → t00 a_p† + t10 a_q†, a_q† → t01 a_p† + t11 a_q†.
    pub fn apply_two_mode(&mut self, p: usize, q: usize, t: &[[C64; 2]; 2]) {
        let d = self.cutoff + 1;
        let transfer = two_mode_transfer(t, self.cutoff);
        let sp = self.stride(p);
        let sq = self.stride(q);
        let mut out = vec![ZERO; self.amps.len()];
        for (idx, &a) in self.amps.iter().enumerate() {
            if a == ZERO {
                continue;
            }
            let np = (idx / sp) % d;
            let nq = (idx / sq) % d;
            let rest = idx - np * sp - nq * sq;
            for &(mp, mq, coef) in &transfer[np * d + nq] {
                out[rest + mp * sp + mq * sq] += coef * a;
            }
        }
        self.amps = out;
    }

    /// Û for a linear-optical matrix, via Givens rotations.
    pub fn apply_linear(&mut self, u: &ComplexMatrix) -> Result<()> {
        let n = check_square(u)?;
        if n != self.modes {
            return Err(Error::DimensionMismatch { expected: self.modes, got: n });
        }
        let (rots, phases) = givens(u);
        let d = self.cutoff + 1;
        // diagonal part first
        for (mode, ph) in phases.iter().enumerate() {
            if (*ph - ONE).norm() == 0.0 {
                continue;
            }
            let st = self.stride(mode);
            let pw: Vec<C64> = (0..d).map(|k| ph.powu(k as u32)).collect();
            for (idx, a) in self.amps.iter_mut().enumerate() {
                *a *= pw[(idx / st) % d];
            }
        }
        for (p, q, g) in rots.iter().rev() {
            let gd = [[g[0][0].conj(), g[1][0].conj()], [g[0][1].conj(), g[1][1].conj()]];
            self.apply_two_mode(*p, *q, &gd);
        }
        Ok(())
    }

    pub fn apply_squeezer(&mut self, mode: usize, r: f64) {
        if r == 0.0 {
            return;
        }
        let s = squeezer_matrix(r, self.cutoff);
        self.apply_single_mode(mode, &s);
    }

    pub fn apply_displacement(&mut self, mode: usize, alpha: C64) {
        if alpha == ZERO {
            return;
        }
        let dmat = displacement_matrix(alpha, self.cutoff + 1, self.cutoff + 1);
        self.apply_single_mode(mode, &dmat);
    }

    /// Ĝ = Û Ŝ V̂ applied in place; returns the lost squared norm.
    pub fn apply_gaussian(&mut self, g: &GaussianUnitary) -> Result<f64> {
        if g.modes() != self.modes {
            return Err(Error::DimensionMismatch { expected: self.modes, got: g.modes() });
        }
        let before = self.norm_sqr();
        self.apply_linear(g.right_unitary())?;
        for (i, &r) in g.squeeze().iter().enumerate() {
            self.apply_squeezer(i, r);
        }
        self.apply_linear(g.left_unitary())?;
        Ok((before - self.norm_sqr()).max(0.0))
    }

    /// Applies Π_i O_i on the given modes.
    pub fn apply_product(&mut self, support: &[usize], ops: &[ComplexMatrix]) {
        for (&m, op) in support.iter().zip(ops) {
            self.apply_single_mode(m, op);
        }
    }

    /// Tr[ρ_A²] of the normalized reduced state on `support`.
    pub fn reduced_purity(&self, support: &[usize]) -> f64 {
        let d = self.cutoff + 1;
        let norm = self.norm_sqr();
        if norm == 0.0 {
            return 0.0;
        }
        let mut in_a = vec![false; self.modes];
        for &s in support {
            in_a[s] = true;
        }
        // group amplitudes by the complement index, keyed by the support index
        let mut rows: HashMap<usize, Vec<(usize, C64)>> = HashMap::new();
        let a_index_of = |idx: usize| -> (usize, usize) {
            let mut rem = idx;
            let (mut ai, mut bi, mut amul, mut bmul) = (0, 0, 1, 1);
            for &a_mode in in_a.iter() {
                let n = rem % d;
                rem /= d;
                if a_mode {
                    ai += n * amul;
                    amul *= d;
                } else {
                    bi += n * bmul;
                    bmul *= d;
                }
            }
            (ai, bi)
        };
        for (idx, &a) in self.amps.iter().enumerate() {
            if a != ZERO {
                let (ai, bi) = a_index_of(idx);
                rows.entry(bi).or_default().push((ai, a));
            }
        }
        // ρ_A = Σ_b ψ_b ψ_b†, Tr ρ² = Σ_{b,b'} |⟨ψ_b|ψ_b'⟩|²
        let mut keys: Vec<usize> = rows.keys().copied().collect();
        keys.sort_unstable();
        let dense: Vec<HashMap<usize, C64>> = keys.iter().map(|k| rows[k].iter().copied().collect()).collect();
        let mut tr = 0.0;
        for i in 0..dense.len() {
            for j in 0..dense.len() {
                let (small, big) = if dense[i].len() <= dense[j].len() { (&dense[i], &dense[j]) } else { (&dense[j], &dense[i]) };
                let mut s = ZERO;
                for (k, v) in small {
                    if let Some(w) = big.get(k) {
                        s += v.conj() * w;
                    }
                }
                tr += s.norm_sqr();
            }
        }
        tr / (norm * norm)
    }
}

/// Output coefficients of a two-mode linear optic for every input pair.
fn two_mode_transfer(t: &[[C64; 2]; 2], cutoff: usize) -> Vec<Vec<(usize, usize, C64)>> {
    let d = cutoff + 1;
    let f = factorials(2 * cutoff + 1);
    let sqf: Vec<f64> = f.iter().map(|x| x.sqrt()).collect();
    let binom = |n: usize, k: usize| f[n] / (f[k] * f[n - k]);
    let pw = |z: C64, k: usize| -> C64 { if k == 0 { ONE } else { z.powu(k as u32) } };
    let mut out = vec![Vec::new(); d * d];
    for np in 0..d {
        for nq in 0..d {
            let total = np + nq;
            let mut acc = vec![ZERO; total + 1];
            for k in 0..=np {
                let a = binom(np, k) * pw(t[0][0], k) * pw(t[1][0], np - k);
                for l in 0..=nq {
                    let b = binom(nq, l) * pw(t[0][1], l) * pw(t[1][1], nq - l);
                    acc[k + l] += a * b;
                }
            }
            let norm = 1.0 / (sqf[np] * sqf[nq]);
            for (mp, v) in acc.into_iter().enumerate() {
                let mq = total - mp;
                if mp <= cutoff && mq <= cutoff && v != ZERO {
                    out[np * d + nq].push((mp, mq, v * norm * sqf[mp] * sqf[mq]));
                }
            }
        }
    }
    out
}

/// Givens factorization: returns rotations G_k on adjacent rows and the
/// diagonal D with G_K ⋯ G_1 U = D.
#[allow(clippy::type_complexity)]
fn givens(u: &ComplexMatrix) -> (Vec<(usize, usize, [[C64; 2]; 2])>, Vec<C64>) {
    let n = u.nrows();
    let mut w = u.clone();
    let mut rots = Vec::new();
    for j in 0..n {
        for i in ((j + 1)..n).rev() {
            let x = w[(i - 1, j)];
            let y = w[(i, j)];
            if y.norm() == 0.0 {
                continue;
            }
            let r = (x.norm_sqr() + y.norm_sqr()).sqrt();
            let g = [[x.conj() / r, y.conj() / r], [-y / r, x / r]];
            for k in 0..n {
                let a = w[(i - 1, k)];
                let b = w[(i, k)];
                w[(i - 1, k)] = g[0][0] * a + g[0][1] * b;
                w[(i, k)] = g[1][0] * a + g[1][1] * b;
            }
            rots.push((i - 1, i, g));
        }
    }
    let phases = (0..n).map(|i| w[(i, i)]).collect();
    (rots, phases)
}

/// ⟨m|D(α)|n⟩ for m < rows, n < cols.
pub fn displacement_matrix(alpha: C64, rows: usize, cols: usize) -> ComplexMatrix {
    let mut d = ComplexMatrix::zeros(rows, cols);
    if rows == 0 || cols == 0 {
        return d;
    }
    let e = (-0.5 * alpha.norm_sqr()).exp();
    // ⟨m|α⟩ = e^{−|α|²/2} α^m / √m!
    let mut v = c(e, 0.0);
    d[(0, 0)] = v;
    for m in 1..rows {
        v = v * alpha / (m as f64).sqrt();
        d[(m, 0)] = v;
    }
    let ab = alpha.conj();
    for n in 0..cols - 1 {
        let s = 1.0 / ((n + 1) as f64).sqrt();
        for m in 0..rows {
            let up = if m > 0 { d[(m - 1, n)] * (m as f64).sqrt() } else { ZERO };
            d[(m, n + 1)] = (up - ab * d[(m, n)]) * s;
        }
    }
    d
}

/// ⟨m|S(r)|n⟩ for m, n ≤ cutoff, from the exponential of the generator on a
/// padded space.
pub fn squeezer_matrix(r: f64, cutoff: usize) -> ComplexMatrix {
    let dim = cutoff + 1 + SQUEEZE_PADDING + (8.0 * r.abs() * (cutoff as f64 + 4.0)).ceil() as usize;
    let mut gen = DMatrix::<f64>::zeros(dim, dim);
    for n in 0..dim - 2 {
        let v = 0.5 * r * (((n + 1) * (n + 2)) as f64).sqrt();
        gen[(n + 2, n)] = v;
        gen[(n, n + 2)] = -v;
    }
    let s = gen.exp();
    ComplexMatrix::from_fn(cutoff + 1, cutoff + 1, |i, j| c(s[(i, j)], 0.0))
}

/// Photon count needed to hold Û|ψ⟩ exactly for a linear optic.
fn linear_cutoff(states: &[&ProductState]) -> usize {
    states.iter().map(|s| s.total_degree()).max().unwrap_or(0)
}

pub fn apply_gaussian_dense(g: &GaussianUnitary, psi: &DenseState) -> Result<(DenseState, f64)> {
    let mut out = psi.clone();
    let leak = out.apply_gaussian(g)?;
    Ok((out, leak))
}

/// ⟨φ|Ĝ|ψ⟩, exact: both sides are moved through the linear parts, where the
/// photon number is conserved, and the squeezers enter as matrix elements.
pub fn oracle_amplitude(phi: &ProductState, g: &GaussianUnitary, psi: &ProductState) -> Result<C64> {
    let m = g.modes();
    if phi.modes() != m || psi.modes() != m {
        return Err(Error::DimensionMismatch { expected: m, got: phi.modes().min(psi.modes()) });
    }
    let cut = linear_cutoff(&[phi, psi]);
    let mut left = phi.to_dense(cut)?;
    left.apply_linear(&g.left_unitary().adjoint())?;
    let mut right = psi.to_dense(cut)?;
    right.apply_linear(g.right_unitary())?;
    for (i, &r) in g.squeeze().iter().enumerate() {
        right.apply_squeezer(i, r);
    }
    left.inner(&right)
}

/// ⟨φ|G†(|n⟩⟨n| ⊗ 1)G|ψ⟩ with the prefix on the first modes, and the larger
/// of the two truncation leakages.
pub fn oracle_marginal(
    phi: &ProductState,
    g: &GaussianUnitary,
    prefix: &[usize],
    psi: &ProductState,
    working_cutoff: Option<usize>,
) -> Result<(C64, f64)> {
    let table = oracle_marginal_table(phi, g, prefix.len(), psi, working_cutoff)?;
    let value = table.values.get(prefix).copied().unwrap_or(ZERO);
    Ok((value, table.leakage))
}

#[derive(Debug, Clone)]
pub struct OracleMarginalTable {
    pub values: HashMap<PhotonPattern, C64>,
    pub leakage: f64,
    pub cutoff: usize,
}

/// Every prefix marginal over the first `len` modes.
pub fn oracle_marginal_table(
    phi: &ProductState,
    g: &GaussianUnitary,
    len: usize,
    psi: &ProductState,
    working_cutoff: Option<usize>,
) -> Result<OracleMarginalTable> {
    let m = g.modes();
    if len > m {
        return Err(Error::DimensionMismatch { expected: m, got: len });
    }
    let cut = match working_cutoff {
        Some(cw) => cw.max(phi.cutoff()).max(psi.cutoff()),
        None if g.is_linear() => linear_cutoff(&[phi, psi]),
        None => return Err(Error::InvalidInput("squeezed circuits need an explicit working cutoff".into())),
    };
    let (a, la) = apply_gaussian_dense(g, &phi.to_dense(cut)?)?;
    let (b, lb) = apply_gaussian_dense(g, &psi.to_dense(cut)?)?;
    let mut values: HashMap<PhotonPattern, C64> = HashMap::new();
    for idx in 0..a.dim() {
        let v = a.amps[idx].conj() * b.amps[idx];
        let pat = a.pattern(idx);
        *values.entry(pat[..len].to_vec()).or_insert(ZERO) += v;
    }
    Ok(OracleMarginalTable { values, leakage: la.max(lb), cutoff: cut })
}

/// Result of comparing the direct operator product against the matching
/// expansion on one probe vector.
#[derive(Debug, Clone)]
pub struct AntinormalCheck {
    pub direct: DenseState,
    pub expansion: DenseState,
    pub terms: usize,
}

/// Realizes A_i = a_i and B_j† = Σ_k C_kj a_k† on N modes, so that
/// [A_i, B_j†] = C_ij, and evaluates Π_i (A_i + B_i†) on `probe` both
/// directly and through the Ferrers-graph matching expansion.
pub fn oracle_expand_antinormal(cm: &ComplexMatrix, probe: &DenseState) -> Result<AntinormalCheck> {
    let n = check_square(cm)?;
    if n > 6 {
        return Err(Error::TooLarge { what: "antinormal expansion size", size: n, limit: 6 });
    }
    if probe.modes() != n {
        return Err(Error::DimensionMismatch { expected: n, got: probe.modes() });
    }
    let cut = probe.cutoff();
    let ann = lowering(cut);
    let cre = ann.adjoint();
    let apply_a = |i: usize, s: &DenseState| {
        let mut o = s.clone();
        o.apply_single_mode(i, &ann);
        o
    };
    let apply_b = |j: usize, s: &DenseState| {
        let mut acc = DenseState::zeros(n, cut).unwrap();
        for k in 0..n {
            let coef = cm[(k, j)];
            if coef == ZERO {
                continue;
            }
            let mut o = s.clone();
            o.apply_single_mode(k, &cre);
            for (x, y) in acc.amps.iter_mut().zip(&o.amps) {
                *x += coef * y;
            }
        }
        acc
    };
    let add = |x: &mut DenseState, y: &DenseState, w: C64| {
        for (a, b) in x.amps.iter_mut().zip(&y.amps) {
            *a += w * b;
        }
    };
    // Direct product: the rightmost factor (i = N) acts first.
    let mut direct = probe.clone();
    for i in (0..n).rev() {
        let mut next = apply_a(i, &direct);
        add(&mut next, &apply_b(i, &direct), ONE);
        direct = next;
    }
    // Expansion: choose Y (A factors), then matchings (i, j) with j < i,
    // i ∈ Y, j ∉ Y; each matched pair contributes −C_ij.
    let mut expansion = DenseState::zeros(n, cut)?;
    let mut terms = 0usize;
    for ymask in 0u32..(1 << n) {
        let ys: Vec<usize> = (0..n).filter(|&i| ymask >> i & 1 == 1).collect();
        let yc: Vec<usize> = (0..n).filter(|&i| ymask >> i & 1 == 0).collect();
        let mut matchings: Vec<(Vec<(usize, usize)>, C64)> = Vec::new();
        enumerate_matchings(&ys, &yc, 0, &mut vec![false; n], &mut Vec::new(), cm, &mut matchings);
        for (pairs, weight) in matchings {
            terms += 1;
            let used: Vec<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
            let mut v = probe.clone();
            // (Π A_i)(Π B_j†): the B† factors act first.
            for &j in yc.iter().rev() {
                if !used.contains(&j) {
                    v = apply_b(j, &v);
                }
            }
            for &i in ys.iter().rev() {
                if !used.contains(&i) {
                    v = apply_a(i, &v);
                }
            }
            add(&mut expansion, &v, weight);
        }
    }
    Ok(AntinormalCheck { direct, expansion, terms })
}

fn enumerate_matchings(
    ys: &[usize],
    yc: &[usize],
    pos: usize,
    used_b: &mut Vec<bool>,
    cur: &mut Vec<(usize, usize)>,
    cm: &ComplexMatrix,
    out: &mut Vec<(Vec<(usize, usize)>, C64)>,
) {
    if pos == ys.len() {
        let w: C64 = cur.iter().map(|&(i, j)| -cm[(i, j)]).product();
        out.push((cur.clone(), w));
        return;
    }
    let i = ys[pos];
    enumerate_matchings(ys, yc, pos + 1, used_b, cur, cm, out);
    for &j in yc {
        if j < i && !used_b[j] {
            used_b[j] = true;
            cur.push((i, j));
            enumerate_matchings(ys, yc, pos + 1, used_b, cur, cm, out);
            cur.pop();
            used_b[j] = false;
        }
    }
}

/// Truncated annihilation operator.
pub fn lowering(cutoff: usize) -> ComplexMatrix {
    let mut a = ComplexMatrix::zeros(cutoff + 1, cutoff + 1);
    for n in 1..=cutoff {
        a[(n - 1, n)] = c((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn number_operator(cutoff: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(cutoff + 1, cutoff + 1, |i, j| if i == j { c(i as f64, 0.0) } else { ZERO })
}

pub fn projector(k: usize, cutoff: usize) -> Result<ComplexMatrix> {
    if k > cutoff {
        return Err(Error::CutoffExceeded { value: k, cutoff });
    }
    let mut p = ComplexMatrix::zeros(cutoff + 1, cutoff + 1);
    p[(k, k)] = ONE;
    Ok(p)
}

/// (a + a†)/√2 on the truncated space.
pub fn quadrature_x(cutoff: usize) -> ComplexMatrix {
    let a = lowering(cutoff);
    (&a + a.adjoint()) * c(std::f64::consts::FRAC_1_SQRT_2, 0.0)
}

/// Product observable O_A ⊗ 1 with one operator per supported mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductObservable {
    support: Vec<usize>,
    ops: Vec<ComplexMatrix>,
}

impl ProductObservable {
    pub fn new(support: Vec<usize>, ops: Vec<ComplexMatrix>) -> Result<Self> {
        if support.len() != ops.len() {
            return Err(Error::DimensionMismatch { expected: support.len(), got: ops.len() });
        }
        let mut seen = support.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != support.len() {
            return Err(Error::InvalidInput("observable support has repeated modes".into()));
        }
        for (&m, op) in support.iter().zip(&ops) {
            check_square(op)?;
            if op.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::InvalidInput(format!("observable on mode {m} is not finite")));
            }
            if op.iter().all(|z| *z == ZERO) {
                return Err(Error::ZeroNormObservable(m));
            }
        }
        Ok(Self { support, ops })
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn ops(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    /// ‖O_i‖₂² = Tr O_i† O_i.
    pub fn mode_norms_sqr(&self) -> Vec<f64> {
        self.ops.iter().map(|o| o.iter().map(|z| z.norm_sqr()).sum()).collect()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.mode_norms_sqr().iter().product()
    }

    pub fn is_hermitian(&self) -> bool {
        self.ops.iter().all(|o| crate::linalg::max_abs_diff(o, &o.adjoint()) < 1e-12)
    }

    /// Operator matrix padded or cut to a common cutoff.
    pub fn op_at_cutoff(&self, k: usize, cutoff: usize) -> ComplexMatrix {
        let o = &self.ops[k];
        ComplexMatrix::from_fn(cutoff + 1, cutoff + 1, |i, j| {
            if i < o.nrows() && j < o.ncols() { o[(i, j)] } else { ZERO }
        })
    }

    /// ⟨ψ|O|ψ⟩ on a dense state (unnormalized).
    pub fn expectation_dense(&self, psi: &DenseState) -> C64 {
        let mut o = psi.clone();
        for (k, &m) in self.support.iter().enumerate() {
            o.apply_single_mode(m, &self.op_at_cutoff(k, psi.cutoff()));
        }
        psi.inner(&o).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::beamsplitter_matrix;
    use crate::linalg::{haar_unitary, max_abs_diff, random_complex_matrix};
    use crate::matfun::permanent_ryser;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_leaves_state_unchanged() {
        let psi = ProductState::new(2, vec![vec![c(0.6, 0.0), c(0.0, 0.8)], vec![ONE]]).unwrap();
        let d = psi.to_dense(3).unwrap();
        let (out, leak) = apply_gaussian_dense(&GaussianUnitary::identity(2), &d).unwrap();
        assert_eq!(leak, 0.0);
        assert!(out.amps.iter().zip(&d.amps).all(|(a, b)| (a - b).norm() < 1e-15));
    }

    #[test]
    fn hong_ou_mandel_dip() {
        let u = beamsplitter_matrix(2, 0, 1, std::f64::consts::FRAC_PI_4, 0.0).unwrap();
        let g = GaussianUnitary::linear(&u).unwrap();
        let (out, leak) = apply_gaussian_dense(&g, &DenseState::basis(&[1, 1], 2).unwrap()).unwrap();
        assert!(leak < 1e-15);
        assert!(out.amplitude(&[1, 1]).unwrap().norm() < 1e-15);
        assert!((out.amplitude(&[2, 0]).unwrap().norm_sqr() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn squeezed_vacuum_amplitudes() {
        let r: f64 = 0.4;
        let g = GaussianUnitary::squeezers(&[r]);
        let (out, _) = apply_gaussian_dense(&g, &DenseState::basis(&[0], 30).unwrap()).unwrap();
        let f = factorials(30);
        for k in 0..=30 {
            let expect = if k % 2 == 1 {
                0.0
            } else {
                r.cosh().powf(-0.5) * r.tanh().powf(k as f64 / 2.0) * f[k].sqrt() / (2f64.powi(k as i32 / 2) * f[k / 2])
            };
            assert!((out.amps[k] - c(expect, 0.0)).norm() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn dense_linear_matches_permanents() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = haar_unitary(3, &mut rng);
        let g = GaussianUnitary::linear(&u).unwrap();
        let inputs = [[1usize, 1, 0], [2, 0, 1], [1, 1, 2], [0, 0, 3]];
        let f = factorials(8);
        for inp in inputs {
            let (out, leak) = apply_gaussian_dense(&g, &DenseState::basis(&inp, 4).unwrap()).unwrap();
            assert!(leak < 1e-12);
            for idx in 0..out.dim() {
                let outp = out.pattern(idx);
                if outp.iter().sum::<usize>() != inp.iter().sum::<usize>() {
                    assert!(out.amps[idx].norm() < 1e-13);
                    continue;
                }
                let rows: Vec<usize> = outp.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect();
                let cols: Vec<usize> = inp.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect();
                let sub = ComplexMatrix::from_fn(rows.len(), cols.len(), |a, b| u[(rows[a], cols[b])]);
                let norm: f64 = outp.iter().chain(inp.iter()).map(|&k| f[k]).product::<f64>().sqrt();
                let expect = permanent_ryser(&sub).unwrap() / norm;
                assert!((out.amps[idx] - expect).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_dense_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let u = haar_unitary(4, &mut rng);
        let psi = ProductState::new(2, (0..4).map(|_| random_complex_matrix(3, 1, &mut rng).column(0).iter().copied().collect()).collect()).unwrap();
        let mut d = psi.to_dense(8).unwrap();
        let before = d.norm_sqr();
        d.apply_linear(&u).unwrap();
        assert!((d.norm_sqr() - before).abs() < 1e-10 * before);
    }

    #[test]
    fn displacement_matrix_is_unitary_in_the_low_block() {
        let alpha = c(0.4, -0.3);
        let big = displacement_matrix(alpha, 60, 60);
        let prod = big.adjoint() * &big;
        for i in 0..10 {
            for j in 0..10 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - c(e, 0.0)).norm() < 1e-12);
            }
        }
        // D(α)D(−α) = 1
        let inv = displacement_matrix(-alpha, 60, 60);
        assert!(max_abs_diff(&(&big * &inv).view((0, 0), (8, 8)).into_owned(), &ComplexMatrix::identity(8, 8)) < 1e-12);
    }

    #[test]
    fn oracle_amplitude_trivial_cases() {
        let psi = ProductState::new(2, vec![vec![c(0.6, 0.0), c(0.0, 0.8)], vec![ONE]]).unwrap();
        let g = GaussianUnitary::identity(2);
        assert!((oracle_amplitude(&psi, &g, &psi).unwrap() - ONE).norm() < 1e-14);
        let other = ProductState::fock(&[2, 0], 2).unwrap();
        assert!(oracle_amplitude(&other, &g, &psi).unwrap().norm() < 1e-15);
    }

    #[test]
    fn oracle_marginal_trivial_cases() {
        let g = GaussianUnitary::identity(2);
        let vac = ProductState::vacuum(2, 2);
        assert!((oracle_marginal(&vac, &g, &[0], &vac, None).unwrap().0 - ONE).norm() < 1e-15);
        let one = ProductState::fock(&[1, 0], 2).unwrap();
        assert_eq!(oracle_marginal(&one, &g, &[0], &one, None).unwrap().0, ZERO);
    }

    #[test]
    fn marginal_completeness_with_squeezing() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = GaussianUnitary::compose_bloch_messiah(&haar_unitary(2, &mut rng), &[0.3, 0.1], &haar_unitary(2, &mut rng)).unwrap();
        let psi = ProductState::new(1, vec![vec![c(0.8, 0.0), c(0.6, 0.0)], vec![ONE]]).unwrap();
        let t = oracle_marginal_table(&psi, &g, 1, &psi, Some(40)).unwrap();
        assert!(t.leakage < 1e-12, "leakage {}", t.leakage);
        let sum: C64 = t.values.values().sum();
        assert!((sum - ONE).norm() < 1e-9);
    }

    #[test]
    fn antinormal_small_cases() {
        let cm1 = ComplexMatrix::from_element(1, 1, c(0.5, 0.2));
        let probe = DenseState::basis(&[1], 3).unwrap();
        let r = oracle_expand_antinormal(&cm1, &probe).unwrap();
        assert_eq!(r.terms, 2);
        let cm2 = ComplexMatrix::from_row_slice(2, 2, &[c(0.1, 0.0), c(0.2, 0.0), c(0.3, 0.0), c(0.4, 0.0)]);
        let probe = DenseState::basis(&[1, 0], 4).unwrap();
        let r = oracle_expand_antinormal(&cm2, &probe).unwrap();
        assert_eq!(r.terms, 5);
        let diff = r.direct.amps.iter().zip(&r.expansion.amps).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn antinormal_random_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cm = random_complex_matrix(3, 3, &mut rng);
        let probe = ProductState::new(1, vec![vec![c(0.3, 0.1), ONE], vec![ONE, c(0.0, 0.5)], vec![ONE]]).unwrap();
        let r = oracle_expand_antinormal(&cm, &probe.to_dense(5).unwrap()).unwrap();
        let diff = r.direct.amps.iter().zip(&r.expansion.amps).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }
}
