//! Bargmann kernels of Gaussian operators and the polynomial evaluation of
//! their matrix elements between product states.
//!
//! A kernel stores
//! ⟨⟨z‖Ĝ‖w⟩⟩ = scale · exp(½ z̄ᵀX z̄ + z̄ᵀY w + ½ wᵀV w + γ·z̄ + η·w)
//! with ‖w⟩⟩ = exp(w·a†)|0⟩, so ⟨n|Ĝ|m⟩ = √(n! m!) [z̄ⁿ wᵐ] of the kernel.
//!
//! Matrix elements ⟨φ|Ĝ|ψ⟩ are evaluated by splitting off exp(z̄·w), which
//! factorizes over modes, and writing the rest as a Gaussian average over
//! r = rank(S) formal variables, S = [[X, Y − I], [(Y − I)ᵀ, V]] = F Fᵀ. The
//! result is the even-degree extraction of Π_i Λ_i(p_i, q_i) with p, q affine
//! in the formal variables.

use crate::error::{Error, Result};
use crate::fock::ProductState;
use crate::gaussian::GaussianUnitary;
use crate::linalg::{self, c, conj, ComplexMatrix, ComplexVector, C64, ONE, ZERO};
use crate::poly::{factorials, SparsePoly, Weight, MAX_CAP, MAX_VARS};

/// Relative cut on Takagi values when factoring S.
pub const KERNEL_RANK_CUT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub x: ComplexMatrix,
    pub y: ComplexMatrix,
    pub v: ComplexMatrix,
    pub gamma: ComplexVector,
    pub eta: ComplexVector,
    pub scale: C64,
}

/// Principal-branch Π (1 − λ)^{-1/2}.
fn inv_sqrt_det(lams: &[C64]) -> C64 {
    lams.iter().map(|l| (ONE - l).sqrt().inv()).product()
}

impl GaussianKernel {
    pub fn modes(&self) -> usize {
        self.x.nrows()
    }

    /// Kernel of a Gaussian unitary.
    pub fn unitary(g: &GaussianUnitary) -> Result<Self> {
        let m = g.modes();
        let (p, q) = g.heisenberg();
        let pbar_inv = linalg::inverse(&conj(&p))?;
        let x = &q * &pbar_inv;
        let y = linalg::inverse(&p.adjoint())?;
        let v = -(&pbar_inv * conj(&q));
        let scale: f64 = g.squeeze().iter().map(|r| r.cosh().powf(-0.5)).product();
        Ok(Self {
            x: symmetrize(&x),
            y,
            v: symmetrize(&v),
            gamma: ComplexVector::zeros(m),
            eta: ComplexVector::zeros(m),
            scale: c(scale, 0.0),
        })
    }

    /// Kernel of G0† T G0 with T = Π_j t_j^{n̂_j}, |t_j| ≤ 1.
    pub fn conjugated(g0: &GaussianUnitary, t: &[C64]) -> Result<Self> {
        let m = g0.modes();
        if t.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: t.len() });
        }
        if t.iter().any(|z| z.norm() > 1.0 + 1e-12) {
            return Err(Error::InvalidInput("conjugated kernel needs |t| ≤ 1".into()));
        }
        let (p0, q0) = g0.heisenberg();
        let tm = linalg::diag(t);
        let p0b = conj(&p0);
        let q0b = conj(&q0);
        let mut big = ComplexMatrix::zeros(2 * m, 2 * m);
        big.view_mut((0, 0), (m, m)).copy_from(&p0);
        big.view_mut((0, m), (m, m)).copy_from(&(-(&tm * &q0)));
        big.view_mut((m, 0), (m, m)).copy_from(&(-(&tm * &q0b)));
        big.view_mut((m, m), (m, m)).copy_from(&p0b);
        let mut rhs = ComplexMatrix::zeros(2 * m, 2 * m);
        rhs.view_mut((0, 0), (m, m)).copy_from(&(-&q0));
        rhs.view_mut((m, 0), (m, m)).copy_from(&(&tm * &p0b));
        rhs.view_mut((0, m), (m, m)).copy_from(&(&tm * &p0));
        rhs.view_mut((m, m), (m, m)).copy_from(&(-&q0b));
        let sol = linalg::solve(&big, &rhs)?;
        let x = sol.view((0, 0), (m, m)).into_owned();
        let y = sol.view((0, m), (m, m)).into_owned();
        let v = sol.view((m, m), (m, m)).into_owned();
        let r = g0.squeeze();
        let u = g0.left_unitary();
        let ut = u.adjoint() * &tm * u;
        let ts = linalg::diag_real(&r.iter().map(|x| x.tanh()).collect::<Vec<_>>());
        let prod = &ts * &ut * &ts * ut.transpose();
        let lams = if r.iter().all(|&x| x == 0.0) { Vec::new() } else { linalg::complex_eigenvalues(&prod)? };
        let ch: f64 = r.iter().map(|x| 1.0 / x.cosh()).product();
        let scale = inv_sqrt_det(&lams) * ch;
        Ok(Self {
            x: symmetrize(&x),
            y,
            v: symmetrize(&v),
            gamma: ComplexVector::zeros(m),
            eta: ComplexVector::zeros(m),
            scale,
        })
    }

    /// Kernel of Ĝ · D(β).
    pub fn displaced_right(&self, beta: &ComplexVector) -> Self {
        if beta.iter().all(|b| *b == ZERO) {
            return self.clone();
        }
        let vb = &self.v * beta;
        let quad = linalg::bdot(beta, &vb) * 0.5;
        let lin = linalg::bdot(&self.eta, beta);
        let nrm = beta.norm_squared();
        Self {
            x: self.x.clone(),
            y: self.y.clone(),
            v: self.v.clone(),
            gamma: &self.gamma + &self.y * beta,
            eta: &self.eta + vb - linalg::conj_vec(beta),
            scale: self.scale * (quad + lin - 0.5 * nrm).exp(),
        }
    }

    /// Kernel of D(β) · Ĝ.
    pub fn displaced_left(&self, beta: &ComplexVector) -> Self {
        if beta.iter().all(|b| *b == ZERO) {
            return self.clone();
        }
        let bb = linalg::conj_vec(beta);
        let xb = &self.x * &bb;
        let quad = linalg::bdot(&bb, &xb) * 0.5;
        let lin = linalg::bdot(&self.gamma, &bb);
        let nrm = beta.norm_squared();
        Self {
            x: self.x.clone(),
            y: self.y.clone(),
            v: self.v.clone(),
            gamma: &self.gamma + beta - xb,
            eta: &self.eta - self.y.transpose() * &bb,
            scale: self.scale * (quad - lin - 0.5 * nrm).exp(),
        }
    }

    /// The symmetric quadratic form beyond the identity overlap.
    pub fn residual_form(&self) -> ComplexMatrix {
        let m = self.modes();
        let ym = &self.y - ComplexMatrix::identity(m, m);
        let mut s = ComplexMatrix::zeros(2 * m, 2 * m);
        s.view_mut((0, 0), (m, m)).copy_from(&self.x);
        s.view_mut((0, m), (m, m)).copy_from(&ym);
        s.view_mut((m, 0), (m, m)).copy_from(&ym.transpose());
        s.view_mut((m, m), (m, m)).copy_from(&self.v);
        s
    }

    pub fn factor(&self) -> Result<KernelFactor> {
        let f = linalg::symmetric_factor(&self.residual_form(), KERNEL_RANK_CUT)?;
        Ok(KernelFactor { f })
    }

    /// ⟨φ|Ĝ|ψ⟩.
    pub fn amplitude(&self, phi: &ProductState, psi: &ProductState) -> Result<C64> {
        let fac = self.factor()?;
        self.amplitude_with(&fac, phi, psi, &mut GfStats::default())
    }

    /// ⟨φ|Ĝ|ψ⟩ reusing a precomputed factor of the residual form. The factor
    /// depends only on X, Y, V, so displaced kernels can share it.
    pub fn amplitude_with(&self, fac: &KernelFactor, phi: &ProductState, psi: &ProductState, stats: &mut GfStats) -> Result<C64> {
        let m = self.modes();
        if phi.modes() != m || psi.modes() != m {
            return Err(Error::DimensionMismatch { expected: m, got: phi.modes().min(psi.modes()) });
        }
        let lams = mode_polys(phi, psi);
        let f = &fac.f;
        let r = f.ncols();
        if r > MAX_VARS {
            return Err(Error::RankTooLarge { rank: r, limit: MAX_VARS });
        }
        let total: usize = (0..m).map(|i| phi.degree(i) + psi.degree(i)).sum();
        if total > MAX_CAP as usize {
            return Err(Error::CapOverflow { needed: total as u128, limit: MAX_CAP as u128 });
        }
        if r == 0 {
            let mut prod = ONE;
            for (i, lam) in lams.iter().enumerate() {
                prod *= lam.eval(self.gamma[i], self.eta[i]);
            }
            return Ok(self.scale * prod);
        }
        let caps = vec![total as u8; r];
        let mut acc = SparsePoly::one(&caps)?;
        for (i, lam) in lams.iter().enumerate() {
            let pc: Vec<C64> = (0..r).map(|k| f[(i, k)]).collect();
            let qc: Vec<C64> = (0..r).map(|k| f[(m + i, k)]).collect();
            let p = SparsePoly::linear(&caps, &pc, self.gamma[i])?;
            let q = SparsePoly::linear(&caps, &qc, self.eta[i])?;
            let factor = lam.compose(&p, &q)?;
            acc = acc.mul_truncated(&factor)?;
            stats.peak_terms = stats.peak_terms.max(acc.term_count());
        }
        stats.evaluations += 1;
        stats.variables = r;
        let group: Vec<usize> = (0..r).collect();
        Ok(self.scale * acc.extract_matched_degree_sum(&group, &[], Weight::DoubleFactorialEven)?)
    }
}

impl GaussianKernel {
    /// ⟨φ|Ĝ|ψ⟩ through a quadrature evaluator built from this kernel's factor.
    pub fn amplitude_quadrature(&self, ev: &QuadratureEvaluator) -> C64 {
        self.scale * ev.average(self.gamma.as_slice(), self.eta.as_slice())
    }

    /// `self.displaced_left(beta).amplitude_quadrature(ev)` without building
    /// the displaced kernel.
    pub fn displaced_left_amplitude(&self, beta: &[C64], ev: &QuadratureEvaluator) -> C64 {
        self.displaced_amplitude(beta, &[], ev)
    }

    /// Amplitude of D(left) · Ĝ · D(rights[0]) · D(rights[1]) ⋯ through `ev`,
    /// updating only γ, η and the scale.
    pub fn displaced_amplitude(&self, left: &[C64], rights: &[&[C64]], ev: &QuadratureEvaluator) -> C64 {
        let m = left.len();
        let mut gamma = Vec::with_capacity(m);
        let mut eta = Vec::with_capacity(m);
        let (mut quad, mut lin, mut nrm) = (ZERO, ZERO, 0.0);
        for i in 0..m {
            let mut xb = ZERO;
            let mut yb = ZERO;
            for (j, lj) in left.iter().enumerate() {
                let bj = lj.conj();
                xb += self.x[(i, j)] * bj;
                yb += self.y[(j, i)] * bj;
            }
            let bi = left[i].conj();
            quad += bi * xb;
            lin += self.gamma[i] * bi;
            nrm += left[i].norm_sqr();
            gamma.push(self.gamma[i] + left[i] - xb);
            eta.push(self.eta[i] - yb);
        }
        let mut expo = quad * 0.5 - lin - 0.5 * nrm;
        for r in rights {
            let (mut quad, mut lin, mut nrm) = (ZERO, ZERO, 0.0);
            let mut eta_next = Vec::with_capacity(m);
            for i in 0..m {
                let mut vb = ZERO;
                let mut yb = ZERO;
                for j in 0..m {
                    vb += self.v[(i, j)] * r[j];
                    yb += self.y[(i, j)] * r[j];
                }
                quad += r[i] * vb;
                lin += eta[i] * r[i];
                nrm += r[i].norm_sqr();
                gamma[i] += yb;
                eta_next.push(eta[i] + vb - r[i].conj());
            }
            eta = eta_next;
            expo += quad * 0.5 + lin - 0.5 * nrm;
        }
        self.scale * expo.exp() * ev.average(&gamma, &eta)
    }
}

fn symmetrize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.transpose()) * c(0.5, 0.0)
}

#[derive(Debug, Clone)]
pub struct KernelFactor {
    pub f: ComplexMatrix,
}

impl KernelFactor {
    pub fn rank(&self) -> usize {
        self.f.ncols()
    }
}

/// Instrumentation for polynomial evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GfStats {
    pub evaluations: usize,
    pub variables: usize,
    pub peak_terms: usize,
}

/// Limit on tensor quadrature grids.
pub const QUAD_POINT_LIMIT: usize = 1 << 18;

/// Evaluates ⟨φ|Ĝ|ψ⟩ for every kernel sharing one residual factor, so only
/// γ, η and the scale may vary between calls. The Gaussian average over the
/// formal variables is a tensor Gauss-Hermite rule, exact because the
/// integrand has degree at most Σ_i (deg φ_i + deg ψ_i) in each variable.
#[derive(Debug, Clone)]
pub struct QuadratureEvaluator {
    modes: usize,
    /// Modes whose Λ is not constant, with row-major coefficients.
    active: Vec<(usize, usize, Vec<C64>)>,
    constant: C64,
    base: Vec<C64>,
    weights: Vec<f64>,
}

impl QuadratureEvaluator {
    pub fn new(fac: &KernelFactor, phi: &ProductState, psi: &ProductState) -> Result<Self> {
        let m = phi.modes();
        if psi.modes() != m || fac.f.nrows() != 2 * m {
            return Err(Error::DimensionMismatch { expected: m, got: psi.modes() });
        }
        let r = fac.rank();
        let degree: usize = (0..m).map(|i| phi.degree(i) + psi.degree(i)).sum();
        let per = degree / 2 + 1;
        let npts = (0..r).try_fold(1usize, |acc, _| acc.checked_mul(per).filter(|&x| x <= QUAD_POINT_LIMIT));
        let npts = npts.ok_or(Error::CapOverflow { needed: (per as u128).saturating_pow(r as u32), limit: QUAD_POINT_LIMIT as u128 })?;
        let (x, w) = linalg::gauss_hermite(per);
        let mut base = Vec::with_capacity(npts * 2 * m);
        let mut weights = Vec::with_capacity(npts);
        let mut idx = vec![0usize; r];
        for _ in 0..npts {
            let mut wt = 1.0;
            for &d in &idx {
                wt *= w[d];
            }
            for row in 0..2 * m {
                let mut s = ZERO;
                for (k, &d) in idx.iter().enumerate() {
                    s += fac.f[(row, k)] * x[d];
                }
                base.push(s);
            }
            weights.push(wt);
            for d in idx.iter_mut() {
                *d += 1;
                if *d < per {
                    break;
                }
                *d = 0;
            }
        }
        let mut constant = ONE;
        let mut active = Vec::new();
        for (i, lam) in mode_polys(phi, psi).into_iter().enumerate() {
            let nk = lam.coeffs[0].len();
            if lam.coeffs.len() == 1 && nk == 1 {
                constant *= lam.coeffs[0][0];
            } else {
                active.push((i, nk, lam.coeffs.into_iter().flatten().collect()));
            }
        }
        Ok(Self { modes: m, active, constant, base, weights })
    }

    pub fn points(&self) -> usize {
        self.weights.len()
    }

    /// E_y Π_i Λ_i(p_i + γ_i, q_i + η_i).
    pub fn average(&self, gamma: &[C64], eta: &[C64]) -> C64 {
        let m = self.modes;
        let mut total = ZERO;
        for (pt, &w) in self.base.chunks_exact(2 * m).zip(&self.weights) {
            let mut prod = c(w, 0.0);
            for (i, nk, coeffs) in &self.active {
                let (p, q) = (pt[*i] + gamma[*i], pt[m + i] + eta[*i]);
                let mut acc = ZERO;
                for row in coeffs.rchunks_exact(*nk) {
                    let mut r = ZERO;
                    for &cjk in row.iter().rev() {
                        r = r * q + cjk;
                    }
                    acc = acc * p + r;
                }
                prod *= acc;
            }
            total += prod;
        }
        total * self.constant
    }
}

/// Λ(p, q) = Σ_{j,k} c_jk p^j q^k for one mode, where
/// c_jk = Σ_l b̄_{j+l} a_{k+l} √((j+l)!(k+l)!) / (l! j! k!).
#[derive(Debug, Clone)]
pub struct ModePoly {
    pub coeffs: Vec<Vec<C64>>,
}

impl ModePoly {
    pub fn new(bra: &[C64], ket: &[C64]) -> Self {
        let nb = bra.iter().rposition(|z| *z != ZERO).map_or(0, |d| d + 1);
        let nk = ket.iter().rposition(|z| *z != ZERO).map_or(0, |d| d + 1);
        if nb == 0 || nk == 0 {
            return Self { coeffs: vec![vec![ZERO]] };
        }
        let f = factorials(nb.max(nk));
        let mut coeffs = vec![vec![ZERO; nk]; nb];
        for (j, row) in coeffs.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                let mut s = ZERO;
                let mut l = 0;
                while j + l < nb && k + l < nk {
                    let w = (f[j + l] * f[k + l]).sqrt() / (f[l] * f[j] * f[k]);
                    s += bra[j + l].conj() * ket[k + l] * w;
                    l += 1;
                }
                *cell = s;
            }
        }
        Self { coeffs }
    }

    pub fn eval(&self, p: C64, q: C64) -> C64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, row| acc * p + row.iter().rev().fold(ZERO, |r, &cjk| r * q + cjk))
    }

    pub fn compose(&self, p: &SparsePoly, q: &SparsePoly) -> Result<SparsePoly> {
        let caps = p.caps().to_vec();
        let nj = self.coeffs.len();
        let nk = self.coeffs[0].len();
        let mut qpows = Vec::with_capacity(nk);
        qpows.push(SparsePoly::one(&caps)?);
        for k in 1..nk {
            let next = qpows[k - 1].mul_truncated(q)?;
            qpows.push(next);
        }
        let mut out = SparsePoly::zero(&caps)?;
        let mut ppow = SparsePoly::one(&caps)?;
        for j in 0..nj {
            let mut inner = SparsePoly::zero(&caps)?;
            for (k, qk) in qpows.iter().enumerate() {
                let cjk = self.coeffs[j][k];
                if cjk != ZERO {
                    inner = inner.add(&qk.scale(cjk))?;
                }
            }
            out = out.add(&ppow.mul_truncated(&inner)?)?;
            if j + 1 < nj {
                ppow = ppow.mul_truncated(p)?;
            }
        }
        Ok(out)
    }
}

pub fn mode_polys(phi: &ProductState, psi: &ProductState) -> Vec<ModePoly> {
    (0..phi.modes()).map(|i| ModePoly::new(phi.mode(i), psi.mode(i))).collect()
}
