//! Dense complex linear algebra helpers shared by the circuit and kernel code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;

/// Central tolerance table.
pub mod tol {
    /// Structural identities (unitarity, symplectic conditions, rank cuts).
    pub const STRUCTURAL: f64 = 1e-10;
    /// Decomposition roundtrips.
    pub const ROUNDTRIP: f64 = 1e-8;
    /// Fast path against the dense oracle.
    pub const ORACLE: f64 = 1e-9;
    /// Squeezing magnitudes below this are flushed to zero.
    pub const SQUEEZE_FLUSH: f64 = 1e-12;
}

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn max_abs(m: &ComplexMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn check_square(m: &ComplexMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare(m.nrows(), m.ncols()));
    }
    Ok(m.nrows())
}

pub fn all_finite(m: &ComplexMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// ‖M†M − I‖_max.
pub fn unitarity_deviation(m: &ComplexMatrix) -> f64 {
    let n = m.ncols();
    let prod = m.adjoint() * m;
    max_abs_diff(&prod, &ComplexMatrix::identity(n, n))
}

pub fn conj(m: &ComplexMatrix) -> ComplexMatrix {
    m.map(|z| z.conj())
}

pub fn conj_vec(v: &ComplexVector) -> ComplexVector {
    v.map(|z| z.conj())
}

pub fn diag(entries: &[C64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&ComplexVector::from_column_slice(entries))
}

pub fn diag_real(entries: &[f64]) -> ComplexMatrix {
    let v: Vec<C64> = entries.iter().map(|&x| c(x, 0.0)).collect();
    diag(&v)
}

/// Bilinear (non-conjugating) dot product.
pub fn bdot(a: &ComplexVector, b: &ComplexVector) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random unitary from the QR decomposition of a Ginibre matrix.
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(n, n, |_, _| complex_normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    q
}

pub fn random_complex_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Singular values in descending order.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn numerical_rank(m: &ComplexMatrix, abs_tol: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > abs_tol).count()
}

/// Rank-revealing factorization m = L Rᵀ from the SVD, dropping singular
/// values at or below `cut`.
pub fn low_rank_factor(m: &ComplexMatrix, cut: f64) -> (ComplexMatrix, ComplexMatrix) {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > cut)
        .collect();
    let mut left = ComplexMatrix::zeros(rows, keep.len());
    let mut right = ComplexMatrix::zeros(cols, keep.len());
    for (col, &k) in keep.iter().enumerate() {
        let s = svd.singular_values[k];
        for i in 0..rows {
            left[(i, col)] = u[(i, k)] * s;
        }
        for j in 0..cols {
            // v_t row k is v_k†, so (v_k†)ᵀ = conj(v_k).
            right[(j, col)] = v_t[(k, j)];
        }
    }
    (left, right)
}

/// Takagi factorization of a complex symmetric matrix, m = U diag(σ) Uᵀ with
/// U unitary and σ sorted descending.
///
/// Works through the real symmetric embedding [[Re m, Im m], [Im m, −Re m]],
/// whose eigenvalues come in ± pairs. Eigenvectors for the positive half give
/// the Takagi vectors directly; the null space is completed by Gram-Schmidt.
pub fn takagi(m: &ComplexMatrix) -> Result<(ComplexMatrix, Vec<f64>)> {
    let n = check_square(m)?;
    let asym = max_abs_diff(m, &m.transpose());
    let scale = max_abs(m).max(1.0);
    if asym > 1e-8 * scale {
        return Err(Error::InvalidInput(format!(
            "takagi needs a symmetric matrix (asymmetry {asym:.3e})"
        )));
    }
    let sym = (m + m.transpose()) * c(0.5, 0.0);
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = sym[(i, j)];
            h[(i, j)] = z.re;
            h[(i, n + j)] = z.im;
            h[(n + i, j)] = z.im;
            h[(n + i, n + j)] = -z.re;
        }
    }
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let cut = 1e-13 * scale;
    let mut vecs: Vec<ComplexVector> = Vec::with_capacity(n);
    let mut sig: Vec<f64> = Vec::with_capacity(n);
    for &k in order.iter().take(n) {
        let lam = eig.eigenvalues[k];
        if lam <= cut {
            break;
        }
        let col = eig.eigenvectors.column(k);
        let u = ComplexVector::from_fn(n, |i, _| c(col[i], col[n + i]));
        vecs.push(u);
        sig.push(lam);
    }
    // Complete with an orthonormal basis of the complement.
    let mut e = 0;
    while vecs.len() < n {
        let mut cand = ComplexVector::zeros(n);
        cand[e] = ONE;
        e += 1;
        for v in &vecs {
            let proj = v.dotc(&cand);
            cand -= v * proj;
        }
        for v in &vecs {
            let proj = v.dotc(&cand);
            cand -= v * proj;
        }
        let nrm = cand.norm();
        if nrm > 1e-8 {
            vecs.push(cand / c(nrm, 0.0));
            sig.push(0.0);
        }
        if e > n && vecs.len() < n {
            return Err(Error::Numerical("takagi completion failed".into()));
        }
    }
    let mut u = ComplexMatrix::zeros(n, n);
    for (j, v) in vecs.iter().enumerate() {
        u.set_column(j, v);
    }
    Ok((u, sig))
}

/// Symmetric rank factorization m = F Fᵀ keeping Takagi values above
/// `rel_cut · max(1, σ_max)`.
pub fn symmetric_factor(m: &ComplexMatrix, rel_cut: f64) -> Result<ComplexMatrix> {
    let n = check_square(m)?;
    let (u, sig) = takagi(m)?;
    let smax = sig.first().copied().unwrap_or(0.0);
    let cut = rel_cut * smax.max(1.0);
    let keep: Vec<usize> = (0..n).filter(|&k| sig[k] > cut).collect();
    let mut f = ComplexMatrix::zeros(n, keep.len());
    for (col, &k) in keep.iter().enumerate() {
        let s = sig[k].sqrt();
        for i in 0..n {
            f[(i, col)] = u[(i, k)] * s;
        }
    }
    Ok(f)
}

/// Eigenvalues of a general complex matrix via the Schur form.
pub fn complex_eigenvalues(m: &ComplexMatrix) -> Result<Vec<C64>> {
    check_square(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = m.clone().schur();
    let (_, t) = schur.unpack();
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

pub fn solve(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))
}

pub fn inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular matrix".into()))
}

/// Gauss-Hermite nodes and weights for the standard normal density
/// (Golub-Welsch). Weights sum to 1; exact for polynomials of degree < 2n.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}
