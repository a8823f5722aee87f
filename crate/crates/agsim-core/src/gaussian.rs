//! Gaussian unitaries in Bloch-Messiah form and their mode transformations.
//!
//! Conventions are listed in CONVENTIONS.md. In short, for G = Û Ŝ(r) V̂,
//! G† a G = P a + Q a† with P = U cosh(r) V and Q = U sinh(r) V̄, and the
//! stored pair is A = P†, B = −Qᵀ.

use crate::error::{Error, Result};
use crate::linalg::{
    self, c, check_square, conj, diag, diag_real, max_abs, max_abs_diff, tol, unitarity_deviation, ComplexMatrix,
    ComplexVector, C64, ONE, ZERO,
};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianUnitary {
    modes: usize,
    left_unitary: ComplexMatrix,
    squeeze: Vec<f64>,
    right_unitary: ComplexMatrix,
    transform_a: ComplexMatrix,
    transform_b: ComplexMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub amplitudes: ComplexVector,
}

impl Displacement {
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        if amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("displacement has non-finite entries".into()));
        }
        Ok(Self { amplitudes: ComplexVector::from_vec(amplitudes) })
    }

    pub fn zero(modes: usize) -> Self {
        Self { amplitudes: ComplexVector::zeros(modes) }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }
}

fn cosh_sinh(r: &[f64]) -> (ComplexMatrix, ComplexMatrix) {
    let ch: Vec<f64> = r.iter().map(|x| x.cosh()).collect();
    let sh: Vec<f64> = r.iter().map(|x| x.sinh()).collect();
    (diag_real(&ch), diag_real(&sh))
}

/// Checks AA† − BB† = I and ABᵀ = BAᵀ, returning the worst deviation.
pub fn symplectic_deviation(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    let n = a.nrows();
    let id = ComplexMatrix::identity(n, n);
    let d1 = max_abs_diff(&(a * a.adjoint() - b * b.adjoint()), &id);
    let d2 = max_abs_diff(&(a * b.transpose()), &(b * a.transpose()));
    d1.max(d2)
}

impl GaussianUnitary {
    /// G = Û Ŝ(r) V̂.
    pub fn compose_bloch_messiah(u: &ComplexMatrix, r: &[f64], v: &ComplexMatrix) -> Result<Self> {
        let m = check_square(u)?;
        let mv = check_square(v)?;
        if mv != m {
            return Err(Error::DimensionMismatch { expected: m, got: mv });
        }
        if r.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: r.len() });
        }
        if !linalg::all_finite(u) || !linalg::all_finite(v) || r.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite circuit parameters".into()));
        }
        let du = unitarity_deviation(u);
        let dv = unitarity_deviation(v);
        if du > tol::STRUCTURAL || dv > tol::STRUCTURAL {
            return Err(Error::NonUnitaryInput(du.max(dv)));
        }
        let squeeze: Vec<f64> = r
            .iter()
            .map(|&x| if x.abs() < tol::SQUEEZE_FLUSH { 0.0 } else { x })
            .collect();
        let (ch, sh) = cosh_sinh(&squeeze);
        let vd = v.adjoint();
        let transform_a = &vd * &ch * u.adjoint();
        let transform_b = -(&vd * &sh * u.transpose());
        Ok(Self {
            modes: m,
            left_unitary: u.clone(),
            squeeze,
            right_unitary: v.clone(),
            transform_a,
            transform_b,
        })
    }

    pub fn identity(modes: usize) -> Self {
        let id = ComplexMatrix::identity(modes, modes);
        Self::compose_bloch_messiah(&id, &vec![0.0; modes], &id).expect("identity is valid")
    }

    pub fn linear(u: &ComplexMatrix) -> Result<Self> {
        let m = check_square(u)?;
        Self::compose_bloch_messiah(u, &vec![0.0; m], &ComplexMatrix::identity(m, m))
    }

    /// Product of single-mode squeezers exp(½ r (a†² − a²)).
    pub fn squeezers(r: &[f64]) -> Self {
        let id = ComplexMatrix::identity(r.len(), r.len());
        Self::compose_bloch_messiah(&id, r, &id).expect("squeezers are valid")
    }

    /// exp(i Σ φ_j n̂_j).
    pub fn phase_shifter(phases: &[f64]) -> Self {
        let e: Vec<C64> = phases.iter().map(|&p| C64::from_polar(1.0, p)).collect();
        Self::linear(&diag(&e)).expect("phase shifter is unitary")
    }

    /// Inverts the Bloch-Messiah map. Squeezing values come out nonnegative
    /// and sorted descending.
    pub fn decompose_bloch_messiah(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<Self> {
        let m = check_square(a)?;
        let mb = check_square(b)?;
        if mb != m {
            return Err(Error::DimensionMismatch { expected: m, got: mb });
        }
        let dev = symplectic_deviation(a, b);
        if dev > tol::ROUNDTRIP * max_abs(a).max(1.0).powi(2) {
            return Err(Error::NotSymplectic(dev));
        }
        if m == 0 {
            return Ok(Self::identity(0));
        }
        let ainv = linalg::inverse(a)?;
        let gamma = -(&ainv * b);
        let gamma = (&gamma + gamma.transpose()) * c(0.5, 0.0);
        let (u, sigma) = linalg::takagi(&gamma)?;
        let mut r = Vec::with_capacity(m);
        for &s in &sigma {
            if s >= 1.0 {
                return Err(Error::Numerical(format!("squeezing tanh value {s} is not below 1")));
            }
            let x = s.atanh();
            r.push(if x < tol::SQUEEZE_FLUSH { 0.0 } else { x });
        }
        let inv_ch: Vec<f64> = r.iter().map(|x| 1.0 / x.cosh()).collect();
        let v = diag_real(&inv_ch) * u.adjoint() * a.adjoint();
        let dv = unitarity_deviation(&v);
        if dv > tol::ROUNDTRIP.sqrt() {
            return Err(Error::Numerical(format!("recovered right unitary deviates by {dv:.3e}")));
        }
        // Re-unitarize V with a polar step to remove roundoff drift.
        let svd = v.clone().svd(true, true);
        let v = svd.u.unwrap() * svd.v_t.unwrap();
        let (ch, sh) = cosh_sinh(&r);
        let vd = v.adjoint();
        Ok(Self {
            modes: m,
            transform_a: &vd * &ch * u.adjoint(),
            transform_b: -(&vd * &sh * u.transpose()),
            left_unitary: u,
            squeeze: r,
            right_unitary: v,
        })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }
    pub fn left_unitary(&self) -> &ComplexMatrix {
        &self.left_unitary
    }
    pub fn squeeze(&self) -> &[f64] {
        &self.squeeze
    }
    pub fn right_unitary(&self) -> &ComplexMatrix {
        &self.right_unitary
    }
    pub fn transform_a(&self) -> &ComplexMatrix {
        &self.transform_a
    }
    pub fn transform_b(&self) -> &ComplexMatrix {
        &self.transform_b
    }

    /// Heisenberg coefficients (P, Q) with G† a G = P a + Q a†.
    pub fn heisenberg(&self) -> (ComplexMatrix, ComplexMatrix) {
        (self.transform_a.adjoint(), -self.transform_b.transpose())
    }

    pub fn squeezer_count(&self, threshold: f64) -> usize {
        self.squeeze.iter().filter(|x| x.abs() > threshold).count()
    }

    pub fn is_linear(&self) -> bool {
        self.squeeze.iter().all(|&x| x == 0.0)
    }

    /// Overall linear-optical matrix when no squeezing is present.
    pub fn linear_matrix(&self) -> Option<ComplexMatrix> {
        if self.is_linear() {
            Some(&self.left_unitary * &self.right_unitary)
        } else {
            None
        }
    }

    /// Builds G from its Heisenberg pair.
    pub fn from_heisenberg(p: &ComplexMatrix, q: &ComplexMatrix) -> Result<Self> {
        Self::decompose_bloch_messiah(&p.adjoint(), &(-q.transpose()))
    }

    /// The product `self · first`, meaning `first` acts before `self`.
    pub fn after(&self, first: &GaussianUnitary) -> Result<Self> {
        if first.modes != self.modes {
            return Err(Error::DimensionMismatch { expected: self.modes, got: first.modes });
        }
        if self.is_linear() && first.is_linear() {
            let u = &self.left_unitary * &self.right_unitary * &first.left_unitary * &first.right_unitary;
            return Self::linear(&u);
        }
        let (p2, q2) = self.heisenberg();
        let (p1, q1) = first.heisenberg();
        let p = &p2 * &p1 + &q2 * conj(&q1);
        let q = &p2 * &q1 + &q2 * conj(&p1);
        Self::from_heisenberg(&p, &q)
    }

    pub fn inverse(&self) -> Self {
        let neg: Vec<f64> = self.squeeze.iter().map(|x| -x).collect();
        let (ch, sh) = cosh_sinh(&neg);
        let u = self.right_unitary.adjoint();
        let v = self.left_unitary.adjoint();
        let vd = v.adjoint();
        Self {
            modes: self.modes,
            transform_a: &vd * &ch * u.adjoint(),
            transform_b: -(&vd * &sh * u.transpose()),
            left_unitary: u,
            squeeze: neg,
            right_unitary: v,
        }
    }

    /// α′ with G† D(α) G = D(α′).
    pub fn push_displacement(&self, alpha: &Displacement) -> Result<Displacement> {
        if alpha.len() != self.modes {
            return Err(Error::DimensionMismatch { expected: self.modes, got: alpha.len() });
        }
        let a = &alpha.amplitudes;
        let out = &self.transform_a * a + &self.transform_b * linalg::conj_vec(a);
        Ok(Displacement { amplitudes: out })
    }
}

pub fn push_displacement(g: &GaussianUnitary, alpha: &Displacement) -> Result<Displacement> {
    g.push_displacement(alpha)
}

/// Rank-one factorization Σ_j x_j y_jᵀ.
#[derive(Debug, Clone, PartialEq)]
pub struct RankFactors {
    pub left: Vec<ComplexVector>,
    pub right: Vec<ComplexVector>,
}

impl RankFactors {
    pub fn to_matrix(&self, n: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(n, n);
        for (x, y) in self.left.iter().zip(&self.right) {
            m += x * y.transpose();
        }
        m
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }
}

/// W, Z and C for Ĝ = G0† P(φ) G0, where Ĝ† a Ĝ = (I + W) a + Z a†.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankConjugation {
    pub w: ComplexMatrix,
    pub z: ComplexMatrix,
    pub rank_bound: usize,
    pub w_factors: RankFactors,
    pub z_factors: RankFactors,
    pub c: ComplexMatrix,
}

fn phase_support(phases: &[f64]) -> Vec<usize> {
    phases.iter().enumerate().filter(|(_, p)| **p != 0.0).map(|(i, _)| i).collect()
}

pub fn conjugate_phase_shifter(g0: &GaussianUnitary, phases: &[f64]) -> Result<(GaussianUnitary, LowRankConjugation)> {
    let m = g0.modes();
    if phases.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: phases.len() });
    }
    let a = g0.transform_a();
    let b = g0.transform_b();
    let support = phase_support(phases);
    let mut wl = Vec::new();
    let mut wr = Vec::new();
    let mut zl = Vec::new();
    let mut zr = Vec::new();
    for &j in &support {
        let e = C64::from_polar(1.0, phases[j]) - ONE;
        let ebar = e.conj();
        let aj: ComplexVector = a.column(j).into_owned();
        let bj: ComplexVector = b.column(j).into_owned();
        wl.push(&aj * e);
        wr.push(linalg::conj_vec(&aj));
        wl.push(&bj * (-ebar));
        wr.push(linalg::conj_vec(&bj));
        zl.push(&aj * (-e));
        zr.push(bj.clone());
        zl.push(&bj * ebar);
        zr.push(aj.clone());
    }
    let w_factors = RankFactors { left: wl, right: wr };
    let z_factors = RankFactors { left: zl, right: zr };
    let w = w_factors.to_matrix(m);
    let z = z_factors.to_matrix(m);
    let id = ComplexMatrix::identity(m, m);
    let cm = (&id + &w) * z.transpose();
    let conj_g = if support.is_empty() {
        GaussianUnitary::identity(m)
    } else if g0.is_linear() {
        let u = g0.linear_matrix().unwrap();
        let e: Vec<C64> = phases.iter().map(|&p| C64::from_polar(1.0, p)).collect();
        GaussianUnitary::linear(&(u.adjoint() * diag(&e) * &u))?
    } else {
        GaussianUnitary::from_heisenberg(&(&id + &w), &z)?
    };
    Ok((
        conj_g,
        LowRankConjugation { w, z, rank_bound: 2 * support.len(), w_factors, z_factors, c: cm },
    ))
}

pub fn identity_matrix(m: usize) -> ComplexMatrix {
    ComplexMatrix::identity(m, m)
}

pub fn zero_matrix(m: usize) -> ComplexMatrix {
    ComplexMatrix::from_element(m, m, ZERO)
}

/// Two-mode beamsplitter on modes (i, j): U_ii = U_jj = cos θ,
/// U_ij = −e^{−iφ} sin θ, U_ji = e^{iφ} sin θ.
pub fn beamsplitter_matrix(m: usize, i: usize, j: usize, theta: f64, phi: f64) -> Result<ComplexMatrix> {
    if i >= m || j >= m || i == j {
        return Err(Error::InvalidInput(format!("beamsplitter modes ({i}, {j}) invalid for {m} modes")));
    }
    let mut u = ComplexMatrix::identity(m, m);
    let (s, co) = theta.sin_cos();
    u[(i, i)] = c(co, 0.0);
    u[(j, j)] = c(co, 0.0);
    u[(i, j)] = -C64::from_polar(s, -phi);
    u[(j, i)] = C64::from_polar(s, phi);
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{haar_unitary, numerical_rank};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gaussian(m: usize, squeezers: usize, rng: &mut ChaCha8Rng) -> GaussianUnitary {
        let u = haar_unitary(m, rng);
        let v = haar_unitary(m, rng);
        let mut r = vec![0.0; m];
        for x in r.iter_mut().take(squeezers) {
            *x = rng.random_range(0.1..0.8);
        }
        GaussianUnitary::compose_bloch_messiah(&u, &r, &v).unwrap()
    }

    #[test]
    fn identity_has_trivial_transforms() {
        let g = GaussianUnitary::identity(2);
        assert_eq!(g.transform_a(), &identity_matrix(2));
        assert_eq!(max_abs(g.transform_b()), 0.0);
    }

    #[test]
    fn single_mode_squeezer_transforms() {
        let s = 0.37;
        let g = GaussianUnitary::squeezers(&[s]);
        assert!((g.transform_a()[(0, 0)] - c(s.cosh(), 0.0)).norm() < 1e-15);
        assert!((g.transform_b()[(0, 0)] - c(-s.sinh(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn random_composition_is_symplectic_with_low_rank_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = haar_unitary(3, &mut rng);
        let v = haar_unitary(3, &mut rng);
        let g = GaussianUnitary::compose_bloch_messiah(&u, &[0.3, 0.0, 0.0], &v).unwrap();
        assert!(symplectic_deviation(g.transform_a(), g.transform_b()) < 1e-10);
        assert_eq!(numerical_rank(g.transform_b(), 1e-10), 1);
    }

    #[test]
    fn rejects_non_unitary() {
        let mut u = identity_matrix(2);
        u[(0, 1)] = c(0.1, 0.0);
        let err = GaussianUnitary::linear(&u).unwrap_err();
        assert!(matches!(err, Error::NonUnitaryInput(_)));
    }

    #[test]
    fn phase_shifter_pushes_to_conjugate_phase() {
        let phi = 0.83;
        let g = GaussianUnitary::phase_shifter(&[phi]);
        let out = g.push_displacement(&Displacement::new(vec![ONE]).unwrap()).unwrap();
        assert!((out.amplitudes[0] - C64::from_polar(1.0, -phi)).norm() < 1e-14);
    }

    #[test]
    fn push_is_real_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_gaussian(3, 2, &mut rng);
        let a = Displacement::new(vec![c(0.3, -0.2), c(0.1, 0.5), c(-0.7, 0.0)]).unwrap();
        let b = Displacement::new(vec![c(0.0, 1.0), c(0.4, 0.4), c(0.2, -0.9)]).unwrap();
        let (x, y) = (1.7, -0.4);
        let sum = Displacement { amplitudes: &a.amplitudes * c(x, 0.0) + &b.amplitudes * c(y, 0.0) };
        let lhs = g.push_displacement(&sum).unwrap().amplitudes;
        let rhs = g.push_displacement(&a).unwrap().amplitudes * c(x, 0.0)
            + g.push_displacement(&b).unwrap().amplitudes * c(y, 0.0);
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn decompose_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in 0..=3 {
            let g = random_gaussian(3, k, &mut rng);
            let h = GaussianUnitary::decompose_bloch_messiah(g.transform_a(), g.transform_b()).unwrap();
            assert!(max_abs_diff(h.transform_a(), g.transform_a()) < 1e-8);
            assert!(max_abs_diff(h.transform_b(), g.transform_b()) < 1e-8);
            assert_eq!(h.squeezer_count(1e-12), k);
            assert!(h.squeeze().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn decompose_identity_pins_product() {
        let id = identity_matrix(3);
        let g = GaussianUnitary::decompose_bloch_messiah(&id, &zero_matrix(3)).unwrap();
        assert!(g.squeeze().iter().all(|&x| x == 0.0));
        assert!(max_abs_diff(&(g.left_unitary() * g.right_unitary()), &id) < 1e-12);
    }

    #[test]
    fn decompose_single_mode_squeezer() {
        let s: f64 = 0.5;
        let a = ComplexMatrix::from_element(1, 1, c(s.cosh(), 0.0));
        let b = ComplexMatrix::from_element(1, 1, c(-s.sinh(), 0.0));
        let g = GaussianUnitary::decompose_bloch_messiah(&a, &b).unwrap();
        assert!((g.squeeze()[0] - s).abs() < 1e-12);
    }

    #[test]
    fn decompose_rejects_non_symplectic() {
        let a = identity_matrix(2) * c(2.0, 0.0);
        let err = GaussianUnitary::decompose_bloch_messiah(&a, &zero_matrix(2)).unwrap_err();
        assert!(matches!(err, Error::NotSymplectic(_)));
    }

    #[test]
    fn composition_matches_heisenberg_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g1 = random_gaussian(3, 2, &mut rng);
        let g2 = random_gaussian(3, 1, &mut rng);
        let g = g2.after(&g1).unwrap();
        // pushing through the product equals pushing through g2 then g1
        let a = Displacement::new(vec![c(0.2, 0.1), c(-0.3, 0.4), c(0.5, 0.0)]).unwrap();
        let direct = g.push_displacement(&a).unwrap();
        let staged = g1.push_displacement(&g2.push_displacement(&a).unwrap()).unwrap();
        assert!((direct.amplitudes - staged.amplitudes).norm() < 1e-10);
        let inv = g.inverse();
        let back = inv.after(&g).unwrap();
        assert!(max_abs_diff(back.transform_a(), &identity_matrix(3)) < 1e-8);
    }

    #[test]
    fn zero_phase_conjugation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g0 = random_gaussian(3, 2, &mut rng);
        let (g, lr) = conjugate_phase_shifter(&g0, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(max_abs(&lr.w), 0.0);
        assert_eq!(max_abs(&lr.z), 0.0);
        assert_eq!(g, GaussianUnitary::identity(3));
    }

    #[test]
    fn conjugation_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g0 = random_gaussian(4, 1, &mut rng);
        let phases = [0.7, 0.0, 0.0, 0.0];
        let (g, lr) = conjugate_phase_shifter(&g0, &phases).unwrap();
        let composed = g0.inverse().after(&GaussianUnitary::phase_shifter(&phases)).unwrap();
        let composed = composed.after(&g0).unwrap();
        assert!(max_abs_diff(g.transform_a(), composed.transform_a()) < 1e-8);
        assert!(max_abs_diff(g.transform_b(), composed.transform_b()) < 1e-8);
        let sw = linalg::singular_values(&lr.w);
        let sz = linalg::singular_values(&lr.z);
        assert!(sw[2] < 1e-10 && sz[2] < 1e-10);
        assert!(max_abs_diff(&lr.c, &lr.c.transpose()) < 1e-10);
        assert!(g.squeezer_count(1e-12) <= 2);
    }

    #[test]
    fn linear_conjugation_has_zero_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g0 = random_gaussian(3, 0, &mut rng);
        let (_, lr) = conjugate_phase_shifter(&g0, &[1.1, 0.0, 0.0]).unwrap();
        assert!(max_abs(&lr.z) < 1e-14);
        assert!(numerical_rank(&lr.w, 1e-10) <= 2);
    }

    #[test]
    fn beamsplitter_is_unitary() {
        let u = beamsplitter_matrix(3, 0, 2, 0.4, 1.3).unwrap();
        assert!(unitarity_deviation(&u) < 1e-14);
    }
}
