//! Brute-force mean values of adaptive circuits on the truncated Fock space.
//!
//! Photon-number branches are enumerated exhaustively. Heterodyne-type
//! outcomes are integrated with a tensor Gauss-Hermite rule whose weights are
//! renormalized to sum to one.

use crate::circuit::{AdaptiveCircuit, GaussianFeedforward, PhotonFeedforward};
use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, squeezer_matrix, DenseState, PhotonPattern, ProductObservable, ProductState};
use crate::gaussian::GaussianUnitary;
use crate::linalg::{c, ComplexMatrix, C64, ZERO};

/// Branches lighter than this are skipped.
const BRANCH_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Working photon cutoff per mode; defaults to the total photon number of
    /// ψ for squeeze-free circuits and to 24 otherwise.
    pub cutoff: Option<usize>,
    /// Gauss-Hermite nodes per real dimension.
    pub quadrature_nodes: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { cutoff: None, quadrature_nodes: 48 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleMean {
    pub value: C64,
    /// Σ_branches p · Tr[ρ̂_A²] for the normalized branch states.
    pub purity_average: f64,
    /// Photon-number outcomes with their probabilities.
    pub branches: Vec<(PhotonPattern, f64)>,
    /// Norm lost to the working cutoff; outcome-weighted for Gaussian measurements.
    pub leakage: f64,
    /// Change of the quadrature value when the node count drops by eight.
    pub quadrature_error: f64,
    /// Σ of the raw quadrature weights minus one.
    pub weight_defect: f64,
    pub cutoff: usize,
}

/// Dense Ĝ with squeezer matrices built once.
struct DenseGaussian<'a> {
    g: &'a GaussianUnitary,
    squeezers: Vec<Option<ComplexMatrix>>,
}

impl<'a> DenseGaussian<'a> {
    fn new(g: &'a GaussianUnitary, cutoff: usize) -> Self {
        let squeezers = g.squeeze().iter().map(|&r| (r != 0.0).then(|| squeezer_matrix(r, cutoff))).collect();
        Self { g, squeezers }
    }

    fn apply(&self, d: &mut DenseState) -> Result<f64> {
        let before = d.norm_sqr();
        d.apply_linear(self.g.right_unitary())?;
        for (i, s) in self.squeezers.iter().enumerate() {
            if let Some(s) = s {
                d.apply_single_mode(i, s);
            }
        }
        d.apply_linear(self.g.left_unitary())?;
        Ok((before - d.norm_sqr()).max(0.0))
    }
}

fn all_linear(circuit: &AdaptiveCircuit) -> bool {
    match circuit {
        AdaptiveCircuit::Static(g) => g.is_linear(),
        AdaptiveCircuit::Photon(p) => p.first().is_linear() && p.layers().values().all(|g| g.is_linear()),
        AdaptiveCircuit::Gaussian(_) => false,
    }
}

pub fn oracle_mean_value(psi: &ProductState, circuit: &AdaptiveCircuit, o: &ProductObservable, cfg: &OracleConfig) -> Result<OracleMean> {
    if psi.modes() != circuit.modes() {
        return Err(Error::DimensionMismatch { expected: circuit.modes(), got: psi.modes() });
    }
    circuit.check_readout(o.support())?;
    let cutoff = cfg.cutoff.unwrap_or(if all_linear(circuit) { psi.total_degree().max(psi.cutoff()) } else { 24 });
    match circuit {
        AdaptiveCircuit::Static(g) => {
            let mut d = psi.to_dense(cutoff)?;
            let leakage = DenseGaussian::new(g, cutoff).apply(&mut d)?;
            Ok(OracleMean {
                value: o.expectation_dense(&d),
                purity_average: d.reduced_purity(o.support()) * d.norm_sqr(),
                branches: vec![(Vec::new(), d.norm_sqr())],
                leakage,
                quadrature_error: 0.0,
                weight_defect: 0.0,
                cutoff,
            })
        }
        AdaptiveCircuit::Photon(ff) => photon_branches(psi, ff, o, cutoff),
        AdaptiveCircuit::Gaussian(ff) => {
            let full = gaussian_quadrature(psi, ff, o, cutoff, cfg.quadrature_nodes)?;
            let coarse = gaussian_quadrature(psi, ff, o, cutoff, cfg.quadrature_nodes.saturating_sub(8).max(4))?;
            Ok(OracleMean { quadrature_error: (full.value - coarse.value).norm(), ..full })
        }
    }
}

fn photon_branches(psi: &ProductState, ff: &PhotonFeedforward, o: &ProductObservable, cutoff: usize) -> Result<OracleMean> {
    let mut d = psi.to_dense(cutoff)?;
    let mut leakage = DenseGaussian::new(ff.first(), cutoff).apply(&mut d)?;
    let mut out = OracleMean {
        value: ZERO,
        purity_average: 0.0,
        branches: Vec::new(),
        leakage: 0.0,
        quadrature_error: 0.0,
        weight_defect: 0.0,
        cutoff,
    };
    let mut stack = vec![(d, Vec::<usize>::new())];
    while let Some((state, prefix)) = stack.pop() {
        let l = prefix.len();
        if l == ff.measured() {
            let p = state.norm_sqr();
            let g = match ff.final_layer(&prefix) {
                Ok(g) => g,
                Err(e) if p > BRANCH_FLOOR => return Err(e),
                Err(_) => continue,
            };
            let mut s = state;
            leakage = leakage.max(DenseGaussian::new(g, cutoff).apply(&mut s)?);
            out.value += o.expectation_dense(&s);
            out.purity_average += p * s.reduced_purity(o.support());
            out.branches.push((prefix, p));
            continue;
        }
        let mut state = state;
        if l > 0 && ff.layers().keys().any(|k| k.len() == l) {
            let g = ff.layer(&prefix)?;
            leakage = leakage.max(DenseGaussian::new(g, cutoff).apply(&mut state)?);
        }
        for n in (0..=cutoff).rev() {
            let mut s = state.clone();
            s.project(l, n);
            if s.norm_sqr() > BRANCH_FLOOR {
                let mut next = prefix.clone();
                next.push(n);
                stack.push((s, next));
            }
        }
    }
    out.branches.sort_by(|a, b| a.0.cmp(&b.0));
    out.leakage = leakage;
    Ok(out)
}

/// Mean and covariance of a single-mode quadrature pair, from the dense state.
fn mode_moments(d: &DenseState, mode: usize) -> (C64, f64) {
    let cut = d.cutoff();
    let norm = d.norm_sqr();
    let mut low = d.clone();
    low.apply_single_mode(mode, &crate::fock::lowering(cut));
    let mean = d.inner(&low).unwrap() / norm;
    let n = low.norm_sqr() / norm;
    (mean, (n - mean.norm_sqr()).max(0.0))
}

fn gaussian_quadrature(psi: &ProductState, ff: &GaussianFeedforward, o: &ProductObservable, cutoff: usize, nodes: usize) -> Result<OracleMean> {
    if ff.measured() != 1 {
        return Err(Error::GuardExceeded(format!("quadrature oracle handles one Gaussian measurement, got {}", ff.measured())));
    }
    let m = ff.modes();
    let mut d = psi.to_dense(cutoff)?;
    let mut leakage = DenseGaussian::new(ff.first(), cutoff).apply(&mut d)?;
    let rs = ff.seed_squeeze()[0];
    let (mu, spread) = mode_moments(&d, 0);
    let sigma = ((spread + 1.0) * 0.5 * (2.0 * rs.abs()).exp()).sqrt();
    let inner = cutoff + 40;
    let seed: Vec<C64> = if rs == 0.0 {
        let mut v = vec![ZERO; inner + 1];
        v[0] = c(1.0, 0.0);
        v
    } else {
        squeezer_matrix(rs, inner).column(0).iter().copied().collect()
    };
    let last = DenseGaussian::new(ff.last(), cutoff);
    let (z, w) = crate::linalg::gauss_hermite(nodes);
    let mut weights = Vec::with_capacity(nodes * nodes);
    let mut values = Vec::with_capacity(nodes * nodes);
    let mut purities = Vec::with_capacity(nodes * nodes);
    let mut losses = Vec::with_capacity(nodes * nodes);
    for (&zi, &wi) in z.iter().zip(&w) {
        for (&zj, &wj) in z.iter().zip(&w) {
            let beta = mu + c(sigma * zi, sigma * zj);
            let dm = displacement_matrix(beta, cutoff + 1, inner + 1);
            let coeffs: Vec<C64> = (0..=cutoff).map(|n| (0..=inner).map(|k| dm[(n, k)] * seed[k]).sum()).collect();
            let mut proj = ComplexMatrix::zeros(cutoff + 1, cutoff + 1);
            for (n, cn) in coeffs.iter().enumerate() {
                proj[(0, n)] = cn.conj();
            }
            let mut s = d.clone();
            s.apply_single_mode(0, &proj);
            let p = s.norm_sqr() / std::f64::consts::PI;
            let jac = 2.0 * std::f64::consts::PI * sigma * sigma * (0.5 * (zi * zi + zj * zj)).exp();
            let wt = wi * wj * jac * p;
            let nu = ff.feedforward(&[beta]);
            let before = s.norm_sqr();
            for (mode, &v) in nu.iter().enumerate().skip(1).take(m - 1) {
                s.apply_displacement(mode, v);
            }
            let lost = last.apply(&mut s)?;
            losses.push(if before > 0.0 { ((before - s.norm_sqr()).abs() + lost) / before } else { 0.0 });
            if s.norm_sqr() > 0.0 {
                values.push(o.expectation_dense(&s) / s.norm_sqr());
                purities.push(s.reduced_purity(o.support()));
            } else {
                values.push(ZERO);
                purities.push(0.0);
            }
            weights.push(wt);
        }
    }
    let total: f64 = weights.iter().sum();
    let value = weights.iter().zip(&values).map(|(w, v)| v * (*w / total)).sum();
    let purity_average = weights.iter().zip(&purities).map(|(w, p)| w * p / total).sum();
    leakage = leakage.max(weights.iter().zip(&losses).map(|(w, l)| w * l / total).sum());
    Ok(OracleMean {
        value,
        purity_average,
        branches: Vec::new(),
        leakage,
        quadrature_error: 0.0,
        weight_defect: total - 1.0,
        cutoff,
    })
}
