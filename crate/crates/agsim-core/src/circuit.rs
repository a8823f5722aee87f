//! Adaptive circuits: Gaussian layers interleaved with mid-circuit
//! measurements whose outcomes choose later layers.
//!
//! Measured modes are always the leading modes 0..L. A layer chosen after
//! outcomes on modes 0..l must act as the identity on those modes, so every
//! projector commutes with everything applied after it.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fock::PhotonPattern;
use crate::gaussian::GaussianUnitary;
use crate::linalg::{ComplexMatrix, C64, ONE, ZERO};

const TRIVIAL_TOL: f64 = 1e-10;

/// True when G leaves every mode in `modes` untouched.
pub fn acts_trivially_on(g: &GaussianUnitary, modes: &[usize]) -> bool {
    let a = g.transform_a();
    let b = g.transform_b();
    let m = g.modes();
    modes.iter().all(|&i| {
        (0..m).all(|j| {
            let id = if i == j { ONE } else { ZERO };
            (a[(i, j)] - id).norm() < TRIVIAL_TOL
                && (a[(j, i)] - id).norm() < TRIVIAL_TOL
                && b[(i, j)].norm() < TRIVIAL_TOL
                && b[(j, i)].norm() < TRIVIAL_TOL
        })
    })
}

/// Photon-number measurements on modes 0..L, one per round, with
/// outcome-dependent layers. The layer keyed by a prefix of length l < L runs
/// before measuring mode l; the layer keyed by a full outcome is the final one.
#[derive(Debug, Clone)]
pub struct PhotonFeedforward {
    first: GaussianUnitary,
    measured: usize,
    layers: BTreeMap<PhotonPattern, GaussianUnitary>,
    default_layer: Option<GaussianUnitary>,
}

impl PhotonFeedforward {
    pub fn new(
        first: GaussianUnitary,
        measured: usize,
        layers: BTreeMap<PhotonPattern, GaussianUnitary>,
        default_layer: Option<GaussianUnitary>,
    ) -> Result<Self> {
        let m = first.modes();
        if measured > m {
            return Err(Error::DimensionMismatch { expected: m, got: measured });
        }
        let check = |g: &GaussianUnitary, done: usize, key: &[usize]| -> Result<()> {
            if g.modes() != m {
                return Err(Error::DimensionMismatch { expected: m, got: g.modes() });
            }
            if !acts_trivially_on(g, &(0..done).collect::<Vec<_>>()) {
                return Err(Error::InvalidInput(format!("layer for outcome {key:?} acts on an already measured mode")));
            }
            Ok(())
        };
        for (key, g) in &layers {
            if key.len() > measured {
                return Err(Error::InvalidInput(format!("feedforward key {key:?} is longer than {measured} outcomes")));
            }
            check(g, key.len(), key)?;
        }
        if let Some(g) = &default_layer {
            check(g, measured, &[])?;
        }
        Ok(Self { first, measured, layers, default_layer })
    }

    /// No measurement at all: `last · first`.
    pub fn unmeasured(first: GaussianUnitary, last: GaussianUnitary) -> Result<Self> {
        let mut layers = BTreeMap::new();
        layers.insert(Vec::new(), last);
        Self::new(first, 0, layers, None)
    }

    pub fn modes(&self) -> usize {
        self.first.modes()
    }

    pub fn measured(&self) -> usize {
        self.measured
    }

    pub fn first(&self) -> &GaussianUnitary {
        &self.first
    }

    pub fn layers(&self) -> &BTreeMap<PhotonPattern, GaussianUnitary> {
        &self.layers
    }

    pub fn layer(&self, prefix: &[usize]) -> Result<&GaussianUnitary> {
        self.layers
            .get(prefix)
            .or(self.default_layer.as_ref())
            .ok_or_else(|| Error::BranchTableIncomplete(prefix.to_vec()))
    }

    /// True when intermediate rounds have layers; otherwise they are identities.
    fn has_intermediate(&self, len: usize) -> bool {
        self.layers.keys().any(|k| k.len() == len)
    }

    /// The Gaussian in front of the last measurement, given the earlier outcomes.
    pub fn effective(&self, earlier: &[usize]) -> Result<GaussianUnitary> {
        let mut g = self.first.clone();
        for l in 1..=earlier.len() {
            if self.has_intermediate(l) {
                g = self.layer(&earlier[..l])?.after(&g)?;
            }
        }
        Ok(g)
    }

    pub fn final_layer(&self, outcome: &[usize]) -> Result<&GaussianUnitary> {
        if outcome.len() != self.measured {
            return Err(Error::DimensionMismatch { expected: self.measured, got: outcome.len() });
        }
        self.layer(outcome)
    }
}

/// One round of Gaussian measurements on modes 0..L with seed S(r)|0⟩ per
/// mode, POVM elements (1/π) D(β)|s⟩⟨s|D(β)†, displacement feedforward
/// ν = gain · β on the remaining modes, then a fixed layer.
#[derive(Debug, Clone)]
pub struct GaussianFeedforward {
    first: GaussianUnitary,
    seed_squeeze: Vec<f64>,
    gain: ComplexMatrix,
    last: GaussianUnitary,
}

impl GaussianFeedforward {
    pub fn new(first: GaussianUnitary, seed_squeeze: Vec<f64>, gain: ComplexMatrix, last: GaussianUnitary) -> Result<Self> {
        let m = first.modes();
        let l = seed_squeeze.len();
        if l > m {
            return Err(Error::DimensionMismatch { expected: m, got: l });
        }
        if last.modes() != m {
            return Err(Error::DimensionMismatch { expected: m, got: last.modes() });
        }
        if gain.nrows() != m || gain.ncols() != l {
            return Err(Error::DimensionMismatch { expected: m * l, got: gain.nrows() * gain.ncols() });
        }
        if (0..l).any(|i| gain.row(i).iter().any(|z| *z != ZERO)) {
            return Err(Error::InvalidInput("feedforward displaces a measured mode".into()));
        }
        let done: Vec<usize> = (0..l).collect();
        if !acts_trivially_on(&last, &done) {
            return Err(Error::InvalidInput("final layer acts on a measured mode".into()));
        }
        if seed_squeeze.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("seed squeezing is not finite".into()));
        }
        Ok(Self { first, seed_squeeze, gain, last })
    }

    pub fn modes(&self) -> usize {
        self.first.modes()
    }

    pub fn measured(&self) -> usize {
        self.seed_squeeze.len()
    }

    pub fn first(&self) -> &GaussianUnitary {
        &self.first
    }

    pub fn seed_squeeze(&self) -> &[f64] {
        &self.seed_squeeze
    }

    pub fn gain(&self) -> &ComplexMatrix {
        &self.gain
    }

    pub fn last(&self) -> &GaussianUnitary {
        &self.last
    }

    /// ν = gain · β.
    pub fn feedforward(&self, beta: &[C64]) -> Vec<C64> {
        (0..self.modes())
            .map(|i| (0..beta.len()).map(|j| self.gain[(i, j)] * beta[j]).sum())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum AdaptiveCircuit {
    Static(GaussianUnitary),
    Photon(PhotonFeedforward),
    Gaussian(GaussianFeedforward),
}

impl AdaptiveCircuit {
    pub fn modes(&self) -> usize {
        match self {
            Self::Static(g) => g.modes(),
            Self::Photon(p) => p.modes(),
            Self::Gaussian(g) => g.modes(),
        }
    }

    /// Number of mid-circuit measurements.
    pub fn measured(&self) -> usize {
        match self {
            Self::Static(_) => 0,
            Self::Photon(p) => p.measured(),
            Self::Gaussian(g) => g.measured(),
        }
    }

    /// Rejects observables on measured modes.
    pub fn check_readout(&self, support: &[usize]) -> Result<()> {
        let l = self.measured();
        if let Some(&bad) = support.iter().find(|&&s| s < l) {
            return Err(Error::InvalidInput(format!("observable acts on measured mode {bad}")));
        }
        if let Some(&bad) = support.iter().find(|&&s| s >= self.modes()) {
            return Err(Error::DimensionMismatch { expected: self.modes(), got: bad });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::beamsplitter_matrix;

    #[test]
    fn triviality_check() {
        let bs = GaussianUnitary::linear(&beamsplitter_matrix(3, 1, 2, 0.3, 0.1).unwrap()).unwrap();
        assert!(acts_trivially_on(&bs, &[0]));
        assert!(!acts_trivially_on(&bs, &[1]));
        let sq = GaussianUnitary::squeezers(&[0.0, 0.2, 0.0]);
        assert!(acts_trivially_on(&sq, &[0, 2]));
    }

    #[test]
    fn layer_touching_measured_mode_is_rejected() {
        let first = GaussianUnitary::identity(2);
        let mut layers = BTreeMap::new();
        layers.insert(vec![0], GaussianUnitary::squeezers(&[0.1, 0.0]));
        assert!(PhotonFeedforward::new(first, 1, layers, None).is_err());
    }

    #[test]
    fn missing_branch_is_reported() {
        let first = GaussianUnitary::identity(2);
        let mut layers = BTreeMap::new();
        layers.insert(vec![0], GaussianUnitary::identity(2));
        let ff = PhotonFeedforward::new(first, 1, layers, None).unwrap();
        assert!(ff.final_layer(&[0]).is_ok());
        assert_eq!(ff.final_layer(&[1]).unwrap_err(), Error::BranchTableIncomplete(vec![1]));
    }
}
