//! Classical simulation of bosonic Gaussian circuits with adaptive measurements.

pub mod circuit;
pub mod error;
pub mod estimators;
pub mod fock;
pub mod gaussian;
pub mod kernel;
pub mod linalg;
pub mod marginal;
pub mod matfun;
pub mod oracle;
pub mod poly;

pub use circuit::{AdaptiveCircuit, GaussianFeedforward, PhotonFeedforward};
pub use error::{Error, Result};
pub use estimators::{estimate_mean_value, EstimateReport, EstimatorConfig, VarianceMode};
pub use fock::{PhotonPattern, ProductObservable, ProductState};
pub use gaussian::{conjugate_phase_shifter, push_displacement, Displacement, GaussianUnitary, LowRankConjugation};
pub use linalg::{ComplexMatrix, ComplexVector, C64};
pub use marginal::{marginal_probability, GeneratingFunctionTable, MarginalConfig};
pub use oracle::{oracle_mean_value, OracleConfig};
