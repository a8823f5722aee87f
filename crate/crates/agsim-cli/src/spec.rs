//! Experiment description files.
//!
//! JSON with complex numbers written as `[re, im]` pairs. Named shorthands are
//! expanded at load time, so a loaded [`Experiment`] only holds core types.

use std::collections::BTreeMap;
use std::path::Path;

use agsim_core::circuit::{AdaptiveCircuit, GaussianFeedforward, PhotonFeedforward};
use agsim_core::estimators::VarianceMode;
use agsim_core::fock::{number_operator, projector, quadrature_x, squeezer_matrix, ProductObservable, ProductState};
use agsim_core::gaussian::beamsplitter_matrix;
use agsim_core::{ComplexMatrix, GaussianUnitary, C64};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SPEC_VERSION: u32 = 1;
const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u32,
    pub modes: usize,
    pub cutoff: usize,
    /// One entry per mode: a shorthand string or a coefficient list.
    pub state: Vec<Value>,
    /// Gates of the first Gaussian layer, applied in order.
    #[serde(default)]
    pub circuit: Vec<Value>,
    #[serde(default)]
    pub measurement: Option<MeasurementSpec>,
    pub observable: ObservableSpec,
    #[serde(default)]
    pub estimation: EstimationSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeasurementSpec {
    /// Photon counting on modes 0..rounds. Layer keys are comma-separated
    /// outcome prefixes; the empty key is the final layer when rounds is 0.
    Photon {
        rounds: usize,
        #[serde(default)]
        layers: BTreeMap<String, Vec<Value>>,
        #[serde(default)]
        default: Option<Vec<Value>>,
    },
    /// Gaussian POVM on modes 0..L with squeezed-vacuum seeds and
    /// displacement feedforward ν = gain · β.
    Gaussian {
        seed_squeeze: Vec<f64>,
        gain: Vec<Vec<[f64; 2]>>,
        #[serde(default)]
        last: Vec<Value>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub modes: Vec<usize>,
    pub ops: Vec<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSpec {
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "default_eps")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// "trivial", "oracle-purity", or a number.
    #[serde(default)]
    pub variance: Option<Value>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub resolution: Option<usize>,
}

fn default_eps() -> f64 {
    0.05
}

impl Default for EstimationSpec {
    fn default() -> Self {
        Self { epsilon: 0.05, delta: 0.05, seed: 0, variance: None, samples: None, resolution: None }
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub state: ProductState,
    pub circuit: AdaptiveCircuit,
    pub observable: ProductObservable,
    pub variance: VarianceMode,
}

impl Experiment {
    /// The Gaussian that acts before the first measurement.
    pub fn front(&self) -> &GaussianUnitary {
        match &self.circuit {
            AdaptiveCircuit::Static(g) => g,
            AdaptiveCircuit::Photon(p) => p.first(),
            AdaptiveCircuit::Gaussian(g) => g.first(),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Spec(msg.into())
}

fn core(e: agsim_core::Error) -> CliError {
    CliError::Spec(e.to_string())
}

pub fn load(path: &Path) -> Result<Experiment, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Experiment, CliError> {
    let spec: ExperimentSpec = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    build(spec)
}

pub fn build(spec: ExperimentSpec) -> Result<Experiment, CliError> {
    if spec.version != SPEC_VERSION {
        return Err(bad(format!("unsupported spec version {}; expected {SPEC_VERSION}", spec.version)));
    }
    let (m, cut) = (spec.modes, spec.cutoff);
    if m == 0 {
        return Err(bad("modes must be positive"));
    }
    if spec.state.len() != m {
        return Err(bad(format!("state lists {} modes, spec has {m}", spec.state.len())));
    }
    let coeffs = spec.state.iter().enumerate().map(|(i, v)| mode_state(v, cut).map_err(|e| bad(format!("state[{i}]: {e}")))).collect::<Result<Vec<_>, _>>()?;
    let state = ProductState::new(cut, coeffs).map_err(core)?;
    let first = layer(&spec.circuit, m).map_err(|e| bad(format!("circuit: {e}")))?;
    let circuit = match &spec.measurement {
        None => AdaptiveCircuit::Static(first),
        Some(MeasurementSpec::Photon { rounds, layers, default }) => {
            let mut table = BTreeMap::new();
            for (key, gates) in layers {
                let prefix = parse_prefix(key).map_err(|e| bad(format!("layers key {key:?}: {e}")))?;
                table.insert(prefix, layer(gates, m).map_err(|e| bad(format!("layers[{key:?}]: {e}")))?);
            }
            let default = default.as_ref().map(|g| layer(g, m)).transpose().map_err(|e| bad(format!("default layer: {e}")))?;
            if *rounds == 0 && !table.contains_key(&Vec::new()) {
                table.insert(Vec::new(), default.clone().unwrap_or_else(|| GaussianUnitary::identity(m)));
            }
            AdaptiveCircuit::Photon(PhotonFeedforward::new(first, *rounds, table, default).map_err(core)?)
        }
        Some(MeasurementSpec::Gaussian { seed_squeeze, gain, last }) => {
            let l = seed_squeeze.len();
            if gain.len() != m || gain.iter().any(|r| r.len() != l) {
                return Err(bad(format!("gain must be {m} rows of {l} entries")));
            }
            let g = ComplexMatrix::from_fn(m, l, |i, j| C64::new(gain[i][j][0], gain[i][j][1]));
            let last = layer(last, m).map_err(|e| bad(format!("last layer: {e}")))?;
            AdaptiveCircuit::Gaussian(GaussianFeedforward::new(first, seed_squeeze.clone(), g, last).map_err(core)?)
        }
    };
    if spec.observable.modes.len() != spec.observable.ops.len() {
        return Err(bad("observable modes and ops differ in length"));
    }
    let ops = spec.observable.ops.iter().enumerate().map(|(i, v)| operator(v, cut).map_err(|e| bad(format!("observable.ops[{i}]: {e}")))).collect::<Result<Vec<_>, _>>()?;
    let observable = ProductObservable::new(spec.observable.modes.clone(), ops).map_err(core)?;
    circuit.check_readout(observable.support()).map_err(core)?;
    let variance = variance_mode(spec.estimation.variance.as_ref())?;
    let est = &spec.estimation;
    if !(est.epsilon.is_finite() && est.epsilon > 0.0) || !(est.delta.is_finite() && est.delta > 0.0 && est.delta < 1.0) {
        return Err(bad("estimation needs epsilon > 0 and 0 < delta < 1"));
    }
    Ok(Experiment { spec, state, circuit, observable, variance })
}

pub fn variance_mode(v: Option<&Value>) -> Result<VarianceMode, CliError> {
    match v {
        None => Ok(VarianceMode::Trivial),
        Some(Value::String(s)) if s == "trivial" => Ok(VarianceMode::Trivial),
        Some(Value::String(s)) if s == "oracle-purity" => Ok(VarianceMode::OraclePurity),
        Some(Value::Number(n)) => match n.as_f64() {
            Some(x) if x > 0.0 && x.is_finite() => Ok(VarianceMode::User(x)),
            _ => Err(bad(format!("variance bound {n} is not positive"))),
        },
        Some(other) => Err(bad(format!("unknown variance mode {other}"))),
    }
}

pub fn parse_prefix(s: &str) -> Result<Vec<usize>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"))).collect()
}

fn complex(v: &Value) -> Result<C64, String> {
    match v {
        Value::Array(a) if a.len() == 2 => match (a[0].as_f64(), a[1].as_f64()) {
            (Some(re), Some(im)) => Ok(C64::new(re, im)),
            _ => Err(format!("expected [re, im], got {v}")),
        },
        Value::Number(n) => n.as_f64().map(|re| C64::new(re, 0.0)).ok_or_else(|| format!("bad number {n}")),
        _ => Err(format!("expected [re, im], got {v}")),
    }
}

fn matrix(v: &Value) -> Result<ComplexMatrix, String> {
    let rows = v.as_array().ok_or("matrix must be a list of rows")?;
    let n = rows.len();
    let mut out = ComplexMatrix::zeros(n, n);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_array().ok_or("matrix row must be a list")?;
        if r.len() != n {
            return Err(format!("row {i} has {} entries, expected {n}", r.len()));
        }
        for (j, z) in r.iter().enumerate() {
            out[(i, j)] = complex(z)?;
        }
    }
    Ok(out)
}

fn args(rest: &str, want: usize) -> Result<Vec<f64>, String> {
    let xs: Vec<f64> = rest.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>()?;
    if xs.len() != want {
        return Err(format!("expected {want} arguments, got {}", xs.len()));
    }
    Ok(xs)
}

fn index(x: f64, m: usize) -> Result<usize, String> {
    if x < 0.0 || x.fract() != 0.0 || x as usize >= m {
        return Err(format!("mode index {x} outside 0..{m}"));
    }
    Ok(x as usize)
}

fn normalize(mut v: Vec<C64>) -> Result<Vec<C64>, String> {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err("state vanishes below the cutoff".into());
    }
    v.iter_mut().for_each(|z| *z /= n);
    Ok(v)
}

/// Per-mode coefficients. Shorthands truncated by the cutoff are renormalized;
/// explicit lists must already be normalized.
fn mode_state(v: &Value, cut: usize) -> Result<Vec<C64>, String> {
    let mut out = vec![C64::new(0.0, 0.0); cut + 1];
    match v {
        Value::String(s) => {
            let (name, rest) = s.split_once(':').unwrap_or((s.as_str(), ""));
            match name {
                "vacuum" => out[0] = C64::new(1.0, 0.0),
                "fock" => {
                    let k: usize = rest.trim().parse().map_err(|e| format!("fock:{rest}: {e}"))?;
                    if k > cut {
                        return Err(format!("fock:{k} exceeds cutoff {cut}"));
                    }
                    out[k] = C64::new(1.0, 0.0);
                }
                "coherent" => {
                    let a = args(rest, 2)?;
                    let alpha = C64::new(a[0], a[1]);
                    let mut term = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
                    for (n, z) in out.iter_mut().enumerate() {
                        if n > 0 {
                            term *= alpha / (n as f64).sqrt();
                        }
                        *z = term;
                    }
                    out = normalize(out)?;
                }
                "sqvac" => {
                    let r = args(rest, 1)?[0];
                    let s = squeezer_matrix(r, cut + 48);
                    for (n, z) in out.iter_mut().enumerate() {
                        *z = s[(n, 0)];
                    }
                    out = normalize(out)?;
                }
                _ => return Err(format!("unknown state shorthand {s:?}")),
            }
        }
        Value::Array(a) => {
            if a.len() > cut + 1 {
                return Err(format!("{} coefficients exceed cutoff {cut}", a.len()));
            }
            for (n, z) in a.iter().enumerate() {
                out[n] = complex(z)?;
            }
            let norm: f64 = out.iter().map(|z| z.norm_sqr()).sum();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(format!("coefficients have squared norm {norm}"));
            }
        }
        _ => return Err(format!("expected a shorthand or coefficient list, got {v}")),
    }
    Ok(out)
}

fn operator(v: &Value, cut: usize) -> Result<ComplexMatrix, String> {
    match v {
        Value::String(s) => {
            let (name, rest) = s.split_once(':').unwrap_or((s.as_str(), ""));
            match name {
                "number" => Ok(number_operator(cut)),
                "identity" => Ok(ComplexMatrix::identity(cut + 1, cut + 1)),
                "quadrature-x" => Ok(quadrature_x(cut)),
                "projector" => {
                    let k: usize = rest.trim().parse().map_err(|e| format!("projector:{rest}: {e}"))?;
                    projector(k, cut).map_err(|e| e.to_string())
                }
                _ => Err(format!("unknown observable shorthand {s:?}")),
            }
        }
        Value::Array(_) => {
            let o = matrix(v)?;
            if o.nrows() > cut + 1 {
                return Err(format!("{}×{} operator exceeds cutoff {cut}", o.nrows(), o.nrows()));
            }
            Ok(o)
        }
        _ => Err(format!("expected a shorthand or matrix, got {v}")),
    }
}

fn gate(v: &Value, m: usize) -> Result<GaussianUnitary, String> {
    match v {
        Value::String(s) => {
            let (name, rest) = s.split_once(':').ok_or_else(|| format!("gate {s:?} needs arguments"))?;
            match name {
                "beamsplitter" => {
                    let a = args(rest, 4)?;
                    let u = beamsplitter_matrix(m, index(a[0], m)?, index(a[1], m)?, a[2], a[3]).map_err(|e| e.to_string())?;
                    GaussianUnitary::linear(&u).map_err(|e| e.to_string())
                }
                "phase" => {
                    let a = args(rest, 2)?;
                    let mut ph = vec![0.0; m];
                    ph[index(a[0], m)?] = a[1];
                    Ok(GaussianUnitary::phase_shifter(&ph))
                }
                "squeeze" => {
                    let a = args(rest, 2)?;
                    let mut r = vec![0.0; m];
                    r[index(a[0], m)?] = a[1];
                    Ok(GaussianUnitary::squeezers(&r))
                }
                _ => Err(format!("unknown gate {s:?}")),
            }
        }
        Value::Object(o) => {
            let u = o.get("linear").ok_or("inline gate needs a \"linear\" matrix")?;
            let u = matrix(u)?;
            if u.nrows() != m {
                return Err(format!("linear gate is {}×{}, circuit has {m} modes", u.nrows(), u.nrows()));
            }
            GaussianUnitary::linear(&u).map_err(|e| e.to_string())
        }
        _ => Err(format!("expected a gate, got {v}")),
    }
}

/// Composes gates so the first listed acts first.
fn layer(gates: &[Value], m: usize) -> Result<GaussianUnitary, String> {
    let mut g = GaussianUnitary::identity(m);
    for (i, v) in gates.iter().enumerate() {
        g = gate(v, m).map_err(|e| format!("gate {i}: {e}"))?.after(&g).map_err(|e| e.to_string())?;
    }
    Ok(g)
}
