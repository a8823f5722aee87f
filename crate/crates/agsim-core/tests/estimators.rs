use std::collections::BTreeMap;

use agsim_core::circuit::{AdaptiveCircuit, GaussianFeedforward, PhotonFeedforward};
use agsim_core::estimators::{estimate_mean_value, EstimatorConfig, VarianceMode};
use agsim_core::fock::{number_operator, projector, ProductObservable, ProductState};
use agsim_core::gaussian::beamsplitter_matrix;
use agsim_core::linalg::c;
use agsim_core::oracle::{oracle_mean_value, OracleConfig};
use agsim_core::{ComplexMatrix, GaussianUnitary};

fn check(psi: &ProductState, circ: &AdaptiveCircuit, o: &ProductObservable, samples: usize, oracle: OracleConfig) {
    let want = oracle_mean_value(psi, circ, o, &oracle).unwrap().value;
    let cfg = EstimatorConfig { samples: Some(samples), seed: 11, variance: VarianceMode::Trivial, oracle, ..EstimatorConfig::default() };
    let t = std::time::Instant::now();
    let r = estimate_mean_value(psi, circ, o, &cfg).unwrap();
    let sigma = (r.sample_variance / r.n_samples as f64).sqrt();
    eprintln!(
        "estimate {:.5} oracle {:.5} sigma {:.2e} var {:.3} per-sample {:.1}us",
        r.estimate,
        want,
        sigma,
        r.sample_variance,
        1e6 * t.elapsed().as_secs_f64() / r.n_samples as f64
    );
    assert!((r.estimate - want).norm() < 6.0 * sigma + 1e-9, "{} vs {}", r.estimate, want);
}

#[test]
fn static_circuit_matches_oracle() {
    let u = beamsplitter_matrix(3, 0, 1, 0.7, 0.2).unwrap() * beamsplitter_matrix(3, 1, 2, 0.5, -0.4).unwrap();
    let g = GaussianUnitary::linear(&u).unwrap().after(&GaussianUnitary::squeezers(&[0.2, 0.0, -0.1])).unwrap();
    let psi = ProductState::fock(&[1, 1, 0], 1).unwrap();
    let o = ProductObservable::new(vec![1], vec![projector(1, 2).unwrap()]).unwrap();
    check(&psi, &AdaptiveCircuit::Static(g), &o, 60_000, OracleConfig::default());
}

#[test]
fn photon_feedforward_matches_oracle() {
    let u = beamsplitter_matrix(3, 0, 1, 0.7, 0.2).unwrap() * beamsplitter_matrix(3, 1, 2, 0.5, -0.4).unwrap();
    let first = GaussianUnitary::linear(&u).unwrap();
    let psi = ProductState::fock(&[1, 1, 0], 1).unwrap();
    let mut layers = BTreeMap::new();
    for n in 0..=2 {
        let bs = beamsplitter_matrix(3, 1, 2, 0.3 + 0.4 * n as f64, 0.1).unwrap();
        layers.insert(vec![n], GaussianUnitary::linear(&bs).unwrap());
    }
    let ff = PhotonFeedforward::new(first, 1, layers, None).unwrap();
    let o = ProductObservable::new(vec![2], vec![projector(0, 2).unwrap()]).unwrap();
    check(&psi, &AdaptiveCircuit::Photon(ff), &o, 60_000, OracleConfig::default());
}

#[test]
fn gaussian_feedforward_matches_oracle() {
    let u = beamsplitter_matrix(2, 0, 1, 0.6, 0.3).unwrap();
    let first = GaussianUnitary::linear(&u).unwrap();
    let psi = ProductState::fock(&[1, 0], 1).unwrap();
    let mut gain = ComplexMatrix::zeros(2, 1);
    gain[(1, 0)] = c(0.4, 0.1);
    let ff = GaussianFeedforward::new(first, vec![0.2], gain, GaussianUnitary::identity(2)).unwrap();
    let o = ProductObservable::new(vec![1], vec![number_operator(3)]).unwrap();
    let oracle = OracleConfig { cutoff: Some(16), ..OracleConfig::default() };
    check(&psi, &AdaptiveCircuit::Gaussian(ff), &o, 30_000, oracle);
}

use agsim_core::estimators::{
    char_function, estimate_mean_value_no_ff, estimate_mean_value_photon_ff, raw_samples, sample_char_density, sample_floor, CharSampler,
    PhotonFeedforwardSampler,
};
use agsim_core::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn char_function_examples() {
    let o = number_operator(4);
    assert!((char_function(&o, C64::new(0.0, 0.0)) - o.trace()).norm() < 1e-14);
    let p0 = projector(0, 8).unwrap();
    for a in [c(0.3, 0.2), c(-1.0, 0.9), c(1.5, 0.0)] {
        assert!((char_function(&p0, a).re - (-0.5 * a.norm_sqr()).exp()).abs() < 1e-6);
    }
}

#[test]
fn char_two_norm_identity() {
    let mut o = ComplexMatrix::zeros(3, 3);
    o[(0, 0)] = c(0.5, 0.0);
    o[(0, 2)] = c(0.2, -0.1);
    o[(2, 1)] = c(-0.3, 0.4);
    o[(1, 1)] = c(0.0, 0.7);
    let direct: f64 = o.iter().map(|z| z.norm_sqr()).sum();
    let (n, r) = (400, 9.0);
    let h = 2.0 * r / n as f64;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let a = c(-r + h * (i as f64 + 0.5), -r + h * (j as f64 + 0.5));
            s += char_function(&o, a).norm_sqr();
        }
    }
    let integral = s * h * h / std::f64::consts::PI;
    assert!((integral - direct).abs() < 1e-3, "{integral} vs {direct}");
}

#[test]
fn vacuum_projector_density_is_unit_gaussian() {
    let o = ProductObservable::new(vec![0], vec![projector(0, 3).unwrap()]).unwrap();
    let s = CharSampler::new(&o).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<C64> = (0..10_000).map(|_| sample_char_density(&s, &mut rng).unwrap()[0]).collect();
    let mean = draws.iter().map(|z| z.norm_sqr()).sum::<f64>() / draws.len() as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
    // |α|² is Exp(1): χ² over ten equiprobable bins.
    let mut bins = [0usize; 10];
    for z in &draws {
        let u = 1.0 - (-z.norm_sqr()).exp();
        bins[((u * 10.0) as usize).min(9)] += 1;
    }
    let chi2: f64 = bins.iter().map(|&b| (b as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi2 < 21.67, "χ² = {chi2}");
    let mut again = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(sample_char_density(&s, &mut again).unwrap()[0], draws[0]);
}

#[test]
fn identity_on_cutoff_density() {
    let o = ProductObservable::new(vec![0], vec![ComplexMatrix::identity(3, 3)]).unwrap();
    let s = CharSampler::new(&o).unwrap();
    let acc = s.envelopes()[0].acceptance();
    eprintln!("identity-on-cutoff acceptance {acc:.3}");
    assert!(acc > 0.1 && acc <= 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let near = (0..4000).filter(|_| sample_char_density(&s, &mut rng).unwrap()[0].norm() < 3.0).count();
    assert!(near > 3800, "{near}");
}

#[test]
fn identity_observable_gives_constant_samples() {
    let psi = ProductState::vacuum(2, 0);
    let u = beamsplitter_matrix(2, 0, 1, 0.3, 0.0).unwrap();
    let g = GaussianUnitary::linear(&u).unwrap();
    let o = ProductObservable::new(vec![1], vec![ComplexMatrix::identity(1, 1)]).unwrap();
    let cfg = EstimatorConfig { samples: Some(2400), ..EstimatorConfig::default() };
    let r = estimate_mean_value_no_ff(&psi, &g, &o, &cfg).unwrap();
    assert!((r.estimate - c(1.0, 0.0)).norm() < 1e-12);
    assert!(r.sample_variance < 1e-20);
}

#[test]
fn auto_sizing_meets_the_floor() {
    let psi = ProductState::fock(&[1, 0], 1).unwrap();
    let g = GaussianUnitary::identity(2);
    let o = ProductObservable::new(vec![0], vec![projector(1, 1).unwrap()]).unwrap();
    let cfg = EstimatorConfig { epsilon: 0.2, delta: 0.1, variance: VarianceMode::User(0.7), ..EstimatorConfig::default() };
    let r = estimate_mean_value_no_ff(&psi, &g, &o, &cfg).unwrap();
    assert!(r.auto_sized);
    assert!(r.n_samples >= sample_floor(0.7, 0.2, 0.1));
    assert!(r.n_samples < sample_floor(0.7, 0.2, 0.1) + r.groups);
    assert_eq!(r.variance_bound_used, 0.7);
}

#[test]
fn reports_are_deterministic_across_workers() {
    let u = beamsplitter_matrix(3, 0, 2, 0.9, 0.4).unwrap();
    let g = GaussianUnitary::linear(&u).unwrap().after(&GaussianUnitary::squeezers(&[0.1, 0.0, 0.0])).unwrap();
    let psi = ProductState::fock(&[1, 0, 1], 1).unwrap();
    let o = ProductObservable::new(vec![2], vec![projector(1, 2).unwrap()]).unwrap();
    let base = EstimatorConfig { samples: Some(24_000), seed: 99, ..EstimatorConfig::default() };
    let a = estimate_mean_value_no_ff(&psi, &g, &o, &base).unwrap();
    let b = estimate_mean_value_no_ff(&psi, &g, &o, &base).unwrap();
    let w = estimate_mean_value_no_ff(&psi, &g, &o, &EstimatorConfig { workers: 4, ..base.clone() }).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.estimate, w.estimate);
    assert_eq!(a.sample_variance.to_bits(), w.sample_variance.to_bits());
}

#[test]
fn unmeasured_photon_circuit_equals_static() {
    let first = GaussianUnitary::linear(&beamsplitter_matrix(2, 0, 1, 0.4, 0.1).unwrap()).unwrap();
    let last = GaussianUnitary::squeezers(&[0.0, 0.15]);
    let ff = PhotonFeedforward::unmeasured(first.clone(), last.clone()).unwrap();
    let psi = ProductState::fock(&[1, 0], 1).unwrap();
    let o = ProductObservable::new(vec![1], vec![number_operator(2)]).unwrap();
    let cfg = EstimatorConfig { samples: Some(4800), seed: 4, ..EstimatorConfig::default() };
    let a = estimate_mean_value_photon_ff(&psi, &ff, &o, &cfg).unwrap();
    let b = estimate_mean_value_no_ff(&psi, &last.after(&first).unwrap(), &o, &cfg).unwrap();
    assert_eq!(a.estimate, b.estimate);
}

#[test]
fn photon_outcome_frequencies_match_branch_probabilities() {
    let u = beamsplitter_matrix(3, 0, 1, 0.7, 0.2).unwrap() * beamsplitter_matrix(3, 0, 2, 0.5, -0.4).unwrap();
    let first = GaussianUnitary::linear(&u).unwrap();
    let psi = ProductState::fock(&[1, 1, 0], 1).unwrap();
    let mut layers = BTreeMap::new();
    for n in 0..=2 {
        layers.insert(vec![n], GaussianUnitary::phase_shifter(&[0.0, 0.5 * n as f64, 0.0]));
    }
    let ff = PhotonFeedforward::new(first, 1, layers, None).unwrap();
    let o = ProductObservable::new(vec![1], vec![projector(1, 2).unwrap()]).unwrap();
    let s = PhotonFeedforwardSampler::new(&psi, &ff, &o, None, false).unwrap();
    let exact = oracle_mean_value(&psi, &AdaptiveCircuit::Photon(ff), &o, &OracleConfig::default()).unwrap().branches;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 10_000;
    let mut counts = BTreeMap::new();
    for _ in 0..n {
        *counts.entry(s.sample_outcome(&mut rng)).or_insert(0usize) += 1;
    }
    for (pattern, p) in exact {
        let k = counts.get(&pattern).copied().unwrap_or(0) as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((k - n as f64 * p).abs() <= 4.0 * sd + 1e-9, "{pattern:?}: {k} vs {}", n as f64 * p);
    }
    let _ = raw_samples(&s, 1, 10).unwrap();
}
