//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `AGSIM_ACCEPTANCE_ONLY=6,7` restricts the run to the listed criteria and
//! `AGSIM_ACCEPTANCE_RUNS` lowers the seeded runs per estimator configuration
//! for quick timing; the pass verdict is only meaningful at the default.

use std::collections::BTreeMap;
use std::time::Instant;

use agsim_cli::bench::{cmd_bench, BenchOptions, Suite};
use agsim_core::circuit::{AdaptiveCircuit, GaussianFeedforward, PhotonFeedforward};
use agsim_core::estimators::{
    estimate_mean_value, group_count, sample_floor, EstimatorConfig, PhotonFeedforwardSampler, VarianceMode,
};
use agsim_core::fock::{
    number_operator, oracle_amplitude, oracle_expand_antinormal, oracle_marginal_table, projector, quadrature_x, ProductObservable,
    ProductState,
};
use agsim_core::gaussian::{beamsplitter_matrix, conjugate_phase_shifter};
use agsim_core::linalg::{c, haar_unitary, random_complex_matrix};
use agsim_core::marginal::{amplitude_low_mode, marginal_probability, GeneratingFunctionTable, MarginalConfig};
use agsim_core::matfun::{loop_hafnian_enum, loop_hafnian_lowrank, permanent_lowrank_plus_identity, permanent_ryser, LowRankSymmetric};
use agsim_core::oracle::{oracle_mean_value, OracleConfig};
use agsim_core::{ComplexMatrix, ComplexVector, GaussianUnitary, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RUNS: u64 = 200;

fn runs() -> u64 {
    std::env::var("AGSIM_ACCEPTANCE_RUNS").ok().and_then(|s| s.parse().ok()).unwrap_or(RUNS)
}
const EPS: f64 = 0.05;
const DELTA: f64 = 0.05;
/// δ plus the binomial slack at 200 runs.
const FAIL_BUDGET: f64 = 0.05 + 0.046;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_state(rng: &mut ChaCha8Rng, m: usize, n_max: usize) -> ProductState {
    let coeffs = (0..m)
        .map(|_| {
            let v: Vec<C64> = (0..=n_max).map(|_| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.into_iter().map(|z| z / n).collect()
        })
        .collect();
    ProductState::new(n_max, coeffs).unwrap()
}

fn random_gaussian(rng: &mut ChaCha8Rng, m: usize, r_max: f64) -> GaussianUnitary {
    let r: Vec<f64> = (0..m).map(|_| r_max * (2.0 * rng.random::<f64>() - 1.0)).collect();
    GaussianUnitary::compose_bloch_messiah(&haar_unitary(m, rng), &r, &haar_unitary(m, rng)).unwrap()
}

fn linear(u: ComplexMatrix) -> GaussianUnitary {
    GaussianUnitary::linear(&u).unwrap()
}

fn rel_err(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn marginal_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut worst_sum, mut count) = (0.0f64, 0.0f64, 0);
    for inst in 0..120 {
        let gaussian = inst % 2 == 0;
        let (m, n_max, len) = if gaussian { (1 + inst % 3, 1 + (inst / 2) % 2, 1) } else { (2 + inst % 3, 1 + (inst / 3) % 2, 1 + (inst / 2) % 2) };
        let g = if gaussian { random_gaussian(&mut rng, m, 0.3) } else { linear(haar_unitary(m, &mut rng)) };
        let psi = random_state(&mut rng, m, n_max);
        let phi = if inst % 4 < 2 { psi.clone() } else { random_state(&mut rng, m, n_max) };
        let cfg = MarginalConfig::default();
        let table = GeneratingFunctionTable::compute(&g, &phi, &psi, len, &cfg).unwrap();
        let probs = table.invert_all();
        let work = if gaussian { Some(n_max + 40) } else { None };
        let oracle = oracle_marginal_table(&phi, &g, len, &psi, work).unwrap();
        let k = table.freq.resolution();
        for (idx, q) in probs.iter().enumerate() {
            let prefix = table.freq.prefix(idx);
            let want = oracle.values.get(&prefix).copied().unwrap_or_default();
            worst = worst.max((q - want).norm());
        }
        let prefix: Vec<usize> = (0..len).map(|_| rng.random_range(0..=k.min(3))).collect();
        let single = marginal_probability(&g, &psi, &phi, &prefix, &cfg).unwrap();
        worst = worst.max((single - oracle.values.get(&prefix).copied().unwrap_or_default()).norm());
        if inst % 4 < 2 {
            worst_sum = worst_sum.max((probs.iter().map(|z| z.re).sum::<f64>() - 1.0).abs());
        }
        count += 1;
    }
    outcome(worst <= 1e-9 && worst_sum <= 1e-9, format!("{count} instances, max deviation {worst:.2e}, max |sum - 1| {worst_sum:.2e}"))
}

fn lowrank_loop_hafnian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst = 0.0f64;
    for inst in 0..220 {
        let n = 1 + inst % 10;
        let r = 1 + (inst / 10) % 4;
        let g = random_complex_matrix(n, r, &mut rng);
        let mu = random_complex_matrix(n, 1, &mut rng).column(0).into_owned();
        let s = LowRankSymmetric::new(g, mu).unwrap();
        worst = worst.max(rel_err(loop_hafnian_lowrank(&s).unwrap(), loop_hafnian_enum(&s.to_matrix()).unwrap()));
    }
    outcome(worst <= 1e-9, format!("220 instances, max relative error {worst:.2e}"))
}

fn lowrank_permanent() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for inst in 0..220 {
        let n = 1 + inst % 10;
        let l = 1 + (inst / 10) % 3;
        let u: Vec<ComplexVector> = (0..l).map(|_| random_complex_matrix(n, 1, &mut rng).column(0).into_owned()).collect();
        let v: Vec<ComplexVector> = (0..l).map(|_| random_complex_matrix(n, 1, &mut rng).column(0).into_owned()).collect();
        let mut a = ComplexMatrix::identity(n, n);
        for (x, y) in u.iter().zip(&v) {
            a += x * y.transpose();
        }
        worst = worst.max(rel_err(permanent_lowrank_plus_identity(&u, &v).unwrap(), permanent_ryser(&a).unwrap()));
    }
    outcome(worst <= 1e-9, format!("220 instances, max relative error {worst:.2e}"))
}

fn low_mode_amplitude() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for inst in 0..220 {
        let m = 1 + inst % 4;
        let l = (1 + (inst / 4) % 2).min(m);
        let n_max = 1 + (inst / 8) % 2;
        let u = haar_unitary(m, &mut rng);
        let psi = random_state(&mut rng, m, n_max);
        let phi = random_state(&mut rng, l, n_max);
        let mut full = phi.coeffs().to_vec();
        full.resize(m, {
            let mut v = vec![C64::default(); n_max + 1];
            v[0] = c(1.0, 0.0);
            v
        });
        let phi_full = ProductState::new(n_max, full).unwrap();
        let fast = amplitude_low_mode(&u, &psi, &phi).unwrap();
        let slow = oracle_amplitude(&phi_full, &linear(u), &psi).unwrap();
        worst = worst.max((fast - slow).norm());
    }
    outcome(worst <= 1e-10, format!("220 instances, max deviation {worst:.2e}"))
}

fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn lowrank_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let (mut tail, mut extra) = (0.0f64, 0usize);
    for inst in 0..120 {
        let m = 3 + inst % 4;
        let l = 1 + inst % 2;
        let g0 = random_gaussian(&mut rng, m, 0.6);
        let mut phases = vec![0.0; m];
        for p in phases.iter_mut().take(l) {
            *p = 0.2 + 5.0 * rng.random::<f64>();
        }
        let (g, conj) = conjugate_phase_shifter(&g0, &phases).unwrap();
        for mat in [&conj.w, &conj.z] {
            tail = singular_values(mat).iter().skip(2 * l).fold(tail, |a, &s| a.max(s));
        }
        extra = extra.max(g.squeezer_count(1e-12).saturating_sub(2 * l));
    }
    outcome(tail < 1e-10 && extra == 0, format!("120 instances, max tail singular value {tail:.2e}, squeezers beyond 2L {extra}"))
}

struct Config {
    name: &'static str,
    psi: ProductState,
    circuit: AdaptiveCircuit,
    o: ProductObservable,
    oracle: OracleConfig,
}

/// Runs RUNS seeded estimates and counts misses beyond ε + slack.
fn confidence(cfgs: &[Config], slack_cap: f64, check_variance: bool) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for cf in cfgs {
        let t = Instant::now();
        let oracle = oracle_mean_value(&cf.psi, &cf.circuit, &cf.o, &cf.oracle).unwrap();
        let slack = oracle.quadrature_error + oracle.leakage;
        let bound = cf.o.norm_sqr() * oracle.purity_average;
        let (mut misses, mut var_sum, mut n) = (0, 0.0, 0);
        let runs = runs();
        for seed in 0..runs {
            let cfg = EstimatorConfig {
                epsilon: EPS,
                delta: DELTA,
                seed,
                workers: 1,
                variance: VarianceMode::User(bound),
                oracle: cf.oracle,
                ..EstimatorConfig::default()
            };
            let r = estimate_mean_value(&cf.psi, &cf.circuit, &cf.o, &cfg).unwrap();
            if (r.estimate - oracle.value).norm() > EPS + slack {
                misses += 1;
            }
            var_sum += r.sample_variance;
            n = r.n_samples;
        }
        let frac = misses as f64 / runs as f64;
        let var = var_sum / runs as f64;
        let ok = frac <= FAIL_BUDGET && slack <= slack_cap && (!check_variance || var <= 1.1 * bound);
        pass &= ok;
        parts.push(format!(
            "{}: miss {:.3} of {runs}, Var(X) {:.3} vs bound {:.3}, slack {:.1e}, N {n}, {:.0}s{}",
            cf.name,
            frac,
            var,
            bound,
            slack,
            t.elapsed().as_secs_f64(),
            if ok { "" } else { " FAIL" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn obs(support: Vec<usize>, ops: Vec<ComplexMatrix>) -> ProductObservable {
    ProductObservable::new(support, ops).unwrap()
}

fn no_feedforward_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let hom = linear(beamsplitter_matrix(2, 0, 1, std::f64::consts::FRAC_PI_4, 0.0).unwrap());
    let g3 = random_gaussian(&mut rng, 3, 0.3);
    let psi3 = random_state(&mut rng, 3, 1);
    let mut ket = ComplexVector::from_fn(3, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    ket /= c(ket.norm(), 0.0);
    let rank_one = &ket * ket.adjoint();
    let lin3 = linear(beamsplitter_matrix(3, 0, 1, 0.7, 0.2).unwrap() * beamsplitter_matrix(3, 1, 2, 0.5, -0.4).unwrap());
    let sq2 = linear(beamsplitter_matrix(2, 0, 1, 0.9, 0.3).unwrap()).after(&GaussianUnitary::squeezers(&[0.25, -0.1])).unwrap();
    let plus = ProductState::new(1, vec![vec![c(0.6, 0.0), c(0.0, 0.8)], vec![c(0.0, 0.0), c(1.0, 0.0)]]).unwrap();
    let cfgs = [
        Config {
            name: "number on |1>|0>",
            psi: ProductState::fock(&[1, 0], 1).unwrap(),
            circuit: AdaptiveCircuit::Static(GaussianUnitary::identity(2)),
            o: obs(vec![0], vec![number_operator(1)]),
            oracle: OracleConfig::default(),
        },
        Config {
            name: "HOM coincidence",
            psi: ProductState::fock(&[1, 1], 1).unwrap(),
            circuit: AdaptiveCircuit::Static(hom),
            o: obs(vec![0, 1], vec![projector(1, 1).unwrap(), projector(1, 1).unwrap()]),
            oracle: OracleConfig::default(),
        },
        Config {
            name: "random Gaussian, rank-one",
            psi: psi3,
            circuit: AdaptiveCircuit::Static(g3),
            o: obs(vec![2], vec![rank_one]),
            oracle: OracleConfig::default(),
        },
        Config {
            name: "linear, two-mode projector",
            psi: ProductState::fock(&[1, 1, 0], 1).unwrap(),
            circuit: AdaptiveCircuit::Static(lin3),
            o: obs(vec![0, 2], vec![projector(0, 1).unwrap(), projector(1, 1).unwrap()]),
            oracle: OracleConfig::default(),
        },
        Config {
            name: "squeezed, quadrature",
            psi: plus,
            circuit: AdaptiveCircuit::Static(sq2),
            o: obs(vec![1], vec![quadrature_x(1)]),
            oracle: OracleConfig::default(),
        },
    ];
    confidence(&cfgs, 1e-9, true)
}

fn photon_feedforward_configs() -> Vec<(Config, PhotonFeedforward)> {
    let first = linear(beamsplitter_matrix(3, 0, 1, 0.7, 0.2).unwrap() * beamsplitter_matrix(3, 1, 2, 0.5, -0.4).unwrap());
    let mut phase_layers = BTreeMap::new();
    for n in 0..=3 {
        let ph = GaussianUnitary::phase_shifter(&[0.0, 0.7 * n as f64, 0.0]);
        let mix = linear(beamsplitter_matrix(3, 1, 2, 0.6, 0.0).unwrap());
        phase_layers.insert(vec![n], mix.after(&ph).unwrap());
    }
    let psi_a = ProductState::new(
        2,
        vec![vec![c(0.0, 0.0), c(0.8, 0.0), c(0.0, 0.6)], vec![c(0.0, 0.0), c(1.0, 0.0)], vec![c(1.0, 0.0)]],
    )
    .unwrap();
    let ff_a = PhotonFeedforward::new(first.clone(), 1, phase_layers, None).unwrap();
    let mut bs_layers = BTreeMap::new();
    for n in 0..=2 {
        bs_layers.insert(vec![n], linear(beamsplitter_matrix(3, 1, 2, 0.3 + 0.4 * n as f64, 0.1).unwrap()));
    }
    let ff_b = PhotonFeedforward::new(first, 1, bs_layers, None).unwrap();
    vec![
        (
            Config {
                name: "branch phases, n_max 2",
                psi: psi_a,
                circuit: AdaptiveCircuit::Photon(ff_a.clone()),
                o: obs(vec![2], vec![projector(1, 2).unwrap()]),
                oracle: OracleConfig::default(),
            },
            ff_a,
        ),
        (
            Config {
                name: "branch beamsplitters",
                psi: ProductState::fock(&[1, 1, 0], 1).unwrap(),
                circuit: AdaptiveCircuit::Photon(ff_b.clone()),
                o: obs(vec![1], vec![projector(0, 1).unwrap()]),
                oracle: OracleConfig::default(),
            },
            ff_b,
        ),
    ]
}

fn photon_feedforward_estimator() -> Outcome {
    let cfgs = photon_feedforward_configs();
    let mut freq_ok = true;
    let mut freq_detail = Vec::new();
    for (cf, ff) in &cfgs {
        let s = PhotonFeedforwardSampler::new(&cf.psi, ff, &cf.o, None, false).unwrap();
        let exact = oracle_mean_value(&cf.psi, &cf.circuit, &cf.o, &cf.oracle).unwrap().branches;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(s.sample_outcome(&mut rng)).or_default() += 1;
        }
        let mut worst: f64 = 0.0;
        for (pattern, p) in exact {
            let k = counts.get(&pattern).copied().unwrap_or(0) as f64;
            let sd = (n as f64 * p * (1.0 - p)).sqrt().max(1e-12);
            worst = worst.max((k - n as f64 * p).abs() / sd);
        }
        freq_ok &= worst <= 4.0;
        freq_detail.push(format!("{} max {:.2} sd", cf.name, worst));
    }
    let cfgs: Vec<Config> = cfgs.into_iter().map(|p| p.0).collect();
    let conf = confidence(&cfgs, 1e-9, false);
    outcome(conf.pass && freq_ok, format!("{}; outcome frequencies: {}", conf.detail, freq_detail.join(", ")))
}

fn gaussian_feedforward_estimator() -> Outcome {
    let het = {
        let first = linear(beamsplitter_matrix(2, 0, 1, 0.6, 0.3).unwrap());
        let mut gain = ComplexMatrix::zeros(2, 1);
        gain[(1, 0)] = c(0.4, 0.1);
        GaussianFeedforward::new(first, vec![0.0], gain, GaussianUnitary::identity(2)).unwrap()
    };
    let three = {
        let first = linear(beamsplitter_matrix(3, 0, 1, 0.8, 0.0).unwrap() * beamsplitter_matrix(3, 0, 2, 0.5, 0.4).unwrap());
        let mut gain = ComplexMatrix::zeros(3, 1);
        gain[(1, 0)] = c(-0.3, 0.2);
        gain[(2, 0)] = c(0.25, 0.0);
        let last = linear(beamsplitter_matrix(3, 1, 2, 0.7, 0.0).unwrap());
        GaussianFeedforward::new(first, vec![0.0], gain, last).unwrap()
    };
    let oracle = OracleConfig { cutoff: Some(16), ..OracleConfig::default() };
    let cfgs = [
        Config {
            name: "two-mode heterodyne",
            psi: ProductState::fock(&[1, 0], 1).unwrap(),
            circuit: AdaptiveCircuit::Gaussian(het),
            o: obs(vec![1], vec![projector(0, 1).unwrap()]),
            oracle,
        },
        Config {
            name: "three-mode heterodyne",
            psi: ProductState::fock(&[1, 1, 0], 1).unwrap(),
            circuit: AdaptiveCircuit::Gaussian(three),
            o: obs(vec![2], vec![projector(1, 1).unwrap()]),
            oracle,
        },
    ];
    confidence(&cfgs, 0.01, false)
}

fn antinormal_ordering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let mut worst = 0.0f64;
    for inst in 0..60 {
        let n = 1 + inst % 5;
        let cm = random_complex_matrix(n, n, &mut rng);
        let probe = random_state(&mut rng, n, 1);
        let r = oracle_expand_antinormal(&cm, &probe.to_dense(n + 1).unwrap()).unwrap();
        worst = r.direct.amps.iter().zip(&r.expansion.amps).fold(worst, |w, (a, b)| w.max((a - b).norm()));
    }
    outcome(worst <= 1e-10, format!("60 instances, max entry deviation {worst:.2e}"))
}

fn sizing_and_determinism() -> Outcome {
    let psi = ProductState::fock(&[1, 1, 0], 1).unwrap();
    let g = linear(beamsplitter_matrix(3, 0, 2, 0.9, 0.4).unwrap());
    let o = obs(vec![2], vec![projector(1, 1).unwrap()]);
    let circ = AdaptiveCircuit::Static(g);
    let mut pass = true;
    let mut notes = Vec::new();
    for (eps, delta, v) in [(0.2, 0.1, 0.7), (0.1, 0.05, 0.35), (0.3, 0.01, 1.0)] {
        let cfg = EstimatorConfig { epsilon: eps, delta, variance: VarianceMode::User(v), workers: 1, ..EstimatorConfig::default() };
        let r = estimate_mean_value(&psi, &circ, &o, &cfg).unwrap();
        let floor = sample_floor(v, eps, delta);
        let groups = group_count(delta);
        let exact = r.auto_sized && r.groups == groups && r.n_samples == floor.div_ceil(groups) * groups && r.n_samples >= floor;
        pass &= exact;
        notes.push(format!("floor {floor} -> {}", r.n_samples));
    }
    let base = EstimatorConfig { epsilon: 0.1, delta: 0.05, seed: 42, workers: 1, ..EstimatorConfig::default() };
    let a = estimate_mean_value(&psi, &circ, &o, &base).unwrap();
    let b = estimate_mean_value(&psi, &circ, &o, &base).unwrap();
    let w = estimate_mean_value(&psi, &circ, &o, &EstimatorConfig { workers: 4, ..base.clone() }).unwrap();
    let same = |x: &agsim_core::estimators::EstimateReport, y: &agsim_core::estimators::EstimateReport| {
        x.estimate == y.estimate && x.sample_variance.to_bits() == y.sample_variance.to_bits() && x.n_samples == y.n_samples
    };
    pass &= same(&a, &b) && same(&a, &w);
    outcome(pass, format!("{}; repeat identical {}, workers 1 vs 4 identical {}", notes.join(", "), same(&a, &b), same(&a, &w)))
}

fn complexity_smoke() -> Outcome {
    let r = cmd_bench(&[Suite::LoopHafnian, Suite::LinearGurvits], &BenchOptions { min_time: 0.1, ..BenchOptions::default() }).unwrap();
    let pass = r.fits.iter().all(|f| f.passed);
    let detail = r
        .fits
        .iter()
        .map(|f| {
            let steps = f.steps.iter().map(|s| format!("x{:.1}/x{:.1}", s.measured_ratio, s.model_ratio)).collect::<Vec<_>>().join(" ");
            format!("{} exponent {:.2} steps {steps}", f.suite, f.exponent)
        })
        .collect::<Vec<_>>()
        .join("; ");
    outcome(pass, detail)
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("AGSIM_ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let criteria: [Criterion; 11] = [
        ("marginal equivalence", marginal_equivalence),
        ("low-rank loop hafnian", lowrank_loop_hafnian),
        ("low-rank permanent", lowrank_permanent),
        ("low-mode amplitude", low_mode_amplitude),
        ("low-rank structure", lowrank_structure),
        ("no-feedforward estimator", no_feedforward_estimator),
        ("photon-feedforward estimator", photon_feedforward_estimator),
        ("gaussian-feedforward estimator", gaussian_feedforward_estimator),
        ("antinormal ordering", antinormal_ordering),
        ("sizing and determinism", sizing_and_determinism),
        ("complexity smoke", complexity_smoke),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let t = Instant::now();
        let r = f();
        println!("{} criterion {:>2} {name}: {} [{:.1}s]", if r.pass { "PASS" } else { "FAIL" }, i + 1, r.detail, t.elapsed().as_secs_f64());
        if !r.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
