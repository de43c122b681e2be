//! Acceptance suite: exact property checks followed by directional
//! reproduction on synthetic desk-scale data. Prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --release --test acceptance -- 1 2 3`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use dualshift::core::cbn::CbnState;
use dualshift::core::crossmix::{crossmix, mixed_domain, sample_lambda, Pairing};
use dualshift::core::dalign::{align, DomainPriors, EmaTracker};
use dualshift::core::dataset::{generate_synthetic, Image};
use dualshift::core::metrics::{auc, ScoredSet};
use dualshift::core::model::{stack_images, Classifier, ModelConfig};
use dualshift::core::param::Param;
use dualshift::core::rng::{self, Rng};
use dualshift::core::trainer::{baseline_mixed, loss, with_flags, ExperimentConfig, RunResult};
use dualshift::core::{Dataset, Domain, Sample, SyntheticConfig, Tensor};
use rand::Rng as _;

type Outcome = (bool, String);

// ---------------------------------------------------------------- oracles

/// Textbook batch norm over NCHW-indexed values.
fn reference_bn(x: &Tensor, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor {
    let mut y = x.clone();
    for c in 0..x.c {
        let mut vals = Vec::new();
        for n in 0..x.n {
            for i in 0..x.h {
                for j in 0..x.w {
                    vals.push(x.get(n, c, i, j));
                }
            }
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for n in 0..x.n {
            for i in 0..x.h {
                for j in 0..x.w {
                    let v = (x.get(n, c, i, j) - mean) / (var + eps).sqrt();
                    y.set(n, c, i, j, gamma[c] * v + beta[c]);
                }
            }
        }
    }
    y
}

/// Pairwise AUC with ties counted as one half.
fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// One-sample KS statistic of `draws` against `cdf`.
fn ks_statistic(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

fn random_tensor(r: &mut Rng, [n, c, h, w]: [usize; 4]) -> Tensor {
    let data = (0..n * c * h * w).map(|_| r.random_range(-2.0..2.0)).collect();
    Tensor::from_cnhw(n, c, h, w, data).unwrap()
}

fn randomize(params: Vec<&mut Param>, r: &mut Rng, scale: f64) {
    for p in params {
        for v in &mut p.value {
            *v = r.random_range(-scale..scale);
        }
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

// ---------------------------------------------------------- property suite

fn cbn_degeneracy() -> Outcome {
    let mut r = rng::seeded(101);
    let mut worst: f64 = 0.0;
    let trials = 25;
    for _ in 0..trials {
        let shape = [
            r.random_range(2..6),
            r.random_range(1..6),
            r.random_range(1..6),
            r.random_range(1..6),
        ];
        let mut state = CbnState::new(shape[1], None, &mut r);
        randomize(vec![&mut state.gamma, &mut state.beta], &mut r, 1.5);
        let mlp = state.mlp.as_mut().unwrap();
        randomize(vec![&mut mlp.w1, &mut mlp.b1], &mut r, 1.0);
        let x = random_tensor(&mut r, shape);
        let e: Vec<[f64; 2]> = (0..shape[0])
            .map(|_| {
                if r.random_bool(0.5) {
                    [1.0, 0.0]
                } else {
                    [0.0, 1.0]
                }
            })
            .collect();
        let expected = reference_bn(&x, &state.gamma.value, &state.beta.value, state.eps);
        let (y, _) = state.forward_train(&x, &e).unwrap();
        let diff = y
            .to_nchw()
            .iter()
            .zip(expected.to_nchw())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    (
        worst <= 1e-12,
        format!("{trials} draws, max |cbn - bn| = {worst:.2e} (tol 1e-12)"),
    )
}

fn projected(state: &mut CbnState, x: &Tensor, e: &[[f64; 2]], proj: &[f64]) -> f64 {
    let (y, _) = state.forward_train(x, e).unwrap();
    y.to_nchw().iter().zip(proj).map(|(a, b)| a * b).sum()
}

fn cbn_gradient_error(r: &mut Rng) -> f64 {
    let step = 1e-6;
    let (n, c, h, w) = (2, 3, 4, 4);
    let mut state = CbnState::new(c, None, r);
    randomize(state.params_mut(), r, 1.0);
    let x = random_tensor(r, [n, c, h, w]);
    let e = vec![[1.0, 0.0], [0.0, 1.0]];
    let proj: Vec<f64> = (0..n * c * h * w).map(|_| r.random_range(-1.0..1.0)).collect();
    let (_, ctx) = state.forward_train(&x, &e).unwrap();
    let dx = state
        .backward(Some(&ctx), &Tensor::from_nchw(n, c, h, w, &proj).unwrap())
        .unwrap()
        .to_nchw();

    let mut worst: f64 = 0.0;
    let base = x.to_nchw();
    for i in 0..base.len() {
        let eval = |delta: f64| {
            let mut v = base.clone();
            v[i] += delta;
            projected(
                &mut state.clone(),
                &Tensor::from_nchw(n, c, h, w, &v).unwrap(),
                &e,
                &proj,
            )
        };
        worst = worst.max(rel_err(dx[i], (eval(step) - eval(-step)) / (2.0 * step)));
    }
    let grads: Vec<Vec<f64>> = state.params().iter().map(|p| p.grad.clone()).collect();
    for (b, g) in grads.iter().enumerate() {
        for (i, &analytic) in g.iter().enumerate() {
            let eval = |delta: f64| {
                let mut st = state.clone();
                st.params_mut()[b].value[i] += delta;
                projected(&mut st, &x, &e, &proj)
            };
            worst = worst.max(rel_err(analytic, (eval(step) - eval(-step)) / (2.0 * step)));
        }
    }
    worst
}

fn tiny_gradient_error(r: &mut Rng) -> f64 {
    let step = 1e-6;
    let mut model = Classifier::build(ModelConfig::tiny(), 5).unwrap();
    for norm in model.norms_mut() {
        let mlp = norm.mlp.as_mut().unwrap();
        randomize(vec![&mut mlp.w2, &mut mlp.b2], r, 0.2);
    }
    let size = model.config.input_size;
    let images: Vec<Image> = (0..4)
        .map(|_| {
            Image::new(
                size,
                size,
                (0..size * size).map(|_| r.random_range(0.0..1.0)).collect(),
            )
            .unwrap()
        })
        .collect();
    let x = stack_images(&images).unwrap();
    let domains = [Domain::Mass, Domain::Nonmass, Domain::Mass, Domain::Nonmass];
    let labels = [0.0, 1.0, 1.0, 0.4];
    let priors = DomainPriors::new(0.6, 0.4).unwrap();
    let mut tracker = EmaTracker::new(&priors, 0.99).unwrap();
    tracker.update(0.2, Domain::Mass).unwrap();
    let objective = |m: &mut Classifier| {
        let (logits, trace) = m.forward_train(&x, &domains).unwrap();
        (
            loss(&logits, &labels, &domains, &priors, &tracker, true).unwrap(),
            trace,
        )
    };
    let (out, trace) = objective(&mut model);
    model.zero_grad();
    model.backward(&trace, &out.d_logits).unwrap();

    let sizes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut i = r.random_range(0..total);
        let mut block = 0;
        while i >= sizes[block] {
            i -= sizes[block];
            block += 1;
        }
        let analytic = model.params_mut()[block].grad[i];
        let eval = |delta: f64| {
            let mut m = model.clone();
            m.params_mut()[block].value[i] += delta;
            objective(&mut m).0.value
        };
        worst = worst.max(rel_err(analytic, (eval(step) - eval(-step)) / (2.0 * step)));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut r = rng::seeded(202);
    let trials = 20;
    let cbn = (0..trials)
        .map(|_| cbn_gradient_error(&mut r))
        .fold(0.0, f64::max);
    let tiny = tiny_gradient_error(&mut r);
    (
        cbn < 1e-4 && tiny < 1e-3,
        format!("CBN max rel err {cbn:.2e} over {trials} trials (tol 1e-4); TINY 20-param max rel err {tiny:.2e} (tol 1e-3)"),
    )
}

fn da_properties() -> Outcome {
    let mut r = rng::seeded(303);
    let mut identity_failures = 0;
    for _ in 0..1000 {
        let priors = DomainPriors::new(r.random_range(0.01..0.99), r.random_range(0.01..0.99)).unwrap();
        let tracker = EmaTracker::new(&priors, 0.99).unwrap();
        let p: f64 = r.random_range(0.0..1.0);
        for d in Domain::ALL {
            if align(p, d, &priors, &tracker) != p {
                identity_failures += 1;
            }
        }
    }

    let mut order_failures = 0;
    let mut worst_auc: f64 = 0.0;
    for _ in 0..1000 {
        let priors = DomainPriors::new(r.random_range(0.05..0.95), r.random_range(0.05..0.95)).unwrap();
        let mut tracker = EmaTracker::new(&priors, 0.9).unwrap();
        for _ in 0..r.random_range(1..20) {
            tracker.update(r.random_range(0.0..1.0), Domain::Nonmass).unwrap();
        }
        let n = r.random_range(4..40);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.4))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let aligned: Vec<f64> = raw
            .iter()
            .map(|&p| align(p, Domain::Nonmass, &priors, &tracker))
            .collect();
        for i in 0..n {
            for j in 0..n {
                if raw[i] < raw[j] && aligned[i] >= aligned[j] {
                    order_failures += 1;
                }
            }
        }
        let a = auc(&ScoredSet::new(raw, labels.clone()).unwrap());
        let b = auc(&ScoredSet::new(aligned, labels).unwrap());
        worst_auc = worst_auc.max((a - b).abs());
    }
    (
        identity_failures == 0 && order_failures == 0 && worst_auc <= 1e-12,
        format!(
            "identity misses {identity_failures}/2000, ordering violations {order_failures}, max |AUC raw - aligned| {worst_auc:.1e}"
        ),
    )
}

fn sample(id: &str, domain: Domain, label: u8, pixels: Vec<f64>) -> Sample {
    Sample {
        id: id.into(),
        image: Image::new(3, 3, pixels).unwrap(),
        label,
        domain,
    }
}

fn crossmix_properties() -> Outcome {
    let mut r = rng::seeded(404);
    let mut problems = Vec::new();
    for trial in 0..500 {
        let nm = sample(
            "n",
            Domain::Nonmass,
            r.random_range(0..2),
            (0..9).map(|_| r.random_range(0.0..1.0)).collect(),
        );
        let m = sample(
            "m",
            Domain::Mass,
            r.random_range(0..2),
            (0..9).map(|_| r.random_range(0.0..1.0)).collect(),
        );
        let one = crossmix(&nm, &m, 1.0).unwrap();
        let zero = crossmix(&nm, &m, 0.0).unwrap();
        if one.image != nm.image || zero.image != m.image {
            problems.push(format!("endpoint images differ (trial {trial})"));
        }
        if one.soft_label != f64::from(nm.label) || zero.soft_label != f64::from(m.label) {
            problems.push(format!("endpoint labels differ (trial {trial})"));
        }
        let lam: f64 = r.random_range(0.0..1.0);
        let mixed = crossmix(&nm, &m, lam).unwrap();
        for ((&p, &a), &b) in mixed
            .image
            .pixels
            .iter()
            .zip(&nm.image.pixels)
            .zip(&m.image.pixels)
        {
            if p < a.min(b) || p > a.max(b) {
                problems.push(format!("pixel outside convex hull (trial {trial})"));
            }
        }
        let expected = lam * f64::from(nm.label) + (1.0 - lam) * f64::from(m.label);
        let exact = if nm.label == m.label {
            f64::from(nm.label)
        } else {
            expected
        };
        if mixed.soft_label != exact {
            problems.push(format!("label {} != {} (trial {trial})", mixed.soft_label, exact));
        }
        let domain = if lam > 0.5 { Domain::Nonmass } else { Domain::Mass };
        if mixed.domain != domain || mixed_domain(lam) != domain {
            problems.push(format!("domain rule broken at lambda {lam}"));
        }
    }
    if mixed_domain(0.5) != Domain::Mass || mixed_domain(0.5 + f64::EPSILON) != Domain::Nonmass {
        problems.push("domain rule wrong at the 0.5 boundary".into());
    }

    let draws = 100_000;
    let mut ks = Vec::new();
    for (alpha, cdf) in [
        (
            0.5,
            Box::new(|x: f64| 2.0 / PI * x.sqrt().asin()) as Box<dyn Fn(f64) -> f64>,
        ),
        (1.0, Box::new(|x: f64| x)),
    ] {
        let mut rr = rng::seeded(505 + (alpha * 10.0) as u64);
        let xs: Vec<f64> = (0..draws)
            .map(|_| sample_lambda(alpha, &mut rr).unwrap())
            .collect();
        let d = ks_statistic(xs, cdf);
        let p = ks_p_value(d, draws);
        if p <= 0.01 {
            problems.push(format!("Beta({alpha},{alpha}) KS p = {p:.4}"));
        }
        ks.push(format!("alpha={alpha}: D={d:.4}, p={p:.3}"));
    }
    let detail = format!("500 mixing trials, KS {}", ks.join("; "));
    if problems.is_empty() {
        (true, detail)
    } else {
        (false, format!("{detail}; {}", problems.join("; ")))
    }
}

fn auc_oracle() -> Outcome {
    let hand = auc(&ScoredSet::new(vec![0.1, 0.4, 0.35, 0.8], vec![0, 0, 1, 1]).unwrap());
    let mut r = rng::seeded(606);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let n = r.random_range(2..60);
        let levels = if i % 2 == 0 {
            r.random_range(2..6)
        } else {
            1_000_000
        };
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(0.5))).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let fast = auc(&ScoredSet::new(scores.clone(), labels.clone()).unwrap());
        worst = worst.max((fast - pairwise_auc(&scores, &labels)).abs());
    }
    (
        hand == 0.75 && worst <= 1e-12,
        format!("hand case {hand}; 200 instances, max |fast - pairwise| {worst:.1e}"),
    )
}

// ------------------------------------------------------- directional suite

const SEEDS: u64 = 5;
const RATIOS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

fn desk_data(seed: u64) -> Dataset {
    generate_synthetic(&SyntheticConfig {
        n_mass: 1200,
        n_nonmass: 200,
        mal_rate_mass: 0.6,
        mal_rate_nonmass: 0.4,
        image_size: 64,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn desk_base(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig::tiny(),
        seed,
        folds: 5,
        ..ExperimentConfig::desk()
    }
}

/// Runs and memoizes the directional configurations.
struct Runs {
    jobs: usize,
    data: BTreeMap<u64, Dataset>,
    results: BTreeMap<(String, u64), RunResult>,
}

impl Runs {
    fn new() -> Self {
        Self {
            jobs: std::thread::available_parallelism().map(usize::from).unwrap_or(1),
            data: BTreeMap::new(),
            results: BTreeMap::new(),
        }
    }

    fn config(name: &str, seed: u64) -> ExperimentConfig {
        let base = desk_base(seed);
        let (kind, ratio) = match name.split_once('@') {
            Some((k, r)) => (k, r.parse::<f64>().unwrap()),
            None => (name, 1.0),
        };
        let mut config = match kind {
            "mixed" => baseline_mixed(&base),
            "cbn" => with_flags(&base, (true, false, false)),
            "full" => with_flags(&base, (true, true, true)),
            "across" => {
                let mut c = with_flags(&base, (true, true, true));
                c.mix.pairing = Pairing::AcrossMalignancy;
                c
            }
            other => panic!("unknown configuration {other}"),
        };
        config.nonmass_train_ratio = ratio;
        config
    }

    fn get(&mut self, name: &str, seed: u64) -> RunResult {
        let key = (name.to_string(), seed);
        if let Some(r) = self.results.get(&key) {
            return r.clone();
        }
        let config = Self::config(name, seed);
        let data = self.data.entry(seed).or_insert_with(|| desk_data(seed));
        let started = Instant::now();
        let result = dualshift::run::run_experiment(data, &config, self.jobs, &|_| {}).unwrap();
        eprintln!(
            "    {name:<10} seed {seed}: {:.4} ± {:.4}  ({:.0}s)",
            result.mean_auc,
            result.std_auc,
            started.elapsed().as_secs_f64()
        );
        self.results.insert(key, result.clone());
        result
    }

    /// Mean over seeds of the per-run mean non-mass AUC.
    fn mean(&mut self, name: &str) -> f64 {
        (0..SEEDS).map(|s| self.get(name, s).mean_auc).sum::<f64>() / SEEDS as f64
    }
}

fn determinism(runs: &mut Runs) -> Outcome {
    let config = Runs::config("full", 0);
    let data = desk_data(0);
    let strip = |mut r: RunResult| {
        r.wall_clock_s = 0.0;
        serde_json::to_string(&r).unwrap()
    };
    let first = runs.get("full", 0);
    let second = dualshift::core::trainer::run_experiment(&data, &config).unwrap();
    let identical = strip(first.clone()) == strip(second);
    (
        identical,
        format!(
            "two 5-fold runs of the full framework (seed 0, {} epochs): JSON {}",
            config.epochs,
            if identical { "identical" } else { "differs" }
        ),
    )
}

fn pts(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn domain_shift_harm(runs: &mut Runs) -> Outcome {
    let (mixed, full) = (runs.mean("mixed"), runs.mean("full"));
    (
        mixed <= full && full - mixed >= 0.03,
        format!(
            "full {} vs naive mixed {} AUC points (need gap >= 3)",
            pts(full),
            pts(mixed)
        ),
    )
}

fn ablation_direction(runs: &mut Runs) -> Outcome {
    let (cbn, full) = (runs.mean("cbn"), runs.mean("full"));
    (
        full >= cbn + 0.01,
        format!(
            "full {} vs CBN-only {} AUC points (need gap >= 1)",
            pts(full),
            pts(cbn)
        ),
    )
}

fn ratio_direction(runs: &mut Runs) -> Outcome {
    let mut full = Vec::new();
    let mut beats = true;
    let mut cells = Vec::new();
    for ratio in RATIOS {
        let m = runs.mean(&format!("mixed@{ratio}"));
        let f = runs.mean(&format!("full@{ratio}"));
        beats &= f >= m;
        cells.push(format!("{}%: {} vs {}", (ratio * 100.0).round(), pts(f), pts(m)));
        full.push(f);
    }
    let inversions: Vec<f64> = full
        .windows(2)
        .filter(|w| w[1] < w[0])
        .map(|w| w[0] - w[1])
        .collect();
    let monotone = inversions.is_empty() || (inversions.len() == 1 && inversions[0] <= 0.005);
    (
        beats && monotone,
        format!(
            "full vs mixed {}; full-framework inversions {:?}",
            cells.join(", "),
            inversions.iter().map(|d| pts(*d)).collect::<Vec<_>>()
        ),
    )
}

fn pairing_direction(runs: &mut Runs) -> Outcome {
    let (same, across) = (runs.mean("full"), runs.mean("across"));
    (
        same >= across,
        format!(
            "same-malignancy {} vs across-malignancy {} AUC points",
            pts(same),
            pts(across)
        ),
    )
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut runs = Runs::new();
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome| {
        let status = if outcome.0 { "PASS" } else { "FAIL" };
        if !outcome.0 {
            failures += 1;
        }
        println!("{status} criterion {n:>2} {name}: {}", outcome.1);
    };

    let property: [(usize, &str, fn() -> Outcome); 5] = [
        (1, "CBN degeneracy", cbn_degeneracy),
        (2, "gradient checks", gradient_checks),
        (3, "alignment identity and monotonicity", da_properties),
        (4, "CrossMix exactness and Beta sampling", crossmix_properties),
        (5, "AUC oracle", auc_oracle),
    ];
    for (n, name, check) in property {
        if wanted(n) {
            report(n, name, check());
        }
    }

    let directional: [(usize, &str, fn(&mut Runs) -> Outcome); 5] = [
        (6, "determinism", determinism),
        (7, "domain-shift harm", domain_shift_harm),
        (8, "ablation direction", ablation_direction),
        (9, "ratio-sweep direction", ratio_direction),
        (10, "pairing direction", pairing_direction),
    ];
    let started = Instant::now();
    let mut ran_directional = false;
    for (n, name, check) in directional {
        if wanted(n) {
            let outcome = check(&mut runs);
            report(n, name, outcome);
            ran_directional |= n >= 7;
        }
    }
    if ran_directional {
        println!(
            "INFO directional training time {:.1} min on {} thread(s) (target 30 min)",
            started.elapsed().as_secs_f64() / 60.0,
            runs.jobs
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
