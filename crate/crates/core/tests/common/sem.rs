//! Shared fixtures for the evaluation-model suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenariofuzz::corpus::{build_corpus, CorpusParams, SeedCorpus};
use scenariofuzz::fixtures;
use scenariofuzz::map::build_topology;
use scenariofuzz::mutation::{mutate_scenario, MutationParams, Strategy};
use scenariofuzz::scenario::{ConcreteScenario, WeatherParams};
use scenariofuzz::sem::*;

pub fn corpus(map: &str) -> SeedCorpus {
    let net = fixtures::network(map).unwrap();
    let g = build_topology(&net, 5.0).unwrap();
    build_corpus(&net, &g, &CorpusParams::default()).unwrap()
}

pub fn mutants(c: &SeedCorpus, seed_index: usize, n: usize, rng_seed: u64) -> Vec<ConcreteScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    (0..n)
        .map(|_| mutate_scenario(&c.seeds[seed_index], Strategy::Random, None, &MutationParams::default(), &mut rng).unwrap())
        .collect()
}

/// 500 records over five fixed scenario layouts with uniformly random weather; label = fog > 50.
pub fn separable_set(n: usize) -> Vec<Sample> {
    let c = corpus("cross_small");
    let seed = &c.seeds[1];
    let bases = mutants(&c, 1, 5, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ranges = WeatherParams::ranges();
    (0..n)
        .map(|i| {
            let mut m = bases[i % bases.len()].clone();
            m.weather = WeatherParams::from_array(std::array::from_fn(|d| rng.random_range(ranges[d].0..ranges[d].1)));
            Sample {
                graph: scenario_to_graph(&m, seed).unwrap(),
                label: m.weather.fog > 50.0,
                key: m.hash(),
            }
        })
        .collect()
}

/// Largest relative error between analytic and central-difference gradients over
/// `n` randomly chosen parameters with a non-negligible gradient.
pub fn gradient_check(n: usize, h: f64) -> f64 {
    let c = corpus("cross_small");
    let ms = mutants(&c, 0, 6, 21);
    let graphs: Vec<ScenarioGraph> = ms.iter().map(|m| scenario_to_graph(m, &c.seeds[0]).unwrap()).collect();
    let labels = [true, false, true, false, false, true];
    let model = SemModel::new(SemConfig::default(), 5);
    let batch = model.batch(&graphs).unwrap();
    let (_, grads) = model.loss_and_grad(&batch, &labels, 99).unwrap();
    let g = grads.flatten();
    let theta = model.params.flatten();
    let candidates: Vec<usize> = (0..g.len()).filter(|&i| g[i].abs() > 1e-7).collect();
    assert!(candidates.len() >= n);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let i = candidates[rng.random_range(0..candidates.len())];
        let loss_at = |v: f64| {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[i] = v;
            m.params.set_flat(&t);
            m.train_loss(&batch, &labels, 99).unwrap()
        };
        let numeric = (loss_at(theta[i] + h) - loss_at(theta[i] - h)) / (2.0 * h);
        let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs());
        worst = worst.max(rel);
    }
    worst
}

/// Largest confidence change when every graph of a batch has its nodes and edges reordered.
pub fn permutation_gap() -> f64 {
    let c = corpus("cross_small");
    let ms = mutants(&c, 0, 8, 31);
    let graphs: Vec<ScenarioGraph> = ms.iter().map(|m| scenario_to_graph(m, &c.seeds[0]).unwrap()).collect();
    let mut model = SemModel::new(SemConfig::default(), 7);
    let samples: Vec<Sample> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| Sample {
            graph: g.clone(),
            label: i % 2 == 0,
            key: i.to_string(),
        })
        .collect();
    model
        .train(&samples, &TrainConfig { epochs: 3, ..TrainConfig::default() })
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let permuted: Vec<ScenarioGraph> = graphs
        .iter()
        .map(|g| {
            let mut order: Vec<usize> = (0..g.node_count()).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            g.permuted(&order)
        })
        .collect();
    let a = model.predict(&graphs).unwrap();
    let b = model.predict(&permuted).unwrap();
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Train on the separable set; returns (best validation accuracy, epochs run).
pub fn separable_accuracy() -> (f64, usize) {
    let samples = separable_set(500);
    let mut model = SemModel::new(SemConfig::default(), 1);
    let report = model
        .train(
            &samples,
            &TrainConfig {
                epochs: 1000,
                target_accuracy: Some(0.95),
                ..TrainConfig::default()
            },
        )
        .unwrap();
    let best = report.history.iter().map(|(_, m)| m.accuracy).fold(0.0, f64::max);
    (best, report.epochs_run)
}

/// Twenty (confidence, label) pairs for the metric definitions.
pub const METRIC_PAIRS: [(f64, bool); 20] = [
    (0.91, true),
    (0.12, false),
    (0.55, true),
    (0.47, false),
    (0.83, true),
    (0.30, false),
    (0.66, false),
    (0.74, true),
    (0.05, false),
    (0.38, true),
    (0.99, true),
    (0.21, false),
    (0.60, true),
    (0.44, false),
    (0.52, false),
    (0.88, true),
    (0.15, false),
    (0.71, true),
    (0.33, false),
    (0.80, true),
];

/// Brier score and Pearson r recomputed from raw sums, independent of the library code.
pub fn reference_brier_pearson(pairs: &[(f64, bool)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut sq) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, l) in pairs {
        let y = if l { 1.0 } else { 0.0 };
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        sq += (x - y) * (x - y);
    }
    let r = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
    (sq / n, r)
}
