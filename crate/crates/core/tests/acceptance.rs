//! Acceptance criteria 1-9, one PASS/FAIL line each.

mod common;

use common::analysis::family_pairs;
use common::fuzz::{discovery, world};
use common::sem::{gradient_check, permutation_gap, reference_brier_pearson, separable_accuracy, METRIC_PAIRS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenariofuzz::analysis::{adjusted_rand_index, cluster_error_scenarios, replay, stored_errors, EncoderConfig, FusedFeature, TrajectoryEncoder};
use scenariofuzz::corpus::{build_corpus, CorpusParams};
use scenariofuzz::fixtures;
use scenariofuzz::fuzz::{run_campaign, StateStore, StrategyMode};
use scenariofuzz::map::build_topology;
use scenariofuzz::mutation::{mutate_scenario, MutationParams, Strategy, NEIGHBOR_STEPS};
use scenariofuzz::scenario::Domain;
use scenariofuzz::sem::evaluate_scores;
use scenariofuzz::sim::{BasicAgent, MisbehaviorKind};
use serde_json::Value;
use std::collections::BTreeMap;
use std::time::{Duration, Instant};

type Verdict = Result<String, String>;

fn within(t0: Instant, limit: Duration, detail: String) -> Verdict {
    let took = t0.elapsed();
    if took < limit {
        Ok(format!("{detail}; {:.1}s", took.as_secs_f64()))
    } else {
        Err(format!("{detail}; took {:.1}s, limit {}s", took.as_secs_f64(), limit.as_secs()))
    }
}

fn ensure(ok: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(why())
    }
}

fn corpus_correctness() -> Verdict {
    let t0 = Instant::now();
    let golden: Value = serde_json::from_str(include_str!("../fixtures/golden/corpus_summary.json")).unwrap();
    let mut total = 0;
    for name in fixtures::MAP_NAMES {
        let want = &golden["maps"][name];
        let net = fixtures::network(name).map_err(|e| e.to_string())?;
        let g = build_topology(&net, 5.0).map_err(|e| e.to_string())?;
        let c = build_corpus(&net, &g, &CorpusParams::default()).map_err(|e| e.to_string())?;
        let seeds = want["seeds"].as_array().unwrap();
        ensure(c.seeds.len() == seeds.len(), || format!("{name}: {} seeds, golden {}", c.seeds.len(), seeds.len()))?;
        for (seed, w) in c.seeds.iter().zip(seeds) {
            let mut counts: BTreeMap<String, u64> = BTreeMap::new();
            for p in &seed.paths {
                *counts.entry(format!("{:?}", p.direction)).or_default() += 1;
            }
            let want_counts: BTreeMap<String, u64> =
                w["paths"].as_object().unwrap().iter().map(|(k, v)| (k.clone(), v.as_u64().unwrap())).collect();
            ensure(serde_json::to_value(seed.road_type).unwrap() == w["road_type"], || format!("{name} seed {}: road type", seed.id))?;
            ensure(counts == want_counts, || format!("{name} seed {}: directions {counts:?}", seed.id))?;
        }
        total += c.seeds.len();
    }
    within(t0, Duration::from_secs(10), format!("{total} seeds on 5 maps match golden"))
}

fn determinism() -> Verdict {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (corpus, ctx) = world("cross_small");
    let mut agent = BasicAgent::weak();
    run_campaign(&discovery(StrategyMode::Rms, 0, 100), &corpus, &ctx, &mut agent, Some(dir.path())).map_err(|e| e.to_string())?;
    let store = StateStore { root: dir.path().to_path_buf() };
    let ids = stored_errors(&store);
    ensure(ids.len() >= 20, || format!("only {} stored errors", ids.len()))?;
    let mut passed = 0;
    for id in &ids[..20] {
        let r = replay(&store, id, None).map_err(|e| e.to_string())?;
        ensure(r.pass, || format!("{id} diverged at {:?}", r.first_divergence))?;
        passed += 1;
    }
    within(t0, Duration::from_secs(120), format!("replay PASS {passed}/20"))
}

fn mutation_properties() -> Verdict {
    let t0 = Instant::now();
    let params = MutationParams::default();
    let mut neighbor_samples = 0usize;
    let mut random = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    'maps: for round in 0.. {
        for map in fixtures::MAP_NAMES {
            let net = fixtures::network(map).unwrap();
            let g = build_topology(&net, 5.0).unwrap();
            let c = build_corpus(&net, &g, &CorpusParams::default()).unwrap();
            for seed in &c.seeds {
                for _ in 0..200 {
                    let reference = mutate_scenario(seed, Strategy::Random, None, &params, &mut rng).map_err(|e| e.to_string())?;
                    reference.validate(seed).map_err(|e| format!("{map} seed {}: {e}", seed.id))?;
                    random += 1;
                    let m = mutate_scenario(seed, Strategy::Neighbor, Some(&reference), &params, &mut rng).map_err(|e| e.to_string())?;
                    m.validate(seed).map_err(|e| format!("{map} seed {}: {e}", seed.id))?;
                    for a in &m.attributes {
                        let Some(r) = reference.attribute(&a.name).filter(|r| r.domain == a.domain) else { continue };
                        let limit = match a.domain {
                            Domain::Continuous { step, .. } => NEIGHBOR_STEPS as f64 * step + 1e-9,
                            Domain::Discrete { .. } => NEIGHBOR_STEPS as f64,
                        };
                        ensure((a.value - r.value).abs() <= limit, || format!("{}: {} vs {}", a.name, a.value, r.value))?;
                        neighbor_samples += 1;
                    }
                    if random >= 100_000 && neighbor_samples >= 100_000 {
                        break 'maps;
                    }
                }
            }
        }
        ensure(round < 100, || "ran out of rounds".into())?;
    }
    within(
        t0,
        Duration::from_secs(60),
        format!("{neighbor_samples} neighbor samples within ±5 steps, {random} random mutants valid"),
    )
}

fn sem_numerics() -> Verdict {
    let t0 = Instant::now();
    let grad = gradient_check(10, 1e-4);
    ensure(grad < 1e-3, || format!("gradient relative error {grad:.2e}"))?;
    let gap = permutation_gap();
    ensure(gap < 1e-9, || format!("permutation gap {gap:.2e}"))?;
    let (acc, epochs) = separable_accuracy();
    ensure(acc >= 0.95 && epochs <= 1000, || format!("validation accuracy {acc:.3} after {epochs} epochs"))?;
    within(
        t0,
        Duration::from_secs(120),
        format!("grad err {grad:.1e}, perm gap {gap:.1e}, accuracy {acc:.3} in {epochs} epochs"),
    )
}

fn oracle_suite() -> Verdict {
    let t0 = Instant::now();
    let cases = common::oracle_cases();
    ensure(cases.len() == 10, || format!("{} oracle traces", cases.len()))?;
    let mut kinds = std::collections::BTreeSet::new();
    for case in &cases {
        common::check_oracle(case, &common::context(case.map)).map_err(|e| format!("{}: {e}", case.name))?;
        kinds.insert(case.kind);
    }
    ensure(kinds.len() == 5, || "not every misbehavior kind covered".into())?;
    within(t0, Duration::from_secs(10), "10 traces: 5 trigger, 5 near-miss twins stay silent".into())
}

struct Ablation {
    counts: BTreeMap<StrategyMode, Vec<usize>>,
    discovery: Result<(usize, usize, f64), String>,
}

fn ablation_runs() -> Ablation {
    let (corpus, ctx) = world("cross_small");
    let mut counts: BTreeMap<StrategyMode, Vec<usize>> = BTreeMap::new();
    let mut discovery_run = Err("not run".to_string());
    for mode in [StrategyMode::Rms, StrategyMode::TwoStage, StrategyMode::TwoStageSem] {
        for seed in 0..5 {
            let t0 = Instant::now();
            let mut agent = BasicAgent::weak();
            match run_campaign(&discovery(mode, seed, 200), &corpus, &ctx, &mut agent, None) {
                Ok(r) => {
                    if mode == StrategyMode::TwoStageSem && seed == 0 {
                        discovery_run = Ok((r.count(MisbehaviorKind::Crash), r.count(MisbehaviorKind::Stuck), t0.elapsed().as_secs_f64()));
                    }
                    counts.entry(mode).or_default().push(r.error_scenarios);
                }
                Err(e) => {
                    if mode == StrategyMode::TwoStageSem && seed == 0 {
                        discovery_run = Err(e.to_string());
                    }
                    counts.entry(mode).or_default().push(0);
                }
            }
        }
    }
    Ablation {
        counts,
        discovery: discovery_run,
    }
}

fn end_to_end(a: &Ablation) -> Verdict {
    let (crash, stuck, secs) = a.discovery.clone()?;
    ensure(crash >= 1 && stuck >= 1, || format!("Crash {crash}, Stuck {stuck}"))?;
    ensure(secs < 300.0, || format!("took {secs:.1}s"))?;
    Ok(format!("2SMS+SEM, 200 executions: Crash {crash}, Stuck {stuck}; {secs:.1}s"))
}

fn median(xs: &[usize]) -> usize {
    let mut v = xs.to_vec();
    v.sort();
    v[v.len() / 2]
}

fn ablation_direction(a: &Ablation) -> Verdict {
    let m = |mode| median(&a.counts[&mode]);
    let (rms, two, sem) = (m(StrategyMode::Rms), m(StrategyMode::TwoStage), m(StrategyMode::TwoStageSem));
    let detail = format!(
        "median errors RMS {rms} {:?}, 2SMS {two} {:?}, 2SMS+SEM {sem} {:?}",
        a.counts[&StrategyMode::Rms],
        a.counts[&StrategyMode::TwoStage],
        a.counts[&StrategyMode::TwoStageSem]
    );
    if sem >= two && two >= rms {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn clustering_recovery() -> Verdict {
    let t0 = Instant::now();
    let (pairs, labels) = family_pairs(20, 5);
    let (enc, _) = TrajectoryEncoder::train(&pairs, EncoderConfig::default()).map_err(|e| e.to_string())?;
    let z = enc.encode(&pairs);
    let features: Vec<FusedFeature> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| FusedFeature {
            scenario_id: p.scenario_id.clone(),
            latent: z.row(i).to_vec(),
            sem: vec![],
        })
        .collect();
    let c = cluster_error_scenarios(&features, None, 0).map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(&c.labels, &labels);
    ensure(c.k == 3 && ari >= 0.9, || format!("k {} (candidates {:?}), ARI {ari:.3}", c.k, c.candidates))?;
    within(t0, Duration::from_secs(60), format!("silhouette k = 3, ARI {ari:.3}"))
}

fn metric_definitions() -> Verdict {
    let scores: Vec<f64> = METRIC_PAIRS.iter().map(|p| p.0).collect();
    let labels: Vec<bool> = METRIC_PAIRS.iter().map(|p| p.1).collect();
    let m = evaluate_scores(&scores, &labels);
    let (brier, r) = reference_brier_pearson(&METRIC_PAIRS);
    let (db, dr) = ((m.brier - brier).abs(), (m.pearson - r).abs());
    ensure(db < 1e-9 && dr < 1e-9, || format!("Brier err {db:.1e}, Pearson err {dr:.1e}"))?;
    Ok(format!("Brier {:.6} (err {db:.1e}), Pearson {:.6} (err {dr:.1e})", m.brier, m.pearson))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict| {
        match &v {
            Ok(d) => println!("PASS C{n} {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL C{n} {name}: {d}");
            }
        }
    };
    report(1, "corpus correctness", corpus_correctness());
    report(2, "determinism", determinism());
    report(3, "mutation properties", mutation_properties());
    report(4, "SEM numerics", sem_numerics());
    report(5, "oracle suite", oracle_suite());
    let ablation = ablation_runs();
    report(6, "end-to-end discovery", end_to_end(&ablation));
    report(7, "ablation direction", ablation_direction(&ablation));
    report(8, "clustering recovery", clustering_recovery());
    report(9, "metric definitions", metric_definitions());
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
