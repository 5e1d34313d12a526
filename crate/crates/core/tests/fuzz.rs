mod common;

use common::fuzz::{discovery, world};
use proptest::prelude::*;
use scenariofuzz::fuzz::*;
use scenariofuzz::mutation::{MutationParams, Strategy};
use scenariofuzz::scenario::ObjectKind;
use scenariofuzz::sim::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;

fn small(mode: StrategyMode, rng_seed: u64, executions: usize) -> FuzzConfig {
    FuzzConfig {
        retrain_every: 20,
        ..discovery(mode, rng_seed, executions)
    }
}

fn crash_entity(r: &RunResult) -> Option<&EntityInfo> {
    r.events.outcome.misbehaviors().iter().find_map(|m| match m.detail {
        MisbehaviorDetail::Crash { entity } => r.trace.header.entities.iter().find(|e| e.id == entity),
        _ => None,
    })
}

#[test]
fn weak_agent_hits_a_short_pedestrian_in_the_first_cycle() {
    let (corpus, ctx) = world("cross_small");
    let seed = &corpus.seeds[0];
    let cutoff = 1.0;
    let hit = (0..200).find_map(|rng_seed| {
        let mut agent = BasicAgent::weak();
        let cfg = small(StrategyMode::Rms, rng_seed, 1000);
        let mut c = Campaign::new(cfg.clone(), &corpus, &ctx, &mut agent).unwrap();
        let found = c.fuzz_one_seed(0, seed).unwrap()?;
        let rec = c.state.records.last().unwrap().clone();
        drop(c);
        if rec.cycle != 0 || !found.kinds.contains(&MisbehaviorKind::Crash) {
            return None;
        }
        let run = run_scenario(&rec.record.scenario, &ctx, &mut BasicAgent::weak(), cfg.limits.into(), rec.run_seed).unwrap();
        let e = crash_entity(&run)?;
        (e.kind == ObjectKind::Pedestrian && e.height < cutoff).then_some((rng_seed, e.height))
    });
    let (rng_seed, height) = hit.expect("some campaign seed crashes into a child pedestrian in cycle 1");
    assert!(height < cutoff, "rng seed {rng_seed}");
}

#[test]
fn careful_agent_on_empty_scenarios_finds_nothing() {
    let (corpus, ctx) = world("cross_small");
    let mut cfg = small(StrategyMode::TwoStage, 3, 1000);
    cfg.mutation = MutationParams {
        max_objects: 0,
        max_puddles: 0,
        ..MutationParams::default()
    };
    let unlit = corpus.seeds.iter().find(|s| !s.is_lighted()).expect("an unlit seed");
    let mut agent = BasicAgent::basic();
    let mut c = Campaign::new(cfg.clone(), &corpus, &ctx, &mut agent).unwrap();
    assert!(c.fuzz_one_seed(0, unlit).unwrap().is_none());
    assert_eq!(c.state.executions(), cfg.cycles * cfg.executed);
    assert!(c.state.errors.is_empty());
}

#[test]
fn without_the_model_every_mutant_runs() {
    let (corpus, ctx) = world("cross_small");
    let cfg = small(StrategyMode::TwoStage, 4, 120);
    assert_eq!(cfg.mutants_per_cycle(), 3);
    let mut agent = BasicAgent::weak();
    let mut c = Campaign::new(cfg, &corpus, &ctx, &mut agent).unwrap();
    c.run().unwrap();
    let mut per_cycle: BTreeMap<(usize, usize), Vec<bool>> = BTreeMap::new();
    for r in &c.state.records {
        per_cycle.entry((r.selection, r.cycle)).or_default().push(r.record.label);
    }
    let last = *per_cycle.keys().last().unwrap();
    for (key, labels) in per_cycle {
        if key != last && !labels.contains(&true) {
            assert_eq!(labels.len(), 3, "{key:?}");
        }
        assert!(c.state.records.iter().all(|r| r.sem_generation == 0));
    }
}

#[test]
fn zero_budget_is_a_no_op() {
    let (corpus, ctx) = world("cross_small");
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("state");
    let mut agent = BasicAgent::weak();
    let r = run_campaign(&small(StrategyMode::TwoStageSem, 1, 0), &corpus, &ctx, &mut agent, Some(&state)).unwrap();
    assert_eq!((r.executions, r.error_scenarios, r.selections), (0, 0, 0));
    assert!(r.timeline.is_empty());
    assert!(!state.exists());
}

#[test]
fn campaigns_are_deterministic() {
    let (corpus, ctx) = world("cross_small");
    let cfg = small(StrategyMode::TwoStageSem, 11, 60);
    let go = || {
        let mut agent = BasicAgent::weak();
        let mut c = Campaign::new(cfg.clone(), &corpus, &ctx, &mut agent).unwrap();
        let report = c.run().unwrap();
        (report, c.log.clone())
    };
    let (a, log_a) = go();
    let (b, log_b) = go();
    assert_eq!(a, b);
    assert_eq!(log_a, log_b);
    let (c, _) = {
        let mut agent = BasicAgent::weak();
        let mut c = Campaign::new(FuzzConfig { rng_seed: 12, ..cfg.clone() }, &corpus, &ctx, &mut agent).unwrap();
        (c.run().unwrap(), ())
    };
    assert_ne!(a.errors, c.errors);
}

#[test]
fn strategy_wiring_follows_the_mode() {
    let (corpus, ctx) = world("cross_small");
    for mode in [StrategyMode::Rms, StrategyMode::TwoStage, StrategyMode::RmsSem, StrategyMode::TwoStageSem] {
        let mut agent = BasicAgent::weak();
        let mut c = Campaign::new(small(mode, 5, 80), &corpus, &ctx, &mut agent).unwrap();
        c.run().unwrap();
        for r in &c.state.records {
            let expected = if mode.two_stage() && r.cycle > 0 { Strategy::Neighbor } else { Strategy::Random };
            assert_eq!(r.strategy, expected, "{mode:?} execution {}", r.index);
        }
        assert!(c.state.records.iter().any(|r| r.cycle > 0), "{mode:?} never reached a second cycle");
    }
}

#[test]
fn model_snapshot_changes_only_between_cycles() {
    let (corpus, ctx) = world("cross_small");
    let mut agent = BasicAgent::weak();
    let mut c = Campaign::new(small(StrategyMode::TwoStageSem, 6, 100), &corpus, &ctx, &mut agent).unwrap();
    let report = c.run().unwrap();
    let mut gen: BTreeMap<(usize, usize), BTreeSet<u64>> = BTreeMap::new();
    for r in &c.state.records {
        gen.entry((r.selection, r.cycle)).or_default().insert(r.sem_generation);
    }
    assert!(gen.values().all(|g| g.len() == 1));
    let retrains: Vec<usize> = report
        .timeline
        .iter()
        .filter_map(|e| match e {
            TimelineEvent::Retrain { execution, .. } => Some(*execution),
            _ => None,
        })
        .collect();
    assert_eq!(retrains, vec![20, 40, 60, 80, 100]);
    assert_eq!(report.sem_generations, 5);
    let used: BTreeSet<u64> = c.state.records.iter().map(|r| r.sem_generation).collect();
    assert!(used.contains(&0) && used.len() >= 4, "{used:?}");
}

#[test]
fn history_and_error_library_invariants() {
    let (corpus, ctx) = world("cross_small");
    let mut agent = BasicAgent::weak();
    let mut c = Campaign::new(small(StrategyMode::TwoStageSem, 8, 90), &corpus, &ctx, &mut agent).unwrap();
    let report = c.run().unwrap();
    let idx: Vec<usize> = c.state.records.iter().map(|r| r.index).collect();
    assert_eq!(idx, (0..90).collect::<Vec<_>>());
    assert!(report.error_scenarios <= report.executions);
    let ids: BTreeSet<&String> = report.errors.iter().map(|e| &e.id).collect();
    assert_eq!(ids.len(), report.errors.len());
    for e in &report.errors {
        let r = &c.state.records[e.execution];
        assert!(r.record.label && r.error_id.as_ref() == Some(&e.id));
    }
    let labelled = c.state.records.iter().filter(|r| r.record.label).count();
    assert_eq!(labelled, report.error_scenarios);
    assert_eq!(report.execution_time_s.len(), 90);
    assert!(report.execution_time_s.iter().all(|&t| t > 0.0 && t <= 60.0));
    for q in &c.state.queue {
        assert!(c.state.frequency[q] >= 1);
    }
}

#[test]
fn state_directory_layout() {
    let (corpus, ctx) = world("cross_small");
    let dir = tempfile::tempdir().unwrap();
    let mut agent = BasicAgent::weak();
    let report = run_campaign(&small(StrategyMode::TwoStageSem, 2, 45), &corpus, &ctx, &mut agent, Some(dir.path())).unwrap();
    let store = StateStore::new(dir.path());
    assert!(store.corpus_dir().join("cross_small.json").is_file());
    assert!(store.report_path().is_file());
    let saved: CampaignReport = serde_json::from_str(&fs::read_to_string(store.report_path()).unwrap()).unwrap();
    assert_eq!(saved, report);
    assert!(store.sem_checkpoint(1).is_file() && store.sem_checkpoint(2).is_file());
    assert!(!report.errors.is_empty());
    for e in &report.errors {
        let (sc, trace, artifact) = store.read_error(&e.id).unwrap();
        assert_eq!(sc.hash(), e.scenario_hash);
        assert_eq!(trace.header.scenario_hash, e.scenario_hash);
        assert_eq!(artifact.kinds, e.kinds);
        assert!(artifact.log.outcome.is_error());
    }
    let lines = store.journal().unwrap();
    assert_eq!(CampaignState::from_journal(&lines).errors, report.errors);
}

fn journal_text(dir: &std::path::Path) -> String {
    fs::read_to_string(dir.join("records.jsonl")).unwrap()
}

#[test]
fn interrupted_campaign_resumes_to_the_same_state() {
    let (corpus, ctx) = world("cross_small");
    let cfg = small(StrategyMode::TwoStageSem, 9, 50);
    let full = tempfile::tempdir().unwrap();
    let mut agent = BasicAgent::weak();
    let expected = run_campaign(&cfg, &corpus, &ctx, &mut agent, Some(full.path())).unwrap();
    let text = journal_text(full.path());

    // A process killed mid-campaign: partial journal with a torn last line, the
    // newest error's artifacts never written, no report.
    let cut: Vec<&str> = text.lines().collect();
    let keep = cut.len() * 3 / 5;
    let crashed = tempfile::tempdir().unwrap();
    let mut partial = cut[..keep].join("\n");
    partial.push('\n');
    partial.push_str(&cut[keep][..cut[keep].len() / 2]);
    fs::write(crashed.path().join("records.jsonl"), &partial).unwrap();
    let before = CampaignState::from_journal(&load_journal(&crashed.path().join("records.jsonl")).unwrap());
    assert_eq!(before, CampaignState::from_journal(&load_journal(&full.path().join("records.jsonl")).unwrap()[..keep]));
    let store = StateStore::new(crashed.path());
    fs::create_dir_all(store.errors_dir()).unwrap();
    for e in &before.errors[..before.errors.len() - 1] {
        let from = StateStore::new(full.path()).error_dir(&e.id);
        let to = store.error_dir(&e.id);
        fs::create_dir_all(&to).unwrap();
        for f in ["scenario.json", "trace.jsonl", "events.json"] {
            fs::copy(from.join(f), to.join(f)).unwrap();
        }
    }
    assert!(!store.has_error_artifacts(&before.errors.last().unwrap().id));

    let mut agent = BasicAgent::weak();
    let resumed = run_campaign(&cfg, &corpus, &ctx, &mut agent, Some(crashed.path())).unwrap();
    assert_eq!(resumed, expected);
    assert_eq!(journal_text(crashed.path()), text);
    for e in &expected.errors {
        assert!(store.has_error_artifacts(&e.id), "{}", e.id);
        assert_eq!(
            fs::read_to_string(store.error_dir(&e.id).join("trace.jsonl")).unwrap(),
            fs::read_to_string(StateStore::new(full.path()).error_dir(&e.id).join("trace.jsonl")).unwrap()
        );
    }
}

#[test]
fn resume_with_a_different_seed_is_rejected() {
    let (corpus, ctx) = world("cross_small");
    let dir = tempfile::tempdir().unwrap();
    let mut agent = BasicAgent::weak();
    run_campaign(&small(StrategyMode::Rms, 1, 10), &corpus, &ctx, &mut agent, Some(dir.path())).unwrap();
    let err = run_campaign(&small(StrategyMode::Rms, 2, 20), &corpus, &ctx, &mut agent, Some(dir.path())).unwrap_err();
    assert!(matches!(err, FuzzError::Journal { .. }), "{err}");
}

#[test]
fn extending_the_budget_continues_the_campaign() {
    let (corpus, ctx) = world("cross_small");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut agent = BasicAgent::weak();
    run_campaign(&small(StrategyMode::TwoStage, 3, 15), &corpus, &ctx, &mut agent, Some(a.path())).unwrap();
    let resumed = run_campaign(&small(StrategyMode::TwoStage, 3, 30), &corpus, &ctx, &mut agent, Some(a.path())).unwrap();
    let direct = run_campaign(&small(StrategyMode::TwoStage, 3, 30), &corpus, &ctx, &mut agent, Some(b.path())).unwrap();
    assert_eq!(resumed, direct);
    assert_eq!(journal_text(a.path()), journal_text(b.path()));
}

#[test]
fn earlier_history_feeds_the_first_retrain() {
    let (corpus, ctx) = world("cross_small");
    let earlier = tempfile::tempdir().unwrap();
    let mut agent = BasicAgent::weak();
    run_campaign(&small(StrategyMode::Rms, 1, 15), &corpus, &ctx, &mut agent, Some(earlier.path())).unwrap();
    let cfg = FuzzConfig {
        history: Some(earlier.path().join("records.jsonl")),
        ..small(StrategyMode::TwoStageSem, 2, 10)
    };
    let r = run_campaign(&cfg, &corpus, &ctx, &mut agent, None).unwrap();
    assert_eq!(
        r.timeline.iter().find_map(|e| match e {
            TimelineEvent::Retrain { execution, .. } => Some(*execution),
            _ => None,
        }),
        Some(5)
    );
}

#[test]
fn discovery_finds_crash_and_stuck() {
    let (corpus, ctx) = world("cross_small");
    let mut agent = BasicAgent::weak();
    let r = run_campaign(&discovery(StrategyMode::TwoStageSem, 0, 200), &corpus, &ctx, &mut agent, None).unwrap();
    assert_eq!(r.executions, 200);
    assert!(r.count(MisbehaviorKind::Crash) >= 1);
    assert!(r.count(MisbehaviorKind::Stuck) >= 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn journal_fold_matches_live_state(rng_seed in 0u64..1000, mode in 0usize..4, budget in 1usize..40) {
        let (corpus, ctx) = world("tee_small");
        let dir = tempfile::tempdir().unwrap();
        let mut agent = BasicAgent::weak();
        let cfg = small(StrategyMode::ALL[mode], rng_seed, budget);
        let mut c = Campaign::new(cfg, &corpus, &ctx, &mut agent).unwrap().with_store(dir.path()).unwrap();
        let report = c.run().unwrap();
        let folded = CampaignState::from_journal(&StateStore::new(dir.path()).journal().unwrap());
        prop_assert_eq!(&folded, &c.state);
        prop_assert_eq!(report.executions, budget);
        prop_assert!(report.error_scenarios <= report.executions);
        let total: f64 = report.execution_time_s.iter().sum();
        prop_assert!((total - report.total_sim_time_s).abs() < 1e-9);
    }
}
