use super::state::write_atomic;
use super::*;
use crate::corpus::{ScenarioSeed, SeedCorpus};
use crate::mutation::{mutate_scenario, Strategy};
use crate::rng::{derive_seed, stream};
use crate::scenario::ConcreteScenario;
use crate::sem::{filter_seeds, scenario_to_graph, Sample, SemModel, TestRecord};
use crate::sim::{run_scenario, Agent, MapContext, MisbehaviorKind, RunLimits, RunResult};
use rand::seq::IndexedRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

const TAG_SCHEDULE: u64 = 1;
const TAG_MUTATE: u64 = 2;
const TAG_RUN: u64 = 3;
const TAG_SEM_INIT: u64 = 4;
const TAG_SEM_TRAIN: u64 = 5;
/// Consecutive selections without a single runnable mutant before the campaign gives up.
const MAX_BARREN_SELECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub kind: MisbehaviorKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub mode: StrategyMode,
    pub map: String,
    pub agent: String,
    pub agent_version: String,
    pub rng_seed: u64,
    pub executions: usize,
    pub selections: usize,
    pub skipped: usize,
    pub agent_faults: usize,
    pub error_scenarios: usize,
    /// Error scenarios per misbehavior kind; a scenario can count towards several kinds.
    pub errors_by_kind: Vec<ErrorSummary>,
    pub errors: Vec<ErrorEntry>,
    /// Simulated seconds per executed scenario, in execution order.
    pub execution_time_s: Vec<f64>,
    pub total_sim_time_s: f64,
    pub sem_generations: u64,
    pub timeline: Vec<TimelineEvent>,
}

impl CampaignReport {
    pub fn from_state(cfg: &FuzzConfig, map: &str, agent: &dyn Agent, state: &CampaignState) -> Self {
        let errors_by_kind = MisbehaviorKind::ALL
            .iter()
            .map(|&kind| ErrorSummary {
                kind,
                count: state.errors.iter().filter(|e| e.kinds.contains(&kind)).count(),
            })
            .collect();
        CampaignReport {
            mode: cfg.mode,
            map: map.to_string(),
            agent: agent.name().to_string(),
            agent_version: agent.version(),
            rng_seed: cfg.rng_seed,
            executions: state.executions(),
            selections: state.selections,
            skipped: state.skipped,
            agent_faults: state.agent_faults,
            error_scenarios: state.errors.len(),
            errors_by_kind,
            errors: state.errors.clone(),
            execution_time_s: state.records.iter().map(|r| r.sim_time_s).collect(),
            total_sim_time_s: state.sim_time_s,
            sem_generations: state.sem_generation,
            timeline: state.timeline.clone(),
        }
    }

    pub fn count(&self, kind: MisbehaviorKind) -> usize {
        self.errors_by_kind.iter().find(|e| e.kind == kind).map_or(0, |e| e.count)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

enum Executed {
    Ran(Box<ExecutionRecord>),
    Skipped,
}

/// One fuzzing campaign over a corpus. State changes go through [`Campaign::emit`], which
/// journals them first when a state directory is attached.
pub struct Campaign<'a> {
    cfg: FuzzConfig,
    corpus: &'a SeedCorpus,
    ctx: &'a MapContext,
    agent: &'a mut dyn Agent,
    store: Option<StateStore>,
    pub state: CampaignState,
    /// Journal lines of an interrupted run, re-derived and checked before new work starts.
    pending: VecDeque<JournalLine>,
    journal_lines: usize,
    history: Vec<Sample>,
    published: Option<SemModel>,
    trained: Option<SemModel>,
    schedule_rng: ChaCha8Rng,
    started: Instant,
    /// Execution order of every selection and mutant hash; used for determinism checks.
    pub log: Vec<(usize, u32, String)>,
}

impl<'a> Campaign<'a> {
    pub fn new(
        cfg: FuzzConfig,
        corpus: &'a SeedCorpus,
        ctx: &'a MapContext,
        agent: &'a mut dyn Agent,
    ) -> Result<Self, FuzzError> {
        cfg.validate()?;
        let published = match &cfg.sem.checkpoint {
            Some(p) if cfg.mode.uses_sem() => Some(SemModel::load(p)?),
            _ => None,
        };
        let schedule_rng = stream(cfg.rng_seed, &[TAG_SCHEDULE]);
        let mut c = Campaign {
            cfg,
            corpus,
            ctx,
            agent,
            store: None,
            state: CampaignState::default(),
            pending: VecDeque::new(),
            journal_lines: 0,
            history: Vec::new(),
            published,
            trained: None,
            schedule_rng,
            started: Instant::now(),
            log: Vec::new(),
        };
        if let Some(path) = c.cfg.history.clone() {
            let prior: Vec<ExecutionRecord> = load_journal(&path)?
                .into_iter()
                .filter_map(|l| match l {
                    JournalLine::Exec(r) => Some(*r),
                    _ => None,
                })
                .collect();
            log::info!("{} history records from {}", prior.len(), path.display());
            for r in &prior {
                c.push_sample(&r.record);
            }
        }
        Ok(c)
    }

    /// Persist to `dir`, resuming from its journal when one exists.
    pub fn with_store(mut self, dir: impl Into<std::path::PathBuf>) -> Result<Self, FuzzError> {
        let store = StateStore::new(dir);
        let lines = store.journal()?;
        if !lines.is_empty() {
            log::info!("resuming: {} journal lines in {}", lines.len(), store.records_path().display());
        }
        self.pending = lines.into();
        self.store = Some(store);
        Ok(self)
    }

    pub fn config(&self) -> &FuzzConfig {
        &self.cfg
    }

    fn budget_exhausted(&self) -> bool {
        let b = &self.cfg.budget;
        b.executions.is_some_and(|n| self.state.executions() >= n)
            || b.seconds.is_some_and(|s| self.started.elapsed().as_secs_f64() >= s)
    }

    fn emit(&mut self, line: JournalLine) -> Result<(), FuzzError> {
        if let Some(expected) = self.pending.pop_front() {
            if expected != line {
                return Err(FuzzError::Journal {
                    line: self.journal_position(),
                    why: format!("resumed campaign diverged: journal has {expected:?}, run produced {line:?}"),
                });
            }
        } else if let Some(store) = &self.store {
            store.append(&line)?;
        }
        self.state.apply(&line);
        self.journal_lines += 1;
        Ok(())
    }

    fn journal_position(&self) -> usize {
        self.journal_lines + 1
    }

    fn push_sample(&mut self, r: &TestRecord) {
        let Some(seed) = self.corpus.seed(r.scenario.seed_id).filter(|s| s.map == r.scenario.map) else {
            log::warn!("record {} has no seed in this corpus; not used for training", r.key());
            return;
        };
        match scenario_to_graph(&r.scenario, seed) {
            Ok(graph) => self.history.push(Sample {
                graph,
                label: r.label,
                key: r.key(),
            }),
            Err(e) => log::warn!("record {}: {e}", r.key()),
        }
    }

    fn eligible_seeds(&self) -> Vec<&'a ScenarioSeed> {
        let dir = self.cfg.mutation.direction;
        let corpus: &'a SeedCorpus = self.corpus;
        corpus
            .seeds
            .iter()
            .filter(|s| self.cfg.seed.matches(s))
            .filter(|s| s.paths.iter().any(|p| dir.is_none_or(|d| p.direction == d)))
            .collect()
    }

    fn run_limits(&self) -> RunLimits {
        self.cfg.limits.into()
    }

    fn simulate(&mut self, sc: &ConcreteScenario, run_seed: u64) -> Result<RunResult, crate::sim::SimError> {
        let limits = self.run_limits();
        run_scenario(sc, self.ctx, &mut *self.agent, limits, run_seed)
    }

    fn write_artifacts(&self, r: &ExecutionRecord, run: &RunResult) -> Result<(), FuzzError> {
        let (Some(store), Some(id)) = (&self.store, &r.error_id) else {
            return Ok(());
        };
        let artifact = ErrorArtifact {
            id: id.clone(),
            execution: r.index,
            seed_id: r.seed_id,
            map: r.record.scenario.map.clone(),
            agent: run.trace.header.agent.clone(),
            agent_version: run.trace.header.agent_version.clone(),
            run_seed: r.run_seed,
            limits: self.run_limits(),
            kinds: r.kinds.clone(),
            log: run.events.clone(),
        };
        store.write_error(&r.record.scenario, &run.trace, &artifact)?;
        Ok(())
    }

    fn execute(
        &mut self,
        selection: usize,
        seed: &ScenarioSeed,
        cycle: usize,
        strategy: Strategy,
        sem_generation: u64,
        sc: &ConcreteScenario,
    ) -> Result<Executed, FuzzError> {
        let index = self.state.executions();
        let hash = sc.hash();
        self.log.push((selection, seed.id, hash.clone()));

        match self.pending.front() {
            Some(JournalLine::Exec(r)) if r.index == index && r.record.scenario == *sc => {
                let r = r.clone();
                if let (Some(store), Some(id)) = (&self.store, &r.error_id) {
                    if !store.has_error_artifacts(id) {
                        log::warn!("regenerating missing artifacts for {id}");
                        let run = self.simulate(sc, r.run_seed)?;
                        self.write_artifacts(&r, &run)?;
                    }
                }
                self.emit(JournalLine::Exec(r.clone()))?;
                self.push_sample(&r.record);
                return Ok(Executed::Ran(r));
            }
            Some(JournalLine::Skipped { scenario_hash, .. }) if *scenario_hash == hash => {
                let line = self.pending.front().cloned().expect("front exists");
                self.emit(line)?;
                return Ok(Executed::Skipped);
            }
            _ => {}
        }

        let run_seed = derive_seed(self.cfg.rng_seed, &[TAG_RUN, index as u64]);
        let run = match self.simulate(sc, run_seed) {
            Ok(run) => run,
            Err(e @ (crate::sim::SimError::SpawnCollision { .. } | crate::sim::SimError::UnknownWaypoint(_))) => {
                log::debug!("mutant {hash} not runnable: {e}");
                self.emit(JournalLine::Skipped {
                    selection,
                    cycle,
                    scenario_hash: hash,
                    agent_fault: false,
                    reason: e.to_string(),
                })?;
                return Ok(Executed::Skipped);
            }
            Err(crate::sim::SimError::Agent(fault)) => {
                log::warn!("agent fault on {hash}: {fault}");
                self.emit(JournalLine::Skipped {
                    selection,
                    cycle,
                    scenario_hash: hash,
                    agent_fault: true,
                    reason: fault.to_string(),
                })?;
                return Ok(Executed::Skipped);
            }
            Err(e) => return Err(e.into()),
        };
        let label = run.events.outcome.is_error();
        let mut kinds: Vec<MisbehaviorKind> = run.events.outcome.misbehaviors().iter().map(|m| m.kind).collect();
        kinds.sort();
        kinds.dedup();
        let record = Box::new(ExecutionRecord {
            index,
            selection,
            seed_id: seed.id,
            cycle,
            strategy,
            sem_generation,
            run_seed,
            record: TestRecord {
                scenario: sc.clone(),
                label,
                system: self.agent.name().to_string(),
                score: (!label).then_some(run.score.score),
            },
            kinds,
            sim_time_s: run.trace.frames.len().saturating_sub(1) as f64 * self.cfg.limits.dt,
            error_id: label.then(|| format!("{index:05}-{}", &hash[..12.min(hash.len())])),
        });
        self.emit(JournalLine::Exec(record.clone()))?;
        self.write_artifacts(&record, &run)?;
        if let Some(id) = &record.error_id {
            log::info!("execution {index}: error scenario {id} {:?}", record.kinds);
        }
        self.push_sample(&record.record);
        Ok(Executed::Ran(record))
    }

    fn retrain(&mut self) -> Result<(), FuzzError> {
        if self.history.len() < 2 {
            return Ok(());
        }
        let mut model = match (&self.trained, &self.published) {
            (Some(m), _) | (None, Some(m)) => m.clone(),
            (None, None) => SemModel::new(
                self.cfg.sem.model_config(),
                derive_seed(self.cfg.rng_seed, &[TAG_SEM_INIT]),
            ),
        };
        let generation = model.generation + 1;
        let checkpoint = self.store.as_ref().map(|s| s.sem_checkpoint(generation));
        let replayed = match (self.pending.front(), &checkpoint) {
            (Some(JournalLine::Retrain { generation: g, .. }), Some(p)) if *g == generation && p.is_file() => {
                SemModel::load(p).ok()
            }
            _ => None,
        };
        let accuracy = match replayed {
            Some(m) => {
                let acc = match self.pending.front() {
                    Some(JournalLine::Retrain { validation_accuracy, .. }) => *validation_accuracy,
                    _ => unreachable!("checked above"),
                };
                model = m;
                acc
            }
            None => {
                let t0 = Instant::now();
                let cfg = self.cfg.sem.train_config(derive_seed(self.cfg.rng_seed, &[TAG_SEM_TRAIN, generation]));
                let report = model.train(&self.history, &cfg)?;
                log::info!(
                    "retrained evaluation model generation {generation} on {} records in {:.2}s: validation accuracy {:.3}",
                    self.history.len(),
                    t0.elapsed().as_secs_f64(),
                    report.validation.accuracy
                );
                if let Some(p) = &checkpoint {
                    model.save(p)?;
                }
                report.validation.accuracy
            }
        };
        self.emit(JournalLine::Retrain {
            generation: model.generation,
            after_executions: self.state.executions(),
            history: self.history.len(),
            validation_accuracy: accuracy,
        })?;
        self.trained = Some(model);
        Ok(())
    }

    /// Mutate and execute one seed for up to N_c cycles; returns the first error scenario.
    pub fn fuzz_one_seed(&mut self, selection: usize, seed: &ScenarioSeed) -> Result<Option<ErrorEntry>, FuzzError> {
        let n_m = self.cfg.mutants_per_cycle();
        let n_e = self.cfg.executed;
        let mut reference: Option<ConcreteScenario> = None;
        let mut min_score = f64::INFINITY;
        for cycle in 0..self.cfg.cycles {
            if let Some(m) = self.trained.take() {
                self.published = Some(m);
            }
            let strategy = match &reference {
                Some(_) if cycle > 0 && self.cfg.mode.two_stage() => Strategy::Neighbor,
                _ => Strategy::Random,
            };
            let mut rng = stream(self.cfg.rng_seed, &[TAG_MUTATE, selection as u64, cycle as u64]);
            let mutants = (0..n_m)
                .map(|_| mutate_scenario(seed, strategy, reference.as_ref(), &self.cfg.mutation, &mut rng))
                .collect::<Result<Vec<_>, _>>()?;
            let (chosen, generation) = match (&self.published, self.cfg.mode.uses_sem()) {
                (Some(model), true) => {
                    let graphs = mutants
                        .iter()
                        .map(|m| scenario_to_graph(m, seed))
                        .collect::<Result<Vec<_>, _>>()?;
                    let confidence = model.predict(&graphs)?;
                    (filter_seeds(&confidence, n_e), model.generation)
                }
                _ => ((0..n_e).collect(), 0),
            };
            for i in chosen {
                if self.budget_exhausted() {
                    return Ok(None);
                }
                let Executed::Ran(r) = self.execute(selection, seed, cycle, strategy, generation, &mutants[i])? else {
                    continue;
                };
                if self.cfg.mode.uses_sem() && self.history.len().is_multiple_of(self.cfg.retrain_every) {
                    self.retrain()?;
                }
                if r.error_id.is_some() {
                    return Ok(self.state.errors.last().cloned());
                }
                if let Some(score) = r.record.score {
                    if score < min_score {
                        min_score = score;
                        reference = Some(mutants[i].clone());
                    }
                }
            }
        }
        Ok(None)
    }

    /// Run until the budget is spent.
    pub fn run(&mut self) -> Result<CampaignReport, FuzzError> {
        let b = self.cfg.budget;
        if b.executions == Some(0) || b.seconds == Some(0.0) {
            return Ok(self.report());
        }
        if b.executions.is_none() && b.seconds.is_none() {
            return Err(FuzzError::Config("a campaign needs an execution or time budget".into()));
        }
        if self.eligible_seeds().is_empty() {
            return Err(crate::corpus::CorpusError::NoMatch.into());
        }
        self.started = Instant::now();
        if let Some(store) = &self.store {
            store.create()?;
            let lines: Vec<JournalLine> = self.pending.iter().cloned().collect();
            store.rewrite_journal(&lines)?;
            if !store.corpus_dir().join(SeedCorpus::file_name(&self.corpus.map)).is_file() {
                self.corpus.save(&store.corpus_dir(), &self.ctx.net)?;
            }
        }
        let mut barren = 0;
        while !self.budget_exhausted() {
            let (seed, from_queue) = match self.state.queue.front() {
                Some(&s) => (s, true),
                None => {
                    let seeds = self.eligible_seeds();
                    (seeds.choose(&mut self.schedule_rng).expect("non-empty").id, false)
                }
            };
            let selection = self.state.selections;
            self.emit(JournalLine::Select {
                selection,
                seed,
                from_queue,
            })?;
            let before = self.state.executions();
            let s: &'a ScenarioSeed = self.corpus.seed(seed).ok_or(crate::corpus::CorpusError::NoMatch)?;
            let found = self.fuzz_one_seed(selection, s)?;
            barren = if self.state.executions() == before { barren + 1 } else { 0 };
            if barren >= MAX_BARREN_SELECTIONS {
                return Err(FuzzError::Config(format!(
                    "{MAX_BARREN_SELECTIONS} selections in a row produced no runnable mutant"
                )));
            }
            if found.is_some() {
                let f = self.state.frequency[&seed] - 1;
                if check_frequency(f, &mut self.schedule_rng) {
                    self.emit(JournalLine::Requeue { seed })?;
                }
            }
        }
        if !self.pending.is_empty() {
            return Err(FuzzError::Journal {
                line: self.journal_position(),
                why: format!("{} journal lines lie beyond this budget", self.pending.len()),
            });
        }
        let report = self.report();
        if let Some(store) = &self.store {
            write_atomic(&store.report_path(), report.to_json().as_bytes())?;
        }
        log::info!(
            "campaign done: {} executions, {} error scenarios, {:.1}s wall",
            report.executions,
            report.error_scenarios,
            self.started.elapsed().as_secs_f64()
        );
        Ok(report)
    }

    pub fn report(&self) -> CampaignReport {
        CampaignReport::from_state(&self.cfg, &self.corpus.map, &*self.agent, &self.state)
    }
}

/// Build and run a campaign, persisting to `state_dir` when given.
pub fn run_campaign(
    cfg: &FuzzConfig,
    corpus: &SeedCorpus,
    ctx: &MapContext,
    agent: &mut dyn Agent,
    state_dir: Option<&Path>,
) -> Result<CampaignReport, FuzzError> {
    let mut c = Campaign::new(cfg.clone(), corpus, ctx, agent)?;
    if let Some(dir) = state_dir {
        c = c.with_store(dir)?;
    }
    c.run()
}
