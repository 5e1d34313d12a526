use super::AnalysisError;
use crate::corpus::SeedCorpus;
use crate::fuzz::{ErrorArtifact, StateStore};
use crate::scenario::ConcreteScenario;
use crate::sim::{agent_by_name, run_scenario, Agent, Frame, MapContext, Trace};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub id: String,
    /// The replayed trace and event log equal the stored ones exactly.
    pub pass: bool,
    pub stored_ticks: usize,
    pub replayed_ticks: usize,
    /// Largest position difference over ego and objects, per compared tick.
    pub deviation: Vec<f64>,
    pub max_deviation: f64,
    /// First tick whose frames differ in any field.
    pub first_divergence: Option<u64>,
    pub outcome_matches: bool,
    pub stored_agent_version: String,
    pub agent_version: String,
}

impl ReplayReport {
    pub fn agent_version_mismatch(&self) -> bool {
        self.stored_agent_version != self.agent_version
    }
}

fn frame_deviation(a: &Frame, b: &Frame) -> f64 {
    let ego = a.ego.position().dist(b.ego.position());
    let objects = a
        .objects
        .iter()
        .zip(&b.objects)
        .map(|(x, y)| x.position().dist(y.position()))
        .fold(0.0, f64::max);
    ego.max(objects)
}

/// Re-run `scenario` with the stored run seed and compare with `stored`.
pub fn replay_artifacts(
    scenario: &ConcreteScenario,
    stored: &Trace,
    artifact: &ErrorArtifact,
    ctx: &MapContext,
    agent: &mut dyn Agent,
) -> Result<ReplayReport, AnalysisError> {
    let version = agent.version();
    if version != artifact.agent_version || agent.name() != artifact.agent {
        log::warn!(
            "{}: recorded with {} {}, replaying with {} {version}",
            artifact.id,
            artifact.agent,
            artifact.agent_version,
            agent.name()
        );
    }
    let run = run_scenario(scenario, ctx, agent, artifact.limits, artifact.run_seed)?;
    let deviation: Vec<f64> = stored
        .frames
        .iter()
        .zip(&run.trace.frames)
        .map(|(a, b)| frame_deviation(a, b))
        .collect();
    let first_divergence = stored
        .frames
        .iter()
        .zip(&run.trace.frames)
        .find(|(a, b)| a != b)
        .map(|(a, _)| a.tick)
        .or_else(|| {
            let n = stored.frames.len().min(run.trace.frames.len());
            (stored.frames.len() != run.trace.frames.len()).then_some(n as u64)
        });
    let outcome_matches = run.events == artifact.log;
    let pass = run.trace == *stored && outcome_matches;
    Ok(ReplayReport {
        id: artifact.id.clone(),
        pass,
        stored_ticks: stored.frames.len(),
        replayed_ticks: run.trace.frames.len(),
        max_deviation: deviation.iter().copied().fold(0.0, f64::max),
        deviation,
        first_divergence: if pass { None } else { first_divergence.or(Some(0)) },
        outcome_matches,
        stored_agent_version: artifact.agent_version.clone(),
        agent_version: version,
    })
}

/// Map context of the corpus stored under `<state>/corpus/`.
pub fn load_context(store: &StateStore, map: &str) -> Result<(SeedCorpus, MapContext), AnalysisError> {
    let dir = store.corpus_dir();
    let (corpus, net) = SeedCorpus::load(&dir, map).map_err(|e| AnalysisError::MissingArtifacts(e.to_string()))?;
    let ctx = MapContext::new(net, corpus.params.spacing).map_err(|e| AnalysisError::Malformed(e.to_string()))?;
    Ok((corpus, ctx))
}

/// Replay stored error `id`. Uses the recorded agent unless `agent` is given.
pub fn replay(store: &StateStore, id: &str, agent: Option<&mut dyn Agent>) -> Result<ReplayReport, AnalysisError> {
    if !store.has_error_artifacts(id) {
        return Err(AnalysisError::MissingArtifacts(store.error_dir(id).display().to_string()));
    }
    let (scenario, trace, artifact) = store.read_error(id).map_err(|e| AnalysisError::Malformed(e.to_string()))?;
    let (_, ctx) = load_context(store, &artifact.map)?;
    match agent {
        Some(a) => replay_artifacts(&scenario, &trace, &artifact, &ctx, a),
        None => {
            let mut a = agent_by_name(&artifact.agent).ok_or_else(|| AnalysisError::UnknownAgent(artifact.agent.clone()))?;
            replay_artifacts(&scenario, &trace, &artifact, &ctx, a.as_mut())
        }
    }
}
