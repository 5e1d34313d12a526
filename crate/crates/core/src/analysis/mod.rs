//! Error-scenario analysis: deterministic replay and clustering of collision scenarios by
//! trajectory shape and evaluation-model embedding.

mod cluster;
mod encoder;
mod replay;
mod trajectory;

pub use cluster::{
    adjusted_rand_index, cluster, distance_matrix, fuse_blocks, kmeans, silhouette, Cluster, Clustering, KMeansFit, MAX_K,
};
pub use encoder::{pair_matrix, Dense, EncoderConfig, EncoderReport, TrajectoryEncoder, MIN_PAIRS};
pub use replay::{load_context, replay, replay_artifacts, ReplayReport};
pub use trajectory::{extract_collision_pair, resample, CollisionTrajectoryPair, PAIR_FEATURES, RESAMPLE_POINTS, WINDOW_S};

use crate::fuzz::StateStore;
use crate::scenario::ObjectKind;
use crate::sem::{scenario_to_graph, SemModel};
use crate::sim::{MapContext, MisbehaviorKind, SimError};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("scenario {0} has no crash")]
    NoCollision(String),
    #[error("need at least {needed} items, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Clustering input for one error scenario: trajectory latent and evaluation-model embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedFeature {
    pub scenario_id: String,
    pub latent: Vec<f64>,
    pub sem: Vec<f64>,
}

impl FusedFeature {
    pub fn dim(&self) -> usize {
        self.latent.len() + self.sem.len()
    }
}

/// Block-scale the two halves of `features` and stack them into a matrix.
pub fn fused_matrix(features: &[FusedFeature]) -> Array2<f64> {
    let block = |f: &dyn Fn(&FusedFeature) -> &Vec<f64>| {
        let w = features.first().map_or(0, |x| f(x).len());
        Array2::from_shape_fn((features.len(), w), |(i, j)| f(&features[i])[j])
    };
    let latent = block(&|f| &f.latent);
    let sem = block(&|f| &f.sem);
    fuse_blocks(&[&latent, &sem])
}

pub fn cluster_error_scenarios(features: &[FusedFeature], k: Option<usize>, seed: u64) -> Result<Clustering, AnalysisError> {
    if let Some(f) = features.iter().find(|f| f.dim() != features[0].dim()) {
        return Err(AnalysisError::Malformed(format!("{}: feature width differs", f.scenario_id)));
    }
    cluster(&fused_matrix(features), k, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct AnalyzeOptions {
    pub k: Option<usize>,
    /// Keep only errors recorded with this agent.
    pub system: Option<String>,
    pub seed: u64,
    pub encoder: EncoderConfig,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCard {
    pub index: usize,
    pub size: usize,
    pub medoid: String,
    /// Directory holding the medoid's scenario and trace.
    pub medoid_dir: String,
    pub members: Vec<String>,
    pub vehicles: usize,
    pub pedestrians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub pairs: usize,
    /// `None` when too few pairs were available and raw trajectories were clustered.
    pub encoder: Option<EncoderReport>,
    pub sem_generation: Option<u64>,
    pub feature_dim: usize,
    pub k: usize,
    pub silhouette: f64,
    pub candidates: Vec<(usize, f64)>,
    pub degenerate: bool,
    pub clusters: Vec<ClusterCard>,
}

fn latest_checkpoint(store: &StateStore) -> Option<(u64, std::path::PathBuf)> {
    std::fs::read_dir(store.root.join("sem"))
        .ok()?
        .filter_map(|e| {
            let p = e.ok()?.path();
            let g = p.file_name()?.to_str()?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((g, p))
        })
        .max()
}

/// List stored error ids in lexical order.
pub fn stored_errors(store: &StateStore) -> Vec<String> {
    let mut ids: Vec<String> = std::fs::read_dir(store.errors_dir())
        .map(|rd| {
            rd.filter_map(|e| e.ok()?.file_name().into_string().ok())
                .filter(|n| !n.starts_with('.'))
                .collect()
        })
        .unwrap_or_default();
    ids.sort();
    ids
}

/// Cluster the crash scenarios stored in a campaign state directory.
pub fn analyze_state(store: &StateStore, opts: &AnalyzeOptions) -> Result<ClusterReport, AnalysisError> {
    let mut pairs = Vec::new();
    let mut scenarios = Vec::new();
    for id in stored_errors(store) {
        let (sc, trace, artifact) = store.read_error(&id).map_err(|e| AnalysisError::Malformed(e.to_string()))?;
        if opts.system.as_ref().is_some_and(|s| *s != artifact.agent) || !artifact.kinds.contains(&MisbehaviorKind::Crash) {
            continue;
        }
        pairs.push(extract_collision_pair(&id, &trace, &artifact.log)?);
        scenarios.push(sc);
    }
    if pairs.len() < 2 {
        return Err(AnalysisError::InsufficientData {
            needed: 2,
            got: pairs.len(),
        });
    }

    let (latent, encoder) = if pairs.len() >= MIN_PAIRS {
        let (enc, report) = TrajectoryEncoder::train(&pairs, EncoderConfig { seed: opts.seed, ..opts.encoder.clone() })?;
        (enc.encode(&pairs), Some(report))
    } else {
        log::warn!("{} crash pairs: clustering raw trajectories without an encoder", pairs.len());
        (pair_matrix(&pairs), None)
    };

    let mut sem_generation = None;
    let mut sem = Array2::zeros((pairs.len(), 0));
    if let Some((generation, path)) = latest_checkpoint(store) {
        let model = SemModel::load(&path).map_err(|e| AnalysisError::Malformed(e.to_string()))?;
        let mut contexts: BTreeMap<String, crate::corpus::SeedCorpus> = BTreeMap::new();
        let mut graphs = Vec::new();
        for sc in &scenarios {
            if !contexts.contains_key(&sc.map) {
                let (corpus, _): (_, MapContext) = load_context(store, &sc.map)?;
                contexts.insert(sc.map.clone(), corpus);
            }
            let seed = contexts[&sc.map]
                .seed(sc.seed_id)
                .ok_or_else(|| AnalysisError::Malformed(format!("seed {} not in corpus", sc.seed_id)))?;
            graphs.push(scenario_to_graph(sc, seed).map_err(|e| AnalysisError::Malformed(e.to_string()))?);
        }
        sem = model.embed(&graphs).map_err(|e| AnalysisError::Malformed(e.to_string()))?;
        sem_generation = Some(generation);
    }

    let features: Vec<FusedFeature> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| FusedFeature {
            scenario_id: p.scenario_id.clone(),
            latent: latent.index_axis(Axis(0), i).to_vec(),
            sem: sem.index_axis(Axis(0), i).to_vec(),
        })
        .collect();
    let c = cluster_error_scenarios(&features, opts.k, opts.seed)?;
    let clusters = c
        .clusters
        .iter()
        .enumerate()
        .map(|(index, cl)| {
            let kind_count = |k: ObjectKind| cl.members.iter().filter(|&&m| pairs[m].object_kind == k).count();
            ClusterCard {
                index,
                size: cl.members.len(),
                medoid: pairs[cl.medoid].scenario_id.clone(),
                medoid_dir: store.error_dir(&pairs[cl.medoid].scenario_id).display().to_string(),
                members: cl.members.iter().map(|&m| pairs[m].scenario_id.clone()).collect(),
                vehicles: kind_count(ObjectKind::Vehicle),
                pedestrians: kind_count(ObjectKind::Pedestrian),
            }
        })
        .collect();
    Ok(ClusterReport {
        pairs: pairs.len(),
        encoder,
        sem_generation,
        feature_dim: features[0].dim(),
        k: c.k,
        silhouette: c.silhouette,
        candidates: c.candidates,
        degenerate: c.degenerate,
        clusters,
    })
}
