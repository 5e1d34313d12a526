//! Scenario evaluation model: predicts whether a mutant will turn into an error scenario.

mod graph;
mod metrics;
mod model;

pub use graph::{
    preprocess_batch, scenario_to_graph, Batch, EdgeType, GraphEdge, GraphNode, NodeType, NormStats, ScenarioGraph,
    APPEARANCE_CODES, DIRECTION_CODES, EDGE_FEATURES, SIGN_CODES, WEATHER_FEATURES,
};
pub use metrics::{evaluate_scores, pearson, MetricFlags, Metrics};
pub use model::{bce_with_logit, sigmoid, Adam, BnRunning, GatParams, Mode, Params, SemConfig};

use crate::scenario::ConcreteScenario;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SemError {
    #[error("scenario is inconsistent with seed {seed}: {why}")]
    InconsistentSeed { seed: u32, why: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("need at least 2 records to train, got {0}")]
    TooFewRecords(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One executed scenario and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub scenario: ConcreteScenario,
    /// The run produced at least one misbehavior.
    pub label: bool,
    pub system: String,
    pub score: Option<f64>,
}

impl TestRecord {
    /// Identity used for the deterministic train/validation split.
    pub fn key(&self) -> String {
        format!("{}:{}", self.scenario.hash(), self.system)
    }
}

/// A graph with its label, ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: ScenarioGraph,
    pub label: bool,
    pub key: String,
}

/// Validation membership of a key: one in five by SHA-256.
pub fn is_validation_key(key: &str) -> bool {
    let d = Sha256::digest(key.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes")) % 5 == 0
}

/// Split sample indices 80/20, moving one sample across if a side would be empty.
pub fn split_indices(samples: &[Sample]) -> (Vec<usize>, Vec<usize>) {
    let (mut val, mut train): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| is_validation_key(&samples[i].key));
    if samples.len() >= 2 {
        if val.is_empty() {
            val.push(train.pop().expect("at least two samples"));
        } else if train.is_empty() {
            train.push(val.pop().expect("at least two samples"));
        }
    }
    (train, val)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Graphs per update; `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Validation metrics are recorded every this many epochs.
    pub eval_every: usize,
    /// Stop once validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: Some(32),
            seed: 0,
            eval_every: 10,
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_size: usize,
    pub validation_size: usize,
    /// Full-batch training loss before each update.
    pub train_loss: Vec<f64>,
    pub history: Vec<(usize, Metrics)>,
    pub validation: Metrics,
    pub degenerate_labels: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemModel {
    pub config: SemConfig,
    pub params: Params,
    pub running: Vec<BnRunning>,
    /// Normalization statistics of the last training set; `None` until trained.
    pub stats: Option<NormStats>,
    /// Number of completed training rounds.
    pub generation: u64,
}

pub const CHECKPOINT_FORMAT: &str = "scenariofuzz-sem";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    model: SemModel,
}

impl SemModel {
    pub fn new(config: SemConfig, seed: u64) -> SemModel {
        assert!(config.heads > 0 && config.hidden.is_multiple_of(config.heads), "hidden width must split evenly across heads");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = Params::init(&config, &mut rng);
        let running = (0..config.layers)
            .map(|_| BnRunning {
                mean: Array1::zeros(config.hidden),
                var: Array1::ones(config.hidden),
            })
            .collect();
        SemModel {
            config,
            params,
            running,
            stats: None,
            generation: 0,
        }
    }

    /// Zero the output layer so every confidence is exactly 0.5.
    pub fn zero_head(&mut self) {
        self.params.w2.fill(0.0);
        self.params.b2.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Build a batch with the stored statistics, or the batch's own before training.
    pub fn batch(&self, graphs: &[ScenarioGraph]) -> Result<Batch, SemError> {
        match &self.stats {
            Some(s) => Batch::new(graphs, s),
            None => preprocess_batch(graphs).map(|(b, _)| b),
        }
    }

    pub fn logits(&self, batch: &Batch) -> Result<Array1<f64>, SemError> {
        Ok(model::forward(&self.config, &self.params, &self.running, batch, Mode::Inference)?.logits)
    }

    /// Confidence that each graph of a preprocessed batch yields an error scenario.
    pub fn forward(&self, batch: &Batch) -> Result<Vec<f64>, SemError> {
        Ok(self.logits(batch)?.iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn predict(&self, graphs: &[ScenarioGraph]) -> Result<Vec<f64>, SemError> {
        self.forward(&self.batch(graphs)?)
    }

    /// Mean-pooled node embeddings, one row per graph.
    pub fn embed(&self, graphs: &[ScenarioGraph]) -> Result<Array2<f64>, SemError> {
        let b = self.batch(graphs)?;
        let cache = model::forward(&self.config, &self.params, &self.running, &b, Mode::Inference)?;
        Ok(model::pooled(&cache, self.config.hidden))
    }

    /// Training-mode loss and gradients. Dropout masks come from `dropout_seed`.
    pub fn loss_and_grad(&self, batch: &Batch, labels: &[bool], dropout_seed: u64) -> Result<(f64, Params), SemError> {
        let (loss, grads, _) = self.train_pass(batch, labels, dropout_seed)?;
        Ok((loss, grads))
    }

    /// Training-mode loss only, for finite-difference checks.
    pub fn train_loss(&self, batch: &Batch, labels: &[bool], dropout_seed: u64) -> Result<f64, SemError> {
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let cache = model::forward(
            &self.config,
            &self.params,
            &self.running,
            batch,
            Mode::Train { dropout_rng: &mut rng },
        )?;
        Ok(mean_bce(&cache.logits, labels))
    }

    fn train_pass(
        &self,
        batch: &Batch,
        labels: &[bool],
        dropout_seed: u64,
    ) -> Result<(f64, Params, Vec<(Array1<f64>, Array1<f64>)>), SemError> {
        if labels.len() != batch.graph_count {
            return Err(SemError::ShapeMismatch(format!("{} labels for {} graphs", labels.len(), batch.graph_count)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let cache = model::forward(
            &self.config,
            &self.params,
            &self.running,
            batch,
            Mode::Train { dropout_rng: &mut rng },
        )?;
        let n = labels.len() as f64;
        let dlogits = Array1::from_iter(
            cache
                .logits
                .iter()
                .zip(labels)
                .map(|(&z, &y)| (sigmoid(z) - f64::from(u8::from(y))) / n),
        );
        let grads = model::backward(&self.config, &self.params, batch, &cache, &dlogits);
        let loss = mean_bce(&cache.logits, labels);
        Ok((loss, grads, cache.batch_stats))
    }

    /// Full-batch training on the 80% split, validating on the remaining 20%.
    pub fn train(&mut self, samples: &[Sample], cfg: &TrainConfig) -> Result<TrainReport, SemError> {
        if samples.len() < 2 {
            return Err(SemError::TooFewRecords(samples.len()));
        }
        let (train_idx, val_idx) = split_indices(samples);
        let pick = |idx: &[usize]| -> (Vec<ScenarioGraph>, Vec<bool>) {
            idx.iter().map(|&i| (samples[i].graph.clone(), samples[i].label)).unzip()
        };
        let (train_graphs, train_labels) = pick(&train_idx);
        let (val_graphs, val_labels) = pick(&val_idx);
        let degenerate = samples.iter().all(|s| s.label) || samples.iter().all(|s| !s.label);
        if degenerate {
            log::warn!("training on a single class; metrics carry a caveat");
        }
        let stats = NormStats::from_graphs(&train_graphs);
        self.stats = Some(stats.clone());
        let full_batch = match cfg.batch_size {
            Some(n) if n < train_graphs.len() => None,
            _ => Some(Batch::new(&train_graphs, &stats)?),
        };
        let val_batch = Batch::new(&val_graphs, &stats)?;

        let mut adam = Adam::new(cfg.lr, self.param_count());
        adam.weight_decay = cfg.weight_decay;
        let mut train_loss = Vec::with_capacity(cfg.epochs);
        let mut history = Vec::new();
        let mut epochs_run = 0;
        for epoch in 0..cfg.epochs {
            let tags = [self.generation, epoch as u64];
            let mut step = |model: &mut SemModel, batch: &Batch, labels: &[bool], k: u64| -> Result<f64, SemError> {
                let dropout_seed = crate::rng::derive_seed(cfg.seed, &[tags[0], tags[1], k]);
                let (loss, grads, batch_stats) = model.train_pass(batch, labels, dropout_seed)?;
                for (run, (mean, var)) in model.running.iter_mut().zip(batch_stats) {
                    run.mean = &run.mean * (1.0 - model::BN_MOMENTUM) + &(mean * model::BN_MOMENTUM);
                    run.var = &run.var * (1.0 - model::BN_MOMENTUM) + &(var * model::BN_MOMENTUM);
                }
                adam.step(&mut model.params, &grads);
                Ok(loss)
            };
            let loss = match (&full_batch, cfg.batch_size) {
                (Some(b), _) => step(self, b, &train_labels, 0)?,
                (None, size) => {
                    let mut order: Vec<usize> = (0..train_graphs.len()).collect();
                    order.shuffle(&mut crate::rng::stream(cfg.seed, &[tags[0], tags[1], u64::MAX]));
                    let mut chunks: Vec<&[usize]> = order.chunks(size.expect("batch size set")).collect();
                    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
                        let tail = chunks.pop().expect("non-empty");
                        let last = chunks.pop().expect("non-empty");
                        chunks.push(&order[order.len() - last.len() - tail.len()..]);
                    }
                    let mut total = 0.0;
                    for (k, chunk) in chunks.iter().enumerate() {
                        let graphs: Vec<ScenarioGraph> = chunk.iter().map(|&i| train_graphs[i].clone()).collect();
                        let labels: Vec<bool> = chunk.iter().map(|&i| train_labels[i]).collect();
                        let b = Batch::new(&graphs, self.stats.as_ref().expect("set above"))?;
                        total += step(self, &b, &labels, k as u64)? * chunk.len() as f64;
                    }
                    total / train_graphs.len() as f64
                }
            };
            train_loss.push(loss);
            epochs_run = epoch + 1;
            if epochs_run % cfg.eval_every.max(1) == 0 || epochs_run == cfg.epochs {
                let m = evaluate_scores(&self.forward(&val_batch)?, &val_labels);
                let done = cfg.target_accuracy.is_some_and(|t| m.accuracy >= t);
                history.push((epochs_run, m));
                if done {
                    break;
                }
            }
        }
        self.generation += 1;
        let validation = match history.last() {
            Some((e, m)) if *e == epochs_run => m.clone(),
            _ => evaluate_scores(&self.forward(&val_batch)?, &val_labels),
        };
        Ok(TrainReport {
            epochs_run,
            train_size: train_idx.len(),
            validation_size: val_idx.len(),
            train_loss,
            history,
            validation,
            degenerate_labels: degenerate,
        })
    }

    pub fn evaluate(&self, graphs: &[ScenarioGraph], labels: &[bool]) -> Result<Metrics, SemError> {
        Ok(evaluate_scores(&self.predict(graphs)?, labels))
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        serde_json::to_string(&ck).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<SemModel, SemError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| SemError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(SemError::Checkpoint(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck.model)
    }

    pub fn save(&self, path: &Path) -> Result<(), SemError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SemModel, SemError> {
        SemModel::from_json(&std::fs::read_to_string(path)?)
    }
}

fn mean_bce(logits: &Array1<f64>, labels: &[bool]) -> f64 {
    let n = labels.len().max(1) as f64;
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| bce_with_logit(z, f64::from(u8::from(y))))
        .sum::<f64>()
        / n
}

/// Keep confident mutants (> 0.5) by descending confidence, at most `n_e`.
/// When none clears 0.5 the top `n_e` are returned anyway. Ties go to the lower index.
pub fn filter_seeds(confidences: &[f64], n_e: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    let confident: Vec<usize> = order.iter().copied().filter(|&i| confidences[i] > 0.5).collect();
    let chosen = if confident.is_empty() { order } else { confident };
    chosen.into_iter().take(n_e).collect()
}
