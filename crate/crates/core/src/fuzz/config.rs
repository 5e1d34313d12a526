use super::FuzzError;
use crate::corpus::SeedFilter;
use crate::mutation::MutationParams;
use crate::sem::{SemConfig, TrainConfig};
use crate::sim::RunLimits;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Mutation strategy and filtering combination under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyMode {
    /// Random mutation in every cycle.
    #[serde(rename = "RMS")]
    Rms,
    /// Random in the first cycle, Neighbor around the lowest-score run afterwards.
    #[serde(rename = "2SMS")]
    TwoStage,
    #[serde(rename = "RMS+SEM")]
    RmsSem,
    #[serde(rename = "2SMS+SEM")]
    TwoStageSem,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 4] = [
        StrategyMode::Rms,
        StrategyMode::TwoStage,
        StrategyMode::RmsSem,
        StrategyMode::TwoStageSem,
    ];

    pub fn uses_sem(self) -> bool {
        matches!(self, StrategyMode::RmsSem | StrategyMode::TwoStageSem)
    }

    pub fn two_stage(self) -> bool {
        matches!(self, StrategyMode::TwoStage | StrategyMode::TwoStageSem)
    }

    pub fn name(self) -> &'static str {
        match self {
            StrategyMode::Rms => "RMS",
            StrategyMode::TwoStage => "2SMS",
            StrategyMode::RmsSem => "RMS+SEM",
            StrategyMode::TwoStageSem => "2SMS+SEM",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

/// Per-run limits; the stuck timeout defaults to 30 s, unlike a bare simulator run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignLimits {
    pub horizon_s: f64,
    pub stuck_timeout_s: f64,
    pub dt: f64,
}

impl Default for CampaignLimits {
    fn default() -> Self {
        CampaignLimits {
            horizon_s: 60.0,
            stuck_timeout_s: 30.0,
            dt: crate::sim::DT,
        }
    }
}

impl From<CampaignLimits> for RunLimits {
    fn from(l: CampaignLimits) -> RunLimits {
        RunLimits {
            horizon_s: l.horizon_s,
            stuck_timeout_s: l.stuck_timeout_s,
            dt: l.dt,
        }
    }
}

/// When the campaign stops. An empty budget never stops on its own.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budget {
    pub executions: Option<usize>,
    /// Wall-clock limit. Runs cut by this limit are not reproducible.
    pub seconds: Option<f64>,
}

/// Evaluation model used inside a campaign, with its per-retrain schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemSettings {
    pub hidden: usize,
    pub heads: usize,
    pub embedding_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Epochs per retrain; training warm-starts from the previous snapshot.
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: Option<usize>,
    /// Initial model; without one, filtering is a pass-through until the first retrain.
    pub checkpoint: Option<PathBuf>,
}

impl Default for SemSettings {
    fn default() -> Self {
        SemSettings {
            hidden: 16,
            heads: 2,
            embedding_dim: 8,
            layers: 2,
            dropout: 0.1,
            epochs: 100,
            lr: 3e-3,
            weight_decay: 0.0,
            batch_size: Some(32),
            checkpoint: None,
        }
    }
}

impl SemSettings {
    pub fn model_config(&self) -> SemConfig {
        SemConfig {
            hidden: self.hidden,
            heads: self.heads,
            embedding_dim: self.embedding_dim,
            layers: self.layers,
            dropout: self.dropout,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            seed,
            eval_every: self.epochs.max(1),
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuzzConfig {
    pub mode: StrategyMode,
    /// N_c: mutation cycles per selected seed.
    pub cycles: usize,
    /// N_m: mutants per cycle; defaults to 100 with the evaluation model and 3 without.
    pub mutants: Option<usize>,
    /// N_e: mutants executed per cycle.
    pub executed: usize,
    /// tr: retrain whenever the test history size is a multiple of this.
    pub retrain_every: usize,
    pub rng_seed: u64,
    pub budget: Budget,
    /// Earlier `records.jsonl` whose records join the training history.
    pub history: Option<PathBuf>,
    pub seed: SeedFilter,
    pub limits: CampaignLimits,
    pub mutation: MutationParams,
    pub sem: SemSettings,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            mode: StrategyMode::TwoStageSem,
            cycles: 3,
            mutants: None,
            executed: 3,
            retrain_every: 1000,
            rng_seed: 0,
            budget: Budget::default(),
            history: None,
            seed: SeedFilter::default(),
            limits: CampaignLimits::default(),
            mutation: MutationParams::default(),
            sem: SemSettings::default(),
        }
    }
}

impl FuzzConfig {
    pub fn mutants_per_cycle(&self) -> usize {
        self.mutants.unwrap_or(if self.mode.uses_sem() { 100 } else { 3 })
    }

    pub fn validate(&self) -> Result<(), FuzzError> {
        let bad = |m: String| Err(FuzzError::Config(m));
        let n_m = self.mutants_per_cycle();
        if self.cycles == 0 || n_m == 0 || self.executed == 0 || self.retrain_every == 0 {
            return bad("cycles, mutants, executed and retrain_every must be at least 1".into());
        }
        if self.executed > n_m {
            return bad(format!("executed ({}) exceeds mutants per cycle ({n_m})", self.executed));
        }
        if !(self.limits.dt > 0.0 && self.limits.horizon_s > 0.0 && self.limits.stuck_timeout_s > 0.0) {
            return bad("limits must be positive".into());
        }
        if self.budget.seconds.is_some_and(|s| !(s >= 0.0)) {
            return bad("budget.seconds must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, FuzzError> {
        let cfg: FuzzConfig = toml::from_str(text).map_err(|e| FuzzError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, FuzzError> {
        let text = std::fs::read_to_string(path).map_err(|source| FuzzError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }
}
