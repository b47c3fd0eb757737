//! Experiment configuration: a TOML document with one section per module.
//!
//! Every field except `data` and `space` has a default; see [`ExperimentConfig`]
//! and the section types for the values used when a field is omitted.

use std::path::{Path, PathBuf};

use fedhpn_core::baselines::{BaselineConfig, BaselineMethod};
use fedhpn_core::datagen::{ClusterSpec, DirichletSpec, PartitionSpec, SplitRatio};
use fedhpn_core::encoding::DEFAULT_ENCODING_DIM;
use fedhpn_core::fl::LocalTrainConfig;
use fedhpn_core::model::{ModelKind, ModelSpec};
use fedhpn_core::policy::{AdvantageMode, BaselineKind, TrainerConfig, DEFAULT_HIDDEN};
use fedhpn_core::rst::{RewardMetric, RstConfig};
use fedhpn_core::space::SearchSpace;
use serde::{Deserialize, Serialize};

use crate::error::{read_artifact_string, HarnessError, Result};

/// Top-level config. Defaults: `seed = 0`, `eval_rounds = 100`, no `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_rounds")]
    pub eval_rounds: usize,
    /// Run directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub local: LocalSection,
    pub space: SearchSpace,
    #[serde(default)]
    pub encoding: EncodingSection,
    #[serde(default)]
    pub rst: RstSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub baselines: Vec<BaselineSection>,
}

fn default_eval_rounds() -> usize {
    100
}

/// Data source, selected by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Feature-scale clusters. Defaults: 2 clusters of 4 clients, scales
    /// `[0.1, 10]`, 5 features, 3 classes, 100 examples per client,
    /// separation 3.
    Cluster {
        #[serde(default = "d_two")]
        num_clusters: usize,
        #[serde(default = "d_four")]
        clients_per_cluster: usize,
        #[serde(default = "d_scales")]
        feature_scales: Vec<f64>,
        #[serde(default = "d_five")]
        num_features: usize,
        #[serde(default = "d_three")]
        num_classes: usize,
        #[serde(default = "d_hundred")]
        examples_per_client: usize,
        #[serde(default = "d_sep")]
        class_separation: f64,
        #[serde(default)]
        split: SplitRatio,
    },
    /// Blobs split across clients by a Dirichlet label prior. Defaults:
    /// 10 clients, 10 classes, 10 features, 3000 examples, separation 3,
    /// at least 10 examples per client.
    Dirichlet {
        alpha: f64,
        #[serde(default = "d_ten")]
        clients: usize,
        #[serde(default = "d_ten")]
        num_classes: usize,
        #[serde(default = "d_ten")]
        num_features: usize,
        #[serde(default = "d_examples")]
        num_examples: usize,
        #[serde(default = "d_sep")]
        class_separation: f64,
        #[serde(default = "d_ten")]
        min_per_client: usize,
        #[serde(default)]
        split: SplitRatio,
    },
    /// A CSV file with a `label` column (see [`crate::csvdata`]). Rows go to
    /// clients by the `client` column when present, round-robin otherwise.
    /// `num_classes` defaults to the largest label plus one.
    Csv {
        path: PathBuf,
        clients: usize,
        #[serde(default)]
        num_classes: Option<usize>,
        #[serde(default)]
        split: SplitRatio,
    },
}

fn d_two() -> usize {
    2
}
fn d_three() -> usize {
    3
}
fn d_four() -> usize {
    4
}
fn d_five() -> usize {
    5
}
fn d_ten() -> usize {
    10
}
fn d_hundred() -> usize {
    100
}
fn d_examples() -> usize {
    3000
}
fn d_sep() -> f64 {
    3.0
}
fn d_scales() -> Vec<f64> {
    vec![0.1, 10.0]
}

/// `kind = "logistic_regression"` (default) or `kind = "feedforward"` with
/// `hidden = [..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelConfig(pub ModelKind);

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig(ModelKind::LogisticRegression)
    }
}

/// Default client training config; searched dimensions override it per
/// client. Defaults: lr 0.01, no weight decay, 5 steps, no dropout, batch 16.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub local_steps: usize,
    pub dropout: f64,
    pub batch_size: usize,
}

impl Default for LocalSection {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 0.0,
            local_steps: 5,
            dropout: 0.0,
            batch_size: 16,
        }
    }
}

impl From<LocalSection> for LocalTrainConfig {
    fn from(s: LocalSection) -> Self {
        LocalTrainConfig {
            learning_rate: s.learning_rate,
            weight_decay: s.weight_decay,
            local_steps: s.local_steps,
            dropout: s.dropout,
            batch_size: s.batch_size,
        }
    }
}

/// Defaults: 128 features, phase mode on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingSection {
    pub dim: usize,
    pub phase: bool,
}

impl Default for EncodingSection {
    fn default() -> Self {
        Self {
            dim: DEFAULT_ENCODING_DIM,
            phase: true,
        }
    }
}

/// Defaults: T = 50, T_s = 1, budget 600, reward `neg_loss_gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RstSection {
    pub total_rounds: usize,
    pub segment_rounds: usize,
    pub hpo_round_budget: usize,
    pub reward_metric: RewardMetric,
}

impl Default for RstSection {
    fn default() -> Self {
        Self {
            total_rounds: 50,
            segment_rounds: 1,
            hpo_round_budget: 600,
            reward_metric: RewardMetric::NegLossGain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialModeName {
    Rst,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineName {
    None,
    Ema,
}

/// Policy training. Defaults: RST trials, lr 0.1, EMA baseline with decay
/// 0.9, entropy 0.01, batch-ranked advantages, 5 trials per update, hidden
/// layers `[64, 64]`, full-mode trials of 50 rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub mode: TrialModeName,
    pub full_rounds: usize,
    pub policy_lr: f64,
    pub baseline: BaselineName,
    pub ema_decay: f64,
    pub entropy_coef: f64,
    pub advantage: AdvantageMode,
    pub trials_per_update: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainerSection {
    fn default() -> Self {
        Self {
            mode: TrialModeName::Rst,
            full_rounds: 50,
            policy_lr: 0.1,
            baseline: BaselineName::Ema,
            ema_decay: 0.9,
            entropy_coef: 0.01,
            advantage: AdvantageMode::Ranked,
            trials_per_update: 5,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

/// One baseline run. Defaults: 12 candidates, rounds split evenly over the
/// budget, 100 joint assignments for `rs_personalized`, repeats allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    pub method: BaselineMethod,
    #[serde(default = "d_candidates")]
    pub num_candidates: usize,
    #[serde(default)]
    pub rounds_per_candidate: Option<usize>,
    #[serde(default = "d_hundred")]
    pub subsample_size: usize,
    #[serde(default)]
    pub distinct: bool,
}

fn d_candidates() -> usize {
    12
}

impl ExperimentConfig {
    /// Parses TOML; errors name the offending field path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config(format!("{path}: {}", e.inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_artifact_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every sub-spec the pipeline will build.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: fedhpn_core::Error, field: &str| HarnessError::Config(format!("{field}: {e}"));
        match &self.data {
            DataConfig::Cluster { .. } => self.cluster_spec().unwrap().validate().map_err(|e| cfg(e, "data"))?,
            DataConfig::Dirichlet { .. } => {
                let spec = self.dirichlet_spec().unwrap();
                spec.partition.validate().map_err(|e| cfg(e, "data"))?;
                spec.split.validate().map_err(|e| cfg(e, "data.split"))?;
            }
            DataConfig::Csv { clients, split, .. } => {
                if *clients == 0 {
                    return Err(HarnessError::Config("data.clients: must be at least 1".into()));
                }
                split.validate().map_err(|e| cfg(e, "data.split"))?;
            }
        }
        self.model_spec(1, 2).map_err(|e| cfg(e, "model"))?;
        self.local_config().validate().map_err(|e| cfg(e, "local"))?;
        if self.encoding.dim == 0 {
            return Err(HarnessError::Config("encoding.dim: must be at least 1".into()));
        }
        if self.eval_rounds == 0 {
            return Err(HarnessError::Config("eval_rounds: must be at least 1".into()));
        }
        self.trainer_config(false).validate().map_err(|e| cfg(e, "trainer"))?;
        if self.trainer.mode == TrialModeName::Full && self.trainer.full_rounds == 0 {
            return Err(HarnessError::Config("trainer.full_rounds: must be at least 1".into()));
        }
        let rst = self.rst_config();
        if rst.total_rounds == 0 || rst.segment_rounds == 0 {
            return Err(HarnessError::Config(
                "rst: total_rounds and segment_rounds must be at least 1".into(),
            ));
        }
        for (i, b) in self.baselines.iter().enumerate() {
            if b.num_candidates == 0 || b.subsample_size == 0 {
                return Err(HarnessError::Config(format!(
                    "baselines[{i}]: num_candidates and subsample_size must be at least 1"
                )));
            }
        }
        Ok(())
    }

    /// Seed of the data generator. The generators derive their own labeled
    /// streams (`"client-data"`, `"base"`, `"splits"`, ...) from it.
    pub fn data_seed(&self) -> u64 {
        self.seed
    }

    pub fn cluster_spec(&self) -> Option<ClusterSpec> {
        match &self.data {
            DataConfig::Cluster {
                num_clusters,
                clients_per_cluster,
                feature_scales,
                num_features,
                num_classes,
                examples_per_client,
                class_separation,
                split,
            } => Some(ClusterSpec {
                num_clusters: *num_clusters,
                clients_per_cluster: *clients_per_cluster,
                feature_scales: feature_scales.clone(),
                num_features: *num_features,
                num_classes: *num_classes,
                examples_per_client: *examples_per_client,
                class_separation: *class_separation,
                split: *split,
                seed: self.data_seed(),
            }),
            _ => None,
        }
    }

    pub fn dirichlet_spec(&self) -> Option<DirichletSpec> {
        match &self.data {
            DataConfig::Dirichlet {
                alpha,
                clients,
                num_classes,
                num_features,
                num_examples,
                class_separation,
                min_per_client,
                split,
            } => {
                let seed = self.data_seed();
                Some(DirichletSpec {
                    num_classes: *num_classes,
                    num_features: *num_features,
                    num_examples: *num_examples,
                    class_separation: *class_separation,
                    partition: PartitionSpec {
                        n: *clients,
                        alpha: *alpha,
                        min_per_client: *min_per_client,
                        seed,
                    },
                    split: *split,
                    seed,
                })
            }
            _ => None,
        }
    }

    pub fn model_spec(&self, num_features: usize, num_classes: usize) -> fedhpn_core::Result<ModelSpec> {
        ModelSpec::new(self.model.0.clone(), num_features, num_classes)
    }

    pub fn local_config(&self) -> LocalTrainConfig {
        self.local.into()
    }

    /// Projection seed. Equal to the master seed; the projection derives its
    /// own stream under the label `"rff"`.
    pub fn encoding_seed(&self) -> u64 {
        self.seed
    }

    pub fn rst_config(&self) -> RstConfig {
        RstConfig {
            total_rounds: self.rst.total_rounds,
            segment_rounds: self.rst.segment_rounds,
            hpo_round_budget: self.rst.hpo_round_budget,
            default_config: self.local_config(),
            reward_metric: self.rst.reward_metric,
            seed: self.seed,
        }
    }

    pub fn trainer_config(&self, paper_faithful: bool) -> TrainerConfig {
        let t = &self.trainer;
        let cfg = TrainerConfig {
            policy_lr: t.policy_lr,
            baseline: match t.baseline {
                BaselineName::None => BaselineKind::None,
                BaselineName::Ema => BaselineKind::Ema { decay: t.ema_decay },
            },
            entropy_coef: t.entropy_coef,
            advantage: t.advantage,
            trials_per_update: t.trials_per_update,
            hidden: t.hidden.clone(),
            seed: self.seed,
        };
        if paper_faithful {
            cfg.paper_faithful()
        } else {
            cfg
        }
    }

    /// The configured baseline for `method`, or its defaults.
    pub fn baseline_config(&self, method: BaselineMethod) -> BaselineConfig {
        let mut cfg = BaselineConfig::new(method, d_candidates(), self.seed);
        if let Some(b) = self.baselines.iter().find(|b| b.method == method) {
            cfg.num_candidates = b.num_candidates;
            cfg.rounds_per_candidate = b.rounds_per_candidate;
            cfg.subsample_size = b.subsample_size;
            cfg.distinct = b.distinct;
        }
        cfg
    }

    /// Copy with the seed replaced, as `--seed` does.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}
