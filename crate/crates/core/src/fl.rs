//! FedAvg simulation: local SGD, weighted aggregation, rounds and courses.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{DataSet, Federation, Split};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::rng::{RoundStream, SimRng};
use crate::sampling::permutation;
use crate::space::{DecodedConfig, PersonalizedAssignment, SearchSpace};

/// Hyperparameters of one client's local training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub local_steps: usize,
    pub dropout: f64,
    pub batch_size: usize,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 0.0,
            local_steps: 5,
            dropout: 0.0,
            batch_size: 16,
        }
    }
}

/// Dimension names understood by [`LocalTrainConfig::with_decoded`].
pub const KNOWN_DIMENSIONS: &[&str] = &[
    "learning_rate",
    "lr",
    "weight_decay",
    "wd",
    "local_steps",
    "steps",
    "dropout",
    "batch_size",
];

impl LocalTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Overrides fields named by a decoded configuration; other fields keep
    /// their values from `self`.
    pub fn with_decoded(&self, decoded: &DecodedConfig) -> Result<Self> {
        let mut cfg = *self;
        for (name, v) in &decoded.0 {
            let v = *v;
            match name.as_str() {
                "learning_rate" | "lr" => cfg.learning_rate = v,
                "weight_decay" | "wd" => cfg.weight_decay = v,
                "local_steps" | "steps" => cfg.local_steps = as_count(name, v)?,
                "dropout" => cfg.dropout = v,
                "batch_size" => cfg.batch_size = as_count(name, v)?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown hyperparameter dimension '{other}'"
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn as_count(name: &str, v: f64) -> Result<usize> {
    let r = libm::round(v);
    if v < 0.0 || (v - r).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "{name} must be a non-negative integer, got {v}"
        )));
    }
    Ok(r as usize)
}

/// Resolves every client's sampled configuration into training settings.
pub fn resolve_assignment(
    space: &SearchSpace,
    base: &LocalTrainConfig,
    assignment: &PersonalizedAssignment,
) -> Result<Vec<LocalTrainConfig>> {
    assignment
        .per_client
        .iter()
        .map(|c| base.with_decoded(&space.decode(c)?))
        .collect()
}

/// Runs `cfg.local_steps` minibatch SGD steps from `w` on `train`.
///
/// Minibatches are drawn without replacement from a fresh permutation per
/// epoch; a trailing partial batch is skipped. `w` is not modified.
pub fn local_train(
    model: &ModelSpec,
    w: &ParamVector,
    train: &DataSet,
    cfg: &LocalTrainConfig,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    cfg.validate()?;
    let mut out = w.clone();
    if cfg.local_steps == 0 {
        return Ok(out);
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = train.len();
    let bs = cfg.batch_size.min(n);
    let mut order = permutation(n, rng);
    let mut pos = 0;
    for _ in 0..cfg.local_steps {
        if pos + bs > n {
            order = permutation(n, rng);
            pos = 0;
        }
        let batch = train.subset(&order[pos..pos + bs]);
        pos += bs;
        let (_, grad) = model.loss_and_grad(&out, &batch, cfg.weight_decay, cfg.dropout, rng)?;
        for (v, g) in out.values.iter_mut().zip(&grad.values) {
            *v -= cfg.learning_rate * g;
        }
        if !out.is_finite() {
            return Err(Error::Diverged);
        }
    }
    Ok(out)
}

/// Weighted mean of client updates, `sum w_i u_i / sum w_i`.
///
/// Computed as `u_0 + sum_i (w_i / W) (u_i - u_0)` in ascending client order,
/// so identical updates reproduce their common value bit for bit.
pub fn aggregate(updates: &[(&ParamVector, f64)]) -> Result<ParamVector> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::InvalidConfig("aggregate needs at least one update".into()))?;
    let total: f64 = updates.iter().map(|(_, w)| w).sum();
    for (u, w) in updates {
        if u.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: first.len(),
                got: u.len(),
            });
        }
        if !(*w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "aggregation weights must be positive, got {w}"
            )));
        }
    }
    let mut out = (*first).clone();
    for (u, w) in &updates[1..] {
        let share = w / total;
        for ((o, ui), u0) in out.values.iter_mut().zip(&u.values).zip(&first.values) {
            *o += share * (ui - u0);
        }
    }
    Ok(out)
}

/// Runs independent per-client tasks; implementations may run them in
/// parallel but must return results in client order.
pub trait ClientExecutor: Sync {
    fn run(&self, n: usize, task: &(dyn Fn(usize) -> Result<ParamVector> + Sync)) -> Vec<Result<ParamVector>>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl ClientExecutor for Sequential {
    fn run(&self, n: usize, task: &(dyn Fn(usize) -> Result<ParamVector> + Sync)) -> Vec<Result<ParamVector>> {
        (0..n).map(task).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub size: usize,
}

/// Per-client metrics and their size-weighted aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub per_client: Vec<ClientMetrics>,
    pub loss: f64,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn from_clients(per_client: Vec<ClientMetrics>) -> Self {
        let total: usize = per_client.iter().map(|c| c.size).sum();
        let mut loss = 0.0;
        let mut accuracy = 0.0;
        for c in &per_client {
            loss += c.size as f64 * c.loss;
            accuracy += c.size as f64 * c.accuracy;
        }
        let t = total.max(1) as f64;
        Self {
            per_client,
            loss: loss / t,
            accuracy: accuracy / t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelSpec,
    /// Configuration every client trained with, when uniform.
    pub default_config: Option<LocalTrainConfig>,
    /// Seed of the round stream that produced the course.
    pub seed: u64,
}

/// Global models saved after each round `1..=T` of a course.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointStore {
    snapshots: Vec<ParamVector>,
    pub meta: CheckpointMeta,
}

impl CheckpointStore {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self {
            snapshots: Vec::new(),
            meta,
        }
    }

    /// Appends the snapshot for the next round.
    pub fn push(&mut self, w: ParamVector) {
        self.snapshots.push(w);
    }

    pub fn rounds(&self) -> usize {
        self.snapshots.len()
    }

    pub fn get(&self, round: usize) -> Result<&ParamVector> {
        if round == 0 {
            return Err(Error::MissingCheckpoint(0));
        }
        self.snapshots.get(round - 1).ok_or(Error::MissingCheckpoint(round))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &ParamVector)> {
        self.snapshots.iter().enumerate().map(|(i, w)| (i + 1, w))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub valid: Evaluation,
    pub test: Option<Evaluation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CourseSpec {
    /// Rounds already completed; the course runs rounds `start+1..=start+rounds`.
    pub start_round: usize,
    pub rounds: usize,
    pub capture: bool,
    pub with_test: bool,
}

impl CourseSpec {
    pub fn fresh(rounds: usize) -> Self {
        Self {
            start_round: 0,
            rounds,
            capture: false,
            with_test: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CourseOutput {
    pub final_params: ParamVector,
    pub store: Option<CheckpointStore>,
    pub metrics: Vec<RoundMetrics>,
}

/// A model and federation bound to a client executor.
#[derive(Clone, Copy)]
pub struct FlSim<'a> {
    pub model: &'a ModelSpec,
    pub fed: &'a Federation,
    pub exec: &'a dyn ClientExecutor,
}

impl<'a> FlSim<'a> {
    pub fn new(model: &'a ModelSpec, fed: &'a Federation) -> Self {
        Self {
            model,
            fed,
            exec: &Sequential,
        }
    }

    pub fn with_executor(mut self, exec: &'a dyn ClientExecutor) -> Self {
        self.exec = exec;
        self
    }

    /// Dropout- and rng-free evaluation on one split of every client.
    pub fn evaluate(&self, w: &ParamVector, split: Split) -> Result<Evaluation> {
        let per_client = self
            .fed
            .clients()
            .iter()
            .map(|c| {
                let data = c.split(split);
                let (loss, accuracy) = self.model.loss_and_accuracy(w, data)?;
                Ok(ClientMetrics {
                    loss,
                    accuracy,
                    size: data.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Evaluation::from_clients(per_client))
    }

    /// One communication round: broadcast, local training, aggregation
    /// weighted by training-set size.
    pub fn run_round(
        &self,
        w: &ParamVector,
        configs: &[LocalTrainConfig],
        stream: RoundStream,
        round: usize,
    ) -> Result<ParamVector> {
        let clients = self.fed.clients();
        if configs.len() != clients.len() {
            return Err(Error::LengthMismatch {
                expected: clients.len(),
                got: configs.len(),
            });
        }
        let task = |i: usize| {
            let mut rng = stream.client_rng(round, i);
            local_train(self.model, w, &clients[i].train, &configs[i], &mut rng)
        };
        let locals = self
            .exec
            .run(clients.len(), &task)
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let weighted: Vec<(&ParamVector, f64)> = locals
            .iter()
            .zip(clients)
            .map(|(u, c)| (u, c.train.len() as f64))
            .collect();
        aggregate(&weighted)
    }

    /// Runs `spec.rounds` sequential rounds from `w0`, evaluating the
    /// validation split after each round.
    pub fn run_course(
        &self,
        w0: &ParamVector,
        configs: &[LocalTrainConfig],
        stream: RoundStream,
        spec: CourseSpec,
    ) -> Result<CourseOutput> {
        if spec.rounds == 0 {
            return Err(Error::InvalidConfig("a course needs at least one round".into()));
        }
        if spec.capture && spec.start_round != 0 {
            return Err(Error::InvalidConfig(
                "checkpoint capture requires a course starting at round 0".into(),
            ));
        }
        let mut store = spec.capture.then(|| {
            let uniform = configs.windows(2).all(|p| p[0] == p[1]);
            CheckpointStore::new(CheckpointMeta {
                model: self.model.clone(),
                default_config: if uniform { configs.first().copied() } else { None },
                seed: stream.seed,
            })
        });
        let mut w = w0.clone();
        let mut metrics = Vec::with_capacity(spec.rounds);
        for r in 1..=spec.rounds {
            let round = spec.start_round + r;
            w = self.run_round(&w, configs, stream, round)?;
            if let Some(s) = store.as_mut() {
                s.push(w.clone());
            }
            let valid = self.evaluate(&w, Split::Valid)?;
            let test = if spec.with_test {
                Some(self.evaluate(&w, Split::Test)?)
            } else {
                None
            };
            metrics.push(RoundMetrics { round, valid, test });
        }
        Ok(CourseOutput {
            final_params: w,
            store,
            metrics,
        })
    }
}

/// Boxed executor, convenient for callers choosing one at run time.
pub type DynExecutor = Box<dyn ClientExecutor>;
