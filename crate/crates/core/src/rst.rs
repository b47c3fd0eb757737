//! Random start training (RST) of the hyperparameter network.
//!
//! A complete course with hand-set hyperparameters is run once and its global
//! model saved after every round. Each trial then samples a configuration per
//! client and a start round `s ~ U{1..T}`, replays `T_s` rounds from the saved
//! model of round `s`, and is rewarded with the validation gain over the saved
//! model of round `min(s + T_s, T)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::fl::{
    resolve_assignment, CheckpointStore, ClientMetrics, CourseSpec, Evaluation, FlSim, LocalTrainConfig, RoundMetrics,
};
use crate::model::ParamVector;
use crate::policy::{
    deploy_assignment, reinforce_update, sample_assignment, PolicyArch, PolicyParams, RewardBaseline, TrainerConfig,
};
use crate::rng::{derive_seed, rng_for, RoundStream, SimRng};
use crate::space::{PersonalizedAssignment, SampleValue, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMetric {
    /// Decrease of the weighted validation loss.
    NegLossGain,
    /// Decrease of the log of the weighted validation loss.
    LogLossGain,
    /// Increase of the weighted validation accuracy.
    AccuracyGain,
}

impl RewardMetric {
    pub fn metric(&self, e: &Evaluation) -> f64 {
        match self {
            RewardMetric::NegLossGain => -e.loss,
            RewardMetric::LogLossGain => -libm::log(e.loss),
            RewardMetric::AccuracyGain => e.accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RstConfig {
    /// Rounds of the pretraining course, `T`.
    pub total_rounds: usize,
    /// Rounds replayed per trial, `T_s`.
    pub segment_rounds: usize,
    pub hpo_round_budget: usize,
    pub default_config: LocalTrainConfig,
    pub reward_metric: RewardMetric,
    pub seed: u64,
}

impl RstConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_rounds == 0 {
            return Err(Error::InvalidConfig("rst.total_rounds must be at least 1".into()));
        }
        if self.segment_rounds == 0 || self.segment_rounds > self.total_rounds {
            return Err(Error::InvalidConfig(format!(
                "rst.segment_rounds must be in [1, {}], got {}",
                self.total_rounds, self.segment_rounds
            )));
        }
        if self.hpo_round_budget < self.total_rounds + self.segment_rounds {
            return Err(Error::BudgetInfeasible(format!(
                "budget {} cannot cover pretraining ({}) plus one trial ({})",
                self.hpo_round_budget, self.total_rounds, self.segment_rounds
            )));
        }
        self.default_config.validate()
    }

    pub fn pretrain_stream(&self) -> RoundStream {
        RoundStream::derived(self.seed, "pretrain", &[])
    }

    pub fn trial_stream(&self, trial: usize) -> RoundStream {
        RoundStream::derived(self.seed, "trial", &[trial as u64])
    }
}

/// Seed of the initial global model shared by pretraining and every fresh
/// evaluation course of a run.
pub fn init_seed(master: u64) -> u64 {
    derive_seed(master, "init", &[])
}

/// Communication-round accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub limit: usize,
    pub consumed: usize,
}

impl Budget {
    pub fn new(limit: usize) -> Self {
        Self { limit, consumed: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.limit - self.consumed
    }

    pub fn can_afford(&self, rounds: usize) -> bool {
        rounds <= self.remaining()
    }

    pub fn consume(&mut self, rounds: usize) -> Result<()> {
        if !self.can_afford(rounds) {
            return Err(Error::BudgetInfeasible(format!(
                "{rounds} rounds requested, {} remaining",
                self.remaining()
            )));
        }
        self.consumed += rounds;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    /// Start round `s`; 0 for full-fidelity trials.
    pub start_round: usize,
    pub reference_round: usize,
    pub assignment: PersonalizedAssignment,
    pub reward: f64,
    pub rounds_consumed: usize,
    pub failed: bool,
    pub valid_before: Vec<ClientMetrics>,
    pub valid_after: Vec<ClientMetrics>,
}

/// Lowest reward seen so far; stands in for the reward of failed trials.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorstReward(Option<f64>);

impl WorstReward {
    pub fn observe(&mut self, r: f64) {
        self.0 = Some(self.0.map_or(r, |w| w.min(r)));
    }

    /// Running minimum, or -1 before any reward was observed.
    pub fn value(&self) -> f64 {
        self.0.unwrap_or(-1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub store: CheckpointStore,
    pub metrics: Vec<RoundMetrics>,
}

/// Runs the hand-set course of `T` rounds and captures every round.
pub fn rst_pretrain(sim: &FlSim<'_>, cfg: &RstConfig, budget: &mut Budget) -> Result<Pretrained> {
    cfg.validate()?;
    budget.consume(cfg.total_rounds)?;
    let w0 = sim.model.init(init_seed(cfg.seed));
    let configs = alloc::vec![cfg.default_config; sim.fed.len()];
    let spec = CourseSpec {
        capture: true,
        ..CourseSpec::fresh(cfg.total_rounds)
    };
    let out = sim.run_course(&w0, &configs, cfg.pretrain_stream(), spec)?;
    let store = out.store.expect("capture requested");
    Ok(Pretrained {
        store,
        metrics: out.metrics,
    })
}

/// Uniform start round on `1..=total_rounds`.
pub fn sample_start_round<R: Rng + ?Sized>(total_rounds: usize, rng: &mut R) -> usize {
    rng.random_range(1..=total_rounds)
}

/// Pretrained checkpoints with their cached validation evaluations.
pub struct RstContext<'a> {
    pub sim: FlSim<'a>,
    pub store: &'a CheckpointStore,
    pub cfg: &'a RstConfig,
    references: Vec<Evaluation>,
}

impl<'a> RstContext<'a> {
    pub fn new(sim: FlSim<'a>, store: &'a CheckpointStore, cfg: &'a RstConfig) -> Result<Self> {
        cfg.validate()?;
        if store.rounds() != cfg.total_rounds {
            return Err(Error::InvalidConfig(format!(
                "checkpoint store holds {} rounds, configuration expects {}",
                store.rounds(),
                cfg.total_rounds
            )));
        }
        let references = store
            .iter()
            .map(|(_, w)| sim.evaluate(w, Split::Valid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sim,
            store,
            cfg,
            references,
        })
    }

    pub fn reference(&self, round: usize) -> Result<&Evaluation> {
        self.references
            .get(round.wrapping_sub(1))
            .ok_or(Error::MissingCheckpoint(round))
    }

    /// Replays `T_s` rounds from checkpoint `start` with the given client
    /// configurations and round stream.
    pub fn replay(
        &self,
        start: usize,
        configs: &[LocalTrainConfig],
        stream: RoundStream,
    ) -> Result<(ParamVector, Evaluation)> {
        let w = self.store.get(start)?;
        let spec = CourseSpec {
            start_round: start,
            ..CourseSpec::fresh(self.cfg.segment_rounds)
        };
        let mut out = self.sim.run_course(w, configs, stream, spec)?;
        let last = out.metrics.pop().expect("at least one round").valid;
        Ok((out.final_params, last))
    }

    /// Evaluates a given assignment from start round `start`.
    pub fn trial_with(
        &self,
        trial_id: usize,
        start: usize,
        assignment: PersonalizedAssignment,
        configs: &[LocalTrainConfig],
        stream: RoundStream,
        worst: &mut WorstReward,
    ) -> Result<TrialRecord> {
        let reference_round = (start + self.cfg.segment_rounds).min(self.cfg.total_rounds);
        let reference = self.reference(reference_round)?;
        let metric = self.cfg.reward_metric;
        let (reward, failed, valid_after) = match self.replay(start, configs, stream) {
            Ok((_, after)) => {
                let r = metric.metric(&after) - metric.metric(reference);
                if r.is_finite() {
                    worst.observe(r);
                    (r, false, after.per_client)
                } else {
                    (worst.value(), true, after.per_client)
                }
            }
            Err(Error::Diverged) => (worst.value(), true, Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(TrialRecord {
            trial_id,
            start_round: start,
            reference_round,
            assignment,
            reward,
            rounds_consumed: self.cfg.segment_rounds,
            failed,
            valid_before: self.reference(start)?.per_client.clone(),
            valid_after,
        })
    }

    /// One RST trial: sample `s` and an assignment from `theta`, replay, reward.
    pub fn trial<E: AsRef<[f64]>>(
        &self,
        trial_id: usize,
        space: &SearchSpace,
        theta: &PolicyParams,
        encodings: &[E],
        worst: &mut WorstReward,
    ) -> Result<TrialRecord> {
        let mut rng = trial_rng(self.cfg.seed, trial_id);
        let start = sample_start_round(self.cfg.total_rounds, &mut rng);
        let assignment = sample_assignment(theta, space, encodings, &mut rng)?;
        let configs = resolve_assignment(space, &self.cfg.default_config, &assignment)?;
        self.trial_with(
            trial_id,
            start,
            assignment,
            &configs,
            self.cfg.trial_stream(trial_id),
            worst,
        )
    }
}

fn trial_rng(seed: u64, trial_id: usize) -> SimRng {
    rng_for(seed, "trial-sample", &[trial_id as u64])
}

/// A full-fidelity trial: a fresh course of `rounds` rounds with a sampled
/// assignment, rewarded with the negative weighted validation loss.
#[allow(clippy::too_many_arguments)]
pub fn full_fidelity_trial<E: AsRef<[f64]>>(
    sim: &FlSim<'_>,
    space: &SearchSpace,
    base: &LocalTrainConfig,
    theta: &PolicyParams,
    encodings: &[E],
    rounds: usize,
    seed: u64,
    trial_id: usize,
    worst: &mut WorstReward,
) -> Result<TrialRecord> {
    let mut rng = trial_rng(seed, trial_id);
    let assignment = sample_assignment(theta, space, encodings, &mut rng)?;
    let configs = resolve_assignment(space, base, &assignment)?;
    let w0 = sim.model.init(init_seed(seed));
    let stream = RoundStream::derived(seed, "full-trial", &[trial_id as u64]);
    let (reward, failed, valid_after) = match sim.run_course(&w0, &configs, stream, CourseSpec::fresh(rounds)) {
        Ok(mut out) => {
            let last = out.metrics.pop().expect("at least one round").valid;
            let r = -last.loss;
            if r.is_finite() {
                worst.observe(r);
                (r, false, last.per_client)
            } else {
                (worst.value(), true, last.per_client)
            }
        }
        Err(Error::Diverged) => (worst.value(), true, Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(TrialRecord {
        trial_id,
        start_round: 0,
        reference_round: 0,
        assignment,
        reward,
        rounds_consumed: rounds,
        failed,
        valid_before: Vec::new(),
        valid_after,
    })
}

/// How trials are evaluated while training the policy.
pub enum TrialMode<'a> {
    Rst(&'a RstContext<'a>),
    /// Fresh full courses of the given length.
    Full {
        rounds: usize,
    },
}

/// Argmax choice of one head for one client after one policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxRow {
    pub update: usize,
    pub client: usize,
    pub head: usize,
    pub value: SampleValue,
}

#[derive(Debug, Clone)]
pub struct HpnRun {
    pub theta: PolicyParams,
    pub trials: Vec<TrialRecord>,
    pub trace: Vec<ArgmaxRow>,
    pub updates: usize,
    pub rejected_updates: usize,
}

/// Trains the policy until the round budget is exhausted.
///
/// `budget` must already account for pretraining. Each update consumes up to
/// `trials_per_update` trials; no trial starts unless the budget covers it.
#[allow(clippy::too_many_arguments)]
pub fn train_hpn<E: AsRef<[f64]>>(
    sim: &FlSim<'_>,
    space: &SearchSpace,
    encodings: &[E],
    rst: &RstConfig,
    trainer: &TrainerConfig,
    mode: TrialMode<'_>,
    budget: &mut Budget,
) -> Result<HpnRun> {
    trainer.validate()?;
    let input_dim = encodings
        .first()
        .map(|z| z.as_ref().len())
        .ok_or_else(|| Error::InvalidConfig("no client encodings".into()))?;
    let arch = PolicyArch::for_space(space, input_dim, &trainer.hidden)?;
    let mut theta = PolicyParams::init(arch, derive_seed(trainer.seed, "policy", &[]));
    let trial_rounds = match &mode {
        TrialMode::Rst(ctx) => ctx.cfg.segment_rounds,
        TrialMode::Full { rounds } => *rounds,
    };
    if trial_rounds == 0 {
        return Err(Error::InvalidConfig("trials must run at least one round".into()));
    }
    if !budget.can_afford(trial_rounds) {
        return Err(Error::BudgetInfeasible(format!(
            "{} rounds remaining, one trial needs {trial_rounds}",
            budget.remaining()
        )));
    }
    let mut baseline = RewardBaseline::new(trainer.baseline);
    let mut worst = WorstReward::default();
    let mut trials = Vec::new();
    let mut trace = Vec::new();
    let mut updates = 0;
    let mut rejected_updates = 0;
    loop {
        let mut batch = Vec::with_capacity(trainer.trials_per_update);
        while batch.len() < trainer.trials_per_update && budget.can_afford(trial_rounds) {
            let id = trials.len();
            let rec = match &mode {
                TrialMode::Rst(ctx) => ctx.trial(id, space, &theta, encodings, &mut worst)?,
                TrialMode::Full { rounds } => full_fidelity_trial(
                    sim,
                    space,
                    &rst.default_config,
                    &theta,
                    encodings,
                    *rounds,
                    rst.seed,
                    id,
                    &mut worst,
                )?,
            };
            budget.consume(rec.rounds_consumed)?;
            batch.push((rec.assignment.clone(), rec.reward));
            trials.push(rec);
        }
        if batch.is_empty() {
            break;
        }
        let out = reinforce_update(&theta, encodings, &batch, trainer, &mut baseline)?;
        if out.rejected {
            rejected_updates += 1;
        }
        theta = out.params;
        updates += 1;
        let modes = deploy_assignment(&theta, space, encodings)?;
        for (client, c) in modes.per_client.iter().enumerate() {
            for (head, v) in c.values.iter().enumerate() {
                trace.push(ArgmaxRow {
                    update: updates,
                    client,
                    head,
                    value: *v,
                });
            }
        }
        if batch.len() < trainer.trials_per_update {
            break;
        }
    }
    Ok(HpnRun {
        theta,
        trials,
        trace,
        updates,
        rejected_updates,
    })
}

/// Number of (client, head) argmax changes at each update relative to the
/// previous one; the first update counts as zero changes.
pub fn argmax_changes(trace: &[ArgmaxRow]) -> Vec<usize> {
    let Some(last) = trace.last() else {
        return Vec::new();
    };
    let updates = last.update;
    let mut per_update: Vec<Vec<&ArgmaxRow>> = alloc::vec![Vec::new(); updates + 1];
    for row in trace {
        per_update[row.update].push(row);
    }
    (1..=updates)
        .map(|u| {
            if u == 1 {
                return 0;
            }
            per_update[u]
                .iter()
                .zip(&per_update[u - 1])
                .filter(|(a, b)| a.value != b.value)
                .count()
        })
        .collect()
}

/// Result of a fresh full course with fixed per-client configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub assignment: PersonalizedAssignment,
    /// Round with the best weighted validation accuracy (first on ties).
    pub best_round: usize,
    pub best_valid_accuracy: f64,
    pub weighted_test_accuracy: f64,
    pub per_client_test_accuracy: Vec<f64>,
    pub test_sizes: Vec<usize>,
    pub rounds_consumed: usize,
}

/// Runs a fresh course of `rounds` rounds from the run's initial model and
/// reports the test accuracy at the best-validation round.
pub fn evaluate_assignment(
    sim: &FlSim<'_>,
    space: &SearchSpace,
    base: &LocalTrainConfig,
    assignment: &PersonalizedAssignment,
    rounds: usize,
    seed: u64,
) -> Result<EvalReport> {
    let configs = resolve_assignment(space, base, assignment)?;
    let w0 = sim.model.init(init_seed(seed));
    let stream = RoundStream::derived(seed, "eval", &[]);
    let spec = CourseSpec {
        with_test: true,
        ..CourseSpec::fresh(rounds)
    };
    let out = sim.run_course(&w0, &configs, stream, spec)?;
    let mut best = &out.metrics[0];
    for m in &out.metrics[1..] {
        if m.valid.accuracy > best.valid.accuracy {
            best = m;
        }
    }
    let test = best.test.as_ref().expect("test metrics requested");
    Ok(EvalReport {
        assignment: assignment.clone(),
        best_round: best.round,
        best_valid_accuracy: best.valid.accuracy,
        weighted_test_accuracy: test.accuracy,
        per_client_test_accuracy: test.per_client.iter().map(|c| c.accuracy).collect(),
        test_sizes: test.per_client.iter().map(|c| c.size).collect(),
        rounds_consumed: rounds,
    })
}

/// Deploys the argmax configuration of every client and evaluates it.
pub fn deploy_and_evaluate<E: AsRef<[f64]>>(
    sim: &FlSim<'_>,
    space: &SearchSpace,
    base: &LocalTrainConfig,
    theta: &PolicyParams,
    encodings: &[E],
    eval_rounds: usize,
    seed: u64,
) -> Result<EvalReport> {
    let assignment = deploy_assignment(theta, space, encodings)?;
    evaluate_assignment(sim, space, base, &assignment, eval_rounds, seed)
}
