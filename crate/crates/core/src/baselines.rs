//! Random-search baselines: one shared configuration for every client
//! (`rs_global`) and independent per-client draws (`rs_personalized`).
//!
//! Every candidate runs a truncated course from the same initial model with
//! the same round stream, and is scored by the best weighted validation
//! accuracy seen during that course.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::{resolve_assignment, CourseSpec, FlSim, LocalTrainConfig};
use crate::rng::{rng_for, RoundStream};
use crate::rst::{init_seed, TrialRecord};
use crate::sampling::shuffle;
use crate::space::{PersonalizedAssignment, SearchSpace, SpaceSize};

/// Largest space enumerated when distinct draws are requested.
const MAX_ENUMERATED: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    RsGlobal,
    RsPersonalized,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::RsGlobal => "rs_global",
            BaselineMethod::RsPersonalized => "rs_personalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Candidates drawn by `rs_global`.
    pub num_candidates: usize,
    /// Rounds per candidate; the budget split evenly when absent.
    pub rounds_per_candidate: Option<usize>,
    /// Joint assignments drawn by `rs_personalized`.
    pub subsample_size: usize,
    /// Draw `rs_global` candidates without replacement.
    pub distinct: bool,
    pub seed: u64,
}

impl BaselineConfig {
    pub fn new(method: BaselineMethod, num_candidates: usize, seed: u64) -> Self {
        Self {
            method,
            num_candidates,
            rounds_per_candidate: None,
            subsample_size: 100,
            distinct: false,
            seed,
        }
    }

    pub fn candidate_count(&self) -> usize {
        match self.method {
            BaselineMethod::RsGlobal => self.num_candidates,
            BaselineMethod::RsPersonalized => self.subsample_size,
        }
    }

    /// Rounds each candidate runs under the given budget.
    pub fn resolve_rounds(&self, budget: usize) -> Result<usize> {
        let k = self.candidate_count();
        if k == 0 {
            return Err(Error::InvalidConfig(format!(
                "{}: at least one candidate is required",
                self.method.name()
            )));
        }
        let rounds = self.rounds_per_candidate.unwrap_or(budget / k);
        if rounds == 0 || k * rounds > budget {
            return Err(Error::BudgetInfeasible(format!(
                "{} candidates x {} rounds does not fit a budget of {}",
                k, rounds, budget
            )));
        }
        Ok(rounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub method: BaselineMethod,
    pub candidates: Vec<TrialRecord>,
    /// Index of the winning candidate.
    pub winner: usize,
    pub assignment: PersonalizedAssignment,
    pub rounds_per_candidate: usize,
    pub rounds_consumed: usize,
}

/// Draws the candidate assignments of a baseline run.
pub fn draw_candidates(
    space: &SearchSpace,
    num_clients: usize,
    cfg: &BaselineConfig,
) -> Result<Vec<PersonalizedAssignment>> {
    let k = cfg.candidate_count();
    let mut rng = rng_for(cfg.seed, cfg.method.name(), &[]);
    match cfg.method {
        BaselineMethod::RsGlobal if cfg.distinct && space.is_discrete() => {
            let size = match space.space_size() {
                SpaceSize::Finite(n) => n,
                SpaceSize::Infinite => unreachable!("discrete space"),
            };
            let size = size.try_into().unwrap_or(u128::MAX);
            if size > MAX_ENUMERATED {
                return Err(Error::InvalidConfig(format!(
                    "distinct draws need a space of at most {MAX_ENUMERATED} configurations"
                )));
            }
            if k as u128 > size {
                return Err(Error::InvalidConfig(format!(
                    "{k} distinct candidates requested from a space of {size}"
                )));
            }
            let mut all = space.enumerate()?;
            shuffle(&mut all, &mut rng);
            all.truncate(k);
            let log_prob = -libm::log(size as f64);
            Ok(all
                .into_iter()
                .map(|mut c| {
                    c.log_prob = log_prob;
                    PersonalizedAssignment::uniform(c, num_clients)
                })
                .collect())
        }
        BaselineMethod::RsGlobal => Ok((0..k)
            .map(|_| PersonalizedAssignment::uniform(space.sample_uniform(&mut rng), num_clients))
            .collect()),
        BaselineMethod::RsPersonalized => Ok((0..k)
            .map(|_| PersonalizedAssignment {
                per_client: (0..num_clients).map(|_| space.sample_uniform(&mut rng)).collect(),
            })
            .collect()),
    }
}

/// Runs the random search and returns the candidate log and the winner.
///
/// The winner has the highest best-seen weighted validation accuracy; ties go
/// to the lower validation loss at that round, then to the earlier candidate.
pub fn run_baseline(
    sim: &FlSim<'_>,
    space: &SearchSpace,
    base: &LocalTrainConfig,
    cfg: &BaselineConfig,
    budget: usize,
) -> Result<BaselineOutcome> {
    let rounds = cfg.resolve_rounds(budget)?;
    let candidates = draw_candidates(space, sim.fed.len(), cfg)?;
    let w0 = sim.model.init(init_seed(cfg.seed));
    let stream = RoundStream::derived(cfg.seed, "candidate", &[]);
    let mut records = Vec::with_capacity(candidates.len());
    let mut best: Option<(usize, f64, f64)> = None;
    for (id, assignment) in candidates.into_iter().enumerate() {
        let configs = resolve_assignment(space, base, &assignment)?;
        let (reward, failed, valid_after) = match sim.run_course(&w0, &configs, stream, CourseSpec::fresh(rounds)) {
            Ok(out) => {
                let mut top = &out.metrics[0].valid;
                for m in &out.metrics[1..] {
                    if m.valid.accuracy > top.accuracy {
                        top = &m.valid;
                    }
                }
                let better = match best {
                    None => true,
                    Some((_, acc, loss)) => top.accuracy > acc || (top.accuracy == acc && top.loss < loss),
                };
                if better {
                    best = Some((id, top.accuracy, top.loss));
                }
                (top.accuracy, false, top.per_client.clone())
            }
            Err(Error::Diverged) => (0.0, true, Vec::new()),
            Err(e) => return Err(e),
        };
        records.push(TrialRecord {
            trial_id: id,
            start_round: 0,
            reference_round: 0,
            assignment,
            reward,
            rounds_consumed: rounds,
            failed,
            valid_before: Vec::new(),
            valid_after,
        });
    }
    let (winner, _, _) = best.ok_or(Error::Diverged)?;
    Ok(BaselineOutcome {
        method: cfg.method,
        assignment: records[winner].assignment.clone(),
        winner,
        rounds_per_candidate: rounds,
        rounds_consumed: rounds * records.len(),
        candidates: records,
    })
}
