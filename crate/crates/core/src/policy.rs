//! The hyperparameter network (HPN).
//!
//! A shared `tanh` trunk reads a client encoding; one linear head per search
//! dimension sits on the trunk output. A discrete head emits one logit per
//! candidate (Categorical); a continuous head emits `(mean_raw, var_raw)` for
//! a Gaussian over a latent `g`, with `variance = clamp(exp(var_raw))`. The
//! sampled `g` is squashed by a logistic sigmoid into `(0, 1)` and mapped onto
//! the dimension's range. Log-probabilities of continuous dimensions are
//! densities of `g`.
//!
//! Training is REINFORCE: `theta += alpha * mean_j(A_j * grad sum_i log P(c_ij | z_i))`,
//! optionally with a reward baseline and an entropy bonus.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::Mlp;
use crate::model::softmax;
use crate::rng::{rng_for, SimRng};
use crate::sampling::{sample_categorical, Gaussian};
use crate::space::{ConfigSample, DimensionKind, PersonalizedAssignment, SampleValue, SearchSpace};

pub const VARIANCE_MIN: f64 = 1e-6;
pub const VARIANCE_MAX: f64 = 10.0;
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Categorical { candidates: usize },
    Gaussian,
}

impl HeadKind {
    pub fn width(&self) -> usize {
        match self {
            HeadKind::Categorical { candidates } => *candidates,
            HeadKind::Gaussian => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: HeadKind,
    /// Position of the head's first output in the network output.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub heads: Vec<HeadSpec>,
}

impl PolicyArch {
    pub fn for_space(space: &SearchSpace, input_dim: usize, hidden: &[usize]) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::InvalidConfig("policy layer widths must be positive".into()));
        }
        let mut offset = 0;
        let heads = space
            .dims()
            .iter()
            .map(|d| {
                let kind = match &d.kind {
                    DimensionKind::Discrete { candidates } => HeadKind::Categorical {
                        candidates: candidates.len(),
                    },
                    DimensionKind::Continuous { .. } => HeadKind::Gaussian,
                };
                let h = HeadSpec {
                    name: d.name.clone(),
                    kind,
                    offset,
                };
                offset += kind.width();
                h
            })
            .collect();
        Ok(Self {
            input_dim,
            hidden: hidden.to_vec(),
            heads,
        })
    }

    /// Factor applied to encodings before the trunk.
    pub fn input_scale(&self) -> f64 {
        libm::sqrt(self.input_dim as f64 / 2.0)
    }

    pub fn output_width(&self) -> usize {
        self.heads.iter().map(|h| h.kind.width()).sum()
    }

    pub fn mlp(&self) -> Mlp {
        let mut sizes = vec![self.input_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(self.output_width());
        Mlp::new(sizes)
    }

    pub fn param_count(&self) -> usize {
        self.mlp().param_count()
    }

    /// Whether the heads line up with `space`, dimension by dimension.
    pub fn matches(&self, space: &SearchSpace) -> bool {
        self.heads.len() == space.len()
            && self.heads.iter().zip(space.dims()).all(|(h, d)| {
                h.name == d.name
                    && match (&h.kind, &d.kind) {
                        (HeadKind::Categorical { candidates }, DimensionKind::Discrete { candidates: c }) => {
                            *candidates == c.len()
                        }
                        (HeadKind::Gaussian, DimensionKind::Continuous { .. }) => true,
                        _ => false,
                    }
            })
    }
}

/// Flat HPN parameters; the layout is given by [`PolicyArch::mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: PolicyArch,
    pub values: Vec<f64>,
}

impl PolicyParams {
    /// Glorot-uniform trunk, zero heads: the initial policy is uniform over
    /// every discrete dimension.
    pub fn init(arch: PolicyArch, seed: u64) -> Self {
        let mlp = arch.mlp();
        let mut rng = rng_for(seed, "policy-init", &[]);
        let mut values = mlp.init(&mut rng);
        let (w, _) = mlp.layer_offsets(mlp.num_layers() - 1);
        for v in &mut values[w..] {
            *v = 0.0;
        }
        Self { arch, values }
    }

    pub fn zeros(arch: PolicyArch) -> Self {
        let values = vec![0.0; arch.param_count()];
        Self { arch, values }
    }

    pub fn from_values(arch: PolicyArch, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                expected: arch.param_count(),
                got: values.len(),
            });
        }
        Ok(Self { arch, values })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadDist {
    Categorical(Vec<f64>),
    Gaussian { mean: f64, variance: f64 },
}

/// Per-dimension distributions for one client.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadDistribution {
    pub heads: Vec<HeadDist>,
}

/// Checks the encoding length and returns the trunk input, `z * sqrt(D / 2)`,
/// which puts every RFF component in `[-1, 1]`.
fn trunk_input(theta: &PolicyParams, z: &[f64]) -> Result<Vec<f64>> {
    if z.len() != theta.arch.input_dim {
        return Err(Error::LengthMismatch {
            expected: theta.arch.input_dim,
            got: z.len(),
        });
    }
    let scale = theta.arch.input_scale();
    Ok(z.iter().map(|v| v * scale).collect())
}

fn variance_of(var_raw: f64) -> (f64, bool) {
    let v = libm::exp(var_raw);
    if v < VARIANCE_MIN {
        (VARIANCE_MIN, true)
    } else if v > VARIANCE_MAX {
        (VARIANCE_MAX, true)
    } else {
        (v, false)
    }
}

fn heads_from_output(arch: &PolicyArch, out: &[f64]) -> Result<HeadDistribution> {
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinitePolicy);
    }
    let heads = arch
        .heads
        .iter()
        .map(|h| {
            let o = &out[h.offset..h.offset + h.kind.width()];
            match h.kind {
                HeadKind::Categorical { .. } => HeadDist::Categorical(softmax(o)),
                HeadKind::Gaussian => HeadDist::Gaussian {
                    mean: o[0],
                    variance: variance_of(o[1]).0,
                },
            }
        })
        .collect();
    Ok(HeadDistribution { heads })
}

pub fn hpn_forward(theta: &PolicyParams, z: &[f64]) -> Result<HeadDistribution> {
    let x = trunk_input(theta, z)?;
    let out = theta.arch.mlp().forward(&theta.values, &x).output;
    heads_from_output(&theta.arch, &out)
}

fn gaussian_log_density(g: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * libm::log(2.0 * PI * variance) - (g - mean) * (g - mean) / (2.0 * variance)
}

fn sigmoid(g: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-g))
}

fn check_space(theta: &PolicyParams, space: &SearchSpace) -> Result<()> {
    if !theta.arch.matches(space) {
        return Err(Error::InvalidConfig(
            "policy heads do not match the search space".into(),
        ));
    }
    Ok(())
}

/// Draws one configuration per client from `P(c | h_theta(z_i))`.
pub fn sample_assignment<E: AsRef<[f64]>>(
    theta: &PolicyParams,
    space: &SearchSpace,
    encodings: &[E],
    rng: &mut SimRng,
) -> Result<PersonalizedAssignment> {
    check_space(theta, space)?;
    if encodings.is_empty() {
        return Err(Error::InvalidConfig("no client encodings".into()));
    }
    let mut gauss = Gaussian::new();
    let per_client = encodings
        .iter()
        .map(|z| {
            let dist = hpn_forward(theta, z.as_ref())?;
            let mut log_prob = 0.0;
            let values = dist
                .heads
                .iter()
                .zip(space.dims())
                .map(|(h, d)| {
                    Ok(match h {
                        HeadDist::Categorical(p) => {
                            let i = sample_categorical(p, rng);
                            log_prob += libm::log(p[i]);
                            SampleValue::Index(i)
                        }
                        HeadDist::Gaussian { mean, variance } => {
                            let g = mean + libm::sqrt(*variance) * gauss.sample(rng);
                            log_prob += gaussian_log_density(g, *mean, *variance);
                            SampleValue::Real {
                                value: d.map_unit(sigmoid(g))?,
                                latent: g,
                            }
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ConfigSample { values, log_prob })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PersonalizedAssignment { per_client })
}

/// The most probable configuration of each client: the argmax candidate of
/// every Categorical head, the mean of every Gaussian head.
pub fn deploy_assignment<E: AsRef<[f64]>>(
    theta: &PolicyParams,
    space: &SearchSpace,
    encodings: &[E],
) -> Result<PersonalizedAssignment> {
    check_space(theta, space)?;
    let per_client = encodings
        .iter()
        .map(|z| {
            let dist = hpn_forward(theta, z.as_ref())?;
            let mut log_prob = 0.0;
            let values = dist
                .heads
                .iter()
                .zip(space.dims())
                .map(|(h, d)| {
                    Ok(match h {
                        HeadDist::Categorical(p) => {
                            let i = crate::model::argmax(p);
                            log_prob += libm::log(p[i]);
                            SampleValue::Index(i)
                        }
                        HeadDist::Gaussian { mean, variance } => {
                            log_prob += gaussian_log_density(*mean, *mean, *variance);
                            SampleValue::Real {
                                value: d.map_unit(sigmoid(*mean))?,
                                latent: *mean,
                            }
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ConfigSample { values, log_prob })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PersonalizedAssignment { per_client })
}

/// `sum_i log P(c_i | h_theta(z_i))` and its exact gradient.
pub fn log_prob_and_grad<E: AsRef<[f64]>>(
    theta: &PolicyParams,
    encodings: &[E],
    assignment: &PersonalizedAssignment,
) -> Result<(f64, Vec<f64>)> {
    if encodings.len() != assignment.len() {
        return Err(Error::LengthMismatch {
            expected: encodings.len(),
            got: assignment.len(),
        });
    }
    let arch = &theta.arch;
    let mlp = arch.mlp();
    let mut grad = vec![0.0; theta.values.len()];
    let mut total = 0.0;
    for (z, sample) in encodings.iter().zip(&assignment.per_client) {
        let z = z.as_ref();
        let x = trunk_input(theta, z)?;
        if sample.values.len() != arch.heads.len() {
            return Err(Error::LengthMismatch {
                expected: arch.heads.len(),
                got: sample.values.len(),
            });
        }
        let trace = mlp.forward(&theta.values, &x);
        let out = &trace.output;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePolicy);
        }
        let mut d_out = vec![0.0; out.len()];
        for (h, v) in arch.heads.iter().zip(&sample.values) {
            let o = &out[h.offset..h.offset + h.kind.width()];
            let d = &mut d_out[h.offset..h.offset + h.kind.width()];
            match (h.kind, v) {
                (HeadKind::Categorical { candidates }, SampleValue::Index(i)) => {
                    if *i >= candidates {
                        return Err(Error::InvalidSample(alloc::format!(
                            "{}: index {i} out of range",
                            h.name
                        )));
                    }
                    let p = softmax(o);
                    total += libm::log(p[*i]);
                    for (k, dk) in d.iter_mut().enumerate() {
                        *dk = (k == *i) as u8 as f64 - p[k];
                    }
                }
                (HeadKind::Gaussian, SampleValue::Real { latent, .. }) => {
                    let mean = o[0];
                    let (var, clamped) = variance_of(o[1]);
                    let r = latent - mean;
                    total += gaussian_log_density(*latent, mean, var);
                    d[0] = r / var;
                    d[1] = if clamped { 0.0 } else { -0.5 + r * r / (2.0 * var) };
                }
                _ => {
                    return Err(Error::InvalidSample(alloc::format!(
                        "{}: value kind does not match head kind",
                        h.name
                    )))
                }
            }
        }
        mlp.backward(&theta.values, &trace, &d_out, &mut grad);
    }
    Ok((total, grad))
}

/// Summed entropy of every head over all clients, and its gradient.
pub fn entropy_and_grad<E: AsRef<[f64]>>(theta: &PolicyParams, encodings: &[E]) -> Result<(f64, Vec<f64>)> {
    let arch = &theta.arch;
    let mlp = arch.mlp();
    let mut grad = vec![0.0; theta.values.len()];
    let mut total = 0.0;
    for z in encodings {
        let z = z.as_ref();
        let x = trunk_input(theta, z)?;
        let trace = mlp.forward(&theta.values, &x);
        let out = &trace.output;
        let mut d_out = vec![0.0; out.len()];
        for h in &arch.heads {
            let o = &out[h.offset..h.offset + h.kind.width()];
            let d = &mut d_out[h.offset..h.offset + h.kind.width()];
            match h.kind {
                HeadKind::Categorical { .. } => {
                    let p = softmax(o);
                    let logp: Vec<f64> = p.iter().map(|&q| if q > 0.0 { libm::log(q) } else { 0.0 }).collect();
                    let ent: f64 = -p.iter().zip(&logp).map(|(q, l)| q * l).sum::<f64>();
                    total += ent;
                    for k in 0..p.len() {
                        d[k] = -p[k] * (logp[k] + ent);
                    }
                }
                HeadKind::Gaussian => {
                    let (var, clamped) = variance_of(o[1]);
                    total += 0.5 * libm::log(2.0 * PI * core::f64::consts::E * var);
                    d[1] = if clamped { 0.0 } else { 0.5 };
                }
            }
        }
        mlp.backward(&theta.values, &trace, &d_out, &mut grad);
    }
    Ok((total, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    None,
    Ema { decay: f64 },
}

/// How rewards become advantages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    /// Reward minus baseline.
    Raw,
    /// Reward minus baseline, divided by a running RMS.
    Normalized,
    /// Centered ranks of the rewards within the update batch, in
    /// `[-0.5, 0.5]`; the baseline is not used.
    Ranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub policy_lr: f64,
    pub baseline: BaselineKind,
    pub entropy_coef: f64,
    pub advantage: AdvantageMode,
    pub trials_per_update: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            policy_lr: 0.1,
            baseline: BaselineKind::Ema { decay: 0.9 },
            entropy_coef: 0.01,
            advantage: AdvantageMode::Ranked,
            trials_per_update: 5,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl TrainerConfig {
    /// Plain REINFORCE: no baseline, no normalization, no entropy bonus.
    pub fn paper_faithful(mut self) -> Self {
        self.baseline = BaselineKind::None;
        self.entropy_coef = 0.0;
        self.advantage = AdvantageMode::Raw;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.policy_lr > 0.0 && self.policy_lr.is_finite()) {
            return Err(Error::InvalidConfig("trainer.policy_lr must be positive".into()));
        }
        if let BaselineKind::Ema { decay } = self.baseline {
            if !(0.0..1.0).contains(&decay) {
                return Err(Error::InvalidConfig("trainer.ema_decay must be in [0, 1)".into()));
            }
        }
        if self.entropy_coef.is_nan() || self.entropy_coef < 0.0 {
            return Err(Error::InvalidConfig("trainer.entropy_coef must be >= 0".into()));
        }
        if self.trials_per_update == 0 {
            return Err(Error::InvalidConfig("trainer.trials_per_update must be >= 1".into()));
        }
        Ok(())
    }
}

/// Decay of the running advantage RMS.
const RMS_DECAY: f64 = 0.9;

/// Running reward baseline: a bias-corrected exponential moving average, or
/// constant zero. Also tracks the RMS of advantages for normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBaseline {
    kind: BaselineKind,
    ema: f64,
    count: u32,
    sq: f64,
    sq_count: u32,
}

impl RewardBaseline {
    pub fn new(kind: BaselineKind) -> Self {
        Self {
            kind,
            ema: 0.0,
            count: 0,
            sq: 0.0,
            sq_count: 0,
        }
    }

    /// Bias-corrected running RMS of observed advantages; zero before any.
    pub fn advantage_rms(&self) -> f64 {
        if self.sq_count == 0 {
            return 0.0;
        }
        libm::sqrt(self.sq / (1.0 - libm::pow(RMS_DECAY, self.sq_count as f64)))
    }

    pub fn observe_advantage(&mut self, a: f64) {
        self.sq = RMS_DECAY * self.sq + (1.0 - RMS_DECAY) * a * a;
        self.sq_count += 1;
    }

    pub fn value(&self) -> f64 {
        match self.kind {
            BaselineKind::None => 0.0,
            BaselineKind::Ema { decay } => {
                if self.count == 0 {
                    0.0
                } else {
                    self.ema / (1.0 - libm::pow(decay, self.count as f64))
                }
            }
        }
    }

    pub fn observe(&mut self, reward: f64) {
        if let BaselineKind::Ema { decay } = self.kind {
            self.ema = decay * self.ema + (1.0 - decay) * reward;
            self.count += 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub params: PolicyParams,
    /// Set when the update was non-finite and `params` is the input policy.
    pub rejected: bool,
    pub advantages: Vec<f64>,
}

/// Centered ranks in `[-0.5, 0.5]`; tied rewards share their mean rank and a
/// single reward maps to zero.
pub fn centered_ranks(rewards: &[f64]) -> Vec<f64> {
    let m = rewards.len();
    if m < 2 {
        return vec![0.0; m];
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| rewards[i].total_cmp(&rewards[j]));
    let mut ranks = vec![0.0; m];
    let mut k = 0;
    while k < m {
        let mut e = k;
        while e + 1 < m && rewards[order[e + 1]] == rewards[order[k]] {
            e += 1;
        }
        let mean = (k + e) as f64 / 2.0;
        for &i in &order[k..=e] {
            ranks[i] = mean / (m - 1) as f64 - 0.5;
        }
        k = e + 1;
    }
    ranks
}

/// One REINFORCE step over a batch of `(assignment, reward)` trials.
///
/// Advantages use the baseline value before this batch; the baseline then
/// absorbs the batch rewards in order. With normalization on, the running RMS
/// first absorbs the batch advantages and then divides them.
pub fn reinforce_update<E: AsRef<[f64]>>(
    theta: &PolicyParams,
    encodings: &[E],
    trials: &[(PersonalizedAssignment, f64)],
    cfg: &TrainerConfig,
    baseline: &mut RewardBaseline,
) -> Result<UpdateOutcome> {
    if trials.is_empty() {
        return Err(Error::InvalidConfig("reinforce_update needs at least one trial".into()));
    }
    let b = baseline.value();
    let rewards: Vec<f64> = trials.iter().map(|(_, r)| *r).collect();
    let mut advantages: Vec<f64> = rewards.iter().map(|r| r - b).collect();
    for r in &rewards {
        baseline.observe(*r);
    }
    match cfg.advantage {
        AdvantageMode::Raw => {}
        AdvantageMode::Normalized => {
            for a in &advantages {
                baseline.observe_advantage(*a);
            }
            let rms = baseline.advantage_rms();
            if rms > 0.0 && rms.is_finite() {
                for a in &mut advantages {
                    *a /= rms;
                }
            }
        }
        AdvantageMode::Ranked => advantages = centered_ranks(&rewards),
    }
    let mut step = vec![0.0; theta.values.len()];
    let m = trials.len() as f64;
    for ((assignment, _), a) in trials.iter().zip(&advantages) {
        if *a == 0.0 {
            continue;
        }
        let (_, g) = log_prob_and_grad(theta, encodings, assignment)?;
        for (s, gi) in step.iter_mut().zip(&g) {
            *s += a * gi / m;
        }
    }
    if cfg.entropy_coef > 0.0 {
        let (_, g) = entropy_and_grad(theta, encodings)?;
        for (s, gi) in step.iter_mut().zip(&g) {
            *s += cfg.entropy_coef * gi;
        }
    }
    let mut params = theta.clone();
    for (v, s) in params.values.iter_mut().zip(&step) {
        *v += cfg.policy_lr * s;
    }
    if !params.is_finite() {
        return Ok(UpdateOutcome {
            params: theta.clone(),
            rejected: true,
            advantages,
        });
    }
    Ok(UpdateOutcome {
        params,
        rejected: false,
        advantages,
    })
}
