//! Pipeline stages. Each stage reads only files written by earlier stages
//! and records what it wrote in the run manifest.
//!
//! Layout of a run directory:
//!
//! ```text
//! config.toml  manifest.json
//! federation/   federation.json, client_NNN/{train,valid,test}.csv
//! encodings.json
//! pretrain/     index.json, round_NNNNN.bin, metrics.csv
//! tune/<method>/trials.csv  (+ argmax_trace.csv, policy.{bin,json} | winner.json)
//! eval/<method>.json, eval/<method>_detail.json
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use fedhpn_core::baselines::{run_baseline, BaselineMethod};
use fedhpn_core::data::Federation;
use fedhpn_core::datagen::{make_cluster_federation, make_dirichlet_federation};
use fedhpn_core::encoding::{draw_projection, encode_federation};
use fedhpn_core::fl::{ClientExecutor, FlSim};
use fedhpn_core::model::ModelSpec;
use fedhpn_core::rst::{
    deploy_and_evaluate, evaluate_assignment, rst_pretrain, train_hpn, Budget, EvalReport, RstContext, TrialMode,
};
use fedhpn_core::space::PersonalizedAssignment;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_policy, read_store, write_policy, write_store};
use crate::config::{DataConfig, ExperimentConfig, TrialModeName};
use crate::csvdata::{load_csv_federation, read_federation, write_federation, FederationMeta};
use crate::error::{read_artifact_string, write_file, HarnessError, Result};
use crate::exec::executor;
use crate::logs::{argmax_trace_csv, configs_json, round_metrics_csv, trial_log_csv};
use crate::manifest::RunDir;

/// Tuning method as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hpn,
    Rs,
    Prs,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Hpn, Method::Rs, Method::Prs];

    /// Name used in logs and reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::Hpn => "hpn",
            Method::Rs => BaselineMethod::RsGlobal.name(),
            Method::Prs => BaselineMethod::RsPersonalized.name(),
        }
    }

    fn baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::Hpn => None,
            Method::Rs => Some(BaselineMethod::RsGlobal),
            Method::Prs => Some(BaselineMethod::RsPersonalized),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub paper_faithful: bool,
    pub force: bool,
    pub threads: Option<usize>,
    /// Fill the trial log's `wall_time` column (makes logs non-reproducible).
    pub wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingFile {
    pub seed: u64,
    pub phase: bool,
    pub dim: usize,
    pub num_features: usize,
    pub encodings: Vec<Vec<f64>>,
}

/// The final report of `evaluate`; these keys and no others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalReport {
    pub method: String,
    pub weighted_test_accuracy: f64,
    pub per_client_accuracies: Vec<f64>,
    pub rounds_consumed: usize,
    pub seed: u64,
}

/// Outcome of a baseline tuning run, enough to re-run its winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerFile {
    pub method: String,
    pub seed: u64,
    pub winner: usize,
    pub rounds_per_candidate: usize,
    pub rounds_consumed: usize,
    pub configs: serde_json::Value,
    pub assignment: PersonalizedAssignment,
}

/// Bookkeeping of an HPN tuning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpnSummary {
    pub seed: u64,
    pub paper_faithful: bool,
    pub trials: usize,
    pub updates: usize,
    pub rejected_updates: usize,
    pub rounds_consumed: usize,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub run: RunDir,
    pub opts: Options,
    exec: Box<dyn ClientExecutor>,
}

impl Pipeline {
    pub fn open(cfg: ExperimentConfig, out: &Path, opts: Options) -> Result<Self> {
        let run = RunDir::open(out, &cfg, opts.force)?;
        Ok(Self {
            exec: executor(opts.threads),
            cfg,
            run,
            opts,
        })
    }

    fn model(&self, fed: &Federation) -> Result<ModelSpec> {
        self.cfg
            .model_spec(fed.num_features(), fed.num_classes())
            .map_err(|e| HarnessError::Config(format!("model: {e}")))
    }

    fn sim<'a>(&'a self, model: &'a ModelSpec, fed: &'a Federation) -> FlSim<'a> {
        FlSim::new(model, fed).with_executor(self.exec.as_ref())
    }

    fn stage<F>(&mut self, name: &str, body: F) -> Result<Vec<PathBuf>>
    where
        F: FnOnce(&Self) -> Result<Vec<PathBuf>>,
    {
        self.run.begin_stage(name, self.opts.force)?;
        let t0 = Instant::now();
        let written = body(self)?;
        self.run.finish_stage(name, &written, t0.elapsed().as_secs_f64())?;
        Ok(written)
    }

    /// Generates (or loads) the federation, writes per-client CSV splits and
    /// client encodings.
    pub fn partition(&mut self) -> Result<Vec<PathBuf>> {
        self.stage("partition", |p| {
            let cfg = &p.cfg;
            let (mut fed, cluster_of) = match &cfg.data {
                DataConfig::Cluster { .. } => {
                    let (fed, c) = make_cluster_federation(&cfg.cluster_spec().unwrap())?;
                    (fed, Some(c))
                }
                DataConfig::Dirichlet { .. } => (make_dirichlet_federation(&cfg.dirichlet_spec().unwrap())?, None),
                DataConfig::Csv {
                    path,
                    clients,
                    num_classes,
                    split,
                } => (
                    load_csv_federation(path, *clients, *num_classes, split, cfg.data_seed())?,
                    None,
                ),
            };
            let meta = FederationMeta {
                num_clients: fed.len(),
                num_features: fed.num_features(),
                num_classes: fed.num_classes(),
                seed: cfg.data_seed(),
                cluster_of,
            };
            let proj = draw_projection(
                fed.num_features(),
                cfg.encoding.dim,
                cfg.encoding_seed(),
                cfg.encoding.phase,
            )?;
            let encs = encode_federation(&mut fed, &proj)?;
            let mut written = write_federation(&p.run.path("federation"), &fed, &meta)?;
            let file = EncodingFile {
                seed: cfg.encoding_seed(),
                phase: cfg.encoding.phase,
                dim: cfg.encoding.dim,
                num_features: fed.num_features(),
                encodings: encs.into_iter().map(|e| e.z).collect(),
            };
            let ep = p.run.path("encodings.json");
            write_file(&ep, &crate::json_bytes(&file))?;
            written.push(ep);
            Ok(written)
        })
    }

    /// The federation written by `partition`, with encodings attached.
    pub fn load_federation(&self) -> Result<(Federation, FederationMeta)> {
        let (mut fed, meta) = read_federation(&self.run.path("federation"))?;
        let ep = self.run.path("encodings.json");
        let file: EncodingFile =
            serde_json::from_str(&read_artifact_string(&ep)?).map_err(|e| HarnessError::format("encodings", &ep, e))?;
        if file.encodings.len() != fed.len() {
            return Err(HarnessError::format(
                "encodings",
                &ep,
                "one encoding per client expected",
            ));
        }
        for (c, z) in fed.clients_mut().iter_mut().zip(file.encodings) {
            c.encoding = z;
        }
        Ok((fed, meta))
    }

    /// Runs the pretraining course and stores every round's checkpoint.
    pub fn pretrain(&mut self) -> Result<Vec<PathBuf>> {
        self.stage("pretrain", |p| {
            let (fed, _) = p.load_federation()?;
            let model = p.model(&fed)?;
            let sim = p.sim(&model, &fed);
            let rst = p.cfg.rst_config();
            let mut budget = Budget::new(rst.hpo_round_budget);
            let pre = rst_pretrain(&sim, &rst, &mut budget).map_err(|e| match e {
                fedhpn_core::Error::Diverged => {
                    HarnessError::Numeric(format!("pretraining diverged within {} rounds", rst.total_rounds))
                }
                e => e.into(),
            })?;
            let dir = p.run.path("pretrain");
            let mut written = write_store(&dir, &pre.store)?;
            let mp = dir.join("metrics.csv");
            write_file(&mp, &round_metrics_csv(&pre.metrics))?;
            written.push(mp);
            Ok(written)
        })
    }

    /// Tunes with `method` until the budget is spent.
    pub fn tune(&mut self, method: Method) -> Result<Vec<PathBuf>> {
        let stage = format!("tune/{}", method.name());
        self.stage(&stage, |p| match method {
            Method::Hpn => p.tune_hpn(),
            _ => p.tune_baseline(method),
        })
    }

    fn tune_dir(&self, method: Method) -> PathBuf {
        self.run.path(&format!("tune/{}", method.name()))
    }

    fn tune_hpn(&self) -> Result<Vec<PathBuf>> {
        let (fed, _) = self.load_federation()?;
        let model = self.model(&fed)?;
        let sim = self.sim(&model, &fed);
        let space = &self.cfg.space;
        let rst = self.cfg.rst_config();
        let trainer = self.cfg.trainer_config(self.opts.paper_faithful);
        let encodings = fed.encodings();
        let mut budget = Budget::new(rst.hpo_round_budget);
        let t0 = Instant::now();
        let run = match self.cfg.trainer.mode {
            TrialModeName::Rst => {
                rst.validate()?;
                let store = read_store(&self.run.path("pretrain"))?;
                if store.rounds() != rst.total_rounds {
                    return Err(HarnessError::Config(format!(
                        "pretrain store has {} rounds but rst.total_rounds = {}",
                        store.rounds(),
                        rst.total_rounds
                    )));
                }
                budget.consume(rst.total_rounds)?;
                let ctx = RstContext::new(sim, &store, &rst)?;
                train_hpn(
                    &sim,
                    space,
                    &encodings,
                    &rst,
                    &trainer,
                    TrialMode::Rst(&ctx),
                    &mut budget,
                )?
            }
            TrialModeName::Full => {
                let rounds = self.cfg.trainer.full_rounds;
                train_hpn(
                    &sim,
                    space,
                    &encodings,
                    &rst,
                    &trainer,
                    TrialMode::Full { rounds },
                    &mut budget,
                )?
            }
        };
        let elapsed = t0.elapsed().as_secs_f64();
        let dir = self.tune_dir(Method::Hpn);
        let walls = self.wall_times(run.trials.len(), elapsed);
        let mut written = Vec::new();
        let tp = dir.join("trials.csv");
        write_file(&tp, &trial_log_csv("hpn", space, &run.trials, walls.as_deref())?)?;
        written.push(tp);
        let ap = dir.join("argmax_trace.csv");
        write_file(&ap, &argmax_trace_csv(space, &run.trace))?;
        written.push(ap);
        written.extend(write_policy(&dir, &run.theta, space, self.cfg.seed)?);
        let summary = HpnSummary {
            seed: self.cfg.seed,
            paper_faithful: self.opts.paper_faithful,
            trials: run.trials.len(),
            updates: run.updates,
            rejected_updates: run.rejected_updates,
            rounds_consumed: budget.consumed,
        };
        let sp = dir.join("summary.json");
        write_file(&sp, &crate::json_bytes(&summary))?;
        written.push(sp);
        Ok(written)
    }

    /// Per-trial wall time, spread evenly; only with `--wall-time`.
    fn wall_times(&self, n: usize, elapsed: f64) -> Option<Vec<f64>> {
        self.opts.wall_time.then(|| vec![elapsed / n.max(1) as f64; n])
    }

    fn tune_baseline(&self, method: Method) -> Result<Vec<PathBuf>> {
        let (fed, _) = self.load_federation()?;
        let model = self.model(&fed)?;
        let sim = self.sim(&model, &fed);
        let space = &self.cfg.space;
        let bcfg = self.cfg.baseline_config(method.baseline().unwrap());
        let t0 = Instant::now();
        let out = run_baseline(
            &sim,
            space,
            &self.cfg.local_config(),
            &bcfg,
            self.cfg.rst.hpo_round_budget,
        )?;
        let elapsed = t0.elapsed().as_secs_f64();
        let dir = self.tune_dir(method);
        let walls = self.wall_times(out.candidates.len(), elapsed);
        let tp = dir.join("trials.csv");
        write_file(
            &tp,
            &trial_log_csv(method.name(), space, &out.candidates, walls.as_deref())?,
        )?;
        let winner = WinnerFile {
            method: method.name().into(),
            seed: self.cfg.seed,
            winner: out.winner,
            rounds_per_candidate: out.rounds_per_candidate,
            rounds_consumed: out.rounds_consumed,
            configs: serde_json::from_str(&configs_json(space, &out.assignment)?).expect("valid json"),
            assignment: out.assignment,
        };
        let wp = dir.join("winner.json");
        write_file(&wp, &crate::json_bytes(&winner))?;
        Ok(vec![tp, wp])
    }

    /// Deploys the tuned configuration and runs the full evaluation course.
    pub fn evaluate(&mut self, method: Method) -> Result<Vec<PathBuf>> {
        let stage = format!("eval/{}", method.name());
        self.stage(&stage, |p| {
            let (fed, _) = p.load_federation()?;
            let model = p.model(&fed)?;
            let sim = p.sim(&model, &fed);
            let space = &p.cfg.space;
            let base = p.cfg.local_config();
            let dir = p.tune_dir(method);
            let (report, tuning_rounds): (EvalReport, usize) = match method {
                Method::Hpn => {
                    let (theta, _) = read_policy(&dir, space)?;
                    let sp = dir.join("summary.json");
                    let summary: HpnSummary = serde_json::from_str(&read_artifact_string(&sp)?)
                        .map_err(|e| HarnessError::format("tuning summary", &sp, e))?;
                    let encodings = fed.encodings();
                    let r = deploy_and_evaluate(&sim, space, &base, &theta, &encodings, p.cfg.eval_rounds, p.cfg.seed)?;
                    (r, summary.rounds_consumed)
                }
                _ => {
                    let wp = dir.join("winner.json");
                    let w: WinnerFile = serde_json::from_str(&read_artifact_string(&wp)?)
                        .map_err(|e| HarnessError::format("winner file", &wp, e))?;
                    let r = evaluate_assignment(&sim, space, &base, &w.assignment, p.cfg.eval_rounds, p.cfg.seed)?;
                    (r, w.rounds_consumed)
                }
            };
            let final_report = FinalReport {
                method: method.name().into(),
                weighted_test_accuracy: report.weighted_test_accuracy,
                per_client_accuracies: report.per_client_test_accuracy.clone(),
                rounds_consumed: tuning_rounds + report.rounds_consumed,
                seed: p.cfg.seed,
            };
            let rp = p.run.path(&format!("eval/{}.json", method.name()));
            write_file(&rp, &crate::json_bytes(&final_report))?;
            let dp = p.run.path(&format!("eval/{}_detail.json", method.name()));
            write_file(&dp, &crate::json_bytes(&report))?;
            Ok(vec![rp, dp])
        })
    }

    /// partition → pretrain → tune/evaluate for each method.
    pub fn run_all(&mut self, methods: &[Method]) -> Result<()> {
        self.partition()?;
        if methods.contains(&Method::Hpn) && self.cfg.trainer.mode == TrialModeName::Rst {
            self.pretrain()?;
        }
        for &m in methods {
            self.tune(m)?;
            self.evaluate(m)?;
        }
        Ok(())
    }
}

pub fn read_final_report(path: &Path) -> Result<FinalReport> {
    serde_json::from_str(&read_artifact_string(path)?).map_err(|e| HarnessError::format("report", path, e))
}
