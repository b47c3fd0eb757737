use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedhpn::csvdata::read_federation;
use fedhpn::pipeline::FinalReport;
use fedhpn::report::mean_std;
use fedhpn::ExperimentConfig;
use fedhpn_core::datagen::make_blobs;
use fedhpn_core::rng::derive_seed;
use tempfile::TempDir;

const TINY: &str = r#"
seed = 3
eval_rounds = 8

[data]
kind = "cluster"
num_clusters = 2
clients_per_cluster = 2
feature_scales = [0.5, 4.0]
num_features = 3
num_classes = 3
examples_per_client = 40

[local]
learning_rate = 0.05

[[space.dims]]
name = "learning_rate"
kind = "discrete"
candidates = [0.01, 0.05, 0.2]

[encoding]
dim = 16

[rst]
total_rounds = 10
segment_rounds = 1
hpo_round_budget = 40

[trainer]
hidden = [8]

[[baselines]]
method = "rs_global"
num_candidates = 3

[[baselines]]
method = "rs_personalized"
num_candidates = 1
subsample_size = 4
"#;

fn fedhpn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedhpn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Bench {
    _tmp: TempDir,
    root: PathBuf,
}

impl Bench {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let root = tmp.path().to_path_buf();
        Self { _tmp: tmp, root }
    }

    fn config(&self, name: &str, text: &str) -> String {
        let p = self.root.join(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn dir(&self, name: &str) -> String {
        self.root.join(name).to_string_lossy().into_owned()
    }
}

fn run_ok(args: &[&str]) {
    let o = fedhpn(args);
    assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
}

fn full_run(cfg: &str, out: &str, extra: &[&str]) {
    let base = |cmd: &'static str| -> Vec<&str> {
        let mut v = vec!["--config", cfg, "--out", out, cmd];
        v.extend_from_slice(extra);
        v
    };
    run_ok(&base("partition"));
    run_ok(&base("pretrain"));
    for m in ["hpn", "rs", "prs"] {
        let mut t = base("tune");
        t.extend(["--method", m]);
        run_ok(&t);
        let mut e = base("evaluate");
        e.extend(["--method", m]);
        run_ok(&e);
    }
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn missing_field_is_named() {
    let b = Bench::new();
    let cfg = b.config(
        "bad.toml",
        "[data]\nkind = \"dirichlet\"\n[[space.dims]]\nname = \"lr\"\nkind = \"discrete\"\ncandidates = [0.1]\n",
    );
    let o = fedhpn(&["--config", &cfg, "--out", &b.dir("run"), "partition"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("data: missing field `alpha`"), "{}", stderr(&o));
    let cfg = b.config("typo.toml", &TINY.replace("total_rounds", "total_round"));
    let o = fedhpn(&["--config", &cfg, "--out", &b.dir("run"), "partition"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("rst"), "{}", stderr(&o));
}

#[test]
fn partition_is_byte_identical_across_runs() {
    let b = Bench::new();
    let cfg = b.config("tiny.toml", TINY);
    run_ok(&["--config", &cfg, "--out", &b.dir("a"), "partition"]);
    run_ok(&["--config", &cfg, "--out", &b.dir("b"), "partition"]);
    let (fa, fb) = (files(&b.root.join("a")), files(&b.root.join("b")));
    let strip = |m: BTreeMap<PathBuf, Vec<u8>>| -> BTreeMap<PathBuf, Vec<u8>> {
        m.into_iter().filter(|(p, _)| p != Path::new("manifest.json")).collect()
    };
    assert_eq!(strip(fa), strip(fb));
    assert!(b.root.join("a/federation/client_003/test.csv").exists());
}

#[test]
fn completed_stages_need_force() {
    let b = Bench::new();
    let cfg = b.config("tiny.toml", TINY);
    let out = b.dir("run");
    run_ok(&["--config", &cfg, "--out", &out, "partition"]);
    let o = fedhpn(&["--config", &cfg, "--out", &out, "partition"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--force"));
    run_ok(&["--config", &cfg, "--out", &out, "--force", "partition"]);
    let other = b.config("other.toml", &TINY.replace("dim = 16", "dim = 8"));
    let o = fedhpn(&["--config", &other, "--out", &out, "partition"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_artifacts_exit_with_four() {
    let b = Bench::new();
    let cfg = b.config("tiny.toml", TINY);
    let out = b.dir("run");
    let o = fedhpn(&["--config", &cfg, "--out", &out, "pretrain"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    run_ok(&["--config", &cfg, "--out", &out, "partition"]);
    let o = fedhpn(&["--config", &cfg, "--out", &out, "--method", "rs", "evaluate"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn infeasible_budget_is_reported() {
    let b = Bench::new();
    let cfg = b.config(
        "poor.toml",
        &TINY.replace("hpo_round_budget = 40", "hpo_round_budget = 10"),
    );
    let out = b.dir("run");
    run_ok(&["--config", &cfg, "--out", &out, "partition"]);
    let o = fedhpn(&["--config", &cfg, "--out", &out, "pretrain"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("budget infeasible"), "{}", stderr(&o));
}

#[test]
fn dirichlet_partition_covers_the_base_set() {
    let b = Bench::new();
    let cfg = b.config(
        "dir.toml",
        &TINY.replace(
            "kind = \"cluster\"\nnum_clusters = 2\nclients_per_cluster = 2\nfeature_scales = [0.5, 4.0]\nnum_features = 3\nnum_classes = 3\nexamples_per_client = 40",
            "kind = \"dirichlet\"\nalpha = 0.1\nclients = 10\nnum_examples = 1000",
        ),
    );
    let out = b.dir("run");
    run_ok(&["--config", &cfg, "--out", &out, "partition"]);
    let dirs = fs::read_dir(b.root.join("run/federation"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 10);
    let (fed, meta) = read_federation(&b.root.join("run/federation")).unwrap();
    assert_eq!(meta.num_clients, 10);
    let rows = |d: &fedhpn_core::data::DataSet| -> Vec<(Vec<u64>, usize)> {
        (0..d.len())
            .map(|i| (d.row(i).iter().map(|x| x.to_bits()).collect(), d.label(i)))
            .collect()
    };
    let mut union: Vec<_> = fed
        .clients()
        .iter()
        .flat_map(|c| [&c.train, &c.valid, &c.test].into_iter().flat_map(rows))
        .collect();
    let mut base = rows(&make_blobs(10, 10, 1000, 3.0, derive_seed(3, "base", &[])).unwrap());
    union.sort();
    base.sort();
    assert_eq!(union, base);
}

#[test]
fn pipeline_reports_and_determinism() {
    let b = Bench::new();
    let cfg = b.config("tiny.toml", TINY);
    let (a, c) = (b.dir("a"), b.dir("c"));
    full_run(&cfg, &a, &[]);
    full_run(&cfg, &c, &["--threads", "3"]);
    let (fa, fc) = (files(&b.root.join("a")), files(&b.root.join("c")));
    for (p, bytes) in &fa {
        let s = p.to_string_lossy();
        if s.ends_with("trials.csv") || s.starts_with("eval/") || s.ends_with(".bin") || s.ends_with("argmax_trace.csv")
        {
            assert_eq!(Some(bytes), fc.get(p), "{s} differs");
        }
    }

    let (fed, _) = read_federation(&b.root.join("a/federation")).unwrap();
    let sizes: Vec<f64> = fed.clients().iter().map(|c| c.test.len() as f64).collect();
    for m in ["hpn", "rs_global", "rs_personalized"] {
        let text = fs::read_to_string(b.root.join(format!("a/eval/{m}.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        let mut keys = keys;
        keys.sort();
        assert_eq!(
            keys,
            [
                "method",
                "per_client_accuracies",
                "rounds_consumed",
                "seed",
                "weighted_test_accuracy"
            ]
        );
        let r: FinalReport = serde_json::from_value(v).unwrap();
        assert_eq!((r.method.as_str(), r.seed), (m, 3));
        assert!(r.per_client_accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
        let recomputed = r
            .per_client_accuracies
            .iter()
            .zip(&sizes)
            .map(|(a, n)| a * n)
            .sum::<f64>()
            / sizes.iter().sum::<f64>();
        assert!((recomputed - r.weighted_test_accuracy).abs() < 1e-12);
        // Tuning budget plus the evaluation course.
        assert!(
            r.rounds_consumed <= 40 + 8 && r.rounds_consumed >= 40 + 8 - 1,
            "{m}: {}",
            r.rounds_consumed
        );
    }
}

#[test]
fn report_summarizes_seeds_and_rejects_mixed_configs() {
    let b = Bench::new();
    let cfg = b.config("tiny.toml", TINY);
    let runs: Vec<String> = (0..3).map(|s| b.dir(&format!("s{s}"))).collect();
    for (s, out) in runs.iter().enumerate() {
        let seed = s.to_string();
        for cmd in [
            &["partition"][..],
            &["--method", "rs", "tune"],
            &["--method", "rs", "evaluate"],
        ] {
            let mut args = vec!["--config", cfg.as_str(), "--seed", &seed, "--out", out];
            args.extend_from_slice(cmd);
            run_ok(&args);
        }
    }
    let single = b.dir("single");
    run_ok(&["--out", &single, "report", &runs[0]]);
    let one = fs::read_to_string(b.root.join("single/comparison.csv")).unwrap();
    assert_eq!(one.lines().count(), 2);

    let rep = b.dir("rep");
    let mut args = vec!["--out", rep.as_str(), "report"];
    args.extend(runs.iter().map(|s| s.as_str()));
    run_ok(&args);
    let table = fs::read_to_string(b.root.join("rep/comparison.csv")).unwrap();
    let accs: Vec<f64> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(accs.len(), 3);
    let summary = fs::read_to_string(b.root.join("rep/summary.csv")).unwrap();
    let row: Vec<&str> = summary.lines().nth(1).unwrap().split(',').collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    let std = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert_eq!(row[0], "rs_global");
    assert!((row[2].parse::<f64>().unwrap() - mean).abs() < 1e-12);
    assert!((row[3].parse::<f64>().unwrap() - std).abs() < 1e-12);
    assert_eq!(mean_std(&accs).0, mean);

    let other = b.config("other.toml", &TINY.replace("eval_rounds = 8", "eval_rounds = 9"));
    let odd = b.dir("odd");
    for cmd in [
        &["partition"][..],
        &["--method", "rs", "tune"],
        &["--method", "rs", "evaluate"],
    ] {
        let mut args = vec!["--config", other.as_str(), "--out", odd.as_str()];
        args.extend_from_slice(cmd);
        run_ok(&args);
    }
    let o = fedhpn(&["--out", &b.dir("mixed"), "report", &runs[0], &odd]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("different configs"), "{}", stderr(&o));
}

#[test]
fn paper_faithful_flag_reaches_the_trainer() {
    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let plain = cfg.trainer_config(true);
    assert_eq!(plain.baseline, fedhpn_core::policy::BaselineKind::None);
    assert_eq!(plain.entropy_coef, 0.0);
    assert_eq!(plain.advantage, fedhpn_core::policy::AdvantageMode::Raw);
    assert_ne!(
        cfg.trainer_config(false).baseline,
        fedhpn_core::policy::BaselineKind::None
    );

    let b = Bench::new();
    let path = b.config("tiny.toml", TINY);
    let (x, y) = (b.dir("x"), b.dir("y"));
    for (out, flag) in [(&x, true), (&y, false)] {
        run_ok(&["--config", &path, "--out", out, "partition"]);
        run_ok(&["--config", &path, "--out", out, "pretrain"]);
        let mut args = vec!["--config", path.as_str(), "--out", out.as_str(), "tune"];
        if flag {
            args.push("--paper-faithful");
        }
        run_ok(&args);
    }
    let summary = |d: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(Path::new(d).join("tune/hpn/summary.json")).unwrap()).unwrap()
    };
    assert_eq!(summary(&x)["paper_faithful"], true);
    assert_eq!(summary(&y)["paper_faithful"], false);
    let policy = |d: &str| fs::read(Path::new(d).join("tune/hpn/policy.bin")).unwrap();
    assert_ne!(policy(&x), policy(&y));
}

#[test]
fn artifacts_have_documented_shapes() {
    let b = Bench::new();
    let cfg = b.config("tiny.toml", TINY);
    let out = b.dir("run");
    run_ok(&["--config", &cfg, "--out", &out, "partition"]);
    run_ok(&["--config", &cfg, "--out", &out, "pretrain"]);
    run_ok(&["--config", &cfg, "--out", &out, "--wall-time", "tune"]);
    let run = b.root.join("run");

    let index: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("pretrain/index.json")).unwrap()).unwrap();
    assert_eq!(index["rounds"].as_array().unwrap().len(), 10);
    let ckpt = fs::read(run.join("pretrain/round_00010.bin")).unwrap();
    assert_eq!(&ckpt[..6], b"FHPNPV");

    let trials = fs::read_to_string(run.join("tune/hpn/trials.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(trials.as_bytes());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, fedhpn::logs::TRIAL_HEADER);
    let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 30);
    for r in &recs {
        let s: usize = r[2].parse().unwrap();
        assert!((1..=10).contains(&s));
        let configs: serde_json::Value = serde_json::from_str(&r[4]).unwrap();
        assert_eq!(configs.as_array().unwrap().len(), 4);
        assert!(r[8].parse::<f64>().unwrap() >= 0.0);
    }

    let enc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("encodings.json")).unwrap()).unwrap();
    assert_eq!((enc["dim"].as_u64(), enc["phase"].as_bool()), (Some(16), Some(true)));
    let (fed, _) = read_federation(&run.join("federation")).unwrap();
    let raw: std::collections::HashSet<u64> = fed
        .clients()
        .iter()
        .flat_map(|c| c.train.features().iter().map(|v| v.to_bits()))
        .collect();
    for z in enc["encodings"].as_array().unwrap() {
        let z = z.as_array().unwrap();
        assert_eq!(z.len(), 16);
        assert!(z.iter().all(|v| !raw.contains(&v.as_f64().unwrap().to_bits())));
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    for stage in ["partition", "pretrain", "tune/hpn"] {
        for a in manifest["stages"][stage]["artifacts"].as_array().unwrap() {
            assert!(run.join(a.as_str().unwrap()).exists(), "{a}");
        }
    }
    let stored = fs::read(run.join("config.toml")).unwrap();
    assert_eq!(manifest["config_hash"], fedhpn::manifest::sha256_hex(&stored));
}

#[test]
fn csv_federations_load_and_partition() {
    let b = Bench::new();
    let data = b.root.join("rows.csv");
    let mut text = String::from("x0,label,x1,client\n");
    for i in 0..40 {
        text.push_str(&format!("{},{},{},{}\n", i as f64 * 0.1, i % 2, -(i as f64), i % 4));
    }
    fs::write(&data, text).unwrap();
    let cfg_text = TINY
        .replace(
            "kind = \"cluster\"\nnum_clusters = 2\nclients_per_cluster = 2\nfeature_scales = [0.5, 4.0]\nnum_features = 3\nnum_classes = 3\nexamples_per_client = 40",
            &format!("kind = \"csv\"\npath = {:?}\nclients = 4", data.to_string_lossy()),
        );
    let cfg = b.config("csv.toml", &cfg_text);
    run_ok(&["--config", &cfg, "--out", &b.dir("run"), "partition"]);
    let (fed, meta) = read_federation(&b.root.join("run/federation")).unwrap();
    assert_eq!((meta.num_clients, meta.num_features, meta.num_classes), (4, 2, 2));
    assert!(fed
        .clients()
        .iter()
        .all(|c| c.train.len() + c.valid.len() + c.test.len() == 10));

    fs::write(&data, "x0,label\n").unwrap();
    let o = fedhpn(&["--config", &cfg, "--out", &b.dir("empty"), "partition"]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("empty dataset"), "{}", stderr(&o));
}
