//! Cross-run comparison tables and tidy plot data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::csvdata::fmt_f64;
use crate::error::{read_artifact_string, write_file, HarnessError, Result};
use crate::manifest::RunManifest;
use crate::pipeline::{read_final_report, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub seed: u64,
    pub accuracy: f64,
    pub rounds_consumed: usize,
}

/// Mean and sample standard deviation (`None` below two values).
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Collects every evaluated method of every run. Runs must share one
/// experiment hash, i.e. differ at most in seed.
pub fn collect_rows(runs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    if runs.is_empty() {
        return Err(HarnessError::Usage("report needs at least one run directory".into()));
    }
    let mut hash: Option<(String, &PathBuf)> = None;
    let mut rows = Vec::new();
    for run in runs {
        let m = RunManifest::load(run)?;
        match &hash {
            Some((h, first)) if *h != m.experiment_hash => {
                return Err(HarnessError::Config(format!(
                    "runs {} and {} come from different configs (experiment hashes differ)",
                    first.display(),
                    run.display()
                )));
            }
            None => hash = Some((m.experiment_hash.clone(), run)),
            _ => {}
        }
        for method in Method::ALL {
            let p = run.join(format!("eval/{}.json", method.name()));
            if !p.exists() {
                continue;
            }
            let r = read_final_report(&p)?;
            rows.push(ComparisonRow {
                method: r.method,
                seed: r.seed,
                accuracy: r.weighted_test_accuracy,
                rounds_consumed: r.rounds_consumed,
            });
        }
    }
    if rows.is_empty() {
        return Err(HarnessError::MissingArtifact(runs[0].join("eval")));
    }
    let order = |m: &str| Method::ALL.iter().position(|x| x.name() == m).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (order(&r.method), r.seed));
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "seed", "weighted_test_accuracy", "rounds_consumed"])
        .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.seed.to_string(),
            fmt_f64(r.accuracy),
            r.rounds_consumed.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

/// `method,n,mean,std,median`; `std` is empty for a single run.
pub fn summary_csv(rows: &[ComparisonRow]) -> Vec<u8> {
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(m, _)| *m == r.method) {
            Some((_, xs)) => xs.push(r.accuracy),
            None => groups.push((r.method.clone(), vec![r.accuracy])),
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "n", "mean", "std", "median"])
        .expect("in-memory write");
    for (method, xs) in groups {
        let (mean, std) = mean_std(&xs);
        w.write_record([
            method,
            xs.len().to_string(),
            fmt_f64(mean),
            std.map(fmt_f64).unwrap_or_default(),
            fmt_f64(median(&xs)),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// One tidy CSV per policy head: `seed,update,client,candidate_index,value`.
pub fn trace_csvs(runs: &[PathBuf]) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut per_head: BTreeMap<String, csv::Writer<Vec<u8>>> = BTreeMap::new();
    for run in runs {
        let p = run.join("tune/hpn/argmax_trace.csv");
        if !p.exists() {
            continue;
        }
        let seed = RunManifest::load(run)?.seed.to_string();
        let text = read_artifact_string(&p)?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.map_err(|e| HarnessError::format("argmax trace", &p, e))?;
            if rec.len() != 5 {
                return Err(HarnessError::format("argmax trace", &p, "expected 5 columns"));
            }
            let w = per_head.entry(rec[2].to_string()).or_insert_with(|| {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["seed", "update", "client", "candidate_index", "value"])
                    .expect("in-memory write");
                w
            });
            w.write_record([seed.as_str(), &rec[0], &rec[1], &rec[3], &rec[4]])
                .expect("in-memory write");
        }
    }
    Ok(per_head
        .into_iter()
        .map(|(h, w)| (h, w.into_inner().expect("in-memory write")))
        .collect())
}

/// Writes `comparison.csv`, `summary.csv` and `argmax_<head>.csv` into `out`.
pub fn write_report(runs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let rows = collect_rows(runs)?;
    let mut written = Vec::new();
    let cp = out.join("comparison.csv");
    write_file(&cp, &comparison_csv(&rows))?;
    written.push(cp);
    let sp = out.join("summary.csv");
    write_file(&sp, &summary_csv(&rows))?;
    written.push(sp);
    for (head, bytes) in trace_csvs(runs)? {
        let tp = out.join(format!("argmax_{head}.csv"));
        write_file(&tp, &bytes)?;
        written.push(tp);
    }
    Ok(written)
}
