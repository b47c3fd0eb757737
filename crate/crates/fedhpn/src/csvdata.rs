//! Labeled CSV datasets and on-disk federations.
//!
//! A dataset file has a header row, an integer `label` column, an optional
//! integer `client` column, and any number of float feature columns (taken in
//! header order). Floats are written with 17 significant digits so a
//! write/read cycle is exact.

use std::fmt::Write as _;
use std::path::Path;

use fedhpn_core::data::{DataSet, Federation};
use fedhpn_core::datagen::{federation_from_partition, SplitRatio};
use serde::{Deserialize, Serialize};

use crate::error::{read_artifact, read_artifact_string, write_file, HarnessError, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Rows of a labeled CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub feature_names: Vec<String>,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
    pub clients: Option<Vec<usize>>,
}

impl LabeledRows {
    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn into_dataset(self, num_classes: Option<usize>) -> Result<DataSet> {
        let k = num_classes.unwrap_or_else(|| self.labels.iter().max().map_or(1, |m| m + 1));
        let f = self.num_features();
        Ok(DataSet::new(self.features, self.labels, f, k)?)
    }
}

pub fn parse_labeled_csv(text: &str, path: &Path) -> Result<LabeledRows> {
    let bad = |msg: String| HarnessError::format("dataset", path, msg);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(HarnessError::Core(fedhpn_core::Error::EmptyDataset));
    }
    let mut label_col = None;
    let mut client_col = None;
    let mut feature_cols = Vec::new();
    let mut feature_names = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match h.trim() {
            "label" => label_col = Some(i),
            "client" => client_col = Some(i),
            name => {
                feature_cols.push(i);
                feature_names.push(name.to_string());
            }
        }
    }
    let label_col = label_col.ok_or_else(|| bad("no `label` column".into()))?;
    let mut rows = LabeledRows {
        feature_names,
        features: Vec::new(),
        labels: Vec::new(),
        clients: client_col.map(|_| Vec::new()),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let int = |col: usize, name: &str| -> Result<usize> {
            rec[col]
                .trim()
                .parse::<usize>()
                .map_err(|e| bad(format!("line {line}: column `{name}`: {e}")))
        };
        rows.labels.push(int(label_col, "label")?);
        if let (Some(c), Some(cs)) = (client_col, rows.clients.as_mut()) {
            cs.push(int(c, "client")?);
        }
        for (&c, name) in feature_cols.iter().zip(&rows.feature_names) {
            let v: f64 = rec[c]
                .trim()
                .parse()
                .map_err(|e| bad(format!("line {line}: column `{name}`: {e}")))?;
            if !v.is_finite() {
                return Err(bad(format!("line {line}: column `{name}`: non-finite value")));
            }
            rows.features.push(v);
        }
    }
    if rows.is_empty() {
        return Err(HarnessError::Core(fedhpn_core::Error::EmptyDataset));
    }
    Ok(rows)
}

pub fn read_labeled_csv(path: &Path) -> Result<LabeledRows> {
    let bytes = read_artifact(path)?;
    let text = String::from_utf8(bytes).map_err(|e| HarnessError::format("dataset", path, e))?;
    parse_labeled_csv(&text, path)
}

/// Serializes a dataset with columns `x0..x{F-1},label`.
pub fn dataset_to_csv(data: &DataSet) -> String {
    let f = data.num_features();
    let mut out = String::new();
    for j in 0..f {
        let _ = write!(out, "x{j},");
    }
    out.push_str("label\n");
    for i in 0..data.len() {
        for &x in data.row(i) {
            out.push_str(&fmt_f64(x));
            out.push(',');
        }
        let _ = writeln!(out, "{}", data.label(i));
    }
    out
}

/// Splits rows into `n` client datasets, by the `client` column when present
/// and round-robin otherwise, then applies the per-client split.
pub fn federation_from_rows(
    rows: LabeledRows,
    n: usize,
    num_classes: Option<usize>,
    split: &SplitRatio,
    seed: u64,
) -> Result<Federation> {
    if n == 0 {
        return Err(HarnessError::Config("data.clients: must be at least 1".into()));
    }
    let f = rows.num_features();
    let owner: Vec<usize> = match &rows.clients {
        Some(cs) => {
            if let Some(&c) = cs.iter().find(|&&c| c >= n) {
                return Err(HarnessError::Config(format!(
                    "client column holds {c} but data.clients = {n}"
                )));
            }
            cs.clone()
        }
        None => (0..rows.len()).map(|i| i % n).collect(),
    };
    let data = rows.into_dataset(num_classes)?;
    let mut buckets = vec![Vec::new(); n];
    for (i, &c) in owner.iter().enumerate() {
        buckets[c].push(i);
    }
    let parts: Vec<DataSet> = buckets.iter().map(|idx| data.subset(idx)).collect();
    debug_assert!(parts.iter().all(|p| p.num_features() == f));
    Ok(federation_from_partition(&parts, split, seed)?)
}

pub fn load_csv_federation(
    path: &Path,
    n: usize,
    num_classes: Option<usize>,
    split: &SplitRatio,
    seed: u64,
) -> Result<Federation> {
    federation_from_rows(read_labeled_csv(path)?, n, num_classes, split, seed)
}

/// Shape record stored beside the per-client files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationMeta {
    pub num_clients: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Cluster of each client, for clustered benchmarks.
    #[serde(default)]
    pub cluster_of: Option<Vec<usize>>,
}

const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub fn client_dir(dir: &Path, client: usize) -> std::path::PathBuf {
    dir.join(format!("client_{client:03}"))
}

/// Writes `client_NNN/{train,valid,test}.csv` and `federation.json`; returns
/// the written paths.
pub fn write_federation(dir: &Path, fed: &Federation, meta: &FederationMeta) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for c in fed.clients() {
        let cd = client_dir(dir, c.id);
        for (name, data) in SPLITS.iter().zip([&c.train, &c.valid, &c.test]) {
            let p = cd.join(format!("{name}.csv"));
            write_file(&p, dataset_to_csv(data).as_bytes())?;
            written.push(p);
        }
    }
    let p = dir.join("federation.json");
    write_file(&p, crate::json_bytes(meta).as_slice())?;
    written.push(p);
    Ok(written)
}

pub fn read_federation(dir: &Path) -> Result<(Federation, FederationMeta)> {
    let meta_path = dir.join("federation.json");
    let meta: FederationMeta = serde_json::from_str(&read_artifact_string(&meta_path)?)
        .map_err(|e| HarnessError::format("federation index", &meta_path, e))?;
    let mut clients = Vec::with_capacity(meta.num_clients);
    for id in 0..meta.num_clients {
        let cd = client_dir(dir, id);
        let mut sets = Vec::with_capacity(3);
        for name in SPLITS {
            let p = cd.join(format!("{name}.csv"));
            let text = read_artifact_string(&p)?;
            let data = match parse_labeled_csv(&text, &p) {
                Ok(rows) => {
                    if rows.num_features() != meta.num_features {
                        return Err(HarnessError::format(
                            "dataset",
                            &p,
                            format!("expected {} features, got {}", meta.num_features, rows.num_features()),
                        ));
                    }
                    rows.into_dataset(Some(meta.num_classes))?
                }
                Err(HarnessError::Core(fedhpn_core::Error::EmptyDataset)) => {
                    DataSet::empty(meta.num_features, meta.num_classes)
                }
                Err(e) => return Err(e),
            };
            sets.push(data);
        }
        let test = sets.pop().unwrap();
        let valid = sets.pop().unwrap();
        let train = sets.pop().unwrap();
        clients.push(fedhpn_core::data::ClientBundle {
            id,
            train,
            valid,
            test,
            encoding: Vec::new(),
        });
    }
    Ok((Federation::new(clients)?, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    #[test]
    fn parses_label_and_client_columns_anywhere() {
        let rows = parse_labeled_csv("a,label,client,b\n1.5,2,0,-3\n0,1,1,4e-1\n", p()).unwrap();
        assert_eq!(rows.feature_names, vec!["a", "b"]);
        assert_eq!(rows.features, vec![1.5, -3.0, 0.0, 0.4]);
        assert_eq!(rows.labels, vec![2, 1]);
        assert_eq!(rows.clients, Some(vec![0, 1]));
    }

    #[test]
    fn empty_inputs_report_empty_dataset() {
        for text in ["", "x0,label\n"] {
            let err = parse_labeled_csv(text, p()).unwrap_err();
            assert!(err.to_string().contains("empty dataset"), "{err}");
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_labeled_csv("x0,label\n1,0\nfoo,1\n", p())
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 3"), "{err}");
        assert!(err.contains("x0"), "{err}");
    }

    #[test]
    fn missing_label_column_is_rejected() {
        assert!(parse_labeled_csv("x0,x1\n1,2\n", p()).is_err());
    }

    #[test]
    fn float_text_round_trips_exactly() {
        let data = DataSet::new(vec![0.1, 1.0 / 3.0, -2.5e-300, 1e300], vec![0, 1], 2, 2).unwrap();
        let back = parse_labeled_csv(&dataset_to_csv(&data), p())
            .unwrap()
            .into_dataset(Some(2))
            .unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn round_robin_assignment() {
        let text = "x0,label\n0,0\n1,1\n2,0\n3,1\n4,0\n5,1\n6,0\n7,1\n8,0\n9,1\n10,0\n11,1\n";
        let rows = parse_labeled_csv(text, p()).unwrap();
        let split = SplitRatio {
            train: 0.5,
            valid: 0.5,
            test: 0.0,
        };
        let fed = federation_from_rows(rows, 3, None, &split, 1).unwrap();
        assert_eq!(fed.len(), 3);
        for c in fed.clients() {
            let mut xs: Vec<f64> = c.train.features().iter().chain(c.valid.features()).copied().collect();
            xs.sort_by(f64::total_cmp);
            assert!(xs.iter().all(|&x| x as usize % 3 == c.id));
            assert_eq!(xs.len(), 4);
        }
    }
}
