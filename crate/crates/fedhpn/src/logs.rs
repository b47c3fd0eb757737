//! CSV logs: trials, argmax traces and per-round metrics.

use fedhpn_core::fl::RoundMetrics;
use fedhpn_core::rst::{ArgmaxRow, TrialRecord};
use fedhpn_core::space::{Dimension, DimensionKind, PersonalizedAssignment, SampleValue, SearchSpace};
use serde_json::{Map, Value};

use crate::csvdata::fmt_f64;
use crate::error::Result;

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory csv writer")
}

/// Decoded per-client configs as a JSON array of objects.
pub fn configs_json(space: &SearchSpace, assignment: &PersonalizedAssignment) -> Result<String> {
    let mut arr = Vec::with_capacity(assignment.len());
    for sample in &assignment.per_client {
        let decoded = space.decode(sample)?;
        let obj: Map<String, Value> = decoded
            .0
            .into_iter()
            .map(|(k, v)| (k, serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)))
            .collect();
        arr.push(Value::Object(obj));
    }
    Ok(Value::Array(arr).to_string())
}

pub const TRIAL_HEADER: [&str; 9] = [
    "method",
    "trial_id",
    "start_round",
    "reference_round",
    "configs",
    "reward",
    "rounds_consumed",
    "failed",
    "wall_time",
];

/// One row per trial. `wall_times`, when given, fills the `wall_time`
/// column (seconds); otherwise it is left empty so logs stay reproducible.
pub fn trial_log_csv(
    method: &str,
    space: &SearchSpace,
    trials: &[TrialRecord],
    wall_times: Option<&[f64]>,
) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRIAL_HEADER).expect("in-memory write");
    for (i, t) in trials.iter().enumerate() {
        let wall = wall_times
            .and_then(|ws| ws.get(i))
            .map(|&s| fmt_f64(s))
            .unwrap_or_default();
        w.write_record([
            method.to_string(),
            t.trial_id.to_string(),
            t.start_round.to_string(),
            t.reference_round.to_string(),
            configs_json(space, &t.assignment)?,
            fmt_f64(t.reward),
            t.rounds_consumed.to_string(),
            t.failed.to_string(),
            wall,
        ])
        .expect("in-memory write");
    }
    Ok(finish(w))
}

/// `update,client,head,candidate_index,value`; `candidate_index` is empty for
/// continuous heads.
pub fn argmax_trace_csv(space: &SearchSpace, trace: &[ArgmaxRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["update", "client", "head", "candidate_index", "value"])
        .expect("in-memory write");
    for row in trace {
        let dim = &space.dims()[row.head];
        let (index, value) = match row.value {
            SampleValue::Index(i) => (i.to_string(), candidate_value(dim, i)),
            SampleValue::Real { value, .. } => (String::new(), value),
        };
        w.write_record([
            row.update.to_string(),
            row.client.to_string(),
            dim.name.clone(),
            index,
            fmt_f64(value),
        ])
        .expect("in-memory write");
    }
    finish(w)
}

pub fn round_metrics_csv(metrics: &[RoundMetrics]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["round", "valid_loss", "valid_accuracy", "test_loss", "test_accuracy"])
        .expect("in-memory write");
    for m in metrics {
        let (tl, ta) = m.test.as_ref().map_or((String::new(), String::new()), |t| {
            (fmt_f64(t.loss), fmt_f64(t.accuracy))
        });
        w.write_record([
            m.round.to_string(),
            fmt_f64(m.valid.loss),
            fmt_f64(m.valid.accuracy),
            tl,
            ta,
        ])
        .expect("in-memory write");
    }
    finish(w)
}

fn candidate_value(dim: &Dimension, i: usize) -> f64 {
    match &dim.kind {
        DimensionKind::Discrete { candidates } => candidates[i],
        DimensionKind::Continuous { .. } => f64::NAN,
    }
}
