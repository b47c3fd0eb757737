//! Binary parameter files, checkpoint stores and policy snapshots.
//!
//! A parameter file is an 8-byte header (`FHPNPV` plus a little-endian u16
//! version), a little-endian u64 count, then the values as little-endian
//! f64. A checkpoint store is one such file per round plus `index.json`.

use std::path::{Path, PathBuf};

use fedhpn_core::fl::{CheckpointMeta, CheckpointStore};
use fedhpn_core::policy::{PolicyArch, PolicyParams};
use fedhpn_core::space::SearchSpace;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_artifact, read_artifact_string, write_file, HarnessError, Result};

pub const MAGIC: &[u8; 6] = b"FHPNPV";
pub const VERSION: u16 = 1;
const HEADER: usize = 16;

pub fn encode_params(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    let bad = |msg: &str| HarnessError::format("parameter file", path, msg);
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if &bytes[..6] != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER..];
    if body.len() != count.checked_mul(8).ok_or_else(|| bad("count overflow"))? {
        return Err(bad(&format!("expected {count} values, found {} bytes", body.len())));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_params(path: &Path) -> Result<Vec<f64>> {
    decode_params(&read_artifact(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub round: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreIndex {
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub rounds: Vec<IndexEntry>,
}

pub fn round_file(round: usize) -> String {
    format!("round_{round:05}.bin")
}

/// Writes one file per round and `index.json`; returns the written paths.
pub fn write_store(dir: &Path, store: &CheckpointStore) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(store.rounds() + 1);
    let mut rounds = Vec::with_capacity(store.rounds());
    for (round, w) in store.iter() {
        let file = round_file(round);
        let p = dir.join(&file);
        write_file(&p, &encode_params(&w.values))?;
        written.push(p);
        rounds.push(IndexEntry { round, file });
    }
    let index = StoreIndex {
        meta: store.meta.clone(),
        rounds,
    };
    let p = dir.join("index.json");
    write_file(&p, &crate::json_bytes(&index))?;
    written.push(p);
    Ok(written)
}

pub fn read_store(dir: &Path) -> Result<CheckpointStore> {
    let index_path = dir.join("index.json");
    let index: StoreIndex = serde_json::from_str(&read_artifact_string(&index_path)?)
        .map_err(|e| HarnessError::format("checkpoint index", &index_path, e))?;
    let mut store = CheckpointStore::new(index.meta.clone());
    for (i, entry) in index.rounds.iter().enumerate() {
        if entry.round != i + 1 {
            return Err(HarnessError::format(
                "checkpoint index",
                &index_path,
                format!("round {} listed at position {}", entry.round, i + 1),
            ));
        }
        let values = read_params(&dir.join(&entry.file))?;
        store.push(index.meta.model.params_from(values)?);
    }
    Ok(store)
}

/// Hash identifying a search space in policy metadata.
pub fn space_hash(space: &SearchSpace) -> String {
    let json = serde_json::to_vec(space).expect("space serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub arch: PolicyArch,
    pub space_hash: String,
    pub seed: u64,
}

/// Writes `policy.bin` and `policy.json` into `dir`.
pub fn write_policy(dir: &Path, theta: &PolicyParams, space: &SearchSpace, seed: u64) -> Result<Vec<PathBuf>> {
    let bin = dir.join("policy.bin");
    write_file(&bin, &encode_params(&theta.values))?;
    let meta = PolicyMeta {
        arch: theta.arch.clone(),
        space_hash: space_hash(space),
        seed,
    };
    let json = dir.join("policy.json");
    write_file(&json, &crate::json_bytes(&meta))?;
    Ok(vec![bin, json])
}

/// Loads a snapshot, refusing one trained for a different space.
pub fn read_policy(dir: &Path, space: &SearchSpace) -> Result<(PolicyParams, PolicyMeta)> {
    let json = dir.join("policy.json");
    let meta: PolicyMeta = serde_json::from_str(&read_artifact_string(&json)?)
        .map_err(|e| HarnessError::format("policy metadata", &json, e))?;
    if meta.space_hash != space_hash(space) || !meta.arch.matches(space) {
        return Err(HarnessError::Config(format!(
            "policy snapshot {} was trained for a different search space",
            json.display()
        )));
    }
    let values = read_params(&dir.join("policy.bin"))?;
    let theta = PolicyParams::from_values(meta.arch.clone(), values)?;
    Ok((theta, meta))
}
