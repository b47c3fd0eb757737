//! Datasets, client bundles and federations.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSet {
    features: Vec<f64>,
    labels: Vec<usize>,
    num_features: usize,
    num_classes: usize,
}

impl DataSet {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, num_features: usize, num_classes: usize) -> Result<Self> {
        if num_features == 0 || num_classes == 0 {
            return Err(Error::InvalidDataset("need at least one feature and one class".into()));
        }
        if features.len() != labels.len() * num_features {
            return Err(Error::LengthMismatch {
                expected: labels.len() * num_features,
                got: features.len(),
            });
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidDataset(format!("label {l} outside [0, {num_classes})")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            num_features,
            num_classes,
        })
    }

    pub fn empty(num_features: usize, num_classes: usize) -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            num_features,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Rows at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.num_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            num_features: self.num_features,
            num_classes: self.num_classes,
        }
    }

    pub fn push(&mut self, row: &[f64], label: usize) -> Result<()> {
        if row.len() != self.num_features {
            return Err(Error::LengthMismatch {
                expected: self.num_features,
                got: row.len(),
            });
        }
        if label >= self.num_classes {
            return Err(Error::InvalidDataset(format!("label {label} out of range")));
        }
        self.features.extend_from_slice(row);
        self.labels.push(label);
        Ok(())
    }

    /// Multiplies every feature by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        for x in &mut self.features {
            *x *= factor;
        }
        self
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = alloc::vec![0usize; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// One client's data splits plus its encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientBundle {
    pub id: usize,
    pub train: DataSet,
    pub valid: DataSet,
    pub test: DataSet,
    /// Filled by [`crate::encoding::encode_federation`]; empty until then.
    pub encoding: Vec<f64>,
}

impl ClientBundle {
    pub fn split(&self, split: Split) -> &DataSet {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Federation {
    clients: Vec<ClientBundle>,
    total_valid: usize,
}

impl Federation {
    pub fn new(clients: Vec<ClientBundle>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::InvalidDataset("federation has no clients".into()));
        }
        let shape = (clients[0].train.num_features(), clients[0].train.num_classes());
        for (i, c) in clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidDataset(format!("client at position {i} has id {}", c.id)));
            }
            for split in [&c.train, &c.valid, &c.test] {
                if (split.num_features(), split.num_classes()) != shape {
                    return Err(Error::InvalidDataset(format!(
                        "client {i}: inconsistent feature/class counts"
                    )));
                }
            }
            if c.train.is_empty() {
                return Err(Error::InvalidDataset(format!("client {i}: empty training split")));
            }
            if c.valid.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "client {i}: validation split must hold at least one example"
                )));
            }
        }
        let total_valid = clients.iter().map(|c| c.valid.len()).sum();
        Ok(Self { clients, total_valid })
    }

    pub fn clients(&self) -> &[ClientBundle] {
        &self.clients
    }

    pub fn clients_mut(&mut self) -> &mut [ClientBundle] {
        &mut self.clients
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn total_valid(&self) -> usize {
        self.total_valid
    }

    pub fn num_features(&self) -> usize {
        self.clients[0].train.num_features()
    }

    pub fn num_classes(&self) -> usize {
        self.clients[0].train.num_classes()
    }

    pub fn encodings(&self) -> Vec<&[f64]> {
        self.clients.iter().map(|c| c.encoding.as_slice()).collect()
    }
}
