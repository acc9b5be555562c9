//! Datasets, class-incremental task protocols and seeded batch streams.

pub mod idx;
mod protocol;
mod stream;
mod synthetic;

use std::path::Path;

use ndarray::{Array2, Axis};

pub use protocol::{split_protocol, ProtocolId, TaskProtocol, TaskSplit};
pub use stream::{batch_schedule, Boundary, SubTaskFeed, SubTaskStream};
pub use synthetic::{synthetic_dataset, SYNTHETIC_NOISE};

use crate::error::{Error, Result};

/// Samples (one flattened sample per row, values in `[0, 1]`) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Rows and labels at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: Split,
    pub test: Split,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, train: Split, test: Split, class_count: usize) -> Result<Self> {
        for (what, split) in [("train", &train), ("test", &test)] {
            if split.features.nrows() != split.labels.len() {
                return Err(Error::Shape {
                    what: "dataset rows vs labels",
                    expected: split.features.nrows(),
                    got: split.labels.len(),
                });
            }
            if let Some(&label) = split.labels.iter().find(|&&l| l >= class_count) {
                return Err(Error::Protocol(format!("{what} label {label} >= class count {class_count}")));
            }
        }
        if train.dim() != test.dim() {
            return Err(Error::Shape {
                what: "test feature dimension",
                expected: train.dim(),
                got: test.dim(),
            });
        }
        Ok(Self {
            name: name.into(),
            train,
            test,
            class_count,
        })
    }

    /// Loads `train-*`/`t10k-*` IDX files (optionally gzipped) from `dir`.
    /// The class count is the largest label plus one.
    pub fn from_idx_dir(name: impl Into<String>, dir: &Path) -> Result<Self> {
        let (train, test) = idx::load_mnist_dir(dir)?;
        let classes = train.labels.iter().chain(&test.labels).max().map_or(0, |m| m + 1);
        Self::new(name, train, test, classes)
    }

    pub fn input_dim(&self) -> usize {
        self.train.dim()
    }

    /// Keeps the first `fraction` of every class in both splits.
    pub fn stratified_subsample(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("subsample fraction {fraction} outside (0, 1]")));
        }
        let pick = |split: &Split| {
            let mut per_class = vec![Vec::new(); self.class_count];
            for (i, &l) in split.labels.iter().enumerate() {
                per_class[l].push(i);
            }
            let mut keep: Vec<usize> = per_class
                .iter()
                .flat_map(|idx| idx[..((idx.len() as f64 * fraction).round() as usize).min(idx.len())].iter().copied())
                .collect();
            keep.sort_unstable();
            let (features, labels) = split.gather(&keep);
            Split { features, labels }
        };
        Self::new(format!("{}@{fraction}", self.name), pick(&self.train), pick(&self.test), self.class_count)
    }
}
