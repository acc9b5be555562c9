//! Baselines, experiment orchestration, hyper-parameter grids and reports.

mod grid;
mod report;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use grid::{grid_search, Grid};
pub use report::{emit_report, format_summary, summary_table, SummaryRow};
pub use run::{
    replicate, run_experiment, run_joint_training, run_raw_buffer, run_raw_task, Aggregate, EvalTrace, RunKind, RunResult, Stat,
};

use crate::data::{synthetic_dataset, Dataset, ProtocolId, TaskProtocol};
use crate::error::{Error, Result};
use crate::methods::MethodConfig;
use crate::nn::NetworkSpec;
use crate::par::ExecMode;

/// Where the samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetRef {
    /// A directory with `train-*`/`t10k-*` IDX files, optionally keeping
    /// only a class-stratified fraction of it.
    Idx {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        subsample: Option<f64>,
    },
    /// Gaussian class clusters, see [`synthetic_dataset`].
    Synthetic {
        classes: usize,
        per_class: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

impl DatasetRef {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetRef::Idx { path, subsample } => {
                let name = path.file_name().map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
                let data = Dataset::from_idx_dir(name, path)?;
                match subsample {
                    Some(f) => data.stratified_subsample(*f),
                    None => Ok(data),
                }
            }
            DatasetRef::Synthetic {
                classes,
                per_class,
                dim,
                separation,
                seed,
            } => synthetic_dataset(*classes, *per_class, *dim, *separation, *seed),
        }
    }
}

/// Network architecture; the head is chosen by the method.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Dnn100,
    Dnn400x3,
    Hidden(Vec<usize>),
}

impl Backend {
    pub fn spec(&self, input_dim: usize, classes: usize) -> NetworkSpec {
        match self {
            Backend::Dnn100 => NetworkSpec::dnn_100(input_dim, classes),
            Backend::Dnn400x3 => NetworkSpec::dnn_400x3(input_dim, classes),
            Backend::Hidden(h) => {
                NetworkSpec::new(input_dim, h.clone(), classes, crate::nn::LossHead::SoftmaxCrossEntropy)
            }
        }
    }
}

/// When the evaluation matrix gains a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    #[default]
    PerSubtask,
    /// Also after every mini-batch; the per-sub-task rows are kept separately.
    PerBatch,
}

/// Everything needed to reproduce a run, given its seed (`method.seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetRef,
    pub protocol: ProtocolId,
    /// Class sets for [`ProtocolId::Custom`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtasks: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default)]
    pub cadence: Cadence,
    /// Directory for reports and buffer snapshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Seeds `method.seed`, `method.seed + 1`, ...
    #[serde(default = "one")]
    pub replications: usize,
    /// Scheduling of evaluations and of independent runs. Never changes results.
    #[serde(default)]
    pub exec: ExecMode,
    /// Train the RB baseline on the final buffer of every method run.
    #[serde(default = "yes")]
    pub raw_buffer: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetRef, protocol: ProtocolId, method: MethodConfig) -> Self {
        Self {
            dataset,
            protocol,
            subtasks: None,
            backend: Backend::default(),
            method,
            cadence: Cadence::default(),
            output: None,
            replications: 1,
            exec: ExecMode::default(),
            raw_buffer: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.method.validate()?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        match (self.protocol, &self.subtasks) {
            (ProtocolId::Custom, None) => Err(Error::Config("custom protocol needs \"subtasks\"".into())),
            (ProtocolId::Custom, Some(_)) | (_, None) => Ok(()),
            (id, Some(_)) => Err(Error::Config(format!("\"subtasks\" given for standard protocol {id}"))),
        }
    }

    pub fn task_protocol(&self, classes: usize) -> Result<TaskProtocol> {
        match &self.subtasks {
            Some(s) => TaskProtocol::custom(s.clone()),
            None => TaskProtocol::standard(self.protocol, classes),
        }
    }

    /// SHA-256 over the settings that determine results; output location,
    /// scheduling and replication count are left out.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output: None,
            exec: ExecMode::default(),
            replications: 1,
            ..self.clone()
        };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// The configuration of replication `r`.
    pub fn replication(&self, r: usize) -> Self {
        let mut cfg = self.clone();
        cfg.method.seed = self.method.seed.wrapping_add(r as u64);
        cfg.replications = 1;
        cfg
    }
}

#[cfg(test)]
mod tests;
