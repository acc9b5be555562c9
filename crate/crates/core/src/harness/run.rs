use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{Cadence, ExperimentConfig};
use crate::buffer::BufferSnapshot;
use crate::data::{split_protocol, Dataset, Split, SubTaskStream, TaskSplit};
use crate::error::{Error, Result};
use crate::methods::{TrainStats, Trainer};
use crate::metrics::{accuracy, evaluate_row_with, EvalMatrix, MetricsReport};
use crate::nn::NetworkSpec;
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    /// The configured continual-learning method.
    Method,
    /// RT: plain sequential training over the sub-tasks.
    RawTask,
    /// JT: one training phase over the union of all sub-tasks.
    JointTraining,
    /// RB: a fresh network trained on a method's final buffer.
    RawBuffer,
}

impl RunKind {
    pub fn tag(self) -> &'static str {
        match self {
            RunKind::Method => "method",
            RunKind::RawTask => "rt",
            RunKind::JointTraining => "jt",
            RunKind::RawBuffer => "rb",
        }
    }
}

/// Rows recorded after every mini-batch. `boundaries[k]` is the index of
/// the row taken after sub-task `k` (0 is the untrained row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrace {
    pub rows: Vec<Vec<f64>>,
    pub boundaries: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub kind: RunKind,
    pub config_hash: String,
    pub config: ExperimentConfig,
    /// Absent for JT and RB, which have a single evaluation.
    pub matrix: Option<EvalMatrix>,
    pub metrics: Option<MetricsReport>,
    /// Accuracy on each sub-task's test set after training.
    pub task_accuracies: Vec<f64>,
    /// `A_T` for sequential runs, the mean sub-task accuracy for JT and the
    /// whole-test-set accuracy for RB.
    pub final_accuracy: f64,
    pub raw_buffer_accuracy: Option<f64>,
    pub trace: Option<EvalTrace>,
    pub stats: Option<TrainStats>,
    pub buffer_len: usize,
    /// File the final buffer was written to by [`super::emit_report`].
    pub buffer_snapshot: Option<PathBuf>,
    pub wall_clock_secs: f64,
    /// Set on the grid point with the best mean `A_T`.
    pub best: bool,
    #[serde(skip)]
    pub snapshot: Option<BufferSnapshot>,
}

impl RunResult {
    /// Equality of everything a run computes, ignoring timing and file
    /// locations.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.config_hash == other.config_hash
            && self.matrix == other.matrix
            && self.metrics == other.metrics
            && self.task_accuracies == other.task_accuracies
            && self.final_accuracy.to_bits() == other.final_accuracy.to_bits()
            && self.raw_buffer_accuracy.map(f64::to_bits) == other.raw_buffer_accuracy.map(f64::to_bits)
            && self.trace == other.trace
            && self.stats == other.stats
            && self.snapshot == other.snapshot
    }

    pub fn seed(&self) -> u64 {
        self.config.method.seed
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

/// Seed-level aggregation of replicated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub final_accuracy: Stat,
    pub final_forgetting: Option<Stat>,
    pub raw_buffer_accuracy: Option<Stat>,
}

impl Aggregate {
    pub fn of(results: &[RunResult]) -> Option<Self> {
        let collect = |f: &dyn Fn(&RunResult) -> Option<f64>| {
            let v: Vec<f64> = results.iter().filter_map(f).collect();
            if v.len() == results.len() {
                Stat::of(&v)
            } else {
                None
            }
        };
        Some(Self {
            runs: results.len(),
            final_accuracy: collect(&|r| Some(r.final_accuracy))?,
            final_forgetting: collect(&|r| r.metrics.as_ref().and_then(|m| m.final_forgetting)),
            raw_buffer_accuracy: collect(&|r| r.raw_buffer_accuracy),
        })
    }
}

struct Prepared {
    split: TaskSplit,
    spec: NetworkSpec,
}

fn prepare(cfg: &ExperimentConfig, data: &Dataset) -> Result<Prepared> {
    cfg.validate()?;
    let protocol = cfg.task_protocol(data.class_count)?;
    let split = split_protocol(data, &protocol)?;
    if let Some(k) = split.test.iter().position(Vec::is_empty) {
        return Err(Error::Protocol(format!("sub-task {k} has no test samples")));
    }
    Ok(Prepared {
        split,
        spec: cfg.backend.spec(data.input_dim(), data.class_count),
    })
}

fn write_rows(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (i, row) in rows.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes whatever rows exist when a run fails, then hands the error back.
pub(super) fn flush_partial(cfg: &ExperimentConfig, kind: RunKind, rows: &[Vec<f64>], err: Error) -> Error {
    if let Some(dir) = &cfg.output {
        let path = dir.join(format!("{}_s{}_{}_partial.csv", cfg.hash(), cfg.method.seed, kind.tag()));
        let written = std::fs::create_dir_all(dir).map_err(Error::from).and_then(|_| write_rows(&path, rows));
        match written {
            Ok(()) => log::warn!("run failed; partial rows written to {}", path.display()),
            Err(e) => log::error!("could not flush partial rows: {e}"),
        }
    }
    err
}

fn run_sequential(cfg: &ExperimentConfig, data: &Dataset, kind: RunKind) -> Result<RunResult> {
    let start = Instant::now();
    let Prepared { split, spec } = prepare(cfg, data)?;
    let raw = kind == RunKind::RawTask;
    let mut trainer = if raw {
        Trainer::raw(cfg.method.clone(), spec)?
    } else {
        Trainer::new(cfg.method.clone(), spec)?
    };
    let m = &cfg.method;
    let visible = raw || m.method.requires_boundaries();
    let stream = SubTaskStream::new(&split, m.batch_size, m.epochs, m.seed, visible)?;
    let eval = |t: &Trainer| evaluate_row_with(cfg.exec, t, &data.test, &split.test);

    let mut rows = vec![eval(&trainer)?];
    let mut trace = (cfg.cadence == Cadence::PerBatch).then(|| EvalTrace {
        rows: rows.clone(),
        boundaries: vec![0],
    });
    for k in 0..stream.subtask_count() {
        let mut observer = |t: &Trainer| -> Result<()> {
            if let Some(tr) = trace.as_mut() {
                tr.rows.push(eval(t)?);
            }
            Ok(())
        };
        let row = trainer
            .train_subtask(&data.train, &stream.feed(k), &mut observer)
            .and_then(|_| eval(&trainer));
        match row {
            Ok(row) => {
                if let Some(tr) = trace.as_mut() {
                    tr.boundaries.push(tr.rows.len());
                    tr.rows.push(row.clone());
                }
                rows.push(row);
            }
            Err(e) => return Err(flush_partial(cfg, kind, &rows, e)),
        }
    }

    let matrix = EvalMatrix::new(rows)?;
    let metrics = matrix.report();
    let snapshot = trainer.buffer().snapshot();
    let raw_buffer_accuracy = if kind == RunKind::Method && cfg.raw_buffer && !snapshot.is_empty() {
        Some(run_raw_buffer(cfg, data, &snapshot)?.final_accuracy)
    } else {
        None
    };
    Ok(RunResult {
        kind,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        task_accuracies: matrix.rows().last().expect("T >= 1").clone(),
        final_accuracy: metrics.final_accuracy,
        matrix: Some(matrix),
        metrics: Some(metrics),
        raw_buffer_accuracy,
        trace,
        stats: Some(trainer.stats().clone()),
        buffer_len: snapshot.len(),
        buffer_snapshot: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        best: false,
        snapshot: (!snapshot.is_empty()).then_some(snapshot),
    })
}

/// Trains the configured method over the sub-tasks, recording the
/// evaluation matrix, and runs RB on its final buffer.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunResult> {
    run_sequential(cfg, data, RunKind::Method)
}

/// RT: the same schedule as the method, without buffer or constraints.
pub fn run_raw_task(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunResult> {
    run_sequential(cfg, data, RunKind::RawTask)
}

/// JT: one training phase over the union of all sub-task data.
pub fn run_joint_training(cfg: &ExperimentConfig, data: &Dataset) -> Result<RunResult> {
    let start = Instant::now();
    let Prepared { split, spec } = prepare(cfg, data)?;
    let joint = split.joint();
    let m = &cfg.method;
    let mut trainer = Trainer::raw(m.clone(), spec)?;
    let stream = SubTaskStream::new(&joint, m.batch_size, m.epochs, m.seed, true)?;
    trainer.train_subtask(&data.train, &stream.feed(0), &mut |_| Ok(()))?;
    let row = evaluate_row_with(cfg.exec, &trainer, &data.test, &split.test)?;
    Ok(single_result(cfg, RunKind::JointTraining, row.iter().sum::<f64>() / row.len() as f64, row, trainer.stats(), start))
}

/// RB: a fresh network of the same architecture and schedule, seeded apart
/// from the generating run, trained on `snapshot` alone and evaluated on the
/// whole protocol test set.
pub fn run_raw_buffer(cfg: &ExperimentConfig, data: &Dataset, snapshot: &BufferSnapshot) -> Result<RunResult> {
    let start = Instant::now();
    if snapshot.is_empty() {
        return Err(Error::Baseline("the buffer snapshot is empty".into()));
    }
    let Prepared { split, spec } = prepare(cfg, data)?;
    if snapshot.feature_dim() != data.input_dim() {
        return Err(Error::Baseline(format!(
            "snapshot has {} features, dataset has {}",
            snapshot.feature_dim(),
            data.input_dim()
        )));
    }
    if let Some(s) = snapshot.samples.iter().find(|s| s.label >= data.class_count) {
        return Err(Error::Baseline(format!("snapshot label {} outside {} classes", s.label, data.class_count)));
    }
    let (features, labels) = snapshot.to_arrays();
    let train = Split { features, labels };
    let only = TaskSplit {
        train: vec![(0..train.len()).collect()],
        test: vec![Vec::new()],
    };
    let mut m = cfg.method.clone();
    m.seed = seed::derive(cfg.method.seed, &[seed::stream::RAW_BUFFER]);
    let mut trainer = Trainer::raw(m.clone(), spec)?;
    let stream = SubTaskStream::new(&only, m.batch_size, m.epochs, m.seed, true)?;
    trainer.train_subtask(&train, &stream.feed(0), &mut |_| Ok(()))?;
    let row = evaluate_row_with(cfg.exec, &trainer, &data.test, &split.test)?;
    let all = split.test.concat();
    let acc = accuracy(&trainer, &data.test, &all)?;
    let mut result = single_result(cfg, RunKind::RawBuffer, acc, row, trainer.stats(), start);
    result.buffer_len = snapshot.len();
    Ok(result)
}

fn single_result(cfg: &ExperimentConfig, kind: RunKind, acc: f64, row: Vec<f64>, stats: &TrainStats, start: Instant) -> RunResult {
    RunResult {
        kind,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        matrix: None,
        metrics: None,
        task_accuracies: row,
        final_accuracy: acc,
        raw_buffer_accuracy: None,
        trace: None,
        stats: Some(stats.clone()),
        buffer_len: 0,
        buffer_snapshot: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        best: false,
        snapshot: None,
    }
}

/// Runs `kind` for every replication seed of `cfg`.
pub fn replicate(cfg: &ExperimentConfig, data: &Dataset, kind: RunKind) -> Result<(Vec<RunResult>, Aggregate)> {
    cfg.validate()?;
    let run = match kind {
        RunKind::Method => run_experiment,
        RunKind::RawTask => run_raw_task,
        RunKind::JointTraining => run_joint_training,
        RunKind::RawBuffer => return Err(Error::Config("RB runs need a buffer snapshot, not replications".into())),
    };
    let results: Vec<RunResult> =
        par::map_range(cfg.exec, cfg.replications, |r| run(&cfg.replication(r), data)).into_iter().collect::<Result<_>>()?;
    let agg = Aggregate::of(&results).expect("at least one replication");
    Ok((results, agg))
}
