//! The evaluation matrix and the measures derived from it.
//!
//! `R` has `T + 1` rows and `T` columns. Row 0 is measured right after
//! initialisation and row `i` after training sub-task `i`; column `j` is the
//! test set of sub-task `j`. The measure functions take `k` 1-based, like the
//! rows that carry a trained model.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::par::{self, ExecMode};

/// Anything that maps a batch of samples to class labels.
pub trait Classifier {
    fn classify(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>>;
}

impl Classifier for Network {
    fn classify(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        self.predict(batch)
    }
}

/// Fraction of correctly classified samples of each sub-task's test set.
pub fn evaluate_row(model: &(impl Classifier + Sync), test: &Split, tasks: &[Vec<usize>]) -> Result<Vec<f64>> {
    evaluate_row_with(ExecMode::Sequential, model, test, tasks)
}

pub fn evaluate_row_with(mode: ExecMode, model: &(impl Classifier + Sync), test: &Split, tasks: &[Vec<usize>]) -> Result<Vec<f64>> {
    if let Some(k) = tasks.iter().position(Vec::is_empty) {
        return Err(Error::Protocol(format!("sub-task {k} has an empty test set")));
    }
    par::map(mode, tasks, |idx| accuracy(model, test, idx)).into_iter().collect()
}

/// Fraction of `indices` of `test` that `model` classifies correctly.
pub fn accuracy(model: &impl Classifier, test: &Split, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Protocol("accuracy over an empty test set".into()));
    }
    let (x, y) = test.gather(indices);
    let predicted = model.classify(x.view())?;
    let correct = predicted.iter().zip(&y).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / indices.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    rows: Vec<Vec<f64>>,
}

impl EvalMatrix {
    /// Validates the `(T+1) × T` shape and the `[0, 1]` range.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let t = rows.len().checked_sub(1).filter(|&t| t > 0).ok_or(Error::Shape {
            what: "evaluation matrix rows",
            expected: 2,
            got: rows.len(),
        })?;
        for row in &rows {
            if row.len() != t {
                return Err(Error::Shape {
                    what: "evaluation matrix columns",
                    expected: t,
                    got: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Precondition(format!("accuracy {v} outside [0, 1]")));
            }
        }
        Ok(Self { rows })
    }

    /// Number of sub-tasks `T`.
    pub fn tasks(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `R[i][j]` with row `i` in `0..=T` and column `j` in `1..=T`.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j - 1]
    }

    fn check_k(&self, k: usize, lo: usize, hi: usize, what: &str) -> Result<()> {
        if k < lo || k > hi {
            return Err(Error::Precondition(format!("{what} needs {lo} ≤ k ≤ {hi}, got k = {k}")));
        }
        Ok(())
    }

    /// `A_k`: mean of the first `k` entries of row `k`.
    pub fn average_accuracy(&self, k: usize) -> Result<f64> {
        self.check_k(k, 1, self.tasks(), "average accuracy")?;
        let mut sum = 0.0;
        for j in 1..=k {
            sum += self.at(k, j);
        }
        Ok(sum / k as f64)
    }

    /// `F_k`: mean drop of each earlier sub-task from its best accuracy
    /// before `k`.
    pub fn forgetting(&self, k: usize) -> Result<f64> {
        self.check_k(k, 2, self.tasks(), "forgetting")?;
        let mut sum = 0.0;
        for j in 1..k {
            let best = (1..k).map(|l| self.at(l, j)).fold(f64::NEG_INFINITY, f64::max);
            sum += best - self.at(k, j);
        }
        Ok(sum / (k - 1) as f64)
    }

    /// `FT_k`: mean change on the untrained sub-tasks caused by training `k`.
    pub fn forward_transfer(&self, k: usize) -> Result<f64> {
        let t = self.tasks();
        self.check_k(k, 1, t.saturating_sub(1), "forward transfer")?;
        let mut sum = 0.0;
        for j in 1..=t - k {
            sum += self.at(k, k + j) - self.at(k - 1, k + j);
        }
        Ok(sum / (t - k) as f64)
    }

    /// `BT_k`: mean change on the trained sub-tasks caused by training `k`.
    pub fn backward_transfer(&self, k: usize) -> Result<f64> {
        self.check_k(k, 2, self.tasks(), "backward transfer")?;
        let mut sum = 0.0;
        for j in 1..k {
            sum += self.at(k, j) - self.at(k - 1, j);
        }
        Ok(sum / (k - 1) as f64)
    }

    /// Term-count weighted means of all `FT_k` and all `BT_k`, computed as
    /// the flat mean over every cell difference they contain. `None` for
    /// `T < 2`.
    pub fn weighted_transfer_means(&self) -> Option<(f64, f64)> {
        let t = self.tasks();
        if t < 2 {
            return None;
        }
        let (mut ft, mut n_ft, mut bt, mut n_bt) = (0.0, 0usize, 0.0, 0usize);
        for k in 1..=t {
            for j in k + 1..=t {
                ft += self.at(k, j) - self.at(k - 1, j);
                n_ft += 1;
            }
            for j in 1..k {
                bt += self.at(k, j) - self.at(k - 1, j);
                n_bt += 1;
            }
        }
        Some((ft / n_ft as f64, bt / n_bt as f64))
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_matrix(self)
    }

    /// CSV with a `row` column and one `task_j` column per sub-task.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["row".to_string()];
        header.extend((1..=self.tasks()).map(|j| format!("task_{j}")));
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>().map_err(|e| Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("{v:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        Self::new(m.rows)
    }
}

/// Every measure of one evaluation matrix. Vectors are indexed from the
/// first `k` at which the measure is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tasks: usize,
    /// `A_1 … A_T`
    pub average_accuracy: Vec<f64>,
    /// `F_2 … F_T`
    pub forgetting: Vec<f64>,
    /// `FT_1 … FT_{T-1}`
    pub forward_transfer: Vec<f64>,
    /// `BT_2 … BT_T`
    pub backward_transfer: Vec<f64>,
    pub forward_transfer_mean: Option<f64>,
    pub backward_transfer_mean: Option<f64>,
    pub final_accuracy: f64,
    pub final_forgetting: Option<f64>,
}

impl MetricsReport {
    pub fn from_matrix(r: &EvalMatrix) -> Self {
        let t = r.tasks();
        let ok = |v: Result<f64>| v.expect("k within range");
        let average_accuracy: Vec<f64> = (1..=t).map(|k| ok(r.average_accuracy(k))).collect();
        let forgetting: Vec<f64> = (2..=t).map(|k| ok(r.forgetting(k))).collect();
        let means = r.weighted_transfer_means();
        Self {
            tasks: t,
            final_accuracy: average_accuracy[t - 1],
            final_forgetting: forgetting.last().copied(),
            average_accuracy,
            forgetting,
            forward_transfer: (1..t).map(|k| ok(r.forward_transfer(k))).collect(),
            backward_transfer: (2..=t).map(|k| ok(r.backward_transfer(k))).collect(),
            forward_transfer_mean: means.map(|m| m.0),
            backward_transfer_mean: means.map(|m| m.1),
        }
    }

    /// One row per `k` with columns `k,A,F,FT,BT`; undefined cells are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "A", "F", "FT", "BT"])?;
        let cell = |v: Option<&f64>| v.map(f64::to_string).unwrap_or_default();
        for k in 1..=self.tasks {
            w.write_record([
                k.to_string(),
                cell(self.average_accuracy.get(k - 1)),
                cell(k.checked_sub(2).and_then(|i| self.forgetting.get(i))),
                cell(self.forward_transfer.get(k - 1)),
                cell(k.checked_sub(2).and_then(|i| self.backward_transfer.get(i))),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
