use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunKind, RunResult, Stat};
use super::{DatasetRef, ExperimentConfig};
use crate::error::{Error, Result};

/// One method × protocol × dataset line of the summary table, aggregated
/// over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub protocol: String,
    pub method: String,
    pub kind: RunKind,
    /// Hash of the configuration with the seed cleared.
    pub setting: String,
    /// Compact schedule and buffer description, e.g. `e3 b50 lr0.01 m500`.
    pub params: String,
    pub runs: usize,
    pub best: bool,
    pub final_accuracy: Stat,
    pub final_forgetting: Option<Stat>,
    pub forward_transfer_mean: Option<f64>,
    pub backward_transfer_mean: Option<f64>,
    pub raw_buffer_accuracy: Option<Stat>,
}

fn dataset_label(d: &DatasetRef) -> String {
    match d {
        DatasetRef::Idx { path, subsample } => {
            let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            match subsample {
                Some(f) => format!("{name}@{f}"),
                None => name,
            }
        }
        DatasetRef::Synthetic { classes, dim, .. } => format!("synthetic-{classes}x{dim}"),
    }
}

fn params(cfg: &ExperimentConfig) -> String {
    let m = &cfg.method;
    format!("e{} b{} lr{} m{}", m.epochs, m.batch_size, m.learning_rate, m.buffer_size)
}

fn setting_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.method.seed = 0;
    c.hash()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.and_then(|v| Stat::of(&v)).map(|s| s.mean)
}

/// Groups results that differ only in their seed.
pub fn summary_table(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, RunKind, String), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        let c = &r.config;
        let key = (dataset_label(&c.dataset), c.protocol.to_string(), c.method.method.to_string(), r.kind, setting_hash(c));
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((dataset, protocol, method, kind, setting), runs)| {
            let stat = |f: &dyn Fn(&RunResult) -> Option<f64>| {
                let v: Option<Vec<f64>> = runs.iter().map(|r| f(r)).collect();
                v.and_then(|v| Stat::of(&v))
            };
            SummaryRow {
                runs: runs.len(),
                best: runs.iter().any(|r| r.best),
                final_accuracy: stat(&|r| Some(r.final_accuracy)).expect("nonempty group"),
                final_forgetting: stat(&|r| r.metrics.as_ref().and_then(|m| m.final_forgetting)),
                forward_transfer_mean: mean_of(runs.iter().map(|r| r.metrics.as_ref().and_then(|m| m.forward_transfer_mean))),
                backward_transfer_mean: mean_of(runs.iter().map(|r| r.metrics.as_ref().and_then(|m| m.backward_transfer_mean))),
                raw_buffer_accuracy: stat(&|r| r.raw_buffer_accuracy),
                params: params(&runs[0].config),
                dataset,
                protocol,
                method,
                kind,
                setting,
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

/// Plain-text rendering of [`summary_table`].
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<16} {:<7} {:<9} {:<6} {:<24} {:>4} {:>17} {:>17} {:>8} {:>8} {:>8}\n",
        "dataset", "task", "method", "kind", "params", "runs", "A_T", "F_T", "FT_mean", "BT_mean", "RB"
    );
    for r in rows {
        let pm = |s: Option<Stat>| s.map(|s| format!("{:.4} ± {:.4}", s.mean, s.std)).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<16} {:<7} {:<9} {:<6} {:<24} {:>4} {:>17} {:>17} {:>8} {:>8} {:>8}{}",
            r.dataset,
            r.protocol,
            r.method,
            r.kind.tag(),
            r.params,
            r.runs,
            pm(Some(r.final_accuracy)),
            pm(r.final_forgetting),
            opt(r.forward_transfer_mean),
            opt(r.backward_transfer_mean),
            opt(r.raw_buffer_accuracy.map(|s| s.mean)),
            if r.best { "  *" } else { "" }
        );
    }
    out
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "dataset", "protocol", "method", "kind", "setting", "params", "runs", "best", "A_T_mean", "A_T_std", "F_T_mean", "F_T_std",
        "FT_mean", "BT_mean", "RB_mean", "RB_std",
    ])?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.protocol.clone(),
            r.method.clone(),
            r.kind.tag().to_string(),
            r.setting.clone(),
            r.params.clone(),
            r.runs.to_string(),
            r.best.to_string(),
            r.final_accuracy.mean.to_string(),
            r.final_accuracy.std.to_string(),
            cell(r.final_forgetting.map(|s| s.mean)),
            cell(r.final_forgetting.map(|s| s.std)),
            cell(r.forward_transfer_mean),
            cell(r.backward_transfer_mean),
            cell(r.raw_buffer_accuracy.map(|s| s.mean)),
            cell(r.raw_buffer_accuracy.map(|s| s.std)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_csv(path: &Path, r: &RunResult) -> Result<()> {
    let trace = r.trace.as_ref().expect("caller checked");
    let mut w = csv::Writer::from_path(path)?;
    let tasks = trace.rows.first().map_or(0, Vec::len);
    let mut header = vec!["row".to_string(), "subtask_end".to_string()];
    header.extend((1..=tasks).map(|j| format!("task_{j}")));
    w.write_record(&header)?;
    for (i, row) in trace.rows.iter().enumerate() {
        let end = trace.boundaries.iter().position(|&b| b == i).map(|k| k.to_string()).unwrap_or_default();
        let mut rec = vec![i.to_string(), end];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes, per result, the evaluation matrix and per-`k` metrics as CSV, the
/// per-batch trace and final buffer when present, and the full result as
/// JSON; then `summary.csv` over all results. Returns the written paths.
pub fn emit_report(results: &[RunResult], dir: &Path) -> Result<Vec<PathBuf>> {
    if results.is_empty() {
        return Err(Error::Precondition("no results to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for r in results {
        let stem = format!("{}_{}_s{}_{}", r.config.method.method, r.kind.tag(), r.seed(), r.config_hash);
        let mut r = r.clone();
        if let Some(m) = &r.matrix {
            let p = dir.join(format!("{stem}_R.csv"));
            m.write_csv(&p)?;
            written.push(p);
        }
        if let Some(m) = &r.metrics {
            let p = dir.join(format!("{stem}_metrics.csv"));
            m.write_csv(&p)?;
            written.push(p);
        }
        if r.trace.is_some() {
            let p = dir.join(format!("{stem}_trace.csv"));
            write_trace_csv(&p, &r)?;
            written.push(p);
        }
        if let Some(s) = &r.snapshot {
            let name = format!("{stem}_buffer.csv");
            let p = dir.join(&name);
            s.write_csv(&p)?;
            r.buffer_snapshot = Some(PathBuf::from(name));
            written.push(p);
        }
        let p = dir.join(format!("{stem}.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&r)?)?;
        written.push(p);
    }
    let p = dir.join("summary.csv");
    write_summary_csv(&p, &summary_table(results))?;
    written.push(p);
    Ok(written)
}
