use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::run::{replicate, RunKind, RunResult};
use super::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::methods::{Method, MethodConfig};
use crate::par;

/// Value lists per [`MethodConfig`] field, e.g. `{"epochs": [1, 3, 5]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Grid(pub BTreeMap<String, Vec<Value>>);

impl Grid {
    /// Splits a config document with a top-level `"grid"` object into the
    /// base configuration and the grid.
    pub fn from_config_json(text: &str) -> Result<(ExperimentConfig, Grid)> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let grid = doc
            .as_object_mut()
            .and_then(|o| o.remove("grid"))
            .ok_or_else(|| Error::Config("config has no \"grid\" object".into()))?;
        let grid: Grid = serde_json::from_value(grid).map_err(|e| Error::Config(format!("grid: {e}")))?;
        let base: ExperimentConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        base.validate()?;
        Ok((base, grid))
    }

    /// Number of grid points.
    pub fn size(&self) -> usize {
        self.0.values().map(Vec::len).product()
    }

    /// The Cartesian product applied to `base`, last key varying fastest.
    pub fn points(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        if self.0.is_empty() || self.size() == 0 {
            return Err(Error::Config("grid is empty".into()));
        }
        let template = serde_json::to_value(&base.method)?;
        let keys: Vec<&String> = self.0.keys().collect();
        let mut out = Vec::with_capacity(self.size());
        for n in 0..self.size() {
            let mut doc = template.clone();
            let mut rest = n;
            for key in keys.iter().rev() {
                let values = &self.0[*key];
                doc[key.as_str()] = values[rest % values.len()].clone();
                rest /= values.len();
            }
            let method: MethodConfig =
                serde_json::from_value(doc).map_err(|e| Error::Config(format!("grid point {n}: {e}")))?;
            if let Some(key) = keys.iter().find(|k| !applies_to(k, method.method)) {
                return Err(Error::Config(format!("grid key {key:?} has no effect on {}", method.method)));
            }
            let cfg = ExperimentConfig {
                method,
                ..base.clone()
            };
            cfg.validate()?;
            out.push(cfg);
        }
        Ok(out)
    }
}

/// Whether the `MethodConfig` field `key` influences `method`.
fn applies_to(key: &str, method: Method) -> bool {
    use Method::*;
    match key {
        "method" | "epochs" | "batch_size" | "learning_rate" | "momentum" | "buffer_size" | "seed" => true,
        "selection_strategy" => method != Gbss,
        "iterations" => matches!(method, NsrPlus | Tem | Gbss),
        "memory_strength" => matches!(method, Gem | Gbss),
        "gbss_threshold" | "gbss_candidates" | "gbss_constraints" => method == Gbss,
        "rehearsal" => matches!(method, Gem | Agem),
        "over_sampling" => matches!(method, Nsr | Icarl),
        _ => false,
    }
}

/// Index of the highest score; equal scores go to the lower hash.
pub(super) fn best_point(scores: &[(String, f64)]) -> Option<usize> {
    (0..scores.len()).min_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1).then_with(|| scores[a].0.cmp(&scores[b].0)))
}

/// Runs every grid point with all its replications. The runs of the point
/// with the highest mean `A_T` are flagged `best`; equal means go to the
/// lower config hash. Results come back sorted by config hash, then seed.
pub fn grid_search(base: &ExperimentConfig, grid: &Grid, data: &Dataset) -> Result<Vec<RunResult>> {
    let points = grid.points(base)?;
    let outcomes: Vec<(String, Vec<RunResult>, f64)> = par::map(base.exec, &points, |cfg| {
        let (runs, agg) = replicate(cfg, data, RunKind::Method)?;
        Ok((cfg.hash(), runs, agg.final_accuracy.mean))
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let scores: Vec<(String, f64)> = outcomes.iter().map(|o| (o.0.clone(), o.2)).collect();
    let best = best_point(&scores).map(|i| scores[i].0.clone());
    let mut results: Vec<RunResult> = outcomes
        .into_iter()
        .flat_map(|(hash, runs, _)| {
            let flag = best.as_deref() == Some(hash.as_str());
            runs.into_iter().map(move |mut r| {
                r.best = flag;
                r
            })
        })
        .collect();
    results.sort_by(|a, b| a.config_hash.cmp(&b.config_hash).then(a.seed().cmp(&b.seed())));
    Ok(results)
}
