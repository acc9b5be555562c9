use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Selection strategies that rank a whole sub-task's class data at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsrStrategy {
    RandomN,
    AveragedN,
    IntensityMin,
    IntensityMax,
    MeanNearest,
    MeanFarthest,
    VarianceLowest,
    VarianceHighest,
}

impl NsrStrategy {
    pub const ALL: [NsrStrategy; 8] = [
        NsrStrategy::RandomN,
        NsrStrategy::AveragedN,
        NsrStrategy::IntensityMin,
        NsrStrategy::IntensityMax,
        NsrStrategy::MeanNearest,
        NsrStrategy::MeanFarthest,
        NsrStrategy::VarianceLowest,
        NsrStrategy::VarianceHighest,
    ];
}

/// Streaming strategies that score each labelled sample with the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NsrPlusStrategy {
    RandomBalanced,
    ClassificationFalse,
    ClassificationTrue,
    PredictionMin,
    PredictionMax,
}

impl NsrPlusStrategy {
    pub const ALL: [NsrPlusStrategy; 5] = [
        NsrPlusStrategy::RandomBalanced,
        NsrPlusStrategy::ClassificationFalse,
        NsrPlusStrategy::ClassificationTrue,
        NsrPlusStrategy::PredictionMin,
        NsrPlusStrategy::PredictionMax,
    ];

    /// For score-based strategies: whether high scores are retained.
    pub fn keeps_high(self) -> Option<bool> {
        match self {
            NsrPlusStrategy::RandomBalanced => None,
            NsrPlusStrategy::ClassificationFalse | NsrPlusStrategy::PredictionMin => Some(false),
            NsrPlusStrategy::ClassificationTrue | NsrPlusStrategy::PredictionMax => Some(true),
        }
    }
}

/// Every sample-in/sample-out policy a buffer can run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SelectionStrategy {
    Nsr { strategy: NsrStrategy },
    NsrPlus { strategy: NsrPlusStrategy },
    Ring,
    Reservoir,
    GbssGreedy { candidates: usize, threshold: f64 },
    IcarlHerding,
}

impl SelectionStrategy {
    /// Whether the strategy needs to know where sub-tasks begin and end.
    pub fn requires_boundaries(&self) -> bool {
        matches!(self, SelectionStrategy::Nsr { .. } | SelectionStrategy::IcarlHerding)
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionStrategy::Nsr { strategy } => f.write_str(&snake_name(strategy)),
            SelectionStrategy::NsrPlus { strategy } => f.write_str(&snake_name(strategy)),
            SelectionStrategy::Ring => f.write_str("ring"),
            SelectionStrategy::Reservoir => f.write_str("reservoir"),
            SelectionStrategy::GbssGreedy { candidates, threshold } => write!(f, "gbss_greedy({candidates},{threshold})"),
            SelectionStrategy::IcarlHerding => f.write_str("icarl_herding"),
        }
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    /// Accepts the snake_case strategy names, e.g. `random_n`,
    /// `classification_false`, `ring`, `reservoir`, `gbss_greedy`,
    /// `icarl_herding`.
    fn from_str(s: &str) -> Result<Self> {
        let quoted = format!("\"{s}\"");
        if let Ok(strategy) = serde_json::from_str::<NsrStrategy>(&quoted) {
            return Ok(SelectionStrategy::Nsr { strategy });
        }
        if let Ok(strategy) = serde_json::from_str::<NsrPlusStrategy>(&quoted) {
            return Ok(SelectionStrategy::NsrPlus { strategy });
        }
        match s {
            "ring" => Ok(SelectionStrategy::Ring),
            "reservoir" => Ok(SelectionStrategy::Reservoir),
            "gbss_greedy" => Ok(SelectionStrategy::GbssGreedy {
                candidates: 10,
                threshold: 0.0,
            }),
            "icarl_herding" => Ok(SelectionStrategy::IcarlHerding),
            _ => Err(Error::Config(format!("unknown selection strategy {s:?}"))),
        }
    }
}

fn snake_name<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value)
        .map(|s| s.trim_matches('"').to_owned())
        .unwrap_or_default()
}
