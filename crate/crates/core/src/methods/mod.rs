//! Continual-learning trainers and the projection math behind GEM and A-GEM.

mod icarl;
mod projection;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use icarl::{icarl_classify, ClassMeans};
pub use projection::{agem_project, gem_project, solve_nonneg_qp, DualQp, QpSolution, QP_MAX_ITERATIONS, QP_TOLERANCE};
pub use trainer::{TrainStats, Trainer};

use crate::buffer::{NsrPlusStrategy, NsrStrategy, Partition, SelectionStrategy};
use crate::error::{Error, Result};
use crate::nn::{LossHead, DEFAULT_MOMENTUM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    Nsr,
    NsrPlus,
    Tem,
    Gem,
    Agem,
    Gbss,
    Icarl,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Nsr,
        Method::NsrPlus,
        Method::Tem,
        Method::Gem,
        Method::Agem,
        Method::Gbss,
        Method::Icarl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nsr => "NSR",
            Method::NsrPlus => "NSR_PLUS",
            Method::Tem => "TEM",
            Method::Gem => "GEM",
            Method::Agem => "AGEM",
            Method::Gbss => "GBSS",
            Method::Icarl => "ICARL",
        }
    }

    pub fn requires_boundaries(self) -> bool {
        matches!(self, Method::Nsr | Method::Gem | Method::Agem | Method::Icarl)
    }

    pub fn default_selection(self) -> SelectionStrategy {
        match self {
            Method::Nsr => SelectionStrategy::Nsr {
                strategy: NsrStrategy::RandomN,
            },
            Method::NsrPlus => SelectionStrategy::NsrPlus {
                strategy: NsrPlusStrategy::RandomBalanced,
            },
            Method::Tem | Method::Gem | Method::Agem => SelectionStrategy::Ring,
            Method::Gbss => SelectionStrategy::GbssGreedy {
                candidates: 10,
                threshold: 0.0,
            },
            Method::Icarl => SelectionStrategy::IcarlHerding,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// Case-insensitive; `NSR+`, `nsr-plus` and `a-gem` are accepted too.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_uppercase()
            .replace('+', "_PLUS")
            .replace('-', "_");
        match norm.as_str() {
            "NSR" => Ok(Method::Nsr),
            "NSR_PLUS" | "NSRPLUS" => Ok(Method::NsrPlus),
            "TEM" => Ok(Method::Tem),
            "GEM" => Ok(Method::Gem),
            "AGEM" | "A_GEM" => Ok(Method::Agem),
            "GBSS" => Ok(Method::Gbss),
            "ICARL" => Ok(Method::Icarl),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Extra use of the buffer as training data by the constraint-based methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rehearsal {
    #[default]
    Off,
    /// Merge the buffer into the sub-task data once.
    TaskWise,
    /// Add one buffer draw to every mini-batch.
    BatchWise,
}

/// Hyper-parameters of one trainer. Fields a method does not use are kept
/// so that run metadata records them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub buffer_size: usize,
    /// Optimizer steps per incoming mini-batch (NSR+, TEM, GBSS).
    pub iterations: usize,
    /// GEM dual offset γ; also recorded for GBSS.
    pub memory_strength: f64,
    pub gbss_threshold: f64,
    pub gbss_candidates: usize,
    /// Project GBSS updates against the replayed samples' stored gradients.
    pub gbss_constraints: bool,
    pub rehearsal: Rehearsal,
    /// NSR/iCaRL: one buffer draw per batch instead of merging once.
    pub over_sampling: bool,
    /// Defaults to the method's own strategy when absent.
    pub selection_strategy: Option<SelectionStrategy>,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            method: Method::Nsr,
            epochs: 3,
            batch_size: 50,
            learning_rate: 1e-2,
            momentum: DEFAULT_MOMENTUM,
            buffer_size: 500,
            iterations: 1,
            memory_strength: 0.5,
            gbss_threshold: 0.0,
            gbss_candidates: 10,
            gbss_constraints: false,
            rehearsal: Rehearsal::Off,
            over_sampling: false,
            selection_strategy: None,
            seed: 0,
        }
    }
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    /// The selection strategy in effect, with GBSS parameters taken from
    /// the dedicated fields.
    pub fn selection(&self) -> SelectionStrategy {
        match (self.method, self.selection_strategy) {
            (Method::Gbss, _) => SelectionStrategy::GbssGreedy {
                candidates: self.gbss_candidates,
                threshold: self.gbss_threshold,
            },
            (_, Some(s)) => s,
            (m, None) => m.default_selection(),
        }
    }

    /// Steps per incoming batch: `iterations` for the mixed-batch methods,
    /// 1 for the rest.
    pub fn effective_iterations(&self) -> usize {
        match self.method {
            Method::NsrPlus | Method::Tem | Method::Gbss => self.iterations,
            _ => 1,
        }
    }

    pub fn head(&self) -> LossHead {
        match self.method {
            Method::Icarl => LossHead::SigmoidBce,
            _ => LossHead::SoftmaxCrossEntropy,
        }
    }

    pub fn partition(&self) -> Partition {
        match (self.method, self.selection()) {
            (Method::Gem | Method::Agem, _) => Partition::ByTask,
            (_, SelectionStrategy::Reservoir | SelectionStrategy::GbssGreedy { .. }) => Partition::None,
            _ => Partition::ByClass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.gbss_candidates == 0 {
            return bad("GBSS needs at least one candidate".into());
        }
        if !self.memory_strength.is_finite() || self.memory_strength < 0.0 {
            return bad(format!("memory strength must be non-negative, got {}", self.memory_strength));
        }
        let sel = self.selection();
        let compatible = match self.method {
            Method::Nsr => matches!(sel, SelectionStrategy::Nsr { .. }),
            Method::NsrPlus => matches!(sel, SelectionStrategy::NsrPlus { .. }),
            Method::Tem => matches!(sel, SelectionStrategy::Ring | SelectionStrategy::Reservoir),
            Method::Gem | Method::Agem => sel == SelectionStrategy::Ring,
            Method::Gbss => true,
            Method::Icarl => sel == SelectionStrategy::IcarlHerding,
        };
        if !compatible {
            return bad(format!("selection strategy {sel} cannot be used with {}", self.method));
        }
        Ok(())
    }
}
