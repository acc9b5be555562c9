use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Named class-incremental protocols; `DT_C` means `T` sub-tasks of `C`
/// classes each, in ascending class order.
#[allow(non_camel_case_types)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolId {
    D1_10,
    D2_5,
    D5_2,
    D10_1,
    Custom,
}

impl ProtocolId {
    pub fn standard() -> [ProtocolId; 4] {
        [ProtocolId::D1_10, ProtocolId::D2_5, ProtocolId::D5_2, ProtocolId::D10_1]
    }

    fn tasks(self) -> Option<usize> {
        match self {
            ProtocolId::D1_10 => Some(1),
            ProtocolId::D2_5 => Some(2),
            ProtocolId::D5_2 => Some(5),
            ProtocolId::D10_1 => Some(10),
            ProtocolId::Custom => None,
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProtocolId::D1_10 => "D1_10",
            ProtocolId::D2_5 => "D2_5",
            ProtocolId::D5_2 => "D5_2",
            ProtocolId::D10_1 => "D10_1",
            ProtocolId::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for ProtocolId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "D1_10" => Ok(ProtocolId::D1_10),
            "D2_5" => Ok(ProtocolId::D2_5),
            "D5_2" => Ok(ProtocolId::D5_2),
            "D10_1" => Ok(ProtocolId::D10_1),
            "CUSTOM" => Ok(ProtocolId::Custom),
            _ => Err(Error::Config(format!("unknown task protocol {s:?}"))),
        }
    }
}

/// Ordered, pairwise disjoint class sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskProtocol {
    pub id: ProtocolId,
    pub subtasks: Vec<Vec<usize>>,
}

impl TaskProtocol {
    /// A named protocol over classes `0..classes`.
    pub fn standard(id: ProtocolId, classes: usize) -> Result<Self> {
        let tasks = id
            .tasks()
            .ok_or_else(|| Error::Config("custom protocols need explicit class sets".into()))?;
        if !classes.is_multiple_of(tasks) {
            return Err(Error::Protocol(format!("{classes} classes do not split evenly into {tasks} sub-tasks")));
        }
        let per = classes / tasks;
        let subtasks = (0..tasks).map(|t| (t * per..(t + 1) * per).collect()).collect();
        Ok(Self { id, subtasks })
    }

    pub fn custom(subtasks: Vec<Vec<usize>>) -> Result<Self> {
        let p = Self {
            id: ProtocolId::Custom,
            subtasks,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subtasks.is_empty() {
            return Err(Error::Protocol("protocol has no sub-tasks".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (k, classes) in self.subtasks.iter().enumerate() {
            if classes.is_empty() {
                return Err(Error::Protocol(format!("sub-task {k} has no classes")));
            }
            for &c in classes {
                if !seen.insert(c) {
                    return Err(Error::Protocol(format!("class {c} appears in more than one sub-task")));
                }
            }
        }
        Ok(())
    }

    /// Same sub-task sizes with classes reassigned by a seeded permutation.
    pub fn permuted(&self, seed: u64) -> Self {
        let mut classes: Vec<usize> = self.classes();
        classes.shuffle(&mut seed::rng(seed, &[0xc1a55]));
        let mut it = classes.into_iter();
        let subtasks = self.subtasks.iter().map(|s| it.by_ref().take(s.len()).collect()).collect();
        Self { id: self.id, subtasks }
    }

    pub fn len(&self) -> usize {
        self.subtasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtasks.is_empty()
    }

    /// All classes in protocol order.
    pub fn classes(&self) -> Vec<usize> {
        self.subtasks.iter().flatten().copied().collect()
    }

    /// Sub-task that owns `class`, if any.
    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.subtasks.iter().position(|s| s.contains(&class))
    }
}

/// Per-sub-task train and test indices into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSplit {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

impl TaskSplit {
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    /// A single sub-task holding every train and test index, in sub-task order.
    pub fn joint(&self) -> TaskSplit {
        TaskSplit {
            train: vec![self.train.concat()],
            test: vec![self.test.concat()],
        }
    }
}

/// Assigns every sample whose label belongs to sub-task `k` to index set `k`.
/// Samples of classes outside the protocol are dropped.
pub fn split_protocol(dataset: &Dataset, protocol: &TaskProtocol) -> Result<TaskSplit> {
    protocol.validate()?;
    let mut owner = vec![None; dataset.class_count];
    for (k, classes) in protocol.subtasks.iter().enumerate() {
        for &c in classes {
            let slot = owner
                .get_mut(c)
                .ok_or_else(|| Error::Protocol(format!("class {c} not in dataset with {} classes", dataset.class_count)))?;
            *slot = Some(k);
        }
    }
    let assign = |labels: &[usize]| {
        let mut sets = vec![Vec::new(); protocol.len()];
        for (i, &l) in labels.iter().enumerate() {
            if let Some(k) = owner[l] {
                sets[k].push(i);
            }
        }
        sets
    };
    Ok(TaskSplit {
        train: assign(&dataset.train.labels),
        test: assign(&dataset.test.labels),
    })
}
