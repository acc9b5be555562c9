//! Fixed-capacity replay buffer and its sample-in/sample-out strategies.
//!
//! The buffer is split into groups according to its [`Partition`]: one
//! group overall, one per sub-task, or one per class. Groups are registered
//! the first time they receive data and every registration recomputes the
//! per-group quotas. Groups above their new quota shrink immediately through
//! the eviction rule of the strategy that triggered the registration, so the
//! total never exceeds the capacity.

mod herding;
mod nsr;
mod snapshot;
mod strategy;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use herding::herding_select;
pub use nsr::{nsr_select, nsr_select_class, pixel_sum, squared_deviation};
pub use snapshot::{BufferSnapshot, SnapshotSample};
pub use strategy::{NsrPlusStrategy, NsrStrategy, SelectionStrategy};

use crate::error::{Error, Result};
use crate::nn::{cosine_with_norm, softmax_inplace, FlatGradient};
use crate::seed;

/// Whether a stored sample is a real observation or a synthetic mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Real,
    Averaged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub features: Vec<f64>,
    pub label: usize,
    pub origin: Origin,
    /// Strategy-specific score frozen at insertion time.
    pub score: Option<f64>,
    /// Sub-task the sample was observed in, when known.
    pub task: Option<usize>,
    /// Gradient at insertion time (gradient-based selection only).
    pub gradient: Option<FlatGradient>,
}

impl StoredSample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label,
            origin: Origin::Real,
            score: None,
            task: None,
            gradient: None,
        }
    }

    pub fn with_task(mut self, task: usize) -> Self {
        self.task = Some(task);
        self
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    None,
    ByTask,
    ByClass,
}

/// Which stored sample leaves a group that is above its quota.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eviction {
    /// First inserted (ring buffer).
    Oldest,
    /// Last in the group's ranking (ranked selections keep their best prefix).
    LastRanked,
    /// Uniformly random.
    Random,
    /// Lowest score when `keep_high`, otherwise highest score.
    WorstScore { keep_high: bool },
}

/// Outcome of a gradient-based insertion attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GbssOutcome {
    Filled,
    Replaced { slot: usize, similarity: f64 },
    Discarded { max_similarity: f64 },
}

#[derive(Debug, Clone)]
struct Group {
    key: usize,
    samples: Vec<StoredSample>,
    /// Samples offered to this group so far (per-group reservoir).
    offered: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    partition: Partition,
    groups: Vec<Group>,
    seen_count: u64,
    rng: ChaCha8Rng,
    sample_ins: u64,
    sample_outs: u64,
}

/// `floor(capacity / groups)` each, the remainder spread one-each over the
/// first groups.
pub fn allocate_quota(capacity: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 {
        return Err(Error::Precondition("quota allocation over zero groups".into()));
    }
    let base = capacity / groups;
    let rem = capacity % groups;
    Ok((0..groups).map(|g| base + usize::from(g < rem)).collect())
}

fn worst_index(samples: &[StoredSample], keep_high: bool) -> Option<usize> {
    // unscored samples rank below every scored one
    let unscored = if keep_high { f64::NEG_INFINITY } else { f64::INFINITY };
    let score = |s: &StoredSample| s.score.unwrap_or(unscored);
    let mut worst: Option<usize> = None;
    for (i, s) in samples.iter().enumerate() {
        let better_candidate = match worst {
            None => true,
            Some(w) => {
                if keep_high {
                    score(s) < score(&samples[w])
                } else {
                    score(s) > score(&samples[w])
                }
            }
        };
        if better_candidate {
            worst = Some(i);
        }
    }
    worst
}

impl ReplayBuffer {
    pub fn new(capacity: usize, partition: Partition, seed: u64) -> Self {
        Self {
            capacity,
            partition,
            groups: Vec::new(),
            seen_count: 0,
            rng: seed::rng(seed, &[seed::stream::BUFFER]),
            sample_ins: 0,
            sample_outs: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn partition(&self) -> Partition {
        self.partition
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    /// Stream items offered to the buffer so far.
    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    /// Insertions and evictions performed so far.
    pub fn events(&self) -> (u64, u64) {
        (self.sample_ins, self.sample_outs)
    }

    /// Group keys in registration order.
    pub fn group_keys(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.key).collect()
    }

    pub fn group(&self, key: usize) -> &[StoredSample] {
        self.groups
            .iter()
            .find(|g| g.key == key)
            .map_or(&[], |g| g.samples.as_slice())
    }

    /// All stored samples, group by group.
    pub fn iter(&self) -> impl Iterator<Item = &StoredSample> {
        self.groups.iter().flat_map(|g| g.samples.iter())
    }

    pub fn get(&self, mut flat: usize) -> Option<&StoredSample> {
        for g in &self.groups {
            if flat < g.samples.len() {
                return g.samples.get(flat);
            }
            flat -= g.samples.len();
        }
        None
    }

    /// Class label → stored count.
    pub fn class_histogram(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut h = std::collections::BTreeMap::new();
        for s in self.iter() {
            *h.entry(s.label).or_insert(0) += 1;
        }
        h
    }

    /// Quotas of the registered groups in registration order.
    pub fn quotas(&self) -> Vec<usize> {
        if self.groups.is_empty() {
            return Vec::new();
        }
        allocate_quota(self.capacity, self.groups.len()).expect("nonempty")
    }

    pub fn quota_of(&self, key: usize) -> Option<usize> {
        let pos = self.groups.iter().position(|g| g.key == key)?;
        Some(self.quotas()[pos])
    }

    /// Group key of a sample under this buffer's partition.
    pub fn key_for(&self, label: usize, task: Option<usize>) -> Result<usize> {
        match self.partition {
            Partition::None => Ok(0),
            Partition::ByClass => Ok(label),
            Partition::ByTask => task.ok_or_else(|| Error::Precondition("task-partitioned buffer needs the sub-task index".into())),
        }
    }

    /// Registers `key` if unseen, then shrinks groups above their quota.
    /// Returns the group's position.
    pub fn ensure_group(&mut self, key: usize, eviction: Eviction) -> usize {
        if let Some(pos) = self.groups.iter().position(|g| g.key == key) {
            return pos;
        }
        self.groups.push(Group {
            key,
            samples: Vec::new(),
            offered: 0,
        });
        self.rebalance(eviction);
        self.groups.len() - 1
    }

    fn rebalance(&mut self, eviction: Eviction) {
        let quotas = self.quotas();
        for (gi, quota) in quotas.into_iter().enumerate() {
            while self.groups[gi].samples.len() > quota {
                self.evict_from(gi, eviction);
            }
        }
        debug_assert!(self.len() <= self.capacity);
    }

    fn evict_from(&mut self, gi: usize, eviction: Eviction) -> StoredSample {
        let len = self.groups[gi].samples.len();
        debug_assert!(len > 0);
        let idx = match eviction {
            Eviction::Oldest => 0,
            Eviction::LastRanked => len - 1,
            Eviction::Random => self.rng.gen_range(0..len),
            Eviction::WorstScore { keep_high } => worst_index(&self.groups[gi].samples, keep_high).expect("nonempty"),
        };
        self.sample_outs += 1;
        match eviction {
            Eviction::Oldest | Eviction::LastRanked => self.groups[gi].samples.remove(idx),
            _ => self.groups[gi].samples.swap_remove(idx),
        }
    }

    fn push(&mut self, gi: usize, sample: StoredSample) {
        debug_assert!(self.len() < self.capacity, "sample-in on a full buffer without sample-out");
        self.sample_ins += 1;
        self.groups[gi].samples.push(sample);
    }

    fn replace(&mut self, gi: usize, idx: usize, sample: StoredSample) {
        self.sample_outs += 1;
        self.sample_ins += 1;
        self.groups[gi].samples[idx] = sample;
    }

    /// Replaces the contents of `key` by a ranked selection, truncated to the
    /// group's quota. Used after boundary-aware selection (NSR, herding).
    pub fn set_group_ranked(&mut self, key: usize, ranked: Vec<StoredSample>) -> usize {
        let gi = self.ensure_group(key, Eviction::LastRanked);
        let quota = self.quotas()[gi];
        let old = std::mem::take(&mut self.groups[gi].samples);
        self.sample_outs += old.len() as u64;
        for s in ranked.into_iter().take(quota) {
            self.push(gi, s);
        }
        self.groups[gi].samples.len()
    }

    /// Shrinks an existing group to `keep` samples by dropping the last-ranked.
    pub fn truncate_group(&mut self, key: usize, keep: usize) {
        if let Some(gi) = self.groups.iter().position(|g| g.key == key) {
            while self.groups[gi].samples.len() > keep {
                self.evict_from(gi, Eviction::LastRanked);
            }
        }
    }

    /// FIFO insertion into the sample's partition group.
    pub fn ring_insert(&mut self, sample: StoredSample) -> Result<()> {
        self.seen_count += 1;
        let key = self.key_for(sample.label, sample.task)?;
        let gi = self.ensure_group(key, Eviction::Oldest);
        let quota = self.quotas()[gi];
        if quota == 0 {
            return Ok(());
        }
        if self.groups[gi].samples.len() >= quota {
            self.evict_from(gi, Eviction::Oldest);
        }
        self.push(gi, sample);
        Ok(())
    }

    /// Algorithm R over the whole stream: the `t`-th item is kept with
    /// probability `capacity / t`, replacing a uniformly chosen slot.
    pub fn reservoir_insert(&mut self, sample: StoredSample) -> Result<()> {
        if self.partition != Partition::None {
            return Err(Error::Precondition("reservoir sampling runs on an unpartitioned buffer".into()));
        }
        self.seen_count += 1;
        let gi = self.ensure_group(0, Eviction::Random);
        let quota = self.quotas()[gi];
        if quota == 0 {
            return Ok(());
        }
        if self.groups[gi].samples.len() < quota {
            self.push(gi, sample);
        } else {
            let j = self.rng.gen_range(0..self.seen_count);
            if j < quota as u64 {
                self.replace(gi, j as usize, sample);
            }
        }
        Ok(())
    }

    /// Score-based or class-balanced random insertion of one labelled sample
    /// given the network's logits for it.
    pub fn nsr_plus_insert(&mut self, mut sample: StoredSample, logits: &[f64], strategy: NsrPlusStrategy) -> Result<()> {
        if sample.label >= logits.len() {
            return Err(Error::Label {
                label: sample.label,
                classes: logits.len(),
            });
        }
        self.seen_count += 1;
        let key = self.key_for(sample.label, sample.task)?;
        match strategy.keeps_high() {
            None => {
                let gi = self.ensure_group(key, Eviction::Random);
                self.groups[gi].offered += 1;
                let quota = self.quotas()[gi];
                if quota == 0 {
                    return Ok(());
                }
                if self.groups[gi].samples.len() < quota {
                    self.push(gi, sample);
                } else {
                    let j = self.rng.gen_range(0..self.groups[gi].offered);
                    if j < quota as u64 {
                        self.replace(gi, j as usize, sample);
                    }
                }
            }
            Some(keep_high) => {
                let score = match strategy {
                    NsrPlusStrategy::ClassificationFalse | NsrPlusStrategy::ClassificationTrue => {
                        true_label_probability(logits, sample.label)
                    }
                    _ => peak_to_peak(logits),
                };
                sample.score = Some(score);
                let gi = self.ensure_group(key, Eviction::WorstScore { keep_high });
                let quota = self.quotas()[gi];
                if quota == 0 {
                    return Ok(());
                }
                if self.groups[gi].samples.len() < quota {
                    self.push(gi, sample);
                } else {
                    let w = worst_index(&self.groups[gi].samples, keep_high).expect("full group");
                    let better = match self.groups[gi].samples[w].score {
                        None => true,
                        Some(worst) if keep_high => score > worst,
                        Some(worst) => score < worst,
                    };
                    if better {
                        self.replace(gi, w, sample);
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient-based greedy selection. Below capacity the sample is stored
    /// unconditionally. Otherwise `candidates` stored samples are drawn at
    /// random; if the largest cosine similarity between their stored
    /// gradients and `gradient` is below `threshold`, the sample attaining it
    /// is replaced, else the incoming sample is discarded.
    pub fn gbss_insert(&mut self, mut sample: StoredSample, gradient: FlatGradient, candidates: usize, threshold: f64) -> Result<GbssOutcome> {
        self.seen_count += 1;
        let gi = self.ensure_group(0, Eviction::Random);
        let quota = self.quotas()[gi];
        if quota == 0 {
            return Ok(GbssOutcome::Discarded {
                max_similarity: f64::NAN,
            });
        }
        if self.groups[gi].samples.len() < quota {
            sample.gradient = Some(gradient);
            self.push(gi, sample);
            return Ok(GbssOutcome::Filled);
        }
        let stored = self.groups[gi].samples.len();
        let mut drawn = sample_indices(&mut self.rng, stored, candidates.clamp(1, stored)).into_vec();
        drawn.sort_unstable();
        let norm_sq = gradient.norm_sq();
        let mut best: Option<(usize, f64)> = None;
        for &i in &drawn {
            let other = self.groups[gi].samples[i]
                .gradient
                .as_ref()
                .ok_or_else(|| Error::Precondition("stored sample lacks its insertion gradient".into()))?;
            if other.len() != gradient.len() {
                return Err(Error::Shape {
                    what: "stored gradient",
                    expected: gradient.len(),
                    got: other.len(),
                });
            }
            let sim = cosine_with_norm(gradient.as_slice(), norm_sq, other.as_slice());
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        let (slot, max_similarity) = best.expect("at least one candidate");
        if max_similarity < threshold {
            sample.gradient = Some(gradient);
            self.replace(gi, slot, sample);
            Ok(GbssOutcome::Replaced {
                slot,
                similarity: max_similarity,
            })
        } else {
            Ok(GbssOutcome::Discarded { max_similarity })
        }
    }

    /// Flat indices of a replay draw: uniform without replacement when
    /// `size <= len`, otherwise with replacement. Empty when the buffer is.
    pub fn draw_indices(&self, size: usize, rng: &mut impl Rng) -> Vec<usize> {
        self.draw_indices_where(size, rng, |_| true)
    }

    /// Like [`draw_indices`](Self::draw_indices) restricted to samples that
    /// satisfy `keep`.
    pub fn draw_indices_where(&self, size: usize, rng: &mut impl Rng, keep: impl Fn(&StoredSample) -> bool) -> Vec<usize> {
        let pool: Vec<usize> = self.iter().enumerate().filter(|(_, s)| keep(s)).map(|(i, _)| i).collect();
        if pool.is_empty() || size == 0 {
            return Vec::new();
        }
        if size <= pool.len() {
            sample_indices(rng, pool.len(), size).into_iter().map(|i| pool[i]).collect()
        } else {
            (0..size).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        }
    }

    /// Replay batch drawn with a generator seeded from `seed`.
    pub fn draw_replay_batch(&self, size: usize, seed: u64) -> Vec<StoredSample> {
        let mut rng = seed::rng(seed, &[seed::stream::REPLAY]);
        self.draw_indices(size, &mut rng)
            .into_iter()
            .map(|i| self.get(i).expect("drawn index in range").clone())
            .collect()
    }

    pub fn snapshot(&self) -> BufferSnapshot {
        BufferSnapshot::from_samples(self.iter())
    }
}

/// Softmax probability of `label` under `logits`.
pub fn true_label_probability(logits: &[f64], label: usize) -> f64 {
    let mut p = logits.to_vec();
    softmax_inplace(&mut p);
    p[label]
}

/// `max(logits) - min(logits)`.
pub fn peak_to_peak(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = logits.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}
