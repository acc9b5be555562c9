use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::icarl::{icarl_classify, ClassMeans};
use super::projection::{agem_project, gem_project};
use super::{Method, MethodConfig, Rehearsal};
use crate::buffer::{nsr_select_class, herding_select, Eviction, ReplayBuffer, SelectionStrategy, StoredSample};
use crate::data::{Boundary, Split, SubTaskFeed};
use crate::error::{Error, Result};
use crate::metrics::Classifier;
use crate::nn::{DistillTargets, FlatGradient, Network, NetworkSpec, Sgd};
use crate::seed;

/// Counters collected while training.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub optimizer_steps: u64,
    /// Updates whose gradient was changed by a projection.
    pub projections: u64,
    /// Updates checked against at least one reference gradient.
    pub constrained_updates: u64,
    /// Smallest `⟨applied gradient, reference⟩` over all checked updates.
    pub min_constraint_margin: Option<f64>,
    /// Buffer samples mixed into training batches.
    pub replayed_samples: u64,
}

/// One training sample: a dataset row or a stored buffer sample.
#[derive(Clone, Copy)]
enum Item<'a> {
    Data(usize),
    Stored(&'a StoredSample),
}

fn assemble(train: &Split, items: &[Item<'_>]) -> (Array2<f64>, Vec<usize>) {
    let mut x = Array2::zeros((items.len(), train.dim()));
    let mut y = Vec::with_capacity(items.len());
    for (mut row, item) in x.rows_mut().into_iter().zip(items) {
        match item {
            Item::Data(i) => {
                row.assign(&train.features.row(*i));
                y.push(train.labels[*i]);
            }
            Item::Stored(s) => {
                row.iter_mut().zip(&s.features).for_each(|(r, v)| *r = *v);
                y.push(s.label);
            }
        }
    }
    (x, y)
}

fn gradient(net: &Network, x: ArrayView2<f64>, y: &[usize], distill: Option<DistillTargets<'_>>) -> Result<FlatGradient> {
    Ok(net.loss_and_gradient(x, y, distill)?.1)
}

fn sample_of(train: &Split, i: usize) -> StoredSample {
    StoredSample::new(train.features.row(i).to_vec(), train.labels[i])
}

fn sorted_labels(train: &Split, indices: &[usize]) -> Vec<usize> {
    let mut labels: Vec<usize> = indices.iter().map(|&i| train.labels[i]).collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// A network, its optimizer and its replay buffer, driven one sub-task at a
/// time by [`Trainer::train_subtask`].
///
/// A trainer made with [`Trainer::raw`] ignores every replay mechanism and
/// is the raw sequential baseline for its configuration. With a buffer of
/// capacity zero every method follows that baseline's trajectory exactly.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: MethodConfig,
    raw: bool,
    net: Network,
    opt: Sgd,
    buffer: ReplayBuffer,
    replay_rng: ChaCha8Rng,
    seen_classes: Vec<bool>,
    class_means: ClassMeans,
    subtasks_done: usize,
    stats: TrainStats,
}

impl Trainer {
    /// `spec` supplies the architecture; its head is replaced by the one the
    /// method needs.
    pub fn new(cfg: MethodConfig, spec: NetworkSpec) -> Result<Self> {
        Self::build(cfg, spec, false)
    }

    /// Plain sequential SGD with the configuration's schedule.
    pub fn raw(cfg: MethodConfig, spec: NetworkSpec) -> Result<Self> {
        Self::build(cfg, spec, true)
    }

    fn build(cfg: MethodConfig, spec: NetworkSpec, raw: bool) -> Result<Self> {
        cfg.validate()?;
        let spec = spec.with_head(cfg.head());
        let classes = spec.output_dim;
        let net = Network::new(spec, seed::derive(cfg.seed, &[seed::stream::INIT]))?;
        let opt = Sgd::new(cfg.learning_rate, cfg.momentum, &net)?;
        let capacity = if raw { 0 } else { cfg.buffer_size };
        Ok(Self {
            buffer: ReplayBuffer::new(capacity, cfg.partition(), cfg.seed),
            replay_rng: seed::rng(cfg.seed, &[seed::stream::REPLAY]),
            seen_classes: vec![false; classes],
            class_means: ClassMeans::default(),
            subtasks_done: 0,
            stats: TrainStats::default(),
            raw,
            net,
            opt,
            cfg,
        })
    }

    pub fn config(&self) -> &MethodConfig {
        &self.cfg
    }

    pub fn is_raw(&self) -> bool {
        self.raw
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn stats(&self) -> &TrainStats {
        &self.stats
    }

    pub fn class_means(&self) -> &ClassMeans {
        &self.class_means
    }

    fn replay_enabled(&self) -> bool {
        !self.raw && self.buffer.capacity() > 0
    }

    /// Trains on one sub-task. `observer` runs after every processed
    /// mini-batch (per-batch evaluation cadence).
    pub fn train_subtask(&mut self, train: &Split, feed: &SubTaskFeed<'_>, observer: &mut dyn FnMut(&Trainer) -> Result<()>) -> Result<()> {
        if self.raw {
            self.train_raw(train, feed, observer)?;
        } else {
            match self.cfg.method {
                Method::Nsr | Method::Icarl => self.train_merged(train, feed, observer)?,
                Method::NsrPlus | Method::Tem | Method::Gbss => self.train_mixed(train, feed, observer)?,
                Method::Gem | Method::Agem => self.train_constrained(train, feed, observer)?,
            }
        }
        self.subtasks_done += 1;
        Ok(())
    }

    fn boundary<'a>(&self, feed: &SubTaskFeed<'a>) -> Result<Boundary<'a>> {
        feed.boundary().ok_or_else(|| Error::Precondition(format!("{} needs visible sub-task boundaries", self.cfg.method)))
    }

    fn apply(&mut self, g: &FlatGradient) -> Result<()> {
        self.opt.step(&mut self.net, g)?;
        self.stats.optimizer_steps += 1;
        Ok(())
    }

    fn train_raw(&mut self, train: &Split, feed: &SubTaskFeed<'_>, observer: &mut dyn FnMut(&Trainer) -> Result<()>) -> Result<()> {
        for batch in feed.batches() {
            let items: Vec<Item> = batch.iter().map(|&i| Item::Data(i)).collect();
            let (x, y) = assemble(train, &items);
            for _ in 0..self.cfg.effective_iterations() {
                let g = gradient(&self.net, x.view(), &y, None)?;
                self.apply(&g)?;
            }
            observer(self)?;
        }
        Ok(())
    }

    /// NSR and iCaRL: the sub-task data and the buffer (merged once, or
    /// drawn per batch when over-sampling), then boundary-time selection.
    fn train_merged(&mut self, train: &Split, feed: &SubTaskFeed<'_>, observer: &mut dyn FnMut(&Trainer) -> Result<()>) -> Result<()> {
        let b = self.boundary(feed)?;
        let icarl = self.cfg.method == Method::Icarl;
        let previous = (icarl && self.replay_enabled() && self.seen_classes.iter().any(|&s| s)).then(|| self.net.clone());
        let old_classes = self.seen_classes.clone();
        let stored: Vec<StoredSample> = self.buffer.iter().cloned().collect();

        let schedule = if self.cfg.over_sampling { b.merged_schedule(0) } else { b.merged_schedule(stored.len()) };
        for positions in schedule {
            let mut items: Vec<Item> = positions
                .iter()
                .map(|&p| match b.indices.get(p) {
                    Some(&i) => Item::Data(i),
                    None => Item::Stored(&stored[p - b.indices.len()]),
                })
                .collect();
            if self.cfg.over_sampling {
                let drawn = self.buffer.draw_indices(self.cfg.batch_size, &mut self.replay_rng);
                items.extend(drawn.into_iter().map(|i| Item::Stored(&stored[i])));
            }
            self.stats.replayed_samples += items.iter().filter(|i| matches!(i, Item::Stored(_))).count() as u64;
            let (x, y) = assemble(train, &items);
            let targets = previous.as_ref().map(|prev| prev.probabilities(x.view())).transpose()?;
            let distill = targets.as_ref().map(|t| DistillTargets {
                targets: t.view(),
                old_classes: &old_classes,
            });
            let g = gradient(&self.net, x.view(), &y, distill)?;
            self.apply(&g)?;
            observer(self)?;
        }

        let new_classes = sorted_labels(train, b.indices);
        for &c in &new_classes {
            self.seen_classes[c] = true;
        }
        if !self.replay_enabled() {
            return Ok(());
        }
        for &c in &new_classes {
            self.buffer.ensure_group(c, Eviction::LastRanked);
        }
        let mut rng = seed::rng(self.cfg.seed, &[seed::stream::SELECTION, b.index as u64]);
        for &c in &new_classes {
            let members: Vec<usize> = b.indices.iter().copied().filter(|&i| train.labels[i] == c).collect();
            let (rows, _) = train.gather(&members);
            let quota = self.buffer.quota_of(c).expect("registered");
            let ranked = match self.cfg.selection() {
                SelectionStrategy::Nsr { strategy } => nsr_select_class(rows.view(), c, strategy, quota, &mut rng),
                SelectionStrategy::IcarlHerding => {
                    let phi = self.net.penultimate_features(rows.view())?;
                    herding_select(phi.view(), quota.min(rows.nrows()))?
                        .into_iter()
                        .map(|r| sample_of(train, members[r]))
                        .collect()
                }
                other => return Err(Error::Config(format!("{other} is not a boundary-time selection"))),
            };
            let ranked = ranked.into_iter().map(|s| s.with_task(b.index)).collect();
            self.buffer.set_group_ranked(c, ranked);
        }
        if icarl {
            self.class_means = ClassMeans::compute(&self.net, &self.buffer, b.index)?;
        }
        Ok(())
    }

    /// NSR+, TEM and GBSS: every incoming batch is mixed with a fresh buffer
    /// draw for each iteration, then offered to the buffer.
    fn train_mixed(&mut self, train: &Split, feed: &SubTaskFeed<'_>, observer: &mut dyn FnMut(&Trainer) -> Result<()>) -> Result<()> {
        let task = feed.boundary().map(|b| b.index);
        for batch in feed.batches() {
            let incoming: Vec<Item> = batch.iter().map(|&i| Item::Data(i)).collect();
            let (x_in, y_in) = assemble(train, &incoming);
            for _ in 0..self.cfg.effective_iterations() {
                let drawn = self.buffer.draw_indices(self.cfg.batch_size, &mut self.replay_rng);
                if drawn.is_empty() {
                    let g = gradient(&self.net, x_in.view(), &y_in, None)?;
                    self.apply(&g)?;
                    continue;
                }
                self.stats.replayed_samples += drawn.len() as u64;
                let mut items = incoming.clone();
                items.extend(drawn.iter().map(|&i| Item::Stored(self.buffer.get(i).expect("drawn index"))));
                let (x, y) = assemble(train, &items);
                let mut g = gradient(&self.net, x.view(), &y, None)?;
                if self.cfg.method == Method::Gbss && self.cfg.gbss_constraints {
                    let refs: Vec<FlatGradient> = drawn
                        .iter()
                        .filter_map(|&i| self.buffer.get(i).and_then(|s| s.gradient.clone()))
                        .collect();
                    g = self.constrain(g, &refs, gem_project)?;
                }
                self.apply(&g)?;
            }
            self.insert_stream(train, &batch, x_in.view(), task)?;
            observer(self)?;
        }
        Ok(())
    }

    fn insert_stream(&mut self, train: &Split, batch: &[usize], x: ArrayView2<f64>, task: Option<usize>) -> Result<()> {
        if !self.replay_enabled() {
            return Ok(());
        }
        let with_task = |s: StoredSample| match task {
            Some(t) => s.with_task(t),
            None => s,
        };
        match self.cfg.selection() {
            SelectionStrategy::NsrPlus { strategy } => {
                let logits = self.net.forward(x)?;
                for (row, &i) in batch.iter().enumerate() {
                    let z = logits.row(row).to_vec();
                    self.buffer.nsr_plus_insert(with_task(sample_of(train, i)), &z, strategy)?;
                }
            }
            SelectionStrategy::Ring => {
                for &i in batch {
                    self.buffer.ring_insert(with_task(sample_of(train, i)))?;
                }
            }
            SelectionStrategy::Reservoir => {
                for &i in batch {
                    self.buffer.reservoir_insert(with_task(sample_of(train, i)))?;
                }
            }
            SelectionStrategy::GbssGreedy { candidates, threshold } => {
                let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
                let grads = self.net.per_sample_gradients(x, &labels)?;
                for (&i, g) in batch.iter().zip(grads) {
                    self.buffer.gbss_insert(with_task(sample_of(train, i)), g, candidates, threshold)?;
                }
            }
            other => return Err(Error::Config(format!("{other} is not a streaming selection"))),
        }
        Ok(())
    }

    /// Applies `project` against `refs` and records the constraint margins
    /// of the gradient that will be applied.
    fn constrain(
        &mut self,
        g: FlatGradient,
        refs: &[FlatGradient],
        project: impl Fn(&FlatGradient, &[FlatGradient], f64) -> Result<FlatGradient>,
    ) -> Result<FlatGradient> {
        if refs.is_empty() {
            return Ok(g);
        }
        let out = project(&g, refs, self.cfg.memory_strength)?;
        if out != g {
            self.stats.projections += 1;
        }
        self.stats.constrained_updates += 1;
        for r in refs {
            let m = out.dot(r)?;
            self.stats.min_constraint_margin = Some(self.stats.min_constraint_margin.map_or(m, |old| old.min(m)));
        }
        Ok(out)
    }

    /// GEM and A-GEM: ring buffer per sub-task, gradients projected against
    /// references computed from past sub-tasks' slots.
    fn train_constrained(&mut self, train: &Split, feed: &SubTaskFeed<'_>, observer: &mut dyn FnMut(&Trainer) -> Result<()>) -> Result<()> {
        let b = self.boundary(feed)?;
        let k = b.index;
        let past: Vec<StoredSample> = self.buffer.iter().filter(|s| s.task != Some(k)).cloned().collect();
        let merged = if self.cfg.rehearsal == Rehearsal::TaskWise { past.len() } else { 0 };
        for positions in b.merged_schedule(merged) {
            let replay: Vec<StoredSample> = if self.cfg.rehearsal == Rehearsal::BatchWise {
                let drawn = self.buffer.draw_indices_where(self.cfg.batch_size, &mut self.replay_rng, |s| s.task != Some(k));
                drawn.into_iter().map(|i| self.buffer.get(i).expect("drawn index").clone()).collect()
            } else {
                Vec::new()
            };
            let mut items: Vec<Item> = positions
                .iter()
                .map(|&p| match b.indices.get(p) {
                    Some(&i) => Item::Data(i),
                    None => Item::Stored(&past[p - b.indices.len()]),
                })
                .collect();
            let incoming: Vec<usize> = items
                .iter()
                .filter_map(|i| match i {
                    Item::Data(i) => Some(*i),
                    Item::Stored(_) => None,
                })
                .collect();
            items.extend(replay.iter().map(Item::Stored));
            self.stats.replayed_samples += items.iter().filter(|i| matches!(i, Item::Stored(_))).count() as u64;
            let (x, y) = assemble(train, &items);
            let g = gradient(&self.net, x.view(), &y, None)?;

            let mut refs = Vec::new();
            match self.cfg.method {
                Method::Gem => {
                    for key in self.buffer.group_keys() {
                        let slot = self.buffer.group(key);
                        if key == k || slot.is_empty() {
                            continue;
                        }
                        let slot_items: Vec<Item> = slot.iter().map(Item::Stored).collect();
                        let (xs, ys) = assemble(train, &slot_items);
                        refs.push(gradient(&self.net, xs.view(), &ys, None)?.with_tag(key));
                    }
                }
                _ => {
                    let drawn = self.buffer.draw_indices_where(self.cfg.batch_size, &mut self.replay_rng, |s| s.task != Some(k));
                    if !drawn.is_empty() {
                        let ref_items: Vec<Item> = drawn.iter().map(|&i| Item::Stored(self.buffer.get(i).expect("drawn index"))).collect();
                        let (xr, yr) = assemble(train, &ref_items);
                        refs.push(gradient(&self.net, xr.view(), &yr, None)?);
                    }
                }
            }
            let g = match self.cfg.method {
                Method::Gem => self.constrain(g, &refs, gem_project)?,
                _ => self.constrain(g, &refs, |g, refs, _| agem_project(g, &refs[0]))?,
            };
            self.apply(&g)?;
            if self.replay_enabled() {
                for i in incoming {
                    self.buffer.ring_insert(sample_of(train, i).with_task(k))?;
                }
            }
            observer(self)?;
        }
        for c in sorted_labels(train, b.indices) {
            self.seen_classes[c] = true;
        }
        Ok(())
    }
}

impl Classifier for Trainer {
    /// iCaRL classifies by nearest mean of exemplars once means exist; every
    /// other case uses the network's arg-max.
    fn classify(&self, batch: ArrayView2<f64>) -> Result<Vec<usize>> {
        if self.cfg.method == Method::Icarl && !self.raw && !self.class_means.is_empty() {
            icarl_classify(&self.net, &self.class_means, batch)
        } else {
            self.net.predict(batch)
        }
    }
}
