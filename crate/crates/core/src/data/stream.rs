use rand::seq::SliceRandom;

use super::TaskSplit;
use crate::error::{Error, Result};
use crate::seed;

/// Positions `0..n_items` reshuffled every epoch and cut into batches of
/// `batch_size`; the last batch of an epoch may be short.
pub fn batch_schedule(n_items: usize, batch_size: usize, epochs: usize, key: u64) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(epochs * n_items.div_ceil(batch_size.max(1)));
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut seed::rng(key, &[epoch as u64]));
        out.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out
}

/// Seeded mini-batch stream over the sub-tasks of a [`TaskSplit`].
#[derive(Debug, Clone)]
pub struct SubTaskStream<'a> {
    split: &'a TaskSplit,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    boundary_visibility: bool,
}

impl<'a> SubTaskStream<'a> {
    pub fn new(split: &'a TaskSplit, batch_size: usize, epochs: usize, seed: u64, boundary_visibility: bool) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let Some(k) = split.train.iter().position(Vec::is_empty) {
            return Err(Error::Protocol(format!("sub-task {k} has no training samples")));
        }
        Ok(Self {
            split,
            batch_size,
            epochs,
            seed,
            boundary_visibility,
        })
    }

    pub fn subtask_count(&self) -> usize {
        self.split.len()
    }

    pub fn boundary_visibility(&self) -> bool {
        self.boundary_visibility
    }

    fn key(&self, k: usize) -> u64 {
        seed::derive(self.seed, &[seed::stream::ORDER, k as u64])
    }

    /// Dataset indices of every batch of sub-task `k`, over all epochs.
    pub fn batches(&self, k: usize) -> Vec<Vec<usize>> {
        self.feed(k).batches()
    }

    /// What a trainer sees while sub-task `k` is streamed.
    pub fn feed(&self, k: usize) -> SubTaskFeed<'a> {
        SubTaskFeed {
            indices: &self.split.train[k],
            batch_size: self.batch_size,
            epochs: self.epochs,
            key: self.key(k),
            task: self.boundary_visibility.then_some(k),
        }
    }
}

/// The data of one sub-task as handed to a trainer. Without boundary
/// visibility only the batches are accessible.
#[derive(Debug, Clone)]
pub struct SubTaskFeed<'a> {
    indices: &'a [usize],
    batch_size: usize,
    epochs: usize,
    key: u64,
    task: Option<usize>,
}

impl<'a> SubTaskFeed<'a> {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn batches(&self) -> Vec<Vec<usize>> {
        batch_schedule(self.indices.len(), self.batch_size, self.epochs, self.key)
            .into_iter()
            .map(|b| b.into_iter().map(|p| self.indices[p]).collect())
            .collect()
    }

    pub fn boundary(&self) -> Option<Boundary<'a>> {
        self.task.map(|index| Boundary {
            index,
            indices: self.indices,
            batch_size: self.batch_size,
            epochs: self.epochs,
            key: self.key,
        })
    }
}

/// Sub-task identity and complete data, available only when boundaries are
/// visible.
#[derive(Debug, Clone, Copy)]
pub struct Boundary<'a> {
    pub index: usize,
    pub indices: &'a [usize],
    batch_size: usize,
    epochs: usize,
    key: u64,
}

impl Boundary<'_> {
    /// Batch schedule over the sub-task's samples followed by `extra` further
    /// items. Positions `< indices.len()` refer to `indices`; the rest to the
    /// extra items in order. With `extra == 0` this is the feed's own schedule.
    pub fn merged_schedule(&self, extra: usize) -> Vec<Vec<usize>> {
        batch_schedule(self.indices.len() + extra, self.batch_size, self.epochs, self.key)
    }
}
