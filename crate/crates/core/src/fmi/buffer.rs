use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Rows grouped by `(predicted class, true label)`.
///
/// A batch is emitted only once every one of the `K²` cells holds at least
/// `threshold` entries; then `threshold` entries are drawn from each cell
/// uniformly without replacement and removed. In an emitted batch every cell
/// has the same count, so `P(Y = k | prediction = j) = 1/K` exactly: within the
/// batch the label is independent of the first-stage prediction.
///
/// Entries keep the prediction made when they were pushed. Each cell is a
/// FIFO capped at `capacity`; the oldest entries are dropped first.
#[derive(Debug, Clone)]
pub struct MatchBuffer {
    classes: usize,
    threshold: usize,
    capacity: usize,
    cells: Vec<VecDeque<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedBatch {
    pub indices: Vec<usize>,
    pub predicted: Vec<u8>,
    pub labels: Vec<u8>,
}

impl MatchedBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `K × K` counts indexed `[predicted][label]`.
    pub fn contingency(&self, classes: usize) -> Vec<Vec<usize>> {
        let mut t = vec![vec![0; classes]; classes];
        for (&p, &y) in self.predicted.iter().zip(&self.labels) {
            t[p as usize][y as usize] += 1;
        }
        t
    }
}

pub const DEFAULT_THRESHOLD: usize = 32;
pub const DEFAULT_CAPACITY: usize = 4096;

impl MatchBuffer {
    pub fn new(classes: usize, threshold: usize, capacity: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParameter(format!("{classes} classes")));
        }
        if threshold == 0 || capacity < threshold {
            return Err(Error::InvalidParameter(format!(
                "threshold {threshold} with capacity {capacity}"
            )));
        }
        Ok(Self {
            classes,
            threshold,
            capacity,
            cells: vec![VecDeque::new(); classes * classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    fn cell(&self, predicted: u8, label: u8) -> usize {
        predicted as usize * self.classes + label as usize
    }

    pub fn push(&mut self, index: usize, predicted: u8, label: u8) {
        debug_assert!((predicted as usize) < self.classes && (label as usize) < self.classes);
        let c = self.cell(predicted, label);
        let cell = &mut self.cells[c];
        if cell.len() == self.capacity {
            cell.pop_front();
        }
        cell.push_back(index);
    }

    /// Sizes indexed `[predicted][label]`.
    pub fn cell_sizes(&self) -> Vec<Vec<usize>> {
        (0..self.classes)
            .map(|j| {
                (0..self.classes)
                    .map(|k| self.cells[j * self.classes + k].len())
                    .collect()
            })
            .collect()
    }

    pub fn cell_entries(&self, predicted: u8, label: u8) -> impl Iterator<Item = &usize> {
        self.cells[self.cell(predicted, label)].iter()
    }

    pub fn is_ready(&self) -> bool {
        self.cells.iter().all(|c| c.len() >= self.threshold)
    }

    /// A balanced batch of `K² · threshold` rows, or `None` if some cell is short.
    pub fn matched_subsample(&mut self, rng: &mut Rng) -> Option<MatchedBatch> {
        if !self.is_ready() {
            return None;
        }
        let total = self.classes * self.classes * self.threshold;
        let mut out = MatchedBatch {
            indices: Vec::with_capacity(total),
            predicted: Vec::with_capacity(total),
            labels: Vec::with_capacity(total),
        };
        for j in 0..self.classes {
            for k in 0..self.classes {
                let cell = &mut self.cells[j * self.classes + k];
                let mut picked = rng.sample_indices(cell.len(), self.threshold);
                picked.sort_unstable();
                for &p in &picked {
                    out.indices.push(cell[p]);
                    out.predicted.push(j as u8);
                    out.labels.push(k as u8);
                }
                let mut next = picked.iter().peekable();
                let mut pos = 0;
                cell.retain(|_| {
                    let drop = next.peek() == Some(&&pos);
                    if drop {
                        next.next();
                    }
                    pos += 1;
                    !drop
                });
            }
        }
        Some(out)
    }
}
