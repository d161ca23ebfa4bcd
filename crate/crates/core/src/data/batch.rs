//! Paired labeled/unlabeled batch planning.
//!
//! An epoch is one pass over the labeled split in a seed-and-epoch determined
//! order. The unlabeled split is consumed as an endless stream made of
//! back-to-back permutations ("cycles"), each reshuffled from the seed, so the
//! indices of any iteration are a pure function of `(seed, epoch)`.

use rand::seq::SliceRandom;

use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    /// Indices into the labeled split.
    pub labeled: Vec<usize>,
    /// Indices into the unlabeled split; empty when no unlabeled stream.
    pub unlabeled: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchStreams {
    n_labeled: usize,
    n_unlabeled: usize,
    batch_labeled: usize,
    batch_unlabeled: usize,
    seed: u64,
}

impl BatchStreams {
    pub fn new(
        n_labeled: usize,
        n_unlabeled: usize,
        batch_labeled: usize,
        batch_unlabeled: usize,
        seed: u64,
        needs_unlabeled: bool,
    ) -> Result<Self> {
        if n_labeled == 0 {
            return Err(Error::EmptySplit(Split::TrainLabeled.to_string()));
        }
        if needs_unlabeled && n_unlabeled < 2 {
            return Err(Error::EmptySplit(Split::TrainUnlabeled.to_string()));
        }
        if batch_labeled == 0 || (needs_unlabeled && batch_unlabeled < 2) {
            return Err(Error::Config("batch sizes too small".into()));
        }
        Ok(Self {
            n_labeled,
            n_unlabeled: if needs_unlabeled { n_unlabeled } else { 0 },
            batch_labeled,
            batch_unlabeled: if needs_unlabeled { batch_unlabeled } else { 0 },
            seed,
        })
    }

    pub fn from_manifest(
        manifest: &DatasetManifest,
        batch_labeled: usize,
        batch_unlabeled: usize,
        seed: u64,
        needs_unlabeled: bool,
    ) -> Result<Self> {
        Self::new(
            manifest.count(Split::TrainLabeled),
            manifest.count(Split::TrainUnlabeled),
            batch_labeled,
            batch_unlabeled,
            seed,
            needs_unlabeled,
        )
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.n_labeled.div_ceil(self.batch_labeled)
    }

    fn permutation(&self, purpose: u64, round: usize, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = rng::stream(self.seed, &[purpose, round as u64]);
        idx.shuffle(&mut rng);
        idx
    }

    /// Unlabeled indices at stream positions `[start, start + len)`.
    fn unlabeled_window(&self, start: usize, len: usize) -> Vec<usize> {
        let n = self.n_unlabeled;
        let mut out = Vec::with_capacity(len);
        let mut cycle = usize::MAX;
        let mut perm = Vec::new();
        for pos in start..start + len {
            let c = pos / n;
            if c != cycle {
                perm = self.permutation(tag::UNLABELED_ORDER, c, n);
                cycle = c;
            }
            out.push(perm[pos % n]);
        }
        out
    }

    /// All batches of `epoch`, in order.
    pub fn epoch(&self, epoch: usize) -> Vec<BatchPlan> {
        let order = self.permutation(tag::LABELED_ORDER, epoch, self.n_labeled);
        let iters = self.iterations_per_epoch();
        order
            .chunks(self.batch_labeled)
            .enumerate()
            .map(|(k, chunk)| {
                let unlabeled = if self.n_unlabeled == 0 {
                    Vec::new()
                } else {
                    let global = epoch * iters + k;
                    self.unlabeled_window(global * self.batch_unlabeled, self.batch_unlabeled)
                };
                BatchPlan {
                    labeled: chunk.to_vec(),
                    unlabeled,
                }
            })
            .collect()
    }
}
