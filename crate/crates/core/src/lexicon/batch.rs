use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DefinitionDataset;

/// Padded token matrix with per-row lengths and mask. Padding positions hold
/// the unknown index, whose embedding is zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryBatch {
    pub tokens: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub mask: Vec<Vec<bool>>,
    pub targets: Vec<usize>,
}

impl QueryBatch {
    pub fn from_rows(rows: &[(&[usize], usize)], pad: usize) -> Self {
        let width = rows.iter().map(|(t, _)| t.len()).max().unwrap_or(0);
        let mut batch = QueryBatch {
            tokens: Vec::with_capacity(rows.len()),
            lengths: Vec::with_capacity(rows.len()),
            mask: Vec::with_capacity(rows.len()),
            targets: Vec::with_capacity(rows.len()),
        };
        for &(tokens, target) in rows {
            assert!(!tokens.is_empty(), "query rows must be non-empty");
            let mut padded = tokens.to_vec();
            padded.resize(width, pad);
            batch.mask.push((0..width).map(|t| t < tokens.len()).collect());
            batch.tokens.push(padded);
            batch.lengths.push(tokens.len());
            batch.targets.push(target);
        }
        batch
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Valid (unpadded) tokens of row `i`.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.tokens[i][..self.lengths[i]]
    }
}

/// One shuffled epoch of batches, drawing the permutation from `rng`. The
/// last partial batch is kept.
pub fn make_batches_with<R: Rng + ?Sized>(
    dataset: &DefinitionDataset,
    batch_size: usize,
    pad: usize,
    rng: &mut R,
) -> Vec<QueryBatch> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .map(|chunk| {
            let rows: Vec<(&[usize], usize)> = chunk
                .iter()
                .map(|&i| {
                    let e = &dataset.entries[i];
                    (e.tokens.as_slice(), e.target)
                })
                .collect();
            QueryBatch::from_rows(&rows, pad)
        })
        .collect()
}

pub fn make_batches(dataset: &DefinitionDataset, batch_size: usize, pad: usize, seed: u64) -> Vec<QueryBatch> {
    make_batches_with(dataset, batch_size, pad, &mut ChaCha8Rng::seed_from_u64(seed))
}
