use std::collections::VecDeque;

use crate::datagen::CandidateSet;
use crate::numerics::Tensor;

/// Label bookkeeping carried by every embedding in the contrastive pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolMeta {
    /// Prediction restricted to the candidate set.
    pub label: usize,
    /// Unrestricted prediction for noisy examples, equal to `label` for
    /// clean ones.
    pub full_label: usize,
    pub clean: bool,
    pub candidates: CandidateSet,
    pub example: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueEntry {
    pub embedding: Vec<f64>,
    pub meta: PoolMeta,
}

/// FIFO of past key embeddings with their predicted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize) -> Self {
        EmbeddingQueue {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends newest entries, evicting the oldest beyond capacity.
    pub fn push(&mut self, entry: QueueEntry) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }
}

/// The contrastive pool: `[query batch; key batch; queue]`. Rows `0..b`
/// are the query embeddings themselves, so anchor `r` excludes row `r`.
#[derive(Debug, Clone)]
pub struct Pool {
    pub batch: usize,
    pub meta: Vec<PoolMeta>,
}

impl Pool {
    pub fn build(batch_meta: &[PoolMeta], queue: &EmbeddingQueue) -> Pool {
        let mut meta = Vec::with_capacity(2 * batch_meta.len() + queue.len());
        meta.extend_from_slice(batch_meta);
        meta.extend_from_slice(batch_meta);
        meta.extend(queue.iter().map(|e| e.meta));
        Pool {
            batch: batch_meta.len(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    /// Queue embeddings stacked as a matrix, `None` if the queue is empty.
    pub fn queue_matrix(queue: &EmbeddingQueue, dim: usize) -> Option<Tensor> {
        if queue.is_empty() {
            return None;
        }
        let mut data = Vec::with_capacity(queue.len() * dim);
        for e in queue.iter() {
            data.extend_from_slice(&e.embedding);
        }
        Some(Tensor::new(vec![queue.len(), dim], data).expect("queue rows share the width"))
    }
}

/// Which pool elements count as positives for an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PositiveStrategy {
    /// Same predicted label.
    Default,
    /// Same predicted label and candidate-set Jaccard above `rho`, applied
    /// while `epoch < until_epoch`; afterwards behaves like `Default`.
    Filter { rho: f64, until_epoch: usize },
    /// Anchors whose maximum class probability does not exceed
    /// `delta_conf` get no positives once `epoch >= from_epoch`.
    Threshold { delta_conf: f64, from_epoch: usize },
}

/// Per-anchor information needed by [`select_positives`].
#[derive(Debug, Clone, Copy)]
pub struct AnchorInfo {
    pub index: usize,
    pub max_prob: f64,
}

/// Pool indices forming the positive set of `anchor`, in increasing order.
/// When `clean_only` is set, noisy pool elements never qualify.
pub fn select_positives(
    anchor: AnchorInfo,
    pool: &Pool,
    strategy: PositiveStrategy,
    epoch: usize,
    clean_only: bool,
) -> Vec<usize> {
    let me = pool.meta[anchor.index];
    if let PositiveStrategy::Threshold {
        delta_conf,
        from_epoch,
    } = strategy
    {
        if epoch >= from_epoch && anchor.max_prob <= delta_conf {
            return Vec::new();
        }
    }
    let rho = match strategy {
        PositiveStrategy::Filter { rho, until_epoch } if epoch < until_epoch => Some(rho),
        _ => None,
    };
    pool.meta
        .iter()
        .enumerate()
        .filter(|&(j, m)| {
            j != anchor.index
                && m.label == me.label
                && (!clean_only || m.clean)
                && rho.map_or(true, |r| me.candidates.jaccard(&m.candidates) > r)
        })
        .map(|(j, _)| j)
        .collect()
}

/// Positives under unrestricted predictions: pool elements whose
/// `full_label` matches the anchor's.
pub fn noisy_positive_set(anchor: usize, pool: &Pool) -> Vec<usize> {
    let me = pool.meta[anchor].full_label;
    pool.meta
        .iter()
        .enumerate()
        .filter(|&(j, m)| j != anchor && m.full_label == me)
        .map(|(j, _)| j)
        .collect()
}

/// The `k` pool rows most similar to `q` (by dot product), skipping
/// `exclude`. Ties go to the smaller index. Returned in increasing index
/// order.
pub fn knn_positive_set(q: &[f64], pool: &Tensor, exclude: Option<usize>, k: usize) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = (0..pool.rows())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (j, crate::numerics::dot(q, pool.row(j))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = scored.into_iter().take(k).map(|(j, _)| j).collect();
    out.sort_unstable();
    out
}
