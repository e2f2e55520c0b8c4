//! Metrics: AUC, top-k recall overlap, batch latency, and the grid reports
//! that collect them.

pub mod grid;

pub use grid::{
    format_budget, render_csv, render_text, CellReport, CellStatus, GridKind, RenderOptions,
};

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::posttrain::Codec;
use crate::stores::EmbeddingStore;

/// Area under the ROC curve: `P(s_pos > s_neg) + P(s_pos = s_neg) / 2` over
/// all positive/negative pairs, computed from one sort.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {i} is NaN")));
    }
    let positives = labels.iter().filter(|&&y| y).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes ({positives} positives, {negatives} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the number of winning pairs, so ties stay integral.
    let mut twice_wins: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_wins += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * positives as f64 * negatives as f64))
}

/// [`auc`] over model outputs and 0/1 labels of any element type.
pub fn auc_of<T: Real>(scores: &[T], labels: &[T]) -> Result<f64> {
    let s: Vec<f64> = scores.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
    let y: Vec<bool> = labels.iter().map(|&v| v > T::from_f64_lossy(0.5)).collect();
    auc(&s, &y)
}

/// Indices of the `k` rows with the largest inner product with `query`;
/// ties go to the lower row id.
pub fn top_k(matrix: &DenseMatrix<f32>, query: &[f32], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = matrix
        .iter_rows()
        .enumerate()
        .map(|(r, row)| {
            let s: f64 = row.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum();
            (s, r)
        })
        .collect();
    let k = k.min(scored.len());
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|p| p.1).collect()
}

/// Mean fraction of each query's exact top-`k` rows that also appear in the
/// top-`k` of `approx`.
pub fn recall_between(
    full: &DenseMatrix<f32>,
    approx: &DenseMatrix<f32>,
    queries: &DenseMatrix<f32>,
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if full.rows() != approx.rows() || full.cols() != approx.cols() {
        return Err(Error::invalid("decompressed matrix shape differs from the original"));
    }
    if queries.cols() != full.cols() {
        return Err(Error::invalid(format!(
            "query width {} does not match matrix width {}",
            queries.cols(),
            full.cols()
        )));
    }
    if k > full.rows() {
        return Err(Error::invalid(format!("k = {k} exceeds {} rows", full.rows())));
    }
    if queries.rows() == 0 {
        return Err(Error::invalid("no queries"));
    }
    let overlaps: Vec<usize> = (0..queries.rows())
        .into_par_iter()
        .map(|q| {
            let query = queries.row(q);
            let mut exact = top_k(full, query, k);
            exact.sort_unstable();
            top_k(approx, query, k)
                .iter()
                .filter(|r| exact.binary_search(r).is_ok())
                .count()
        })
        .collect();
    let total: usize = overlaps.iter().sum();
    Ok(total as f64 / (k * queries.rows()) as f64)
}

/// Recall overlap of a codec's reconstruction against the matrix it was
/// built from.
pub fn recall_overlap(
    full: &DenseMatrix<f32>,
    codec: &dyn Codec,
    queries: &DenseMatrix<f32>,
    k: usize,
) -> Result<f64> {
    recall_between(full, &codec.decompress(), queries, k)
}

/// Median wall time of `f` over `repeats` runs after one untimed warm-up.
pub fn time_batch<R>(repeats: usize, mut f: impl FnMut() -> Result<R>) -> Result<f64> {
    if repeats < 3 {
        return Err(Error::invalid("timing needs at least 3 repeats"));
    }
    std::hint::black_box(f()?);
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(f()?);
        samples.push(t.elapsed().as_secs_f64());
    }
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    Ok(if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    })
}

/// Median seconds to look up `ids` from a store.
pub fn time_lookup<T: Real>(store: &dyn EmbeddingStore<T>, ids: &[u32], repeats: usize) -> Result<f64> {
    time_batch(repeats, || store.lookup(ids))
}

/// Median seconds to decompress `ids` from a codec.
pub fn time_decompress(codec: &dyn Codec, ids: &[u32], repeats: usize) -> Result<f64> {
    time_batch(repeats, || codec.decompress_batch(ids))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub inference_bytes: usize,
    pub training_bytes: usize,
    pub train_seconds: f64,
    /// Median of repeated timed forward passes over one batch.
    pub batch_latency_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall_at_k: Option<f64>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.auc) && self.auc <= 1.0) {
            return Err(Error::invalid(format!("AUC {} outside [0, 1]", self.auc)));
        }
        if !ok(self.train_seconds) || !ok(self.batch_latency_seconds) {
            return Err(Error::invalid("timings must be finite and non-negative"));
        }
        if let Some(r) = self.recall_at_k {
            if !(ok(r) && r <= 1.0) {
                return Err(Error::invalid(format!("recall {r} outside [0, 1]")));
            }
        }
        Ok(())
    }
}
