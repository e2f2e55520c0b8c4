//! Compressors for frozen embedding matrices.
//!
//! A codec is built once from a dense matrix and afterwards only decodes
//! rows. Every codec's checkpoint payload is exactly [`Codec::bytes`] long.

mod dedup;
mod int;
mod kmeans;
mod pq;
mod prune;
mod svd;
mod tt;

pub use dedup::{lsh_signature, DedupCodec, L2Lsh, LshParams};
pub use int::IntCodec;
pub use kmeans::{kmeans, KMeans, KMeansConfig};
pub use pq::{code_width, group_centroids, group_rows, MagPqCodec, PqCodec};
pub use prune::ThresholdPrune;
pub use svd::{truncated_svd, LowRank, MagSvdCodec, SvdCodec};
pub use tt::TtCodec;

use std::fmt::Debug;
use std::time::Instant;

use crate::budget::{CompressionPlan, PlanParams};
use crate::checkpoint::{put_f32s, tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::memory;
use crate::stores::{check_ids, GatherCodec};

pub trait Codec: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    fn rows(&self) -> usize;

    fn dim(&self) -> usize;

    /// Exact storage size of the compressed representation.
    fn bytes(&self) -> usize;

    /// Decodes `row` into `out` (`out.len() == dim`).
    fn row_into(&self, row: usize, out: &mut [f32]);

    fn to_checkpoint(&self) -> Result<Checkpoint>;

    fn decompress_batch(&self, ids: &[u32]) -> Result<DenseMatrix<f32>> {
        check_ids(ids, self.rows())?;
        let mut out = DenseMatrix::zeros(ids.len(), self.dim());
        for (i, &id) in ids.iter().enumerate() {
            self.row_into(id as usize, out.row_mut(i));
        }
        Ok(out)
    }

    fn decompress(&self) -> DenseMatrix<f32> {
        let mut out = DenseMatrix::zeros(self.rows(), self.dim());
        for r in 0..self.rows() {
            self.row_into(r, out.row_mut(r));
        }
        out
    }

    /// Codecs built from a shared parameter array can keep training.
    fn into_gather(self: Box<Self>) -> Option<Box<dyn GatherCodec>> {
        None
    }
}

/// Uncompressed reference codec.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCodec {
    matrix: DenseMatrix<f32>,
}

impl IdentityCodec {
    pub fn new(matrix: DenseMatrix<f32>) -> Self {
        Self { matrix }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_IDENTITY)?;
        let (n, d) = (ck.meta_usize(0)?, ck.meta_usize(1)?);
        let mut r = Reader::new(&ck.payload);
        let values = r.f32_vec(n * d)?;
        r.finish()?;
        Ok(Self::new(DenseMatrix::from_vec(n, d, values)?))
    }
}

impl Codec for IdentityCodec {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn rows(&self) -> usize {
        self.matrix.rows()
    }

    fn dim(&self) -> usize {
        self.matrix.cols()
    }

    fn bytes(&self) -> usize {
        memory::baseline_bytes(self.rows(), self.dim())
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        out.copy_from_slice(self.matrix.row(row));
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_IDENTITY);
        ck.meta = vec![self.rows() as u64, self.dim() as u64];
        put_f32s(&mut ck.payload, self.matrix.values());
        Ok(ck)
    }
}

/// Group of every row when rows are split into `groups` equal-count
/// quantiles of their L2 norm (ties by row index); group 0 holds the
/// smallest norms.
pub fn norm_quantile_groups(matrix: &DenseMatrix<f32>, groups: usize) -> Vec<u8> {
    assert!((1..=256).contains(&groups));
    let n = matrix.rows();
    let norms: Vec<f64> = matrix
        .iter_rows()
        .map(|r| r.iter().map(|&v| v as f64 * v as f64).sum::<f64>())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    let mut out = vec![0u8; n];
    for (rank, &row) in order.iter().enumerate() {
        out[row] = (rank * groups / n) as u8;
    }
    out
}

/// Row indices of each group and every row's position inside its group.
pub(crate) fn group_layout(group_of: &[u8], groups: usize) -> (Vec<Vec<usize>>, Vec<u32>) {
    let mut members = vec![Vec::new(); groups];
    let mut local = Vec::with_capacity(group_of.len());
    for (r, &g) in group_of.iter().enumerate() {
        local.push(members[g as usize].len() as u32);
        members[g as usize].push(r);
    }
    (members, local)
}

pub(crate) fn check_groups(group_of: &[u8], groups: usize) -> Result<()> {
    if group_of.iter().any(|&g| g as usize >= groups) {
        return Err(Error::Format("row group id out of range".into()));
    }
    Ok(())
}

/// Restores any codec from its checkpoint.
pub fn load_codec(ck: &Checkpoint) -> Result<Box<dyn Codec>> {
    Ok(match ck.tag {
        tags::CODEC_IDENTITY => Box::new(IdentityCodec::from_checkpoint(ck)?),
        tags::CODEC_PQ => Box::new(PqCodec::from_checkpoint(ck)?),
        tags::CODEC_MAG_PQ => Box::new(MagPqCodec::from_checkpoint(ck)?),
        tags::CODEC_SVD => Box::new(SvdCodec::from_checkpoint(ck)?),
        tags::CODEC_MAG_SVD => Box::new(MagSvdCodec::from_checkpoint(ck)?),
        tags::CODEC_TT => Box::new(TtCodec::from_checkpoint(ck)?),
        tags::CODEC_DEDUP => Box::new(DedupCodec::from_checkpoint(ck)?),
        tags::CODEC_PRUNE => Box::new(ThresholdPrune::from_checkpoint(ck)?),
        tags::CODEC_INT => Box::new(IntCodec::from_checkpoint(ck)?),
        t => {
            return Err(Error::Format(format!(
                "tag {t} ({}) is not a codec",
                tags::name(t)
            )))
        }
    })
}

/// Builds the codec described by solved plan parameters.
pub fn build_codec(matrix: &DenseMatrix<f32>, params: &PlanParams, seed: u64) -> Result<Box<dyn Codec>> {
    Ok(match params {
        PlanParams::Identity => Box::new(IdentityCodec::new(matrix.clone())),
        PlanParams::Pq { parts, centroids } => {
            Box::new(PqCodec::fit(matrix, *parts, *centroids, seed)?)
        }
        PlanParams::MagPq {
            parts,
            max_centroids,
            groups,
        } => Box::new(MagPqCodec::fit(matrix, *parts, *max_centroids, *groups, seed)?),
        PlanParams::Svd { rank } => Box::new(SvdCodec::fit(matrix, *rank)?),
        PlanParams::MagSvd { base_rank, groups } => {
            Box::new(MagSvdCodec::fit(matrix, *base_rank, *groups)?)
        }
        PlanParams::Tt { shape } => Box::new(TtCodec::fit(matrix, shape.clone())?),
        PlanParams::Dedup {
            block,
            max_reps,
            projections,
        } => {
            let lsh = LshParams {
                projections: *projections,
                bucket_width: 1.0,
                seed,
            };
            Box::new(DedupCodec::fit_max_reps(matrix, *block, *max_reps, lsh)?)
        }
        PlanParams::Prune { nnz } => Box::new(ThresholdPrune::fit_nnz(matrix, *nnz)?),
        PlanParams::Quantized { bits } => Box::new(IntCodec::fit(matrix, *bits)),
        other => {
            return Err(Error::invalid(format!(
                "plan parameters {other:?} do not describe a post-training codec"
            )))
        }
    })
}

/// Output of [`compress`].
#[derive(Debug)]
pub struct Compressed {
    pub codec: Box<dyn Codec>,
    pub bytes: usize,
    pub seconds: f64,
}

/// Compresses `matrix` as planned. Discrete methods run at their nearest
/// size; other infeasible plans are refused with the nearest achievable size.
pub fn compress(matrix: &DenseMatrix<f32>, plan: &CompressionPlan, seed: u64) -> Result<Compressed> {
    if !plan.runnable() {
        return Err(Error::Infeasible {
            method: plan.method.to_string(),
            budget_bytes: plan.budget_bytes,
            nearest_bytes: plan.achieved_bytes,
        });
    }
    if plan.baseline_bytes != memory::baseline_bytes(matrix.rows(), matrix.cols()) {
        return Err(Error::invalid("plan was solved for a different matrix shape"));
    }
    let start = Instant::now();
    let codec = build_codec(matrix, &plan.params, seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let bytes = codec.bytes();
    if plan.feasible && bytes > plan.budget_bytes {
        return Err(Error::state(format!(
            "{} produced {bytes} bytes over the {} byte budget",
            codec.name(),
            plan.budget_bytes
        )));
    }
    Ok(Compressed {
        codec,
        bytes,
        seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_groups_match_rank_oracle() {
        let vals: Vec<f32> = (0..40).map(|i| ((i * 7919) % 23) as f32 - 11.0).collect();
        let m = DenseMatrix::from_vec(20, 2, vals).unwrap();
        let g = norm_quantile_groups(&m, 4);
        let norm = |r: usize| m.row(r).iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        for r in 0..20 {
            let rank = (0..20)
                .filter(|&o| norm(o) < norm(r) || (norm(o) == norm(r) && o < r))
                .count();
            assert_eq!(g[r] as usize, rank * 4 / 20);
        }
    }

    #[test]
    fn identity_round_trip() {
        let m = DenseMatrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = IdentityCodec::new(m.clone());
        let ck = c.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), c.bytes());
        let back = load_codec(&ck).unwrap();
        assert_eq!(back.decompress(), m);
        assert!(back.decompress_batch(&[2]).is_err());
    }
}
