use crate::checkpoint::{tags, Checkpoint};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::memory::{self, SparseFormat};
use crate::sparse::SparseMatrix;

use super::Codec;

/// Magnitude pruning to a sparse payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPrune {
    threshold: f32,
    sparse: SparseMatrix<f32>,
}

/// Non-zero entries, kept when `|v| > threshold`.
fn keep_above(matrix: &DenseMatrix<f32>, threshold: f32) -> Vec<(u32, u32, f32)> {
    let d = matrix.cols();
    matrix
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > threshold)
        .map(|(i, &v)| ((i / d) as u32, (i % d) as u32, v))
        .collect()
}

impl ThresholdPrune {
    /// Keeps exactly the entries with `|v| > threshold`.
    pub fn with_threshold(matrix: &DenseMatrix<f32>, threshold: f32) -> Result<Self> {
        let threshold = threshold.max(0.0);
        let entries = keep_above(matrix, threshold);
        Ok(Self {
            threshold,
            sparse: SparseMatrix::from_sorted_entries(matrix.rows(), matrix.cols(), &entries)?,
        })
    }

    /// Keeps the `max_nnz` largest-magnitude non-zero entries. The
    /// threshold is found by bisection over float bit patterns; entries
    /// tied at it are kept in row-major order until the count is reached.
    pub fn fit_nnz(matrix: &DenseMatrix<f32>, max_nnz: usize) -> Result<Self> {
        let mags: Vec<u32> = matrix.values().iter().map(|v| v.abs().to_bits()).collect();
        if mags.iter().any(|&b| b > f32::INFINITY.to_bits()) {
            return Err(Error::invalid("cannot prune a matrix containing NaN"));
        }
        let above = |t: u32| mags.iter().filter(|&&b| b > t).count();
        // Smallest bit pattern t with at most max_nnz magnitudes above it.
        let (mut lo, mut hi) = (0u32, f32::INFINITY.to_bits());
        if above(lo) <= max_nnz {
            hi = lo;
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if above(mid) <= max_nnz {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t = hi;
        let mut room = max_nnz - above(t);
        let d = matrix.cols();
        let mut entries = Vec::with_capacity(max_nnz);
        for (i, (&b, &v)) in mags.iter().zip(matrix.values()).enumerate() {
            let tie = b == t && t > 0 && room > 0;
            if b > t || tie {
                if tie {
                    room -= 1;
                }
                entries.push(((i / d) as u32, (i % d) as u32, v));
            }
        }
        Ok(Self {
            threshold: f32::from_bits(t),
            sparse: SparseMatrix::from_sorted_entries(matrix.rows(), matrix.cols(), &entries)?,
        })
    }

    /// Largest payload within `budget` bytes.
    pub fn fit_budget(matrix: &DenseMatrix<f32>, budget: usize) -> Result<Self> {
        Self::fit_nnz(matrix, memory::max_sparse_nnz(matrix.rows(), matrix.cols(), budget))
    }

    pub fn threshold(&self) -> f32 {
        self.threshold
    }

    pub fn nnz(&self) -> usize {
        self.sparse.nnz()
    }

    pub fn format(&self) -> SparseFormat {
        self.sparse.format()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_PRUNE)?;
        let (n, d, nnz) = (ck.meta_usize(0)?, ck.meta_usize(1)?, ck.meta_usize(2)?);
        let format = SparseFormat::from_tag(ck.meta_at(3)? as u32)?;
        let threshold = f32::from_bits(ck.meta_at(4)? as u32);
        Ok(Self {
            threshold,
            sparse: SparseMatrix::read_payload(n, d, nnz, format, &ck.payload)?,
        })
    }
}

impl Codec for ThresholdPrune {
    fn name(&self) -> &'static str {
        "pruning"
    }

    fn rows(&self) -> usize {
        self.sparse.rows()
    }

    fn dim(&self) -> usize {
        self.sparse.cols()
    }

    fn bytes(&self) -> usize {
        self.sparse.bytes()
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        self.sparse.row_into(row, out);
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_PRUNE);
        ck.meta = vec![
            self.rows() as u64,
            self.dim() as u64,
            self.nnz() as u64,
            self.format().tag() as u64,
            self.threshold.to_bits() as u64,
        ];
        self.sparse.write_payload(&mut ck.payload);
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn low_threshold_keeps_everything() {
        let m = DenseMatrix::from_vec(2, 3, vec![0.5, -0.25, 1.0, 2.0, -3.0, 0.125]).unwrap();
        let c = ThresholdPrune::with_threshold(&m, 0.1).unwrap();
        assert_eq!(c.decompress(), m);
    }

    #[test]
    fn budget_is_tight_against_sort_oracle() {
        let mut rng = crate::rng::seeded(4, 0);
        for trial in 0..30 {
            let (n, d) = (rng.random_range(1..60), rng.random_range(1..20));
            // Coarse values force ties at the threshold.
            let vals: Vec<f32> = (0..n * d).map(|_| rng.random_range(-8i32..=8) as f32 * 0.5).collect();
            let m = DenseMatrix::from_vec(n, d, vals.clone()).unwrap();
            let budget = rng.random_range(0..n * d * 12);
            let c = ThresholdPrune::fit_budget(&m, budget).unwrap();
            assert!(c.bytes() <= budget, "trial {trial}");

            let mut order: Vec<usize> = (0..n * d).filter(|&i| vals[i] != 0.0).collect();
            order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
            let kept = c.nnz();
            let mut want = vec![0.0f32; n * d];
            for &i in &order[..kept] {
                want[i] = vals[i];
            }
            assert_eq!(c.decompress().values(), &want[..]);
            if kept < order.len() {
                assert!(memory::sparse_bytes(n, d, kept + 1).1 > budget);
            }
            let ck = c.to_checkpoint().unwrap();
            assert_eq!(ck.payload.len(), c.bytes());
            assert_eq!(ThresholdPrune::from_checkpoint(&ck).unwrap(), c);
        }
    }
}
