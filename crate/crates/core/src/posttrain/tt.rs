use nalgebra::DMatrix;

use crate::checkpoint::{put_f32s, tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::memory;
use crate::stores::{shape_from_meta, shape_to_meta, tt_row_into, TtShape};

use super::svd::sorted_svd;

/// Tensor-train matrix obtained from a dense matrix by sequential
/// truncated SVDs; rows are decoded exactly like a TT-Rec table.
#[derive(Debug, Clone, PartialEq)]
pub struct TtCodec {
    n: usize,
    shape: TtShape,
    cores: Vec<f32>,
}

impl TtCodec {
    /// Decomposes `matrix` with the ranks of `shape`. Rows beyond `n` up
    /// to the shape's capacity are treated as zero.
    pub fn fit(matrix: &DenseMatrix<f32>, shape: TtShape) -> Result<Self> {
        let (n, d) = (matrix.rows(), matrix.cols());
        if shape.dim() != d || shape.capacity() < n {
            return Err(Error::invalid(format!(
                "TT shape covers {} rows x {} columns, matrix is {n} x {d}",
                shape.capacity(),
                shape.dim()
            )));
        }
        let t = shape.cores();
        let modes: Vec<usize> = (0..t).map(|i| shape.row_factors[i] * shape.col_factors[i]).collect();
        let total: usize = modes.iter().product();

        // Tensor entry at mode indices (j_i * a_i + c_i), first mode most
        // significant, flattened row-major.
        let mut tensor = vec![0.0f64; total];
        let mut digits = [0usize; 3];
        let mut col_digits = [0usize; 3];
        for x in 0..n {
            shape.digits(x, &mut digits[..t]);
            for (col, &v) in matrix.row(x).iter().enumerate() {
                let mut c = col;
                for i in (0..t).rev() {
                    col_digits[i] = c % shape.col_factors[i];
                    c /= shape.col_factors[i];
                }
                let mut pos = 0;
                for i in 0..t {
                    pos = pos * modes[i] + digits[i] * shape.col_factors[i] + col_digits[i];
                }
                tensor[pos] = v as f64;
            }
        }

        let offs = shape.core_offsets();
        let mut cores = vec![0.0f32; shape.param_count()];
        let mut rows = modes[0];
        let mut w = tensor;
        for i in 0..t {
            let (rp, m, a, rn) = (
                shape.ranks[i],
                shape.row_factors[i],
                shape.col_factors[i],
                shape.ranks[i + 1],
            );
            let cols = w.len() / rows;
            let core = &mut cores[offs[i]..offs[i + 1]];
            // Row index of the unfolding is (r_prev, j, c).
            let unfold_row = |r: usize, j: usize, c: usize| (r * m + j) * a + c;
            if i + 1 == t {
                for r in 0..rp {
                    for j in 0..m {
                        for c in 0..a {
                            core[((j * rp + r) * a + c) * rn] = w[unfold_row(r, j, c)] as f32;
                        }
                    }
                }
                break;
            }
            let (u, s, vt) = sorted_svd(DMatrix::from_row_slice(rows, cols, &w));
            let keep = rn.min(s.len());
            for r in 0..rp {
                for j in 0..m {
                    for c in 0..a {
                        for k in 0..keep {
                            core[((j * rp + r) * a + c) * rn + k] = u[(unfold_row(r, j, c), k)] as f32;
                        }
                    }
                }
            }
            // Remainder diag(s) * vt, zero-padded to `rn` rows, refolded so
            // the next mode joins the row index.
            let mut next = vec![0.0f64; rn * cols];
            for k in 0..keep {
                for col in 0..cols {
                    next[k * cols + col] = s[k] * vt[(k, col)];
                }
            }
            w = next;
            rows = rn * modes[i + 1];
        }
        Ok(Self { n, shape, cores })
    }

    pub fn shape(&self) -> &TtShape {
        &self.shape
    }

    pub fn predicted_bytes(shape: &TtShape) -> usize {
        shape.param_count() * memory::F32_BYTES
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_TT)?;
        let n = ck.meta_usize(0)?;
        let shape = shape_from_meta(ck, 1)?;
        let mut r = Reader::new(&ck.payload);
        let cores = r.f32_vec(shape.param_count())?;
        r.finish()?;
        Ok(Self { n, shape, cores })
    }
}

impl super::Codec for TtCodec {
    fn name(&self) -> &'static str {
        "tt"
    }

    fn rows(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.shape.dim()
    }

    fn bytes(&self) -> usize {
        Self::predicted_bytes(&self.shape)
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        tt_row_into(&self.shape, &self.cores, row, out);
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_TT);
        ck.meta = vec![self.n as u64];
        ck.meta.extend(shape_to_meta(&self.shape));
        put_f32s(&mut ck.payload, &self.cores);
        Ok(ck)
    }
}
