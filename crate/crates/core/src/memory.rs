//! Byte-exact memory model.
//!
//! Every store and codec reports its size through these formulas, and the
//! checkpoint payload of every frozen structure has exactly that length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const F32_BYTES: usize = 4;
pub const F16_BYTES: usize = 2;
pub const I16_BYTES: usize = 2;
pub const I8_BYTES: usize = 1;
pub const INDEX_BYTES: usize = 4;

/// Number of optimizer moment copies kept per trainable parameter (Adam).
pub const ADAM_MOMENTS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SparseFormat {
    Csr,
    Coo,
}

impl SparseFormat {
    pub fn tag(self) -> u32 {
        match self {
            SparseFormat::Csr => 0,
            SparseFormat::Coo => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Result<Self> {
        match tag {
            0 => Ok(SparseFormat::Csr),
            1 => Ok(SparseFormat::Coo),
            t => Err(Error::Format(format!("unknown sparse format tag {t}"))),
        }
    }
}

#[inline]
pub fn dense_bytes(rows: usize, cols: usize, width: usize) -> usize {
    rows * cols * width
}

#[inline]
pub fn baseline_bytes(n: usize, dim: usize) -> usize {
    dense_bytes(n, dim, F32_BYTES)
}

#[inline]
pub fn csr_bytes(rows: usize, nnz: usize, value_width: usize) -> usize {
    nnz * (value_width + INDEX_BYTES) + (rows + 1) * INDEX_BYTES
}

#[inline]
pub fn coo_bytes(nnz: usize, value_width: usize) -> usize {
    nnz * (value_width + 2 * INDEX_BYTES)
}

/// The cheaper of CSR and COO for an `rows x cols` f32 matrix with `nnz`
/// stored entries. CSR wins ties.
pub fn sparse_bytes(rows: usize, cols: usize, nnz: usize) -> (SparseFormat, usize) {
    debug_assert!(nnz <= rows * cols);
    let _ = cols;
    let csr = csr_bytes(rows, nnz, F32_BYTES);
    let coo = coo_bytes(nnz, F32_BYTES);
    if csr <= coo {
        (SparseFormat::Csr, csr)
    } else {
        (SparseFormat::Coo, coo)
    }
}

/// Largest `nnz` whose adaptive sparse payload fits in `budget` bytes.
pub fn max_sparse_nnz(rows: usize, cols: usize, budget: usize) -> usize {
    let csr_overhead = (rows + 1) * INDEX_BYTES;
    let csr = budget
        .checked_sub(csr_overhead)
        .map_or(0, |b| b / (F32_BYTES + INDEX_BYTES));
    let coo = budget / (F32_BYTES + 2 * INDEX_BYTES);
    csr.max(coo).min(rows * cols)
}

/// Bytes of a packed per-row bit mask: one 32-bit word per 32 columns.
#[inline]
pub fn row_mask_bytes(rows: usize, cols: usize) -> usize {
    rows * cols.div_ceil(32) * 4
}

/// `baseline / compressed`.
pub fn compression_ratio(baseline_bytes: usize, compressed_bytes: usize) -> Result<f64> {
    if compressed_bytes == 0 {
        return Err(Error::invalid("compressed size must be > 0"));
    }
    Ok(baseline_bytes as f64 / compressed_bytes as f64)
}

/// `bytes / baseline` as a percentage rounded half-up to one decimal,
/// computed in integers so the printed figure is exact.
pub fn percent_of(bytes: usize, baseline: usize) -> String {
    percent_with_decimals(bytes, baseline, 1)
}

pub fn percent_with_decimals(bytes: usize, baseline: usize, decimals: u32) -> String {
    if baseline == 0 {
        return "n/a".to_string();
    }
    let scale = 100u128 * 10u128.pow(decimals);
    let num = bytes as u128 * scale * 2 + baseline as u128;
    let den = baseline as u128 * 2;
    let units = num / den;
    let pow = 10u128.pow(decimals);
    if decimals == 0 {
        format!("{units}%")
    } else {
        format!(
            "{}.{:0width$}%",
            units / pow,
            units % pow,
            width = decimals as usize
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_examples() {
        assert_eq!(compression_ratio(1000, 250).unwrap(), 4.0);
        let fp32 = dense_bytes(100, 16, F32_BYTES);
        let int8 = dense_bytes(100, 16, I8_BYTES);
        assert_eq!(compression_ratio(fp32, int8).unwrap(), 4.0);
        assert_eq!(compression_ratio(777, 777).unwrap(), 1.0);
        assert!(compression_ratio(10, 0).is_err());
    }

    #[test]
    fn sparse_examples() {
        assert_eq!(sparse_bytes(3, 4, 5), (SparseFormat::Csr, 56));
        assert_eq!(coo_bytes(5, 4), 60);
        assert_eq!(sparse_bytes(1000, 16, 10), (SparseFormat::Coo, 120));
        let (_, b) = sparse_bytes(10, 16, 160);
        assert!(b > dense_bytes(10, 16, 4));
    }

    #[test]
    fn sparse_is_min_over_grid() {
        for rows in 1..12 {
            for cols in 1..12 {
                for nnz in 0..=rows * cols {
                    let csr = nnz * 8 + (rows + 1) * 4;
                    let coo = nnz * 12;
                    let (fmt, b) = sparse_bytes(rows, cols, nnz);
                    assert_eq!(b, csr.min(coo));
                    assert_eq!(fmt == SparseFormat::Csr, csr <= coo);
                }
            }
        }
    }

    #[test]
    fn max_nnz_is_tight() {
        for rows in 1..30 {
            for budget in (0..600).step_by(7) {
                let nnz = max_sparse_nnz(rows, 8, budget);
                if nnz < rows * 8 {
                    assert!(sparse_bytes(rows, 8, nnz + 1).1 > budget);
                }
                if nnz > 0 {
                    assert!(sparse_bytes(rows, 8, nnz).1 <= budget);
                }
            }
        }
    }

    #[test]
    fn percent_rounds_half_up() {
        // 3 x 64 + 4 bytes per 64-byte row.
        assert_eq!(percent_of(196, 64), "306.3%");
        assert_eq!(percent_of(192, 64), "300.0%");
        assert_eq!(percent_of(36, 64), "56.3%");
        assert_eq!(percent_of(20, 64), "31.3%");
        assert_eq!(percent_of(16, 64), "25.0%");
        assert_eq!(percent_with_decimals(1, 3, 2), "33.33%");
    }
}
