use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory::{self, SparseFormat};

/// Sparse matrix in CSR or COO layout with 32-bit indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T = f32> {
    rows: usize,
    cols: usize,
    format: SparseFormat,
    values: Vec<T>,
    col_idx: Vec<u32>,
    /// CSR: `rows + 1` row pointers. COO: one row index per entry.
    row_idx: Vec<u32>,
}

impl<T: Real> SparseMatrix<T> {
    /// Builds from `(row, col, value)` entries sorted row-major, choosing
    /// the cheaper of CSR and COO.
    pub fn from_sorted_entries(
        rows: usize,
        cols: usize,
        entries: &[(u32, u32, T)],
    ) -> Result<Self> {
        let (format, _) = memory::sparse_bytes(rows, cols, entries.len());
        Self::with_format(rows, cols, entries, format)
    }

    pub fn with_format(
        rows: usize,
        cols: usize,
        entries: &[(u32, u32, T)],
        format: SparseFormat,
    ) -> Result<Self> {
        for w in entries.windows(2) {
            if (w[0].0, w[0].1) >= (w[1].0, w[1].1) {
                return Err(Error::invalid("sparse entries must be strictly row-major sorted"));
            }
        }
        if let Some(&(r, c, _)) = entries.last() {
            if r as usize >= rows || c as usize >= cols {
                return Err(Error::invalid("sparse entry outside matrix shape"));
            }
        }
        let values = entries.iter().map(|e| e.2).collect();
        let col_idx = entries.iter().map(|e| e.1).collect();
        let row_idx = match format {
            SparseFormat::Coo => entries.iter().map(|e| e.0).collect(),
            SparseFormat::Csr => {
                let mut ptr = vec![0u32; rows + 1];
                for e in entries {
                    ptr[e.0 as usize + 1] += 1;
                }
                for r in 0..rows {
                    ptr[r + 1] += ptr[r];
                }
                ptr
            }
        };
        Ok(Self {
            rows,
            cols,
            format,
            values,
            col_idx,
            row_idx,
        })
    }

    /// Keeps the entries of `dense` selected by `keep`.
    pub fn from_dense_mask(dense: &DenseMatrix<T>, keep: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut entries = Vec::new();
        for r in 0..dense.rows() {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if keep(r, c) {
                    entries.push((r as u32, c as u32, v));
                }
            }
        }
        Self::from_sorted_entries(dense.rows(), dense.cols(), &entries)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn format(&self) -> SparseFormat {
        self.format
    }

    pub fn bytes(&self) -> usize {
        match self.format {
            SparseFormat::Csr => memory::csr_bytes(self.rows, self.nnz(), memory::F32_BYTES),
            SparseFormat::Coo => memory::coo_bytes(self.nnz(), memory::F32_BYTES),
        }
    }

    fn row_range(&self, r: usize) -> std::ops::Range<usize> {
        match self.format {
            SparseFormat::Csr => self.row_idx[r] as usize..self.row_idx[r + 1] as usize,
            SparseFormat::Coo => {
                let r = r as u32;
                let lo = self.row_idx.partition_point(|&x| x < r);
                let hi = self.row_idx.partition_point(|&x| x <= r);
                lo..hi
            }
        }
    }

    /// Writes dense row `r` into `out` (zero-filled first).
    pub fn row_into(&self, r: usize, out: &mut [T]) {
        out.fill(T::zero());
        for i in self.row_range(r) {
            out[self.col_idx[i] as usize] = self.values[i];
        }
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            self.row_into(r, m.row_mut(r));
        }
        m
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn entries(&self) -> Vec<(u32, u32, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for i in self.row_range(r) {
                out.push((r as u32, self.col_idx[i], self.values[i]));
            }
        }
        out
    }
}

impl SparseMatrix<f32> {
    /// Payload layout: values, column indices, then row pointers (CSR) or
    /// row indices (COO). All little-endian 32-bit.
    pub fn write_payload(&self, out: &mut Vec<u8>) {
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for c in &self.col_idx {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for r in &self.row_idx {
            out.extend_from_slice(&r.to_le_bytes());
        }
    }

    pub fn read_payload(
        rows: usize,
        cols: usize,
        nnz: usize,
        format: SparseFormat,
        payload: &[u8],
    ) -> Result<Self> {
        let row_len = match format {
            SparseFormat::Csr => rows + 1,
            SparseFormat::Coo => nnz,
        };
        let need = (nnz * 2 + row_len) * 4;
        if payload.len() != need {
            return Err(Error::Format(format!(
                "sparse payload has {} bytes, expected {need}",
                payload.len()
            )));
        }
        let words: Vec<[u8; 4]> = payload
            .chunks_exact(4)
            .map(|c| c.try_into().expect("4 bytes"))
            .collect();
        let values = words[..nnz].iter().map(|w| f32::from_le_bytes(*w)).collect();
        let col_idx = words[nnz..2 * nnz].iter().map(|w| u32::from_le_bytes(*w)).collect();
        let row_idx = words[2 * nnz..].iter().map(|w| u32::from_le_bytes(*w)).collect();
        Ok(Self {
            rows,
            cols,
            format,
            values,
            col_idx,
            row_idx,
        })
    }
}
