use crate::checkpoint::{tags, Checkpoint};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory::{self, SparseFormat};
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;
use crate::sparse::SparseMatrix;

use super::{
    check_grads, check_ids, check_trainable, uniform_vec, EmbeddingStore, InitConfig,
};

/// Kept entry count at `position` of a cubic decay from `total` to `target`.
pub fn cubic_density(total: usize, target: usize, position: f64) -> usize {
    let pos = position.clamp(0.0, 1.0);
    if pos >= 1.0 {
        return target;
    }
    let extra = (total - target.min(total)) as f64 * (1.0 - pos).powi(3);
    (target + extra.ceil() as usize).min(total)
}

/// Magnitude-pruned table: a dense shadow with a keep mask while training,
/// a CSR or COO payload once frozen.
#[derive(Debug, Clone)]
pub struct PrunedTable<T = f32> {
    n: usize,
    dim: usize,
    target_nnz: usize,
    values: Vec<T>,
    /// One bit per entry, `ceil(d / 32)` words per row.
    mask: Vec<u32>,
    words_per_row: usize,
    kept: usize,
    adam: AdamState<T>,
    sparse: Option<SparseMatrix<T>>,
}

impl<T: Real> PrunedTable<T> {
    pub fn new(n: usize, dim: usize, target_nnz: usize, init: InitConfig) -> Result<Self> {
        let mut rng = init.rng(streams::INIT);
        let values = uniform_vec(&mut rng, n * dim, -init.scale, init.scale);
        Self::from_values(n, dim, target_nnz, values)
    }

    pub fn from_matrix(m: &DenseMatrix<T>, target_nnz: usize) -> Result<Self> {
        Self::from_values(m.rows(), m.cols(), target_nnz, m.values().to_vec())
    }

    fn from_values(n: usize, dim: usize, target_nnz: usize, values: Vec<T>) -> Result<Self> {
        if target_nnz > n * dim {
            return Err(Error::invalid("target nnz exceeds the table size"));
        }
        let words_per_row = dim.div_ceil(32);
        let mut mask = vec![0u32; n * words_per_row];
        for r in 0..n {
            for c in 0..dim {
                mask[r * words_per_row + c / 32] |= 1 << (c % 32);
            }
        }
        Ok(Self {
            n,
            dim,
            target_nnz,
            adam: AdamState::new(values.len()),
            values,
            mask,
            words_per_row,
            kept: n * dim,
            sparse: None,
        })
    }

    pub fn target_nnz(&self) -> usize {
        self.target_nnz
    }

    /// Entries currently kept by the mask.
    pub fn kept(&self) -> usize {
        self.kept
    }

    pub fn sparse(&self) -> Option<&SparseMatrix<T>> {
        self.sparse.as_ref()
    }

    #[inline]
    pub fn is_kept(&self, i: usize) -> bool {
        let (r, c) = (i / self.dim, i % self.dim);
        self.mask[r * self.words_per_row + c / 32] >> (c % 32) & 1 == 1
    }

    fn drop_entry(&mut self, i: usize) {
        let (r, c) = (i / self.dim, i % self.dim);
        self.mask[r * self.words_per_row + c / 32] &= !(1 << (c % 32));
        self.values[i] = T::zero();
        self.kept -= 1;
    }

    /// Masks entries so that the kept count follows the cubic schedule
    /// towards `floor(target_density * n * d)`.
    pub fn prune_step(&mut self, target_density: f64, position: f64) -> Result<()> {
        if !(target_density > 0.0 && target_density <= 1.0) {
            return Err(Error::invalid("target density must lie in (0, 1]"));
        }
        let total = self.n * self.dim;
        let target = ((target_density * total as f64) + 1e-9).floor() as usize;
        self.prune_to(cubic_density(total, target.min(total), position));
        Ok(())
    }

    /// Follows the schedule towards the store's own target count.
    pub fn prune_scheduled(&mut self, position: f64) {
        let total = self.n * self.dim;
        self.prune_to(cubic_density(total, self.target_nnz, position));
    }

    /// Keeps the `keep` largest-magnitude kept entries; ties keep the
    /// earlier `(row, col)`.
    pub fn prune_to(&mut self, keep: usize) {
        if self.kept <= keep {
            return;
        }
        let mut order: Vec<usize> = (0..self.values.len()).filter(|&i| self.is_kept(i)).collect();
        let values = &self.values;
        order.select_nth_unstable_by(keep, |&a, &b| {
            values[b]
                .abs()
                .partial_cmp(&values[a].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for i in order.split_off(keep) {
            self.drop_entry(i);
        }
    }

    fn mask_bytes(&self) -> usize {
        memory::row_mask_bytes(self.n, self.dim)
    }
}

impl<T: Real> EmbeddingStore<T> for PrunedTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "deeplight"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        match &self.sparse {
            Some(s) => s.row_into(id, out),
            None => out.copy_from_slice(&self.values[id * self.dim..(id + 1) * self.dim]),
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let mut g = SparseGrad::with_capacity(ids.len() * d);
        for (i, &id) in ids.iter().enumerate() {
            for (j, &v) in grads.row(i).iter().enumerate() {
                let k = id as usize * d + j;
                if self.is_kept(k) {
                    g.push(k, v);
                }
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.sparse.is_some(), self.name())?;
        let mut g = self.backward(ids, grads)?;
        self.adam.apply_sparse(&mut self.values, &mut g, opt);
        Ok(())
    }

    /// Prunes to the target, then switches to the cheaper sparse layout.
    fn freeze(&mut self) -> Result<usize> {
        if self.sparse.is_none() {
            self.prune_scheduled(1.0);
            let mut entries = Vec::with_capacity(self.kept);
            for i in 0..self.values.len() {
                if self.is_kept(i) {
                    entries.push(((i / self.dim) as u32, (i % self.dim) as u32, self.values[i]));
                }
            }
            self.sparse = Some(SparseMatrix::from_sorted_entries(self.n, self.dim, &entries)?);
            self.adam = AdamState::new(0);
            self.values = Vec::new();
            self.mask = Vec::new();
        }
        Ok(self.inference_bytes())
    }

    fn is_frozen(&self) -> bool {
        self.sparse.is_some()
    }

    fn on_schedule(&mut self, progress: f64) {
        if self.sparse.is_none() {
            self.prune_scheduled(progress);
        }
    }

    fn inference_bytes(&self) -> usize {
        match &self.sparse {
            Some(s) => s.bytes(),
            None => memory::sparse_bytes(self.n, self.dim, self.kept).1,
        }
    }

    /// Dense shadow, both moments and the mask.
    fn training_bytes(&self) -> usize {
        3 * memory::dense_bytes(self.n, self.dim, memory::F32_BYTES) + self.mask_bytes()
    }

    fn param_len(&self) -> usize {
        self.n * self.dim
    }

    fn param(&self, i: usize) -> T {
        match &self.sparse {
            Some(s) => {
                let mut row = vec![T::zero(); self.dim];
                s.row_into(i / self.dim, &mut row);
                row[i % self.dim]
            }
            None => self.values[i],
        }
    }

    fn set_param(&mut self, i: usize, v: T) {
        if self.sparse.is_none() && self.is_kept(i) {
            self.values[i] = v;
        }
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let s = self
            .sparse
            .as_ref()
            .ok_or_else(|| Error::state("pruned table must be frozen before saving"))?;
        let mut ck = Checkpoint::new(tags::PRUNED);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            s.nnz() as u64,
            s.format().tag() as u64,
        ];
        let dense: SparseMatrix<f32> = SparseMatrix::with_format(
            s.rows(),
            s.cols(),
            &s.entries()
                .into_iter()
                .map(|(r, c, v)| (r, c, v.to_f32().unwrap_or(0.0)))
                .collect::<Vec<_>>(),
            s.format(),
        )?;
        dense.write_payload(&mut ck.payload);
        Ok(ck)
    }
}

impl PrunedTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::PRUNED)?;
        let (n, dim, nnz) = (ck.meta_usize(0)?, ck.meta_usize(1)?, ck.meta_usize(2)?);
        let format = SparseFormat::from_tag(ck.meta_at(3)? as u32)?;
        let sparse = SparseMatrix::read_payload(n, dim, nnz, format, &ck.payload)?;
        Ok(Self {
            n,
            dim,
            target_nnz: nnz,
            values: Vec::new(),
            mask: Vec::new(),
            words_per_row: dim.div_ceil(32),
            kept: nnz,
            adam: AdamState::new(0),
            sparse: Some(sparse),
        })
    }
}
