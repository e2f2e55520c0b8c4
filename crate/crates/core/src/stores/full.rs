use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;

use super::{
    check_grads, check_trainable, moment_bytes, read_values, sparse_adam_step, uniform_vec,
    write_values, EmbeddingStore, InitConfig,
};

/// Uncompressed `n x d` table; the baseline every ratio is measured against.
#[derive(Debug, Clone)]
pub struct FullTable<T = f32> {
    table: DenseMatrix<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> FullTable<T> {
    pub fn new(n: usize, dim: usize, init: InitConfig) -> Self {
        let mut rng = init.rng(streams::INIT);
        let values = uniform_vec(&mut rng, n * dim, -init.scale, init.scale);
        Self::from_matrix(DenseMatrix::from_vec(n, dim, values).expect("shape"))
    }

    pub fn from_matrix(table: DenseMatrix<T>) -> Self {
        let len = table.values().len();
        Self {
            table,
            adam: AdamState::new(len),
            frozen: false,
        }
    }

    pub fn table(&self) -> &DenseMatrix<T> {
        &self.table
    }

    pub fn into_matrix(self) -> DenseMatrix<T> {
        self.table
    }
}

impl<T: Real> EmbeddingStore<T> for FullTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "full"
    }

    fn num_features(&self) -> usize {
        self.table.rows()
    }

    fn dim(&self) -> usize {
        self.table.cols()
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        out.copy_from_slice(self.table.row(id));
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        super::check_ids(ids, self.num_features())?;
        let d = self.dim();
        check_grads(ids, grads, d)?;
        let mut g = SparseGrad::with_capacity(ids.len() * d);
        for (i, &id) in ids.iter().enumerate() {
            for (j, &v) in grads.row(i).iter().enumerate() {
                g.push(id as usize * d + j, v);
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let g = self.backward(ids, grads)?;
        sparse_adam_step(self.table.values_mut(), &mut self.adam, g, opt);
        Ok(())
    }

    fn freeze(&mut self) -> Result<usize> {
        self.frozen = true;
        self.adam = AdamState::new(0);
        Ok(self.inference_bytes())
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn inference_bytes(&self) -> usize {
        memory::dense_bytes(self.table.rows(), self.table.cols(), memory::F32_BYTES)
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.table.values().len())
    }

    fn param_len(&self) -> usize {
        self.table.values().len()
    }

    fn param(&self, i: usize) -> T {
        self.table.values()[i]
    }

    fn set_param(&mut self, i: usize, v: T) {
        self.table.values_mut()[i] = v;
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::FULL);
        ck.meta = vec![self.table.rows() as u64, self.table.cols() as u64];
        write_values(&mut ck.payload, self.table.values());
        Ok(ck)
    }
}

impl FullTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::FULL)?;
        let (n, d) = (ck.meta_usize(0)?, ck.meta_usize(1)?);
        let mut r = Reader::new(&ck.payload);
        let values = read_values(&mut r, n * d)?;
        r.finish().map_err(|e| Error::Format(format!("full table: {e}")))?;
        let mut t = Self::from_matrix(DenseMatrix::from_vec(n, d, values)?);
        t.freeze()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_lookup() {
        let t = FullTable::from_matrix(DenseMatrix::<f32>::identity(4));
        let rows = t.lookup(&[2]).unwrap();
        assert_eq!(rows.row(0), &[0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(
            t.lookup(&[1, 4]),
            Err(Error::IdOutOfRange { id: 4, position: 1, .. })
        ));
    }

    #[test]
    fn sgd_step_decrements_row() {
        let mut t = FullTable::from_matrix(DenseMatrix::<f64>::identity(3));
        let g = DenseMatrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        t.apply_gradients(&[1], &g, &Optimizer::sgd(1.0)).unwrap();
        assert_eq!(t.table().row(1), &[-0.5, 2.0, -2.0]);
        assert_eq!(t.table().row(0), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn bytes_and_freeze() {
        let mut t = FullTable::<f32>::new(1000, 16, InitConfig::default());
        assert_eq!(t.training_bytes(), 3 * 64_000);
        assert_eq!(t.freeze().unwrap(), 64_000);
        let g = DenseMatrix::zeros(1, 16);
        assert!(matches!(
            t.apply_gradients(&[0], &g, &Optimizer::default()),
            Err(Error::State(_))
        ));
        let ck = t.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), 64_000);
        let back = FullTable::from_checkpoint(&ck).unwrap();
        assert_eq!(back.to_checkpoint().unwrap().to_bytes(), ck.to_bytes());
    }
}
