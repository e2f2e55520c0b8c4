use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;

use super::{
    check_grads, check_ids, check_trainable, moment_bytes, read_values, sparse_adam_step,
    uniform_vec, write_values, EmbeddingStore, InitConfig,
};

/// Quotient-remainder composition: feature `x` reads row `x mod m1` of the
/// first table and row `(x div m1) mod m2` of the second, multiplied
/// elementwise. Collision-free whenever `m1 * m2 >= n`.
#[derive(Debug, Clone)]
pub struct CompoTable<T = f32> {
    n: usize,
    dim: usize,
    m1: usize,
    m2: usize,
    /// `[remainder table (m1 x d) | quotient table (m2 x d)]`.
    params: Vec<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> CompoTable<T> {
    pub fn new(n: usize, dim: usize, m1: usize, m2: usize, init: InitConfig) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::invalid("compositional tables need m1, m2 >= 1"));
        }
        let mut rng = init.rng(streams::INIT);
        let mut params: Vec<T> = uniform_vec(&mut rng, m1 * dim, -init.scale, init.scale);
        // The quotient table starts near one so products begin near the
        // remainder rows.
        params.extend(uniform_vec::<T>(&mut rng, m2 * dim, 1.0 - init.scale, 1.0 + init.scale));
        Ok(Self::from_params(n, dim, m1, m2, params))
    }

    fn from_params(n: usize, dim: usize, m1: usize, m2: usize, params: Vec<T>) -> Self {
        Self {
            n,
            dim,
            m1,
            m2,
            adam: AdamState::new(params.len()),
            params,
            frozen: false,
        }
    }

    /// Builds from explicit tables (`m1 x d` and `m2 x d`).
    pub fn from_tables(n: usize, first: &DenseMatrix<T>, second: &DenseMatrix<T>) -> Result<Self> {
        if first.cols() != second.cols() {
            return Err(Error::invalid("compositional tables need equal widths"));
        }
        let mut params = first.values().to_vec();
        params.extend_from_slice(second.values());
        Ok(Self::from_params(n, first.cols(), first.rows(), second.rows(), params))
    }

    pub fn table_sizes(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    /// Row indices `(x mod m1, (x div m1) mod m2)`.
    #[inline]
    pub fn index_pair(&self, id: usize) -> (usize, usize) {
        (id % self.m1, (id / self.m1) % self.m2)
    }
}

impl<T: Real> EmbeddingStore<T> for CompoTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "compo"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let (a, b) = self.index_pair(id);
        let d = self.dim;
        let ra = &self.params[a * d..(a + 1) * d];
        let off = self.m1 * d;
        let rb = &self.params[off + b * d..off + (b + 1) * d];
        for ((o, &x), &y) in out.iter_mut().zip(ra).zip(rb) {
            *o = x * y;
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let off = self.m1 * d;
        let mut g = SparseGrad::with_capacity(ids.len() * d * 2);
        for (i, &id) in ids.iter().enumerate() {
            let (a, b) = self.index_pair(id as usize);
            for (j, &v) in grads.row(i).iter().enumerate() {
                let x = self.params[a * d + j];
                let y = self.params[off + b * d + j];
                g.push(a * d + j, v * y);
                g.push(off + b * d + j, v * x);
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let g = self.backward(ids, grads)?;
        sparse_adam_step(&mut self.params, &mut self.adam, g, opt);
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
        memory::dense_bytes(self.m1 + self.m2, self.dim, memory::F32_BYTES)
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.params.len())
    }

    fn param_len(&self) -> usize {
        self.params.len()
    }

    fn param(&self, i: usize) -> T {
        self.params[i]
    }

    fn set_param(&mut self, i: usize, v: T) {
        self.params[i] = v;
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::COMPO);
        ck.meta = vec![self.n as u64, self.dim as u64, self.m1 as u64, self.m2 as u64];
        write_values(&mut ck.payload, &self.params);
        Ok(ck)
    }
}

impl CompoTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::COMPO)?;
        let (n, dim, m1, m2) = (
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_usize(3)?,
        );
        let mut r = Reader::new(&ck.payload);
        let params = read_values(&mut r, (m1 + m2) * dim)?;
        r.finish()?;
        let mut t = Self::from_params(n, dim, m1, m2, params);
        t.freeze()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_tables_multiply() {
        let s = 0.7f32;
        let first = DenseMatrix::from_vec(4, 3, vec![2.0 * s; 12]).unwrap();
        let second = DenseMatrix::from_vec(3, 3, vec![3.0 * s; 9]).unwrap();
        let t = CompoTable::from_tables(12, &first, &second).unwrap();
        let out = t.lookup(&(0..12).collect::<Vec<_>>()).unwrap();
        for v in out.values() {
            assert!((v - 6.0 * s * s).abs() < 1e-6);
        }
    }

    #[test]
    fn index_pairs_are_injective() {
        // Exhaustive over every n <= 2000 with the tightest table sizes.
        for n in 1..=2000usize {
            let m1 = (n as f64).sqrt().ceil() as usize;
            let m2 = n.div_ceil(m1);
            let t = CompoTable::<f32>::new(n, 1, m1, m2, InitConfig::default()).unwrap();
            let mut seen = vec![false; m1 * m2];
            for x in 0..n {
                let (a, b) = t.index_pair(x);
                let k = b * m1 + a;
                assert!(!seen[k], "collision at n={n}, x={x}");
                seen[k] = true;
            }
        }
    }

    #[test]
    fn bytes_count_both_tables() {
        let mut t = CompoTable::<f32>::new(100, 16, 10, 10, InitConfig::default()).unwrap();
        assert_eq!(t.freeze().unwrap(), 20 * 16 * 4);
        let ck = t.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), t.inference_bytes());
        let back = CompoTable::from_checkpoint(&ck).unwrap();
        assert_eq!(back.to_checkpoint().unwrap().to_bytes(), ck.to_bytes());
    }
}
