use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::hash::HashFamily;
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;

use super::{
    check_grads, check_ids, check_trainable, moment_bytes, read_values, sparse_adam_step,
    uniform_vec, write_values, EmbeddingStore, InitConfig,
};

/// Two hashes into one shared `m x d` table; the embedding is the sum of
/// both rows.
#[derive(Debug, Clone)]
pub struct DoubleHashTable<T = f32> {
    n: usize,
    dim: usize,
    buckets: usize,
    hashes: HashFamily,
    table: Vec<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> DoubleHashTable<T> {
    pub fn new(n: usize, dim: usize, buckets: usize, hash_seed: u64, init: InitConfig) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::invalid("double hash needs at least one bucket"));
        }
        let mut rng = init.rng(streams::INIT);
        // Each feature sums two rows, so halve the per-row range.
        let a = init.scale / 2.0;
        let table = uniform_vec(&mut rng, buckets * dim, -a, a);
        Ok(Self {
            n,
            dim,
            buckets,
            hashes: HashFamily::new(hash_seed, 2),
            adam: AdamState::new(table.len()),
            table,
            frozen: false,
        })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    #[inline]
    pub fn rows_of(&self, id: usize) -> (usize, usize) {
        let m = self.buckets as u64;
        (
            self.hashes.bucket(id as u64, 0, m) as usize,
            self.hashes.bucket(id as u64, 1, m) as usize,
        )
    }
}

impl<T: Real> EmbeddingStore<T> for DoubleHashTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "double_hash"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let (a, b) = self.rows_of(id);
        let d = self.dim;
        let ra = &self.table[a * d..(a + 1) * d];
        let rb = &self.table[b * d..(b + 1) * d];
        for ((o, &x), &y) in out.iter_mut().zip(ra).zip(rb) {
            *o = x + y;
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let mut g = SparseGrad::with_capacity(ids.len() * d * 2);
        for (i, &id) in ids.iter().enumerate() {
            let (a, b) = self.rows_of(id as usize);
            for (j, &v) in grads.row(i).iter().enumerate() {
                g.push(a * d + j, v);
                g.push(b * d + j, v);
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let g = self.backward(ids, grads)?;
        sparse_adam_step(&mut self.table, &mut self.adam, g, opt);
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
        memory::dense_bytes(self.buckets, self.dim, memory::F32_BYTES)
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.table.len())
    }

    fn param_len(&self) -> usize {
        self.table.len()
    }

    fn param(&self, i: usize) -> T {
        self.table[i]
    }

    fn set_param(&mut self, i: usize, v: T) {
        self.table[i] = v;
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::DOUBLE_HASH);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.buckets as u64,
            self.hashes.seed(),
        ];
        write_values(&mut ck.payload, &self.table);
        Ok(ck)
    }
}

impl DoubleHashTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::DOUBLE_HASH)?;
        let (n, dim, buckets, seed) = (
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_at(3)?,
        );
        let mut r = Reader::new(&ck.payload);
        let table = read_values(&mut r, buckets * dim)?;
        r.finish()?;
        Ok(Self {
            n,
            dim,
            buckets,
            hashes: HashFamily::new(seed, 2),
            table,
            adam: AdamState::new(0),
            frozen: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_rows_receive_full_gradient() {
        let t = DoubleHashTable::<f64>::new(50, 3, 7, 11, InitConfig::default()).unwrap();
        let id = (0..50).find(|&x| {
            let (a, b) = t.rows_of(x);
            a != b
        });
        let id = id.expect("some id with distinct buckets") as u32;
        let g = DenseMatrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let mut sg = t.backward(&[id], &g).unwrap();
        let (a, b) = t.rows_of(id as usize);
        let dense = sg.to_dense(t.param_len());
        assert_eq!(&dense[a * 3..a * 3 + 3], &[1.0, 2.0, 3.0]);
        assert_eq!(&dense[b * 3..b * 3 + 3], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn output_is_sum_of_rows() {
        let t = DoubleHashTable::<f32>::new(20, 4, 5, 3, InitConfig::default()).unwrap();
        for id in 0..20 {
            let (a, b) = t.rows_of(id);
            let mut out = [0.0f32; 4];
            t.row_into(id, &mut out);
            for j in 0..4 {
                assert_eq!(out[j], t.table[a * 4 + j] + t.table[b * 4 + j]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut t = DoubleHashTable::<f32>::new(100, 8, 10, 9, InitConfig::default()).unwrap();
        t.freeze().unwrap();
        let ck = t.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), t.inference_bytes());
        let back = DoubleHashTable::from_checkpoint(&ck).unwrap();
        assert_eq!(back.lookup(&[5, 99]).unwrap(), t.lookup(&[5, 99]).unwrap());
        assert_eq!(back.to_checkpoint().unwrap().to_bytes(), ck.to_bytes());
    }
}
