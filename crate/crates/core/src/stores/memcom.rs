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

/// Hashed shared table plus a per-feature scalar scale and bias:
/// `e(x) = table[h(x)] * scale[x] + bias[x]`.
#[derive(Debug, Clone)]
pub struct MemComTable<T = f32> {
    n: usize,
    dim: usize,
    buckets: usize,
    hashes: HashFamily,
    /// `[table (m x d) | scale (n) | bias (n)]`.
    params: Vec<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> MemComTable<T> {
    pub fn new(n: usize, dim: usize, buckets: usize, hash_seed: u64, init: InitConfig) -> Result<Self> {
        if buckets == 0 {
            return Err(Error::invalid("memcom needs at least one bucket"));
        }
        let mut rng = init.rng(streams::INIT);
        let mut params: Vec<T> = uniform_vec(&mut rng, buckets * dim, -init.scale, init.scale);
        params.extend(std::iter::repeat_n(T::one(), n));
        params.extend(std::iter::repeat_n(T::zero(), n));
        Ok(Self::from_params(n, dim, buckets, hash_seed, params))
    }

    fn from_params(n: usize, dim: usize, buckets: usize, seed: u64, params: Vec<T>) -> Self {
        Self {
            n,
            dim,
            buckets,
            hashes: HashFamily::new(seed, 1),
            adam: AdamState::new(params.len()),
            params,
            frozen: false,
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    #[inline]
    fn bucket(&self, id: usize) -> usize {
        self.hashes.bucket(id as u64, 0, self.buckets as u64) as usize
    }

    #[inline]
    fn scale_index(&self, id: usize) -> usize {
        self.buckets * self.dim + id
    }

    #[inline]
    fn bias_index(&self, id: usize) -> usize {
        self.buckets * self.dim + self.n + id
    }
}

impl<T: Real> EmbeddingStore<T> for MemComTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "memcom"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let b = self.bucket(id);
        let d = self.dim;
        let s = self.params[self.scale_index(id)];
        let c = self.params[self.bias_index(id)];
        for (o, &x) in out.iter_mut().zip(&self.params[b * d..(b + 1) * d]) {
            *o = x * s + c;
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let mut g = SparseGrad::with_capacity(ids.len() * (d + 2));
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            let b = self.bucket(id);
            let s = self.params[self.scale_index(id)];
            let mut g_scale = T::zero();
            let mut g_bias = T::zero();
            for (j, &v) in grads.row(i).iter().enumerate() {
                g.push(b * d + j, v * s);
                g_scale += v * self.params[b * d + j];
                g_bias += v;
            }
            g.push(self.scale_index(id), g_scale);
            g.push(self.bias_index(id), g_bias);
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
        memory::dense_bytes(self.buckets, self.dim, memory::F32_BYTES) + 2 * self.n * memory::F32_BYTES
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
        let mut ck = Checkpoint::new(tags::MEMCOM);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.buckets as u64,
            self.hashes.seed(),
        ];
        write_values(&mut ck.payload, &self.params);
        Ok(ck)
    }
}

impl MemComTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::MEMCOM)?;
        let (n, dim, buckets, seed) = (
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_at(3)?,
        );
        let mut r = Reader::new(&ck.payload);
        let params = read_values(&mut r, buckets * dim + 2 * n)?;
        r.finish()?;
        let mut t = Self::from_params(n, dim, buckets, seed, params);
        t.freeze()?;
        Ok(t)
    }
}
