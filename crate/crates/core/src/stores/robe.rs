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

/// One shared 1-D array of length `Z`. Feature `x` concatenates `d / c`
/// chunks of `c` consecutive values read at hashed offsets, wrapping
/// modulo `Z`.
#[derive(Debug, Clone)]
pub struct RobeArray<T = f32> {
    n: usize,
    dim: usize,
    chunk: usize,
    hashes: HashFamily,
    array: Vec<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> RobeArray<T> {
    pub fn new(
        n: usize,
        dim: usize,
        size: usize,
        chunk: usize,
        hash_seed: u64,
        init: InitConfig,
    ) -> Result<Self> {
        if chunk == 0 || dim % chunk != 0 {
            return Err(Error::invalid(format!(
                "chunk size {chunk} must divide the embedding width {dim}"
            )));
        }
        if size == 0 {
            return Err(Error::invalid("ROBE array must be non-empty"));
        }
        let mut rng = init.rng(streams::INIT);
        let array = uniform_vec(&mut rng, size, -init.scale, init.scale);
        Ok(Self::from_array(n, dim, chunk, hash_seed, array))
    }

    fn from_array(n: usize, dim: usize, chunk: usize, seed: u64, array: Vec<T>) -> Self {
        Self {
            n,
            dim,
            chunk,
            hashes: HashFamily::new(seed, 1),
            adam: AdamState::new(array.len()),
            array,
            frozen: false,
        }
    }

    pub fn size(&self) -> usize {
        self.array.len()
    }

    pub fn chunk(&self) -> usize {
        self.chunk
    }

    /// Start offset of chunk `j` of feature `id`.
    #[inline]
    pub fn offset(&self, id: usize, j: usize) -> usize {
        let chunks = (self.dim / self.chunk) as u64;
        self.hashes
            .bucket(id as u64 * chunks + j as u64, 0, self.array.len() as u64) as usize
    }

    #[inline]
    fn position(&self, id: usize, k: usize) -> usize {
        let j = k / self.chunk;
        (self.offset(id, j) + k % self.chunk) % self.array.len()
    }
}

impl<T: Real> EmbeddingStore<T> for RobeArray<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "robe"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let z = self.array.len();
        for (j, chunk) in out.chunks_mut(self.chunk).enumerate() {
            let start = self.offset(id, j);
            for (t, o) in chunk.iter_mut().enumerate() {
                *o = self.array[(start + t) % z];
            }
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let mut g = SparseGrad::with_capacity(ids.len() * self.dim);
        for (i, &id) in ids.iter().enumerate() {
            for (k, &v) in grads.row(i).iter().enumerate() {
                g.push(self.position(id as usize, k), v);
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let g = self.backward(ids, grads)?;
        sparse_adam_step(&mut self.array, &mut self.adam, g, opt);
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
        self.array.len() * memory::F32_BYTES
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.array.len())
    }

    fn param_len(&self) -> usize {
        self.array.len()
    }

    fn param(&self, i: usize) -> T {
        self.array[i]
    }

    fn set_param(&mut self, i: usize, v: T) {
        self.array[i] = v;
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::ROBE);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.array.len() as u64,
            self.chunk as u64,
            self.hashes.seed(),
        ];
        write_values(&mut ck.payload, &self.array);
        Ok(ck)
    }
}

impl RobeArray<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::ROBE)?;
        let (n, dim, size, chunk, seed) = (
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_usize(3)?,
            ck.meta_at(4)?,
        );
        let mut r = Reader::new(&ck.payload);
        let array = read_values(&mut r, size)?;
        r.finish()?;
        let mut t = Self::from_array(n, dim, chunk, seed, array);
        t.freeze()?;
        Ok(t)
    }
}
