//! Trainable compressed embedding layers.
//!
//! Every store maps global feature ids to width-`d` rows, accepts row
//! gradients from the downstream network, and reports its exact byte size.
//! Parameters are exposed as one flat vector so derivative checks can probe
//! any store through the same interface.

mod adaptive;
mod alpt;
mod compo;
mod double_hash;
mod full;
mod gather;
mod memcom;
mod mixed_dim;
mod pruned;
mod quantized;
mod robe;
mod tt_rec;

pub use adaptive::AdaptiveTable;
pub use alpt::AlptTable;
pub use compo::CompoTable;
pub use double_hash::DoubleHashTable;
pub use full::FullTable;
pub use gather::{GatherCodec, GatherStore};
pub use memcom::MemComTable;
pub use mixed_dim::{mixed_dim_bytes, mixed_dims, MixedDimTable};
pub use pruned::{cubic_density, PrunedTable};
pub use quantized::{
    dequantize, quantize_value, QuantBits, QuantRange, QuantizedTable, Rounding,
};
pub use robe::RobeArray;
pub use tt_rec::{tt_row_into, TtRecTable, TtShape};
pub(crate) use tt_rec::{shape_from_meta, shape_to_meta};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, tags, Checkpoint};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::optim::{Optimizer, SparseGrad};

/// Initialisation shared by all stores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub seed: u64,
    /// Embedding entries start uniform in `[-scale, scale]`.
    pub scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scale: 0.05,
        }
    }
}

impl InitConfig {
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        crate::rng::seeded(self.seed, stream)
    }
}

pub(crate) fn uniform_vec<T: Real>(rng: &mut impl Rng, len: usize, lo: f64, hi: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
        .collect()
}

/// The uniform store contract.
pub trait EmbeddingStore<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>>;

    fn num_features(&self) -> usize;

    fn dim(&self) -> usize;

    /// Writes the row for `id` into `out`. `id < n` and `out.len() == d`
    /// are the caller's responsibility; [`EmbeddingStore::lookup`] checks them.
    fn row_into(&self, id: usize, out: &mut [T]);

    fn lookup(&self, ids: &[u32]) -> Result<DenseMatrix<T>> {
        check_ids(ids, self.num_features())?;
        let mut out = DenseMatrix::zeros(ids.len(), self.dim());
        for (i, &id) in ids.iter().enumerate() {
            self.row_into(id as usize, out.row_mut(i));
        }
        Ok(out)
    }

    /// Gradient of a scalar loss with respect to the flat parameter vector,
    /// given the loss gradient with respect to each looked-up row.
    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>>;

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer)
        -> Result<()>;

    /// Converts to the inference representation; returns inference bytes.
    fn freeze(&mut self) -> Result<usize>;

    fn is_frozen(&self) -> bool;

    fn inference_bytes(&self) -> usize;

    /// Inference bytes plus optimizer moments and auxiliary training state.
    fn training_bytes(&self) -> usize;

    fn param_len(&self) -> usize;

    fn param(&self, i: usize) -> T;

    fn set_param(&mut self, i: usize, v: T);

    /// Smallest representable change of parameter `i` for discretised
    /// parameters; `None` for continuous ones.
    fn param_step(&self, _i: usize) -> Option<T> {
        None
    }

    /// Called by the trainer after each step of a scheduled stage with the
    /// stage progress in `[0, 1]`.
    fn on_schedule(&mut self, _progress: f64) {}

    /// Records a batch of ids before the forward pass; returns promotions.
    fn observe(&mut self, _ids: &[u32]) -> Result<usize> {
        Ok(0)
    }

    /// Serialises the inference representation.
    fn to_checkpoint(&self) -> Result<Checkpoint>;
}

pub fn check_ids(ids: &[u32], n: usize) -> Result<()> {
    for (position, &id) in ids.iter().enumerate() {
        if id as usize >= n {
            return Err(Error::IdOutOfRange {
                id: id as u64,
                n,
                position,
            });
        }
    }
    Ok(())
}

pub(crate) fn check_grads<T: Real>(ids: &[u32], grads: &DenseMatrix<T>, d: usize) -> Result<()> {
    if grads.rows() != ids.len() || grads.cols() != d {
        return Err(Error::invalid(format!(
            "gradient shape {}x{} does not match batch {} x dim {d}",
            grads.rows(),
            grads.cols(),
            ids.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_trainable(frozen: bool, name: &str) -> Result<()> {
    if frozen {
        return Err(Error::state(format!("{name} store is frozen")));
    }
    Ok(())
}

/// Adam training bytes for `params` trainable 32-bit parameters.
#[inline]
pub(crate) fn moment_bytes(params: usize) -> usize {
    params * crate::memory::ADAM_MOMENTS * crate::memory::F32_BYTES
}

pub(crate) fn write_values<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    for &v in values {
        v.write_le(out);
    }
}

pub(crate) fn read_values<T: Real>(r: &mut checkpoint::Reader<'_>, n: usize) -> Result<Vec<T>> {
    let bytes = r.take(n * T::WIDTH)?;
    Ok(bytes.chunks_exact(T::WIDTH).map(T::read_le).collect())
}

/// Restores any store from its checkpoint. Loaded stores are frozen.
pub fn load_store(ck: &Checkpoint) -> Result<Box<dyn EmbeddingStore<f32>>> {
    Ok(match ck.tag {
        tags::FULL => Box::new(FullTable::from_checkpoint(ck)?),
        tags::DOUBLE_HASH => Box::new(DoubleHashTable::from_checkpoint(ck)?),
        tags::COMPO => Box::new(CompoTable::from_checkpoint(ck)?),
        tags::MEMCOM => Box::new(MemComTable::from_checkpoint(ck)?),
        tags::ROBE => Box::new(RobeArray::from_checkpoint(ck)?),
        tags::TT_REC => Box::new(TtRecTable::from_checkpoint(ck)?),
        tags::QUANTIZED => Box::new(QuantizedTable::from_checkpoint(ck)?),
        tags::ALPT => Box::new(AlptTable::from_checkpoint(ck)?),
        tags::MIXED_DIM => Box::new(MixedDimTable::from_checkpoint(ck)?),
        tags::PRUNED => Box::new(PrunedTable::from_checkpoint(ck)?),
        tags::ADAPTIVE => Box::new(AdaptiveTable::from_checkpoint(ck)?),
        tags::CODEC_PQ | tags::CODEC_MAG_PQ | tags::CODEC_DEDUP => {
            Box::new(GatherStore::from_checkpoint(ck)?)
        }
        t => {
            return Err(Error::Format(format!(
                "tag {t} ({}) is not an embedding store",
                tags::name(t)
            )))
        }
    })
}

/// Applies gradients through `backward` and a plain float parameter slice.
pub(crate) fn sparse_adam_step<T: Real>(
    params: &mut [T],
    adam: &mut crate::optim::AdamState<T>,
    mut grad: SparseGrad<T>,
    opt: &Optimizer,
) {
    adam.apply_sparse(params, &mut grad, opt);
}
