use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::posttrain::{load_codec, Codec};

use super::{check_grads, check_ids, check_trainable, moment_bytes, EmbeddingStore};

/// A codec whose rows are copies of slices of one shared parameter array
/// (codebooks, representative blocks). Such codecs can keep training after
/// compression by updating the shared array.
pub trait GatherCodec: Codec {
    /// Copy of the shared parameter array.
    fn atoms(&self) -> Vec<f32>;

    fn set_atoms(&mut self, atoms: &[f32]);

    /// Appends `(offset in row, length, offset in atoms)` for `row`.
    fn segments(&self, row: usize, out: &mut Vec<(u32, u32, u32)>);

    fn clone_gather(&self) -> Box<dyn GatherCodec>;
}

/// Embedding store that trains the shared atoms of a gather codec.
#[derive(Debug)]
pub struct GatherStore<T = f32> {
    codec: Box<dyn GatherCodec>,
    atoms: Vec<T>,
    seg_start: Vec<u32>,
    segs: Vec<(u32, u32, u32)>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> Clone for GatherStore<T> {
    fn clone(&self) -> Self {
        Self {
            codec: self.codec.clone_gather(),
            atoms: self.atoms.clone(),
            seg_start: self.seg_start.clone(),
            segs: self.segs.clone(),
            adam: self.adam.clone(),
            frozen: self.frozen,
        }
    }
}

impl<T: Real> GatherStore<T> {
    pub fn new(codec: Box<dyn GatherCodec>) -> Self {
        let atoms: Vec<T> = codec.atoms().iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
        let mut seg_start = Vec::with_capacity(codec.rows() + 1);
        let mut segs = Vec::new();
        seg_start.push(0);
        for r in 0..codec.rows() {
            codec.segments(r, &mut segs);
            seg_start.push(segs.len() as u32);
        }
        Self {
            adam: AdamState::new(atoms.len()),
            atoms,
            codec,
            seg_start,
            segs,
            frozen: false,
        }
    }

    pub fn codec(&self) -> &dyn GatherCodec {
        self.codec.as_ref()
    }

    fn sync_codec(&mut self) {
        let atoms: Vec<f32> = self.atoms.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect();
        self.codec.set_atoms(&atoms);
    }

    #[inline]
    fn row_segments(&self, row: usize) -> &[(u32, u32, u32)] {
        &self.segs[self.seg_start[row] as usize..self.seg_start[row + 1] as usize]
    }
}

impl<T: Real> EmbeddingStore<T> for GatherStore<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        self.codec.name()
    }

    fn num_features(&self) -> usize {
        self.codec.rows()
    }

    fn dim(&self) -> usize {
        self.codec.dim()
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        for &(dst, len, src) in self.row_segments(id) {
            let (dst, len, src) = (dst as usize, len as usize, src as usize);
            out[dst..dst + len].copy_from_slice(&self.atoms[src..src + len]);
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.num_features())?;
        check_grads(ids, grads, self.dim())?;
        let mut g = SparseGrad::with_capacity(ids.len() * self.dim());
        for (i, &id) in ids.iter().enumerate() {
            let gy = grads.row(i);
            for &(dst, len, src) in self.row_segments(id as usize) {
                let (dst, len) = (dst as usize, len as usize);
                g.extend_dense(src as usize, &gy[dst..dst + len]);
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let mut g = self.backward(ids, grads)?;
        self.adam.apply_sparse(&mut self.atoms, &mut g, opt);
        Ok(())
    }

    fn freeze(&mut self) -> Result<usize> {
        if !self.frozen {
            self.sync_codec();
            self.adam = AdamState::new(0);
            self.frozen = true;
        }
        Ok(self.inference_bytes())
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn inference_bytes(&self) -> usize {
        self.codec.bytes()
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.atoms.len())
    }

    fn param_len(&self) -> usize {
        self.atoms.len()
    }

    fn param(&self, i: usize) -> T {
        self.atoms[i]
    }

    fn set_param(&mut self, i: usize, v: T) {
        self.atoms[i] = v;
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut codec = self.codec.clone_gather();
        let atoms: Vec<f32> = self.atoms.iter().map(|v| v.to_f32().unwrap_or(0.0)).collect();
        codec.set_atoms(&atoms);
        codec.to_checkpoint()
    }
}

impl GatherStore<f32> {
    /// Loads a gather codec checkpoint as a frozen store.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let codec = load_codec(ck)?;
        let gather = codec
            .into_gather()
            .ok_or_else(|| Error::Format(format!("tag {} is not a gather codec", ck.tag)))?;
        let mut s = Self::new(gather);
        s.freeze()?;
        Ok(s)
    }
}
