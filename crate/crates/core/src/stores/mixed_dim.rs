use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;
use crate::space::FeatureSpace;

use super::{
    check_grads, check_ids, check_trainable, moment_bytes, read_values, sparse_adam_step,
    uniform_vec, write_values, EmbeddingStore, InitConfig,
};

/// Per-field reduced widths `clamp(round(scale * (1/n_f)^alpha), 1, d)`.
pub fn mixed_dims(cardinalities: &[usize], dim: usize, scale: f64, alpha: f64) -> Vec<usize> {
    cardinalities
        .iter()
        .map(|&n| {
            let p = 1.0 / n.max(1) as f64;
            let raw = (scale * p.powf(alpha)).round();
            if raw.is_finite() {
                (raw as i64).clamp(1, dim as i64) as usize
            } else {
                dim
            }
        })
        .collect()
}

/// Bytes of a mixed-dimension layout: tables plus projections.
pub fn mixed_dim_bytes(cardinalities: &[usize], dims: &[usize], dim: usize) -> usize {
    cardinalities
        .iter()
        .zip(dims)
        .map(|(&n, &k)| (n * k + k * dim) * memory::F32_BYTES)
        .sum()
}

/// Field-wise tables of reduced width, each followed by a learned projection
/// back to the common width.
#[derive(Debug, Clone)]
pub struct MixedDimTable<T = f32> {
    space: FeatureSpace,
    dim: usize,
    dims: Vec<usize>,
    table_offsets: Vec<usize>,
    proj_offsets: Vec<usize>,
    params: Vec<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> MixedDimTable<T> {
    pub fn new(space: FeatureSpace, dim: usize, dims: Vec<usize>, init: InitConfig) -> Result<Self> {
        let mut t = Self::zeroed(space, dim, dims)?;
        let mut rng = init.rng(streams::INIT);
        for f in 0..t.dims.len() {
            let k = t.dims[f];
            let n_f = t.space.cardinalities()[f];
            let rows: Vec<T> = uniform_vec(&mut rng, n_f * k, -init.scale, init.scale);
            t.params[t.table_offsets[f]..t.table_offsets[f] + n_f * k].copy_from_slice(&rows);
            // Keeps output variance equal to the table entry variance.
            let b = (3.0 / k as f64).sqrt();
            let proj: Vec<T> = uniform_vec(&mut rng, k * dim, -b, b);
            t.params[t.proj_offsets[f]..t.proj_offsets[f] + k * dim].copy_from_slice(&proj);
        }
        Ok(t)
    }

    fn zeroed(space: FeatureSpace, dim: usize, dims: Vec<usize>) -> Result<Self> {
        if dims.len() != space.num_fields() {
            return Err(Error::invalid("one reduced width per field is required"));
        }
        if dims.iter().any(|&k| k == 0 || k > dim) {
            return Err(Error::invalid(format!("reduced widths must lie in [1, {dim}]")));
        }
        let mut table_offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for (&n_f, &k) in space.cardinalities().iter().zip(&dims) {
            table_offsets.push(off);
            off += n_f * k;
        }
        let mut proj_offsets = Vec::with_capacity(dims.len());
        for &k in &dims {
            proj_offsets.push(off);
            off += k * dim;
        }
        Ok(Self {
            space,
            dim,
            dims,
            table_offsets,
            proj_offsets,
            adam: AdamState::new(off),
            params: vec![T::zero(); off],
            frozen: false,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    #[inline]
    fn locate(&self, id: usize) -> (usize, usize, usize) {
        let f = self.space.offsets().partition_point(|&o| o <= id) - 1;
        let local = id - self.space.offset(f);
        (f, self.dims[f], self.table_offsets[f] + local * self.dims[f])
    }
}

impl<T: Real> EmbeddingStore<T> for MixedDimTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "mde"
    }

    fn num_features(&self) -> usize {
        self.space.num_features()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let (f, k, start) = self.locate(id);
        let d = self.dim;
        let proj = &self.params[self.proj_offsets[f]..self.proj_offsets[f] + k * d];
        out.fill(T::zero());
        for (a, &x) in self.params[start..start + k].iter().enumerate() {
            for (o, &p) in out.iter_mut().zip(&proj[a * d..(a + 1) * d]) {
                *o += x * p;
            }
        }
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.num_features())?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let mut g = SparseGrad::with_capacity(ids.len() * d * 2);
        for (i, &id) in ids.iter().enumerate() {
            let (f, k, start) = self.locate(id as usize);
            let po = self.proj_offsets[f];
            let gy = grads.row(i);
            for a in 0..k {
                let prow = &self.params[po + a * d..po + (a + 1) * d];
                let ga: T = gy.iter().zip(prow).map(|(&u, &p)| u * p).sum();
                g.push(start + a, ga);
                let x = self.params[start + a];
                for (j, &u) in gy.iter().enumerate() {
                    g.push(po + a * d + j, x * u);
                }
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
        mixed_dim_bytes(self.space.cardinalities(), &self.dims, self.dim)
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
        let mut ck = Checkpoint::new(tags::MIXED_DIM);
        let k = self.dims.len();
        ck.meta = vec![self.dim as u64, k as u64];
        ck.meta.extend(self.space.cardinalities().iter().map(|&c| c as u64));
        ck.meta.extend(self.dims.iter().map(|&c| c as u64));
        write_values(&mut ck.payload, &self.params);
        Ok(ck)
    }
}

impl MixedDimTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::MIXED_DIM)?;
        let dim = ck.meta_usize(0)?;
        let k = ck.meta_usize(1)?;
        let cards = (2..2 + k).map(|i| ck.meta_usize(i)).collect::<Result<Vec<_>>>()?;
        let dims = (2 + k..2 + 2 * k).map(|i| ck.meta_usize(i)).collect::<Result<Vec<_>>>()?;
        let mut t = Self::zeroed(FeatureSpace::new(cards)?, dim, dims)?;
        let mut r = Reader::new(&ck.payload);
        t.params = read_values(&mut r, t.params.len())?;
        r.finish()?;
        t.freeze()?;
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_follow_power_law_and_clamp() {
        let dims = mixed_dims(&[1, 10, 100, 10_000], 16, 64.0, 0.5);
        assert_eq!(dims, vec![16, 16, 6, 1]);
    }

    #[test]
    fn output_is_row_times_projection() {
        let space = FeatureSpace::new(vec![2, 3]).unwrap();
        let mut t = MixedDimTable::<f64>::new(space, 3, vec![1, 2], InitConfig::default()).unwrap();
        for i in 0..t.param_len() {
            t.set_param(i, (i as f64) * 0.1);
        }
        // Feature 3 is field 1, local row 1: table entries at 2 + 1*2.
        let row = t.lookup(&[3]).unwrap();
        let x = [0.4, 0.5];
        let po = t.proj_offsets[1];
        for j in 0..3 {
            let want = x[0] * (po + j) as f64 * 0.1 + x[1] * (po + 3 + j) as f64 * 0.1;
            assert!((row.get(0, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bytes_include_projections() {
        let space = FeatureSpace::new(vec![100, 1000]).unwrap();
        let mut t = MixedDimTable::<f32>::new(space, 16, vec![4, 1], InitConfig::default()).unwrap();
        assert_eq!(t.freeze().unwrap(), (400 + 64 + 1000 + 16) * 4);
        let ck = t.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), t.inference_bytes());
        let back = MixedDimTable::from_checkpoint(&ck).unwrap();
        assert_eq!(back.lookup(&[0, 1099]).unwrap(), t.lookup(&[0, 1099]).unwrap());
    }
}
