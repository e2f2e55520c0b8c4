//! A small DLRM-style CTR model with hand-written gradients.
//!
//! Dense features pass through one affine layer and a ReLU to width `d`.
//! That vector and the `k` field embeddings interact through all pairwise
//! dot products; the bottom output and the dots feed a two-layer top network
//! with a scalar logit.

mod gradcheck;
mod train;

pub use gradcheck::{check_gradients, GradCheck};
pub use train::{
    build_store, evaluate, train, StageReport, TrainConfig, TrainReport, Trained,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::optim::{AdamState, Optimizer};
use crate::rng::{seeded, streams};
use crate::stores::EmbeddingStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DlrmShape {
    pub fields: usize,
    pub dim: usize,
    pub dense_width: usize,
    pub hidden: usize,
}

impl DlrmShape {
    /// Pairwise dot products among the bottom output and `k` embeddings.
    pub fn num_dots(&self) -> usize {
        (self.fields + 1) * self.fields / 2
    }

    pub fn top_width(&self) -> usize {
        self.dim + self.num_dots()
    }

    fn layout(&self) -> Layout {
        let bottom_w = 0;
        let bottom_b = bottom_w + self.dim * self.dense_width;
        let top_w = bottom_b + self.dim;
        let top_b = top_w + self.hidden * self.top_width();
        let out_w = top_b + self.hidden;
        let out_b = out_w + self.hidden;
        Layout {
            bottom_w,
            bottom_b,
            top_w,
            top_b,
            out_w,
            out_b,
            len: out_b + 1,
        }
    }
}

/// Offsets of each block in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    bottom_w: usize,
    bottom_b: usize,
    top_w: usize,
    top_b: usize,
    out_w: usize,
    out_b: usize,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct DlrmLite<T = f32> {
    shape: DlrmShape,
    layout: Layout,
    params: Vec<T>,
    adam: AdamState<T>,
    /// Bumped on every parameter change so stale caches are detected.
    version: u64,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub probs: Vec<T>,
    pub logits: Vec<T>,
    /// `batch * k` embedding rows.
    rows: DenseMatrix<T>,
    dense: DenseMatrix<T>,
    bottom_pre: DenseMatrix<T>,
    top_in: DenseMatrix<T>,
    hidden_pre: DenseMatrix<T>,
    version: u64,
}

/// Gradients of the mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    /// One row per looked-up embedding, in batch order.
    pub rows: DenseMatrix<T>,
}

#[inline]
fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
/// evaluated without forming the probabilities.
pub fn bce_from_logits<T: Real>(logits: &[T], labels: &[T]) -> T {
    let n = T::from_f64_lossy(logits.len().max(1) as f64);
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p())
        .sum::<T>()
        / n
}

impl<T: Real> DlrmLite<T> {
    /// Xavier-uniform weights, zero biases.
    pub fn new(shape: DlrmShape, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(shape)?;
        let mut rng = seeded(seed, streams::MODEL);
        let l = m.layout;
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, p: &mut [T]| {
            let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
            for v in &mut p[range] {
                *v = T::from_f64_lossy(rng.random_range(-bound..bound));
            }
        };
        let s = shape;
        fill(l.bottom_w..l.bottom_b, s.dense_width, s.dim, &mut m.params);
        fill(l.top_w..l.top_b, s.top_width(), s.hidden, &mut m.params);
        fill(l.out_w..l.out_b, s.hidden, 1, &mut m.params);
        Ok(m)
    }

    pub fn zeros(shape: DlrmShape) -> Result<Self> {
        if shape.fields == 0 || shape.dim == 0 || shape.hidden == 0 {
            return Err(Error::invalid("model needs at least one field, width 1 and one hidden unit"));
        }
        let layout = shape.layout();
        Ok(Self {
            shape,
            layout,
            params: vec![T::zero(); layout.len],
            adam: AdamState::new(layout.len),
            version: 0,
        })
    }

    pub fn shape(&self) -> DlrmShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn set_param(&mut self, i: usize, v: T) {
        self.params[i] = v;
        self.version += 1;
    }

    /// Parameter bytes at 32-bit precision.
    pub fn param_bytes(&self) -> usize {
        self.params.len() * crate::memory::F32_BYTES
    }

    pub fn forward(&self, store: &dyn EmbeddingStore<T>, batch: &Batch<T>) -> Result<Forward<T>> {
        if store.dim() != self.shape.dim {
            return Err(Error::invalid(format!(
                "store width {} does not match model width {}",
                store.dim(),
                self.shape.dim
            )));
        }
        if batch.ids.len() != batch.len() * self.shape.fields {
            return Err(Error::invalid(format!(
                "batch carries {} ids for {} samples of {} fields",
                batch.ids.len(),
                batch.len(),
                self.shape.fields
            )));
        }
        let rows = store.lookup(&batch.ids)?;
        self.forward_rows(rows, &batch.dense)
    }

    /// Forward pass from already looked-up embedding rows.
    pub fn forward_rows(&self, rows: DenseMatrix<T>, dense: &DenseMatrix<T>) -> Result<Forward<T>> {
        let s = self.shape;
        let l = self.layout;
        let b = dense.rows();
        if dense.cols() != s.dense_width || rows.rows() != b * s.fields || rows.cols() != s.dim {
            return Err(Error::invalid("embedding rows or dense features have the wrong shape"));
        }
        let p = &self.params;
        let d = s.dim;
        let tw = s.top_width();
        let mut bottom_pre = DenseMatrix::zeros(b, d);
        let mut top_in = DenseMatrix::zeros(b, tw);
        let mut hidden_pre = DenseMatrix::zeros(b, s.hidden);
        let mut logits = Vec::with_capacity(b);
        let mut z0 = vec![T::zero(); d];
        for r in 0..b {
            let x = dense.row(r);
            for a in 0..d {
                let w = &p[l.bottom_w + a * s.dense_width..l.bottom_w + (a + 1) * s.dense_width];
                let pre = p[l.bottom_b + a] + w.iter().zip(x).map(|(&u, &v)| u * v).sum::<T>();
                bottom_pre.set(r, a, pre);
                z0[a] = relu(pre);
            }
            let mut vectors: Vec<&[T]> = Vec::with_capacity(s.fields + 1);
            vectors.push(&z0);
            for f in 0..s.fields {
                vectors.push(rows.row(r * s.fields + f));
            }
            let t = top_in.row_mut(r);
            t[..d].copy_from_slice(&z0);
            let mut q = d;
            for i in 0..vectors.len() {
                for j in i + 1..vectors.len() {
                    t[q] = vectors[i].iter().zip(vectors[j]).map(|(&u, &v)| u * v).sum();
                    q += 1;
                }
            }
            let mut logit = p[l.out_b];
            for u in 0..s.hidden {
                let w = &p[l.top_w + u * tw..l.top_w + (u + 1) * tw];
                let pre = p[l.top_b + u] + w.iter().zip(top_in.row(r)).map(|(&a, &c)| a * c).sum::<T>();
                hidden_pre.set(r, u, pre);
                logit += p[l.out_w + u] * relu(pre);
            }
            logits.push(logit);
        }
        Ok(Forward {
            probs: logits.iter().map(|&z| sigmoid(z)).collect(),
            logits,
            rows,
            dense: dense.clone(),
            bottom_pre,
            top_in,
            hidden_pre,
            version: self.version,
        })
    }

    /// Exact gradients of the mean binary cross-entropy.
    pub fn backward(&self, cache: &Forward<T>, labels: &[T]) -> Result<Gradients<T>> {
        if cache.version != self.version {
            return Err(Error::state("forward cache is stale: parameters changed since it was built"));
        }
        let b = cache.logits.len();
        if labels.len() != b {
            return Err(Error::invalid(format!("{} labels for a batch of {b}", labels.len())));
        }
        let s = self.shape;
        let l = self.layout;
        let p = &self.params;
        let d = s.dim;
        let tw = s.top_width();
        let inv_b = T::one() / T::from_f64_lossy(b.max(1) as f64);
        let mut g = vec![T::zero(); l.len];
        let mut rows = DenseMatrix::zeros(b * s.fields, d);
        let mut d_top = vec![T::zero(); tw];
        let mut d_vec = vec![vec![T::zero(); d]; s.fields + 1];
        let mut z0 = vec![T::zero(); d];
        for r in 0..b {
            let d_logit = (cache.probs[r] - labels[r]) * inv_b;
            g[l.out_b] += d_logit;
            d_top.fill(T::zero());
            let t = cache.top_in.row(r);
            for u in 0..s.hidden {
                let pre = cache.hidden_pre.get(r, u);
                g[l.out_w + u] += d_logit * relu(pre);
                if pre <= T::zero() {
                    continue;
                }
                let dh = d_logit * p[l.out_w + u];
                g[l.top_b + u] += dh;
                let w = &p[l.top_w + u * tw..l.top_w + (u + 1) * tw];
                let gw = &mut g[l.top_w + u * tw..l.top_w + (u + 1) * tw];
                for c in 0..tw {
                    gw[c] += dh * t[c];
                    d_top[c] += dh * w[c];
                }
            }
            for (a, z) in z0.iter_mut().enumerate() {
                *z = relu(cache.bottom_pre.get(r, a));
            }
            for v in &mut d_vec {
                v.fill(T::zero());
            }
            d_vec[0].copy_from_slice(&d_top[..d]);
            let vector = |i: usize| -> &[T] {
                if i == 0 {
                    &z0
                } else {
                    cache.rows.row(r * s.fields + i - 1)
                }
            };
            let mut q = d;
            for i in 0..=s.fields {
                for j in i + 1..=s.fields {
                    let gq = d_top[q];
                    q += 1;
                    if gq == T::zero() {
                        continue;
                    }
                    let (vi, vj) = (vector(i), vector(j));
                    for a in 0..d {
                        d_vec[i][a] += gq * vj[a];
                        d_vec[j][a] += gq * vi[a];
                    }
                }
            }
            let x = cache.dense.row(r);
            for a in 0..d {
                if cache.bottom_pre.get(r, a) <= T::zero() {
                    continue;
                }
                let dp = d_vec[0][a];
                g[l.bottom_b + a] += dp;
                let gw = &mut g[l.bottom_w + a * s.dense_width..l.bottom_w + (a + 1) * s.dense_width];
                for (gv, &xv) in gw.iter_mut().zip(x) {
                    *gv += dp * xv;
                }
            }
            for f in 0..s.fields {
                rows.row_mut(r * s.fields + f).copy_from_slice(&d_vec[f + 1]);
            }
        }
        Ok(Gradients { params: g, rows })
    }

    /// One optimizer step on the network parameters.
    pub fn step(&mut self, grads: &[T], opt: &Optimizer) {
        self.adam.apply_dense(&mut self.params, grads, opt);
        self.version += 1;
    }

    /// Mean loss of the current parameters on a batch.
    pub fn loss(&self, store: &dyn EmbeddingStore<T>, batch: &Batch<T>) -> Result<T> {
        let fwd = self.forward(store, batch)?;
        Ok(bce_from_logits(&fwd.logits, &batch.labels))
    }

    pub fn predict(&self, store: &dyn EmbeddingStore<T>, batch: &Batch<T>) -> Result<Vec<T>> {
        Ok(self.forward(store, batch)?.probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stores::{FullTable, InitConfig};

    fn batch(ids: Vec<u32>, dense: Vec<f64>, width: usize, labels: Vec<f64>) -> Batch<f64> {
        let rows = labels.len();
        Batch {
            ids,
            dense: DenseMatrix::from_vec(rows, width, dense).unwrap(),
            labels,
        }
    }

    #[test]
    fn zero_parameters_predict_one_half() {
        let shape = DlrmShape { fields: 3, dim: 4, dense_width: 2, hidden: 5 };
        let m = DlrmLite::<f64>::zeros(shape).unwrap();
        let store = FullTable::<f64>::new(10, 4, InitConfig::default());
        let b = batch(vec![0, 4, 9, 1, 2, 3], vec![0.3, -1.0, 2.0, 0.5], 2, vec![1.0, 0.0]);
        let f = m.forward(&store, &b).unwrap();
        assert_eq!(f.probs, vec![0.5, 0.5]);
        assert_eq!(shape.num_dots(), 6);
    }

    #[test]
    fn hand_computed_single_sample() {
        // One field, d = 2, one dense feature, one hidden unit.
        let shape = DlrmShape { fields: 1, dim: 2, dense_width: 1, hidden: 1 };
        let mut m = DlrmLite::<f64>::zeros(shape).unwrap();
        // [Wb(2x1), bb(2), W1(1x3), b1, w2, b2]
        let theta = [0.5, -1.0, 0.1, 0.2, 1.0, 2.0, 3.0, -0.5, 1.5, 0.25];
        for (i, &v) in theta.iter().enumerate() {
            m.set_param(i, v);
        }
        let store = FullTable::from_matrix(DenseMatrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap());
        let b = batch(vec![0], vec![2.0], 1, vec![1.0]);
        let f = m.forward(&store, &b).unwrap();
        // z0 = relu([0.5*2+0.1, -1*2+0.2]) = [1.1, 0]
        // dot(z0, e) = 1.1*0.3 = 0.33; t = [1.1, 0, 0.33]
        // h = relu(1.1 + 0 + 0.99 - 0.5) = 1.59; logit = 1.5*1.59 + 0.25 = 2.635
        assert!((f.logits[0] - 2.635).abs() < 1e-12);
        assert!((f.probs[0] - 1.0 / (1.0 + (-2.635f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_is_prediction_minus_label() {
        let shape = DlrmShape { fields: 1, dim: 2, dense_width: 1, hidden: 1 };
        let m = DlrmLite::<f64>::zeros(shape).unwrap();
        let store = FullTable::<f64>::new(3, 2, InitConfig::default());
        let b = batch(vec![1], vec![1.0], 1, vec![1.0]);
        let f = m.forward(&store, &b).unwrap();
        let g = m.backward(&f, &b.labels).unwrap();
        assert_eq!(g.params[m.layout.out_b], -0.5);
    }

    #[test]
    fn balanced_symmetric_batch_is_stationary() {
        let shape = DlrmShape { fields: 2, dim: 3, dense_width: 2, hidden: 4 };
        let mut m = DlrmLite::<f64>::new(shape, 5).unwrap();
        let store = FullTable::<f64>::new(6, 3, InitConfig { seed: 2, scale: 0.5 });
        // A zero output layer predicts exactly 0.5; the two samples differ
        // only in their label, so every per-sample term cancels.
        for i in m.layout.out_w..m.layout.len {
            m.set_param(i, 0.0);
        }
        let b = batch(vec![1, 4, 1, 4], vec![0.3, -0.7, 0.3, -0.7], 2, vec![1.0, 0.0]);
        let f = m.forward(&store, &b).unwrap();
        let g = m.backward(&f, &b.labels).unwrap();
        assert!(g.params.iter().all(|&v| v.abs() < 1e-15));
        assert!(g.rows.values().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let shape = DlrmShape { fields: 1, dim: 2, dense_width: 1, hidden: 2 };
        let mut m = DlrmLite::<f64>::new(shape, 1).unwrap();
        let store = FullTable::<f64>::new(3, 2, InitConfig::default());
        let b = batch(vec![2], vec![1.0], 1, vec![0.0]);
        let f = m.forward(&store, &b).unwrap();
        m.set_param(0, 0.3);
        assert!(matches!(m.backward(&f, &b.labels), Err(Error::State(_))));
    }

    #[test]
    fn loss_is_zero_only_at_exact_labels() {
        assert!(bce_from_logits(&[40.0f64, -40.0], &[1.0, 0.0]) < 1e-16);
        assert!(bce_from_logits(&[0.0f64], &[1.0]) > 0.69);
        assert!(bce_from_logits(&[-3.0f64, 2.0], &[1.0, 1.0]) > 0.0);
    }

    #[test]
    fn batch_order_is_preserved() {
        let shape = DlrmShape { fields: 1, dim: 2, dense_width: 1, hidden: 3 };
        let m = DlrmLite::<f64>::new(shape, 9).unwrap();
        let store = FullTable::<f64>::new(4, 2, InitConfig { seed: 1, scale: 1.0 });
        let both = batch(vec![0, 3], vec![0.5, -0.5], 1, vec![0.0, 1.0]);
        let first = batch(vec![0], vec![0.5], 1, vec![0.0]);
        let second = batch(vec![3], vec![-0.5], 1, vec![1.0]);
        let p = m.predict(&store, &both).unwrap();
        assert_eq!(p[0], m.predict(&store, &first).unwrap()[0]);
        assert_eq!(p[1], m.predict(&store, &second).unwrap()[0]);
    }
}
