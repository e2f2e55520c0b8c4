use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;

use super::quantized::{quantize_value, QuantBits, Rounding};
use super::{check_grads, check_ids, check_trainable, moment_bytes, EmbeddingStore, InitConfig};

const MIN_SCALE: f64 = 1e-8;

/// Scales are checkpointed as `f32`; the `f32` path keeps them exactly
/// representable so reloads are bit-identical.
#[inline]
pub(crate) fn storable<T: Real>(v: f64) -> f64 {
    if T::WIDTH == 4 {
        v as f32 as f64
    } else {
        v
    }
}

/// Low-precision table with one learnable step size per row:
/// `e(x)_j = q_xj * s_x`.
///
/// Flat parameters are the `n * d` dequantised entries followed by the `n`
/// scales.
#[derive(Debug, Clone)]
pub struct AlptTable<T = f32> {
    n: usize,
    dim: usize,
    bits: QuantBits,
    codes: Vec<i16>,
    scales: Vec<f64>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    frozen: bool,
}

impl<T: Real> AlptTable<T> {
    /// Scales start at `clip / qmax` so the initial codes cover `[-clip, clip]`.
    pub fn new(n: usize, dim: usize, bits: QuantBits, clip: f64, init: InitConfig) -> Result<Self> {
        if !(clip > 0.0) {
            return Err(Error::invalid("ALPT clip must be positive"));
        }
        let s0 = storable::<T>(clip / bits.qmax() as f64);
        let mut t = Self::from_parts(n, dim, bits, vec![0; n * dim], vec![s0; n], init.seed);
        let mut init_rng = init.rng(streams::INIT);
        for i in 0..n * dim {
            let v = init_rng.random_range(-init.scale..init.scale);
            t.codes[i] = quantize_value(v, s0, 0.0, bits.qmax(), Rounding::Nearest, &mut init_rng) as i16;
        }
        Ok(t)
    }

    fn from_parts(n: usize, dim: usize, bits: QuantBits, codes: Vec<i16>, scales: Vec<f64>, seed: u64) -> Self {
        Self {
            n,
            dim,
            bits,
            codes,
            scales,
            adam: AdamState::new(n * dim + n),
            rng: crate::rng::seeded(seed, streams::ROUNDING),
            frozen: false,
        }
    }

    pub fn bits(&self) -> QuantBits {
        self.bits
    }

    pub fn scale(&self, row: usize) -> f64 {
        self.scales[row]
    }

    #[inline]
    fn scale_index(&self, row: usize) -> usize {
        self.n * self.dim + row
    }
}

impl<T: Real> EmbeddingStore<T> for AlptTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "alpt"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let s = self.scales[id];
        for (o, &q) in out.iter_mut().zip(&self.codes[id * self.dim..(id + 1) * self.dim]) {
            *o = T::from_f64_lossy(q as f64 * s);
        }
    }

    /// Exact derivative of the current parameterisation: entries receive
    /// the row gradient, each scale receives `sum_j g_j q_j`.
    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let mut g = SparseGrad::with_capacity(ids.len() * (d + 1));
        for (i, &id) in ids.iter().enumerate() {
            let id = id as usize;
            let row = grads.row(i);
            g.extend_dense(id * d, row);
            let gs: T = row
                .iter()
                .zip(&self.codes[id * d..(id + 1) * d])
                .map(|(&gj, &q)| gj * T::from_f64_lossy(q as f64))
                .sum();
            g.push(self.scale_index(id), gs);
        }
        Ok(g)
    }

    /// Weight step on the dequantised row, then a step-size update with the
    /// learned-step-size surrogate gradient, then stochastic requantisation.
    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let d = self.dim;
        let mut g = SparseGrad::with_capacity(ids.len() * d);
        for (i, &id) in ids.iter().enumerate() {
            g.extend_dense(id as usize * d, grads.row(i));
        }
        self.adam.begin_step();
        let entries = g.entries().to_vec();
        let qmax = self.bits.qmax() as f64;
        let grad_scale = 1.0 / (d as f64 * qmax).sqrt();
        let mut w = vec![0.0f64; d];
        let mut gw = vec![0.0f64; d];
        let mut k = 0;
        while k < entries.len() {
            let r = entries[k].0 / d;
            let s = self.scales[r];
            for j in 0..d {
                w[j] = self.codes[r * d + j] as f64 * s;
                gw[j] = 0.0;
            }
            while k < entries.len() && entries[k].0 / d == r {
                let (i, gi) = entries[k];
                let next = self.adam.next_value(i, T::from_f64_lossy(w[i % d]), gi, opt);
                w[i % d] = next.to_f64().unwrap_or(0.0);
                gw[i % d] = gi.to_f64().unwrap_or(0.0);
                k += 1;
            }
            let mut gs = 0.0;
            for j in 0..d {
                let t = w[j] / s;
                let dq = if t >= qmax {
                    qmax
                } else if t <= -qmax {
                    -qmax
                } else {
                    t.round() - t
                };
                gs += gw[j] * dq;
            }
            let si = self.scale_index(r);
            let next = self
                .adam
                .next_value(si, T::from_f64_lossy(s), T::from_f64_lossy(gs * grad_scale), opt);
            let s_new = storable::<T>(next.to_f64().unwrap_or(s).max(MIN_SCALE));
            self.scales[r] = s_new;
            for j in 0..d {
                self.codes[r * d + j] =
                    quantize_value(w[j], s_new, 0.0, self.bits.qmax(), Rounding::Stochastic, &mut self.rng) as i16;
            }
        }
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
        memory::dense_bytes(self.n, self.dim, self.bits.width()) + self.n * memory::F32_BYTES
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.n * self.dim + self.n)
    }

    fn param_len(&self) -> usize {
        self.n * self.dim + self.n
    }

    fn param(&self, i: usize) -> T {
        let nd = self.n * self.dim;
        if i < nd {
            T::from_f64_lossy(self.codes[i] as f64 * self.scales[i / self.dim])
        } else {
            T::from_f64_lossy(self.scales[i - nd])
        }
    }

    fn set_param(&mut self, i: usize, v: T) {
        let nd = self.n * self.dim;
        let v = v.to_f64().unwrap_or(0.0);
        if i < nd {
            let s = self.scales[i / self.dim];
            let q = (v / s).round().clamp(-(self.bits.qmax() as f64), self.bits.qmax() as f64);
            self.codes[i] = q as i16;
        } else {
            self.scales[i - nd] = v;
        }
    }

    fn param_step(&self, i: usize) -> Option<T> {
        let nd = self.n * self.dim;
        (i < nd).then(|| T::from_f64_lossy(self.scales[i / self.dim]))
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::ALPT);
        ck.meta = vec![self.n as u64, self.dim as u64, self.bits.tag()];
        match self.bits {
            QuantBits::I8 => ck.payload.extend(self.codes.iter().map(|&q| q as i8 as u8)),
            QuantBits::I16 => {
                for &q in &self.codes {
                    ck.payload.extend_from_slice(&q.to_le_bytes());
                }
            }
        }
        for &s in &self.scales {
            ck.payload.extend_from_slice(&(s as f32).to_le_bytes());
        }
        Ok(ck)
    }
}

impl AlptTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::ALPT)?;
        let (n, dim) = (ck.meta_usize(0)?, ck.meta_usize(1)?);
        let bits = QuantBits::from_tag(ck.meta_at(2)?)?;
        let mut r = Reader::new(&ck.payload);
        let codes = match bits {
            QuantBits::I8 => r.i8_vec(n * dim)?.into_iter().map(i16::from).collect(),
            QuantBits::I16 => r.i16_vec(n * dim)?,
        };
        let scales = r.f32_vec(n)?.into_iter().map(f64::from).collect();
        r.finish()?;
        let mut t = Self::from_parts(n, dim, bits, codes, scales, 0);
        t.freeze()?;
        Ok(t)
    }
}
