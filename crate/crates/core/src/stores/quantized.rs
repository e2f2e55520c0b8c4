use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;

use super::{check_grads, check_ids, check_trainable, moment_bytes, EmbeddingStore, InitConfig};

/// Integer code width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantBits {
    I8,
    I16,
}

impl QuantBits {
    pub fn qmax(self) -> i32 {
        match self {
            QuantBits::I8 => i8::MAX as i32,
            QuantBits::I16 => i16::MAX as i32,
        }
    }

    pub fn width(self) -> usize {
        match self {
            QuantBits::I8 => memory::I8_BYTES,
            QuantBits::I16 => memory::I16_BYTES,
        }
    }

    pub fn tag(self) -> u64 {
        self.width() as u64
    }

    pub fn from_tag(tag: u64) -> Result<Self> {
        match tag {
            1 => Ok(QuantBits::I8),
            2 => Ok(QuantBits::I16),
            t => Err(Error::Format(format!("unknown quantisation width {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounding {
    Nearest,
    Stochastic,
}

/// Where the quantisation range comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QuantRange {
    /// One symmetric clipping range `[-clip, clip]` shared by every row;
    /// nothing is stored per row.
    Fixed(f64),
    /// Per-row affine range recomputed on every write; stores an FP32 scale
    /// and bias per row.
    PerRow,
}

/// Rounds `v` to an integer code under `scale` and `bias`, clipped to
/// `[-qmax, qmax]`. A zero scale maps everything to code 0.
pub fn quantize_value<R: Rng + ?Sized>(
    v: f64,
    scale: f64,
    bias: f64,
    qmax: i32,
    rounding: Rounding,
    rng: &mut R,
) -> i32 {
    if scale <= 0.0 || !v.is_finite() {
        return 0;
    }
    let t = (v - bias) / scale;
    let q = match rounding {
        Rounding::Nearest => t.round(),
        Rounding::Stochastic => {
            let lo = t.floor();
            if rng.random::<f64>() < t - lo {
                lo + 1.0
            } else {
                lo
            }
        }
    };
    q.clamp(-(qmax as f64), qmax as f64) as i32
}

#[inline]
pub fn dequantize(q: i32, scale: f64, bias: f64) -> f64 {
    q as f64 * scale + bias
}

/// Symmetric code range covering `[min, max]`: returns `(scale, bias)`.
pub(crate) fn affine_range(min: f64, max: f64, qmax: i32) -> (f64, f64) {
    if !(max > min) {
        return (0.0, if min.is_finite() { min } else { 0.0 });
    }
    ((max - min) / (2.0 * qmax as f64), (max + min) / 2.0)
}

/// Integer-coded table trained through dequantise, Adam, requantise.
#[derive(Debug, Clone)]
pub struct QuantizedTable<T = f32> {
    n: usize,
    dim: usize,
    bits: QuantBits,
    range: QuantRange,
    rounding: Rounding,
    codes: Vec<i16>,
    /// Per-row `(scale, bias)`; a single shared pair under a fixed range.
    affine: Vec<(f64, f64)>,
    adam: AdamState<T>,
    rng: ChaCha8Rng,
    frozen: bool,
}

impl<T: Real> QuantizedTable<T> {
    pub fn new(
        n: usize,
        dim: usize,
        bits: QuantBits,
        range: QuantRange,
        rounding: Rounding,
        init: InitConfig,
    ) -> Result<Self> {
        if let QuantRange::Fixed(clip) = range {
            if !(clip > 0.0) {
                return Err(Error::invalid("quantisation clip must be positive"));
            }
        }
        let mut init_rng = init.rng(streams::INIT);
        let values: Vec<f64> = (0..n * dim)
            .map(|_| init_rng.random_range(-init.scale..init.scale))
            .collect();
        let mut t = Self::empty(n, dim, bits, range, rounding, init.seed);
        for r in 0..n {
            t.write_row(r, &values[r * dim..(r + 1) * dim], Rounding::Nearest);
        }
        Ok(t)
    }

    /// Quantises an existing matrix with nearest rounding.
    pub fn from_matrix(
        m: &DenseMatrix<T>,
        bits: QuantBits,
        range: QuantRange,
        rounding: Rounding,
        seed: u64,
    ) -> Self {
        let mut t = Self::empty(m.rows(), m.cols(), bits, range, rounding, seed);
        let mut buf = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (b, &v) in buf.iter_mut().zip(m.row(r)) {
                *b = v.to_f64().unwrap_or(0.0);
            }
            t.write_row(r, &buf, Rounding::Nearest);
        }
        t
    }

    fn empty(n: usize, dim: usize, bits: QuantBits, range: QuantRange, rounding: Rounding, seed: u64) -> Self {
        let affine = match range {
            QuantRange::Fixed(clip) => vec![(clip / bits.qmax() as f64, 0.0)],
            QuantRange::PerRow => vec![(0.0, 0.0); n],
        };
        Self {
            n,
            dim,
            bits,
            range,
            rounding,
            codes: vec![0; n * dim],
            affine,
            adam: AdamState::new(n * dim),
            rng: crate::rng::seeded(seed, streams::ROUNDING),
            frozen: false,
        }
    }

    pub fn bits(&self) -> QuantBits {
        self.bits
    }

    pub fn range(&self) -> QuantRange {
        self.range
    }

    #[inline]
    pub fn row_affine(&self, r: usize) -> (f64, f64) {
        match self.range {
            QuantRange::Fixed(_) => self.affine[0],
            QuantRange::PerRow => self.affine[r],
        }
    }

    pub fn code(&self, i: usize) -> i32 {
        self.codes[i] as i32
    }

    fn value(&self, i: usize) -> f64 {
        let (s, b) = self.row_affine(i / self.dim);
        dequantize(self.codes[i] as i32, s, b)
    }

    /// Stores `values` as row `r`, refitting the row range when per-row.
    fn write_row(&mut self, r: usize, values: &[f64], rounding: Rounding) {
        if self.range == QuantRange::PerRow {
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let (s, b) = affine_range(lo, hi, self.bits.qmax());
            self.affine[r] = (super::alpt::storable::<T>(s), super::alpt::storable::<T>(b));
        }
        let (s, b) = self.row_affine(r);
        let qmax = self.bits.qmax();
        for (j, &v) in values.iter().enumerate() {
            let q = if s == 0.0 {
                0
            } else {
                quantize_value(v, s, b, qmax, rounding, &mut self.rng)
            };
            self.codes[r * self.dim + j] = q as i16;
        }
    }

    fn row_param_bytes(&self) -> usize {
        match self.range {
            QuantRange::Fixed(_) => 0,
            QuantRange::PerRow => self.n * 2 * memory::F32_BYTES,
        }
    }
}

impl<T: Real> EmbeddingStore<T> for QuantizedTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "quantized"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let (s, b) = self.row_affine(id);
        for (o, &q) in out.iter_mut().zip(&self.codes[id * self.dim..(id + 1) * self.dim]) {
            *o = T::from_f64_lossy(dequantize(q as i32, s, b));
        }
    }

    /// Straight-through: the gradient of each dequantised entry.
    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let mut g = SparseGrad::with_capacity(ids.len() * self.dim);
        for (i, &id) in ids.iter().enumerate() {
            g.extend_dense(id as usize * self.dim, grads.row(i));
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let mut g = self.backward(ids, grads)?;
        self.adam.begin_step();
        let d = self.dim;
        let entries = g.entries().to_vec();
        let mut row_buf = vec![0.0f64; d];
        let mut k = 0;
        while k < entries.len() {
            let r = entries[k].0 / d;
            for (j, b) in row_buf.iter_mut().enumerate() {
                *b = self.value(r * d + j);
            }
            while k < entries.len() && entries[k].0 / d == r {
                let (i, gi) = entries[k];
                let cur = T::from_f64_lossy(row_buf[i % d]);
                let next = self.adam.next_value(i, cur, gi, opt);
                row_buf[i % d] = next.to_f64().unwrap_or(0.0);
                k += 1;
            }
            let rounding = self.rounding;
            self.write_row(r, &row_buf, rounding);
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
        memory::dense_bytes(self.n, self.dim, self.bits.width()) + self.row_param_bytes()
    }

    /// Codes plus FP32 Adam moments; no FP32 shadow copy is kept.
    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.n * self.dim)
    }

    fn param_len(&self) -> usize {
        self.codes.len()
    }

    fn param(&self, i: usize) -> T {
        T::from_f64_lossy(self.value(i))
    }

    /// Snaps to the nearest code of the row's current range.
    fn set_param(&mut self, i: usize, v: T) {
        let (s, b) = self.row_affine(i / self.dim);
        let mut rng = crate::rng::seeded(0, 0);
        let q = quantize_value(v.to_f64().unwrap_or(0.0), s, b, self.bits.qmax(), Rounding::Nearest, &mut rng);
        self.codes[i] = q as i16;
    }

    fn param_step(&self, i: usize) -> Option<T> {
        Some(T::from_f64_lossy(self.row_affine(i / self.dim).0))
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::QUANTIZED);
        let (range_kind, clip) = match self.range {
            QuantRange::Fixed(c) => (0u64, c),
            QuantRange::PerRow => (1, 0.0),
        };
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.bits.tag(),
            range_kind,
            clip.to_bits(),
        ];
        match self.bits {
            QuantBits::I8 => ck.payload.extend(self.codes.iter().map(|&q| q as i8 as u8)),
            QuantBits::I16 => {
                for &q in &self.codes {
                    ck.payload.extend_from_slice(&q.to_le_bytes());
                }
            }
        }
        if self.range == QuantRange::PerRow {
            for &(s, b) in &self.affine {
                ck.payload.extend_from_slice(&(s as f32).to_le_bytes());
                ck.payload.extend_from_slice(&(b as f32).to_le_bytes());
            }
        }
        Ok(ck)
    }
}

impl QuantizedTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::QUANTIZED)?;
        let (n, dim) = (ck.meta_usize(0)?, ck.meta_usize(1)?);
        let bits = QuantBits::from_tag(ck.meta_at(2)?)?;
        let range = match ck.meta_at(3)? {
            0 => QuantRange::Fixed(ck.meta_f64(4)?),
            1 => QuantRange::PerRow,
            k => return Err(Error::Format(format!("unknown range kind {k}"))),
        };
        let mut t = Self::empty(n, dim, bits, range, Rounding::Nearest, 0);
        let mut r = Reader::new(&ck.payload);
        t.codes = match bits {
            QuantBits::I8 => r.i8_vec(n * dim)?.into_iter().map(i16::from).collect(),
            QuantBits::I16 => r.i16_vec(n * dim)?,
        };
        if range == QuantRange::PerRow {
            for a in t.affine.iter_mut() {
                *a = (r.f32()? as f64, r.f32()? as f64);
            }
        }
        r.finish()?;
        t.freeze()?;
        Ok(t)
    }
}
