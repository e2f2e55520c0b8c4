//! Adam (and plain SGD) over flat parameter vectors.
//!
//! Embedding parameters receive sparse gradients; only touched coordinates
//! are updated, with bias correction driven by the global step count.

use serde::{Deserialize, Serialize};

use crate::matrix::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Gradient over a flat parameter vector, as `(index, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrad<T> {
    entries: Vec<(usize, T)>,
    merged: bool,
}

impl<T: Real> SparseGrad<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            merged: true,
        }
    }

    pub fn with_capacity(cap: usize) -> Self {
        Self {
            entries: Vec::with_capacity(cap),
            merged: true,
        }
    }

    #[inline]
    pub fn push(&mut self, index: usize, value: T) {
        self.entries.push((index, value));
        self.merged = false;
    }

    /// Adds every nonzero coordinate of a dense gradient starting at `offset`.
    pub fn extend_dense(&mut self, offset: usize, dense: &[T]) {
        for (i, &g) in dense.iter().enumerate() {
            if g != T::zero() {
                self.push(offset + i, g);
            }
        }
    }

    /// Sorts by index and sums duplicates.
    pub fn merge(&mut self) {
        if self.merged {
            return;
        }
        let span = self.entries.iter().map(|e| e.0).max().map_or(0, |m| m + 1);
        if span <= 4 * self.entries.len() {
            // Dense accumulation sums duplicates in push order, exactly as
            // the stable sort below does, without the sort.
            let mut sum = vec![T::zero(); span];
            let mut seen = vec![false; span];
            for &(i, g) in &self.entries {
                sum[i] += g;
                seen[i] = true;
            }
            self.entries = (0..span).filter(|&i| seen[i]).map(|i| (i, sum[i])).collect();
            self.merged = true;
            return;
        }
        self.entries.sort_by_key(|e| e.0);
        let mut out: Vec<(usize, T)> = Vec::with_capacity(self.entries.len());
        for &(i, g) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += g,
                _ => out.push((i, g)),
            }
        }
        self.entries = out;
        self.merged = true;
    }

    pub fn entries(&mut self) -> &[(usize, T)] {
        self.merge();
        &self.entries
    }

    pub fn into_entries(mut self) -> Vec<(usize, T)> {
        self.merge();
        self.entries
    }

    /// Dense view of length `len`.
    pub fn to_dense(&mut self, len: usize) -> Vec<T> {
        let mut out = vec![T::zero(); len];
        for &(i, g) in self.entries() {
            out[i] += g;
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// First and second moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Grows the moment vectors (new coordinates start at zero).
    pub fn resize(&mut self, len: usize) {
        self.m.resize(len, T::zero());
        self.v.resize(len, T::zero());
    }

    /// Bytes held by both moment vectors at 32-bit precision.
    pub fn bytes(&self) -> usize {
        self.m.len() * crate::memory::ADAM_MOMENTS * crate::memory::F32_BYTES
    }

    fn coefficients(&self, opt: &Optimizer) -> (T, T, T, T, T) {
        let t = self.step as i32;
        let b1 = T::from_f64_lossy(opt.beta1);
        let b2 = T::from_f64_lossy(opt.beta2);
        let c1 = T::one() - T::from_f64_lossy(opt.beta1.powi(t));
        let c2 = T::one() - T::from_f64_lossy(opt.beta2.powi(t));
        (b1, b2, c1, c2, T::from_f64_lossy(opt.eps))
    }

    #[inline]
    fn update_one(
        &mut self,
        i: usize,
        g: T,
        param: &mut T,
        lr: T,
        coeffs: (T, T, T, T, T),
        kind: OptimizerKind,
    ) {
        match kind {
            OptimizerKind::Sgd => *param -= lr * g,
            OptimizerKind::Adam => {
                let (b1, b2, c1, c2, eps) = coeffs;
                let m = b1 * self.m[i] + (T::one() - b1) * g;
                let v = b2 * self.v[i] + (T::one() - b2) * g * g;
                self.m[i] = m;
                self.v[i] = v;
                let m_hat = m / c1;
                let v_hat = v / c2;
                *param -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Returns the new value of a single coordinate without touching a
    /// parameter slice; used by stores whose parameters are not plain floats.
    pub fn next_value(&mut self, i: usize, current: T, g: T, opt: &Optimizer) -> T {
        let coeffs = self.coefficients(opt);
        let mut p = current;
        self.update_one(i, g, &mut p, T::from_f64_lossy(opt.lr), coeffs, opt.kind);
        p
    }

    /// Advances the step counter; call once per optimizer step before any
    /// coordinate updates.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One step over a sparse gradient.
    pub fn apply_sparse(&mut self, params: &mut [T], grad: &mut SparseGrad<T>, opt: &Optimizer) {
        self.begin_step();
        let coeffs = self.coefficients(opt);
        let lr = T::from_f64_lossy(opt.lr);
        for &(i, g) in grad.entries() {
            self.update_one(i, g, &mut params[i], lr, coeffs, opt.kind);
        }
    }

    /// One step over a dense gradient.
    pub fn apply_dense(&mut self, params: &mut [T], grad: &[T], opt: &Optimizer) {
        assert_eq!(params.len(), grad.len());
        self.begin_step();
        let coeffs = self.coefficients(opt);
        let lr = T::from_f64_lossy(opt.lr);
        for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            self.update_one(i, g, p, lr, coeffs, opt.kind);
        }
    }
}
