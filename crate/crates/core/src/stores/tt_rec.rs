use serde::{Deserialize, Serialize};

use crate::checkpoint::{tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::memory;
use crate::optim::{AdamState, Optimizer, SparseGrad};
use crate::rng::streams;

use super::{
    check_grads, check_ids, check_trainable, moment_bytes, read_values, sparse_adam_step,
    uniform_vec, write_values, EmbeddingStore, InitConfig,
};

/// Factorisation `n <= prod(row_factors)`, `d = prod(col_factors)` and the
/// TT ranks between cores (`ranks[0] = ranks[t] = 1`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TtShape {
    pub row_factors: Vec<usize>,
    pub col_factors: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl TtShape {
    pub fn new(row_factors: Vec<usize>, col_factors: Vec<usize>, ranks: Vec<usize>) -> Result<Self> {
        let t = row_factors.len();
        if !(2..=3).contains(&t) || col_factors.len() != t || ranks.len() != t + 1 {
            return Err(Error::invalid("TT shape needs 2 or 3 cores with t+1 ranks"));
        }
        if ranks[0] != 1 || ranks[t] != 1 {
            return Err(Error::invalid("outer TT ranks must be 1"));
        }
        if row_factors.iter().chain(&col_factors).chain(&ranks).any(|&x| x == 0) {
            return Err(Error::invalid("TT factors and ranks must be positive"));
        }
        Ok(Self {
            row_factors,
            col_factors,
            ranks,
        })
    }

    /// Near-balanced factorisation of `n` and `d` into `cores` factors with
    /// every inner rank equal to `rank`.
    pub fn balanced(n: usize, d: usize, cores: usize, rank: usize) -> Result<Self> {
        let row_factors = balanced_cover(n, cores);
        let col_factors = balanced_divisors(d, cores);
        let mut ranks = vec![rank; cores + 1];
        ranks[0] = 1;
        ranks[cores] = 1;
        Self::new(row_factors, col_factors, ranks)
    }

    pub fn cores(&self) -> usize {
        self.row_factors.len()
    }

    pub fn dim(&self) -> usize {
        self.col_factors.iter().product()
    }

    pub fn capacity(&self) -> usize {
        self.row_factors.iter().product()
    }

    pub fn core_len(&self, i: usize) -> usize {
        self.row_factors[i] * self.ranks[i] * self.col_factors[i] * self.ranks[i + 1]
    }

    pub fn param_count(&self) -> usize {
        (0..self.cores()).map(|i| self.core_len(i)).sum()
    }

    pub fn core_offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for i in 0..self.cores() {
            off.push(off[i] + self.core_len(i));
        }
        off
    }

    /// Inner ranks above `min(prod of left sizes, prod of right sizes)`
    /// add parameters without adding expressiveness.
    pub fn max_useful_rank(&self, i: usize) -> usize {
        let left: usize = (0..i)
            .map(|k| self.row_factors[k] * self.col_factors[k])
            .product();
        let right: usize = (i..self.cores())
            .map(|k| self.row_factors[k] * self.col_factors[k])
            .product();
        left.min(right)
    }

    /// The same factorisation with every inner rank at its useful maximum,
    /// which makes a TT decomposition exact.
    pub fn with_full_ranks(mut self) -> Self {
        for i in 1..self.cores() {
            self.ranks[i] = self.max_useful_rank(i);
        }
        self
    }

    /// Mixed-radix digits of `id`, least significant first.
    #[inline]
    pub fn digits(&self, mut id: usize, out: &mut [usize]) {
        for (o, &m) in out.iter_mut().zip(&self.row_factors) {
            *o = id % m;
            id /= m;
        }
    }

    fn to_meta(&self) -> Vec<u64> {
        let mut meta = vec![self.cores() as u64];
        for v in [&self.row_factors, &self.col_factors, &self.ranks] {
            meta.extend(v.iter().map(|&x| x as u64));
        }
        meta
    }

    fn from_meta(ck: &Checkpoint, start: usize) -> Result<Self> {
        let t = ck.meta_usize(start)?;
        let read = |from: usize, len: usize| -> Result<Vec<usize>> {
            (from..from + len).map(|i| ck.meta_usize(i)).collect()
        };
        Self::new(
            read(start + 1, t)?,
            read(start + 1 + t, t)?,
            read(start + 1 + 2 * t, t + 1)?,
        )
    }

}

/// Smallest near-equal factors whose product covers `n`.
fn balanced_cover(n: usize, parts: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(parts);
    let mut rest = n.max(1);
    for k in (1..=parts).rev() {
        let mut f = (rest as f64).powf(1.0 / k as f64).ceil() as usize;
        while f > 1 && (f - 1).pow(k as u32) >= rest {
            f -= 1;
        }
        out.push(f.max(1));
        rest = rest.div_ceil(f.max(1));
    }
    out
}

/// Factors of `d` into `parts` divisors, as equal as possible.
fn balanced_divisors(d: usize, parts: usize) -> Vec<usize> {
    let mut primes = Vec::new();
    let mut x = d.max(1);
    let mut p = 2;
    while p * p <= x {
        while x % p == 0 {
            primes.push(p);
            x /= p;
        }
        p += 1;
    }
    if x > 1 {
        primes.push(x);
    }
    let mut out = vec![1usize; parts];
    for &p in primes.iter().rev() {
        let i = (0..parts).min_by_key(|&i| out[i]).expect("parts > 0");
        out[i] *= p;
    }
    out.sort_unstable();
    out
}

/// Writes the TT row for `id` into `out`; `cores` are concatenated in
/// `[j][r_prev][a][r_next]` layout.
pub fn tt_row_into<T: Real>(shape: &TtShape, cores: &[T], id: usize, out: &mut [T]) {
    let t = shape.cores();
    let mut digits = [0usize; 3];
    shape.digits(id, &mut digits[..t]);
    let offs = shape.core_offsets();
    // acc holds the partial product as (prefix width) x R_i.
    let mut acc = vec![T::one()];
    let mut width = 1;
    for i in 0..t {
        let (rp, a, rn) = (shape.ranks[i], shape.col_factors[i], shape.ranks[i + 1]);
        let slice = &cores[offs[i] + digits[i] * rp * a * rn..][..rp * a * rn];
        let mut next = vec![T::zero(); width * a * rn];
        for p in 0..width {
            for r in 0..rp {
                let x = acc[p * rp + r];
                if x == T::zero() {
                    continue;
                }
                let src = &slice[r * a * rn..(r + 1) * a * rn];
                let dst = &mut next[p * a * rn..(p + 1) * a * rn];
                for (o, &g) in dst.iter_mut().zip(src) {
                    *o += x * g;
                }
            }
        }
        acc = next;
        width *= a;
    }
    out.copy_from_slice(&acc);
}

/// Distinct ids in first-seen order and each position's index into them.
fn distinct(ids: &[u32]) -> (Vec<u32>, Vec<usize>) {
    let mut index = std::collections::HashMap::with_capacity(ids.len());
    let mut unique = Vec::new();
    let slot = ids
        .iter()
        .map(|&id| {
            *index.entry(id).or_insert_with(|| {
                unique.push(id);
                unique.len() - 1
            })
        })
        .collect();
    (unique, slot)
}

/// Tensor-train factorised table.
#[derive(Debug, Clone)]
pub struct TtRecTable<T = f32> {
    n: usize,
    shape: TtShape,
    offsets: Vec<usize>,
    cores: Vec<T>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> TtRecTable<T> {
    pub fn new(n: usize, shape: TtShape, init: InitConfig) -> Result<Self> {
        if shape.capacity() < n {
            return Err(Error::invalid(format!(
                "TT row factors cover {} < {n} features",
                shape.capacity()
            )));
        }
        // Uniform entries whose product chain matches the variance of a
        // uniform(-scale, scale) embedding.
        let t = shape.cores() as f64;
        let rank_prod: f64 = shape.ranks.iter().map(|&r| r as f64).product();
        let target_var = init.scale * init.scale / 3.0;
        let core_var = (target_var / rank_prod).powf(1.0 / t);
        let bound = (3.0 * core_var).sqrt();
        let mut rng = init.rng(streams::INIT);
        let cores = uniform_vec(&mut rng, shape.param_count(), -bound, bound);
        Self::from_cores(n, shape, cores)
    }

    pub fn from_cores(n: usize, shape: TtShape, cores: Vec<T>) -> Result<Self> {
        if cores.len() != shape.param_count() {
            return Err(Error::invalid("TT core length does not match shape"));
        }
        Ok(Self {
            n,
            offsets: shape.core_offsets(),
            shape,
            adam: AdamState::new(cores.len()),
            cores,
            frozen: false,
        })
    }

    pub fn shape(&self) -> &TtShape {
        &self.shape
    }

    pub fn cores(&self) -> &[T] {
        &self.cores
    }

    fn slice_start(&self, core: usize, digit: usize) -> usize {
        let (rp, a, rn) = (
            self.shape.ranks[core],
            self.shape.col_factors[core],
            self.shape.ranks[core + 1],
        );
        self.offsets[core] + digit * rp * a * rn
    }

    /// Prefix products `P_i` (width `prod a_<i` x `R_i`) for one id.
    fn prefixes(&self, digits: &[usize]) -> Vec<Vec<T>> {
        let t = self.shape.cores();
        let mut out = vec![vec![T::one()]];
        let mut width = 1;
        for i in 0..t - 1 {
            let (rp, a, rn) = (
                self.shape.ranks[i],
                self.shape.col_factors[i],
                self.shape.ranks[i + 1],
            );
            let s = self.slice_start(i, digits[i]);
            let prev = &out[i];
            let mut next = vec![T::zero(); width * a * rn];
            for p in 0..width {
                for r in 0..rp {
                    let x = prev[p * rp + r];
                    for b in 0..a {
                        for q in 0..rn {
                            next[(p * a + b) * rn + q] += x * self.cores[s + (r * a + b) * rn + q];
                        }
                    }
                }
            }
            out.push(next);
            width *= a;
        }
        out
    }

    /// Suffix products `S_i` (`R_{i-1}` x `prod a_>=i`), indexed by `i`.
    fn suffixes(&self, digits: &[usize]) -> Vec<Vec<T>> {
        let t = self.shape.cores();
        let mut out = vec![Vec::new(); t + 1];
        out[t] = vec![T::one()];
        let mut width = 1;
        for i in (1..t).rev() {
            let (rp, a, rn) = (
                self.shape.ranks[i],
                self.shape.col_factors[i],
                self.shape.ranks[i + 1],
            );
            let s = self.slice_start(i, digits[i]);
            let after = &out[i + 1];
            let mut cur = vec![T::zero(); rp * a * width];
            for r in 0..rp {
                for b in 0..a {
                    for q in 0..rn {
                        let g = self.cores[s + (r * a + b) * rn + q];
                        if g == T::zero() {
                            continue;
                        }
                        let src = &after[q * width..(q + 1) * width];
                        let dst = &mut cur[(r * a + b) * width..(r * a + b + 1) * width];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o += g * v;
                        }
                    }
                }
            }
            out[i] = cur;
            width *= a;
        }
        out
    }
}

impl<T: Real> EmbeddingStore<T> for TtRecTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "tt_rec"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.shape.dim()
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        tt_row_into(&self.shape, &self.cores, id, out);
    }

    /// Contracts each distinct id once.
    fn lookup(&self, ids: &[u32]) -> Result<DenseMatrix<T>> {
        check_ids(ids, self.n)?;
        let d = self.dim();
        let (unique, slot) = distinct(ids);
        let mut rows = vec![T::zero(); unique.len() * d];
        for (u, &id) in unique.iter().enumerate() {
            self.row_into(id as usize, &mut rows[u * d..(u + 1) * d]);
        }
        let mut out = DenseMatrix::zeros(ids.len(), d);
        for (i, &u) in slot.iter().enumerate() {
            out.row_mut(i).copy_from_slice(&rows[u * d..(u + 1) * d]);
        }
        Ok(out)
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim())?;
        let t = self.shape.cores();
        let d = self.dim();
        // The gradient is linear in the row gradient, so repeated ids are
        // summed first and contracted once.
        let (unique, slot) = distinct(ids);
        let mut summed = vec![T::zero(); unique.len() * d];
        for (row, &u) in slot.iter().enumerate() {
            for (s, &v) in summed[u * d..(u + 1) * d].iter_mut().zip(grads.row(row)) {
                *s += v;
            }
        }
        let mut g = SparseGrad::with_capacity(unique.len() * self.shape.param_count().min(4096));
        let mut digits = [0usize; 3];
        for (u, &id) in unique.iter().enumerate() {
            self.shape.digits(id as usize, &mut digits[..t]);
            let pre = self.prefixes(&digits[..t]);
            let suf = self.suffixes(&digits[..t]);
            let gy = &summed[u * d..(u + 1) * d];
            let mut pre_width = 1;
            for i in 0..t {
                let (rp, a, rn) = (
                    self.shape.ranks[i],
                    self.shape.col_factors[i],
                    self.shape.ranks[i + 1],
                );
                let post_width: usize = self.shape.col_factors[i + 1..].iter().product();
                let s = self.slice_start(i, digits[i]);
                for r in 0..rp {
                    for b in 0..a {
                        for q in 0..rn {
                            let mut acc = T::zero();
                            for p in 0..pre_width {
                                let left = pre[i][p * rp + r];
                                if left == T::zero() {
                                    continue;
                                }
                                let base = (p * a + b) * post_width;
                                let mut inner = T::zero();
                                for u in 0..post_width {
                                    inner += gy[base + u] * suf[i + 1][q * post_width + u];
                                }
                                acc += left * inner;
                            }
                            g.push(s + (r * a + b) * rn + q, acc);
                        }
                    }
                }
                pre_width *= a;
            }
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let g = self.backward(ids, grads)?;
        sparse_adam_step(&mut self.cores, &mut self.adam, g, opt);
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
        self.cores.len() * memory::F32_BYTES
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.cores.len())
    }

    fn param_len(&self) -> usize {
        self.cores.len()
    }

    fn param(&self, i: usize) -> T {
        self.cores[i]
    }

    fn set_param(&mut self, i: usize, v: T) {
        self.cores[i] = v;
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::TT_REC);
        ck.meta = vec![self.n as u64];
        ck.meta.extend(self.shape.to_meta());
        write_values(&mut ck.payload, &self.cores);
        Ok(ck)
    }
}

impl TtRecTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::TT_REC)?;
        let n = ck.meta_usize(0)?;
        let shape = TtShape::from_meta(ck, 1)?;
        let mut r = Reader::new(&ck.payload);
        let cores = read_values(&mut r, shape.param_count())?;
        r.finish()?;
        let mut t = Self::from_cores(n, shape, cores)?;
        t.freeze()?;
        Ok(t)
    }
}

/// Reads a TT shape stored at `meta[start..]` by a TT store or codec.
pub(crate) fn shape_from_meta(ck: &Checkpoint, start: usize) -> Result<TtShape> {
    TtShape::from_meta(ck, start)
}

pub(crate) fn shape_to_meta(shape: &TtShape) -> Vec<u64> {
    shape.to_meta()
}
