use std::collections::HashMap;

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

/// Hashed shared rows for rare features plus exclusive rows for features
/// observed at least `threshold` times.
#[derive(Debug, Clone)]
pub struct AdaptiveTable<T = f32> {
    n: usize,
    dim: usize,
    shared_rows: usize,
    capacity: usize,
    threshold: u32,
    hashes: HashFamily,
    /// `[shared (m x d) | exclusive (capacity x d)]`.
    params: Vec<T>,
    counts: Vec<u32>,
    slots: HashMap<u32, u32>,
    /// Sorted `(id, slot)` pairs; replaces `slots` once frozen.
    frozen_slots: Vec<(u32, u32)>,
    adam: AdamState<T>,
    frozen: bool,
}

impl<T: Real> AdaptiveTable<T> {
    pub fn new(
        n: usize,
        dim: usize,
        shared_rows: usize,
        capacity: usize,
        threshold: u32,
        hash_seed: u64,
        init: InitConfig,
    ) -> Result<Self> {
        if shared_rows == 0 {
            return Err(Error::invalid("adaptive table needs at least one shared row"));
        }
        if threshold == 0 {
            return Err(Error::invalid("promotion threshold must be positive"));
        }
        let mut rng = init.rng(streams::INIT);
        let mut params: Vec<T> = uniform_vec(&mut rng, shared_rows * dim, -init.scale, init.scale);
        params.resize((shared_rows + capacity) * dim, T::zero());
        Ok(Self {
            n,
            dim,
            shared_rows,
            capacity,
            threshold,
            hashes: HashFamily::new(hash_seed, 1),
            adam: AdamState::new(params.len()),
            params,
            counts: vec![0; n],
            slots: HashMap::new(),
            frozen_slots: Vec::new(),
            frozen: false,
        })
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn promoted(&self) -> usize {
        if self.frozen {
            self.frozen_slots.len()
        } else {
            self.slots.len()
        }
    }

    pub fn is_promoted(&self, id: usize) -> bool {
        self.slot_of(id).is_some()
    }

    /// Promoted ids in ascending order.
    pub fn promoted_ids(&self) -> Vec<u32> {
        if self.frozen {
            self.frozen_slots.iter().map(|p| p.0).collect()
        } else {
            let mut ids: Vec<u32> = self.slots.keys().copied().collect();
            ids.sort_unstable();
            ids
        }
    }

    #[inline]
    fn slot_of(&self, id: usize) -> Option<usize> {
        if self.frozen {
            self.frozen_slots
                .binary_search_by_key(&(id as u32), |p| p.0)
                .ok()
                .map(|k| self.frozen_slots[k].1 as usize)
        } else {
            self.slots.get(&(id as u32)).map(|&s| s as usize)
        }
    }

    /// Start of the row that `id` currently reads.
    #[inline]
    fn row_start(&self, id: usize) -> usize {
        match self.slot_of(id) {
            Some(s) => (self.shared_rows + s) * self.dim,
            None => {
                let b = self.hashes.bucket(id as u64, 0, self.shared_rows as u64) as usize;
                b * self.dim
            }
        }
    }
}

impl<T: Real> EmbeddingStore<T> for AdaptiveTable<T> {
    fn clone_box(&self) -> Box<dyn EmbeddingStore<T>> {
        Box::new(self.clone())
    }

    fn name(&self) -> &'static str {
        "adapt_emb"
    }

    fn num_features(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row_into(&self, id: usize, out: &mut [T]) {
        let s = self.row_start(id);
        out.copy_from_slice(&self.params[s..s + self.dim]);
    }

    fn backward(&self, ids: &[u32], grads: &DenseMatrix<T>) -> Result<SparseGrad<T>> {
        check_ids(ids, self.n)?;
        check_grads(ids, grads, self.dim)?;
        let mut g = SparseGrad::with_capacity(ids.len() * self.dim);
        for (i, &id) in ids.iter().enumerate() {
            g.extend_dense(self.row_start(id as usize), grads.row(i));
        }
        Ok(g)
    }

    fn apply_gradients(&mut self, ids: &[u32], grads: &DenseMatrix<T>, opt: &Optimizer) -> Result<()> {
        check_trainable(self.frozen, self.name())?;
        let g = self.backward(ids, grads)?;
        sparse_adam_step(&mut self.params, &mut self.adam, g, opt);
        Ok(())
    }

    /// Counts every id; ids reaching the threshold get an exclusive row
    /// copied from their shared row. Fails with a capacity error after
    /// counting the whole batch if some promotion did not fit.
    fn observe(&mut self, ids: &[u32]) -> Result<usize> {
        check_trainable(self.frozen, self.name())?;
        check_ids(ids, self.n)?;
        let mut promoted = 0;
        let mut refused = 0;
        for &id in ids {
            let c = &mut self.counts[id as usize];
            *c = c.saturating_add(1);
            if *c < self.threshold || self.slots.contains_key(&id) {
                continue;
            }
            let slot = self.slots.len();
            if slot >= self.capacity {
                refused += 1;
                continue;
            }
            let src = self.row_start(id as usize);
            let dst = (self.shared_rows + slot) * self.dim;
            self.params.copy_within(src..src + self.dim, dst);
            self.slots.insert(id, slot as u32);
            promoted += 1;
        }
        if refused > 0 {
            return Err(Error::Capacity(format!(
                "exclusive region full ({} rows); {refused} promotions refused",
                self.capacity
            )));
        }
        Ok(promoted)
    }

    fn freeze(&mut self) -> Result<usize> {
        if !self.frozen {
            let mut pairs: Vec<(u32, u32)> = self.slots.drain().collect();
            pairs.sort_unstable();
            self.frozen_slots = pairs;
            self.counts = Vec::new();
            self.adam = AdamState::new(0);
            self.frozen = true;
        }
        Ok(self.inference_bytes())
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Shared and reserved exclusive rows plus an `(id, slot)` pair per
    /// exclusive row.
    fn inference_bytes(&self) -> usize {
        memory::dense_bytes(self.shared_rows + self.capacity, self.dim, memory::F32_BYTES)
            + self.capacity * 2 * memory::INDEX_BYTES
    }

    fn training_bytes(&self) -> usize {
        self.inference_bytes() + moment_bytes(self.params.len()) + self.n * memory::INDEX_BYTES
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
        let mut ck = Checkpoint::new(tags::ADAPTIVE);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.shared_rows as u64,
            self.capacity as u64,
            self.threshold as u64,
            self.hashes.seed(),
        ];
        write_values(&mut ck.payload, &self.params);
        let mut pairs: Vec<(u32, u32)> = if self.frozen {
            self.frozen_slots.clone()
        } else {
            self.slots.iter().map(|(&a, &b)| (a, b)).collect()
        };
        pairs.sort_unstable();
        pairs.resize(self.capacity, (u32::MAX, u32::MAX));
        for (id, slot) in pairs {
            ck.payload.extend_from_slice(&id.to_le_bytes());
            ck.payload.extend_from_slice(&slot.to_le_bytes());
        }
        Ok(ck)
    }
}

impl AdaptiveTable<f32> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::ADAPTIVE)?;
        let n = ck.meta_usize(0)?;
        let dim = ck.meta_usize(1)?;
        let shared_rows = ck.meta_usize(2)?;
        let capacity = ck.meta_usize(3)?;
        let threshold = ck.meta_at(4)? as u32;
        let seed = ck.meta_at(5)?;
        let mut r = Reader::new(&ck.payload);
        let params = read_values(&mut r, (shared_rows + capacity) * dim)?;
        let raw = r.u32_vec(capacity * 2)?;
        r.finish()?;
        let frozen_slots: Vec<(u32, u32)> = raw
            .chunks_exact(2)
            .map(|p| (p[0], p[1]))
            .filter(|p| p.0 != u32::MAX)
            .collect();
        Ok(Self {
            n,
            dim,
            shared_rows,
            capacity,
            threshold,
            hashes: HashFamily::new(seed, 1),
            params,
            counts: Vec::new(),
            slots: HashMap::new(),
            frozen_slots,
            adam: AdamState::new(0),
            frozen: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(threshold: u32, capacity: usize) -> AdaptiveTable<f32> {
        AdaptiveTable::new(100, 4, 10, capacity, threshold, 3, InitConfig::default()).unwrap()
    }

    #[test]
    fn promoted_on_third_sighting_once() {
        let mut t = table(3, 10);
        assert_eq!(t.observe(&[7, 7]).unwrap(), 0);
        assert_eq!(t.observe(&[7]).unwrap(), 1);
        assert_eq!(t.observe(&[7, 7]).unwrap(), 0);
        assert_eq!(t.promoted_ids(), vec![7]);
    }

    #[test]
    fn distinct_ids_never_promote() {
        let mut t = table(3, 10);
        let ids: Vec<u32> = (0..100).collect();
        assert_eq!(t.observe(&ids).unwrap(), 0);
    }

    #[test]
    fn promotion_copies_shared_row_and_isolates_updates() {
        let mut t = table(2, 10);
        let before = t.lookup(&(0..100).collect::<Vec<_>>()).unwrap();
        t.observe(&[5, 5]).unwrap();
        let after = t.lookup(&(0..100).collect::<Vec<_>>()).unwrap();
        assert_eq!(before, after);
        let g = DenseMatrix::from_vec(1, 4, vec![1.0; 4]).unwrap();
        t.apply_gradients(&[5], &g, &Optimizer::sgd(0.5)).unwrap();
        let trained = t.lookup(&(0..100).collect::<Vec<_>>()).unwrap();
        for id in 0..100 {
            assert_eq!(trained.row(id) != before.row(id), id == 5);
        }
    }

    #[test]
    fn capacity_exhaustion_is_an_error() {
        let mut t = table(1, 2);
        assert!(matches!(t.observe(&[1, 2, 3]), Err(Error::Capacity(_))));
        assert_eq!(t.promoted(), 2);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut t = table(1, 8);
        t.observe(&[4, 9, 2]).unwrap();
        let ids: Vec<u32> = (0..100).collect();
        let want = t.lookup(&ids).unwrap();
        t.freeze().unwrap();
        assert_eq!(t.lookup(&ids).unwrap(), want);
        let ck = t.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), t.inference_bytes());
        let back = AdaptiveTable::from_checkpoint(&ck).unwrap();
        assert_eq!(back.lookup(&ids).unwrap(), want);
        assert_eq!(back.to_checkpoint().unwrap().to_bytes(), ck.to_bytes());
    }
}
