use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical feature space: `k` fields, each with its own cardinality,
/// laid out contiguously in one global id range `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpace {
    cardinalities: Vec<usize>,
    offsets: Vec<usize>,
}

impl FeatureSpace {
    pub fn new(cardinalities: Vec<usize>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::invalid("feature space needs at least one field"));
        }
        if let Some(f) = cardinalities.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("field {f} has zero cardinality")));
        }
        let mut offsets = Vec::with_capacity(cardinalities.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &c in &cardinalities {
            acc += c;
            offsets.push(acc);
        }
        if acc > u32::MAX as usize {
            return Err(Error::invalid("total feature count exceeds 32-bit ids"));
        }
        Ok(Self {
            cardinalities,
            offsets,
        })
    }

    /// A single field holding `n` features; used for matrices that have no
    /// field structure (post-training corpora).
    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    #[inline]
    pub fn num_fields(&self) -> usize {
        self.cardinalities.len()
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        *self.offsets.last().expect("non-empty")
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    #[inline]
    pub fn offset(&self, field: usize) -> usize {
        self.offsets[field]
    }

    /// Global id of `local` within `field`.
    pub fn global_id(&self, field: usize, local: usize) -> Result<u32> {
        let card = *self
            .cardinalities
            .get(field)
            .ok_or_else(|| Error::invalid(format!("field {field} out of range")))?;
        if local >= card {
            return Err(Error::invalid(format!(
                "local id {local} out of range for field {field} (cardinality {card})"
            )));
        }
        Ok((self.offsets[field] + local) as u32)
    }

    /// Field owning global id `g`.
    pub fn field_of(&self, g: usize) -> Result<usize> {
        if g >= self.num_features() {
            return Err(Error::invalid(format!(
                "global id {g} out of range (n = {})",
                self.num_features()
            )));
        }
        // offsets is sorted; the owning field is the last offset <= g.
        Ok(self.offsets.partition_point(|&o| o <= g) - 1)
    }

    /// Baseline embedding bytes: `n x d` 32-bit floats.
    pub fn baseline_bytes(&self, dim: usize) -> usize {
        crate::memory::baseline_bytes(self.num_features(), dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_empty_and_zero() {
        assert!(FeatureSpace::new(vec![]).is_err());
        assert!(FeatureSpace::new(vec![3, 0]).is_err());
    }

    #[test]
    fn offsets_and_fields() {
        let s = FeatureSpace::new(vec![3, 1, 4]).unwrap();
        assert_eq!(s.offsets(), &[0, 3, 4, 8]);
        assert_eq!(s.num_features(), 8);
        assert_eq!(s.field_of(0).unwrap(), 0);
        assert_eq!(s.field_of(3).unwrap(), 1);
        assert_eq!(s.field_of(7).unwrap(), 2);
        assert!(s.field_of(8).is_err());
        assert_eq!(s.global_id(2, 1).unwrap(), 5);
        assert!(s.global_id(1, 1).is_err());
    }

    proptest! {
        #[test]
        fn every_id_maps_to_exactly_one_field(cards in proptest::collection::vec(1usize..20, 1..8)) {
            let s = FeatureSpace::new(cards.clone()).unwrap();
            prop_assert_eq!(s.offsets()[0], 0);
            prop_assert_eq!(*s.offsets().last().unwrap(), cards.iter().sum::<usize>());
            for g in 0..s.num_features() {
                let f = s.field_of(g).unwrap();
                prop_assert!(s.offset(f) <= g && g < s.offset(f) + cards[f]);
            }
        }
    }
}
