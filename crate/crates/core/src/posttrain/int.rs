use crate::checkpoint::{tags, Checkpoint};
use crate::error::Result;
use crate::matrix::DenseMatrix;
use crate::stores::{EmbeddingStore, QuantBits, QuantRange, QuantizedTable, Rounding};

use super::Codec;

/// Per-row affine integer quantization with nearest rounding.
#[derive(Debug, Clone)]
pub struct IntCodec {
    table: QuantizedTable<f32>,
}

impl IntCodec {
    pub fn fit(matrix: &DenseMatrix<f32>, bits: QuantBits) -> Self {
        let mut table = QuantizedTable::from_matrix(matrix, bits, QuantRange::PerRow, Rounding::Nearest, 0);
        table.freeze().expect("freezing a quantized table cannot fail");
        Self { table }
    }

    pub fn bits(&self) -> QuantBits {
        self.table.bits()
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_INT)?;
        let mut inner = ck.clone();
        inner.tag = tags::QUANTIZED;
        Ok(Self {
            table: QuantizedTable::from_checkpoint(&inner)?,
        })
    }
}

impl Codec for IntCodec {
    fn name(&self) -> &'static str {
        "int8_16"
    }

    fn rows(&self) -> usize {
        self.table.num_features()
    }

    fn dim(&self) -> usize {
        EmbeddingStore::dim(&self.table)
    }

    fn bytes(&self) -> usize {
        self.table.inference_bytes()
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        self.table.row_into(row, out);
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = self.table.to_checkpoint()?;
        ck.tag = tags::CODEC_INT;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_formula_and_round_trip() {
        let vals: Vec<f32> = (0..48).map(|i| (i as f32 * 0.7).sin()).collect();
        let m = DenseMatrix::from_vec(3, 16, vals).unwrap();
        for (bits, w) in [(QuantBits::I8, 1), (QuantBits::I16, 2)] {
            let c = IntCodec::fit(&m, bits);
            assert_eq!(c.bytes(), 3 * 16 * w + 8 * 3);
            let ck = c.to_checkpoint().unwrap();
            assert_eq!(ck.payload.len(), c.bytes());
            let back = IntCodec::from_checkpoint(&ck).unwrap();
            assert_eq!(back.decompress(), c.decompress());
            let err = c.decompress().squared_distance(&m).sqrt();
            assert!(err < if w == 1 { 0.05 } else { 2e-4 });
        }
    }
}
