//! Little-endian checkpoint container.
//!
//! ```text
//! magic    "EMSQ"
//! version  u32
//! tag      u32            structure type
//! n_meta   u32            number of metadata words
//! meta     n_meta x u64   shapes and hyperparameters
//! len      u64            payload length in bytes
//! payload  len bytes      raw arrays
//! ```
//!
//! For frozen stores and codecs the payload length equals the structure's
//! inference bytes; shapes and hyperparameters live in `meta`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

pub const MAGIC: &[u8; 4] = b"EMSQ";
pub const VERSION: u32 = 1;

/// Type tags written into the container header.
pub mod tags {
    pub const FULL: u32 = 1;
    pub const DOUBLE_HASH: u32 = 2;
    pub const COMPO: u32 = 3;
    pub const MEMCOM: u32 = 4;
    pub const ROBE: u32 = 5;
    pub const TT_REC: u32 = 6;
    pub const QUANTIZED: u32 = 7;
    pub const ALPT: u32 = 8;
    pub const MIXED_DIM: u32 = 9;
    pub const PRUNED: u32 = 10;
    pub const ADAPTIVE: u32 = 11;

    pub const CODEC_IDENTITY: u32 = 32;
    pub const CODEC_PQ: u32 = 33;
    pub const CODEC_MAG_PQ: u32 = 34;
    pub const CODEC_SVD: u32 = 35;
    pub const CODEC_MAG_SVD: u32 = 36;
    pub const CODEC_TT: u32 = 37;
    pub const CODEC_DEDUP: u32 = 38;
    pub const CODEC_PRUNE: u32 = 39;
    pub const CODEC_INT: u32 = 40;

    pub const DENSE_MATRIX: u32 = 64;
    pub const DATASET: u32 = 65;

    pub fn name(tag: u32) -> &'static str {
        match tag {
            FULL => "store/full",
            DOUBLE_HASH => "store/double_hash",
            COMPO => "store/compo",
            MEMCOM => "store/memcom",
            ROBE => "store/robe",
            TT_REC => "store/tt_rec",
            QUANTIZED => "store/quantized",
            ALPT => "store/alpt",
            MIXED_DIM => "store/mde",
            PRUNED => "store/pruned",
            ADAPTIVE => "store/adaptive",
            CODEC_IDENTITY => "codec/identity",
            CODEC_PQ => "codec/pq",
            CODEC_MAG_PQ => "codec/mag_pq",
            CODEC_SVD => "codec/svd",
            CODEC_MAG_SVD => "codec/mag_svd",
            CODEC_TT => "codec/tt",
            CODEC_DEDUP => "codec/dedup",
            CODEC_PRUNE => "codec/pruning",
            CODEC_INT => "codec/int8_16",
            DENSE_MATRIX => "dense_matrix",
            DATASET => "dataset",
            _ => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub tag: u32,
    pub meta: Vec<u64>,
    pub payload: Vec<u8>,
}

impl Checkpoint {
    pub fn new(tag: u32) -> Self {
        Self {
            tag,
            meta: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.meta.len() * 8 + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.tag.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for m in &self.meta {
            out.extend_from_slice(&m.to_le_bytes());
        }
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let tag = r.u32()?;
        let n_meta = r.u32()? as usize;
        let meta = (0..n_meta).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let len = r.u64()? as usize;
        let payload = r.take(len)?.to_vec();
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(Self { tag, meta, payload })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_tag(&self, tag: u32) -> Result<()> {
        if self.tag != tag {
            return Err(Error::Format(format!(
                "expected {} checkpoint, found {}",
                tags::name(tag),
                tags::name(self.tag)
            )));
        }
        Ok(())
    }

    pub fn meta_at(&self, i: usize) -> Result<u64> {
        self.meta
            .get(i)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing metadata word {i}")))
    }

    pub fn meta_usize(&self, i: usize) -> Result<usize> {
        Ok(self.meta_at(i)? as usize)
    }

    pub fn meta_f64(&self, i: usize) -> Result<f64> {
        Ok(f64::from_bits(self.meta_at(i)?))
    }
}

/// Cursor over a little-endian byte slice.
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated: need {n} bytes at offset {}, have {}",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    pub fn f32_vec(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
            .collect())
    }

    pub fn u32_vec(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4")))
            .collect())
    }

    pub fn i16_vec(&mut self, n: usize) -> Result<Vec<i16>> {
        Ok(self
            .take(n * 2)?
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().expect("2")))
            .collect())
    }

    pub fn i8_vec(&mut self, n: usize) -> Result<Vec<i8>> {
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }

    pub fn u8_vec(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    pub fn finish(&self) -> Result<()> {
        if !self.is_empty() {
            return Err(Error::Format(format!(
                "{} unread payload bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_u32s(out: &mut Vec<u8>, values: &[u32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_i16s(out: &mut Vec<u8>, values: &[i16]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn put_i8s(out: &mut Vec<u8>, values: &[i8]) {
    out.extend(values.iter().map(|&v| v as u8));
}

/// Dense f32 matrix: meta `[rows, cols]`, payload row-major values.
pub fn matrix_to_checkpoint(m: &DenseMatrix<f32>) -> Checkpoint {
    let mut ck = Checkpoint::new(tags::DENSE_MATRIX);
    ck.meta = vec![m.rows() as u64, m.cols() as u64];
    put_f32s(&mut ck.payload, m.values());
    ck
}

pub fn matrix_from_checkpoint(ck: &Checkpoint) -> Result<DenseMatrix<f32>> {
    ck.expect_tag(tags::DENSE_MATRIX)?;
    let rows = ck.meta_usize(0)?;
    let cols = ck.meta_usize(1)?;
    let mut r = Reader::new(&ck.payload);
    let values = r.f32_vec(rows * cols)?;
    r.finish()?;
    DenseMatrix::from_vec(rows, cols, values)
}

/// Reads a raw little-endian f32 matrix whose shape comes from a sidecar
/// text file `<path>.shape` containing `ROWS COLS`.
pub fn load_raw_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix<f32>> {
    let path = path.as_ref();
    let mut shape_path = path.as_os_str().to_owned();
    shape_path.push(".shape");
    let shape = fs::read_to_string(&shape_path).map_err(|e| Error::io(&shape_path, e))?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Config(format!("bad shape sidecar entry {t:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != 2 {
        return Err(Error::Config("shape sidecar must hold `ROWS COLS`".into()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes);
    let values = r.f32_vec(dims[0] * dims[1])?;
    r.finish()?;
    DenseMatrix::from_vec(dims[0], dims[1], values)
}

/// Loads a matrix from either a checkpoint container or a raw file with a
/// shape sidecar, depending on the leading magic.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DenseMatrix<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        matrix_from_checkpoint(&Checkpoint::from_bytes(&bytes)?)
    } else {
        load_raw_matrix(path)
    }
}
