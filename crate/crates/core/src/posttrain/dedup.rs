use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{put_f32s, put_u32s, tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::memory;
use crate::rng::{seeded, streams};
use crate::stores::GatherCodec;

use super::Codec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LshParams {
    /// Number of random projections per signature.
    pub projections: usize,
    pub bucket_width: f64,
    pub seed: u64,
}

impl Default for LshParams {
    fn default() -> Self {
        Self {
            projections: 4,
            bucket_width: 1.0,
            seed: 0,
        }
    }
}

/// L2 locality-sensitive hash: `floor((a_j . v + u_j * w) / w)` with
/// Gaussian `a_j` and uniform `u_j` in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Lsh {
    width: usize,
    directions: Vec<f64>,
    offsets: Vec<f64>,
    bucket_width: f64,
}

impl L2Lsh {
    pub fn new(width: usize, params: LshParams) -> Self {
        let mut rng = seeded(params.seed, streams::LSH);
        let directions = (0..params.projections * width)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let offsets = (0..params.projections).map(|_| rng.random::<f64>()).collect();
        Self {
            width,
            directions,
            offsets,
            bucket_width: params.bucket_width,
        }
    }

    fn project(&self, block: &[f32], out: &mut Vec<f64>) {
        out.clear();
        for a in self.directions.chunks_exact(self.width) {
            out.push(a.iter().zip(block).map(|(&x, &v)| x * v as f64).sum());
        }
    }

    fn bucket(&self, projections: &[f64], bucket_width: f64, out: &mut Vec<i64>) {
        out.clear();
        for (&p, &u) in projections.iter().zip(&self.offsets) {
            out.push((p / bucket_width + u).floor() as i64);
        }
    }

    pub fn signature(&self, block: &[f32]) -> Vec<i64> {
        assert_eq!(block.len(), self.width);
        let mut proj = Vec::new();
        let mut sig = Vec::new();
        self.project(block, &mut proj);
        self.bucket(&proj, self.bucket_width, &mut sig);
        sig
    }
}

pub fn lsh_signature(block: &[f32], params: LshParams) -> Vec<i64> {
    L2Lsh::new(block.len(), params).signature(block)
}

/// Table split into fixed-width blocks of the row-major values; blocks
/// with equal LSH signatures share one representative (their mean).
#[derive(Debug, Clone, PartialEq)]
pub struct DedupCodec {
    n: usize,
    dim: usize,
    block: usize,
    lsh: LshParams,
    /// `reps x block`.
    reps: Vec<f32>,
    mapping: Vec<u32>,
}

fn check_block(dim: usize, block: usize) -> Result<()> {
    if block == 0 || (dim % block != 0 && block % dim != 0) {
        return Err(Error::invalid(format!(
            "block width {block} must divide or be a multiple of the row width {dim}"
        )));
    }
    Ok(())
}

/// Projections of every block of `matrix`, `blocks x projections`.
fn project_blocks(matrix: &DenseMatrix<f32>, block: usize, lsh: &L2Lsh) -> (Vec<Vec<f32>>, Vec<f64>) {
    let values = matrix.values();
    let count = values.len().div_ceil(block);
    let mut blocks = Vec::with_capacity(count);
    let mut projections = Vec::new();
    let mut buf = Vec::new();
    for k in 0..count {
        let mut b = values[k * block..((k + 1) * block).min(values.len())].to_vec();
        b.resize(block, 0.0);
        lsh.project(&b, &mut buf);
        projections.extend_from_slice(&buf);
        blocks.push(b);
    }
    (blocks, projections)
}

/// Representative index of every block, numbered by first occurrence.
fn group_blocks(projections: &[f64], lsh: &L2Lsh, bucket_width: f64) -> (Vec<u32>, usize) {
    let l = lsh.offsets.len().max(1);
    let mut ids: HashMap<Vec<i64>, u32> = HashMap::new();
    let mut mapping = Vec::with_capacity(projections.len() / l);
    let mut sig = Vec::with_capacity(l);
    for p in projections.chunks(l) {
        lsh.bucket(p, bucket_width, &mut sig);
        let next = ids.len() as u32;
        mapping.push(*ids.entry(sig.clone()).or_insert(next));
    }
    let reps = ids.len();
    (mapping, reps)
}

impl DedupCodec {
    /// Deduplicates with the bucket width given in `lsh`.
    pub fn fit(matrix: &DenseMatrix<f32>, block: usize, lsh: LshParams) -> Result<Self> {
        check_block(matrix.cols(), block)?;
        let hasher = L2Lsh::new(block, lsh);
        let (blocks, projections) = project_blocks(matrix, block, &hasher);
        let (mapping, reps) = group_blocks(&projections, &hasher, lsh.bucket_width);
        Ok(Self::from_groups(matrix, block, lsh, &blocks, mapping, reps))
    }

    /// Deduplicates with the smallest bucket width (found by a log-space
    /// bisection) that leaves at most `max_reps` representatives.
    pub fn fit_max_reps(matrix: &DenseMatrix<f32>, block: usize, max_reps: usize, lsh: LshParams) -> Result<Self> {
        check_block(matrix.cols(), block)?;
        if max_reps == 0 {
            return Err(Error::invalid("at least one representative block is required"));
        }
        let hasher = L2Lsh::new(block, lsh);
        let (blocks, projections) = project_blocks(matrix, block, &hasher);
        let count = |w: f64| group_blocks(&projections, &hasher, w).1;
        let scale = projections.iter().fold(0.0f64, |m, p| m.max(p.abs())).max(1e-12);
        let mut lo = scale * 1e-7;
        let mut w = if count(lo) <= max_reps {
            lo
        } else {
            let mut hi = scale;
            let mut guard = 0;
            while count(hi) > max_reps {
                lo = hi;
                hi *= 4.0;
                guard += 1;
                if guard > 200 {
                    return Err(Error::state("bucket width search did not converge"));
                }
            }
            for _ in 0..40 {
                let mid = (lo * hi).sqrt();
                if count(mid) <= max_reps {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        };
        if !w.is_finite() {
            w = scale;
        }
        let lsh = LshParams { bucket_width: w, ..lsh };
        let (mapping, reps) = group_blocks(&projections, &hasher, w);
        Ok(Self::from_groups(matrix, block, lsh, &blocks, mapping, reps))
    }

    fn from_groups(
        matrix: &DenseMatrix<f32>,
        block: usize,
        lsh: LshParams,
        blocks: &[Vec<f32>],
        mapping: Vec<u32>,
        reps: usize,
    ) -> Self {
        let mut sums = vec![0.0f64; reps * block];
        let mut counts = vec![0usize; reps];
        for (b, &m) in blocks.iter().zip(&mapping) {
            counts[m as usize] += 1;
            for (s, &v) in sums[m as usize * block..][..block].iter_mut().zip(b) {
                *s += v as f64;
            }
        }
        let reps = sums
            .iter()
            .enumerate()
            .map(|(i, &s)| (s / counts[i / block] as f64) as f32)
            .collect();
        Self {
            n: matrix.rows(),
            dim: matrix.cols(),
            block,
            lsh,
            reps,
            mapping,
        }
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn lsh(&self) -> LshParams {
        self.lsh
    }

    pub fn num_blocks(&self) -> usize {
        self.mapping.len()
    }

    pub fn num_reps(&self) -> usize {
        self.reps.len() / self.block
    }

    pub fn mapping(&self) -> &[u32] {
        &self.mapping
    }

    pub fn predicted_bytes(n: usize, dim: usize, block: usize, reps: usize) -> usize {
        reps * block * memory::F32_BYTES + (n * dim).div_ceil(block) * memory::INDEX_BYTES
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_DEDUP)?;
        let (n, dim, block, reps) = (
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_usize(3)?,
        );
        check_block(dim, block).map_err(|e| Error::Format(e.to_string()))?;
        let lsh = LshParams {
            projections: ck.meta_usize(4)?,
            bucket_width: ck.meta_f64(5)?,
            seed: ck.meta_at(6)?,
        };
        let mut r = Reader::new(&ck.payload);
        let rep_values = r.f32_vec(reps * block)?;
        let mapping = r.u32_vec((n * dim).div_ceil(block))?;
        r.finish()?;
        if mapping.iter().any(|&m| m as usize >= reps) {
            return Err(Error::Format("dedup mapping points past the representatives".into()));
        }
        Ok(Self {
            n,
            dim,
            block,
            lsh,
            reps: rep_values,
            mapping,
        })
    }

    /// `(offset in row, length, offset in representatives)` runs of `row`.
    fn for_each_segment(&self, row: usize, mut f: impl FnMut(usize, usize, usize)) {
        let start = row * self.dim;
        let end = start + self.dim;
        let mut pos = start;
        while pos < end {
            let k = pos / self.block;
            let within = pos - k * self.block;
            let len = (self.block - within).min(end - pos);
            f(pos - start, len, self.mapping[k] as usize * self.block + within);
            pos += len;
        }
    }
}

impl Codec for DedupCodec {
    fn name(&self) -> &'static str {
        "dedup"
    }

    fn rows(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn bytes(&self) -> usize {
        Self::predicted_bytes(self.n, self.dim, self.block, self.num_reps())
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        self.for_each_segment(row, |dst, len, src| {
            out[dst..dst + len].copy_from_slice(&self.reps[src..src + len]);
        });
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_DEDUP);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.block as u64,
            self.num_reps() as u64,
            self.lsh.projections as u64,
            self.lsh.bucket_width.to_bits(),
            self.lsh.seed,
        ];
        put_f32s(&mut ck.payload, &self.reps);
        put_u32s(&mut ck.payload, &self.mapping);
        Ok(ck)
    }

    fn into_gather(self: Box<Self>) -> Option<Box<dyn GatherCodec>> {
        Some(self)
    }
}

impl GatherCodec for DedupCodec {
    fn atoms(&self) -> Vec<f32> {
        self.reps.clone()
    }

    fn set_atoms(&mut self, atoms: &[f32]) {
        self.reps.copy_from_slice(atoms);
    }

    fn segments(&self, row: usize, out: &mut Vec<(u32, u32, u32)>) {
        self.for_each_segment(row, |dst, len, src| out.push((dst as u32, len as u32, src as u32)));
    }

    fn clone_gather(&self) -> Box<dyn GatherCodec> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn near_blocks_share_signature() {
        let p = LshParams::default();
        assert_eq!(lsh_signature(&[1.0, 1.0], p), lsh_signature(&[1.0, 1.0], p));
        assert_eq!(lsh_signature(&[1.0, 1.0], p), lsh_signature(&[1.01, 1.0], p));
    }

    #[test]
    fn far_blocks_split() {
        let trials = 1000;
        let split = (0..trials)
            .filter(|&s| {
                let p = LshParams {
                    seed: s,
                    ..Default::default()
                };
                lsh_signature(&[0.0, 0.0], p) != lsh_signature(&[100.0, 0.0], p)
            })
            .count();
        assert!(split as f64 / trials as f64 > 0.99);
    }

    #[test]
    fn unique_blocks_are_verbatim() {
        let m = DenseMatrix::from_vec(4, 2, vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0, 10.0, 10.0]).unwrap();
        let p = LshParams {
            bucket_width: 0.01,
            ..Default::default()
        };
        let c = DedupCodec::fit(&m, 2, p).unwrap();
        assert_eq!(c.num_reps(), 4);
        assert_eq!(c.decompress(), m);
    }

    #[test]
    fn merged_blocks_take_the_mean() {
        let m = DenseMatrix::from_vec(3, 2, vec![1.0, 1.0, 1.001, 1.0, 50.0, -50.0]).unwrap();
        let c = DedupCodec::fit_max_reps(&m, 2, 2, LshParams::default()).unwrap();
        assert!(c.num_reps() <= 2);
        assert_eq!(c.mapping()[0], c.mapping()[1]);
        let back = c.decompress();
        assert!((back.get(0, 0) - 1.0005).abs() < 1e-6);
        assert_eq!(back.row(2), m.row(2));
    }

    #[test]
    fn multi_row_and_sub_row_blocks() {
        let vals: Vec<f32> = (0..30).map(|i| i as f32).collect();
        let m = DenseMatrix::from_vec(5, 6, vals).unwrap();
        for block in [2, 3, 6, 12, 18] {
            let c = DedupCodec::fit(&m, block, LshParams { bucket_width: 1e-3, ..Default::default() }).unwrap();
            assert_eq!(c.decompress(), m, "block {block}");
            assert_eq!(c.bytes(), DedupCodec::predicted_bytes(5, 6, block, c.num_reps()));
            let ck = c.to_checkpoint().unwrap();
            assert_eq!(ck.payload.len(), c.bytes());
            assert_eq!(DedupCodec::from_checkpoint(&ck).unwrap(), c);
        }
        assert!(DedupCodec::fit(&m, 4, LshParams::default()).is_err());
    }
}
