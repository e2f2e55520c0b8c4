use nalgebra::DMatrix;

use crate::checkpoint::{put_f32s, tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::memory;

use super::pq::group_rows;
use super::{check_groups, group_layout, norm_quantile_groups, Codec};

/// Thin SVD `a = u * diag(s) * vt` with singular values descending.
pub(crate) fn sorted_svd(a: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (n, d) = a.shape();
    let k = n.min(d);
    if k == 0 {
        return (DMatrix::zeros(n, 0), Vec::new(), DMatrix::zeros(0, d));
    }
    let svd = a.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let u = DMatrix::from_fn(n, k, |r, c| u[(r, order[c])]);
    let vt = DMatrix::from_fn(k, d, |r, c| vt[(order[r], c)]);
    (u, order.iter().map(|&i| s[i]).collect(), vt)
}

/// Rank-`r` truncation of a thin SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    /// `n x r`, the left singular vectors scaled by the singular values.
    pub left: DenseMatrix<f64>,
    /// `r x d`.
    pub right: DenseMatrix<f64>,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

pub fn truncated_svd(m: &DenseMatrix<f64>, rank: usize) -> LowRank {
    let (n, d) = (m.rows(), m.cols());
    let (u, s, vt) = sorted_svd(DMatrix::from_row_slice(n, d, m.values()));
    let r = rank.min(s.len());
    let left = DenseMatrix::from_vec(n, r, (0..n * r).map(|i| u[(i / r, i % r)] * s[i % r]).collect())
        .expect("shape");
    let right = DenseMatrix::from_vec(r, d, (0..r * d).map(|i| vt[(i / d, i % d)]).collect())
        .expect("shape");
    LowRank {
        left,
        right,
        singular_values: s,
    }
}

/// Truncated SVD `left (n x r) * right (r x d)` stored in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdCodec {
    n: usize,
    dim: usize,
    rank: usize,
    left: Vec<f32>,
    right: Vec<f32>,
}

impl SvdCodec {
    pub fn fit(matrix: &DenseMatrix<f32>, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::invalid("SVD rank must be positive"));
        }
        let lr = truncated_svd(&matrix.cast::<f64>(), rank);
        Ok(Self {
            n: matrix.rows(),
            dim: matrix.cols(),
            rank: lr.left.cols(),
            left: lr.left.values().iter().map(|&v| v as f32).collect(),
            right: lr.right.values().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn predicted_bytes(n: usize, dim: usize, rank: usize) -> usize {
        (n + dim) * rank.min(n).min(dim) * memory::F32_BYTES
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        put_f32s(out, &self.left);
        put_f32s(out, &self.right);
    }

    fn read_payload(r: &mut Reader<'_>, n: usize, dim: usize, rank: usize) -> Result<Self> {
        Ok(Self {
            n,
            dim,
            rank,
            left: r.f32_vec(n * rank)?,
            right: r.f32_vec(rank * dim)?,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_SVD)?;
        let mut r = Reader::new(&ck.payload);
        let c = Self::read_payload(&mut r, ck.meta_usize(0)?, ck.meta_usize(1)?, ck.meta_usize(2)?)?;
        r.finish()?;
        Ok(c)
    }
}

impl Codec for SvdCodec {
    fn name(&self) -> &'static str {
        "svd"
    }

    fn rows(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn bytes(&self) -> usize {
        (self.n + self.dim) * self.rank * memory::F32_BYTES
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        out.fill(0.0);
        let coeffs = &self.left[row * self.rank..(row + 1) * self.rank];
        for (k, &c) in coeffs.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(&self.right[k * self.dim..(k + 1) * self.dim]) {
                *o += c * v;
            }
        }
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_SVD);
        ck.meta = vec![self.n as u64, self.dim as u64, self.rank as u64];
        self.write_payload(&mut ck.payload);
        Ok(ck)
    }
}

/// Per norm-quantile group truncated SVDs; group `g` gets rank
/// `base_rank * 2^g`, capped by the group shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MagSvdCodec {
    n: usize,
    dim: usize,
    group_of: Vec<u8>,
    local: Vec<u32>,
    groups: Vec<SvdCodec>,
}

fn group_rank(base_rank: usize, g: usize, rows: usize, dim: usize) -> usize {
    base_rank.saturating_mul(1 << g.min(32)).min(rows).min(dim)
}

impl MagSvdCodec {
    pub fn fit(matrix: &DenseMatrix<f32>, base_rank: usize, groups: usize) -> Result<Self> {
        if base_rank == 0 {
            return Err(Error::invalid("SVD rank must be positive"));
        }
        if !(1..=256).contains(&groups) {
            return Err(Error::invalid("group count must lie in [1, 256]"));
        }
        let group_of = norm_quantile_groups(matrix, groups);
        let (members, local) = group_layout(&group_of, groups);
        let mut codecs = Vec::with_capacity(groups);
        for (g, rows) in members.iter().enumerate() {
            let sub = matrix.select_rows(rows);
            let rank = group_rank(base_rank, g, rows.len(), matrix.cols());
            codecs.push(if rank == 0 {
                SvdCodec {
                    n: rows.len(),
                    dim: matrix.cols(),
                    rank: 0,
                    left: Vec::new(),
                    right: Vec::new(),
                }
            } else {
                SvdCodec::fit(&sub, rank)?
            });
        }
        Ok(Self {
            n: matrix.rows(),
            dim: matrix.cols(),
            group_of,
            local,
            groups: codecs,
        })
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.rank).collect()
    }

    pub fn predicted_bytes(n: usize, dim: usize, base_rank: usize, groups: usize) -> usize {
        (0..groups)
            .map(|g| {
                let rows = group_rows(n, groups, g);
                SvdCodec::predicted_bytes(rows, dim, group_rank(base_rank, g, rows, dim))
            })
            .sum::<usize>()
            + n
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_MAG_SVD)?;
        let (n, dim, groups) = (ck.meta_usize(0)?, ck.meta_usize(1)?, ck.meta_usize(2)?);
        let mut r = Reader::new(&ck.payload);
        let group_of = r.u8_vec(n)?;
        check_groups(&group_of, groups)?;
        let (members, local) = group_layout(&group_of, groups);
        let mut codecs = Vec::with_capacity(groups);
        for (g, rows) in members.iter().enumerate() {
            codecs.push(SvdCodec::read_payload(&mut r, rows.len(), dim, ck.meta_usize(3 + g)?)?);
        }
        r.finish()?;
        Ok(Self {
            n,
            dim,
            group_of,
            local,
            groups: codecs,
        })
    }
}

impl Codec for MagSvdCodec {
    fn name(&self) -> &'static str {
        "mag_svd"
    }

    fn rows(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn bytes(&self) -> usize {
        self.groups.iter().map(|g| g.bytes()).sum::<usize>() + self.n
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        self.groups[self.group_of[row] as usize].row_into(self.local[row] as usize, out);
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_MAG_SVD);
        ck.meta = vec![self.n as u64, self.dim as u64, self.groups.len() as u64];
        ck.meta.extend(self.groups.iter().map(|g| g.rank as u64));
        ck.payload.extend_from_slice(&self.group_of);
        for g in &self.groups {
            g.write_payload(&mut ck.payload);
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(n: usize, d: usize, seed: u64) -> DenseMatrix<f64> {
        let mut rng = crate::rng::seeded(seed, 0);
        let v = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(n, d, v).unwrap()
    }

    #[test]
    fn rank_one_input_is_exact() {
        let m = DenseMatrix::from_vec(2, 2, vec![1.0f32, 2.0, 2.0, 4.0]).unwrap();
        let c = SvdCodec::fit(&m, 1).unwrap();
        let back = c.decompress();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn energy_identity() {
        for seed in 0..5 {
            let m = random(50, 20, seed);
            for rank in [1, 5, 13] {
                let lr = truncated_svd(&m, rank);
                let err = lr.left.matmul(&lr.right).unwrap().squared_distance(&m);
                let tail: f64 = lr.singular_values[rank..].iter().map(|s| s * s).sum();
                assert!((err - tail).abs() <= 1e-6 * tail, "{err} vs {tail}");
            }
        }
    }

    #[test]
    fn singular_values_descend() {
        let lr = truncated_svd(&random(30, 12, 9), 12);
        assert!(lr.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_rank_round_trip() {
        let m = random(40, 8, 3).cast::<f32>();
        let c = SvdCodec::fit(&m, 8).unwrap();
        let back = c.decompress();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert!((a - b).abs() < 1e-5);
        }
        let ck = c.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), c.bytes());
        assert_eq!(SvdCodec::from_checkpoint(&ck).unwrap(), c);
    }

    #[test]
    fn mag_svd_bytes_and_round_trip() {
        let m = random(101, 10, 4).cast::<f32>();
        let c = MagSvdCodec::fit(&m, 2, 4).unwrap();
        assert_eq!(c.ranks(), vec![2, 4, 8, 10]);
        assert_eq!(c.bytes(), MagSvdCodec::predicted_bytes(101, 10, 2, 4));
        let ck = c.to_checkpoint().unwrap();
        assert_eq!(ck.payload.len(), c.bytes());
        let back = MagSvdCodec::from_checkpoint(&ck).unwrap();
        assert_eq!(back.decompress(), c.decompress());
        assert_eq!(back.decompress().rows(), 101);
    }
}
