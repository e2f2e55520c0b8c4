use crate::checkpoint::{put_f32s, tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::memory;
use crate::stores::GatherCodec;

use super::kmeans::{kmeans, KMeansConfig};
use super::{check_groups, group_layout, norm_quantile_groups, Codec};

/// Bytes per stored code for `centroids` centroids.
pub fn code_width(centroids: usize) -> usize {
    if centroids <= 1 << 8 {
        1
    } else {
        2
    }
}

/// Product quantizer: each row is split into `parts` sub-vectors, and
/// each sub-vector is replaced by the nearest of `centroids` centroids
/// learned for that part.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodec {
    n: usize,
    dim: usize,
    parts: usize,
    centroids: usize,
    /// `parts x centroids x (dim / parts)`.
    codebooks: Vec<f32>,
    /// `n x parts`.
    codes: Vec<u16>,
}

impl PqCodec {
    pub fn fit(matrix: &DenseMatrix<f32>, parts: usize, centroids: usize, seed: u64) -> Result<Self> {
        let (n, dim) = (matrix.rows(), matrix.cols());
        if parts == 0 || dim % parts != 0 {
            return Err(Error::invalid(format!("{parts} parts do not divide width {dim}")));
        }
        if centroids == 0 || centroids > 1 << 16 {
            return Err(Error::invalid("centroid count must lie in [1, 65536]"));
        }
        let sub = dim / parts;
        let mut codebooks = Vec::with_capacity(parts * centroids * sub);
        let mut codes = vec![0u16; n * parts];
        let mut points = Vec::with_capacity(n * sub);
        for p in 0..parts {
            points.clear();
            for row in matrix.iter_rows() {
                points.extend_from_slice(&row[p * sub..(p + 1) * sub]);
            }
            let cfg = KMeansConfig {
                seed: seed.wrapping_add(p as u64),
                ..Default::default()
            };
            let km = kmeans(&points, sub, centroids, &cfg);
            codebooks.extend_from_slice(&km.centroids);
            for (r, &a) in km.assignments.iter().enumerate() {
                codes[r * parts + p] = a as u16;
            }
        }
        Ok(Self {
            n,
            dim,
            parts,
            centroids,
            codebooks,
            codes,
        })
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn centroids(&self) -> usize {
        self.centroids
    }

    /// Centroid of `part` with index `code`.
    pub fn centroid(&self, part: usize, code: usize) -> &[f32] {
        let sub = self.dim / self.parts;
        let start = (part * self.centroids + code) * sub;
        &self.codebooks[start..start + sub]
    }

    pub fn code(&self, row: usize, part: usize) -> usize {
        self.codes[row * self.parts + part] as usize
    }

    /// Predicted bytes without building the codec.
    pub fn predicted_bytes(n: usize, dim: usize, parts: usize, centroids: usize) -> usize {
        centroids * dim * memory::F32_BYTES + n * parts * code_width(centroids)
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        put_f32s(out, &self.codebooks);
        if code_width(self.centroids) == 1 {
            out.extend(self.codes.iter().map(|&c| c as u8));
        } else {
            for c in &self.codes {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }

    fn read_payload(r: &mut Reader<'_>, n: usize, dim: usize, parts: usize, centroids: usize) -> Result<Self> {
        if parts == 0 || dim % parts != 0 || centroids == 0 {
            return Err(Error::Format("bad product-quantizer shape".into()));
        }
        let codebooks = r.f32_vec(centroids * dim)?;
        let codes: Vec<u16> = if code_width(centroids) == 1 {
            r.u8_vec(n * parts)?.into_iter().map(u16::from).collect()
        } else {
            r.take(n * parts * 2)?
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()
        };
        if codes.iter().any(|&c| c as usize >= centroids) {
            return Err(Error::Format("product-quantizer code out of range".into()));
        }
        Ok(Self {
            n,
            dim,
            parts,
            centroids,
            codebooks,
            codes,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_PQ)?;
        let mut r = Reader::new(&ck.payload);
        let pq = Self::read_payload(
            &mut r,
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_usize(3)?,
        )?;
        r.finish()?;
        Ok(pq)
    }

    fn push_segments(&self, row: usize, atom_offset: usize, out: &mut Vec<(u32, u32, u32)>) {
        let sub = self.dim / self.parts;
        for p in 0..self.parts {
            let src = atom_offset + (p * self.centroids + self.code(row, p)) * sub;
            out.push(((p * sub) as u32, sub as u32, src as u32));
        }
    }
}

impl Codec for PqCodec {
    fn name(&self) -> &'static str {
        "pq"
    }

    fn rows(&self) -> usize {
        self.n
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn bytes(&self) -> usize {
        Self::predicted_bytes(self.n, self.dim, self.parts, self.centroids)
    }

    fn row_into(&self, row: usize, out: &mut [f32]) {
        let sub = self.dim / self.parts;
        for p in 0..self.parts {
            out[p * sub..(p + 1) * sub].copy_from_slice(self.centroid(p, self.code(row, p)));
        }
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_PQ);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            self.parts as u64,
            self.centroids as u64,
        ];
        self.write_payload(&mut ck.payload);
        Ok(ck)
    }

    fn into_gather(self: Box<Self>) -> Option<Box<dyn GatherCodec>> {
        Some(self)
    }
}

impl GatherCodec for PqCodec {
    fn atoms(&self) -> Vec<f32> {
        self.codebooks.clone()
    }

    fn set_atoms(&mut self, atoms: &[f32]) {
        self.codebooks.copy_from_slice(atoms);
    }

    fn segments(&self, row: usize, out: &mut Vec<(u32, u32, u32)>) {
        self.push_segments(row, 0, out);
    }

    fn clone_gather(&self) -> Box<dyn GatherCodec> {
        Box::new(self.clone())
    }
}

/// Rows split into norm-quantile groups, each with its own product
/// quantizer; larger-norm groups get more centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct MagPqCodec {
    n: usize,
    dim: usize,
    group_of: Vec<u8>,
    local: Vec<u32>,
    groups: Vec<PqCodec>,
    atom_offsets: Vec<usize>,
}

/// Centroids of group `g` out of `groups`: halves per step below the top.
pub fn group_centroids(max_centroids: usize, groups: usize, g: usize) -> usize {
    (max_centroids >> (groups - 1 - g)).max(1)
}

/// Rows in quantile group `g`: those with `rank * groups / n == g`.
pub fn group_rows(n: usize, groups: usize, g: usize) -> usize {
    ((g + 1) * n).div_ceil(groups) - (g * n).div_ceil(groups)
}

impl MagPqCodec {
    pub fn fit(
        matrix: &DenseMatrix<f32>,
        parts: usize,
        max_centroids: usize,
        groups: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(1..=256).contains(&groups) {
            return Err(Error::invalid("group count must lie in [1, 256]"));
        }
        let group_of = norm_quantile_groups(matrix, groups);
        let (members, _) = group_layout(&group_of, groups);
        let mut pqs = Vec::with_capacity(groups);
        for (g, rows) in members.iter().enumerate() {
            let sub = matrix.select_rows(rows);
            let k = group_centroids(max_centroids, groups, g);
            pqs.push(PqCodec::fit(&sub, parts, k, seed.wrapping_add(1000 * g as u64))?);
        }
        Ok(Self::assemble(matrix.cols(), group_of, pqs))
    }

    fn assemble(dim: usize, group_of: Vec<u8>, groups: Vec<PqCodec>) -> Self {
        let (_, local) = group_layout(&group_of, groups.len());
        let mut atom_offsets = vec![0];
        for g in &groups {
            atom_offsets.push(atom_offsets.last().unwrap() + g.codebooks.len());
        }
        Self {
            n: group_of.len(),
            dim,
            group_of,
            local,
            groups,
            atom_offsets,
        }
    }

    pub fn group_of(&self, row: usize) -> usize {
        self.group_of[row] as usize
    }

    pub fn group(&self, g: usize) -> &PqCodec {
        &self.groups[g]
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Predicted bytes for `n` rows split into equal quantile groups.
    pub fn predicted_bytes(n: usize, dim: usize, parts: usize, max_centroids: usize, groups: usize) -> usize {
        (0..groups)
            .map(|g| {
                PqCodec::predicted_bytes(group_rows(n, groups, g), dim, parts, group_centroids(max_centroids, groups, g))
            })
            .sum::<usize>()
            + n
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::CODEC_MAG_PQ)?;
        let (n, dim, parts, groups) = (
            ck.meta_usize(0)?,
            ck.meta_usize(1)?,
            ck.meta_usize(2)?,
            ck.meta_usize(3)?,
        );
        let mut r = Reader::new(&ck.payload);
        let group_of = r.u8_vec(n)?;
        check_groups(&group_of, groups)?;
        let (members, _) = group_layout(&group_of, groups);
        let mut pqs = Vec::with_capacity(groups);
        for (g, rows) in members.iter().enumerate() {
            let k = ck.meta_usize(4 + g)?;
            pqs.push(PqCodec::read_payload(&mut r, rows.len(), dim, parts, k)?);
        }
        r.finish()?;
        Ok(Self::assemble(dim, group_of, pqs))
    }
}

impl Codec for MagPqCodec {
    fn name(&self) -> &'static str {
        "mag_pq"
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
        self.groups[self.group_of(row)].row_into(self.local[row] as usize, out);
    }

    fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(tags::CODEC_MAG_PQ);
        let parts = self.groups.first().map_or(1, |g| g.parts);
        ck.meta = vec![
            self.n as u64,
            self.dim as u64,
            parts as u64,
            self.groups.len() as u64,
        ];
        ck.meta.extend(self.groups.iter().map(|g| g.centroids as u64));
        ck.payload.extend_from_slice(&self.group_of);
        for g in &self.groups {
            g.write_payload(&mut ck.payload);
        }
        Ok(ck)
    }

    fn into_gather(self: Box<Self>) -> Option<Box<dyn GatherCodec>> {
        Some(self)
    }
}

impl GatherCodec for MagPqCodec {
    fn atoms(&self) -> Vec<f32> {
        self.groups.iter().flat_map(|g| g.codebooks.iter().copied()).collect()
    }

    fn set_atoms(&mut self, atoms: &[f32]) {
        for (g, pq) in self.groups.iter_mut().enumerate() {
            pq.codebooks
                .copy_from_slice(&atoms[self.atom_offsets[g]..self.atom_offsets[g + 1]]);
        }
    }

    fn segments(&self, row: usize, out: &mut Vec<(u32, u32, u32)>) {
        let g = self.group_of(row);
        self.groups[g].push_segments(self.local[row] as usize, self.atom_offsets[g], out);
    }

    fn clone_gather(&self) -> Box<dyn GatherCodec> {
        Box::new(self.clone())
    }
}
