//! CTR datasets: a synthetic power-law generator with a planted logistic
//! label model, and a CSV ingester.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{put_f32s, put_u32s, tags, Checkpoint, Reader};
use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Real};
use crate::rng::{seeded, streams};
use crate::space::FeatureSpace;

/// Exponent that gives the default spec a top-10% share above 0.95 and a
/// tail (features seen fewer than 5 times) above 80%.
pub const DEFAULT_ZIPF_EXPONENT: f64 = 1.3;

/// Standard deviation of the planted pairwise-interaction term.
const INTERACTION_STD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub valid: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<()> {
        let ok = |f: f64| f.is_finite() && (0.0..=1.0).contains(&f);
        if !ok(self.train) || !ok(self.valid) || self.train + self.valid > 1.0 + 1e-12 {
            return Err(Error::Config(format!(
                "split fractions train={} valid={} must be non-negative and sum to at most 1",
                self.train, self.valid
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub cardinalities: Vec<usize>,
    /// One exponent per field, or a single exponent shared by all fields.
    pub zipf_exponents: Vec<f64>,
    pub dense_width: usize,
    /// Width of the hidden embeddings behind the labels.
    pub truth_width: usize,
    /// Divides the planted logit; larger values mean noisier labels.
    pub temperature: f64,
    pub samples: usize,
    pub seed: u64,
    pub split: SplitFractions,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            cardinalities: vec![40_000, 25_000, 15_000, 10_000, 5_000, 3_000, 1_500, 500],
            zipf_exponents: vec![DEFAULT_ZIPF_EXPONENT],
            dense_width: 4,
            truth_width: 4,
            temperature: 1.0,
            samples: 100_000,
            seed: 0,
            split: SplitFractions::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("sample count must be at least 1".into()));
        }
        if self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::Config("every field needs cardinality >= 1".into()));
        }
        let k = self.cardinalities.len();
        if self.zipf_exponents.len() != 1 && self.zipf_exponents.len() != k {
            return Err(Error::Config(format!(
                "expected 1 or {k} zipf exponents, got {}",
                self.zipf_exponents.len()
            )));
        }
        if self.zipf_exponents.iter().any(|&s| !(s.is_finite() && s >= 0.0)) {
            return Err(Error::Config("zipf exponents must be finite and non-negative".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.truth_width == 0 {
            return Err(Error::Config("truth width must be at least 1".into()));
        }
        self.split.validate()
    }

    pub fn exponent(&self, field: usize) -> f64 {
        if self.zipf_exponents.len() == 1 {
            self.zipf_exponents[0]
        } else {
            self.zipf_exponents[field]
        }
    }
}

/// Which part of the dataset to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Samples with `k` categorical ids, `p` dense features and a binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    space: FeatureSpace,
    dense_width: usize,
    ids: Vec<u32>,
    dense: Vec<f32>,
    labels: Vec<f32>,
    train: Vec<u32>,
    valid: Vec<u32>,
    test: Vec<u32>,
}

/// Gathered rows of a dataset, ready for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T = f32> {
    /// Row-major `len x k` global ids.
    pub ids: Vec<u32>,
    pub dense: DenseMatrix<T>,
    pub labels: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Frequency skew over every row of the feature space, seen or not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewSummary {
    pub samples: usize,
    /// Features seen at least once.
    pub distinct_features: usize,
    /// Share of occurrences held by the most frequent 10% of features.
    pub top10_share: f64,
    /// Fraction of features with fewer than 5 occurrences.
    pub tail_share: f64,
    pub positive_rate: f64,
}

impl Dataset {
    pub fn new(
        space: FeatureSpace,
        dense_width: usize,
        ids: Vec<u32>,
        dense: Vec<f32>,
        labels: Vec<f32>,
        split: SplitFractions,
        seed: u64,
    ) -> Result<Self> {
        split.validate()?;
        let len = labels.len();
        let k = space.num_fields();
        if ids.len() != len * k || dense.len() != len * dense_width {
            return Err(Error::invalid("id, dense and label arrays disagree on sample count"));
        }
        for (i, row) in ids.chunks_exact(k).enumerate() {
            for (f, &g) in row.iter().enumerate() {
                let (lo, hi) = (space.offset(f), space.offset(f + 1));
                if (g as usize) < lo || (g as usize) >= hi {
                    return Err(Error::invalid(format!(
                        "sample {i}: id {g} is outside field {f} range [{lo}, {hi})"
                    )));
                }
            }
        }
        if let Some(i) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::invalid(format!("sample {i}: label must be 0 or 1")));
        }
        let mut order: Vec<u32> = (0..len as u32).collect();
        order.shuffle(&mut seeded(seed, streams::SPLIT));
        let n_train = (split.train * len as f64).round() as usize;
        let n_valid = ((split.valid * len as f64).round() as usize).min(len - n_train.min(len));
        let n_train = n_train.min(len);
        let test = order.split_off(n_train + n_valid);
        let valid = order.split_off(n_train);
        Ok(Self {
            space,
            dense_width,
            ids,
            dense,
            labels,
            train: order,
            valid,
            test,
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn num_fields(&self) -> usize {
        self.space.num_fields()
    }

    pub fn dense_width(&self) -> usize {
        self.dense_width
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self, sample: usize) -> &[u32] {
        let k = self.num_fields();
        &self.ids[sample * k..(sample + 1) * k]
    }

    pub fn dense(&self, sample: usize) -> &[f32] {
        let p = self.dense_width;
        &self.dense[sample * p..(sample + 1) * p]
    }

    pub fn label(&self, sample: usize) -> f32 {
        self.labels[sample]
    }

    pub fn labels(&self) -> &[f32] {
        &self.labels
    }

    pub fn split(&self, which: Split) -> &[u32] {
        match which {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn batch<T: Real>(&self, samples: &[u32]) -> Batch<T> {
        let k = self.num_fields();
        let p = self.dense_width;
        let mut ids = Vec::with_capacity(samples.len() * k);
        let mut dense = DenseMatrix::zeros(samples.len(), p);
        let mut labels = Vec::with_capacity(samples.len());
        for (r, &s) in samples.iter().enumerate() {
            let s = s as usize;
            ids.extend_from_slice(self.ids(s));
            for (o, &v) in dense.row_mut(r).iter_mut().zip(self.dense(s)) {
                *o = T::from_f64_lossy(v as f64);
            }
            labels.push(T::from_f64_lossy(self.labels[s] as f64));
        }
        Batch { ids, dense, labels }
    }

    /// Occurrence count of every global feature id.
    pub fn feature_counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.space.num_features()];
        for &g in &self.ids {
            counts[g as usize] += 1;
        }
        counts
    }

    pub fn skew(&self) -> SkewSummary {
        let mut counts = self.feature_counts();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let top = counts.len().div_ceil(10);
        let top_sum: u64 = counts[..top].iter().map(|&c| c as u64).sum();
        let tail = counts.iter().filter(|&&c| c < 5).count();
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
        SkewSummary {
            samples: self.len(),
            distinct_features: counts.iter().filter(|&&c| c > 0).count(),
            top10_share: ratio(top_sum as f64, total as f64),
            tail_share: ratio(tail as f64, counts.len() as f64),
            positive_rate: ratio(
                self.labels.iter().map(|&y| y as f64).sum(),
                self.len() as f64,
            ),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(tags::DATASET);
        ck.meta = vec![
            self.len() as u64,
            self.dense_width as u64,
            self.train.len() as u64,
            self.valid.len() as u64,
            self.test.len() as u64,
            self.num_fields() as u64,
        ];
        ck.meta.extend(self.space.cardinalities().iter().map(|&c| c as u64));
        put_u32s(&mut ck.payload, &self.ids);
        put_f32s(&mut ck.payload, &self.dense);
        ck.payload.extend(self.labels.iter().map(|&y| y as u8));
        put_u32s(&mut ck.payload, &self.train);
        put_u32s(&mut ck.payload, &self.valid);
        put_u32s(&mut ck.payload, &self.test);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_tag(tags::DATASET)?;
        let len = ck.meta_usize(0)?;
        let dense_width = ck.meta_usize(1)?;
        let sizes = [ck.meta_usize(2)?, ck.meta_usize(3)?, ck.meta_usize(4)?];
        let k = ck.meta_usize(5)?;
        let cards = (6..6 + k).map(|i| ck.meta_usize(i)).collect::<Result<Vec<_>>>()?;
        if sizes.iter().sum::<usize>() != len {
            return Err(Error::Format("dataset splits do not cover every sample".into()));
        }
        let space = FeatureSpace::new(cards)?;
        let mut r = Reader::new(&ck.payload);
        let ids = r.u32_vec(len * k)?;
        let dense = r.f32_vec(len * dense_width)?;
        let labels: Vec<f32> = r.u8_vec(len)?.into_iter().map(f32::from).collect();
        let train = r.u32_vec(sizes[0])?;
        let valid = r.u32_vec(sizes[1])?;
        let test = r.u32_vec(sizes[2])?;
        r.finish()?;
        let mut seen = vec![false; len];
        for &s in train.iter().chain(&valid).chain(&test) {
            let slot = seen
                .get_mut(s as usize)
                .ok_or_else(|| Error::Format(format!("split index {s} out of range")))?;
            if std::mem::replace(slot, true) {
                return Err(Error::Format(format!("sample {s} appears in two splits")));
            }
        }
        if ids.iter().any(|&g| g as usize >= space.num_features()) {
            return Err(Error::Format("dataset id out of range".into()));
        }
        Ok(Self {
            space,
            dense_width,
            ids,
            dense,
            labels,
            train,
            valid,
            test,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Draws a dataset from the planted model described by `spec`.
///
/// Each field samples a popularity rank from a Zipf law and maps it through
/// a seeded permutation to a local id. Labels are Bernoulli draws of
/// `sigmoid((sum_{i<j} <u_i, u_j> + w.x + b) / temperature)` where `u` are
/// hidden per-feature embeddings and `b` is the median-centering bias.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let space = FeatureSpace::new(spec.cardinalities.clone())?;
    let k = space.num_fields();
    let t = spec.truth_width;
    let p = spec.dense_width;
    let n = spec.samples;
    let mut rng = seeded(spec.seed, streams::DATA);

    let pairs = (k * (k - 1) / 2).max(1);
    let sigma = (INTERACTION_STD / ((pairs * t) as f64).sqrt()).sqrt();
    let truth: Vec<f64> = (0..space.num_features() * t)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let dense_weights: Vec<f64> = (0..p)
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut rank_to_local = Vec::with_capacity(k);
    let mut zipfs = Vec::with_capacity(k);
    for (f, &card) in spec.cardinalities.iter().enumerate() {
        let mut perm: Vec<u32> = (0..card as u32).collect();
        perm.shuffle(&mut rng);
        rank_to_local.push(perm);
        let z = Zipf::new(card as f64, spec.exponent(f))
            .map_err(|e| Error::Config(format!("field {f}: {e}")))?;
        zipfs.push(z);
    }

    let mut ids = Vec::with_capacity(n * k);
    let mut dense = Vec::with_capacity(n * p);
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let start = ids.len();
        for f in 0..k {
            let rank = (zipfs[f].sample(&mut rng) as usize).clamp(1, spec.cardinalities[f]) - 1;
            ids.push((space.offset(f) + rank_to_local[f][rank] as usize) as u32);
        }
        let row = &ids[start..];
        let mut score = 0.0;
        for i in 0..k {
            let a = &truth[row[i] as usize * t..(row[i] as usize + 1) * t];
            for &gj in &row[i + 1..] {
                let b = &truth[gj as usize * t..(gj as usize + 1) * t];
                score += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        for w in &dense_weights {
            let x: f64 = rng.sample(StandardNormal);
            dense.push(x as f32);
            score += w * x;
        }
        raw.push(score);
    }

    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let bias = -sorted[n / 2];
    let labels: Vec<f32> = raw
        .iter()
        .map(|&s| {
            let prob = 1.0 / (1.0 + (-(s + bias) / spec.temperature).exp());
            if rng.random::<f64>() < prob {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Dataset::new(space, p, ids, dense, labels, spec.split, spec.seed)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericTransform {
    None,
    /// `v -> ln(1 + max(v, 0))`.
    #[default]
    Log1p,
}

impl NumericTransform {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            NumericTransform::None => v,
            NumericTransform::Log1p => v.max(0.0).ln_1p(),
        }
    }
}

/// Column roles of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: String,
    pub categorical: Vec<String>,
    #[serde(default)]
    pub numeric: Vec<String>,
    #[serde(default)]
    pub transform: NumericTransform,
}

/// Per-field string dictionaries. Local id 0 of every field is the
/// out-of-vocabulary id; known values follow in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    fields: Vec<HashMap<String, u32>>,
}

pub const OOV_LOCAL_ID: u32 = 0;

impl Vocabulary {
    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(|f| f.len() + 1).collect()
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Local id of `value` in `field`; unknown or empty values map to OOV.
    pub fn local_id(&self, field: usize, value: &str) -> u32 {
        if value.is_empty() {
            return OOV_LOCAL_ID;
        }
        self.fields[field].get(value).copied().unwrap_or(OOV_LOCAL_ID)
    }

    fn insert(&mut self, field: usize, value: &str) -> u32 {
        if value.is_empty() {
            return OOV_LOCAL_ID;
        }
        let map = &mut self.fields[field];
        let next = map.len() as u32 + 1;
        *map.entry(value.to_owned()).or_insert(next)
    }
}

struct Columns {
    label: usize,
    categorical: Vec<usize>,
    numeric: Vec<usize>,
}

fn resolve_columns(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<Columns> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Config(format!("column {name:?} not found in header")))
    };
    if schema.categorical.is_empty() {
        return Err(Error::Config("schema needs at least one categorical column".into()));
    }
    Ok(Columns {
        label: find(&schema.label)?,
        categorical: schema.categorical.iter().map(|c| find(c)).collect::<Result<_>>()?,
        numeric: schema.numeric.iter().map(|c| find(c)).collect::<Result<_>>()?,
    })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::RawIo(std::io::Error::other(e.to_string())),
        _ => Error::Parse {
            line,
            message: e.to_string(),
        },
    }
}

/// Reads CSV text. With `vocab = None` the dictionaries are built from this
/// input; otherwise the given dictionaries are used unchanged.
pub fn read_csv<R: Read>(
    input: R,
    schema: &CsvSchema,
    vocab: Option<&Vocabulary>,
    split: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Vocabulary)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let cols = resolve_columns(&headers, schema)?;
    let k = cols.categorical.len();
    let mut dict = match vocab {
        Some(v) if v.num_fields() != k => {
            return Err(Error::Config(format!(
                "vocabulary has {} fields but schema has {k}",
                v.num_fields()
            )))
        }
        Some(v) => v.clone(),
        None => Vocabulary {
            fields: vec![HashMap::new(); k],
        },
    };
    let mut locals: Vec<u32> = Vec::new();
    let mut dense = Vec::new();
    let mut labels = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cell = |c: usize| rec.get(c).unwrap_or("").trim();
        let y: f64 = cell(cols.label).parse().map_err(|_| Error::Parse {
            line,
            message: format!("label {:?} is not a number", cell(cols.label)),
        })?;
        if y != 0.0 && y != 1.0 {
            return Err(Error::Parse {
                line,
                message: format!("label {y} is not 0 or 1"),
            });
        }
        labels.push(y as f32);
        for (f, &c) in cols.categorical.iter().enumerate() {
            locals.push(if vocab.is_some() {
                dict.local_id(f, cell(c))
            } else {
                dict.insert(f, cell(c))
            });
        }
        for &c in &cols.numeric {
            let raw = cell(c);
            let v: f64 = if raw.is_empty() {
                0.0
            } else {
                raw.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("numeric cell {raw:?} is not a number"),
                })?
            };
            dense.push(schema.transform.apply(v) as f32);
        }
    }
    if labels.is_empty() {
        return Err(Error::Config("CSV input has no data rows".into()));
    }
    let space = FeatureSpace::new(dict.cardinalities())?;
    let ids = locals
        .chunks_exact(k)
        .flat_map(|row| row.iter().enumerate().map(|(f, &l)| (space.offset(f) + l as usize) as u32))
        .collect();
    let ds = Dataset::new(space, cols.numeric.len(), ids, dense, labels, split, seed)?;
    Ok((ds, dict))
}

pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    split: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Vocabulary)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file), schema, None, split, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            cardinalities: vec![50, 20, 5],
            samples: 2_000,
            seed: 11,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generate_is_pure_in_spec() {
        let a = generate(&small_spec()).unwrap();
        let b = generate(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_checkpoint().to_bytes(), b.to_checkpoint().to_bytes());
        let c = generate(&SyntheticSpec { seed: 12, ..small_spec() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let ds = generate(&small_spec()).unwrap();
        let mut all: Vec<u32> = [Split::Train, Split::Valid, Split::Test]
            .iter()
            .flat_map(|&s| ds.split(s).to_vec())
            .collect();
        assert_eq!(ds.split(Split::Train).len(), 1600);
        assert_eq!(ds.split(Split::Valid).len(), 200);
        all.sort_unstable();
        assert_eq!(all, (0..2000).collect::<Vec<_>>());
    }

    #[test]
    fn unit_cardinalities_give_identical_ids() {
        let spec = SyntheticSpec {
            cardinalities: vec![1, 1, 1],
            samples: 50,
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec).unwrap();
        for s in 0..ds.len() {
            assert_eq!(ds.ids(s), &[0, 1, 2]);
        }
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let spec = SyntheticSpec {
            samples: 0,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn label_balance_is_recentred() {
        let ds = generate(&small_spec()).unwrap();
        let rate = ds.skew().positive_rate;
        assert!((0.2..=0.8).contains(&rate), "{rate}");
    }

    #[test]
    fn skew_counts_match_brute_force() {
        let ds = generate(&small_spec()).unwrap();
        let counts = ds.feature_counts();
        let mut seen = counts.clone();
        seen.sort_unstable();
        seen.reverse();
        let top = seen.len().div_ceil(10);
        let want = seen[..top].iter().sum::<u32>() as f64 / seen.iter().sum::<u32>() as f64;
        assert!((ds.skew().top10_share - want).abs() < 1e-15);
        assert_eq!(seen.iter().sum::<u32>() as usize, 2000 * 3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = generate(&small_spec()).unwrap();
        let back = Dataset::from_checkpoint(&ds.to_checkpoint()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn batch_gathers_rows_in_order() {
        let ds = generate(&small_spec()).unwrap();
        let b: Batch<f64> = ds.batch(&[5, 2]);
        assert_eq!(&b.ids[..3], ds.ids(5));
        assert_eq!(&b.ids[3..], ds.ids(2));
        assert_eq!(b.labels[1], ds.label(2) as f64);
        assert_eq!(b.dense.get(0, 1), ds.dense(5)[1] as f64);
    }

    fn toy_schema() -> CsvSchema {
        CsvSchema {
            label: "click".into(),
            categorical: vec!["site".into(), "app".into()],
            numeric: vec!["count".into()],
            transform: NumericTransform::Log1p,
        }
    }

    #[test]
    fn csv_dictionary_has_one_oov_per_field() {
        let text = "click,site,app,count\n1,a,x,3\n0,b,x,-2\n1,a,,0\n";
        let (ds, vocab) =
            read_csv(text.as_bytes(), &toy_schema(), None, SplitFractions::default(), 0).unwrap();
        assert_eq!(ds.space().cardinalities(), &[3, 2]);
        assert_eq!(vocab.local_id(0, "b"), 2);
        // Empty cell maps to the OOV id of field 1, global id 3 + 0.
        assert_eq!(ds.ids(2), &[1, 3]);
        assert_eq!(ds.dense(0)[0], 4f64.ln() as f32);
        assert_eq!(ds.dense(1)[0], 0.0);
    }

    #[test]
    fn csv_unseen_values_map_to_oov() {
        let text = "click,site,app,count\n1,a,x,3\n";
        let (_, vocab) =
            read_csv(text.as_bytes(), &toy_schema(), None, SplitFractions::default(), 0).unwrap();
        let test = "click,app,site,count\n0,y,a,1\n";
        let (ds, _) =
            read_csv(test.as_bytes(), &toy_schema(), Some(&vocab), SplitFractions::default(), 0)
                .unwrap();
        assert_eq!(ds.ids(0), &[1, 2]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let text = "click,site,app,count\n1,a,x,3\n1,a,x,zz\n";
        match read_csv(text.as_bytes(), &toy_schema(), None, SplitFractions::default(), 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = "click,site,app,count\n1,a,x\n";
        assert!(matches!(
            read_csv(ragged.as_bytes(), &toy_schema(), None, SplitFractions::default(), 0),
            Err(Error::Parse { line: 2, .. })
        ));
        let missing = "click,site,count\n1,a,3\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &toy_schema(), None, SplitFractions::default(), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn log_transform_formula() {
        for v in [-3.0, 0.0, 0.5, 10.0, 1e6] {
            let want = (1.0f64 + f64::max(v, 0.0)).ln();
            assert!((NumericTransform::Log1p.apply(v) - want).abs() < 1e-12);
        }
    }
}
