//! Memory-budget solver: turns a method and a budget fraction into concrete
//! hyperparameters whose frozen size is known in advance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{self, F32_BYTES, INDEX_BYTES};
use crate::posttrain::{DedupCodec, MagPqCodec, MagSvdCodec, PqCodec, SvdCodec, TtCodec};
use crate::space::FeatureSpace;
use crate::stores::{mixed_dim_bytes, mixed_dims, QuantBits, TtShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "double_hash")]
    DoubleHash,
    #[serde(rename = "compo")]
    Compo,
    #[serde(rename = "memcom")]
    MemCom,
    #[serde(rename = "robe")]
    Robe,
    #[serde(rename = "tt_rec")]
    TtRec,
    #[serde(rename = "dedup")]
    Dedup,
    #[serde(rename = "adapt_emb")]
    AdaptEmb,
    #[serde(rename = "mgqe")]
    Mgqe,
    #[serde(rename = "int8_16")]
    Int8_16,
    #[serde(rename = "alpt")]
    Alpt,
    #[serde(rename = "mde")]
    Mde,
    #[serde(rename = "deeplight")]
    DeepLight,
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "tt")]
    Tt,
    #[serde(rename = "pq")]
    Pq,
    #[serde(rename = "mag_pq")]
    MagPq,
    #[serde(rename = "svd")]
    Svd,
    #[serde(rename = "mag_svd")]
    MagSvd,
    #[serde(rename = "pruning")]
    Pruning,
}

impl Method {
    pub const TRAINING: [Method; 13] = [
        Method::Full,
        Method::DoubleHash,
        Method::Compo,
        Method::MemCom,
        Method::Robe,
        Method::TtRec,
        Method::Dedup,
        Method::AdaptEmb,
        Method::Mgqe,
        Method::Int8_16,
        Method::Alpt,
        Method::Mde,
        Method::DeepLight,
    ];

    pub const POST_TRAINING: [Method; 9] = [
        Method::Identity,
        Method::Tt,
        Method::Dedup,
        Method::Pq,
        Method::MagPq,
        Method::Int8_16,
        Method::Svd,
        Method::MagSvd,
        Method::Pruning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::DoubleHash => "double_hash",
            Method::Compo => "compo",
            Method::MemCom => "memcom",
            Method::Robe => "robe",
            Method::TtRec => "tt_rec",
            Method::Dedup => "dedup",
            Method::AdaptEmb => "adapt_emb",
            Method::Mgqe => "mgqe",
            Method::Int8_16 => "int8_16",
            Method::Alpt => "alpt",
            Method::Mde => "mde",
            Method::DeepLight => "deeplight",
            Method::Identity => "identity",
            Method::Tt => "tt",
            Method::Pq => "pq",
            Method::MagPq => "mag_pq",
            Method::Svd => "svd",
            Method::MagSvd => "mag_svd",
            Method::Pruning => "pruning",
        }
    }

    pub fn is_training(self) -> bool {
        Self::TRAINING.contains(&self)
    }

    pub fn is_post_training(self) -> bool {
        Self::POST_TRAINING.contains(&self)
    }

    /// Methods with a handful of fixed sizes; an unreachable budget is
    /// served by the nearest size instead of being skipped.
    pub fn is_discrete(self) -> bool {
        matches!(self, Method::Full | Method::Identity | Method::Int8_16 | Method::Alpt)
    }

    /// Methods trained from a warmed-up full table.
    pub fn needs_warm_start(self) -> bool {
        matches!(self, Method::Dedup | Method::Mgqe)
    }

    pub fn parse_training(s: &str) -> Result<Self> {
        let m: Method = s.parse()?;
        if !m.is_training() {
            return Err(Error::Config(format!("{s} is not a training method")));
        }
        Ok(m)
    }

    pub fn parse_post_training(s: &str) -> Result<Self> {
        let m: Method = s.parse()?;
        if !m.is_post_training() {
            return Err(Error::Config(format!("{s} is not a post-training codec")));
        }
        Ok(m)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::TRAINING
            .iter()
            .chain(&Self::POST_TRAINING)
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Solved hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanParams {
    Full,
    DoubleHash { rows: usize },
    Compo { m1: usize, m2: usize },
    MemCom { rows: usize },
    Robe { size: usize, chunk: usize },
    TtRec { shape: TtShape },
    Dedup { block: usize, max_reps: usize, projections: usize },
    Adaptive { shared_rows: usize, capacity: usize, threshold: u32 },
    MagPq { parts: usize, max_centroids: usize, groups: usize },
    Quantized { bits: QuantBits },
    Alpt { bits: QuantBits },
    MixedDim { scale: f64, alpha: f64, dims: Vec<usize> },
    Pruned { nnz: usize },
    Identity,
    Tt { shape: TtShape },
    Pq { parts: usize, centroids: usize },
    Svd { rank: usize },
    MagSvd { base_rank: usize, groups: usize },
    Prune { nnz: usize },
}

/// Knobs the solver does not search over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub adapt_threshold: u32,
    /// Share of the budget reserved for exclusive rows.
    pub adapt_exclusive_share: f64,
    pub robe_chunk: usize,
    pub mde_alpha: f64,
    pub tt_cores: usize,
    /// Rank cap for the trainable TT table; lookup cost grows with the
    /// square of the rank.
    pub tt_train_max_rank: usize,
    pub max_centroids: usize,
    pub magnitude_groups: usize,
    pub lsh_projections: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            adapt_threshold: 10,
            adapt_exclusive_share: 0.5,
            robe_chunk: 4,
            mde_alpha: 0.3,
            tt_cores: 3,
            tt_train_max_rank: 32,
            max_centroids: 256,
            magnitude_groups: 4,
            lsh_projections: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub method: Method,
    pub params: PlanParams,
    pub budget_fraction: f64,
    pub budget_bytes: usize,
    /// Predicted frozen bytes of `params`. When infeasible, the nearest
    /// achievable size.
    pub achieved_bytes: usize,
    pub baseline_bytes: usize,
    pub feasible: bool,
}

impl CompressionPlan {
    /// Achieved size as a percentage of the baseline, one decimal.
    pub fn achieved_percent(&self) -> String {
        memory::percent_of(self.achieved_bytes, self.baseline_bytes)
    }

    /// Whether a benchmark should run this plan: feasible plans always,
    /// infeasible ones only for discrete methods.
    pub fn runnable(&self) -> bool {
        self.feasible || self.method.is_discrete()
    }

    /// `achieved > budget` or `achieved < budget`.
    pub fn direction(&self) -> &'static str {
        if self.achieved_bytes > self.budget_bytes {
            "over"
        } else {
            "under"
        }
    }
}

pub fn budget_bytes(fraction: f64, baseline: usize) -> usize {
    // The relative nudge keeps fractions such as 0.1 from flooring one
    // byte short after binary rounding.
    (fraction * baseline as f64 * (1.0 + 1e-12)).floor() as usize
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("budget fraction {fraction} must lie in (0, 1]")));
    }
    Ok(())
}

struct Ctx<'a> {
    space: Option<&'a FeatureSpace>,
    n: usize,
    dim: usize,
    budget: usize,
    cfg: &'a SolverConfig,
}

/// A solved candidate: predicted bytes and parameters.
type Candidate = (usize, PlanParams);

enum Outcome {
    Fits(Candidate),
    /// Nothing fits; the smallest achievable candidate, if any exists.
    Nearest(Option<Candidate>),
}

/// The candidate closest to the budget in log-ratio; ties go to the
/// smaller one.
fn nearest_in_ratio(options: Vec<Candidate>, budget: usize) -> Candidate {
    let dist = |b: usize| ((b.max(1) as f64) / (budget.max(1) as f64)).ln().abs();
    options
        .into_iter()
        .min_by(|a, b| dist(a.0).total_cmp(&dist(b.0)).then(a.0.cmp(&b.0)))
        .expect("at least one option")
}

/// Largest `x` in `[lo, hi]` with `bytes(x) <= budget` for a
/// non-decreasing `bytes`.
fn largest_fitting(lo: usize, hi: usize, budget: usize, bytes: impl Fn(usize) -> usize) -> Option<usize> {
    if lo > hi || bytes(lo) > budget {
        return None;
    }
    let (mut lo, mut hi) = (lo, hi);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if bytes(mid) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}

fn divisors(d: usize) -> Vec<usize> {
    (1..=d).filter(|k| d % k == 0).collect()
}

fn tt_shape(n: usize, d: usize, cores: usize, rank: usize) -> Result<TtShape> {
    let base = TtShape::balanced(n, d, cores, rank)?;
    let mut ranks = base.ranks.clone();
    for (i, r) in ranks.iter_mut().enumerate().take(cores).skip(1) {
        *r = rank.min(base.max_useful_rank(i));
    }
    TtShape::new(base.row_factors, base.col_factors, ranks)
}

fn solve_tt(ctx: &Ctx, training: bool) -> Result<Outcome> {
    let (n, d, cores) = (ctx.n, ctx.dim, ctx.cfg.tt_cores);
    let full = TtShape::balanced(n, d, cores, 1)?.with_full_ranks();
    let mut max_rank = full.ranks.iter().copied().max().unwrap_or(1);
    if training {
        max_rank = max_rank.min(ctx.cfg.tt_train_max_rank.max(1));
    }
    let bytes = |r: usize| TtCodec::predicted_bytes(&tt_shape(n, d, cores, r).expect("valid shape"));
    let wrap = |shape: TtShape| {
        if training {
            PlanParams::TtRec { shape }
        } else {
            PlanParams::Tt { shape }
        }
    };
    Ok(match largest_fitting(1, max_rank, ctx.budget, bytes) {
        Some(r) => Outcome::Fits((bytes(r), wrap(tt_shape(n, d, cores, r)?))),
        None => Outcome::Nearest(Some((bytes(1), wrap(tt_shape(n, d, cores, 1)?)))),
    })
}

fn solve_dedup(ctx: &Ctx) -> Outcome {
    let (n, d, budget) = (ctx.n, ctx.dim, ctx.budget);
    let projections = ctx.cfg.lsh_projections;
    let params = |k: usize, reps: usize| PlanParams::Dedup {
        block: k * d,
        max_reps: reps,
        projections,
    };
    let mapping = |k: usize| n.div_ceil(k) * INDEX_BYTES;
    let reps_for = |k: usize| {
        budget
            .checked_sub(mapping(k))
            .map_or(0, |rest| rest / (k * d * F32_BYTES))
            .min(n.div_ceil(k))
    };
    // Row blocks by default; multi-row blocks once the mapping would
    // take more than half of the budget.
    let first = (1..=n).find(|&k| mapping(k) * 2 <= budget);
    let pick = first
        .filter(|&k| reps_for(k) >= 1)
        .or_else(|| (1..=n).find(|&k| reps_for(k) >= 1));
    match pick {
        Some(k) => {
            let reps = reps_for(k);
            Outcome::Fits((DedupCodec::predicted_bytes(n, d, k * d, reps), params(k, reps)))
        }
        None => {
            let best = (1..=n)
                .min_by_key(|&k| DedupCodec::predicted_bytes(n, d, k * d, 1))
                .expect("n >= 1");
            Outcome::Nearest(Some((DedupCodec::predicted_bytes(n, d, best * d, 1), params(best, 1))))
        }
    }
}

fn solve_mag_pq(ctx: &Ctx) -> Outcome {
    let (n, d, g) = (ctx.n, ctx.dim, ctx.cfg.magnitude_groups);
    let mut options = Vec::new();
    let mut k = ctx.cfg.max_centroids.max(1);
    loop {
        for &parts in &divisors(d) {
            let bytes = MagPqCodec::predicted_bytes(n, d, parts, k, g);
            options.push((bytes, PlanParams::MagPq { parts, max_centroids: k, groups: g }));
        }
        if k <= 1 << (g - 1) {
            break;
        }
        k /= 2;
    }
    pick_largest(options, ctx.budget)
}

fn solve_pq(ctx: &Ctx) -> Outcome {
    let (n, d) = (ctx.n, ctx.dim);
    let mut options = Vec::new();
    let mut k = ctx.cfg.max_centroids.max(2);
    while k >= 2 {
        for &parts in &divisors(d) {
            options.push((PqCodec::predicted_bytes(n, d, parts, k), PlanParams::Pq { parts, centroids: k }));
        }
        k /= 2;
    }
    pick_largest(options, ctx.budget)
}

/// The largest candidate within budget (earlier candidates win ties), or
/// the smallest candidate when none fits.
fn pick_largest(options: Vec<Candidate>, budget: usize) -> Outcome {
    let mut best: Option<Candidate> = None;
    for c in options.iter().filter(|c| c.0 <= budget) {
        if best.as_ref().is_none_or(|b| c.0 > b.0) {
            best = Some(c.clone());
        }
    }
    match best {
        Some(c) => Outcome::Fits(c),
        None => Outcome::Nearest(options.into_iter().min_by_key(|c| c.0)),
    }
}

fn solve_mde(ctx: &Ctx) -> Outcome {
    let space = ctx.space.expect("mixed dimensions need a feature space");
    let (d, alpha) = (ctx.dim, ctx.cfg.mde_alpha);
    let cards = space.cardinalities();
    let at = |scale: f64| {
        let dims = mixed_dims(cards, d, scale, alpha);
        (mixed_dim_bytes(cards, &dims, d), dims)
    };
    let wrap = |scale: f64, dims: Vec<usize>| PlanParams::MixedDim { scale, alpha, dims };
    let (min_bytes, min_dims) = at(0.0);
    if min_bytes > ctx.budget {
        return Outcome::Nearest(Some((min_bytes, wrap(0.0, min_dims))));
    }
    // Widths grow with the scale; bisect it in log space.
    let max_card = cards.iter().copied().max().unwrap_or(1) as f64;
    let mut hi = (d as f64) * max_card.powf(alpha) * 2.0 + 1.0;
    let (hi_bytes, hi_dims) = at(hi);
    if hi_bytes <= ctx.budget {
        return Outcome::Fits((hi_bytes, wrap(hi, hi_dims)));
    }
    let mut lo = 1e-6;
    if at(lo).0 > ctx.budget {
        return Outcome::Fits((min_bytes, wrap(0.0, min_dims)));
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if at(mid).0 <= ctx.budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (bytes, dims) = at(lo);
    Outcome::Fits((bytes, wrap(lo, dims)))
}

fn solve_adaptive(ctx: &Ctx) -> Outcome {
    let (n, d, budget) = (ctx.n, ctx.dim, ctx.budget);
    let row = d * F32_BYTES;
    let exclusive_row = row + 2 * INDEX_BYTES;
    let bytes = |m: usize, cap: usize| (m + cap) * row + cap * 2 * INDEX_BYTES;
    let params = |m: usize, cap: usize| PlanParams::Adaptive {
        shared_rows: m,
        capacity: cap,
        threshold: ctx.cfg.adapt_threshold,
    };
    let cap = ((budget as f64 * ctx.cfg.adapt_exclusive_share) as usize / exclusive_row).min(n);
    let shared = (budget.saturating_sub(cap * exclusive_row) / row).min(n);
    if shared == 0 {
        return Outcome::Nearest(Some((bytes(1, 0), params(1, 0))));
    }
    Outcome::Fits((bytes(shared, cap), params(shared, cap)))
}

fn solve_inner(method: Method, ctx: &Ctx, training: bool) -> Result<Outcome> {
    let (n, d, budget) = (ctx.n, ctx.dim, ctx.budget);
    let row = d * F32_BYTES;
    let baseline = memory::baseline_bytes(n, d);
    Ok(match method {
        Method::Full | Method::Identity => {
            let p = if method == Method::Full {
                PlanParams::Full
            } else {
                PlanParams::Identity
            };
            if baseline <= budget {
                Outcome::Fits((baseline, p))
            } else {
                Outcome::Nearest(Some((baseline, p)))
            }
        }
        Method::DoubleHash => match (budget / row).min(n) {
            0 => Outcome::Nearest(Some((row, PlanParams::DoubleHash { rows: 1 }))),
            m => Outcome::Fits((m * row, PlanParams::DoubleHash { rows: m })),
        },
        Method::Compo => {
            let rows = |m1: usize| m1 + n.div_ceil(m1);
            let root = (n as f64).sqrt().ceil() as usize;
            let start = (root.saturating_sub(1)..=root + 1)
                .filter(|&m| m >= 1)
                .min_by_key(|&m| (rows(m), m))
                .expect("n >= 1");
            let limit = budget / row;
            match largest_fitting(start, n, limit, rows) {
                Some(m1) => Outcome::Fits((rows(m1) * row, PlanParams::Compo { m1, m2: n.div_ceil(m1) })),
                None => Outcome::Nearest(Some((
                    rows(start) * row,
                    PlanParams::Compo {
                        m1: start,
                        m2: n.div_ceil(start),
                    },
                ))),
            }
        }
        Method::MemCom => {
            let aux = 2 * n * F32_BYTES;
            match (budget.saturating_sub(aux) / row).min(n) {
                0 => Outcome::Nearest(Some((aux + row, PlanParams::MemCom { rows: 1 }))),
                m => Outcome::Fits((aux + m * row, PlanParams::MemCom { rows: m })),
            }
        }
        Method::Robe => {
            let chunk = if d % ctx.cfg.robe_chunk == 0 {
                ctx.cfg.robe_chunk
            } else {
                d
            };
            let size = (budget / F32_BYTES).min(n * d);
            if size < chunk {
                Outcome::Nearest(Some((chunk * F32_BYTES, PlanParams::Robe { size: chunk, chunk })))
            } else {
                Outcome::Fits((size * F32_BYTES, PlanParams::Robe { size, chunk }))
            }
        }
        Method::TtRec | Method::Tt => solve_tt(ctx, training)?,
        Method::Dedup => solve_dedup(ctx),
        Method::AdaptEmb => solve_adaptive(ctx),
        Method::Mgqe | Method::MagPq => solve_mag_pq(ctx),
        Method::Pq => solve_pq(ctx),
        Method::Int8_16 => {
            let options: Vec<Candidate> = [QuantBits::I16, QuantBits::I8]
                .into_iter()
                .map(|bits| {
                    let values = n * d * bits.width();
                    let bytes = if training { values } else { values + 2 * n * F32_BYTES };
                    (bytes, PlanParams::Quantized { bits })
                })
                .collect();
            discrete(options, budget)
        }
        Method::Alpt => {
            let options = [QuantBits::I16, QuantBits::I8]
                .into_iter()
                .map(|bits| (n * d * bits.width() + n * F32_BYTES, PlanParams::Alpt { bits }))
                .collect();
            discrete(options, budget)
        }
        Method::Mde => solve_mde(ctx),
        Method::DeepLight | Method::Pruning => {
            let nnz = memory::max_sparse_nnz(n, d, budget);
            let wrap = |nnz| {
                if method == Method::DeepLight {
                    PlanParams::Pruned { nnz }
                } else {
                    PlanParams::Prune { nnz }
                }
            };
            if nnz == 0 {
                Outcome::Nearest(Some((memory::sparse_bytes(n, d, 1).1, wrap(1))))
            } else {
                Outcome::Fits((memory::sparse_bytes(n, d, nnz).1, wrap(nnz)))
            }
        }
        Method::Svd => {
            let per_rank = (n + d) * F32_BYTES;
            match (budget / per_rank).min(n.min(d)) {
                0 => Outcome::Nearest(Some((per_rank, PlanParams::Svd { rank: 1 }))),
                r => Outcome::Fits((SvdCodec::predicted_bytes(n, d, r), PlanParams::Svd { rank: r })),
            }
        }
        Method::MagSvd => {
            let g = ctx.cfg.magnitude_groups;
            let bytes = |r: usize| MagSvdCodec::predicted_bytes(n, d, r, g);
            let params = |r: usize| PlanParams::MagSvd { base_rank: r, groups: g };
            match largest_fitting(1, d.max(1), budget, bytes) {
                Some(r) => Outcome::Fits((bytes(r), params(r))),
                None => Outcome::Nearest(Some((bytes(1), params(1)))),
            }
        }
    })
}

/// Discrete methods take the size nearest the budget in ratio, even when
/// it lies above.
fn discrete(options: Vec<Candidate>, budget: usize) -> Outcome {
    let pick = nearest_in_ratio(options, budget);
    if pick.0 <= budget {
        Outcome::Fits(pick)
    } else {
        Outcome::Nearest(Some(pick))
    }
}

fn finish(method: Method, fraction: f64, budget: usize, baseline: usize, outcome: Outcome) -> Result<CompressionPlan> {
    let ((achieved, params), feasible) = match outcome {
        Outcome::Fits(c) => (c, true),
        Outcome::Nearest(Some(c)) => (c, false),
        Outcome::Nearest(None) => {
            return Err(Error::invalid(format!("{method} has no configuration for this shape")))
        }
    };
    Ok(CompressionPlan {
        method,
        params,
        budget_fraction: fraction,
        budget_bytes: budget,
        achieved_bytes: achieved,
        baseline_bytes: baseline,
        feasible,
    })
}

/// Plans a trainable store for `space` with width `dim`.
pub fn solve(method: Method, fraction: f64, space: &FeatureSpace, dim: usize, cfg: &SolverConfig) -> Result<CompressionPlan> {
    check_fraction(fraction)?;
    if !method.is_training() {
        return Err(Error::invalid(format!("{method} is not a training method")));
    }
    let n = space.num_features();
    let baseline = memory::baseline_bytes(n, dim);
    let budget = budget_bytes(fraction, baseline);
    let ctx = Ctx {
        space: Some(space),
        n,
        dim,
        budget,
        cfg,
    };
    let outcome = solve_inner(method, &ctx, true)?;
    finish(method, fraction, budget, baseline, outcome)
}

/// Plans a post-training codec for a `rows x dim` matrix.
pub fn solve_codec(method: Method, fraction: f64, rows: usize, dim: usize, cfg: &SolverConfig) -> Result<CompressionPlan> {
    check_fraction(fraction)?;
    if !method.is_post_training() {
        return Err(Error::invalid(format!("{method} is not a post-training codec")));
    }
    if rows == 0 || dim == 0 {
        return Err(Error::invalid("matrix must be non-empty"));
    }
    let baseline = memory::baseline_bytes(rows, dim);
    let budget = budget_bytes(fraction, baseline);
    let ctx = Ctx {
        space: None,
        n: rows,
        dim,
        budget,
        cfg,
    };
    let outcome = solve_inner(method, &ctx, false)?;
    finish(method, fraction, budget, baseline, outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRange {
    pub min_bytes: usize,
    pub max_bytes: usize,
    /// The only achievable sizes, for discrete methods.
    pub discrete: Option<Vec<usize>>,
    pub baseline_bytes: usize,
}

impl FeasibleRange {
    pub fn discrete_percents(&self) -> Vec<String> {
        self.discrete
            .iter()
            .flatten()
            .map(|&b| memory::percent_of(b, self.baseline_bytes))
            .collect()
    }

    pub fn contains(&self, bytes: usize) -> bool {
        match &self.discrete {
            Some(sizes) => sizes.iter().any(|&s| s <= bytes),
            None => self.min_bytes <= bytes,
        }
    }
}

/// Smallest and largest inference sizes a training method can reach.
pub fn feasible_range(method: Method, space: &FeatureSpace, dim: usize, cfg: &SolverConfig) -> Result<FeasibleRange> {
    let n = space.num_features();
    let baseline = memory::baseline_bytes(n, dim);
    let run = |fraction: f64| solve(method, fraction, space, dim, cfg);
    if method.is_discrete() {
        let sizes: Vec<usize> = match method {
            Method::Full => vec![baseline],
            Method::Int8_16 => vec![n * dim * 2, n * dim],
            Method::Alpt => vec![n * dim * 2 + 4 * n, n * dim + 4 * n],
            _ => unreachable!(),
        };
        return Ok(FeasibleRange {
            min_bytes: *sizes.iter().min().expect("non-empty"),
            max_bytes: *sizes.iter().max().expect("non-empty"),
            discrete: Some(sizes),
            baseline_bytes: baseline,
        });
    }
    let tiny = run(1e-12)?;
    let full = run(1.0)?;
    Ok(FeasibleRange {
        min_bytes: tiny.achieved_bytes,
        max_bytes: full.achieved_bytes,
        discrete: None,
        baseline_bytes: baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn hashed_rows_scale_linearly() {
        let space = FeatureSpace::single(1_000_000).unwrap();
        let p = solve(Method::DoubleHash, 0.10, &space, 16, &cfg()).unwrap();
        assert_eq!(p.params, PlanParams::DoubleHash { rows: 100_000 });
        assert!(p.feasible);
    }

    #[test]
    fn quantization_is_discrete() {
        let space = FeatureSpace::single(100_000).unwrap();
        let p = solve(Method::Int8_16, 0.10, &space, 16, &cfg()).unwrap();
        assert!(!p.feasible);
        assert_eq!(p.achieved_percent(), "25.0%");
        let p = solve(Method::Int8_16, 0.5, &space, 16, &cfg()).unwrap();
        assert!(p.feasible);
        assert_eq!(p.achieved_percent(), "50.0%");
        let a = solve(Method::Alpt, 0.5, &space, 16, &cfg()).unwrap();
        assert_eq!((a.feasible, a.achieved_percent().as_str()), (false, "56.3%"));
        let a = solve(Method::Alpt, 0.1, &space, 16, &cfg()).unwrap();
        assert_eq!((a.feasible, a.achieved_percent().as_str()), (false, "31.3%"));
        let r = feasible_range(Method::Alpt, &space, 16, &cfg()).unwrap();
        assert_eq!(r.discrete_percents(), vec!["56.3%", "31.3%"]);
    }

    #[test]
    fn pruning_nnz_matches_formula() {
        let space = FeatureSpace::single(1000).unwrap();
        let p = solve(Method::DeepLight, 0.10, &space, 16, &cfg()).unwrap();
        let budget = 6400;
        let csr = (budget - 1001 * 4) / 8;
        let coo = budget / 12;
        assert_eq!(p.params, PlanParams::Pruned { nnz: csr.max(coo) });
        assert!(p.achieved_bytes <= budget);
    }

    #[test]
    fn compo_and_memcom_ranges() {
        let space = FeatureSpace::single(100_000).unwrap();
        for beta in [0.5, 0.1, 0.01] {
            let p = solve(Method::Compo, beta, &space, 16, &cfg()).unwrap();
            assert!(p.feasible && p.achieved_bytes <= p.budget_bytes);
            if let PlanParams::Compo { m1, m2 } = p.params {
                assert!(m1 * m2 >= 100_000);
            }
        }
        assert!(!solve(Method::Compo, 0.001, &space, 16, &cfg()).unwrap().feasible);
        // 8n bytes of scale and bias are 12.5% of the baseline at d = 16.
        assert!(!solve(Method::MemCom, 0.1, &space, 16, &cfg()).unwrap().feasible);
        assert!(solve(Method::MemCom, 0.5, &space, 16, &cfg()).unwrap().feasible);
    }

    #[test]
    fn mde_floor_is_one_dimension() {
        let space = FeatureSpace::new(vec![50_000, 30_000, 20_000]).unwrap();
        let r = feasible_range(Method::Mde, &space, 16, &cfg()).unwrap();
        assert_eq!(r.min_bytes, (100_000 + 3 * 16) * 4);
        let p = solve(Method::Mde, 0.1, &space, 16, &cfg()).unwrap();
        assert!(p.feasible && p.achieved_bytes <= p.budget_bytes);
    }

    #[test]
    fn continuous_methods_are_monotone() {
        let space = FeatureSpace::new(vec![60_000, 40_000]).unwrap();
        for m in [
            Method::DoubleHash,
            Method::Compo,
            Method::MemCom,
            Method::Robe,
            Method::TtRec,
            Method::Dedup,
            Method::AdaptEmb,
            Method::Mde,
            Method::DeepLight,
        ] {
            let mut last = 0;
            for beta in [0.001, 0.01, 0.1, 0.5] {
                let p = solve(m, beta, &space, 16, &cfg()).unwrap();
                if p.feasible {
                    assert!(p.achieved_bytes >= last, "{m} at {beta}");
                    assert!(p.achieved_bytes <= p.budget_bytes);
                    last = p.achieved_bytes;
                }
            }
        }
    }

    #[test]
    fn svd_extremes() {
        let p = solve_codec(Method::Svd, 0.001, 10_000, 768, &cfg()).unwrap();
        assert!(!p.feasible);
        let p = solve_codec(Method::Svd, 0.5, 10_000, 768, &cfg()).unwrap();
        assert!(p.feasible);
    }

    #[test]
    fn rejects_bad_fraction() {
        let space = FeatureSpace::single(10).unwrap();
        assert!(solve(Method::Full, 0.0, &space, 4, &cfg()).is_err());
        assert!(solve(Method::Full, 1.5, &space, 4, &cfg()).is_err());
        assert!(solve(Method::Pq, 0.5, &space, 4, &cfg()).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::TRAINING.iter().chain(&Method::POST_TRAINING) {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), *m);
            let json = serde_json::to_string(m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }
}
