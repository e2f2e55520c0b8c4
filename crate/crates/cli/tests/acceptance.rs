//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use embcomp::budget::{solve, solve_codec, Method, SolverConfig};
use embcomp::data::Batch;
use embcomp::eval::{recall_between, recall_overlap, time_batch};
use embcomp::eval::grid::CellReport;
use embcomp::memory::{self, percent_of};
use embcomp::model::{build_store, check_gradients, DlrmLite, DlrmShape};
use embcomp::posttrain::{
    build_codec, compress, truncated_svd, DedupCodec, IdentityCodec, IntCodec, LshParams,
    MagPqCodec, PqCodec, SvdCodec, ThresholdPrune, TtCodec,
};
use embcomp::stores::{
    dequantize, quantize_value, AdaptiveTable, AlptTable, CompoTable, DoubleHashTable,
    EmbeddingStore, FullTable, GatherStore, InitConfig, MemComTable, MixedDimTable, PrunedTable,
    QuantBits, QuantRange, QuantizedTable, RobeArray, Rounding, TtRecTable, TtShape,
};
use embcomp::{auc, generate, train, Codec, DenseMatrix, FeatureSpace, SyntheticSpec, TrainConfig};
use embcomp_cli::commands::gaussian_matrix;
use rand::Rng;

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_MAX_ROWS: usize = 50;
const GRAD_MAX_DIM: usize = 8;
const GRAD_MAX_SECONDS: f64 = 60.0;

const BUDGETS: [f64; 4] = [0.5, 0.1, 0.01, 0.001];
const SOUNDNESS_ROWS: usize = 100_000;
const SOUNDNESS_DIM: usize = 16;
const PLAN_SLACK: f64 = 0.01;

const AUC_INSTANCES: usize = 200;
const AUC_MAX_SAMPLES: usize = 1000;
const AUC_TOL: f64 = 1e-12;

const SR_DRAWS: usize = 100_000;
const SR_VALUE: f64 = 0.3;
const SR_SCALE: f64 = 0.25;
const SR_SIGMAS: f64 = 4.0;

const SVD_REL_TOL: f64 = 1e-6;
const TT_ROUND_TRIP_TOL: f64 = 1e-5;
const COMPO_MAX_ROWS: usize = 10_000;

const E2E_AUC_TOL: f64 = 0.03;
const E2E_MONOTONE_TOL: f64 = 0.005;
const E2E_MAX_SECONDS: f64 = 600.0;
const HASHING: [Method; 4] = [Method::DoubleHash, Method::Compo, Method::MemCom, Method::Robe];

const RETRIEVAL_ROWS: usize = 10_000;
const RETRIEVAL_DIM: usize = 64;
const RETRIEVAL_QUERIES: usize = 100;
const RETRIEVAL_K: usize = 10;
const INT_RECALL_TOL: f64 = 0.02;

const LATENCY_BATCH: usize = 1024;
const LATENCY_REPEATS: usize = 31;
const QUANT_LATENCY_FACTOR: f64 = 3.0;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn init(seed: u64, scale: f64) -> InitConfig {
    InitConfig { seed, scale }
}

// ---------------------------------------------------------------- gradients

fn gradient_stores(n: usize, d: usize) -> Vec<Box<dyn EmbeddingStore<f64>>> {
    let i = init(17, 0.5);
    let half = n / 2;
    let space = FeatureSpace::new(vec![half, n - half]).unwrap();
    let mut pruned = PrunedTable::<f64>::new(n, d, n * d / 2, i).unwrap();
    pruned.prune_to(n * d * 3 / 5);
    let mut adaptive = AdaptiveTable::<f64>::new(n, d, 8, 10, 2, 3, i).unwrap();
    adaptive.observe(&[1, 1, 25, 25, 25, 7]).unwrap();
    let mut rng = embcomp::rng::seeded(8, 0);
    let warm = DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-0.5f32..0.5)).collect())
        .unwrap();
    let gather = |c: Box<dyn Codec>| -> Box<dyn EmbeddingStore<f64>> {
        Box::new(GatherStore::<f64>::new(c.into_gather().expect("gather codec")))
    };
    let lsh = LshParams {
        projections: 4,
        bucket_width: 0.5,
        seed: 2,
    };
    vec![
        Box::new(FullTable::<f64>::new(n, d, i)),
        Box::new(DoubleHashTable::<f64>::new(n, d, 7, 3, i).unwrap()),
        Box::new(CompoTable::<f64>::new(n, d, 7, 6, i).unwrap()),
        Box::new(MemComTable::<f64>::new(n, d, 10, 3, i).unwrap()),
        Box::new(RobeArray::<f64>::new(n, d, 30, 2, 3, i).unwrap()),
        Box::new(TtRecTable::<f64>::new(n, TtShape::balanced(n, d, 3, 2).unwrap(), i).unwrap()),
        Box::new(
            QuantizedTable::<f64>::new(n, d, QuantBits::I16, QuantRange::Fixed(1.0), Rounding::Stochastic, i)
                .unwrap(),
        ),
        Box::new(AlptTable::<f64>::new(n, d, QuantBits::I16, 1.0, i).unwrap()),
        Box::new(MixedDimTable::<f64>::new(space, d, vec![2, d], i).unwrap()),
        Box::new(pruned),
        Box::new(adaptive),
        gather(Box::new(PqCodec::fit(&warm, 2, 8, 1).unwrap())),
        gather(Box::new(MagPqCodec::fit(&warm, 2, 8, 2, 1).unwrap())),
        gather(Box::new(DedupCodec::fit(&warm, 2, lsh).unwrap())),
    ]
}

fn gradient_oracle() -> Check {
    let (n, d) = (40, 4);
    assert!(n <= GRAD_MAX_ROWS && d <= GRAD_MAX_DIM);
    let start = Instant::now();
    let mut rng = embcomp::rng::seeded(5, 0);
    let rows = 6;
    let mut ids = Vec::new();
    for _ in 0..rows {
        ids.push(rng.random_range(0..(n / 2) as u32));
        ids.push(rng.random_range((n / 2) as u32..n as u32));
    }
    let batch = Batch {
        ids,
        dense: DenseMatrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap(),
        labels: (0..rows).map(|i| (i % 2) as f64).collect(),
    };
    let shape = DlrmShape {
        fields: 2,
        dim: d,
        dense_width: 3,
        hidden: 5,
    };
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    for mut store in gradient_stores(n, d) {
        let mut model = DlrmLite::<f64>::new(shape, 4).map_err(err)?;
        let check = check_gradients(&mut model, store.as_mut(), &batch, 1e-6).map_err(err)?;
        ensure(check.max_rel_error < GRAD_REL_TOL, || {
            format!("{}: relative error {:.3e}", store.name(), check.max_rel_error)
        })?;
        if check.max_rel_error > worst.0 {
            worst = (check.max_rel_error, store.name().to_string());
        }
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < GRAD_MAX_SECONDS, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{count} stores, worst relative error {:.2e} ({}), {secs:.1}s",
        worst.0, worst.1
    ))
}

// ------------------------------------------------------------------ budgets

fn default_space() -> FeatureSpace {
    let space = FeatureSpace::new(SyntheticSpec::default().cardinalities).unwrap();
    assert_eq!(space.num_features(), SOUNDNESS_ROWS);
    space
}

fn frozen_store_bytes(plan: &embcomp::CompressionPlan, space: &FeatureSpace, warm: &DenseMatrix<f32>) -> Result<usize, String> {
    let mut store: Box<dyn EmbeddingStore<f32>> = if plan.method.needs_warm_start() {
        let codec = build_codec(warm, &plan.params, 0).map_err(err)?;
        Box::new(GatherStore::<f32>::new(codec.into_gather().ok_or("no gather form")?))
    } else {
        build_store(plan, space, SOUNDNESS_DIM, init(0, 0.05), 1.0).map_err(err)?
    };
    store.freeze().map_err(err)
}

fn budget_soundness() -> Check {
    let space = default_space();
    let cfg = SolverConfig::default();
    let warm = gaussian_matrix(SOUNDNESS_ROWS, SOUNDNESS_DIM, 0, 1);
    let mut checked = 0;
    let mut skipped = 0;
    let within = |bytes: usize, plan: &embcomp::CompressionPlan| -> Result<(), String> {
        ensure(bytes <= plan.budget_bytes, || {
            format!("{} at {}: {bytes} bytes over budget {}", plan.method, plan.budget_fraction, plan.budget_bytes)
        })?;
        let gap = (bytes as f64 - plan.achieved_bytes as f64).abs();
        ensure(gap <= PLAN_SLACK * plan.achieved_bytes as f64, || {
            format!(
                "{} at {}: {bytes} bytes vs predicted {}",
                plan.method, plan.budget_fraction, plan.achieved_bytes
            )
        })
    };
    for method in Method::TRAINING {
        for beta in BUDGETS {
            let plan = solve(method, beta, &space, SOUNDNESS_DIM, &cfg).map_err(err)?;
            if !plan.feasible {
                skipped += 1;
                continue;
            }
            within(frozen_store_bytes(&plan, &space, &warm)?, &plan)?;
            checked += 1;
        }
    }
    for method in Method::POST_TRAINING {
        for beta in BUDGETS {
            let plan = solve_codec(method, beta, SOUNDNESS_ROWS, SOUNDNESS_DIM, &cfg).map_err(err)?;
            if !plan.feasible {
                skipped += 1;
                continue;
            }
            let out = compress(&warm, &plan, 0).map_err(err)?;
            ensure(out.codec.to_checkpoint().map_err(err)?.payload.len() == out.bytes, || {
                format!("{method}: payload length differs from reported bytes")
            })?;
            within(out.bytes, &plan)?;
            checked += 1;
        }
    }
    let expect = [
        (Method::Int8_16, 0.1, "25.0%"),
        (Method::Alpt, 0.5, "56.3%"),
        (Method::Alpt, 0.1, "31.3%"),
    ];
    for (method, beta, want) in expect {
        let plan = solve(method, beta, &space, SOUNDNESS_DIM, &cfg).map_err(err)?;
        ensure(!plan.feasible && plan.achieved_percent() == want, || {
            format!("{method} at {beta}: got {} (feasible={})", plan.achieved_percent(), plan.feasible)
        })?;
    }
    Ok(format!(
        "{checked} feasible cells within budget and {PLAN_SLACK} of plan, {skipped} infeasible; INT8/16 (25.0%), ALPT (56.3%)/(31.3%)"
    ))
}

// ---------------------------------------------------------- training memory

fn small_dataset() -> embcomp::Dataset {
    generate(&SyntheticSpec {
        cardinalities: vec![300, 200, 100],
        samples: 4000,
        seed: 2,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn training_memory() -> Check {
    let space = default_space();
    let baseline = space.baseline_bytes(SOUNDNESS_DIM);
    let full = FullTable::<f32>::new(SOUNDNESS_ROWS, SOUNDNESS_DIM, init(0, 0.05));
    let got = percent_of(full.training_bytes(), baseline);
    ensure(got == "300.0%", || format!("full table: {got}"))?;
    let cfg = SolverConfig::default();
    for beta in BUDGETS {
        let plan = solve(Method::DeepLight, beta, &space, SOUNDNESS_DIM, &cfg).map_err(err)?;
        let store = build_store(&plan, &space, SOUNDNESS_DIM, init(0, 0.05), 1.0).map_err(err)?;
        let got = percent_of(store.training_bytes(), baseline);
        ensure(got == "306.3%", || format!("pruned at {beta}: {got}"))?;
    }
    let ds = small_dataset();
    let tc = TrainConfig {
        max_epochs: 1,
        warmup_epochs: 1,
        prune_epochs: 1,
        ..TrainConfig::default()
    };
    for (method, beta, want) in [(Method::Full, 1.0, "300.0%"), (Method::DeepLight, 0.1, "306.3%")] {
        let plan = solve(method, beta, ds.space(), tc.dim, &cfg).map_err(err)?;
        let r = train(&plan, &ds, &tc, 0).map_err(err)?.report;
        let got = percent_of(r.training_bytes, r.baseline_bytes);
        ensure(got == want, || format!("trained {method}: {got}"))?;
    }
    Ok("full 300.0%, pruning 306.3% (store accounting and training reports)".into())
}

// ---------------------------------------------------------------------- AUC

fn pair_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn auc_oracle() -> Check {
    let mut rng = embcomp::rng::seeded(31, 0);
    let mut worst = 0.0f64;
    for _ in 0..AUC_INSTANCES {
        let len = rng.random_range(2..=AUC_MAX_SAMPLES);
        let levels = rng.random_range(2..50);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let mut labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let fast = auc(&scores, &labels).map_err(err)?;
        worst = worst.max((fast - pair_auc(&scores, &labels)).abs());
    }
    ensure(worst <= AUC_TOL, || format!("max difference {worst:.3e}"))?;
    Ok(format!("{AUC_INSTANCES} tied instances, max difference {worst:.1e}"))
}

// --------------------------------------------------------- stochastic rounding

fn stochastic_rounding() -> Check {
    let mut rng = embcomp::rng::seeded(7, 0);
    let draws: Vec<f64> = (0..SR_DRAWS)
        .map(|_| {
            let q = quantize_value(SR_VALUE, SR_SCALE, 0.0, 127, Rounding::Stochastic, &mut rng);
            dequantize(q, SR_SCALE, 0.0)
        })
        .collect();
    let n = SR_DRAWS as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    let z = (mean - SR_VALUE).abs() / se;
    ensure(z <= SR_SIGMAS, || format!("mean {mean:.6}, {z:.2} standard errors"))?;
    Ok(format!("mean {mean:.5} of {SR_DRAWS} draws, {z:.2} standard errors"))
}

// ---------------------------------------------------------------- exactness

fn svd_energy() -> Result<(), String> {
    let m = gaussian_matrix(60, 12, 3, 0).cast::<f64>();
    let total = m.squared_norm();
    let lr = truncated_svd(&m, 5);
    let energy: f64 = lr.singular_values.iter().map(|s| s * s).sum();
    ensure(((energy - total) / total).abs() <= SVD_REL_TOL, || {
        format!("singular energy {energy} vs {total}")
    })?;
    let approx = lr.left.matmul(&lr.right).map_err(err)?;
    let residual = m.squared_distance(&approx);
    let tail: f64 = lr.singular_values[5..].iter().map(|s| s * s).sum();
    ensure(((residual - tail) / tail).abs() <= SVD_REL_TOL, || {
        format!("residual {residual} vs tail energy {tail}")
    })
}

fn tt_round_trip() -> Result<(), String> {
    let m = gaussian_matrix(60, 8, 4, 0);
    let shape = TtShape::balanced(60, 8, 3, 1).map_err(err)?.with_full_ranks();
    let codec = TtCodec::fit(&m, shape).map_err(err)?;
    let back = codec.decompress();
    let worst = m
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max);
    ensure(worst <= TT_ROUND_TRIP_TOL, || format!("TT round trip error {worst:.2e}"))
}

fn compo_injective() -> Result<(), String> {
    let mut sizes = vec![(1, 1, 1), (2, 1, 2), (10, 3, 4), (97, 10, 10)];
    let space = FeatureSpace::new(vec![COMPO_MAX_ROWS]).unwrap();
    for beta in BUDGETS {
        if let embcomp::PlanParams::Compo { m1, m2 } =
            solve(Method::Compo, beta, &space, 16, &SolverConfig::default()).map_err(err)?.params
        {
            sizes.push((COMPO_MAX_ROWS, m1, m2));
        }
    }
    for m1 in [1, 2, 3, 7, 50, 99, 100, 101, 5000, COMPO_MAX_ROWS] {
        sizes.push((COMPO_MAX_ROWS, m1, COMPO_MAX_ROWS.div_ceil(m1)));
    }
    for (n, m1, m2) in sizes {
        let t = CompoTable::<f32>::new(n, 1, m1, m2, init(0, 0.1)).map_err(err)?;
        let mut seen = HashSet::with_capacity(n);
        for id in 0..n {
            ensure(seen.insert(t.index_pair(id)), || {
                format!("compo n={n} m1={m1} m2={m2}: id {id} collides")
            })?;
        }
    }
    Ok(())
}

fn dedup_identity() -> Result<(), String> {
    let m = gaussian_matrix(200, 8, 5, 0);
    let lsh = LshParams {
        projections: 8,
        bucket_width: 1e-3,
        seed: 1,
    };
    let codec = DedupCodec::fit(&m, 8, lsh).map_err(err)?;
    ensure(codec.num_reps() == codec.num_blocks(), || {
        format!("{} representatives for {} blocks", codec.num_reps(), codec.num_blocks())
    })?;
    ensure(codec.decompress() == m, || "dedup with unique signatures changed the matrix".into())
}

fn prune_tightness() -> Result<(), String> {
    let mut rng = embcomp::rng::seeded(6, 0);
    for trial in 0..40 {
        let rows = rng.random_range(1..100);
        let cols = rng.random_range(1..=100usize.min(10_000 / rows));
        // Few distinct magnitudes force ties at the threshold; no zeros.
        let values: Vec<f32> = (0..rows * cols)
            .map(|_| {
                let mag = rng.random_range(1..8) as f32 / 4.0;
                if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect();
        let m = DenseMatrix::from_vec(rows, cols, values).unwrap();
        let full = memory::baseline_bytes(rows, cols);
        let budget = rng.random_range(0..=full);
        let codec = match ThresholdPrune::fit_budget(&m, budget) {
            Ok(c) => c,
            Err(_) => {
                ensure(memory::sparse_bytes(rows, cols, 0).1 > budget, || {
                    format!("trial {trial}: refused a reachable budget {budget}")
                })?;
                continue;
            }
        };
        ensure(codec.bytes() <= budget, || format!("trial {trial}: over budget"))?;
        let nnz = codec.nnz();
        ensure(
            nnz == rows * cols || memory::sparse_bytes(rows, cols, nnz + 1).1 > budget,
            || format!("trial {trial}: one more entry would still fit"),
        )?;
        let mut order: Vec<usize> = (0..rows * cols).collect();
        order.sort_by(|&a, &b| {
            m.values()[b]
                .abs()
                .total_cmp(&m.values()[a].abs())
                .then(a.cmp(&b))
        });
        let back = codec.decompress();
        let kept: HashSet<usize> = (0..rows * cols).filter(|&i| back.values()[i] != 0.0).collect();
        let want: HashSet<usize> = order[..nnz].iter().copied().collect();
        ensure(kept == want, || format!("trial {trial}: kept set differs from the sort oracle"))?;
    }
    Ok(())
}

fn exactness() -> Check {
    svd_energy()?;
    tt_round_trip()?;
    compo_injective()?;
    dedup_identity()?;
    prune_tightness()?;
    Ok("SVD energy, TT round trip, compo injectivity, dedup identity, prune tightness".into())
}

// --------------------------------------------------------------- end to end

fn end_to_end() -> Check {
    let start = Instant::now();
    let ds = generate(&SyntheticSpec::default()).map_err(err)?;
    let tc = TrainConfig::default();
    let cfg = SolverConfig::default();
    let run = |method: Method, beta: f64| -> Result<Option<f64>, String> {
        let plan = solve(method, beta, ds.space(), tc.dim, &cfg).map_err(err)?;
        if !plan.feasible {
            return Ok(None);
        }
        Ok(Some(train(&plan, &ds, &tc, 0).map_err(err)?.report.auc))
    };
    let baseline = run(Method::Full, 1.0)?.ok_or("full table infeasible at 100%")?;
    let mut at_half = Vec::new();
    let mut failures = Vec::new();
    for method in Method::TRAINING.into_iter().filter(|&m| m != Method::Full) {
        if let Some(a) = run(method, 0.5)? {
            if a < baseline - E2E_AUC_TOL {
                failures.push(format!("{method} {a:.4}"));
            }
            at_half.push((method, a));
        }
    }
    let mut monotone = Vec::new();
    for method in HASHING {
        let Some(&(_, high)) = at_half.iter().find(|(m, _)| *m == method) else {
            continue;
        };
        if let Some(low) = run(method, 0.001)? {
            if high < low - E2E_MONOTONE_TOL {
                failures.push(format!("{method} 50% {high:.4} < 0.1% {low:.4}"));
            }
            monotone.push(format!("{method} {high:.4}>={low:.4}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= E2E_MAX_SECONDS {
        failures.push(format!("took {secs:.0}s"));
    }
    let summary: Vec<String> = at_half.iter().map(|(m, a)| format!("{m} {a:.4}")).collect();
    let detail = format!(
        "baseline {baseline:.4}; 50%: {}; monotone: {}; {secs:.0}s",
        summary.join(", "),
        monotone.join(", ")
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", failures.join("; ")))
    }
}

// ---------------------------------------------------------------- retrieval

fn part_mse(a: &DenseMatrix<f32>, b: &DenseMatrix<f32>, lo: usize, hi: usize) -> f64 {
    let mut sum = 0.0;
    for r in 0..a.rows() {
        for c in lo..hi {
            sum += (a.get(r, c) as f64 - b.get(r, c) as f64).powi(2);
        }
    }
    sum / (a.rows() * (hi - lo)) as f64
}

fn retrieval() -> Check {
    let m = gaussian_matrix(RETRIEVAL_ROWS, RETRIEVAL_DIM, 11, 0);
    let q = gaussian_matrix(RETRIEVAL_QUERIES, RETRIEVAL_DIM, 11, 1);
    let k = RETRIEVAL_K;
    let identity = recall_overlap(&m, &IdentityCodec::new(m.clone()), &q, k).map_err(err)?;
    ensure(identity == 1.0, || format!("identity recall {identity}"))?;
    let i16r = recall_overlap(&m, &IntCodec::fit(&m, QuantBits::I16), &q, k).map_err(err)?;
    let i8r = recall_overlap(&m, &IntCodec::fit(&m, QuantBits::I8), &q, k).map_err(err)?;
    ensure(i16r >= i8r - INT_RECALL_TOL, || format!("i16 {i16r} < i8 {i8r}"))?;
    let svd = SvdCodec::fit(&m, RETRIEVAL_DIM).map_err(err)?;
    let svd_recall = recall_between(&m, &svd.decompress(), &q, k).map_err(err)?;
    ensure(svd_recall == 1.0, || format!("full-rank SVD recall {svd_recall}"))?;
    let parts = 8;
    let width = RETRIEVAL_DIM / parts;
    let pq = PqCodec::fit(&m, parts, 256, 3).map_err(err)?.decompress();
    let one = PqCodec::fit(&m, parts, 1, 3).map_err(err)?.decompress();
    for p in 0..parts {
        let (lo, hi) = (p * width, (p + 1) * width);
        let (a, b) = (part_mse(&m, &pq, lo, hi), part_mse(&m, &one, lo, hi));
        ensure(a <= b, || format!("part {p}: MSE {a} above the one-centroid {b}"))?;
    }
    Ok(format!(
        "identity 1.0, i16 {i16r:.3} vs i8 {i8r:.3}, SVD rank {RETRIEVAL_DIM} 1.0, PQ per-part MSE below one centroid"
    ))
}

// ------------------------------------------------------------------ latency

fn latency_ordering() -> Check {
    let space = default_space();
    let cfg = SolverConfig::default();
    let frozen = |method: Method| -> Result<Box<dyn EmbeddingStore<f32>>, String> {
        let plan = solve(method, 0.5, &space, SOUNDNESS_DIM, &cfg).map_err(err)?;
        let mut s = build_store(&plan, &space, SOUNDNESS_DIM, init(0, 0.05), 1.0).map_err(err)?;
        s.freeze().map_err(err)?;
        Ok(s)
    };
    let full = frozen(Method::Full)?;
    let tt = frozen(Method::TtRec)?;
    let quant = frozen(Method::Int8_16)?;
    let mut rng = embcomp::rng::seeded(9, 0);
    let ids: Vec<u32> = (0..LATENCY_BATCH)
        .map(|_| rng.random_range(0..SOUNDNESS_ROWS as u32))
        .collect();
    let time = |s: &dyn EmbeddingStore<f32>| time_batch(LATENCY_REPEATS, || s.lookup(&ids)).map_err(err);
    let (tf, tt_s, tq) = (time(full.as_ref())?, time(tt.as_ref())?, time(quant.as_ref())?);
    ensure(tt_s > tf, || format!("TT {tt_s:.2e}s not slower than full {tf:.2e}s"))?;
    ensure(tq <= QUANT_LATENCY_FACTOR * tf, || {
        format!("quantized {tq:.2e}s over {QUANT_LATENCY_FACTOR}x full {tf:.2e}s")
    })?;
    Ok(format!(
        "batch {LATENCY_BATCH}: full {:.1}us, quantized {:.1}us, tt_rec {:.1}us",
        tf * 1e6,
        tq * 1e6,
        tt_s * 1e6
    ))
}

// -------------------------------------------------------------- determinism

fn stripped_reports(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(err)?;
    let cells = embcomp_cli::commands::read_json_lines(&text).map_err(err)?;
    Ok(cells
        .iter()
        .map(CellReport::without_timing)
        .map(|c| serde_json::to_string(&c).expect("serializes"))
        .collect())
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(err)?;
    let config = dir.path().join("run.toml");
    let text = format!(
        r#"
seed = 4
out = "{}"
methods = {:?}
budgets = [0.5, 0.01]
jobs = 4

[data.synthetic]
cardinalities = [300, 200, 100, 50]
samples = 3000
seed = 9

[train]
max_epochs = 2
warmup_epochs = 1
prune_epochs = 1

[posttrain]
rows = 500
dim = 16
queries = 20
latency_batch = 128
repeats = 3
"#,
        dir.path().join("out").display(),
        Method::TRAINING.iter().map(|m| m.to_string()).collect::<Vec<_>>()
    );
    std::fs::write(&config, text).map_err(err)?;
    let bin = env!("CARGO_BIN_EXE_embcomp");
    let run = |cmd: &str| -> Result<(), String> {
        let out = Command::new(bin)
            .arg(cmd)
            .arg("--config")
            .arg(&config)
            .output()
            .map_err(err)?;
        ensure(out.status.success(), || {
            format!("{cmd}: {}", String::from_utf8_lossy(&out.stderr))
        })
    };
    let out = dir.path().join("out");
    let mut compared = 0;
    for (cmd, file) in [
        ("gen-data", "dataset.emb"),
        ("bench-train", "bench-train.jsonl"),
        ("bench-posttrain", "bench-posttrain.jsonl"),
    ] {
        run(cmd)?;
        let first = std::fs::read(out.join(file)).map_err(err)?;
        let first_cells = file.ends_with("jsonl").then(|| stripped_reports(&out.join(file))).transpose()?;
        run(cmd)?;
        if let Some(cells) = first_cells {
            let again = stripped_reports(&out.join(file))?;
            ensure(cells == again, || format!("{cmd}: reports differ outside timing fields"))?;
            compared += cells.len();
        } else {
            ensure(first == std::fs::read(out.join(file)).map_err(err)?, || {
                format!("{cmd}: output bytes differ")
            })?;
        }
    }
    Ok(format!("gen-data bytes identical; {compared} report cells identical outside timing"))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("gradient oracle", gradient_oracle),
        ("budget soundness", budget_soundness),
        ("training-memory accounting", training_memory),
        ("AUC oracle equivalence", auc_oracle),
        ("stochastic-rounding unbiasedness", stochastic_rounding),
        ("exactness suite", exactness),
        ("end-to-end regression", end_to_end),
        ("retrieval regression", retrieval),
        ("latency ordering", latency_ordering),
        ("determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())))));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
