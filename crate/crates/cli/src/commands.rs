use std::fs;
use std::path::{Path, PathBuf};

use embcomp::budget::{solve, solve_codec, Method};
use embcomp::checkpoint::{self, tags, Checkpoint};
use embcomp::data::{load_csv, SkewSummary, Split};
use embcomp::eval::grid::{render_csv, render_text, CellReport, CellStatus, GridKind, RenderOptions};
use embcomp::eval::{recall_overlap, time_batch, time_decompress};
use embcomp::posttrain::compress as compress_matrix;
use embcomp::rng::{seeded, streams};
use embcomp::{generate, load_codec, load_store, train, Dataset, DenseMatrix, Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DataSource, RunConfig};

/// Rows scored per timed forward pass in training grids.
const LATENCY_BATCH: usize = 1024;
const LATENCY_REPEATS: usize = 5;

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match cfg.data.source {
        DataSource::Synthetic => generate(&cfg.data.synthetic),
        DataSource::Csv => {
            let src = cfg
                .data
                .csv
                .as_ref()
                .ok_or_else(|| Error::Config("data.source = \"csv\" needs a [data.csv] section".into()))?;
            Ok(load_csv(&src.path, &src.schema, src.split, src.seed)?.0)
        }
        DataSource::File => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.source = \"file\" needs data.path".into()))?;
            Dataset::load(path)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn config_value(cfg: &RunConfig) -> Value {
    serde_json::to_value(cfg).expect("run config serializes")
}

#[derive(Debug, Clone, Serialize)]
pub struct GenDataOutput {
    pub dataset: PathBuf,
    pub summary_path: PathBuf,
    pub summary: SkewSummary,
}

/// Writes `dataset.emb` and `skew.json` into the output directory.
pub fn gen_data(cfg: &RunConfig) -> Result<GenDataOutput> {
    if cfg.data.source == DataSource::Synthetic {
        cfg.data.synthetic.validate()?;
    }
    let ds = load_dataset(cfg)?;
    create_dir(&cfg.out)?;
    let dataset = cfg.out.join("dataset.emb");
    ds.save(&dataset)?;
    let summary = ds.skew();
    let summary_path = cfg.out.join("skew.json");
    let doc = json!({
        "summary": summary,
        "config": config_value(cfg),
        "version": embcomp::VERSION,
    });
    write_file(
        &summary_path,
        serde_json::to_string_pretty(&doc).expect("json serializes") + "\n",
    )?;
    Ok(GenDataOutput {
        dataset,
        summary_path,
        summary,
    })
}

/// Runs `cells` on `jobs` threads, keeping their order.
fn run_cells<T: Sync, F>(jobs: usize, cells: &[T], run: F) -> Result<Vec<CellReport>>
where
    F: Fn(&T) -> CellReport + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| cells.par_iter().map(&run).collect()))
}

fn blank_cell(grid: GridKind, method: Method, budget: f64, cfg: &RunConfig) -> CellReport {
    CellReport {
        grid,
        method: method.to_string(),
        budget,
        status: CellStatus::Ok,
        achieved_percent: None,
        metrics: Default::default(),
        error: None,
        seed: cfg.seed,
        details: Value::Null,
        config: config_value(cfg),
        version: embcomp::VERSION.to_string(),
    }
}

fn failed(mut cell: CellReport, err: Error) -> CellReport {
    log::warn!("{} at {}: {err}", cell.method, cell.budget);
    cell.status = CellStatus::Failed;
    cell.error = Some(err.to_string());
    cell
}

/// Writes `<name>.jsonl`, `<name>.txt` and `<name>.csv` into the output
/// directory.
pub fn write_reports(dir: &Path, name: &str, cells: &[CellReport]) -> Result<PathBuf> {
    create_dir(dir)?;
    let jsonl = dir.join(format!("{name}.jsonl"));
    write_file(&jsonl, to_json_lines(cells))?;
    let opts = RenderOptions::default();
    write_file(&dir.join(format!("{name}.txt")), render_text(cells, opts))?;
    write_file(&dir.join(format!("{name}.csv")), render_csv(cells, opts))?;
    Ok(jsonl)
}

pub fn to_json_lines(cells: &[CellReport]) -> String {
    cells
        .iter()
        .map(|c| serde_json::to_string(c).expect("cell serializes") + "\n")
        .collect()
}

pub fn read_json_lines(text: &str) -> Result<Vec<CellReport>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn train_cell(ds: &Dataset, cfg: &RunConfig, method: Method, budget: f64) -> CellReport {
    let mut cell = blank_cell(GridKind::Train, method, budget, cfg);
    let plan = match solve(method, budget, ds.space(), cfg.train.dim, &cfg.solver) {
        Ok(p) => p,
        Err(e) => return failed(cell, e),
    };
    cell.achieved_percent = Some(plan.achieved_percent());
    if !plan.runnable() {
        cell.status = CellStatus::Skipped;
        cell.details = json!({ "plan": plan });
        return cell;
    }
    cell.status = if plan.feasible {
        CellStatus::Ok
    } else {
        CellStatus::Nearest
    };
    let trained = match train(&plan, ds, &cfg.train, cfg.seed) {
        Ok(t) => t,
        Err(e) => return failed(cell, e),
    };
    let test = ds.split(Split::Test);
    let sample = &test[..test.len().min(LATENCY_BATCH)];
    let batch = ds.batch::<f32>(sample);
    let latency = match time_batch(LATENCY_REPEATS, || {
        trained.model.predict(trained.store.as_ref(), &batch)
    }) {
        Ok(s) => s,
        Err(e) => return failed(cell, e),
    };
    let r = &trained.report;
    let m = &mut cell.metrics;
    m.insert("auc".into(), r.auc);
    m.insert("test_auc".into(), r.test_auc);
    m.insert("inference_bytes".into(), r.inference_bytes as f64);
    m.insert("training_bytes".into(), r.training_bytes as f64);
    m.insert("baseline_bytes".into(), r.baseline_bytes as f64);
    m.insert("train_seconds".into(), r.train_seconds);
    m.insert("latency_seconds".into(), latency);
    cell.details = serde_json::to_value(r).expect("train report serializes");
    cell
}

/// Trains every (method, budget) cell and writes the reports. Failed cells
/// are recorded, not fatal.
pub fn bench_train(cfg: &RunConfig) -> Result<Vec<CellReport>> {
    cfg.validate()?;
    let methods = cfg.training_methods()?;
    let ds = load_dataset(cfg)?;
    let cells: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| cfg.budgets.iter().map(move |&b| (m, b)))
        .collect();
    let reports = run_cells(cfg.jobs, &cells, |&(m, b)| train_cell(&ds, cfg, m, b))?;
    write_reports(&cfg.out, "bench-train", &reports)?;
    Ok(reports)
}

/// Standard normal matrix from `(seed, stream)`.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, stream: u64) -> DenseMatrix<f32> {
    let mut rng = seeded(seed, stream);
    let values = (0..rows * cols)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    DenseMatrix::from_vec(rows, cols, values).expect("shape matches")
}

/// The matrix a post-training run compresses.
pub fn posttrain_matrix(cfg: &RunConfig) -> Result<DenseMatrix<f32>> {
    let p = &cfg.posttrain;
    match &p.matrix {
        Some(path) => checkpoint::load_matrix(path),
        None => {
            if p.rows == 0 || p.dim == 0 {
                return Err(Error::Config("posttrain rows and dim must be positive".into()));
            }
            Ok(gaussian_matrix(p.rows, p.dim, cfg.seed, streams::DATA))
        }
    }
}

fn posttrain_cell(
    matrix: &DenseMatrix<f32>,
    queries: &DenseMatrix<f32>,
    ids: &[u32],
    cfg: &RunConfig,
    method: Method,
    budget: f64,
) -> CellReport {
    let mut cell = blank_cell(GridKind::Posttrain, method, budget, cfg);
    let plan = match solve_codec(method, budget, matrix.rows(), matrix.cols(), &cfg.solver) {
        Ok(p) => p,
        Err(e) => return failed(cell, e),
    };
    cell.achieved_percent = Some(plan.achieved_percent());
    // The uncompressed reference row runs at full size; other codecs skip.
    if !plan.feasible {
        if method != Method::Identity {
            cell.status = CellStatus::Skipped;
            cell.details = json!({ "plan": plan });
            return cell;
        }
        cell.status = CellStatus::Nearest;
    }
    let out = match compress_matrix(matrix, &plan, cfg.seed) {
        Ok(c) => c,
        Err(e) => return failed(cell, e),
    };
    let recall = match recall_overlap(matrix, out.codec.as_ref(), queries, cfg.posttrain.k) {
        Ok(r) => r,
        Err(e) => return failed(cell, e),
    };
    let latency = match time_decompress(out.codec.as_ref(), ids, cfg.posttrain.repeats) {
        Ok(s) => s,
        Err(e) => return failed(cell, e),
    };
    let m = &mut cell.metrics;
    m.insert("recall".into(), recall);
    m.insert("bytes".into(), out.bytes as f64);
    m.insert("baseline_bytes".into(), plan.baseline_bytes as f64);
    m.insert("compress_seconds".into(), out.seconds);
    m.insert("latency_seconds".into(), latency);
    cell.details = json!({ "plan": plan, "k": cfg.posttrain.k });
    cell
}

/// Compresses the configured matrix with every (codec, budget) cell and
/// writes the reports. Unreachable budgets become skipped cells, except for
/// the identity reference, which runs at full size.
pub fn bench_posttrain(cfg: &RunConfig) -> Result<Vec<CellReport>> {
    cfg.validate()?;
    let methods = cfg.posttrain_methods()?;
    let p = &cfg.posttrain;
    if p.queries == 0 || p.k == 0 || p.latency_batch == 0 {
        return Err(Error::Config("queries, k and latency_batch must be positive".into()));
    }
    let matrix = posttrain_matrix(cfg)?;
    let queries = gaussian_matrix(p.queries, matrix.cols(), cfg.seed, streams::QUERIES);
    let mut rng = seeded(cfg.seed, streams::SHUFFLE);
    let ids: Vec<u32> = (0..p.latency_batch)
        .map(|_| rng.random_range(0..matrix.rows() as u32))
        .collect();
    let cells: Vec<(Method, f64)> = methods
        .iter()
        .flat_map(|&m| cfg.budgets.iter().map(move |&b| (m, b)))
        .collect();
    let reports = run_cells(cfg.jobs, &cells, |&(m, b)| {
        posttrain_cell(&matrix, &queries, &ids, cfg, m, b)
    })?;
    write_reports(&cfg.out, "bench-posttrain", &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressOutput {
    pub method: String,
    pub path: PathBuf,
    pub bytes: usize,
    pub baseline_bytes: usize,
    pub achieved_percent: String,
    pub compress_seconds: f64,
}

/// Compresses one matrix file with one codec and saves the codec.
pub fn compress(
    matrix_path: &Path,
    method: Method,
    budget: f64,
    cfg: &RunConfig,
    out: &Path,
) -> Result<CompressOutput> {
    if !method.is_post_training() {
        return Err(Error::Config(format!("{method} is not a post-training codec")));
    }
    let matrix = checkpoint::load_matrix(matrix_path)?;
    let plan = solve_codec(method, budget, matrix.rows(), matrix.cols(), &cfg.solver)?;
    let done = compress_matrix(&matrix, &plan, cfg.seed)?;
    done.codec.to_checkpoint()?.save(out)?;
    Ok(CompressOutput {
        method: method.to_string(),
        path: out.to_path_buf(),
        bytes: done.bytes,
        baseline_bytes: plan.baseline_bytes,
        achieved_percent: embcomp::memory::percent_of(done.bytes, plan.baseline_bytes),
        compress_seconds: done.seconds,
    })
}

/// One-line description of a checkpoint: type, shape and bytes.
pub fn inspect(path: &Path) -> Result<String> {
    let ck = Checkpoint::load(path)?;
    let shape = match ck.tag {
        tags::DENSE_MATRIX => {
            let m = checkpoint::matrix_from_checkpoint(&ck)?;
            format!("{}x{}", m.rows(), m.cols())
        }
        tags::DATASET => {
            let ds = Dataset::from_checkpoint(&ck)?;
            format!(
                "{} samples, {} fields, {} features, {} dense",
                ds.len(),
                ds.num_fields(),
                ds.space().num_features(),
                ds.dense_width()
            )
        }
        t if t >= tags::CODEC_IDENTITY => {
            let c = load_codec(&ck)?;
            format!("{}x{}", c.rows(), c.dim())
        }
        _ => {
            let s = load_store(&ck)?;
            format!("{}x{}", s.num_features(), s.dim())
        }
    };
    Ok(format!(
        "{}: {} shape={shape} payload_bytes={}",
        path.display(),
        tags::name(ck.tag),
        ck.payload.len()
    ))
}

pub fn render(path: &Path, csv: bool, opts: RenderOptions) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cells = read_json_lines(&text)?;
    Ok(if csv {
        render_csv(&cells, opts)
    } else {
        render_text(&cells, opts)
    })
}
