use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::budget::{CompressionPlan, Method, PlanParams};
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::auc_of;
use crate::optim::Optimizer;
use crate::posttrain::build_codec;
use crate::rng::{seeded, streams};
use crate::space::FeatureSpace;
use crate::stores::{
    AdaptiveTable, AlptTable, CompoTable, DoubleHashTable, EmbeddingStore, FullTable, GatherStore,
    InitConfig, MemComTable, MixedDimTable, PrunedTable, QuantRange, QuantizedTable, RobeArray,
    Rounding, TtRecTable,
};

use super::{bce_from_logits, DlrmLite, DlrmShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Epoch cap of the main (or retraining) stage.
    pub max_epochs: usize,
    /// Dense epochs before compressing warm-started methods or pruning.
    pub warmup_epochs: usize,
    /// Epochs over which pruning follows its schedule.
    pub prune_epochs: usize,
    /// Validation evaluations without improvement before stopping.
    pub patience: usize,
    pub evals_per_epoch: usize,
    pub init_scale: f64,
    /// Clipping range of integer-coded tables.
    pub quant_clip: f64,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            hidden: 32,
            lr: 1e-3,
            batch_size: 128,
            max_epochs: 10,
            warmup_epochs: 2,
            prune_epochs: 2,
            patience: 3,
            evals_per_epoch: 4,
            init_scale: 0.05,
            quant_clip: 1.0,
            eval_batch: 4096,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Config("dim, hidden and batch sizes must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.max_epochs == 0 || self.evals_per_epoch == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, evaluations and patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub epochs: f64,
    pub steps: usize,
    pub seconds: f64,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_auc: Option<f64>,
    pub stopped_early: bool,
    /// Mean training loss over each evaluation interval.
    pub losses: Vec<f64>,
    pub training_bytes: usize,
    /// Batches in which an adaptive store refused promotions.
    pub capacity_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    /// Validation AUC of the returned model.
    pub auc: f64,
    pub test_auc: f64,
    pub inference_bytes: usize,
    /// Peak embedding training bytes across stages.
    pub training_bytes: usize,
    pub baseline_bytes: usize,
    pub train_seconds: f64,
    pub stage_breakdown: Vec<StageReport>,
    pub seed: u64,
    pub plan: CompressionPlan,
}

pub struct Trained {
    /// Frozen store.
    pub store: Box<dyn EmbeddingStore<f32>>,
    pub model: DlrmLite<f32>,
    pub report: TrainReport,
}

/// Builds the trainable store a plan describes. Warm-started methods are
/// built by [`train`] from a trained full table instead.
pub fn build_store(
    plan: &CompressionPlan,
    space: &FeatureSpace,
    dim: usize,
    init: InitConfig,
    quant_clip: f64,
) -> Result<Box<dyn EmbeddingStore<f32>>> {
    let n = space.num_features();
    let seed = init.seed;
    Ok(match &plan.params {
        PlanParams::Full => Box::new(FullTable::new(n, dim, init)),
        PlanParams::DoubleHash { rows } => Box::new(DoubleHashTable::new(n, dim, *rows, seed, init)?),
        PlanParams::Compo { m1, m2 } => Box::new(CompoTable::new(n, dim, *m1, *m2, init)?),
        PlanParams::MemCom { rows } => Box::new(MemComTable::new(n, dim, *rows, seed, init)?),
        PlanParams::Robe { size, chunk } => Box::new(RobeArray::new(n, dim, *size, *chunk, seed, init)?),
        PlanParams::TtRec { shape } => Box::new(TtRecTable::new(n, shape.clone(), init)?),
        PlanParams::Adaptive {
            shared_rows,
            capacity,
            threshold,
        } => Box::new(AdaptiveTable::new(n, dim, *shared_rows, *capacity, *threshold, seed, init)?),
        PlanParams::Quantized { bits } => Box::new(QuantizedTable::new(
            n,
            dim,
            *bits,
            QuantRange::Fixed(quant_clip),
            Rounding::Stochastic,
            init,
        )?),
        PlanParams::Alpt { bits } => Box::new(AlptTable::new(n, dim, *bits, quant_clip, init)?),
        PlanParams::MixedDim { dims, .. } => {
            Box::new(MixedDimTable::new(space.clone(), dim, dims.clone(), init)?)
        }
        PlanParams::Pruned { nnz } => Box::new(PrunedTable::new(n, dim, *nnz, init)?),
        PlanParams::Dedup { .. } | PlanParams::MagPq { .. } => {
            return Err(Error::invalid(format!(
                "{} is built from a warmed-up table during training",
                plan.method
            )))
        }
        other => {
            return Err(Error::invalid(format!("{other:?} is not a trainable store plan")));
        }
    })
}

/// AUC of the model on one split of the dataset.
pub fn evaluate(
    model: &DlrmLite<f32>,
    store: &dyn EmbeddingStore<f32>,
    ds: &Dataset,
    split: Split,
    batch_size: usize,
) -> Result<f64> {
    let idx = ds.split(split);
    let mut scores = Vec::with_capacity(idx.len());
    let mut labels = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let b = ds.batch::<f32>(chunk);
        scores.extend(model.predict(store, &b)?);
        labels.extend_from_slice(&b.labels);
    }
    auc_of(&scores, &labels)
}

struct Stage {
    name: &'static str,
    epochs: usize,
    early_stop: bool,
    scheduled: bool,
}

struct Runner<'a> {
    ds: &'a Dataset,
    cfg: &'a TrainConfig,
    opt: Optimizer,
    order: Vec<u32>,
    rng: rand_chacha::ChaCha8Rng,
}

type Snapshot = (f64, Box<dyn EmbeddingStore<f32>>, DlrmLite<f32>);

impl Runner<'_> {
    fn run(
        &mut self,
        stage: Stage,
        store: &mut Box<dyn EmbeddingStore<f32>>,
        model: &mut DlrmLite<f32>,
    ) -> Result<StageReport> {
        let start = Instant::now();
        let b = self.cfg.batch_size;
        let steps_per_epoch = self.order.len().div_ceil(b).max(1);
        let total = steps_per_epoch * stage.epochs;
        let eval_every = steps_per_epoch.div_ceil(self.cfg.evals_per_epoch).max(1);
        let mut report = StageReport {
            name: stage.name.to_string(),
            epochs: 0.0,
            steps: 0,
            seconds: 0.0,
            evaluations: 0,
            best_auc: None,
            stopped_early: false,
            losses: Vec::new(),
            training_bytes: store.training_bytes(),
            capacity_events: 0,
        };
        let mut best: Option<Snapshot> = None;
        let mut stale = 0;
        let (mut loss_sum, mut loss_count) = (0.0f64, 0usize);
        'epochs: for _ in 0..stage.epochs {
            self.order.shuffle(&mut self.rng);
            for chunk in self.order.chunks(b) {
                let batch = self.ds.batch::<f32>(chunk);
                match store.observe(&batch.ids) {
                    Ok(_) => {}
                    Err(Error::Capacity(msg)) => {
                        if report.capacity_events == 0 {
                            log::warn!("{}: {msg}", store.name());
                        }
                        report.capacity_events += 1;
                    }
                    Err(e) => return Err(e),
                }
                let fwd = model.forward(store.as_ref(), &batch)?;
                loss_sum += bce_from_logits(&fwd.logits, &batch.labels) as f64;
                loss_count += 1;
                let g = model.backward(&fwd, &batch.labels)?;
                model.step(&g.params, &self.opt);
                store.apply_gradients(&batch.ids, &g.rows, &self.opt)?;
                report.steps += 1;
                if stage.scheduled {
                    store.on_schedule(report.steps as f64 / total as f64);
                }
                if report.steps % eval_every != 0 && report.steps != total {
                    continue;
                }
                report.losses.push(loss_sum / loss_count as f64);
                loss_sum = 0.0;
                loss_count = 0;
                if !stage.early_stop {
                    continue;
                }
                let auc = evaluate(model, store.as_ref(), self.ds, Split::Valid, self.cfg.eval_batch)?;
                report.evaluations += 1;
                if best.as_ref().is_none_or(|s| auc > s.0) {
                    best = Some((auc, store.clone_box(), model.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.cfg.patience {
                        report.stopped_early = true;
                        break 'epochs;
                    }
                }
            }
        }
        if let Some((auc, s, m)) = best {
            report.best_auc = Some(auc);
            *store = s;
            *model = m;
        }
        report.epochs = report.steps as f64 / steps_per_epoch as f64;
        report.training_bytes = report.training_bytes.max(store.training_bytes());
        report.seconds = start.elapsed().as_secs_f64();
        Ok(report)
    }
}

/// Trains a store described by `plan` together with a fresh model.
///
/// Stages: warm-started methods train a full table, compress it and retrain
/// the compressed parameters; pruning trains densely for `warmup_epochs`,
/// follows its schedule for `prune_epochs` and then retrains under the
/// final mask; every other method
/// trains in one stage. Stages with early stopping return their best
/// validation snapshot.
pub fn train(plan: &CompressionPlan, ds: &Dataset, cfg: &TrainConfig, seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if !plan.runnable() {
        return Err(Error::Infeasible {
            method: plan.method.to_string(),
            budget_bytes: plan.budget_bytes,
            nearest_bytes: plan.achieved_bytes,
        });
    }
    let space = ds.space();
    let baseline = space.baseline_bytes(cfg.dim);
    if plan.baseline_bytes != baseline {
        return Err(Error::invalid(format!(
            "plan was solved for a {}-byte baseline but the dataset needs {baseline}",
            plan.baseline_bytes
        )));
    }
    let started = Instant::now();
    let shape = DlrmShape {
        fields: ds.num_fields(),
        dim: cfg.dim,
        dense_width: ds.dense_width(),
        hidden: cfg.hidden,
    };
    let mut model = DlrmLite::<f32>::new(shape, seed)?;
    let init = InitConfig {
        seed,
        scale: cfg.init_scale,
    };
    let mut runner = Runner {
        ds,
        cfg,
        opt: Optimizer::adam(cfg.lr),
        order: ds.split(Split::Train).to_vec(),
        rng: seeded(seed, streams::SHUFFLE),
    };
    let main = |name| Stage {
        name,
        epochs: cfg.max_epochs,
        early_stop: true,
        scheduled: false,
    };
    let mut stages = Vec::new();
    let mut store: Box<dyn EmbeddingStore<f32>>;
    if plan.method.needs_warm_start() {
        store = Box::new(FullTable::<f32>::new(space.num_features(), cfg.dim, init));
        let warm = Stage {
            epochs: cfg.warmup_epochs.max(1),
            ..main("warm_up")
        };
        stages.push(runner.run(warm, &mut store, &mut model)?);
        let t = Instant::now();
        let ids: Vec<u32> = (0..space.num_features() as u32).collect();
        let table = store.lookup(&ids)?;
        let full_training = store.training_bytes();
        let codec = build_codec(&table, &plan.params, seed)?;
        let peak = full_training + codec.bytes();
        let gather = codec
            .into_gather()
            .ok_or_else(|| Error::invalid(format!("{} codec cannot be retrained", plan.method)))?;
        store = Box::new(GatherStore::<f32>::new(gather));
        stages.push(StageReport {
            name: "compress".into(),
            epochs: 0.0,
            steps: 0,
            seconds: t.elapsed().as_secs_f64(),
            evaluations: 0,
            best_auc: None,
            stopped_early: false,
            losses: Vec::new(),
            training_bytes: peak,
            capacity_events: 0,
        });
        stages.push(runner.run(main("retrain"), &mut store, &mut model)?);
    } else if plan.method == Method::DeepLight {
        store = build_store(plan, space, cfg.dim, init, cfg.quant_clip)?;
        // Magnitudes only mean something once the table has learned.
        let warm = Stage {
            name: "warm_up",
            epochs: cfg.warmup_epochs,
            early_stop: false,
            scheduled: false,
        };
        if warm.epochs > 0 {
            stages.push(runner.run(warm, &mut store, &mut model)?);
        }
        let prune = Stage {
            name: "prune",
            epochs: cfg.prune_epochs.max(1),
            early_stop: false,
            scheduled: true,
        };
        stages.push(runner.run(prune, &mut store, &mut model)?);
        stages.push(runner.run(main("retrain"), &mut store, &mut model)?);
    } else {
        store = build_store(plan, space, cfg.dim, init, cfg.quant_clip)?;
        stages.push(runner.run(main("train"), &mut store, &mut model)?);
    }
    store.freeze()?;
    let auc = evaluate(&model, store.as_ref(), ds, Split::Valid, cfg.eval_batch)?;
    let test_auc = evaluate(&model, store.as_ref(), ds, Split::Test, cfg.eval_batch)?;
    let report = TrainReport {
        method: plan.method,
        auc,
        test_auc,
        inference_bytes: store.inference_bytes(),
        training_bytes: stages.iter().map(|s| s.training_bytes).max().unwrap_or(0),
        baseline_bytes: baseline,
        train_seconds: started.elapsed().as_secs_f64(),
        stage_breakdown: stages,
        seed,
        plan: plan.clone(),
    };
    Ok(Trained { store, model, report })
}
