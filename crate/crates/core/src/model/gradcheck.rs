use crate::data::Batch;
use crate::error::{Error, Result};
use crate::stores::EmbeddingStore;

use super::{bce_from_logits, DlrmLite};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Description of the coordinate with the largest error.
    pub worst: String,
    pub checked: usize,
    /// Store coordinates that cannot move (masked entries).
    pub frozen_coords: usize,
}

/// Magnitude below which gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

fn loss(model: &DlrmLite<f64>, store: &dyn EmbeddingStore<f64>, batch: &Batch<f64>) -> Result<f64> {
    let f = model.forward(store, batch)?;
    Ok(bce_from_logits(&f.logits, &batch.labels))
}

/// Checks every network parameter and every store parameter of the full
/// chain store -> model -> loss. Continuous coordinates move by `h`;
/// discretised ones by their own step.
pub fn check_gradients(
    model: &mut DlrmLite<f64>,
    store: &mut dyn EmbeddingStore<f64>,
    batch: &Batch<f64>,
    h: f64,
) -> Result<GradCheck> {
    let fwd = model.forward(store, batch)?;
    let grads = model.backward(&fwd, &batch.labels)?;
    let store_grad = store.backward(&batch.ids, &grads.rows)?.to_dense(store.param_len());

    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        frozen_coords: 0,
    };
    let mut record = |what: String, analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        out.checked += 1;
        if err > out.max_rel_error || out.worst.is_empty() {
            out.max_rel_error = err;
            out.worst = format!("{what}: analytic {analytic:e}, numeric {numeric:e}");
        }
    };

    for i in 0..model.params().len() {
        let orig = model.params()[i];
        model.set_param(i, orig + h);
        let up = loss(model, store, batch)?;
        model.set_param(i, orig - h);
        let down = loss(model, store, batch)?;
        model.set_param(i, orig);
        record(format!("network[{i}]"), grads.params[i], (up - down) / (2.0 * h));
    }

    let mut frozen = 0;
    for i in 0..store.param_len() {
        let orig = store.param(i);
        let step = store.param_step(i).unwrap_or(h);
        store.set_param(i, orig + step);
        let x_up = store.param(i);
        let up = loss(model, store, batch)?;
        store.set_param(i, orig - step);
        let x_down = store.param(i);
        let down = loss(model, store, batch)?;
        store.set_param(i, orig);
        if store.param(i) != orig {
            return Err(Error::state(format!("{} parameter {i} did not restore", store.name())));
        }
        if x_up == x_down {
            if store_grad[i] != 0.0 {
                return Err(Error::state(format!(
                    "{} parameter {i} cannot move but has gradient {:e}",
                    store.name(),
                    store_grad[i]
                )));
            }
            frozen += 1;
            continue;
        }
        record(format!("{}[{i}]", store.name()), store_grad[i], (up - down) / (x_up - x_down));
    }
    out.frozen_coords = frozen;
    Ok(out)
}
