//! wasm-bindgen entry points for the browser demo in `www/`.
//!
//! Everything comes back as a flat `Float64Array` with a fixed row width so
//! the page can plot without any glue code.

use itemcal::config::parse_item_list;
use itemcal::curves::emit_curves;
use itemcal::harness::{run_calibration_with_trace, Strategy, StudyConfig};
use itemcal::irt_model::ItemParams;
use wasm_bindgen::prelude::*;

/// Values per row returned by [`curves`].
#[wasm_bindgen]
pub fn curve_row_width() -> usize {
    5
}

/// Values per row returned by [`calibration_trace`].
#[wasm_bindgen]
pub fn trace_row_width() -> usize {
    6
}

/// Rows of `[item, theta, icc, det_ab_two_point, info_c]` for items given as
/// `a:b:c, a:b:c, ...`.
#[wasm_bindgen]
pub fn curves(items: &str, theta_min: f64, theta_max: f64, step: f64) -> Result<Vec<f64>, JsError> {
    let items = parse_item_list(items).map_err(js)?;
    let points = emit_curves(&items, theta_min, theta_max, step).map_err(js)?;
    Ok(points
        .iter()
        .flat_map(|p| [p.item as f64, p.theta, p.icc, p.det_ab_two_point, p.info_c])
        .collect())
}

/// One simulated calibration. Rows of `[n, a_hat, b_hat, c_hat, lambda_min,
/// threshold]`, one per stopping check.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn calibration_trace(
    a: f64,
    b: f64,
    c: f64,
    strategy: &str,
    d: f64,
    alpha: f64,
    seed: u64,
    max_n: usize,
) -> Result<Vec<f64>, JsError> {
    let item = ItemParams::new(a, b, c).map_err(js)?;
    let strategy: Strategy = strategy.parse().map_err(js)?;
    let mut cfg = StudyConfig { strategy, max_examinees: max_n, ..StudyConfig::default() };
    cfg.stopping.d = d;
    cfg.stopping.alpha = alpha;
    let (_, trace, _) = run_calibration_with_trace(&item, &cfg, seed).map_err(js)?;
    let mut out = Vec::with_capacity(trace.len() * trace_row_width());
    for t in &trace {
        // estimates outside the item domain (a <= 0) plot as gaps
        let (ea, eb, ec) = match t.gamma_hat.to_item() {
            Ok(it) => (it.a(), it.b(), it.c()),
            Err(_) => (f64::NAN, f64::NAN, t.gamma_hat.c),
        };
        out.extend_from_slice(&[t.n as f64, ea, eb, ec, t.lambda_min, t.threshold]);
    }
    Ok(out)
}

fn js(e: itemcal::error::CalibError) -> JsError {
    JsError::new(&e.to_string())
}
