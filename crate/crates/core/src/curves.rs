//! Item characteristic and information curves over a trait grid.

use nalgebra::Matrix2;

use crate::error::{CalibError, Result};
use crate::irt_model::{fisher_information_point, icc, ItemParams};
use crate::report::fmt_sig;

pub const CURVES_HEADER: &str = "item,a,b,c,theta,icc,det_ab_two_point,info_c";

/// Written next to the curve data; explains the determinant column.
pub const CURVES_METADATA: &str = "\
det_ab_two_point: determinant of the (beta1, beta2) block of the expected
information of the two-point design {theta, 2b - theta}, evaluated at the true
item. The full 3x3 determinant of that design is identically zero (a sum of two
rank-one terms), so the (a, b) block is reported instead; it peaks at the
D-optimal pair for (a, b).
info_c: (c, c) entry of the single-examinee expected information at theta.
";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    /// Index into the item list.
    pub item: usize,
    pub theta: f64,
    pub icc: f64,
    pub det_ab_two_point: f64,
    pub info_c: f64,
}

/// Grid `theta_min, theta_min + step, ...` up to `theta_max` (inclusive when it
/// lands on the grid, up to rounding).
pub fn theta_grid(theta_min: f64, theta_max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !theta_min.is_finite() || !theta_max.is_finite() || theta_max < theta_min {
        return Err(CalibError::Config(format!(
            "invalid theta grid [{theta_min}, {theta_max}] step {step}"
        )));
    }
    let count = ((theta_max - theta_min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| theta_min + k as f64 * step).collect())
}

pub fn emit_curves(items: &[ItemParams], theta_min: f64, theta_max: f64, step: f64) -> Result<Vec<CurvePoint>> {
    let grid = theta_grid(theta_min, theta_max, step)?;
    let mut out = Vec::with_capacity(items.len() * grid.len());
    for (k, item) in items.iter().enumerate() {
        let g = item.to_gamma();
        for &theta in &grid {
            let single = fisher_information_point(&g, theta);
            let pair = single + fisher_information_point(&g, 2.0 * item.b() - theta);
            let block = Matrix2::new(pair[(0, 0)], pair[(0, 1)], pair[(1, 0)], pair[(1, 1)]);
            out.push(CurvePoint {
                item: k,
                theta,
                icc: icc(theta, item),
                det_ab_two_point: block.determinant(),
                info_c: single[(2, 2)],
            });
        }
    }
    Ok(out)
}

pub fn curves_csv(items: &[ItemParams], points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for p in points {
        let it = &items[p.item];
        let fields = [
            p.item.to_string(),
            fmt_sig(it.a()),
            fmt_sig(it.b()),
            fmt_sig(it.c()),
            fmt_sig(p.theta),
            fmt_sig(p.icc),
            fmt_sig(p.det_ab_two_point),
            fmt_sig(p.info_c),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
