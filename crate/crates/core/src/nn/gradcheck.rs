//! Central finite-difference verification of analytic gradients.

use super::params::ParamStore;
use super::tape::{Gradients, ParamId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Perturbation size, within `[1e-7, 1e-4]`.
    pub epsilon: f64,
    /// Coordinates checked per tensor; larger tensors are strided.
    pub max_coords_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-6,
            max_coords_per_tensor: 32,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst: Option<String>,
    pub coordinates: usize,
}

fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

enum Target {
    Dense(ParamId),
    Row(usize),
}

/// Compares `grads` against central differences of `loss_fn` for every
/// tensor present in `grads`. Parameters are restored after each probe.
pub fn finite_difference_check<P, F>(
    params: &mut P,
    grads: &Gradients,
    mut loss_fn: F,
    config: &GradCheckConfig,
) -> GradCheckReport
where
    P: ParamStore,
    F: FnMut(&P) -> f64,
{
    let mut targets: Vec<(Target, &[f64])> = grads
        .dense_iter()
        .map(|(id, g)| (Target::Dense(*id), g.as_slice()))
        .collect();
    targets.extend(grads.row_iter().map(|(v, g)| (Target::Row(v), g)));

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let eps = config.epsilon;
    for (target, analytic) in targets {
        let n = analytic.len();
        let stride = n.div_ceil(config.max_coords_per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let mut probe = |params: &mut P, delta: f64| -> f64 {
                let slot = match &target {
                    Target::Dense(id) => params.dense_mut(id),
                    Target::Row(v) => params.row_mut(*v),
                }
                .expect("gradient target exists");
                let original = slot[i];
                slot[i] = original + delta;
                let value = loss_fn(params);
                let slot = match &target {
                    Target::Dense(id) => params.dense_mut(id),
                    Target::Row(v) => params.row_mut(*v),
                }
                .expect("gradient target exists");
                slot[i] = original;
                value
            };
            let plus = probe(params, eps);
            let minus = probe(params, -eps);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[i], numeric, config.floor);
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(err);
                let name = match &target {
                    Target::Dense(id) => id.to_string(),
                    Target::Row(v) => format!("embedding[{v}]"),
                };
                report.worst = Some(format!(
                    "{name}[{i}] analytic {:.6e} numeric {:.6e}",
                    analytic[i], numeric
                ));
            }
        }
    }
    report
}
