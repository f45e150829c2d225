//! Central finite-difference verification of the analytic gradient.

use serde::Serialize;

use crate::corpus::{DocumentBank, Example, PAD_INDEX};
use crate::error::Result;
use crate::model::Model;
use crate::training::LossConfig;

/// Denominator floor of the relative error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    /// Largest `|∂L/∂e|` over the padding embedding rows; must be 0.
    pub padding_grad: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GroupError> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Compares the analytic gradient of the deterministic (dropout-free) loss
/// against `(L(θ+h) − L(θ−h)) / 2h` for every element of every parameter
/// array. The frozen padding embedding row is skipped and reported
/// separately.
pub fn gradient_check(
    model: &Model,
    bank: &DocumentBank,
    batch: &[Example],
    loss: &LossConfig,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grad(bank, batch, loss, None)?;
    let dim = model.config.embed_dim;
    let pad = PAD_INDEX as usize;
    let padding_grad = [&grads.user.embedding, &grads.item.embedding]
        .iter()
        .flat_map(|e| e.row(pad).to_vec())
        .fold(0.0, |m: f64, x| m.max(x.abs()));

    let mut probe = model.clone();
    let analytic = grads.arrays();
    let mut groups = Vec::with_capacity(analytic.len());
    for (a, (name, g)) in analytic.iter().enumerate() {
        let g = g.as_standard_layout();
        let g = g.as_slice().expect("standard layout");
        let frozen = name.ends_with(".embedding");
        let mut worst = GroupError {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        };
        for (e, &an) in g.iter().enumerate() {
            if frozen && e / dim == pad {
                continue;
            }
            let original = element(&mut probe, a, e, None);
            element(&mut probe, a, e, Some(original + step));
            let plus = probe.loss(bank, batch, loss)?.total;
            element(&mut probe, a, e, Some(original - step));
            let minus = probe.loss(bank, batch, loss)?.total;
            element(&mut probe, a, e, Some(original));
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(an, numeric);
            worst.checked += 1;
            if err > worst.max_rel_error || worst.checked == 1 {
                worst.max_rel_error = err;
                worst.worst_index = e;
                worst.analytic = an;
                worst.numeric = numeric;
            }
        }
        groups.push(worst);
    }
    Ok(GradCheckReport { groups, padding_grad })
}

/// Reads element `e` of array `a`, optionally overwriting it; returns the
/// previous value.
fn element(model: &mut Model, a: usize, e: usize, set: Option<f64>) -> f64 {
    let mut arrays = model.params.arrays_mut();
    let slot = &mut arrays[a].1.as_slice_mut().expect("owned arrays are contiguous")[e];
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}
