//! Logic units, sentiment capsules and iterative routing.
//!
//! Logic unit `(x, y)` pairs viewpoint `x` with aspect `y` and is stored at
//! flat index `x·M + y`. Per-sentiment arrays use [`Sentiment::index`] on the
//! leading axis.
//!
//! Two routing procedures are provided. [`RoutingKind::BiAgreement`] mixes an
//! inter-capsule softmax (across the two sentiments) and an intra-capsule
//! softmax (across logic units) through their geometric mean and
//! renormalizes inside each capsule. [`RoutingKind::Agreement`] is the classic
//! softmax across capsules only and serves as the ablation baseline.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{glorot_bound, log_sum_exp, softmax_inplace, uniform};
use crate::sentiment::Sentiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RoutingKind {
    /// Routing by bi-agreement.
    #[default]
    #[serde(rename = "rbia")]
    BiAgreement,
    /// Routing by agreement (softmax over capsules only).
    #[serde(rename = "ra")]
    Agreement,
}

impl std::str::FromStr for RoutingKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rbia" => Ok(RoutingKind::BiAgreement),
            "ra" => Ok(RoutingKind::Agreement),
            other => Err(format!("unknown routing `{other}` (expected rbia or ra)")),
        }
    }
}

/// A viewpoint/aspect pairing and its feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LogicUnit {
    pub viewpoint: usize,
    pub aspect: usize,
    /// `(v − a) ⊕ (v ⊙ a)`, length `2k`.
    pub features: Array1<f64>,
}

/// `(v − a) ⊕ (v ⊙ a)`.
pub fn compose(viewpoint: ArrayView1<f64>, aspect: ArrayView1<f64>) -> Array1<f64> {
    let k = viewpoint.len();
    assert_eq!(aspect.len(), k);
    let mut g = Array1::zeros(2 * k);
    g.slice_mut(s![..k]).assign(&(&viewpoint - &aspect));
    g.slice_mut(s![k..]).assign(&(&viewpoint * &aspect));
    g
}

/// All `M²` logic units as rows of an `M² × 2k` matrix.
pub fn compose_all(viewpoints: ArrayView2<f64>, aspects: ArrayView2<f64>) -> Array2<f64> {
    let (m, k) = viewpoints.dim();
    let mut units = Array2::zeros((m * m, 2 * k));
    for x in 0..m {
        for y in 0..m {
            units
                .row_mut(x * m + y)
                .assign(&compose(viewpoints.row(x), aspects.row(y)));
        }
    }
    units
}

pub fn logic_units(viewpoints: ArrayView2<f64>, aspects: ArrayView2<f64>) -> Vec<LogicUnit> {
    let m = viewpoints.nrows();
    compose_all(viewpoints, aspects)
        .outer_iter()
        .enumerate()
        .map(|(u, g)| LogicUnit {
            viewpoint: u / m,
            aspect: u % m,
            features: g.to_owned(),
        })
        .collect()
}

/// Per-sentiment, per-unit `k × 2k` matrices: shape `2 × M² × k × 2k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapsuleTransforms(pub Array4<f64>);

impl CapsuleTransforms {
    pub fn zeros(slots: usize, latent: usize) -> Self {
        CapsuleTransforms(Array4::zeros((2, slots * slots, latent, 2 * latent)))
    }

    pub fn init<R: Rng>(rng: &mut R, slots: usize, latent: usize) -> Self {
        let mut t = Self::zeros(slots, latent);
        let bound = glorot_bound(2 * latent, latent);
        for s in 0..2 {
            for u in 0..slots * slots {
                t.0.slice_mut(s![s, u, .., ..])
                    .assign(&uniform(rng, (latent, 2 * latent), bound));
            }
        }
        t
    }
}

/// `t_{s,u} = W_{s,u} g_u` for one sentiment; returns `M² × k`.
pub fn transform_units(units: ArrayView2<f64>, transforms: &CapsuleTransforms, sentiment: Sentiment) -> Array2<f64> {
    let w = transforms.0.index_axis(Axis(0), sentiment.index());
    let (n_units, latent, _) = w.dim();
    assert_eq!(units.nrows(), n_units);
    let mut t = Array2::zeros((n_units, latent));
    for u in 0..n_units {
        t.row_mut(u).assign(&w.index_axis(Axis(0), u).dot(&units.row(u)));
    }
    t
}

/// Both sentiments stacked: `2 × M² × k`.
pub fn transform_all(units: ArrayView2<f64>, transforms: &CapsuleTransforms) -> Array3<f64> {
    let mut t = Array3::zeros((2, units.nrows(), transforms.0.dim().2));
    for s in Sentiment::BOTH {
        t.index_axis_mut(Axis(0), s.index())
            .assign(&transform_units(units, transforms, s));
    }
    t
}

/// `o = ‖s‖²/(1+‖s‖²) · s/‖s‖`; the zero vector maps to zero.
pub fn squash(v: ArrayView1<f64>) -> Array1<f64> {
    let sq = v.dot(&v);
    if sq == 0.0 {
        return Array1::zeros(v.len());
    }
    let norm = sq.sqrt();
    v.mapv(|x| x * norm / (1.0 + sq))
}

fn squash_backward(v: ArrayView1<f64>, d_out: ArrayView1<f64>) -> Array1<f64> {
    let sq = v.dot(&v);
    if sq == 0.0 {
        return Array1::zeros(v.len());
    }
    let norm = sq.sqrt();
    let scale = norm / (1.0 + sq);
    let d_scale = (1.0 - sq) / ((1.0 + sq) * (1.0 + sq));
    let proj = v.dot(&d_out);
    let mut g = d_out.mapv(|x| x * scale);
    g.scaled_add(d_scale * proj / norm, &v);
    g
}

/// Log of the inter-capsule softmax: normalizes each unit's two agreements.
fn log_check(b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = b.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let lse = log_sum_exp(col.iter().copied());
        col.mapv_inplace(|x| x - lse);
    }
    out
}

/// Log of the intra-capsule softmax: normalizes each capsule over its units.
fn log_hat(b: ArrayView2<f64>) -> Array2<f64> {
    let mut out = b.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Coupling coefficients from agreements `b` (`2 × U`) under bi-agreement:
/// the L1-normalized geometric mean of the inter- and intra-capsule
/// softmaxes, computed in the log domain.
pub fn rbia_coupling(b: ArrayView2<f64>) -> Array2<f64> {
    let mut c = (log_check(b) + log_hat(b)) * 0.5;
    for row in c.axis_iter_mut(Axis(0)) {
        softmax_inplace(row);
    }
    c
}

/// Coupling coefficients under plain agreement: softmax across the two
/// capsules for each unit.
pub fn ra_coupling(b: ArrayView2<f64>) -> Array2<f64> {
    log_check(b).mapv(f64::exp)
}

/// Result of routing one user-item pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingState {
    pub kind: RoutingKind,
    pub iterations: usize,
    /// Agreements after the final update, `2 × M²`.
    pub agreements: Array2<f64>,
    /// Inter-capsule candidate of the final iteration, `2 × M²`.
    pub inter: Array2<f64>,
    /// Intra-capsule candidate of the final iteration, `2 × M²`.
    pub intra: Array2<f64>,
    /// Coupling coefficients of the final iteration, `2 × M²`.
    pub coupling: Array2<f64>,
    /// Pre-squash capsule sums, `2 × k`.
    pub pre_squash: Array2<f64>,
    /// Capsule outputs, `2 × k`.
    pub outputs: Array2<f64>,
}

impl RoutingState {
    pub fn output(&self, s: Sentiment) -> ArrayView1<'_, f64> {
        self.outputs.row(s.index())
    }

    pub fn output_len(&self, s: Sentiment) -> f64 {
        let o = self.output(s);
        o.dot(&o).sqrt()
    }
}

pub(crate) struct RoutingStep {
    b: Array2<f64>,
    c: Array2<f64>,
    sums: Array2<f64>,
    outputs: Array2<f64>,
}

pub(crate) struct RoutingTrace {
    kind: RoutingKind,
    steps: Vec<RoutingStep>,
}

/// Routes `t` (`2 × U × k`) for `iterations ≥ 1` rounds starting from zero
/// agreements.
pub fn route(kind: RoutingKind, t: ArrayView3<f64>, iterations: usize) -> RoutingState {
    route_traced(kind, t, iterations).0
}

pub fn route_rbia(t: ArrayView3<f64>, iterations: usize) -> RoutingState {
    route(RoutingKind::BiAgreement, t, iterations)
}

pub fn route_ra(t: ArrayView3<f64>, iterations: usize) -> RoutingState {
    route(RoutingKind::Agreement, t, iterations)
}

pub(crate) fn route_traced(kind: RoutingKind, t: ArrayView3<f64>, iterations: usize) -> (RoutingState, RoutingTrace) {
    assert!(iterations >= 1, "routing needs at least one iteration");
    let (caps, units, latent) = t.dim();
    assert_eq!(caps, 2);
    let mut b = Array2::zeros((2, units));
    let mut steps = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let c = match kind {
            RoutingKind::BiAgreement => rbia_coupling(b.view()),
            RoutingKind::Agreement => ra_coupling(b.view()),
        };
        let mut sums = Array2::zeros((2, latent));
        let mut outputs = Array2::zeros((2, latent));
        for s in 0..2 {
            let ts = t.index_axis(Axis(0), s);
            let sum = c.row(s).dot(&ts);
            outputs.row_mut(s).assign(&squash(sum.view()));
            sums.row_mut(s).assign(&sum);
        }
        let mut next = b.clone();
        for s in 0..2 {
            let agree = t.index_axis(Axis(0), s).dot(&outputs.row(s));
            let mut row = next.row_mut(s);
            row += &agree;
        }
        steps.push(RoutingStep { b, c, sums, outputs });
        b = next;
    }
    let last = steps.last().expect("at least one step");
    let lc = log_check(last.b.view());
    let state = RoutingState {
        kind,
        iterations,
        inter: lc.mapv(f64::exp),
        intra: log_hat(last.b.view()).mapv(f64::exp),
        agreements: b,
        coupling: last.c.clone(),
        pre_squash: last.sums.clone(),
        outputs: last.outputs.clone(),
    };
    (state, RoutingTrace { kind, steps })
}

/// Gradient of the coupling map at `b`, applied to `d_c`.
fn coupling_backward(kind: RoutingKind, b: ArrayView2<f64>, c: ArrayView2<f64>, d_c: ArrayView2<f64>) -> Array2<f64> {
    let softmax_rows_back = |p: ArrayView2<f64>, d: ArrayView2<f64>| {
        let mut g = Array2::zeros(p.raw_dim());
        for s in 0..p.nrows() {
            let dot = p.row(s).dot(&d.row(s));
            for u in 0..p.ncols() {
                g[[s, u]] = p[[s, u]] * (d[[s, u]] - dot);
            }
        }
        g
    };
    match kind {
        RoutingKind::Agreement => {
            let mut g = Array2::zeros(b.raw_dim());
            for u in 0..c.ncols() {
                let dot = c[[0, u]] * d_c[[0, u]] + c[[1, u]] * d_c[[1, u]];
                for s in 0..2 {
                    g[[s, u]] = c[[s, u]] * (d_c[[s, u]] - dot);
                }
            }
            g
        }
        RoutingKind::BiAgreement => {
            // c = row-softmax(ℓ), ℓ = ½(log č + log ĉ)
            let half = softmax_rows_back(c, d_c) * 0.5;
            let check = log_check(b).mapv(f64::exp);
            let hat = log_hat(b).mapv(f64::exp);
            let mut g = half.clone();
            for u in 0..b.ncols() {
                let col_sum = half[[0, u]] + half[[1, u]];
                for s in 0..2 {
                    g[[s, u]] -= check[[s, u]] * col_sum;
                }
            }
            g += &half;
            for s in 0..2 {
                let row_sum = half.row(s).sum();
                for u in 0..b.ncols() {
                    g[[s, u]] -= hat[[s, u]] * row_sum;
                }
            }
            g
        }
    }
}

/// Back-propagates `d_outputs` (`2 × k`, gradient of the final capsule
/// outputs) through every unrolled iteration; returns `d t`.
pub(crate) fn route_backward(trace: &RoutingTrace, t: ArrayView3<f64>, d_outputs: ArrayView2<f64>) -> Array3<f64> {
    let mut d_t = Array3::zeros(t.raw_dim());
    let mut d_b_next: Option<Array2<f64>> = None;
    for (i, step) in trace.steps.iter().enumerate().rev() {
        let mut d_o = if i + 1 == trace.steps.len() {
            d_outputs.to_owned()
        } else {
            Array2::zeros(step.outputs.raw_dim())
        };
        let mut d_b = Array2::zeros(step.b.raw_dim());
        if let Some(d_next) = &d_b_next {
            // b' = b + t·o
            d_b += d_next;
            for s in 0..2 {
                let ts = t.index_axis(Axis(0), s);
                let mut dts = d_t.index_axis_mut(Axis(0), s);
                for u in 0..ts.nrows() {
                    dts.row_mut(u).scaled_add(d_next[[s, u]], &step.outputs.row(s));
                }
                let mut dos = d_o.row_mut(s);
                dos += &d_next.row(s).dot(&ts);
            }
        }
        let mut d_c = Array2::zeros(step.c.raw_dim());
        for s in 0..2 {
            let d_sum = squash_backward(step.sums.row(s), d_o.row(s));
            let ts = t.index_axis(Axis(0), s);
            let mut dts = d_t.index_axis_mut(Axis(0), s);
            for u in 0..ts.nrows() {
                d_c[[s, u]] = d_sum.dot(&ts.row(u));
                dts.row_mut(u).scaled_add(step.c[[s, u]], &d_sum);
            }
        }
        d_b += &coupling_backward(trace.kind, step.b.view(), step.c.view(), d_c.view());
        d_b_next = Some(d_b);
    }
    d_t
}

/// Gradients of `transform_all` followed by `compose_all`.
pub(crate) fn units_backward(
    viewpoints: ArrayView2<f64>,
    aspects: ArrayView2<f64>,
    units: ArrayView2<f64>,
    transforms: &CapsuleTransforms,
    d_t: ArrayView3<f64>,
    d_transforms: &mut CapsuleTransforms,
) -> (Array2<f64>, Array2<f64>) {
    let (m, k) = viewpoints.dim();
    let mut d_units = Array2::<f64>::zeros(units.raw_dim());
    for s in 0..2 {
        for u in 0..m * m {
            let dt: ArrayView1<f64> = d_t.slice(s![s, u, ..]);
            let w: ArrayView2<f64> = transforms.0.slice(s![s, u, .., ..]);
            let mut dw = d_transforms.0.slice_mut(s![s, u, .., ..]);
            for r in 0..k {
                dw.row_mut(r).scaled_add(dt[r], &units.row(u));
            }
            let mut du = d_units.row_mut(u);
            du += &w.t().dot(&dt);
        }
    }
    let mut d_v = Array2::zeros((m, k));
    let mut d_a = Array2::zeros((m, k));
    for x in 0..m {
        for y in 0..m {
            let g = d_units.row(x * m + y);
            let (diff, prod) = (g.slice(s![..k]), g.slice(s![k..]));
            let mut dv = d_v.row_mut(x);
            dv += &diff;
            dv += &(&prod * &aspects.row(y));
            let mut da = d_a.row_mut(y);
            da -= &diff;
            da += &(&prod * &viewpoints.row(x));
        }
    }
    (d_v, d_a)
}
