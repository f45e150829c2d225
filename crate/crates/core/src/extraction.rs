//! Viewpoint (user side) and aspect (item side) extraction.
//!
//! For every slot `x` the contextual features are gated,
//! `s_j = c_j ⊙ σ(W₁ₓ c_j + W₂ₓ qₓ + bₓ)`, projected to the latent space with
//! a slot-shared matrix, `p_j = W_p s_j`, and pooled by self-attention whose
//! query is the masked mean of the `p_j`.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CarpError, Result};
use crate::math::{glorot_bound, sigmoid, softmax_inplace, uniform};

/// Gating and projection parameters of one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// `M × n × n`
    pub w1: Array3<f64>,
    /// `M × n × n`
    pub w2: Array3<f64>,
    /// `M × n`
    pub bias: Array2<f64>,
    /// Slot query embeddings, shared by all users (items). `M × n`
    pub query: Array2<f64>,
    /// `k × n`
    pub projection: Array2<f64>,
}

impl GateParams {
    pub fn zeros(slots: usize, filters: usize, latent: usize) -> Self {
        GateParams {
            w1: Array3::zeros((slots, filters, filters)),
            w2: Array3::zeros((slots, filters, filters)),
            bias: Array2::zeros((slots, filters)),
            query: Array2::zeros((slots, filters)),
            projection: Array2::zeros((latent, filters)),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, slots: usize, filters: usize, latent: usize) -> Self {
        let square = glorot_bound(filters, filters);
        let mut p = Self::zeros(slots, filters, latent);
        for x in 0..slots {
            p.w1.index_axis_mut(Axis(0), x).assign(&uniform(rng, (filters, filters), square));
            p.w2.index_axis_mut(Axis(0), x).assign(&uniform(rng, (filters, filters), square));
        }
        p.query = uniform(rng, (slots, filters), 0.1);
        p.projection = uniform(rng, (latent, filters), glorot_bound(filters, latent));
        p
    }

    pub fn slots(&self) -> usize {
        self.w1.dim().0
    }
}

/// The `M` pooled vectors of one document plus their attention weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointSet {
    /// `M × k`
    pub vectors: Array2<f64>,
    /// `M × l`; zero on masked positions.
    pub attention: Array2<f64>,
}

/// Viewpoint-specific gate for one position.
pub fn gate(
    features: ArrayView1<f64>,
    w1: ArrayView2<f64>,
    w2: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    query: ArrayView1<f64>,
) -> Array1<f64> {
    let pre = w1.dot(&features) + w2.dot(&query) + bias;
    &features * &pre.mapv(sigmoid)
}

pub fn project(gated: ArrayView1<f64>, projection: ArrayView2<f64>) -> Array1<f64> {
    projection.dot(&gated)
}

/// Attention pooling with the masked mean as query.
///
/// Returns the pooled vector and one weight per position (zero where masked).
pub fn self_attend(projected: ArrayView2<f64>, mask: &[bool]) -> Result<(Array1<f64>, Array1<f64>)> {
    let (pooled, attn, _) = attend(projected, mask)?;
    Ok((pooled, attn))
}

fn attend(projected: ArrayView2<f64>, mask: &[bool]) -> Result<(Array1<f64>, Array1<f64>, Array1<f64>)> {
    let (len, latent) = projected.dim();
    assert_eq!(mask.len(), len);
    let active: Vec<usize> = (0..len).filter(|&j| mask[j]).collect();
    if active.is_empty() {
        return Err(CarpError::EmptyDocument);
    }
    let mut mean = Array1::zeros(latent);
    for &j in &active {
        mean += &projected.row(j);
    }
    mean /= active.len() as f64;
    let mut scores = Array1::from_iter(active.iter().map(|&j| projected.row(j).dot(&mean)));
    softmax_inplace(scores.view_mut());
    let mut attn = Array1::zeros(len);
    let mut pooled = Array1::zeros(latent);
    for (&j, &a) in active.iter().zip(&scores) {
        attn[j] = a;
        pooled.scaled_add(a, &projected.row(j));
    }
    Ok((pooled, attn, mean))
}

/// Runs gate → project → self-attention for every slot.
pub fn extract_all(features: ArrayView2<f64>, mask: &[bool], params: &GateParams) -> Result<ViewpointSet> {
    Ok(extract_forward(features, mask, params)?.0)
}

pub(crate) struct SlotCache {
    gate: Array2<f64>,
    gated: Array2<f64>,
    projected: Array2<f64>,
    mean: Array1<f64>,
}

pub(crate) fn extract_forward(
    features: ArrayView2<f64>,
    mask: &[bool],
    params: &GateParams,
) -> Result<(ViewpointSet, Vec<SlotCache>)> {
    let slots = params.slots();
    let len = features.nrows();
    let latent = params.projection.nrows();
    let mut vectors = Array2::zeros((slots, latent));
    let mut attention = Array2::zeros((slots, len));
    let mut caches = Vec::with_capacity(slots);
    for x in 0..slots {
        let w1 = params.w1.index_axis(Axis(0), x);
        let w2 = params.w2.index_axis(Axis(0), x);
        let offset = w2.dot(&params.query.row(x)) + params.bias.row(x);
        let mut gate = features.dot(&w1.t());
        gate += &offset;
        gate.mapv_inplace(sigmoid);
        let gated = &features * &gate;
        let projected = gated.dot(&params.projection.t());
        let (pooled, attn, mean) = attend(projected.view(), mask)?;
        vectors.row_mut(x).assign(&pooled);
        attention.row_mut(x).assign(&attn);
        caches.push(SlotCache {
            gate,
            gated,
            projected,
            mean,
        });
    }
    Ok((ViewpointSet { vectors, attention }, caches))
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to `features`.
pub(crate) fn extract_backward(
    features: ArrayView2<f64>,
    mask: &[bool],
    params: &GateParams,
    out: &ViewpointSet,
    caches: &[SlotCache],
    d_vectors: ArrayView2<f64>,
    grads: &mut GateParams,
) -> Array2<f64> {
    let len = features.nrows();
    let active = mask.iter().filter(|&&m| m).count() as f64;
    let mut d_features = Array2::zeros(features.raw_dim());
    for (x, cache) in caches.iter().enumerate() {
        let dv = d_vectors.row(x);
        let attn = out.attention.row(x);
        let p = &cache.projected;

        // pooled = Σ a_j p_j, a = softmax(p_j · mean)
        let mut d_p = Array2::zeros(p.raw_dim());
        let d_attn: Array1<f64> = p.dot(&dv);
        let weighted: f64 = (0..len).filter(|&j| mask[j]).map(|j| attn[j] * d_attn[j]).sum();
        let mut d_mean = Array1::zeros(dv.len());
        for j in (0..len).filter(|&j| mask[j]) {
            let d_score = attn[j] * (d_attn[j] - weighted);
            let mut row = d_p.row_mut(j);
            row.scaled_add(attn[j], &dv);
            row.scaled_add(d_score, &cache.mean);
            d_mean.scaled_add(d_score, &p.row(j));
        }
        d_mean /= active;
        for j in (0..len).filter(|&j| mask[j]) {
            let mut row = d_p.row_mut(j);
            row += &d_mean;
        }

        // p = s W_pᵀ
        grads.projection += &d_p.t().dot(&cache.gated);
        let d_gated = d_p.dot(&params.projection);

        // s = c ⊙ g, g = σ(z)
        d_features += &(&d_gated * &cache.gate);
        let d_z = &d_gated * &features * &cache.gate.mapv(|g| g * (1.0 - g));
        let w1 = params.w1.index_axis(Axis(0), x);
        let mut gw1 = grads.w1.index_axis_mut(Axis(0), x);
        gw1 += &d_z.t().dot(&features);
        d_features += &d_z.dot(&w1);
        let d_offset = d_z.sum_axis(Axis(0));
        let mut gb = grads.bias.row_mut(x);
        gb += &d_offset;
        let q = params.query.row(x);
        let mut gw2 = grads.w2.index_axis_mut(Axis(0), x);
        for a in 0..d_offset.len() {
            gw2.row_mut(a).scaled_add(d_offset[a], &q);
        }
        let w2 = params.w2.index_axis(Axis(0), x);
        let mut gq = grads.query.row_mut(x);
        gq += &w2.t().dot(&d_offset);
    }
    d_features
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_features_gate_to_zero() {
        let n = 3;
        let s = gate(
            Array1::zeros(n).view(),
            Array2::eye(n).view(),
            Array2::eye(n).view(),
            Array1::ones(n).view(),
            Array1::ones(n).view(),
        );
        assert!(s.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gate_hand_fixture() {
        let s = gate(
            array![1.0, -1.0].view(),
            Array2::eye(2).view(),
            Array2::eye(2).view(),
            Array1::zeros(2).view(),
            Array1::zeros(2).view(),
        );
        assert_abs_diff_eq!(s[0], 0.7310585786300049, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], -0.2689414213699951, epsilon = 1e-12);
    }

    #[test]
    fn gate_limits() {
        let c = array![2.0, -3.0];
        let open = gate(c.view(), Array2::zeros((2, 2)).view(), Array2::zeros((2, 2)).view(), array![800.0, 800.0].view(), Array1::zeros(2).view());
        assert_eq!(open, c);
        let shut = gate(c.view(), Array2::zeros((2, 2)).view(), Array2::zeros((2, 2)).view(), array![-800.0, -800.0].view(), Array1::zeros(2).view());
        assert!(shut.iter().all(|x| x.abs() < 1e-300));
    }

    #[test]
    fn projection_matches_hand_arithmetic() {
        let w = array![[1.0, 2.0, 0.0], [0.0, -1.0, 3.0], [0.5, 0.5, 0.5]];
        let s = array![1.0, 2.0, -1.0];
        assert_eq!(project(s.view(), w.view()), array![5.0, -5.0, 1.0]);
        assert_eq!(project(s.view(), Array2::eye(3).view()), s);
        assert_eq!(project(Array1::zeros(3).view(), w.view()), Array1::<f64>::zeros(3));
    }

    #[test]
    fn identical_rows_give_uniform_attention() {
        let p = Array2::from_shape_fn((4, 2), |(_, j)| j as f64 + 0.5);
        let (v, attn) = self_attend(p.view(), &[true; 4]).unwrap();
        assert!(attn.iter().all(|&a| (a - 0.25).abs() < 1e-15));
        assert_abs_diff_eq!(v, array![0.5, 1.5], epsilon = 1e-15);
    }

    #[test]
    fn two_orthogonal_rows() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let (v, attn) = self_attend(p.view(), &[true, true]).unwrap();
        assert_abs_diff_eq!(attn, array![0.5, 0.5], epsilon = 1e-15);
        assert_abs_diff_eq!(v, array![0.5, 0.5], epsilon = 1e-15);
    }

    #[test]
    fn masked_positions_get_no_attention() {
        let p = array![[1.0, 0.0], [50.0, 50.0], [0.0, 1.0]];
        let (v, attn) = self_attend(p.view(), &[true, false, true]).unwrap();
        assert_eq!(attn[1], 0.0);
        assert_abs_diff_eq!(attn.sum(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v, array![0.5, 0.5], epsilon = 1e-15);
        assert!(matches!(self_attend(p.view(), &[false; 3]), Err(CarpError::EmptyDocument)));
    }

    #[test]
    fn sides_with_distinct_queries_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let user = GateParams::init(&mut rng, 2, 4, 3);
        let mut item = user.clone();
        item.query.mapv_inplace(|q| -5.0 * q - 1.0);
        let c = Array::from_shape_fn((5, 4), |(i, j)| ((i + j) % 3) as f64);
        let a = extract_all(c.view(), &[true; 5], &user).unwrap();
        let b = extract_all(c.view(), &[true; 5], &item).unwrap();
        assert_eq!(a.vectors.dim(), (2, 3));
        assert_ne!(a.vectors, b.vectors);
    }

    #[test]
    fn single_slot_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = GateParams::init(&mut rng, 1, 4, 3);
        for len in [1, 2, 7] {
            let c = Array2::from_elem((len, 4), 0.3);
            let out = extract_all(c.view(), &vec![true; len], &params).unwrap();
            assert_eq!(out.vectors.dim(), (1, 3));
            assert_eq!(out.attention.dim(), (1, len));
        }
    }
}
