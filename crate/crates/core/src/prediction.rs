//! Rating head: a one-layer highway transform per sentiment capsule, an
//! affine projection to a sentiment rating, and the fused overall rating
//! `f_C(r_pos·‖o_pos‖ − r_neg·‖o_neg‖) + b_u + b_i`.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math::{glorot_bound, sigmoid, uniform};
use crate::sentiment::Sentiment;

/// Per-sentiment head parameters; leading axis is [`Sentiment::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    /// Highway gate transform, `2 × k × k`.
    pub gate_weight: Array3<f64>,
    /// `2 × k`
    pub gate_bias: Array2<f64>,
    /// Highway candidate transform, `2 × k × k`.
    pub hidden_weight: Array3<f64>,
    /// `2 × k`
    pub hidden_bias: Array2<f64>,
    /// Regression weights, `2 × k`.
    pub out_weight: Array2<f64>,
    /// `2`
    pub out_bias: Array1<f64>,
}

impl HeadParams {
    pub fn zeros(latent: usize) -> Self {
        HeadParams {
            gate_weight: Array3::zeros((2, latent, latent)),
            gate_bias: Array2::zeros((2, latent)),
            hidden_weight: Array3::zeros((2, latent, latent)),
            hidden_bias: Array2::zeros((2, latent)),
            out_weight: Array2::zeros((2, latent)),
            out_bias: Array1::zeros(2),
        }
    }

    pub fn init<R: Rng>(rng: &mut R, latent: usize) -> Self {
        let mut h = Self::zeros(latent);
        let sq = glorot_bound(latent, latent);
        for s in 0..2 {
            h.gate_weight.index_axis_mut(Axis(0), s).assign(&uniform(rng, (latent, latent), sq));
            h.hidden_weight.index_axis_mut(Axis(0), s).assign(&uniform(rng, (latent, latent), sq));
        }
        h.out_weight = uniform(rng, (2, latent), glorot_bound(latent, 1));
        h
    }
}

/// `η = σ(H₁o + b₁)`, `h = η ⊙ o + (1 − η) ⊙ tanh(H₂o + b₂)`.
pub fn highway(
    o: ArrayView1<f64>,
    gate_weight: ArrayView2<f64>,
    gate_bias: ArrayView1<f64>,
    hidden_weight: ArrayView2<f64>,
    hidden_bias: ArrayView1<f64>,
) -> Array1<f64> {
    highway_forward(o, gate_weight, gate_bias, hidden_weight, hidden_bias).0
}

pub(crate) struct HighwayCache {
    pub eta: Array1<f64>,
    pub cand: Array1<f64>,
}

pub(crate) fn highway_forward(
    o: ArrayView1<f64>,
    gate_weight: ArrayView2<f64>,
    gate_bias: ArrayView1<f64>,
    hidden_weight: ArrayView2<f64>,
    hidden_bias: ArrayView1<f64>,
) -> (Array1<f64>, HighwayCache) {
    let eta = (gate_weight.dot(&o) + gate_bias).mapv(sigmoid);
    let cand = (hidden_weight.dot(&o) + hidden_bias).mapv(f64::tanh);
    let h = &eta * &o + &eta.mapv(|e| 1.0 - e) * &cand;
    (h, HighwayCache { eta, cand })
}

/// `r_s = w_sᵀ h + b_{s,3}`.
pub fn sentiment_rating(h: ArrayView1<f64>, weight: ArrayView1<f64>, bias: f64) -> f64 {
    weight.dot(&h) + bias
}

/// Runs highway and projection for one sentiment with `params`.
pub fn head_rating(params: &HeadParams, s: Sentiment, o: ArrayView1<f64>) -> f64 {
    let i = s.index();
    let h = highway(
        o,
        params.gate_weight.index_axis(Axis(0), i),
        params.gate_bias.row(i),
        params.hidden_weight.index_axis(Axis(0), i),
        params.hidden_bias.row(i),
    );
    sentiment_rating(h.view(), params.out_weight.row(i), params.out_bias[i])
}

/// `f_C(x) = 1 + (C − 1)/(1 + e^{−x})`, with range `(1, C)`.
pub fn rating_sigmoid(x: f64, rating_max: f64) -> f64 {
    1.0 + (rating_max - 1.0) * sigmoid(x)
}

pub(crate) fn rating_sigmoid_grad(x: f64, rating_max: f64) -> f64 {
    let s = sigmoid(x);
    (rating_max - 1.0) * s * (1.0 - s)
}

/// Inputs to the fused rating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatingInputs {
    pub r_pos: f64,
    pub r_neg: f64,
    pub len_pos: f64,
    pub len_neg: f64,
    /// `None` for a user unseen in training.
    pub user_bias: Option<f64>,
    pub item_bias: Option<f64>,
    pub rating_max: f64,
}

/// Everything needed to recompute and explain one predicted rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBreakdown {
    pub r_pos: f64,
    pub r_neg: f64,
    pub len_pos: f64,
    pub len_neg: f64,
    pub user_bias: f64,
    pub item_bias: f64,
    pub rating_max: f64,
    pub rating: f64,
    /// True when a user or item bias was unavailable and 0 was used.
    pub cold: bool,
    /// Coupling coefficients `2 × M²`, when routing ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Array2<f64>>,
}

impl PredictionBreakdown {
    pub fn logit(&self) -> f64 {
        self.r_pos * self.len_pos - self.r_neg * self.len_neg
    }

    /// Recomputes the rating from the stored fields.
    pub fn recompute(&self) -> f64 {
        rating_sigmoid(self.logit(), self.rating_max) + self.user_bias + self.item_bias
    }
}

/// Fuses both sentiment ratings. Missing biases count as 0 and mark the
/// breakdown cold. The result is not clipped.
pub fn overall_rating(inputs: &RatingInputs) -> PredictionBreakdown {
    let cold = inputs.user_bias.is_none() || inputs.item_bias.is_none();
    let mut b = PredictionBreakdown {
        r_pos: inputs.r_pos,
        r_neg: inputs.r_neg,
        len_pos: inputs.len_pos,
        len_neg: inputs.len_neg,
        user_bias: inputs.user_bias.unwrap_or(0.0),
        item_bias: inputs.item_bias.unwrap_or(0.0),
        rating_max: inputs.rating_max,
        rating: 0.0,
        cold,
        coupling: None,
    };
    b.rating = b.recompute();
    b
}

/// Backward through highway + projection for sentiment `i`; accumulates
/// into `g` and returns `d o`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn head_backward(
    params: &HeadParams,
    g: &mut HeadParams,
    i: usize,
    o: ArrayView1<f64>,
    cache: &HighwayCache,
    h_dropped: ArrayView1<f64>,
    drop_scale: ArrayView1<f64>,
    d_r: f64,
) -> Array1<f64> {
    g.out_weight.row_mut(i).scaled_add(d_r, &h_dropped);
    g.out_bias[i] += d_r;
    let d_h = params.out_weight.row(i).mapv(|w| w * d_r) * drop_scale;
    let d_eta = &d_h * &(&o - &cache.cand);
    let mut d_o = &d_h * &cache.eta;
    let d_cand = &d_h * &cache.eta.mapv(|e| 1.0 - e);
    let d_z1 = &d_eta * &cache.eta.mapv(|e| e * (1.0 - e));
    let d_z2 = &d_cand * &cache.cand.mapv(|c| 1.0 - c * c);
    let k = o.len();
    for r in 0..k {
        g.gate_weight.slice_mut(s![i, r, ..]).scaled_add(d_z1[r], &o);
        g.hidden_weight.slice_mut(s![i, r, ..]).scaled_add(d_z2[r], &o);
    }
    let mut gb = g.gate_bias.row_mut(i);
    gb += &d_z1;
    let mut hb = g.hidden_bias.row_mut(i);
    hb += &d_z2;
    d_o += &params.gate_weight.index_axis(Axis(0), i).t().dot(&d_z1);
    d_o += &params.hidden_weight.index_axis(Axis(0), i).t().dot(&d_z2);
    d_o
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn highway_zero_input() {
        let h = highway(
            Array1::zeros(3).view(),
            Array2::eye(3).view(),
            Array1::zeros(3).view(),
            Array2::eye(3).view(),
            Array1::zeros(3).view(),
        );
        assert_eq!(h, Array1::<f64>::zeros(3));
    }

    #[test]
    fn highway_open_gate_carries_input() {
        let o = array![0.2, -0.7];
        let h = highway(
            o.view(),
            Array2::zeros((2, 2)).view(),
            array![800.0, 800.0].view(),
            Array2::eye(2).view(),
            Array1::zeros(2).view(),
        );
        assert_abs_diff_eq!(h, o, epsilon = 1e-15);
    }

    #[test]
    fn highway_scalar_fixture() {
        let h = highway(
            array![1.0].view(),
            array![[1.0]].view(),
            array![0.0].view(),
            array![[1.0]].view(),
            array![0.0].view(),
        );
        assert_abs_diff_eq!(h[0], 0.93588279343983, epsilon = 1e-12);
    }

    #[test]
    fn sentiment_rating_examples() {
        assert_eq!(sentiment_rating(Array1::zeros(3).view(), array![1.0, 2.0, 3.0].view(), 0.4), 0.4);
        assert_eq!(sentiment_rating(array![0.7, 9.0].view(), array![1.0, 0.0].view(), 0.0), 0.7);
        let h = array![0.5, -1.0, 2.0];
        let w = array![0.2, 0.3, -0.1];
        assert_abs_diff_eq!(sentiment_rating(h.view(), w.view(), 0.05), 0.1 - 0.3 - 0.2 + 0.05, epsilon = 1e-15);
    }

    fn inputs(r_pos: f64, len_pos: f64) -> RatingInputs {
        RatingInputs {
            r_pos,
            r_neg: 0.0,
            len_pos,
            len_neg: 0.0,
            user_bias: Some(0.0),
            item_bias: Some(0.0),
            rating_max: 5.0,
        }
    }

    #[test]
    fn overall_rating_examples() {
        assert_eq!(overall_rating(&inputs(0.0, 0.5)).rating, 3.0);
        assert_abs_diff_eq!(overall_rating(&inputs(1.0, 1.0)).rating, 3.9242343145200196, epsilon = 1e-12);
        assert_abs_diff_eq!(overall_rating(&inputs(1e4, 0.9)).rating, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(overall_rating(&inputs(-1e4, 0.9)).rating, 1.0, epsilon = 1e-12);
        let mut i = inputs(0.0, 0.0);
        i.user_bias = Some(0.25);
        i.item_bias = Some(-0.5);
        assert_eq!(overall_rating(&i).rating, 2.75);
    }

    #[test]
    fn cold_entities_use_zero_bias() {
        let mut i = inputs(0.0, 0.0);
        i.user_bias = None;
        i.item_bias = Some(0.5);
        let b = overall_rating(&i);
        assert!(b.cold);
        assert_eq!(b.rating, 3.5);
    }

    proptest! {
        #[test]
        fn rating_sigmoid_in_open_range(x in -30.0f64..30.0, y in -30.0f64..30.0) {
            let fx = rating_sigmoid(x, 5.0);
            prop_assert!(fx > 1.0 && fx < 5.0);
            if x < y {
                prop_assert!(fx < rating_sigmoid(y, 5.0));
            }
        }

        #[test]
        fn breakdown_recomputes(r_pos in -3.0f64..3.0, r_neg in -3.0f64..3.0, lp in 0.0f64..1.0, ln in 0.0f64..1.0, bu in -1.0f64..1.0, bi in -1.0f64..1.0) {
            let b = overall_rating(&RatingInputs { r_pos, r_neg, len_pos: lp, len_neg: ln, user_bias: Some(bu), item_bias: Some(bi), rating_max: 5.0 });
            prop_assert!((b.recompute() - b.rating).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_each_sentiment(a in -2.0f64..2.0, d in 0.01f64..1.0) {
            let base = RatingInputs { r_pos: a, r_neg: 0.5, len_pos: 0.8, len_neg: 0.4, user_bias: Some(0.1), item_bias: Some(-0.1), rating_max: 5.0 };
            let up = RatingInputs { r_pos: a + d, ..base };
            prop_assert!(overall_rating(&up).rating > overall_rating(&base).rating);
            let neg_up = RatingInputs { r_neg: 0.5 + d, ..base };
            prop_assert!(overall_rating(&neg_up).rating < overall_rating(&base).rating);
        }
    }
}
