//! Context encoding: word embeddings followed by a same-padded 1-D
//! convolution with ReLU.
//!
//! Filter weights are stored as an `n × (c·d)` matrix; column `o·d + e` is
//! embedding coordinate `e` of the word at offset `o - (c-1)/2` from the
//! window center.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Looks up one embedding row per token.
///
/// # Panics
/// If a token index is outside the table.
pub fn embed(table: &Array2<f64>, tokens: &[u32]) -> Array2<f64> {
    let (vocab, dim) = table.dim();
    let mut out = Array2::zeros((tokens.len(), dim));
    for (j, &t) in tokens.iter().enumerate() {
        assert!((t as usize) < vocab, "token index {t} outside vocabulary of {vocab}");
        out.row_mut(j).assign(&table.row(t as usize));
    }
    out
}

/// `c_j = ReLU(W · window_j + b)`, zeroed where `mask` is false.
///
/// # Panics
/// If the document is empty, the window is even, or shapes disagree.
pub fn convolve(
    embedded: ArrayView2<f64>,
    mask: &[bool],
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    window: usize,
) -> Array2<f64> {
    convolve_forward(embedded, mask, weight, bias, window).0
}

pub(crate) struct ConvCache {
    cols: Array2<f64>,
    /// Post-ReLU, post-mask output; positive entries carry gradient.
    out: Array2<f64>,
}

fn im2col(embedded: ArrayView2<f64>, window: usize) -> Array2<f64> {
    let (len, dim) = embedded.dim();
    let half = (window - 1) / 2;
    let mut cols = Array2::zeros((len, window * dim));
    for j in 0..len {
        for o in 0..window {
            let src = j as isize + o as isize - half as isize;
            if src >= 0 && (src as usize) < len {
                cols.slice_mut(s![j, o * dim..(o + 1) * dim])
                    .assign(&embedded.row(src as usize));
            }
        }
    }
    cols
}

pub(crate) fn convolve_forward(
    embedded: ArrayView2<f64>,
    mask: &[bool],
    weight: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    window: usize,
) -> (Array2<f64>, ConvCache) {
    let (len, dim) = embedded.dim();
    assert!(len >= 1, "convolution needs at least one position");
    assert!(window % 2 == 1, "window size must be odd");
    assert_eq!(mask.len(), len);
    assert_eq!(weight.ncols(), window * dim);
    let cols = im2col(embedded, window);
    let mut out = cols.dot(&weight.t());
    out += &bias;
    for (j, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        if mask[j] {
            row.mapv_inplace(|x| x.max(0.0));
        } else {
            row.fill(0.0);
        }
    }
    (out.clone(), ConvCache { cols, out })
}

pub(crate) struct ConvGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub embedded: Array2<f64>,
}

pub(crate) fn convolve_backward(
    cache: &ConvCache,
    d_out: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    window: usize,
) -> ConvGrads {
    let mut d_pre = d_out.to_owned();
    d_pre.zip_mut_with(&cache.out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
    let d_weight = d_pre.t().dot(&cache.cols);
    let d_bias = d_pre.sum_axis(Axis(0));
    let d_cols = d_pre.dot(&weight);
    let len = d_out.nrows();
    let dim = weight.ncols() / window;
    let half = (window - 1) / 2;
    let mut d_embedded = Array2::zeros((len, dim));
    for j in 0..len {
        for o in 0..window {
            let src = j as isize + o as isize - half as isize;
            if src >= 0 && (src as usize) < len {
                let mut row = d_embedded.row_mut(src as usize);
                row += &d_cols.slice(s![j, o * dim..(o + 1) * dim]);
            }
        }
    }
    ConvGrads {
        weight: d_weight,
        bias: d_bias,
        embedded: d_embedded,
    }
}
