use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place softmax with max subtraction.
pub fn softmax_inplace(mut v: ArrayViewMut1<f64>) {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    v.mapv_inplace(|x| (x - max).exp());
    let sum = v.sum();
    v.mapv_inplace(|x| x / sum);
}

pub fn softmax(v: ArrayView1<f64>) -> Array1<f64> {
    let mut out = v.to_owned();
    softmax_inplace(out.view_mut());
    out
}

/// `log(Σ exp(v))`, stable.
pub fn log_sum_exp(v: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = v.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn uniform<R: Rng>(rng: &mut R, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..=bound))
}

/// Glorot/Xavier uniform bound.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
