use ndarray::{ArrayD, Zip};

use crate::model::ModelParams;

/// RMSprop without momentum:
/// `g² ← ρ·g² + (1−ρ)·∇²`, `θ ← θ − η·∇ / (√g² + ε)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_square: Vec<ArrayD<f64>>,
}

impl RmsProp {
    pub fn new(params: &ModelParams, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        let mean_square = params.arrays().into_iter().map(|(_, a)| ArrayD::zeros(a.raw_dim())).collect();
        RmsProp {
            learning_rate,
            decay,
            epsilon,
            mean_square,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let (lr, rho, eps) = (self.learning_rate, self.decay, self.epsilon);
        for (((_, mut p), (_, g)), ms) in params.arrays_mut().into_iter().zip(grads.arrays()).zip(&mut self.mean_square) {
            Zip::from(&mut p).and(&g).and(ms).for_each(|p, &g, ms| {
                *ms = rho * *ms + (1.0 - rho) * g * g;
                *p -= lr * g / (ms.sqrt() + eps);
            });
        }
    }
}
