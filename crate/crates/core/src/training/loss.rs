//! Rating and sentiment losses.

use crate::error::{CarpError, Result};
use crate::sentiment::Sentiment;

/// Mean squared residual.
pub fn loss_sqr(predictions: &[f64], ratings: &[f64]) -> Result<f64> {
    assert_eq!(predictions.len(), ratings.len());
    if predictions.is_empty() {
        return Err(CarpError::EmptyBatch);
    }
    let sum: f64 = predictions.iter().zip(ratings).map(|(p, r)| (p - r).powi(2)).sum();
    Ok(sum / predictions.len() as f64)
}

/// Per-pair sentiment margin and its derivatives with respect to
/// `(‖o_pos‖, ‖o_neg‖)`.
pub(crate) fn margin_term(
    len_pos: f64,
    len_neg: f64,
    label: Sentiment,
    epsilon: f64,
    mutual_exclusion: bool,
) -> (f64, [f64; 2]) {
    let lens = [len_pos, len_neg];
    let (own, other) = (label.index(), label.opposite().index());
    let mut value = 0.0;
    let mut grad = [0.0; 2];
    let miss = epsilon - lens[own];
    if miss > 0.0 {
        value += miss;
        grad[own] = -1.0;
    }
    if mutual_exclusion {
        let excess = lens[other] - 1.0 + epsilon;
        if excess > 0.0 {
            value += excess;
            grad[other] = 1.0;
        }
    }
    (value, grad)
}

fn mean_margin(len_pos: &[f64], len_neg: &[f64], labels: &[Sentiment], epsilon: f64, mutual: bool) -> Result<f64> {
    assert!(len_pos.len() == len_neg.len() && len_pos.len() == labels.len());
    if labels.is_empty() {
        return Err(CarpError::EmptyBatch);
    }
    let sum: f64 = (0..labels.len())
        .map(|b| margin_term(len_pos[b], len_neg[b], labels[b], epsilon, mutual).0)
        .sum();
    Ok(sum / labels.len() as f64)
}

/// Sentiment loss with the mutual-exclusion term:
/// `max(0, ε − ‖o_s‖) + max(0, ‖o_¬s‖ − 1 + ε)`, averaged.
pub fn loss_stm(len_pos: &[f64], len_neg: &[f64], labels: &[Sentiment], epsilon: f64) -> Result<f64> {
    mean_margin(len_pos, len_neg, labels, epsilon, true)
}

/// Sentiment loss on the labelled capsule only: `max(0, ε − ‖o_s‖)`.
pub fn loss_stm_basic(len_pos: &[f64], len_neg: &[f64], labels: &[Sentiment], epsilon: f64) -> Result<f64> {
    mean_margin(len_pos, len_neg, labels, epsilon, false)
}

pub fn total_loss(sqr: f64, stm: f64, lambda: f64) -> f64 {
    lambda * sqr + (1.0 - lambda) * stm
}
