//! Grid enumeration for the `M`, `τ` and `λ` sensitivity studies.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CarpError, Result};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    /// Viewpoints/aspects per side.
    #[serde(rename = "M")]
    Slots,
    /// Routing iterations.
    #[serde(rename = "tau")]
    Iterations,
    #[serde(rename = "lambda")]
    Lambda,
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "M" | "m" => Ok(SweepParam::Slots),
            "tau" => Ok(SweepParam::Iterations),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(format!("unknown sweep parameter `{other}` (expected M, tau or lambda)")),
        }
    }
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Slots => "M",
            SweepParam::Iterations => "tau",
            SweepParam::Lambda => "lambda",
        }
    }

    /// The grid studied for this parameter.
    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParam::Slots => vec![3.0, 5.0, 7.0, 9.0],
            SweepParam::Iterations => vec![1.0, 2.0, 3.0, 4.0],
            SweepParam::Lambda => (1..=10).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

/// One validated config per value, all other fields taken from `base`.
pub fn sweep_configs(base: &TrainConfig, param: SweepParam, values: &[f64]) -> Result<Vec<(f64, TrainConfig)>> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            let count = || {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(CarpError::Config(format!("{} must be a positive integer, got {v}", param.as_str())))
                }
            };
            match param {
                SweepParam::Slots => cfg.slots = count()?,
                SweepParam::Iterations => cfg.iterations = count()?,
                SweepParam::Lambda => cfg.loss.lambda = v,
            }
            cfg.validate()?;
            Ok((v, cfg))
        })
        .collect()
}
