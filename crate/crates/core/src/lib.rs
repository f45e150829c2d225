//! Capsule-based review-driven rating prediction with viewpoint/aspect
//! extraction, sentiment capsules and explanation reports.
//!
//! The pipeline runs [`corpus`] → [`encoder`] → [`extraction`] →
//! [`capsules`] → [`prediction`]; [`model`] ties the stages together with a
//! hand-written backward pass, [`training`] optimizes it and
//! [`evaluation`] / [`explain`] read trained checkpoints.

pub mod capsules;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod extraction;
pub mod math;
pub mod model;
pub mod prediction;
pub mod sentiment;
pub mod training;

pub use capsules::{route, route_ra, route_rbia, CapsuleTransforms, LogicUnit, RoutingKind, RoutingState};
pub use corpus::{DocumentBank, Example, PreparedDataset, ReviewCorpus, ReviewRecord, SplitCorpus, SplitKind};
pub use error::{CarpError, Result};
pub use evaluation::{evaluate, MetricsReport, RunMetrics};
pub use explain::{explain, ExplainOptions, ExplanationReport, RatioRow};
pub use extraction::{GateParams, ViewpointSet};
pub use model::{Model, ModelConfig, ModelParams, PairTrace};
pub use prediction::{HeadParams, PredictionBreakdown, RatingInputs};
pub use sentiment::Sentiment;
pub use training::{train, Checkpoint, LossConfig, TrainConfig};
