use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, PreparedDataset, SplitKind};
use crate::error::{CarpError, Result};
use crate::evaluation::model_mse;
use crate::model::{Model, ModelParams};
use crate::training::{Checkpoint, RmsProp, TrainConfig};

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "L_sqr")]
    pub sqr: f64,
    #[serde(rename = "L_stm")]
    pub stm: f64,
    #[serde(rename = "val_MSE")]
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MSE.
    pub best: Checkpoint,
    /// Parameters after the last epoch run.
    pub last: Model,
    pub log: Vec<EpochRecord>,
    pub stopped_early: bool,
}

pub fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CarpError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in log {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CarpError::io(path, e))
}

fn finite(g: &ModelParams) -> Option<String> {
    g.arrays()
        .into_iter()
        .find(|(_, a)| a.iter().any(|x| !x.is_finite()))
        .map(|(n, _)| n)
}

fn dump(batch: &[Example]) -> String {
    let rows: Vec<_> = batch
        .iter()
        .map(|e| serde_json::json!({"user": e.user, "item": e.item, "rating": e.rating, "label": e.label}))
        .collect();
    serde_json::Value::Array(rows).to_string()
}

/// Mini-batch RMSprop with per-epoch validation and early stopping.
///
/// Model initialisation, shuffling and dropout all derive from `cfg.seed`,
/// so a fixed seed gives a bit-identical loss curve.
pub fn train(data: &PreparedDataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::new(cfg.model_config(&data.meta), cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut train = data.split.examples(SplitKind::Train);
    if train.is_empty() {
        return Err(CarpError::EmptyBatch);
    }
    let validation = data.split.examples(SplitKind::Validation);
    if validation.is_empty() {
        log::warn!("validation split is empty; selecting on training MSE");
    }
    let mut opt = RmsProp::new(&model.params, cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    let mut best = Checkpoint {
        model: model.clone(),
        train: cfg.clone(),
        vocab_hash: data.meta.vocab_hash.clone(),
        epoch: 0,
        val_mse: f64::INFINITY,
    };
    let mut log = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        train.shuffle(&mut rng);
        let (mut total, mut sqr, mut stm) = (0.0, 0.0, 0.0);
        for (b, batch) in train.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = model.loss_and_grad(&data.bank, batch, &cfg.loss, Some(&mut rng))?;
            let bad_grad = finite(&grads);
            if !loss.total.is_finite() || bad_grad.is_some() {
                return Err(CarpError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!(
                        "loss {} (sqr {}, stm {}), non-finite gradient in {:?}, batch {}",
                        loss.total,
                        loss.sqr,
                        loss.stm,
                        bad_grad,
                        dump(batch)
                    ),
                });
            }
            let w = batch.len() as f64;
            total += loss.total * w;
            sqr += loss.sqr * w;
            stm += loss.stm * w;
            opt.step(&mut model.params, &grads);
        }
        let n = train.len() as f64;
        let val_mse = if validation.is_empty() {
            model_mse(&model, &data.bank, &train)?
        } else {
            model_mse(&model, &data.bank, &validation)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / n,
            sqr: sqr / n,
            stm: stm / n,
            val_mse,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} sqr {:.5} stm {:.5} val_mse {:.5} ({:.1}s)",
            record.train_loss,
            record.sqr,
            record.stm,
            record.val_mse,
            record.seconds
        );
        on_epoch(&record);
        log.push(record);
        if val_mse < best.val_mse {
            best.model = model.clone();
            best.epoch = epoch;
            best.val_mse = val_mse;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: model,
        log,
        stopped_early,
    })
}

/// Writes log rows as they arrive, flushing after each.
pub struct LogWriter {
    path: std::path::PathBuf,
    inner: csv::Writer<std::fs::File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| CarpError::io(path, e))?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(file),
        })
    }

    pub fn write(&mut self, record: &EpochRecord) -> Result<()> {
        self.inner.serialize(record)?;
        self.inner.flush().map_err(|e| CarpError::io(&self.path, e))
    }
}
