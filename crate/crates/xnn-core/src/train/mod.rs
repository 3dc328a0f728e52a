//! Mini-batch training loop, evaluation metrics and per-epoch history.

mod metrics;
mod optimizer;

pub use metrics::{accuracy, auc, macro_f1};
pub use optimizer::{adam_step, sgd_step, AdamState, OptimizerKind};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{predict_logits, Model};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Samples per forward pass during full-dataset evaluation.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_adam_betas")]
    pub adam_betas: (f64, f64),
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

fn default_batch_size() -> usize {
    32
}

fn default_learning_rate() -> f64 {
    1e-3
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

fn default_adam_betas() -> (f64, f64) {
    (0.9, 0.999)
}

fn default_adam_eps() -> f64 {
    1e-8
}

fn default_shuffle() -> bool {
    true
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            optimizer: default_optimizer(),
            adam_betas: default_adam_betas(),
            adam_eps: default_adam_eps(),
            seed,
            shuffle: default_shuffle(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config {
                field: "epochs".into(),
                message: "must be >= 1".into(),
            });
        }
        if self.batch_size == 0 {
            return Err(Error::Config {
                field: "batch_size".into(),
                message: "must be >= 1".into(),
            });
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config {
                field: "learning_rate".into(),
                message: format!("must be finite and >= 0, got {}", self.learning_rate),
            });
        }
        Ok(())
    }
}

/// One completed epoch. `train_loss` is the sample-weighted mean of the
/// mini-batch losses seen during the epoch; validation metrics come from a
/// full pass at the epoch's end.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub macro_f1: f64,
    /// Present for binary (2-class) tasks only.
    pub auc: Option<f64>,
    /// Seconds; excluded from the CSV export and determinism comparisons.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    /// CSV with header `epoch,train_loss,val_loss,macro_f1,auc`; the auc
    /// column is empty for multi-class tasks. Floats print in shortest
    /// round-trip form, so identical runs serialize byte-identically.
    pub fn write_csv(&self, out: &mut dyn Write) -> Result<()> {
        writeln!(out, "epoch,train_loss,val_loss,macro_f1,auc")?;
        for r in &self.records {
            let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch, r.train_loss, r.val_loss, r.macro_f1, auc
            )?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut file)?;
        file.flush()?;
        Ok(())
    }

    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Equality of everything the run determines (wall time excluded).
    pub fn same_metrics(&self, other: &History) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.train_loss == b.train_loss
                    && a.val_loss == b.val_loss
                    && a.macro_f1 == b.macro_f1
                    && a.auc == b.auc
            })
    }
}

/// Full-dataset metrics. AUC is present for 2-class models only, computed on
/// the positive-class (index 1) probability.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub macro_f1: f64,
    pub auc: Option<f64>,
}

fn check_compat(model: &dyn Model, ds: &Dataset, what: &str) -> Result<()> {
    let cfg = model.config();
    if ds.feature_dim() != cfg.input_dim {
        return Err(Error::Data(format!(
            "{what} feature width {} does not match model input_dim {}",
            ds.feature_dim(),
            cfg.input_dim
        )));
    }
    if let Some(&bad) = ds.labels().iter().find(|&&l| l >= cfg.num_classes) {
        return Err(Error::Data(format!(
            "{what} label {bad} out of range for {} model classes",
            cfg.num_classes
        )));
    }
    Ok(())
}

struct ChunkEval {
    loss_sum: f64,
    predicted: Vec<usize>,
    positive_probs: Vec<f64>,
}

fn eval_chunk(model: &dyn Model, ds: &Dataset, indices: &[usize]) -> Result<ChunkEval> {
    let (x, labels) = ds.batch(indices);
    let mut tape = Tape::new();
    let fwd = model.forward_logits(&mut tape, &x)?;
    let loss_id = tape.cross_entropy(fwd.logits, &labels)?;
    let loss_sum = tape.value(loss_id).data()[0] * indices.len() as f64;
    let logits = tape.value(fwd.logits);
    let prediction = predict_logits(logits);
    let positive_probs = if model.config().num_classes == 2 {
        prediction
            .probabilities
            .data()
            .chunks(2)
            .map(|row| row[1])
            .collect()
    } else {
        Vec::new()
    };
    Ok(ChunkEval {
        loss_sum,
        predicted: prediction.classes,
        positive_probs,
    })
}

/// Full-dataset loss and metrics without mutating the model. Forward passes
/// run chunk by chunk (in parallel when enabled); the reduction order is
/// fixed, so results are identical across runs and thread counts.
pub fn evaluate(model: &dyn Model, ds: &Dataset) -> Result<EvalMetrics> {
    if ds.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    check_compat(model, ds, "evaluation")?;

    let indices: Vec<usize> = (0..ds.len()).collect();
    let chunks: Vec<&[usize]> = indices.chunks(EVAL_CHUNK).collect();
    #[cfg(feature = "parallel")]
    let results: Result<Vec<ChunkEval>> =
        chunks.par_iter().map(|c| eval_chunk(model, ds, c)).collect();
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<ChunkEval>> =
        chunks.iter().map(|c| eval_chunk(model, ds, c)).collect();
    let results = results?;

    let mut loss_sum = 0.0;
    let mut predicted = Vec::with_capacity(ds.len());
    let mut positive_probs = Vec::new();
    for r in results {
        loss_sum += r.loss_sum;
        predicted.extend(r.predicted);
        positive_probs.extend(r.positive_probs);
    }
    let loss = loss_sum / ds.len() as f64;
    let f1 = macro_f1(&predicted, ds.labels(), model.config().num_classes)?;
    let auc_value = if model.config().num_classes == 2 {
        // Undefined when the dataset holds a single class; omit in that case.
        auc(&positive_probs, ds.labels()).ok()
    } else {
        None
    };
    Ok(EvalMetrics {
        loss,
        macro_f1: f1,
        auc: auc_value,
    })
}

enum OptimizerState {
    Sgd,
    Adam(AdamState),
}

/// Train in place: per epoch, a seeded shuffle, mini-batch forward/backward
/// and optimizer steps (gradients live on the per-step tape, so they start
/// from zero each step), then a full validation pass. Deterministic given
/// the model seed, `cfg.seed` and the data.
pub fn train<M: Model>(
    model: &mut M,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<History> {
    cfg.validate()?;
    check_compat(model, train_set, "training")?;
    check_compat(model, val_set, "validation")?;
    if train_set.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }

    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut opt_state = match cfg.optimizer {
        OptimizerKind::Sgd => OptimizerState::Sgd,
        OptimizerKind::Adam => OptimizerState::Adam(AdamState::new(&model.params_mut())),
    };

    let mut history = History::default();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = train_set.batch(chunk);
            let mut tape = Tape::new();
            let fwd = model.forward_logits(&mut tape, &x)?;
            let loss_id = tape.cross_entropy(fwd.logits, &labels)?;
            let loss = tape.value(loss_id).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            tape.backward(loss_id)?;
            let grads: Vec<&[f64]> = fwd
                .param_ids
                .iter()
                .map(|id| tape.grad(*id).expect("parameters always receive gradients"))
                .collect();
            let mut params = model.params_mut();
            match &mut opt_state {
                OptimizerState::Sgd => sgd_step(&mut params, &grads, cfg.learning_rate)?,
                OptimizerState::Adam(state) => adam_step(
                    &mut params,
                    &grads,
                    state,
                    cfg.learning_rate,
                    cfg.adam_betas,
                    cfg.adam_eps,
                )?,
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val = evaluate(model, val_set)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            macro_f1: val.macro_f1,
            auc: val.auc,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}
