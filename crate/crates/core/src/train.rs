//! Optimization: per-timestamp Adam steps on a cross-entropy objective,
//! with validation-driven early stopping and checkpointing.
//!
//! Each epoch walks the training snapshots chronologically. For every
//! target timestamp it records one forward pass over all of the
//! snapshot's queries (facts and inverses), computes the loss, runs one
//! backward sweep, optionally clips the global gradient norm, and takes
//! one Adam step. [`fit`] wraps this loop with per-epoch validation MRR,
//! keeps the best parameters, and stops after `patience` epochs without
//! improvement.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Snapshot, Vocab};
use crate::diff::{clip_global_norm, Adam, AdamConfig, NodeId, Tensor};
use crate::error::{EthError, Result};
use crate::eval::{evaluate, FilterSetting};
use crate::model::{
    Checkpoint, EthConfig, EthParams, Forward, ForwardMode, LossKind, QueryBatch,
};

/// Optimizer and stopping settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            max_epochs: 100,
            patience: 5,
            grad_clip_norm: Some(1.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(EthError::invalid(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(EthError::invalid("patience must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(EthError::invalid("max_epochs must be at least 1"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(EthError::invalid(format!(
                    "gradient clip norm must be positive and finite, got {c}"
                )));
            }
        }
        Ok(())
    }
}

/// Appends the configured loss to the tape and returns its scalar node.
///
/// Softmax cross-entropy averages `−log softmax(z)[gold]` over queries;
/// binary cross-entropy treats every (query, candidate) pair as an
/// independent one-vs-all label and averages over all pairs.
pub fn batch_loss(
    fwd: &mut Forward,
    logits: NodeId,
    targets: &[usize],
    kind: LossKind,
) -> Result<NodeId> {
    let (n, v) = fwd.tape.value(logits).shape();
    if targets.len() != n {
        return Err(EthError::invalid(format!(
            "loss: {n} logit rows vs {} targets",
            targets.len()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(EthError::invalid(format!(
            "loss: target {bad} out of range for {v} candidates"
        )));
    }
    match kind {
        LossKind::SoftmaxCe => fwd.tape.softmax_cross_entropy(logits, targets),
        LossKind::BinaryCe => {
            let mut labels = Tensor::zeros(n, v);
            for (i, &t) in targets.iter().enumerate() {
                labels.set(i, t, 1.0);
            }
            fwd.tape.binary_cross_entropy(logits, &labels)
        }
    }
}

/// Owns the optimizer state and the training RNG stream.
///
/// One `Trainer` drives one training run; the RNG stream it holds makes
/// the whole parameter trajectory a deterministic function of
/// `(seed, config, dataset)`, including activation-slope draws.
pub struct Trainer<'a> {
    model_cfg: &'a EthConfig,
    train_cfg: TrainConfig,
    vocab: &'a Vocab,
    adam: Adam,
    rng: ChaCha12Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model_cfg: &'a EthConfig,
        train_cfg: &TrainConfig,
        vocab: &'a Vocab,
        params: &EthParams,
    ) -> Result<Self> {
        model_cfg.validate()?;
        train_cfg.validate()?;
        let adam_cfg = AdamConfig {
            lr: train_cfg.lr,
            ..AdamConfig::default()
        };
        Ok(Trainer {
            model_cfg,
            train_cfg: train_cfg.clone(),
            vocab,
            adam: Adam::new(adam_cfg, &params.shapes()),
            rng: ChaCha12Rng::seed_from_u64(train_cfg.seed),
        })
    }

    /// One pass over the snapshots in chronological order, one Adam step
    /// per timestamp. Returns the mean per-timestamp loss.
    pub fn train_epoch(
        &mut self,
        params: &mut EthParams,
        snapshots: &[Snapshot],
    ) -> Result<f64> {
        if snapshots.is_empty() {
            return Err(EthError::invalid("train_epoch: no training snapshots"));
        }
        let mut total = 0.0;
        for i in 0..snapshots.len() {
            let time = snapshots[i].time;
            total += self.step_timestamp(params, snapshots, i).map_err(|e| match e {
                EthError::Numeric { op, detail } => EthError::Numeric {
                    op,
                    detail: format!("at timestamp {time}: {detail}"),
                },
                other => other,
            })?;
        }
        Ok(total / snapshots.len() as f64)
    }

    fn step_timestamp(
        &mut self,
        params: &mut EthParams,
        snapshots: &[Snapshot],
        i: usize,
    ) -> Result<f64> {
        let start = i.saturating_sub(self.model_cfg.m);
        let history: Vec<&Snapshot> = snapshots[start..i].iter().collect();
        let batch = QueryBatch::from_snapshot(&snapshots[i], self.vocab)?;

        let mut fwd = Forward::new(params, self.model_cfg, self.vocab, ForwardMode::Train)?;
        let out = fwd.score_batch(&history, &batch.queries, &mut self.rng)?;
        let loss = batch_loss(&mut fwd, out.logits, &batch.targets, self.model_cfg.loss_kind)?;
        let loss_val = fwd.tape.value(loss).scalar_value();
        if !loss_val.is_finite() {
            return Err(EthError::numeric("loss", format!("non-finite loss {loss_val}")));
        }

        let mut grads = fwd.tape.backward(loss)?;
        let mut ordered = fwd.nodes.gradients_in_order(&mut grads);
        drop(fwd);
        if let Some(max_norm) = self.train_cfg.grad_clip_norm {
            clip_global_norm(&mut ordered, max_norm);
        }
        self.adam.step(&mut params.tensors_mut(), &ordered)?;
        Ok(loss_val)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mrr: f64,
    pub seconds: f64,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters of the epoch with the best validation MRR.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_mrr: f64,
    pub log: Vec<EpochLog>,
}

/// Trains up to `max_epochs`, validating after each epoch with
/// time-filtered MRR and stopping after `patience` consecutive epochs
/// without improvement.
///
/// `snapshots` is the chronological inverse-augmented timeline; the first
/// `n_train` snapshots are training targets and the following `n_valid`
/// are validation targets (validation histories may reach back into the
/// training range). Each epoch appends one JSON object per line to
/// `log_out` when given.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    params: &mut EthParams,
    model_cfg: &EthConfig,
    train_cfg: &TrainConfig,
    vocab: &Vocab,
    snapshots: &[Snapshot],
    n_train: usize,
    n_valid: usize,
    mut log_out: Option<&mut dyn Write>,
) -> Result<FitOutcome> {
    if n_train == 0 || n_valid == 0 || n_train + n_valid > snapshots.len() {
        return Err(EthError::invalid(format!(
            "fit: {n_train} train + {n_valid} valid snapshots out of {}",
            snapshots.len()
        )));
    }
    let mut trainer = Trainer::new(model_cfg, train_cfg, vocab, params)?;
    let valid_times: Vec<usize> = snapshots[n_train..n_train + n_valid]
        .iter()
        .map(|s| s.time)
        .collect();
    let context = &snapshots[..n_train + n_valid];

    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_epoch = 0;
    let mut best_val_mrr = f64::NEG_INFINITY;
    let mut bad_epochs = 0;

    for epoch in 1..=train_cfg.max_epochs {
        let t0 = Instant::now();
        let train_loss = trainer.train_epoch(params, &snapshots[..n_train])?;
        let val_mrr = evaluate(
            params,
            model_cfg,
            vocab,
            context,
            &valid_times,
            FilterSetting::Time,
        )?
        .mrr;
        let entry = EpochLog {
            epoch,
            train_loss,
            val_mrr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        if let Some(w) = log_out.as_deref_mut() {
            serde_json::to_writer(&mut *w, &entry)
                .map_err(|e| EthError::invalid(format!("log serialization: {e}")))?;
            writeln!(w)?;
        }
        log.push(entry);

        if val_mrr > best_val_mrr {
            best_val_mrr = val_mrr;
            best_epoch = epoch;
            best = Some(Checkpoint::from_params(model_cfg, vocab, params));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= train_cfg.patience {
                break;
            }
        }
    }

    Ok(FitOutcome {
        best: best.expect("at least one epoch ran"),
        best_epoch,
        best_val_mrr,
        log,
    })
}
