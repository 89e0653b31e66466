use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ResolutionSample;
use crate::error::{Error, Result};
use crate::exec::{try_map_range, Parallelism};
use crate::graphs::GraphSet;
use crate::numcore::{AdamConfig, Tensor};

use super::{argmax_grades, nll_loss, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Stop after this many epochs without a better validation score.
    pub patience: Option<usize>,
    #[serde(skip)]
    pub mode: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 500,
            seed: 0,
            patience: None,
            mode: Parallelism::Parallel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
}

/// Mean loss and road-level accuracy over `samples`.
pub fn evaluate_loss(
    model: &Model,
    samples: &[ResolutionSample],
    graphs: &GraphSet,
    mode: Parallelism,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let per_sample = try_map_range(samples.len(), mode, |i| {
        let trace = model.forward(&samples[i], graphs)?;
        let (loss, _) = nll_loss(&trace.logits, &samples[i].target)?;
        let hits = argmax_grades(&trace.logits)
            .iter()
            .zip(&samples[i].target)
            .filter(|(p, t)| p == t)
            .count();
        Ok::<_, Error>((loss, hits))
    })?;
    let loss = per_sample.iter().map(|p| p.0).sum::<f64>() / samples.len() as f64;
    let hits: usize = per_sample.iter().map(|p| p.1).sum();
    let total = samples.len() * samples[0].target.len();
    Ok((loss, hits as f64 / total as f64))
}

/// Mini-batch Adam on the mean per-sample loss.
///
/// Per-sample gradients may be computed in parallel but are summed in
/// batch order, so runs are reproducible for a given seed. When `val` is
/// non-empty the parameters of the epoch with the best validation
/// accuracy (lower validation loss on ties) are restored at the end.
pub fn train(
    model: &mut Model,
    train: &[ResolutionSample],
    val: &[ResolutionSample],
    graphs: &GraphSet,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::invalid(
            "batch size and epoch count must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Model)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = try_map_range(batch.len(), cfg.mode, |i| {
                model.loss_and_grads(&train[batch[i]], graphs)
            })
            .map_err(|e| match e {
                Error::NonFinite(what) => {
                    Error::NonFinite(format!("epoch {epoch}, batch {b}: {what}"))
                }
                other => other,
            })?;
            let mut sum: Vec<Tensor> = model.params.zero_grads();
            for (loss, grads) in &results {
                total_loss += loss;
                for (s, g) in sum.iter_mut().zip(grads) {
                    s.add_assign(g)?;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mean: Vec<Tensor> = sum.iter().map(|g| g.scale(scale)).collect();
            model.params.adam_step(&mean, &cfg.adam)?;
        }
        let train_loss = total_loss / train.len() as f64;
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(model, val, graphs, cfg.mode)?;
            (Some(l), Some(a))
        };
        log.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });

        if let (Some(l), Some(a)) = (val_loss, val_accuracy) {
            let better = match &best {
                None => true,
                Some((ba, bl, _, _)) => a > *ba || (a == *ba && l < *bl),
            };
            if better {
                best = Some((a, l, epoch, model.clone()));
            }
            if let (Some(p), Some((_, _, be, _))) = (cfg.patience, &best) {
                if epoch - be >= p {
                    break;
                }
            }
        }
    }

    let best_epoch = match best {
        Some((_, _, epoch, kept)) => {
            *model = kept;
            epoch
        }
        None => log.len(),
    };
    Ok(TrainLog {
        epochs: log,
        best_epoch,
    })
}
