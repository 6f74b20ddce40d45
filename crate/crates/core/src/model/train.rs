use serde::{Deserialize, Serialize};

use super::examples::TrainingPair;
use super::transformer::Model;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, Graph, LrSchedule};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Upper bound on target tokens per update.
    pub batch_tokens: usize,
    pub learning_rate: f64,
    pub warmup_updates: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Shuffling and dropout seed.
    #[serde(skip)]
    pub seed: u64,
    /// Validation is run every this many epochs (and after the last one).
    pub validate_every: usize,
    /// Stop once the training loss falls below this value; 0 disables.
    pub target_loss: f64,
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            batch_tokens: 512,
            learning_rate: 1e-3,
            warmup_updates: 50,
            clip_norm: 1.0,
            adam_beta1: AdamConfig::default().beta1,
            adam_beta2: AdamConfig::default().beta2,
            adam_eps: AdamConfig::default().eps,
            seed: 1,
            validate_every: 50,
            target_loss: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Token-weighted mean training loss.
    pub loss: f64,
    pub updates: u64,
    pub validation: Option<f64>,
}

pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Model with the highest validation score (the last one without a
    /// validator).
    pub best: Model,
    pub best_epoch: usize,
    pub best_score: Option<f64>,
}

/// Mean loss of `pair` under `model`, without dropout.
pub fn evaluate_loss(model: &Model, pairs: &[TrainingPair]) -> Result<f64> {
    let mut rng = RngStream::new(0);
    let mut total = 0.0;
    let mut tokens = 0usize;
    for p in pairs {
        let mut g = Graph::new(model.params(), false);
        let logits = model.forward(&mut g, &p.source, &p.rows, &mut rng)?;
        let loss = model.loss(&mut g, &logits, &p.targets)?;
        total += g.scalar(loss) * p.num_tokens() as f64;
        tokens += p.num_tokens();
    }
    Ok(total / tokens.max(1) as f64)
}

fn batches(order: &[usize], pairs: &[TrainingPair], max_tokens: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for &i in order {
        let n = pairs[i].num_tokens();
        if !cur.is_empty() && tokens + n > max_tokens {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        cur.push(i);
        tokens += n;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn clip_gradients(model: &mut Model, max_norm: f64) {
    let store = model.params_mut();
    let sq: f64 = (0..store.len())
        .filter_map(|i| store.by_index(i).grad.as_ref())
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for i in 0..store.len() {
            if let Some(g) = store.by_index_mut(i).grad.as_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

/// Trains `model` in place. `validate` scores a model (higher is better) and
/// drives best-checkpoint selection; `on_epoch` observes every epoch, e.g. to
/// write periodic checkpoints.
pub fn train(
    model: &mut Model,
    pairs: &[TrainingPair],
    cfg: &TrainConfig,
    mut validate: Option<&mut dyn FnMut(&Model) -> Result<f64>>,
    mut on_epoch: Option<&mut dyn FnMut(&Model, &EpochStats) -> Result<()>>,
) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Validation("no training examples".into()));
    }
    if cfg.batch_tokens == 0 || cfg.validate_every == 0 {
        return Err(Error::Config("batch_tokens and validate_every must be positive".into()));
    }
    let schedule = LrSchedule {
        base: cfg.learning_rate,
        warmup: cfg.warmup_updates,
    };
    let root = RngStream::new(cfg.seed);
    let adam = cfg.adam();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model, usize, Option<f64>)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut epoch_rng = root.split_str("epoch").split(epoch as u64);
        epoch_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut token_sum = 0usize;
        for batch in batches(&order, pairs, cfg.batch_tokens) {
            let batch_tokens: usize = batch.iter().map(|&i| pairs[i].num_tokens()).sum();
            model.params_mut().zero_grad();
            for &i in &batch {
                let p = &pairs[i];
                let mut drop_rng = epoch_rng.split(i as u64);
                let (value, grads) = {
                    let mut g = Graph::new(model.params(), true);
                    let logits = model.forward(&mut g, &p.source, &p.rows, &mut drop_rng)?;
                    let loss = model.loss(&mut g, &logits, &p.targets)?;
                    (g.scalar(loss), g.backward(loss)?)
                };
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        update: model.params().updates() + 1,
                        detail: format!("loss {value} on example {i} in epoch {epoch}"),
                    });
                }
                let w = p.num_tokens() as f64 / batch_tokens as f64;
                model.params_mut().accumulate(&grads, w);
                loss_sum += value * p.num_tokens() as f64;
                token_sum += p.num_tokens();
            }
            if cfg.clip_norm > 0.0 {
                clip_gradients(model, cfg.clip_norm);
            }
            let step = model.params().updates() + 1;
            adam_step(model.params_mut(), schedule.at(step), &adam)?;
        }
        let loss = loss_sum / token_sum as f64;
        let last = epoch == cfg.epochs || (cfg.target_loss > 0.0 && loss < cfg.target_loss);
        let validation = match validate.as_mut() {
            Some(v) if epoch % cfg.validate_every == 0 || last => Some(v(model)?),
            _ => None,
        };
        let stats = EpochStats {
            epoch,
            loss,
            updates: model.params().updates(),
            validation,
        };
        if let Some(cb) = on_epoch.as_mut() {
            cb(model, &stats)?;
        }
        let improved = match (&best, validation) {
            (None, _) => true,
            (Some((_, _, Some(b))), Some(v)) => v >= *b,
            (Some((_, _, None)), Some(_)) => true,
            (Some(_), None) => validate.is_none(),
        };
        if improved {
            best = Some((model.clone(), epoch, validation));
        }
        history.push(stats);
        if last {
            break;
        }
    }
    let (best, best_epoch, best_score) = match best {
        Some(b) => b,
        None => (model.clone(), 0, None),
    };
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
        best_score,
    })
}
