use rand::seq::SliceRandom;

use super::{loss_and_grads, N_OUTCOMES};
use crate::error::{Error, Result};
use crate::fed::TrainConfig;
use crate::pipeline::FeatureMatrix;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{sgd_step, ModelParams};

/// How a local gradient is turned into a parameter update.
#[derive(Clone, Debug)]
pub enum StepRule<'a, T> {
    /// `w ← w − η·g`
    Sgd,
    /// `w ← w − η·(g + μ·(w − anchor))`
    Prox { mu: T, anchor: &'a ModelParams<T> },
    /// `w ← w − η·(g − c_i + c)`
    Scaffold { server_control: &'a ModelParams<T>, client_control: &'a ModelParams<T> },
}

/// Coordinates of a client's minibatch-order RNG stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey {
    pub slot: u64,
    pub round: u64,
}

#[derive(Clone, Debug)]
pub struct LocalResult<T> {
    pub params: ModelParams<T>,
    pub n_samples: usize,
    /// Optimiser steps actually taken.
    pub steps: usize,
    /// Mean minibatch loss over the run (before each step).
    pub mean_loss: f64,
}

/// Minibatch SGD for `cfg.local_epochs` epochs, optionally with a proximal
/// term. Uses the stream `(cfg.seed, slot 0, round 0)`.
pub fn local_train<T: Scalar>(
    params: &ModelParams<T>,
    data: &FeatureMatrix,
    cfg: &TrainConfig,
    prox: Option<(T, &ModelParams<T>)>,
) -> Result<LocalResult<T>> {
    let rule = match prox {
        Some((mu, anchor)) => StepRule::Prox { mu, anchor },
        None => StepRule::Sgd,
    };
    local_train_with(params, data, cfg, &rule, StreamKey { slot: 0, round: 0 })
}

pub fn local_train_with<T: Scalar>(
    params: &ModelParams<T>,
    data: &FeatureMatrix,
    cfg: &TrainConfig,
    rule: &StepRule<'_, T>,
    key: StreamKey,
) -> Result<LocalResult<T>> {
    if data.is_empty() {
        return Err(Error::EmptyData("local training set has no rows".into()));
    }
    match rule {
        StepRule::Sgd => {}
        StepRule::Prox { anchor, .. } => params.check_layout(anchor)?,
        StepRule::Scaffold { server_control, client_control } => {
            params.check_layout(server_control)?;
            params.check_layout(client_control)?;
        }
    }
    let lr = T::lit(cfg.lr);
    let mut rng = rng::stream(cfg.seed, &[rng::label_key("minibatch"), key.slot, key.round]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut w = params.clone();
    let mut steps = 0;
    let mut loss_sum = 0.0;
    let pos_weight: Option<&[f64; N_OUTCOMES]> = cfg.pos_weight.as_ref();
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch::<T>(chunk);
            let (loss, g) = loss_and_grads(&w, &batch, &cfg.outcome_weights, pos_weight)?;
            loss_sum += loss.as_f64();
            w = match rule {
                StepRule::Sgd => sgd_step(&w, &g, lr)?,
                StepRule::Prox { mu, anchor } => {
                    if *mu == T::zero() {
                        sgd_step(&w, &g, lr)?
                    } else {
                        let drift = w.sub(anchor)?;
                        let eff = g.zip_with(&drift, |gi, di| gi + *mu * di)?;
                        sgd_step(&w, &eff, lr)?
                    }
                }
                StepRule::Scaffold { server_control, client_control } => {
                    crate::fed::scaffold_local_step(&w, &g, server_control, client_control, lr)?
                }
            };
            steps += 1;
        }
    }
    Ok(LocalResult { params: w, n_samples: data.len(), steps, mean_loss: loss_sum / steps as f64 })
}
