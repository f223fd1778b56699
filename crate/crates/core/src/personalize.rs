//! Per-site fine-tuning on top of a frozen federated backbone, with an
//! added surgeon-identity embedding feeding fresh output heads.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fed::TrainConfig;
use crate::model::{merge_activation, record_multitask_loss, ArchConfig, N_OUTCOMES};
use crate::pipeline::FeatureMatrix;
use crate::rng;
use crate::tensor::{concat_cols, embedding_lookup, linear_forward, sigmoid, ModelParams, Tape, Tensor};
use crate::{Params, Tensor64};

pub const DEFAULT_SURGEON_DIM: usize = 8;
pub const SURGEON_TABLE: &str = "surgeon.emb";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonalizeConfig {
    pub embed_dim: usize,
    /// Number of known surgeons; derived from the training rows when absent.
    pub surgeon_vocab: Option<usize>,
}

impl Default for PersonalizeConfig {
    fn default() -> Self {
        PersonalizeConfig { embed_dim: DEFAULT_SURGEON_DIM, surgeon_vocab: None }
    }
}

/// Row index into the surgeon table; 0 is the unknown surgeon.
pub fn surgeon_index(id: Option<u32>, table_rows: usize) -> usize {
    match id {
        Some(s) if (s as usize) + 1 < table_rows => s as usize + 1,
        _ => 0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonalizedModel {
    /// Frozen federated parameters.
    pub backbone: Params,
    /// `surgeon.emb` plus `head.{o}.w` / `head.{o}.b` over the merged
    /// activation followed by the surgeon embedding.
    pub personal: Params,
}

fn head_names(o: usize) -> (String, String) {
    (format!("head.{o}.w"), format!("head.{o}.b"))
}

impl PersonalizedModel {
    /// Warm start: old head weights over the merged slice, zeros over the
    /// surgeon slice, so predictions equal the backbone's on every input.
    pub fn warm_start(
        global: &Params,
        arch: &ArchConfig,
        table_rows: usize,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        arch.check_params(global)?;
        if table_rows < 2 || embed_dim == 0 {
            return Err(Error::Config("surgeon table needs a known surgeon and a positive width".into()));
        }
        let mut rng = rng::stream(seed, &[rng::label_key("surgeon-init")]);
        let bound = crate::model::glorot_bound(table_rows, embed_dim);
        let table: Vec<f64> = (0..table_rows * embed_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        let mut entries = vec![(SURGEON_TABLE.to_string(), Tensor::new(vec![table_rows, embed_dim], table)?)];
        let h = arch.merge_hidden;
        for o in 0..N_OUTCOMES {
            let (wn, bn) = head_names(o);
            let mut w = global.expect(&wn).data().to_vec();
            w.resize(h + embed_dim, 0.0);
            entries.push((wn, Tensor::new(vec![h + embed_dim, 1], w)?));
            entries.push((bn.clone(), global.expect(&bn).clone()));
        }
        Ok(PersonalizedModel { backbone: global.clone(), personal: ModelParams::new(entries)? })
    }

    pub fn table_rows(&self) -> usize {
        self.personal.expect(SURGEON_TABLE).shape()[0]
    }

    fn surgeon_rows(&self, data: &FeatureMatrix, rows: &[usize]) -> Vec<usize> {
        let n = self.table_rows();
        rows.iter().map(|&r| surgeon_index(data.surgeon_ids[r], n)).collect()
    }

    fn heads_forward(&self, merged: &Tensor64, surgeons: &[usize]) -> Result<Tensor64> {
        let e = embedding_lookup(self.personal.expect(SURGEON_TABLE), surgeons)?;
        let joined = concat_cols(&[merged, &e])?;
        let heads = (0..N_OUTCOMES)
            .map(|o| {
                let (wn, bn) = head_names(o);
                Ok(linear_forward(&joined, self.personal.expect(&wn), self.personal.expect(&bn))?.map(sigmoid))
            })
            .collect::<Result<Vec<_>>>()?;
        concat_cols(&heads.iter().collect::<Vec<_>>())
    }

    /// Probabilities `[B × 4]`; unknown surgeons use row 0.
    pub fn predict(&self, data: &FeatureMatrix) -> Result<Tensor64> {
        const CHUNK: usize = 2048;
        let rows: Vec<usize> = (0..data.len()).collect();
        let mut out = Vec::with_capacity(data.len() * N_OUTCOMES);
        for chunk in rows.chunks(CHUNK) {
            let merged = merge_activation(&self.backbone, &data.batch::<f64>(chunk))?;
            out.extend_from_slice(self.heads_forward(&merged, &self.surgeon_rows(data, chunk))?.data());
        }
        Tensor::new(vec![data.len(), N_OUTCOMES], out)
    }
}

#[derive(Clone, Debug)]
pub struct FineTuneResult {
    pub model: PersonalizedModel,
    pub val_loss_before: f64,
    pub val_loss_after: f64,
    /// Mean minibatch training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Epoch whose parameters were kept (0 = warm start).
    pub best_epoch: usize,
}

/// Precomputed frozen activations for a data set.
struct Frozen {
    merged: Vec<f64>,
    width: usize,
    surgeons: Vec<usize>,
    labels: Vec<f64>,
}

impl Frozen {
    fn new(pm: &PersonalizedModel, data: &FeatureMatrix) -> Result<Self> {
        let rows: Vec<usize> = (0..data.len()).collect();
        let mut merged = Vec::new();
        let mut width = 0;
        for chunk in rows.chunks(2048) {
            let m = merge_activation(&pm.backbone, &data.batch::<f64>(chunk))?;
            width = m.shape()[1];
            merged.extend_from_slice(m.data());
        }
        Ok(Frozen { merged, width, surgeons: pm.surgeon_rows(data, &rows), labels: data.labels.clone() })
    }

    fn gather(&self, rows: &[usize]) -> Result<(Tensor64, Vec<usize>, Tensor64)> {
        let mut m = Vec::with_capacity(rows.len() * self.width);
        let mut y = Vec::with_capacity(rows.len() * N_OUTCOMES);
        for &r in rows {
            m.extend_from_slice(&self.merged[r * self.width..(r + 1) * self.width]);
            y.extend_from_slice(&self.labels[r * N_OUTCOMES..(r + 1) * N_OUTCOMES]);
        }
        Ok((
            Tensor::new(vec![rows.len(), self.width], m)?,
            rows.iter().map(|&r| self.surgeons[r]).collect(),
            Tensor::new(vec![rows.len(), N_OUTCOMES], y)?,
        ))
    }
}

fn personal_loss_and_grads(
    personal: &Params,
    merged: Tensor64,
    surgeons: &[usize],
    labels: &Tensor64,
    cfg: &TrainConfig,
) -> Result<(f64, Params)> {
    let mut tape = Tape::new();
    let vars: Vec<_> = personal.tensors().map(|t| tape.param(t.clone())).collect();
    let var = |name: &str| vars[personal.names().position(|n| n == name).expect("personal layout")];
    let m = tape.constant(merged);
    let e = tape.embedding(var(SURGEON_TABLE), surgeons)?;
    let joined = tape.concat(&[m, e])?;
    let mut heads = Vec::with_capacity(N_OUTCOMES);
    for o in 0..N_OUTCOMES {
        let (wn, bn) = head_names(o);
        let z = tape.linear(joined, var(&wn), var(&bn))?;
        heads.push(tape.sigmoid(z));
    }
    let probs = tape.concat(&heads)?;
    let loss = record_multitask_loss(&mut tape, probs, labels, &cfg.outcome_weights, cfg.pos_weight.as_ref())?;
    let mut grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(personal.num_scalars());
    for (v, t) in vars.iter().zip(personal.tensors()) {
        match grads.take(*v) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }
    Ok((tape.value(loss).data()[0], personal.unflatten(&flat)?))
}

fn dataset_loss(pm: &PersonalizedModel, frozen: &Frozen, cfg: &TrainConfig) -> Result<f64> {
    let rows: Vec<usize> = (0..frozen.surgeons.len()).collect();
    let (m, s, y) = frozen.gather(&rows)?;
    Ok(personal_loss_and_grads(&pm.personal, m, &s, &y, cfg)?.0)
}

/// Trains the surgeon table and new heads by minibatch SGD for up to
/// `cfg.rounds` epochs with the backbone frozen. The epoch with the lowest
/// validation loss is kept, counting the warm start as epoch 0.
pub fn fine_tune(
    global: &Params,
    arch: &ArchConfig,
    train: &FeatureMatrix,
    validation: &FeatureMatrix,
    cfg: &TrainConfig,
    pcfg: &PersonalizeConfig,
) -> Result<FineTuneResult> {
    cfg.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyData("fine-tuning needs training and validation rows".into()));
    }
    let known = match pcfg.surgeon_vocab {
        Some(v) => v,
        None => match train.surgeon_ids.iter().flatten().max() {
            Some(&max) => max as usize + 1,
            None => return Err(Error::MissingFeature("surgeon_id: no surgeon identities in the training rows".into())),
        },
    };
    if known == 0 {
        return Err(Error::MissingFeature("surgeon_id: empty surgeon vocabulary".into()));
    }
    let mut pm = PersonalizedModel::warm_start(global, arch, known + 1, pcfg.embed_dim, cfg.seed)?;
    let frozen_train = Frozen::new(&pm, train)?;
    let frozen_val = Frozen::new(&pm, validation)?;
    let val_loss_before = dataset_loss(&pm, &frozen_val, cfg)?;
    let mut best = (pm.personal.clone(), val_loss_before, 0usize);
    let mut rng = rng::stream(cfg.seed, &[rng::label_key("personalize")]);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::new();
    let mut stale = 0;
    for epoch in 1..=cfg.rounds {
        order.shuffle(&mut rng);
        let (mut sum, mut steps) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let (m, s, y) = frozen_train.gather(chunk)?;
            let (loss, g) = personal_loss_and_grads(&pm.personal, m, &s, &y, cfg)?;
            pm.personal = crate::tensor::sgd_step(&pm.personal, &g, cfg.lr)?;
            sum += loss;
            steps += 1;
        }
        train_loss.push(sum / steps as f64);
        let val = dataset_loss(&pm, &frozen_val, cfg)?;
        log::debug!("fine-tune epoch {epoch}: train {:.5} validation {val:.5}", sum / steps as f64);
        if val < best.1 {
            best = (pm.personal.clone(), val, epoch);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience > 0 && stale >= cfg.patience {
                break;
            }
        }
    }
    pm.personal = best.0;
    Ok(FineTuneResult { model: pm, val_loss_before, val_loss_after: best.1, train_loss, best_epoch: best.2 })
}

#[cfg(test)]
mod tests;
