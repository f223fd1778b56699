//! Multi-branch, multi-task risk network.
//!
//! Continuous, binary and high-cardinality features each pass through their
//! own subnetwork (high-cardinality features via embedding tables). The three
//! latent vectors are concatenated and merged by a shared fully connected
//! layer, which feeds four independent sigmoid heads: ICU admission,
//! mechanical ventilation, AKI and in-hospital mortality.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, read_params_file, write_checkpoint, write_params_file};
pub use train::{local_train, local_train_with, LocalResult, StepRule, StreamKey};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{concat_cols, embedding_lookup, linear_forward, relu, sigmoid, ModelParams, Tape, Tensor, Var};

pub const N_OUTCOMES: usize = 4;
pub const OUTCOME_NAMES: [&str; N_OUTCOMES] = ["icu", "mv", "aki", "mortality"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HighCardSpec {
    /// Vocabulary size including the reserved "missing" index 0.
    pub vocab: usize,
    pub embed_dim: usize,
}

/// Shape of the network. The parameter layout is a pure function of it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub n_continuous: usize,
    pub n_binary: usize,
    pub high_card: Vec<HighCardSpec>,
    #[serde(default = "default_branch_hidden")]
    pub branch_hidden: usize,
    #[serde(default = "default_merge_hidden")]
    pub merge_hidden: usize,
}

fn default_branch_hidden() -> usize {
    32
}

fn default_merge_hidden() -> usize {
    64
}

pub const DEFAULT_EMBED_DIM: usize = 16;

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = [self.n_continuous, self.n_binary, self.high_card.len(), self.branch_hidden, self.merge_hidden];
        if widths.contains(&0) {
            return Err(Error::Config(format!("architecture widths must all be ≥ 1: {self:?}")));
        }
        for (i, h) in self.high_card.iter().enumerate() {
            if h.vocab < 2 || h.embed_dim == 0 {
                return Err(Error::Config(format!(
                    "high-cardinality feature {i}: vocab {} (need ≥ 2) / embed_dim {}",
                    h.vocab, h.embed_dim
                )));
            }
        }
        Ok(())
    }

    pub fn embed_total(&self) -> usize {
        self.high_card.iter().map(|h| h.embed_dim).sum()
    }

    /// Names and shapes of every parameter tensor, in layout order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (bh, mh) = (self.branch_hidden, self.merge_hidden);
        let mut out = vec![
            ("cont.w".to_string(), vec![self.n_continuous, bh]),
            ("cont.b".to_string(), vec![bh]),
            ("bin.w".to_string(), vec![self.n_binary, bh]),
            ("bin.b".to_string(), vec![bh]),
        ];
        for (i, h) in self.high_card.iter().enumerate() {
            out.push((format!("emb.{i}"), vec![h.vocab, h.embed_dim]));
        }
        out.push(("hc.w".to_string(), vec![self.embed_total(), bh]));
        out.push(("hc.b".to_string(), vec![bh]));
        out.push(("merge.w".to_string(), vec![3 * bh, mh]));
        out.push(("merge.b".to_string(), vec![mh]));
        for o in 0..N_OUTCOMES {
            out.push((format!("head.{o}.w"), vec![mh, 1]));
            out.push((format!("head.{o}.b"), vec![1]));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Stable 64-bit digest of the layout; federation members must agree on it.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        for (name, shape) in self.layout() {
            h.update(name.as_bytes());
            for d in shape {
                h.update((d as u64).to_le_bytes());
            }
            h.update([0xff]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
    }

    /// Checks that a parameter set has exactly this layout.
    pub fn check_params<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        let layout = self.layout();
        if layout.len() != params.len() {
            return Err(Error::Layout(format!("expected {} tensors, got {}", layout.len(), params.len())));
        }
        for ((name, shape), (pn, t)) in layout.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != t.shape() {
                return Err(Error::Layout(format!("expected `{name}` {shape:?}, got `{pn}` {:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// A minibatch in model-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub continuous: Tensor<T>,
    pub binary: Tensor<T>,
    pub high_card: Vec<Vec<usize>>,
    pub labels: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn rows(&self) -> usize {
        self.continuous.shape()[0]
    }

    pub fn check(&self, arch: &ArchConfig) -> Result<()> {
        let b = self.rows();
        let (cr, cc) = self.continuous.dims2()?;
        let (br, bc) = self.binary.dims2()?;
        let (lr, lc) = self.labels.dims2()?;
        if cc != arch.n_continuous || bc != arch.n_binary || lc != N_OUTCOMES {
            return Err(Error::Dimension(format!(
                "batch widths ({cc}, {bc}, {lc}) vs arch ({}, {}, {N_OUTCOMES})",
                arch.n_continuous, arch.n_binary
            )));
        }
        if self.high_card.len() != arch.high_card.len() {
            return Err(Error::Dimension(format!(
                "{} high-cardinality columns vs {} in arch",
                self.high_card.len(),
                arch.high_card.len()
            )));
        }
        if cr != b || br != b || lr != b || self.high_card.iter().any(|c| c.len() != b) {
            return Err(Error::Dimension("batch row counts differ".into()));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_model<T: Scalar>(arch: &ArchConfig, seed: u64) -> Result<ModelParams<T>> {
    arch.validate()?;
    let mut rng = rng::stream(seed, &[rng::label_key("init")]);
    let entries = arch
        .layout()
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = if shape.len() == 2 {
                let bound = glorot_bound(shape[0], shape[1]);
                (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect()
            } else {
                vec![T::zero(); n]
            };
            Ok((name, Tensor::new(shape, data)?))
        })
        .collect::<Result<Vec<_>>>()?;
    ModelParams::new(entries)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Tape handles produced by [`record_forward`].
pub struct ForwardVars {
    /// One trainable leaf per parameter tensor, in layout order.
    pub params: Vec<Var>,
    /// Shared merge-layer activation `[B × merge_hidden]`.
    pub merged: Var,
    /// Per-head logits `[B × 1]`.
    pub logits: Vec<Var>,
    /// Concatenated probabilities `[B × 4]`.
    pub probs: Var,
}

/// Records the full network on `tape` with every parameter trainable.
pub fn record_forward<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>, batch: &Batch<T>) -> Result<ForwardVars> {
    let vars: Vec<Var> = params.tensors().map(|t| tape.param(t.clone())).collect();
    let n_hc = batch.high_card.len();
    let by_name = |name: &str| -> Var {
        let idx = params.names().position(|n| n == name).unwrap_or_else(|| panic!("missing parameter `{name}`"));
        vars[idx]
    };
    let xc = tape.constant(batch.continuous.clone());
    let xb = tape.constant(batch.binary.clone());
    let hc = tape.linear(xc, by_name("cont.w"), by_name("cont.b"))?;
    let hc = tape.relu(hc);
    let hb = tape.linear(xb, by_name("bin.w"), by_name("bin.b"))?;
    let hb = tape.relu(hb);
    let mut embs = Vec::with_capacity(n_hc);
    for (i, idx) in batch.high_card.iter().enumerate() {
        embs.push(tape.embedding(by_name(&format!("emb.{i}")), idx)?);
    }
    let e = tape.concat(&embs)?;
    let he = tape.linear(e, by_name("hc.w"), by_name("hc.b"))?;
    let he = tape.relu(he);
    let joined = tape.concat(&[hc, hb, he])?;
    let merged = tape.linear(joined, by_name("merge.w"), by_name("merge.b"))?;
    let merged = tape.relu(merged);
    let mut logits = Vec::with_capacity(N_OUTCOMES);
    let mut heads = Vec::with_capacity(N_OUTCOMES);
    for o in 0..N_OUTCOMES {
        let z = tape.linear(merged, by_name(&format!("head.{o}.w")), by_name(&format!("head.{o}.b")))?;
        logits.push(z);
        heads.push(tape.sigmoid(z));
    }
    let probs = tape.concat(&heads)?;
    Ok(ForwardVars { params: vars, merged, logits, probs })
}

/// Shared-backbone activation without recording a tape.
pub fn merge_activation<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>) -> Result<Tensor<T>> {
    let dense = |x: &Tensor<T>, w: &str, b: &str| -> Result<Tensor<T>> {
        Ok(linear_forward(x, params.expect(w), params.expect(b))?.map(relu))
    };
    let hc = dense(&batch.continuous, "cont.w", "cont.b")?;
    let hb = dense(&batch.binary, "bin.w", "bin.b")?;
    let embs = batch
        .high_card
        .iter()
        .enumerate()
        .map(|(i, idx)| embedding_lookup(params.expect(&format!("emb.{i}")), idx))
        .collect::<Result<Vec<_>>>()?;
    let e = concat_cols(&embs.iter().collect::<Vec<_>>())?;
    let he = dense(&e, "hc.w", "hc.b")?;
    let joined = concat_cols(&[&hc, &hb, &he])?;
    dense(&joined, "merge.w", "merge.b")
}

/// Risk probabilities `[B × 4]`.
pub fn forward<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>) -> Result<Tensor<T>> {
    let merged = merge_activation(params, batch)?;
    let heads = (0..N_OUTCOMES)
        .map(|o| {
            let z =
                linear_forward(&merged, params.expect(&format!("head.{o}.w")), params.expect(&format!("head.{o}.b")))?;
            Ok(z.map(sigmoid))
        })
        .collect::<Result<Vec<_>>>()?;
    concat_cols(&heads.iter().collect::<Vec<_>>())
}

/// Scores a whole feature matrix in chunks.
pub fn predict_matrix<T: Scalar>(params: &ModelParams<T>, data: &crate::pipeline::FeatureMatrix) -> Result<Tensor<T>> {
    const CHUNK: usize = 2048;
    let mut out = Vec::with_capacity(data.len() * N_OUTCOMES);
    let rows: Vec<usize> = (0..data.len()).collect();
    for chunk in rows.chunks(CHUNK) {
        out.extend_from_slice(forward(params, &data.batch::<T>(chunk))?.data());
    }
    Tensor::new(vec![data.len(), N_OUTCOMES], out)
}

/// Per-outcome loss weights; the default is the unweighted mean of the four
/// per-outcome BCE means.
pub const EQUAL_OUTCOME_WEIGHTS: [f64; N_OUTCOMES] = [0.25; N_OUTCOMES];

/// Unweighted mean of the four per-outcome BCE means.
pub fn multitask_loss<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<T> {
    weighted_multitask_loss(probs, labels, &EQUAL_OUTCOME_WEIGHTS)
}

pub fn weighted_multitask_loss<T: Scalar>(
    probs: &Tensor<T>,
    labels: &Tensor<T>,
    weights: &[f64; N_OUTCOMES],
) -> Result<T> {
    if probs.shape() != labels.shape() {
        return Err(Error::Dimension(format!("probs {:?} vs labels {:?}", probs.shape(), labels.shape())));
    }
    let (rows, cols) = probs.dims2()?;
    if cols != N_OUTCOMES {
        return Err(Error::Dimension(format!("expected {N_OUTCOMES} outcome columns, got {cols}")));
    }
    let mut total = T::zero();
    for (o, &w) in weights.iter().enumerate() {
        let p = Tensor::new(vec![rows, 1], probs.column(o)?)?;
        let y = Tensor::new(vec![rows, 1], labels.column(o)?)?;
        total = total + T::lit(w) * crate::tensor::bce_loss(&p, &y)?;
    }
    Ok(total)
}

/// Records the multi-task loss on the tape. `pos_weight`, when given, scales
/// the loss of positive rows per outcome.
pub fn record_multitask_loss<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    labels: &Tensor<T>,
    weights: &[f64; N_OUTCOMES],
    pos_weight: Option<&[f64; N_OUTCOMES]>,
) -> Result<Var> {
    let (rows, _) = labels.dims2()?;
    let mut terms = Vec::with_capacity(N_OUTCOMES);
    for (o, &w) in weights.iter().enumerate() {
        let col = tape.column(probs, o)?;
        let y = labels.column(o)?;
        let elem_w = pos_weight.map(|pw| {
            let d = y.iter().map(|&v| if v > T::lit(0.5) { T::lit(pw[o]) } else { T::one() }).collect();
            Tensor::new(vec![rows, 1], d).expect("weight column")
        });
        let l = tape.weighted_bce(col, Tensor::new(vec![rows, 1], y)?, elem_w)?;
        terms.push((l, T::lit(w)));
    }
    tape.weighted_sum(&terms)
}

/// Loss and gradient (shaped like `params`) for one batch.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    batch: &Batch<T>,
    weights: &[f64; N_OUTCOMES],
    pos_weight: Option<&[f64; N_OUTCOMES]>,
) -> Result<(T, ModelParams<T>)> {
    let mut tape = Tape::new();
    let fv = record_forward(&mut tape, params, batch)?;
    let loss = record_multitask_loss(&mut tape, fv.probs, &batch.labels, weights, pos_weight)?;
    let mut grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(params.num_scalars());
    for (v, t) in fv.params.iter().zip(params.tensors()) {
        match grads.take(*v) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat_n(T::zero(), t.len())),
        }
    }
    Ok((tape.value(loss).data()[0], params.unflatten(&flat)?))
}

#[cfg(test)]
mod tests;
