//! Server- and client-side update rules for FedAvg and SCAFFOLD.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ModelParams;

/// Position of a client in the federation (registration order).
pub type ClientId = u32;

/// What a client returns after a round of local training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate<T> {
    pub client_id: ClientId,
    /// Locally trained parameters `y_i`.
    pub new_params: ModelParams<T>,
    /// Training rows `n_k`.
    pub n_samples: usize,
    /// Local optimiser steps `K` actually taken.
    pub steps: usize,
    /// `c_i⁺ − c_i` (SCAFFOLD only).
    pub control_delta: Option<ModelParams<T>>,
    /// Mean minibatch loss over the local run.
    pub train_loss: f64,
}

/// Server control `c` plus a mirror of every client's control `c_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaffoldState<T> {
    pub server: ModelParams<T>,
    pub clients: BTreeMap<ClientId, ModelParams<T>>,
}

impl<T: Scalar> ScaffoldState<T> {
    /// All-zero controls for the given clients.
    pub fn new(template: &ModelParams<T>, clients: impl IntoIterator<Item = ClientId>) -> Self {
        let zeros = template.zeros_like();
        Self { server: zeros.clone(), clients: clients.into_iter().map(|c| (c, zeros.clone())).collect() }
    }

    /// Largest elementwise gap between `c` and the mean of the client controls.
    pub fn control_mean_gap(&self) -> Result<T> {
        let n = T::lit(self.clients.len() as f64);
        let mut mean = self.server.zeros_like();
        for c in self.clients.values() {
            mean = mean.add(&c.scale(T::one() / n))?;
        }
        self.server.max_abs_diff(&mean)
    }
}

fn sorted_by_client<T>(updates: &[ClientUpdate<T>]) -> Result<Vec<&ClientUpdate<T>>> {
    if updates.is_empty() {
        return Err(Error::Contract("aggregation needs at least one update".into()));
    }
    let mut sorted: Vec<&ClientUpdate<T>> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    if sorted.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Contract("duplicate client in update list".into()));
    }
    Ok(sorted)
}

/// `a₀ + Σ_{k≥1} w_k·(a_k − a₀)` with weights summing to one. Equal inputs
/// reproduce themselves exactly.
fn anchored_mean<T: Scalar>(items: &[&ModelParams<T>], weights: &[T]) -> Result<ModelParams<T>> {
    let anchor = items[0];
    let mut acc = anchor.clone();
    for (p, &w) in items.iter().zip(weights).skip(1) {
        p.check_layout(anchor)?;
        acc = acc.add(&p.zip_with(anchor, |a, b| w * (a - b))?)?;
    }
    Ok(acc)
}

/// Sample-weighted average `Σ_k (n_k / Σn)·w_k`. Independent of update order.
pub fn fedavg_aggregate<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<ModelParams<T>> {
    let sorted = sorted_by_client(updates)?;
    let total: usize = sorted.iter().map(|u| u.n_samples).sum();
    if sorted.iter().any(|u| u.n_samples == 0) {
        return Err(Error::Contract("client update with zero samples".into()));
    }
    let weights: Vec<T> = sorted.iter().map(|u| T::lit(u.n_samples as f64 / total as f64)).collect();
    let params: Vec<&ModelParams<T>> = sorted.iter().map(|u| &u.new_params).collect();
    anchored_mean(&params, &weights)
}

/// Client step with drift correction: `w − η·(g − c_i + c)`.
pub fn scaffold_local_step<T: Scalar>(
    w: &ModelParams<T>,
    g: &ModelParams<T>,
    c: &ModelParams<T>,
    c_i: &ModelParams<T>,
    lr: T,
) -> Result<ModelParams<T>> {
    let corrected = g.sub(c_i)?.add(c)?;
    w.zip_with(&corrected, |wv, gv| wv - lr * gv)
}

/// Gradient-free control refresh: `c_i⁺ = c_i − c + (x − y)/(K·η)`.
pub fn scaffold_client_finalize<T: Scalar>(
    c_i: &ModelParams<T>,
    c: &ModelParams<T>,
    x_global: &ModelParams<T>,
    y_local: &ModelParams<T>,
    steps: usize,
    lr: T,
) -> Result<ModelParams<T>> {
    if steps == 0 {
        return Err(Error::Contract("control update needs at least one local step".into()));
    }
    if lr <= T::zero() {
        return Err(Error::Contract("control update needs a positive learning rate".into()));
    }
    let denom = T::lit(steps as f64) * lr;
    let drift = x_global.sub(y_local)?;
    c_i.sub(c)?.add(&drift.map(|v| v / denom))
}

/// Server rule: `x⁺ = x + η_g·mean(y_i − x)`, `c⁺ = c + (|S|/N)·mean(Δc_i)`,
/// and each mirrored `c_i` advances by its delta. Requires every registered
/// client.
pub fn scaffold_server_update<T: Scalar>(
    state: &ScaffoldState<T>,
    x: &ModelParams<T>,
    updates: &[ClientUpdate<T>],
    server_lr: T,
) -> Result<(ModelParams<T>, ScaffoldState<T>)> {
    let sorted = sorted_by_client(updates)?;
    for u in &sorted {
        if !state.clients.contains_key(&u.client_id) {
            return Err(Error::Participation(format!("update from unregistered client {}", u.client_id)));
        }
    }
    if let Some(missing) = state.clients.keys().find(|id| !sorted.iter().any(|u| u.client_id == **id)) {
        return Err(Error::Participation(format!("client {missing} sent no update")));
    }
    let s = sorted.len();
    let n = state.clients.len();
    let equal: Vec<T> = vec![T::lit(1.0 / s as f64); s];
    let ys: Vec<&ModelParams<T>> = sorted.iter().map(|u| &u.new_params).collect();
    let x_next = if server_lr == T::one() {
        anchored_mean(&ys, &equal)?
    } else {
        let mean_y = anchored_mean(&ys, &equal)?;
        let step = mean_y.sub(x)?;
        x.zip_with(&step, |a, d| a + server_lr * d)?
    };

    let mut next = state.clone();
    let mut delta_sum = x.zeros_like();
    for u in &sorted {
        let dc = u
            .control_delta
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("client {} sent no control delta", u.client_id)))?;
        delta_sum = delta_sum.add(dc)?;
        let ci = next.clients.get_mut(&u.client_id).expect("checked above");
        *ci = ci.add(dc)?;
    }
    // (|S|/N)·mean_S(Δc) = Σ_S Δc / N
    let scale = T::lit(1.0 / n as f64);
    next.server = state.server.zip_with(&delta_sum, |c, d| c + scale * d)?;
    Ok((x_next, next))
}
