//! The site side of a federation: local training, control bookkeeping and
//! evaluation on data that never leaves the site.

use serde::{Deserialize, Serialize};

use super::{scaffold_client_finalize, ClientUpdate, TrainConfig};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{local_train_with, StepRule, StreamKey};
use crate::model::{predict_matrix, N_OUTCOMES};
use crate::pipeline::FeatureMatrix;
use crate::wire::{EvalSplit, Message, OutcomeScores};
use crate::Params;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    FedProx,
    Scaffold,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::Scaffold => "scaffold",
        }
    }
}

/// Per-outcome AUROC of `params` on one evaluation set.
pub fn outcome_aurocs(params: &Params, data: &FeatureMatrix) -> Result<OutcomeScores> {
    let mut out = [None; N_OUTCOMES];
    if data.is_empty() {
        return Ok(out);
    }
    let probs = predict_matrix(params, data)?;
    let p = probs.data();
    for (o, slot) in out.iter_mut().enumerate() {
        let scores: Vec<f64> = (0..data.len()).map(|r| p[r * N_OUTCOMES + o]).collect();
        let labels = data.outcome_labels(o);
        *slot = match metrics::auroc(&scores, &labels) {
            Ok(v) => Some(v),
            Err(Error::DegenerateLabels(_)) => None,
            Err(e) => return Err(e),
        };
    }
    Ok(out)
}

pub struct SiteClient {
    pub name: String,
    pub slot: u64,
    train: Option<FeatureMatrix>,
    validation: Vec<FeatureMatrix>,
    test: Vec<FeatureMatrix>,
    cfg: TrainConfig,
    algorithm: Algorithm,
    control: Option<Params>,
    /// Round model updates and control deltas through `f32`, as the wire does.
    quantized: bool,
}

impl SiteClient {
    pub fn new(
        name: impl Into<String>,
        slot: u64,
        train: Option<FeatureMatrix>,
        validation: Vec<FeatureMatrix>,
        test: Vec<FeatureMatrix>,
        cfg: TrainConfig,
        algorithm: Algorithm,
    ) -> Self {
        SiteClient { name: name.into(), slot, train, validation, test, cfg, algorithm, control: None, quantized: false }
    }

    pub fn quantized(mut self, on: bool) -> Self {
        self.quantized = on;
        self
    }

    pub fn is_trainer(&self) -> bool {
        self.train.is_some()
    }

    /// Current client control `c_i` (SCAFFOLD).
    pub fn control(&self) -> Option<&Params> {
        self.control.as_ref()
    }

    pub fn train_round(
        &mut self,
        round: u32,
        x: &Params,
        server_control: Option<&Params>,
    ) -> Result<ClientUpdate<f64>> {
        let data =
            self.train.as_ref().ok_or_else(|| Error::Contract(format!("site {} has no training data", self.name)))?;
        let key = StreamKey { slot: self.slot, round: round as u64 };
        let q = |p: Params| if self.quantized { p.quantize() } else { p };
        match self.algorithm {
            Algorithm::FedAvg | Algorithm::FedProx => {
                let rule = match self.algorithm {
                    Algorithm::FedProx => StepRule::Prox { mu: self.cfg.mu, anchor: x },
                    _ => StepRule::Sgd,
                };
                let res = local_train_with(x, data, &self.cfg, &rule, key)?;
                Ok(ClientUpdate {
                    client_id: self.slot as u32,
                    new_params: q(res.params),
                    n_samples: res.n_samples,
                    steps: res.steps,
                    control_delta: None,
                    train_loss: res.mean_loss,
                })
            }
            Algorithm::Scaffold => {
                let c =
                    server_control.ok_or_else(|| Error::Protocol("SCAFFOLD round without a server control".into()))?;
                let c_i = self.control.take().unwrap_or_else(|| x.zeros_like());
                let rule = StepRule::Scaffold { server_control: c, client_control: &c_i };
                let res = local_train_with(x, data, &self.cfg, &rule, key)?;
                let c_next = scaffold_client_finalize(&c_i, c, x, &res.params, res.steps, self.cfg.lr)?;
                let delta = q(c_next.sub(&c_i)?);
                // keep c_i equal to the server's mirror of it
                self.control = Some(if self.quantized { c_i.add(&delta)? } else { c_next });
                Ok(ClientUpdate {
                    client_id: self.slot as u32,
                    new_params: q(res.params),
                    n_samples: res.n_samples,
                    steps: res.steps,
                    control_delta: Some(delta),
                    train_loss: res.mean_loss,
                })
            }
        }
    }

    pub fn evaluate(&self, split: EvalSplit, params: &Params) -> Result<Vec<OutcomeScores>> {
        let sets = match split {
            EvalSplit::Validation => &self.validation,
            EvalSplit::Test => &self.test,
        };
        sets.iter().map(|d| outcome_aurocs(params, d)).collect()
    }

    /// Answers one coordinator message. `None` means the session is over.
    pub fn handle(&mut self, msg: Message) -> Result<Option<Message>> {
        match msg {
            Message::GlobalModel { round, params, server_control } => {
                let x = params.cast::<f64>();
                let c = server_control.map(|c| c.cast::<f64>());
                let u = self.train_round(round, &x, c.as_ref())?;
                Ok(Some(Message::ClientUpdate {
                    round,
                    params: u.new_params.cast(),
                    n_samples: u.n_samples as u64,
                    steps: u.steps as u64,
                    control_delta: u.control_delta.map(|d| d.cast()),
                    train_loss: u.train_loss,
                }))
            }
            Message::Evaluate { round, split, params } => {
                let per_set = self.evaluate(split, &params.cast::<f64>())?;
                Ok(Some(Message::EvalReport { round, per_set }))
            }
            Message::Shutdown => Ok(None),
            other => Err(Error::Protocol(format!("site cannot handle {}", other.kind()))),
        }
    }
}

#[cfg(test)]
impl SiteClient {
    pub(crate) fn clone_train(&self) -> FeatureMatrix {
        self.train.clone().expect("training site")
    }
}
