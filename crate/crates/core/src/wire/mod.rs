//! Binary message protocol between coordinator and sites, and its
//! transports.
//!
//! Frame layout: `"FDRK" | version u8 | msg_type u8 | payload_len u32 LE |
//! payload | CRC32(payload) u32 LE`. Tensors travel as a shape header plus
//! little-endian `f32` values; scaler statistics and metrics as `f64`.

mod codec;
mod transport;

pub use codec::{decode_frame, encode_frame, Decoded, FRAME_OVERHEAD, MAGIC, MAX_PAYLOAD, VERSION};
pub use transport::{accept_clients, connect, resolve_endpoint, Channel, Peer, ENDPOINT_ENV};

use crate::model::N_OUTCOMES;
use crate::tensor::ModelParams;

/// What a connecting site will do in the federation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Trains and validates every round.
    Train,
    /// Only evaluates the final model (external validation).
    Evaluate,
}

/// Which local data an evaluation request targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

/// Per-outcome AUROC of one evaluation set; absent when degenerate.
pub type OutcomeScores = [Option<f64>; N_OUTCOMES];

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello {
        client_id: String,
        fingerprint: u64,
        role: Role,
    },
    ScalerStats {
        stats: Vec<(f64, f64)>,
    },
    GlobalScaler {
        stats: Vec<(f64, f64)>,
    },
    GlobalModel {
        round: u32,
        params: ModelParams<f32>,
        server_control: Option<ModelParams<f32>>,
    },
    ClientUpdate {
        round: u32,
        params: ModelParams<f32>,
        n_samples: u64,
        steps: u64,
        control_delta: Option<ModelParams<f32>>,
        train_loss: f64,
    },
    RoundAck {
        round: u32,
    },
    Shutdown,
    Evaluate {
        round: u32,
        split: EvalSplit,
        params: ModelParams<f32>,
    },
    EvalReport {
        round: u32,
        per_set: Vec<OutcomeScores>,
    },
    Reject {
        reason: String,
    },
}

impl Message {
    pub fn type_code(&self) -> u8 {
        match self {
            Message::Hello { .. } => 1,
            Message::ScalerStats { .. } => 2,
            Message::GlobalScaler { .. } => 3,
            Message::GlobalModel { .. } => 4,
            Message::ClientUpdate { .. } => 5,
            Message::RoundAck { .. } => 6,
            Message::Shutdown => 7,
            Message::Evaluate { .. } => 8,
            Message::EvalReport { .. } => 9,
            Message::Reject { .. } => 10,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::ScalerStats { .. } => "ScalerStats",
            Message::GlobalScaler { .. } => "GlobalScaler",
            Message::GlobalModel { .. } => "GlobalModel",
            Message::ClientUpdate { .. } => "ClientUpdate",
            Message::RoundAck { .. } => "RoundAck",
            Message::Shutdown => "Shutdown",
            Message::Evaluate { .. } => "Evaluate",
            Message::EvalReport { .. } => "EvalReport",
            Message::Reject { .. } => "Reject",
        }
    }
}
