//! Socket-mode federation: a coordinator process and one process per site.

use std::net::TcpListener;
use std::time::Duration;

use super::data::SiteData;
use super::train::{site_client, train_federated_with, TrainedModel};
use super::{ExperimentConfig, SiteRole};
use crate::error::{Error, Result};
use crate::fed::{serve_site, WireFederation};
use crate::pipeline::merge_scaler_stats;
use crate::wire::{accept_clients, connect, resolve_endpoint, Message, Role};

fn role_of(r: SiteRole) -> Role {
    match r {
        SiteRole::Development => Role::Train,
        SiteRole::External => Role::Evaluate,
    }
}

fn expect_ack(site: &str, msg: Message) -> Result<()> {
    match msg {
        Message::RoundAck { round: 0 } => Ok(()),
        Message::Reject { reason } => Err(Error::ClientFailed { client: site.into(), reason }),
        other => Err(Error::Protocol(format!("{site}: expected RoundAck, got {}", other.kind()))),
    }
}

/// Binds the configured endpoint, waits for every site, builds the shared
/// scaler from the development sites' statistics, runs the federation and
/// saves the selected model.
pub fn run_coordinator(cfg: &ExperimentConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let endpoint = resolve_endpoint(&cfg.coordinator.endpoint);
    let listener = TcpListener::bind(&endpoint)?;
    log::info!("coordinator listening on {endpoint}");
    run_coordinator_on(cfg, &listener)
}

pub fn run_coordinator_on(cfg: &ExperimentConfig, listener: &TcpListener) -> Result<TrainedModel> {
    let expected: Vec<(String, Role)> = cfg.sites().map(|(s, r)| (s.site_name.clone(), role_of(r))).collect();
    let timeout = Duration::from_secs(cfg.coordinator.join_timeout_secs);
    let mut peers = accept_clients(listener, &expected, cfg.arch().fingerprint(), timeout)?;
    let mut stats = Vec::new();
    for p in peers.iter_mut().filter(|p| p.role == Role::Train) {
        match p.channel.recv()? {
            Message::ScalerStats { stats: s } => stats.push(s),
            other => {
                return Err(Error::Protocol(format!("{}: expected ScalerStats, got {}", p.client_id, other.kind())))
            }
        }
    }
    let scaler = merge_scaler_stats(&stats)?;
    for p in &mut peers {
        p.channel.send(&Message::GlobalScaler { stats: scaler.clone() })?;
    }
    for p in &mut peers {
        let msg = p.channel.recv()?;
        expect_ack(&p.client_id, msg)?;
    }
    let algorithm = cfg.coordinator.algorithm;
    let model = train_federated_with(cfg, &mut WireFederation::from_peers(peers), algorithm, scaler)?;
    model.save(cfg)?;
    Ok(model)
}

/// One site's process: joins the coordinator, contributes its scaling
/// statistics and answers training and evaluation requests until shutdown.
pub fn run_site(cfg: &ExperimentConfig, name: &str) -> Result<()> {
    cfg.validate()?;
    let (_, role) = cfg.site(name)?;
    let site = SiteData::load(cfg, name)?;
    let slot = cfg.development.iter().position(|s| s.site_name == name).map_or(u64::MAX, |i| i as u64);
    let endpoint = resolve_endpoint(&cfg.coordinator.endpoint);
    let timeout = Duration::from_secs(cfg.coordinator.join_timeout_secs);
    let mut channel = connect(&endpoint, name, cfg.arch().fingerprint(), role_of(role), timeout)?;
    log::info!("{name} joined {endpoint}");
    if role == SiteRole::Development {
        channel.send(&Message::ScalerStats { stats: site.scaler_stats() })?;
    }
    let scaler = match channel.recv()? {
        Message::GlobalScaler { stats } => stats,
        Message::Reject { reason } => return Err(Error::Handshake(reason)),
        other => return Err(Error::Protocol(format!("expected GlobalScaler, got {}", other.kind()))),
    };
    let client = site_client(&site, slot, &scaler, cfg.coordinator.algorithm, &cfg.training.federated);
    let mut client = match client {
        Ok(c) => c.quantized(true),
        Err(e) => {
            let _ = channel.send(&Message::Reject { reason: e.to_string() });
            return Err(e);
        }
    };
    channel.send(&Message::RoundAck { round: 0 })?;
    serve_site(&mut channel, &mut client)?;
    log::info!("{name} shut down");
    Ok(())
}
