//! How the coordinator reaches its sites: direct calls, wire frames in
//! process, or TCP.

use std::collections::VecDeque;

use super::{ClientUpdate, SiteClient};
use crate::error::{Error, Result};
use crate::wire::{decode_frame, encode_frame, Channel, Decoded, EvalSplit, Message, OutcomeScores, Peer, Role};
use crate::Params;

/// Coordinator-side view of the participating sites.
pub trait Federation {
    /// Training sites in slot order.
    fn trainers(&self) -> Vec<String>;
    /// Broadcasts `x` (and `c`) and collects one update per training site,
    /// in slot order.
    fn train_round(&mut self, round: u32, x: &Params, control: Option<&Params>) -> Result<Vec<ClientUpdate<f64>>>;
    /// Validation splits go to training sites only; test requests also reach
    /// evaluation-only sites.
    fn evaluate(&mut self, round: u32, split: EvalSplit, x: &Params) -> Result<Vec<(String, Vec<OutcomeScores>)>>;
    fn shutdown(&mut self) -> Result<()>;
}

fn failed(client: &str, e: Error) -> Error {
    match e {
        Error::ClientFailed { .. } => e,
        other => Error::ClientFailed { client: client.to_string(), reason: other.to_string() },
    }
}

/// Sites called as plain functions, in full precision.
pub struct DirectFederation {
    pub sites: Vec<SiteClient>,
}

impl DirectFederation {
    pub fn new(sites: Vec<SiteClient>) -> Self {
        DirectFederation { sites }
    }
}

impl Federation for DirectFederation {
    fn trainers(&self) -> Vec<String> {
        self.sites.iter().filter(|s| s.is_trainer()).map(|s| s.name.clone()).collect()
    }

    fn train_round(&mut self, round: u32, x: &Params, control: Option<&Params>) -> Result<Vec<ClientUpdate<f64>>> {
        self.sites
            .iter_mut()
            .filter(|s| s.is_trainer())
            .map(|s| s.train_round(round, x, control).map_err(|e| failed(&s.name, e)))
            .collect()
    }

    fn evaluate(&mut self, _round: u32, split: EvalSplit, x: &Params) -> Result<Vec<(String, Vec<OutcomeScores>)>> {
        self.sites
            .iter()
            .filter(|s| split == EvalSplit::Test || s.is_trainer())
            .map(|s| Ok((s.name.clone(), s.evaluate(split, x).map_err(|e| failed(&s.name, e))?)))
            .collect()
    }

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}

/// One framed, bidirectional link to a site.
pub trait Port {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
}

impl Port for Channel {
    fn send(&mut self, msg: &Message) -> Result<()> {
        Channel::send(self, msg)
    }
    fn recv(&mut self) -> Result<Message> {
        Channel::recv(self)
    }
}

/// A site living in this process, reached through encoded frames.
pub struct LoopbackPort {
    site: SiteClient,
    inbox: VecDeque<Vec<u8>>,
}

impl LoopbackPort {
    pub fn new(site: SiteClient) -> Self {
        LoopbackPort { site: site.quantized(true), inbox: VecDeque::new() }
    }
}

fn through_wire(msg: &Message) -> Result<Message> {
    let bytes = encode_frame(msg)?;
    match decode_frame(&bytes)? {
        Decoded::Frame { message, .. } => Ok(message),
        Decoded::NeedMore => Err(Error::Protocol("encoder produced a partial frame".into())),
    }
}

impl Port for LoopbackPort {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let arrived = through_wire(msg)?;
        if let Some(reply) = self.site.handle(arrived)? {
            self.inbox.push_back(encode_frame(&reply)?);
        }
        Ok(())
    }

    fn recv(&mut self) -> Result<Message> {
        let bytes = self.inbox.pop_front().ok_or_else(|| Error::Protocol("no reply pending".into()))?;
        match decode_frame(&bytes)? {
            Decoded::Frame { message, .. } => Ok(message),
            Decoded::NeedMore => Err(Error::Protocol("partial frame in loopback".into())),
        }
    }
}

pub struct WireSite<P> {
    pub name: String,
    pub role: Role,
    pub port: P,
}

/// Sites reached through the message protocol. Model tensors cross as `f32`.
pub struct WireFederation<P> {
    sites: Vec<WireSite<P>>,
}

impl WireFederation<LoopbackPort> {
    pub fn loopback(sites: Vec<SiteClient>) -> Self {
        let sites = sites
            .into_iter()
            .map(|s| WireSite {
                name: s.name.clone(),
                role: if s.is_trainer() { Role::Train } else { Role::Evaluate },
                port: LoopbackPort::new(s),
            })
            .collect();
        WireFederation { sites }
    }
}

impl WireFederation<Channel> {
    pub fn from_peers(peers: Vec<Peer>) -> Self {
        let sites = peers.into_iter().map(|p| WireSite { name: p.client_id, role: p.role, port: p.channel }).collect();
        WireFederation { sites }
    }
}

impl<P: Port> WireFederation<P> {
    fn exchange(
        &mut self,
        round: u32,
        include: impl Fn(Role) -> bool,
        request: &Message,
    ) -> Result<Vec<(usize, String, Message)>> {
        let mut idx = Vec::new();
        for (i, s) in self.sites.iter_mut().enumerate() {
            if include(s.role) {
                s.port.send(request).map_err(|e| failed(&s.name, e))?;
                idx.push(i);
            }
        }
        let mut out = Vec::with_capacity(idx.len());
        for (slot, i) in idx.into_iter().enumerate() {
            let s = &mut self.sites[i];
            let reply = s.port.recv().map_err(|e| failed(&s.name, e))?;
            if let Message::Reject { reason } = reply {
                return Err(failed(&s.name, Error::Protocol(reason)));
            }
            let reply_round = match &reply {
                Message::ClientUpdate { round, .. } | Message::EvalReport { round, .. } => *round,
                other => return Err(failed(&s.name, Error::Protocol(format!("unexpected {}", other.kind())))),
            };
            if reply_round != round {
                return Err(failed(
                    &s.name,
                    Error::Protocol(format!("reply for round {reply_round}, expected {round}")),
                ));
            }
            out.push((slot, s.name.clone(), reply));
        }
        Ok(out)
    }
}

impl<P: Port> Federation for WireFederation<P> {
    fn trainers(&self) -> Vec<String> {
        self.sites.iter().filter(|s| s.role == Role::Train).map(|s| s.name.clone()).collect()
    }

    fn train_round(&mut self, round: u32, x: &Params, control: Option<&Params>) -> Result<Vec<ClientUpdate<f64>>> {
        let request = Message::GlobalModel { round, params: x.cast(), server_control: control.map(|c| c.cast()) };
        self.exchange(round, |r| r == Role::Train, &request)?
            .into_iter()
            .map(|(slot, name, reply)| match reply {
                Message::ClientUpdate { params, n_samples, steps, control_delta, train_loss, .. } => Ok(ClientUpdate {
                    client_id: slot as u32,
                    new_params: params.cast(),
                    n_samples: n_samples as usize,
                    steps: steps as usize,
                    control_delta: control_delta.map(|d| d.cast()),
                    train_loss,
                }),
                other => Err(failed(&name, Error::Protocol(format!("expected ClientUpdate, got {}", other.kind())))),
            })
            .collect()
    }

    fn evaluate(&mut self, round: u32, split: EvalSplit, x: &Params) -> Result<Vec<(String, Vec<OutcomeScores>)>> {
        let request = Message::Evaluate { round, split, params: x.cast() };
        let include = move |r: Role| split == EvalSplit::Test || r == Role::Train;
        self.exchange(round, include, &request)?
            .into_iter()
            .map(|(_, name, reply)| match reply {
                Message::EvalReport { per_set, .. } => Ok((name, per_set)),
                other => Err(failed(&name, Error::Protocol(format!("expected EvalReport, got {}", other.kind())))),
            })
            .collect()
    }

    fn shutdown(&mut self) -> Result<()> {
        for s in &mut self.sites {
            if let Err(e) = s.port.send(&Message::Shutdown) {
                log::warn!("site {} did not take the shutdown: {e}", s.name);
            }
        }
        Ok(())
    }
}

/// Site main loop: answer coordinator messages until `Shutdown`. A local
/// failure is reported to the coordinator before it is returned.
pub fn serve_site(channel: &mut Channel, site: &mut SiteClient) -> Result<()> {
    loop {
        let msg = channel.recv()?;
        match site.handle(msg) {
            Ok(Some(reply)) => channel.send(&reply)?,
            Ok(None) => return Ok(()),
            Err(e) => {
                let _ = channel.send(&Message::Reject { reason: e.to_string() });
                return Err(e);
            }
        }
    }
}
