use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use super::codec::{decode_frame, encode_frame, Decoded};
use super::{Message, Role};
use crate::error::{Error, Result};

/// Environment variable that overrides any configured endpoint.
pub const ENDPOINT_ENV: &str = "FEDRISK_ENDPOINT";

pub fn resolve_endpoint(configured: &str) -> String {
    match std::env::var(ENDPOINT_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().to_string(),
        _ => configured.to_string(),
    }
}

/// Framed, bidirectional message stream over TCP.
pub struct Channel {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl Channel {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Channel { stream, buf: Vec::new() })
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        let frame = encode_frame(msg)?;
        self.stream.write_all(&frame)?;
        Ok(())
    }

    /// Blocks until one complete frame has arrived.
    pub fn recv(&mut self) -> Result<Message> {
        let mut chunk = vec![0u8; 1 << 16];
        loop {
            if !self.buf.is_empty() {
                if let Decoded::Frame { message, consumed } = decode_frame(&self.buf)? {
                    self.buf.drain(..consumed);
                    return Ok(message);
                }
            }
            let n = self.stream.read(&mut chunk)?;
            if n == 0 {
                return Err(Error::Protocol("connection closed mid-stream".into()));
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<()> {
        self.stream.set_read_timeout(timeout)?;
        Ok(())
    }
}

/// An accepted, handshaken site connection.
pub struct Peer {
    pub client_id: String,
    pub role: Role,
    pub channel: Channel,
}

/// Accepts connections until every expected site has completed the
/// handshake. Unknown ids, wrong roles, fingerprint mismatches and
/// duplicates are rejected and the server keeps waiting. Peers come back in
/// the order of `expected`.
pub fn accept_clients(
    listener: &TcpListener,
    expected: &[(String, Role)],
    fingerprint: u64,
    timeout: Duration,
) -> Result<Vec<Peer>> {
    let deadline = Instant::now() + timeout;
    let mut slots: Vec<Option<Peer>> = expected.iter().map(|_| None).collect();
    listener.set_nonblocking(true)?;
    while slots.iter().any(Option::is_none) {
        let stream = match listener.accept() {
            Ok((s, _)) => s,
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() > deadline {
                    let missing: Vec<&str> = expected
                        .iter()
                        .zip(&slots)
                        .filter(|(_, s)| s.is_none())
                        .map(|((id, _), _)| id.as_str())
                        .collect();
                    return Err(Error::Handshake(format!("timed out waiting for {}", missing.join(", "))));
                }
                std::thread::sleep(Duration::from_millis(10));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        stream.set_nonblocking(false)?;
        let mut channel = Channel::new(stream)?;
        channel.set_timeout(Some(Duration::from_secs(30)))?;
        let hello = match channel.recv() {
            Ok(m) => m,
            Err(e) => {
                log::warn!("dropping connection before handshake: {e}");
                continue;
            }
        };
        let Message::Hello { client_id, fingerprint: fp, role } = hello else {
            let _ = channel.send(&Message::Reject { reason: format!("expected Hello, got {}", hello.kind()) });
            continue;
        };
        let slot = expected.iter().position(|(id, _)| *id == client_id);
        let reason = match slot {
            None => Some(format!("unknown client id {client_id}")),
            Some(i) if slots[i].is_some() => Some(format!("duplicate client id {client_id}")),
            Some(i) if expected[i].1 != role => Some(format!("client {client_id} connected with the wrong role")),
            Some(_) if fp != fingerprint => {
                Some(format!("architecture fingerprint {fp:016x} does not match {fingerprint:016x}"))
            }
            Some(_) => None,
        };
        if let Some(reason) = reason {
            log::warn!("rejecting handshake: {reason}");
            let _ = channel.send(&Message::Reject { reason });
            continue;
        }
        channel.send(&Message::RoundAck { round: 0 })?;
        channel.set_timeout(None)?;
        log::info!("site {client_id} joined");
        slots[slot.expect("validated")] = Some(Peer { client_id, role, channel });
    }
    listener.set_nonblocking(false)?;
    Ok(slots.into_iter().map(|s| s.expect("all joined")).collect())
}

/// Connects to the coordinator, retrying until `timeout`, and performs the
/// handshake.
pub fn connect(endpoint: &str, client_id: &str, fingerprint: u64, role: Role, timeout: Duration) -> Result<Channel> {
    let deadline = Instant::now() + timeout;
    let stream = loop {
        match TcpStream::connect(endpoint) {
            Ok(s) => break s,
            Err(e) if Instant::now() < deadline => {
                log::debug!("coordinator not reachable yet: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(Error::Handshake(format!("cannot reach {endpoint}: {e}"))),
        }
    };
    let mut channel = Channel::new(stream)?;
    channel.send(&Message::Hello { client_id: client_id.to_string(), fingerprint, role })?;
    match channel.recv()? {
        Message::RoundAck { round: 0 } => Ok(channel),
        Message::Reject { reason } => Err(Error::Handshake(reason)),
        other => Err(Error::Handshake(format!("unexpected {} during handshake", other.kind()))),
    }
}
