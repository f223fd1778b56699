use super::{EvalSplit, Message, OutcomeScores, Role};
use crate::error::{Error, Result};
use crate::model::N_OUTCOMES;
use crate::tensor::{ModelParams, Tensor};

pub const MAGIC: [u8; 4] = *b"FDRK";
pub const VERSION: u8 = 1;
/// Largest payload a frame may carry.
pub const MAX_PAYLOAD: usize = 1 << 31;
const HEADER: usize = 10;
/// Header plus checksum bytes around a payload.
pub const FRAME_OVERHEAD: usize = HEADER + 4;

/// Result of trying to parse one frame from the front of a buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum Decoded {
    Frame {
        message: Message,
        consumed: usize,
    },
    /// The buffer holds a valid prefix of a frame; read more bytes.
    NeedMore,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn stats(&mut self, stats: &[(f64, f64)]) {
        self.u32(stats.len() as u32);
        for &(lo, hi) in stats {
            self.f64(lo);
            self.f64(hi);
        }
    }
    fn params(&mut self, p: &ModelParams<f32>) {
        self.u32(p.len() as u32);
        for (name, t) in p.iter() {
            self.str(name);
            self.u8(t.shape().len() as u8);
            for &d in t.shape() {
                self.u32(d as u32);
            }
            for &v in t.data() {
                self.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fn opt_params(&mut self, p: &Option<ModelParams<f32>>) {
        match p {
            Some(p) => {
                self.u8(1);
                self.params(p);
            }
            None => self.u8(0),
        }
    }
}

fn payload(msg: &Message) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    match msg {
        Message::Hello { client_id, fingerprint, role } => {
            w.str(client_id);
            w.u64(*fingerprint);
            w.u8(match role {
                Role::Train => 0,
                Role::Evaluate => 1,
            });
        }
        Message::ScalerStats { stats } | Message::GlobalScaler { stats } => w.stats(stats),
        Message::GlobalModel { round, params, server_control } => {
            w.u32(*round);
            w.params(params);
            w.opt_params(server_control);
        }
        Message::ClientUpdate { round, params, n_samples, steps, control_delta, train_loss } => {
            w.u32(*round);
            w.params(params);
            w.u64(*n_samples);
            w.u64(*steps);
            w.opt_params(control_delta);
            w.f64(*train_loss);
        }
        Message::RoundAck { round } => w.u32(*round),
        Message::Shutdown => {}
        Message::Evaluate { round, split, params } => {
            w.u32(*round);
            w.u8(match split {
                EvalSplit::Validation => 0,
                EvalSplit::Test => 1,
            });
            w.params(params);
        }
        Message::EvalReport { round, per_set } => {
            w.u32(*round);
            w.u32(per_set.len() as u32);
            for set in per_set {
                for v in set {
                    // NaN marks an undefined score
                    w.f64(v.unwrap_or(f64::NAN));
                }
            }
        }
        Message::Reject { reason } => w.str(reason),
    }
    w.0
}

/// Deterministic frame bytes for a message.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>> {
    let body = payload(msg);
    if body.len() > MAX_PAYLOAD {
        return Err(Error::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(body.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.type_code());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Protocol("payload shorter than its fields".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Protocol("string is not UTF-8".into()))
    }
    fn stats(&mut self) -> Result<Vec<(f64, f64)>> {
        let n = self.u32()? as usize;
        (0..n).map(|_| Ok((self.f64()?, self.f64()?))).collect()
    }
    fn params(&mut self) -> Result<ModelParams<f32>> {
        let n = self.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = self.str()?;
            let ndim = self.u8()? as usize;
            let shape = (0..ndim).map(|_| Ok(self.u32()? as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let bytes = self.take(len.checked_mul(4).ok_or_else(|| Error::Protocol("tensor too large".into()))?)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        ModelParams::new(entries)
    }
    fn opt_params(&mut self) -> Result<Option<ModelParams<f32>>> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.params()?)),
            f => Err(Error::Protocol(format!("bad option flag {f}"))),
        }
    }
}

fn parse(kind: u8, body: &[u8]) -> Result<Message> {
    let mut r = Reader { buf: body, pos: 0 };
    let msg = match kind {
        1 => {
            let client_id = r.str()?;
            let fingerprint = r.u64()?;
            let role = match r.u8()? {
                0 => Role::Train,
                1 => Role::Evaluate,
                x => return Err(Error::Protocol(format!("unknown role {x}"))),
            };
            Message::Hello { client_id, fingerprint, role }
        }
        2 => Message::ScalerStats { stats: r.stats()? },
        3 => Message::GlobalScaler { stats: r.stats()? },
        4 => Message::GlobalModel { round: r.u32()?, params: r.params()?, server_control: r.opt_params()? },
        5 => Message::ClientUpdate {
            round: r.u32()?,
            params: r.params()?,
            n_samples: r.u64()?,
            steps: r.u64()?,
            control_delta: r.opt_params()?,
            train_loss: r.f64()?,
        },
        6 => Message::RoundAck { round: r.u32()? },
        7 => Message::Shutdown,
        8 => {
            let round = r.u32()?;
            let split = match r.u8()? {
                0 => EvalSplit::Validation,
                1 => EvalSplit::Test,
                x => return Err(Error::Protocol(format!("unknown evaluation split {x}"))),
            };
            Message::Evaluate { round, split, params: r.params()? }
        }
        9 => {
            let round = r.u32()?;
            let n = r.u32()? as usize;
            let mut per_set = Vec::with_capacity(n.min(1024));
            for _ in 0..n {
                let mut set: OutcomeScores = [None; N_OUTCOMES];
                for v in &mut set {
                    let x = r.f64()?;
                    *v = (!x.is_nan()).then_some(x);
                }
                per_set.push(set);
            }
            Message::EvalReport { round, per_set }
        }
        10 => Message::Reject { reason: r.str()? },
        other => return Err(Error::Protocol(format!("unknown message type {other}"))),
    };
    if r.pos != body.len() {
        return Err(Error::Protocol(format!("{} trailing payload bytes", body.len() - r.pos)));
    }
    Ok(msg)
}

fn known_type(kind: u8) -> bool {
    (1..=10).contains(&kind)
}

/// Parses one frame from the front of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Decoded> {
    let prefix = bytes.len().min(4);
    if bytes[..prefix] != MAGIC[..prefix] {
        return Err(Error::Protocol("bad frame magic".into()));
    }
    if bytes.len() > 4 && bytes[4] != VERSION {
        return Err(Error::Protocol(format!("unsupported protocol version {}", bytes[4])));
    }
    if bytes.len() > 5 && !known_type(bytes[5]) {
        return Err(Error::Protocol(format!("unknown message type {}", bytes[5])));
    }
    if bytes.len() < HEADER {
        return Ok(Decoded::NeedMore);
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::FrameTooLarge(len));
    }
    let total = HEADER + len + 4;
    if bytes.len() < total {
        return Ok(Decoded::NeedMore);
    }
    let body = &bytes[HEADER..HEADER + len];
    let expected = u32::from_le_bytes(bytes[HEADER + len..total].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if expected != actual {
        return Err(Error::Corruption { expected, actual });
    }
    Ok(Decoded::Frame { message: parse(bytes[5], body)?, consumed: total })
}
