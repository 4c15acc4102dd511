//! Message schema and length-prefixed JSON framing.
//!
//! A frame is a 4-byte big-endian length followed by one UTF-8 JSON envelope.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::status::StatusReport;
use crate::envsim::{ActionSpace, StepOutcome, TaskSpec};
use crate::grpo::UpdateMetrics;

pub const PROTO_VERSION: u32 = 1;
/// Frames above this size are refused.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    VersionMismatch,
    UnknownWorker,
    DuplicateLiveWorker,
    NoCapacity,
    UnknownSession,
    SessionLost,
    InvalidTask,
    EpisodeFinished,
    Timeout,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    /// worker → controller
    Register { address: String, capacity: u32, #[serde(default)] worker_id: Option<String> },
    Registered { worker_id: String },
    Heartbeat { worker_id: String, active: u32 },
    /// client → controller
    Allocate {
        task: TaskSpec,
        seed: u64,
        space: ActionSpace,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        realloc_of: Option<String>,
    },
    /// controller → worker: bind an env to an already chosen slot.
    Spawn { session_id: String, slot_id: String, task: TaskSpec, seed: u64, space: ActionSpace },
    Allocated { session_id: String, slot_id: String, worker_id: String, observation: String },
    Step { session_id: String, action: String },
    StepResult {
        outcome: StepOutcome,
        /// Present once the episode is over.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        accuracy: Option<f64>,
    },
    Reset { session_id: String },
    Release { session_id: String },
    StatusQuery,
    StatusReport { report: StatusReport },
    Drain { worker_id: String },
    /// trainer → controller: newly produced metrics; reply carries operator commands.
    TrainerSync { phase: String, metrics: Vec<UpdateMetrics> },
    TrainerControl { paused: bool },
    Ack,
    Error { code: ErrorCode, message: String },
}

impl WireMessage {
    /// Reply variant names a request may legitimately receive (besides `error`).
    pub fn reply_kind(&self) -> Option<&'static str> {
        Some(match self {
            WireMessage::Register { .. } => "registered",
            WireMessage::Heartbeat { .. } => "ack",
            WireMessage::Allocate { .. } | WireMessage::Spawn { .. } | WireMessage::Reset { .. } => "allocated",
            WireMessage::Step { .. } => "step_result",
            WireMessage::Release { .. } => "ack",
            WireMessage::StatusQuery => "status_report",
            WireMessage::Drain { .. } => "ack",
            WireMessage::TrainerSync { .. } => "trainer_control",
            _ => return None,
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Register { .. } => "register",
            WireMessage::Registered { .. } => "registered",
            WireMessage::Heartbeat { .. } => "heartbeat",
            WireMessage::Allocate { .. } => "allocate",
            WireMessage::Spawn { .. } => "spawn",
            WireMessage::Allocated { .. } => "allocated",
            WireMessage::Step { .. } => "step",
            WireMessage::StepResult { .. } => "step_result",
            WireMessage::Reset { .. } => "reset",
            WireMessage::Release { .. } => "release",
            WireMessage::StatusQuery => "status_query",
            WireMessage::StatusReport { .. } => "status_report",
            WireMessage::Drain { .. } => "drain",
            WireMessage::TrainerSync { .. } => "trainer_sync",
            WireMessage::TrainerControl { .. } => "trainer_control",
            WireMessage::Ack => "ack",
            WireMessage::Error { .. } => "error",
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        WireMessage::Error { code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub proto_version: u32,
    pub correlation_id: u64,
    pub sender_id: String,
    #[serde(flatten)]
    pub body: WireMessage,
}

impl Envelope {
    pub fn new(correlation_id: u64, sender_id: &str, body: WireMessage) -> Self {
        Envelope { proto_version: PROTO_VERSION, correlation_id, sender_id: sender_id.to_string(), body }
    }

    /// A reply that echoes this envelope's correlation id.
    pub fn reply(&self, sender_id: &str, body: WireMessage) -> Self {
        Envelope::new(self.correlation_id, sender_id, body)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol version {0} not supported")]
    Version(u32),
}

pub fn encode(env: &Envelope) -> Vec<u8> {
    let body = serde_json::to_vec(env).expect("envelope serializes");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn decode_body(body: &[u8]) -> Result<Envelope, WireError> {
    let value: serde_json::Value = serde_json::from_slice(body).map_err(|e| WireError::Malformed(e.to_string()))?;
    match value.get("proto_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(PROTO_VERSION) => {}
        Some(v) => return Err(WireError::Version(v as u32)),
        None => return Err(WireError::Malformed("missing proto_version".into())),
    }
    serde_json::from_value(value).map_err(|e| WireError::Malformed(e.to_string()))
}

pub fn write_frame(w: &mut impl Write, env: &Envelope) -> Result<(), WireError> {
    w.write_all(&encode(env))?;
    w.flush()?;
    Ok(())
}

pub fn read_frame(r: &mut impl Read) -> Result<Envelope, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_FRAME {
        return Err(WireError::TooLarge(n));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    decode_body(&body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip_keeps_correlation() {
        let env = Envelope::new(42, "client-1", WireMessage::Step { session_id: "s-1".into(), action: "DONE".into() });
        let bytes = encode(&env);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len() - 4);
        let back = read_frame(&mut &bytes[..]).unwrap();
        assert_eq!(back, env);
        assert_eq!(back.reply("controller", WireMessage::Ack).correlation_id, 42);
    }

    #[test]
    fn rejects_bad_frames() {
        let mut bytes = encode(&Envelope::new(1, "x", WireMessage::Ack));
        let body = String::from_utf8(bytes[4..].to_vec()).unwrap().replace("\"proto_version\":1", "\"proto_version\":7");
        assert!(matches!(decode_body(body.as_bytes()), Err(WireError::Version(7))));
        assert!(matches!(decode_body(b"{\"type\":\"ack\"}"), Err(WireError::Malformed(_))));
        bytes[0] = 0xff;
        assert!(matches!(read_frame(&mut &bytes[..]), Err(WireError::TooLarge(_))));
        assert!(read_frame(&mut &b"\x00\x00"[..]).is_err());
    }

    #[test]
    fn every_request_has_one_reply_kind() {
        let requests = [
            WireMessage::Register { address: "a".into(), capacity: 1, worker_id: None },
            WireMessage::Heartbeat { worker_id: "w".into(), active: 0 },
            WireMessage::Step { session_id: "s".into(), action: "DONE".into() },
            WireMessage::Reset { session_id: "s".into() },
            WireMessage::Release { session_id: "s".into() },
            WireMessage::StatusQuery,
            WireMessage::Drain { worker_id: "w".into() },
            WireMessage::TrainerSync { phase: "rl1".into(), metrics: vec![] },
        ];
        for r in requests {
            assert!(r.reply_kind().is_some(), "{}", r.kind());
        }
        assert!(WireMessage::Ack.reply_kind().is_none());
    }
}
