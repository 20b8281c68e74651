//! Wire protocol of the session server. Every message is one JSON text
//! frame carrying a `"type"` and a schema version `"v"`.
//!
//! Inbound:
//! - `{"v":1,"type":"cmd","u":[ux,uy],"t":client_seconds}`
//! - `{"v":1,"type":"start"}`, `"pause"`, `"reset"`
//!
//! Outbound:
//! - `state` frames at the feedback rate. The operator view carries only
//!   `t`, `z`, `qr`, `eta_h` (biased positions of the accessible robots) and
//!   `obstacles`; the debug view adds `robots`, `waves`, `storage` and
//!   `residual`.
//! - `ack` for each accepted command, `error` for rejected messages,
//!   `status` on every run-state change.

use serde::{Deserialize, Serialize};

use scatternet_core::Vec2;

use crate::scenario::Obstacle;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inbound {
    Command { u: Vec2, client_t: Option<f64> },
    Start,
    Pause,
    Reset,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Wire {
    Cmd {
        v: Option<u32>,
        u: [f64; 2],
        t: Option<f64>,
    },
    Start {
        v: Option<u32>,
    },
    Pause {
        v: Option<u32>,
    },
    Reset {
        v: Option<u32>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    MalformedMessage,
    SecondOperatorRejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub message: String,
}

pub fn parse_inbound(text: &str) -> Result<Inbound, ProtocolError> {
    let malformed = |message: String| ProtocolError { code: ErrorCode::MalformedMessage, message };
    let wire: Wire = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let (v, msg) = match wire {
        Wire::Cmd { v, u, t } => (v, Inbound::Command { u: Vec2::new(u[0], u[1]), client_t: t }),
        Wire::Start { v } => (v, Inbound::Start),
        Wire::Pause { v } => (v, Inbound::Pause),
        Wire::Reset { v } => (v, Inbound::Reset),
    };
    match v {
        Some(v) if v != PROTOCOL_VERSION => Err(malformed(format!("unsupported protocol version {v}"))),
        _ => Ok(msg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotView {
    pub q: [f64; 2],
    pub xi: [f64; 2],
    pub eta: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveView {
    /// 1-based endpoints.
    pub edge: [usize; 2],
    pub s_plus: [f64; 4],
    pub s_minus: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageView {
    pub robots: Vec<f64>,
    pub channels: Vec<f64>,
    pub total: f64,
    pub human: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugFields {
    pub robots: Vec<RobotView>,
    pub waves: Vec<WaveView>,
    pub storage: StorageView,
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub t: f64,
    pub z: [f64; 2],
    pub qr: [f64; 2],
    pub eta_h: Vec<[f64; 2]>,
    pub obstacles: Vec<Obstacle>,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub debug: Option<DebugFields>,
}

impl StateFrame {
    /// The frame with debug fields removed.
    pub fn operator_view(&self) -> StateFrame {
        StateFrame { debug: None, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Paused,
    Running,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    State(Box<StateFrame>),
    Ack {
        v: u32,
        /// Client timestamp of the acknowledged command.
        t: Option<f64>,
        /// True when the command replaced one that had not been applied yet.
        coalesced: bool,
    },
    Error {
        v: u32,
        code: ErrorCode,
        message: String,
    },
    Status {
        v: u32,
        state: RunState,
        t: f64,
        step: usize,
    },
}

impl Outbound {
    pub fn error(e: &ProtocolError) -> Self {
        Outbound::Error { v: PROTOCOL_VERSION, code: e.code, message: e.message.clone() }
    }

    pub fn to_json(&self) -> String {
        match self {
            // the frame already carries its own "type"
            Outbound::State(frame) => serde_json::to_string(frame),
            other => serde_json::to_string(other),
        }
        .expect("outbound messages serialize")
    }
}
