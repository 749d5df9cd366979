//! Wire schema. Every frame is a 4-byte big-endian length followed by that
//! many bytes of UTF-8 JSON holding one envelope.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::eye::{EyeGeometry, Pixel};
use crate::se3::Vec3;
use crate::task::{GoalEntry, LocalizationEntry, NavPhase, RunReport, VesselEntry};

pub const PROTO_VERSION: u32 = 1;
/// Frames above this size are rejected and the connection is closed.
pub const MAX_FRAME_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    ClickGoal {
        pixel: Pixel,
    },
    /// Omitted fields keep their current value.
    SetWeights {
        #[serde(default)]
        sclera_weight: Option<f64>,
        #[serde(default)]
        collision_weight: Option<f64>,
        #[serde(default)]
        replan_hz: Option<f64>,
    },
    StartLocalization {
        samples: usize,
    },
    SetVesselPath {
        pixels: Vec<Pixel>,
        #[serde(default)]
        hover_offset_mm: Option<f64>,
    },
    Pause,
    Resume,
    Reset,
    RunBenchmark {
        goals: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMessage {
    pub proto_version: u32,
    /// Client-chosen; echoed in the acknowledgement.
    pub seq: u64,
    pub command: ClientCommand,
}

impl ClientMessage {
    pub fn new(seq: u64, command: ClientCommand) -> Self {
        Self {
            proto_version: PROTO_VERSION,
            seq,
            command,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Idle,
    Navigating,
    Localizing,
    Vessel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMode,
    BadPayload,
    GoalOffRetina,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    /// Sent once per connection; not part of the session log.
    Hello {
        mm_per_pixel: f64,
        image_width: u32,
        image_height: u32,
        tick_hz: f64,
        replan_hz: f64,
        retina: EyeGeometry,
        sclera_point: Vec3,
        mode: Mode,
    },
    Accepted {
        command_seq: u64,
    },
    Rejected {
        command_seq: Option<u64>,
        code: ErrorCode,
        message: String,
    },
    StateTick {
        tick: u64,
        mode: Mode,
        paused: bool,
        tip: Vec3,
        tool_axis: Vec3,
        shadow: Option<Vec3>,
        plan_preview: Vec<Vec3>,
        sclera_residual_mm: f64,
        goal: Option<Pixel>,
        phase: Option<NavPhase>,
        replans: usize,
    },
    FitUpdate {
        center: Vec3,
        radius: f64,
        entry: LocalizationEntry,
    },
    GoalReached {
        entry: GoalEntry,
    },
    VesselComplete {
        entry: VesselEntry,
    },
    BenchmarkComplete {
        report: RunReport,
    },
    /// A replan used its whole iteration budget without converging.
    Latency {
        iterations: usize,
        budget: usize,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerMessage {
    pub proto_version: u32,
    pub seq: u64,
    /// Session simulation time (s).
    pub time_s: f64,
    pub event: ServerEvent,
}

/// A frame that could not be turned into a [`ClientMessage`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MalformedFrame {
    pub command_seq: Option<u64>,
    pub message: String,
}

pub fn decode_client(bytes: &[u8]) -> Result<ClientMessage, MalformedFrame> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| MalformedFrame {
        command_seq: None,
        message: format!("not JSON: {e}"),
    })?;
    let command_seq = value.get("seq").and_then(|s| s.as_u64());
    let malformed = |message: String| MalformedFrame { command_seq, message };
    match value.get("proto_version").and_then(|v| v.as_u64()) {
        Some(v) if v == PROTO_VERSION as u64 => {}
        Some(v) => return Err(malformed(format!("unsupported proto_version {v}, expected {PROTO_VERSION}"))),
        None => return Err(malformed("missing proto_version".into())),
    }
    serde_json::from_value(value).map_err(|e| malformed(e.to_string()))
}

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|n| (*n as usize) <= MAX_FRAME_BYTES)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a length prefix.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_message<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let bytes = serde_json::to_vec(msg).map_err(io::Error::other)?;
    write_frame(w, &bytes)
}
