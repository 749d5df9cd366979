//! Session host: a single serialized command/tick queue over the simulator
//! and planner, a length-delimited JSON protocol, and replayable logs.

mod log;
mod protocol;
mod state;
mod transport;

pub use log::{replay, EventLog, LogError, LogRecord, Mismatch, RecordedSession, ReplayReport};
pub use protocol::{
    decode_client, read_frame, write_frame, write_message, ClientCommand, ClientMessage, ErrorCode, MalformedFrame,
    Mode, ServerEvent, ServerMessage, MAX_FRAME_BYTES, PROTO_VERSION,
};
pub use state::{Input, Session};
pub use transport::{serve, spawn_receiver, Client, ServeStats};
