//! Append-only JSON-lines session log: a header with the full configuration,
//! then every queue input followed by the events it produced.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;

use super::protocol::{ServerMessage, PROTO_VERSION};
use super::state::{Input, Session};

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("cannot start session: {0}")]
    Session(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header { proto_version: u32, config: Box<Config> },
    Input { input: Input },
    Event { message: ServerMessage },
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

pub struct EventLog<W: Write> {
    out: W,
}

impl<W: Write> EventLog<W> {
    pub fn create(mut out: W, config: &Config) -> io::Result<Self> {
        let header = LogRecord::Header {
            proto_version: PROTO_VERSION,
            config: Box::new(config.clone()),
        };
        writeln!(out, "{}", header.to_line())?;
        Ok(Self { out })
    }

    pub fn record(&mut self, input: &Input, events: &[ServerMessage]) -> io::Result<()> {
        let line = LogRecord::Input { input: input.clone() }.to_line();
        writeln!(self.out, "{line}")?;
        for message in events {
            let line = LogRecord::Event {
                message: message.clone(),
            }
            .to_line();
            writeln!(self.out, "{line}")?;
        }
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// A session that appends everything it processes to a log.
pub struct RecordedSession<W: Write> {
    pub session: Session,
    log: Option<EventLog<W>>,
}

impl<W: Write> RecordedSession<W> {
    pub fn new(session: Session, log: Option<EventLog<W>>) -> Self {
        Self { session, log }
    }

    pub fn apply(&mut self, input: &Input) -> io::Result<Vec<ServerMessage>> {
        let events = self.session.apply(input);
        if let Some(log) = &mut self.log {
            log.record(input, &events)?;
        }
        Ok(events)
    }

    pub fn into_log(self) -> Option<EventLog<W>> {
        self.log
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    /// Zero-based index among event records.
    pub index: usize,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub inputs: usize,
    pub events: usize,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-runs every logged input on a fresh session built from the logged
/// config and compares the serialized event records line for line.
pub fn replay<R: BufRead>(reader: R) -> Result<ReplayReport, LogError> {
    let mut lines = reader.lines().enumerate();
    let (_, first) = lines.next().ok_or(LogError::Format {
        line: 1,
        message: "empty log".into(),
    })?;
    let config = match parse(&first?, 1)? {
        LogRecord::Header { proto_version, config } if proto_version == PROTO_VERSION => config,
        LogRecord::Header { proto_version, .. } => {
            return Err(LogError::Format {
                line: 1,
                message: format!("log written with proto_version {proto_version}"),
            })
        }
        _ => {
            return Err(LogError::Format {
                line: 1,
                message: "first record must be the header".into(),
            })
        }
    };
    let mut session = Session::new(*config).map_err(|e| LogError::Session(e.to_string()))?;
    let mut expected = Vec::new();
    let mut actual = Vec::new();
    let mut inputs = 0;
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse(&line, i + 1)? {
            LogRecord::Header { .. } => {
                return Err(LogError::Format {
                    line: i + 1,
                    message: "second header".into(),
                })
            }
            LogRecord::Input { input } => {
                inputs += 1;
                for message in session.apply(&input) {
                    actual.push(LogRecord::Event { message }.to_line());
                }
            }
            LogRecord::Event { .. } => expected.push(line),
        }
    }
    let mut mismatches = Vec::new();
    for index in 0..expected.len().max(actual.len()) {
        let (e, a) = (expected.get(index), actual.get(index));
        if e != a {
            mismatches.push(Mismatch {
                index,
                expected: e.cloned(),
                actual: a.cloned(),
            });
        }
    }
    Ok(ReplayReport {
        inputs,
        events: expected.len(),
        mismatches,
    })
}

fn parse(line: &str, number: usize) -> Result<LogRecord, LogError> {
    serde_json::from_str(line).map_err(|e| LogError::Format {
        line: number,
        message: e.to_string(),
    })
}
