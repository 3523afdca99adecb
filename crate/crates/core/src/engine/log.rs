use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{SimEvent, SimTime};

/// Payload carried by a [`SimEvent`]. The kind tag is derived from the
/// payload, so the two can never disagree.
pub trait EventPayload: Clone + fmt::Debug + Sized {
    fn kind(&self) -> &'static str;
    fn to_json(&self) -> Value;
    fn from_json(kind: &str, payload: Value) -> Result<Self, String>;

    /// `(scenario_id, master_seed)` when this payload announces a run.
    fn run_identity(&self) -> Option<(&str, u64)> {
        None
    }
}

/// Payload half of an enum serialized with
/// `#[serde(tag = "kind", content = "payload")]`.
pub fn adjacent_payload<T: Serialize>(value: &T) -> Value {
    match serde_json::to_value(value) {
        Ok(Value::Object(mut m)) => m.remove("payload").unwrap_or(Value::Null),
        _ => Value::Null,
    }
}

/// Inverse of [`adjacent_payload`].
pub fn from_adjacent<T: serde::de::DeserializeOwned>(kind: &str, payload: Value) -> Result<T, String> {
    let mut m = serde_json::Map::new();
    m.insert("kind".into(), Value::String(kind.to_owned()));
    if !payload.is_null() {
        m.insert("payload".into(), payload);
    }
    serde_json::from_value(Value::Object(m)).map_err(|e| e.to_string())
}

#[derive(Debug, Error)]
pub enum LogParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("line {line}: event ({time_us}, {seq}) is out of order")]
    OutOfOrder { line: usize, time_us: u64, seq: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Serialize)]
struct LineOut<'a> {
    time_us: u64,
    seq: u64,
    kind: &'a str,
    subject: &'a str,
    payload: Value,
}

#[derive(Deserialize)]
struct LineIn {
    time_us: u64,
    seq: u64,
    kind: String,
    subject: String,
    #[serde(default)]
    payload: Value,
}

/// Append-only, `(time, seq)`-ordered record of processed events.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog<P> {
    scenario_id: String,
    master_seed: u64,
    entries: Vec<SimEvent<P>>,
}

impl<P: EventPayload> EventLog<P> {
    pub fn new(scenario_id: impl Into<String>, master_seed: u64) -> Self {
        EventLog {
            scenario_id: scenario_id.into(),
            master_seed,
            entries: Vec::new(),
        }
    }

    pub fn scenario_id(&self) -> &str {
        &self.scenario_id
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn entries(&self) -> &[SimEvent<P>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SimEvent<P>> {
        self.entries.iter()
    }

    pub(crate) fn push(&mut self, event: SimEvent<P>) {
        debug_assert!(self
            .entries
            .last()
            .is_none_or(|last| (last.time, last.seq) < (event.time, event.seq)));
        self.entries.push(event);
    }

    pub fn write_ndjson<W: Write>(&self, mut w: W) -> io::Result<()> {
        for ev in &self.entries {
            let line = LineOut {
                time_us: ev.time.as_micros(),
                seq: ev.seq,
                kind: ev.payload.kind(),
                subject: &ev.subject,
                payload: ev.payload.to_json(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson(&self) -> String {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Parses a newline-delimited log. Scenario id and seed are taken from
    /// the first event whose payload announces a run.
    pub fn read_ndjson<R: BufRead>(r: R) -> Result<Self, LogParseError> {
        let mut log = EventLog::new("", 0);
        let mut identified = false;
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: LineIn = serde_json::from_str(&line).map_err(|e| LogParseError::Line {
                line: line_no,
                message: e.to_string(),
            })?;
            let payload = P::from_json(&raw.kind, raw.payload).map_err(|message| LogParseError::Line {
                line: line_no,
                message,
            })?;
            let event = SimEvent {
                time: SimTime::from_micros(raw.time_us),
                seq: raw.seq,
                subject: raw.subject,
                payload,
            };
            if let Some(last) = log.entries.last() {
                if (last.time, last.seq) >= (event.time, event.seq) {
                    return Err(LogParseError::OutOfOrder {
                        line: line_no,
                        time_us: raw.time_us,
                        seq: raw.seq,
                    });
                }
            }
            if !identified {
                if let Some((id, seed)) = event.payload.run_identity() {
                    log.scenario_id = id.to_owned();
                    log.master_seed = seed;
                    identified = true;
                }
            }
            log.entries.push(event);
        }
        Ok(log)
    }

    pub fn from_ndjson(s: &str) -> Result<Self, LogParseError> {
        Self::read_ndjson(s.as_bytes())
    }
}
