//! Newline-delimited JSON messages exchanged with a VR client.
//!
//! Every line is one object with a `type` tag. Sample blocks travel as flat,
//! row-major arrays (`samples[c * n_samples + i]`) with microsecond
//! timestamps. The same `eeg` object is the line format of recorded chunk
//! files.

use serde::{Deserialize, Serialize};

use crate::adapt::AdaptationDecision;
use crate::dsp::{DspError, EegChunk};
use crate::iaf::IndividualBands;
use crate::sim::Montage;

use super::session::{AdaptMode, BlockKind, SessionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Config(ConfigEcho),
    Eeg(EegPayload),
    Decision(DecisionPayload),
    Event(EventPayload),
    TimeReq(TimeReq),
    TimeResp(TimeResp),
    Bye(Bye),
    Error(ErrorPayload),
}

impl Message {
    /// Session the message claims to belong to, if any.
    pub fn session_id(&self) -> Option<&str> {
        match self {
            Message::Hello(m) => m.session_id.as_deref(),
            Message::Config(m) => Some(&m.session_id),
            Message::Eeg(m) => m.session_id.as_deref(),
            Message::Decision(m) => Some(&m.session_id),
            Message::Event(m) => Some(&m.session_id),
            Message::TimeReq(m) => m.session_id.as_deref(),
            Message::TimeResp(m) => m.session_id.as_deref(),
            Message::Bye(m) => m.session_id.as_deref(),
            Message::Error(m) => m.session_id.as_deref(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::Config(_) => "config",
            Message::Eeg(_) => "eeg",
            Message::Decision(_) => "decision",
            Message::Event(_) => "event",
            Message::TimeReq(_) => "time_req",
            Message::TimeResp(_) => "time_resp",
            Message::Bye(_) => "bye",
            Message::Error(_) => "error",
        }
    }

    /// One NDJSON line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("messages always serialize")
    }
}

/// Session settings a client may override; anything left out takes the
/// server default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<AdaptMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_initial: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_floor: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_ceiling: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montage: Option<Montage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<IndividualBands>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub session_id: String,
    /// Channel order the client must use in `eeg` messages.
    pub channels: Vec<String>,
    #[serde(flatten)]
    pub config: SessionConfig,
}

/// A block of samples. `t` is the time of the first sample in µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub t: i64,
    pub sample_rate: f64,
    pub channels: Vec<String>,
    pub n_samples: usize,
    pub samples: Vec<f64>,
}

impl EegPayload {
    pub fn from_chunk(session_id: Option<String>, chunk: &EegChunk) -> Self {
        Self {
            session_id,
            t: seconds_to_micros(chunk.start_time()),
            sample_rate: chunk.sample_rate(),
            channels: chunk.channel_labels().to_vec(),
            n_samples: chunk.n_samples(),
            samples: chunk.to_flat(),
        }
    }

    /// The chunk, with `offset_us` added to its timestamp.
    pub fn to_chunk(&self, offset_us: i64) -> Result<EegChunk, DspError> {
        EegChunk::from_flat(
            micros_to_seconds(self.t.saturating_add(offset_us)),
            self.sample_rate,
            self.channels.clone(),
            self.n_samples,
            &self.samples,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPayload {
    pub session_id: String,
    #[serde(flatten)]
    pub decision: AdaptationDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    pub session_id: String,
    #[serde(flatten)]
    pub event: SessionEvent,
}

/// Something that happened in a session besides a decision. Written to the
/// session log alongside decision records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    BlockStart {
        t: f64,
        block: BlockKind,
        policy: AdaptMode,
        stream: i32,
    },
    BlockEnd {
        t: f64,
        block: BlockKind,
        decisions: usize,
        stream: i32,
    },
    Bands {
        t: f64,
        bands: IndividualBands,
        fallback: bool,
    },
    Lag {
        t: f64,
        queued_seconds: f64,
    },
    ClockOffset {
        offset_us: i64,
        round_trip_us: i64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeReq {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub t1: i64,
}

/// The server fills `t2`/`t3`; a client that echoes it back with `t4` set
/// tells the server the offset to apply to its sample timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeResp {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t4: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bye {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// The line was not valid JSON or not a known message. The connection stays open.
    Malformed,
    /// The message was valid but not allowed here. The connection closes.
    Protocol,
    /// The session could not be configured.
    Config,
    /// Sample data was rejected by the pipeline.
    Data,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub code: ErrorCode,
    pub message: String,
    /// 1-based input line the error refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<u64>,
    /// Byte offset of the fault within that line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

/// Why a line could not be decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeError {
    pub offset: usize,
    pub message: String,
}

/// Parses one line. The error carries the byte offset of the fault.
pub fn decode_line(line: &str) -> Result<Message, DecodeError> {
    serde_json::from_str(line).map_err(|e| DecodeError {
        offset: byte_offset(line, e.line(), e.column()),
        message: e.to_string(),
    })
}

// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn seconds_to_micros(s: f64) -> i64 {
    (s * 1e6).round() as i64
}

pub fn micros_to_seconds(us: i64) -> f64 {
    us as f64 / 1e6
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_are_snake_case() {
        let m = Message::TimeReq(TimeReq {
            session_id: Some("s".into()),
            t1: 5,
        });
        assert_eq!(m.to_line(), r#"{"type":"time_req","session_id":"s","t1":5}"#);
        assert_eq!(decode_line(&m.to_line()).unwrap(), m);
    }

    #[test]
    fn eeg_round_trips_through_chunk() {
        let labels = vec!["Fz".to_string(), "Pz".to_string()];
        let chunk = EegChunk::new(1.5, 500.0, labels, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let p = EegPayload::from_chunk(Some("a".into()), &chunk);
        assert_eq!(p.t, 1_500_000);
        assert_eq!(p.samples, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let line = Message::Eeg(p.clone()).to_line();
        let Message::Eeg(back) = decode_line(&line).unwrap() else { panic!() };
        assert_eq!(back.to_chunk(0).unwrap(), chunk);
        assert_eq!(back.to_chunk(-500_000).unwrap().start_time(), 1.0);
    }

    #[test]
    fn decode_error_reports_byte_offset() {
        let e = decode_line(r#"{"type":"bye",}"#).unwrap_err();
        assert_eq!(e.offset, 14);
        let e = decode_line(r#"{"type":"warp"}"#).unwrap_err();
        assert!(e.message.contains("warp"));
        assert!(decode_line("").is_err());
    }

    #[test]
    fn hello_defaults_are_optional() {
        let Message::Hello(h) = decode_line(r#"{"type":"hello","policy":"positive"}"#).unwrap() else {
            panic!()
        };
        assert_eq!(h.policy, Some(AdaptMode::Positive));
        assert_eq!(h.threshold, None);
    }

    #[test]
    fn events_are_tagged() {
        let e = Message::Event(EventPayload {
            session_id: "s".into(),
            event: SessionEvent::Lag {
                t: 12.0,
                queued_seconds: 11.0,
            },
        });
        let line = e.to_line();
        assert!(line.contains(r#""type":"event""#) && line.contains(r#""event":"lag""#));
        assert_eq!(decode_line(&line).unwrap(), e);
    }
}
