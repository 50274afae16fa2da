//! Four-timestamp clock offset estimation between client and server.
//!
//! The client stamps `t1` on sending a request, the server stamps `t2` on
//! receipt and `t3` on reply, and the client stamps `t4` on receipt. `t1`
//! and `t4` are on the client clock, `t2` and `t3` on the server clock. The
//! offset is the amount to add to client times to get server times.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClockError {
    #[error("clock anomaly: {0}")]
    Anomaly(String),
}

/// All times in µs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSync {
    pub t1: i64,
    pub t2: i64,
    pub t3: i64,
    pub t4: i64,
    /// Server minus client time; may be half-integral.
    pub offset: f64,
    /// Time spent on the wire, excluding server processing.
    pub round_trip: i64,
}

impl ClockSync {
    /// The offset rounded to whole microseconds.
    pub fn offset_us(&self) -> i64 {
        self.offset.round() as i64
    }

    /// Worst-case error of [`Self::offset`] given the path asymmetry is unknown.
    pub fn error_bound(&self) -> f64 {
        self.round_trip as f64 / 2.0
    }
}

pub fn estimate_offset(t1: i64, t2: i64, t3: i64, t4: i64) -> Result<ClockSync, ClockError> {
    if t4 < t1 {
        return Err(ClockError::Anomaly(format!("reply received at {t4} before request sent at {t1}")));
    }
    if t3 < t2 {
        return Err(ClockError::Anomaly(format!("server replied at {t3} before receiving at {t2}")));
    }
    let round_trip = (t4 - t1) - (t3 - t2);
    if round_trip < 0 {
        return Err(ClockError::Anomaly(format!(
            "negative round trip {round_trip} µs: server held the request longer than the client waited"
        )));
    }
    let offset = ((t2 - t1) as f64 + (t3 - t4) as f64) / 2.0;
    Ok(ClockSync {
        t1,
        t2,
        t3,
        t4,
        offset,
        round_trip,
    })
}
