//! Network front end: the NDJSON protocol, clock synchronisation, session
//! orchestration across experiment blocks, and the TCP server.

pub mod clock;
pub mod protocol;
pub mod server;
pub mod session;

pub use clock::{estimate_offset, ClockError, ClockSync};
pub use protocol::{decode_line, Message, SessionEvent};
pub use server::{Server, ServerConfig, ServerHandle};
pub use session::{
    iaf_from_chunks, orchestrate_session, run_single_block, AdaptMode, BlockKind, BlockReport, BlockSpec, Session, SessionConfig, SessionLog,
    SessionReport, VISUAL_MONITORING_STREAM,
};

use thiserror::Error;

use crate::adapt::AdaptError;
use crate::dsp::DspError;
use crate::iaf::IafError;
use crate::pipeline::PipelineError;
use crate::sim::SimError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Iaf(#[from] IafError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Clock(#[from] ClockError),
}

impl From<DspError> for BridgeError {
    fn from(e: DspError) -> Self {
        BridgeError::Pipeline(e.into())
    }
}

impl From<AdaptError> for BridgeError {
    fn from(e: AdaptError) -> Self {
        BridgeError::Pipeline(e.into())
    }
}

impl From<std::io::Error> for BridgeError {
    fn from(e: std::io::Error) -> Self {
        BridgeError::Io(e.to_string())
    }
}
