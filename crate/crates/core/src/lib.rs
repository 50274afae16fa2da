//! Closed-loop EEG adaptation engine.
//!
//! Online alpha/theta band power drives a window-over-window trend
//! classification, which a policy turns into adjustments of the distractor
//! stream shown by a VR client. Around that core sit individual alpha
//! frequency estimation, an offline attention classifier, a synthetic EEG
//! simulator, and a line-delimited JSON bridge server.

// Comparisons such as `!(x > 0.0)` are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod bridge;
pub mod classify;
pub mod dsp;
pub mod iaf;
pub mod pipeline;
pub mod sim;
