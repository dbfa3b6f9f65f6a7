//! ECG wave delineation toolkit.
//!
//! Reads WFDB records, band-pass filters them with a zero-phase Butterworth
//! filter, trains a CNN + bidirectional LSTM per-sample labeller for the
//! P / QRS / T / no-wave classes and turns its output into wave onset, peak
//! and offset events, together with the sample-level and beat-level scoring
//! used to evaluate it.

pub mod dataset;
pub mod delineate;
pub mod dsp;
pub mod eval;
pub mod nn;
pub mod synth;
pub mod train;
pub mod wfdb;
