//! Synchronized ECG/PPG analysis: signal ingest, event delineation, timed
//! event traces, timed-automaton runtime monitors and correlation statistics.

pub mod delineate;
pub mod events;
pub mod ingest;
pub mod monitor;
pub mod stats;
pub mod synth;
