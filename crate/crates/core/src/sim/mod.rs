//! Cycle-accurate simulation.

pub mod fcu;
pub mod kpu;
pub mod network;
pub mod trace;

pub use network::{measure_utilization, simulate_network, LayerStats, SimOptions, SimResult, SimStats};
pub use trace::{CycleTrace, TraceValue};
