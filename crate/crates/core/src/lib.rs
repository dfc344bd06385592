//! Planning, costing and cycle-accurate simulation of continuous-flow CNN
//! inference architectures.
//!
//! The pipeline is:
//!
//! 1. [`netspec`] parses a declarative network description and lowers
//!    average pooling and depthwise-separable convolutions.
//! 2. [`rate`] propagates exact per-layer data rates and classifies each
//!    layer as continuous or stalled.
//! 3. [`alloc`] turns the rates into an [`alloc::ArchitecturePlan`]: how many
//!    KPUs, PPUs and FCUs each layer gets and how many configurations each
//!    unit cycles through.
//! 4. [`cost`] prices a plan with the closed-form resource model.
//! 5. [`sim`] executes a plan cycle by cycle and [`oracle`] provides the
//!    reference integer inference it must match bit for bit.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod alloc;
pub mod cost;
pub mod error;
pub mod netspec;
pub mod oracle;
pub mod rate;
pub mod report;
pub mod sim;

pub use error::{Error, Result};
pub use rate::Rate;
