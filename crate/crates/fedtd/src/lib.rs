//! IO, formats, command implementations and parallel orchestration for the
//! `fedtd` experiment binary.

pub mod bounds;
pub mod commands;
pub mod error;
pub mod family;
pub mod output;
pub mod parallel;
pub mod spec;

pub use error::HarnessError;
pub use spec::ExperimentSpec;
