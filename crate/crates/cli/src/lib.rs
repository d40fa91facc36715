//! Command implementations behind the `difftraffic` binary, exposed as a
//! library so test suites can drive the same code paths in-process.

pub mod bench;
pub mod control;
pub mod estimate;
pub mod gradcheck;
pub mod io;
pub mod report;
pub mod simulate;
pub mod spec_files;
