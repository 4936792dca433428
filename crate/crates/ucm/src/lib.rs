//! File formats, dataset layout, configuration and the `ucm` command line
//! on top of `ucm-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod formats;
pub mod report;
