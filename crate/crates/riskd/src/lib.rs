//! Command line and HTTP front ends for `riskd-core`.

pub mod cli;
pub mod report;
pub mod service;
