//! Configuration, orchestration and artifacts for `cuspflow` campaigns.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod series;
pub mod svg;
