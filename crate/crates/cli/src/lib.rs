//! Pipeline driver library behind the `pgov` binary: configuration,
//! stage orchestration, ablation suite, and reporting.

pub mod ablation;
pub mod config;
pub mod pipeline;
pub mod report;
