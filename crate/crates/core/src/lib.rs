//! Non-intrusive injection of cloud design patterns into service pipelines,
//! plus the load generation and energy metrics used to evaluate them.

pub mod clock;
pub mod control;
pub mod manifest;
pub mod metrics;
pub mod pipeline;
pub mod proxy;
pub mod testing;
pub mod workload;
