//! Step-ramp closed-loop load generation.

mod profile;
mod runner;
mod summary;

pub use profile::{
    concurrency_at, parse_duration_s, ProfileError, ProfileName, RequestTemplate, WorkloadProfile,
    DEFAULT_STEP_INTERVAL_S,
};
pub use runner::{
    read_outcomes_csv, request_url, run_load, unix_ms_now, CsvSink, HttpRequester, LoadError,
    OutcomeSink, OutcomeStatus, PoolGauges, RequestOutcome, Requester, Response, RunHandle,
    RunStats, SinkError, VecSink, TRANSPORT_ERROR_MARKER,
};
pub use summary::{nearest_rank, summarize, StepAggregate, SummaryWindow, WorkloadReport};
