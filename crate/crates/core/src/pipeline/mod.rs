//! Small stand-in data pipeline: a data product serving a bundled book
//! list, four transformation stages, and a coordinator chaining them over
//! HTTP so injected proxies sit on the wire.

mod server;
mod stages;

pub use server::{
    coordinator_router, data_product_router, default_chain, router_for, spawn_router, stage_router, LocalPipeline,
    Role, StageReply, StageRequest, StageUrls,
};
pub use stages::{
    aggregate, aggregate_records, anonymize, apply_stage, bundled_books, bundled_records, filter, format,
    format_csv, hash_hex, mask, run_chain, validate_chain, BookRecord, Document, OutputFormat, Record,
    StageError, StageKind, StageSpec, Strategy, BOOK_FIELDS,
};
