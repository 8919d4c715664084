//! Energy and latency metrics pulled from Prometheus, windowed per namespace.

mod collect;
mod energy;
pub mod fixture;
mod prom;
mod table;

pub use collect::{
    collect_run, CollectError, CollectorConfig, PromQueryTemplate, RunMeta, ENERGY_QUERY, LATENCY_QUERY,
    REQUEST_QUERY,
};
pub use energy::{
    attribute_by_namespace, group_samples, samples_from_series, window_energy, window_energy_on_grid,
    Attribution, EnergySample, EnergyWindow, DEFAULT_WINDOW_SECONDS,
};
pub use prom::{check_range, parse_query_range, query_range, HttpPrometheus, PromSource, QueryError, Series};
pub use table::{
    export_csv, export_csv_string, export_series, export_series_json, read_csv, MetricsRow, MetricsTable,
    MissingColumn, PlotSeries, TableError, CSV_HEADER,
};
