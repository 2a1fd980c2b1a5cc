//! Scenario loading, run orchestration, metrics and file I/O.

pub mod babble;
pub mod logio;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use babble::{babble, parse_babble_csv, read_babble_csv, write_babble_csv};
pub use logio::{
    parse_run_log_csv, read_run_log_csv, run_log_csv_bytes, sha256_file, sha256_hex, write_run_log_csv,
    write_summary, CsvRow,
};
pub use metrics::{compare, ComparisonSummary, MethodStats, SummaryStats};
pub use runner::{
    prepare, record_target, run, LogRow, Method, Prepared, RunLog, RunResult, STEADY_STATE_WINDOW,
};
pub use scenario::{load_scenario, resolve_scenario, Scenario};
