//! Scenario files, trace export and the command line for `orgami-core`.

pub mod export;
pub mod run;
pub mod scenario;
pub mod schema;

pub use run::{run_scenario, Report, RunError, RunOptions, TraceBundle, Verdict};
pub use scenario::{load_scenario, parse_scenario, LoadError, Scenario};
pub use schema::Violation;
