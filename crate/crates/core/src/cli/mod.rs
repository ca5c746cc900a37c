//! Scenario files, randomized batches and result export.

pub mod batch;
pub mod export;
pub mod scenario_file;

pub use batch::{generate_random_batch, RandomBatchSpec};
pub use scenario_file::{parse_scenario, parse_scenario_str, write_scenario, ScenarioFile};
