//! A small seeded batch of random four-vehicle scenarios with a per-run
//! summary and the aggregate potential-monotonicity verdict.
//!
//! Run with `cargo run --release --example random_batch [COUNT] [SEED]`.

use ibr_gcs::cli::batch::{generate_random_batch, RandomBatchSpec};
use ibr_gcs::cli::export::run_and_export;
use ibr_gcs::game::IbrConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let count = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(42);
    let spec = RandomBatchSpec { num_scenarios: count, seed, ..RandomBatchSpec::default() };
    let scenarios = generate_random_batch(&spec).expect("valid batch spec");
    let (summary, _) = run_and_export(&scenarios, &IbrConfig::default(), None, false).expect("no files written");
    print!("{}", summary.to_csv());
    println!("{}", summary.verdict());
}
