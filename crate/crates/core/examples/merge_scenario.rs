//! Iterative best response on the bundled six-vehicle merge: two vehicles
//! on a terminating on-ramp (lane 1) must end up on the highway. Writes the
//! trajectory, potential and report files plus a lane plot.
//!
//! Run with `cargo run --release --example merge_scenario [OUT_DIR]`.

use std::path::PathBuf;

use ibr_gcs::cli::export::{export_run, render_report};
use ibr_gcs::cli::scenario_file::merge6;
use ibr_gcs::game::{ibr_run, IbrConfig};
use ibr_gcs::highway::validate_profile;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("merge6"));
    let sc = merge6();
    let (profile, report) = ibr_run(&sc, &IbrConfig::default()).expect("merge scenario solves");
    print!("{}", render_report(&report));

    for (i, st) in profile.strategies.iter().enumerate() {
        println!("vehicle {i}: lane {} -> {}", st.z[0], st.z[st.horizon() - 1]);
    }
    println!("violations: {}", validate_profile(&sc, &profile).len());
    export_run(&out, &sc, Some(&profile), &report, true).expect("writable output directory");
    println!("files written to {}", out.display());
}
