//! Regret brackets for a hand-made profile: every vehicle simply holds its
//! lane and speed. The certificate bounds how much each vehicle could gain
//! by deviating alone, so the profile is an ε-GNE for the reported ε.
//!
//! Run with `cargo run --release --example certify_profile`.

use ibr_gcs::cli::scenario_file::merge6;
use ibr_gcs::game::{certify_eps_gne, ResponseConfig};
use ibr_gcs::highway::{validate_profile, Profile, Strategy};

fn main() {
    let sc = merge6();
    let hold = Profile::new((0..sc.num_vehicles()).map(|i| Strategy::constant_hold(&sc, i)).collect());
    let violations = validate_profile(&sc, &hold);
    if !violations.is_empty() {
        println!("constant hold is not safe here: {}", violations[0]);
        return;
    }
    let cert = certify_eps_gne(&sc, &hold, &ResponseConfig::default()).expect("best responses solve");
    println!("vehicle   cost      regret in");
    for r in &cert.regrets {
        println!("{:>7} {:>9.3}   [{:.3}, {:.3}]", r.vehicle, r.cost, r.lower, r.upper);
    }
    println!("eps-GNE bound {:.3}", cert.eps_gne_bound);
}
