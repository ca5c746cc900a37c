//! One best response: vehicle 0 wants to go faster than the vehicle ahead
//! of it in lane 1 and decides whether to overtake through lane 2.
//!
//! Run with `cargo run --example best_response`.

use ibr_gcs::game::{best_response, ResponseConfig};
use ibr_gcs::highway::{cost_j, InitialState, Scenario, Strategy, VehicleParams, Weights};

fn main() {
    let fast = VehicleParams {
        v_min: 0.0,
        v_max: 40.0,
        a_min: -6.0,
        a_max: 3.0,
        d_safe: 10.0,
        v_des: 32.0,
        lane_des: 1,
        weights: Weights { speed: 1.0, lane: 5.0, accel: 0.2, blinker: 5.0 },
    };
    let slow = VehicleParams { v_des: 20.0, ..fast };
    let init = vec![InitialState { s: 0.0, v: 28.0, lane: 1 }, InitialState { s: 30.0, v: 20.0, lane: 1 }];
    let sc = Scenario::new((0.0, 1000.0), 2, 20, 0.3, vec![fast, slow], init).expect("valid scenario");
    let lead = Strategy::constant_hold(&sc, 1);

    let (plan, record) = best_response(&sc, 0, &[(1, &lead)], &ResponseConfig::default()).expect("solvable");
    println!("lanes     {:?}", plan.z);
    println!("speeds    {:?}", plan.v.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>());
    println!("gap to 1  {:?}", plan.s.iter().zip(&lead.s).map(|(a, b)| format!("{:.1}", b - a)).collect::<Vec<_>>());
    println!("cost      {:.4} (recomputed {:.4})", record.rounded_value, cost_j(&fast, &plan));
    println!("bound     {:.4}, tight {}", record.relaxed_value, record.tight);
}
