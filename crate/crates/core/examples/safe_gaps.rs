//! Safe gaps and the time-expanded graph one vehicle plans in. Vehicle 0
//! starts behind vehicle 1, which holds lane 1 at constant speed.
//!
//! Run with `cargo run --example safe_gaps`.

use ibr_gcs::highway::{
    build_safe_gaps, build_vehicle_graph, GraphOptions, InitialState, Scenario, Strategy, VehicleParams, Weights,
};

fn main() {
    let params = VehicleParams {
        v_min: 0.0,
        v_max: 40.0,
        a_min: -6.0,
        a_max: 3.0,
        d_safe: 10.0,
        v_des: 30.0,
        lane_des: 1,
        weights: Weights { speed: 0.5, lane: 10.0, accel: 0.2, blinker: 7.0 },
    };
    let init = vec![InitialState { s: 0.0, v: 25.0, lane: 1 }, InitialState { s: 40.0, v: 20.0, lane: 1 }];
    let sc = Scenario::new((0.0, 500.0), 2, 6, 0.5, vec![params; 2], init).expect("valid scenario");
    let lead = Strategy::constant_hold(&sc, 1);

    let gaps = build_safe_gaps(&sc, 0, &[(1, &lead)]);
    for t in 0..sc.horizon() {
        let row: Vec<String> = sc
            .lanes()
            .map(|l| {
                let g: Vec<String> = gaps.gaps(t, l).iter().map(|iv| iv.to_string()).collect();
                format!("lane {l}: {}", g.join(" "))
            })
            .collect();
        println!("t = {t}  {}", row.join("   "));
    }

    let vg = build_vehicle_graph(&sc, 0, &[(1, &lead)], GraphOptions::default()).expect("graph");
    println!(
        "\ngraph of vehicle 0: {} vertices, {} edges, {} source-target paths",
        vg.graph.vertices().len(),
        vg.graph.edges().len(),
        vg.graph.count_paths()
    );
}
