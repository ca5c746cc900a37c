//! A shortest path through a small graph of convex sets. A point starts at
//! 0 and must reach 3 through one of two intervals, paying the squared
//! length of every hop. The convex relaxation already picks the right
//! branch, so rounding is exact and the gap is zero.
//!
//! Run with `cargo run --example gcs_shortest_path`.

use ibr_gcs::gcs::{solve_spp, Edge, EdgeSpec, GcsGraph, QuadraticTerm, SppConfig, Vertex, VertexSet};

fn interval(lo: f64, hi: f64) -> Vertex {
    Vertex { set: VertexSet::from_bounds(&[(lo, hi)]).unwrap(), cost: None }
}

fn squared_hop() -> EdgeSpec {
    EdgeSpec {
        quadratic: vec![QuadraticTerm { weight: 1.0, tail: vec![-1.0], head: vec![1.0], constant: 0.0 }],
        ..EdgeSpec::default()
    }
}

fn main() {
    let vertices = vec![
        Vertex { set: VertexSet::point(&[0.0]), cost: None },
        interval(1.0, 2.0),   // near corridor
        interval(-2.0, -1.0), // detour
        Vertex { set: VertexSet::point(&[3.0]), cost: None },
    ];
    let edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
        .into_iter()
        .map(|(tail, head)| Edge { tail, head, spec: squared_hop() })
        .collect();
    let graph = GcsGraph::new(vertices, edges, 0, 3).expect("valid graph");

    let sol = solve_spp(&graph, &SppConfig::default()).expect("solvable");
    println!("path            {:?}", sol.path);
    println!("states          {:?}", sol.vertex_states);
    println!("relaxed value   {:.6}", sol.relaxed_value);
    println!("rounded value   {:.6} (by hand: 1.5^2 + 1.5^2 = 4.5)", sol.rounded_value);
    println!("edge flows      {:?}", sol.edge_flows.iter().map(|f| format!("{f:.3}")).collect::<Vec<_>>());
    println!("tight           {}", sol.tight);
}
