//! Projects the point (3, -1) onto the line x + y = 0 with a second-order
//! cone program: minimize t subject to ||(x - 3, y + 1)|| <= t.
//!
//! Run with `cargo run --example conic_program`.

use ibr_gcs::conic::{solve, AffineExpr, ConeKind, ConicProgram, Tolerances};

fn main() {
    let mut p = ConicProgram::new();
    let [x, y, t, dx, dy] = [p.add_var(), p.add_var(), p.add_var(), p.add_var(), p.add_var()];
    p.add_objective(t, 1.0);
    p.add_eq(AffineExpr::var(x).term(y, 1.0));
    // dx = x - 3, dy = y + 1
    p.add_eq(AffineExpr::var(dx).term(x, -1.0).plus(3.0));
    p.add_eq(AffineExpr::var(dy).term(y, -1.0).plus(-1.0));
    p.add_cone(vec![t, dx, dy], ConeKind::SecondOrder);

    let sol = solve(&p, Tolerances::default()).expect("well-formed program");
    println!("status     {:?}", sol.status);
    println!("projection ({:.6}, {:.6})", sol.primal[x], sol.primal[y]);
    println!("distance   {:.6} (exact {:.6})", sol.objective_value, 2f64.sqrt());
    println!("residuals  {:?}", sol.residuals);
}
