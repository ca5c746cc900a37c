//! Standard-form convex conic programs and the interior-point backend that
//! solves them.
//!
//! A [`ConicProgram`] is a linear objective over `num_vars` variables,
//! a list of affine equality rows and a list of cone memberships, each of
//! which constrains a tuple of variables:
//!
//! * `Nonnegative`: every listed variable is `>= 0`
//! * `Box { lo, hi }`: every listed variable lies in `[lo, hi]`
//! * `SecondOrder`: `(t, x_1, .., x_k)` with `||x|| <= t`
//! * `RotatedSecondOrder`: `(u, w, x_1, .., x_k)` with `2 u w >= ||x||^2`, `u, w >= 0`
//!
//! Quadratic terms never enter the objective directly; they are lowered to
//! rotated cone epigraphs by the caller.
//!
//! The backend is Clarabel. Variable-tuple cones are mapped onto its
//! `A x + s = b, s in K` form; the rotated cone goes through the usual
//! `((u + w)/sqrt2, (u - w)/sqrt2, x)` change of coordinates.

use std::fmt::{self, Write as _};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use thiserror::Error;

/// A sparse affine form `sum coeff_k * x_{var_k} + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(index: usize) -> Self {
        Self { terms: vec![(index, 1.0)], constant: 0.0 }
    }

    pub fn term(mut self, index: usize, coeff: f64) -> Self {
        if coeff != 0.0 {
            self.terms.push((index, coeff));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, index: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((index, coeff));
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    /// Magnitude used to normalize residuals: `1 + max_k |c_k x_k| + |constant|`.
    fn scale(&self, x: &[f64]) -> f64 {
        let largest = self
            .terms
            .iter()
            .map(|&(i, c)| (c * x[i]).abs())
            .fold(0.0, f64::max);
        1.0 + largest + self.constant.abs()
    }

    fn max_index(&self) -> Option<usize> {
        self.terms.iter().map(|&(i, _)| i).max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeKind {
    Nonnegative,
    Box { lo: f64, hi: f64 },
    SecondOrder,
    RotatedSecondOrder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeConstraint {
    pub vars: Vec<usize>,
    pub kind: ConeKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProgramError {
    #[error("variable index {index} out of range (num_vars = {num_vars})")]
    IndexOutOfRange { index: usize, num_vars: usize },
    #[error("box cone with lo {lo} > hi {hi}")]
    InvertedBox { lo: f64, hi: f64 },
    #[error("{kind} cone needs at least {min} variables, got {got}")]
    ConeTooSmall { kind: &'static str, min: usize, got: usize },
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
}

/// `minimize objective . x + objective_offset` subject to every equality row
/// evaluating to zero and every cone membership.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub objective: Vec<(usize, f64)>,
    pub objective_offset: f64,
    pub eq_constraints: Vec<AffineExpr>,
    pub cone_constraints: Vec<ConeConstraint>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.num_vars - 1
    }

    pub fn add_vars(&mut self, n: usize) -> Vec<usize> {
        (0..n).map(|_| self.add_var()).collect()
    }

    pub fn add_objective(&mut self, var: usize, coeff: f64) {
        if coeff != 0.0 {
            self.objective.push((var, coeff));
        }
    }

    pub fn add_eq(&mut self, row: AffineExpr) {
        self.eq_constraints.push(row);
    }

    pub fn add_cone(&mut self, vars: Vec<usize>, kind: ConeKind) {
        self.cone_constraints.push(ConeConstraint { vars, kind });
    }

    /// `expr <= 0` through a fresh nonnegative slack.
    pub fn add_le(&mut self, mut expr: AffineExpr) {
        let slack = self.add_var();
        expr.push(slack, 1.0);
        self.add_eq(expr);
        self.add_cone(vec![slack], ConeKind::Nonnegative);
    }

    /// Fresh variable constrained to `[lo, hi]`.
    pub fn add_boxed_var(&mut self, lo: f64, hi: f64) -> usize {
        let v = self.add_var();
        self.add_cone(vec![v], ConeKind::Box { lo, hi });
        v
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let check = |index: usize| {
            if index >= self.num_vars {
                Err(ProgramError::IndexOutOfRange { index, num_vars: self.num_vars })
            } else {
                Ok(())
            }
        };
        for &(i, c) in &self.objective {
            check(i)?;
            if !c.is_finite() {
                return Err(ProgramError::NonFinite("objective"));
            }
        }
        if !self.objective_offset.is_finite() {
            return Err(ProgramError::NonFinite("objective"));
        }
        for row in &self.eq_constraints {
            if let Some(i) = row.max_index() {
                check(i)?;
            }
            if !row.constant.is_finite() || row.terms.iter().any(|t| !t.1.is_finite()) {
                return Err(ProgramError::NonFinite("equality row"));
            }
        }
        for cone in &self.cone_constraints {
            for &i in &cone.vars {
                check(i)?;
            }
            match cone.kind {
                ConeKind::Box { lo, hi } => {
                    if !(lo <= hi) {
                        return Err(ProgramError::InvertedBox { lo, hi });
                    }
                }
                ConeKind::SecondOrder if cone.vars.is_empty() => {
                    return Err(ProgramError::ConeTooSmall { kind: "second-order", min: 1, got: 0 });
                }
                ConeKind::RotatedSecondOrder if cone.vars.len() < 3 => {
                    return Err(ProgramError::ConeTooSmall {
                        kind: "rotated-second-order",
                        min: 3,
                        got: cone.vars.len(),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.objective_offset
    }

    /// Largest normalized equality violation and largest cone violation at `x`.
    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let eq = self
            .eq_constraints
            .iter()
            .map(|row| row.eval(x).abs() / row.scale(x))
            .fold(0.0, f64::max);
        let cone = self
            .cone_constraints
            .iter()
            .map(|c| cone_violation(c, x))
            .fold(0.0, f64::max);
        Residuals { equality: eq, cone }
    }

    /// One row or cone per line; for debugging only.
    pub fn dump(&self) -> String {
        self.to_string()
    }
}

fn cone_violation(cone: &ConeConstraint, x: &[f64]) -> f64 {
    let vals: Vec<f64> = cone.vars.iter().map(|&i| x[i]).collect();
    match cone.kind {
        ConeKind::Nonnegative => vals.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max),
        ConeKind::Box { lo, hi } => vals
            .iter()
            .map(|&v| ((lo - v).max(v - hi)).max(0.0) / (1.0 + v.abs()))
            .fold(0.0, f64::max),
        ConeKind::SecondOrder => {
            let t = vals[0];
            let norm = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - t).max(0.0) / (1.0 + t.abs())
        }
        ConeKind::RotatedSecondOrder => {
            let (u, w) = (vals[0], vals[1]);
            let t = (u + w) / std::f64::consts::SQRT_2;
            let d = (u - w) / std::f64::consts::SQRT_2;
            let norm = (d * d + vals[2..].iter().map(|v| v * v).sum::<f64>()).sqrt();
            (norm - t).max(0.0) / (1.0 + t.abs())
        }
    }
}

impl fmt::Display for ConicProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let affine = |terms: &[(usize, f64)], constant: f64| {
            let mut s = String::new();
            for &(i, c) in terms {
                let _ = write!(s, "{c:+} x{i} ");
            }
            let _ = write!(s, "{constant:+}");
            s
        };
        writeln!(f, "vars {}", self.num_vars)?;
        writeln!(f, "min {}", affine(&self.objective, self.objective_offset))?;
        for row in &self.eq_constraints {
            writeln!(f, "eq {} = 0", affine(&row.terms, row.constant))?;
        }
        for cone in &self.cone_constraints {
            let vars: Vec<String> = cone.vars.iter().map(|i| format!("x{i}")).collect();
            let kind = match cone.kind {
                ConeKind::Nonnegative => "nonneg".to_string(),
                ConeKind::Box { lo, hi } => format!("box[{lo}, {hi}]"),
                ConeKind::SecondOrder => "soc".to_string(),
                ConeKind::RotatedSecondOrder => "rsoc".to_string(),
            };
            writeln!(f, "cone {kind} ({})", vars.join(", "))?;
        }
        Ok(())
    }
}

const BACKEND_TOLERANCE_FACTORS: [f64; 4] = [1e-3, 1e-2, 1e-4, 1e-6];

/// A converged answer that misses the feasibility tolerance by at most this
/// factor on every attempt is accepted.
const NEAR_MISS_FACTOR: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub optimality: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feasibility: 1e-8, optimality: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    pub equality: f64,
    pub cone: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.equality.max(self.cone)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    pub objective_value: f64,
    /// Dual objective reported by the backend. A lower bound on the optimum
    /// up to the dual residual.
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: u32,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn failed(status: SolveStatus, n: usize) -> Self {
        Self {
            status,
            primal: vec![f64::NAN; n],
            objective_value: f64::NAN,
            dual_objective: f64::NAN,
            residuals: Residuals { equality: f64::INFINITY, cone: f64::INFINITY },
            iterations: 0,
        }
    }
}

/// Solves `program`. Invalid programs are reported as an error; every
/// solver outcome, including failure, is a [`ConicSolution`].
pub fn solve(program: &ConicProgram, tol: Tolerances) -> Result<ConicSolution, ProgramError> {
    program.validate()?;
    let n = program.num_vars;

    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut m = 0usize;

    // A x + s = b with s in the zero cone: A = row coefficients, b = -constant.
    for row in &program.eq_constraints {
        for &(j, c) in &row.terms {
            rows.push(m);
            cols.push(j);
            vals.push(c);
        }
        b.push(-row.constant);
        m += 1;
    }
    if m > 0 {
        cones.push(SupportedConeT::ZeroConeT(m));
    }

    let mut nonneg_rows = 0usize;
    for cone in &program.cone_constraints {
        match cone.kind {
            ConeKind::Nonnegative => {
                for &j in &cone.vars {
                    // s = x
                    rows.push(m);
                    cols.push(j);
                    vals.push(-1.0);
                    b.push(0.0);
                    m += 1;
                    nonneg_rows += 1;
                }
            }
            ConeKind::Box { lo, hi } => {
                for &j in &cone.vars {
                    // s1 = x - lo, s2 = hi - x
                    rows.push(m);
                    cols.push(j);
                    vals.push(-1.0);
                    b.push(-lo);
                    rows.push(m + 1);
                    cols.push(j);
                    vals.push(1.0);
                    b.push(hi);
                    m += 2;
                    nonneg_rows += 2;
                }
            }
            _ => {}
        }
    }
    if nonneg_rows > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg_rows));
    }

    let half_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    for cone in &program.cone_constraints {
        match cone.kind {
            ConeKind::SecondOrder => {
                for &j in &cone.vars {
                    rows.push(m);
                    cols.push(j);
                    vals.push(-1.0);
                    b.push(0.0);
                    m += 1;
                }
                cones.push(SupportedConeT::SecondOrderConeT(cone.vars.len()));
            }
            ConeKind::RotatedSecondOrder => {
                let (u, w) = (cone.vars[0], cone.vars[1]);
                // s0 = (u + w)/sqrt2, s1 = (u - w)/sqrt2
                rows.extend([m, m, m + 1, m + 1]);
                cols.extend([u, w, u, w]);
                vals.extend([-half_sqrt2, -half_sqrt2, -half_sqrt2, half_sqrt2]);
                b.extend([0.0, 0.0]);
                m += 2;
                for &j in &cone.vars[2..] {
                    rows.push(m);
                    cols.push(j);
                    vals.push(-1.0);
                    b.push(0.0);
                    m += 1;
                }
                cones.push(SupportedConeT::SecondOrderConeT(cone.vars.len()));
            }
            _ => {}
        }
    }

    let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(j, c) in &program.objective {
        q[j] += c;
    }

    // The backend's stopping tests are scaled differently from `residuals`,
    // so it runs well below the tolerance checked here. Near 1e-10 the
    // optimal value itself can drift by a few parts in 1e9, hence the first
    // factor. The looser retry covers programs that cannot reach it.
    let mut best: Option<(ConicSolution, bool)> = None;
    let careful = std::iter::once((BACKEND_TOLERANCE_FACTORS[0], true));
    for (factor, careful) in BACKEND_TOLERANCE_FACTORS.iter().map(|&f| (f, false)).chain(careful) {
        let (attempt, converged) = solve_once(program, &p, &q, &a, &b, &cones, tol, factor, careful);
        if attempt.status != SolveStatus::NumericalFailure {
            return Ok(attempt);
        }
        if best.as_ref().is_none_or(|(b, _)| attempt.residuals.max() < b.residuals.max()) {
            best = Some((attempt, converged));
        }
    }
    let (mut best, converged) = best.expect("at least one attempt");
    if converged && best.residuals.max() <= NEAR_MISS_FACTOR * tol.feasibility {
        log::debug!("accepting near-feasible answer with residuals {:?}", best.residuals);
        best.status = SolveStatus::Optimal;
    }
    Ok(best)
}

#[allow(clippy::too_many_arguments)]
fn solve_once(
    program: &ConicProgram,
    p: &CscMatrix<f64>,
    q: &[f64],
    a: &CscMatrix<f64>,
    b: &[f64],
    cones: &[SupportedConeT<f64>],
    tol: Tolerances,
    factor: f64,
    careful: bool,
) -> (ConicSolution, bool) {
    let n = program.num_vars;
    let mut builder = DefaultSettingsBuilder::default();
    if careful {
        builder
            .max_step_fraction(0.9)
            .static_regularization_constant(1e-11)
            .iterative_refinement_reltol(1e-16)
            .iterative_refinement_abstol(1e-16)
            .iterative_refinement_max_iter(50);
    }
    let settings = builder
        .verbose(false)
        .tol_feas(tol.feasibility * factor)
        .tol_gap_abs(tol.optimality * factor)
        .tol_gap_rel(tol.optimality * factor)
        .tol_infeas_abs(tol.feasibility)
        .tol_infeas_rel(tol.feasibility)
        .max_iter(400)
        .build()
        .expect("static solver settings are valid");

    let mut solver = match DefaultSolver::new(p, q, a, b, cones, settings) {
        Ok(s) => s,
        Err(_) => return (ConicSolution::failed(SolveStatus::NumericalFailure, n), false),
    };
    solver.solve();
    let sol = &solver.solution;

    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return (ConicSolution { iterations: sol.iterations, ..ConicSolution::failed(SolveStatus::Infeasible, n) }, false)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return (ConicSolution { iterations: sol.iterations, ..ConicSolution::failed(SolveStatus::Unbounded, n) }, false)
        }
        _ => SolveStatus::NumericalFailure,
    };

    let primal = sol.x.clone();
    let residuals = program.residuals(&primal);
    let objective_value = program.objective_at(&primal);
    log::debug!("clarabel {:?} iters {} factor {factor:e} residuals {:?}", sol.status, sol.iterations, residuals);
    let converged = status == SolveStatus::Optimal;
    let status = if converged && residuals.max() > tol.feasibility {
        SolveStatus::NumericalFailure
    } else {
        status
    };
    (
        ConicSolution {
            status,
            primal,
            objective_value,
            dual_objective: sol.obj_val_dual + program.objective_offset,
            residuals,
            iterations: sol.iterations,
        },
        converged,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn box_lower_bound() {
        let mut p = ConicProgram::new();
        let x = p.add_boxed_var(0.0, 1.0);
        p.add_objective(x, 1.0);
        let s = solve(&p, tol()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!(s.objective_value.abs() < 1e-7);
        assert!(s.primal[x].abs() < 1e-7);
    }

    #[test]
    fn square_epigraph() {
        // t >= x^2 via 2 * t * (1/2) >= x^2, x = 3
        let mut p = ConicProgram::new();
        let x = p.add_var();
        let t = p.add_var();
        let half = p.add_var();
        p.add_eq(AffineExpr::var(x).plus(-3.0));
        p.add_eq(AffineExpr::var(half).plus(-0.5));
        p.add_cone(vec![t, half, x], ConeKind::RotatedSecondOrder);
        p.add_objective(t, 1.0);
        let s = solve(&p, tol()).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.primal[t] - 9.0).abs() < 1e-6, "t = {}", s.primal[t]);
        assert!((s.objective_value - 9.0).abs() < 1e-6);
    }

    #[test]
    fn contradictory_box_is_infeasible() {
        let mut p = ConicProgram::new();
        let x = p.add_boxed_var(0.0, 1.0);
        p.add_eq(AffineExpr::var(x).plus(-2.0));
        p.add_objective(x, 1.0);
        let s = solve(&p, tol()).unwrap();
        assert_eq!(s.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_cone(vec![x], ConeKind::Nonnegative);
        p.add_objective(x, -1.0);
        let s = solve(&p, tol()).unwrap();
        assert_eq!(s.status, SolveStatus::Unbounded);
    }

    #[test]
    fn second_order_cone_projection() {
        // minimize t s.t. ||(x - 3, y - 4)|| <= t  ->  t = 0 at (3, 4); then
        // pin x = 0: t = ||(-3, -4)|| = 5.
        let mut p = ConicProgram::new();
        let (t, x, y, dx, dy) = (p.add_var(), p.add_var(), p.add_var(), p.add_var(), p.add_var());
        p.add_eq(AffineExpr::var(dx).term(x, -1.0).plus(3.0));
        p.add_eq(AffineExpr::var(dy).term(y, -1.0).plus(4.0));
        p.add_eq(AffineExpr::var(x));
        p.add_eq(AffineExpr::var(y));
        p.add_cone(vec![t, dx, dy], ConeKind::SecondOrder);
        p.add_objective(t, 1.0);
        let s = solve(&p, tol()).unwrap();
        assert!((s.objective_value - 5.0).abs() < 1e-6);
    }

    #[test]
    fn le_rows_use_slacks() {
        // minimize -x s.t. x - 2 <= 0
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_le(AffineExpr::var(x).plus(-2.0));
        p.add_objective(x, -1.0);
        let s = solve(&p, tol()).unwrap();
        assert!((s.primal[x] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn validation_rejects_bad_programs() {
        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_cone(vec![x], ConeKind::Box { lo: 1.0, hi: 0.0 });
        assert!(matches!(p.validate(), Err(ProgramError::InvertedBox { .. })));

        let mut p = ConicProgram::new();
        let x = p.add_var();
        p.add_eq(AffineExpr::var(x + 4));
        assert!(matches!(p.validate(), Err(ProgramError::IndexOutOfRange { index: 4, .. })));

        let mut p = ConicProgram::new();
        let v = p.add_vars(2);
        p.add_cone(v, ConeKind::RotatedSecondOrder);
        assert!(matches!(p.validate(), Err(ProgramError::ConeTooSmall { .. })));
        assert!(solve(&p, tol()).is_err());
    }

    #[test]
    fn dump_lists_rows_and_cones() {
        let mut p = ConicProgram::new();
        let x = p.add_boxed_var(0.0, 1.0);
        p.add_eq(AffineExpr::var(x).plus(-0.5));
        let text = p.dump();
        assert_eq!(text.lines().count(), 4);
        assert!(text.contains("cone box[0, 1] (x0)"));
    }
}
