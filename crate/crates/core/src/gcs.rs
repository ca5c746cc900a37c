//! Graphs of convex sets and the shortest-path problem over them.
//!
//! Vertices carry boxes (optionally pinned to a point), edges carry affine
//! couplings between their endpoint states and a convex quadratic cost.
//! [`formulate_relaxation`] builds the perspective relaxation of the
//! mixed-integer shortest-path program: binary edge indicators become flows
//! in `[0, 1]`, each edge keeps flow-scaled copies of its endpoint states,
//! and every set, coupling and cost is replaced by its perspective. With
//! integral flows the relaxation is exactly the mixed-integer program.
//!
//! [`round_solution`] turns a relaxed solution into a path by greedy flow
//! following and re-optimizes the continuous states along it. When the flows
//! are integral up to the threshold the rounded path is globally optimal.

use std::collections::VecDeque;

use log::debug;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::conic::{
    self, AffineExpr, ConeKind, ConicProgram, ConicSolution, ProgramError, SolveStatus, Tolerances,
};

pub type VertexId = usize;

/// Flows below this are treated as "no flow" while following the relaxation.
pub const MIN_FOLLOW_FLOW: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GcsError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("target is not reachable from source")]
    NoPath,
    #[error("shortest-path problem is infeasible")]
    Infeasible,
    #[error("conic solver failed ({0:?})")]
    Solver(SolveStatus),
    #[error("rounding reached vertex {vertex} with no outgoing flow")]
    RoundingFailure { vertex: VertexId },
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// A box `[lo, hi]` in `R^n`, optionally intersected with a single pinned point.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
    pin: Option<Vec<f64>>,
}

impl VertexSet {
    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self, GcsError> {
        if let Some(&(lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo <= hi)) {
            return Err(GcsError::InvalidGraph(format!("vertex interval [{lo}, {hi}] is inverted")));
        }
        Ok(Self {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            pin: None,
        })
    }

    pub fn point(x: &[f64]) -> Self {
        Self { lo: x.to_vec(), hi: x.to_vec(), pin: None }
    }

    /// The zero-dimensional set.
    pub fn empty_dim() -> Self {
        Self { lo: Vec::new(), hi: Vec::new(), pin: None }
    }

    /// Restrict the set to the single point `x`. The box is kept, so pinning
    /// outside it yields an empty set.
    pub fn pinned(mut self, x: &[f64]) -> Self {
        assert_eq!(x.len(), self.dim(), "pin dimension mismatch");
        self.pin = Some(x.to_vec());
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn pin(&self) -> Option<&[f64]> {
        self.pin.as_deref()
    }

    pub fn is_singleton(&self) -> bool {
        self.pin.is_some() || self.lo.iter().zip(&self.hi).all(|(l, h)| l == h)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| {
                v >= l - tol * (1.0 + l.abs()) && v <= h + tol * (1.0 + h.abs())
            })
            && self
                .pin
                .as_ref()
                .is_none_or(|p| p.iter().zip(x).all(|(a, b)| (a - b).abs() <= tol * (1.0 + a.abs())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    /// `tail . x_U + head . x_W + constant = 0`
    Eq,
    /// `tail . x_U + head . x_W + constant <= 0`
    Le,
}

/// Affine row on the states of an edge's endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub tail: Vec<f64>,
    pub head: Vec<f64>,
    pub constant: f64,
    pub kind: CouplingKind,
}

/// `weight * (tail . x_U + head . x_W + constant)^2`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTerm {
    pub weight: f64,
    pub tail: Vec<f64>,
    pub head: Vec<f64>,
    pub constant: f64,
}

impl QuadraticTerm {
    fn eval(&self, xu: &[f64], xw: &[f64]) -> f64 {
        let r = dot(&self.tail, xu) + dot(&self.head, xw) + self.constant;
        self.weight * r * r
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeSpec {
    pub couplings: Vec<Coupling>,
    pub quadratic: Vec<QuadraticTerm>,
    pub constant_cost: f64,
}

impl EdgeSpec {
    pub fn cost(&self, xu: &[f64], xw: &[f64]) -> f64 {
        self.constant_cost + self.quadratic.iter().map(|q| q.eval(xu, xw)).sum::<f64>()
    }
}

/// Vertex cost `constant + sum weight * (coeffs . x + c)^2`, stored as
/// quadratic terms with an empty head.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VertexCost {
    pub quadratic: Vec<QuadraticTerm>,
    pub constant: f64,
}

impl VertexCost {
    pub fn cost(&self, x: &[f64]) -> f64 {
        self.constant + self.quadratic.iter().map(|q| q.eval(x, &[])).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub set: VertexSet,
    pub cost: Option<VertexCost>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub tail: VertexId,
    pub head: VertexId,
    pub spec: EdgeSpec,
}

/// A directed acyclic graph of convex sets with a designated source and target.
#[derive(Debug, Clone)]
pub struct GcsGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    source: VertexId,
    target: VertexId,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

impl GcsGraph {
    pub fn new(
        vertices: Vec<Vertex>,
        edges: Vec<Edge>,
        source: VertexId,
        target: VertexId,
    ) -> Result<Self, GcsError> {
        let n = vertices.len();
        let invalid = |m: String| Err(GcsError::InvalidGraph(m));
        if source >= n || target >= n {
            return invalid(format!("source {source} or target {target} out of range"));
        }
        if source == target {
            return invalid("source and target coincide".into());
        }
        for (v, vert) in vertices.iter().enumerate() {
            if let Some(c) = &vert.cost {
                if c.constant < 0.0 || c.quadratic.iter().any(|q| !(q.weight >= 0.0)) {
                    return invalid(format!("vertex {v} has a negative cost term"));
                }
                if c.quadratic.iter().any(|q| q.tail.len() != vert.set.dim() || !q.head.is_empty()) {
                    return invalid(format!("vertex {v} cost dimension mismatch"));
                }
            }
        }
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            if e.tail >= n || e.head >= n {
                return invalid(format!("edge {k} references a missing vertex"));
            }
            let (du, dw) = (vertices[e.tail].set.dim(), vertices[e.head].set.dim());
            let dims_ok = e.spec.couplings.iter().all(|c| c.tail.len() == du && c.head.len() == dw)
                && e.spec.quadratic.iter().all(|q| q.tail.len() == du && q.head.len() == dw);
            if !dims_ok {
                return invalid(format!("edge {k} coupling/cost dimension mismatch"));
            }
            if e.spec.constant_cost < 0.0 || e.spec.quadratic.iter().any(|q| !(q.weight >= 0.0)) {
                return invalid(format!("edge {k} has a negative cost term"));
            }
            out_edges[e.tail].push(k);
            in_edges[e.head].push(k);
        }
        let graph = Self { vertices, edges, source, target, out_edges, in_edges };
        if graph.topological_order().is_none() {
            return invalid("graph contains a cycle".into());
        }
        Ok(graph)
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn source(&self) -> VertexId {
        self.source
    }

    pub fn target(&self) -> VertexId {
        self.target
    }

    pub fn out_edges(&self, v: VertexId) -> &[usize] {
        &self.out_edges[v]
    }

    pub fn in_edges(&self, v: VertexId) -> &[usize] {
        &self.in_edges[v]
    }

    pub fn find_edge(&self, tail: VertexId, head: VertexId) -> Option<usize> {
        self.out_edges[tail].iter().copied().find(|&k| self.edges[k].head == head)
    }

    fn topological_order(&self) -> Option<Vec<VertexId>> {
        let n = self.vertices.len();
        let mut indeg: Vec<usize> = (0..n).map(|v| self.in_edges[v].len()).collect();
        let mut queue: VecDeque<VertexId> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &k in &self.out_edges[v] {
                let w = self.edges[k].head;
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    /// The same vertices with the edges flagged in `removed` dropped. Edge
    /// `k` of the result is edge `kept[k]` of `self`.
    pub fn without_edges(&self, removed: &[bool]) -> (GcsGraph, Vec<usize>) {
        let kept: Vec<usize> = (0..self.edges.len()).filter(|&k| !removed[k]).collect();
        let edges: Vec<Edge> = kept.iter().map(|&k| self.edges[k].clone()).collect();
        let mut out_edges = vec![Vec::new(); self.vertices.len()];
        let mut in_edges = vec![Vec::new(); self.vertices.len()];
        for (k, e) in edges.iter().enumerate() {
            out_edges[e.tail].push(k);
            in_edges[e.head].push(k);
        }
        let graph = GcsGraph {
            vertices: self.vertices.clone(),
            edges,
            source: self.source,
            target: self.target,
            out_edges,
            in_edges,
        };
        (graph, kept)
    }

    /// Edges lying on at least one source-to-target path.
    pub fn useful_edges(&self) -> Vec<bool> {
        let fwd = self.reach(self.source, true);
        let bwd = self.reach(self.target, false);
        self.edges.iter().map(|e| fwd[e.tail] && bwd[e.head]).collect()
    }

    fn reach(&self, start: VertexId, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.vertices.len()];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            let adj = if forward { &self.out_edges[v] } else { &self.in_edges[v] };
            for &k in adj {
                let w = if forward { self.edges[k].head } else { self.edges[k].tail };
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    }

    /// Number of source-to-target paths, saturating at `u64::MAX`.
    pub fn count_paths(&self) -> u64 {
        let order = self.topological_order().expect("acyclic by construction");
        let mut count = vec![0u64; self.vertices.len()];
        count[self.target] = 1;
        for &v in order.iter().rev() {
            if v == self.target {
                continue;
            }
            count[v] = self.out_edges[v]
                .iter()
                .fold(0u64, |acc, &k| acc.saturating_add(count[self.edges[k].head]));
        }
        count[self.source]
    }

    /// All source-to-target paths, or `None` when there are more than `limit`.
    pub fn enumerate_paths(&self, limit: usize) -> Option<Vec<Vec<VertexId>>> {
        if self.count_paths() > limit as u64 {
            return None;
        }
        let mut paths = Vec::new();
        let mut stack = vec![vec![self.source]];
        while let Some(path) = stack.pop() {
            let v = *path.last().unwrap();
            if v == self.target {
                paths.push(path);
                continue;
            }
            for &k in self.out_edges[v].iter().rev() {
                let mut next = path.clone();
                next.push(self.edges[k].head);
                stack.push(next);
            }
        }
        Some(paths)
    }

    /// Total cost of `states` along `path` (edge costs plus vertex costs).
    pub fn path_cost(&self, path: &[VertexId], states: &[Vec<f64>]) -> f64 {
        let vertex: f64 = path
            .iter()
            .zip(states)
            .filter_map(|(&v, x)| self.vertices[v].cost.as_ref().map(|c| c.cost(x)))
            .sum();
        let edge: f64 = path
            .windows(2)
            .zip(states.windows(2))
            .map(|(p, x)| {
                let k = self.find_edge(p[0], p[1]).expect("path edge exists");
                self.edges[k].spec.cost(&x[0], &x[1])
            })
            .sum();
        vertex + edge
    }

    /// Listing of vertices and edges, one per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("source {} target {}\n", self.source, self.target));
        for (id, v) in self.vertices.iter().enumerate() {
            let bounds: Vec<String> =
                v.set.lo.iter().zip(&v.set.hi).map(|(l, h)| format!("[{l}, {h}]")).collect();
            let pin = v.set.pin.as_ref().map(|p| format!(" pin {p:?}")).unwrap_or_default();
            out.push_str(&format!("vertex {id} {}{pin}\n", bounds.join(" x ")));
        }
        for (k, e) in self.edges.iter().enumerate() {
            out.push_str(&format!(
                "edge {k} {} -> {} couplings {} quad {} const {}\n",
                e.tail,
                e.head,
                e.spec.couplings.len(),
                e.spec.quadratic.len(),
                e.spec.constant_cost
            ));
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone)]
struct EdgeVars {
    z: usize,
    tail: Vec<usize>,
    head: Vec<usize>,
}

/// The relaxed conic program plus the variable layout needed to read it back.
#[derive(Debug, Clone)]
pub struct Relaxation {
    pub program: ConicProgram,
    edges: Vec<Option<EdgeVars>>,
    vertex_y: Vec<Option<usize>>,
}

/// Largest absolute violations of flow conservation and of the `y_V`
/// definition in a relaxed solution.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FlowResiduals {
    pub conservation: f64,
    pub y_definition: f64,
}

impl Relaxation {
    /// Flow on every graph edge (zero for edges pruned from the program).
    pub fn edge_flows(&self, solution: &ConicSolution) -> Vec<f64> {
        self.edges
            .iter()
            .map(|e| e.as_ref().map_or(0.0, |ev| solution.primal[ev.z]))
            .collect()
    }

    pub fn vertex_y(&self, solution: &ConicSolution) -> Vec<f64> {
        self.vertex_y.iter().map(|y| y.map_or(0.0, |i| solution.primal[i])).collect()
    }

    pub fn flow_residuals(&self, graph: &GcsGraph, solution: &ConicSolution) -> FlowResiduals {
        let z = self.edge_flows(solution);
        let y = self.vertex_y(solution);
        let mut res = FlowResiduals::default();
        for v in 0..graph.vertices.len() {
            let inflow: f64 = graph.in_edges[v].iter().map(|&k| z[k]).sum();
            let outflow: f64 = graph.out_edges[v].iter().map(|&k| z[k]).sum();
            let src = if v == graph.source { 1.0 } else { 0.0 };
            let tgt = if v == graph.target { 1.0 } else { 0.0 };
            res.conservation = res.conservation.max((inflow + src - outflow - tgt).abs());
            if self.vertex_y[v].is_some() {
                res.y_definition = res.y_definition.max((y[v] - src - inflow).abs());
            }
        }
        res
    }
}

/// Perspective relaxation of the shortest-path program on `graph`.
pub fn formulate_relaxation(graph: &GcsGraph) -> Result<Relaxation, GcsError> {
    let useful = graph.useful_edges();
    if !useful.iter().any(|&u| u) {
        return Err(GcsError::NoPath);
    }
    let nv = graph.vertices.len();
    let mut active_vertex = vec![false; nv];
    active_vertex[graph.source] = true;
    active_vertex[graph.target] = true;
    for (e, &u) in graph.edges.iter().zip(&useful) {
        if u {
            active_vertex[e.tail] = true;
            active_vertex[e.head] = true;
        }
    }

    let mut p = ConicProgram::new();
    let mut edges: Vec<Option<EdgeVars>> = vec![None; graph.edges.len()];

    for (k, e) in graph.edges.iter().enumerate() {
        if !useful[k] {
            continue;
        }
        let z = p.add_boxed_var(0.0, 1.0);
        let tail = p.add_vars(graph.vertices[e.tail].set.dim());
        let head = p.add_vars(graph.vertices[e.head].set.dim());
        perspective_set(&mut p, &graph.vertices[e.tail].set, &tail, z);
        perspective_set(&mut p, &graph.vertices[e.head].set, &head, z);

        for c in &e.spec.couplings {
            let mut row = AffineExpr::new().term(z, c.constant);
            for (&var, &coeff) in tail.iter().zip(&c.tail).chain(head.iter().zip(&c.head)) {
                row.push(var, coeff);
            }
            match c.kind {
                CouplingKind::Eq => p.add_eq(row),
                CouplingKind::Le => p.add_le(row),
            }
        }

        p.add_objective(z, e.spec.constant_cost);
        let terms: Vec<(f64, AffineExpr)> = e
            .spec
            .quadratic
            .iter()
            .map(|q| {
                let mut expr = AffineExpr::new().term(z, q.constant);
                for (&var, &coeff) in tail.iter().zip(&q.tail).chain(head.iter().zip(&q.head)) {
                    expr.push(var, coeff);
                }
                (q.weight, expr)
            })
            .collect();
        perspective_epigraph(&mut p, z, terms);

        edges[k] = Some(EdgeVars { z, tail, head });
    }

    let mut vertex_y = vec![None; nv];
    for v in 0..nv {
        if !active_vertex[v] {
            continue;
        }
        let is_src = v == graph.source;
        let is_tgt = v == graph.target;
        let ins: Vec<&EdgeVars> = graph.in_edges[v].iter().filter_map(|&k| edges[k].as_ref()).collect();
        let outs: Vec<&EdgeVars> = graph.out_edges[v].iter().filter_map(|&k| edges[k].as_ref()).collect();

        // sum_in z + [v = source] = sum_out z + [v = target]
        let mut flow = AffineExpr::constant(f64::from(is_src as u8) - f64::from(is_tgt as u8));
        for e in &ins {
            flow.push(e.z, 1.0);
        }
        for e in &outs {
            flow.push(e.z, -1.0);
        }
        p.add_eq(flow);

        // y_V = [v = source] + sum_in z
        let y = p.add_boxed_var(0.0, 1.0);
        let mut ydef = AffineExpr::var(y).plus(-f64::from(is_src as u8));
        for e in &ins {
            ydef.push(e.z, -1.0);
        }
        p.add_eq(ydef);
        vertex_y[v] = Some(y);

        // Every edge through v agrees on v's (aggregated) state.
        let dim = graph.vertices[v].set.dim();
        if !is_src && !is_tgt {
            for d in 0..dim {
                let mut row = AffineExpr::new();
                for e in &ins {
                    row.push(e.head[d], 1.0);
                }
                for e in &outs {
                    row.push(e.tail[d], -1.0);
                }
                p.add_eq(row);
            }
        }

        if let Some(cost) = &graph.vertices[v].cost {
            // aggregated state x_hat = y * x_V
            let xhat = p.add_vars(dim);
            for d in 0..dim {
                let mut row = AffineExpr::var(xhat[d]);
                if is_src {
                    for e in &outs {
                        row.push(e.tail[d], -1.0);
                    }
                } else {
                    for e in &ins {
                        row.push(e.head[d], -1.0);
                    }
                }
                p.add_eq(row);
            }
            p.add_objective(y, cost.constant);
            let terms: Vec<(f64, AffineExpr)> = cost
                .quadratic
                .iter()
                .map(|q| {
                    let mut expr = AffineExpr::new().term(y, q.constant);
                    for (&var, &coeff) in xhat.iter().zip(&q.tail) {
                        expr.push(var, coeff);
                    }
                    (q.weight, expr)
                })
                .collect();
            perspective_epigraph(&mut p, y, terms);
        }
    }

    Ok(Relaxation { program: p, edges, vertex_y })
}

/// `lo * scale <= x <= hi * scale` per coordinate, `x = pin * scale` if pinned.
fn perspective_set(p: &mut ConicProgram, set: &VertexSet, x: &[usize], scale: usize) {
    for (d, &xi) in x.iter().enumerate() {
        let (lo, hi) = (set.lo[d], set.hi[d]);
        if lo == hi {
            p.add_eq(AffineExpr::var(xi).term(scale, -lo));
            continue;
        }
        if lo.is_finite() {
            p.add_le(AffineExpr::new().term(scale, lo).term(xi, -1.0));
        }
        if hi.is_finite() {
            p.add_le(AffineExpr::var(xi).term(scale, -hi));
        }
    }
    if let Some(pin) = &set.pin {
        for (&xi, &val) in x.iter().zip(pin) {
            p.add_eq(AffineExpr::var(xi).term(scale, -val));
        }
    }
}

/// Adds `epi` to the objective with `2 * epi * scale >= sum_k r_k^2`,
/// `r_k = sqrt(2 w_k) * expr_k`, i.e. `epi >= sum_k w_k expr_k^2 / scale`.
fn perspective_epigraph(p: &mut ConicProgram, scale: usize, terms: Vec<(f64, AffineExpr)>) {
    let terms: Vec<_> = terms.into_iter().filter(|(w, _)| *w > 0.0).collect();
    if terms.is_empty() {
        return;
    }
    let epi = p.add_var();
    let mut cone = vec![epi, scale];
    for (w, expr) in terms {
        let r = p.add_var();
        let factor = (2.0 * w).sqrt();
        let mut row = AffineExpr::var(r).plus(-factor * expr.constant);
        for (i, c) in expr.terms {
            row.push(i, -factor * c);
        }
        p.add_eq(row);
        cone.push(r);
    }
    p.add_cone(cone, ConeKind::RotatedSecondOrder);
    p.add_objective(epi, 1.0);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SppConfig {
    pub tolerances: Tolerances,
    /// Largest `min(z, 1 - z)` over edges for which the relaxation counts as tight.
    pub integrality_threshold: f64,
    /// When the relaxation is loose (or rounding fails) and the graph has at
    /// most this many paths, every path is solved and the best one returned.
    pub enumeration_limit: usize,
    /// When the relaxation is loose and the graph is too large to enumerate,
    /// this many extra paths are drawn by flow-weighted random walks and the
    /// cheapest of them and the greedy path is returned.
    pub rounding_samples: usize,
    pub rounding_seed: u64,
    /// Relaxations solved by the branch-and-bound search that runs when the
    /// relaxation is loose and the graph is too large to enumerate. Zero
    /// keeps the rounded path.
    pub branch_node_limit: usize,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            integrality_threshold: 1e-6,
            enumeration_limit: 200,
            rounding_samples: 32,
            rounding_seed: 0,
            branch_node_limit: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SppSolution {
    pub path: Vec<VertexId>,
    /// One state per vertex of `path`.
    pub vertex_states: Vec<Vec<f64>>,
    /// Optimal value of the relaxation, a lower bound on the mixed-integer optimum.
    pub relaxed_value: f64,
    /// Cost of `path` with `vertex_states`.
    pub rounded_value: f64,
    pub integrality_gap: f64,
    pub max_fractionality: f64,
    pub tight: bool,
    /// Relaxed flow on every graph edge.
    pub edge_flows: Vec<f64>,
    pub flow_residuals: FlowResiduals,
    /// True when the path came from exhaustive enumeration rather than rounding.
    pub enumerated: bool,
}

/// Continuous optimum along a fixed path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution {
    pub states: Vec<Vec<f64>>,
    pub value: f64,
}

/// Greedy flow following from the source, then a re-solve along the path.
pub fn round_solution(
    graph: &GcsGraph,
    relaxation: &Relaxation,
    relaxed: &ConicSolution,
    config: &SppConfig,
) -> Result<SppSolution, GcsError> {
    if !relaxed.is_optimal() {
        return Err(GcsError::Solver(relaxed.status));
    }
    let flows = relaxation.edge_flows(relaxed);
    let useful = graph.useful_edges();
    let max_fractionality = flows
        .iter()
        .zip(&useful)
        .filter(|(_, &u)| u)
        .map(|(&z, _)| z.min(1.0 - z).max(0.0))
        .fold(0.0, f64::max);

    let mut path = vec![graph.source];
    let mut v = graph.source;
    while v != graph.target {
        let best = graph.out_edges[v]
            .iter()
            .map(|&k| (flows[k], graph.edges[k].head))
            .filter(|&(z, _)| z >= MIN_FOLLOW_FLOW)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        match best {
            Some((_, w)) => {
                path.push(w);
                v = w;
            }
            None => return Err(GcsError::RoundingFailure { vertex: v }),
        }
    }

    let fixed = solve_fixed_path(graph, &path, config.tolerances)?;
    let relaxed_value = relaxed.objective_value.min(relaxed.dual_objective);
    Ok(SppSolution {
        path,
        vertex_states: fixed.states,
        relaxed_value,
        rounded_value: fixed.value,
        integrality_gap: fixed.value - relaxed_value,
        max_fractionality,
        tight: max_fractionality <= config.integrality_threshold,
        edge_flows: flows,
        flow_residuals: relaxation.flow_residuals(graph, relaxed),
        enumerated: false,
    })
}

/// Relaxation, solve, rounding; falls back to path enumeration on small
/// graphs when the relaxation is loose.
pub fn solve_spp(graph: &GcsGraph, config: &SppConfig) -> Result<SppSolution, GcsError> {
    let relaxation = formulate_relaxation(graph)?;
    let relaxed = conic::solve(&relaxation.program, config.tolerances)?;
    match relaxed.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(GcsError::Infeasible),
        s => return Err(GcsError::Solver(s)),
    }
    let rounded = round_solution(graph, &relaxation, &relaxed, config);
    let needs_fallback = match &rounded {
        Ok(sol) => !sol.tight,
        Err(GcsError::RoundingFailure { .. }) | Err(GcsError::Infeasible) => true,
        Err(_) => false,
    };
    if !needs_fallback {
        return rounded;
    }
    let flows = relaxation.edge_flows(&relaxed);
    let relaxed_value = relaxed.objective_value.min(relaxed.dual_objective);
    let incumbent = rounded.as_ref().ok().map(|sol| {
        (sol.path.clone(), PathSolution { states: sol.vertex_states.clone(), value: sol.rounded_value })
    });
    let (best, enumerated) = match graph.enumerate_paths(config.enumeration_limit) {
        Some(paths) => {
            debug!("relaxation not tight; enumerating {} paths", paths.len());
            (Some(best_enumerated_path(graph, &paths, config.tolerances)?), true)
        }
        None => (branch_and_bound(graph, &flows, relaxed_value, incumbent, config)?, false),
    };
    let Some(best) = best else {
        return rounded;
    };
    let max_fractionality = match &rounded {
        Ok(sol) => sol.max_fractionality,
        Err(_) => flows.iter().map(|&z| z.min(1.0 - z).max(0.0)).fold(0.0, f64::max),
    };
    match rounded {
        Ok(sol) if sol.rounded_value <= best.1.value => Ok(sol),
        _ => Ok(SppSolution {
            path: best.0,
            vertex_states: best.1.states,
            relaxed_value,
            rounded_value: best.1.value,
            integrality_gap: best.1.value - relaxed_value,
            max_fractionality,
            tight: max_fractionality <= config.integrality_threshold,
            edge_flows: flows,
            flow_residuals: relaxation.flow_residuals(graph, &relaxed),
            enumerated,
        }),
    }
}

struct BranchNode {
    removed: Vec<bool>,
    bound: f64,
}

/// Best-first branch and bound on edge flows. Each node solves the
/// relaxation of the graph with some edges removed; a node is split on its
/// most fractional edge into "edge removed" and "every edge that shares no
/// path with it removed". Candidate paths at every node come from greedy and
/// sampled flow following. Returns the best path found, which is the
/// mixed-integer optimum whenever the search finishes within the node limit.
fn branch_and_bound(
    graph: &GcsGraph,
    root_flows: &[f64],
    root_bound: f64,
    mut incumbent: Option<(Vec<VertexId>, PathSolution)>,
    config: &SppConfig,
) -> Result<Option<(Vec<VertexId>, PathSolution)>, GcsError> {
    let ne = graph.edges.len();
    let offer = |incumbent: &mut Option<(Vec<VertexId>, PathSolution)>, paths: Vec<Vec<VertexId>>| {
        for path in paths {
            match solve_fixed_path(graph, &path, config.tolerances) {
                Ok(sol) if incumbent.as_ref().is_none_or(|inc| sol.value < inc.1.value) => {
                    *incumbent = Some((path, sol));
                }
                Ok(_) | Err(GcsError::Infeasible) => {}
                Err(e) => debug!("candidate path skipped: {e}"),
            }
        }
    };
    let candidates = |g: &GcsGraph, flows: &[f64], samples: usize| {
        let mut paths = sample_flow_paths(g, flows, samples, config.rounding_seed);
        if let Some(p) = greedy_path(g, flows) {
            if !paths.contains(&p) {
                paths.push(p);
            }
        }
        paths
    };
    let prunes = |bound: f64, incumbent: &Option<(Vec<VertexId>, PathSolution)>| {
        incumbent.as_ref().is_some_and(|inc| bound >= inc.1.value - BRANCH_PRUNE_TOL * (1.0 + inc.1.value.abs()))
    };

    offer(&mut incumbent, candidates(graph, root_flows, config.rounding_samples));
    let mut open: Vec<BranchNode> = Vec::new();
    if let Some(children) = branch(&vec![false; ne], graph, &(0..ne).collect::<Vec<_>>(), root_flows) {
        open.extend(children.into_iter().map(|removed| BranchNode { removed, bound: root_bound }));
    }
    let mut solved = 0;
    while solved < config.branch_node_limit {
        let Some(pick) = (0..open.len()).min_by(|&a, &b| open[a].bound.total_cmp(&open[b].bound)) else {
            break;
        };
        let node = open.swap_remove(pick);
        if prunes(node.bound, &incumbent) {
            continue;
        }
        let (sub, kept) = graph.without_edges(&node.removed);
        let relaxation = match formulate_relaxation(&sub) {
            Ok(r) => r,
            Err(GcsError::NoPath) => continue,
            Err(e) => return Err(e),
        };
        solved += 1;
        let sol = match conic::solve(&relaxation.program, config.tolerances) {
            Ok(sol) if sol.is_optimal() => sol,
            Ok(sol) if sol.status == SolveStatus::Infeasible => continue,
            Ok(sol) => {
                debug!("branch node relaxation ended with {:?}; skipping it", sol.status);
                continue;
            }
            Err(e) => {
                debug!("branch node relaxation failed: {e}; skipping it");
                continue;
            }
        };
        let bound = sol.objective_value.min(sol.dual_objective).max(node.bound);
        if prunes(bound, &incumbent) {
            continue;
        }
        let sub_flows = relaxation.edge_flows(&sol);
        debug!(
            "branch node {solved}: bound {bound:.6} incumbent {:?} open {}",
            incumbent.as_ref().map(|i| i.1.value),
            open.len()
        );
        offer(&mut incumbent, candidates(&sub, &sub_flows, config.rounding_samples / 4));
        if let Some(children) = branch(&node.removed, &sub, &kept, &sub_flows) {
            open.extend(children.into_iter().map(|removed| BranchNode { removed, bound }));
        }
    }
    debug!("branch and bound: {solved} relaxations solved, {} nodes left open", open.len());
    Ok(incumbent)
}

/// Relative slack under which a node bound counts as no better than the incumbent.
const BRANCH_PRUNE_TOL: f64 = 1e-7;

/// Splits on the most fractional useful edge of `sub`, or returns `None`
/// when the flows are integral.
fn branch(
    removed: &[bool],
    sub: &GcsGraph,
    kept: &[usize],
    sub_flows: &[f64],
) -> Option<[Vec<bool>; 2]> {
    let useful = sub.useful_edges();
    let (k, frac) = (0..sub.edges.len())
        .filter(|&k| useful[k])
        .map(|k| (k, sub_flows[k].min(1.0 - sub_flows[k])))
        .max_by(|a, b| a.1.total_cmp(&b.1))?;
    if frac <= BRANCH_FRACTIONALITY {
        return None;
    }
    let e = &sub.edges[k];
    let before = sub.reach(e.tail, false);
    let after = sub.reach(e.head, true);
    let mut drop = removed.to_vec();
    drop[kept[k]] = true;
    let mut force = removed.to_vec();
    for (j, f) in sub.edges.iter().enumerate() {
        if j != k && !before[f.head] && !after[f.tail] {
            force[kept[j]] = true;
        }
    }
    Some([drop, force])
}

const BRANCH_FRACTIONALITY: f64 = 1e-6;

fn greedy_path(graph: &GcsGraph, flows: &[f64]) -> Option<Vec<VertexId>> {
    let mut path = vec![graph.source];
    let mut v = graph.source;
    while v != graph.target {
        let (_, w) = graph.out_edges[v]
            .iter()
            .map(|&k| (flows[k], graph.edges[k].head))
            .filter(|&(z, _)| z >= MIN_FOLLOW_FLOW)
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))?;
        path.push(w);
        v = w;
    }
    Some(path)
}

/// Distinct source-to-target paths drawn by random walks that leave each
/// vertex along an edge chosen with probability proportional to its flow.
/// Edges with flow below [`MIN_FOLLOW_FLOW`] are never taken; walks that get
/// stuck are discarded.
pub fn sample_flow_paths(graph: &GcsGraph, flows: &[f64], samples: usize, seed: u64) -> Vec<Vec<VertexId>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths: Vec<Vec<VertexId>> = Vec::new();
    'walk: for _ in 0..samples {
        let mut path = vec![graph.source];
        let mut v = graph.source;
        while v != graph.target {
            let choices: Vec<(f64, VertexId)> = graph.out_edges[v]
                .iter()
                .map(|&k| (flows[k], graph.edges[k].head))
                .filter(|&(z, _)| z >= MIN_FOLLOW_FLOW)
                .collect();
            let Ok(pick) = WeightedIndex::new(choices.iter().map(|c| c.0)) else {
                continue 'walk;
            };
            v = choices[pick.sample(&mut rng)].1;
            path.push(v);
        }
        if !paths.contains(&path) {
            paths.push(path);
        }
    }
    paths
}

/// Solves every path in `paths` and returns the cheapest feasible one.
pub fn best_enumerated_path(
    graph: &GcsGraph,
    paths: &[Vec<VertexId>],
    tol: Tolerances,
) -> Result<(Vec<VertexId>, PathSolution), GcsError> {
    let mut best: Option<(Vec<VertexId>, PathSolution)> = None;
    for path in paths {
        match solve_fixed_path(graph, path, tol) {
            Ok(sol) => {
                if best.as_ref().is_none_or(|b| sol.value < b.1.value) {
                    best = Some((path.clone(), sol));
                }
            }
            Err(GcsError::Infeasible) => {}
            Err(e) => return Err(e),
        }
    }
    best.ok_or(GcsError::Infeasible)
}

/// Convex program over the states of a fixed path: the binary restriction of
/// the shortest-path program with every on-path flow equal to one.
pub fn solve_fixed_path(
    graph: &GcsGraph,
    path: &[VertexId],
    tol: Tolerances,
) -> Result<PathSolution, GcsError> {
    let edge_ids: Vec<usize> = path
        .windows(2)
        .map(|w| {
            graph
                .find_edge(w[0], w[1])
                .ok_or_else(|| GcsError::InvalidGraph(format!("no edge {} -> {}", w[0], w[1])))
        })
        .collect::<Result<_, _>>()?;
    let qp = PathQp::build(graph, path, &edge_ids);

    let mut p = ConicProgram::new();
    let x = p.add_vars(qp.n);
    let one = p.add_var();
    p.add_eq(AffineExpr::var(one).plus(-1.0));
    for row in &qp.eqs {
        p.add_eq(row.to_expr(&x));
    }
    for row in &qp.les {
        p.add_le(row.to_expr(&x));
    }
    p.objective_offset = qp.constant;
    let terms: Vec<(f64, AffineExpr)> = qp.squares.iter().map(|(w, r)| (*w, r.to_expr(&x))).collect();
    // 2 * epi * (1/2) >= sum r^2 with the scale pinned through `half`
    if !terms.is_empty() {
        let half = p.add_var();
        p.add_eq(AffineExpr::var(half).plus(-0.5));
        let epi = p.add_var();
        let mut cone = vec![epi, half];
        for (w, expr) in terms {
            let r = p.add_var();
            let f = w.sqrt();
            let mut row = AffineExpr::var(r).plus(-f * expr.constant);
            for (i, c) in expr.terms {
                row.push(i, -f * c);
            }
            p.add_eq(row);
            cone.push(r);
        }
        p.add_cone(cone, ConeKind::RotatedSecondOrder);
        p.add_objective(epi, 1.0);
    }

    let sol = conic::solve(&p, tol)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(GcsError::Infeasible),
        s => return Err(GcsError::Solver(s)),
    }
    let raw: Vec<f64> = x.iter().map(|&i| sol.primal[i]).collect();
    let flat = qp.polish(&raw).unwrap_or_else(|| {
        log::debug!("path polish failed; keeping interior-point solution");
        raw
    });
    let states: Vec<Vec<f64>> = qp.offsets.windows(2).map(|w| flat[w[0]..w[1]].to_vec()).collect();
    let value = graph.path_cost(path, &states);
    Ok(PathSolution { states, value })
}

/// Dense row `coeffs . x + constant` over the stacked path states.
#[derive(Debug, Clone)]
struct DenseRow {
    coeffs: Vec<(usize, f64)>,
    constant: f64,
}

impl DenseRow {
    fn to_expr(&self, vars: &[usize]) -> AffineExpr {
        let mut e = AffineExpr::constant(self.constant);
        for &(i, c) in &self.coeffs {
            e.push(vars[i], c);
        }
        e
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    fn scale(&self, x: &[f64]) -> f64 {
        1.0 + self.constant.abs() + self.coeffs.iter().map(|&(i, c)| (c * x[i]).abs()).fold(0.0, f64::max)
    }
}

/// The fixed-path problem as an explicit QP: `sum w (r . x + c)^2 + constant`
/// with affine equalities and inequalities (`<= 0`).
struct PathQp {
    n: usize,
    offsets: Vec<usize>,
    eqs: Vec<DenseRow>,
    les: Vec<DenseRow>,
    squares: Vec<(f64, DenseRow)>,
    constant: f64,
}

impl PathQp {
    fn build(graph: &GcsGraph, path: &[VertexId], edge_ids: &[usize]) -> Self {
        let mut offsets = vec![0];
        for &v in path {
            offsets.push(offsets.last().unwrap() + graph.vertices[v].set.dim());
        }
        let n = *offsets.last().unwrap();
        let mut eqs = Vec::new();
        let mut les = Vec::new();
        let mut squares = Vec::new();
        let mut constant = 0.0;

        for (pos, &v) in path.iter().enumerate() {
            let set = &graph.vertices[v].set;
            let base = offsets[pos];
            for d in 0..set.dim() {
                let i = base + d;
                let (lo, hi) = (set.lo[d], set.hi[d]);
                if lo == hi {
                    eqs.push(DenseRow { coeffs: vec![(i, 1.0)], constant: -lo });
                } else {
                    if lo.is_finite() {
                        les.push(DenseRow { coeffs: vec![(i, -1.0)], constant: lo });
                    }
                    if hi.is_finite() {
                        les.push(DenseRow { coeffs: vec![(i, 1.0)], constant: -hi });
                    }
                }
                if let Some(pin) = &set.pin {
                    eqs.push(DenseRow { coeffs: vec![(i, 1.0)], constant: -pin[d] });
                }
            }
            if let Some(cost) = &graph.vertices[v].cost {
                constant += cost.constant;
                for q in &cost.quadratic {
                    let coeffs = q.tail.iter().enumerate().map(|(d, &c)| (base + d, c)).collect();
                    squares.push((q.weight, DenseRow { coeffs, constant: q.constant }));
                }
            }
        }

        for (pos, &k) in edge_ids.iter().enumerate() {
            let spec = &graph.edges[k].spec;
            let (bu, bw) = (offsets[pos], offsets[pos + 1]);
            let row = |tail: &[f64], head: &[f64], c: f64| DenseRow {
                coeffs: tail
                    .iter()
                    .enumerate()
                    .map(|(d, &a)| (bu + d, a))
                    .chain(head.iter().enumerate().map(|(d, &a)| (bw + d, a)))
                    .filter(|&(_, a)| a != 0.0)
                    .collect(),
                constant: c,
            };
            for c in &spec.couplings {
                let r = row(&c.tail, &c.head, c.constant);
                match c.kind {
                    CouplingKind::Eq => eqs.push(r),
                    CouplingKind::Le => les.push(r),
                }
            }
            constant += spec.constant_cost;
            for q in &spec.quadratic {
                squares.push((q.weight, row(&q.tail, &q.head, q.constant)));
            }
        }
        Self { n, offsets, eqs, les, squares, constant }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.constant + self.squares.iter().map(|(w, r)| w * r.eval(x).powi(2)).sum::<f64>()
    }

    fn feasible(&self, x: &[f64], tol: f64) -> bool {
        self.eqs.iter().all(|r| r.eval(x).abs() <= tol * r.scale(x))
            && self.les.iter().all(|r| r.eval(x) <= tol * r.scale(x))
    }

    /// Active-set refinement of an interior-point solution. The working set
    /// starts from the inequalities with small slack; each round solves the
    /// equality-constrained KKT system, then adds the most violated
    /// inequality or drops the one with the most negative multiplier. The
    /// result is returned once it satisfies the KKT conditions.
    fn polish(&self, x0: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        if n == 0 {
            return None;
        }
        // tiny proximal term keeps the KKT matrix nonsingular on cost-free directions
        let rho = 1e-9;
        let mut h = DMatrix::<f64>::identity(n, n) * rho;
        let mut g = DVector::<f64>::from_iterator(n, x0.iter().map(|v| -rho * v));
        for (w, r) in &self.squares {
            for &(i, ci) in &r.coeffs {
                g[i] += 2.0 * w * r.constant * ci;
                for &(j, cj) in &r.coeffs {
                    h[(i, j)] += 2.0 * w * ci * cj;
                }
            }
        }

        let mut working: Vec<usize> = (0..self.les.len())
            .filter(|&k| -self.les[k].eval(x0) / self.les[k].scale(x0) <= 1e-6)
            .collect();
        let max_rounds = 4 * self.les.len() + 10;
        for _ in 0..max_rounds {
            let mut rows: Vec<(Option<usize>, &DenseRow)> = self.eqs.iter().map(|r| (None, r)).collect();
            rows.extend(working.iter().map(|&k| (Some(k), &self.les[k])));
            let rows = independent_rows(&rows, n);
            let m = rows.len();
            let mut kkt = DMatrix::<f64>::zeros(n + m, n + m);
            let mut rhs = DVector::<f64>::zeros(n + m);
            kkt.view_mut((0, 0), (n, n)).copy_from(&h);
            for i in 0..n {
                rhs[i] = -g[i];
            }
            for (r, (_, row)) in rows.iter().enumerate() {
                for &(j, c) in &row.coeffs {
                    kkt[(n + r, j)] += c;
                    kkt[(j, n + r)] += c;
                }
                rhs[n + r] = -row.constant;
            }
            let sol = kkt.lu().solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let x: Vec<f64> = sol.iter().take(n).copied().collect();

            // most violated inequality outside the working set
            let violated = (0..self.les.len())
                .filter(|k| !working.contains(k))
                .map(|k| (k, self.les[k].eval(&x) / self.les[k].scale(&x)))
                .filter(|&(_, v)| v > 1e-12)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((k, _)) = violated {
                working.push(k);
                continue;
            }
            // most negative multiplier among working inequalities
            let lambda_scale = 1.0 + (0..m).map(|r| sol[n + r].abs()).fold(0.0, f64::max);
            let negative = rows
                .iter()
                .enumerate()
                .filter_map(|(r, (k, _))| k.map(|k| (k, sol[n + r])))
                .filter(|&(_, lam)| lam < -1e-9 * lambda_scale)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((k, _)) = negative {
                working.retain(|&w| w != k);
                continue;
            }
            let base = self.objective(x0);
            let sane = self.objective(&x) <= base + 1e-6 * (1.0 + base.abs());
            return (sane && self.feasible(&x, 1e-11)).then_some(x);
        }
        None
    }
}

/// Greedy selection of linearly independent rows (modified Gram-Schmidt).
fn independent_rows<'a, T: Copy>(rows: &[(T, &'a DenseRow)], n: usize) -> Vec<(T, &'a DenseRow)> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for &(tag, row) in rows {
        let mut v = DVector::<f64>::zeros(n);
        for &(j, c) in &row.coeffs {
            v[j] += c;
        }
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm > 1e-9 * norm0 {
            basis.push(v / norm);
            out.push((tag, row));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_cost_edge() -> EdgeSpec {
        EdgeSpec::default()
    }

    fn const_edge(c: f64) -> EdgeSpec {
        EdgeSpec { constant_cost: c, ..Default::default() }
    }

    fn scalar_vertex(lo: f64, hi: f64) -> Vertex {
        Vertex { set: VertexSet::from_bounds(&[(lo, hi)]).unwrap(), cost: None }
    }

    fn edge(tail: usize, head: usize, spec: EdgeSpec) -> Edge {
        Edge { tail, head, spec }
    }

    #[test]
    fn single_forced_edge() {
        let g = GcsGraph::new(
            vec![scalar_vertex(0.0, 1.0), scalar_vertex(0.0, 1.0)],
            vec![edge(0, 1, zero_cost_edge())],
            0,
            1,
        )
        .unwrap();
        let sol = solve_spp(&g, &SppConfig::default()).unwrap();
        assert!(sol.relaxed_value.abs() < 1e-7);
        assert!((sol.edge_flows[0] - 1.0).abs() < 1e-7);
        assert_eq!(sol.path, vec![0, 1]);
        assert!(sol.tight);
    }

    #[test]
    fn chain_costs_add() {
        let g = GcsGraph::new(
            vec![scalar_vertex(0.0, 1.0), scalar_vertex(0.0, 1.0), scalar_vertex(0.0, 1.0)],
            vec![edge(0, 1, const_edge(1.0)), edge(1, 2, const_edge(2.0))],
            0,
            2,
        )
        .unwrap();
        let sol = solve_spp(&g, &SppConfig::default()).unwrap();
        assert!((sol.relaxed_value - 3.0).abs() < 1e-6);
        assert!((sol.rounded_value - 3.0).abs() < 1e-12);
        assert!(sol.tight);
    }

    fn diamond(upper: (f64, f64), lower: (f64, f64)) -> GcsGraph {
        // 0 -> 1 -> 3 and 0 -> 2 -> 3
        GcsGraph::new(
            (0..4).map(|_| scalar_vertex(-1.0, 1.0)).collect(),
            vec![
                edge(0, 1, const_edge(upper.0)),
                edge(0, 2, const_edge(lower.0)),
                edge(1, 3, const_edge(upper.1)),
                edge(2, 3, const_edge(lower.1)),
            ],
            0,
            3,
        )
        .unwrap()
    }

    #[test]
    fn diamond_picks_cheap_branch() {
        // path costs by hand: upper 1 + 1 = 2, lower 1 + 2 = 3
        let g = diamond((1.0, 1.0), (1.0, 2.0));
        let sol = solve_spp(&g, &SppConfig::default()).unwrap();
        assert!((sol.relaxed_value - 2.0).abs() < 1e-6);
        assert_eq!(sol.path, vec![0, 1, 3]);
        assert!((sol.edge_flows[0] - 1.0).abs() < 1e-6);
        assert!(sol.tight);
    }

    #[test]
    fn symmetric_diamond_is_fractional_but_optimal() {
        let g = diamond((1.0, 1.0), (1.0, 1.0));
        let config = SppConfig { enumeration_limit: 0, ..Default::default() };
        let sol = solve_spp(&g, &config).unwrap();
        assert!(!sol.tight, "flows {:?}", sol.edge_flows);
        assert!(sol.path == vec![0, 1, 3] || sol.path == vec![0, 2, 3]);
        assert!((sol.rounded_value - 2.0).abs() < 1e-12);
        assert!(sol.integrality_gap.abs() < 1e-6);
    }

    #[test]
    fn greedy_tie_breaks_on_smallest_head() {
        let g = diamond((1.0, 1.0), (1.0, 1.0));
        let relax = formulate_relaxation(&g).unwrap();
        let mut sol = conic::solve(&relax.program, Tolerances::default()).unwrap();
        // force exact symmetric flows
        for e in relax.edges.iter().flatten() {
            sol.primal[e.z] = 0.5;
        }
        let rounded = round_solution(&g, &relax, &sol, &SppConfig::default()).unwrap();
        assert_eq!(rounded.path, vec![0, 1, 3]);
    }

    #[test]
    fn pinned_source_outside_its_box_is_infeasible() {
        let src = Vertex { set: VertexSet::from_bounds(&[(0.0, 1.0)]).unwrap().pinned(&[5.0]), cost: None };
        let g = GcsGraph::new(vec![src, scalar_vertex(0.0, 1.0)], vec![edge(0, 1, zero_cost_edge())], 0, 1)
            .unwrap();
        assert!(matches!(solve_spp(&g, &SppConfig::default()), Err(GcsError::Infeasible)));
    }

    #[test]
    fn unreachable_target_is_rejected() {
        let g = GcsGraph::new(
            vec![scalar_vertex(0.0, 1.0), scalar_vertex(0.0, 1.0), scalar_vertex(0.0, 1.0)],
            vec![edge(0, 1, zero_cost_edge())],
            0,
            2,
        )
        .unwrap();
        assert!(matches!(formulate_relaxation(&g), Err(GcsError::NoPath)));
    }

    #[test]
    fn invalid_graphs() {
        let v = || scalar_vertex(0.0, 1.0);
        assert!(GcsGraph::new(vec![v(), v()], vec![], 0, 0).is_err());
        assert!(GcsGraph::new(vec![v(), v()], vec![edge(0, 5, zero_cost_edge())], 0, 1).is_err());
        assert!(GcsGraph::new(
            vec![v(), v()],
            vec![edge(0, 1, zero_cost_edge()), edge(1, 0, zero_cost_edge())],
            0,
            1
        )
        .is_err());
        assert!(GcsGraph::new(vec![v(), v()], vec![edge(0, 1, const_edge(-1.0))], 0, 1).is_err());
        assert!(VertexSet::from_bounds(&[(2.0, 1.0)]).is_err());
    }

    #[test]
    fn quadratic_edge_with_coupling() {
        // x0 pinned at 0, x1 in [-5, 5] with x1 - x0 - 1 <= 0, cost (x1 - 3)^2
        let src = Vertex { set: VertexSet::from_bounds(&[(-5.0, 5.0)]).unwrap().pinned(&[0.0]), cost: None };
        let spec = EdgeSpec {
            couplings: vec![Coupling { tail: vec![-1.0], head: vec![1.0], constant: -1.0, kind: CouplingKind::Le }],
            quadratic: vec![QuadraticTerm { weight: 1.0, tail: vec![0.0], head: vec![1.0], constant: -3.0 }],
            constant_cost: 0.0,
        };
        let g = GcsGraph::new(vec![src, scalar_vertex(-5.0, 5.0)], vec![edge(0, 1, spec)], 0, 1).unwrap();
        let sol = solve_spp(&g, &SppConfig::default()).unwrap();
        assert!((sol.vertex_states[1][0] - 1.0).abs() < 1e-12, "{:?}", sol.vertex_states);
        assert!((sol.rounded_value - 4.0).abs() < 1e-12);
        assert!((sol.relaxed_value - 4.0).abs() < 1e-6);
    }

    #[test]
    fn vertex_costs_are_charged_on_path() {
        // two branches with the same edges; vertex 2 carries cost (x - 2)^2 on [0, 1] -> 1
        let mut vs: Vec<Vertex> = (0..4).map(|_| scalar_vertex(0.0, 1.0)).collect();
        vs[1].cost = Some(VertexCost { quadratic: vec![], constant: 1.5 });
        vs[2].cost = Some(VertexCost {
            quadratic: vec![QuadraticTerm { weight: 1.0, tail: vec![1.0], head: vec![], constant: -2.0 }],
            constant: 0.0,
        });
        let es = vec![
            edge(0, 1, zero_cost_edge()),
            edge(0, 2, zero_cost_edge()),
            edge(1, 3, zero_cost_edge()),
            edge(2, 3, zero_cost_edge()),
        ];
        let g = GcsGraph::new(vs, es, 0, 3).unwrap();
        let sol = solve_spp(&g, &SppConfig::default()).unwrap();
        assert_eq!(sol.path, vec![0, 2, 3]);
        assert!((sol.rounded_value - 1.0).abs() < 1e-9);
        assert!((sol.relaxed_value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn path_counting_and_enumeration() {
        let g = diamond((0.0, 0.0), (0.0, 0.0));
        assert_eq!(g.count_paths(), 2);
        assert_eq!(g.enumerate_paths(2).unwrap().len(), 2);
        assert!(g.enumerate_paths(1).is_none());
    }

    #[test]
    fn flow_residuals_are_small() {
        let g = diamond((1.0, 2.0), (2.0, 2.0));
        let sol = solve_spp(&g, &SppConfig::default()).unwrap();
        assert!(sol.flow_residuals.conservation <= 1e-8);
        assert!(sol.flow_residuals.y_definition <= 1e-8);
    }
}
