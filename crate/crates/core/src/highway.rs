//! Multi-lane highway model and the per-vehicle graph of convex sets.
//!
//! Each vehicle has a longitudinal double integrator (`s`, `v`, `a`) and a
//! lane index moved by a blinker in `{-1, 0, +1}`. Two safety rules couple
//! the vehicles:
//!
//! 1. same lane: `|s_j - s_i| >= d_safe`;
//! 2. side by side in adjacent lanes (`|s_j - s_i| <= d_safe`): no
//!    simultaneous swap into each other's lanes.
//!
//! Given fixed plans for the other vehicles, [`build_vehicle_graph`] builds
//! the ego vehicle's time-expanded graph: one vertex per collision-free gap
//! in each lane at each step, edges between adjacent lanes at consecutive
//! steps carrying the dynamics and the quadratic stage cost.

use std::fmt;

use thiserror::Error;

use crate::conic::Tolerances;
use crate::gcs::{
    solve_fixed_path, Coupling, CouplingKind, Edge, EdgeSpec, GcsError, GcsGraph, QuadraticTerm, SppSolution,
    Vertex, VertexId, VertexSet,
};

pub type Lane = i32;
pub type VehicleId = usize;

/// Slack used when comparing positions against safety distances.
pub const POSITION_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HighwayError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("vehicle {vehicle}: initial position {s0} lies in no safe gap of lane {lane}")]
    InfeasibleStart { vehicle: VehicleId, s0: f64, lane: Lane },
    #[error(transparent)]
    Gcs(#[from] GcsError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub speed: f64,
    pub lane: f64,
    pub accel: f64,
    pub blinker: f64,
}

impl Weights {
    pub fn scaled(self, k: f64) -> Self {
        Self { speed: self.speed * k, lane: self.lane * k, accel: self.accel * k, blinker: self.blinker * k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub d_safe: f64,
    pub v_des: f64,
    pub lane_des: Lane,
    pub weights: Weights,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialState {
    pub s: f64,
    pub v: f64,
    pub lane: Lane,
}

/// Road, lanes, horizon and vehicles. Lanes are numbered `1..=lane_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    s_min: f64,
    s_max: f64,
    lane_count: u32,
    horizon: usize,
    dt: f64,
    vehicles: Vec<VehicleParams>,
    initial: Vec<InitialState>,
}

impl Scenario {
    pub fn new(
        road: (f64, f64),
        lane_count: u32,
        horizon: usize,
        dt: f64,
        vehicles: Vec<VehicleParams>,
        initial: Vec<InitialState>,
    ) -> Result<Self, HighwayError> {
        let bad = |m: String| Err(HighwayError::InvalidScenario(m));
        if !(road.0 < road.1) || !road.0.is_finite() || !road.1.is_finite() {
            return bad(format!("road: s_min {} must be below s_max {}", road.0, road.1));
        }
        if lane_count < 1 {
            return bad("lanes: need at least one lane".into());
        }
        if horizon < 2 {
            return bad(format!("horizon: T = {horizon} must be at least 2"));
        }
        if !(dt > 0.0) {
            return bad(format!("horizon: dt = {dt} must be positive"));
        }
        if vehicles.len() != initial.len() {
            return bad("vehicles: parameter and initial-state counts differ".into());
        }
        let lane_ok = |l: Lane| l >= 1 && l <= lane_count as Lane;
        for (i, (p, x)) in vehicles.iter().zip(&initial).enumerate() {
            if !(p.v_min <= p.v_max) {
                return bad(format!("vehicle {i}: v_min {} exceeds v_max {}", p.v_min, p.v_max));
            }
            if !(p.v_min <= p.v_des && p.v_des <= p.v_max) {
                return bad(format!("vehicle {i}: v_des {} outside [v_min, v_max] = [{}, {}]", p.v_des, p.v_min, p.v_max));
            }
            if !(p.a_min < 0.0 && 0.0 < p.a_max) {
                return bad(format!("vehicle {i}: acceleration bounds need a_min < 0 < a_max, got [{}, {}]", p.a_min, p.a_max));
            }
            if !(p.d_safe > 0.0) {
                return bad(format!("vehicle {i}: d_safe {} must be positive", p.d_safe));
            }
            let w = p.weights;
            if !(w.speed > 0.0 && w.lane > 0.0 && w.accel > 0.0 && w.blinker > 0.0) {
                return bad(format!("vehicle {i}: weights must all be positive, got {w:?}"));
            }
            if !lane_ok(p.lane_des) {
                return bad(format!("vehicle {i}: lane_des {} not in 1..={lane_count}", p.lane_des));
            }
            if !lane_ok(x.lane) {
                return bad(format!("vehicle {i}: lane0 {} not in 1..={lane_count}", x.lane));
            }
            if !(road.0 <= x.s && x.s <= road.1) {
                return bad(format!("vehicle {i}: s0 {} outside road bounds [{}, {}]", x.s, road.0, road.1));
            }
            if !(p.v_min <= x.v && x.v <= p.v_max) {
                return bad(format!("vehicle {i}: v0 {} violates speed bounds [v_min, v_max] = [{}, {}]", x.v, p.v_min, p.v_max));
            }
        }
        for i in 0..initial.len() {
            for j in (i + 1)..initial.len() {
                let (a, b) = (&initial[i], &initial[j]);
                let need = vehicles[i].d_safe.max(vehicles[j].d_safe);
                if a.lane == b.lane && (a.s - b.s).abs() < need - POSITION_EPS {
                    return bad(format!(
                        "vehicles {i} and {j}: initial gap {} in lane {} is below the same-lane safety distance {need} (Rule 1)",
                        (a.s - b.s).abs(),
                        a.lane
                    ));
                }
            }
        }
        Ok(Self { s_min: road.0, s_max: road.1, lane_count, horizon, dt, vehicles, initial })
    }

    pub fn road(&self) -> (f64, f64) {
        (self.s_min, self.s_max)
    }

    pub fn lane_count(&self) -> u32 {
        self.lane_count
    }

    pub fn lanes(&self) -> impl Iterator<Item = Lane> {
        1..=self.lane_count as Lane
    }

    pub fn has_lane(&self, lane: Lane) -> bool {
        lane >= 1 && lane <= self.lane_count as Lane
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn vehicles(&self) -> &[VehicleParams] {
        &self.vehicles
    }

    pub fn initial_states(&self) -> &[InitialState] {
        &self.initial
    }

    pub fn num_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    /// Same scenario restricted to a subset of vehicles, in the given order.
    pub fn subset(&self, ids: &[VehicleId]) -> Result<Self, HighwayError> {
        Self::new(
            self.road(),
            self.lane_count,
            self.horizon,
            self.dt,
            ids.iter().map(|&i| self.vehicles[i]).collect(),
            ids.iter().map(|&i| self.initial[i]).collect(),
        )
    }
}

/// One vehicle's plan over the horizon: `T` states and `T - 1` inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<Lane>,
    pub a: Vec<f64>,
    pub b: Vec<Lane>,
}

impl Strategy {
    pub fn horizon(&self) -> usize {
        self.s.len()
    }

    /// Integrates `a` and `b` forward from an initial state.
    pub fn rollout(init: InitialState, dt: f64, a: &[f64], b: &[Lane]) -> Self {
        assert_eq!(a.len(), b.len());
        let mut s = vec![init.s];
        let mut v = vec![init.v];
        let mut z = vec![init.lane];
        for (&ai, &bi) in a.iter().zip(b) {
            let (sl, vl, zl) = (*s.last().unwrap(), *v.last().unwrap(), *z.last().unwrap());
            s.push(sl + dt * vl);
            v.push(vl + dt * ai);
            z.push(zl + bi);
        }
        Self { s, v, z, a: a.to_vec(), b: b.to_vec() }
    }

    /// Lane keeping at the initial speed (clamped to the speed bounds, with
    /// the acceleration limits respected on the first step).
    pub fn constant_hold(scenario: &Scenario, vehicle: VehicleId) -> Self {
        let p = &scenario.vehicles[vehicle];
        let init = scenario.initial[vehicle];
        let dt = scenario.dt;
        let target = init.v.clamp(p.v_min, p.v_max);
        let mut a = vec![0.0; scenario.horizon - 1];
        if target != init.v {
            a[0] = ((target - init.v) / dt).clamp(p.a_min, p.a_max);
        }
        Self::rollout(init, dt, &a, &vec![0; scenario.horizon - 1])
    }

    /// Every violated dynamics, lane or bound invariant, as messages.
    pub fn violations(&self, scenario: &Scenario, params: &VehicleParams) -> Vec<String> {
        let mut out = Vec::new();
        let t_len = scenario.horizon;
        if self.s.len() != t_len || self.v.len() != t_len || self.z.len() != t_len {
            out.push(format!("state trajectories must have length {t_len}"));
            return out;
        }
        if self.a.len() != t_len - 1 || self.b.len() != t_len - 1 {
            out.push(format!("input trajectories must have length {}", t_len - 1));
            return out;
        }
        let dt = scenario.dt;
        let tol = |x: f64| POSITION_EPS * (1.0 + x.abs());
        for t in 0..t_len {
            if self.s[t] < scenario.s_min - tol(scenario.s_min) || self.s[t] > scenario.s_max + tol(scenario.s_max) {
                out.push(format!("t={t}: position {} outside road", self.s[t]));
            }
            if self.v[t] < params.v_min - tol(params.v_min) || self.v[t] > params.v_max + tol(params.v_max) {
                out.push(format!("t={t}: speed {} outside [{}, {}]", self.v[t], params.v_min, params.v_max));
            }
            if !scenario.has_lane(self.z[t]) {
                out.push(format!("t={t}: lane {} does not exist", self.z[t]));
            }
        }
        for t in 0..t_len - 1 {
            let ds = self.s[t + 1] - self.s[t] - dt * self.v[t];
            if ds.abs() > tol(self.s[t + 1]) {
                out.push(format!("t={t}: position update residual {ds}"));
            }
            let dv = self.v[t + 1] - self.v[t] - dt * self.a[t];
            if dv.abs() > tol(self.v[t + 1]) {
                out.push(format!("t={t}: speed update residual {dv}"));
            }
            if self.a[t] < params.a_min - tol(params.a_min) || self.a[t] > params.a_max + tol(params.a_max) {
                out.push(format!("t={t}: acceleration {} outside [{}, {}]", self.a[t], params.a_min, params.a_max));
            }
            if !(-1..=1).contains(&self.b[t]) || self.z[t + 1] != self.z[t] + self.b[t] {
                out.push(format!("t={t}: lane change {} -> {} with blinker {}", self.z[t], self.z[t + 1], self.b[t]));
            }
        }
        out
    }
}

/// Per-vehicle strategies of a joint plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub strategies: Vec<Strategy>,
}

impl Profile {
    pub fn new(strategies: Vec<Strategy>) -> Self {
        Self { strategies }
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    /// Everyone except `ego`, tagged with their vehicle ids.
    pub fn others(&self, ego: VehicleId) -> Vec<(VehicleId, &Strategy)> {
        self.strategies.iter().enumerate().filter(|(j, _)| *j != ego).collect()
    }
}

/// Cost of one plan: stage terms on speed tracking, lane preference,
/// acceleration and blinker use, plus a terminal speed term.
pub fn cost_j(params: &VehicleParams, strategy: &Strategy) -> f64 {
    let w = params.weights;
    let t_len = strategy.s.len();
    let mut total = 0.0;
    for t in 0..t_len - 1 {
        let dv = strategy.v[t + 1] - params.v_des;
        let dl = f64::from(strategy.z[t + 1] - params.lane_des);
        let b = f64::from(strategy.b[t]);
        total += w.speed * dv * dv + w.lane * dl * dl + w.accel * strategy.a[t] * strategy.a[t] + w.blinker * b * b;
    }
    let dv = strategy.v[t_len - 1] - params.v_des;
    total + w.speed * dv * dv
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn intersects(&self, lo: f64, hi: f64) -> bool {
        self.lo <= hi && lo <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Safe gaps of the ego vehicle, indexed by time step and lane.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeGaps {
    lane_count: u32,
    gaps: Vec<Vec<Vec<Interval>>>,
}

impl SafeGaps {
    pub fn gaps(&self, t: usize, lane: Lane) -> &[Interval] {
        &self.gaps[t][(lane - 1) as usize]
    }

    pub fn horizon(&self) -> usize {
        self.gaps.len()
    }

    pub fn lane_count(&self) -> u32 {
        self.lane_count
    }
}

/// Separation the ego must keep from vehicle `j`: both vehicles' rules apply.
fn separation(scenario: &Scenario, ego: VehicleId, j: VehicleId) -> f64 {
    scenario.vehicles[ego].d_safe.max(scenario.vehicles[j].d_safe)
}

/// Closed collision-free intervals of each lane at each step, given the
/// other vehicles' fixed plans.
pub fn build_safe_gaps(scenario: &Scenario, ego: VehicleId, others: &[(VehicleId, &Strategy)]) -> SafeGaps {
    let lanes = scenario.lane_count as usize;
    let gaps = (0..scenario.horizon)
        .map(|t| {
            (1..=lanes as Lane)
                .map(|lane| {
                    let unsafe_set: Vec<(f64, f64)> = others
                        .iter()
                        .filter(|(_, st)| st.z[t] == lane)
                        .map(|&(j, st)| {
                            let d = separation(scenario, ego, j);
                            (st.s[t] - d, st.s[t] + d)
                        })
                        .collect();
                    complement_in(scenario.s_min, scenario.s_max, unsafe_set)
                })
                .collect()
        })
        .collect();
    SafeGaps { lane_count: scenario.lane_count, gaps }
}

/// `[lo, hi]` minus a union of open intervals, as sorted disjoint closed
/// intervals. Open intervals overlapping by more than `POSITION_EPS` merge;
/// ones that touch within `POSITION_EPS` leave a zero-width gap.
pub fn complement_in(lo: f64, hi: f64, mut open: Vec<(f64, f64)>) -> Vec<Interval> {
    open.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in open {
        match merged.last_mut() {
            Some(last) if a < last.1 - POSITION_EPS => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    let mut lefts = vec![lo];
    let mut rights = Vec::new();
    for (a, b) in merged {
        rights.push(a);
        lefts.push(b);
    }
    rights.push(hi);
    lefts
        .into_iter()
        .zip(rights)
        .filter_map(|(l, r)| {
            let (l, r) = (l.max(lo), r.min(hi));
            if r < l - POSITION_EPS {
                None
            } else if r - l <= POSITION_EPS {
                let mid = (0.5 * (l + r)).clamp(lo, hi);
                Some(Interval { lo: mid, hi: mid })
            } else {
                Some(Interval { lo: l, hi: r })
            }
        })
        .collect()
}

/// Where a graph vertex sits in the time-expanded road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexLabel {
    pub t: usize,
    pub lane: Lane,
    /// Index of the safe gap the vertex was cut from.
    pub gap: usize,
    pub interval: Interval,
}

/// How lane-change edges are removed when another vehicle swaps into the
/// ego's lane from the target lane over the same step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SwapHandling {
    /// Remove the edge when any point of the tail gap is side by side with
    /// the swapping vehicle.
    #[default]
    Conservative,
    /// Cut tail gaps at the side-by-side boundaries so only the pieces that
    /// are actually side by side lose the edge.
    SplitGaps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    /// Drop edges whose endpoints cannot be connected within one step at any
    /// admissible speed. Such edges carry empty coupling sets, so the
    /// relaxation is unchanged; the program just gets smaller.
    pub prune_unreachable_edges: bool,
    /// Intersect every vertex set with the positions and speeds the ego can
    /// reach from its initial state by time `t`. Every feasible plan stays
    /// inside these bounds, so the set of paths and their optimal costs do not
    /// change, but the relaxation becomes much tighter.
    pub clip_to_reachable: bool,
    /// Propagate position and speed bounds through the graph, forward from
    /// the source and backward from the last layer, shrinking every vertex set
    /// to what plans through that vertex can actually use and dropping edges
    /// no plan can take. Like `clip_to_reachable`, this leaves the feasible
    /// plans untouched and only tightens the relaxation.
    pub tighten_bounds: bool,
    pub swap_handling: SwapHandling,
    /// When false, every edge stays in its lane.
    pub lane_changes: bool,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            prune_unreachable_edges: false,
            clip_to_reachable: true,
            tighten_bounds: true,
            swap_handling: SwapHandling::default(),
            lane_changes: true,
        }
    }
}

const REACH_MARGIN: f64 = 1e-2;

/// Per-step bounds on the ego's position and speed implied by its initial
/// state, speed limits and acceleration limits.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachableBox {
    pub s: Vec<Interval>,
    pub v: Vec<Interval>,
}

impl ReachableBox {
    pub fn new(init: InitialState, params: &VehicleParams, dt: f64, horizon: usize) -> Self {
        let mut s = vec![Interval { lo: init.s, hi: init.s }];
        let mut v = vec![Interval { lo: init.v, hi: init.v }];
        for t in 1..horizon {
            let (sp, vp) = (s[t - 1], v[t - 1]);
            s.push(Interval { lo: sp.lo + dt * vp.lo, hi: sp.hi + dt * vp.hi });
            v.push(Interval {
                lo: (vp.lo + dt * params.a_min).max(params.v_min),
                hi: (vp.hi + dt * params.a_max).min(params.v_max),
            });
        }
        // Widened so the boxes keep an interior; near-singleton boxes make
        // the relaxation badly conditioned.
        let pad = |iv: Interval| Interval { lo: iv.lo - REACH_MARGIN, hi: iv.hi + REACH_MARGIN };
        Self { s: s.into_iter().map(pad).collect(), v: v.into_iter().map(pad).collect() }
    }
}

/// Margin added to the side-by-side radius when gaps are split, so positions
/// in the unblocked pieces are strictly outside it.
const SPLIT_MARGIN: f64 = 1e-9;

/// A vehicle's graph together with the labels needed to decode paths.
#[derive(Debug, Clone)]
pub struct VehicleGraph {
    pub ego: VehicleId,
    pub graph: GcsGraph,
    /// `None` for the virtual target.
    pub labels: Vec<Option<VertexLabel>>,
    pub gaps: SafeGaps,
    pub dt: f64,
    /// Vertex sets hold states relative to coasting at the initial speed:
    /// `(s - s0 - t dt v0, v - v0)`.
    pub origin: (f64, f64),
}

/// A vertex-to-be: a piece of a safe gap and the lane changes it may not take.
struct Piece {
    gap: usize,
    interval: Interval,
    blocked_down: bool,
    blocked_up: bool,
}

impl Piece {
    fn blocks(&self, b: Lane) -> bool {
        (b < 0 && self.blocked_down) || (b > 0 && self.blocked_up)
    }
}

/// Another vehicle moving from `from` into the ego's lane over one step,
/// with the side-by-side radius around `center`.
struct Swapper {
    from: Lane,
    center: f64,
    radius: f64,
}

fn swappers(scenario: &Scenario, ego: VehicleId, others: &[(VehicleId, &Strategy)], t: usize, lane: Lane) -> Vec<Swapper> {
    if t + 1 >= scenario.horizon {
        return Vec::new();
    }
    others
        .iter()
        .filter(|(_, st)| st.z[t + 1] == lane && (st.z[t] - lane).abs() == 1)
        .map(|&(j, st)| Swapper { from: st.z[t], center: st.s[t], radius: separation(scenario, ego, j) })
        .collect()
}

fn pieces_of(gaps: &[Interval], lane: Lane, swappers: &[Swapper], handling: SwapHandling) -> Vec<Piece> {
    let blocked = |from: Lane, near: &dyn Fn(&Swapper) -> bool| swappers.iter().any(|w| w.from == from && near(w));
    match handling {
        SwapHandling::Conservative => gaps
            .iter()
            .enumerate()
            .map(|(g, iv)| {
                let near = |w: &Swapper| {
                    let r = w.radius + POSITION_EPS;
                    iv.intersects(w.center - r, w.center + r)
                };
                Piece { gap: g, interval: *iv, blocked_down: blocked(lane - 1, &near), blocked_up: blocked(lane + 1, &near) }
            })
            .collect(),
        SwapHandling::SplitGaps => {
            let mut cuts: Vec<f64> = swappers
                .iter()
                .flat_map(|w| [w.center - w.radius - SPLIT_MARGIN, w.center + w.radius + SPLIT_MARGIN])
                .collect();
            cuts.sort_by(f64::total_cmp);
            let mut out = Vec::new();
            for (g, iv) in gaps.iter().enumerate() {
                if iv.hi < iv.lo {
                    continue;
                }
                let mut bounds = vec![iv.lo];
                bounds.extend(cuts.iter().copied().filter(|&c| c > iv.lo + POSITION_EPS && c < iv.hi - POSITION_EPS));
                bounds.push(iv.hi);
                bounds.dedup_by(|a, b| (*a - *b).abs() <= POSITION_EPS);
                if bounds.len() == 1 {
                    bounds.push(iv.hi);
                }
                for w in bounds.windows(2) {
                    let piece = Interval { lo: w[0], hi: w[1].max(w[0]) };
                    let mid = 0.5 * (piece.lo + piece.hi);
                    let near = |s: &Swapper| (mid - s.center).abs() < s.radius + SPLIT_MARGIN;
                    out.push(Piece {
                        gap: g,
                        interval: piece,
                        blocked_down: blocked(lane - 1, &near),
                        blocked_up: blocked(lane + 1, &near),
                    });
                }
            }
            out
        }
    }
}

/// Builds the ego vehicle's time-expanded graph of safe gaps against fixed
/// plans of `others`.
pub fn build_vehicle_graph(
    scenario: &Scenario,
    ego: VehicleId,
    others: &[(VehicleId, &Strategy)],
    options: GraphOptions,
) -> Result<VehicleGraph, HighwayError> {
    let params = scenario.vehicles[ego];
    let init = scenario.initial[ego];
    let dt = scenario.dt;
    let gaps = build_safe_gaps(scenario, ego, others);

    let source_gap = gaps
        .gaps(0, init.lane)
        .iter()
        .position(|g| g.lo - POSITION_EPS <= init.s && init.s <= g.hi + POSITION_EPS)
        .ok_or(HighwayError::InfeasibleStart { vehicle: ego, s0: init.s, lane: init.lane })?;

    let reach = options.clip_to_reachable.then(|| ReachableBox::new(init, &params, dt, scenario.horizon));

    let mut vertices = Vec::new();
    let mut labels = Vec::new();
    // layers[t][lane - 1] = (vertex id, piece) for every vertex of that lane
    let mut layers: Vec<Vec<Vec<(VertexId, Piece)>>> = Vec::new();
    let mut source = 0;
    let shift_s = |t: usize| init.s + t as f64 * dt * init.v;
    for t in 0..scenario.horizon {
        let mut per_lane = Vec::new();
        for lane in scenario.lanes() {
            let lane_gaps = gaps.gaps(t, lane);
            let clipped: Vec<Interval>;
            let (lane_gaps, speed) = match &reach {
                Some(r) if t > 0 => {
                    let bound = r.s[t];
                    // an empty placeholder keeps gap indices aligned
                    clipped = lane_gaps
                        .iter()
                        .map(|g| Interval { lo: g.lo.max(bound.lo), hi: g.hi.min(bound.hi) })
                        .collect();
                    (&clipped[..], (r.v[t].lo.max(params.v_min), r.v[t].hi.min(params.v_max)))
                }
                _ => (lane_gaps, (params.v_min, params.v_max)),
            };
            let movers = swappers(scenario, ego, others, t, lane);
            let pieces = if t == 0 {
                // Only the source leaves layer 0, and its position is known, so
                // the swap test is exact there.
                lane_gaps
                    .iter()
                    .enumerate()
                    .map(|(g, iv)| {
                        let near = |w: &Swapper| (init.s - w.center).abs() <= w.radius + POSITION_EPS;
                        let blocked = |from: Lane| movers.iter().any(|w| w.from == from && near(w));
                        Piece { gap: g, interval: *iv, blocked_down: blocked(lane - 1), blocked_up: blocked(lane + 1) }
                    })
                    .collect()
            } else {
                pieces_of(lane_gaps, lane, &movers, options.swap_handling)
            };
            let mut entries = Vec::new();
            for piece in pieces {
                let iv = piece.interval;
                if iv.hi < iv.lo {
                    continue;
                }
                let (c, cv) = (shift_s(t), init.v);
                let mut set = VertexSet::from_bounds(&[(iv.lo - c, iv.hi - c), (speed.0 - cv, speed.1 - cv)])?;
                if t == 0 && lane == init.lane && piece.gap == source_gap {
                    set = set.pinned(&[init.s.clamp(iv.lo, iv.hi) - c, 0.0]);
                    source = vertices.len();
                }
                entries.push((vertices.len(), piece));
                vertices.push(Vertex { set, cost: None });
                labels.push(Some(VertexLabel { t, lane, gap: entries.last().unwrap().1.gap, interval: iv }));
            }
            per_lane.push(entries);
        }
        layers.push(per_lane);
    }
    let target = vertices.len();
    vertices.push(Vertex { set: VertexSet::empty_dim(), cost: None });
    labels.push(None);

    let mut edges = Vec::new();
    for t in 0..scenario.horizon - 1 {
        for lane in scenario.lanes() {
            for (tail, piece) in &layers[t][(lane - 1) as usize] {
                let tail = *tail;
                if t == 0 && tail != source {
                    continue;
                }
                let tail_iv = piece.interval;
                for next_lane in (lane - 1)..=(lane + 1) {
                    if !scenario.has_lane(next_lane)
                        || piece.blocks(next_lane - lane)
                        || (!options.lane_changes && next_lane != lane)
                    {
                        continue;
                    }
                    for (head, head_piece) in &layers[t + 1][(next_lane - 1) as usize] {
                        if options.prune_unreachable_edges {
                            let (lo, hi) = if tail == source {
                                (init.s + dt * init.v, init.s + dt * init.v)
                            } else {
                                (tail_iv.lo + dt * params.v_min, tail_iv.hi + dt * params.v_max)
                            };
                            if !head_piece.interval.intersects(lo - POSITION_EPS, hi + POSITION_EPS) {
                                continue;
                            }
                        }
                        edges.push(Edge {
                            tail,
                            head: *head,
                            spec: transition_spec(&params, dt, init.v, next_lane, next_lane - lane),
                        });
                    }
                }
            }
        }
    }
    for lane in scenario.lanes() {
        for (v, _) in &layers[scenario.horizon - 1][(lane - 1) as usize] {
            edges.push(Edge { tail: *v, head: target, spec: terminal_spec(&params, init.v) });
        }
    }

    if options.tighten_bounds {
        tighten_bounds(&mut vertices, &mut edges, source, target, &params, dt)?;
    }
    let graph = GcsGraph::new(vertices, edges, source, target)?;
    Ok(VehicleGraph { ego, graph, labels, gaps, dt, origin: (init.s, init.v) })
}

/// An `(s, v)` box.
type StateBox = [Interval; 2];

fn hull(a: StateBox, b: StateBox) -> StateBox {
    [0, 1].map(|k| Interval { lo: a[k].lo.min(b[k].lo), hi: a[k].hi.max(b[k].hi) })
}

/// Intersection, or `None` when the boxes are apart by more than the
/// position tolerance.
fn meet(a: StateBox, b: StateBox) -> Option<StateBox> {
    let mut out = a;
    for k in 0..2 {
        let (lo, hi) = (a[k].lo.max(b[k].lo), a[k].hi.min(b[k].hi));
        if lo > hi + POSITION_EPS * (1.0 + lo.abs()) {
            return None;
        }
        out[k] = if lo <= hi { Interval { lo, hi } } else { Interval { lo: hi, hi: lo } };
    }
    Some(out)
}

/// Iterations of the forward/backward bound sweep.
const TIGHTEN_ROUNDS: usize = 2;

/// Bound propagation over the graph. Vertex ids are assumed to increase with
/// time, which is how [`build_vehicle_graph`] numbers them.
fn tighten_bounds(
    vertices: &mut [Vertex],
    edges: &mut Vec<Edge>,
    source: VertexId,
    target: VertexId,
    params: &VehicleParams,
    dt: f64,
) -> Result<(), HighwayError> {
    let n = vertices.len();
    let set_box = |v: &Vertex| -> StateBox {
        match v.set.pin() {
            Some(x) => [Interval { lo: x[0], hi: x[0] }, Interval { lo: x[1], hi: x[1] }],
            None => [0, 1].map(|k| Interval { lo: v.set.lo()[k], hi: v.set.hi()[k] }),
        }
    };
    let image = |b: StateBox| -> StateBox {
        [
            Interval { lo: b[0].lo + dt * b[1].lo, hi: b[0].hi + dt * b[1].hi },
            Interval { lo: b[1].lo + dt * params.a_min, hi: b[1].hi + dt * params.a_max },
        ]
    };
    let preimage = |head: StateBox, tail: StateBox| -> StateBox {
        [
            Interval { lo: head[0].lo - dt * tail[1].hi, hi: head[0].hi - dt * tail[1].lo },
            Interval { lo: head[1].lo - dt * params.a_max, hi: head[1].hi - dt * params.a_min },
        ]
    };
    let mut boxes: Vec<Option<StateBox>> =
        vertices.iter().enumerate().map(|(v, vert)| (v != target).then(|| set_box(vert))).collect();
    let mut alive = vec![true; edges.len()];
    let mut in_edges = vec![Vec::new(); n];
    let mut out_edges = vec![Vec::new(); n];
    for (k, e) in edges.iter().enumerate() {
        in_edges[e.head].push(k);
        out_edges[e.tail].push(k);
    }

    for _ in 0..TIGHTEN_ROUNDS {
        for w in 0..n {
            if w == source || w == target {
                continue;
            }
            let Some(own) = boxes[w] else { continue };
            let mut reached: Option<StateBox> = None;
            for &k in &in_edges[w] {
                let from = if alive[k] { boxes[edges[k].tail] } else { None };
                match from.and_then(|b| meet(image(b), own)) {
                    Some(b) => reached = Some(reached.map_or(b, |r| hull(r, b))),
                    None => alive[k] = false,
                }
            }
            boxes[w] = reached;
        }
        for u in (0..n).rev() {
            if u == target {
                continue;
            }
            let Some(own) = boxes[u] else { continue };
            let mut usable: Option<StateBox> = None;
            for &k in &out_edges[u] {
                let head = edges[k].head;
                if head == target {
                    usable = Some(own);
                    continue;
                }
                let to = if alive[k] { boxes[head] } else { None };
                match to.and_then(|b| meet(preimage(b, own), own)) {
                    Some(b) => usable = Some(usable.map_or(b, |r| hull(r, b))),
                    None => alive[k] = false,
                }
            }
            if u != source {
                boxes[u] = usable;
            } else if usable.is_none() {
                boxes[u] = None;
            }
        }
    }

    for (v, vert) in vertices.iter_mut().enumerate() {
        if v == source || v == target {
            continue;
        }
        if let Some(b) = boxes[v] {
            let bounds: Vec<(f64, f64)> = (0..2)
                .map(|k| {
                    let (lo, hi) = (vert.set.lo()[k], vert.set.hi()[k]);
                    let a = (b[k].lo - REACH_MARGIN).max(lo);
                    let z = (b[k].hi + REACH_MARGIN).min(hi);
                    (a.min(z), z.max(a))
                })
                .collect();
            vert.set = VertexSet::from_bounds(&bounds)?;
        }
    }
    let mut k = 0;
    edges.retain(|e| {
        let keep = alive[k] && boxes[e.tail].is_some() && (e.head == target || boxes[e.head].is_some());
        k += 1;
        keep
    });
    Ok(())
}

/// Dynamics, acceleration limits and stage cost for a step into `lane`
/// with blinker `b`, in coordinates relative to speed `v0`. The
/// acceleration is eliminated as `(v' - v) / dt`.
fn transition_spec(p: &VehicleParams, dt: f64, v0: f64, lane: Lane, b: Lane) -> EdgeSpec {
    let couplings = vec![
        // s' - s - dt v = 0
        Coupling { tail: vec![-1.0, -dt], head: vec![1.0, 0.0], constant: 0.0, kind: CouplingKind::Eq },
        // v' - v - a_max dt <= 0
        Coupling { tail: vec![0.0, -1.0], head: vec![0.0, 1.0], constant: -p.a_max * dt, kind: CouplingKind::Le },
        // v - v' + a_min dt <= 0
        Coupling { tail: vec![0.0, 1.0], head: vec![0.0, -1.0], constant: p.a_min * dt, kind: CouplingKind::Le },
    ];
    let w = p.weights;
    let quadratic = vec![
        QuadraticTerm { weight: w.speed, tail: vec![0.0, 0.0], head: vec![0.0, 1.0], constant: v0 - p.v_des },
        QuadraticTerm { weight: w.accel / (dt * dt), tail: vec![0.0, -1.0], head: vec![0.0, 1.0], constant: 0.0 },
    ];
    let dl = f64::from(lane - p.lane_des);
    let bb = f64::from(b);
    EdgeSpec { couplings, quadratic, constant_cost: w.lane * dl * dl + w.blinker * bb * bb }
}

fn terminal_spec(p: &VehicleParams, v0: f64) -> EdgeSpec {
    EdgeSpec {
        couplings: Vec::new(),
        quadratic: vec![QuadraticTerm {
            weight: p.weights.speed,
            tail: vec![0.0, 1.0],
            head: Vec::new(),
            constant: v0 - p.v_des,
        }],
        constant_cost: 0.0,
    }
}

impl VehicleGraph {
    /// Lane sequence of a path (virtual target dropped).
    pub fn lanes_of(&self, path: &[VertexId]) -> Vec<Lane> {
        path.iter().filter_map(|&v| self.labels[v].map(|l| l.lane)).collect()
    }

    /// Converts an absolute `(s, v)` at step `t` to vertex-set coordinates.
    pub fn to_local(&self, t: usize, s: f64, v: f64) -> [f64; 2] {
        let (s0, v0) = self.origin;
        [s - s0 - t as f64 * self.dt * v0, v - v0]
    }

    /// Inverse of [`Self::to_local`].
    pub fn to_absolute(&self, t: usize, x: &[f64]) -> (f64, f64) {
        let (s0, v0) = self.origin;
        (x[0] + s0 + t as f64 * self.dt * v0, x[1] + v0)
    }

    /// A source-to-target path whose vertex sets contain the states of
    /// `plan` and whose edges match its lane changes, if there is one.
    pub fn path_of(&self, plan: &Strategy) -> Option<Vec<VertexId>> {
        let g = &self.graph;
        let fits = |v: VertexId, t: usize| {
            self.labels[v].is_some_and(|l| {
                l.t == t && l.lane == plan.z[t] && g.vertices()[v].set.contains(&self.to_local(t, plan.s[t], plan.v[t]), 1e-7)
            })
        };
        if !fits(g.source(), 0) {
            return None;
        }
        // depth-first over matching vertices, layer by layer
        let mut stack = vec![vec![g.source()]];
        while let Some(path) = stack.pop() {
            let v = *path.last().unwrap();
            let t = path.len() - 1;
            if t + 1 == plan.horizon() {
                if g.find_edge(v, g.target()).is_some() {
                    let mut done = path;
                    done.push(g.target());
                    return Some(done);
                }
                continue;
            }
            for &k in g.out_edges(v) {
                let w = g.edges()[k].head;
                if fits(w, t + 1) {
                    let mut next = path.clone();
                    next.push(w);
                    stack.push(next);
                }
            }
        }
        None
    }
}

impl VehicleGraph {
    /// Source-to-target paths whose lanes follow `lanes` step by step, at
    /// most `limit` of them.
    pub fn paths_with_lanes(&self, lanes: &[Lane], limit: usize) -> Vec<Vec<VertexId>> {
        let g = &self.graph;
        let fits = |v: VertexId, t: usize| self.labels[v].is_some_and(|l| l.t == t && l.lane == lanes[t]);
        let mut found = Vec::new();
        if lanes.is_empty() || !fits(g.source(), 0) {
            return found;
        }
        let mut stack = vec![vec![g.source()]];
        while let Some(path) = stack.pop() {
            if found.len() >= limit {
                break;
            }
            let v = *path.last().unwrap();
            let t = path.len() - 1;
            if t + 1 == lanes.len() {
                if g.find_edge(v, g.target()).is_some() {
                    let mut done = path;
                    done.push(g.target());
                    found.push(done);
                }
                continue;
            }
            for &k in g.out_edges(v) {
                let w = g.edges()[k].head;
                if fits(w, t + 1) {
                    let mut next = path.clone();
                    next.push(w);
                    stack.push(next);
                }
            }
        }
        found
    }
}

/// Lane sequences one move away from `lanes`: a single step switched to the
/// lane of the step before or after it, or a whole excursion out of a lane
/// (and back, or until the end) replaced by staying in that lane.
pub fn lane_neighbors(lanes: &[Lane]) -> Vec<Vec<Lane>> {
    let n = lanes.len();
    let valid = |z: &[Lane]| z.windows(2).all(|w| (w[1] - w[0]).abs() <= 1);
    let mut out: Vec<Vec<Lane>> = Vec::new();
    let mut push = |z: Vec<Lane>| {
        if z != lanes && valid(&z) && !out.contains(&z) {
            out.push(z);
        }
    };
    for t in 1..n {
        for l in [Some(lanes[t - 1]), lanes.get(t + 1).copied()].into_iter().flatten() {
            if l != lanes[t] {
                let mut z = lanes.to_vec();
                z[t] = l;
                push(z);
            }
        }
    }
    let mut a = 1;
    while a < n {
        if lanes[a] == lanes[a - 1] {
            a += 1;
            continue;
        }
        let home = lanes[a - 1];
        let mut b = a;
        while b < n && lanes[b] != home {
            b += 1;
        }
        let mut z = lanes.to_vec();
        z[a..b].fill(home);
        push(z);
        a = b.max(a + 1);
    }
    out
}

/// Paths tried per lane sequence during [`improve_by_lane_search`].
const PATHS_PER_LANE_SEQUENCE: usize = 8;

/// Hill climbing over lane sequences starting from `sol.path`: every
/// neighbour from [`lane_neighbors`] is solved along each of its vertex
/// paths and the cheapest strict improvement is taken, for at most `rounds`
/// rounds. Returns the number of improvements made.
pub fn improve_by_lane_search(vg: &VehicleGraph, sol: &mut SppSolution, tol: Tolerances, rounds: usize) -> usize {
    let mut improvements = 0;
    for _ in 0..rounds {
        let lanes = vg.lanes_of(&sol.path);
        let mut best: Option<(Vec<VertexId>, crate::gcs::PathSolution)> = None;
        for z in lane_neighbors(&lanes) {
            for path in vg.paths_with_lanes(&z, PATHS_PER_LANE_SEQUENCE) {
                let Ok(fixed) = solve_fixed_path(&vg.graph, &path, tol) else { continue };
                let bar = best.as_ref().map_or(sol.rounded_value, |b| b.1.value);
                if fixed.value < bar - 1e-9 * (1.0 + bar.abs()) {
                    best = Some((path, fixed));
                }
            }
        }
        let Some((path, fixed)) = best else { break };
        log::debug!("lane search: {:.6} -> {:.6}", sol.rounded_value, fixed.value);
        sol.path = path;
        sol.vertex_states = fixed.states;
        sol.rounded_value = fixed.value;
        sol.integrality_gap = fixed.value - sol.relaxed_value;
        improvements += 1;
    }
    improvements
}

/// Decodes a solved path into a plan. Positions are re-integrated from the
/// initial state so the dynamics hold to rounding.
pub fn strategy_from_path(graph: &VehicleGraph, solution: &SppSolution) -> Strategy {
    let dt = graph.dt;
    let states: Vec<&Vec<f64>> = solution
        .path
        .iter()
        .zip(&solution.vertex_states)
        .filter(|(&v, _)| graph.labels[v].is_some())
        .map(|(_, x)| x)
        .collect();
    let lanes = graph.lanes_of(&solution.path);
    let v: Vec<f64> = states.iter().enumerate().map(|(t, x)| graph.to_absolute(t, x).1).collect();
    let mut s = vec![graph.to_absolute(0, states[0]).0];
    for t in 0..v.len() - 1 {
        s.push(s[t] + dt * v[t]);
    }
    let a = v.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    let b = lanes.windows(2).map(|w| w[1] - w[0]).collect();
    Strategy { s, v, z: lanes, a, b }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Same-lane separation.
    Separation,
    /// Side-by-side lane swap.
    Swap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub rule: Rule,
    pub i: VehicleId,
    pub j: VehicleId,
    pub t: usize,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.rule {
            Rule::Separation => "Rule 1 (same-lane separation)",
            Rule::Swap => "Rule 2 (side-by-side swap)",
        };
        write!(f, "{name}: vehicles {} and {} at t={}", self.i, self.j, self.t)
    }
}

/// All Rule 1 / Rule 2 violations over ordered vehicle pairs. Empty means the
/// profile is jointly feasible.
pub fn validate_profile(scenario: &Scenario, profile: &Profile) -> Vec<Violation> {
    let n = profile.len();
    let mut out = Vec::new();
    for i in 0..n {
        let d_i = scenario.vehicles[i].d_safe;
        let si = &profile.strategies[i];
        for j in 0..n {
            if i == j {
                continue;
            }
            let sj = &profile.strategies[j];
            for t in 0..si.horizon() {
                let d = sj.s[t] - si.s[t];
                let dz = sj.z[t] - si.z[t];
                if dz == 0 && d.abs() < d_i - POSITION_EPS {
                    out.push(Violation { rule: Rule::Separation, i, j, t });
                }
                if t + 1 < si.horizon()
                    && d.abs() <= d_i
                    && dz.abs() == 1
                    && si.z[t + 1] == sj.z[t]
                    && sj.z[t + 1] == si.z[t]
                {
                    out.push(Violation { rule: Rule::Swap, i, j, t });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(d_safe: f64) -> VehicleParams {
        VehicleParams {
            v_min: 0.0,
            v_max: 40.0,
            a_min: -5.0,
            a_max: 3.0,
            d_safe,
            v_des: 20.0,
            lane_des: 1,
            weights: Weights { speed: 1.0, lane: 1.0, accel: 1.0, blinker: 1.0 },
        }
    }

    fn hold(s: f64, v: f64, lane: Lane, t_len: usize, dt: f64) -> Strategy {
        Strategy::rollout(InitialState { s, v, lane }, dt, &vec![0.0; t_len - 1], &vec![0; t_len - 1])
    }

    fn scenario(n: usize, lanes: u32, t_len: usize, init: Vec<InitialState>) -> Scenario {
        Scenario::new((0.0, 500.0), lanes, t_len, 1.0, vec![params(20.0); n], init).unwrap()
    }

    #[test]
    fn empty_lane_is_one_gap() {
        let sc = scenario(1, 2, 3, vec![InitialState { s: 0.0, v: 20.0, lane: 1 }]);
        let gaps = build_safe_gaps(&sc, 0, &[]);
        assert_eq!(gaps.gaps(1, 2), &[Interval { lo: 0.0, hi: 500.0 }]);
    }

    #[test]
    fn single_vehicle_splits_lane() {
        assert_eq!(
            complement_in(0.0, 500.0, vec![(80.0, 120.0)]),
            vec![Interval { lo: 0.0, hi: 80.0 }, Interval { lo: 120.0, hi: 500.0 }]
        );
    }

    #[test]
    fn overlapping_unsafe_intervals_merge() {
        assert_eq!(
            complement_in(0.0, 500.0, vec![(110.0, 150.0), (80.0, 120.0)]),
            vec![Interval { lo: 0.0, hi: 80.0 }, Interval { lo: 150.0, hi: 500.0 }]
        );
    }

    #[test]
    fn touching_intervals_leave_a_point() {
        let g = complement_in(0.0, 500.0, vec![(60.0, 100.0), (100.0, 140.0)]);
        assert_eq!(g.len(), 3);
        assert_eq!(g[1], Interval { lo: 100.0, hi: 100.0 });
    }

    #[test]
    fn unsafe_at_road_ends() {
        assert_eq!(complement_in(0.0, 500.0, vec![(-20.0, 20.0)]), vec![Interval { lo: 20.0, hi: 500.0 }]);
        assert_eq!(complement_in(0.0, 500.0, vec![(480.0, 520.0)]), vec![Interval { lo: 0.0, hi: 480.0 }]);
        assert!(complement_in(0.0, 500.0, vec![(-1.0, 501.0)]).is_empty());
        // open interval ending exactly at the road start keeps that point
        assert_eq!(
            complement_in(0.0, 500.0, vec![(-40.0, 0.0)]),
            vec![Interval { lo: 0.0, hi: 500.0 }]
        );
    }

    #[test]
    fn gaps_from_strategies() {
        let init = vec![InitialState { s: 0.0, v: 20.0, lane: 1 }, InitialState { s: 100.0, v: 0.0, lane: 1 }];
        let sc = scenario(2, 1, 3, init);
        let other = hold(100.0, 0.0, 1, 3, 1.0);
        let gaps = build_safe_gaps(&sc, 0, &[(1, &other)]);
        assert_eq!(gaps.gaps(2, 1), &[Interval { lo: 0.0, hi: 80.0 }, Interval { lo: 120.0, hi: 500.0 }]);
    }

    #[test]
    fn empty_road_graph_counts() {
        let sc = scenario(1, 2, 3, vec![InitialState { s: 0.0, v: 20.0, lane: 1 }]);
        let vg = build_vehicle_graph(&sc, 0, &[], GraphOptions::default()).unwrap();
        assert_eq!(vg.graph.vertices().len(), 7);
        assert_eq!(vg.graph.edges().len(), 8);
    }

    #[test]
    fn start_inside_unsafe_region_is_rejected() {
        let init = vec![InitialState { s: 0.0, v: 20.0, lane: 1 }, InitialState { s: 100.0, v: 20.0, lane: 2 }];
        let sc = scenario(2, 2, 3, init);
        // the other vehicle's plan sits on the ego's start position
        let other = hold(5.0, 20.0, 1, 3, 1.0);
        let err = build_vehicle_graph(&sc, 0, &[(1, &other)], GraphOptions::default()).unwrap_err();
        assert!(matches!(err, HighwayError::InfeasibleStart { vehicle: 0, .. }));
    }

    #[test]
    fn crossing_swap_removes_lane_change_edge() {
        // ego in lane 1 at s = 100; j side by side in lane 2 moving to lane 1 at t = 1
        let init = vec![InitialState { s: 100.0, v: 20.0, lane: 1 }, InitialState { s: 105.0, v: 20.0, lane: 2 }];
        let sc = scenario(2, 2, 4, init);
        let other = Strategy::rollout(init_of(&sc, 1), 1.0, &[0.0, 0.0, 0.0], &[0, -1, 0]);
        let opts = GraphOptions { clip_to_reachable: false, tighten_bounds: false, ..GraphOptions::default() };
        let vg = build_vehicle_graph(&sc, 0, &[(1, &other)], opts).unwrap();
        let lane_change_at = |t: usize| {
            vg.graph.edges().iter().any(|e| match (vg.labels[e.tail], vg.labels[e.head]) {
                (Some(a), Some(b)) => a.t == t && a.lane == 1 && b.lane == 2,
                _ => false,
            })
        };
        assert!(!lane_change_at(1));
        assert!(lane_change_at(0));
        assert!(lane_change_at(2));
    }

    #[test]
    fn lane_keeping_graph_has_no_lane_change_edges() {
        let init = vec![InitialState { s: 100.0, v: 20.0, lane: 1 }];
        let sc = scenario(1, 3, 5, init);
        let opts = GraphOptions { lane_changes: false, ..GraphOptions::default() };
        let vg = build_vehicle_graph(&sc, 0, &[], opts).unwrap();
        for e in vg.graph.edges() {
            if let (Some(a), Some(b)) = (vg.labels[e.tail], vg.labels[e.head]) {
                assert_eq!(a.lane, b.lane);
            }
        }
        assert!(vg.graph.edges().iter().any(|e| e.head == vg.graph.target()));
    }

    #[test]
    fn lane_neighbors_shift_and_drop_excursions() {
        let n = lane_neighbors(&[1, 1, 2, 2, 1]);
        // step 1 moves up early, step 2 or 3 stays low, step 4 stays high
        assert!(n.contains(&vec![1, 2, 2, 2, 1]));
        assert!(n.contains(&vec![1, 1, 1, 2, 1]));
        assert!(n.contains(&vec![1, 1, 2, 1, 1]));
        assert!(n.contains(&vec![1, 1, 2, 2, 2]));
        assert!(n.contains(&vec![1, 1, 1, 1, 1]));
        assert!(n.iter().all(|z| z[0] == 1 && z.windows(2).all(|w| (w[1] - w[0]).abs() <= 1)));
        assert!(lane_neighbors(&[2]).is_empty());
        assert!(lane_neighbors(&[1, 3]).is_empty() || lane_neighbors(&[1, 3]).iter().all(|z| z[0] == 1));
    }

    #[test]
    fn paths_with_lanes_follow_the_sequence() {
        let init = vec![InitialState { s: 100.0, v: 20.0, lane: 1 }];
        let sc = scenario(1, 2, 4, init);
        let vg = build_vehicle_graph(&sc, 0, &[], GraphOptions::default()).unwrap();
        let want = [1, 2, 2, 1];
        let paths = vg.paths_with_lanes(&want, 10);
        assert_eq!(paths.len(), 1);
        assert_eq!(vg.lanes_of(&paths[0]), want.to_vec());
        assert_eq!(*paths[0].last().unwrap(), vg.graph.target());
        assert!(vg.paths_with_lanes(&[2, 2, 2, 2], 10).is_empty());
    }

    fn init_of(sc: &Scenario, i: usize) -> InitialState {
        sc.initial_states()[i]
    }

    #[test]
    fn cost_of_perfect_tracking_is_zero() {
        let p = params(10.0);
        let st = hold(0.0, 20.0, 1, 5, 0.5);
        assert_eq!(cost_j(&p, &st), 0.0);
    }

    #[test]
    fn cost_hand_example() {
        // T = 2, v = (10, 12), v_des = 10, lane 1 everywhere, unit weights:
        // stage 2^2 + 2^2 = 8, terminal 2^2 = 4
        let mut p = params(10.0);
        p.v_des = 10.0;
        let st = Strategy { s: vec![0.0, 10.0], v: vec![10.0, 12.0], z: vec![1, 1], a: vec![2.0], b: vec![0] };
        assert_eq!(cost_j(&p, &st), 12.0);
        let mut p2 = p;
        p2.weights = p.weights.scaled(2.0);
        assert_eq!(cost_j(&p2, &st), 24.0);
    }

    #[test]
    fn validate_different_lanes_ok() {
        let init = vec![InitialState { s: 0.0, v: 20.0, lane: 1 }, InitialState { s: 0.0, v: 20.0, lane: 2 }];
        let sc = scenario(2, 2, 4, init);
        let prof = Profile::new(vec![hold(0.0, 20.0, 1, 4, 1.0), hold(0.0, 20.0, 2, 4, 1.0)]);
        assert!(validate_profile(&sc, &prof).is_empty());
    }

    #[test]
    fn validate_exact_separation_ok() {
        let init = vec![InitialState { s: 0.0, v: 20.0, lane: 1 }, InitialState { s: 20.0, v: 20.0, lane: 1 }];
        let sc = scenario(2, 1, 4, init);
        let prof = Profile::new(vec![hold(0.0, 20.0, 1, 4, 1.0), hold(20.0, 20.0, 1, 4, 1.0)]);
        assert!(validate_profile(&sc, &prof).is_empty());
        let close = Profile::new(vec![hold(0.0, 20.0, 1, 4, 1.0), hold(19.0, 20.0, 1, 4, 1.0)]);
        assert_eq!(validate_profile(&sc, &close).len(), 2 * 4);
    }

    #[test]
    fn validate_flags_crossing_swap_twice() {
        let init = vec![InitialState { s: 0.0, v: 20.0, lane: 1 }, InitialState { s: 5.0, v: 20.0, lane: 2 }];
        let sc = scenario(2, 2, 2, init);
        let a = Strategy::rollout(init_of(&sc, 0), 1.0, &[0.0], &[1]);
        let b = Strategy::rollout(init_of(&sc, 1), 1.0, &[0.0], &[-1]);
        let v = validate_profile(&sc, &Profile::new(vec![a, b]));
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().all(|x| x.rule == Rule::Swap && x.t == 0));
    }

    #[test]
    fn scenario_validation_messages() {
        let mut p = params(20.0);
        p.v_max = 30.0;
        let err = Scenario::new((0.0, 500.0), 2, 4, 1.0, vec![p], vec![InitialState { s: 0.0, v: 35.0, lane: 1 }])
            .unwrap_err();
        assert!(err.to_string().contains("v0"), "{err}");
        let err = Scenario::new(
            (0.0, 500.0),
            2,
            4,
            1.0,
            vec![params(20.0); 2],
            vec![InitialState { s: 0.0, v: 20.0, lane: 1 }, InitialState { s: 10.0, v: 20.0, lane: 1 }],
        )
        .unwrap_err();
        assert!(err.to_string().contains("Rule 1"), "{err}");
        assert!(Scenario::new((0.0, 500.0), 2, 1, 1.0, vec![], vec![]).is_err());
    }

    #[test]
    fn constant_hold_is_valid() {
        let sc = scenario(1, 2, 6, vec![InitialState { s: 0.0, v: 20.0, lane: 2 }]);
        let st = Strategy::constant_hold(&sc, 0);
        assert!(st.violations(&sc, &sc.vehicles()[0]).is_empty());
        assert!(st.b.iter().all(|&b| b == 0));
    }
}
