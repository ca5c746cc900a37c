//! Iterative best response over the highway game.
//!
//! The game has potential `Φ = Σ J_i`, so a unilateral change by vehicle `i`
//! moves `Φ` by exactly the change in `J_i`. Each best response is solved as
//! a shortest path on the vehicle's graph of convex sets; its relaxed value
//! `L` and rounded value `U` bracket the true optimum, which gives certified
//! per-update errors `U - L` and regret intervals.

use std::time::Instant;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::gcs::{solve_fixed_path, solve_spp, SppConfig};
use crate::highway::{
    build_vehicle_graph, cost_j, improve_by_lane_search, strategy_from_path, validate_profile, GraphOptions, HighwayError, Profile,
    Scenario, Strategy, VehicleId, Violation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Vehicles best-respond one at a time to the plans already made, trying
    /// several planning orders until one succeeds. If none does, falls back to
    /// [`Initialization::ConstantHold`] when that is feasible, and otherwise
    /// plans front to back with every vehicle keeping its lane.
    #[default]
    Prioritized,
    /// Every vehicle keeps its lane and initial speed.
    ConstantHold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    #[default]
    Ascending,
    /// A fresh permutation per sweep drawn from a seeded generator.
    Shuffled { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Termination {
    /// Stop once a sweep changes the potential by less than `eps`.
    #[default]
    PotentialChange,
    /// Additionally require every certified regret upper bound below `eps`.
    Regret,
}

/// Settings shared by every best-response solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseConfig {
    pub spp: SppConfig,
    pub graph: GraphOptions,
    /// Rounds of lane-sequence local search after a loose relaxation; 0 disables it.
    pub lane_search_rounds: usize,
}

impl Default for ResponseConfig {
    fn default() -> Self {
        Self { spp: SppConfig::default(), graph: GraphOptions::default(), lane_search_rounds: 30 }
    }
}

/// Upper bound on the planning orders prioritized initialization tries.
pub const MAX_PLANNING_ORDERS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbrConfig {
    pub max_sweeps: usize,
    pub eps: f64,
    pub initialization: Initialization,
    pub update_order: UpdateOrder,
    pub termination: Termination,
    pub response: ResponseConfig,
}

impl Default for IbrConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 20,
            eps: 1e-6,
            initialization: Initialization::default(),
            update_order: UpdateOrder::default(),
            termination: Termination::default(),
            response: ResponseConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("initialization failed at vehicle {vehicle}: {source}")]
    Initialization {
        vehicle: VehicleId,
        #[source]
        source: HighwayError,
    },
    #[error("initial profile violates the safety rules: {}", .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InfeasibleInitialProfile(Vec<Violation>),
    #[error("best response of vehicle {vehicle} in sweep {sweep} failed: {source}")]
    Update {
        sweep: usize,
        vehicle: VehicleId,
        #[source]
        source: HighwayError,
        partial: Box<IbrReport>,
    },
    #[error("certification of vehicle {vehicle} failed: {source}")]
    Certification {
        vehicle: VehicleId,
        #[source]
        source: HighwayError,
    },
}

/// Outcome of one best-response solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseRecord {
    pub vehicle: VehicleId,
    /// Lower bound `L` on the best-response value.
    pub relaxed_value: f64,
    /// Cost `U` of the returned plan.
    pub rounded_value: f64,
    pub tight: bool,
    pub max_fractionality: f64,
    /// Whether the path came from exhaustive enumeration.
    pub enumerated: bool,
    pub vertices: usize,
    pub edges: usize,
    /// Largest flow-conservation or `y` definition residual of the relaxation.
    pub flow_residual: f64,
}

impl ResponseRecord {
    /// Certified bound `U - L` on the best-response error.
    pub fn eps_bound(&self) -> f64 {
        (self.rounded_value - self.relaxed_value).max(0.0)
    }
}

/// Solves vehicle `ego`'s best response against fixed plans of `others`.
pub fn best_response(
    scenario: &Scenario,
    ego: VehicleId,
    others: &[(VehicleId, &Strategy)],
    config: &ResponseConfig,
) -> Result<(Strategy, ResponseRecord), HighwayError> {
    let vg = build_vehicle_graph(scenario, ego, others, config.graph)?;
    let mut sol = solve_spp(&vg.graph, &config.spp)?;
    if !sol.tight && !sol.enumerated {
        improve_by_lane_search(&vg, &mut sol, config.spp.tolerances, config.lane_search_rounds);
    }
    let strategy = strategy_from_path(&vg, &sol);
    let record = ResponseRecord {
        vehicle: ego,
        relaxed_value: sol.relaxed_value.min(sol.rounded_value),
        rounded_value: sol.rounded_value,
        tight: sol.tight,
        max_fractionality: sol.max_fractionality,
        enumerated: sol.enumerated,
        vertices: vg.graph.vertices().len(),
        edges: vg.graph.edges().len(),
        flow_residual: sol.flow_residuals.conservation.max(sol.flow_residuals.y_definition),
    };
    Ok((strategy, record))
}

/// `Φ(θ) = Σ_i J_i(θ_i)`.
pub fn potential(scenario: &Scenario, profile: &Profile) -> f64 {
    scenario.vehicles().iter().zip(&profile.strategies).map(|(p, s)| cost_j(p, s)).sum()
}

/// One best-response update inside a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub sweep: usize,
    pub response: ResponseRecord,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Potential of the intermediate profile right after this update.
    pub potential_after: f64,
}

/// Certified regret bracket of one vehicle at a fixed profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegretInterval {
    pub vehicle: VehicleId,
    pub cost: f64,
    pub lower: f64,
    pub upper: f64,
    pub response: ResponseRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub regrets: Vec<RegretInterval>,
    /// The profile is an `eps_gne_bound`-GNE.
    pub eps_gne_bound: f64,
}

/// Brackets each vehicle's regret with one best response per vehicle:
/// `[max(0, J_i - U_i), J_i - L_i]`.
pub fn certify_eps_gne(scenario: &Scenario, profile: &Profile, config: &ResponseConfig) -> Result<Certificate, GameError> {
    let mut regrets = Vec::with_capacity(profile.len());
    for (i, params) in scenario.vehicles().iter().enumerate() {
        let others = profile.others(i);
        let (_, response) = best_response(scenario, i, &others, config)
            .map_err(|source| GameError::Certification { vehicle: i, source })?;
        let cost = cost_j(params, &profile.strategies[i]);
        let lower = (cost - response.rounded_value).max(0.0);
        let upper = (cost - response.relaxed_value).max(lower);
        regrets.push(RegretInterval { vehicle: i, cost, lower, upper, response });
    }
    let eps_gne_bound = regrets.iter().map(|r| r.upper).fold(0.0, f64::max);
    Ok(Certificate { regrets, eps_gne_bound })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IbrReport {
    pub initial_profile: Profile,
    /// `Φ(θ^0), Φ(θ^1), ...`: one entry per completed sweep plus the start.
    pub potential_per_sweep: Vec<f64>,
    /// Records of the initialization solves (prioritized mode only).
    pub initialization_records: Vec<ResponseRecord>,
    pub updates: Vec<UpdateRecord>,
    pub certificate: Option<Certificate>,
    pub converged: bool,
    pub sweeps_used: usize,
    pub wall_clock_seconds: f64,
}

impl IbrReport {
    pub fn max_update_eps(&self) -> f64 {
        self.updates.iter().map(|u| u.response.eps_bound()).fold(0.0, f64::max)
    }

    pub fn eps_gne_bound(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.eps_gne_bound)
    }

    /// Largest increase of the potential from one sweep to the next.
    pub fn max_potential_increase(&self) -> f64 {
        self.potential_per_sweep.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Builds `θ^0` according to the configured initialization mode.
pub fn initialize(scenario: &Scenario, config: &IbrConfig) -> Result<(Profile, Vec<ResponseRecord>), GameError> {
    let n = scenario.num_vehicles();
    let (profile, records) = match config.initialization {
        Initialization::ConstantHold => {
            (Profile::new((0..n).map(|i| Strategy::constant_hold(scenario, i)).collect()), Vec::new())
        }
        Initialization::Prioritized => {
            let mut first_error = None;
            let mut done = None;
            for order in planning_orders(scenario) {
                match prioritized(scenario, &order, &config.response) {
                    Ok(ok) => {
                        done = Some(ok);
                        break;
                    }
                    Err(e) => {
                        debug!("prioritized initialization in order {order:?} failed: {e}");
                        first_error.get_or_insert(e);
                    }
                }
            }
            match (done, first_error) {
                (Some(ok), _) => ok,
                (None, Some(e)) => {
                    let hold = Profile::new((0..n).map(|i| Strategy::constant_hold(scenario, i)).collect());
                    if validate_profile(scenario, &hold).is_empty() {
                        debug!("no planning order succeeded, falling back to constant hold");
                        (hold, Vec::new())
                    } else {
                        // front to back, nobody leaving its lane: each vehicle
                        // only has to follow the one ahead
                        let mut keep = config.response;
                        keep.graph.lane_changes = false;
                        let order = front_to_back(scenario);
                        debug!("no planning order succeeded, planning lane keeping in order {order:?}");
                        prioritized(scenario, &order, &keep).map_err(|_| e)?
                    }
                }
                (None, None) => (Profile::new(Vec::new()), Vec::new()),
            }
        }
    };
    let violations = validate_profile(scenario, &profile);
    if !violations.is_empty() {
        return Err(GameError::InfeasibleInitialProfile(violations));
    }
    Ok((profile, records))
}

/// Vehicles by decreasing initial position, ties by index.
fn front_to_back(scenario: &Scenario) -> Vec<VehicleId> {
    let mut order: Vec<VehicleId> = (0..scenario.num_vehicles()).collect();
    order.sort_by(|&a, &b| {
        let (xa, xb) = (&scenario.initial_states()[a], &scenario.initial_states()[b]);
        xb.s.total_cmp(&xa.s).then(a.cmp(&b))
    });
    order
}

/// Orders tried by prioritized initialization: index order, front to back,
/// back to front, then the remaining permutations in lexicographic order, at
/// most [`MAX_PLANNING_ORDERS`] in total.
fn planning_orders(scenario: &Scenario) -> Vec<Vec<VehicleId>> {
    let n = scenario.num_vehicles();
    let by_index: Vec<VehicleId> = (0..n).collect();
    let front_to_back = front_to_back(scenario);
    let back_to_front: Vec<VehicleId> = front_to_back.iter().rev().copied().collect();
    let mut orders = vec![by_index.clone()];
    let push = |o: Vec<VehicleId>, orders: &mut Vec<Vec<VehicleId>>| {
        if orders.len() < MAX_PLANNING_ORDERS && !orders.contains(&o) {
            orders.push(o);
        }
    };
    push(front_to_back, &mut orders);
    push(back_to_front, &mut orders);
    let mut perm = by_index;
    while next_permutation(&mut perm) && orders.len() < MAX_PLANNING_ORDERS {
        push(perm.clone(), &mut orders);
    }
    orders
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("a larger element exists");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Plans vehicles one at a time in `order`, each against the plans already
/// made. Records come back in vehicle index order.
fn prioritized(
    scenario: &Scenario,
    order: &[VehicleId],
    response: &ResponseConfig,
) -> Result<(Profile, Vec<ResponseRecord>), GameError> {
    let mut planned: Vec<Option<(Strategy, ResponseRecord)>> = order.iter().map(|_| None).collect();
    for &i in order {
        let others: Vec<(VehicleId, &Strategy)> =
            planned.iter().enumerate().filter_map(|(j, p)| p.as_ref().map(|(st, _)| (j, st))).collect();
        let done = best_response(scenario, i, &others, response)
            .map_err(|source| GameError::Initialization { vehicle: i, source })?;
        planned[i] = Some(done);
    }
    let (strategies, records) = planned.into_iter().map(|p| p.expect("every vehicle is planned")).unzip();
    Ok((Profile::new(strategies), records))
}

fn incumbent_diagnosis(scenario: &Scenario, i: VehicleId, profile: &Profile, response: &ResponseConfig) -> String {
    let Ok(vg) = build_vehicle_graph(scenario, i, &profile.others(i), response.graph) else {
        return "graph rebuild failed".into();
    };
    match vg.path_of(&profile.strategies[i]) {
        Some(path) => match solve_fixed_path(&vg.graph, &path, response.spp.tolerances) {
            Ok(sol) => format!("current plan is a path of the graph, re-solved cost {:.6}", sol.value),
            Err(e) => format!("current plan is a path of the graph, re-solve failed: {e}"),
        },
        None => "current plan is not a path of the graph".into(),
    }
}

/// Runs iterative best response from `θ^0` until the potential settles or
/// the sweep budget runs out, then certifies the final profile.
pub fn ibr_run(scenario: &Scenario, config: &IbrConfig) -> Result<(Profile, IbrReport), GameError> {
    if config.max_sweeps < 1 {
        return Err(GameError::InvalidConfig("max_sweeps must be at least 1".into()));
    }
    if !(config.eps > 0.0) {
        return Err(GameError::InvalidConfig(format!("eps must be positive, got {}", config.eps)));
    }
    let started = Instant::now();
    let (mut profile, initialization_records) = initialize(scenario, config)?;
    let n = scenario.num_vehicles();
    let mut report = IbrReport {
        initial_profile: profile.clone(),
        potential_per_sweep: vec![potential(scenario, &profile)],
        initialization_records,
        updates: Vec::new(),
        certificate: None,
        converged: false,
        sweeps_used: 0,
        wall_clock_seconds: 0.0,
    };
    let mut rng = match config.update_order {
        UpdateOrder::Shuffled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        UpdateOrder::Ascending => None,
    };

    for sweep in 0..config.max_sweeps {
        let mut order: Vec<VehicleId> = (0..n).collect();
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &i in &order {
            let others = profile.others(i);
            let (st, response) = match best_response(scenario, i, &others, &config.response) {
                Ok(r) => r,
                Err(source) => {
                    log::debug!("sweep {sweep} vehicle {i} failed: {}", incumbent_diagnosis(scenario, i, &profile, &config.response));
                    report.sweeps_used = sweep;
                    report.wall_clock_seconds = started.elapsed().as_secs_f64();
                    return Err(GameError::Update { sweep, vehicle: i, source, partial: Box::new(report) });
                }
            };
            let params = &scenario.vehicles()[i];
            let cost_before = cost_j(params, &profile.strategies[i]);
            let cost_after = cost_j(params, &st);
            if cost_after > cost_before + 1e-6 * (1.0 + cost_before.abs()) {
                log::debug!(
                    "sweep {sweep} vehicle {i}: response costs more than the current plan ({}); lanes now {:?}, response {:?}",
                    incumbent_diagnosis(scenario, i, &profile, &config.response),
                    profile.strategies[i].z,
                    st.z
                );
            }
            profile.strategies[i] = st;
            let potential_after = potential(scenario, &profile);
            log::debug!(
                "sweep {sweep} vehicle {i}: J {cost_before:.6} -> {cost_after:.6}, L {:.6}, tight {}",
                response.relaxed_value,
                response.tight
            );
            report.updates.push(UpdateRecord { sweep, response, cost_before, cost_after, potential_after });
        }
        let phi = potential(scenario, &profile);
        let delta = (phi - report.potential_per_sweep.last().unwrap()).abs();
        report.potential_per_sweep.push(phi);
        report.sweeps_used = sweep + 1;
        log::info!("sweep {sweep}: potential {phi:.6} (change {delta:.3e})");
        if delta < config.eps {
            if config.termination == Termination::Regret {
                let cert = certify_eps_gne(scenario, &profile, &config.response)?;
                let done = cert.eps_gne_bound < config.eps;
                report.certificate = Some(cert);
                if !done {
                    continue;
                }
            }
            report.converged = true;
            break;
        }
    }

    if report.certificate.is_none() || !report.converged {
        report.certificate = Some(certify_eps_gne(scenario, &profile, &config.response)?);
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok((profile, report))
}

/// The profile vehicle `vehicle` best-responds to in sweep `sweep` under
/// ascending update order: `θ^sweep` with vehicles `0..vehicle` already
/// updated. Runs that converge earlier keep updating from their final profile.
pub fn profile_at_update(
    scenario: &Scenario,
    config: &IbrConfig,
    sweep: usize,
    vehicle: VehicleId,
) -> Result<Profile, GameError> {
    if config.update_order != UpdateOrder::Ascending {
        return Err(GameError::InvalidConfig("profile reconstruction needs ascending update order".into()));
    }
    if vehicle >= scenario.num_vehicles() {
        return Err(GameError::InvalidConfig(format!(
            "vehicle {vehicle} does not exist, the scenario has {}",
            scenario.num_vehicles()
        )));
    }
    let mut profile = if sweep == 0 {
        initialize(scenario, config)?.0
    } else {
        ibr_run(scenario, &IbrConfig { max_sweeps: sweep, ..*config })?.0
    };
    for i in 0..vehicle {
        let (st, _) = best_response(scenario, i, &profile.others(i), &config.response)
            .map_err(|source| GameError::Update { sweep, vehicle: i, source, partial: Box::new(empty_report(&profile)) })?;
        profile.strategies[i] = st;
    }
    Ok(profile)
}

fn empty_report(profile: &Profile) -> IbrReport {
    IbrReport {
        initial_profile: profile.clone(),
        potential_per_sweep: Vec::new(),
        initialization_records: Vec::new(),
        updates: Vec::new(),
        certificate: None,
        converged: false,
        sweeps_used: 0,
        wall_clock_seconds: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::highway::{InitialState, Lane, VehicleParams, Weights};

    fn params(v_des: f64, lane_des: Lane) -> VehicleParams {
        VehicleParams {
            v_min: 0.0,
            v_max: 40.0,
            a_min: -5.0,
            a_max: 3.0,
            d_safe: 10.0,
            v_des,
            lane_des,
            weights: Weights { speed: 1.0, lane: 1.0, accel: 1.0, blinker: 1.0 },
        }
    }

    #[test]
    fn lone_vehicle_at_its_targets_costs_nothing() {
        let sc = Scenario::new((0.0, 500.0), 2, 5, 1.0, vec![params(20.0, 2)], vec![InitialState {
            s: 0.0,
            v: 20.0,
            lane: 2,
        }])
        .unwrap();
        let (st, rec) = best_response(&sc, 0, &[], &ResponseConfig::default()).unwrap();
        assert!(rec.rounded_value.abs() < 1e-6, "{rec:?}");
        assert!(rec.tight);
        assert!(st.a.iter().all(|a| a.abs() < 1e-6));
        assert!(st.b.iter().all(|&b| b == 0));
    }

    #[test]
    fn potential_sums_costs() {
        let sc = Scenario::new(
            (0.0, 500.0),
            1,
            2,
            1.0,
            vec![params(10.0, 1), params(10.0, 1)],
            vec![InitialState { s: 0.0, v: 10.0, lane: 1 }, InitialState { s: 50.0, v: 10.0, lane: 1 }],
        )
        .unwrap();
        // speeds (10, 12) cost 4 + 4 + 4; speeds (10, 11) cost 1 + 1 + 1
        let a = Strategy::rollout(sc.initial_states()[0], 1.0, &[2.0], &[0]);
        let b = Strategy::rollout(sc.initial_states()[1], 1.0, &[1.0], &[0]);
        assert_eq!(cost_j(&sc.vehicles()[0], &a), 12.0);
        assert_eq!(cost_j(&sc.vehicles()[1], &b), 3.0);
        assert_eq!(potential(&sc, &Profile::new(vec![a, b])), 15.0);
    }

    #[test]
    fn single_vehicle_converges_in_one_sweep() {
        let sc = Scenario::new((0.0, 500.0), 3, 6, 0.5, vec![params(25.0, 3)], vec![InitialState {
            s: 0.0,
            v: 20.0,
            lane: 1,
        }])
        .unwrap();
        let (profile, report) = ibr_run(&sc, &IbrConfig::default()).unwrap();
        assert!(report.converged);
        assert_eq!(report.sweeps_used, 1);
        let (_, rec) = best_response(&sc, 0, &[], &ResponseConfig::default()).unwrap();
        assert!((potential(&sc, &profile) - rec.rounded_value).abs() < 1e-9);
        assert!(report.eps_gne_bound().unwrap() < 1e-6);
    }

    #[test]
    fn forced_slowdown_has_regret() {
        // vehicle held 1 m/s below its desired speed for one step
        let sc = Scenario::new((0.0, 500.0), 1, 3, 1.0, vec![params(20.0, 1)], vec![InitialState {
            s: 0.0,
            v: 20.0,
            lane: 1,
        }])
        .unwrap();
        let slow = Strategy::rollout(sc.initial_states()[0], 1.0, &[-1.0, 1.0], &[0, 0]);
        let cert = certify_eps_gne(&sc, &Profile::new(vec![slow]), &ResponseConfig::default()).unwrap();
        let r = cert.regrets[0];
        assert!(r.upper >= 1.0, "{r:?}");
        assert!(r.lower <= r.upper);
    }

    #[test]
    fn rejects_bad_config() {
        let sc = Scenario::new((0.0, 500.0), 1, 3, 1.0, vec![params(20.0, 1)], vec![InitialState {
            s: 0.0,
            v: 20.0,
            lane: 1,
        }])
        .unwrap();
        let cfg = IbrConfig { max_sweeps: 0, ..IbrConfig::default() };
        assert!(matches!(ibr_run(&sc, &cfg), Err(GameError::InvalidConfig(_))));
        let cfg = IbrConfig { eps: 0.0, ..IbrConfig::default() };
        assert!(matches!(ibr_run(&sc, &cfg), Err(GameError::InvalidConfig(_))));
    }

    #[test]
    fn constant_hold_collision_is_reported() {
        // the rear vehicle is faster and catches up
        let sc = Scenario::new(
            (0.0, 500.0),
            1,
            5,
            1.0,
            vec![params(20.0, 1), params(20.0, 1)],
            vec![InitialState { s: 0.0, v: 30.0, lane: 1 }, InitialState { s: 15.0, v: 20.0, lane: 1 }],
        )
        .unwrap();
        let cfg = IbrConfig { initialization: Initialization::ConstantHold, ..IbrConfig::default() };
        assert!(matches!(ibr_run(&sc, &cfg), Err(GameError::InfeasibleInitialProfile(_))));
    }
}
