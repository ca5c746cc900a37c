//! Shared helpers for the integration tests: tiny random instances and an
//! exhaustive oracle for the single-vehicle planning problem that does not
//! touch the graph code.

#![allow(dead_code)]

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ibr_gcs::highway::{InitialState, Lane, Scenario, Strategy, VehicleParams, Weights};

/// A tiny planning instance: vehicle 0 plans against vehicle 1's fixed plan
/// (if there is a vehicle 1).
pub struct TinyInstance {
    pub scenario: Scenario,
    pub other: Option<Strategy>,
}

impl TinyInstance {
    pub fn others(&self) -> Vec<(usize, &Strategy)> {
        self.other.iter().map(|s| (1, s)).collect()
    }
}

pub fn random_params(rng: &mut ChaCha8Rng, lanes: u32) -> VehicleParams {
    VehicleParams {
        v_min: 0.0,
        v_max: 40.0,
        a_min: -6.0,
        a_max: 3.0,
        d_safe: 10.0,
        v_des: rng.gen_range(15.0..35.0),
        lane_des: rng.gen_range(1..=lanes as Lane),
        weights: Weights {
            speed: rng.gen_range(0.1..1.0),
            lane: rng.gen_range(1.0..25.0),
            accel: rng.gen_range(0.1..0.5),
            blinker: rng.gen_range(1.0..10.0),
        },
    }
}

/// Random plan from `init` whose speed stays inside `[v_min, v_max]` and
/// whose lane stays on the road.
pub fn random_plan(
    rng: &mut ChaCha8Rng,
    init: InitialState,
    p: &VehicleParams,
    lanes: u32,
    horizon: usize,
    dt: f64,
    change_prob: f64,
) -> Strategy {
    let mut v = init.v;
    let mut lane = init.lane;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for _ in 0..horizon - 1 {
        let lo = p.a_min.max((p.v_min - v) / dt);
        let hi = p.a_max.min((p.v_max - v) / dt);
        let acc = rng.gen_range(lo..=hi);
        v += dt * acc;
        a.push(acc);
        let mut step = 0;
        if rng.gen_bool(change_prob) {
            step = if rng.gen_bool(0.5) { 1 } else { -1 };
            if lane + step < 1 || lane + step > lanes as Lane {
                step = -step;
            }
            if lane + step < 1 || lane + step > lanes as Lane {
                step = 0;
            }
        }
        lane += step;
        b.push(step);
    }
    Strategy::rollout(init, dt, &a, &b)
}

/// Random instance with `T <= 4`, at most two lanes and at most one other
/// vehicle.
pub fn tiny_instance(rng: &mut ChaCha8Rng) -> TinyInstance {
    let lanes: u32 = rng.gen_range(1..=2);
    let horizon = rng.gen_range(2..=4);
    let dt = rng.gen_range(0.3..1.0);
    let with_other = rng.gen_bool(0.8);
    loop {
        let p0 = random_params(rng, lanes);
        let x0 = InitialState { s: rng.gen_range(20.0..60.0), v: rng.gen_range(10.0..30.0), lane: rng.gen_range(1..=lanes as Lane) };
        if !with_other {
            let sc = Scenario::new((0.0, 400.0), lanes, horizon, dt, vec![p0], vec![x0]).unwrap();
            return TinyInstance { scenario: sc, other: None };
        }
        let p1 = random_params(rng, lanes);
        let x1 = InitialState { s: rng.gen_range(20.0..60.0), v: rng.gen_range(10.0..30.0), lane: rng.gen_range(1..=lanes as Lane) };
        let Ok(sc) = Scenario::new((0.0, 400.0), lanes, horizon, dt, vec![p0, p1], vec![x0, x1]) else { continue };
        let other = random_plan(rng, x1, &p1, lanes, horizon, dt, 0.4);
        return TinyInstance { scenario: sc, other: Some(other) };
    }
}

/// Random scenario with `n` vehicles and mixed safety distances, plus random
/// plans for every vehicle.
pub fn random_scene(rng: &mut ChaCha8Rng, n: usize, lanes: u32, horizon: usize) -> (Scenario, Vec<Strategy>) {
    loop {
        let params: Vec<_> = (0..n)
            .map(|_| {
                let mut p = random_params(rng, lanes);
                p.d_safe = rng.gen_range(4.0..20.0);
                p
            })
            .collect();
        let init: Vec<_> = (0..n)
            .map(|_| InitialState { s: rng.gen_range(20.0..200.0), v: rng.gen_range(5.0..35.0), lane: rng.gen_range(1..=lanes as Lane) })
            .collect();
        let dt = rng.gen_range(0.2..1.0);
        let Ok(sc) = Scenario::new((0.0, 400.0), lanes, horizon, dt, params.clone(), init.clone()) else { continue };
        let plans = (0..n).map(|i| random_plan(rng, init[i], &params[i], lanes, horizon, dt, 0.3)).collect();
        return (sc, plans);
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every lane sequence starting in `start` that moves at most one lane per step.
pub fn lane_sequences(start: Lane, lanes: u32, horizon: usize) -> Vec<Vec<Lane>> {
    let mut out = vec![vec![start]];
    for _ in 1..horizon {
        out = out
            .into_iter()
            .flat_map(|z| {
                let last = *z.last().unwrap();
                (-1..=1).filter_map(move |d| {
                    let l = last + d;
                    (l >= 1 && l <= lanes as Lane).then(|| {
                        let mut next = z.clone();
                        next.push(l);
                        next
                    })
                })
            })
            .collect();
    }
    out
}

/// Cheapest plan of vehicle 0 by brute force: every lane sequence, and for
/// every step where vehicle 1 constrains it, both sides of vehicle 1. Each
/// combination is a convex QP in the speeds. `None` if nothing is feasible.
pub fn oracle(inst: &TinyInstance) -> Option<(f64, Strategy)> {
    let sc = &inst.scenario;
    let p = sc.vehicles()[0];
    let init = sc.initial_states()[0];
    let horizon = sc.horizon();
    let mut best: Option<(f64, Strategy)> = None;
    for z in lane_sequences(init.lane, sc.lane_count(), horizon) {
        // steps where vehicle 0 must stay at least `sep` away from vehicle 1
        let mut conflicts = Vec::new();
        if let Some(o) = &inst.other {
            let sep = p.d_safe.max(sc.vehicles()[1].d_safe);
            for t in 0..horizon {
                let same_lane = z[t] == o.z[t];
                let swap = t + 1 < horizon && (z[t] - o.z[t]).abs() == 1 && z[t + 1] == o.z[t] && o.z[t + 1] == z[t];
                if same_lane || swap {
                    conflicts.push((t, o.s[t], sep));
                }
            }
        }
        for sides in 0..(1u32 << conflicts.len()) {
            let Some((speeds, cost)) = speed_qp(sc, &p, init, &z, &conflicts, sides) else { continue };
            if best.as_ref().is_none_or(|b| cost < b.0) {
                let a: Vec<f64> = speeds.windows(2).map(|w| (w[1] - w[0]) / sc.dt()).collect();
                let b: Vec<Lane> = z.windows(2).map(|w| w[1] - w[0]).collect();
                best = Some((cost, Strategy::rollout(init, sc.dt(), &a, &b)));
            }
        }
    }
    best
}

/// Optimal speeds for a fixed lane sequence and fixed sides. Variables are
/// `v_1 .. v_{T-1}`; positions are `s_t = s_0 + dt (v_0 + .. + v_{t-1})`.
fn speed_qp(
    sc: &Scenario,
    p: &VehicleParams,
    init: InitialState,
    z: &[Lane],
    conflicts: &[(usize, f64, f64)],
    sides: u32,
) -> Option<(Vec<f64>, f64)> {
    let horizon = sc.horizon();
    let dt = sc.dt();
    let n = horizon - 1;
    let w = p.weights;
    let mut constant = 0.0;
    for t in 1..horizon {
        let dl = f64::from(z[t] - p.lane_des);
        let b = f64::from(z[t] - z[t - 1]);
        constant += w.lane * dl * dl + w.blinker * b * b;
    }
    if n == 0 {
        let dv = init.v - p.v_des;
        return Some((vec![init.v], constant + w.speed * dv * dv));
    }
    // 0.5 x'Px + q'x + r
    let mut pm = vec![vec![0.0; n]; n];
    let mut q = vec![0.0; n];
    let mut r = constant;
    let mut square = |coef: &[(usize, f64)], c: f64, weight: f64| {
        for &(i, ai) in coef {
            q[i] += 2.0 * weight * ai * c;
            for &(j, aj) in coef {
                pm[i][j] += 2.0 * weight * ai * aj;
            }
        }
        r += weight * c * c;
    };
    // variable index of v_t is t - 1
    for t in 1..horizon {
        // speed term for every step, plus the terminal one on the last
        let reps = if t == horizon - 1 { 2.0 } else { 1.0 };
        square(&[(t - 1, 1.0)], -p.v_des, w.speed * reps);
        let acc: Vec<(usize, f64)> =
            if t == 1 { vec![(0, 1.0 / dt)] } else { vec![(t - 1, 1.0 / dt), (t - 2, -1.0 / dt)] };
        let c = if t == 1 { -init.v / dt } else { 0.0 };
        square(&acc, c, w.accel);
    }

    // rows of A x <= b
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for t in 1..horizon {
        rows.push((vec![(t - 1, 1.0)], p.v_max));
        rows.push((vec![(t - 1, -1.0)], -p.v_min));
        if t == 1 {
            rows.push((vec![(0, 1.0)], init.v + dt * p.a_max));
            rows.push((vec![(0, -1.0)], -(init.v + dt * p.a_min)));
        } else {
            rows.push((vec![(t - 1, 1.0), (t - 2, -1.0)], dt * p.a_max));
            rows.push((vec![(t - 1, -1.0), (t - 2, 1.0)], -dt * p.a_min));
        }
    }
    let position = |t: usize| -> (Vec<(usize, f64)>, f64) {
        let coef = (1..t).map(|k| (k - 1, dt)).collect();
        (coef, init.s + dt * init.v)
    };
    let (road_lo, road_hi) = sc.road();
    for t in 1..horizon {
        let (coef, c) = position(t);
        rows.push((coef.clone(), road_hi - c));
        rows.push((coef.iter().map(|&(i, a)| (i, -a)).collect(), c - road_lo));
    }
    for (k, &(t, other_s, sep)) in conflicts.iter().enumerate() {
        let ahead = sides >> k & 1 == 1;
        let (coef, c) = if t == 0 { (Vec::new(), init.s) } else { position(t) };
        if ahead {
            // s_t >= other + sep
            rows.push((coef.iter().map(|&(i, a)| (i, -a)).collect(), c - other_s - sep));
        } else {
            rows.push((coef, other_s - sep - c));
        }
    }
    // constant rows (t = 0 conflicts) are checked directly
    let mut kept = Vec::new();
    for (coef, b) in rows {
        if coef.is_empty() {
            if b < -1e-9 {
                return None;
            }
        } else {
            kept.push((coef, b));
        }
    }

    let mut pt = Vec::new();
    for i in 0..n {
        for j in i..n {
            if pm[i][j] != 0.0 {
                pt.push((i, j, pm[i][j]));
            }
        }
    }
    let pmat = CscMatrix::new_from_triplets(
        n,
        n,
        pt.iter().map(|x| x.0).collect(),
        pt.iter().map(|x| x.1).collect(),
        pt.iter().map(|x| x.2).collect(),
    );
    let (mut ri, mut ci, mut vi, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (m, (coef, rhs)) in kept.iter().enumerate() {
        for &(j, a) in coef {
            ri.push(m);
            ci.push(j);
            vi.push(a);
        }
        b.push(*rhs);
    }
    let amat = CscMatrix::new_from_triplets(kept.len(), n, ri, ci, vi);
    let cones = [SupportedConeT::NonnegativeConeT(kept.len())];
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .tol_feas(1e-11)
        .max_iter(200)
        .build()
        .unwrap();
    let mut solver = DefaultSolver::new(&pmat, &q, &amat, &b, &cones, settings).ok()?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        _ => return None,
    }
    let x = solver.solution.x.clone();
    let mut speeds = vec![init.v];
    speeds.extend(&x);
    let value = 0.5 * (0..n).map(|i| (0..n).map(|j| x[i] * pm[i][j] * x[j]).sum::<f64>()).sum::<f64>()
        + q.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
        + r;
    Some((speeds, value))
}
