//! Randomized scenario batches.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::highway::{InitialState, Lane, Scenario, VehicleParams, Weights, POSITION_EPS};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid batch spec: {0}")]
    InvalidSpec(String),
    #[error("scenario {index}: no collision-free initial arrangement after {attempts} draws")]
    BudgetExhausted { index: usize, attempts: usize },
}

/// Closed sampling range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sampler(self) -> Uniform<f64> {
        Uniform::new_inclusive(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomBatchSpec {
    pub num_scenarios: usize,
    pub vehicles: usize,
    pub lanes: u32,
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
    pub road: Range,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub d_safe: f64,
    pub v_des: Range,
    pub w_v: Range,
    pub w_l: Range,
    pub w_b: Range,
    pub w_a: Range,
    pub s0: Range,
    pub v0: Range,
    /// Initial lanes are drawn uniformly from `1..=min(lanes, initial_lanes)`.
    pub initial_lanes: u32,
    pub resample_budget: usize,
}

impl Default for RandomBatchSpec {
    fn default() -> Self {
        Self {
            num_scenarios: 100,
            vehicles: 4,
            lanes: 3,
            horizon: 30,
            dt: 0.3,
            seed: 42,
            road: Range::new(0.0, 1000.0),
            v_min: 0.0,
            v_max: 50.0,
            a_min: -6.0,
            a_max: 3.0,
            d_safe: 10.0,
            v_des: Range::new(80.0 / 3.6, 160.0 / 3.6),
            w_v: Range::new(0.1, 1.0),
            w_l: Range::new(5.0, 25.0),
            w_b: Range::new(5.0, 10.0),
            w_a: Range::new(0.1, 0.5),
            s0: Range::new(0.0, 200.0),
            v0: Range::new(60.0 / 3.6, 130.0 / 3.6),
            initial_lanes: 3,
            resample_budget: 10_000,
        }
    }
}

impl RandomBatchSpec {
    pub fn validate(&self) -> Result<(), BatchError> {
        let bad = |m: String| Err(BatchError::InvalidSpec(m));
        let ranges = [
            ("road", self.road),
            ("v_des", self.v_des),
            ("w_v", self.w_v),
            ("w_l", self.w_l),
            ("w_b", self.w_b),
            ("w_a", self.w_a),
            ("s0", self.s0),
            ("v0", self.v0),
        ];
        for (name, r) in ranges {
            if !(r.lo <= r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return bad(format!("{name}: empty range [{}, {}]", r.lo, r.hi));
            }
        }
        if self.lanes < 1 || self.initial_lanes < 1 {
            return bad("lanes and initial_lanes must be at least 1".into());
        }
        if self.resample_budget < 1 {
            return bad("resample_budget must be at least 1".into());
        }
        Ok(())
    }
}

/// Draws `num_scenarios` scenarios. The same spec always yields the same batch.
pub fn generate_random_batch(spec: &RandomBatchSpec) -> Result<Vec<Scenario>, BatchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_scenarios).map(|index| sample_scenario(spec, index, &mut rng)).collect()
}

fn sample_scenario(spec: &RandomBatchSpec, index: usize, rng: &mut ChaCha8Rng) -> Result<Scenario, BatchError> {
    let n = spec.vehicles;
    let params: Vec<VehicleParams> = (0..n)
        .map(|_| {
            let v_des = spec.v_des.sampler().sample(rng);
            let lane_des = rng.gen_range(1..=spec.lanes as Lane);
            VehicleParams {
                v_min: spec.v_min,
                v_max: spec.v_max,
                a_min: spec.a_min,
                a_max: spec.a_max,
                d_safe: spec.d_safe,
                v_des,
                lane_des,
                weights: Weights {
                    speed: spec.w_v.sampler().sample(rng),
                    lane: spec.w_l.sampler().sample(rng),
                    blinker: spec.w_b.sampler().sample(rng),
                    accel: spec.w_a.sampler().sample(rng),
                },
            }
        })
        .collect();
    let top_lane = spec.lanes.min(spec.initial_lanes) as Lane;
    for _ in 0..spec.resample_budget {
        let init: Vec<InitialState> = (0..n)
            .map(|_| InitialState {
                s: spec.s0.sampler().sample(rng),
                v: spec.v0.sampler().sample(rng),
                lane: rng.gen_range(1..=top_lane),
            })
            .collect();
        if collision_free(&init, &params) {
            return Scenario::new(
                (spec.road.lo, spec.road.hi),
                spec.lanes,
                spec.horizon,
                spec.dt,
                params,
                init,
            )
            .map_err(|e| BatchError::InvalidSpec(e.to_string()));
        }
    }
    Err(BatchError::BudgetExhausted { index, attempts: spec.resample_budget })
}

fn collision_free(init: &[InitialState], params: &[VehicleParams]) -> bool {
    (0..init.len()).all(|i| {
        (i + 1..init.len()).all(|j| {
            let need = params[i].d_safe.max(params[j].d_safe);
            init[i].lane != init[j].lane || (init[i].s - init[j].s).abs() >= need - POSITION_EPS
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_batches_repeat() {
        let spec = RandomBatchSpec { num_scenarios: 10, ..RandomBatchSpec::default() };
        assert_eq!(generate_random_batch(&spec).unwrap(), generate_random_batch(&spec).unwrap());
        let other = RandomBatchSpec { seed: 7, ..spec.clone() };
        assert_ne!(generate_random_batch(&spec).unwrap(), generate_random_batch(&other).unwrap());
    }

    #[test]
    fn samples_stay_in_ranges() {
        let spec = RandomBatchSpec::default();
        for sc in generate_random_batch(&spec).unwrap() {
            for (p, x) in sc.vehicles().iter().zip(sc.initial_states()) {
                assert!((80.0 / 3.6..=160.0 / 3.6).contains(&p.v_des));
                assert!((5.0..=25.0).contains(&p.weights.lane));
                assert!((0.0..=200.0).contains(&x.s));
                assert!((1..=3).contains(&x.lane));
            }
        }
    }

    #[test]
    fn crowded_road_spreads_over_lanes() {
        // 25 m of road holds two vehicles per lane 10 m apart, so six
        // vehicles only fit as two in each of the three lanes
        let spec = RandomBatchSpec {
            num_scenarios: 3,
            vehicles: 6,
            s0: Range::new(0.0, 25.0),
            ..RandomBatchSpec::default()
        };
        for sc in generate_random_batch(&spec).unwrap() {
            for l in 1..=3 {
                assert!(sc.initial_states().iter().filter(|x| x.lane == l).count() <= 2);
            }
        }
    }

    #[test]
    fn impossible_arrangement_exhausts_budget() {
        // 7 vehicles on 3 lanes of 5 m each cannot keep 10 m apart
        let spec = RandomBatchSpec {
            num_scenarios: 1,
            vehicles: 7,
            s0: Range::new(0.0, 5.0),
            resample_budget: 200,
            ..RandomBatchSpec::default()
        };
        assert!(matches!(generate_random_batch(&spec), Err(BatchError::BudgetExhausted { index: 0, attempts: 200 })));
    }

    #[test]
    fn empty_range_is_rejected() {
        let spec = RandomBatchSpec { w_v: Range::new(1.0, 0.5), ..RandomBatchSpec::default() };
        assert!(matches!(generate_random_batch(&spec), Err(BatchError::InvalidSpec(_))));
    }
}
