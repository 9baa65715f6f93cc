//! Fixed inputs shared by the benchmarks.

use nalgebra::DVector;
use netrack_core::association::{synthetic_problem, AssociationProblem};
use netrack_core::motion::{cv_process_noise, NeighborSet, PoSummary, PredictSettings};
use netrack_core::numerics::UtParams;
use netrack_core::simulator::generate_scene;
use netrack_core::{
    GaussianState, MeasNetConfig, MotionConfig, NetworkParams, PredictionStrategy, Region, Rng,
    ScenarioConfig, Scene, StateCov, StateVec,
};

/// Square association problem with `n` objects and `n` measurements.
pub fn association_problem(n: usize) -> AssociationProblem {
    synthetic_problem(n, n, 3.0 * n as f64, &mut Rng::new(n as u64))
}

pub fn motion_config() -> MotionConfig {
    MotionConfig {
        hidden_dim: 16,
        ..MotionConfig::default()
    }
}

pub fn networks() -> NetworkParams {
    NetworkParams::new(motion_config(), MeasNetConfig::default(), &mut Rng::new(1))
}

/// One object with `n` uncertain neighbors.
pub fn prediction_input(n: usize) -> (PoSummary, NeighborSet) {
    let mut rng = Rng::new(2);
    let mut gaussian = || {
        let mean = StateVec::from_fn(|_, _| 5.0 * rng.normal());
        GaussianState::from_state(&mean, &(StateCov::identity() * 0.5))
    };
    let po = PoSummary {
        gaussian: gaussian(),
        existence: 0.9,
        hidden: DVector::zeros(motion_config().hidden_dim),
    };
    let nbs = NeighborSet {
        states: (0..n).map(|_| gaussian()).collect(),
    };
    (po, nbs)
}

pub fn predict_settings(strategy: PredictionStrategy) -> PredictSettings {
    PredictSettings {
        q: cv_process_noise(0.5, 1.0),
        p_s: 0.999,
        ut: UtParams::default(),
        strategy,
    }
}

/// A dense scene with persistent clutter.
pub fn busy_scene(frames: usize) -> Scene {
    let cfg = ScenarioConfig {
        frames,
        initial_objects: 12,
        mu_fp: 5.0,
        clutter_lifetime: 4.0,
        region: Region::square(35.0),
        ..ScenarioConfig::default()
    };
    generate_scene(&cfg, 0).expect("valid scenario")
}
