//! Bayesian multiobject tracking with loopy belief propagation data
//! association, a learnable interacting motion model propagated by sigma
//! points, and learnable measurement-affinity and false-positive factors.

pub mod association;
pub mod error;
pub mod evaluation;
pub mod feature_map;
pub mod measurement;
pub mod motion;
pub mod network;
pub mod neural;
pub mod numerics;
pub mod simulator;
pub mod tracker;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{AmotaResult, ClearMot, TrackPoint};
pub use feature_map::{BoxDims, FeatureMap, Region};
pub use measurement::{MeasNetConfig, Measurement, MeasurementNets};
pub use motion::{MotionConfig, MotionParams, PredictionStrategy};
pub use network::NetworkParams;
pub use numerics::{GaussianState, Rng, StateCov, StateVec};
pub use simulator::{Frame, GtObject, ScenarioConfig, Scene};
pub use tracker::{TrackEstimate, Tracker, TrackerConfig, TrackerMode};
pub use training::TrainConfig;
