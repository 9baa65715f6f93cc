//! One tracking step: predict, compute factors, associate, update, introduce
//! new objects, declare and prune.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::association::{bp_marginals, AssociationMarginals, BP_MAX_ITER, BP_TOL};
use crate::error::{Error, Result};
use crate::feature_map::{roi_extract_or_zero, BoxDims, FeatureMap, Region};
use crate::measurement::{
    box_descriptor, build_association_problem, compute_factors, compute_factors_train, init_new_po,
    update_legacy, BirthModel, ClutterModel, EnhancementFactors, FactorLogits, FactorTape,
    Measurement, MeasurementModel, ObjectFeatures, PredictedCloud,
};
use crate::motion::{
    cv_predict_po, cv_process_noise, sp_predict, sp_predict_train, NeighborSet, PoSummary,
    PredictSettings, PredictedPo, PredictionStrategy, SpTape,
};
use crate::network::NetworkParams;
use crate::numerics::{GaussianState, ParticleSet, Rng, StateCov, StateVec, UtParams};

/// Which parts of the pipeline use the learned networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrackerMode {
    /// Model-based: constant-velocity prediction, all factors 1.
    Mb,
    /// Learned motion and learned factors.
    Ne,
    /// Learned motion only.
    NeMotion,
    /// Learned factors only.
    NeMeas,
}

impl TrackerMode {
    pub const ALL: [TrackerMode; 4] = [Self::Mb, Self::Ne, Self::NeMotion, Self::NeMeas];

    pub fn neural_motion(self) -> bool {
        matches!(self, Self::Ne | Self::NeMotion)
    }

    pub fn neural_factors(self) -> bool {
        matches!(self, Self::Ne | Self::NeMeas)
    }

    pub fn needs_weights(self) -> bool {
        self != Self::Mb
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mb => "mb",
            Self::Ne => "ne",
            Self::NeMotion => "ne-motion",
            Self::NeMeas => "ne-meas",
        }
    }
}

impl fmt::Display for TrackerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config("mode", format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub mode: TrackerMode,
    pub strategy: PredictionStrategy,
    pub p_s: f64,
    pub p_d: f64,
    /// Declaration threshold on existence (closed).
    pub t_dec: f64,
    /// Pruning threshold on existence (objects at exactly `t_pru` are kept).
    pub t_pru: f64,
    pub max_neighbors: usize,
    pub particle_count: usize,
    pub dt: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    /// Acceleration noise of the constant-velocity process noise (m/s^2).
    pub sigma_accel: f64,
    pub mu_fp: f64,
    pub mu_n: f64,
    pub region: Region,
    /// Velocity box half-width of the clutter and birth densities (m/s).
    pub v_max: f64,
    /// Squared Mahalanobis gate between predictions and measurements.
    pub gate: f64,
    /// Weight of a newly associated detector score in the track score.
    pub score_blend: f64,
    pub ut: UtParams,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            mode: TrackerMode::Mb,
            strategy: PredictionStrategy::JointSp,
            p_s: 0.999,
            p_d: 0.9,
            t_dec: 0.5,
            t_pru: 1e-4,
            max_neighbors: 10,
            particle_count: 1000,
            dt: 0.5,
            sigma_pos: 0.3,
            sigma_vel: 0.5,
            sigma_accel: 1.5,
            mu_fp: 2.0,
            mu_n: 0.3,
            region: Region::square(54.0),
            v_max: 10.0,
            gate: 40.0,
            score_blend: 0.3,
            ut: UtParams::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.t_dec) {
            return Err(Error::config("t_dec", "must lie in (0, 1)"));
        }
        if !unit(self.t_pru) || self.t_pru >= self.t_dec {
            return Err(Error::config("t_pru", "must lie in (0, t_dec)"));
        }
        if !(self.p_s > 0.0 && self.p_s <= 1.0) {
            return Err(Error::config("p_s", "must lie in (0, 1]"));
        }
        if !(self.p_d > 0.0 && self.p_d <= 1.0) {
            return Err(Error::config("p_d", "must lie in (0, 1]"));
        }
        if self.particle_count == 0 {
            return Err(Error::config("particle_count", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !(self.sigma_pos > 0.0 && self.sigma_vel > 0.0) {
            return Err(Error::config(
                "sigma_pos",
                "measurement noise must be positive",
            ));
        }
        if self.sigma_accel < 0.0 || self.mu_fp < 0.0 || self.mu_n < 0.0 {
            return Err(Error::config(
                "mu_fp",
                "rates and noise levels must be nonnegative",
            ));
        }
        if !self.region.is_valid() || !(self.v_max > 0.0) {
            return Err(Error::config("region", "must be nondegenerate"));
        }
        if !(0.0..=1.0).contains(&self.score_blend) {
            return Err(Error::config("score_blend", "must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn sigma_r(&self) -> StateCov {
        let (p, v) = (self.sigma_pos.powi(2), self.sigma_vel.powi(2));
        StateCov::from_diagonal(&StateVec::new(p, p, v, v))
    }

    pub fn q(&self) -> StateCov {
        cv_process_noise(self.dt, self.sigma_accel)
    }

    pub fn measurement_model(&self) -> Result<MeasurementModel> {
        MeasurementModel::new(
            self.sigma_r(),
            self.p_d,
            ClutterModel {
                mu_fp: self.mu_fp,
                region: self.region,
                v_max: self.v_max,
            },
            BirthModel {
                mu_n: self.mu_n,
                region: self.region,
                v_max: self.v_max,
            },
            self.gate,
        )
    }

    pub fn predict_settings(&self) -> PredictSettings {
        PredictSettings {
            q: self.q(),
            p_s: self.p_s,
            ut: self.ut,
            strategy: self.strategy,
        }
    }
}

/// A potential object.
#[derive(Debug, Clone, PartialEq)]
pub struct PoState {
    pub id: u64,
    pub particles: ParticleSet,
    /// Moment summary used for prediction.
    pub gaussian: GaussianState,
    pub existence: f64,
    /// Recurrent motion state (empty when no motion network is used).
    pub hidden: DVector<f64>,
    pub birth_time: usize,
    pub last_box: BoxDims,
    pub class_id: u32,
    /// Blended detector score.
    pub score: f64,
}

/// A declared track in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub id: u64,
    /// Weighted particle mean.
    pub state: StateVec,
    pub existence: f64,
    pub score: f64,
    pub class_id: u32,
    pub bbox: BoxDims,
}

impl TrackEstimate {
    /// Ranking confidence for recall sweeps: existence times track score.
    pub fn confidence(&self) -> f64 {
        self.existence * self.score
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub bp_iterations: usize,
    pub bp_converged: bool,
    pub legacy: usize,
    pub new: usize,
    pub pruned: usize,
    /// Objects dropped because their prediction could not be sampled.
    pub dropped: usize,
    pub mean_affinity: f64,
    pub mean_fpr: f64,
    pub min_fpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub estimates: Vec<TrackEstimate>,
    pub diagnostics: StepDiagnostics,
}

/// Intermediates of a step needed to back-propagate the training losses.
#[derive(Debug)]
pub struct StepRecord {
    /// Legacy objects in row order of the association tables.
    pub legacy_ids: Vec<u64>,
    /// Posterior MMSE estimate of each legacy object.
    pub legacy_posterior: Vec<StateVec>,
    pub legacy_existence: Vec<f64>,
    /// Sigma-point tapes (present when the motion network was used).
    pub sp_tapes: Vec<Option<SpTape>>,
    pub factors: EnhancementFactors,
    /// Logits and tape (present when the factor networks were used).
    pub factor_grad: Option<(FactorLogits, FactorTape)>,
    pub marginals: AssociationMarginals,
}

/// Emits the objects with existence at or above `t_dec`.
pub fn declare_and_estimate(state: &[PoState], cfg: &TrackerConfig) -> Vec<TrackEstimate> {
    state
        .iter()
        .filter(|po| po.existence >= cfg.t_dec)
        .map(|po| TrackEstimate {
            id: po.id,
            state: po.particles.mean(),
            existence: po.existence,
            score: po.score,
            class_id: po.class_id,
            bbox: po.last_box,
        })
        .collect()
}

/// Removes objects with existence below `t_pru`.
pub fn prune(state: Vec<PoState>, cfg: &TrackerConfig) -> Vec<PoState> {
    state
        .into_iter()
        .filter(|po| po.existence >= cfg.t_pru)
        .collect()
}

fn summary_of(particles: &ParticleSet) -> GaussianState {
    GaussianState::from_state(&particles.mean(), &particles.covariance())
}

/// Sequential multiobject tracker over the frames of one scene.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: TrackerConfig,
    model: MeasurementModel,
    state: Vec<PoState>,
    next_id: u64,
    k: usize,
    prev_map: Option<FeatureMap>,
    rng: Rng,
}

impl Tracker {
    pub fn new(config: TrackerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let model = config.measurement_model()?;
        Ok(Self {
            config,
            model,
            state: Vec::new(),
            next_id: 0,
            k: 0,
            prev_map: None,
            rng: Rng::with_stream(seed, 7),
        })
    }

    pub fn state(&self) -> &[PoState] {
        &self.state
    }

    pub fn frame_index(&self) -> usize {
        self.k
    }

    pub fn model(&self) -> &MeasurementModel {
        &self.model
    }

    /// Processes one frame.
    pub fn step(
        &mut self,
        meas: &[Measurement],
        map: Option<&FeatureMap>,
        nets: Option<&NetworkParams>,
    ) -> Result<StepOutput> {
        Ok(self.step_inner(meas, map, nets, false)?.0)
    }

    /// [`Tracker::step`] that also keeps the intermediates for training.
    pub fn step_train(
        &mut self,
        meas: &[Measurement],
        map: Option<&FeatureMap>,
        nets: &NetworkParams,
    ) -> Result<(StepOutput, StepRecord)> {
        let (out, rec) = self.step_inner(meas, map, Some(nets), true)?;
        Ok((out, rec.expect("record requested")))
    }

    fn step_inner(
        &mut self,
        meas: &[Measurement],
        map: Option<&FeatureMap>,
        nets: Option<&NetworkParams>,
        record: bool,
    ) -> Result<(StepOutput, Option<StepRecord>)> {
        let cfg = self.config.clone();
        let mode = cfg.mode;
        if mode.needs_weights() && nets.is_none() {
            return Err(Error::config(
                "weights",
                format!("mode {mode} needs network weights"),
            ));
        }
        let settings = cfg.predict_settings();
        let mut diag = StepDiagnostics::default();

        // Prediction of legacy objects.
        let prior = std::mem::take(&mut self.state);
        let declared: Vec<(usize, GaussianState)> = prior
            .iter()
            .enumerate()
            .filter(|(_, po)| po.existence >= cfg.t_dec)
            .map(|(k, po)| (k, po.gaussian.clone()))
            .collect();
        let mut legacy: Vec<(PoState, PredictedPo, Option<SpTape>, ObjectFeatures)> = Vec::new();
        for (idx, po) in prior.into_iter().enumerate() {
            let summary = PoSummary {
                gaussian: po.gaussian.clone(),
                existence: po.existence,
                hidden: po.hidden.clone(),
            };
            let predicted = match (mode.neural_motion(), nets) {
                (true, Some(n)) => {
                    let max = cfg.max_neighbors.min(n.motion.config.max_neighbors);
                    let candidates: Vec<GaussianState> = declared
                        .iter()
                        .filter(|(k, _)| *k != idx)
                        .map(|(_, g)| g.clone())
                        .collect();
                    let neighbors =
                        NeighborSet::select(&po.gaussian.state_mean(), &candidates, max);
                    if record {
                        sp_predict_train(&summary, &neighbors, &n.motion, &settings)
                            .map(|(p, t)| (p, Some(t)))
                    } else {
                        sp_predict(&summary, &neighbors, &n.motion, &settings).map(|p| (p, None))
                    }
                }
                _ => Ok((cv_predict_po(&summary, cfg.dt, &settings), None)),
            };
            let (pred, tape) = match predicted {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("object {}: prediction failed ({e}), dropped", po.id);
                    diag.dropped += 1;
                    continue;
                }
            };
            let roi_dim = nets.map_or(0, |n| n.meas.config.roi_dim);
            let roi = match &self.prev_map {
                Some(m) if mode.neural_factors() => {
                    let c = po.gaussian.state_mean();
                    roi_extract_or_zero(m, c[0], c[1], &po.last_box).0
                }
                _ => DVector::zeros(roi_dim),
            };
            let pm = pred.gaussian.state_mean();
            let feats = ObjectFeatures {
                position: [pm[0], pm[1]],
                velocity: [pm[2], pm[3]],
                u: box_descriptor(&po.last_box, po.score),
                roi,
            };
            legacy.push((po, pred, tape, feats));
        }

        let mut clouds = Vec::with_capacity(legacy.len());
        let mut kept = Vec::with_capacity(legacy.len());
        for (po, pred, tape, feats) in legacy {
            let mean = pred.gaussian.state_mean();
            let cov = pred.gaussian.state_cov();
            match ParticleSet::sample(&mean, &cov, cfg.particle_count, &mut self.rng) {
                Ok(ps) => {
                    clouds.push(PredictedCloud {
                        particles: ps.particles,
                        existence: pred.existence,
                        mean,
                        cov,
                    });
                    kept.push((po, pred, tape, feats));
                }
                Err(e) => {
                    log::warn!(
                        "object {}: predicted covariance unusable ({e}), dropped",
                        po.id
                    );
                    diag.dropped += 1;
                }
            }
        }
        diag.legacy = kept.len();

        // Enhancement factors.
        let objects: Vec<ObjectFeatures> = kept.iter().map(|k| k.3.clone()).collect();
        let (factors, factor_grad) = match (mode.neural_factors(), nets) {
            (true, Some(n)) if record => {
                let (f, l, t) = compute_factors_train(&n.meas, &objects, meas)?;
                (f, Some((l, t)))
            }
            (true, Some(n)) => (compute_factors(&n.meas, &objects, meas)?, None),
            _ => (EnhancementFactors::neutral(kept.len(), meas.len()), None),
        };
        if !factors.is_valid() {
            return Err(Error::config("weights", "network produced invalid factors"));
        }
        if !factors.affinity.is_empty() {
            diag.mean_affinity = factors.affinity.mean();
        }
        if !factors.fpr.is_empty() {
            diag.mean_fpr = factors.fpr.iter().sum::<f64>() / factors.fpr.len() as f64;
            diag.min_fpr = factors.fpr.iter().copied().fold(f64::INFINITY, f64::min);
        }

        // Association.
        let (problem, terms) = build_association_problem(&clouds, meas, &factors, &self.model)?;
        let marg = bp_marginals(&problem, BP_MAX_ITER, BP_TOL);
        diag.bp_iterations = marg.iterations;
        diag.bp_converged = marg.converged;
        let best = marg.kappa_argmax();

        // Legacy update.
        let mut next = Vec::with_capacity(kept.len() + meas.len());
        let mut rec_ids = Vec::new();
        let mut rec_post = Vec::new();
        let mut rec_ex = Vec::new();
        let mut rec_tapes = Vec::new();
        for (i, ((mut po, pred, tape, _), cloud)) in kept.into_iter().zip(&clouds).enumerate() {
            let kappa_row: Vec<f64> = marg.kappa.row(i).iter().copied().collect();
            let up = update_legacy(
                cloud,
                i,
                &problem,
                &kappa_row,
                &terms,
                cfg.p_d,
                cfg.particle_count,
                &mut self.rng,
            )?;
            po.gaussian = summary_of(&up.particles);
            po.particles = up.particles;
            po.existence = up.existence;
            po.hidden = pred.hidden;
            if best[i] > 0 {
                let m = &meas[best[i] - 1];
                po.score = (1.0 - cfg.score_blend) * po.score + cfg.score_blend * m.score;
                po.last_box = m.bbox;
            }
            if record {
                rec_ids.push(po.id);
                rec_post.push(po.particles.mean());
                rec_ex.push(po.existence);
                rec_tapes.push(tape);
            }
            next.push(po);
        }

        // New objects, one per measurement.
        let hidden_dim = match (mode.neural_motion(), nets) {
            (true, Some(n)) => n.motion.hidden_dim(),
            _ => 0,
        };
        for (j, m) in meas.iter().enumerate() {
            let (particles, existence) = init_new_po(
                m,
                marg.iota[(j, 0)],
                &self.model,
                factors.fpr[j],
                cfg.particle_count,
                &mut self.rng,
            )?;
            next.push(PoState {
                id: self.next_id,
                particles,
                gaussian: GaussianState::from_state(&m.z, &self.model.sigma_r),
                existence,
                hidden: DVector::zeros(hidden_dim),
                birth_time: self.k,
                last_box: m.bbox,
                class_id: m.class_id,
                score: m.score,
            });
            self.next_id += 1;
        }
        diag.new = meas.len();

        let estimates = declare_and_estimate(&next, &cfg);
        let before = next.len();
        self.state = prune(next, &cfg);
        diag.pruned = before - self.state.len();
        self.prev_map = map.cloned();
        self.k += 1;
        let out = StepOutput {
            estimates,
            diagnostics: diag,
        };
        let rec = record.then_some(StepRecord {
            legacy_ids: rec_ids,
            legacy_posterior: rec_post,
            legacy_existence: rec_ex,
            sp_tapes: rec_tapes,
            factors,
            factor_grad,
            marginals: marg,
        });
        Ok((out, rec))
    }
}

/// Runs a tracker over a sequence of frames and returns the declared tracks
/// of every frame.
pub fn run_frames<'a>(
    cfg: &TrackerConfig,
    frames: impl IntoIterator<Item = (&'a [Measurement], Option<&'a FeatureMap>)>,
    nets: Option<&NetworkParams>,
    seed: u64,
) -> Result<Vec<Vec<TrackEstimate>>> {
    let mut t = Tracker::new(cfg.clone(), seed)?;
    frames
        .into_iter()
        .map(|(m, map)| t.step(m, map, nets).map(|o| o.estimates))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::MeasNetConfig;
    use crate::motion::MotionConfig;
    use crate::neural::forward_calls;

    fn meas(x: f64, y: f64, vx: f64, vy: f64) -> Measurement {
        Measurement {
            z: StateVec::new(x, y, vx, vy),
            score: 0.8,
            bbox: BoxDims {
                length: 4.0,
                width: 2.0,
                yaw: 0.0,
            },
            shape_feature: DVector::zeros(40),
            class_id: 0,
        }
    }

    fn small_cfg() -> TrackerConfig {
        TrackerConfig {
            particle_count: 200,
            ..TrackerConfig::default()
        }
    }

    fn po(id: u64, existence: f64, particles: Vec<StateVec>) -> PoState {
        let ps = ParticleSet::uniform(particles);
        PoState {
            id,
            gaussian: summary_of(&ps),
            particles: ps,
            existence,
            hidden: DVector::zeros(0),
            birth_time: 0,
            last_box: BoxDims {
                length: 1.0,
                width: 1.0,
                yaw: 0.0,
            },
            class_id: 0,
            score: 0.5,
        }
    }

    #[test]
    fn bootstrap_frame_creates_one_object_per_measurement() {
        let mut t = Tracker::new(small_cfg(), 1).unwrap();
        let m = [
            meas(0.0, 0.0, 1.0, 0.0),
            meas(20.0, 0.0, 0.0, 1.0),
            meas(-20.0, 5.0, 0.0, 0.0),
        ];
        let out = t.step(&m, None, None).unwrap();
        assert_eq!(t.state().len(), 3);
        assert_eq!(out.diagnostics.legacy, 0);
        assert_eq!(out.diagnostics.new, 3);
        let ids: Vec<u64> = t.state().iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn declaration_threshold_is_closed() {
        let cfg = small_cfg();
        let p = vec![StateVec::new(1.0, 2.0, 0.0, 0.0)];
        let state = vec![po(0, 0.49, p.clone()), po(1, 0.5, p)];
        let est = declare_and_estimate(&state, &cfg);
        assert_eq!(est.len(), 1);
        assert_eq!(est[0].id, 1);
    }

    #[test]
    fn bimodal_cloud_estimate_is_midpoint() {
        let cfg = small_cfg();
        let a = StateVec::new(-3.0, 1.0, 2.0, 0.0);
        let b = StateVec::new(3.0, 1.0, -2.0, 0.0);
        let state = vec![po(0, 0.9, vec![a, b, a, b])];
        let est = declare_and_estimate(&state, &cfg);
        assert!((est[0].state - StateVec::new(0.0, 1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn gaussian_cloud_estimate_concentrates() {
        let cfg = small_cfg();
        let mut rng = Rng::new(3);
        let mean = StateVec::new(5.0, -2.0, 1.0, 0.5);
        let cov = StateCov::from_diagonal(&StateVec::new(4.0, 1.0, 0.25, 0.25));
        let n = 5000;
        let ps = ParticleSet::sample(&mean, &cov, n, &mut rng).unwrap();
        let state = vec![po(0, 0.9, ps.particles)];
        let est = declare_and_estimate(&state, &cfg);
        for d in 0..4 {
            let se = (cov[(d, d)] / n as f64).sqrt();
            assert!((est[0].state[d] - mean[d]).abs() < 3.0 * se);
        }
    }

    #[test]
    fn pruning_threshold_is_closed() {
        let cfg = small_cfg();
        let p = vec![StateVec::zeros()];
        let state = vec![
            po(0, 1e-5, p.clone()),
            po(1, cfg.t_pru, p.clone()),
            po(2, 0.3, p),
        ];
        let ids: Vec<u64> = prune(state, &cfg).iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![1, 2]);
        assert!(prune(Vec::new(), &cfg).is_empty());
    }

    #[test]
    fn undetected_existence_decays_monotonically() {
        let mut t = Tracker::new(small_cfg(), 2).unwrap();
        t.step(&[meas(0.0, 0.0, 1.0, 0.0)], None, None).unwrap();
        t.step(&[meas(0.5, 0.0, 1.0, 0.0)], None, None).unwrap();
        let id = t.state()[0].id;
        let mut last = t.state()[0].existence;
        for _ in 0..6 {
            t.step(&[], None, None).unwrap();
            let Some(p) = t.state().iter().find(|p| p.id == id) else {
                break;
            };
            assert!(p.existence < last);
            last = p.existence;
        }
    }

    #[test]
    fn model_based_mode_never_calls_networks() {
        let cfg = small_cfg();
        let nets = NetworkParams::new(
            MotionConfig::default(),
            MeasNetConfig::default(),
            &mut Rng::new(0),
        );
        let before = forward_calls();
        let mut t = Tracker::new(cfg, 4).unwrap();
        for k in 0..5 {
            let x = k as f64 * 0.5;
            t.step(
                &[meas(x, 0.0, 1.0, 0.0), meas(10.0, x, 0.0, 1.0)],
                None,
                Some(&nets),
            )
            .unwrap();
        }
        assert_eq!(forward_calls(), before);
    }

    #[test]
    fn neural_mode_requires_weights() {
        let cfg = TrackerConfig {
            mode: TrackerMode::Ne,
            ..small_cfg()
        };
        let mut t = Tracker::new(cfg, 0).unwrap();
        assert!(matches!(
            t.step(&[], None, None),
            Err(Error::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn ids_strictly_increase_and_counts_balance() {
        let mut t = Tracker::new(small_cfg(), 5).unwrap();
        let mut seen = Vec::new();
        for k in 0..8 {
            let x = k as f64 * 0.5;
            let before = t.state().len();
            let m = [meas(x, 0.0, 1.0, 0.0), meas(30.0, -x, 0.0, -1.0)];
            let out = t.step(&m, None, None).unwrap();
            let d = &out.diagnostics;
            assert_eq!(d.legacy, before - d.dropped);
            assert_eq!(t.state().len(), d.legacy + m.len() - d.pruned);
            for p in t.state() {
                if !seen.contains(&p.id) {
                    assert!(seen.iter().all(|s| *s < p.id));
                    seen.push(p.id);
                }
            }
        }
    }

    #[test]
    fn mode_parsing() {
        for m in TrackerMode::ALL {
            assert_eq!(m.as_str().parse::<TrackerMode>().unwrap(), m);
        }
        assert!("bogus".parse::<TrackerMode>().is_err());
    }

    #[test]
    fn invalid_thresholds_rejected() {
        let cfg = TrackerConfig {
            t_pru: 0.6,
            ..TrackerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
