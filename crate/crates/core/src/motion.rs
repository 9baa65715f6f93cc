//! Prediction step: constant-velocity baseline, the learnable interacting
//! motion network and sigma-point propagation through it.
//!
//! The network maps an object state `x`, the states of up to `M` neighbors
//! and a recurrent hidden state `h` to the next state and hidden state:
//!
//! ```text
//! f_x = EncA([norm(x); h])
//! f_s = sum_m w_m EncB(rel(s_m - x))       w_m ~ 1 / distance, normalized
//! h'  = GRU([f_x; f_s], h)
//! x'  = F x + out_scale * Dec(h')
//! ```
//!
//! The decoder predicts a correction on top of the constant-velocity
//! transition `F`, so a zero final decoder layer reproduces constant
//! velocity exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{join, Activation, Gru, GruTape, Mlp, MlpTape, Parametric};
use crate::numerics::{
    clip_to_psd4, generate_sigma_points, symmetrize4, GaussianState, Rng, StateCov, StateVec,
    UtParams, STATE_DIM,
};

/// Constant-velocity transition matrix.
pub fn cv_transition(dt: f64) -> StateCov {
    let mut f = StateCov::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// White-noise-acceleration process noise with acceleration std `sigma_a`.
pub fn cv_process_noise(dt: f64, sigma_a: f64) -> StateCov {
    let q = sigma_a * sigma_a;
    let (a, b, c) = (dt.powi(4) / 4.0, dt.powi(3) / 2.0, dt * dt);
    let mut m = StateCov::zeros();
    for k in 0..2 {
        m[(k, k)] = a * q;
        m[(k, k + 2)] = b * q;
        m[(k + 2, k)] = b * q;
        m[(k + 2, k + 2)] = c * q;
    }
    m
}

/// Kalman prediction under the constant-velocity model.
pub fn cv_predict(g: &GaussianState, dt: f64, q: &StateCov) -> GaussianState {
    let f = cv_transition(dt);
    let mean = f * g.state_mean();
    let cov = symmetrize4(&(f * g.state_cov() * f.transpose() + q));
    GaussianState::from_state(&mean, &cov)
}

/// Coincident-position floor for neighbor weighting (m).
pub const NEIGHBOR_EPS: f64 = 1e-6;

/// Normalized inverse-distance weights.
pub fn neighbor_weights(ref_pos: [f64; 2], neighbor_pos: &[[f64; 2]]) -> Vec<f64> {
    let raw: Vec<f64> = neighbor_pos
        .iter()
        .map(|p| {
            let d = ((p[0] - ref_pos[0]).powi(2) + (p[1] - ref_pos[1]).powi(2)).sqrt();
            1.0 / d.max(NEIGHBOR_EPS)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Static (non-learned) configuration of the motion network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub hidden_dim: usize,
    pub max_neighbors: usize,
    pub dt: f64,
    /// Scale of absolute positions fed to Encoder A (m).
    pub pos_scale: f64,
    /// Scale of velocities fed to both encoders (m/s).
    pub vel_scale: f64,
    /// Scale of relative neighbor positions fed to Encoder B (m).
    pub rel_pos_scale: f64,
    /// Per-component scale of the decoder correction.
    pub out_scale: [f64; 4],
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            max_neighbors: 10,
            dt: 0.5,
            pos_scale: 54.0,
            vel_scale: 10.0,
            rel_pos_scale: 10.0,
            out_scale: [0.25, 0.25, 1.0, 1.0],
        }
    }
}

/// Learnable motion-network weights plus their static configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    pub config: MotionConfig,
    pub encoder_a: Mlp,
    pub encoder_b: Mlp,
    pub gru: Gru,
    pub decoder: Mlp,
}

impl MotionParams {
    pub fn new(config: MotionConfig, rng: &mut Rng) -> Self {
        let d = config.hidden_dim;
        Self {
            config,
            encoder_a: Mlp::new(
                &[STATE_DIM + d, d, d],
                Activation::Relu,
                Activation::Relu,
                rng,
            ),
            encoder_b: Mlp::new(&[STATE_DIM, d, d], Activation::Relu, Activation::Relu, rng),
            gru: Gru::new(2 * d, d, rng),
            decoder: Mlp::new(
                &[d, d, STATE_DIM],
                Activation::Tanh,
                Activation::Identity,
                rng,
            ),
        }
    }

    /// Random weights except a zero final decoder layer, so that
    /// [`motion_forward`] returns exactly `F x` while the hidden state still
    /// evolves.
    pub fn linear_mode(config: MotionConfig, rng: &mut Rng) -> Self {
        let mut p = Self::new(config, rng);
        let last = p.decoder.last_mut();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        p
    }

    /// All weights and biases zero.
    pub fn zeros(config: MotionConfig) -> Self {
        let mut p = Self::new(config, &mut Rng::new(0));
        p.fill(0.0);
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            encoder_a: self.encoder_a.zeros_like(),
            encoder_b: self.encoder_b.zeros_like(),
            gru: self.gru.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn depth(&self) -> usize {
        self.encoder_a.depth() + 1 + self.decoder.depth()
    }

    fn encode_self(&self, x: &StateVec, h: &DVector<f64>) -> DVector<f64> {
        let c = &self.config;
        let mut v = DVector::zeros(STATE_DIM + h.len());
        v[0] = x[0] / c.pos_scale;
        v[1] = x[1] / c.pos_scale;
        v[2] = x[2] / c.vel_scale;
        v[3] = x[3] / c.vel_scale;
        v.rows_mut(STATE_DIM, h.len()).copy_from(h);
        v
    }

    fn encode_neighbor(&self, x: &StateVec, s: &StateVec) -> DVector<f64> {
        let c = &self.config;
        DVector::from_vec(vec![
            (s[0] - x[0]) / c.rel_pos_scale,
            (s[1] - x[1]) / c.rel_pos_scale,
            (s[2] - x[2]) / c.vel_scale,
            (s[3] - x[3]) / c.vel_scale,
        ])
    }

    fn out_scale(&self) -> StateVec {
        StateVec::from_column_slice(&self.config.out_scale)
    }

    fn check(&self, neighbors: &[StateVec], h: &DVector<f64>) -> Result<()> {
        if h.len() != self.hidden_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.hidden_dim(),
                got: h.len(),
            });
        }
        if neighbors.len() > self.config.max_neighbors {
            return Err(Error::DimensionMismatch {
                expected: self.config.max_neighbors,
                got: neighbors.len(),
            });
        }
        Ok(())
    }

    /// Reverse pass of one [`motion_forward_train`] call.
    ///
    /// `dx_next` and `dh_next` are the loss gradients with respect to the
    /// two outputs. Parameter gradients are accumulated into `grad`; the
    /// gradient with respect to the input hidden state is returned.
    pub fn backward(
        &self,
        tape: MotionTape,
        dx_next: &StateVec,
        dh_next: &DVector<f64>,
        grad: &mut MotionParams,
    ) -> DVector<f64> {
        let d = self.hidden_dim();
        let d_dec = DVector::from_column_slice(dx_next.component_mul(&self.out_scale()).as_slice());
        let mut dh_new = self
            .decoder
            .backward(tape.decoder, &d_dec, &mut grad.decoder);
        dh_new += dh_next;
        let (du, mut dh) = self.gru.backward(tape.gru, &dh_new, &mut grad.gru);
        let d_fx = du.rows(0, d).into_owned();
        let d_fs = du.rows(d, d).into_owned();
        let d_in = self
            .encoder_a
            .backward(tape.encoder_a, &d_fx, &mut grad.encoder_a);
        dh += d_in.rows(STATE_DIM, d);
        for (t, w) in tape.encoder_b {
            self.encoder_b
                .backward(t, &(&d_fs * w), &mut grad.encoder_b);
        }
        dh
    }
}

impl Parametric for MotionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        self.encoder_a.visit(&join(prefix, "encoder_a"), f);
        self.encoder_b.visit(&join(prefix, "encoder_b"), f);
        self.gru.visit(&join(prefix, "gru"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        self.encoder_a.visit_mut(&join(prefix, "encoder_a"), f);
        self.encoder_b.visit_mut(&join(prefix, "encoder_b"), f);
        self.gru.visit_mut(&join(prefix, "gru"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

/// Saved intermediates of one motion-network step.
#[derive(Debug)]
pub struct MotionTape {
    encoder_a: MlpTape,
    encoder_b: Vec<(MlpTape, f64)>,
    gru: GruTape,
    decoder: MlpTape,
}

/// One step of the motion network: `(x_next, h_next)`.
pub fn motion_forward(
    x: &StateVec,
    neighbors: &[StateVec],
    h: &DVector<f64>,
    theta: &MotionParams,
) -> Result<(StateVec, DVector<f64>)> {
    theta.check(neighbors, h)?;
    let d = theta.hidden_dim();
    let f_x = theta.encoder_a.forward(&theta.encode_self(x, h))?;
    let mut f_s = DVector::zeros(d);
    if !neighbors.is_empty() {
        let pos: Vec<[f64; 2]> = neighbors.iter().map(|s| [s[0], s[1]]).collect();
        let w = neighbor_weights([x[0], x[1]], &pos);
        for (s, wm) in neighbors.iter().zip(w) {
            let e = theta.encoder_b.forward(&theta.encode_neighbor(x, s))?;
            f_s.axpy(wm, &e, 1.0);
        }
    }
    let mut u = DVector::zeros(2 * d);
    u.rows_mut(0, d).copy_from(&f_x);
    u.rows_mut(d, d).copy_from(&f_s);
    let h_next = theta.gru.forward(&u, h)?;
    let dec = theta.decoder.forward(&h_next)?;
    let corr = StateVec::from_column_slice(dec.as_slice()).component_mul(&theta.out_scale());
    Ok((cv_transition(theta.config.dt) * x + corr, h_next))
}

/// [`motion_forward`] that also records a tape for [`MotionParams::backward`].
///
/// Gradients flow to the weights and the input hidden state; the state
/// inputs are treated as data.
pub fn motion_forward_train(
    x: &StateVec,
    neighbors: &[StateVec],
    h: &DVector<f64>,
    theta: &MotionParams,
) -> Result<(StateVec, DVector<f64>, MotionTape)> {
    theta.check(neighbors, h)?;
    let d = theta.hidden_dim();
    let (f_x, tape_a) = theta.encoder_a.forward_train(&theta.encode_self(x, h))?;
    let mut f_s = DVector::zeros(d);
    let mut tapes_b = Vec::with_capacity(neighbors.len());
    if !neighbors.is_empty() {
        let pos: Vec<[f64; 2]> = neighbors.iter().map(|s| [s[0], s[1]]).collect();
        let w = neighbor_weights([x[0], x[1]], &pos);
        for (s, wm) in neighbors.iter().zip(w) {
            let (e, t) = theta
                .encoder_b
                .forward_train(&theta.encode_neighbor(x, s))?;
            f_s.axpy(wm, &e, 1.0);
            tapes_b.push((t, wm));
        }
    }
    let mut u = DVector::zeros(2 * d);
    u.rows_mut(0, d).copy_from(&f_x);
    u.rows_mut(d, d).copy_from(&f_s);
    let (h_next, tape_g) = theta.gru.forward_train(&u, h)?;
    let (dec, tape_d) = theta.decoder.forward_train(&h_next)?;
    let corr = StateVec::from_column_slice(dec.as_slice()).component_mul(&theta.out_scale());
    let tape = MotionTape {
        encoder_a: tape_a,
        encoder_b: tapes_b,
        gru: tape_g,
        decoder: tape_d,
    };
    Ok((cv_transition(theta.config.dt) * x + corr, h_next, tape))
}

/// Neighbor Gaussians of one object, nearest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSet {
    pub states: Vec<GaussianState>,
}

impl NeighborSet {
    /// Keeps the `max` candidates closest to `reference` (by mean position),
    /// ordered by ascending distance. Ties keep candidate order.
    pub fn select(reference: &StateVec, candidates: &[GaussianState], max: usize) -> Self {
        let mut ranked: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let m = g.state_mean();
                ((m[0] - reference[0]).hypot(m[1] - reference[1]), k)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Self {
            states: ranked
                .into_iter()
                .take(max)
                .map(|(_, k)| candidates[k].clone())
                .collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.states.len()
    }

    pub fn means(&self) -> Vec<StateVec> {
        self.states.iter().map(GaussianState::state_mean).collect()
    }
}

/// How the prior uncertainty is propagated through the motion network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionStrategy {
    /// One network evaluation at the means; covariance propagated by `F`.
    MeanOnly,
    /// Sigma points over the object state, neighbors at their means.
    ObjectSp,
    /// Sigma points over the stacked object and neighbor states.
    JointSp,
}

/// Prior summary of a potential object needed for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct PoSummary {
    pub gaussian: GaussianState,
    pub existence: f64,
    pub hidden: DVector<f64>,
}

/// Output of the prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPo {
    pub gaussian: GaussianState,
    pub existence: f64,
    pub hidden: DVector<f64>,
}

/// Settings shared by every prediction in a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictSettings {
    pub q: StateCov,
    pub p_s: f64,
    pub ut: UtParams,
    pub strategy: PredictionStrategy,
}

/// Saved per-sigma-point tapes for back-propagating into the predicted mean.
#[derive(Debug)]
pub struct SpTape {
    points: Vec<(MotionTape, f64)>,
}

impl SpTape {
    /// Accumulates the gradient of a loss whose gradient with respect to the
    /// predicted mean is `d_mean`.
    pub fn backward(self, theta: &MotionParams, d_mean: &StateVec, grad: &mut MotionParams) {
        let zero_h = DVector::zeros(theta.hidden_dim());
        for (tape, w) in self.points {
            theta.backward(tape, &(d_mean * w), &zero_h, grad);
        }
    }
}

struct SigmaInputs {
    objects: Vec<StateVec>,
    neighbors: Vec<Vec<StateVec>>,
    weights_mean: Vec<f64>,
    weights_cov: Vec<f64>,
}

/// Builds the sigma points for `strategy`. Neighbors whose covariance is
/// exactly zero are held at their means and do not enlarge the stacked
/// state.
fn sigma_inputs(
    po: &PoSummary,
    neighbors: &NeighborSet,
    ut: &UtParams,
    strategy: PredictionStrategy,
) -> Result<SigmaInputs> {
    let means = neighbors.means();
    match strategy {
        PredictionStrategy::MeanOnly => Ok(SigmaInputs {
            objects: vec![po.gaussian.state_mean()],
            neighbors: vec![means],
            weights_mean: vec![1.0],
            weights_cov: vec![1.0],
        }),
        PredictionStrategy::ObjectSp | PredictionStrategy::JointSp => {
            let random: Vec<usize> = if strategy == PredictionStrategy::JointSp {
                (0..neighbors.count())
                    .filter(|&m| neighbors.states[m].cov.iter().any(|v| *v != 0.0))
                    .collect()
            } else {
                Vec::new()
            };
            let n = STATE_DIM * (1 + random.len());
            let mut mean = DVector::zeros(n);
            let mut cov = DMatrix::zeros(n, n);
            mean.rows_mut(0, 4).copy_from(&po.gaussian.mean.rows(0, 4));
            cov.view_mut((0, 0), (4, 4))
                .copy_from(&po.gaussian.cov.view((0, 0), (4, 4)));
            for (slot, &m) in random.iter().enumerate() {
                let o = STATE_DIM * (slot + 1);
                let g = &neighbors.states[m];
                mean.rows_mut(o, 4).copy_from(&g.mean.rows(0, 4));
                cov.view_mut((o, o), (4, 4))
                    .copy_from(&g.cov.view((0, 0), (4, 4)));
            }
            let sp = generate_sigma_points(&GaussianState::new(mean, cov)?, ut)?;
            let mut objects = Vec::with_capacity(sp.len());
            let mut nbrs = Vec::with_capacity(sp.len());
            for p in &sp.points {
                objects.push(StateVec::from_iterator(p.rows(0, 4).iter().copied()));
                let mut s = means.clone();
                for (slot, &m) in random.iter().enumerate() {
                    let o = STATE_DIM * (slot + 1);
                    s[m] = StateVec::from_iterator(p.rows(o, 4).iter().copied());
                }
                nbrs.push(s);
            }
            Ok(SigmaInputs {
                objects,
                neighbors: nbrs,
                weights_mean: sp.weights_mean,
                weights_cov: sp.weights_cov,
            })
        }
    }
}

fn assemble(
    po: &PoSummary,
    inputs: &SigmaInputs,
    outputs: &[(StateVec, DVector<f64>)],
    settings: &PredictSettings,
    dt: f64,
) -> Result<PredictedPo> {
    let mut mean = StateVec::zeros();
    let mut hidden = DVector::zeros(po.hidden.len());
    for ((x, h), w) in outputs.iter().zip(&inputs.weights_mean) {
        mean += x * *w;
        hidden.axpy(*w, h, 1.0);
    }
    let spread = if settings.strategy == PredictionStrategy::MeanOnly {
        let f = cv_transition(dt);
        f * po.gaussian.state_cov() * f.transpose()
    } else {
        let mut c = StateCov::zeros();
        for ((x, _), w) in outputs.iter().zip(&inputs.weights_cov) {
            let d = x - mean;
            c += d * d.transpose() * *w;
        }
        clip_to_psd4(&c)
    };
    let cov = symmetrize4(&(spread + settings.q));
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite())
        || !hidden.iter().all(|v| v.is_finite())
    {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(PredictedPo {
        gaussian: GaussianState::from_state(&mean, &cov),
        existence: (po.existence * settings.p_s).clamp(0.0, 1.0),
        hidden,
    })
}

/// Sigma-point prediction through the motion network.
pub fn sp_predict(
    po: &PoSummary,
    neighbors: &NeighborSet,
    theta: &MotionParams,
    settings: &PredictSettings,
) -> Result<PredictedPo> {
    let inputs = sigma_inputs(po, neighbors, &settings.ut, settings.strategy)?;
    let outputs = inputs
        .objects
        .iter()
        .zip(&inputs.neighbors)
        .map(|(x, s)| motion_forward(x, s, &po.hidden, theta))
        .collect::<Result<Vec<_>>>()?;
    assemble(po, &inputs, &outputs, settings, theta.config.dt)
}

/// [`sp_predict`] that also returns the tapes needed to back-propagate a
/// gradient on the predicted mean into the network weights. The hidden
/// input is treated as a constant.
pub fn sp_predict_train(
    po: &PoSummary,
    neighbors: &NeighborSet,
    theta: &MotionParams,
    settings: &PredictSettings,
) -> Result<(PredictedPo, SpTape)> {
    let inputs = sigma_inputs(po, neighbors, &settings.ut, settings.strategy)?;
    let mut outputs = Vec::with_capacity(inputs.objects.len());
    let mut tapes = Vec::with_capacity(inputs.objects.len());
    for ((x, s), w) in inputs
        .objects
        .iter()
        .zip(&inputs.neighbors)
        .zip(&inputs.weights_mean)
    {
        let (xn, hn, t) = motion_forward_train(x, s, &po.hidden, theta)?;
        outputs.push((xn, hn));
        tapes.push((t, *w));
    }
    let pred = assemble(po, &inputs, &outputs, settings, theta.config.dt)?;
    Ok((pred, SpTape { points: tapes }))
}

/// Predicted existence and CV-propagated Gaussian, without any network.
pub fn cv_predict_po(po: &PoSummary, dt: f64, settings: &PredictSettings) -> PredictedPo {
    PredictedPo {
        gaussian: cv_predict(&po.gaussian, dt, &settings.q),
        existence: (po.existence * settings.p_s).clamp(0.0, 1.0),
        hidden: po.hidden.clone(),
    }
}
