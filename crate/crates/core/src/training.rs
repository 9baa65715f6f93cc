//! Training losses, ground-truth labeling, augmentation, motion-model
//! pretraining and joint training of all networks through the tracker.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{gated_assignment, nearest_neighbors};
use crate::measurement::Measurement;
use crate::motion::{motion_forward, motion_forward_train, MotionParams, MotionTape};
use crate::network::NetworkParams;
use crate::neural::{AdamState, Parametric};
use crate::numerics::{Rng, StateVec};
use crate::simulator::{gt_tracks, GtObject, Scene};
use crate::tracker::{StepRecord, Tracker, TrackerConfig, TrackerMode};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// `sigmoid(ln f)` written as `f / (1 + f)`.
pub fn prob_from_factor(f: f64) -> f64 {
    if f.is_infinite() {
        1.0
    } else {
        f / (1.0 + f)
    }
}

fn clamp_prob(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    (c, c != p)
}

/// Mean L1 distance over matched `(estimate, ground truth)` index pairs;
/// zero (with a warning) when there are no pairs.
pub fn motion_loss(estimates: &[StateVec], gt: &[StateVec], matches: &[(usize, usize)]) -> f64 {
    if matches.is_empty() {
        log::warn!("motion loss over an empty match set");
        return 0.0;
    }
    matches
        .iter()
        .map(|&(e, g)| (estimates[e] - gt[g]).abs().sum())
        .sum::<f64>()
        / matches.len() as f64
}

/// Gradient of [`motion_loss`] with respect to each matched estimate.
pub fn motion_loss_grad(
    estimates: &[StateVec],
    gt: &[StateVec],
    matches: &[(usize, usize)],
) -> Vec<(usize, StateVec)> {
    let n = matches.len() as f64;
    matches
        .iter()
        .map(|&(e, g)| {
            (
                e,
                (estimates[e] - gt[g]).map(|d| d.signum() * (d != 0.0) as u8 as f64) / n,
            )
        })
        .collect()
}

/// Class-balanced binary cross entropy of a factor table: positives and
/// negatives are each averaged separately. A term without labels is 0.
/// Returns the loss and its gradient with respect to `ln f`.
fn balanced_bce(probs: &[f64], labels: &[bool], w_neg: f64) -> (f64, Vec<f64>) {
    let n_pos = labels.iter().filter(|l| **l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for (k, (&p, &l)) in probs.iter().zip(labels).enumerate() {
        let (c, clamped) = clamp_prob(p);
        if l {
            loss -= c.ln() / n_pos;
            if !clamped {
                grad[k] = -(1.0 - p) / n_pos;
            }
        } else {
            loss -= w_neg * (1.0 - c).ln() / n_neg;
            if !clamped {
                grad[k] = w_neg * p / n_neg;
            }
        }
    }
    (loss, grad)
}

/// Affinity loss from factor values and a 0/1 label table of equal shape.
pub fn affinity_loss(f_af: &DMatrix<f64>, af_gt: &DMatrix<f64>) -> f64 {
    affinity_loss_grad(f_af, af_gt).0
}

/// [`affinity_loss`] and its gradient with respect to the affinity logits.
pub fn affinity_loss_grad(f_af: &DMatrix<f64>, af_gt: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let probs: Vec<f64> = f_af.iter().map(|f| prob_from_factor(*f)).collect();
    let labels: Vec<bool> = af_gt.iter().map(|g| *g > 0.5).collect();
    let (loss, g) = balanced_bce(&probs, &labels, 1.0);
    (loss, DMatrix::from_vec(f_af.nrows(), f_af.ncols(), g))
}

/// False-positive-rejection loss; `fpr_gt[j]` is true for real detections.
pub fn fpr_loss(f_fpr: &[f64], fpr_gt: &[bool], w_fpr: f64) -> f64 {
    fpr_loss_grad(f_fpr, fpr_gt, w_fpr).0
}

/// [`fpr_loss`] and its gradient with respect to the FPR logits.
pub fn fpr_loss_grad(f_fpr: &[f64], fpr_gt: &[bool], w_fpr: f64) -> (f64, Vec<f64>) {
    balanced_bce(f_fpr, fpr_gt, w_fpr)
}

pub fn joint_loss(motion: f64, meas: f64, w_meas: f64) -> f64 {
    motion + w_meas * meas
}

/// Training labels of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchLabels {
    /// `I x J`, 1 where legacy object `i` and measurement `j` are matched to
    /// the same ground-truth object.
    pub af_gt: DMatrix<f64>,
    /// True where measurement `j` is matched to a ground-truth object.
    pub fpr_gt: Vec<bool>,
    /// `(legacy index, ground-truth index)`.
    pub motion_pairs: Vec<(usize, usize)>,
}

fn position_cost(a: &[StateVec], b: &[StateVec]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        (a[i][0] - b[j][0]).hypot(a[i][1] - b[j][1])
    })
}

/// Labels from gated Hungarian matching on position distance: measurements
/// to ground truth and legacy estimates to ground truth.
pub fn label_frame(
    gt: &[GtObject],
    meas: &[Measurement],
    legacy: &[StateVec],
    gate: f64,
) -> MatchLabels {
    let gt_states: Vec<StateVec> = gt.iter().map(|g| g.state).collect();
    let z: Vec<StateVec> = meas.iter().map(|m| m.z).collect();
    let meas_match = gated_assignment(&position_cost(&gt_states, &z), gate);
    let obj_match = gated_assignment(&position_cost(legacy, &gt_states), gate);
    let mut fpr_gt = vec![false; meas.len()];
    let mut meas_of_gt = vec![None; gt.len()];
    for &(g, j) in &meas_match {
        fpr_gt[j] = true;
        meas_of_gt[g] = Some(j);
    }
    let mut af_gt = DMatrix::zeros(legacy.len(), meas.len());
    for &(i, g) in &obj_match {
        if let Some(j) = meas_of_gt[g] {
            af_gt[(i, j)] = 1.0;
        }
    }
    MatchLabels {
        af_gt,
        fpr_gt,
        motion_pairs: obj_match,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise_pos: f64,
    pub noise_vel: f64,
    /// Std of a constant per-track offset.
    pub bias_pos: f64,
    pub bias_vel: f64,
    pub drop_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_pos: 0.3,
            noise_vel: 0.5,
            bias_pos: 0.05,
            bias_vel: 0.05,
            drop_prob: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            noise_pos: 0.0,
            noise_vel: 0.0,
            bias_pos: 0.0,
            bias_vel: 0.0,
            drop_prob: 0.0,
        }
    }
}

/// Adds Gaussian noise and a constant per-track bias and drops states with
/// probability `drop_prob`.
pub fn augment(
    track: &[(usize, StateVec)],
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Vec<(usize, StateVec)> {
    let bias = StateVec::new(
        cfg.bias_pos * rng.normal(),
        cfg.bias_pos * rng.normal(),
        cfg.bias_vel * rng.normal(),
        cfg.bias_vel * rng.normal(),
    );
    let mut out = Vec::with_capacity(track.len());
    for &(k, x) in track {
        let noise = StateVec::new(
            cfg.noise_pos * rng.normal(),
            cfg.noise_pos * rng.normal(),
            cfg.noise_vel * rng.normal(),
            cfg.noise_vel * rng.normal(),
        );
        let drop = cfg.drop_prob > 0.0 && rng.bernoulli(cfg.drop_prob);
        if !drop {
            out.push((k, x + bias + noise));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub w_fpr: f64,
    pub w_meas: f64,
    pub lr_joint: f64,
    /// Frames per joint-training update.
    pub batch_joint: usize,
    pub lr_pre: f64,
    /// Windows per pretraining update.
    pub batch_pre: usize,
    pub epochs_pre: usize,
    pub epochs_joint: usize,
    /// Pretraining window length (steps of back-propagation through time).
    pub window: usize,
    pub augment: AugmentConfig,
    /// Labeling gate on position distance (m).
    pub label_gate: f64,
    /// Every `1 / validation_fraction`-th scene is held out.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            w_fpr: 0.1,
            w_meas: 1.0,
            lr_joint: 1e-3,
            batch_joint: 1,
            lr_pre: 3e-3,
            batch_pre: 32,
            epochs_pre: 100,
            epochs_joint: 2,
            window: 10,
            augment: AugmentConfig::default(),
            label_gate: 2.0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.w_fpr < 0.0 || self.w_meas < 0.0 {
            return Err(Error::config("w_meas", "loss weights must be nonnegative"));
        }
        if !(self.lr_joint > 0.0 && self.lr_pre > 0.0) {
            return Err(Error::config("lr_pre", "learning rates must be positive"));
        }
        if self.batch_joint == 0 || self.batch_pre == 0 || self.window == 0 {
            return Err(Error::config(
                "batch_pre",
                "batch sizes and window must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in [0, 1)"));
        }
        let a = &self.augment;
        if a.noise_pos < 0.0 || a.noise_vel < 0.0 || a.bias_pos < 0.0 || a.bias_vel < 0.0 {
            return Err(Error::config("augment", "magnitudes must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&a.drop_prob) {
            return Err(Error::config("augment", "drop_prob must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Indices of training and validation scenes. Every `round(1 / fraction)`-th
/// scene is held out; with fewer scenes than that, all are used for training.
pub fn split_validation(n: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    if fraction <= 0.0 {
        return ((0..n).collect(), Vec::new());
    }
    let every = (1.0 / fraction).round().max(1.0) as usize;
    (0..n).partition(|i| (i + 1) % every != 0)
}

/// One loss value per epoch (epoch 0 is the initial model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation affinity loss (joint training only).
    pub val_affinity: f64,
    pub val_fpr: f64,
    pub val_motion: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult<P> {
    pub params: P,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// One step of a pretraining window.
#[derive(Debug, Clone)]
struct WindowStep {
    /// Perturbed observation; `None` when dropped.
    input: Option<StateVec>,
    neighbors: Vec<StateVec>,
    target: StateVec,
}

/// Windows of consecutive one-step-ahead samples from the ground-truth
/// tracks of a scene, with perturbed inputs and neighbors.
fn build_windows(
    scene: &Scene,
    aug: &AugmentConfig,
    window: usize,
    max_neighbors: usize,
    rng: &mut Rng,
) -> Vec<Vec<WindowStep>> {
    let tracks = gt_tracks(scene);
    let mut frames: BTreeMap<usize, Vec<(u64, StateVec)>> = BTreeMap::new();
    let mut perturbed: Vec<(u64, BTreeMap<usize, StateVec>)> = Vec::with_capacity(tracks.len());
    for (id, tr) in &tracks {
        let kept: BTreeMap<usize, StateVec> = augment(tr, aug, rng).into_iter().collect();
        for (k, x) in &kept {
            frames.entry(*k).or_default().push((*id, *x));
        }
        perturbed.push((*id, kept));
    }
    let mut windows = Vec::new();
    for ((id, tr), (_, kept)) in tracks.iter().zip(&perturbed) {
        if tr.len() < 2 {
            continue;
        }
        let offset = rng.index(window.min(tr.len() - 1));
        let steps: Vec<WindowStep> = (0..tr.len() - 1)
            .map(|t| {
                let (k, _) = tr[t];
                let input = kept.get(&k).copied();
                let others: Vec<StateVec> = frames
                    .get(&k)
                    .map(|v| v.iter().filter(|(o, _)| o != id).map(|(_, x)| *x).collect())
                    .unwrap_or_default();
                let reference = input.unwrap_or(tr[t].1);
                let mut all = vec![reference];
                all.extend_from_slice(&others);
                let neighbors = nearest_neighbors(&all, 0, max_neighbors)
                    .into_iter()
                    .map(|m| all[m])
                    .collect();
                WindowStep {
                    input,
                    neighbors,
                    target: tr[t + 1].1,
                }
            })
            .collect();
        let mut start = 0;
        let first = if offset > 0 { offset } else { window };
        let mut end = first.min(steps.len());
        while start < steps.len() {
            windows.push(steps[start..end].to_vec());
            start = end;
            end = (end + window).min(steps.len());
        }
    }
    windows
}

/// Forward pass over a window. Dropped steps feed the previous prediction
/// back as input (treated as data); a window starting with a drop skips
/// steps until the first observation. Returns per-step outputs and tapes.
fn run_window(
    theta: &MotionParams,
    w: &[WindowStep],
    record: bool,
) -> Result<(f64, usize, Vec<(Option<MotionTape>, StateVec)>)> {
    let mut h = DVector::zeros(theta.hidden_dim());
    let mut prev: Option<StateVec> = None;
    let mut loss = 0.0;
    let mut n = 0;
    let mut steps = Vec::with_capacity(w.len());
    for s in w {
        let Some(x) = s.input.or(prev) else {
            continue;
        };
        let (xn, hn, tape) = if record {
            let (a, b, t) = motion_forward_train(&x, &s.neighbors, &h, theta)?;
            (a, b, Some(t))
        } else {
            let (a, b) = motion_forward(&x, &s.neighbors, &h, theta)?;
            (a, b, None)
        };
        let diff = xn - s.target;
        loss += diff.abs().sum();
        n += 1;
        steps.push((
            tape,
            diff.map(|d| {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }),
        ));
        h = hn;
        prev = Some(xn);
    }
    Ok((loss, n, steps))
}

fn windows_loss(theta: &MotionParams, windows: &[Vec<WindowStep>]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for w in windows {
        let (l, k, _) = run_window(theta, w, false)?;
        total += l;
        n += k;
    }
    Ok(if n > 0 { total / n as f64 } else { 0.0 })
}

/// Pretrains the motion network on perturbed ground-truth tracks with the
/// one-step L1 loss and returns the weights of the best validation epoch.
pub fn pretrain_motion(
    scenes: &[Scene],
    init: MotionParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainResult<MotionParams>> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_validation(scenes.len(), cfg.validation_fraction);
    let m = init.config.max_neighbors;
    // Validation windows are perturbed once so epochs are comparable.
    let mut val_rng = Rng::with_stream(seed, 101);
    let val_windows: Vec<Vec<WindowStep>> = val_idx
        .iter()
        .flat_map(|&i| build_windows(&scenes[i], &cfg.augment, cfg.window, m, &mut val_rng))
        .collect();
    let mut rng = Rng::with_stream(seed, 100);
    let mut theta = init;
    let mut adam = AdamState::for_model(&theta, cfg.lr_pre);
    let started = std::time::Instant::now();
    let eval_val = |theta: &MotionParams, train_loss: f64| -> Result<f64> {
        if val_windows.is_empty() {
            Ok(train_loss)
        } else {
            windows_loss(theta, &val_windows)
        }
    };
    let mut history = Vec::new();
    let mut init_windows_rng = Rng::with_stream(seed, 102);
    let init_train: Vec<Vec<WindowStep>> = train_idx
        .iter()
        .flat_map(|&i| {
            build_windows(
                &scenes[i],
                &cfg.augment,
                cfg.window,
                m,
                &mut init_windows_rng,
            )
        })
        .collect();
    let l0 = windows_loss(&theta, &init_train)?;
    let v0 = eval_val(&theta, l0)?;
    history.push(EpochLog {
        epoch: 0,
        train_loss: l0,
        val_loss: v0,
        val_affinity: 0.0,
        val_fpr: 0.0,
        val_motion: v0,
        seconds: 0.0,
    });
    let mut best = (v0, 0usize, theta.clone());
    for epoch in 1..=cfg.epochs_pre {
        let mut windows: Vec<Vec<WindowStep>> = train_idx
            .iter()
            .flat_map(|&i| build_windows(&scenes[i], &cfg.augment, cfg.window, m, &mut rng))
            .collect();
        for k in (1..windows.len()).rev() {
            let j = rng.index(k + 1);
            windows.swap(k, j);
        }
        let mut epoch_loss = 0.0;
        let mut epoch_n = 0;
        for (step, batch) in windows.chunks(cfg.batch_pre).enumerate() {
            let mut runs = Vec::with_capacity(batch.len());
            let mut n = 0;
            for w in batch {
                let r = run_window(&theta, w, true)?;
                epoch_loss += r.0;
                n += r.1;
                runs.push(r.2);
            }
            if n == 0 {
                continue;
            }
            epoch_n += n;
            let mut grad = theta.zeros_like();
            let scale = 1.0 / n as f64;
            for run in runs {
                let mut dh = DVector::zeros(theta.hidden_dim());
                for (tape, sign) in run.into_iter().rev() {
                    dh = theta.backward(tape.expect("recorded"), &(sign * scale), &dh, &mut grad);
                }
            }
            if !grad.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            adam.step_model(&mut theta, &grad);
        }
        let train_loss = if epoch_n > 0 {
            epoch_loss / epoch_n as f64
        } else {
            0.0
        };
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: 0 });
        }
        let val = eval_val(&theta, train_loss)?;
        log::info!("pretrain epoch {epoch}: train {train_loss:.4} val {val:.4}");
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss: val,
            val_affinity: 0.0,
            val_fpr: 0.0,
            val_motion: val,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val < best.0 {
            best = (val, epoch, theta.clone());
        }
    }
    Ok(TrainResult {
        params: best.2,
        history,
        best_epoch: best.1,
    })
}

/// Loss components of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameLosses {
    pub motion: f64,
    pub affinity: f64,
    pub fpr: f64,
}

impl FrameLosses {
    pub fn joint(&self, w_meas: f64) -> f64 {
        joint_loss(self.motion, self.affinity + self.fpr, w_meas)
    }
}

/// Losses of a tracked frame and, optionally, their gradients pushed into
/// `grad`. The motion gradient reaches the network through the predicted
/// mean (the posterior estimate is taken to move one-for-one with it and
/// particle weights are held fixed); factor gradients go through the logits.
fn frame_losses(
    rec: StepRecord,
    gt: &[GtObject],
    meas: &[Measurement],
    cfg: &TrainConfig,
    backprop: Option<(&NetworkParams, &mut NetworkParams)>,
) -> FrameLosses {
    let labels = label_frame(gt, meas, &rec.legacy_posterior, cfg.label_gate);
    let gt_states: Vec<StateVec> = gt.iter().map(|g| g.state).collect();
    let motion = motion_loss(&rec.legacy_posterior, &gt_states, &labels.motion_pairs);
    let mut out = FrameLosses {
        motion,
        ..FrameLosses::default()
    };
    let (aff, d_aff) = affinity_loss_grad(&rec.factors.affinity, &labels.af_gt);
    let (fpr, d_fpr) = fpr_loss_grad(&rec.factors.fpr, &labels.fpr_gt, cfg.w_fpr);
    out.affinity = aff;
    out.fpr = fpr;
    if let Some((theta, grad)) = backprop {
        let mut tapes = rec.sp_tapes;
        for (i, d) in motion_loss_grad(&rec.legacy_posterior, &gt_states, &labels.motion_pairs) {
            if let Some(t) = tapes[i].take() {
                t.backward(&theta.motion, &d, &mut grad.motion);
            }
        }
        if cfg.w_meas > 0.0 {
            if let Some((_, tape)) = rec.factor_grad {
                let w = cfg.w_meas;
                let d_fpr: Vec<f64> = d_fpr.iter().map(|g| g * w).collect();
                tape.backward(&theta.meas, &(d_aff * w), &d_fpr, &mut grad.meas);
            }
        }
    }
    out
}

/// Mean per-frame losses of tracking `scenes` with `mode` (no updates).
/// Frames are those from the second one on, so legacy objects exist.
pub fn evaluate_losses(
    scenes: &[&Scene],
    nets: &NetworkParams,
    tracker: &TrackerConfig,
    mode: TrackerMode,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<FrameLosses> {
    let tcfg = TrackerConfig {
        mode,
        ..tracker.clone()
    };
    let mut acc = FrameLosses::default();
    let mut n = 0;
    for (s, scene) in scenes.iter().enumerate() {
        let mut t = Tracker::new(tcfg.clone(), seed.wrapping_add(s as u64))?;
        for frame in &scene.frames {
            let (_, rec) = t.step_train(&frame.measurements, Some(&frame.feature_map), nets)?;
            if frame.k == 0 {
                continue;
            }
            let l = frame_losses(rec, &frame.gt, &frame.measurements, cfg, None);
            acc.motion += l.motion;
            acc.affinity += l.affinity;
            acc.fpr += l.fpr;
            n += 1;
        }
    }
    if n > 0 {
        let n = n as f64;
        acc.motion /= n;
        acc.affinity /= n;
        acc.fpr /= n;
    }
    Ok(acc)
}

/// Joint training: each training scene is tracked with the current weights
/// and every `batch_joint` frames the accumulated joint-loss gradient is
/// applied with Adam. Returns the weights of the best validation epoch.
pub fn joint_train(
    scenes: &[Scene],
    init: NetworkParams,
    tracker: &TrackerConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainResult<NetworkParams>> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_validation(scenes.len(), cfg.validation_fraction);
    let val: Vec<&Scene> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| &scenes[i]).collect()
    } else {
        val_idx.iter().map(|&i| &scenes[i]).collect()
    };
    let tcfg = TrackerConfig {
        mode: TrackerMode::Ne,
        ..tracker.clone()
    };
    let mut theta = init;
    let mut adam = AdamState::for_model(&theta, cfg.lr_joint);
    let started = std::time::Instant::now();
    let val_seed = seed.wrapping_add(1_000_003);
    let l0 = evaluate_losses(&val, &theta, &tcfg, TrackerMode::Ne, cfg, val_seed)?;
    let j0 = l0.joint(cfg.w_meas);
    let mut history = vec![EpochLog {
        epoch: 0,
        train_loss: j0,
        val_loss: j0,
        val_affinity: l0.affinity,
        val_fpr: l0.fpr,
        val_motion: l0.motion,
        seconds: 0.0,
    }];
    let mut best = (j0, 0usize, theta.clone());
    let mut rng = Rng::with_stream(seed, 200);
    for epoch in 1..=cfg.epochs_joint {
        let mut order = train_idx.clone();
        for k in (1..order.len()).rev() {
            let j = rng.index(k + 1);
            order.swap(k, j);
        }
        let mut epoch_loss = 0.0;
        let mut frames = 0;
        let mut step = 0;
        for &si in &order {
            let scene = &scenes[si];
            let mut t = Tracker::new(tcfg.clone(), rng.next_u64())?;
            let mut grad = theta.zeros_like();
            let mut pending = 0;
            for frame in &scene.frames {
                let (_, rec) =
                    t.step_train(&frame.measurements, Some(&frame.feature_map), &theta)?;
                if frame.k == 0 {
                    continue;
                }
                let l = frame_losses(
                    rec,
                    &frame.gt,
                    &frame.measurements,
                    cfg,
                    Some((&theta, &mut grad)),
                );
                let j = l.joint(cfg.w_meas);
                if !j.is_finite() || !grad.all_finite() {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                epoch_loss += j;
                frames += 1;
                pending += 1;
                if pending == cfg.batch_joint {
                    adam.step_model(&mut theta, &grad);
                    grad = theta.zeros_like();
                    pending = 0;
                    step += 1;
                }
            }
            if pending > 0 {
                adam.step_model(&mut theta, &grad);
                step += 1;
            }
        }
        let train_loss = if frames > 0 {
            epoch_loss / frames as f64
        } else {
            0.0
        };
        let l = evaluate_losses(&val, &theta, &tcfg, TrackerMode::Ne, cfg, val_seed)?;
        let v = l.joint(cfg.w_meas);
        log::info!(
            "joint epoch {epoch}: train {train_loss:.4} val {v:.4} (motion {:.4} affinity {:.4} fpr {:.4})",
            l.motion,
            l.affinity,
            l.fpr
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            val_loss: v,
            val_affinity: l.affinity,
            val_fpr: l.fpr,
            val_motion: l.motion,
            seconds: started.elapsed().as_secs_f64(),
        });
        if v < best.0 {
            best = (v, epoch, theta.clone());
        }
    }
    Ok(TrainResult {
        params: best.2,
        history,
        best_epoch: best.1,
    })
}
