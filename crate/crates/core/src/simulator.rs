//! Synthetic scenes: interacting ground-truth motion, imperfect detections
//! with clutter, and a feature-map surrogate for ROI shape features.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{roi_extract_or_zero, BoxDims, FeatureMap, Region};
use crate::measurement::Measurement;
use crate::numerics::{Rng, StateCov, StateVec};

/// Object class with a fixed box and a persistent map descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub length: f64,
    pub width: f64,
    /// Relative frequency among births.
    pub weight: f64,
    pub descriptor: Vec<f64>,
}

/// Pairwise interaction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    pub enabled: bool,
    /// Distance below which objects push each other apart (m).
    pub repulsion_radius: f64,
    /// Repulsive acceleration scale (m/s^2).
    pub repulsion_strength: f64,
    /// Look-ahead distance for lateral avoidance of approaching objects (m).
    pub avoidance_range: f64,
    /// Lateral avoidance acceleration scale (m/s^2).
    pub avoidance_strength: f64,
    /// Spacing of horizontal lanes (m); 0 disables lane attraction.
    pub lane_spacing: f64,
    pub lane_strength: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            repulsion_radius: 4.0,
            repulsion_strength: 6.0,
            avoidance_range: 15.0,
            avoidance_strength: 6.0,
            lane_spacing: 0.0,
            lane_strength: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub region: Region,
    pub dt: f64,
    pub frames: usize,
    pub initial_objects: usize,
    /// Mean births per frame.
    pub birth_rate: f64,
    /// Mean object lifetime in frames (geometric); 0 means unlimited.
    pub mean_lifetime: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Mean-reversion rate of the maneuver acceleration (1/s).
    pub maneuver_theta: f64,
    /// Stationary std of the maneuver acceleration (m/s^2).
    pub maneuver_sigma: f64,
    /// Gain pulling the speed back to each object's preferred speed (1/s).
    pub speed_gain: f64,
    pub interaction: InteractionConfig,
    pub p_d: f64,
    pub mu_fp: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
    /// Velocity box half-width for clutter velocities (m/s).
    pub clutter_v_max: f64,
    /// Mean lifetime in frames (geometric) of a false-detection source that
    /// moves at constant velocity; 1 draws independent clutter every frame.
    pub clutter_lifetime: f64,
    pub score_true: (f64, f64),
    pub score_clutter: (f64, f64),
    pub classes: Vec<ClassSpec>,
    pub map_size: usize,
    pub map_channels: usize,
    pub background_sigma: f64,
    pub descriptor_jitter: f64,
    pub clutter_descriptor_sigma: f64,
    /// Integration sub-steps per frame.
    pub substeps: usize,
}

fn default_classes() -> Vec<ClassSpec> {
    let pattern = |k: usize| -> Vec<f64> {
        (0..8)
            .map(|c| match (k + c) % 4 {
                0 => 1.0,
                1 => 0.5,
                2 => -0.5,
                _ => -1.0,
            })
            .collect()
    };
    vec![
        ClassSpec {
            name: "car".into(),
            length: 4.5,
            width: 1.9,
            weight: 0.6,
            descriptor: pattern(0),
        },
        ClassSpec {
            name: "truck".into(),
            length: 8.0,
            width: 2.5,
            weight: 0.2,
            descriptor: pattern(1),
        },
        ClassSpec {
            name: "bicycle".into(),
            length: 1.8,
            width: 0.7,
            weight: 0.2,
            descriptor: pattern(2),
        },
    ]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            region: Region::square(54.0),
            dt: 0.5,
            frames: 40,
            initial_objects: 12,
            birth_rate: 0.3,
            mean_lifetime: 0.0,
            speed_min: 2.0,
            speed_max: 8.0,
            maneuver_theta: 0.5,
            maneuver_sigma: 0.5,
            speed_gain: 0.3,
            interaction: InteractionConfig::default(),
            p_d: 0.9,
            mu_fp: 2.0,
            sigma_pos: 0.3,
            sigma_vel: 0.5,
            clutter_v_max: 10.0,
            clutter_lifetime: 1.0,
            score_true: (8.0, 2.0),
            score_clutter: (2.0, 8.0),
            classes: default_classes(),
            map_size: 64,
            map_channels: 8,
            background_sigma: 0.05,
            descriptor_jitter: 0.05,
            clutter_descriptor_sigma: 0.5,
            substeps: 5,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::config("dt", "must be positive"));
        }
        if !self.region.is_valid() {
            return Err(Error::config("region", "must be nondegenerate"));
        }
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(Error::config("p_d", "must lie in [0, 1]"));
        }
        if !(self.clutter_lifetime >= 1.0) {
            return Err(Error::config(
                "clutter_lifetime",
                "must be at least 1 frame",
            ));
        }
        if self.mu_fp < 0.0 || self.birth_rate < 0.0 {
            return Err(Error::config("mu_fp", "rates must be nonnegative"));
        }
        if self.speed_min < 0.0 || self.speed_max < self.speed_min {
            return Err(Error::config(
                "speed_min",
                "need 0 <= speed_min <= speed_max",
            ));
        }
        if self.classes.is_empty() {
            return Err(Error::config("classes", "at least one class required"));
        }
        if self
            .classes
            .iter()
            .any(|c| c.descriptor.len() != self.map_channels)
        {
            return Err(Error::config(
                "classes",
                "descriptor length must equal map_channels",
            ));
        }
        if self.map_size < 2 || self.map_channels == 0 {
            return Err(Error::config(
                "map_size",
                "grid must be at least 2x2 with one channel",
            ));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps", "must be at least 1"));
        }
        Ok(())
    }

    /// Measurement noise covariance `diag(sp^2, sp^2, sv^2, sv^2)`.
    pub fn sigma_r(&self) -> StateCov {
        let (p, v) = (self.sigma_pos.powi(2), self.sigma_vel.powi(2));
        StateCov::from_diagonal(&StateVec::new(p, p, v, v))
    }

    fn class_box(&self, class_id: u32, state: &StateVec) -> BoxDims {
        let c = &self.classes[class_id as usize];
        BoxDims {
            length: c.length,
            width: c.width,
            yaw: state[3].atan2(state[2]),
        }
    }
}

/// Ground-truth object in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u64,
    pub state: StateVec,
    pub bbox: BoxDims,
    pub class_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub k: usize,
    pub gt: Vec<GtObject>,
    pub measurements: Vec<Measurement>,
    /// Ground-truth id behind each measurement (`None` for clutter).
    pub origins: Vec<Option<u64>>,
    pub feature_map: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub frames: Vec<Frame>,
}

/// Internal state of a simulated object.
#[derive(Debug, Clone)]
struct Agent {
    id: u64,
    x: StateVec,
    accel: [f64; 2],
    preferred_speed: f64,
    class_id: u32,
}

fn interaction_accel(cfg: &ScenarioConfig, agents: &[Agent], i: usize) -> [f64; 2] {
    let ic = &cfg.interaction;
    let mut a = [0.0, 0.0];
    if !ic.enabled {
        return a;
    }
    let me = &agents[i].x;
    for (k, other) in agents.iter().enumerate() {
        if k == i {
            continue;
        }
        let o = &other.x;
        let (dx, dy) = (me[0] - o[0], me[1] - o[1]);
        let d = dx.hypot(dy).max(1e-3);
        let (ux, uy) = (dx / d, dy / d);
        if d < ic.repulsion_radius {
            let s = ic.repulsion_strength * (ic.repulsion_radius / d - 1.0);
            a[0] += s * ux;
            a[1] += s * uy;
        }
        if d < ic.avoidance_range {
            // Closing speed along the line of sight.
            let (rvx, rvy) = (me[2] - o[2], me[3] - o[3]);
            let closing = -(rvx * ux + rvy * uy);
            if closing > 0.0 {
                // Steer sideways, away from the other object's side.
                let (px, py) = (-uy, ux);
                let lateral = px * dx + py * dy;
                let sign = if lateral >= 0.0 { 1.0 } else { -1.0 };
                let s = ic.avoidance_strength * (1.0 - d / ic.avoidance_range) * closing.min(10.0)
                    / 5.0;
                a[0] += s * (ux + sign * px);
                a[1] += s * (uy + sign * py);
            }
        }
    }
    if ic.lane_spacing > 0.0 {
        let lane = (me[1] / ic.lane_spacing).round() * ic.lane_spacing;
        a[1] += ic.lane_strength * (lane - me[1]) - 0.5 * ic.lane_strength.sqrt() * me[3];
    }
    a
}

fn spawn(cfg: &ScenarioConfig, id: u64, rng: &mut Rng, margin: f64) -> Agent {
    let r = &cfg.region;
    let x = rng.range(r.x_min + margin, r.x_max - margin);
    let y = rng.range(r.y_min + margin, r.y_max - margin);
    let heading = rng.range(-std::f64::consts::PI, std::f64::consts::PI);
    let speed = rng.range(cfg.speed_min, cfg.speed_max);
    let total: f64 = cfg.classes.iter().map(|c| c.weight).sum();
    let mut pick = rng.uniform() * total;
    let mut class_id = 0;
    for (k, c) in cfg.classes.iter().enumerate() {
        if pick < c.weight {
            class_id = k as u32;
            break;
        }
        pick -= c.weight;
        class_id = k as u32;
    }
    Agent {
        id,
        x: StateVec::new(x, y, speed * heading.cos(), speed * heading.sin()),
        accel: [0.0, 0.0],
        preferred_speed: speed,
        class_id,
    }
}

/// Advances all agents by one frame.
fn advance(cfg: &ScenarioConfig, agents: &mut [Agent], rng: &mut Rng) {
    let h = cfg.dt / cfg.substeps as f64;
    let decay = (-cfg.maneuver_theta * h).exp();
    let kick = cfg.maneuver_sigma * (1.0 - decay * decay).sqrt();
    for _ in 0..cfg.substeps {
        let inter: Vec<[f64; 2]> = (0..agents.len())
            .map(|i| interaction_accel(cfg, agents, i))
            .collect();
        for (ag, ia) in agents.iter_mut().zip(inter) {
            for a in ag.accel.iter_mut() {
                *a = decay * *a + kick * rng.normal();
            }
            let speed = ag.x[2].hypot(ag.x[3]);
            let (mut ax, mut ay) = (ag.accel[0] + ia[0], ag.accel[1] + ia[1]);
            if speed > 1e-6 {
                let g = cfg.speed_gain * (ag.preferred_speed - speed) / speed;
                ax += g * ag.x[2];
                ay += g * ag.x[3];
            }
            ag.x[0] += h * ag.x[2] + 0.5 * h * h * ax;
            ag.x[1] += h * ag.x[3] + 0.5 * h * h * ay;
            ag.x[2] += h * ax;
            ag.x[3] += h * ay;
        }
    }
}

/// Ground-truth frames only (measurements and maps empty).
pub fn generate_ground_truth(cfg: &ScenarioConfig, rng: &mut Rng) -> Result<Vec<Vec<GtObject>>> {
    cfg.validate()?;
    let mut agents: Vec<Agent> = Vec::new();
    let mut next_id = 0u64;
    let mut out = Vec::with_capacity(cfg.frames);
    let margin =
        0.1 * (cfg.region.x_max - cfg.region.x_min).min(cfg.region.y_max - cfg.region.y_min);
    for k in 0..cfg.frames {
        if k == 0 {
            for _ in 0..cfg.initial_objects {
                agents.push(spawn(cfg, next_id, rng, margin));
                next_id += 1;
            }
        } else {
            advance(cfg, &mut agents, rng);
            agents.retain(|a| cfg.region.contains(a.x[0], a.x[1]));
            if cfg.mean_lifetime > 0.0 {
                let p_die = 1.0 / cfg.mean_lifetime;
                agents.retain(|_| !rng.bernoulli(p_die));
            }
            for _ in 0..rng.poisson(cfg.birth_rate) {
                agents.push(spawn(cfg, next_id, rng, margin));
                next_id += 1;
            }
        }
        out.push(
            agents
                .iter()
                .map(|a| GtObject {
                    id: a.id,
                    state: a.x,
                    bbox: cfg.class_box(a.class_id, &a.x),
                    class_id: a.class_id,
                })
                .collect(),
        );
        if k + 1 == cfg.frames {
            break;
        }
    }
    Ok(out)
}

/// Clutter instance: position/velocity, box and its map descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ClutterDraw {
    pub state: StateVec,
    pub bbox: BoxDims,
    pub descriptor: Vec<f64>,
}

/// Independent clutter of one frame: Poisson(`mu_fp`) draws uniform over
/// the region and the clutter velocity box.
pub fn draw_clutter(cfg: &ScenarioConfig, rng: &mut Rng) -> Vec<ClutterDraw> {
    let n = rng.poisson(cfg.mu_fp);
    (0..n).map(|_| clutter_source(cfg, rng)).collect()
}

fn clutter_source(cfg: &ScenarioConfig, rng: &mut Rng) -> ClutterDraw {
    let r = &cfg.region;
    let state = StateVec::new(
        rng.range(r.x_min, r.x_max),
        rng.range(r.y_min, r.y_max),
        rng.range(-cfg.clutter_v_max, cfg.clutter_v_max),
        rng.range(-cfg.clutter_v_max, cfg.clutter_v_max),
    );
    let c = &cfg.classes[rng.index(cfg.classes.len())];
    let bbox = BoxDims {
        length: c.length,
        width: c.width,
        yaw: rng.range(-std::f64::consts::PI, std::f64::consts::PI),
    };
    let descriptor = (0..cfg.map_channels)
        .map(|_| cfg.clutter_descriptor_sigma * rng.normal())
        .collect();
    ClutterDraw {
        state,
        bbox,
        descriptor,
    }
}

/// False-detection sources over a scene. Sources live a geometric number of
/// frames with mean `clutter_lifetime`, move at constant velocity and vanish
/// when they leave the region; new ones arrive at rate
/// `mu_fp / clutter_lifetime`, so the per-frame count stays near `mu_fp`.
/// With a lifetime of 1 every frame is an independent [`draw_clutter`].
#[derive(Debug, Clone, Default)]
pub struct ClutterProcess {
    active: Vec<ClutterDraw>,
    started: bool,
}

impl ClutterProcess {
    pub fn step(&mut self, cfg: &ScenarioConfig, rng: &mut Rng) -> Vec<ClutterDraw> {
        if cfg.clutter_lifetime <= 1.0 {
            return draw_clutter(cfg, rng);
        }
        let survive = 1.0 - 1.0 / cfg.clutter_lifetime;
        let mut next = Vec::with_capacity(self.active.len());
        for mut c in std::mem::take(&mut self.active) {
            if !rng.bernoulli(survive) {
                continue;
            }
            c.state[0] += cfg.dt * c.state[2];
            c.state[1] += cfg.dt * c.state[3];
            if cfg.region.contains(c.state[0], c.state[1]) {
                next.push(c);
            }
        }
        let rate = if self.started {
            cfg.mu_fp / cfg.clutter_lifetime
        } else {
            cfg.mu_fp
        };
        self.started = true;
        for _ in 0..rng.poisson(rate) {
            next.push(clutter_source(cfg, rng));
        }
        self.active = next;
        self.active.clone()
    }
}

/// Writes `value` into every cell whose center lies inside the box
/// inflated by one cell on each side.
fn stamp(map: &mut FeatureMap, cx: f64, cy: f64, b: &BoxDims, value: &[f64]) {
    let (cell_x, cell_y) = map.cell_size();
    let cell = cell_x.max(cell_y);
    let (hl, hw) = (0.5 * b.length + cell, 0.5 * b.width + cell);
    let (s, c) = b.yaw.sin_cos();
    let reach = hl.hypot(hw);
    let r = map.region;
    let lo_x = (((cx - reach - r.x_min) / cell_x).floor().max(0.0)) as usize;
    let hi_x = (((cx + reach - r.x_min) / cell_x).ceil().max(0.0) as usize).min(map.size);
    let lo_y = (((cy - reach - r.y_min) / cell_y).floor().max(0.0)) as usize;
    let hi_y = (((cy + reach - r.y_min) / cell_y).ceil().max(0.0) as usize).min(map.size);
    for iy in lo_y..hi_y {
        for ix in lo_x..hi_x {
            let p = map.cell_center(ix, iy);
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            let along = c * dx + s * dy;
            let across = -s * dx + c * dy;
            if along.abs() <= hl && across.abs() <= hw {
                for (ch, v) in value.iter().enumerate() {
                    let i = map.index(ix, iy, ch);
                    map.data[i] = *v as f32;
                }
            }
        }
    }
}

/// Background noise is uniform with standard deviation `background_sigma`
/// (bounded by `sqrt(3)` sigma); objects and clutter overwrite their cells
/// with their descriptor plus background noise.
pub fn render_feature_map(
    cfg: &ScenarioConfig,
    gt: &[GtObject],
    jitter: &dyn Fn(u64) -> Vec<f64>,
    clutter: &[ClutterDraw],
    rng: &mut Rng,
) -> FeatureMap {
    let mut map = FeatureMap::zeros(cfg.map_size, cfg.map_channels, cfg.region);
    let bound = 3f64.sqrt() * cfg.background_sigma;
    for c in clutter {
        stamp(&mut map, c.state[0], c.state[1], &c.bbox, &c.descriptor);
    }
    for g in gt {
        let base = &cfg.classes[g.class_id as usize].descriptor;
        let j = jitter(g.id);
        let value: Vec<f64> = base.iter().zip(&j).map(|(a, b)| a + b).collect();
        stamp(&mut map, g.state[0], g.state[1], &g.bbox, &value);
    }
    for v in map.data.iter_mut() {
        *v += rng.range(-bound, bound) as f32;
    }
    map
}

/// Detections of `gt` plus clutter. Each object is detected at most once.
pub fn detect(
    cfg: &ScenarioConfig,
    gt: &[GtObject],
    clutter: &[ClutterDraw],
    map: &FeatureMap,
    rng: &mut Rng,
) -> (Vec<Measurement>, Vec<Option<u64>>) {
    let mut meas = Vec::new();
    let mut origins = Vec::new();
    for g in gt {
        if !rng.bernoulli(cfg.p_d) {
            continue;
        }
        let noise = StateVec::new(
            cfg.sigma_pos * rng.normal(),
            cfg.sigma_pos * rng.normal(),
            cfg.sigma_vel * rng.normal(),
            cfg.sigma_vel * rng.normal(),
        );
        let z = g.state + noise;
        let score = rng.beta(cfg.score_true.0, cfg.score_true.1);
        let bbox = BoxDims {
            length: g.bbox.length,
            width: g.bbox.width,
            yaw: g.bbox.yaw,
        };
        let (shape_feature, _) = roi_extract_or_zero(map, z[0], z[1], &bbox);
        meas.push(Measurement {
            z,
            score,
            bbox,
            shape_feature,
            class_id: g.class_id,
        });
        origins.push(Some(g.id));
    }
    for c in clutter {
        let score = rng.beta(cfg.score_clutter.0, cfg.score_clutter.1);
        let (shape_feature, _) = roi_extract_or_zero(map, c.state[0], c.state[1], &c.bbox);
        meas.push(Measurement {
            z: c.state,
            score,
            bbox: c.bbox,
            shape_feature,
            class_id: 0,
        });
        origins.push(None);
    }
    (meas, origins)
}

/// Full scene: ground truth, feature maps and detections, deterministic in
/// `(cfg, seed)`. Separate random streams drive motion, clutter, maps and
/// detections.
pub fn generate_scene(cfg: &ScenarioConfig, seed: u64) -> Result<Scene> {
    cfg.validate()?;
    let mut motion_rng = Rng::with_stream(seed, 0);
    let gt_frames = generate_ground_truth(cfg, &mut motion_rng)?;
    // Per-track descriptor jitter is fixed for the life of the track.
    let mut jitter_rng = Rng::with_stream(seed, 1);
    let mut jitters: std::collections::BTreeMap<u64, Vec<f64>> = Default::default();
    for g in gt_frames.iter().flatten() {
        jitters.entry(g.id).or_insert_with(|| {
            (0..cfg.map_channels)
                .map(|_| cfg.descriptor_jitter * jitter_rng.normal())
                .collect()
        });
    }
    let jitter = |id: u64| {
        jitters
            .get(&id)
            .cloned()
            .unwrap_or_else(|| vec![0.0; cfg.map_channels])
    };
    let mut clutter_rng = Rng::with_stream(seed, 2);
    let mut clutter_process = ClutterProcess::default();
    let mut map_rng = Rng::with_stream(seed, 3);
    let mut det_rng = Rng::with_stream(seed, 4);
    let mut frames = Vec::with_capacity(gt_frames.len());
    for (k, gt) in gt_frames.into_iter().enumerate() {
        let clutter = clutter_process.step(cfg, &mut clutter_rng);
        let feature_map = render_feature_map(cfg, &gt, &jitter, &clutter, &mut map_rng);
        let (measurements, origins) = detect(cfg, &gt, &clutter, &feature_map, &mut det_rng);
        frames.push(Frame {
            k,
            gt,
            measurements,
            origins,
            feature_map,
        });
    }
    Ok(Scene {
        config: cfg.clone(),
        seed,
        frames,
    })
}

/// Per-track ground-truth sequences `(id, [(k, state)])`, ordered by id.
pub fn gt_tracks(scene: &Scene) -> Vec<(u64, Vec<(usize, StateVec)>)> {
    let mut map: std::collections::BTreeMap<u64, Vec<(usize, StateVec)>> = Default::default();
    for f in &scene.frames {
        for g in &f.gt {
            map.entry(g.id).or_default().push((f.k, g.state));
        }
    }
    map.into_iter().collect()
}

/// Mean class descriptor read back from the cells stamped by a box.
pub fn read_descriptor(map: &FeatureMap, cx: f64, cy: f64) -> Option<DVector<f64>> {
    let (ix, iy) = map.cell_of(cx, cy)?;
    Some(DVector::from_fn(map.channels, |c, _| map.get(ix, iy, c)))
}
