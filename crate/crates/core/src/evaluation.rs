//! Scoring: optimal assignment, CLEAR-MOT counts, a recall-averaged MOTA
//! variant and the one-step prediction error protocol.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::Measurement;
use crate::motion::{cv_transition, motion_forward, MotionParams};
use crate::numerics::StateVec;
use crate::simulator::Scene;

/// Default center-distance match gate (m).
pub const DEFAULT_GATE: f64 = 2.0;

/// Minimum-cost assignment of a rectangular cost matrix. Every row (or every
/// column, whichever is fewer) is assigned. Pairs are returned sorted by row.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (n, m) = cost.shape();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    if n > m {
        let mut pairs: Vec<(usize, usize)> = hungarian(&cost.transpose())
            .into_iter()
            .map(|(j, i)| (i, j))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }
    // Shortest augmenting path with row/column potentials; index 0 is a
    // virtual column.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Assignment maximizing the number of pairs with `cost <= gate`, then
/// minimizing their total cost. Pairs beyond the gate are dropped.
pub fn gated_assignment(cost: &DMatrix<f64>, gate: f64) -> Vec<(usize, usize)> {
    let valid_total: f64 = cost.iter().filter(|c| **c <= gate).sum();
    let big = 1.0 + 2.0 * valid_total + gate * (cost.nrows() + cost.ncols()) as f64;
    let gated = cost.map(|c| if c <= gate { c } else { big });
    hungarian(&gated)
        .into_iter()
        .filter(|&(i, j)| cost[(i, j)] <= gate)
        .collect()
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// A labeled 2-D point in one frame: a track estimate or a ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub id: u64,
    pub position: [f64; 2],
    /// Confidence; ignored for ground truth.
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearMot {
    /// `None` when there is no ground truth.
    pub mota: Option<f64>,
    /// Mean matched center distance; `None` without matches.
    pub motp: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub frag: usize,
    pub gt_count: usize,
    pub frames: Vec<FrameScore>,
}

impl ClearMot {
    pub fn recall(&self) -> f64 {
        if self.gt_count == 0 {
            0.0
        } else {
            self.tp as f64 / self.gt_count as f64
        }
    }
}

/// CLEAR-MOT matching with carry-over: a correspondence from the previous
/// frame is kept while both objects exist and stay within the gate; the
/// remaining objects are matched by gated Hungarian assignment. A ground-truth
/// object matched to a different estimate id than its last one counts one id
/// switch; resuming a match after an interruption counts one fragmentation.
pub fn clear_mot(est: &[Vec<TrackPoint>], gt: &[Vec<TrackPoint>], gate: f64) -> Result<ClearMot> {
    if est.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            expected: gt.len(),
            got: est.len(),
        });
    }
    let mut out = ClearMot::default();
    let mut prev: HashMap<u64, u64> = HashMap::new();
    let mut last: HashMap<u64, u64> = HashMap::new();
    let mut interrupted: HashMap<u64, bool> = HashMap::new();
    let mut err_sum = 0.0;
    for (e, g) in est.iter().zip(gt) {
        let mut fs = FrameScore::default();
        let mut matched: Vec<(usize, usize)> = Vec::new();
        let mut g_used = vec![false; g.len()];
        let mut e_used = vec![false; e.len()];
        for (gi, go) in g.iter().enumerate() {
            if let Some(eid) = prev.get(&go.id) {
                if let Some(ei) = e.iter().position(|p| p.id == *eid) {
                    if !e_used[ei] && dist(&go.position, &e[ei].position) <= gate {
                        matched.push((gi, ei));
                        g_used[gi] = true;
                        e_used[ei] = true;
                    }
                }
            }
        }
        let g_free: Vec<usize> = (0..g.len()).filter(|i| !g_used[*i]).collect();
        let e_free: Vec<usize> = (0..e.len()).filter(|i| !e_used[*i]).collect();
        let cost = DMatrix::from_fn(g_free.len(), e_free.len(), |a, b| {
            dist(&g[g_free[a]].position, &e[e_free[b]].position)
        });
        for (a, b) in gated_assignment(&cost, gate) {
            matched.push((g_free[a], e_free[b]));
        }
        let mut next = HashMap::new();
        let mut g_matched = vec![false; g.len()];
        for &(gi, ei) in &matched {
            let (gid, eid) = (g[gi].id, e[ei].id);
            g_matched[gi] = true;
            if let Some(l) = last.get(&gid) {
                if *l != eid {
                    fs.id_switches += 1;
                }
            }
            if interrupted.get(&gid).copied().unwrap_or(false) {
                fs.fragmentations += 1;
            }
            interrupted.insert(gid, false);
            last.insert(gid, eid);
            next.insert(gid, eid);
            let d = dist(&g[gi].position, &e[ei].position);
            err_sum += d;
            fs.errors.push(d);
        }
        for (gi, go) in g.iter().enumerate() {
            if !g_matched[gi] && last.contains_key(&go.id) {
                interrupted.insert(go.id, true);
            }
        }
        fs.tp = matched.len();
        fs.fp = e.len() - matched.len();
        fs.fn_ = g.len() - matched.len();
        out.tp += fs.tp;
        out.fp += fs.fp;
        out.fn_ += fs.fn_;
        out.ids += fs.id_switches;
        out.frag += fs.fragmentations;
        out.gt_count += g.len();
        out.frames.push(fs);
        prev = next;
    }
    if out.gt_count > 0 {
        out.mota = Some(1.0 - (out.fp + out.fn_ + out.ids) as f64 / out.gt_count as f64);
    }
    if out.tp > 0 {
        out.motp = Some(err_sum / out.tp as f64);
    }
    Ok(out)
}

/// Recall targets `0.1, 0.2, ..., 1.0`.
pub fn default_recall_grid() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub recall_target: f64,
    /// Score threshold used; `None` when the target recall is not reached.
    pub threshold: Option<f64>,
    pub recall: f64,
    /// Recall-normalized accuracy in `[0, 1]`.
    pub motar: f64,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmotaResult {
    pub amota: f64,
    /// Mean over reached targets of the matched center distance.
    pub amotp: Option<f64>,
    pub rows: Vec<RecallRow>,
}

fn filter_scores(est: &[Vec<TrackPoint>], t: f64) -> Vec<Vec<TrackPoint>> {
    est.iter()
        .map(|f| f.iter().copied().filter(|p| p.score >= t).collect())
        .collect()
}

/// Recall-averaged accuracy. For each target recall `r` the highest score
/// threshold reaching recall `>= r` is located (binary search over the
/// distinct scores, relying on recall growing as the threshold drops) and
///
/// `MOTAR = clamp(1 - (ids + fp + fn - (1 - r) P) / (r P), 0, 1)`
///
/// with `P` the ground-truth count. Unreached targets contribute 0, so the
/// result averages over the full grid.
pub fn amota_variant(
    est: &[Vec<TrackPoint>],
    gt: &[Vec<TrackPoint>],
    gate: f64,
    recalls: &[f64],
) -> Result<AmotaResult> {
    let mut scores: Vec<f64> = est.iter().flatten().map(|p| p.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let p_count = gt.iter().map(Vec::len).sum::<usize>() as f64;
    let mut cache: HashMap<usize, ClearMot> = HashMap::new();
    let mut eval = |idx: usize| -> Result<ClearMot> {
        if let Some(c) = cache.get(&idx) {
            return Ok(c.clone());
        }
        let c = clear_mot(&filter_scores(est, scores[idx]), gt, gate)?;
        cache.insert(idx, c.clone());
        Ok(c)
    };
    let mut rows = Vec::with_capacity(recalls.len());
    for &r in recalls {
        let unreached = RecallRow {
            recall_target: r,
            threshold: None,
            recall: 0.0,
            motar: 0.0,
            mota: None,
            motp: None,
            tp: 0,
            fp: 0,
            fn_: 0,
            ids: 0,
        };
        if scores.is_empty() || p_count == 0.0 {
            rows.push(unreached);
            continue;
        }
        let reached = |c: &ClearMot| c.recall() >= r - 1e-12;
        let full = eval(scores.len() - 1)?;
        if !reached(&full) {
            rows.push(RecallRow {
                recall: full.recall(),
                ..unreached
            });
            continue;
        }
        let (mut lo, mut hi) = (0usize, scores.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if reached(&eval(mid)?) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let c = eval(lo)?;
        let errors = (c.ids + c.fp + c.fn_) as f64 - (1.0 - r) * p_count;
        let motar = (1.0 - errors / (r * p_count)).clamp(0.0, 1.0);
        rows.push(RecallRow {
            recall_target: r,
            threshold: Some(scores[lo]),
            recall: c.recall(),
            motar,
            mota: c.mota,
            motp: c.motp,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            ids: c.ids,
        });
    }
    let amota = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.motar).sum::<f64>() / rows.len() as f64
    };
    let motps: Vec<f64> = rows.iter().filter_map(|r| r.motp).collect();
    let amotp = (!motps.is_empty()).then(|| motps.iter().sum::<f64>() / motps.len() as f64);
    Ok(AmotaResult { amota, amotp, rows })
}

/// Ground-truth points of a scene, one list per frame.
pub fn scene_gt_points(scene: &Scene) -> Vec<Vec<TrackPoint>> {
    scene
        .frames
        .iter()
        .map(|f| {
            f.gt.iter()
                .map(|g| TrackPoint {
                    id: g.id,
                    position: [g.state[0], g.state[1]],
                    score: 1.0,
                })
                .collect()
        })
        .collect()
}

/// Noisy observation of a ground-truth object in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub id: u64,
    pub class_id: u32,
    pub state: StateVec,
}

/// Per frame, the measurement matched to each ground-truth object by gated
/// Hungarian assignment on position distance.
pub fn noisy_tracks(scene: &Scene, gate: f64) -> Vec<Vec<Observation>> {
    scene
        .frames
        .iter()
        .map(|f| match_observations(&f.gt, &f.measurements, gate))
        .collect()
}

fn match_observations(
    gt: &[crate::simulator::GtObject],
    meas: &[Measurement],
    gate: f64,
) -> Vec<Observation> {
    let cost = DMatrix::from_fn(gt.len(), meas.len(), |i, j| {
        dist(
            &[gt[i].state[0], gt[i].state[1]],
            &[meas[j].z[0], meas[j].z[1]],
        )
    });
    gated_assignment(&cost, gate)
        .into_iter()
        .map(|(i, j)| Observation {
            id: gt[i].id,
            class_id: gt[i].class_id,
            state: meas[j].z,
        })
        .collect()
}

/// Stateful one-step-ahead predictor over a sequence of observed frames.
pub trait OneStepPredictor {
    fn reset(&mut self);
    /// Consumes the observations of one frame and predicts each observed
    /// object's state at the next frame (same order as `obs`).
    fn step(&mut self, obs: &[Observation]) -> Result<Vec<StateVec>>;
}

/// Constant-velocity extrapolation of the latest observation.
#[derive(Debug, Clone, Copy)]
pub struct CvPredictor {
    pub dt: f64,
}

impl OneStepPredictor for CvPredictor {
    fn reset(&mut self) {}

    fn step(&mut self, obs: &[Observation]) -> Result<Vec<StateVec>> {
        let f = cv_transition(self.dt);
        Ok(obs.iter().map(|o| f * o.state).collect())
    }
}

/// Learned motion model run on observations: each object keeps its own
/// hidden state, and its neighbors are the other objects observed in the
/// same frame (nearest `max_neighbors` by position).
#[derive(Debug, Clone)]
pub struct NeuralPredictor<'a> {
    pub params: &'a MotionParams,
    hidden: HashMap<u64, DVector<f64>>,
}

impl<'a> NeuralPredictor<'a> {
    pub fn new(params: &'a MotionParams) -> Self {
        Self {
            params,
            hidden: HashMap::new(),
        }
    }
}

/// Indices of the `max` other states nearest to `states[i]` by position.
pub fn nearest_neighbors(states: &[StateVec], i: usize, max: usize) -> Vec<usize> {
    let mut idx: Vec<(f64, usize)> = states
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != i)
        .map(|(k, s)| ((s[0] - states[i][0]).hypot(s[1] - states[i][1]), k))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    idx.into_iter().take(max).map(|(_, k)| k).collect()
}

impl OneStepPredictor for NeuralPredictor<'_> {
    fn reset(&mut self) {
        self.hidden.clear();
    }

    fn step(&mut self, obs: &[Observation]) -> Result<Vec<StateVec>> {
        let states: Vec<StateVec> = obs.iter().map(|o| o.state).collect();
        let d = self.params.hidden_dim();
        let mut out = Vec::with_capacity(obs.len());
        let mut next = Vec::with_capacity(obs.len());
        for (i, o) in obs.iter().enumerate() {
            let nb: Vec<StateVec> = nearest_neighbors(&states, i, self.params.config.max_neighbors)
                .into_iter()
                .map(|k| states[k])
                .collect();
            let h = self
                .hidden
                .get(&o.id)
                .cloned()
                .unwrap_or_else(|| DVector::zeros(d));
            let (x, h_new) = motion_forward(&o.state, &nb, &h, self.params)?;
            out.push(x);
            next.push((o.id, h_new));
        }
        for (id, h) in next {
            self.hidden.insert(id, h);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionMse {
    /// `(class id, mse, sample count)` sorted by class id.
    pub per_class: Vec<(u32, f64, usize)>,
    pub overall: f64,
    pub count: usize,
}

/// Mean squared 2-D position error of one-step predictions made from the
/// observation sequences against the next-frame ground truth.
pub fn prediction_mse(
    predictor: &mut dyn OneStepPredictor,
    scenes: &[(Scene, Vec<Vec<Observation>>)],
) -> Result<PredictionMse> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (scene, obs) in scenes {
        predictor.reset();
        for (k, frame_obs) in obs.iter().enumerate() {
            let pred = predictor.step(frame_obs)?;
            let Some(next) = scene.frames.get(k + 1) else {
                continue;
            };
            for (o, p) in frame_obs.iter().zip(&pred) {
                if let Some(g) = next.gt.iter().find(|g| g.id == o.id) {
                    let e = (p[0] - g.state[0]).powi(2) + (p[1] - g.state[1]).powi(2);
                    let slot = acc.entry(o.class_id).or_insert((0.0, 0));
                    slot.0 += e;
                    slot.1 += 1;
                }
            }
        }
    }
    let count: usize = acc.values().map(|v| v.1).sum();
    let total: f64 = acc.values().map(|v| v.0).sum();
    Ok(PredictionMse {
        per_class: acc
            .into_iter()
            .map(|(c, (s, n))| (c, s / n as f64, n))
            .collect(),
        overall: if count > 0 { total / count as f64 } else { 0.0 },
        count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::simulator::{generate_scene, ScenarioConfig};
    use proptest::prelude::*;

    fn brute_force(cost: &DMatrix<f64>) -> f64 {
        let (n, m) = cost.shape();
        let (rows, cols, t) = if n <= m { (n, m, false) } else { (m, n, true) };
        let at = |r: usize, c: usize| if t { cost[(c, r)] } else { cost[(r, c)] };
        fn go(
            r: usize,
            rows: usize,
            cols: usize,
            used: &mut Vec<bool>,
            at: &dyn Fn(usize, usize) -> f64,
        ) -> f64 {
            if r == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    best = best.min(at(r, c) + go(r + 1, rows, cols, used, at));
                    used[c] = false;
                }
            }
            best
        }
        go(0, rows, cols, &mut vec![false; cols], &at)
    }

    fn total(cost: &DMatrix<f64>, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| cost[(i, j)]).sum()
    }

    #[test]
    fn hungarian_examples() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let p = hungarian(&c);
        assert_eq!(p, vec![(0, 0), (1, 1)]);
        assert_eq!(total(&c, &p), 2.0);
        assert_eq!(hungarian(&DMatrix::from_element(1, 1, 7.0)), vec![(0, 0)]);
    }

    #[test]
    fn hungarian_matches_permutation_search_5x5() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let c = DMatrix::from_fn(5, 5, |_, _| rng.range(0.0, 10.0));
            let p = hungarian(&c);
            assert_eq!(p.len(), 5);
            assert!((total(&c, &p) - brute_force(&c)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force_up_to_6x6(n in 1usize..=6, m in 1usize..=6, seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let c = DMatrix::from_fn(n, m, |_, _| rng.range(-5.0, 5.0));
            let p = hungarian(&c);
            prop_assert_eq!(p.len(), n.min(m));
            prop_assert!((total(&c, &p) - brute_force(&c)).abs() < 1e-9);
        }

        #[test]
        fn amota_invariant_under_monotone_rescaling(seed in 0u64..200) {
            let mut rng = Rng::new(seed);
            let gt: Vec<Vec<TrackPoint>> = (0..4).map(|_| (0..3).map(|i| TrackPoint { id: i, position: [10.0 * i as f64, 0.0], score: 1.0 }).collect()).collect();
            let mut est: Vec<Vec<TrackPoint>> = Vec::new();
            for f in &gt {
                let mut frame = Vec::new();
                for p in f {
                    if rng.bernoulli(0.7) {
                        let x = p.position[0] + rng.range(-1.0, 1.0);
                        frame.push(TrackPoint { id: p.id, position: [x, 0.0], score: rng.uniform() });
                    }
                }
                for k in 0..rng.index(3) {
                    let x = rng.range(0.0, 30.0);
                    frame.push(TrackPoint { id: 100 + k as u64, position: [x, 5.0], score: rng.uniform() });
                }
                est.push(frame);
            }
            let rescaled: Vec<Vec<TrackPoint>> = est.iter().map(|f| f.iter().map(|p| TrackPoint { score: (3.0 * p.score).exp() - 7.0, ..*p }).collect()).collect();
            let grid = default_recall_grid();
            let a = amota_variant(&est, &gt, DEFAULT_GATE, &grid).unwrap();
            let b = amota_variant(&rescaled, &gt, DEFAULT_GATE, &grid).unwrap();
            prop_assert_eq!(a.amota, b.amota);
        }
    }

    fn pt(id: u64, x: f64, y: f64) -> TrackPoint {
        TrackPoint {
            id,
            position: [x, y],
            score: 1.0,
        }
    }

    #[test]
    fn perfect_tracks_score_one() {
        let gt: Vec<Vec<TrackPoint>> = (0..5)
            .map(|k| vec![pt(0, k as f64, 0.0), pt(1, k as f64, 10.0)])
            .collect();
        let c = clear_mot(&gt, &gt, DEFAULT_GATE).unwrap();
        assert_eq!((c.mota, c.ids, c.frag), (Some(1.0), 0, 0));
        let scored: Vec<Vec<TrackPoint>> = gt
            .iter()
            .enumerate()
            .map(|(k, f)| {
                f.iter()
                    .enumerate()
                    .map(|(i, p)| TrackPoint {
                        score: 1.0 - 0.01 * (2 * k + i) as f64,
                        ..*p
                    })
                    .collect()
            })
            .collect();
        let a = amota_variant(&scored, &gt, DEFAULT_GATE, &default_recall_grid()).unwrap();
        assert_eq!(a.amota, 1.0);
    }

    #[test]
    fn no_estimates() {
        let gt: Vec<Vec<TrackPoint>> = (0..3).map(|k| vec![pt(0, k as f64, 0.0)]).collect();
        let empty = vec![Vec::new(); 3];
        let c = clear_mot(&empty, &gt, DEFAULT_GATE).unwrap();
        assert_eq!(c.mota, Some(0.0));
        assert_eq!(c.fn_, 3);
        let a = amota_variant(&empty, &gt, DEFAULT_GATE, &default_recall_grid()).unwrap();
        assert_eq!(a.amota, 0.0);
        let none = clear_mot(&empty, &vec![Vec::new(); 3], DEFAULT_GATE).unwrap();
        assert_eq!(none.mota, None);
    }

    #[test]
    fn id_swap_counts_two_switches() {
        let gt: Vec<Vec<TrackPoint>> = (0..10)
            .map(|k| vec![pt(0, k as f64, 0.0), pt(1, k as f64, 10.0)])
            .collect();
        let est: Vec<Vec<TrackPoint>> = (0..10)
            .map(|k| {
                let (a, b) = if k < 5 { (7, 8) } else { (8, 7) };
                vec![pt(a, k as f64, 0.1), pt(b, k as f64, 10.1)]
            })
            .collect();
        let c = clear_mot(&est, &gt, DEFAULT_GATE).unwrap();
        assert_eq!(c.ids, 2);
        assert_eq!(c.mota, Some(1.0 - 2.0 / 20.0));
    }

    #[test]
    fn carry_over_keeps_previous_match() {
        // Estimate 5 drifts toward gt 1 but stays within the gate of gt 0.
        let gt = vec![vec![pt(0, 0.0, 0.0), pt(1, 3.0, 0.0)]; 2];
        let est = vec![
            vec![pt(5, 0.0, 0.0), pt(6, 3.0, 0.0)],
            vec![pt(5, 1.6, 0.0), pt(6, 3.0, 0.0)],
        ];
        let c = clear_mot(&est, &gt, DEFAULT_GATE).unwrap();
        assert_eq!((c.tp, c.ids), (4, 0));
    }

    #[test]
    fn fragmentation_counted_on_resume() {
        let gt: Vec<Vec<TrackPoint>> = (0..5).map(|k| vec![pt(0, k as f64, 0.0)]).collect();
        let est: Vec<Vec<TrackPoint>> = (0..5)
            .map(|k| {
                if k == 2 {
                    vec![]
                } else {
                    vec![pt(3, k as f64, 0.0)]
                }
            })
            .collect();
        let c = clear_mot(&est, &gt, DEFAULT_GATE).unwrap();
        assert_eq!((c.frag, c.ids, c.fn_), (1, 0, 1));
    }

    #[test]
    fn amota_toy_sweep_by_hand() {
        // Two objects over two frames; object 1 is missed in frame 1.
        let gt = vec![
            vec![pt(0, 0.0, 0.0), pt(1, 10.0, 0.0)],
            vec![pt(0, 1.0, 0.0), pt(1, 11.0, 0.0)],
        ];
        let s = |id, x, score| TrackPoint {
            id,
            position: [x, 0.0],
            score,
        };
        let est = vec![vec![s(0, 0.0, 0.9), s(1, 10.0, 0.8)], vec![s(0, 1.0, 0.9)]];
        let grid = default_recall_grid();
        let a = amota_variant(&est, &gt, DEFAULT_GATE, &grid).unwrap();
        // Threshold 0.9 gives tp 2 (fn 2); threshold 0.8 gives tp 3 (fn 1).
        let p = 4.0;
        let motar = |fn_: f64, r: f64| (1.0 - (fn_ - (1.0 - r) * p) / (r * p)).clamp(0.0, 1.0);
        let expect: f64 = grid
            .iter()
            .map(|&r| {
                if r <= 0.5 {
                    motar(2.0, r)
                } else if r <= 0.75 {
                    motar(1.0, r)
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            / grid.len() as f64;
        assert!((a.amota - expect).abs() < 1e-12);
        assert!((a.amota - 0.7).abs() < 1e-12);
        assert_eq!(a.rows[9].threshold, None);
    }

    fn cv_scene(noise: (f64, f64), seed: u64) -> Scene {
        let mut cfg = ScenarioConfig::default();
        cfg.interaction.enabled = false;
        cfg.maneuver_sigma = 0.0;
        cfg.speed_gain = 0.0;
        cfg.birth_rate = 0.0;
        cfg.mu_fp = 0.0;
        cfg.p_d = 1.0;
        cfg.sigma_pos = noise.0;
        cfg.sigma_vel = noise.1;
        cfg.frames = 20;
        generate_scene(&cfg, seed).unwrap()
    }

    #[test]
    fn cv_predictor_is_exact_on_noise_free_cv_data() {
        let scene = cv_scene((0.0, 0.0), 1);
        let obs = noisy_tracks(&scene, DEFAULT_GATE);
        let r = prediction_mse(&mut CvPredictor { dt: 0.5 }, &[(scene, obs)]).unwrap();
        assert!(r.count > 100);
        assert!(r.overall < 1e-20);
    }

    #[test]
    fn cv_predictor_noise_propagation() {
        let (sp, sv, dt) = (0.2, 0.4, 0.5);
        let data: Vec<(Scene, Vec<Vec<Observation>>)> = (0..20)
            .map(|s| {
                let sc = cv_scene((sp, sv), 100 + s);
                let o = noisy_tracks(&sc, 5.0);
                (sc, o)
            })
            .collect();
        let r = prediction_mse(&mut CvPredictor { dt }, &data).unwrap();
        let analytic = 2.0 * (sp * sp + dt * dt * sv * sv);
        // Relative std of a mean of n chi-square(2)-like terms is about 1/sqrt(n).
        let tol = 4.0 * analytic / (r.count as f64).sqrt();
        assert!(
            (r.overall - analytic).abs() < tol,
            "{} vs {analytic}",
            r.overall
        );
    }
}
