//! Measurement model: likelihoods, clutter and birth intensities, the
//! association weight tables, the particle update of legacy objects and the
//! initialization of new objects.

mod factors;

pub use factors::{
    affinity_factor, affinity_from_logit, compute_factors, compute_factors_train, fpr_factor,
    fpr_from_logit, FactorLogits, FactorTape, MeasNetConfig, MeasurementNets, ObjectFeatures,
    U_DIM,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::association::AssociationProblem;
use crate::error::{Error, Result};
use crate::feature_map::{BoxDims, Region};
use crate::numerics::{
    cholesky4, gaussian_logpdf, systematic_resample, GaussianState, ParticleSet, Rng, StateCov,
    StateVec,
};

/// A detection: kinematic measurement plus detector outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// `[px, py, vx, vy]`.
    pub z: StateVec,
    pub score: f64,
    pub bbox: BoxDims,
    /// Bilinear ROI samples of the feature map around the box.
    pub shape_feature: DVector<f64>,
    pub class_id: u32,
}

impl Measurement {
    /// Box and score descriptor `[length, width, cos yaw, sin yaw, score]`.
    pub fn u(&self) -> [f64; U_DIM] {
        box_descriptor(&self.bbox, self.score)
    }
}

pub fn box_descriptor(b: &BoxDims, score: f64) -> [f64; U_DIM] {
    [b.length, b.width, b.yaw.cos(), b.yaw.sin(), score]
}

/// Uniform density over `region` times the velocity box `[-v_max, v_max]^2`.
fn uniform_density(region: &Region, v_max: f64) -> f64 {
    1.0 / (region.area() * (2.0 * v_max).powi(2))
}

/// Poisson clutter, uniform over the tracking region and a velocity box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    pub mu_fp: f64,
    pub region: Region,
    pub v_max: f64,
}

impl ClutterModel {
    pub fn density(&self) -> f64 {
        uniform_density(&self.region, self.v_max)
    }

    /// `C_fp = mu_fp * f_fp`.
    pub fn intensity(&self) -> f64 {
        self.mu_fp * self.density()
    }
}

/// Poisson births, uniform over the region and a velocity box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthModel {
    pub mu_n: f64,
    pub region: Region,
    pub v_max: f64,
}

impl BirthModel {
    pub fn density(&self) -> f64 {
        uniform_density(&self.region, self.v_max)
    }

    /// `mu_n * f_n * P(x in support)` for `x ~ N(z, sigma_r)`, which equals
    /// `integral mu_n f_n(x) N(z; x, sigma_r) dx`. Uses the marginal
    /// variances of `sigma_r` (exact for diagonal `sigma_r`).
    pub fn mass(&self, z: &StateVec, sigma_r: &StateCov) -> f64 {
        let phi = |t: f64| 0.5 * erfc(-t / std::f64::consts::SQRT_2);
        let bounds = [
            (self.region.x_min, self.region.x_max),
            (self.region.y_min, self.region.y_max),
            (-self.v_max, self.v_max),
            (-self.v_max, self.v_max),
        ];
        let mut p = 1.0;
        for (k, (lo, hi)) in bounds.iter().enumerate() {
            let s = sigma_r[(k, k)].sqrt();
            p *= if s > 0.0 {
                phi((hi - z[k]) / s) - phi((lo - z[k]) / s)
            } else if z[k] >= *lo && z[k] <= *hi {
                1.0
            } else {
                0.0
            };
        }
        self.mu_n * self.density() * p
    }
}

/// `N(z.z; x, sigma_r)`.
pub fn likelihood(z: &Measurement, x: &StateVec, sigma_r: &StateCov) -> Result<f64> {
    let g = GaussianState::from_state(x, sigma_r);
    Ok(gaussian_logpdf(&DVector::from_column_slice(z.z.as_slice()), &g)?.exp())
}

/// Learnable multipliers on the pairwise likelihood ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancementFactors {
    /// `I x J`, strictly positive.
    pub affinity: DMatrix<f64>,
    /// Length `J`, inside `(0, 1]`.
    pub fpr: Vec<f64>,
}

impl EnhancementFactors {
    pub fn neutral(n_obj: usize, n_meas: usize) -> Self {
        Self {
            affinity: DMatrix::from_element(n_obj, n_meas, 1.0),
            fpr: vec![1.0; n_meas],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.affinity.iter().all(|v| *v > 0.0 && v.is_finite())
            && self.fpr.iter().all(|v| *v > 0.0 && *v <= 1.0)
    }
}

/// Detection, clutter and birth model with a precomputed whitening of the
/// measurement covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub sigma_r: StateCov,
    pub p_d: f64,
    pub clutter: ClutterModel,
    pub birth: BirthModel,
    /// Squared Mahalanobis gate between a measurement and a predicted
    /// density; pairs beyond it get zero weight.
    pub gate: f64,
    l_inv: StateCov,
    log_norm: f64,
}

impl MeasurementModel {
    pub fn new(
        sigma_r: StateCov,
        p_d: f64,
        clutter: ClutterModel,
        birth: BirthModel,
        gate: f64,
    ) -> Result<Self> {
        if !(p_d > 0.0 && p_d <= 1.0) {
            return Err(Error::config("p_d", "must lie in (0, 1]"));
        }
        let l = cholesky4(&sigma_r)?;
        let l_inv = l.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        let log_det_half: f64 = (0..4).map(|k| l[(k, k)].ln()).sum();
        if !log_det_half.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let log_norm = -log_det_half - 2.0 * (2.0 * std::f64::consts::PI).ln();
        Ok(Self {
            sigma_r,
            p_d,
            clutter,
            birth,
            gate,
            l_inv,
            log_norm,
        })
    }

    pub fn likelihood(&self, z: &StateVec, x: &StateVec) -> f64 {
        let y = self.l_inv * (z - x);
        (self.log_norm - 0.5 * y.norm_squared()).exp()
    }

    /// Clutter intensity used as the ratio denominator; 1 when there is no
    /// clutter (the tables are then scaled per measurement instead, which
    /// leaves all marginals unchanged).
    fn denominator(&self) -> f64 {
        let c = self.clutter.intensity();
        if c > 0.0 {
            c
        } else {
            1.0
        }
    }

    /// Birth weight `B_j = f_fpr * mu_n * f_n * mass` before division.
    pub fn birth_term(&self, z: &StateVec, f_fpr: f64) -> f64 {
        f_fpr * self.birth.mass(z, &self.sigma_r)
    }
}

/// Predicted particle cloud of one legacy object (uniform weights).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedCloud {
    pub particles: Vec<StateVec>,
    pub existence: f64,
    pub mean: StateVec,
    pub cov: StateCov,
}

/// Per-particle ratio terms kept from table construction for the update.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairTerms {
    /// `terms[i][j][p] = f_af f_fpr p_d f(z_j | x_p) / C`; `None` if gated.
    pub terms: Vec<Vec<Option<Vec<f64>>>>,
    /// `B_j` for each measurement.
    pub birth: Vec<f64>,
    /// `C_fp` (zero without clutter).
    pub clutter: f64,
}

/// Association weights `beta`, `xi` and the reusable per-particle terms.
pub fn build_association_problem(
    legacy: &[PredictedCloud],
    meas: &[Measurement],
    factors: &EnhancementFactors,
    model: &MeasurementModel,
) -> Result<(AssociationProblem, PairTerms)> {
    let (n_obj, n_meas) = (legacy.len(), meas.len());
    if factors.affinity.shape() != (n_obj, n_meas) || factors.fpr.len() != n_meas {
        return Err(Error::DimensionMismatch {
            expected: n_obj * n_meas,
            got: factors.affinity.len(),
        });
    }
    let denom = model.denominator();
    let mut beta = DMatrix::zeros(n_obj, n_meas + 1);
    let mut terms = Vec::with_capacity(n_obj);
    for (i, cloud) in legacy.iter().enumerate() {
        let r = cloud.existence;
        beta[(i, 0)] = (1.0 - r) + r * (1.0 - model.p_d);
        let s_inv = (cloud.cov + model.sigma_r).try_inverse();
        let mut row = Vec::with_capacity(n_meas);
        for (j, m) in meas.iter().enumerate() {
            let innov = m.z - cloud.mean;
            let gated = match &s_inv {
                Some(si) => (innov.transpose() * si * innov)[0] > model.gate,
                None => false,
            };
            if gated || r == 0.0 || cloud.particles.is_empty() {
                row.push(None);
                continue;
            }
            let scale = factors.affinity[(i, j)] * factors.fpr[j] * model.p_d / denom;
            let t: Vec<f64> = cloud
                .particles
                .iter()
                .map(|x| scale * model.likelihood(&m.z, x))
                .collect();
            let mean = t.iter().sum::<f64>() / t.len() as f64;
            beta[(i, j + 1)] = r * mean;
            row.push(Some(t));
        }
        terms.push(row);
    }
    let c = model.clutter.intensity();
    let birth: Vec<f64> = meas
        .iter()
        .zip(&factors.fpr)
        .map(|(m, f)| model.birth_term(&m.z, *f))
        .collect();
    let xi = birth.iter().map(|b| (c + b) / denom).collect();
    let problem = AssociationProblem::new(beta, xi)?;
    Ok((
        problem,
        PairTerms {
            terms,
            birth,
            clutter: c,
        },
    ))
}

/// Result of updating one legacy object.
#[derive(Debug, Clone, PartialEq)]
pub struct LegacyUpdate {
    /// Resampled, equally weighted particles.
    pub particles: ParticleSet,
    pub existence: f64,
    /// True if every particle weight underflowed.
    pub degenerate: bool,
}

/// Particle update of legacy object `i` given its association marginals.
///
/// The marginal `kappa_i(j)` is divided by `beta_i(j)` to obtain the
/// message from measurement `j`, so the object's own likelihood enters
/// exactly once. Particle weights are
/// `(kappa_0/beta_0)(1 - p_d) + sum_j (kappa_j/beta_j) term_ij(x_p)` and the
/// non-existence mass is `(kappa_0/beta_0)(1 - r)`.
pub fn update_legacy(
    cloud: &PredictedCloud,
    i: usize,
    problem: &AssociationProblem,
    kappa_row: &[f64],
    terms: &PairTerms,
    p_d: f64,
    n_out: usize,
    rng: &mut Rng,
) -> Result<LegacyUpdate> {
    let n_meas = problem.num_measurements();
    if kappa_row.len() != n_meas + 1 {
        return Err(Error::DimensionMismatch {
            expected: n_meas + 1,
            got: kappa_row.len(),
        });
    }
    let ratio = |j: usize| {
        let b = problem.beta[(i, j)];
        if kappa_row[j] > 0.0 && b > 0.0 {
            kappa_row[j] / b
        } else {
            0.0
        }
    };
    let a0 = ratio(0);
    let r = cloud.existence;
    let n = cloud.particles.len();
    let mut w = vec![a0 * (1.0 - p_d); n];
    for j in 1..=n_meas {
        let aj = ratio(j);
        if aj == 0.0 {
            continue;
        }
        if let Some(t) = &terms.terms[i][j - 1] {
            for (wp, tp) in w.iter_mut().zip(t) {
                *wp += aj * tp;
            }
        }
    }
    let mean_w = if n > 0 {
        w.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let r1 = r * mean_w;
    let r0 = (1.0 - r) * a0;
    if !(mean_w > 0.0) || !mean_w.is_finite() {
        log::warn!("object {i}: particle weights underflowed, existence set to zero");
        return Ok(LegacyUpdate {
            particles: ParticleSet::uniform(cloud.particles.clone()),
            existence: 0.0,
            degenerate: true,
        });
    }
    let existence = if r1 + r0 > 0.0 {
        (r1 / (r1 + r0)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let idx = systematic_resample(&w, n_out, rng)?;
    let particles = ParticleSet::uniform(idx.into_iter().map(|k| cloud.particles[k]).collect());
    Ok(LegacyUpdate {
        particles,
        existence,
        degenerate: false,
    })
}

/// Existence of the object newly introduced for a measurement:
/// `iota_0 * B / (C + B)`.
pub fn new_po_existence(iota0: f64, birth_term: f64, clutter: f64) -> f64 {
    let total = clutter + birth_term;
    if total > 0.0 {
        (iota0 * birth_term / total).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Particles and existence of a new object introduced for `z`; particles are
/// drawn from `N(z, sigma_r)`.
pub fn init_new_po(
    z: &Measurement,
    iota0: f64,
    model: &MeasurementModel,
    f_fpr: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<(ParticleSet, f64)> {
    let b = model.birth_term(&z.z, f_fpr);
    let existence = new_po_existence(iota0, b, model.clutter.intensity());
    let particles = ParticleSet::sample(&z.z, &model.sigma_r, n, rng)?;
    Ok((particles, existence))
}
