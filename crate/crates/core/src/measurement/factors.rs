//! Learnable affinity and false-positive-rejection factors.
//!
//! A shared dense head maps raw ROI samples to a shape feature. The
//! affinity MLP sees the object/measurement pair and outputs a log factor
//! (`f_af = exp(o)`); the FPR MLP sees one measurement and outputs a logit
//! (`f_fpr = sigmoid(o)`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EnhancementFactors, Measurement};
use crate::error::{Error, Result};
use crate::neural::{join, Activation, Dense, DenseTape, Mlp, MlpTape, Parametric};
use crate::numerics::Rng;

pub const U_DIM: usize = 5;

/// Object-side inputs of the affinity network.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFeatures {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub u: [f64; U_DIM],
    /// Bilinear ROI samples, same layout as [`Measurement::shape_feature`].
    pub roi: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasNetConfig {
    /// Length of the raw ROI sample vector (5 x map channels).
    pub roi_dim: usize,
    /// Output size of the shared ROI head.
    pub shape_dim: usize,
    pub hidden: usize,
    /// Clamp the affinity factor to at least 1 at inference.
    pub affinity_floor: bool,
    pub pos_scale: f64,
    pub vel_scale: f64,
    pub size_scale: f64,
}

impl Default for MeasNetConfig {
    fn default() -> Self {
        Self {
            roi_dim: 40,
            shape_dim: 8,
            hidden: 32,
            affinity_floor: false,
            pos_scale: 2.0,
            vel_scale: 10.0,
            size_scale: 5.0,
        }
    }
}

impl MeasNetConfig {
    fn affinity_in(&self) -> usize {
        2 + 2 * (2 + U_DIM + self.shape_dim)
    }

    fn fpr_in(&self) -> usize {
        2 + U_DIM + self.shape_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementNets {
    pub config: MeasNetConfig,
    pub head: Dense,
    pub affinity: Mlp,
    pub fpr: Mlp,
}

impl MeasurementNets {
    pub fn new(config: MeasNetConfig, rng: &mut Rng) -> Self {
        let h = config.hidden;
        Self {
            config,
            head: Dense::new(config.roi_dim, config.shape_dim, Activation::Tanh, rng),
            affinity: Mlp::new(
                &[config.affinity_in(), h, 1],
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
            fpr: Mlp::new(
                &[config.fpr_in(), h, 1],
                Activation::Relu,
                Activation::Identity,
                rng,
            ),
        }
    }

    /// Random weights with output layers set so that every affinity factor
    /// is exactly 1 and every FPR factor rounds to exactly 1.
    pub fn neutral(config: MeasNetConfig, rng: &mut Rng) -> Self {
        let mut n = Self::new(config, rng);
        let a = n.affinity.last_mut();
        a.weight.fill(0.0);
        a.bias.fill(0.0);
        let f = n.fpr.last_mut();
        f.weight.fill(0.0);
        f.bias.fill(40.0);
        n
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            head: self.head.zeros_like(),
            affinity: self.affinity.zeros_like(),
            fpr: self.fpr.zeros_like(),
        }
    }

    fn check_roi(&self, roi: &DVector<f64>) -> Result<()> {
        if roi.len() != self.config.roi_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.roi_dim,
                got: roi.len(),
            });
        }
        Ok(())
    }

    fn side(&self, v: [f64; 2], u: &[f64; U_DIM], f_sa: &DVector<f64>, out: &mut Vec<f64>) {
        let c = &self.config;
        out.push(v[0] / c.vel_scale);
        out.push(v[1] / c.vel_scale);
        out.push(u[0] / c.size_scale);
        out.push(u[1] / c.size_scale);
        out.extend_from_slice(&u[2..]);
        out.extend_from_slice(f_sa.as_slice());
    }

    fn affinity_input(
        &self,
        obj: &ObjectFeatures,
        obj_sa: &DVector<f64>,
        m: &Measurement,
        meas_sa: &DVector<f64>,
    ) -> DVector<f64> {
        let c = &self.config;
        let mut v = Vec::with_capacity(c.affinity_in());
        v.push((obj.position[0] - m.z[0]) / c.pos_scale);
        v.push((obj.position[1] - m.z[1]) / c.pos_scale);
        self.side(obj.velocity, &obj.u, obj_sa, &mut v);
        self.side([m.z[2], m.z[3]], &m.u(), meas_sa, &mut v);
        DVector::from_vec(v)
    }

    fn fpr_input(&self, m: &Measurement, meas_sa: &DVector<f64>) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.config.fpr_in());
        self.side([m.z[2], m.z[3]], &m.u(), meas_sa, &mut v);
        DVector::from_vec(v)
    }

    /// Offsets of the two shape-feature blocks inside the affinity input and
    /// of the one inside the FPR input.
    fn sa_offsets(&self) -> (usize, usize, usize) {
        let d = self.config.shape_dim;
        let obj = 2 + 2 + U_DIM;
        let meas = obj + d + 2 + U_DIM;
        (obj, meas, 2 + U_DIM)
    }
}

impl Parametric for MeasurementNets {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        self.head.visit(&join(prefix, "head"), f);
        self.affinity.visit(&join(prefix, "affinity"), f);
        self.fpr.visit(&join(prefix, "fpr"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        self.head.visit_mut(&join(prefix, "head"), f);
        self.affinity.visit_mut(&join(prefix, "affinity"), f);
        self.fpr.visit_mut(&join(prefix, "fpr"), f);
    }
}

/// `exp(o)`, optionally floored at 1.
pub fn affinity_from_logit(o: f64, floor: bool) -> f64 {
    let f = o.exp();
    if floor {
        f.max(1.0)
    } else {
        f
    }
}

pub fn fpr_from_logit(o: f64) -> f64 {
    if o >= 0.0 {
        1.0 / (1.0 + (-o).exp())
    } else {
        let e = o.exp();
        e / (1.0 + e)
    }
}

pub fn affinity_factor(
    obj: &ObjectFeatures,
    m: &Measurement,
    nets: &MeasurementNets,
) -> Result<f64> {
    nets.check_roi(&obj.roi)?;
    nets.check_roi(&m.shape_feature)?;
    let obj_sa = nets.head.forward(&obj.roi)?;
    let meas_sa = nets.head.forward(&m.shape_feature)?;
    let o = nets
        .affinity
        .forward(&nets.affinity_input(obj, &obj_sa, m, &meas_sa))?[0];
    Ok(affinity_from_logit(o, nets.config.affinity_floor))
}

pub fn fpr_factor(m: &Measurement, nets: &MeasurementNets) -> Result<f64> {
    nets.check_roi(&m.shape_feature)?;
    let meas_sa = nets.head.forward(&m.shape_feature)?;
    Ok(fpr_from_logit(
        nets.fpr.forward(&nets.fpr_input(m, &meas_sa))?[0],
    ))
}

/// All pairwise affinity factors and per-measurement FPR factors.
pub fn compute_factors(
    nets: &MeasurementNets,
    objects: &[ObjectFeatures],
    meas: &[Measurement],
) -> Result<EnhancementFactors> {
    Ok(compute_factors_train(nets, objects, meas)?.0)
}

/// Raw network outputs behind a set of factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorLogits {
    /// `I x J` affinity log-factors.
    pub affinity: DMatrix<f64>,
    /// FPR logits, length `J`.
    pub fpr: Vec<f64>,
}

/// Saved intermediates for back-propagating logit gradients.
#[derive(Debug)]
pub struct FactorTape {
    obj_head: Vec<DenseTape>,
    meas_head: Vec<DenseTape>,
    affinity: Vec<Vec<MlpTape>>,
    fpr: Vec<MlpTape>,
}

/// [`compute_factors`] that also returns the logits and a tape.
pub fn compute_factors_train(
    nets: &MeasurementNets,
    objects: &[ObjectFeatures],
    meas: &[Measurement],
) -> Result<(EnhancementFactors, FactorLogits, FactorTape)> {
    let mut obj_sa = Vec::with_capacity(objects.len());
    let mut obj_head = Vec::with_capacity(objects.len());
    for o in objects {
        nets.check_roi(&o.roi)?;
        let (y, t) = nets.head.forward_train(&o.roi)?;
        obj_sa.push(y);
        obj_head.push(t);
    }
    let mut meas_sa = Vec::with_capacity(meas.len());
    let mut meas_head = Vec::with_capacity(meas.len());
    for m in meas {
        nets.check_roi(&m.shape_feature)?;
        let (y, t) = nets.head.forward_train(&m.shape_feature)?;
        meas_sa.push(y);
        meas_head.push(t);
    }
    let (n_obj, n_meas) = (objects.len(), meas.len());
    let mut aff_logits = DMatrix::zeros(n_obj, n_meas);
    let mut aff_tapes = Vec::with_capacity(n_obj);
    for (i, o) in objects.iter().enumerate() {
        let mut row = Vec::with_capacity(n_meas);
        for (j, m) in meas.iter().enumerate() {
            let (y, t) =
                nets.affinity
                    .forward_train(&nets.affinity_input(o, &obj_sa[i], m, &meas_sa[j]))?;
            aff_logits[(i, j)] = y[0];
            row.push(t);
        }
        aff_tapes.push(row);
    }
    let mut fpr_logits = Vec::with_capacity(n_meas);
    let mut fpr_tapes = Vec::with_capacity(n_meas);
    for (j, m) in meas.iter().enumerate() {
        let (y, t) = nets.fpr.forward_train(&nets.fpr_input(m, &meas_sa[j]))?;
        fpr_logits.push(y[0]);
        fpr_tapes.push(t);
    }
    let floor = nets.config.affinity_floor;
    let factors = EnhancementFactors {
        affinity: aff_logits.map(|o| affinity_from_logit(o, floor)),
        fpr: fpr_logits.iter().map(|o| fpr_from_logit(*o)).collect(),
    };
    let logits = FactorLogits {
        affinity: aff_logits,
        fpr: fpr_logits,
    };
    let tape = FactorTape {
        obj_head,
        meas_head,
        affinity: aff_tapes,
        fpr: fpr_tapes,
    };
    Ok((factors, logits, tape))
}

impl FactorTape {
    /// Accumulates parameter gradients given loss gradients with respect to
    /// the affinity and FPR logits.
    pub fn backward(
        self,
        nets: &MeasurementNets,
        d_affinity: &DMatrix<f64>,
        d_fpr: &[f64],
        grad: &mut MeasurementNets,
    ) {
        let d = nets.config.shape_dim;
        let (off_obj, off_meas, off_fpr) = nets.sa_offsets();
        let mut d_obj_sa: Vec<DVector<f64>> = vec![DVector::zeros(d); self.obj_head.len()];
        let mut d_meas_sa: Vec<DVector<f64>> = vec![DVector::zeros(d); self.meas_head.len()];
        for (i, row) in self.affinity.into_iter().enumerate() {
            for (j, t) in row.into_iter().enumerate() {
                let g = d_affinity[(i, j)];
                if g == 0.0 {
                    continue;
                }
                let dx =
                    nets.affinity
                        .backward(t, &DVector::from_element(1, g), &mut grad.affinity);
                d_obj_sa[i] += dx.rows(off_obj, d);
                d_meas_sa[j] += dx.rows(off_meas, d);
            }
        }
        for (j, t) in self.fpr.into_iter().enumerate() {
            let g = d_fpr[j];
            if g == 0.0 {
                continue;
            }
            let dx = nets
                .fpr
                .backward(t, &DVector::from_element(1, g), &mut grad.fpr);
            d_meas_sa[j] += dx.rows(off_fpr, d);
        }
        for (t, ds) in self.obj_head.into_iter().zip(&d_obj_sa) {
            nets.head.backward(t, ds, &mut grad.head);
        }
        for (t, ds) in self.meas_head.into_iter().zip(&d_meas_sa) {
            nets.head.backward(t, ds, &mut grad.head);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_map::BoxDims;
    use crate::neural::{central_difference, relative_error};
    use crate::numerics::StateVec;

    fn small() -> MeasNetConfig {
        MeasNetConfig {
            roi_dim: 10,
            shape_dim: 3,
            hidden: 6,
            ..MeasNetConfig::default()
        }
    }

    fn random_meas(rng: &mut Rng, roi_dim: usize) -> Measurement {
        Measurement {
            z: StateVec::from_fn(|_, _| 3.0 * rng.normal()),
            score: rng.uniform(),
            bbox: BoxDims {
                length: rng.range(1.0, 5.0),
                width: rng.range(0.5, 2.5),
                yaw: rng.range(-3.0, 3.0),
            },
            shape_feature: DVector::from_fn(roi_dim, |_, _| rng.normal()),
            class_id: 0,
        }
    }

    fn random_obj(rng: &mut Rng, roi_dim: usize) -> ObjectFeatures {
        ObjectFeatures {
            position: [3.0 * rng.normal(), 3.0 * rng.normal()],
            velocity: [rng.normal(), rng.normal()],
            u: [2.0, 1.0, 0.6, 0.8, rng.uniform()],
            roi: DVector::from_fn(roi_dim, |_, _| rng.normal()),
        }
    }

    #[test]
    fn logit_mappings() {
        assert_eq!(affinity_from_logit(0.0, false), 1.0);
        assert!((affinity_from_logit(2f64.ln(), false) - 2.0).abs() < 1e-15);
        assert_eq!(affinity_from_logit(0.3f64.ln(), true), 1.0);
        assert_eq!(fpr_from_logit(0.0), 0.5);
        assert!(fpr_from_logit(10.0) > 0.9999);
        assert!(fpr_from_logit(-10.0) < 1e-4);
    }

    #[test]
    fn neutral_nets_give_unit_factors() {
        let mut rng = Rng::new(3);
        let nets = MeasurementNets::neutral(small(), &mut rng);
        let objs: Vec<_> = (0..3).map(|_| random_obj(&mut rng, 10)).collect();
        let meas: Vec<_> = (0..4).map(|_| random_meas(&mut rng, 10)).collect();
        let f = compute_factors(&nets, &objs, &meas).unwrap();
        assert!(f.affinity.iter().all(|v| *v == 1.0));
        assert!(f.fpr.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = Rng::new(3);
        let nets = MeasurementNets::new(small(), &mut rng);
        let m = random_meas(&mut rng, 7);
        assert!(fpr_factor(&m, &nets).is_err());
    }

    #[test]
    fn factor_gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let nets = MeasurementNets::new(small(), &mut rng);
            let objs: Vec<_> = (0..2).map(|_| random_obj(&mut rng, 10)).collect();
            let meas: Vec<_> = (0..3).map(|_| random_meas(&mut rng, 10)).collect();
            let ca = DMatrix::from_fn(2, 3, |_, _| rng.normal());
            let cf: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let (_, _, tape) = compute_factors_train(&nets, &objs, &meas).unwrap();
            let mut grad = nets.zeros_like();
            tape.backward(&nets, &ca, &cf, &mut grad);
            let mut probe = nets.clone();
            let num = central_difference(
                &mut |t| {
                    probe.set_flat(t);
                    let (_, l, _) = compute_factors_train(&probe, &objs, &meas).unwrap();
                    l.affinity.component_mul(&ca).sum()
                        + l.fpr.iter().zip(&cf).map(|(a, b)| a * b).sum::<f64>()
                },
                &nets.flatten(),
                1e-5,
            );
            assert!(relative_error(&grad.flatten(), &num) < 1e-4, "seed {seed}");
        }
    }
}
