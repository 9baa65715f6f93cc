use nalgebra::{DMatrix, DVector};

use super::{count_forward, init_uniform, join, Parametric};
use crate::error::{Error, Result};
use crate::numerics::Rng;

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Gated recurrent cell:
///
/// ```text
/// z  = sigmoid(W_z u + U_z h + b_z)
/// r  = sigmoid(W_r u + U_r h + b_r)
/// h~ = tanh(W_h u + U_h (r * h) + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_z: DMatrix<f64>,
    pub u_z: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub w_r: DMatrix<f64>,
    pub u_r: DMatrix<f64>,
    pub b_r: DVector<f64>,
    pub w_h: DMatrix<f64>,
    pub u_h: DMatrix<f64>,
    pub b_h: DVector<f64>,
}

#[derive(Debug)]
pub struct GruTape {
    u: DVector<f64>,
    h: DVector<f64>,
    z: DVector<f64>,
    r: DVector<f64>,
    cand: DVector<f64>,
}

impl Gru {
    pub fn zeros(n_in: usize, n_hidden: usize) -> Self {
        let w = || DMatrix::zeros(n_hidden, n_in);
        let u = || DMatrix::zeros(n_hidden, n_hidden);
        let b = || DVector::zeros(n_hidden);
        Self {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    pub fn new(n_in: usize, n_hidden: usize, rng: &mut Rng) -> Self {
        let mut g = Self::zeros(n_in, n_hidden);
        let fan_in = n_in + n_hidden;
        g.visit_mut("", &mut |_, _, _, d| {
            d.iter_mut().for_each(|x| *x = init_uniform(fan_in, rng))
        });
        g
    }

    pub fn n_in(&self) -> usize {
        self.w_z.ncols()
    }

    pub fn n_hidden(&self) -> usize {
        self.w_z.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_in(), self.n_hidden())
    }

    fn check(&self, u: &DVector<f64>, h: &DVector<f64>) -> Result<()> {
        if u.len() != self.n_in() {
            return Err(Error::DimensionMismatch {
                expected: self.n_in(),
                got: u.len(),
            });
        }
        if h.len() != self.n_hidden() {
            return Err(Error::DimensionMismatch {
                expected: self.n_hidden(),
                got: h.len(),
            });
        }
        Ok(())
    }

    fn gates(&self, u: &DVector<f64>, h: &DVector<f64>) -> GruTape {
        let gate = |w: &DMatrix<f64>, uu: &DMatrix<f64>, b: &DVector<f64>, hh: &DVector<f64>| {
            let mut a = b.clone();
            a.gemv(1.0, w, u, 1.0);
            a.gemv(1.0, uu, hh, 1.0);
            a
        };
        let z = gate(&self.w_z, &self.u_z, &self.b_z, h).map(sigmoid);
        let r = gate(&self.w_r, &self.u_r, &self.b_r, h).map(sigmoid);
        let rh = r.component_mul(h);
        let cand = gate(&self.w_h, &self.u_h, &self.b_h, &rh).map(f64::tanh);
        GruTape {
            u: u.clone(),
            h: h.clone(),
            z,
            r,
            cand,
        }
    }

    fn output(t: &GruTape) -> DVector<f64> {
        DVector::from_fn(t.h.len(), |k, _| {
            (1.0 - t.z[k]) * t.h[k] + t.z[k] * t.cand[k]
        })
    }

    pub fn forward(&self, u: &DVector<f64>, h: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(u, h)?;
        count_forward();
        Ok(Self::output(&self.gates(u, h)))
    }

    pub fn forward_train(
        &self,
        u: &DVector<f64>,
        h: &DVector<f64>,
    ) -> Result<(DVector<f64>, GruTape)> {
        self.check(u, h)?;
        count_forward();
        let t = self.gates(u, h);
        Ok((Self::output(&t), t))
    }

    /// Accumulates parameter gradients into `grad`; returns `(dL/du, dL/dh)`.
    pub fn backward(
        &self,
        t: GruTape,
        dh_next: &DVector<f64>,
        grad: &mut Gru,
    ) -> (DVector<f64>, DVector<f64>) {
        let n = t.h.len();
        let dz = DVector::from_fn(n, |k, _| dh_next[k] * (t.cand[k] - t.h[k]));
        let mut dh = DVector::from_fn(n, |k, _| dh_next[k] * (1.0 - t.z[k]));

        let da_h = DVector::from_fn(n, |k, _| {
            dh_next[k] * t.z[k] * (1.0 - t.cand[k] * t.cand[k])
        });
        let rh = t.r.component_mul(&t.h);
        grad.w_h.ger(1.0, &da_h, &t.u, 1.0);
        grad.u_h.ger(1.0, &da_h, &rh, 1.0);
        grad.b_h += &da_h;
        let mut du = self.w_h.tr_mul(&da_h);
        let drh = self.u_h.tr_mul(&da_h);
        dh += drh.component_mul(&t.r);

        let da_r = DVector::from_fn(n, |k, _| drh[k] * t.h[k] * t.r[k] * (1.0 - t.r[k]));
        grad.w_r.ger(1.0, &da_r, &t.u, 1.0);
        grad.u_r.ger(1.0, &da_r, &t.h, 1.0);
        grad.b_r += &da_r;
        du += self.w_r.tr_mul(&da_r);
        dh += self.u_r.tr_mul(&da_r);

        let da_z = DVector::from_fn(n, |k, _| dz[k] * t.z[k] * (1.0 - t.z[k]));
        grad.w_z.ger(1.0, &da_z, &t.u, 1.0);
        grad.u_z.ger(1.0, &da_z, &t.h, 1.0);
        grad.b_z += &da_z;
        du += self.w_z.tr_mul(&da_z);
        dh += self.u_z.tr_mul(&da_z);

        (du, dh)
    }
}

impl Parametric for Gru {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        for (name, m) in [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
        ] {
            f(&join(prefix, name), m.nrows(), m.ncols(), m.as_slice());
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            f(&join(prefix, name), b.len(), 1, b.as_slice());
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        for (name, m) in [
            ("w_z", &mut self.w_z),
            ("u_z", &mut self.u_z),
            ("w_r", &mut self.w_r),
            ("u_r", &mut self.u_r),
            ("w_h", &mut self.w_h),
            ("u_h", &mut self.u_h),
        ] {
            let (r, c) = m.shape();
            f(&join(prefix, name), r, c, m.as_mut_slice());
        }
        for (name, b) in [
            ("b_z", &mut self.b_z),
            ("b_r", &mut self.b_r),
            ("b_h", &mut self.b_h),
        ] {
            let n = b.len();
            f(&join(prefix, name), n, 1, b.as_mut_slice());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{central_difference, relative_error};

    #[test]
    fn zero_weights_halve_hidden() {
        let g = Gru::zeros(3, 4);
        let h = DVector::from_vec(vec![1.0, -2.0, 0.5, 4.0]);
        let out = g
            .forward(&DVector::from_vec(vec![0.3, 0.1, -7.0]), &h)
            .unwrap();
        assert_eq!(out, h * 0.5);
        let zero = g.forward(&DVector::zeros(3), &DVector::zeros(4)).unwrap();
        assert_eq!(zero, DVector::zeros(4));
    }

    #[test]
    fn dimension_mismatch() {
        let g = Gru::zeros(3, 4);
        assert!(g.forward(&DVector::zeros(2), &DVector::zeros(4)).is_err());
        assert!(g.forward(&DVector::zeros(3), &DVector::zeros(5)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let g = Gru::new(5, 4, &mut rng);
            let u = DVector::from_fn(5, |_, _| rng.normal());
            let h = DVector::from_fn(4, |_, _| rng.normal());
            let c = DVector::from_fn(4, |_, _| rng.normal());
            let (_, tape) = g.forward_train(&u, &h).unwrap();
            let mut grad = g.zeros_like();
            let (du, dh) = g.backward(tape, &c, &mut grad);

            let mut probe = g.clone();
            let num = central_difference(
                &mut |t| {
                    probe.set_flat(t);
                    probe.forward(&u, &h).unwrap().dot(&c)
                },
                &g.flatten(),
                1e-5,
            );
            assert!(relative_error(&grad.flatten(), &num) < 1e-4, "seed {seed}");
            let num_u = central_difference(
                &mut |v| {
                    g.forward(&DVector::from_column_slice(v), &h)
                        .unwrap()
                        .dot(&c)
                },
                u.as_slice(),
                1e-5,
            );
            assert!(relative_error(du.as_slice(), &num_u) < 1e-4);
            let num_h = central_difference(
                &mut |v| {
                    g.forward(&u, &DVector::from_column_slice(v))
                        .unwrap()
                        .dot(&c)
                },
                h.as_slice(),
                1e-5,
            );
            assert!(relative_error(dh.as_slice(), &num_h) < 1e-4);
        }
    }
}
