use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{count_forward, init_uniform, join, Parametric};
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Relu => a.max(0.0),
            Activation::Tanh => a.tanh(),
            Activation::Identity => a,
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `y`.
    fn derivative(self, a: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// `y = act(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug)]
pub struct DenseTape {
    input: DVector<f64>,
    pre: DVector<f64>,
    out: DVector<f64>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let weight = DMatrix::from_fn(n_out, n_in, |_, _| init_uniform(n_in, rng));
        let bias = DVector::from_fn(n_out, |_, _| init_uniform(n_in, rng));
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            weight: DMatrix::zeros(n_out, n_in),
            bias: DVector::zeros(n_out),
            activation,
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.n_in(), self.n_out(), self.activation)
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n_in() {
            return Err(Error::DimensionMismatch {
                expected: self.n_in(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn affine(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut pre = self.bias.clone();
        pre.gemv(1.0, &self.weight, x, 1.0);
        pre
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x)?;
        let act = self.activation;
        Ok(self.affine(x).map(|a| act.apply(a)))
    }

    pub fn forward_train(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DenseTape)> {
        self.check(x)?;
        let pre = self.affine(x);
        let act = self.activation;
        let out = pre.map(|a| act.apply(a));
        let tape = DenseTape {
            input: x.clone(),
            pre,
            out: out.clone(),
        };
        Ok((out, tape))
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx`.
    pub fn backward(&self, tape: DenseTape, dy: &DVector<f64>, grad: &mut Dense) -> DVector<f64> {
        let act = self.activation;
        let da = DVector::from_fn(dy.len(), |k, _| {
            dy[k] * act.derivative(tape.pre[k], tape.out[k])
        });
        grad.weight.ger(1.0, &da, &tape.input, 1.0);
        grad.bias += &da;
        self.weight.tr_mul(&da)
    }
}

impl Parametric for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        f(
            &join(prefix, "weight"),
            self.weight.nrows(),
            self.weight.ncols(),
            self.weight.as_slice(),
        );
        f(
            &join(prefix, "bias"),
            self.bias.len(),
            1,
            self.bias.as_slice(),
        );
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        let (r, c) = self.weight.shape();
        f(&join(prefix, "weight"), r, c, self.weight.as_mut_slice());
        let n = self.bias.len();
        f(&join(prefix, "bias"), n, 1, self.bias.as_mut_slice());
    }
}

/// Chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

#[derive(Debug)]
pub struct MlpTape(Vec<DenseTape>);

impl Mlp {
    /// `sizes = [n_in, h1, ..., n_out]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Dense::new(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map(Dense::n_out).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn last_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().expect("non-empty MLP")
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        count_forward();
        let mut y = x.clone();
        for l in &self.layers {
            y = l.forward(&y)?;
        }
        Ok(y)
    }

    pub fn forward_train(&self, x: &DVector<f64>) -> Result<(DVector<f64>, MlpTape)> {
        count_forward();
        let mut y = x.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (out, t) = l.forward_train(&y)?;
            tapes.push(t);
            y = out;
        }
        Ok((y, MlpTape(tapes)))
    }

    pub fn backward(&self, tape: MlpTape, dy: &DVector<f64>, grad: &mut Mlp) -> DVector<f64> {
        let mut d = dy.clone();
        for ((l, t), g) in self
            .layers
            .iter()
            .zip(tape.0)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            d = l.backward(t, &d, g);
        }
        d
    }
}

impl Parametric for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64])) {
        for (k, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{k}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{central_difference, relative_error};

    #[test]
    fn identity_layer_passes_input() {
        let l = Dense {
            weight: DMatrix::identity(3, 3),
            bias: DVector::zeros(3),
            activation: Activation::Identity,
        };
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_clips_negative() {
        let l = Dense {
            weight: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
            activation: Activation::Relu,
        };
        let y = l.forward(&DVector::from_vec(vec![-1.0, 2.0])).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = Rng::new(0);
        let m = Mlp::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng);
        assert!(m.forward(&DVector::zeros(2)).is_err());
    }

    fn check_mlp(act: Activation, seed: u64) {
        let mut rng = Rng::new(seed);
        let mlp = Mlp::new(&[5, 7, 6, 3], act, Activation::Identity, &mut rng);
        let x = DVector::from_fn(5, |_, _| rng.normal());
        let c = DVector::from_fn(3, |_, _| rng.normal());
        let (y, tape) = mlp.forward_train(&x).unwrap();
        assert_eq!(y, mlp.forward(&x).unwrap());
        let mut grad = mlp.zeros_like();
        let dx = mlp.backward(tape, &c, &mut grad);

        let theta = mlp.flatten();
        let mut probe = mlp.clone();
        let num = central_difference(
            &mut |t| {
                probe.set_flat(t);
                probe.forward(&x).unwrap().dot(&c)
            },
            &theta,
            1e-5,
        );
        assert!(relative_error(&grad.flatten(), &num) < 1e-4);
        let num_x = central_difference(
            &mut |v| mlp.forward(&DVector::from_column_slice(v)).unwrap().dot(&c),
            x.as_slice(),
            1e-5,
        );
        assert!(relative_error(dx.as_slice(), &num_x) < 1e-4);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        for seed in 0..10 {
            check_mlp(Activation::Tanh, seed);
            check_mlp(Activation::Relu, seed + 100);
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = Rng::new(1);
        let mut mlp = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Identity, &mut rng);
        let flat = mlp.flatten();
        assert_eq!(flat.len(), 2 * 3 + 3 + 3 + 1);
        mlp.fill(0.0);
        mlp.set_flat(&flat);
        assert_eq!(mlp.flatten(), flat);
    }

    #[test]
    fn init_is_bounded_by_fan_in() {
        let mut rng = Rng::new(2);
        let l = Dense::new(16, 8, Activation::Relu, &mut rng);
        assert!(l.weight.iter().all(|w| w.abs() <= 0.25));
    }
}
