//! Small reverse-mode differentiable blocks (dense layers, MLPs, a GRU cell),
//! the Adam optimizer and a binary weights container.
//!
//! There is no general autodiff graph. Each block has a `forward` for
//! inference, a `forward_train` that also returns a tape with the saved
//! intermediates, and a `backward` that consumes that tape, accumulates
//! parameter gradients into a gradient-shaped copy of the block and returns
//! the gradient with respect to the block input.

mod adam;
mod dense;
mod gru;
pub mod io;

use std::cell::Cell;

pub use adam::{adam_step, AdamState};
pub use dense::{Activation, Dense, DenseTape, Mlp, MlpTape};
pub use gru::{Gru, GruTape};

use crate::numerics::Rng;

thread_local! {
    static FORWARD_CALLS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn count_forward() {
    FORWARD_CALLS.with(|c| c.set(c.get() + 1));
}

/// Number of network block evaluations made on this thread so far.
pub fn forward_calls() -> u64 {
    FORWARD_CALLS.with(|c| c.get())
}

/// Something with named, shaped `f64` parameters.
///
/// Parameters are visited in a fixed order; data slices are column-major
/// (nalgebra storage order) with the given `(rows, cols)`.
pub trait Parametric {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, usize, usize, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit("", &mut |_, _, _, d| out.extend_from_slice(d));
        out
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut k = 0;
        self.visit_mut("", &mut |_, _, _, d| {
            d.copy_from_slice(&values[k..k + d.len()]);
            k += d.len();
        });
        assert_eq!(k, values.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut("", &mut |_, _, _, d| d.iter_mut().for_each(|x| *x = value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit("", &mut |_, _, _, d| ok &= d.iter().all(|x| x.is_finite()));
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initial value.
pub(crate) fn init_uniform(fan_in: usize, rng: &mut Rng) -> f64 {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    rng.range(-bound, bound)
}

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = xs[k];
            xs[k] = orig + step;
            let up = f(&xs);
            xs[k] = orig - step;
            let down = f(&xs);
            xs[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `|a - b| / max(|a| + |b|, tiny)` over whole vectors (Euclidean norms).
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-300)
}
