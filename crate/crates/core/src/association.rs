//! Probabilistic data association between potential objects (rows) and
//! measurements (columns).
//!
//! Association events are written in the dual form: `a[i] = j` (object `i`
//! takes measurement `j`, 0 = none) and `b[j] = i` (measurement `j` comes
//! from object `i`, 0 = from no legacy object). Both loopy belief
//! propagation and an exhaustive enumeration oracle are provided.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest object or measurement count accepted by [`enumerate_marginals`].
pub const ENUMERATION_LIMIT: usize = 8;

/// Pairwise association weights.
///
/// `beta` is `I x (J + 1)`; column 0 is the missed-detection weight.
/// `xi[j]` is the weight of measurement `j` being unassociated with every
/// legacy object (clutter or a newborn object).
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProblem {
    pub beta: DMatrix<f64>,
    pub xi: Vec<f64>,
}

impl AssociationProblem {
    pub fn new(beta: DMatrix<f64>, xi: Vec<f64>) -> Result<Self> {
        if beta.ncols() != xi.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: xi.len() + 1,
                got: beta.ncols(),
            });
        }
        let bad = |v: &f64| !v.is_finite() || *v < 0.0;
        if beta.iter().any(bad) || xi.iter().any(bad) {
            return Err(Error::DegenerateProblem);
        }
        for i in 0..beta.nrows() {
            if beta.row(i).iter().all(|v| *v == 0.0) {
                return Err(Error::DegenerateProblem);
            }
        }
        Ok(Self { beta, xi })
    }

    pub fn num_objects(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_measurements(&self) -> usize {
        self.xi.len()
    }
}

/// Marginal association probabilities.
///
/// `kappa` is `I x (J + 1)` (row `i` is the distribution of `a[i]`), `iota`
/// is `J x (I + 1)` (row `j` is the distribution of `b[j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMarginals {
    pub kappa: DMatrix<f64>,
    pub iota: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl AssociationMarginals {
    /// Most probable measurement index per object (0 = missed).
    pub fn kappa_argmax(&self) -> Vec<usize> {
        (0..self.kappa.nrows())
            .map(|i| argmax(self.kappa.row(i).iter().copied()))
            .collect()
    }
}

fn argmax(it: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in it.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// `true` iff `a[i] = j` exactly when `b[j] = i` (indices 1-based, 0 = none).
pub fn consistency(a: &[usize], b: &[usize]) -> Result<bool> {
    let (n_obj, n_meas) = (a.len(), b.len());
    if let Some(&bad) = a.iter().find(|&&j| j > n_meas) {
        return Err(Error::DimensionMismatch {
            expected: n_meas,
            got: bad,
        });
    }
    if let Some(&bad) = b.iter().find(|&&i| i > n_obj) {
        return Err(Error::DimensionMismatch {
            expected: n_obj,
            got: bad,
        });
    }
    for (i, &j) in a.iter().enumerate() {
        if j != 0 && b[j - 1] != i + 1 {
            return Ok(false);
        }
    }
    for (j, &i) in b.iter().enumerate() {
        if i != 0 && a[i - 1] != j + 1 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Normalizes in place. A row summing to infinity keeps only its infinite
/// entries; a row summing to zero falls back to all mass on index 0.
fn normalize_row(v: &mut [f64]) {
    let sum: f64 = v.iter().sum();
    if sum.is_finite() && sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
        return;
    }
    if sum.is_infinite() {
        let n_inf = v.iter().filter(|x| x.is_infinite()).count().max(1) as f64;
        v.iter_mut()
            .for_each(|x| *x = if x.is_infinite() { 1.0 / n_inf } else { 0.0 });
        return;
    }
    v.iter_mut().for_each(|x| *x = 0.0);
    if let Some(first) = v.first_mut() {
        *first = 1.0;
    }
}

/// Exact marginals by summing over every consistent association event.
pub fn enumerate_marginals(p: &AssociationProblem) -> Result<AssociationMarginals> {
    let (n_obj, n_meas) = (p.num_objects(), p.num_measurements());
    if n_obj > ENUMERATION_LIMIT || n_meas > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            objects: n_obj,
            measurements: n_meas,
        });
    }
    let mut kappa = DMatrix::zeros(n_obj, n_meas + 1);
    let mut iota = DMatrix::zeros(n_meas, n_obj + 1);
    let mut total = 0.0;
    let mut a = vec![0usize; n_obj];
    let mut taken = vec![false; n_meas];

    struct Walk<'a> {
        p: &'a AssociationProblem,
        kappa: &'a mut DMatrix<f64>,
        iota: &'a mut DMatrix<f64>,
        total: &'a mut f64,
    }

    fn visit(w: &mut Walk, a: &mut [usize], taken: &mut [bool], i: usize, weight: f64) {
        if weight == 0.0 {
            return;
        }
        if i == a.len() {
            let mut full = weight;
            for (j, t) in taken.iter().enumerate() {
                if !t {
                    full *= w.p.xi[j];
                }
            }
            if full == 0.0 {
                return;
            }
            *w.total += full;
            for (obj, &j) in a.iter().enumerate() {
                w.kappa[(obj, j)] += full;
                if j > 0 {
                    w.iota[(j - 1, obj + 1)] += full;
                }
            }
            for (j, t) in taken.iter().enumerate() {
                if !t {
                    w.iota[(j, 0)] += full;
                }
            }
            return;
        }
        a[i] = 0;
        visit(w, a, taken, i + 1, weight * w.p.beta[(i, 0)]);
        for j in 1..=taken.len() {
            if !taken[j - 1] {
                taken[j - 1] = true;
                a[i] = j;
                visit(w, a, taken, i + 1, weight * w.p.beta[(i, j)]);
                taken[j - 1] = false;
            }
        }
        a[i] = 0;
    }

    let mut walk = Walk {
        p,
        kappa: &mut kappa,
        iota: &mut iota,
        total: &mut total,
    };
    visit(&mut walk, &mut a, &mut taken, 0, 1.0);
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateProblem);
    }
    kappa /= total;
    iota /= total;
    Ok(AssociationMarginals {
        kappa,
        iota,
        iterations: 0,
        converged: true,
    })
}

/// Denominator floor that keeps messages finite.
const MESSAGE_FLOOR: f64 = 1e-200;

/// Default iteration cap for [`bp_marginals`].
pub const BP_MAX_ITER: usize = 200;
/// Default convergence tolerance for [`bp_marginals`].
pub const BP_TOL: f64 = 1e-6;

/// Loopy belief propagation with a synchronous schedule and no damping.
///
/// Messages: `mu[i][j] = beta_i(j) / (beta_i(0) + sum_{j' != j} beta_i(j') nu[i][j'])`
/// and `nu[i][j] = 1 / (xi_j + sum_{i' != i} mu[i'][j])`. Iteration stops
/// once the largest change of any `nu` is below `tol`.
pub fn bp_marginals(p: &AssociationProblem, max_iter: usize, tol: f64) -> AssociationMarginals {
    let (n_obj, n_meas) = (p.num_objects(), p.num_measurements());
    // Objects with no candidate measurement are decided outright and send
    // zero messages.
    let active: Vec<bool> = (0..n_obj)
        .map(|i| (1..=n_meas).any(|j| p.beta[(i, j)] > 0.0))
        .collect();

    // Rescale columns (each measurement with its xi) and then rows to unit
    // maximum. Both leave every marginal unchanged and keep the message
    // products representable for extreme inputs.
    let mut beta = p.beta.clone();
    let mut xi = p.xi.clone();
    for j in 0..n_meas {
        let m = (0..n_obj).fold(xi[j], |m, i| m.max(beta[(i, j + 1)]));
        if m > 0.0 {
            xi[j] /= m;
            for i in 0..n_obj {
                beta[(i, j + 1)] /= m;
            }
        }
    }
    for i in 0..n_obj {
        let m = beta.row(i).max();
        if m > 0.0 {
            beta.row_mut(i).iter_mut().for_each(|v| *v /= m);
        }
    }

    let mut mu = DMatrix::<f64>::zeros(n_obj, n_meas);
    let mut nu = DMatrix::<f64>::zeros(n_obj, n_meas);
    for j in 0..n_meas {
        let init = 1.0 / xi[j].max(MESSAGE_FLOOR);
        for i in 0..n_obj {
            nu[(i, j)] = init;
        }
    }

    let mut iterations = 0;
    let mut converged = n_obj == 0 || n_meas == 0 || !active.iter().any(|a| *a);
    while !converged && iterations < max_iter {
        iterations += 1;
        for i in 0..n_obj {
            if !active[i] {
                continue;
            }
            let row_sum: f64 = (1..=n_meas).map(|j| beta[(i, j)] * nu[(i, j - 1)]).sum();
            for j in 1..=n_meas {
                let others = row_sum - beta[(i, j)] * nu[(i, j - 1)];
                let denom = (beta[(i, 0)] + others.max(0.0)).max(MESSAGE_FLOOR);
                mu[(i, j - 1)] = beta[(i, j)] / denom;
            }
        }
        let mut delta: f64 = 0.0;
        for j in 0..n_meas {
            let col_sum: f64 = (0..n_obj).map(|i| mu[(i, j)]).sum();
            for i in 0..n_obj {
                let others = (col_sum - mu[(i, j)]).max(0.0);
                let new = 1.0 / (xi[j] + others).max(MESSAGE_FLOOR);
                let old = nu[(i, j)];
                let change = if new == old {
                    0.0
                } else {
                    (new - old).abs() / old.max(1.0)
                };
                delta = delta.max(change);
                nu[(i, j)] = new;
            }
        }
        debug_assert!(mu.iter().all(|v| v.is_finite()) && nu.iter().all(|v| v.is_finite()));
        if delta < tol {
            converged = true;
        }
    }

    let mut kappa = DMatrix::zeros(n_obj, n_meas + 1);
    for i in 0..n_obj {
        let mut row = vec![0.0; n_meas + 1];
        row[0] = beta[(i, 0)];
        if active[i] {
            for j in 1..=n_meas {
                row[j] = beta[(i, j)] * nu[(i, j - 1)];
            }
        }
        normalize_row(&mut row);
        for (j, v) in row.into_iter().enumerate() {
            kappa[(i, j)] = v;
        }
    }
    let mut iota = DMatrix::zeros(n_meas, n_obj + 1);
    for j in 0..n_meas {
        let mut row = vec![0.0; n_obj + 1];
        row[0] = xi[j];
        for i in 0..n_obj {
            row[i + 1] = mu[(i, j)];
        }
        normalize_row(&mut row);
        for (i, v) in row.into_iter().enumerate() {
            iota[(j, i)] = v;
        }
    }
    AssociationMarginals {
        kappa,
        iota,
        iterations,
        converged,
    }
}

/// Draws an association problem from a small point-object scene.
///
/// Objects are scattered uniformly over a square of side `side` metres,
/// each measurement is either a noisy detection of the object with the
/// same index (probability 0.9) or uniform clutter, and the weights are the
/// resulting detection-likelihood ratios against uniform clutter. Used by
/// tests and benchmarks that need ensembles with tracking-like structure.
pub fn synthetic_problem(
    n_obj: usize,
    n_meas: usize,
    side: f64,
    rng: &mut crate::numerics::Rng,
) -> AssociationProblem {
    let p_d = 0.9;
    let sigma = 1.0;
    let var = 2.0 * sigma * sigma;
    let objects: Vec<[f64; 2]> = (0..n_obj)
        .map(|_| [rng.range(0.0, side), rng.range(0.0, side)])
        .collect();
    let existence: Vec<f64> = (0..n_obj).map(|_| rng.range(0.5, 1.0)).collect();
    let meas: Vec<[f64; 2]> = (0..n_meas)
        .map(|j| {
            if j < n_obj && rng.bernoulli(p_d) {
                [
                    objects[j][0] + sigma * rng.normal(),
                    objects[j][1] + sigma * rng.normal(),
                ]
            } else {
                [rng.range(0.0, side), rng.range(0.0, side)]
            }
        })
        .collect();
    let clutter_density = 1.0 / (side * side);
    let beta = DMatrix::from_fn(n_obj, n_meas + 1, |i, j| {
        if j == 0 {
            return 1.0 - existence[i] * p_d;
        }
        let d2 =
            (meas[j - 1][0] - objects[i][0]).powi(2) + (meas[j - 1][1] - objects[i][1]).powi(2);
        let lik = (-0.5 * d2 / var).exp() / (2.0 * std::f64::consts::PI * var);
        existence[i] * p_d * lik / clutter_density
    });
    let xi = (0..n_meas).map(|_| 1.0 + rng.range(0.0, 0.5)).collect();
    AssociationProblem::new(beta, xi).expect("weights are positive and finite")
}
