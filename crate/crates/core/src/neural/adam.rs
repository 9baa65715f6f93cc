use super::Parametric;

/// Adam moments and hyperparameters for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &dyn Parametric, lr: f64) -> Self {
        Self::new(model.num_params(), lr)
    }

    /// One update of `model` with gradients held in a model-shaped `grad`.
    pub fn step_model<P: Parametric + ?Sized>(&mut self, model: &mut P, grad: &P) {
        let mut params = model.flatten();
        adam_step(&mut params, &grad.flatten(), self);
        model.set_flat(&params);
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], st: &mut AdamState) {
    assert_eq!(
        params.len(),
        grads.len(),
        "parameter/gradient length mismatch"
    );
    assert_eq!(params.len(), st.m.len(), "optimizer state length mismatch");
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - st.beta1.powi(t);
    let c2 = 1.0 - st.beta2.powi(t);
    for k in 0..params.len() {
        let g = grads[k];
        st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g;
        st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g * g;
        let m_hat = st.m[k] / c1;
        let v_hat = st.v[k] / c2;
        params[k] -= st.lr * m_hat / (v_hat.sqrt() + st.eps);
    }
}
