use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Adam with bias correction. Accumulators are kept per parameter in store
/// order; the update is fully deterministic.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        AdamState::with_hyperparams(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(params: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            step: 0,
            beta1,
            beta2,
            epsilon,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One Adam update. `grads` must align with `params` in store order.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dim(
            "adam_step",
            format!("{} grads for {} params", grads.len(), params.len()),
        ));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensor_at(i).shape() {
            return Err(Error::dim(
                "adam_step",
                format!("grad shape mismatch for `{}`", params.name_at(i)),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(params.name_at(i).to_string()));
        }
    }

    state.step += 1;
    let t = state.step;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);

    for i in 0..grads.len() {
        let g = grads[i].data();
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let p = params.tensor_at_mut(i).data_mut();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
