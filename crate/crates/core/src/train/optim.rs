use crate::model::{ModelParams, ParamGroup};
use crate::tensor::{Real, Tensor};

/// Linear warmup to `peak` over the first `warmup_frac` of the steps, then
/// linear decay to zero at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, peak: f64, warmup_frac: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warm = warmup_frac * total;
    if step <= warm {
        if warm == 0.0 {
            peak
        } else {
            peak * step / warm
        }
    } else {
        peak * (total - step) / (total - warm)
    }
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one entry per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        AdamState {
            step: self.step,
            m: self.m.iter().map(Tensor::cast).collect(),
            v: self.v.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Learning rate per parameter group for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub model: f64,
    pub embedding: f64,
}

impl GroupRates {
    pub fn of(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Model => self.model,
            ParamGroup::Embedding => self.embedding,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    rates: GroupRates,
) {
    assert_eq!(grads.len(), params.tensors.len(), "one gradient per parameter");
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::of(BETA1);
    let b2 = T::of(BETA2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let eps = T::of(EPSILON);
    let groups = params.groups();
    for (i, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
        let lr = T::of(rates.of(groups[i]));
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
