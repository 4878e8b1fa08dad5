use crate::error::{Error, Result};
use crate::tensor::{GradientSet, ParameterSet};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

fn check_grads(params: &ParameterSet, grads: &GradientSet, op: &'static str) -> Result<()> {
    params.check_compatible(grads, op)?;
    if let Some((name, _)) = grads.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite(format!("{op}: gradient of `{name}`")));
    }
    Ok(())
}

/// `θ ← θ − lr · g`, in place.
pub fn sgd_step(params: &mut ParameterSet, grads: &GradientSet, lr: f64) -> Result<()> {
    check_grads(params, grads, "sgd_step")?;
    for ((_, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
    Ok(())
}

/// Adam moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero moments shaped like `params`, standard constants.
    pub fn new(params: &ParameterSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }
}

/// One bias-corrected Adam update, in place. The step counter is incremented
/// before the bias corrections are computed.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    check_grads(params, grads, "adam_step")?;
    params.check_compatible(&state.m, "adam_step")?;
    params.check_compatible(&state.v, "adam_step")?;
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let bc1 = 1.0 - b1.powf(state.t as f64);
    let bc2 = 1.0 - b2.powf(state.t as f64);
    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
