//! Adaptive-moment parameter updates with bias correction and global
//! gradient-norm clipping.

use crate::captioner::Params;

use super::TrainConfig;

/// First/second moment accumulators, one pair per parameter tensor, plus the
/// step counter for bias correction.
#[derive(Debug, Clone)]
pub struct MomentState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

impl MomentState {
    pub fn new(params: &Params) -> Self {
        let m: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        let v = m.clone();
        MomentState { m, v, step: 0 }
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// One optimizer step. Gradients are clipped to a global L2 norm of
/// `config.clip` before the moment update; moments use the standard
/// exponential decay with bias correction.
pub fn adaptive_update(
    params: &mut Params,
    grads: &[Vec<f64>],
    state: &mut MomentState,
    config: &TrainConfig,
) {
    debug_assert_eq!(grads.len(), state.m.len());

    let norm_sq: f64 = grads.iter().flat_map(|g| g.iter().map(|v| v * v)).sum();
    let norm = norm_sq.sqrt();
    let scale = if norm > config.clip {
        config.clip / norm
    } else {
        1.0
    };

    state.step += 1;
    let t = state.step as f64;
    let bias1 = 1.0 - config.beta1.powf(t);
    let bias2 = 1.0 - config.beta2.powf(t);

    for ((tensor, grad), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i] * scale;
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            data[i] -= config.lr * m_hat / (v_hat.sqrt() + config.eps_opt);
        }
    }
}
