//! Adam with bias correction, operating on the grad slots of [`NetworkParams`].

use thiserror::Error;

use crate::networks::NetworkParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("parameter {0} has no gradient; run backward and pull grads before stepping")]
    MissingGradient(String),
    #[error("optimizer state has {state} slots but the network has {params} parameters")]
    Mismatch { state: usize, params: usize },
    #[error("invalid Adam hyperparameter: {0}")]
    Hyper(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::Hyper(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(OptimError::Hyper(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moments for every parameter tensor, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams) -> Self {
        let zeros = || params.params().iter().map(|(_, t)| vec![0.0f32; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// True if every moment array matches its parameter's length.
    pub fn matches(&self, params: &NetworkParams) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .params()
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|((_, t), (m, v))| m.len() == t.numel() && v.len() == t.numel())
    }
}

/// One Adam update from the accumulated grads, which are then zeroed.
pub fn adam_step(
    params: &mut NetworkParams,
    state: &mut OptimizerState,
    lr: f32,
    cfg: &AdamConfig,
) -> Result<(), OptimError> {
    if !state.matches(params) {
        return Err(OptimError::Mismatch {
            state: state.m.len(),
            params: params.len(),
        });
    }
    if let Some((name, _)) = params.params().iter().find(|(_, t)| t.grad().is_none()) {
        return Err(OptimError::MissingGradient(name.clone()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - (cfg.beta1 as f64).powi(t);
    let c2 = 1.0 - (cfg.beta2 as f64).powi(t);
    let step_size = (lr as f64 / c1) as f32;
    let c2_sqrt = c2.sqrt() as f32;
    for ((_, p), (m, v)) in params
        .params_mut()
        .iter_mut()
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = p.grad().expect("checked above").to_vec();
        for (i, theta) in p.data_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            *theta -= step_size * m[i] / (v[i].sqrt() / c2_sqrt + cfg.eps);
        }
        p.zero_grad();
    }
    Ok(())
}
