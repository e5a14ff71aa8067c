use serde::{Deserialize, Serialize};

use super::{NetError, ParamSet};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Bias-corrected adaptive moment estimation over one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    m: ParamSet<F>,
    v: ParamSet<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParamSet<F>, config: AdamConfig) -> Self {
        Self { config, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn first_moment(&self) -> &ParamSet<F> {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamSet<F> {
        &self.v
    }

    /// Applies one descent step along `grads`.
    ///
    /// Non-finite gradients leave parameters and moments untouched and are reported
    /// as [`NetError::NonFiniteGradient`].
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &ParamSet<F>) -> Result<(), NetError> {
        if !params.same_shape(grads) || !params.same_shape(&self.m) {
            return Err(NetError::ShapeMismatch);
        }
        if !grads.is_finite() {
            return Err(NetError::NonFiniteGradient);
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let t = self.step as i32;
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);
        let lr = F::lit(c.lr);
        let eps = F::lit(c.epsilon);
        let one = F::one();
        for (((p, g), m), v) in params
            .slices_mut()
            .into_iter()
            .zip(grads.slices())
            .zip(self.m.slices_mut())
            .zip(self.v.slices_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam on a single scalar, used for the entropy temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    pub config: AdamConfig,
    pub step: u64,
    m: f64,
    v: f64,
}

impl ScalarAdam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: 0.0, v: 0.0 }
    }

    pub fn step(&mut self, value: &mut f64, grad: f64) -> Result<(), NetError> {
        if !grad.is_finite() {
            return Err(NetError::NonFiniteGradient);
        }
        self.step += 1;
        let c = &self.config;
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * grad;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * grad * grad;
        let m_hat = self.m / (1.0 - c.beta1.powi(self.step as i32));
        let v_hat = self.v / (1.0 - c.beta2.powi(self.step as i32));
        *value -= c.lr * m_hat / (v_hat.sqrt() + c.epsilon);
        Ok(())
    }
}
