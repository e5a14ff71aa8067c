//! Optimistic exploration policy.
//!
//! At every environment step the target policy `N(mu_T, sigma_T)` is replaced by
//! `N(mu_E, sigma_T)` where `mu_E` is `mu_T` moved a fixed KL distance along the
//! natural gradient of
//!
//! ```text
//! Q_R^+(s, a) - lambda_bar * Q_C^-(s, a)
//! ```
//!
//! `Q_R^+` is an upper confidence bound from the twin reward critics, `Q_C^-` is the
//! tail mean of per-quantile lower confidence bounds across the cost ensemble, and
//! `lambda_bar` shifts the learned multiplier by how far `Q_C^-` sits from the budget.
//!
//! All action-space quantities here live in pre-squash space; the critics are queried
//! at `tanh(mu_T)` and their gradients pulled back through the squash.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heads::{sample_from, CostCriticEnsemble, GaussianPolicy, RewardCriticPair};
use crate::risk::{cvar_tail_mean, tail_weights, CriticMode, QuantileVector, RiskError};
use crate::Scalar;

const MIN_GRAD_NORM: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExploreError {
    #[error("ensemble quantile matrix is ragged")]
    Ragged,
    #[error("ensemble quantile matrix is empty")]
    Empty,
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    /// Reward upper-bound multiplier.
    pub beta_r: f64,
    /// Cost lower-bound multiplier.
    pub beta_c: f64,
    /// Initial KL radius.
    pub delta0: f64,
    /// Environment steps over which the radius decays linearly to zero.
    pub horizon: u64,
}

impl ExploreConfig {
    pub fn delta(&self, step: u64) -> f64 {
        if self.horizon == 0 {
            return 0.0;
        }
        self.delta0 * (1.0 - step as f64 / self.horizon as f64).max(0.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta_r >= 0.0 && self.beta_c >= 0.0) {
            return Err("exploration betas must be non-negative".into());
        }
        if !(self.delta0.is_finite() && self.delta0 >= 0.0) {
            return Err("exploration delta must be non-negative".into());
        }
        Ok(())
    }
}

/// `mean + beta_r * std` of the two reward critics (population std, `|q1 - q2| / 2`).
pub fn reward_upper_bound<F: Scalar>(q1: F, q2: F, beta_r: F) -> F {
    let half = F::lit(0.5);
    half * (q1 + q2) + beta_r * half * (q1 - q2).abs()
}

/// `d bound / d q1` and `d bound / d q2`.
fn reward_bound_grad<F: Scalar>(q1: F, q2: F, beta_r: F) -> (F, F) {
    let half = F::lit(0.5);
    let sign = if q1 > q2 {
        F::one()
    } else if q1 < q2 {
        -F::one()
    } else {
        F::zero()
    };
    (half + beta_r * half * sign, half - beta_r * half * sign)
}

/// Per quantile index: ensemble mean minus `beta_c` population standard deviations.
/// Values are in the input column order (not sorted).
pub fn lower_bound_columns<F: Scalar>(rows: &[Vec<F>], beta_c: F) -> Result<Vec<F>, ExploreError> {
    let e = rows.len();
    if e == 0 || rows[0].is_empty() {
        return Err(ExploreError::Empty);
    }
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(ExploreError::Ragged);
    }
    let ef = F::from_usize_lossy(e);
    Ok((0..k)
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<F>() / ef;
            let var = rows.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<F>() / ef;
            mean - beta_c * var.sqrt()
        })
        .collect())
}

/// Lower confidence bound of each quantile across the ensemble, sorted ascending and
/// paired with `fractions`.
pub fn cost_quantile_lower_bound<F: Scalar>(
    ensemble_q: &[Vec<F>],
    fractions: &[F],
    beta_c: F,
) -> Result<QuantileVector<F>, ExploreError> {
    let lb = lower_bound_columns(ensemble_q, beta_c)?;
    Ok(QuantileVector::new(lb, fractions.to_vec())?.sorted())
}

/// Tail mean of the lower-bound quantiles.
pub fn optimistic_cvar<F: Scalar>(lb: &QuantileVector<F>, rho: F) -> Result<F, ExploreError> {
    Ok(cvar_tail_mean(lb, rho)?)
}

/// `max(0, lambda - (c_bar - q_hat_c))`.
pub fn adjusted_lambda<F: Scalar>(lambda: F, c_bar: F, q_hat_c: F) -> F {
    (lambda - (c_bar - q_hat_c)).max(F::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftStatus {
    Applied,
    /// Radius is zero; the target mean is used.
    ZeroRadius,
    /// Gradient norm below threshold; the target mean is used.
    DegenerateGradient,
    /// Gradient had NaN/inf entries; the target mean is used.
    NonFiniteGradient,
}

impl ShiftStatus {
    pub fn is_fault(self) -> bool {
        self == ShiftStatus::NonFiniteGradient
    }
}

/// `mu_T + delta * Sigma g / ||g||_Sigma` with `Sigma = diag(sigma^2)`.
pub fn shifted_mean<F: Scalar>(mu_t: &[F], sigma_t: &[F], grad: &[F], delta: F) -> (Vec<F>, ShiftStatus) {
    if grad.iter().any(|g| !g.is_finite()) {
        return (mu_t.to_vec(), ShiftStatus::NonFiniteGradient);
    }
    if delta == F::zero() {
        return (mu_t.to_vec(), ShiftStatus::ZeroRadius);
    }
    let norm = grad.iter().zip(sigma_t).map(|(&g, &s)| g * g * s * s).sum::<F>().sqrt();
    if !(norm >= F::lit(MIN_GRAD_NORM)) {
        return (mu_t.to_vec(), ShiftStatus::DegenerateGradient);
    }
    let mean = mu_t
        .iter()
        .zip(sigma_t)
        .zip(grad)
        .map(|((&m, &s), &g)| m + delta * s * s * g / norm)
        .collect();
    (mean, ShiftStatus::Applied)
}

/// `sqrt(d^T Sigma^{-1} d)` for `d = shifted - mu`.
pub fn mahalanobis_shift<F: Scalar>(mu: &[F], shifted: &[F], sigma: &[F]) -> F {
    mu.iter()
        .zip(shifted)
        .zip(sigma)
        .map(|((&m, &x), &s)| {
            let z = (x - m) / s;
            z * z
        })
        .sum::<F>()
        .sqrt()
}

/// Read-only view of everything the explorer needs.
pub struct ExploreContext<'a, F> {
    pub policy: &'a GaussianPolicy<F>,
    pub reward: &'a RewardCriticPair<F>,
    pub cost: &'a CostCriticEnsemble<F>,
    pub lambda: F,
    pub c_bar: F,
    pub rho: f64,
}

/// Everything computed for one exploratory action.
#[derive(Debug, Clone)]
pub struct ExploreStep<F> {
    pub action: Vec<F>,
    pub mu_t: Vec<F>,
    pub sigma_t: Vec<F>,
    pub mu_e: Vec<F>,
    pub delta: F,
    pub status: ShiftStatus,
    /// Pre-squash gradient of the optimistic objective at `mu_T`.
    pub grad: Vec<F>,
    pub q_hat_r: F,
    pub q_hat_c: F,
    pub lambda_bar: F,
}

/// Optimistic objective and its gradient with respect to the (squashed) action.
pub struct OptimisticObjective<F> {
    pub q_hat_r: F,
    pub q_hat_c: F,
    pub lambda_bar: F,
    pub grad_action: Vec<F>,
}

/// Evaluates `Q_R^+ - lambda_bar * Q_C^-` at `(state, action)` and its action gradient.
/// `lambda_bar` is treated as a constant in the gradient.
pub fn optimistic_objective<F: Scalar, R: Rng + ?Sized>(
    ctx: &ExploreContext<'_, F>,
    config: &ExploreConfig,
    state: &[F],
    action: &[F],
    rng: &mut R,
) -> OptimisticObjective<F> {
    let sd = state.len();
    let ad = action.len();
    let s = ArrayView2::from_shape((1, sd), state).expect("row view");
    let a = ArrayView2::from_shape((1, ad), action).expect("row view");
    let sa = crate::nets::hcat(s, a);

    let beta_r = F::lit(config.beta_r);
    let (q, tapes) = ctx.reward.evaluate(sa.view(), false);
    let (q1, q2) = (q[[0, 0]], q[[0, 1]]);
    let q_hat_r = reward_upper_bound(q1, q2, beta_r);
    let (w1, w2) = reward_bound_grad(q1, q2, beta_r);
    let mut grad_action = vec![F::zero(); ad];
    for (c, (w, tape)) in [w1, w2].into_iter().zip(&tapes).enumerate() {
        let critic = &ctx.reward.critics[c];
        let up = Array2::from_elem((1, 1), w);
        let dx = critic.spec.backward(&critic.online, tape, up.view(), None);
        for (g, &d) in grad_action.iter_mut().zip(dx.row(0).iter().skip(sd)) {
            *g = *g + d;
        }
    }

    let fractions = ctx.cost.query_fractions(ctx.rho, rng);
    let n_members = ctx.cost.len();
    let mut rows = Vec::with_capacity(n_members);
    let mut qtapes = Vec::with_capacity(n_members);
    for e in 0..n_members {
        let (z, qt) = ctx.cost.evaluate(e, false, s, a, &fractions);
        rows.push(z.row(0).to_vec());
        qtapes.push(qt);
    }
    let beta_c = F::lit(config.beta_c);
    let lb = lower_bound_columns(&rows, beta_c).expect("ensemble output is rectangular");
    let weights = match ctx.cost.mode {
        CriticMode::FixedFraction => tail_weights(&lb, &fractions.mids, F::lit(ctx.rho)),
        CriticMode::Iqn => fractions.weights.clone(),
    };
    let q_hat_c: F = weights.iter().zip(&lb).map(|(&w, &v)| w * v).sum();
    let lambda_bar = adjusted_lambda(ctx.lambda, ctx.c_bar, q_hat_c);

    if lambda_bar > F::zero() {
        let ef = F::from_usize_lossy(n_members);
        let k = lb.len();
        let mut mean = vec![F::zero(); k];
        let mut std = vec![F::zero(); k];
        for j in 0..k {
            mean[j] = rows.iter().map(|r| r[j]).sum::<F>() / ef;
            std[j] = (rows.iter().map(|r| (r[j] - mean[j]) * (r[j] - mean[j])).sum::<F>() / ef).sqrt();
        }
        for (e, qt) in qtapes.iter().enumerate() {
            let up = Array2::from_shape_fn((1, k), |(_, j)| {
                let mut dlb = F::one() / ef;
                if std[j] > F::zero() {
                    dlb = dlb - beta_c * (rows[e][j] - mean[j]) / (ef * std[j]);
                }
                -lambda_bar * weights[j] * dlb
            });
            let da = ctx.cost.backward(e, qt, &up, None);
            for (g, &d) in grad_action.iter_mut().zip(da.row(0).iter()) {
                *g = *g + d;
            }
        }
    }
    OptimisticObjective { q_hat_r, q_hat_c, lambda_bar, grad_action }
}

/// Samples one action from the optimistic exploration policy.
///
/// With a zero radius this consumes the rng exactly like [`GaussianPolicy::sample`], so
/// the draw is identical to the target policy's. Faults (non-finite gradients) fall back
/// to the unshifted target policy and are logged.
pub fn explore_action<F: Scalar, R: Rng + ?Sized>(
    ctx: &ExploreContext<'_, F>,
    config: &ExploreConfig,
    state: &[F],
    step: u64,
    rng: &mut R,
) -> ExploreStep<F> {
    let head = ctx.policy.head(state);
    let sigma_t = head.sigma();
    let delta = F::lit(config.delta(step));
    let mu_t = head.mu_pre.clone();
    if delta == F::zero() {
        let (action, _) = sample_from(&mu_t, &head.log_sigma, rng);
        return ExploreStep {
            action,
            mu_e: mu_t.clone(),
            mu_t,
            sigma_t,
            delta,
            status: ShiftStatus::ZeroRadius,
            grad: vec![F::zero(); head.log_sigma.len()],
            q_hat_r: F::nan(),
            q_hat_c: F::nan(),
            lambda_bar: F::nan(),
        };
    }
    let a0 = head.mean_action();
    let obj = optimistic_objective(ctx, config, state, &a0, rng);
    let grad: Vec<F> = obj.grad_action.iter().zip(&a0).map(|(&g, &a)| g * (F::one() - a * a)).collect();
    let (mu_e, status) = shifted_mean(&mu_t, &sigma_t, &grad, delta);
    if status.is_fault() {
        log::warn!("non-finite exploration gradient; sampling from the target policy");
    }
    let (action, _) = sample_from(&mu_e, &head.log_sigma, rng);
    ExploreStep {
        action,
        mu_t,
        sigma_t,
        mu_e,
        delta,
        status,
        grad,
        q_hat_r: obj.q_hat_r,
        q_hat_c: obj.q_hat_c,
        lambda_bar: obj.lambda_bar,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_bound_examples() {
        assert_eq!(reward_upper_bound(1.0, 3.0, 3.0), 5.0);
        assert_eq!(reward_upper_bound(2.0, 2.0, 7.0), 2.0);
        assert_eq!(reward_upper_bound(1.0, 3.0, 0.0), 2.0);
    }

    #[test]
    fn reward_bound_gradient_matches_difference_quotient() {
        let h = 1e-6;
        for &(q1, q2, b) in &[(1.0f64, 3.0, 3.0), (4.0, -1.0, 0.5), (0.2, 0.7, 0.0)] {
            let (g1, g2) = reward_bound_grad(q1, q2, b);
            let f1 = (reward_upper_bound(q1 + h, q2, b) - reward_upper_bound(q1 - h, q2, b)) / (2.0 * h);
            let f2 = (reward_upper_bound(q1, q2 + h, b) - reward_upper_bound(q1, q2 - h, b)) / (2.0 * h);
            assert!((g1 - f1).abs() < 1e-6 && (g2 - f2).abs() < 1e-6);
        }
    }

    #[test]
    fn lower_bound_examples() {
        let fr = [0.5];
        let lb = cost_quantile_lower_bound(&[vec![2.0], vec![4.0]], &fr, 2.0).unwrap();
        assert_eq!(lb.values(), &[1.0]);

        let rows = vec![vec![1.0, 5.0, 2.0], vec![3.0, 1.0, 2.0]];
        let fr3 = crate::risk::midpoints::<f64>(3);
        let lb = cost_quantile_lower_bound(&rows, &fr3, 0.0).unwrap();
        assert_eq!(lb.values(), &[2.0, 2.0, 3.0]);

        let single = vec![vec![4.0, 1.0, 3.0]];
        let lb = cost_quantile_lower_bound(&single, &fr3, 5.0).unwrap();
        assert_eq!(lb.values(), &[1.0, 3.0, 4.0]);

        assert_eq!(cost_quantile_lower_bound(&[vec![1.0, 2.0], vec![1.0]], &[0.25, 0.75], 1.0), Err(ExploreError::Ragged));
    }

    #[test]
    fn optimistic_cvar_examples() {
        let lb = QuantileVector::evenly_spaced(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(optimistic_cvar(&lb, 0.5).unwrap(), 3.5);
        let c = QuantileVector::evenly_spaced(vec![2.5f64; 6]).unwrap();
        for rho in [0.01, 0.3, 1.0] {
            assert!((optimistic_cvar(&c, rho).unwrap() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn adjusted_lambda_examples() {
        assert_eq!(adjusted_lambda(1.0, 5.0, 7.0), 3.0);
        assert_eq!(adjusted_lambda(1.0, 5.0, 3.0), 0.0);
        assert_eq!(adjusted_lambda(2.0, 5.0, 5.0), 2.0);
    }

    #[test]
    fn shifted_mean_examples() {
        let (m, st) = shifted_mean(&[0.0f64, 0.0], &[1.0, 1.0], &[3.0, 4.0], 4.0);
        assert_eq!(st, ShiftStatus::Applied);
        assert!((m[0] - 2.4).abs() < 1e-12 && (m[1] - 3.2).abs() < 1e-12);

        let (m, st) = shifted_mean(&[0.3, -0.1], &[1.0, 1.0], &[3.0, 4.0], 0.0);
        assert_eq!((m, st), (vec![0.3, -0.1], ShiftStatus::ZeroRadius));

        let (m, _) = shifted_mean(&[0.0, 0.0], &[2.0, 1.0], &[3.0, 4.0], 1.0);
        let root52 = 52.0f64.sqrt();
        assert!((m[0] - 12.0 / root52).abs() < 1e-12);
        assert!((m[1] - 4.0 / root52).abs() < 1e-12);
        assert!((m[0] - 1.6641).abs() < 1e-4 && (m[1] - 0.5547).abs() < 1e-4);

        let (m, st) = shifted_mean(&[0.5], &[1.0], &[0.0], 1.0);
        assert_eq!((m, st), (vec![0.5], ShiftStatus::DegenerateGradient));

        let (m, st) = shifted_mean(&[0.5], &[1.0], &[f64::NAN], 1.0);
        assert_eq!((m, st), (vec![0.5], ShiftStatus::NonFiniteGradient));
        assert!(st.is_fault());
    }

    #[test]
    fn delta_schedule_decays_linearly() {
        let c = ExploreConfig { beta_r: 3.0, beta_c: 2.0, delta0: 4.0, horizon: 100 };
        assert_eq!(c.delta(0), 4.0);
        assert_eq!(c.delta(50), 2.0);
        assert_eq!(c.delta(100), 0.0);
        assert_eq!(c.delta(1000), 0.0);
    }
}
