use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::nets::{MlpSpec, ParamSet, Tape};
use crate::Scalar;

pub const LOG_SIGMA_MIN: f64 = -20.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;
const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// Gaussian action distribution for one state, before squashing.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHead<F> {
    pub mu_pre: Vec<F>,
    /// Clamped to `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub log_sigma: Vec<F>,
}

impl<F: Scalar> PolicyHead<F> {
    pub fn sigma(&self) -> Vec<F> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    /// Deterministic action `tanh(mu_pre)`.
    pub fn mean_action(&self) -> Vec<F> {
        self.mu_pre.iter().map(|m| m.tanh()).collect()
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
#[inline]
pub fn log_squash_jacobian<F: Scalar>(u: F) -> F {
    let two = F::lit(2.0);
    let x = -two * u;
    // softplus(x) = max(x, 0) + ln(1 + e^{-|x|})
    let softplus = x.max(F::zero()) + (-x.abs()).exp().ln_1p();
    two * (F::lit(std::f64::consts::LN_2) - u - softplus)
}

/// Log density of `a = tanh(mu + sigma * eps)` with the change-of-variables correction.
pub fn squashed_log_prob<F: Scalar>(eps: &[F], log_sigma: &[F], u: &[F]) -> F {
    let half = F::lit(0.5);
    eps.iter()
        .zip(log_sigma)
        .zip(u)
        .map(|((&e, &ls), &u)| -half * e * e - ls - F::lit(HALF_LOG_TWO_PI) - log_squash_jacobian(u))
        .sum()
}

pub fn standard_normal<F: Scalar, R: Rng + ?Sized>(rng: &mut R) -> F {
    F::lit(rng.sample::<f64, _>(StandardNormal))
}

/// Batched policy forward pass.
pub struct PolicyForward<F> {
    pub mu: Array2<F>,
    pub log_sigma: Array2<F>,
    /// Whether the clamp was inactive (gradient passes through).
    log_sigma_free: Array2<bool>,
    tape: Tape<F>,
}

/// Reparameterised batch sample `a = tanh(mu + sigma * eps)`.
pub struct PolicySample<F> {
    pub forward: PolicyForward<F>,
    pub eps: Array2<F>,
    pub pre_squash: Array2<F>,
    pub actions: Array2<F>,
    pub log_prob: Array1<F>,
}

/// State-conditioned squashed Gaussian policy.
#[derive(Debug, Clone)]
pub struct GaussianPolicy<F> {
    pub spec: MlpSpec,
    pub params: ParamSet<F>,
    pub action_dim: usize,
}

impl<F: Scalar> GaussianPolicy<F> {
    /// The output layer starts at 1e-2 scale so initial means sit near zero.
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], layer_norm: bool, seed: u64) -> Self {
        let spec = MlpSpec::new(state_dim, 2 * action_dim, hidden)
            .with_layer_norm(layer_norm)
            .with_seed(seed)
            .with_output_scale(1e-2);
        let params = spec.init();
        Self { spec, params, action_dim }
    }

    pub fn from_params(spec: MlpSpec, params: ParamSet<F>) -> Self {
        let action_dim = spec.output_dim / 2;
        Self { spec, params, action_dim }
    }

    pub fn state_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn forward(&self, states: ArrayView2<F>) -> PolicyForward<F> {
        let (out, tape) = self.spec.forward_batch(&self.params, states);
        let d = self.action_dim;
        let mu = out.slice(ndarray::s![.., ..d]).to_owned();
        let raw = out.slice(ndarray::s![.., d..]).to_owned();
        let (lo, hi) = (F::lit(LOG_SIGMA_MIN), F::lit(LOG_SIGMA_MAX));
        let log_sigma_free = raw.mapv(|v| v >= lo && v <= hi);
        let log_sigma = raw.mapv(|v| v.max(lo).min(hi));
        PolicyForward { mu, log_sigma, log_sigma_free, tape }
    }

    pub fn head(&self, state: &[F]) -> PolicyHead<F> {
        let x = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let fwd = self.forward(x);
        PolicyHead { mu_pre: fwd.mu.row(0).to_vec(), log_sigma: fwd.log_sigma.row(0).to_vec() }
    }

    /// Samples `tanh(mu + sigma * eps)` for one state and returns it with its log density.
    pub fn sample<R: Rng + ?Sized>(&self, state: &[F], rng: &mut R) -> (Vec<F>, F) {
        let head = self.head(state);
        sample_from(&head.mu_pre, &head.log_sigma, rng)
    }

    pub fn rsample<R: Rng + ?Sized>(&self, states: ArrayView2<F>, rng: &mut R) -> PolicySample<F> {
        let forward = self.forward(states);
        let (b, d) = forward.mu.dim();
        let eps = Array2::from_shape_fn((b, d), |_| standard_normal::<F, R>(rng));
        let pre_squash = &forward.mu + &(&forward.log_sigma.mapv(|l| l.exp()) * &eps);
        let actions = pre_squash.mapv(|u| u.tanh());
        let log_prob = Array1::from_shape_fn(b, |i| {
            squashed_log_prob(
                eps.row(i).as_slice().expect("contiguous"),
                forward.log_sigma.row(i).as_slice().expect("contiguous"),
                pre_squash.row(i).as_slice().expect("contiguous"),
            )
        });
        PolicySample { forward, eps, pre_squash, actions, log_prob }
    }

    /// Backpropagates `d_mu`, `d_log_sigma` (gradients of a scalar loss with respect to
    /// the clamped heads) into accumulated parameter gradients.
    pub fn backward(&self, fwd: &PolicyForward<F>, d_mu: &Array2<F>, d_log_sigma: &Array2<F>, grads: &mut ParamSet<F>) {
        let mut d_ls = d_log_sigma.clone();
        ndarray::Zip::from(&mut d_ls).and(&fwd.log_sigma_free).for_each(|g, &free| {
            if !free {
                *g = F::zero();
            }
        });
        let upstream = ndarray::concatenate(Axis(1), &[d_mu.view(), d_ls.view()]).expect("row counts match");
        self.spec.backward(&self.params, &fwd.tape, upstream.view(), Some(grads));
    }

    /// Gradients of a loss `L(a, log_prob)` through the reparameterised sample.
    ///
    /// `d_actions` is `dL/da`, `d_log_prob` is `dL/dlog_prob` per row; returns
    /// `(dL/dmu, dL/dlog_sigma)`.
    pub fn sample_head_grads(
        &self,
        s: &PolicySample<F>,
        d_actions: &Array2<F>,
        d_log_prob: &Array1<F>,
    ) -> (Array2<F>, Array2<F>) {
        let two = F::lit(2.0);
        let (b, d) = s.actions.dim();
        let mut d_mu = Array2::zeros((b, d));
        let mut d_ls = Array2::zeros((b, d));
        for i in 0..b {
            let dlp = d_log_prob[i];
            for j in 0..d {
                let a = s.actions[[i, j]];
                let jac = F::one() - a * a;
                // d log_prob / d u = 2 tanh(u) from the squash correction
                let du = d_actions[[i, j]] * jac + dlp * two * a;
                let sigma = s.forward.log_sigma[[i, j]].exp();
                d_mu[[i, j]] = du;
                d_ls[[i, j]] = du * sigma * s.eps[[i, j]] - dlp;
            }
        }
        (d_mu, d_ls)
    }
}

/// Draws `tanh(mu + sigma * eps)`; consumes exactly one normal per action dimension.
pub fn sample_from<F: Scalar, R: Rng + ?Sized>(mu: &[F], log_sigma: &[F], rng: &mut R) -> (Vec<F>, F) {
    let eps: Vec<F> = mu.iter().map(|_| standard_normal::<F, R>(rng)).collect();
    let u: Vec<F> = mu.iter().zip(log_sigma).zip(&eps).map(|((&m, &l), &e)| m + l.exp() * e).collect();
    let log_prob = squashed_log_prob(&eps, log_sigma, &u);
    (u.iter().map(|v| v.tanh()).collect(), log_prob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobian_term_is_stable() {
        for &u in &[0.0f64, 0.3, -1.7, 5.0, -30.0, 400.0] {
            let direct = (1.0f64 - u.tanh().powi(2)).ln();
            let stable = log_squash_jacobian(u);
            if direct.is_finite() && u.abs() < 15.0 {
                assert!((direct - stable).abs() < 1e-9, "u={u}");
            }
            assert!(stable.is_finite());
        }
    }

    #[test]
    fn tiny_sigma_gives_tanh_of_mean() {
        let mu = [0.4, -1.2];
        let ls = [LOG_SIGMA_MIN; 2];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, lp) = sample_from(&mu, &ls, &mut rng);
        for (x, m) in a.iter().zip(mu) {
            assert!((x - f64::tanh(m)).abs() < 1e-7);
        }
        assert!(lp.is_finite());
    }

    #[test]
    fn log_sigma_is_clamped() {
        let mut pol = GaussianPolicy::<f64>::new(2, 1, &[4], false, 1);
        // Push the log-sigma bias far outside the clamp range.
        let last = pol.params.layers.last_mut().unwrap();
        last.bias[1] = 50.0;
        let h = pol.head(&[0.1, 0.2]);
        assert_eq!(h.log_sigma[0], LOG_SIGMA_MAX);
        last_bias(&mut pol, -500.0);
        let h = pol.head(&[0.1, 0.2]);
        assert_eq!(h.log_sigma[0], LOG_SIGMA_MIN);
    }

    fn last_bias(p: &mut GaussianPolicy<f64>, v: f64) {
        p.params.layers.last_mut().unwrap().bias[1] = v;
    }

    #[test]
    fn log_prob_matches_density_of_transformed_gaussian() {
        // Compare with a direct evaluation: N(u; mu, sigma) / (1 - tanh(u)^2).
        let mu = [0.3];
        let ls = [-0.5f64];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (a, lp) = sample_from(&mu, &ls, &mut rng);
        let u = a[0].atanh();
        let sigma = ls[0].exp();
        let z = (u - mu[0]) / sigma;
        let dens = (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt()) / (1.0 - a[0] * a[0]);
        assert!((dens.ln() - lp).abs() < 1e-8);
    }
}
