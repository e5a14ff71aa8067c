use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Agent, Batch};
use crate::heads::{FractionSet, PolicySample, QuantileTape};
use crate::nets::hcat;
use crate::risk::{quantile_huber_with_grad, tail_weights, CriticMode};
use crate::Scalar;

/// Losses and dual variables after one gradient step. `None` marks a skipped update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub cost_losses: Vec<Option<f64>>,
    pub reward_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub lambda: f64,
    pub temperature: f64,
    pub mean_cost_estimate: f64,
    pub targets_updated: bool,
}

/// Ensemble-mean risk estimate per row, with what is needed to differentiate it.
struct RiskEstimate<F> {
    values: Array1<F>,
    /// `weights[[b, k]]`: d estimate_b / d (ensemble mean of quantile k).
    weights: Array2<F>,
    tapes: Vec<QuantileTape<F>>,
}

/// `sum_i w_i rho_tau(t_i - z)` and its derivative with respect to `-z`.
///
/// Four independent accumulators let the compiler vectorise the loop.
#[inline]
fn pairwise_quantile_loss<F: Scalar>(targets: &[F], weights: &[F], z: F, tau: F, kappa: F) -> (F, F) {
    let mut loss = [F::zero(); 4];
    let mut grad = [F::zero(); 4];
    let mut t4 = targets.chunks_exact(4);
    let mut w4 = weights.chunks_exact(4);
    for (t, w) in (&mut t4).zip(&mut w4) {
        for lane in 0..4 {
            let (l, dl) = quantile_huber_with_grad(t[lane] - z, tau, kappa);
            loss[lane] += w[lane] * l;
            grad[lane] += w[lane] * dl;
        }
    }
    for (&t, &w) in t4.remainder().iter().zip(w4.remainder()) {
        let (l, dl) = quantile_huber_with_grad(t - z, tau, kappa);
        loss[0] += w * l;
        grad[0] += w * dl;
    }
    (loss.iter().copied().sum(), grad.iter().copied().sum())
}

impl<F: Scalar> Agent<F> {
    /// Risk-adjusted cost estimate of the ensemble at `(states, actions)`: per quantile
    /// the mean over members, then the worst-`rho` tail mean of those means.
    fn risk_estimate<R: Rng + ?Sized>(&self, states: ArrayView2<F>, actions: ArrayView2<F>, rng: &mut R) -> RiskEstimate<F> {
        let rho = self.config.effective_rho();
        let fractions = self.cost.query_fractions(rho, rng);
        let e = self.cost.len();
        let rows = states.nrows();
        let mut mean = Array2::<F>::zeros((rows, fractions.len()));
        let mut tapes = Vec::with_capacity(e);
        for m in 0..e {
            let (z, qt) = self.cost.evaluate(m, false, states, actions, &fractions);
            mean += &z;
            tapes.push(qt);
        }
        mean.mapv_inplace(|v| v / F::from_usize_lossy(e));
        let mut weights = Array2::zeros(mean.raw_dim());
        let mut values = Array1::zeros(rows);
        for b in 0..rows {
            let row = mean.row(b);
            let w = match self.cost.mode {
                CriticMode::FixedFraction => {
                    tail_weights(row.as_slice().expect("contiguous"), &fractions.mids, F::lit(rho))
                }
                CriticMode::Iqn => fractions.weights.clone(),
            };
            values[b] = w.iter().zip(row.iter()).map(|(&w, &v)| w * v).sum();
            weights.row_mut(b).assign(&Array1::from(w));
        }
        RiskEstimate { values, weights, tapes }
    }

    /// One quantile-regression step per ensemble member toward
    /// `c + gamma_c * Z_target(s', a')`, with `a'` drawn from the current policy.
    pub fn cost_critic_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch<F>,
        next: &PolicySample<F>,
        rng: &mut R,
    ) -> Vec<Option<f64>> {
        let gamma = F::lit(self.config.cost_gamma);
        let kappa = F::lit(self.config.risk.kappa);
        let rows = batch.len();
        let inv_b = F::one() / F::from_usize_lossy(rows);
        let mut losses = Vec::with_capacity(self.cost.len());
        for e in 0..self.cost.len() {
            let cur: FractionSet<F> = self.cost.training_fractions(rng);
            let tgt: FractionSet<F> = self.cost.training_fractions(rng);
            let (z_next, _) = self.cost.evaluate(e, true, batch.next_states.view(), next.actions.view(), &tgt);
            let (z, qt) = self.cost.evaluate(e, false, batch.states.view(), batch.actions.view(), &cur);
            let mut dz = Array2::zeros(z.raw_dim());
            let mut loss = F::zero();
            let mut targets = vec![F::zero(); tgt.len()];
            for b in 0..rows {
                let boot = gamma * (F::one() - batch.terminals[b]);
                for (t, &zn) in targets.iter_mut().zip(z_next.row(b)) {
                    *t = batch.costs[b] + boot * zn;
                }
                for (j, &tau) in cur.mids.iter().enumerate() {
                    let (l, g) = pairwise_quantile_loss(&targets, &tgt.weights, z[[b, j]], tau, kappa);
                    loss += l;
                    dz[[b, j]] = -g * inv_b;
                }
            }
            let loss = loss * inv_b;
            if !loss.is_finite() {
                log::warn!("non-finite cost critic loss (member {e}); update skipped");
                self.faults += 1;
                losses.push(None);
                continue;
            }
            let mut grads = self.cost.members[e].online.zeros_like();
            self.cost.backward(e, &qt, &dz, Some(&mut grads));
            match self.cost_opts[e].step(&mut self.cost.members[e].online, &grads) {
                Ok(()) => losses.push(Some(loss.as_f64())),
                Err(err) => {
                    log::warn!("cost critic {e}: {err}");
                    self.faults += 1;
                    losses.push(None);
                }
            }
        }
        losses
    }

    /// Soft TD regression of both reward critics toward
    /// `r + gamma * (min target Q(s', a') - temperature * log pi(a'|s'))`.
    pub fn reward_critic_update(&mut self, batch: &Batch<F>, next: &PolicySample<F>) -> Option<f64> {
        let gamma = F::lit(self.config.gamma);
        let temp = F::lit(self.entropy.temperature());
        let rows = batch.len();
        let sa_next = hcat(batch.next_states.view(), next.actions.view());
        let (q_next, _) = self.reward.evaluate(sa_next.view(), true);
        let y = Array1::from_shape_fn(rows, |b| {
            let soft = q_next[[b, 0]].min(q_next[[b, 1]]) - temp * next.log_prob[b];
            batch.rewards[b] + gamma * (F::one() - batch.terminals[b]) * soft
        });
        let sa = hcat(batch.states.view(), batch.actions.view());
        let inv_b = F::one() / F::from_usize_lossy(rows);
        let mut total = F::zero();
        let mut ok = true;
        for c in 0..2 {
            let critic = &self.reward.critics[c];
            let (q, tape) = critic.spec.forward_batch(&critic.online, sa.view());
            let resid = &q.column(0) - &y;
            let loss = resid.iter().map(|&r| r * r).sum::<F>() * inv_b;
            if !loss.is_finite() {
                log::warn!("non-finite reward critic loss (critic {c}); update skipped");
                self.faults += 1;
                ok = false;
                continue;
            }
            total = total + loss;
            let up = resid.mapv(|r| F::lit(2.0) * r * inv_b).insert_axis(Axis(1));
            let mut grads = critic.online.zeros_like();
            critic.spec.backward(&critic.online, &tape, up.view(), Some(&mut grads));
            if let Err(err) = self.reward_opts[c].step(&mut self.reward.critics[c].online, &grads) {
                log::warn!("reward critic {c}: {err}");
                self.faults += 1;
                ok = false;
            }
        }
        ok.then(|| (total * F::lit(0.5)).as_f64())
    }

    /// One descent step on `mean(-min Q_R + lambda * Q_C,rho + temperature * log pi)`.
    pub fn actor_update<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> Option<f64> {
        let rows = batch.len();
        let inv_b = F::one() / F::from_usize_lossy(rows);
        let lambda = F::lit(self.lagrangian.lambda);
        let temp = F::lit(self.entropy.temperature());
        let sample = self.policy.rsample(batch.states.view(), rng);
        let sa = hcat(batch.states.view(), sample.actions.view());
        let sd = self.config.state_dim;

        let (q, tapes) = self.reward.evaluate(sa.view(), false);
        let risk = self.risk_estimate(batch.states.view(), sample.actions.view(), rng);

        let mut loss = F::zero();
        for b in 0..rows {
            let qmin = q[[b, 0]].min(q[[b, 1]]);
            loss = loss - qmin + lambda * risk.values[b] + temp * sample.log_prob[b];
        }
        let loss = loss * inv_b;
        if !loss.is_finite() {
            log::warn!("non-finite actor loss; update skipped");
            self.faults += 1;
            return None;
        }

        let mut d_actions = Array2::<F>::zeros(sample.actions.raw_dim());
        for c in 0..2 {
            let up = Array2::from_shape_fn((rows, 1), |(b, _)| {
                let mine = q[[b, c]];
                let other = q[[b, 1 - c]];
                // Ties route the gradient to the first critic.
                let selected = if c == 0 { mine <= other } else { mine < other };
                if selected {
                    -inv_b
                } else {
                    F::zero()
                }
            });
            let critic = &self.reward.critics[c];
            let dx = critic.spec.backward(&critic.online, &tapes[c], up.view(), None);
            d_actions += &dx.slice(s![.., sd..]);
        }
        if lambda > F::zero() {
            let scale = lambda * inv_b / F::from_usize_lossy(self.cost.len());
            let up = risk.weights.mapv(|w| w * scale);
            for (e, qt) in risk.tapes.iter().enumerate() {
                d_actions += &self.cost.backward(e, qt, &up, None);
            }
        }
        let d_log_prob = Array1::from_elem(rows, temp * inv_b);
        let (d_mu, d_ls) = self.policy.sample_head_grads(&sample, &d_actions, &d_log_prob);
        let mut grads = self.policy.params.zeros_like();
        self.policy.backward(&sample.forward, &d_mu, &d_ls, &mut grads);
        if let Err(err) = self.policy_opt.step(&mut self.policy.params, &grads) {
            log::warn!("actor: {err}");
            self.faults += 1;
            return None;
        }
        Some(loss.as_f64())
    }

    /// Projected ascent on the multiplier using the critics' risk-adjusted estimate at
    /// fresh policy actions. Returns the batch-mean estimate and the sample used.
    pub fn lagrangian_update<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> (f64, PolicySample<F>) {
        let sample = self.policy.rsample(batch.states.view(), rng);
        let risk = self.risk_estimate(batch.states.view(), sample.actions.view(), rng);
        let mean = risk.values.iter().map(|v| v.as_f64()).sum::<f64>() / batch.len() as f64;
        if mean.is_finite() {
            self.lagrangian.ascend(mean);
        } else {
            log::warn!("non-finite cost estimate; multiplier update skipped");
            self.faults += 1;
        }
        (mean, sample)
    }

    /// Temperature step on `mean(-temperature * (log pi + target_entropy))`.
    pub fn entropy_update(&mut self, log_probs: &Array1<F>) {
        let n = log_probs.len() as f64;
        let mean_gap = log_probs.iter().map(|lp| lp.as_f64() + self.entropy.target_entropy).sum::<f64>() / n;
        let grad = -self.entropy.temperature() * mean_gap;
        let mut log_t = self.entropy.log_temperature;
        match self.entropy.opt.step(&mut log_t, grad) {
            Ok(()) => self.entropy.log_temperature = log_t,
            Err(err) => {
                log::warn!("entropy: {err}");
                self.faults += 1;
            }
        }
    }

    /// Polyak-averages every critic target toward its online parameters.
    pub fn update_targets(&mut self) {
        let tau = F::lit(self.config.tau);
        for c in self.reward.critics.iter_mut() {
            c.update_target(tau).expect("target and online share a layout");
        }
        for m in self.cost.members.iter_mut() {
            m.update_target(tau).expect("target and online share a layout");
        }
    }

    /// Full gradient pass: cost critics, reward critics, actor, multiplier, temperature,
    /// and (every `target_every` steps) target tracking.
    pub fn gradient_step<R: Rng + ?Sized>(&mut self, batch: &Batch<F>, rng: &mut R) -> StepReport {
        let next = self.policy.rsample(batch.next_states.view(), rng);
        let cost_losses = self.cost_critic_update(batch, &next, rng);
        let reward_loss = self.reward_critic_update(batch, &next);
        let actor_loss = self.actor_update(batch, rng);
        let (mean_cost_estimate, sample) = self.lagrangian_update(batch, rng);
        self.entropy_update(&sample.log_prob);
        self.grad_steps += 1;
        let targets_updated = self.grad_steps % self.config.target_every == 0;
        if targets_updated {
            self.update_targets();
        }
        StepReport {
            cost_losses,
            reward_loss,
            actor_loss,
            lambda: self.lagrangian.lambda,
            temperature: self.entropy.temperature(),
            mean_cost_estimate,
            targets_updated,
        }
    }

    /// Risk-adjusted cost estimate for a single `(state, action)`, as used by the actor.
    pub fn cost_estimate<R: Rng + ?Sized>(&self, state: &[F], action: &[F], rng: &mut R) -> F {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row view");
        self.risk_estimate(s, a, rng).values[0]
    }
}
