use oraclab::agent::{Agent, AgentConfig, AgentKind};
use oraclab::explore::{
    adjusted_lambda, cost_quantile_lower_bound, explore_action, lower_bound_columns, mahalanobis_shift,
    optimistic_cvar, reward_upper_bound, shifted_mean, ExploreConfig, ShiftStatus,
};
use oraclab::heads::sample_from;
use oraclab::risk::{midpoints, QuantileVector};
use proptest::collection::vec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bound_examples() {
    assert_eq!(reward_upper_bound(1.0, 3.0, 3.0), 5.0);
    assert_eq!(reward_upper_bound(2.0, 2.0, 7.0), 2.0);
    assert_eq!(reward_upper_bound(1.0, 3.0, 0.0), 2.0);

    assert_eq!(lower_bound_columns(&[vec![2.0], vec![4.0]], 2.0).unwrap(), vec![1.0]);
    let rows = vec![vec![1.0, 5.0, 2.0], vec![3.0, 7.0, 2.0]];
    assert_eq!(lower_bound_columns(&rows, 0.0).unwrap(), vec![2.0, 6.0, 2.0]);
    assert_eq!(lower_bound_columns(&rows[..1], 3.0).unwrap(), rows[0]);
    assert!(lower_bound_columns(&[vec![1.0, 2.0], vec![1.0]], 1.0).is_err());

    let lb = QuantileVector::evenly_spaced(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(optimistic_cvar(&lb, 0.5).unwrap(), 3.5);
    let flat = QuantileVector::evenly_spaced(vec![2.5; 8]).unwrap();
    for rho in [0.05, 0.3, 1.0] {
        assert_eq!(optimistic_cvar(&flat, rho).unwrap(), 2.5);
    }

    assert_eq!(adjusted_lambda(1.0, 5.0, 7.0), 3.0);
    assert_eq!(adjusted_lambda(1.0, 5.0, 3.0), 0.0);
    assert_eq!(adjusted_lambda(2.0, 5.0, 5.0), 2.0);
}

#[test]
fn shift_examples() {
    let (m, s) = shifted_mean(&[0.0f64, 0.0], &[1.0, 1.0], &[3.0, 4.0], 4.0);
    assert_eq!(s, ShiftStatus::Applied);
    assert!((m[0] - 2.4).abs() < 1e-12 && (m[1] - 3.2).abs() < 1e-12);

    let (m, s) = shifted_mean(&[0.3, -0.1], &[1.0, 2.0], &[3.0, 4.0], 0.0);
    assert_eq!((m, s), (vec![0.3, -0.1], ShiftStatus::ZeroRadius));

    let (m, _) = shifted_mean(&[0.0, 0.0], &[2.0, 1.0], &[3.0, 4.0], 1.0);
    let r = 52f64.sqrt();
    assert!((m[0] - 12.0 / r).abs() < 1e-12 && (m[1] - 4.0 / r).abs() < 1e-12);
    assert!((m[0] - 1.6641).abs() < 1e-4 && (m[1] - 0.5547).abs() < 1e-4);

    let (m, s) = shifted_mean(&[0.5], &[1.0], &[f64::NAN], 1.0);
    assert_eq!((m, s), (vec![0.5], ShiftStatus::NonFiniteGradient));
    assert!(s.is_fault());
    let (m, s) = shifted_mean(&[0.5], &[1.0], &[1e-14], 1.0);
    assert_eq!((m, s), (vec![0.5], ShiftStatus::DegenerateGradient));
}

#[test]
fn decreasing_cost_beta_lowers_optimistic_cvar() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let e = rng.random_range(2..5);
        let k = rng.random_range(4..16);
        let rows: Vec<Vec<f64>> = (0..e).map(|_| (0..k).map(|_| rng.random_range(0.0..10.0)).collect()).collect();
        let rho = [0.05, 0.25, 0.5, 1.0][rng.random_range(0..4)];
        let at = |beta: f64| {
            let lb = cost_quantile_lower_bound(&rows, &midpoints(k), beta).unwrap();
            optimistic_cvar(&lb, rho).unwrap()
        };
        // Brute force: the tail-mean of the lower bound is monotone in beta.
        let (lo, hi) = (rng.random_range(0.0..2.0), rng.random_range(2.0..4.0));
        assert!(at(hi) <= at(lo) + 1e-12);
    }
    // Strict when members disagree everywhere.
    let rows = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0]];
    let a = optimistic_cvar(&cost_quantile_lower_bound(&rows, &midpoints(4), 1.0).unwrap(), 0.5).unwrap();
    let b = optimistic_cvar(&cost_quantile_lower_bound(&rows, &midpoints(4), 2.0).unwrap(), 0.5).unwrap();
    assert!(b < a);
}

#[test]
fn delta_schedule() {
    let c = ExploreConfig { beta_r: 3.0, beta_c: 2.0, delta0: 4.0, horizon: 1000 };
    assert_eq!(c.delta(0), 4.0);
    assert_eq!(c.delta(500), 2.0);
    assert_eq!(c.delta(1000), 0.0);
    assert_eq!(c.delta(5000), 0.0);
}

fn orac(seed: u64, explore: ExploreConfig) -> Agent<f64> {
    let mut cfg = AgentConfig::new(AgentKind::Orac, 2, 2);
    cfg.explore = explore;
    cfg.policy_hidden = vec![16, 16];
    cfg.critic_hidden = vec![16, 16];
    cfg.quantile_hidden = vec![16, 16];
    cfg.n_quantiles = 8;
    cfg.seed = seed;
    Agent::new(cfg).unwrap()
}

#[test]
fn applied_shift_has_mahalanobis_length_delta() {
    let explore = ExploreConfig { beta_r: 3.0, beta_c: 2.0, delta0: 4.0, horizon: 1000 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut applied = 0;
    for seed in 0..20 {
        let mut agent = orac(seed, explore);
        agent.lagrangian.lambda = rng.random_range(0.0..3.0);
        let state = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let step = rng.random_range(0..900);
        let out = agent.explore(&state, step, &mut rng);
        if out.status == ShiftStatus::Applied {
            applied += 1;
            let d = mahalanobis_shift(&out.mu_t, &out.mu_e, &out.sigma_t);
            assert!((d - explore.delta(step)).abs() < 1e-9 * explore.delta0, "{d} vs {}", explore.delta(step));
        }
    }
    assert!(applied >= 15);
}

#[test]
fn zero_bonuses_shift_along_mean_objective_gradient() {
    let explore = ExploreConfig { beta_r: 0.0, beta_c: 0.0, delta0: 1.0, horizon: 1000 };
    let mut agent = orac(3, explore);
    agent.lagrangian.lambda = 0.7;
    // c_bar = Q_hat_C so lambda_bar = lambda
    let state = [0.2, -0.3];
    let head = agent.policy.head(&state);
    let a0 = head.mean_action();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q_c = agent.cost_estimate(&state, &a0, &mut rng);
    agent.lagrangian.c_bar = q_c;
    let out = agent.explore(&state, 0, &mut rng);
    assert!((out.lambda_bar - 0.7).abs() < 1e-12);

    // Finite differences of mean Q_R - lambda * mean tail-mean in pre-squash space.
    let objective = |u: &[f64]| -> f64 {
        let a: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let x = [state[0], state[1], a[0], a[1]];
        let q1 = agent.reward.critics[0].spec.forward(&agent.reward.critics[0].online, &x)[0];
        let q2 = agent.reward.critics[1].spec.forward(&agent.reward.critics[1].online, &x)[0];
        0.5 * (q1 + q2) - 0.7 * agent.cost_estimate(&state, &a, &mut r)
    };
    let h = 1e-6;
    let mut fd = vec![0.0; 2];
    for j in 0..2 {
        let mut up = head.mu_pre.clone();
        let mut dn = head.mu_pre.clone();
        up[j] += h;
        dn[j] -= h;
        fd[j] = (objective(&up) - objective(&dn)) / (2.0 * h);
    }
    let cos = (out.grad[0] * fd[0] + out.grad[1] * fd[1])
        / ((out.grad[0].powi(2) + out.grad[1].powi(2)).sqrt() * (fd[0].powi(2) + fd[1].powi(2)).sqrt());
    assert!(cos > 1.0 - 1e-6, "cos {cos}, grad {:?}, fd {fd:?}", out.grad);
    for j in 0..2 {
        assert!((out.grad[j] - fd[j]).abs() < 1e-5 * fd[j].abs().max(1.0));
    }
}

#[test]
fn zero_radius_matches_target_policy_draws() {
    let explore = ExploreConfig { beta_r: 0.0, beta_c: 0.0, delta0: 0.0, horizon: 1000 };
    let agent = orac(4, explore);
    let state = [0.5, 0.1];
    let head = agent.policy.head(&state);
    let mut r1 = ChaCha8Rng::seed_from_u64(77);
    let mut r2 = ChaCha8Rng::seed_from_u64(77);
    let n = 10_000;
    let (mut m1, mut m2, mut s1, mut s2) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
    for _ in 0..n {
        let e = explore_action(&agent.explore_context(), &explore, &state, 10, &mut r1);
        let (p, _) = sample_from(&head.mu_pre, &head.log_sigma, &mut r2);
        assert_eq!(e.action, p);
        for j in 0..2 {
            m1[j] += e.action[j];
            m2[j] += p[j];
            s1[j] += e.action[j] * e.action[j];
            s2[j] += p[j] * p[j];
        }
    }
    assert_eq!((m1, s1), (m2, s2));
    // Past the horizon the radius is zero even with bonuses on.
    let decayed = ExploreConfig { beta_r: 3.0, beta_c: 2.0, delta0: 4.0, horizon: 100 };
    let e = explore_action(&agent.explore_context(), &decayed, &state, 100, &mut ChaCha8Rng::seed_from_u64(3));
    let (p, _) = sample_from(&head.mu_pre, &head.log_sigma, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(e.action, p);
}

proptest! {
    #[test]
    fn shift_length_equals_radius(mu in vec(-2.0f64..2.0, 1..5), seed in any::<u64>(), delta in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = mu.len();
        let sigma: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..3.0)).collect();
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (m, s) = shifted_mean(&mu, &sigma, &g, delta);
        prop_assume!(s == ShiftStatus::Applied);
        prop_assert!((mahalanobis_shift(&mu, &m, &sigma) - delta).abs() < 1e-9 * delta.max(1.0));
    }

    #[test]
    fn adjusted_lambda_is_monotone_and_non_negative(l in 0.0f64..10.0, c in -10.0f64..10.0, q in -10.0f64..10.0,
                                                     dq in 0.0f64..5.0) {
        let base = adjusted_lambda(l, c, q);
        prop_assert!(base >= 0.0);
        prop_assert!(adjusted_lambda(l, c, q + dq) >= base);
        prop_assert!(adjusted_lambda(l, c + dq, q) <= base);
    }

    #[test]
    fn bounds_order_around_means(q1 in -10.0f64..10.0, q2 in -10.0f64..10.0, beta in 0.0f64..5.0,
                                 rows in vec(vec(-10.0f64..10.0, 6), 1..5)) {
        prop_assert!(reward_upper_bound(q1, q2, beta) >= 0.5 * (q1 + q2) - 1e-12);
        let lb = lower_bound_columns(&rows, beta).unwrap();
        for (k, &v) in lb.iter().enumerate() {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
            prop_assert!(v <= mean + 1e-12);
        }
    }
}
