use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::nets::{hcat, MlpSpec, NetError, ParamSet, Tape};
use crate::risk::{check_rho, midpoints, CriticMode, RiskError};
use crate::Scalar;

/// An approximator over `(state, action)` with a Polyak-tracked target copy.
#[derive(Debug, Clone)]
pub struct Critic<F> {
    pub spec: MlpSpec,
    pub online: ParamSet<F>,
    pub target: ParamSet<F>,
}

impl<F: Scalar> Critic<F> {
    pub fn new(spec: MlpSpec) -> Self {
        let online = spec.init();
        let target = online.clone();
        Self { spec, online, target }
    }

    pub fn params(&self, target: bool) -> &ParamSet<F> {
        if target {
            &self.target
        } else {
            &self.online
        }
    }

    pub fn update_target(&mut self, tau: F) -> Result<(), NetError> {
        self.target.polyak_from(&self.online, tau)
    }
}

/// Twin scalar reward critics.
#[derive(Debug, Clone)]
pub struct RewardCriticPair<F> {
    pub critics: [Critic<F>; 2],
}

impl<F: Scalar> RewardCriticPair<F> {
    pub fn new(state_dim: usize, action_dim: usize, hidden: &[usize], layer_norm: bool, seed: u64) -> Self {
        let make = |i: u64| {
            Critic::new(
                MlpSpec::new(state_dim + action_dim, 1, hidden)
                    .with_layer_norm(layer_norm)
                    .with_seed(seed.wrapping_add(i)),
            )
        };
        Self { critics: [make(0), make(1)] }
    }

    /// Values of both critics for each row, as a `B x 2` matrix plus tapes.
    pub fn evaluate(&self, sa: ArrayView2<F>, target: bool) -> (Array2<F>, [Tape<F>; 2]) {
        let (q0, t0) = self.critics[0].spec.forward_batch(self.critics[0].params(target), sa);
        let (q1, t1) = self.critics[1].spec.forward_batch(self.critics[1].params(target), sa);
        (hcat(q0.view(), q1.view()), [t0, t1])
    }
}

/// Quantile fractions used to query a cost critic.
///
/// `bounds` are the undistorted bin edges `0 = tau_0 < ... < tau_N = 1`, `weights` the
/// bin widths, and `mids` the query points (bin midpoints, remapped into the worst-`rho`
/// tail when a risk distortion is applied).
#[derive(Debug, Clone, PartialEq)]
pub struct FractionSet<F> {
    pub bounds: Vec<F>,
    pub mids: Vec<F>,
    pub weights: Vec<F>,
}

impl<F: Scalar> FractionSet<F> {
    /// `K` evenly spaced bins.
    pub fn fixed(k: usize) -> Self {
        let bounds = (0..=k).map(|i| F::lit(i as f64 / k as f64)).collect();
        let weights = vec![F::one() / F::from_usize_lossy(k); k];
        Self { bounds, mids: midpoints(k), weights }
    }

    pub fn len(&self) -> usize {
        self.mids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mids.is_empty()
    }
}

/// Random ordered quantile fractions.
///
/// `tau_i` are normalised cumulative sums of `U[0,1]` draws, so `tau_0 = 0` and
/// `tau_N = 1`. With `rho < 1` the midpoints are remapped affinely into `[1 - rho, 1]`;
/// weights stay the undistorted widths so `sum(w * Z(mid))` estimates the tail mean.
pub fn iqn_fractions<F: Scalar, R: Rng + ?Sized>(n: usize, rho: f64, rng: &mut R) -> Result<FractionSet<F>, RiskError> {
    if n == 0 {
        return Err(RiskError::Empty);
    }
    check_rho(rho)?;
    let eps: Vec<f64> = (0..n)
        .map(|_| loop {
            let e: f64 = rng.random();
            if e > 0.0 {
                break e;
            }
        })
        .collect();
    let total: f64 = eps.iter().sum();
    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(0.0);
    let mut acc = 0.0;
    for e in &eps[..n - 1] {
        acc += e;
        bounds.push(acc / total);
    }
    bounds.push(1.0);
    let lo = 1.0 - rho;
    let mids = bounds.windows(2).map(|w| F::lit(lo + rho * 0.5 * (w[0] + w[1]))).collect();
    let weights = bounds.windows(2).map(|w| F::lit(w[1] - w[0])).collect();
    Ok(FractionSet { bounds: bounds.into_iter().map(F::lit).collect(), mids, weights })
}

/// Cosine features `cos(pi * i * tau)`, `i = 0..n`.
fn cosine_embedding<F: Scalar>(tau: F, n: usize, out: &mut [F]) {
    let pi = F::lit(std::f64::consts::PI);
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = (pi * F::from_usize_lossy(i) * tau).cos();
    }
}

/// `E` independently initialised quantile critics sharing one architecture.
#[derive(Debug, Clone)]
pub struct CostCriticEnsemble<F> {
    pub members: Vec<Critic<F>>,
    pub mode: CriticMode,
    /// Quantiles per query: network outputs in fixed mode, sampled fractions in IQN mode.
    pub n_quantiles: usize,
    pub n_cos: usize,
    pub state_dim: usize,
    pub action_dim: usize,
}

/// Forward record of one member on one batch.
pub struct QuantileTape<F> {
    tape: Tape<F>,
    rows: usize,
    n: usize,
}

impl<F: Scalar> CostCriticEnsemble<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ensemble_size: usize,
        n_quantiles: usize,
        mode: CriticMode,
        n_cos: usize,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        layer_norm: bool,
        seed: u64,
    ) -> Self {
        let (input, output) = match mode {
            CriticMode::FixedFraction => (state_dim + action_dim, n_quantiles),
            CriticMode::Iqn => (state_dim + action_dim + n_cos, 1),
        };
        let members = (0..ensemble_size as u64)
            .map(|e| {
                Critic::new(
                    MlpSpec::new(input, output, hidden)
                        .with_layer_norm(layer_norm)
                        .with_seed(seed.wrapping_add(1000 * (e + 1))),
                )
            })
            .collect();
        Self { members, mode, n_quantiles, n_cos, state_dim, action_dim }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Fractions for a risk query: fixed midpoints, or a fresh distorted IQN draw.
    pub fn query_fractions<R: Rng + ?Sized>(&self, rho: f64, rng: &mut R) -> FractionSet<F> {
        match self.mode {
            CriticMode::FixedFraction => FractionSet::fixed(self.n_quantiles),
            CriticMode::Iqn => iqn_fractions(self.n_quantiles, rho, rng).expect("validated risk level"),
        }
    }

    /// Fractions for regression targets (never distorted).
    pub fn training_fractions<R: Rng + ?Sized>(&self, rng: &mut R) -> FractionSet<F> {
        self.query_fractions(1.0, rng)
    }

    /// Quantile values of member `e` on rows of `states`/`actions`: a `B x N` matrix.
    pub fn evaluate(
        &self,
        e: usize,
        target: bool,
        states: ArrayView2<F>,
        actions: ArrayView2<F>,
        fractions: &FractionSet<F>,
    ) -> (Array2<F>, QuantileTape<F>) {
        let member = &self.members[e];
        let rows = states.nrows();
        match self.mode {
            CriticMode::FixedFraction => {
                assert_eq!(fractions.len(), self.n_quantiles, "fixed mode uses its own fractions");
                let (z, tape) = member.spec.forward_batch(member.params(target), hcat(states, actions).view());
                (z, QuantileTape { tape, rows, n: self.n_quantiles })
            }
            CriticMode::Iqn => {
                let n = fractions.len();
                let (sd, ad) = (self.state_dim, self.action_dim);
                let width = sd + ad + self.n_cos;
                let mut input = Array2::zeros((rows * n, width));
                let mut emb = vec![F::zero(); self.n_cos];
                for (j, &tau) in fractions.mids.iter().enumerate() {
                    cosine_embedding(tau, self.n_cos, &mut emb);
                    for b in 0..rows {
                        let mut row = input.row_mut(b * n + j);
                        row.slice_mut(s![..sd]).assign(&states.row(b));
                        row.slice_mut(s![sd..sd + ad]).assign(&actions.row(b));
                        for (dst, &v) in row.slice_mut(s![sd + ad..]).iter_mut().zip(&emb) {
                            *dst = v;
                        }
                    }
                }
                let (z, tape) = member.spec.forward_batch(member.params(target), input.view());
                let z = z.into_shape_with_order((rows, n)).expect("one output per query row");
                (z, QuantileTape { tape, rows, n })
            }
        }
    }

    /// Backpropagates `dz` (`B x N`) through member `e`, accumulating parameter
    /// gradients when `grads` is given; returns the gradient with respect to the actions.
    pub fn backward(&self, e: usize, qt: &QuantileTape<F>, dz: &Array2<F>, grads: Option<&mut ParamSet<F>>) -> Array2<F> {
        let member = &self.members[e];
        let (sd, ad) = (self.state_dim, self.action_dim);
        match self.mode {
            CriticMode::FixedFraction => {
                let dx = member.spec.backward(&member.online, &qt.tape, dz.view(), grads);
                dx.slice(s![.., sd..sd + ad]).to_owned()
            }
            CriticMode::Iqn => {
                let flat = dz.view().into_shape_with_order((qt.rows * qt.n, 1)).expect("matching layout");
                let dx = member.spec.backward(&member.online, &qt.tape, flat, grads);
                let mut da = Array2::zeros((qt.rows, ad));
                for b in 0..qt.rows {
                    for j in 0..qt.n {
                        let src = dx.slice(s![b * qt.n + j, sd..sd + ad]);
                        let mut dst = da.row_mut(b);
                        dst += &src;
                    }
                }
                da
            }
        }
    }

    /// `E x N` quantile values for a single `(state, action)`.
    pub fn cost_quantiles(&self, state: &[F], action: &[F], fractions: &FractionSet<F>) -> Array2<F> {
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row view");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row view");
        let mut out = Array2::zeros((self.len(), fractions.len()));
        for e in 0..self.len() {
            let (z, _) = self.evaluate(e, false, s, a, fractions);
            out.row_mut(e).assign(&z.row(0));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ensemble(mode: CriticMode, e: usize) -> CostCriticEnsemble<f64> {
        CostCriticEnsemble::new(e, 8, mode, 16, 2, 2, &[16, 16], true, 7)
    }

    #[test]
    fn members_start_different() {
        let ens = ensemble(CriticMode::FixedFraction, 2);
        let q = ens.cost_quantiles(&[0.1, 0.2], &[0.3, -0.3], &FractionSet::fixed(8));
        assert_ne!(q.row(0), q.row(1));
    }

    #[test]
    fn single_member_has_zero_spread() {
        let ens = ensemble(CriticMode::FixedFraction, 1);
        let q = ens.cost_quantiles(&[0.1, 0.2], &[0.3, -0.3], &FractionSet::fixed(8));
        let std = q.std_axis(ndarray::Axis(0), 0.0);
        assert!(std.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn zeroing_a_member_only_changes_its_row() {
        let mut ens = ensemble(CriticMode::FixedFraction, 3);
        let fr = FractionSet::fixed(8);
        let before = ens.cost_quantiles(&[0.5, -0.5], &[0.1, 0.9], &fr);
        ens.members[1].online.fill_zero();
        let after = ens.cost_quantiles(&[0.5, -0.5], &[0.1, 0.9], &fr);
        assert_eq!(before.row(0), after.row(0));
        assert_eq!(before.row(2), after.row(2));
        assert!(after.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iqn_fraction_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &rho in &[1.0, 0.5, 0.05] {
            let f: FractionSet<f64> = iqn_fractions(32, rho, &mut rng).unwrap();
            assert_eq!(f.bounds[0], 0.0);
            assert_eq!(*f.bounds.last().unwrap(), 1.0);
            assert!(f.bounds.windows(2).all(|w| w[0] < w[1]));
            assert!(f.mids.windows(2).all(|w| w[0] < w[1]));
            assert!(f.mids.iter().all(|&m| m >= 1.0 - rho && m < 1.0));
            assert!((f.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(iqn_fractions::<f64, _>(0, 0.5, &mut rng).is_err());
        assert!(iqn_fractions::<f64, _>(4, 0.0, &mut rng).is_err());
    }

    #[test]
    fn iqn_member_evaluates_per_fraction() {
        let ens = ensemble(CriticMode::Iqn, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let fr = ens.training_fractions(&mut rng);
        let states = Array2::from_shape_vec((3, 2), vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let actions = Array2::from_shape_vec((3, 2), vec![0.0, 0.1, -0.2, 0.2, 0.5, 0.5]).unwrap();
        let (z, _) = ens.evaluate(0, false, states.view(), actions.view(), &fr);
        assert_eq!(z.dim(), (3, 8));
        // Row b, column j must equal a single-row query.
        let single = ens.cost_quantiles(&[0.3, 0.4], &[-0.2, 0.2], &fr);
        for j in 0..8 {
            assert!((single[[0, j]] - z[[1, j]]).abs() < 1e-12);
        }
    }
}
