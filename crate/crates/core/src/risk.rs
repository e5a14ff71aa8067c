//! Risk-measure and quantile-regression math.
//!
//! Every risk level in this crate is a *worst fraction* `rho`: `rho = 0.05` means
//! "the mean of the worst 5% of outcomes", and `rho = 1` is the plain mean. Costs are
//! bad when large, so the tail of interest is always the upper one, fractions in
//! `[1 - rho, 1]`.
//!
//! Tail selection on a discretised quantile function uses fraction midpoints: quantile
//! `k` belongs to the tail when its midpoint is `>= 1 - rho`. When no midpoint
//! qualifies (very small `rho` relative to the resolution) the highest quantile is
//! used on its own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("risk level must lie in (0, 1], got {0}")]
    InvalidRiskLevel(f64),
    #[error("spectral discretisation needs a risk level strictly inside (0, 1), got {0}")]
    InvalidSpectrumLevel(f64),
    #[error("huber threshold must be positive and finite, got {0}")]
    InvalidKappa(f64),
    #[error("quantile fraction must lie strictly inside (0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("non-finite residual")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("quantile values ({values}) and fractions ({fractions}) differ in length")]
    LengthMismatch { values: usize, fractions: usize },
    #[error("quantile fractions must be strictly increasing")]
    UnorderedFractions,
}

/// How cost critics represent the quantile function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CriticMode {
    /// K fixed, evenly spaced fractions; the network emits K values at once.
    #[default]
    FixedFraction,
    /// Fractions sampled per batch and fed to the network through a cosine embedding.
    Iqn,
}

/// User-facing risk configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    /// Worst-fraction risk level in `(0, 1]`.
    pub rho: f64,
    pub mode: CriticMode,
    /// Huber threshold of the quantile regression loss.
    pub kappa: f64,
}

impl Default for RiskSpec {
    fn default() -> Self {
        Self { rho: 1.0, mode: CriticMode::FixedFraction, kappa: 1.0 }
    }
}

impl RiskSpec {
    pub fn new(rho: f64, mode: CriticMode, kappa: f64) -> Result<Self, RiskError> {
        let spec = Self { rho, mode, kappa };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        check_rho(self.rho)?;
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(RiskError::InvalidKappa(self.kappa));
        }
        Ok(())
    }

    /// The risk-neutral variant of this spec (rho = 1).
    pub fn neutral(&self) -> Self {
        Self { rho: 1.0, ..*self }
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<(), RiskError> {
    if rho.is_finite() && rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(RiskError::InvalidRiskLevel(rho))
    }
}

/// `K` quantile values together with the midpoints of the fraction bins they represent.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileVector<F> {
    values: Vec<F>,
    fractions: Vec<F>,
}

impl<F: Scalar> QuantileVector<F> {
    pub fn new(values: Vec<F>, fractions: Vec<F>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        if values.len() != fractions.len() {
            return Err(RiskError::LengthMismatch { values: values.len(), fractions: fractions.len() });
        }
        for &f in &fractions {
            if !(f > F::zero() && f < F::one()) {
                return Err(RiskError::InvalidFraction(f.as_f64()));
            }
        }
        if fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RiskError::UnorderedFractions);
        }
        Ok(Self { values, fractions })
    }

    /// Values at the evenly spaced midpoints `(i - 0.5) / K`.
    pub fn evenly_spaced(values: Vec<F>) -> Result<Self, RiskError> {
        let fractions = midpoints(values.len());
        Self::new(values, fractions)
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn fractions(&self) -> &[F] {
        &self.fractions
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Monotone rearrangement of the values; fractions are unchanged.
    pub fn sorted(&self) -> Self {
        let mut values = self.values.clone();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Self { values, fractions: self.fractions.clone() }
    }
}

/// Evenly spaced fraction midpoints `(i - 0.5) / k` for `i = 1..=k`.
pub fn midpoints<F: Scalar>(k: usize) -> Vec<F> {
    let kf = k as f64;
    (1..=k).map(|i| F::lit((i as f64 - 0.5) / kf)).collect()
}

pub fn huber<F: Scalar>(delta: F, kappa: F) -> Result<F, RiskError> {
    if !delta.is_finite() {
        return Err(RiskError::NonFinite);
    }
    if !(kappa.is_finite() && kappa > F::zero()) {
        return Err(RiskError::InvalidKappa(kappa.as_f64()));
    }
    Ok(huber_unchecked(delta, kappa))
}

#[inline]
pub(crate) fn huber_unchecked<F: Scalar>(delta: F, kappa: F) -> F {
    let half = F::lit(0.5);
    let a = delta.abs();
    if a <= kappa {
        half * delta * delta
    } else {
        kappa * (a - half * kappa)
    }
}

/// Asymmetric quantile Huber loss `|k - 1[delta < 0]| * huber(delta) / kappa`.
///
/// `delta` is target minus prediction, so a positive residual (prediction too low)
/// is weighted by `k`.
pub fn quantile_huber<F: Scalar>(delta: F, k: F, kappa: F) -> Result<F, RiskError> {
    if !(k > F::zero() && k < F::one()) {
        return Err(RiskError::InvalidFraction(k.as_f64()));
    }
    let h = huber(delta, kappa)?;
    Ok(asymmetry(delta, k) * h / kappa)
}

#[inline]
fn asymmetry<F: Scalar>(delta: F, k: F) -> F {
    if delta < F::zero() {
        (k - F::one()).abs()
    } else {
        k
    }
}

/// Derivative of [`quantile_huber`] with respect to `delta` (zero at `delta = 0`).
#[inline]
pub fn quantile_huber_grad<F: Scalar>(delta: F, k: F, kappa: F) -> F {
    let dh = if delta.abs() <= kappa { delta } else { kappa * delta.signum() };
    if delta == F::zero() {
        return F::zero();
    }
    asymmetry(delta, k) * dh / kappa
}

/// Loss and derivative with respect to `delta` in one pass, for validated inputs.
///
/// With `c = min(|delta|, kappa)` the Huber loss is `c * (|delta| - c / 2)` and its
/// derivative `copysign(c, delta)`, which covers both branches without a jump.
#[inline]
pub(crate) fn quantile_huber_with_grad<F: Scalar>(delta: F, k: F, kappa: F) -> (F, F) {
    let w = if delta < F::zero() { F::one() - k } else { k } / kappa;
    let a = delta.abs();
    let c = a.min(kappa);
    (w * c * (a - F::lit(0.5) * c), w * c.copysign(delta))
}

/// Per-position weights `w` such that the tail mean of `values` is `sum(w * values)`.
///
/// The values are rearranged into ascending order first (quantile networks do not
/// guarantee monotone outputs); the weights are reported against the original
/// positions so they double as the gradient of the tail mean.
pub fn tail_weights<F: Scalar>(values: &[F], fractions: &[F], rho: F) -> Vec<F> {
    let k = values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let threshold = F::one() - rho;
    let tail: Vec<usize> = (0..k).filter(|&i| fractions[i] >= threshold).collect();
    let mut w = vec![F::zero(); k];
    if tail.is_empty() {
        w[order[k - 1]] = F::one();
    } else {
        let share = F::one() / F::from_usize_lossy(tail.len());
        for rank in tail {
            w[order[rank]] = share;
        }
    }
    w
}

/// Mean of the quantile values whose fraction midpoint is `>= 1 - rho`, after sorting.
pub fn cvar_tail_mean<F: Scalar>(q: &QuantileVector<F>, rho: F) -> Result<F, RiskError> {
    check_rho(rho.as_f64())?;
    if q.is_empty() {
        return Err(RiskError::Empty);
    }
    let w = tail_weights(&q.values, &q.fractions, rho);
    Ok(w.iter().zip(&q.values).map(|(&w, &v)| w * v).sum())
}

/// Dual (Rockafellar–Uryasev) form `beta + mean((x - beta)+) / rho`.
pub fn dual_cvar<F: Scalar>(samples: &[F], rho: F, beta: F) -> Result<F, RiskError> {
    check_rho(rho.as_f64())?;
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    let n = F::from_usize_lossy(samples.len());
    let excess: F = samples.iter().map(|&x| (x - beta).max(F::zero())).sum();
    Ok(excess / n / rho + beta)
}

/// A minimiser of [`dual_cvar`] over `beta`: the empirical `(1 - rho)`-quantile.
///
/// When the minimiser is an interval (`n * rho` integral) the upper end is returned,
/// which is the smallest sample belonging to the worst `rho` fraction.
pub fn optimal_beta<F: Scalar>(samples: &[F], rho: F) -> Result<F, RiskError> {
    check_rho(rho.as_f64())?;
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let pos = (n as f64 * (1.0 - rho.as_f64()) + 1e-9).floor() as usize;
    Ok(sorted[pos.min(n - 1)])
}

/// Mean of the worst `ceil(rho * n)` samples. Brute-force reference used by evaluation.
pub fn worst_fraction_mean<F: Scalar>(samples: &[F], rho: F) -> Result<F, RiskError> {
    check_rho(rho.as_f64())?;
    if samples.is_empty() {
        return Err(RiskError::Empty);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let m = ((rho.as_f64() * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let m = m.min(sorted.len());
    Ok(sorted[..m].iter().copied().sum::<F>() / F::from_usize_lossy(m))
}

/// Single-step staircase discretisation of a spectral risk function plus the dual
/// threshold `beta` and the constant contributed by the conjugate integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralParams<F> {
    pub eta1: F,
    pub eta2: F,
    pub beta: F,
    pub conj_const: F,
}

impl<F: Scalar> SpectralParams<F> {
    /// Places the hinge at `beta`.
    ///
    /// For a one-step staircase normalised to unit mass the conjugate integral
    /// evaluates to `(1 - eta1) * beta`.
    pub fn with_beta(self, beta: F) -> Self {
        Self { beta, conj_const: (F::one() - self.eta1) * beta, ..self }
    }
}

/// CVaR at worst fraction `rho` as a spectral staircase: `eta1 = 0`, `eta2 = 1 / rho`.
///
/// The returned params have `beta = 0`; pick the hinge with [`SpectralParams::with_beta`].
pub fn discretize_cvar_spectrum<F: Scalar>(rho: F) -> Result<SpectralParams<F>, RiskError> {
    let r = rho.as_f64();
    if !(r.is_finite() && r > 0.0 && r < 1.0) {
        return Err(RiskError::InvalidSpectrumLevel(r));
    }
    Ok(SpectralParams { eta1: F::zero(), eta2: F::one() / rho, beta: F::zero(), conj_const: F::zero() })
}

#[inline]
pub fn g_beta<F: Scalar>(x: F, p: &SpectralParams<F>) -> F {
    p.eta1 * x + (p.eta2 - p.eta1) * (x - p.beta).max(F::zero())
}

/// `(1/K) sum_k g_beta(q_k) + conj_const`.
pub fn spectral_risk_estimate<F: Scalar>(q: &QuantileVector<F>, p: &SpectralParams<F>) -> Result<F, RiskError> {
    if q.is_empty() {
        return Err(RiskError::Empty);
    }
    let k = F::from_usize_lossy(q.len());
    let total: F = q.values.iter().map(|&v| g_beta(v, p)).sum();
    Ok(total / k + p.conj_const)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q4() -> QuantileVector<f64> {
        QuantileVector::evenly_spaced(vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(huber(0.5, 1.0).unwrap(), 0.125);
        assert_eq!(huber(2.0, 1.0).unwrap(), 1.5);
        assert_eq!(huber(-2.0, 1.0).unwrap(), 1.5);
        assert_eq!(huber(f64::NAN, 1.0), Err(RiskError::NonFinite));
        assert!(huber(1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_huber_asymmetry() {
        assert!((quantile_huber(1.0f64, 0.9, 1.0).unwrap() - 0.45).abs() < 1e-12);
        assert!((quantile_huber(-1.0f64, 0.9, 1.0).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(quantile_huber(0.0, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(quantile_huber(1.0, 1.0, 1.0), Err(RiskError::InvalidFraction(1.0)));
        assert_eq!(quantile_huber(1.0, 0.0, 1.0), Err(RiskError::InvalidFraction(0.0)));
    }

    #[test]
    fn tail_mean_examples() {
        assert_eq!(cvar_tail_mean(&q4(), 0.5).unwrap(), 3.5);
        assert_eq!(cvar_tail_mean(&q4(), 1.0).unwrap(), 2.5);
        assert_eq!(cvar_tail_mean(&q4(), 0.05).unwrap(), 4.0);
        assert!(cvar_tail_mean(&q4(), 0.0).is_err());
        assert!(cvar_tail_mean(&q4(), 1.5).is_err());
    }

    #[test]
    fn tail_mean_sorts_unordered_values() {
        let q = QuantileVector::evenly_spaced(vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(cvar_tail_mean(&q, 0.5).unwrap(), 3.5);
        let w = tail_weights(q.values(), q.fractions(), 0.5);
        assert_eq!(w, vec![0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn quantile_vector_validation() {
        assert_eq!(QuantileVector::<f64>::evenly_spaced(vec![]), Err(RiskError::Empty));
        assert!(QuantileVector::new(vec![1.0, 2.0], vec![0.5, 0.5]).is_err());
        assert!(QuantileVector::new(vec![1.0], vec![1.0]).is_err());
        assert!(QuantileVector::new(vec![1.0], vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn dual_cvar_examples() {
        assert_eq!(dual_cvar(&[0.0, 10.0], 0.5, 0.0).unwrap(), 10.0);
        assert_eq!(dual_cvar(&[5.0], 1.0, 5.0).unwrap(), 5.0);
        assert_eq!(dual_cvar(&[1.0, 2.0, 3.0, 4.0], 0.25, 3.0).unwrap(), 4.0);
        assert_eq!(dual_cvar::<f64>(&[], 0.5, 0.0), Err(RiskError::Empty));
    }

    /// Reference: evaluate the dual objective at every sample and keep the smallest.
    fn grid_min(samples: &[f64], rho: f64) -> (f64, f64) {
        samples
            .iter()
            .map(|&b| (b, dual_cvar(samples, rho, b).unwrap()))
            .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }

    #[test]
    fn optimal_beta_examples() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let b = optimal_beta(&s, 0.25).unwrap();
        assert_eq!(b, 4.0);
        assert_eq!(dual_cvar(&s, 0.25, b).unwrap(), grid_min(&s, 0.25).1);
        assert_eq!(dual_cvar(&s, 0.25, b).unwrap(), 4.0);

        let s = [0.0, 10.0];
        let b = optimal_beta(&s, 0.5).unwrap();
        assert_eq!(b, 10.0);
        assert_eq!(dual_cvar(&s, 0.5, b).unwrap(), 10.0);
        assert_eq!(grid_min(&s, 0.5).1, 10.0);

        for rho in [0.05, 0.3, 1.0] {
            assert_eq!(optimal_beta(&[7.5; 9], rho).unwrap(), 7.5);
        }
    }

    #[test]
    fn worst_fraction_reference() {
        assert_eq!(worst_fraction_mean(&[2.0, 2.0, 2.0, 20.0], 0.25).unwrap(), 20.0);
        assert_eq!(worst_fraction_mean(&[1.0, 2.0, 3.0], 1.0).unwrap(), 2.0);
        // ceil(0.5 * 3) = 2 worst samples
        assert_eq!(worst_fraction_mean(&[1.0, 2.0, 3.0], 0.5).unwrap(), 2.5);
    }

    #[test]
    fn spectrum_discretisation() {
        let p = discretize_cvar_spectrum::<f64>(0.5).unwrap();
        assert_eq!((p.eta1, p.eta2), (0.0, 2.0));
        let p = discretize_cvar_spectrum::<f64>(0.25).unwrap();
        assert_eq!((p.eta1, p.eta2), (0.0, 4.0));
        let p = discretize_cvar_spectrum::<f64>(1.0 - 1e-12).unwrap();
        assert!((p.eta2 - 1.0).abs() < 1e-9);
        assert!(discretize_cvar_spectrum(1.0).is_err());
        assert!(discretize_cvar_spectrum(0.0).is_err());
    }

    #[test]
    fn g_beta_examples() {
        let p = SpectralParams { eta1: 0.0, eta2: 2.0, beta: 5.0, conj_const: 5.0 };
        assert_eq!(g_beta(3.0, &p), 0.0);
        assert_eq!(g_beta(7.0, &p), 4.0);
        let p = SpectralParams { eta1: 0.3, eta2: 2.0, beta: 5.0, conj_const: 0.0 };
        assert_eq!(g_beta(5.0, &p), 0.3 * 5.0);
    }

    #[test]
    fn spectral_estimate_examples() {
        let q = q4();
        let beta = optimal_beta(q.values(), 0.25).unwrap();
        let p = discretize_cvar_spectrum(0.25).unwrap().with_beta(beta);
        assert_eq!(spectral_risk_estimate(&q, &p).unwrap(), 4.0);

        let c = 3.25;
        let qc = QuantileVector::evenly_spaced(vec![c; 8]).unwrap();
        let p = discretize_cvar_spectrum(0.4).unwrap().with_beta(c);
        assert_eq!(spectral_risk_estimate(&qc, &p).unwrap(), p.eta1 * c + p.conj_const);

        // Risk neutral: unit staircase with the hinge below every value.
        let neutral = SpectralParams { eta1: 0.0, eta2: 1.0, beta: 0.0, conj_const: 0.0 }.with_beta(1.0);
        assert_eq!(spectral_risk_estimate(&q, &neutral).unwrap(), 2.5);
    }

    #[test]
    fn fused_loss_and_gradient_agree_with_separate_forms() {
        for &kappa in &[0.5, 1.0, 2.0] {
            for &k in &[0.05, 0.5, 0.97] {
                for i in -30..=30 {
                    let d = i as f64 * 0.11;
                    let (l, g) = quantile_huber_with_grad(d, k, kappa);
                    assert!((l - quantile_huber(d, k, kappa).unwrap()).abs() < 1e-12);
                    assert!((g - quantile_huber_grad(d, k, kappa)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quantile_huber_grad_matches_finite_differences() {
        let h = 1e-5;
        for &k in &[0.1, 0.5, 0.93] {
            for i in -40..=40 {
                let d = i as f64 * 0.07 + 0.013;
                let fd = (quantile_huber(d + h, k, 1.0).unwrap() - quantile_huber(d - h, k, 1.0).unwrap()) / (2.0 * h);
                assert!((fd - quantile_huber_grad(d, k, 1.0)).abs() < 1e-6, "k={k} d={d}");
            }
        }
    }
}
