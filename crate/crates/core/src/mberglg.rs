//! The multivariate Bernoulli-GLG distribution of a cluster of binary
//! outcomes.
//!
//! Conditionally on a shared random intercept with exp(b) ~ Gamma(φ, rate φ),
//! the outcomes are independent Bernoulli with P(y_j = 0 | b) = exp(−μ_j e^b).
//! Integrating out b gives the closed form
//!
//! ```text
//! f(y) = Σ_{k ≤ y} (−1)^{k₊} (φ / D_k)^φ,    D_k = φ + Σ_j μ_j (1 + k_j − y_j),
//! ```
//!
//! a signed sum over all subsets k of the success positions. Each term is
//! kept in log space as −φ·ln(1 + E_k/φ) with E_k = D_k − φ, which stays
//! accurate for φ up to ~1e8.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ln_gamma, log1mexp, LogSumExp, NeumaierSum};
use crate::quadrature::{integrate, integrate_to_infinity, QuadratureOptions};

/// Default cap on the number of successes in one cluster (2^30 terms).
pub const DEFAULT_MAX_ONES: usize = 30;

/// Largest cluster for which [`enumerate_all_outcomes`] builds a table.
pub const MAX_ENUMERATION_SIZE: usize = 20;

/// Ratio of negative to positive mass above which the two-group
/// log-space difference is abandoned for a compensated linear sum.
const CANCELLATION_LIMIT: f64 = 1.0 - 1e-13;

/// Precision φ = λ⁻² of the random intercept.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Precision(f64);

impl Precision {
    pub fn new(phi: f64) -> Result<Self> {
        if phi > 0.0 && phi.is_finite() {
            Ok(Self(phi))
        } else {
            Err(Error::InvalidParameter(format!(
                "precision must be positive and finite, got {phi}"
            )))
        }
    }

    /// φ = λ⁻² from a nonzero shape λ.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if lambda == 0.0 {
            return Err(Error::InvalidParameter(
                "λ = 0 has no finite precision".into(),
            ));
        }
        Self::new(1.0 / (lambda * lambda))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// λ = φ^{−1/2}
    pub fn lambda(self) -> f64 {
        self.0.powf(-0.5)
    }
}

impl TryFrom<f64> for Precision {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Precision> for f64 {
    fn from(p: Precision) -> f64 {
        p.0
    }
}

/// A real number stored as sign and log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedLogValue {
    pub sign: i8,
    pub log_magnitude: f64,
}

impl SignedLogValue {
    pub const ZERO: Self = Self {
        sign: 0,
        log_magnitude: f64::NEG_INFINITY,
    };

    pub fn new(sign: i8, log_magnitude: f64) -> Self {
        if sign == 0 || log_magnitude == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            Self {
                sign: sign.signum(),
                log_magnitude,
            }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            Self::ZERO
        } else {
            Self::new(if x > 0.0 { 1 } else { -1 }, x.abs().ln())
        }
    }

    pub fn to_f64(self) -> f64 {
        f64::from(self.sign) * self.log_magnitude.exp()
    }
}

/// Iterator over the subset set of a binary vector: every k with
/// 0 ≤ k_j ≤ y_j, paired with k₊ = Σ k_j. Yields 2^{y₊} items.
#[derive(Debug, Clone)]
pub struct SubsetIter {
    template: Vec<u8>,
    ones: Vec<usize>,
    next_mask: u64,
    end_mask: u64,
}

pub fn subset_enumerator(y: &[u8]) -> Result<SubsetIter> {
    validate_binary(y)?;
    let ones: Vec<usize> = positions_of_ones(y);
    if ones.len() > 63 {
        return Err(Error::SubsetCapExceeded {
            ones: ones.len(),
            cap: 63,
        });
    }
    Ok(SubsetIter {
        template: vec![0; y.len()],
        end_mask: 1u64 << ones.len(),
        ones,
        next_mask: 0,
    })
}

impl Iterator for SubsetIter {
    type Item = (Vec<u8>, usize);

    fn next(&mut self) -> Option<Self::Item> {
        if self.next_mask >= self.end_mask {
            return None;
        }
        let mask = self.next_mask;
        self.next_mask += 1;
        let mut k = self.template.clone();
        for (bit, &pos) in self.ones.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                k[pos] = 1;
            }
        }
        Some((k, mask.count_ones() as usize))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end_mask - self.next_mask) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SubsetIter {}

fn positions_of_ones(y: &[u8]) -> Vec<usize> {
    y.iter()
        .enumerate()
        .filter_map(|(j, &v)| (v == 1).then_some(j))
        .collect()
}

fn validate_binary(y: &[u8]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InvalidParameter("empty outcome vector".into()));
    }
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidParameter(format!(
            "outcomes must be 0 or 1, found {v}"
        )));
    }
    Ok(())
}

pub(crate) fn validate_mu(mu: &[f64]) -> Result<()> {
    if let Some(m) = mu.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "cluster means must be positive and finite, found {m}"
        )));
    }
    Ok(())
}

/// The per-cluster pieces of the subset sum: E_k = base + Σ_{bits} ones_mu.
#[derive(Debug, Clone)]
pub(crate) struct SubsetTerms {
    /// Σ μ_j over the failures (y_j = 0).
    pub base: f64,
    /// μ_j for the successes, in position order.
    pub ones_mu: Vec<f64>,
    /// Positions of the successes.
    pub ones_pos: Vec<usize>,
}

impl SubsetTerms {
    pub fn new(y: &[u8], mu: &[f64], cap: usize) -> Result<Self> {
        if y.len() != mu.len() {
            return Err(Error::DimensionMismatch {
                what: "outcome vector vs mean vector",
                expected: mu.len(),
                found: y.len(),
            });
        }
        validate_binary(y)?;
        validate_mu(mu)?;
        let ones_pos = positions_of_ones(y);
        if ones_pos.len() > cap.min(62) {
            return Err(Error::SubsetCapExceeded {
                ones: ones_pos.len(),
                cap,
            });
        }
        let base = y
            .iter()
            .zip(mu)
            .filter(|(&v, _)| v == 0)
            .map(|(_, &m)| m)
            .sum();
        let ones_mu = ones_pos.iter().map(|&j| mu[j]).collect();
        Ok(Self {
            base,
            ones_mu,
            ones_pos,
        })
    }

    pub fn count(&self) -> u64 {
        1u64 << self.ones_mu.len()
    }

    /// E_k for the subset encoded by `mask` (bit b ↔ b-th success).
    #[inline]
    pub fn excess(&self, mask: u64) -> f64 {
        self.base + self.added(mask)
    }

    /// E_k − base: the success means switched on by `mask`.
    #[inline]
    pub fn added(&self, mask: u64) -> f64 {
        let mut e = 0.0;
        let mut bits = mask;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            e += self.ones_mu[b];
            bits &= bits - 1;
        }
        e
    }

    #[inline]
    pub fn sign(mask: u64) -> f64 {
        if mask.count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// ln of one subset term (φ/(φ + E))^φ.
#[inline]
pub(crate) fn log_term(excess: f64, phi: f64) -> f64 {
    -phi * (excess / phi).ln_1p()
}

/// ln f(y; μ, φ) with the default subset cap.
pub fn joint_log_pmf(y: &[u8], mu: &[f64], phi: Precision) -> Result<f64> {
    joint_log_pmf_capped(y, mu, phi, DEFAULT_MAX_ONES)
}

/// ln f(y; μ, φ), rejecting clusters with more than `max_ones` successes.
pub fn joint_log_pmf_capped(y: &[u8], mu: &[f64], phi: Precision, max_ones: usize) -> Result<f64> {
    let terms = SubsetTerms::new(y, mu, max_ones)?;
    signed_subset_sum(&terms, phi.value()).map(|s| s.log_magnitude)
}

/// The alternating sum as a positive [`SignedLogValue`], or an error if it
/// cancels to a non-positive value.
pub(crate) fn signed_subset_sum(terms: &SubsetTerms, phi: f64) -> Result<SignedLogValue> {
    let mut positive = LogSumExp::default();
    let mut negative = LogSumExp::default();
    for mask in 0..terms.count() {
        let lt = log_term(terms.excess(mask), phi);
        if mask.count_ones() % 2 == 0 {
            positive.add(lt);
        } else {
            negative.add(lt);
        }
    }
    let lp = positive.value();
    if negative.is_empty() {
        return Ok(SignedLogValue::new(1, lp));
    }
    let d = negative.value() - lp;
    if d < CANCELLATION_LIMIT.ln() {
        return Ok(SignedLogValue::new(1, lp + log1mexp(d)));
    }
    // Near-total cancellation: redo in the linear domain relative to the
    // largest term with compensated summation.
    let scale = lp.max(negative.value());
    let mut sum = NeumaierSum::default();
    for mask in 0..terms.count() {
        let lt = log_term(terms.excess(mask), phi);
        sum.add(SubsetTerms::sign(mask) * (lt - scale).exp());
    }
    let s = sum.value();
    if s > 0.0 {
        Ok(SignedLogValue::new(1, scale + s.ln()))
    } else {
        Err(Error::NumericalBreakdown(format!(
            "subset sum cancelled to {s:e} (relative to its largest term) with φ = {phi}"
        )))
    }
}

/// Univariate margin: P(0) = (φ/(φ+μ))^φ, P(1) = 1 − P(0).
pub fn univariate_pmf(y: u8, mu: f64, phi: Precision) -> Result<f64> {
    validate_mu(&[mu])?;
    let lt = log_term(mu, phi.value());
    match y {
        0 => Ok(lt.exp()),
        1 => Ok(-lt.exp_m1()),
        _ => Err(Error::InvalidParameter(format!(
            "outcome must be 0 or 1, found {y}"
        ))),
    }
}

/// E(y_j) = 1 − (φ/(φ+μ))^φ.
pub fn marginal_mean(mu: f64, phi: Precision) -> Result<f64> {
    univariate_pmf(1, mu, phi)
}

/// Var(y_j) = p(1 − p) with p the marginal mean.
pub fn marginal_var(mu: f64, phi: Precision) -> Result<f64> {
    let p = marginal_mean(mu, phi)?;
    Ok(p * (1.0 - p))
}

/// Cov(y_j, y_k) = (φ/(φ+μ_j+μ_k))^φ − (φ/(φ+μ_j))^φ (φ/(φ+μ_k))^φ.
///
/// The shared intercept makes P(both fail) the Laplace transform at
/// μ_j + μ_k, and Cov(y_j, y_k) = Cov(1 − y_j, 1 − y_k).
pub fn marginal_cov(mu_j: f64, mu_k: f64, phi: Precision) -> Result<f64> {
    validate_mu(&[mu_j, mu_k])?;
    let phi = phi.value();
    let joint = log_term(mu_j + mu_k, phi);
    let product = log_term(mu_j, phi) + log_term(mu_k, phi);
    // e^joint − e^product with joint ≥ product
    Ok(product.exp() * (joint - product).exp_m1())
}

/// Intraclass correlation cov/√(var_j var_k) implied by the moments above.
pub fn marginal_corr(mu_j: f64, mu_k: f64, phi: Precision) -> Result<f64> {
    let c = marginal_cov(mu_j, mu_k, phi)?;
    Ok(c / (marginal_var(mu_j, phi)? * marginal_var(mu_k, phi)?).sqrt())
}

/// Independent evaluation of f(y) by integrating the conditional
/// likelihood against the Gamma(φ, rate φ) law of t = e^b.
///
/// With s = φt the integral is
/// Γ(φ)⁻¹ ∫₀^∞ s^{φ−1} e^{−s} · e^{−(s/φ)Σ_{y=0}μ} Π_{y=1}(1 − e^{−μ s/φ}) ds,
/// split at s = 1; on [0, 1] the substitution s = u^{1/φ} removes the
/// s^{φ−1} endpoint singularity.
pub fn pmf_quadrature_oracle(y: &[u8], mu: &[f64], phi: Precision) -> Result<f64> {
    let terms = SubsetTerms::new(y, mu, usize::MAX)?;
    let phi = phi.value();
    let conditional = |s: f64| -> f64 {
        let t = s / phi;
        let mut v = (-t * terms.base).exp();
        for &m in &terms.ones_mu {
            v *= -(-m * t).exp_m1();
        }
        v
    };
    let opts = QuadratureOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-13,
        max_intervals: 10_000,
    };
    let log_norm = -ln_gamma(phi);
    // [0, 1]: s^{φ−1} ds = du/φ
    let head = integrate(
        |u: f64| {
            if u <= 0.0 {
                return 0.0;
            }
            let s = u.powf(1.0 / phi);
            (-s).exp() * conditional(s)
        },
        0.0,
        1.0,
        opts,
    )?
    .value
        / phi;
    let tail = integrate_to_infinity(
        |s: f64| ((phi - 1.0) * s.ln() - s).exp() * conditional(s),
        1.0,
        opts,
    )?
    .value;
    Ok(log_norm.exp() * (head + tail))
}

/// All 2^m outcomes of a cluster with their probabilities, in binary
/// counting order (y_1 is the least significant position).
pub fn enumerate_all_outcomes(mu: &[f64], phi: Precision) -> Result<Vec<(Vec<u8>, f64)>> {
    let m = mu.len();
    if m == 0 {
        return Err(Error::InvalidParameter("empty mean vector".into()));
    }
    if m > MAX_ENUMERATION_SIZE {
        return Err(Error::TooManyOutcomes {
            m,
            limit: MAX_ENUMERATION_SIZE,
        });
    }
    validate_mu(mu)?;
    (0..1u32 << m)
        .map(|code| {
            let y: Vec<u8> = (0..m).map(|j| (code >> j & 1) as u8).collect();
            let p = joint_log_pmf_capped(&y, mu, phi, MAX_ENUMERATION_SIZE)?.exp();
            Ok((y, p))
        })
        .collect()
}
