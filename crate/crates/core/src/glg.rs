//! The generalized log-gamma law GLG(μ, σ, λ).
//!
//! For λ ≠ 0 the density is
//!
//! ```text
//! f(b) = c(λ)/σ · exp[ z/λ − λ⁻² exp(λ z) ],   z = (b − μ)/σ,
//! c(λ) = |λ| (λ⁻²)^{λ⁻²} / Γ(λ⁻²),
//! ```
//!
//! and λ = 0 is the normal N(μ, σ²). With W ~ Gamma(λ⁻², 1),
//! b = μ + σ·ln(λ²W)/λ has exactly this law, which gives both the sampler
//! and the moments. Under GLG(0, λ, λ), exp(b) ~ Gamma(φ, rate φ) with
//! φ = λ⁻².

use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{digamma, expm1_minus_x, log_gamma_residual, trigamma, HALF_LN_2PI};

/// |λ| below this is treated as the normal (λ = 0) branch.
pub const NORMAL_BRANCH_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlgParams {
    pub mu: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl GlgParams {
    pub fn new(mu: f64, sigma: f64, lambda: f64) -> Result<Self> {
        let p = Self { mu, sigma, lambda };
        p.validate()?;
        Ok(p)
    }

    /// GLG(0, λ, λ), the random-intercept law of the regression model.
    pub fn random_intercept(lambda: f64) -> Result<Self> {
        Self::new(0.0, lambda, lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "GLG scale must be positive and finite, got {}",
                self.sigma
            )));
        }
        if !self.mu.is_finite() || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(
                "GLG location and shape must be finite".into(),
            ));
        }
        Ok(())
    }

    fn is_normal_branch(&self) -> bool {
        self.lambda.abs() < NORMAL_BRANCH_THRESHOLD
    }
}

/// Log density of GLG(μ, σ, λ) at `b`.
pub fn log_pdf(b: f64, p: &GlgParams) -> Result<f64> {
    p.validate()?;
    if !b.is_finite() {
        return Err(Error::NonFinite(format!("GLG density evaluated at {b}")));
    }
    let z = (b - p.mu) / p.sigma;
    if p.is_normal_branch() {
        return Ok(-0.5 * z * z - HALF_LN_2PI - p.sigma.ln());
    }
    let lambda = p.lambda;
    let k = 1.0 / (lambda * lambda);
    // ln c(λ) − k folded with the exponent z/λ − k·e^{λz} = −k(e^{λz} − 1 − λz) − k
    let lz = lambda * z;
    let log_density =
        lambda.abs().ln() - p.sigma.ln() + log_gamma_residual(k) - k * expm1_minus_x(lz);
    Ok(log_density)
}

pub fn pdf(b: f64, p: &GlgParams) -> Result<f64> {
    log_pdf(b, p).map(f64::exp)
}

/// Mean and variance of GLG(μ, σ, λ).
///
/// For λ ≠ 0: E(b) = μ + σ(ψ(λ⁻²) − ln λ⁻²)/λ and Var(b) = σ²ψ′(λ⁻²)/λ².
pub fn moments(p: &GlgParams) -> (f64, f64) {
    if p.is_normal_branch() {
        return (p.mu, p.sigma * p.sigma);
    }
    let k = 1.0 / (p.lambda * p.lambda);
    let mean = p.mu + p.sigma * (digamma(k) - k.ln()) / p.lambda;
    let var = p.sigma * p.sigma * trigamma(k) * k;
    (mean, var)
}

/// ln W for W ~ Gamma(shape, 1). For shape < 1 uses
/// W = W′·U^{1/shape} with W′ ~ Gamma(shape + 1) so tiny shapes do not
/// underflow to ln 0.
pub(crate) fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("shape validated");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape validated");
        let u: f64 = Open01.sample(rng);
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// One exact draw from GLG(μ, σ, λ).
pub fn sample<R: Rng + ?Sized>(p: &GlgParams, rng: &mut R) -> f64 {
    if p.is_normal_branch() {
        let z: f64 = StandardNormal.sample(rng);
        return p.mu + p.sigma * z;
    }
    let k = 1.0 / (p.lambda * p.lambda);
    let log_w = sample_log_gamma(k, rng);
    p.mu + p.sigma * (log_w - k.ln()) / p.lambda
}

impl Distribution<f64> for GlgParams {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample(self, rng)
    }
}
