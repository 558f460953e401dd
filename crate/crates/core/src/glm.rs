//! Independence Bernoulli GLM: link functions, log-likelihood and IRLS.
//! Used for starting values and as the σ → 0 limit of the baseline model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_normal_cdf, log_normal_pdf, normal_cdf};

/// Coefficients are clipped to this in max-norm when IRLS diverges.
pub const SEPARATION_BOUND: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Probit,
    Cloglog,
}

impl Link {
    /// u = g⁻¹(η)
    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            Link::Probit => normal_cdf(eta),
            Link::Cloglog => -(-eta.exp()).exp_m1(),
        }
    }

    /// g(u)
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Link::Probit => crate::numerics::normal_quantile(u),
            Link::Cloglog => (-(-u).ln_1p()).ln(),
        }
    }

    /// du/dη
    pub fn derivative(self, eta: f64) -> f64 {
        match self {
            Link::Probit => log_normal_pdf(eta).exp(),
            Link::Cloglog => (eta - eta.exp()).exp(),
        }
    }

    /// ln P(Y = y | η) and its derivative in η.
    pub fn log_bernoulli(self, y: u8, eta: f64) -> (f64, f64) {
        match (self, y) {
            (Link::Probit, 1) => {
                let lc = log_normal_cdf(eta);
                (lc, (log_normal_pdf(eta) - lc).exp())
            }
            (Link::Probit, _) => {
                let lc = log_normal_cdf(-eta);
                (lc, -(log_normal_pdf(eta) - lc).exp())
            }
            (Link::Cloglog, 1) => {
                let t = eta.exp();
                if t < 1e-8 {
                    // 1 − e^{−t} ≈ t(1 − t/2)
                    (eta - 0.5 * t, 1.0 - 0.5 * t)
                } else if t.is_infinite() {
                    (0.0, 0.0)
                } else {
                    ((-(-t).exp_m1()).ln(), t / t.exp_m1())
                }
            }
            (Link::Cloglog, _) => {
                let t = eta.exp();
                (-t, -t)
            }
        }
    }
}

/// Σ ln P(y_j | x_jᵀβ) treating every observation as independent.
pub fn glm_loglik(beta: &DVector<f64>, y: &[u8], x: &DMatrix<f64>, link: Link) -> f64 {
    let eta = x * beta;
    y.iter()
        .zip(eta.iter())
        .map(|(&yj, &e)| link.log_bernoulli(yj, e).0)
        .sum()
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub beta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Iteratively reweighted least squares for a Bernoulli GLM.
pub fn irls(y: &[u8], x: &DMatrix<f64>, link: Link) -> Result<GlmFit> {
    let n = y.len();
    let p = x.ncols();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "design rows",
            expected: n,
            found: x.nrows(),
        });
    }
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::InvalidParameter(
            "responses need at least one 0 and one 1".into(),
        ));
    }

    const MAX_ITERATIONS: usize = 100;
    const EPS: f64 = 1e-10;
    let clamp = |u: f64| u.clamp(EPS, 1.0 - EPS);

    // start from the link of (y + ½)/2
    let mut eta: DVector<f64> =
        DVector::from_iterator(n, y.iter().map(|&v| link.apply((f64::from(v) + 0.5) / 2.0)));
    let mut beta = DVector::zeros(p);
    let mut previous = f64::NEG_INFINITY;
    let mut warnings = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut xtwx = DMatrix::zeros(p, p);
        let mut xtwz = DVector::zeros(p);
        for j in 0..n {
            let u = clamp(link.inverse(eta[j]));
            let d = link.derivative(eta[j]).max(1e-300);
            let w = d * d / (u * (1.0 - u));
            let z = eta[j] + (f64::from(y[j]) - u) / d;
            let row = x.row(j);
            xtwx += row.transpose() * row * w;
            xtwz += row.transpose() * (w * z);
        }
        let chol = xtwx.cholesky().ok_or_else(|| {
            Error::InvalidParameter("design matrix is rank deficient".into())
        })?;
        let next = chol.solve(&xtwz);
        if next.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("IRLS coefficient".into()));
        }
        if next.amax() > SEPARATION_BOUND {
            warnings.push(format!(
                "starting GLM diverges (possible separation); coefficients clipped to ±{SEPARATION_BOUND}"
            ));
            beta = next.map(|b| b.clamp(-SEPARATION_BOUND, SEPARATION_BOUND));
            break;
        }
        let step = (&next - &beta).amax();
        beta = next;
        eta = x * &beta;
        let ll = glm_loglik(&beta, y, x, link);
        if step < 1e-10 || (ll - previous).abs() < 1e-12 * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
        previous = ll;
    }
    Ok(GlmFit {
        beta,
        iterations,
        converged,
        warnings,
    })
}
