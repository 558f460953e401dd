//! Random-intercept Bernoulli-normal model, b ~ N(0, σ²), with a probit
//! or cloglog link, integrated by plain Gauss–Hermite quadrature.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterData, Dataset};
use crate::error::{Error, Result};
use crate::fit::{build_report, minimize_with_restart, parameter_names, FitConfig, FitReport, InitStrategy, ModelKind};
use crate::glm::{irls, Link};
use crate::inference::finite_difference_jacobian;
use crate::numerics::LogSumExp;
use crate::optim::{BfgsOptions, Termination};
use crate::quadrature::GaussHermite;

pub const DEFAULT_NODES: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlmmSpec {
    pub link: Link,
    pub quadrature_nodes: usize,
}

impl GlmmSpec {
    pub fn new(link: Link) -> Self {
        Self {
            link,
            quadrature_nodes: DEFAULT_NODES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quadrature_nodes < 5 || self.quadrature_nodes % 2 == 0 {
            return Err(Error::Config(format!(
                "quadrature nodes must be odd and at least 5, got {}",
                self.quadrature_nodes
            )));
        }
        Ok(())
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.link {
            Link::Probit => ModelKind::NormalProbit,
            Link::Cloglog => ModelKind::NormalCloglog,
        }
    }
}

/// Log nodes ln(w_k/√π) and abscissae √2·x_k, so that
/// ∫ g(b) N(b; 0, σ²) db ≈ Σ_k exp(ln ω_k) g(σ a_k).
struct Rule {
    log_weights: Vec<f64>,
    abscissae: Vec<f64>,
}

impl Rule {
    fn new(nodes: usize) -> Result<Self> {
        let gh = GaussHermite::new(nodes)?;
        let half_ln_pi = 0.5 * std::f64::consts::PI.ln();
        Ok(Self {
            log_weights: gh.weights.iter().map(|w| w.ln() - half_ln_pi).collect(),
            abscissae: gh.nodes.iter().map(|x| std::f64::consts::SQRT_2 * x).collect(),
        })
    }
}

/// Cluster log-likelihood and, if requested, its gradient in (β, σ).
fn cluster_terms(
    cluster: &ClusterData,
    beta: &DVector<f64>,
    sigma: f64,
    link: Link,
    rule: &Rule,
    want_gradient: bool,
) -> Result<(f64, Option<DVector<f64>>)> {
    let p = beta.len();
    let eta = cluster.linear_predictor(beta);
    let n_nodes = rule.abscissae.len();
    let mut node_log = Vec::with_capacity(n_nodes);
    let mut node_grad: Vec<DVector<f64>> = Vec::with_capacity(if want_gradient { n_nodes } else { 0 });
    for (k, &a) in rule.abscissae.iter().enumerate() {
        let b = sigma * a;
        let mut ll = rule.log_weights[k];
        let mut g = DVector::zeros(p + 1);
        for (j, &yj) in cluster.y.iter().enumerate() {
            let (lf, d) = link.log_bernoulli(yj, eta[j] + b);
            ll += lf;
            if want_gradient {
                for q in 0..p {
                    g[q] += d * cluster.x[(j, q)];
                }
                g[p] += d * a;
            }
        }
        node_log.push(ll);
        if want_gradient {
            node_grad.push(g);
        }
    }
    let mut lse = LogSumExp::default();
    for &v in &node_log {
        lse.add(v);
    }
    let total = lse.value();
    if !total.is_finite() {
        return Err(Error::NonFinite("Gauss–Hermite cluster likelihood".into()));
    }
    let gradient = want_gradient.then(|| {
        let mut acc = DVector::zeros(p + 1);
        for (lv, g) in node_log.iter().zip(&node_grad) {
            acc += g * (lv - total).exp();
        }
        acc
    });
    Ok((total, gradient))
}

fn check_inputs(beta: &DVector<f64>, sigma: f64, data: &Dataset, spec: &GlmmSpec) -> Result<()> {
    spec.validate()?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "random-intercept SD must be positive, got {sigma}"
        )));
    }
    if beta.len() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "β",
            expected: data.p(),
            found: beta.len(),
        });
    }
    Ok(())
}

fn evaluate(
    beta: &DVector<f64>,
    sigma: f64,
    data: &Dataset,
    link: Link,
    rule: &Rule,
    want_gradient: bool,
) -> Result<(f64, Option<DVector<f64>>)> {
    let parts: Vec<(f64, Option<DVector<f64>>)> = data
        .clusters
        .par_iter()
        .map(|c| cluster_terms(c, beta, sigma, link, rule, want_gradient))
        .collect::<Result<_>>()?;
    let mut ll = 0.0;
    let mut grad = want_gradient.then(|| DVector::zeros(beta.len() + 1));
    for (v, g) in parts {
        ll += v;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            *acc += g;
        }
    }
    Ok((ll, grad))
}

/// Σ_i ln ∫ Π_j P(y_ij | x_ijᵀβ + b) N(b; 0, σ²) db.
pub fn glmm_loglik(beta: &DVector<f64>, sigma: f64, data: &Dataset, spec: &GlmmSpec) -> Result<f64> {
    check_inputs(beta, sigma, data, spec)?;
    let rule = Rule::new(spec.quadrature_nodes)?;
    Ok(evaluate(beta, sigma, data, spec.link, &rule, false)?.0)
}

/// Gradient of [`glmm_loglik`] in (β, σ).
pub fn glmm_gradient(beta: &DVector<f64>, sigma: f64, data: &Dataset, spec: &GlmmSpec) -> Result<DVector<f64>> {
    check_inputs(beta, sigma, data, spec)?;
    let rule = Rule::new(spec.quadrature_nodes)?;
    Ok(evaluate(beta, sigma, data, spec.link, &rule, true)?
        .1
        .expect("gradient requested"))
}

fn split(x: &DVector<f64>) -> (DVector<f64>, f64) {
    let p = x.len() - 1;
    (x.rows(0, p).into_owned(), x[p])
}

/// Maximum-likelihood fit of the Bernoulli-normal model in (β, ln σ).
/// Standard errors come from a finite-difference Jacobian of the score.
pub fn glmm_fit(data: &Dataset, spec: &GlmmSpec, cfg: &FitConfig) -> Result<FitReport> {
    spec.validate()?;
    cfg.validate()?;
    let rule = Rule::new(spec.quadrature_nodes)?;
    let link = spec.link;
    let p = data.p();

    let mut warnings = Vec::new();
    let (beta0, phi0) = match &cfg.init {
        InitStrategy::UserSupplied(theta) => (theta.beta.clone(), theta.phi.value()),
        InitStrategy::GlmCloglog => {
            let (y, x) = data.stacked();
            let glm = irls(&y, &x, link)?;
            warnings.extend(glm.warnings);
            (glm.beta, cfg.phi_init)
        }
    };
    if beta0.len() != p {
        return Err(Error::DimensionMismatch {
            what: "starting β",
            expected: p,
            found: beta0.len(),
        });
    }
    let mut x0 = DVector::zeros(p + 1);
    x0.rows_mut(0, p).copy_from(&beta0);
    x0[p] = -0.5 * phi0.ln();

    // value and gradient of ℓ in (β, ζ = ln σ)
    let unconstrained = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (beta, zeta) = split(x);
        let sigma = zeta.exp();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::NonFinite("random-intercept SD".into()));
        }
        let (v, g) = evaluate(&beta, sigma, data, link, &rule, true)?;
        let mut g = g.expect("gradient requested");
        g[p] *= sigma;
        Ok((v, g))
    };
    let score = |x: &DVector<f64>| unconstrained(x).map(|(_, g)| g);

    let initial_inverse_hessian = finite_difference_jacobian(score, &x0, 1e-5)
        .ok()
        .map(|j| (&j + j.transpose()) * -0.5)
        .and_then(|m| m.cholesky())
        .map(|c| c.inverse());
    let opts = BfgsOptions {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.gradient_tolerance,
        initial_inverse_hessian,
        ..BfgsOptions::default()
    };
    let out = minimize_with_restart(
        |x| unconstrained(x).map(|(v, g)| (-v, -g)),
        x0,
        &opts,
        cfg.seed,
    );
    if out.termination == Termination::InitialPointInvalid {
        return Err(Error::NumericalBreakdown(
            "log-likelihood is not computable at the starting values".into(),
        ));
    }
    let (beta, zeta) = split(&out.x);
    let sigma = zeta.exp();
    let phi = sigma.powi(-2);
    let ll = evaluate(&beta, sigma, data, link, &rule, false)?.0;

    // information in (β, φ) with σ = φ^{-1/2}
    let mut at = DVector::zeros(p + 1);
    at.rows_mut(0, p).copy_from(&beta);
    at[p] = phi;
    let score_phi = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let (beta, phi) = split(v);
        if !(phi > 0.0) {
            return Err(Error::InvalidParameter("φ must be positive".into()));
        }
        let sigma = phi.powf(-0.5);
        let mut g = evaluate(&beta, sigma, data, link, &rule, true)?
            .1
            .expect("gradient requested");
        g[p] *= -0.5 * phi.powf(-1.5);
        Ok(g)
    };
    let information: Option<DMatrix<f64>> = finite_difference_jacobian(score_phi, &at, 1e-5)
        .ok()
        .map(|j| (&j + j.transpose()) * -0.5)
        .filter(|m| m.iter().all(|v| v.is_finite()));

    let gradient_norm = out.gradient_norm();
    Ok(build_report(
        spec.model_kind(),
        parameter_names(data),
        &beta,
        phi,
        ll,
        information,
        gradient_norm <= cfg.gradient_tolerance,
        out.iterations,
        gradient_norm,
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::glm_loglik;

    fn single(y: u8) -> Dataset {
        Dataset::unnamed(vec![ClusterData::new(vec![y], DMatrix::from_element(1, 1, 1.0)).unwrap()]).unwrap()
    }

    #[test]
    fn probit_single_observation_is_one_half() {
        let spec = GlmmSpec::new(Link::Probit);
        let v = glmm_loglik(&DVector::from_vec(vec![0.0]), 1.0, &single(1), &spec).unwrap();
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn probit_marginal_identity_off_centre() {
        // P(y = 1) = Φ(β/√(1 + σ²))
        let spec = GlmmSpec::new(Link::Probit);
        let (beta, sigma) = (0.7, 1.3);
        let v = glmm_loglik(&DVector::from_vec(vec![beta]), sigma, &single(1), &spec).unwrap();
        let exact = crate::numerics::normal_cdf(beta / (1.0 + sigma * sigma).sqrt()).ln();
        assert!((v - exact).abs() < 1e-8);
    }

    #[test]
    fn vanishing_sd_gives_independence_loglik() {
        let c = ClusterData::new(vec![0, 1, 1], DMatrix::from_row_slice(3, 2, &[1., 0.2, 1., 0.5, 1., -0.3])).unwrap();
        let d = ClusterData::new(vec![1, 0], DMatrix::from_row_slice(2, 2, &[1., 1.1, 1., 0.0])).unwrap();
        let data = Dataset::unnamed(vec![c, d]).unwrap();
        let (y, x) = data.stacked();
        let beta = DVector::from_vec(vec![0.2, -0.4]);
        for link in [Link::Probit, Link::Cloglog] {
            let v = glmm_loglik(&beta, 1e-8, &data, &GlmmSpec::new(link)).unwrap();
            assert!((v - glm_loglik(&beta, &y, &x, link)).abs() < 1e-4);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let c = ClusterData::new(vec![0, 1, 1], DMatrix::from_row_slice(3, 2, &[1., 0.2, 1., 0.5, 1., -0.3])).unwrap();
        let d = ClusterData::new(vec![1, 0], DMatrix::from_row_slice(2, 2, &[1., 1.1, 1., 0.0])).unwrap();
        let data = Dataset::unnamed(vec![c, d]).unwrap();
        for link in [Link::Probit, Link::Cloglog] {
            let spec = GlmmSpec::new(link);
            let at = DVector::from_vec(vec![0.2, -0.4, 0.8]);
            let f = |v: &DVector<f64>| glmm_loglik(&v.rows(0, 2).into_owned(), v[2], &data, &spec);
            let fd = crate::inference::finite_difference_gradient(f, &at, 1e-5).unwrap();
            let g = glmm_gradient(&at.rows(0, 2).into_owned(), 0.8, &data, &spec).unwrap();
            assert!((fd - g).amax() < 1e-7, "{link:?}");
        }
    }

    #[test]
    fn node_rule_validation() {
        let data = single(1);
        let beta = DVector::from_vec(vec![0.0]);
        for n in [3, 20] {
            let spec = GlmmSpec { link: Link::Probit, quadrature_nodes: n };
            assert!(glmm_loglik(&beta, 1.0, &data, &spec).is_err());
        }
        assert!(glmm_loglik(&beta, 0.0, &data, &GlmmSpec::new(Link::Probit)).is_err());
    }
}
