//! Maximum-likelihood fitting: starting values, BFGS in (β, ln φ),
//! observed-information standard errors, Wald tests and AIC.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Theta};
use crate::error::{Error, Result};
use crate::glm::{irls, Link};
use crate::inference::{
    loglik, loglik_and_gradient_unconstrained, observed_information,
    observed_information_unconstrained,
};
use crate::io::float17;
use crate::numerics::two_sided_p_value;
use crate::optim::{minimize, BfgsOptions, BfgsOutcome, Termination};

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Independence cloglog GLM for β, `phi_init` for φ.
    GlmCloglog,
    UserSupplied(Theta),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// On max |score| in (β, ln φ).
    pub gradient_tolerance: f64,
    pub init: InitStrategy,
    pub phi_init: f64,
    /// Seeds the jittered restart taken when the first run stalls.
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            init: InitStrategy::GlmCloglog,
            phi_init: 1.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient_tolerance must be positive".into()));
        }
        if !(self.phi_init > 0.0 && self.phi_init.is_finite()) {
            return Err(Error::Config("phi_init must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mberglg,
    NormalProbit,
    NormalCloglog,
}

impl ModelKind {
    pub fn baseline_link(self) -> Option<Link> {
        match self {
            ModelKind::Mberglg => None,
            ModelKind::NormalProbit => Some(Link::Probit),
            ModelKind::NormalCloglog => Some(Link::Cloglog),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mberglg" => Ok(ModelKind::Mberglg),
            "normal-probit" => Ok(ModelKind::NormalProbit),
            "normal-cloglog" => Ok(ModelKind::NormalCloglog),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }
}

/// Result of a fit. The last parameter is the precision φ; for the
/// normal baselines φ = σ⁻², so `lambda_hat` is the random-intercept SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: ModelKind,
    pub parameter_names: Vec<String>,
    #[serde(with = "float17::vec")]
    pub estimates: Vec<f64>,
    #[serde(with = "float17::opt_vec")]
    pub se: Vec<Option<f64>>,
    #[serde(with = "float17::opt_vec")]
    pub wald_z: Vec<Option<f64>>,
    #[serde(with = "float17::opt_vec")]
    pub p_values: Vec<Option<f64>>,
    #[serde(with = "float17::scalar")]
    pub lambda_hat: f64,
    #[serde(with = "float17::opt")]
    pub se_lambda: Option<f64>,
    #[serde(with = "float17::scalar")]
    pub loglik: f64,
    #[serde(with = "float17::scalar")]
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(with = "float17::scalar")]
    pub gradient_norm: f64,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn p(&self) -> usize {
        self.estimates.len() - 1
    }

    pub fn theta_hat(&self) -> Result<Theta> {
        let p = self.p();
        Theta::new(self.estimates[..p].to_vec(), self.estimates[p])
    }

    pub fn phi_hat(&self) -> f64 {
        self.estimates[self.p()]
    }

    /// 95% Wald interval for parameter `k` (φ for k = p).
    pub fn wald_interval(&self, k: usize) -> Option<(f64, f64)> {
        let se = self.se[k]?;
        let half = crate::numerics::normal_quantile(0.975) * se;
        Some((self.estimates[k] - half, self.estimates[k] + half))
    }

    /// 95% Wald interval for λ from the delta-method standard error.
    pub fn lambda_interval(&self) -> Option<(f64, f64)> {
        let se = self.se_lambda?;
        let half = crate::numerics::normal_quantile(0.975) * se;
        Some((self.lambda_hat - half, self.lambda_hat + half))
    }
}

/// Starting values and any warnings raised while computing them.
pub fn initialize(data: &Dataset, cfg: &FitConfig) -> Result<(Theta, Vec<String>)> {
    cfg.validate()?;
    match &cfg.init {
        InitStrategy::UserSupplied(theta) => {
            if theta.p() != data.p() {
                return Err(Error::DimensionMismatch {
                    what: "starting β",
                    expected: data.p(),
                    found: theta.p(),
                });
            }
            Ok((theta.clone(), Vec::new()))
        }
        InitStrategy::GlmCloglog => {
            let (y, x) = data.stacked();
            let glm = irls(&y, &x, Link::Cloglog)?;
            let theta = Theta::new(glm.beta.iter().copied().collect(), cfg.phi_init)?;
            Ok((theta, glm.warnings))
        }
    }
}

pub(crate) fn parameter_names(data: &Dataset) -> Vec<String> {
    let mut names = data.covariate_names.clone();
    names.push("phi".into());
    names
}

fn inverse_if_positive_definite(m: DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.cholesky().map(|c| c.inverse())
}

/// Runs BFGS and, when it stalls short of the tolerance, one restart from
/// a jittered copy of the best point. Keeps the better of the two.
pub(crate) fn minimize_with_restart<F>(
    mut objective: F,
    x0: DVector<f64>,
    opts: &BfgsOptions,
    seed: u64,
) -> BfgsOutcome
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let first = minimize(&mut objective, x0, opts);
    if matches!(
        first.termination,
        Termination::Converged | Termination::InitialPointInvalid
    ) {
        return first;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.05).expect("valid sd");
    let start = first.x.map(|v| v + jitter.sample(&mut rng));
    let retry_opts = BfgsOptions {
        initial_inverse_hessian: None,
        ..opts.clone()
    };
    let mut second = minimize(&mut objective, start, &retry_opts);
    if second.termination != Termination::InitialPointInvalid && second.value < first.value {
        second.iterations += first.iterations;
        second.evaluations += first.evaluations;
        second
    } else {
        first
    }
}

/// Assembles estimates, standard errors and tests from an information
/// matrix in (β, φ).
#[allow(clippy::too_many_arguments)]
pub(crate) fn build_report(
    model: ModelKind,
    parameter_names: Vec<String>,
    beta: &DVector<f64>,
    phi: f64,
    loglik: f64,
    information: Option<DMatrix<f64>>,
    converged: bool,
    iterations: usize,
    gradient_norm: f64,
    mut warnings: Vec<String>,
) -> FitReport {
    let p = beta.len();
    let mut estimates: Vec<f64> = beta.iter().copied().collect();
    estimates.push(phi);

    let covariance = information.and_then(inverse_if_positive_definite);
    let se: Vec<Option<f64>> = match &covariance {
        Some(c) => (0..=p)
            .map(|k| Some(c[(k, k)]).filter(|v| *v > 0.0 && v.is_finite()).map(f64::sqrt))
            .collect(),
        None => {
            warnings.push("observed information is not positive definite; standard errors unavailable".into());
            vec![None; p + 1]
        }
    };
    let wald_z: Vec<Option<f64>> = se
        .iter()
        .zip(&estimates)
        .map(|(s, e)| s.map(|s| e / s))
        .collect();
    let p_values = wald_z.iter().map(|z| z.map(two_sided_p_value)).collect();
    // λ = φ^{-1/2}, dλ/dφ = −½φ^{-3/2}
    let se_lambda = se[p].map(|s| 0.5 * phi.powf(-1.5) * s);

    FitReport {
        model,
        parameter_names,
        estimates,
        se,
        wald_z,
        p_values,
        lambda_hat: phi.powf(-0.5),
        se_lambda,
        loglik,
        aic: -2.0 * loglik + 2.0 * (p as f64 + 1.0),
        converged,
        iterations,
        gradient_norm,
        warnings,
    }
}

/// Maximum-likelihood fit of the MBerGLG regression model.
pub fn fit_ml(data: &Dataset, cfg: &FitConfig) -> Result<FitReport> {
    let (theta0, warnings) = initialize(data, cfg)?;
    let x0 = theta0.to_unconstrained();
    let opts = BfgsOptions {
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.gradient_tolerance,
        initial_inverse_hessian: observed_information_unconstrained(&theta0, data)
            .ok()
            .and_then(inverse_if_positive_definite),
        ..BfgsOptions::default()
    };
    let out = minimize_with_restart(
        |x| loglik_and_gradient_unconstrained(x, data).map(|(v, g)| (-v, -g)),
        x0,
        &opts,
        cfg.seed,
    );
    if out.termination == Termination::InitialPointInvalid {
        return Err(Error::NumericalBreakdown(
            "log-likelihood is not computable at the starting values".into(),
        ));
    }
    let theta = Theta::from_unconstrained(&out.x)?;
    let ll = loglik(&theta, data)?;
    let gradient_norm = out.gradient_norm();
    let info = observed_information(&theta, data).ok();
    Ok(build_report(
        ModelKind::Mberglg,
        parameter_names(data),
        &theta.beta,
        theta.phi.value(),
        ll,
        info,
        gradient_norm <= cfg.gradient_tolerance,
        out.iterations,
        gradient_norm,
        warnings,
    ))
}

/// Fits `model` to `data`: MBerGLG by [`fit_ml`], the normal baselines
/// with 21 quadrature nodes.
pub fn fit_model(data: &Dataset, model: ModelKind, cfg: &FitConfig) -> Result<FitReport> {
    match model.baseline_link() {
        None => fit_ml(data, cfg),
        Some(link) => crate::glmm::glmm_fit(data, &crate::glmm::GlmmSpec::new(link), cfg),
    }
}
