//! Data generation under the simulation designs and the bias / RMSE /
//! coverage study engine.
//!
//! Responses follow log(−log(1 − u_ij)) = x_ijᵀβ + b_i with b_i drawn
//! from GLG(0, λ, λ) or N(0, λ²), λ taken as a standard deviation.
//!
//! | scenario | covariate       | random effect | fitted model    |
//! |----------|-----------------|---------------|-----------------|
//! | 1        | Uniform(0, 1)   | GLG           | MBerGLG         |
//! | 2        | Bernoulli(p)    | GLG           | MBerGLG         |
//! | 3        | N(0, 1)         | normal        | MBerGLG         |
//! | 4        | N(0, 1)         | GLG           | normal, probit  |
//! | 5        | N(0, 1)         | GLG           | normal, cloglog |

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ClusterData, Dataset};
use crate::error::{Error, Result};
use crate::fit::{fit_model, FitConfig, FitReport, ModelKind};
use crate::glg::{self, GlgParams};
use crate::io::{LongTable, INTERCEPT_NAME};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for an independent stream identified by `parts`, so results do
/// not depend on thread scheduling.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomEffectLaw {
    /// GLG(0, λ, λ)
    Glg,
    /// N(0, λ²)
    Normal,
}

pub fn draw_random_effect<R: Rng + ?Sized>(law: RandomEffectLaw, lambda: f64, rng: &mut R) -> Result<f64> {
    match law {
        RandomEffectLaw::Glg => Ok(glg::sample(&GlgParams::random_intercept(lambda)?, rng)),
        RandomEffectLaw::Normal => {
            let z: f64 = StandardNormal.sample(rng);
            Ok(lambda * z)
        }
    }
}

/// y_j ~ Bernoulli(1 − exp(−exp(x_jᵀβ + b))), independently given b.
pub fn generate_cluster<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    random_effect: f64,
    rng: &mut R,
) -> Vec<u8> {
    let eta = x * beta;
    eta.iter()
        .map(|&e| {
            let u = -(-(e + random_effect).exp()).exp_m1();
            let draw: f64 = rng.random();
            u8::from(draw < u)
        })
        .collect()
}

/// New responses for the designs of `data`, one random effect per cluster.
pub fn simulate_responses<R: Rng + ?Sized>(
    data: &Dataset,
    beta: &DVector<f64>,
    lambda: f64,
    law: RandomEffectLaw,
    rng: &mut R,
) -> Result<Dataset> {
    let clusters = data
        .clusters
        .iter()
        .map(|c| {
            let b = draw_random_effect(law, lambda, rng)?;
            ClusterData::new(generate_cluster(&c.x, beta, b, rng), c.x.clone())
        })
        .collect::<Result<_>>()?;
    Dataset::new(clusters, data.covariate_names.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSizeRule {
    Fixed(usize),
    /// m ~ Uniform{min, …, max}
    Uniform { min: usize, max: usize },
}

impl Default for ClusterSizeRule {
    fn default() -> Self {
        ClusterSizeRule::Fixed(5)
    }
}

impl ClusterSizeRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClusterSizeRule::Fixed(m) if m >= 1 => Ok(()),
            ClusterSizeRule::Uniform { min, max } if min >= 1 && min <= max => Ok(()),
            other => Err(Error::Config(format!("invalid cluster size rule {other:?}"))),
        }
    }

    pub fn max(&self) -> usize {
        match *self {
            ClusterSizeRule::Fixed(m) => m,
            ClusterSizeRule::Uniform { max, .. } => max,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            ClusterSizeRule::Fixed(m) => m,
            ClusterSizeRule::Uniform { min, max } => rng.random_range(min..=max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLaw {
    Uniform01,
    Binary,
    StandardNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueTheta {
    pub beta0: f64,
    pub beta1: f64,
    pub lambda: f64,
}

impl Default for TrueTheta {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta1: -1.0,
            lambda: 1.0,
        }
    }
}

/// Draws n clusters with an intercept and one observation-level
/// covariate.
#[allow(clippy::too_many_arguments)]
pub fn generate_dataset<R: Rng + ?Sized>(
    n: usize,
    sizes: ClusterSizeRule,
    covariate: CovariateLaw,
    binary_probability: f64,
    truth: &TrueTheta,
    law: RandomEffectLaw,
    rng: &mut R,
) -> Result<Dataset> {
    let beta = DVector::from_vec(vec![truth.beta0, truth.beta1]);
    let coin = Bernoulli::new(binary_probability)
        .map_err(|e| Error::Config(format!("binary covariate probability: {e}")))?;
    let mut clusters = Vec::with_capacity(n);
    for _ in 0..n {
        let m = sizes.draw(rng);
        let mut x = DMatrix::from_element(m, 2, 1.0);
        for j in 0..m {
            x[(j, 1)] = match covariate {
                CovariateLaw::Uniform01 => rng.random::<f64>(),
                CovariateLaw::Binary => f64::from(u8::from(coin.sample(rng))),
                CovariateLaw::StandardNormal => StandardNormal.sample(rng),
            };
        }
        let b = draw_random_effect(law, truth.lambda, rng)?;
        let y = generate_cluster(&x, &beta, b, rng);
        clusters.push(ClusterData::new(y, x)?);
    }
    Dataset::new(clusters, vec![INTERCEPT_NAME.into(), "x1".into()])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCScenarioConfig {
    pub scenario_id: u8,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub cluster_size: ClusterSizeRule,
    pub true_theta: TrueTheta,
    pub covariate_law: CovariateLaw,
    pub binary_probability: f64,
    pub generator: RandomEffectLaw,
    pub fitter: ModelKind,
    pub seed: u64,
}

/// The (covariate, generator, fitter) triple each scenario is bound to.
pub fn scenario_binding(id: u8) -> Result<(CovariateLaw, RandomEffectLaw, ModelKind)> {
    use CovariateLaw::*;
    match id {
        1 => Ok((Uniform01, RandomEffectLaw::Glg, ModelKind::Mberglg)),
        2 => Ok((Binary, RandomEffectLaw::Glg, ModelKind::Mberglg)),
        3 => Ok((StandardNormal, RandomEffectLaw::Normal, ModelKind::Mberglg)),
        4 => Ok((StandardNormal, RandomEffectLaw::Glg, ModelKind::NormalProbit)),
        5 => Ok((StandardNormal, RandomEffectLaw::Glg, ModelKind::NormalCloglog)),
        other => Err(Error::Config(format!("scenario must be 1–5, got {other}"))),
    }
}

/// Study config as written in JSON; unset fields take scenario defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenarioConfig {
    scenario_id: u8,
    n_grid: Option<Vec<usize>>,
    replicates: Option<usize>,
    cluster_size: Option<ClusterSizeRule>,
    true_theta: Option<TrueTheta>,
    covariate_law: Option<CovariateLaw>,
    binary_probability: Option<f64>,
    generator: Option<RandomEffectLaw>,
    #[serde(default, deserialize_with = "de_fitter")]
    fitter: Option<ModelKind>,
    seed: Option<u64>,
}

fn de_fitter<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<ModelKind>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| match s.as_str() {
        "mberglg-cloglog" => Ok(ModelKind::Mberglg),
        other => other.parse().map_err(serde::de::Error::custom),
    })
    .transpose()
}

impl MCScenarioConfig {
    pub const DEFAULT_N_GRID: [usize; 5] = [30, 60, 90, 120, 150];
    pub const DEFAULT_REPLICATES: usize = 200;

    /// Scenario defaults.
    pub fn scenario(id: u8) -> Result<Self> {
        let (covariate_law, generator, fitter) = scenario_binding(id)?;
        Ok(Self {
            scenario_id: id,
            n_grid: Self::DEFAULT_N_GRID.to_vec(),
            replicates: Self::DEFAULT_REPLICATES,
            cluster_size: ClusterSizeRule::default(),
            true_theta: TrueTheta::default(),
            covariate_law,
            binary_probability: 0.5,
            generator,
            fitter,
            seed: 1,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawScenarioConfig = serde_json::from_str(text)?;
        let mut cfg = Self::scenario(raw.scenario_id)?;
        if let Some(v) = raw.n_grid {
            cfg.n_grid = v;
        }
        if let Some(v) = raw.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = raw.cluster_size {
            cfg.cluster_size = v;
        }
        if let Some(v) = raw.true_theta {
            cfg.true_theta = v;
        }
        if let Some(v) = raw.covariate_law {
            cfg.covariate_law = v;
        }
        if let Some(v) = raw.binary_probability {
            cfg.binary_probability = v;
        }
        if let Some(v) = raw.generator {
            cfg.generator = v;
        }
        if let Some(v) = raw.fitter {
            cfg.fitter = v;
        }
        if let Some(v) = raw.seed {
            cfg.seed = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let (covariate, generator, fitter) = scenario_binding(self.scenario_id)?;
        if (self.covariate_law, self.generator, self.fitter) != (covariate, generator, fitter) {
            return Err(Error::Config(format!(
                "scenario {} is bound to covariate {covariate:?}, generator {generator:?}, fitter {fitter:?}",
                self.scenario_id
            )));
        }
        if self.replicates < 2 {
            return Err(Error::Config("replicates must be at least 2".into()));
        }
        if self.n_grid.iter().any(|&n| n < 2) {
            return Err(Error::Config("every n in the grid must be at least 2".into()));
        }
        self.cluster_size.validate()?;
        if !(self.binary_probability > 0.0 && self.binary_probability < 1.0) {
            return Err(Error::Config("binary_probability must be in (0, 1)".into()));
        }
        let t = &self.true_theta;
        if !(t.beta0.is_finite() && t.beta1.is_finite() && t.lambda > 0.0 && t.lambda.is_finite()) {
            return Err(Error::Config("true_theta needs finite β and λ > 0".into()));
        }
        Ok(())
    }
}

pub const PARAMETERS: [&str; 3] = ["beta0", "beta1", "lambda"];

#[derive(Debug, Clone, PartialEq)]
pub struct MCRow {
    pub scenario: u8,
    pub n: usize,
    pub parameter: String,
    pub bias: f64,
    pub rmse: f64,
    pub coverage95: f64,
    /// Converged replicates entering the aggregates.
    pub replicates: usize,
    pub convergence_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MCReport {
    pub rows: Vec<MCRow>,
}

impl MCReport {
    pub fn get(&self, n: usize, parameter: &str) -> Option<&MCRow> {
        self.rows.iter().find(|r| r.n == n && r.parameter == parameter)
    }
}

/// Estimates and 95% intervals for (β₀, β₁, λ) from one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    pub estimates: [f64; 3],
    pub intervals: [Option<(f64, f64)>; 3],
}

impl ReplicateOutcome {
    pub fn from_report(report: &FitReport) -> Self {
        Self {
            estimates: [report.estimates[0], report.estimates[1], report.lambda_hat],
            intervals: [report.wald_interval(0), report.wald_interval(1), report.lambda_interval()],
        }
    }
}

/// One replicate: `None` when the fit failed or did not converge.
pub fn run_replicate(cfg: &MCScenarioConfig, n: usize, replicate: usize) -> Option<ReplicateOutcome> {
    let seed = derive_seed(cfg.seed, &[cfg.scenario_id as u64, n as u64, replicate as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = generate_dataset(
        n,
        cfg.cluster_size,
        cfg.covariate_law,
        cfg.binary_probability,
        &cfg.true_theta,
        cfg.generator,
        &mut rng,
    )
    .ok()?;
    let fit_cfg = FitConfig {
        seed,
        ..FitConfig::default()
    };
    let report = fit_model(&data, cfg.fitter, &fit_cfg).ok()?;
    report.converged.then(|| ReplicateOutcome::from_report(&report))
}

/// Bias, RMSE and coverage over the converged replicates.
pub fn aggregate(
    scenario: u8,
    n: usize,
    truth: &TrueTheta,
    outcomes: &[Option<ReplicateOutcome>],
) -> Vec<MCRow> {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().flatten().collect();
    let rate = ok.len() as f64 / outcomes.len().max(1) as f64;
    let targets = [truth.beta0, truth.beta1, truth.lambda];
    PARAMETERS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let count = ok.len() as f64;
            let errors: Vec<f64> = ok.iter().map(|o| o.estimates[k] - targets[k]).collect();
            let bias = errors.iter().sum::<f64>() / count;
            let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / count).sqrt();
            let covered = ok
                .iter()
                .filter(|o| o.intervals[k].is_some_and(|(lo, hi)| lo <= targets[k] && targets[k] <= hi))
                .count();
            MCRow {
                scenario,
                n,
                parameter: name.to_string(),
                bias,
                rmse,
                coverage95: covered as f64 / count,
                replicates: ok.len(),
                convergence_rate: rate,
            }
        })
        .collect()
}

pub fn run_study(cfg: &MCScenarioConfig) -> Result<MCReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let outcomes: Vec<Option<ReplicateOutcome>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, n, r))
            .collect();
        rows.extend(aggregate(cfg.scenario_id, n, &cfg.true_theta, &outcomes));
    }
    Ok(MCReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const REPORT_COLUMNS: [&str; 7] = [
    "scenario",
    "n",
    "parameter",
    "metric",
    "value",
    "replicates",
    "convergence_rate",
];

const METRICS: [&str; 3] = ["bias", "rmse", "coverage95"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LongRow {
    scenario: u8,
    n: usize,
    parameter: String,
    metric: String,
    value: Option<f64>,
    replicates: usize,
    convergence_rate: Option<f64>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn long_rows(report: &MCReport) -> Vec<LongRow> {
    report
        .rows
        .iter()
        .flat_map(|r| {
            [r.bias, r.rmse, r.coverage95]
                .into_iter()
                .zip(METRICS)
                .map(move |(v, metric)| LongRow {
                    scenario: r.scenario,
                    n: r.n,
                    parameter: r.parameter.clone(),
                    metric: metric.to_string(),
                    value: finite(v),
                    replicates: r.replicates,
                    convergence_rate: finite(r.convergence_rate),
                })
        })
        .collect()
}

/// Long-format table with one row per (scenario, n, parameter, metric).
pub fn summarize_report(report: &MCReport, format: ReportFormat) -> Result<String> {
    let rows = long_rows(report);
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&rows)?),
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS)?;
            for r in &rows {
                let fmt = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| format!("{x:?}"));
                w.write_record([
                    r.scenario.to_string(),
                    r.n.to_string(),
                    r.parameter.clone(),
                    r.metric.clone(),
                    fmt(r.value),
                    r.replicates.to_string(),
                    fmt(r.convergence_rate),
                ])?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
    }
}

/// Inverse of [`summarize_report`].
pub fn parse_report(text: &str, format: ReportFormat) -> Result<MCReport> {
    let rows: Vec<LongRow> = match format {
        ReportFormat::Json => serde_json::from_str(text)?,
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
            if header != REPORT_COLUMNS {
                return Err(Error::Config(format!("unexpected report columns {header:?}")));
            }
            let num = |s: &str, row: usize, col: &str| -> Result<Option<f64>> {
                let v: f64 = s.parse().map_err(|_| Error::Data {
                    row,
                    column: col.into(),
                    message: format!("not a number: {s}"),
                })?;
                Ok(finite(v))
            };
            let mut out = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec?;
                let int = |k: usize| -> Result<usize> {
                    rec[k].parse().map_err(|_| Error::Data {
                        row: i + 1,
                        column: REPORT_COLUMNS[k].into(),
                        message: format!("not an integer: {}", &rec[k]),
                    })
                };
                out.push(LongRow {
                    scenario: int(0)? as u8,
                    n: int(1)?,
                    parameter: rec[2].to_string(),
                    metric: rec[3].to_string(),
                    value: num(&rec[4], i + 1, "value")?,
                    replicates: int(5)?,
                    convergence_rate: num(&rec[6], i + 1, "convergence_rate")?,
                });
            }
            out
        }
    };

    let mut out: Vec<MCRow> = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        let pos = out
            .iter()
            .position(|m| m.scenario == r.scenario && m.n == r.n && m.parameter == r.parameter);
        let entry = match pos {
            Some(k) => &mut out[k],
            None => {
                out.push(MCRow {
                    scenario: r.scenario,
                    n: r.n,
                    parameter: r.parameter.clone(),
                    bias: f64::NAN,
                    rmse: f64::NAN,
                    coverage95: f64::NAN,
                    replicates: r.replicates,
                    convergence_rate: r.convergence_rate.unwrap_or(f64::NAN),
                });
                out.last_mut().expect("just pushed")
            }
        };
        let v = r.value.unwrap_or(f64::NAN);
        match r.metric.as_str() {
            "bias" => entry.bias = v,
            "rmse" => entry.rmse = v,
            "coverage95" => entry.coverage95 = v,
            other => {
                return Err(Error::Data {
                    row: i + 1,
                    column: "metric".into(),
                    message: format!("unknown metric {other}"),
                })
            }
        }
    }
    Ok(MCReport { rows: out })
}

/// How a simulated covariate is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum CovariateSource {
    Uniform01,
    Bernoulli { p: f64 },
    StandardNormal,
    /// Value at the j-th visit.
    Visit { values: Vec<f64> },
    /// Product of previously listed covariates.
    Product { of: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Subject,
    #[default]
    Observation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: CovariateSource,
    #[serde(default)]
    pub level: Level,
}

fn default_response() -> String {
    "y".into()
}

fn default_subject() -> String {
    "id".into()
}

fn default_generator() -> RandomEffectLaw {
    RandomEffectLaw::Glg
}

/// Config for simulating a long-format file from the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub n_subjects: usize,
    #[serde(default)]
    pub cluster_size: ClusterSizeRule,
    pub covariates: Vec<CovariateSpec>,
    /// Intercept first, then one coefficient per covariate.
    pub beta: Vec<f64>,
    pub lambda: f64,
    #[serde(default = "default_generator")]
    pub generator: RandomEffectLaw,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_response")]
    pub response: String,
    #[serde(default = "default_subject")]
    pub subject: String,
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::Config("n_subjects must be positive".into()));
        }
        self.cluster_size.validate()?;
        if self.beta.len() != self.covariates.len() + 1 {
            return Err(Error::Config(format!(
                "beta needs {} entries (intercept plus one per covariate), got {}",
                self.covariates.len() + 1,
                self.beta.len()
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        for (k, c) in self.covariates.iter().enumerate() {
            match &c.source {
                CovariateSource::Bernoulli { p } if !(*p >= 0.0 && *p <= 1.0) => {
                    return Err(Error::Config(format!("covariate `{}`: p must be in [0, 1]", c.name)))
                }
                CovariateSource::Visit { values } if values.len() < self.cluster_size.max() => {
                    return Err(Error::Config(format!(
                        "covariate `{}` lists {} visit values but clusters reach {}",
                        c.name,
                        values.len(),
                        self.cluster_size.max()
                    )))
                }
                CovariateSource::Product { of } => {
                    for f in of {
                        if !self.covariates[..k].iter().any(|e| &e.name == f) {
                            return Err(Error::Config(format!(
                                "covariate `{}` multiplies `{f}`, which must be listed before it",
                                c.name
                            )));
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> crate::io::ModelSpec {
        crate::io::ModelSpec {
            response: self.response.clone(),
            subject: self.subject.clone(),
            covariates: self.covariates.iter().map(|c| c.name.clone()).collect(),
            intercept: true,
        }
    }
}

/// Draws a dataset, with subject ids 1…n, from a [`SimulateConfig`].
pub fn simulate(cfg: &SimulateConfig) -> Result<LongTable> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let beta = DVector::from_vec(cfg.beta.clone());
    let q = cfg.covariates.len();
    let mut clusters = Vec::with_capacity(cfg.n_subjects);
    for _ in 0..cfg.n_subjects {
        let m = cfg.cluster_size.draw(&mut rng);
        let mut x = DMatrix::from_element(m, q + 1, 1.0);
        for (k, c) in cfg.covariates.iter().enumerate() {
            let col = k + 1;
            let draw = |rng: &mut ChaCha8Rng| -> f64 {
                match &c.source {
                    CovariateSource::Uniform01 => rng.random(),
                    CovariateSource::Bernoulli { p } => f64::from(u8::from(rng.random::<f64>() < *p)),
                    CovariateSource::StandardNormal => StandardNormal.sample(rng),
                    _ => 0.0,
                }
            };
            match &c.source {
                CovariateSource::Visit { values } => {
                    for j in 0..m {
                        x[(j, col)] = values[j];
                    }
                }
                CovariateSource::Product { of } => {
                    for j in 0..m {
                        x[(j, col)] = of
                            .iter()
                            .map(|f| {
                                let idx = cfg.covariates.iter().position(|e| &e.name == f).expect("validated");
                                x[(j, idx + 1)]
                            })
                            .product();
                    }
                }
                _ => match c.level {
                    Level::Subject => {
                        let v = draw(&mut rng);
                        for j in 0..m {
                            x[(j, col)] = v;
                        }
                    }
                    Level::Observation => {
                        for j in 0..m {
                            x[(j, col)] = draw(&mut rng);
                        }
                    }
                },
            }
        }
        let b = draw_random_effect(cfg.generator, cfg.lambda, &mut rng)?;
        let y = generate_cluster(&x, &beta, b, &mut rng);
        clusters.push(ClusterData::new(y, x)?);
    }
    let subjects = (1..=cfg.n_subjects).map(|i| i.to_string()).collect();
    Ok(LongTable {
        dataset: Dataset::new(clusters, cfg.model_spec().design_names())?,
        subjects,
    })
}
