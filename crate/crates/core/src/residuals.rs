//! Randomized quantile residuals and fixed-parameter simulation envelopes.
//!
//! For observation (i, j) let a = P(Y = 1) = 1 − (φ/(φ + μ))^φ. A uniform
//! draw ν on the interval assigned to the observed y is mapped to
//! r = Φ⁻¹(ν). Two interval conventions are offered:
//!
//! * `DunnSmyth`: [0, 1 − a] for y = 0 and [1 − a, 1] for y = 1, i.e.
//!   [F(y − 1), F(y)]. ν is exactly uniform under the true model.
//! * `Paper`: [0, a] for y = 0 and [a, 1] for y = 1. Agrees with the
//!   above only when a = ½.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Open01};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Theta};
use crate::error::{Error, Result};
use crate::fit::{FitReport, ModelKind};
use crate::mberglg::marginal_mean;
use crate::montecarlo::{derive_seed, simulate_responses, RandomEffectLaw};
use crate::numerics::{normal_quantile, quantile_sorted};

const A_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    Paper,
    #[default]
    DunnSmyth,
}

impl std::str::FromStr for Convention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Convention::Paper),
            "dunn-smyth" => Ok(Convention::DunnSmyth),
            other => Err(Error::Config(format!("unknown residual convention '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRecord {
    pub cluster_index: usize,
    pub within_index: usize,
    pub y: u8,
    pub mu_hat: f64,
    /// Fitted P(Y = 1).
    pub a: f64,
    /// The uniform draw ν.
    pub u_draw: f64,
    pub r_q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub records: Vec<ResidualRecord>,
    pub warnings: Vec<String>,
}

impl Residuals {
    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.r_q).collect()
    }

    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v = self.values();
        v.sort_by(f64::total_cmp);
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeBand {
    /// Position in the sorted residuals, from 0.
    pub index: usize,
    pub lower: f64,
    pub median: f64,
    pub upper: f64,
}

/// Interval [lo, hi] for ν given y and fitted P(Y = 1) = a.
pub fn draw_interval(y: u8, a: f64, convention: Convention) -> (f64, f64) {
    let cut = match convention {
        Convention::Paper => a,
        Convention::DunnSmyth => 1.0 - a,
    };
    if y == 0 {
        (0.0, cut)
    } else {
        (cut, 1.0)
    }
}

/// Maps a Uniform(0, 1) fraction `u` into the interval for `y` and
/// returns (ν, Φ⁻¹(ν)).
pub fn residual_from_fraction(y: u8, a: f64, u: f64, convention: Convention) -> (f64, f64) {
    let (lo, hi) = draw_interval(y, a, convention);
    let nu = (lo + u * (hi - lo)).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    (nu, normal_quantile(nu))
}

/// Residuals at known parameters, one draw per observation in cluster
/// order.
pub fn quantile_residuals_at<R: Rng + ?Sized>(
    theta: &Theta,
    data: &Dataset,
    rng: &mut R,
    convention: Convention,
) -> Result<Residuals> {
    if theta.p() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "β",
            expected: data.p(),
            found: theta.p(),
        });
    }
    let mut records = Vec::with_capacity(data.n_observations());
    let mut clamped = 0usize;
    for (i, cluster) in data.clusters.iter().enumerate() {
        let mu = cluster.means(&theta.beta);
        for (j, (&y, &m)) in cluster.y.iter().zip(&mu).enumerate() {
            let raw = marginal_mean(m, theta.phi)?;
            let a = raw.clamp(A_FLOOR, 1.0 - A_FLOOR);
            if a != raw {
                clamped += 1;
            }
            let u: f64 = Open01.sample(rng);
            let (nu, r) = residual_from_fraction(y, a, u, convention);
            records.push(ResidualRecord {
                cluster_index: i,
                within_index: j,
                y,
                mu_hat: m,
                a,
                u_draw: nu,
                r_q: r,
            });
        }
    }
    let warnings = if clamped > 0 {
        vec![format!(
            "{clamped} fitted probabilities clamped to [{A_FLOOR:e}, 1 − {A_FLOOR:e}]"
        )]
    } else {
        Vec::new()
    };
    Ok(Residuals { records, warnings })
}

fn mberglg_theta(fit: &FitReport) -> Result<Theta> {
    if fit.model != ModelKind::Mberglg {
        return Err(Error::Config(
            "quantile residuals are defined for MBerGLG fits only".into(),
        ));
    }
    fit.theta_hat()
}

pub fn quantile_residuals<R: Rng + ?Sized>(
    fit: &FitReport,
    data: &Dataset,
    rng: &mut R,
    convention: Convention,
) -> Result<Residuals> {
    quantile_residuals_at(&mberglg_theta(fit)?, data, rng, convention)
}

/// Pointwise envelope of sorted residuals from data simulated at fixed
/// parameters. Replicate r draws from a stream seeded by (seed, r).
pub fn simulate_envelope_at(
    theta: &Theta,
    data: &Dataset,
    replicates: usize,
    level: f64,
    seed: u64,
    convention: Convention,
) -> Result<Vec<EnvelopeBand>> {
    if replicates < 19 {
        return Err(Error::Config(format!(
            "envelope needs at least 19 replicates, got {replicates}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("envelope level must be in (0, 1), got {level}")));
    }
    let lambda = theta.lambda();
    let sims: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[r as u64]));
            let sim = simulate_responses(data, &theta.beta, lambda, RandomEffectLaw::Glg, &mut rng)?;
            Ok(quantile_residuals_at(theta, &sim, &mut rng, convention)?.sorted_values())
        })
        .collect::<Result<_>>()?;

    let n = data.n_observations();
    let tail = (1.0 - level) / 2.0;
    let mut column = vec![0.0; replicates];
    let bands = (0..n)
        .map(|k| {
            for (c, s) in column.iter_mut().zip(&sims) {
                *c = s[k];
            }
            column.sort_by(f64::total_cmp);
            EnvelopeBand {
                index: k,
                lower: quantile_sorted(&column, tail),
                median: quantile_sorted(&column, 0.5),
                upper: quantile_sorted(&column, 1.0 - tail),
            }
        })
        .collect();
    Ok(bands)
}

pub fn simulate_envelope(
    fit: &FitReport,
    data: &Dataset,
    replicates: usize,
    level: f64,
    seed: u64,
    convention: Convention,
) -> Result<Vec<EnvelopeBand>> {
    simulate_envelope_at(&mberglg_theta(fit)?, data, replicates, level, seed, convention)
}

/// Fraction of sorted observed residuals inside their bands.
pub fn envelope_coverage(bands: &[EnvelopeBand], observed_sorted: &[f64]) -> f64 {
    if bands.is_empty() {
        return f64::NAN;
    }
    let inside = bands
        .iter()
        .zip(observed_sorted)
        .filter(|(b, &o)| b.lower <= o && o <= b.upper)
        .count();
    inside as f64 / bands.len() as f64
}
