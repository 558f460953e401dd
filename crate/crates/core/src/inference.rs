//! Log-likelihood, score and observed information of the MBerGLG
//! regression model.
//!
//! For cluster i with subset terms w_k = (−1)^{k₊} D_k^{−φ} and
//! A_i = Σ_k w_k, every derivative of ln A_i is a signed average
//! E_w[·] = Σ_k w_k(·) / A_i of per-subset quantities. The sums are
//! evaluated relative to the largest term D_min^{−φ} with compensated
//! summation, so the same stabilisation as the pmf carries over.
//!
//! With g_q = ∂D/∂β_q = Σ_j μ_j(1 + k_j − y_j)x_jq, L = ln(D/D_min) and
//! v = L + φ/D:
//!
//! ```text
//! ∂ℓ_i/∂β_q      = E_w[−φ g_q / D]
//! ∂ℓ_i/∂φ        = 1 − ln(1 + E_min/φ) − E_w[v]
//! ∂²ℓ_i/∂β_q∂β_r = E_w[φ(φ+1) g_q g_r / D² − φ h_qr / D] − a_q a_r
//! ∂²ℓ_i/∂β_q∂φ   = E_w[g_q((φL − 1)/D + φ(φ+1)/D²)] + a_q E_w[v]
//! ∂²ℓ_i/∂φ²      = 1/φ + Var_w[v] + E_w[φ/D² − 2/D]
//! ```
//!
//! where h_qr = Σ_j μ_j(1 + k_j − y_j)x_jq x_jr and a_q is the β score.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{ClusterData, Dataset, Theta};
use crate::error::{Error, Result};
use crate::mberglg::{joint_log_pmf, SubsetTerms, DEFAULT_MAX_ONES};
use crate::numerics::NeumaierSum;

/// ℓ, score and observed information at one θ.
#[derive(Debug, Clone)]
pub struct ScoreInfo {
    pub loglik: f64,
    /// (∂/∂β₁, …, ∂/∂β_p, ∂/∂φ)
    pub score: DVector<f64>,
    /// −∂²ℓ/∂θ∂θᵀ in (β, φ)
    pub observed_info: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct ClusterDerivatives {
    loglik: f64,
    gradient: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

fn cluster_derivatives(
    cluster: &ClusterData,
    theta: &Theta,
    want_hessian: bool,
) -> Result<ClusterDerivatives> {
    let p = theta.p();
    let phi = theta.phi.value();
    let mu = cluster.means(&theta.beta);
    let terms = SubsetTerms::new(&cluster.y, &mu, DEFAULT_MAX_ONES)?;
    let x = &cluster.x;

    // Failure rows contribute to every D_k; success rows only when k_j = 1.
    let mut g0 = vec![0.0; p];
    let mut h0 = vec![0.0; p * p];
    for (j, &yj) in cluster.y.iter().enumerate() {
        if yj == 0 {
            accumulate_row(&mut g0, &mut h0, x, j, mu[j], p, want_hessian);
        }
    }
    let n_ones = terms.ones_pos.len();
    let mut g_ones = vec![0.0; n_ones * p];
    let mut h_ones = vec![0.0; n_ones * p * p];
    for (b, &j) in terms.ones_pos.iter().enumerate() {
        accumulate_row(
            &mut g_ones[b * p..(b + 1) * p],
            &mut h_ones[b * p * p..(b + 1) * p * p],
            x,
            j,
            mu[j],
            p,
            want_hessian,
        );
    }

    let d_min = phi + terms.base;
    let mut s0 = NeumaierSum::default();
    let mut s_beta: Vec<NeumaierSum> = vec![NeumaierSum::default(); p];
    let mut s_v = NeumaierSum::default();
    let mut s_vv = NeumaierSum::default();
    let mut s_phiphi = NeumaierSum::default();
    let mut s_bb: Vec<NeumaierSum> = vec![NeumaierSum::default(); if want_hessian { p * p } else { 0 }];
    let mut s_bphi: Vec<NeumaierSum> = vec![NeumaierSum::default(); if want_hessian { p } else { 0 }];

    let mut g = vec![0.0; p];
    let mut h = vec![0.0; p * p];
    for mask in 0..terms.count() {
        let added = terms.added(mask);
        let d = d_min + added;
        let l = (added / d_min).ln_1p();
        let w = SubsetTerms::sign(mask) * (-phi * l).exp();

        g.copy_from_slice(&g0);
        if want_hessian {
            h.copy_from_slice(&h0);
        }
        let mut bits = mask;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            for q in 0..p {
                g[q] += g_ones[b * p + q];
            }
            if want_hessian {
                for qr in 0..p * p {
                    h[qr] += h_ones[b * p * p + qr];
                }
            }
            bits &= bits - 1;
        }

        let v = l + phi / d;
        s0.add(w);
        for q in 0..p {
            s_beta[q].add(w * (-phi * g[q] / d));
        }
        s_v.add(w * v);
        if want_hessian {
            s_vv.add(w * v * v);
            s_phiphi.add(w * (phi / (d * d) - 2.0 / d));
            let c2 = phi * (phi + 1.0) / (d * d);
            for q in 0..p {
                for r in 0..p {
                    s_bb[q * p + r].add(w * (c2 * g[q] * g[r] - phi * h[q * p + r] / d));
                }
                s_bphi[q].add(w * g[q] * ((phi * l - 1.0) / d + c2));
            }
        }
    }

    let total = s0.value();
    if !(total > 0.0) {
        return Err(Error::NumericalBreakdown(format!(
            "subset sum for derivatives cancelled to {total:e}"
        )));
    }
    let mean = |s: &NeumaierSum| s.value() / total;

    let loglik = -phi * (terms.base / phi).ln_1p() + total.ln();
    let a: Vec<f64> = s_beta.iter().map(mean).collect();
    let ev = mean(&s_v);

    let mut gradient = DVector::zeros(p + 1);
    for q in 0..p {
        gradient[q] = a[q];
    }
    gradient[p] = 1.0 - (terms.base / phi).ln_1p() - ev;

    let hessian = want_hessian.then(|| {
        let mut hm = DMatrix::zeros(p + 1, p + 1);
        for q in 0..p {
            for r in 0..p {
                hm[(q, r)] = mean(&s_bb[q * p + r]) - a[q] * a[r];
            }
            let mixed = mean(&s_bphi[q]) + a[q] * ev;
            hm[(q, p)] = mixed;
            hm[(p, q)] = mixed;
        }
        hm[(p, p)] = 1.0 / phi + (mean(&s_vv) - ev * ev) + mean(&s_phiphi);
        hm
    });

    Ok(ClusterDerivatives {
        loglik,
        gradient,
        hessian,
    })
}

fn accumulate_row(
    g: &mut [f64],
    h: &mut [f64],
    x: &DMatrix<f64>,
    row: usize,
    mu: f64,
    p: usize,
    want_hessian: bool,
) {
    for q in 0..p {
        let xq = x[(row, q)];
        g[q] += mu * xq;
        if want_hessian {
            for r in 0..p {
                h[q * p + r] += mu * xq * x[(row, r)];
            }
        }
    }
}

fn check_dims(theta: &Theta, data: &Dataset) -> Result<()> {
    if theta.p() != data.p() {
        return Err(Error::DimensionMismatch {
            what: "β length vs design columns",
            expected: data.p(),
            found: theta.p(),
        });
    }
    Ok(())
}

/// Per-cluster results collected in cluster order, then reduced
/// sequentially so the sum does not depend on thread scheduling.
fn sum_clusters(
    theta: &Theta,
    data: &Dataset,
    want_hessian: bool,
) -> Result<ClusterDerivatives> {
    check_dims(theta, data)?;
    let parts: Vec<ClusterDerivatives> = data
        .clusters
        .par_iter()
        .map(|c| cluster_derivatives(c, theta, want_hessian))
        .collect::<Result<_>>()?;
    let k = theta.p() + 1;
    let mut total = ClusterDerivatives {
        loglik: 0.0,
        gradient: DVector::zeros(k),
        hessian: want_hessian.then(|| DMatrix::zeros(k, k)),
    };
    for part in parts {
        total.loglik += part.loglik;
        total.gradient += part.gradient;
        if let (Some(acc), Some(h)) = (total.hessian.as_mut(), part.hessian) {
            *acc += h;
        }
    }
    Ok(total)
}

/// ℓ(θ) = Σ_i ln f(y_i; μ_i, φ), through the pmf code path.
pub fn loglik(theta: &Theta, data: &Dataset) -> Result<f64> {
    check_dims(theta, data)?;
    let parts: Vec<f64> = data
        .clusters
        .par_iter()
        .map(|c| joint_log_pmf(&c.y, &c.means(&theta.beta), theta.phi))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().sum())
}

/// Analytic score (∂ℓ/∂β, ∂ℓ/∂φ).
pub fn score(theta: &Theta, data: &Dataset) -> Result<DVector<f64>> {
    Ok(sum_clusters(theta, data, false)?.gradient)
}

/// Score in (β, ζ = ln φ): the φ component times φ.
pub fn score_unconstrained(theta: &Theta, data: &Dataset) -> Result<DVector<f64>> {
    let mut g = score(theta, data)?;
    let p = theta.p();
    g[p] *= theta.phi.value();
    Ok(g)
}

/// −∂²ℓ/∂θ∂θᵀ in (β, φ), symmetrised.
pub fn observed_information(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    let h = sum_clusters(theta, data, true)?
        .hessian
        .expect("hessian requested");
    finish_information(-h)
}

/// −∂²ℓ/∂ξ∂ξᵀ in ξ = (β, ζ = ln φ), including the first-order term
/// φ·∂ℓ/∂φ that the chain rule adds to the ζζ entry.
pub fn observed_information_unconstrained(theta: &Theta, data: &Dataset) -> Result<DMatrix<f64>> {
    let total = sum_clusters(theta, data, true)?;
    let p = theta.p();
    let phi = theta.phi.value();
    let mut h = total.hessian.expect("hessian requested");
    for q in 0..p {
        h[(q, p)] *= phi;
        h[(p, q)] *= phi;
    }
    h[(p, p)] = phi * phi * h[(p, p)] + phi * total.gradient[p];
    finish_information(-h)
}

fn finish_information(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observed information entry".into()));
    }
    Ok((&m + m.transpose()) * 0.5)
}

pub fn score_info(theta: &Theta, data: &Dataset) -> Result<ScoreInfo> {
    let total = sum_clusters(theta, data, true)?;
    Ok(ScoreInfo {
        loglik: loglik(theta, data)?,
        score: total.gradient,
        observed_info: finish_information(-total.hessian.expect("hessian requested"))?,
    })
}

/// ℓ and its gradient in (β, ζ) for the optimizer. The value comes from the
/// derivative sums and agrees with [`loglik`] to rounding.
pub(crate) fn loglik_and_gradient_unconstrained(
    x: &DVector<f64>,
    data: &Dataset,
) -> Result<(f64, DVector<f64>)> {
    let theta = Theta::from_unconstrained(x)?;
    let total = sum_clusters(&theta, data, false)?;
    let mut g = total.gradient;
    let p = theta.p();
    g[p] *= theta.phi.value();
    Ok((total.loglik, g))
}

/// Central finite differences with step h_k = rel_step·max(1, |x_k|).
pub fn finite_difference_gradient<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for k in 0..x.len() {
        let h = rel_step * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central finite-difference Jacobian of a vector function; column k is
/// the derivative with respect to x_k.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, rel_step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut columns = Vec::with_capacity(n);
    let mut xp = x.clone();
    for k in 0..n {
        let h = rel_step * x[k].abs().max(1.0);
        xp[k] = x[k] + h;
        let fp = f(&xp)?;
        xp[k] = x[k] - h;
        let fm = f(&xp)?;
        xp[k] = x[k];
        columns.push((fp - fm) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&columns))
}

/// θ ↦ (β, φ) vector used by the finite-difference checks.
pub fn theta_to_vector(theta: &Theta) -> DVector<f64> {
    let p = theta.p();
    let mut v = DVector::zeros(p + 1);
    v.rows_mut(0, p).copy_from(&theta.beta);
    v[p] = theta.phi.value();
    v
}

pub fn theta_from_vector(v: &DVector<f64>) -> Result<Theta> {
    let p = v.len() - 1;
    Theta::new(v.rows(0, p).iter().copied().collect(), v[p])
}
