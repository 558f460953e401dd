use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mberglg::Precision;

/// One subject: binary responses and the m × p design rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub y: Vec<u8>,
    pub x: DMatrix<f64>,
}

impl ClusterData {
    pub fn new(y: Vec<u8>, x: DMatrix<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                what: "cluster design rows",
                expected: y.len(),
                found: x.nrows(),
            });
        }
        if y.is_empty() {
            return Err(Error::InvalidParameter("cluster with no observations".into()));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("responses must be 0 or 1".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix entry".into()));
        }
        Ok(Self { y, x })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// η = Xβ
    pub fn linear_predictor(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }

    /// μ_j = exp(x_jᵀβ)
    pub fn means(&self, beta: &DVector<f64>) -> Vec<f64> {
        self.linear_predictor(beta).iter().map(|e| e.exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clusters: Vec<ClusterData>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(clusters: Vec<ClusterData>, covariate_names: Vec<String>) -> Result<Self> {
        let p = covariate_names.len();
        if clusters.is_empty() {
            return Err(Error::InvalidParameter("dataset has no clusters".into()));
        }
        if p == 0 {
            return Err(Error::InvalidParameter("design has no columns".into()));
        }
        for c in &clusters {
            if c.x.ncols() != p {
                return Err(Error::DimensionMismatch {
                    what: "covariate columns",
                    expected: p,
                    found: c.x.ncols(),
                });
            }
        }
        Ok(Self {
            clusters,
            covariate_names,
        })
    }

    /// Names default to x1, …, xp.
    pub fn unnamed(clusters: Vec<ClusterData>) -> Result<Self> {
        let p = clusters.first().map_or(0, |c| c.x.ncols());
        Self::new(clusters, (1..=p).map(|j| format!("x{j}")).collect())
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_observations(&self) -> usize {
        self.clusters.iter().map(ClusterData::len).sum()
    }

    pub fn n_successes(&self) -> usize {
        self.clusters
            .iter()
            .flat_map(|c| c.y.iter())
            .filter(|&&v| v == 1)
            .count()
    }

    /// All observations stacked, in cluster order.
    pub fn stacked(&self) -> (Vec<u8>, DMatrix<f64>) {
        let n = self.n_observations();
        let p = self.p();
        let mut y = Vec::with_capacity(n);
        let mut x = DMatrix::zeros(n, p);
        let mut row = 0;
        for c in &self.clusters {
            y.extend_from_slice(&c.y);
            x.rows_mut(row, c.len()).copy_from(&c.x);
            row += c.len();
        }
        (y, x)
    }
}

/// Model parameters θ = (β, φ).
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    pub phi: Precision,
}

impl Theta {
    pub fn new(beta: Vec<f64>, phi: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidParameter("β must have at least one entry".into()));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("β".into()));
        }
        Ok(Self {
            beta: DVector::from_vec(beta),
            phi: Precision::new(phi)?,
        })
    }

    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn lambda(&self) -> f64 {
        self.phi.lambda()
    }

    /// Unconstrained coordinates (β, ζ = ln φ).
    pub fn to_unconstrained(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.p() + 1);
        v.rows_mut(0, self.p()).copy_from(&self.beta);
        v[self.p()] = self.phi.value().ln();
        v
    }

    pub fn from_unconstrained(v: &DVector<f64>) -> Result<Self> {
        let p = v.len() - 1;
        Ok(Self {
            beta: v.rows(0, p).into_owned(),
            phi: Precision::new(v[p].exp())?,
        })
    }
}
