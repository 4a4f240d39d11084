//! Node-wise least squares: post composite ~ 1 + baseline composite + treatment.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

/// Number of coefficients in the node model.
pub const N_COEF: usize = 3;

pub const COEFFICIENT_NAMES: [&str; N_COEF] = ["intercept", "baseline", "treatment"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinregError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("outcome and design lengths differ")]
    LengthMismatch,
}

pub fn design_row(baseline: f64, treatment: f64) -> [f64; N_COEF] {
    [1.0, baseline, treatment]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeModel {
    pub coefficients: [f64; N_COEF],
    pub standard_errors: [f64; N_COEF],
    pub t_statistics: [f64; N_COEF],
    pub p_values: [f64; N_COEF],
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub sigma2_hat: f64,
    pub rss: f64,
    pub n: usize,
}

impl NodeModel {
    pub fn predict(&self, x: &[f64; N_COEF]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
    }

    pub fn treatment_effect(&self) -> f64 {
        self.coefficients[2]
    }

    /// Rows of (name, estimate, SE, t, p) in coefficient order.
    pub fn coefficient_table(&self) -> Vec<(&'static str, f64, f64, f64, f64)> {
        (0..N_COEF)
            .map(|j| {
                (
                    COEFFICIENT_NAMES[j],
                    self.coefficients[j],
                    self.standard_errors[j],
                    self.t_statistics[j],
                    self.p_values[j],
                )
            })
            .collect()
    }
}

/// Ordinary least squares via Householder QR. Inference uses Student t with
/// n − 3 degrees of freedom.
pub fn fit_ols(y: &[f64], x: &[[f64; N_COEF]]) -> Result<NodeModel, LinregError> {
    let n = y.len();
    if x.len() != n {
        return Err(LinregError::LengthMismatch);
    }
    if n < N_COEF + 1 {
        return Err(LinregError::TooFewObservations { needed: N_COEF + 1, got: n });
    }
    let design = DMatrix::from_fn(n, N_COEF, |i, j| x[i][j]);
    let col_norm = (0..N_COEF)
        .map(|j| design.column(j).norm())
        .fold(0.0_f64, f64::max);
    let qr = design.clone().qr();
    let r = qr.r();
    for j in 0..N_COEF {
        if !(r[(j, j)].abs() > 1e-9 * col_norm) {
            return Err(LinregError::RankDeficient);
        }
    }
    let yv = DVector::from_column_slice(y);
    let qty = qr.q().transpose() * &yv;
    let b = r.solve_upper_triangular(&qty).ok_or(LinregError::RankDeficient)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(N_COEF, N_COEF))
        .ok_or(LinregError::RankDeficient)?;
    let xtx_inv = &r_inv * r_inv.transpose();

    let fitted = &design * &b;
    let residuals: Vec<f64> = (0..n).map(|i| y[i] - fitted[i]).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let df = (n - N_COEF) as f64;
    let sigma2_hat = rss / df;

    let t_dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let mut coefficients = [0.0; N_COEF];
    let mut standard_errors = [0.0; N_COEF];
    let mut t_statistics = [0.0; N_COEF];
    let mut p_values = [0.0; N_COEF];
    for j in 0..N_COEF {
        coefficients[j] = b[j];
        standard_errors[j] = (sigma2_hat * xtx_inv[(j, j)]).sqrt();
        let (t, p) = if standard_errors[j] > 0.0 {
            let t = b[j] / standard_errors[j];
            (t, (2.0 * t_dist.sf(t.abs())).min(1.0))
        } else if b[j] == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(b[j]), 0.0)
        };
        t_statistics[j] = t;
        p_values[j] = p;
    }
    Ok(NodeModel {
        coefficients,
        standard_errors,
        t_statistics,
        p_values,
        residuals,
        sigma2_hat,
        rss,
        n,
    })
}

/// Per-observation estimating-function contributions ψᵢ = xᵢ·rᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: Vec<[f64; N_COEF]>,
}

impl ScoreMatrix {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn column_sums(&self) -> [f64; N_COEF] {
        let mut s = [0.0; N_COEF];
        for row in &self.rows {
            for j in 0..N_COEF {
                s[j] += row[j];
            }
        }
        s
    }
}

pub fn score_contributions(model: &NodeModel, x: &[[f64; N_COEF]]) -> ScoreMatrix {
    let rows = x
        .iter()
        .zip(&model.residuals)
        .map(|(xi, &r)| [xi[0] * r, xi[1] * r, xi[2] * r])
        .collect();
    ScoreMatrix { rows }
}

/// Sufficient statistics of a least-squares problem on centered data, used
/// to evaluate residual sums of squares for many row subsets quickly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrossProducts {
    pub xtx: [[f64; N_COEF]; N_COEF],
    pub xty: [f64; N_COEF],
    pub yty: f64,
    pub n: usize,
    pub n_treated: usize,
}

impl CrossProducts {
    pub fn add(&mut self, x: &[f64; N_COEF], y: f64, treated: bool) {
        for a in 0..N_COEF {
            for b in 0..N_COEF {
                self.xtx[a][b] += x[a] * x[b];
            }
            self.xty[a] += x[a] * y;
        }
        self.yty += y * y;
        self.n += 1;
        self.n_treated += treated as usize;
    }

    pub fn merged(&self, other: &Self) -> Self {
        let mut out = *self;
        for a in 0..N_COEF {
            for b in 0..N_COEF {
                out.xtx[a][b] += other.xtx[a][b];
            }
            out.xty[a] += other.xty[a];
        }
        out.yty += other.yty;
        out.n += other.n;
        out.n_treated += other.n_treated;
        out
    }

    pub fn minus(&self, other: &Self) -> Self {
        let mut out = *self;
        for a in 0..N_COEF {
            for b in 0..N_COEF {
                out.xtx[a][b] -= other.xtx[a][b];
            }
            out.xty[a] -= other.xty[a];
        }
        out.yty -= other.yty;
        out.n -= other.n;
        out.n_treated -= other.n_treated;
        out
    }

    /// Residual sum of squares of the least-squares fit, or `None` when the
    /// subset cannot support the model (single arm or singular cross
    /// products).
    pub fn rss(&self) -> Option<f64> {
        if self.n < N_COEF + 1 || self.n_treated == 0 || self.n_treated == self.n {
            return None;
        }
        let m = Matrix3::from_fn(|a, b| self.xtx[a][b]);
        let scale = (0..N_COEF).map(|j| m[(j, j)]).fold(0.0_f64, f64::max);
        let chol = m.cholesky()?;
        let l = chol.l();
        if (0..N_COEF).any(|j| !(l[(j, j)] * l[(j, j)] > 1e-10 * scale)) {
            return None;
        }
        let rhs = Vector3::from_column_slice(&self.xty);
        let b = chol.solve(&rhs);
        Some((self.yty - b.dot(&rhs)).max(0.0))
    }
}
