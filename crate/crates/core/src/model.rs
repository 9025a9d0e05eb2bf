use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::FactorEstimate;
use crate::rotation::{ols_standard_errors, RotatedModel};

/// Per-gene inputs of the confounded normal-means model
/// `bhat ~ N(beta + alpha^T z, xi diag(shat^2))`.
#[derive(Debug, Clone)]
pub struct EffectSummaries {
    pub betahat: Vec<f64>,
    pub sebetahat: Vec<f64>,
    /// q x p confounder loadings on the `betahat` scale.
    pub alpha: DMatrix<f64>,
}

impl EffectSummaries {
    pub fn new(betahat: Vec<f64>, sebetahat: Vec<f64>, alpha: DMatrix<f64>) -> Result<Self> {
        let p = betahat.len();
        if sebetahat.len() != p || alpha.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "betahat {p}, sebetahat {}, alpha columns {}",
                sebetahat.len(),
                alpha.ncols()
            )));
        }
        if p == 0 {
            return Err(Error::DimensionMismatch("no genes".into()));
        }
        if let Some(j) = sebetahat.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::NonPositiveVariance(j));
        }
        if betahat.iter().chain(alpha.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("effect summaries"));
        }
        Ok(Self {
            betahat,
            sebetahat,
            alpha,
        })
    }

    /// Summaries from the rotated model and a factor fit: `alpha / r22` and
    /// `shat_j = sigma_j / r22`.
    pub fn from_rotation(rm: &RotatedModel, fa: &FactorEstimate) -> Result<Self> {
        let se = ols_standard_errors(rm, &fa.sigma2)?;
        Self::new(rm.betahat.iter().copied().collect(), se, &fa.alpha / rm.r22)
    }

    pub fn p(&self) -> usize {
        self.betahat.len()
    }

    pub fn q(&self) -> usize {
        self.alpha.nrows()
    }

    /// Summaries restricted to the given genes.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            betahat: idx.iter().map(|&j| self.betahat[j]).collect(),
            sebetahat: idx.iter().map(|&j| self.sebetahat[j]).collect(),
            alpha: self.alpha.select_columns(idx),
        }
    }

    /// Copy with loadings replaced by `a * alpha`.
    pub fn with_alpha(&self, alpha: DMatrix<f64>) -> Self {
        Self { alpha, ..self.clone() }
    }

    /// Generalized least squares of `bhat` on `alpha^T` with weights `w_j`.
    pub fn weighted_regression(&self, weights: &[f64]) -> Result<DVector<f64>> {
        weighted_ls(&self.alpha, &self.betahat, weights)
    }
}

/// `(alpha W alpha^T)^{-1} alpha W b` for diagonal `W`.
pub fn weighted_ls(alpha: &DMatrix<f64>, b: &[f64], w: &[f64]) -> Result<DVector<f64>> {
    let q = alpha.nrows();
    if q == 0 {
        return Ok(DVector::zeros(0));
    }
    let gram_rhs = crate::par::sum_vec(b.len(), q * q + q, |j, acc| {
        let a = alpha.column(j);
        for r in 0..q {
            let ar = a[r] * w[j];
            for c in 0..q {
                acc[r * q + c] += ar * a[c];
            }
            acc[q * q + r] += ar * b[j];
        }
    });
    let gram = DMatrix::from_row_slice(q, q, &gram_rhs[..q * q]);
    let rhs = DVector::from_column_slice(&gram_rhs[q * q..]);
    let chol = gram.cholesky().ok_or(Error::SingularWeightedGram)?;
    Ok(chol.solve(&rhs))
}
