//! QR rotation of `Y = X beta + Z alpha + E` into nuisance, interest and
//! factor-analysis blocks.

use nalgebra::{DMatrix, DVector};

use crate::data::ExpressionDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RotatedModel {
    /// Upper-left (k-1) x (k-1) block of R. Unused downstream.
    pub r11: DMatrix<f64>,
    /// Column of R above `r22`. Unused downstream.
    pub r12: DVector<f64>,
    pub r22: f64,
    /// First k-1 rows of Q^T Y. Unused downstream.
    pub y1: DMatrix<f64>,
    /// Row k of Q^T Y.
    pub y2: DVector<f64>,
    /// Last n-k rows of Q^T Y; the factor-analysis input.
    pub y3: DMatrix<f64>,
    /// OLS coefficient of the covariate of interest, `y2 / r22`.
    pub betahat: DVector<f64>,
    /// Last diagonal element of (X^T X)^{-1}, i.e. `1 / r22^2`.
    pub xtx_inv_diag: f64,
}

impl RotatedModel {
    pub fn p(&self) -> usize {
        self.y2.len()
    }

    /// Residual degrees of freedom, n - k.
    pub fn resid_df(&self) -> usize {
        self.y3.nrows()
    }
}

pub fn rotate(ds: &ExpressionDataset) -> RotatedModel {
    let x = ds.x();
    let (n, k) = (x.nrows(), x.ncols());
    let qr = x.clone().qr();
    let mut r = qr.r();
    let mut qty = ds.y().clone();
    qr.q_tr_mul(&mut qty);
    // fix the sign so diag(R) >= 0
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            qty.row_mut(i).neg_mut();
        }
    }
    let r22 = r[(k - 1, k - 1)];
    let y2: DVector<f64> = qty.row(k - 1).transpose();
    let betahat = &y2 / r22;
    RotatedModel {
        r11: r.view((0, 0), (k - 1, k - 1)).into_owned(),
        r12: r.view((0, k - 1), (k - 1, 1)).column(0).into_owned(),
        r22,
        y1: qty.rows(0, k - 1).into_owned(),
        y2,
        y3: qty.rows(k, n - k).into_owned(),
        betahat,
        xtx_inv_diag: 1.0 / (r22 * r22),
    }
}

/// `s_j^2 = sigma_j^2 / r22^2`, returned as standard errors `s_j`.
pub fn ols_standard_errors(rm: &RotatedModel, sigma2: &[f64]) -> Result<Vec<f64>> {
    if sigma2.len() != rm.p() {
        return Err(Error::DimensionMismatch(format!(
            "{} variances for {} genes",
            sigma2.len(),
            rm.p()
        )));
    }
    sigma2
        .iter()
        .enumerate()
        .map(|(j, &s2)| {
            if s2 > 0.0 && s2.is_finite() {
                Ok((s2 * rm.xtx_inv_diag).sqrt())
            } else {
                Err(Error::NonPositiveVariance(j))
            }
        })
        .collect()
}
