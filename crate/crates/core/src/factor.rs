//! Factor analysis of the residual block, variance moderation, and the
//! control-gene regression with t-distributed errors.

use log::warn;
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::digamma;

use crate::dist::{inv_trigamma, trigamma, Noise};
use crate::error::{Error, Result};

/// Relative floor applied to residual variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FactorEstimate {
    /// q x p loadings. Only the rowspace is meaningful.
    pub alpha: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub q: usize,
    /// Degrees of freedom behind `sigma2` (n - k - q).
    pub df: usize,
    /// Genes whose variance was raised to the floor.
    pub floored: Vec<usize>,
}

/// Rank-q truncated SVD of `y3` ((n-k) x p).
///
/// Loadings follow `Z3 = sqrt(n-k) U_q`, `alpha = D_q V_q^T / sqrt(n-k)`;
/// residual variances divide by `n - k - q`.
pub fn truncated_pca(y3: &DMatrix<f64>, q: usize) -> Result<FactorEstimate> {
    let (m, p) = (y3.nrows(), y3.ncols());
    if y3.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("factor-analysis input"));
    }
    if m == 0 || p == 0 {
        return Err(Error::DimensionMismatch("empty factor-analysis input".into()));
    }
    if q > 0 {
        let max = m.min(p) - 1;
        if q > max {
            return Err(Error::QTooLarge { q, max });
        }
    }
    let df = m - q;
    let (alpha, resid) = if q == 0 {
        (DMatrix::zeros(0, p), y3.clone())
    } else {
        let svd = y3.clone().svd(true, true);
        let u = svd.u.as_ref().expect("requested U");
        let vt = svd.v_t.as_ref().expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let keep = &order[..q];
        let scale = (m as f64).sqrt();
        let alpha = DMatrix::from_fn(q, p, |r, j| svd.singular_values[keep[r]] * vt[(keep[r], j)] / scale);
        let zt = DMatrix::from_fn(m, q, |i, r| u[(i, keep[r])] * scale);
        let resid = y3 - zt * &alpha;
        (alpha, resid)
    };
    let sigma2: Vec<f64> = resid.column_iter().map(|c| c.norm_squared() / df as f64).collect();
    let (sigma2, floored) = floor_variances(sigma2);
    if !floored.is_empty() {
        warn!("{} residual variances were floored", floored.len());
    }
    Ok(FactorEstimate {
        alpha,
        sigma2,
        q,
        df,
        floored,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn floor_variances(mut sigma2: Vec<f64>) -> (Vec<f64>, Vec<usize>) {
    let med = median(&sigma2);
    let floor = if med > 0.0 {
        VARIANCE_FLOOR * med
    } else {
        f64::MIN_POSITIVE
    };
    let mut floored = Vec::new();
    for (j, s) in sigma2.iter_mut().enumerate() {
        if *s < floor {
            *s = floor;
            floored.push(j);
        }
    }
    (sigma2, floored)
}

/// Output of [`moderate_variances`]: shrunken variances and the fitted
/// scaled inverse-chi-squared prior.
#[derive(Debug, Clone)]
pub struct ModeratedVariances {
    pub sigma2: Vec<f64>,
    /// Prior degrees of freedom; 0 when nothing was shrunk, infinite for full pooling.
    pub prior_df: f64,
    pub prior_var: f64,
}

/// Empirical-Bayes moderation: `(d0 s0^2 + df sigma_j^2) / (d0 + df)` with
/// `(d0, s0^2)` fitted by moments of the log variances.
pub fn moderate_variances(sigma2: &[f64], df: usize) -> Result<ModeratedVariances> {
    if df == 0 {
        return Err(Error::InvalidInput("moderation needs df >= 1".into()));
    }
    if let Some(j) = sigma2.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::NonPositiveVariance(j));
    }
    let first = sigma2[0];
    if sigma2.len() < 2 || sigma2.iter().all(|&s| s == first) {
        return Ok(ModeratedVariances {
            sigma2: sigma2.to_vec(),
            prior_df: 0.0,
            prior_var: first,
        });
    }
    let d = df as f64;
    let shift = digamma(d / 2.0) - (d / 2.0).ln();
    let e: Vec<f64> = sigma2.iter().map(|s| s.ln() - shift).collect();
    let n = e.len() as f64;
    let emean = e.iter().sum::<f64>() / n;
    let evar = e.iter().map(|x| (x - emean).powi(2)).sum::<f64>() / (n - 1.0) - trigamma(d / 2.0);
    let (d0, s0) = if evar > 0.0 {
        let d0 = 2.0 * inv_trigamma(evar);
        (d0, (emean + digamma(d0 / 2.0) - (d0 / 2.0).ln()).exp())
    } else {
        (f64::INFINITY, emean.exp())
    };
    Ok(ModeratedVariances {
        sigma2: moderate_with_prior(sigma2, df, d0, s0),
        prior_df: d0,
        prior_var: s0,
    })
}

/// Posterior variances under a fixed `(d0, s0^2)` prior.
pub fn moderate_with_prior(sigma2: &[f64], df: usize, d0: f64, s0: f64) -> Vec<f64> {
    let d = df as f64;
    if d0.is_infinite() {
        return vec![s0; sigma2.len()];
    }
    sigma2.iter().map(|&s| (d0 * s0 + d * s) / (d0 + d)).collect()
}

#[derive(Debug, Clone)]
pub struct ControlGeneFit {
    pub z: DVector<f64>,
    pub xi: f64,
    /// Log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// The variance update hit the floor (residuals are essentially zero).
    pub xi_at_floor: bool,
}

#[derive(Debug, Clone)]
pub struct TemOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for TemOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            rel_tol: 1e-8,
        }
    }
}

const XI_FLOOR: f64 = 1e-12;

/// Log-likelihood of `bhat_j ~ t_{nu_j}(alpha_j^T z, xi s2_j)` over the control genes.
pub fn control_gene_loglik(
    bhat: &[f64],
    alpha: &DMatrix<f64>,
    s2: &[f64],
    nu: &[f64],
    z: &DVector<f64>,
    xi: f64,
) -> f64 {
    (0..bhat.len())
        .map(|j| {
            let mean = alpha.column(j).dot(z);
            let sd = (xi * s2[j]).sqrt();
            Noise::student_t(nu[j]).ln_pdf((bhat[j] - mean) / sd) - sd.ln()
        })
        .sum()
}

pub fn control_gene_tem(
    bhat: &[f64],
    alpha: &DMatrix<f64>,
    s2: &[f64],
    nu: &[f64],
    init_z: &DVector<f64>,
    init_xi: f64,
) -> Result<ControlGeneFit> {
    control_gene_tem_opts(bhat, alpha, s2, nu, init_z, init_xi, &TemOptions::default())
}

/// EM for a regression with t errors via the inverse-gamma scale mixture:
/// E-step weights `w_j = (nu_j + 1) / (r_j^2 / (xi s_j^2) + nu_j)`, then
/// weighted least squares for `z` and a closed-form `xi`.
pub fn control_gene_tem_opts(
    bhat: &[f64],
    alpha: &DMatrix<f64>,
    s2: &[f64],
    nu: &[f64],
    init_z: &DVector<f64>,
    init_xi: f64,
    opts: &TemOptions,
) -> Result<ControlGeneFit> {
    let m = bhat.len();
    let q = alpha.nrows();
    if alpha.ncols() != m || s2.len() != m || nu.len() != m || init_z.len() != q {
        return Err(Error::DimensionMismatch("control-gene inputs disagree in size".into()));
    }
    if m < q + 1 {
        return Err(Error::InvalidInput(format!(
            "need at least {} control genes, got {m}",
            q + 1
        )));
    }
    if let Some(j) = s2.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::NonPositiveVariance(j));
    }
    if nu.iter().any(|&v| !(v > 0.0)) || !(init_xi > 0.0) {
        return Err(Error::InvalidInput("degrees of freedom and xi must be positive".into()));
    }

    let mut z = init_z.clone();
    let mut xi = init_xi;
    let mut trace = vec![control_gene_loglik(bhat, alpha, s2, nu, &z, xi)];
    let mut converged = false;
    let mut xi_at_floor = false;

    for _ in 0..opts.max_iters {
        let w: Vec<f64> = (0..m)
            .map(|j| {
                let r = bhat[j] - alpha.column(j).dot(&z);
                (nu[j] + 1.0) / (r * r / (xi * s2[j]) + nu[j])
            })
            .collect();
        let mut gram = DMatrix::zeros(q, q);
        let mut rhs = DVector::zeros(q);
        for j in 0..m {
            let wt = w[j] / s2[j];
            let a = alpha.column(j);
            gram += (a * a.transpose()) * wt;
            rhs += a * (wt * bhat[j]);
        }
        if q > 0 {
            z = gram.cholesky().ok_or(Error::SingularWeightedGram)?.solve(&rhs);
        }
        let new_xi = (0..m)
            .map(|j| {
                let r = bhat[j] - alpha.column(j).dot(&z);
                w[j] * r * r / s2[j]
            })
            .sum::<f64>()
            / m as f64;
        if new_xi <= XI_FLOOR {
            xi = XI_FLOOR;
            xi_at_floor = true;
            trace.push(control_gene_loglik(bhat, alpha, s2, nu, &z, xi));
            converged = true;
            break;
        }
        xi = new_xi;
        let ll = control_gene_loglik(bhat, alpha, s2, nu, &z, xi);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() <= opts.rel_tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Ok(ControlGeneFit {
        z,
        xi,
        trace,
        converged,
        xi_at_floor,
    })
}
