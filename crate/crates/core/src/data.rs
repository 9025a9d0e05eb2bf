//! Validated expression datasets and the contrast transformation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Which linear combination of the coefficient rows is of interest.
#[derive(Debug, Clone, PartialEq)]
pub enum Interest {
    /// Zero-based column of `X`.
    Column(usize),
    /// Contrast vector `c` over the columns of `X`.
    Contrast(Vec<f64>),
}

/// `Y` (n x p) and `X` (n x k), arranged so the covariate of interest is the
/// last column of `x`.
#[derive(Debug, Clone)]
pub struct ExpressionDataset {
    y: DMatrix<f64>,
    x: DMatrix<f64>,
    /// Original column index of each column of `x`; `None` for transformed designs.
    column_origin: Option<Vec<usize>>,
}

impl ExpressionDataset {
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn column_origin(&self) -> Option<&[usize]> {
        self.column_origin.as_deref()
    }
}

/// Numerical rank using the relative singular-value cutoff [`RANK_TOL`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

pub fn validate_dataset(y: DMatrix<f64>, x: DMatrix<f64>, interest: Interest) -> Result<ExpressionDataset> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} rows but X has {} rows",
            y.nrows(),
            n
        )));
    }
    if k == 0 {
        return Err(Error::DimensionMismatch("X has no columns".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("Y"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput("X"));
    }
    if n < k + 1 {
        return Err(Error::TooFewSamples { n, required: k + 1 });
    }
    let rank = numerical_rank(&x);
    if rank < k {
        return Err(Error::RankDeficientDesign { rank, k });
    }
    match interest {
        Interest::Column(idx) => {
            if idx >= k {
                return Err(Error::InterestOutOfRange(idx));
            }
            let order: Vec<usize> = (0..k).filter(|&c| c != idx).chain(std::iter::once(idx)).collect();
            let x = DMatrix::from_fn(n, k, |i, j| x[(i, order[j])]);
            Ok(ExpressionDataset {
                y,
                x,
                column_origin: Some(order),
            })
        }
        Interest::Contrast(c) => {
            if c.len() != k {
                return Err(Error::DimensionMismatch(format!(
                    "contrast has length {} but X has {} columns",
                    c.len(),
                    k
                )));
            }
            let ds = ExpressionDataset {
                y,
                x,
                column_origin: Some((0..k).collect()),
            };
            let spec = ContrastSpec::new(DVector::from_vec(c))?;
            Ok(apply_contrast(&ds, &spec))
        }
    }
}

/// A contrast `c` together with an orthonormal basis `L` of its orthogonal
/// complement.
#[derive(Debug, Clone)]
pub struct ContrastSpec {
    c: DVector<f64>,
    l: DMatrix<f64>,
}

impl ContrastSpec {
    /// Builds `L` from the Householder reflector mapping `c / |c|` onto `e_1`.
    pub fn new(c: DVector<f64>) -> Result<Self> {
        let norm = c.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroContrast);
        }
        let k = c.len();
        let u = &c / norm;
        // v = u - sign(u_0) e_1 avoids cancellation
        let mut v = u.clone();
        let s = if u[0] >= 0.0 { 1.0 } else { -1.0 };
        v[0] += s;
        let vv = v.dot(&v);
        let h = DMatrix::<f64>::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
        // columns 1.. of the reflector are orthonormal and orthogonal to c
        let l = h.columns(1, k - 1).into_owned();
        Ok(Self { c, l })
    }

    /// Uses a caller-supplied basis; it must be orthonormal and orthogonal to `c`.
    pub fn with_basis(c: DVector<f64>, l: DMatrix<f64>) -> Result<Self> {
        let k = c.len();
        if !(c.norm() > 0.0) {
            return Err(Error::ZeroContrast);
        }
        if l.nrows() != k || l.ncols() + 1 != k {
            return Err(Error::DimensionMismatch(format!(
                "basis must be {} x {}, got {} x {}",
                k,
                k.saturating_sub(1),
                l.nrows(),
                l.ncols()
            )));
        }
        let gram_err = (l.transpose() * &l - DMatrix::identity(k - 1, k - 1)).abs().max();
        let orth_err = (c.transpose() * &l).abs().max() / c.norm();
        if gram_err > 1e-10 || orth_err > 1e-10 {
            return Err(Error::InvalidInput(
                "basis is not an orthonormal complement of c".into(),
            ));
        }
        Ok(Self { c, l })
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// The k x k matrix with rows `c^T` then `L^T`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let k = self.c.len();
        let mut m = DMatrix::zeros(k, k);
        m.row_mut(0).copy_from(&self.c.transpose());
        m.rows_mut(1, k - 1).copy_from(&self.l.transpose());
        m
    }

    /// `(c / |c|^2, L)`, the inverse of [`stacked`](Self::stacked).
    pub fn stacked_inverse(&self) -> DMatrix<f64> {
        let k = self.c.len();
        let mut m = DMatrix::zeros(k, k);
        m.column_mut(0).copy_from(&(&self.c / self.c.norm_squared()));
        m.columns_mut(1, k - 1).copy_from(&self.l);
        m
    }
}

/// Rewrites the design as `(X L, X c / |c|^2)` so that the coefficient of the
/// last column equals `c^T beta`. `c` is expressed in the dataset's current
/// column order.
pub fn apply_contrast(ds: &ExpressionDataset, spec: &ContrastSpec) -> ExpressionDataset {
    let x = ds.x();
    let (n, k) = (x.nrows(), x.ncols());
    let mut xt = DMatrix::zeros(n, k);
    xt.columns_mut(0, k - 1).copy_from(&(x * spec.basis()));
    xt.column_mut(k - 1)
        .copy_from(&(x * spec.c() / spec.c().norm_squared()));
    ExpressionDataset {
        y: ds.y.clone(),
        x: xt,
        column_origin: None,
    }
}
