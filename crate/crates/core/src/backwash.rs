//! Confounder adjustment with a g-prior on the latent factors, fitted by
//! variational EM.
//!
//! Model: `bhat = beta + phi A v + e`, `v ~ N(0, I_q)`, `e ~ N(0, xi S)`, with
//! `A = alpha^T (alpha alpha^T)^{-1/2}` and a normal-mixture prior on `beta`.
//! The variational family factorizes as `f(v) prod_j f(beta_j, w_j)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::{ln_normal_pdf, log_sum_exp};
use crate::error::{Error, Result};
use crate::factor::FactorEstimate;
use crate::mixture::{default_grid, Component, MixtureKind, PenaltySpec, UnimodalMixture};
use crate::model::{weighted_ls, EffectSummaries};
use crate::mouthwash::{fit_summaries, Likelihood, MouthwashConfig, XiMode};
use crate::par;
use crate::rotation::RotatedModel;
use crate::weights::{self, penalty_term, LikelihoodMatrix, WeightsOptions};

const EIGEN_FLOOR: f64 = 1e-10;
const JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackwashConfig {
    pub lambda0: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Hold `phi` at this value instead of updating it.
    pub fix_phi: Option<f64>,
    /// Hold `xi` at this value instead of updating it.
    pub fix_xi: Option<f64>,
    /// Replace the one-step weight update by the exact maximizer at the
    /// current `(v, phi, xi)`, followed by a refresh of the gene factors.
    pub exact_weights: bool,
    #[serde(skip)]
    pub grid: Option<UnimodalMixture>,
}

impl Default for BackwashConfig {
    fn default() -> Self {
        Self {
            lambda0: 10.0,
            max_iters: 1000,
            rel_tol: 1e-8,
            fix_phi: None,
            fix_xi: None,
            exact_weights: true,
            grid: None,
        }
    }
}

/// Variational parameters and hyperparameters.
#[derive(Debug, Clone)]
pub struct BackwashState {
    /// p x q, orthonormal columns when `alpha` has full row rank.
    pub a: DMatrix<f64>,
    pub mu_v: DVector<f64>,
    pub sigma_v: DMatrix<f64>,
    /// p x K component means, variances and responsibilities.
    pub mu: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub mu_beta: Vec<f64>,
    pub pi: Vec<f64>,
    pub phi: f64,
    pub xi: f64,
    pub components: Vec<Component>,
    pub lambda: Vec<f64>,
    pub elbo_trace: Vec<f64>,
}

impl BackwashState {
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.a.ncols()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn tau2(&self) -> Vec<f64> {
        tau2(&self.components)
    }
}

#[derive(Debug, Clone)]
pub struct BackwashFit {
    pub state: BackwashState,
    pub g_hat: UnimodalMixture,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the `Sigma_v` update needed diagonal jitter.
    pub jittered: bool,
}

impl BackwashFit {
    pub fn pi0(&self) -> f64 {
        self.g_hat.pi0()
    }

    pub fn elbo(&self) -> f64 {
        *self.state.elbo_trace.last().expect("trace is never empty")
    }
}

fn tau2(components: &[Component]) -> Vec<f64> {
    components
        .iter()
        .map(|c| match *c {
            Component::PointMass => 0.0,
            Component::Normal { sd } => sd * sd,
            Component::Uniform { .. } => f64::NAN,
        })
        .collect()
}

/// `alpha^T (alpha alpha^T)^{-1/2}` with eigenvalues floored at `1e-10 * max`.
pub fn g_prior_basis(alpha: &DMatrix<f64>) -> DMatrix<f64> {
    let q = alpha.nrows();
    if q == 0 {
        return DMatrix::zeros(alpha.ncols(), 0);
    }
    let gram = alpha * alpha.transpose();
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let floor = EIGEN_FLOOR * top.max(f64::MIN_POSITIVE);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.max(floor).sqrt()));
    let inv_sqrt = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    alpha.transpose() * inv_sqrt
}

/// `A^T S^{-1} A` (q x q).
fn weighted_gram(a: &DMatrix<f64>, shat: &[f64]) -> DMatrix<f64> {
    let q = a.ncols();
    let flat = par::sum_vec(a.nrows(), q * q, |j, acc| {
        let w = 1.0 / (shat[j] * shat[j]);
        for r in 0..q {
            let ar = a[(j, r)] * w;
            for c in 0..q {
                acc[r * q + c] += ar * a[(j, c)];
            }
        }
    });
    DMatrix::from_row_slice(q, q, &flat)
}

/// `A^T S^{-1} x` (length q).
fn weighted_cross(a: &DMatrix<f64>, shat: &[f64], x: &[f64]) -> DVector<f64> {
    let q = a.ncols();
    let v = par::sum_vec(a.nrows(), q, |j, acc| {
        let w = x[j] / (shat[j] * shat[j]);
        for r in 0..q {
            acc[r] += a[(j, r)] * w;
        }
    });
    DVector::from_vec(v)
}

/// Starting state: `mu_beta` from a fit without confounders, `mu_v` by
/// weighted regression of the residuals on `A`, `xi = phi = 1`.
pub fn backwash_init(s: &EffectSummaries, mix: &UnimodalMixture, cfg: &BackwashConfig) -> Result<BackwashState> {
    if mix.kind != MixtureKind::ScaleNormal {
        return Err(Error::InvalidConfig("BACKWASH requires a scale-normal mixture".into()));
    }
    if s.q() == 0 {
        return Err(Error::InvalidConfig("BACKWASH requires at least one factor".into()));
    }
    let penalty = PenaltySpec::new(mix.len(), cfg.lambda0, 0.0)?;
    let eb = MouthwashConfig {
        kind: MixtureKind::ScaleNormal,
        likelihood: Likelihood::Normal,
        lambda0: cfg.lambda0,
        xi: XiMode::Fixed(1.0),
        grid: Some(mix.clone()),
        ..Default::default()
    };
    let plain = s.with_alpha(DMatrix::zeros(0, s.p()));
    let fit0 = fit_summaries(&plain, &eb)?;
    let mu_beta = conditional_means(&s.betahat, &s.sebetahat, &fit0.g_hat, 1.0);
    let a = g_prior_basis(&s.alpha);
    let resid: Vec<f64> = s.betahat.iter().zip(&mu_beta).map(|(b, m)| b - m).collect();
    let w: Vec<f64> = s.sebetahat.iter().map(|x| 1.0 / (x * x)).collect();
    let mu_v = weighted_ls(&a.transpose(), &resid, &w)?;
    let (p, k, q) = (s.p(), mix.len(), s.q());
    Ok(BackwashState {
        a,
        mu_v,
        sigma_v: DMatrix::identity(q, q),
        mu: DMatrix::zeros(p, k),
        s2: DMatrix::zeros(p, k),
        gamma: DMatrix::zeros(p, k),
        mu_beta,
        pi: mix.pi.clone(),
        phi: cfg.fix_phi.unwrap_or(1.0),
        xi: cfg.fix_xi.unwrap_or(1.0),
        components: mix.components.clone(),
        lambda: penalty.lambda,
        elbo_trace: Vec::new(),
    })
}

/// Posterior means of `beta_j` under `N(bhat_j | beta_j, xi s_j^2)` and a
/// normal-mixture prior.
fn conditional_means(bhat: &[f64], shat: &[f64], g: &UnimodalMixture, xi: f64) -> Vec<f64> {
    let t2 = tau2(&g.components);
    par::map(bhat.len(), |j| {
        let v = xi * shat[j] * shat[j];
        let lw: Vec<f64> = (0..t2.len())
            .map(|m| g.pi[m].ln() + ln_normal_pdf(bhat[j], 0.0, v + t2[m]))
            .collect();
        let lz = log_sum_exp(&lw);
        (0..t2.len())
            .map(|m| (lw[m] - lz).exp() * bhat[j] * t2[m] / (t2[m] + v))
            .sum()
    })
}

/// Updates `f(beta_j, w_j)` for every gene given `r = bhat - phi A mu_v`.
fn update_genes(st: &mut BackwashState, bhat: &[f64], shat: &[f64]) {
    let (p, k) = (st.p(), st.k());
    let t2 = st.tau2();
    let shift = &st.a * &st.mu_v * st.phi;
    let ln_pi: Vec<f64> = st.pi.iter().map(|w| w.ln()).collect();
    let rows: Vec<Vec<f64>> = par::map(p, |j| {
        let r = bhat[j] - shift[j];
        let v = st.xi * shat[j] * shat[j];
        let mut out = vec![0.0; 3 * k];
        let mut lw = vec![0.0; k];
        for m in 0..k {
            if t2[m] > 0.0 {
                let s2 = 1.0 / (1.0 / t2[m] + 1.0 / v);
                out[m] = r * s2 / v;
                out[k + m] = s2;
            }
            lw[m] = if ln_pi[m] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                ln_pi[m] + ln_normal_pdf(r, 0.0, v + t2[m])
            };
        }
        let lz = log_sum_exp(&lw);
        for m in 0..k {
            out[2 * k + m] = (lw[m] - lz).exp();
        }
        out
    });
    for (j, row) in rows.iter().enumerate() {
        let mut mb = 0.0;
        for m in 0..k {
            st.mu[(j, m)] = row[m];
            st.s2[(j, m)] = row[k + m];
            st.gamma[(j, m)] = row[2 * k + m];
            mb += row[2 * k + m] * row[m];
        }
        st.mu_beta[j] = mb;
    }
}

/// Exact penalized weights at the current `(v, phi, xi)`.
fn solve_weights(st: &BackwashState, bhat: &[f64], shat: &[f64]) -> Vec<f64> {
    let (p, k) = (st.p(), st.k());
    let t2 = st.tau2();
    let shift = &st.a * &st.mu_v * st.phi;
    let rows: Vec<Vec<f64>> = par::map(p, |j| {
        let r = bhat[j] - shift[j];
        let v = st.xi * shat[j] * shat[j];
        (0..k).map(|m| ln_normal_pdf(r, 0.0, v + t2[m])).collect()
    });
    let lik = LikelihoodMatrix::from_log(p, k, rows.concat());
    weights::solve(&lik, &st.lambda, &st.pi, &WeightsOptions::default()).pi
}

/// `E[(bhat - beta - phi A v)^T S^{-1} (bhat - beta - phi A v)]`.
fn expected_quadratic(st: &BackwashState, bhat: &[f64], shat: &[f64]) -> f64 {
    let k = st.k();
    let shift = &st.a * &st.mu_v;
    let asa = &st.a * &st.sigma_v;
    par::sum(st.p(), |j| {
        let second: f64 = (0..k)
            .map(|m| st.gamma[(j, m)] * (st.mu[(j, m)].powi(2) + st.s2[(j, m)]))
            .sum();
        let var_beta = (second - st.mu_beta[j].powi(2)).max(0.0);
        let var_v = asa.row(j).dot(&st.a.row(j));
        let d = bhat[j] - st.mu_beta[j] - st.phi * shift[j];
        (d * d + var_beta + st.phi * st.phi * var_v) / (shat[j] * shat[j])
    })
}

/// One sweep of variational EM; returns `true` if `Sigma_v` needed jitter.
pub fn sweep(st: &mut BackwashState, bhat: &[f64], shat: &[f64], cfg: &BackwashConfig) -> Result<bool> {
    update_genes(st, bhat, shat);
    let p = st.p() as f64;
    if cfg.exact_weights {
        st.pi = solve_weights(st, bhat, shat);
        update_genes(st, bhat, shat);
    } else {
        let k = st.k();
        let mut pi: Vec<f64> = (0..k)
            .map(|m| (st.gamma.column(m).sum() + st.lambda[m] - 1.0).max(0.0))
            .collect();
        let total: f64 = pi.iter().sum();
        for w in &mut pi {
            *w /= total;
        }
        st.pi = pi;
    }

    let q = st.q();
    let g = weighted_gram(&st.a, shat);
    let prec = &g * (st.phi * st.phi / st.xi) + DMatrix::identity(q, q);
    let (sigma_v, jittered) = match prec.clone().cholesky() {
        Some(c) => (c.inverse(), false),
        None => {
            let c = (prec + DMatrix::identity(q, q) * JITTER)
                .cholesky()
                .ok_or_else(|| Error::InvalidInput("variational covariance is not positive definite".into()))?;
            (c.inverse(), true)
        }
    };
    st.sigma_v = sigma_v;
    let resid: Vec<f64> = bhat.iter().zip(&st.mu_beta).map(|(b, m)| b - m).collect();
    let cross = weighted_cross(&st.a, shat, &resid);
    st.mu_v = &st.sigma_v * &cross * (st.phi / st.xi);

    if cfg.fix_phi.is_none() {
        let second = &st.mu_v * st.mu_v.transpose() + &st.sigma_v;
        let denom = (&g * second).trace();
        if denom > 0.0 {
            st.phi = st.mu_v.dot(&cross) / denom;
        }
        rescale_v(st);
    }
    if cfg.fix_xi.is_none() {
        st.xi = (expected_quadratic(st, bhat, shat) / p).max(1e-300);
    }
    Ok(jittered)
}

/// Moves along `(phi, mu_v, Sigma_v) -> (c phi, mu_v / c, Sigma_v / c^2)`,
/// which leaves the likelihood term unchanged, to the `c` maximizing the
/// `v` part of the bound.
fn rescale_v(st: &mut BackwashState) {
    let q = st.q();
    if q == 0 || st.phi == 0.0 {
        return;
    }
    let c2 = (st.mu_v.norm_squared() + st.sigma_v.trace()) / q as f64;
    if !(c2 > 0.0) || !c2.is_finite() {
        return;
    }
    let c = c2.sqrt();
    st.mu_v /= c;
    st.sigma_v /= c2;
    st.phi *= c;
}

/// Penalized evidence lower bound, without the parameter-free constant
/// (see [`elbo_constant`]).
pub fn elbo(st: &BackwashState, bhat: &[f64], shat: &[f64]) -> f64 {
    let k = st.k();
    let t2 = st.tau2();
    let p = st.p() as f64;
    let ln_pi: Vec<f64> = st.pi.iter().map(|w| w.ln()).collect();
    let lik = -0.5 * p * st.xi.ln() - expected_quadratic(st, bhat, shat) / (2.0 * st.xi);
    let genes = par::sum(st.p(), |j| {
        let mut acc = 0.0;
        for m in 0..k {
            let g = st.gamma[(j, m)];
            // a weight that underflowed to zero carries no responsibility
            if g <= 0.0 || st.pi[m] == 0.0 {
                continue;
            }
            acc += g * (ln_pi[m] - g.ln());
            if t2[m] > 0.0 {
                let (mu, s2) = (st.mu[(j, m)], st.s2[(j, m)]);
                acc += g * (0.5 * (s2 / t2[m]).ln() + 0.5 - (mu * mu + s2) / (2.0 * t2[m]));
            }
        }
        acc
    });
    let ln_det = st
        .sigma_v
        .clone()
        .cholesky()
        .map(|c| 2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
        .unwrap_or(f64::NEG_INFINITY);
    let v_part = -0.5 * (st.mu_v.norm_squared() + st.sigma_v.trace()) + 0.5 * ln_det;
    lik + genes + v_part + penalty_term(&st.pi, &st.lambda)
}

/// The additive constant omitted by [`elbo`]:
/// `-p/2 ln(2 pi) - 1/2 sum ln s_j^2 + q/2`.
pub fn elbo_constant(shat: &[f64], q: usize) -> f64 {
    let p = shat.len() as f64;
    -0.5 * p * (2.0 * std::f64::consts::PI).ln() - shat.iter().map(|s| s.ln()).sum::<f64>() + 0.5 * q as f64
}

pub fn fit_backwash(rm: &RotatedModel, fa: &FactorEstimate, cfg: &BackwashConfig) -> Result<BackwashFit> {
    let s = EffectSummaries::from_rotation(rm, fa)?;
    fit_backwash_summaries(&s, cfg)
}

pub fn fit_backwash_summaries(s: &EffectSummaries, cfg: &BackwashConfig) -> Result<BackwashFit> {
    if let Some(x) = cfg.fix_xi {
        if !(x > 0.0) {
            return Err(Error::InvalidConfig("fixed xi must be positive".into()));
        }
    }
    let mix = match &cfg.grid {
        Some(g) => g.clone(),
        None => default_grid(&s.betahat, &s.sebetahat, MixtureKind::ScaleNormal)?,
    };
    let mut st = backwash_init(s, &mix, cfg)?;
    let jittered = run(&mut st, &s.betahat, &s.sebetahat, cfg)?;
    let converged = st.elbo_trace.len() >= 2 && {
        let n = st.elbo_trace.len();
        rel_close(st.elbo_trace[n - 1], st.elbo_trace[n - 2], cfg.rel_tol)
    };
    let iterations = st.elbo_trace.len();
    let g_hat = UnimodalMixture {
        kind: MixtureKind::ScaleNormal,
        components: st.components.clone(),
        pi: st.pi.clone(),
    };
    Ok(BackwashFit {
        jittered,
        state: st,
        g_hat,
        converged,
        iterations,
    })
}

/// Sweeps until the relative ELBO change drops below tolerance; returns
/// whether any sweep needed jitter.
pub fn run(st: &mut BackwashState, bhat: &[f64], shat: &[f64], cfg: &BackwashConfig) -> Result<bool> {
    let mut jittered = false;
    for _ in 0..cfg.max_iters.max(1) {
        jittered |= sweep(st, bhat, shat, cfg)?;
        let e = elbo(st, bhat, shat);
        st.elbo_trace.push(e);
        let n = st.elbo_trace.len();
        if n >= 2 && rel_close(e, st.elbo_trace[n - 2], cfg.rel_tol) {
            break;
        }
    }
    Ok(jittered)
}

fn rel_close(new: f64, old: f64, tol: f64) -> bool {
    (new - old).abs() <= tol * new.abs().max(1e-300)
}
