//! Joint maximum marginal likelihood over the prior weights `pi`, the
//! confounder coordinates `z` and the variance inflation `xi`.
//!
//! Normal mixtures use the EM algorithm: responsibilities, a closed-form
//! weight update, then a few alternations of weighted least squares for `z`
//! and a scalar search for `xi`. Uniform mixtures (with normal or t noise) use
//! coordinate ascent: a convex solve for `pi`, BFGS for `z` with the analytic
//! gradient, and a scalar search for `xi`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dist::{log_sum_exp, Noise};
use crate::error::{Error, Result};
use crate::factor::FactorEstimate;
use crate::mixture::{
    check_compatible, default_grid, scale_by_se, Component, EffectScaling, MixtureKind, PenaltySpec, UnimodalMixture,
};
use crate::model::{weighted_ls, EffectSummaries};
use crate::optim::{bfgs_max, brent_max};
use crate::par;
use crate::rotation::RotatedModel;
use crate::weights::{self, penalty_term, LikelihoodMatrix, WeightsOptions};

/// Search interval for `xi`, searched on the log scale.
pub const XI_BRACKET: (f64, f64) = (1e-3, 1e3);
const BRENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Likelihood {
    Normal,
    T { nu: f64 },
}

impl Likelihood {
    pub fn noise(&self) -> Noise {
        match *self {
            Likelihood::Normal => Noise::Normal,
            Likelihood::T { nu } => Noise::student_t(nu),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum XiMode {
    Estimate,
    Fixed(f64),
}

impl XiMode {
    pub fn is_estimated(&self) -> bool {
        matches!(self, XiMode::Estimate)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MouthwashConfig {
    pub kind: MixtureKind,
    pub likelihood: Likelihood,
    pub scaling: EffectScaling,
    /// Penalty exponent on the point-mass weight.
    pub lambda0: f64,
    pub lambda_xi: f64,
    pub xi: XiMode,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// z / xi alternations inside one EM sweep.
    pub inner_iters: usize,
    /// Quasi-Newton iterations per z update in coordinate ascent.
    pub bfgs_iters: usize,
    /// Genes used for estimating `z` (and `xi`) before refitting `pi` on all genes.
    pub subsample: Option<usize>,
    pub seed: u64,
    /// Additional random restarts of `pi`; the best objective wins.
    pub restarts: usize,
    /// Custom grid; its weights are used as the starting point.
    #[serde(skip)]
    pub grid: Option<UnimodalMixture>,
}

impl Default for MouthwashConfig {
    fn default() -> Self {
        Self {
            kind: MixtureKind::ScaleNormal,
            likelihood: Likelihood::Normal,
            scaling: EffectScaling::Identity,
            lambda0: 10.0,
            lambda_xi: 0.0,
            xi: XiMode::Estimate,
            max_iters: 1000,
            rel_tol: 1e-8,
            inner_iters: 10,
            bfgs_iters: 50,
            subsample: None,
            seed: 1,
            restarts: 0,
            grid: None,
        }
    }
}

impl MouthwashConfig {
    pub fn validate(&self) -> Result<()> {
        if let Likelihood::T { nu } = self.likelihood {
            if !(nu > 0.0) {
                return Err(Error::InvalidConfig("t degrees of freedom must be positive".into()));
            }
        }
        check_compatible(self.kind, &self.likelihood.noise())?;
        if let XiMode::Fixed(x) = self.xi {
            if !(x > 0.0) {
                return Err(Error::InvalidConfig("fixed xi must be positive".into()));
            }
        }
        if let Some(g) = &self.grid {
            if g.kind != self.kind {
                return Err(Error::InvalidConfig(
                    "custom grid kind differs from configured kind".into(),
                ));
            }
        }
        self.scaling.check_identifiable(self.xi.is_estimated(), self.lambda_xi)
    }
}

/// Current parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub pi: Vec<f64>,
    pub z: DVector<f64>,
    pub xi: f64,
}

/// The optimization problem on the working scale (after effect scaling).
#[derive(Debug, Clone)]
pub struct WorkingProblem {
    pub bhat: Vec<f64>,
    pub shat: Vec<f64>,
    pub alpha: DMatrix<f64>,
    pub components: Vec<Component>,
    pub kind: MixtureKind,
    pub noise: Noise,
    pub penalty: PenaltySpec,
    pub xi_mode: XiMode,
    pub inner_iters: usize,
    pub bfgs_iters: usize,
}

impl WorkingProblem {
    pub fn new(
        bhat: Vec<f64>,
        shat: Vec<f64>,
        alpha: DMatrix<f64>,
        grid: &UnimodalMixture,
        cfg: &MouthwashConfig,
    ) -> Result<Self> {
        let penalty = PenaltySpec::new(grid.len(), cfg.lambda0, cfg.lambda_xi)?;
        Ok(Self {
            bhat,
            shat,
            alpha,
            components: grid.components.clone(),
            kind: grid.kind,
            noise: cfg.likelihood.noise(),
            penalty,
            xi_mode: cfg.xi,
            inner_iters: cfg.inner_iters.max(1),
            bfgs_iters: cfg.bfgs_iters,
        })
    }

    pub fn p(&self) -> usize {
        self.bhat.len()
    }

    pub fn q(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    fn residuals(&self, z: &DVector<f64>) -> Vec<f64> {
        if self.q() == 0 {
            return self.bhat.clone();
        }
        par::map(self.p(), |j| self.bhat[j] - self.alpha.column(j).dot(z))
    }

    #[inline]
    fn ln_component(&self, m: usize, r: f64, sd: f64) -> f64 {
        self.components[m].ln_convolved(r, sd, &self.noise)
    }

    /// Row-major p x K component log-likelihoods at `(z, xi)`.
    pub fn component_matrix(&self, z: &DVector<f64>, xi: f64) -> LikelihoodMatrix {
        let r = self.residuals(z);
        let k = self.k();
        let sx = xi.sqrt();
        let rows: Vec<Vec<f64>> = par::map(self.p(), |j| {
            let sd = sx * self.shat[j];
            (0..k).map(|m| self.ln_component(m, r[j], sd)).collect()
        });
        LikelihoodMatrix::from_log(self.p(), k, rows.concat())
    }

    fn loglik_from_residuals(&self, r: &[f64], ln_pi: &[f64], xi: f64) -> f64 {
        let sx = xi.sqrt();
        let k = self.k();
        par::sum(self.p(), |j| {
            let sd = sx * self.shat[j];
            let mut buf = [0.0f64; 64];
            let mut big;
            let terms: &mut [f64] = if k <= 64 {
                &mut buf[..k]
            } else {
                big = vec![0.0; k];
                &mut big
            };
            for m in 0..k {
                terms[m] = if ln_pi[m] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    ln_pi[m] + self.ln_component(m, r[j], sd)
                };
            }
            log_sum_exp(terms)
        })
    }

    /// Marginal log-likelihood `sum_j ln p(bhat_j | pi, z, xi)`.
    pub fn loglik(&self, state: &State) -> f64 {
        let ln_pi: Vec<f64> = state.pi.iter().map(|w| w.ln()).collect();
        self.loglik_from_residuals(&self.residuals(&state.z), &ln_pi, state.xi)
    }

    fn xi_penalty(&self, xi: f64) -> f64 {
        if self.penalty.lambda_xi > 0.0 {
            self.penalty.lambda_xi / xi
        } else {
            0.0
        }
    }

    /// Penalized objective: log-likelihood plus weight and inflation penalties.
    pub fn objective(&self, state: &State) -> f64 {
        self.loglik(state) + penalty_term(&state.pi, &self.penalty.lambda) - self.xi_penalty(state.xi)
    }

    /// Log-likelihood and its gradient with respect to `z`.
    pub fn loglik_and_z_gradient(&self, pi: &[f64], z: &DVector<f64>, xi: f64) -> (f64, DVector<f64>) {
        let q = self.q();
        let k = self.k();
        let r = self.residuals(z);
        let sx = xi.sqrt();
        let ln_pi: Vec<f64> = pi.iter().map(|w| w.ln()).collect();
        let nu = self.noise.nu();
        let acc = par::sum_vec(self.p(), q + 1, |j, acc| {
            let sd = sx * self.shat[j];
            let rj = r[j];
            let lf: Vec<f64> = (0..k)
                .map(|m| {
                    if ln_pi[m] == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        ln_pi[m] + self.ln_component(m, rj, sd)
                    }
                })
                .collect();
            let lp = log_sum_exp(&lf);
            // d ln p_j / d r_j
            let mut dr = 0.0;
            for m in 0..k {
                if ln_pi[m] == f64::NEG_INFINITY {
                    continue;
                }
                dr += match self.components[m] {
                    Component::PointMass => {
                        let u = rj / sd;
                        let score = if nu.is_infinite() {
                            -u
                        } else {
                            -(nu + 1.0) * u / (nu + u * u)
                        };
                        (lf[m] - lp).exp() * score / sd
                    }
                    Component::Normal { sd: tau } => {
                        let v = sd * sd + tau * tau;
                        -(lf[m] - lp).exp() * rj / v
                    }
                    Component::Uniform { lo, hi } => {
                        let base = ln_pi[m] - sd.ln() - (hi - lo).ln() - lp;
                        let a = self.noise.ln_pdf((rj - lo) / sd) + base;
                        let b = self.noise.ln_pdf((rj - hi) / sd) + base;
                        a.exp() - b.exp()
                    }
                };
            }
            // r = b - alpha^T z so d/dz = -alpha dr
            let col = self.alpha.column(j);
            for c in 0..q {
                acc[c] -= col[c] * dr;
            }
            acc[q] += lp;
        });
        (acc[q], DVector::from_column_slice(&acc[..q]))
    }

    /// Weighted least squares start for `z` with weights `1 / shat^2`.
    pub fn gls_start(&self) -> Result<DVector<f64>> {
        let w: Vec<f64> = self.shat.iter().map(|s| 1.0 / (s * s)).collect();
        weighted_ls(&self.alpha, &self.bhat, &w)
    }

    fn xi_bounds(&self) -> (f64, f64) {
        (XI_BRACKET.0.ln(), XI_BRACKET.1.ln())
    }
}

/// Posterior component probabilities `q_mj` (row-major p x K).
pub fn responsibilities(problem: &WorkingProblem, state: &State) -> Vec<f64> {
    problem.component_matrix(&state.z, state.xi).responsibilities(&state.pi)
}

/// One sweep of the EM algorithm for normal mixtures and normal noise.
pub fn em_normal_step(problem: &WorkingProblem, state: &State) -> Result<State> {
    let p = problem.p();
    let k = problem.k();
    let tau2: Vec<f64> = problem
        .components
        .iter()
        .map(|c| match *c {
            Component::PointMass => 0.0,
            Component::Normal { sd } => sd * sd,
            Component::Uniform { .. } => f64::NAN,
        })
        .collect();
    if tau2.iter().any(|t| t.is_nan()) || matches!(problem.noise, Noise::StudentT { .. }) {
        return Err(Error::InvalidConfig(
            "EM step requires normal components and normal noise".into(),
        ));
    }
    let resp = responsibilities(problem, state);

    // weights: kernel of a multinomial likelihood, normalized
    let lambda = &problem.penalty.lambda;
    let mut pi: Vec<f64> = (0..k)
        .map(|m| ((0..p).map(|j| resp[j * k + m]).sum::<f64>() + lambda[m] - 1.0).max(0.0))
        .collect();
    let total: f64 = pi.iter().sum();
    for w in &mut pi {
        *w /= total;
    }

    let mut z = state.z.clone();
    let mut xi = state.xi;
    let expected = |z: &DVector<f64>, xi: f64| -> f64 {
        let r = problem.residuals(z);
        let s = par::sum(p, |j| {
            let s2 = problem.shat[j] * problem.shat[j];
            (0..k)
                .map(|m| {
                    let v = xi * s2 + tau2[m];
                    resp[j * k + m] * (r[j] * r[j] / v + v.ln())
                })
                .sum::<f64>()
        });
        -0.5 * s - problem.xi_penalty(xi)
    };

    for _ in 0..problem.inner_iters {
        let z_old = z.clone();
        let xi_old = xi;
        if problem.q() > 0 {
            let theta: Vec<f64> = (0..p)
                .map(|j| {
                    let s2 = problem.shat[j] * problem.shat[j];
                    (0..k).map(|m| resp[j * k + m] / (xi * s2 + tau2[m])).sum()
                })
                .collect();
            z = weighted_ls(&problem.alpha, &problem.bhat, &theta)?;
        }
        if problem.xi_mode.is_estimated() {
            let r = problem.residuals(&z);
            let q_at = |xi: f64| -> f64 {
                let s = par::sum(p, |j| {
                    let s2 = problem.shat[j] * problem.shat[j];
                    (0..k)
                        .map(|m| {
                            let v = xi * s2 + tau2[m];
                            resp[j * k + m] * (r[j] * r[j] / v + v.ln())
                        })
                        .sum::<f64>()
                });
                -0.5 * s - problem.xi_penalty(xi)
            };
            let (lo, hi) = problem.xi_bounds();
            let best = brent_max(|t| q_at(t.exp()), lo, hi, BRENT_TOL, 200);
            if best.value > q_at(xi) {
                xi = best.x.exp();
            }
        }
        let dz = (&z - &z_old).abs().max();
        if dz <= 1e-12 * (1.0 + z.abs().max()) && (xi - xi_old).abs() <= 1e-12 * xi {
            break;
        }
    }
    debug_assert!(expected(&z, xi).is_finite());
    Ok(State { pi, z, xi })
}

/// Diagnostics from one coordinate-ascent sweep.
#[derive(Debug, Clone, Copy, Default)]
pub struct SweepInfo {
    pub line_search_failed: bool,
}

/// One sweep of coordinate ascent: `pi` by convex solve, `z` by BFGS, `xi` by
/// Brent's method. Never decreases the penalized objective.
pub fn coord_ascent_step(problem: &WorkingProblem, state: &State) -> Result<(State, SweepInfo)> {
    let mut info = SweepInfo::default();
    let lik = problem.component_matrix(&state.z, state.xi);
    let sol = weights::solve(&lik, &problem.penalty.lambda, &state.pi, &WeightsOptions::default());
    let pi = sol.pi;
    let mut z = state.z.clone();
    let xi = state.xi;

    if problem.q() > 0 && problem.bfgs_iters > 0 {
        let w: Vec<f64> = problem.shat.iter().map(|s| 1.0 / (xi * s * s)).collect();
        let h0 = gram_inverse(&problem.alpha, &w).unwrap_or_else(|| DMatrix::identity(problem.q(), problem.q()));
        let res = bfgs_max(
            |zz| problem.loglik_and_z_gradient(&pi, zz, xi),
            z.clone(),
            h0,
            problem.bfgs_iters,
        );
        info.line_search_failed = res.line_search_failed;
        let before = problem.loglik(&State {
            pi: pi.clone(),
            z: z.clone(),
            xi,
        });
        if res.value >= before {
            z = res.x;
        }
    }

    let mut xi_new = xi;
    if problem.xi_mode.is_estimated() {
        let ln_pi: Vec<f64> = pi.iter().map(|w| w.ln()).collect();
        let r = problem.residuals(&z);
        let f = |x: f64| problem.loglik_from_residuals(&r, &ln_pi, x) - problem.xi_penalty(x);
        let (lo, hi) = problem.xi_bounds();
        let best = brent_max(|t| f(t.exp()), lo, hi, BRENT_TOL, 200);
        if best.value > f(xi) {
            xi_new = best.x.exp();
        }
    }
    Ok((State { pi, z, xi: xi_new }, info))
}

fn gram_inverse(alpha: &DMatrix<f64>, w: &[f64]) -> Option<DMatrix<f64>> {
    let q = alpha.nrows();
    let mut g = DMatrix::zeros(q, q);
    for (j, col) in alpha.column_iter().enumerate() {
        g += (col * col.transpose()) * w[j];
    }
    g.cholesky().map(|c| c.inverse())
}

#[derive(Debug, Clone)]
pub struct MouthwashFit {
    /// Fitted prior on the working scale (`beta / s^gamma`).
    pub g_hat: UnimodalMixture,
    pub z_hat: DVector<f64>,
    pub xi_hat: f64,
    pub objective_trace: Vec<f64>,
    /// p x (M + 1) posterior component probabilities.
    pub responsibilities: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub scaling: EffectScaling,
    pub likelihood: Likelihood,
    pub line_search_failures: usize,
    /// Objective trace of the subsample pass, when subsampling was used.
    pub subsample_trace: Option<Vec<f64>>,
}

impl MouthwashFit {
    pub fn pi0(&self) -> f64 {
        self.g_hat.pi0()
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

pub fn fit_mouthwash(rm: &RotatedModel, fa: &FactorEstimate, cfg: &MouthwashConfig) -> Result<MouthwashFit> {
    let s = EffectSummaries::from_rotation(rm, fa)?;
    fit_summaries(&s, cfg)
}

/// Fits from per-gene summaries; dispatches to the subsampled fit when configured.
pub fn fit_summaries(s: &EffectSummaries, cfg: &MouthwashConfig) -> Result<MouthwashFit> {
    cfg.validate()?;
    if cfg.subsample.is_some() {
        return fit_mouthwash_subsampled(s, cfg);
    }
    let data = scale_by_se(cfg.scaling, &s.betahat, &s.sebetahat, &s.alpha);
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => default_grid(&data.bhat, &data.shat, cfg.kind)?,
    };
    let problem = WorkingProblem::new(data.bhat, data.shat, data.alpha, &grid, cfg)?;
    fit_problem(&problem, &grid, cfg)
}

fn initial_state(problem: &WorkingProblem, grid: &UnimodalMixture) -> Result<State> {
    let xi = match problem.xi_mode {
        XiMode::Estimate => 1.0,
        XiMode::Fixed(x) => x,
    };
    Ok(State {
        pi: grid.pi.clone(),
        z: problem.gls_start()?,
        xi,
    })
}

fn fit_problem(problem: &WorkingProblem, grid: &UnimodalMixture, cfg: &MouthwashConfig) -> Result<MouthwashFit> {
    let start = initial_state(problem, grid)?;
    let mut best = run(problem, start.clone(), cfg)?;
    if cfg.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 0..cfg.restarts {
            let draws: Vec<f64> = (0..problem.k()).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            let init = State {
                pi: draws.iter().map(|d| d / total).collect(),
                ..start.clone()
            };
            let cand = run(problem, init, cfg)?;
            if cand.objective() > best.objective() {
                best = cand;
            }
        }
    }
    Ok(best)
}

fn run(problem: &WorkingProblem, init: State, cfg: &MouthwashConfig) -> Result<MouthwashFit> {
    let mut state = init;
    let mut trace = vec![problem.objective(&state)];
    let mut converged = false;
    let mut iterations = 0;
    let mut failures = 0;
    let use_em = problem.kind == MixtureKind::ScaleNormal;
    let close = |new: f64, old: f64| (new - old).abs() <= cfg.rel_tol * new.abs().max(1e-300);

    while iterations < cfg.max_iters {
        iterations += 1;
        let next = if use_em {
            // EM sweep, then the exact weights at the new (z, xi)
            let em = em_normal_step(problem, &state)?;
            let lik = problem.component_matrix(&em.z, em.xi);
            let sol = weights::solve(&lik, &problem.penalty.lambda, &em.pi, &WeightsOptions::default());
            State { pi: sol.pi, ..em }
        } else {
            let (s, info) = coord_ascent_step(problem, &state)?;
            failures += usize::from(info.line_search_failed);
            s
        };
        let obj = problem.objective(&next);
        let prev = *trace.last().unwrap();
        state = next;
        trace.push(obj);
        if close(obj, prev) {
            converged = true;
            break;
        }
    }
    Ok(finish(problem, state, trace, converged, iterations, failures, cfg))
}

fn finish(
    problem: &WorkingProblem,
    state: State,
    trace: Vec<f64>,
    converged: bool,
    iterations: usize,
    failures: usize,
    cfg: &MouthwashConfig,
) -> MouthwashFit {
    let resp = responsibilities(problem, &state);
    let g_hat = UnimodalMixture {
        kind: problem.kind,
        components: problem.components.clone(),
        pi: state.pi,
    };
    MouthwashFit {
        g_hat,
        z_hat: state.z,
        xi_hat: state.xi,
        objective_trace: trace,
        responsibilities: DMatrix::from_row_slice(problem.p(), problem.k(), &resp),
        converged,
        iterations,
        scaling: cfg.scaling,
        likelihood: cfg.likelihood,
        line_search_failures: failures,
        subsample_trace: None,
    }
}

/// Estimates `(g, z, xi)` on a seeded random subset of genes, then holds
/// `z` and `xi` fixed and re-solves the weights over all genes.
pub fn fit_mouthwash_subsampled(s: &EffectSummaries, cfg: &MouthwashConfig) -> Result<MouthwashFit> {
    cfg.validate()?;
    let size = cfg
        .subsample
        .ok_or_else(|| Error::InvalidConfig("no subsample size given".into()))?;
    let (p, q) = (s.p(), s.q());
    let min = 10 * q;
    if size < min || size == 0 {
        return Err(Error::SubsampleTooSmall { s: size, q, min });
    }
    if size > p {
        return Err(Error::InvalidConfig(format!("subsample {size} exceeds {p} genes")));
    }
    let data = scale_by_se(cfg.scaling, &s.betahat, &s.sebetahat, &s.alpha);
    let grid = match &cfg.grid {
        Some(g) => g.clone(),
        None => default_grid(&data.bhat, &data.shat, cfg.kind)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx = sample(&mut rng, p, size).into_vec();
    idx.sort_unstable();

    let sub = WorkingProblem::new(
        idx.iter().map(|&j| data.bhat[j]).collect(),
        idx.iter().map(|&j| data.shat[j]).collect(),
        data.alpha.select_columns(&idx),
        &grid,
        cfg,
    )?;
    let first = fit_problem(&sub, &grid, cfg)?;

    let full = WorkingProblem::new(data.bhat, data.shat, data.alpha, &grid, cfg)?;
    let start = State {
        pi: first.g_hat.pi.clone(),
        z: first.z_hat.clone(),
        xi: first.xi_hat,
    };
    let lik = full.component_matrix(&start.z, start.xi);
    let sol = weights::solve(&lik, &full.penalty.lambda, &start.pi, &WeightsOptions::default());
    let end = State {
        pi: sol.pi,
        ..start.clone()
    };
    let trace = vec![full.objective(&start), full.objective(&end)];
    let mut fit = finish(
        &full,
        end,
        trace,
        first.converged,
        first.iterations,
        first.line_search_failures,
        cfg,
    );
    fit.subsample_trace = Some(first.objective_trace);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn toy(p: usize, q: usize, seed: u64) -> EffectSummaries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let alpha = DMatrix::from_fn(q, p, |_, _| n.sample(&mut rng));
        let z: Vec<f64> = (0..q).map(|i| 0.5 + i as f64).collect();
        let shat: Vec<f64> = (0..p).map(|j| 0.5 + (j % 7) as f64 * 0.1).collect();
        let bhat: Vec<f64> = (0..p)
            .map(|j| {
                let beta = if j % 5 == 0 { 2.0 * n.sample(&mut rng) } else { 0.0 };
                let conf: f64 = (0..q).map(|i| alpha[(i, j)] * z[i]).sum();
                beta + conf + shat[j] * n.sample(&mut rng)
            })
            .collect();
        EffectSummaries::new(bhat, shat, alpha).unwrap()
    }

    fn problem(s: &EffectSummaries, cfg: &MouthwashConfig) -> (WorkingProblem, UnimodalMixture) {
        let grid = default_grid(&s.betahat, &s.sebetahat, cfg.kind).unwrap();
        let pr = WorkingProblem::new(s.betahat.clone(), s.sebetahat.clone(), s.alpha.clone(), &grid, cfg).unwrap();
        (pr, grid)
    }

    #[test]
    fn z_gradient_matches_finite_differences() {
        let s = toy(60, 2, 3);
        for (kind, lik) in [
            (MixtureKind::SymmetricUniform, Likelihood::Normal),
            (MixtureKind::HalfUniform, Likelihood::T { nu: 4.0 }),
            (MixtureKind::ScaleNormal, Likelihood::Normal),
        ] {
            let cfg = MouthwashConfig {
                kind,
                likelihood: lik,
                ..Default::default()
            };
            let (pr, grid) = problem(&s, &cfg);
            let k = grid.len();
            let pi: Vec<f64> = (0..k).map(|m| (1.0 + m as f64) / (k * (k + 1) / 2) as f64).collect();
            let z = DVector::from_vec(vec![0.3, -0.2]);
            let (_, g) = pr.loglik_and_z_gradient(&pi, &z, 1.3);
            for c in 0..2 {
                let h = 1e-6;
                let mut zp = z.clone();
                zp[c] += h;
                let mut zm = z.clone();
                zm[c] -= h;
                let f = |zz: &DVector<f64>| pr.loglik_and_z_gradient(&pi, zz, 1.3).0;
                let fd = (f(&zp) - f(&zm)) / (2.0 * h);
                assert!(
                    (fd - g[c]).abs() < 1e-5 * (1.0 + fd.abs()),
                    "{kind:?} {c}: {fd} vs {}",
                    g[c]
                );
            }
        }
    }

    #[test]
    fn objective_trace_is_nondecreasing() {
        let s = toy(200, 2, 5);
        for (kind, lik) in [
            (MixtureKind::ScaleNormal, Likelihood::Normal),
            (MixtureKind::SymmetricUniform, Likelihood::T { nu: 5.0 }),
        ] {
            let cfg = MouthwashConfig {
                kind,
                likelihood: lik,
                ..Default::default()
            };
            let fit = fit_summaries(&s, &cfg).unwrap();
            assert!(fit.converged);
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{kind:?}: {} -> {}", w[0], w[1]);
            }
            assert!((fit.g_hat.pi.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(fit.xi_hat >= XI_BRACKET.0 && fit.xi_hat <= XI_BRACKET.1);
        }
    }

    #[test]
    fn t_with_normal_kind_is_rejected() {
        let cfg = MouthwashConfig {
            likelihood: Likelihood::T { nu: 3.0 },
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn subsample_size_checks() {
        let s = toy(100, 3, 7);
        let cfg = MouthwashConfig {
            subsample: Some(20),
            ..Default::default()
        };
        assert_eq!(
            fit_summaries(&s, &cfg).unwrap_err(),
            Error::SubsampleTooSmall { s: 20, q: 3, min: 30 }
        );
        let ok = MouthwashConfig {
            subsample: Some(50),
            ..Default::default()
        };
        let fit = fit_summaries(&s, &ok).unwrap();
        assert_eq!(fit.responsibilities.nrows(), 100);
        assert!(fit.objective_trace[1] >= fit.objective_trace[0]);
    }
}
