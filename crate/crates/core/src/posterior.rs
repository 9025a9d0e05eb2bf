//! Per-gene posterior summaries given a fitted prior and confounder estimate.

use serde::{Deserialize, Serialize};

use crate::backwash::BackwashFit;
use crate::dist::Noise;
use crate::error::{Error, Result};
use crate::mixture::{scale_by_se, Component};
use crate::model::EffectSummaries;
use crate::mouthwash::MouthwashFit;
use crate::par;

/// Tolerance for the truncated-t moment integrals.
const QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneSummary {
    pub betahat: f64,
    pub sebetahat: f64,
    pub adjusted_betahat: f64,
    pub lfdr: f64,
    pub lfsr: f64,
    pub post_mean: f64,
    pub post_sd: f64,
    pub qvalue_analog: f64,
}

/// Posterior of one prior component given the residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentPosterior {
    pub mean: f64,
    pub var: f64,
    pub prob_neg: f64,
    pub prob_pos: f64,
}

impl ComponentPosterior {
    const POINT: Self = Self {
        mean: 0.0,
        var: 0.0,
        prob_neg: 0.0,
        prob_pos: 0.0,
    };
}

/// Posterior of `beta` under one prior component when `r ~ beta + sd * noise`.
pub fn component_posterior(c: &Component, r: f64, sd: f64, noise: &Noise) -> ComponentPosterior {
    match *c {
        Component::PointMass => ComponentPosterior::POINT,
        Component::Normal { sd: tau } => {
            let (t2, v) = (tau * tau, sd * sd);
            let mean = r * t2 / (t2 + v);
            let var = t2 * v / (t2 + v);
            let u = mean / var.sqrt();
            let prob_neg = Noise::Normal.cdf(-u);
            ComponentPosterior {
                mean,
                var,
                prob_neg,
                prob_pos: 1.0 - prob_neg,
            }
        }
        Component::Uniform { lo, hi } => truncated(lo, hi, r, sd, noise),
    }
}

/// Likelihood in `beta` restricted to `[lo, hi]`.
fn truncated(lo: f64, hi: f64, r: f64, sd: f64, noise: &Noise) -> ComponentPosterior {
    // beta in [lo, hi]  <=>  u = (r - beta) / sd in [(r - hi)/sd, (r - lo)/sd]
    let (ua, ub) = ((r - hi) / sd, (r - lo) / sd);
    let ln_z = noise.ln_cdf_diff(ub, ua);
    let mass = |a: f64, b: f64| -> f64 {
        // P(beta in [a, b]) under the truncated posterior
        if b <= a {
            return 0.0;
        }
        (noise.ln_cdf_diff((r - a) / sd, (r - b) / sd) - ln_z)
            .exp()
            .clamp(0.0, 1.0)
    };
    let prob_neg = mass(lo, hi.min(0.0));
    let prob_pos = mass(lo.max(0.0), hi);
    let (mean, var) = match noise {
        Noise::Normal if ln_z > -30.0 => {
            // truncated normal for beta ~ N(r, sd^2) on [lo, hi]
            let (a, b) = ((lo - r) / sd, (hi - r) / sd);
            let pa = (Noise::Normal.ln_pdf(a) - ln_z).exp();
            let pb = (Noise::Normal.ln_pdf(b) - ln_z).exp();
            let ta = if a.is_finite() { a * pa } else { 0.0 };
            let tb = if b.is_finite() { b * pb } else { 0.0 };
            let d = pa - pb;
            let mean = (r + sd * d).clamp(lo, hi);
            let var = (sd * sd * (1.0 + ta - tb - d * d)).max(0.0);
            (mean, var)
        }
        _ => truncated_moments_quad(lo, hi, r, sd, noise),
    };
    ComponentPosterior {
        mean,
        var,
        prob_neg,
        prob_pos,
    }
}

/// First two moments of `beta` with density proportional to
/// `pdf((r - beta) / sd)` on `[lo, hi]`, by adaptive quadrature.
pub fn truncated_moments_quad(lo: f64, hi: f64, r: f64, sd: f64, noise: &Noise) -> (f64, f64) {
    if hi <= lo {
        return (lo, 0.0);
    }
    // peak of the integrand inside the interval
    let peak = r.clamp(lo, hi);
    let ln_top = noise.ln_pdf((r - peak) / sd);
    let g = |b: f64| (noise.ln_pdf((r - b) / sd) - ln_top).exp();
    let mut cuts = vec![lo, hi];
    for c in [0.0, -1.0, 1.0, -10.0, 10.0, -100.0, 100.0] {
        cuts.push(c);
    }
    for k in [-10.0, -3.0, -1.0, 0.0, 1.0, 3.0, 10.0] {
        cuts.push(r + k * sd);
    }
    cuts.retain(|c| *c >= lo && *c <= hi);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        // center the moments at the peak to limit cancellation
        z += quadrature::integrate(&g, a, b, QUAD_TOL).integral;
        m1 += quadrature::integrate(|x| (x - peak) * g(x), a, b, QUAD_TOL * sd).integral;
        m2 += quadrature::integrate(|x| (x - peak).powi(2) * g(x), a, b, QUAD_TOL * sd * sd).integral;
    }
    let d = m1 / z;
    let mean = (peak + d).clamp(lo, hi);
    let var = (m2 / z - d * d).max(0.0);
    (mean, var)
}

/// Combines component posteriors with mixing probabilities `gamma`.
fn combine(gamma: &[f64], comps: &[Component], post: &[ComponentPosterior]) -> (f64, f64, f64, f64) {
    let (mut mean, mut second, mut neg, mut pos, mut zero) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in 0..gamma.len() {
        let g = gamma[m];
        if matches!(comps[m], Component::PointMass) {
            zero += g;
            continue;
        }
        let c = &post[m];
        mean += g * c.mean;
        second += g * (c.var + c.mean * c.mean);
        neg += g * c.prob_neg;
        pos += g * c.prob_pos;
    }
    let sd = (second - mean * mean).max(0.0).sqrt();
    // the point mass counts towards both signs
    let lfsr = (neg + zero).min(pos + zero).clamp(0.0, 1.0);
    (zero.clamp(0.0, 1.0), lfsr, mean, sd)
}

/// Running mean of the sorted lfdr values, mapped back to gene order.
pub fn qvalue_analog(lfdr: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..lfdr.len()).collect();
    order.sort_by(|&a, &b| lfdr[a].total_cmp(&lfdr[b]).then(a.cmp(&b)));
    let mut out = vec![0.0; lfdr.len()];
    let mut acc = 0.0;
    for (i, &j) in order.iter().enumerate() {
        acc += lfdr[j];
        out[j] = acc / (i + 1) as f64;
    }
    out
}

pub fn mouthwash_summaries(s: &EffectSummaries, fit: &MouthwashFit) -> Result<Vec<GeneSummary>> {
    let (p, k) = (s.p(), fit.g_hat.len());
    if fit.responsibilities.nrows() != p || fit.z_hat.len() != s.q() {
        return Err(Error::DimensionMismatch(
            "fit does not match the effect summaries".into(),
        ));
    }
    let data = scale_by_se(fit.scaling, &s.betahat, &s.sebetahat, &s.alpha);
    let noise = fit.likelihood.noise();
    let sx = fit.xi_hat.sqrt();
    let comps = &fit.g_hat.components;
    let rows: Vec<(f64, f64, f64, f64, f64)> = par::map(p, |j| {
        let r = data.bhat[j]
            - if s.q() > 0 {
                data.alpha.column(j).dot(&fit.z_hat)
            } else {
                0.0
            };
        let sd = sx * data.shat[j];
        let post: Vec<ComponentPosterior> = comps.iter().map(|c| component_posterior(c, r, sd, &noise)).collect();
        let gamma: Vec<f64> = (0..k).map(|m| fit.responsibilities[(j, m)]).collect();
        let (lfdr, lfsr, mean, psd) = combine(&gamma, comps, &post);
        let f = data.factor[j];
        (r * f, lfdr, lfsr, mean * f, psd * f)
    });
    Ok(assemble(s, rows))
}

pub fn backwash_summaries(s: &EffectSummaries, fit: &BackwashFit) -> Result<Vec<GeneSummary>> {
    let st = &fit.state;
    if st.p() != s.p() {
        return Err(Error::DimensionMismatch(
            "fit does not match the effect summaries".into(),
        ));
    }
    let shift = &st.a * &st.mu_v * st.phi;
    let k = st.k();
    let rows: Vec<(f64, f64, f64, f64, f64)> = par::map(s.p(), |j| {
        let post: Vec<ComponentPosterior> = (0..k)
            .map(|m| {
                let (mean, var) = (st.mu[(j, m)], st.s2[(j, m)]);
                if var > 0.0 {
                    let neg = Noise::Normal.cdf(-mean / var.sqrt());
                    ComponentPosterior {
                        mean,
                        var,
                        prob_neg: neg,
                        prob_pos: 1.0 - neg,
                    }
                } else {
                    ComponentPosterior::POINT
                }
            })
            .collect();
        let gamma: Vec<f64> = (0..k).map(|m| st.gamma[(j, m)]).collect();
        let (lfdr, lfsr, mean, psd) = combine(&gamma, &st.components, &post);
        (s.betahat[j] - shift[j], lfdr, lfsr, mean, psd)
    });
    Ok(assemble(s, rows))
}

fn assemble(s: &EffectSummaries, rows: Vec<(f64, f64, f64, f64, f64)>) -> Vec<GeneSummary> {
    let lfdr: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let qv = qvalue_analog(&lfdr);
    rows.into_iter()
        .enumerate()
        .map(|(j, (adj, lfdr, lfsr, mean, sd))| GeneSummary {
            betahat: s.betahat[j],
            sebetahat: s.sebetahat[j],
            adjusted_betahat: adj,
            lfdr,
            lfsr,
            post_mean: mean,
            post_sd: sd,
            qvalue_analog: qv[j],
        })
        .collect()
}

/// Either kind of fit.
#[derive(Debug, Clone, Copy)]
pub enum FitRef<'a> {
    Mouthwash(&'a MouthwashFit),
    Backwash(&'a BackwashFit),
}

pub fn posterior_summaries(s: &EffectSummaries, fit: FitRef<'_>) -> Result<Vec<GeneSummary>> {
    match fit {
        FitRef::Mouthwash(f) => mouthwash_summaries(s, f),
        FitRef::Backwash(f) => backwash_summaries(s, f),
    }
}

/// Fitted weight of the point mass at zero.
pub fn pi0(fit: FitRef<'_>) -> f64 {
    match fit {
        FitRef::Mouthwash(f) => f.pi0(),
        FitRef::Backwash(f) => f.pi0(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{MixtureKind, UnimodalMixture};
    use crate::mouthwash::{fit_summaries, Likelihood, MouthwashConfig};
    use nalgebra::DMatrix;

    fn normal_fit(pi: Vec<f64>, comps: Vec<Component>, p: usize) -> (EffectSummaries, MouthwashFit) {
        let bhat: Vec<f64> = (0..p).map(|j| (j as f64 - 3.0) * 0.7).collect();
        let s = EffectSummaries::new(bhat, vec![0.5; p], DMatrix::zeros(0, p)).unwrap();
        let g = UnimodalMixture::new(MixtureKind::ScaleNormal, comps, pi).unwrap();
        let cfg = MouthwashConfig {
            grid: Some(g.clone()),
            xi: crate::mouthwash::XiMode::Fixed(1.0),
            max_iters: 0,
            ..Default::default()
        };
        let fit = fit_summaries(&s, &cfg).unwrap();
        (s, fit)
    }

    #[test]
    fn all_null_prior() {
        let (s, fit) = normal_fit(
            vec![1.0, 0.0],
            vec![Component::PointMass, Component::Normal { sd: 1.0 }],
            7,
        );
        for g in mouthwash_summaries(&s, &fit).unwrap() {
            assert_eq!(g.lfdr, 1.0);
            assert_eq!(g.lfsr, 1.0);
            assert_eq!(g.post_mean, 0.0);
        }
    }

    #[test]
    fn conjugate_normal_shrinkage() {
        let (s, fit) = normal_fit(
            vec![0.0, 1.0],
            vec![Component::PointMass, Component::Normal { sd: 1.2 }],
            7,
        );
        for g in mouthwash_summaries(&s, &fit).unwrap() {
            let expect = g.betahat * 1.44 / (1.44 + 0.25);
            assert!((g.post_mean - expect).abs() < 1e-12);
            assert_eq!(g.lfdr, 0.0);
        }
    }

    /// Posterior mean and lfsr by integrating the whole mixture posterior.
    fn oracle(g: &UnimodalMixture, r: f64, sd: f64, noise: &Noise) -> (f64, f64) {
        let lik = |b: f64| noise.pdf((r - b) / sd) / sd;
        let mut cuts: Vec<f64> = vec![0.0];
        for c in &g.components {
            if let Component::Uniform { lo, hi } = *c {
                cuts.push(lo);
                cuts.push(hi);
            }
        }
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup();
        let dens = |b: f64| -> f64 {
            g.components
                .iter()
                .zip(&g.pi)
                .map(|(c, w)| match *c {
                    Component::Uniform { lo, hi } if b >= lo && b <= hi => w / (hi - lo),
                    _ => 0.0,
                })
                .sum::<f64>()
                * lik(b)
        };
        let pm = g.pi0() * lik(0.0);
        let (mut z, mut m1, mut neg) = (pm, 0.0, 0.0);
        for w in cuts.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let zi = quadrature::integrate(&dens, w[0], w[1], 1e-14).integral;
            z += zi;
            m1 += quadrature::integrate(|b| b * dens(b), w[0], w[1], 1e-14).integral;
            if mid < 0.0 {
                neg += zi;
            }
        }
        let pneg = neg / z;
        let pnonneg = 1.0 - pneg;
        let pz = pm / z;
        (m1 / z, (pneg + pz).min(pnonneg))
    }

    #[test]
    fn uniform_kinds_match_quadrature_oracle() {
        let bhat = vec![-2.7, -0.4, 0.05, 1.1, 4.0];
        let shat = vec![0.6, 1.0, 0.8, 0.5, 1.3];
        let s = EffectSummaries::new(bhat, shat, DMatrix::zeros(0, 5)).unwrap();
        for (kind, lik) in [
            (MixtureKind::SymmetricUniform, Likelihood::Normal),
            (MixtureKind::HalfUniform, Likelihood::Normal),
            (MixtureKind::SymmetricUniform, Likelihood::T { nu: 3.0 }),
            (MixtureKind::HalfUniform, Likelihood::T { nu: 6.0 }),
        ] {
            let cfg = MouthwashConfig {
                kind,
                likelihood: lik,
                xi: crate::mouthwash::XiMode::Fixed(1.3),
                ..Default::default()
            };
            let fit = fit_summaries(&s, &cfg).unwrap();
            let out = mouthwash_summaries(&s, &fit).unwrap();
            let noise = lik.noise();
            for j in 0..5 {
                let (m, lfsr) = oracle(&fit.g_hat, s.betahat[j], 1.3f64.sqrt() * s.sebetahat[j], &noise);
                assert!(
                    (out[j].post_mean - m).abs() < 1e-6,
                    "{kind:?} {lik:?} gene {j}: {} vs {m}",
                    out[j].post_mean
                );
                assert!(
                    (out[j].lfsr - lfsr).abs() < 1e-6,
                    "{kind:?} {lik:?} gene {j}: lfsr {} vs {lfsr}",
                    out[j].lfsr
                );
                assert!(out[j].lfsr >= out[j].lfdr - 1e-10);
            }
        }
    }

    #[test]
    fn truncated_quadrature_agrees_with_closed_form() {
        for &(lo, hi, r) in &[(-1.0, 2.0, 0.3), (0.0, 5.0, -1.0), (-3.0, 0.0, 2.5)] {
            let closed = truncated(lo, hi, r, 0.7, &Noise::Normal);
            let (m, v) = truncated_moments_quad(lo, hi, r, 0.7, &Noise::Normal);
            assert!((closed.mean - m).abs() < 1e-9 && (closed.var - v).abs() < 1e-9);
        }
    }

    #[test]
    fn qvalue_is_running_mean() {
        let q = qvalue_analog(&[0.5, 0.1, 0.3]);
        assert!((q[1] - 0.1).abs() < 1e-15);
        assert!((q[2] - 0.2).abs() < 1e-15);
        assert!((q[0] - 0.3).abs() < 1e-15);
    }
}
