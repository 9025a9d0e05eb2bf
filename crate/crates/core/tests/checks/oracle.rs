//! Fitted quantities against independent numerical oracles.

use super::common::{invertible, rng, Instance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson, StudentT};
use statrs::distribution::{Continuous, StudentsT};

use unwash_core::evaluation::auc;
use unwash_core::factor::{control_gene_loglik, control_gene_tem};
use unwash_core::mixture::{default_grid, Component, EffectScaling, MixtureKind};
use unwash_core::model::EffectSummaries;
use unwash_core::mouthwash::{fit_summaries, Likelihood, MouthwashConfig, WorkingProblem, XiMode};
use unwash_core::posterior::mouthwash_summaries;
use unwash_core::simulation::thin_column;

fn ln_normal(x: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - x * x / (2.0 * var)
}

/// Penalized objective of the q = 0, xi = 1 normal-mixture problem, written
/// out directly.
fn ash_objective(s: &EffectSummaries, sds: &[f64], lambda: &[f64], pi: &[f64]) -> f64 {
    let ll: f64 = (0..s.p())
        .map(|j| {
            let v = s.sebetahat[j].powi(2);
            let dens: f64 = sds
                .iter()
                .zip(pi)
                .map(|(sd, w)| w * ln_normal(s.betahat[j], v + sd * sd).exp())
                .sum();
            dens.ln()
        })
        .sum();
    let pen: f64 = lambda
        .iter()
        .zip(pi)
        .filter(|(l, _)| **l != 1.0)
        .map(|(l, w)| (l - 1.0) * w.ln())
        .sum();
    ll + pen
}

fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, x) in u.iter().enumerate() {
        css += x;
        let t = (css - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Projected gradient ascent with backtracking on the simplex.
fn projected_gradient(s: &EffectSummaries, sds: &[f64], lambda: &[f64]) -> (Vec<f64>, f64) {
    let k = sds.len();
    let obj = |pi: &[f64]| {
        if pi[0] <= 0.0 {
            f64::NEG_INFINITY
        } else {
            ash_objective(s, sds, lambda, pi)
        }
    };
    let mut pi = vec![1.0 / k as f64; k];
    let mut f = obj(&pi);
    let mut step = 1e-3;
    for _ in 0..20000 {
        let mut g = vec![0.0; k];
        for j in 0..s.p() {
            let v = s.sebetahat[j].powi(2);
            let d: Vec<f64> = sds
                .iter()
                .map(|sd| ln_normal(s.betahat[j], v + sd * sd).exp())
                .collect();
            let tot: f64 = d.iter().zip(&pi).map(|(a, b)| a * b).sum();
            for m in 0..k {
                g[m] += d[m] / tot;
            }
        }
        for m in 0..k {
            if lambda[m] != 1.0 {
                g[m] += (lambda[m] - 1.0) / pi[m];
            }
        }
        step *= 2.0;
        let improved = loop {
            let cand = project_simplex(&pi.iter().zip(&g).map(|(p, g)| p + step * g).collect::<Vec<_>>());
            let fc = obj(&cand);
            if fc > f {
                let gain = fc - f;
                pi = cand;
                f = fc;
                break gain;
            }
            step /= 2.0;
            if step < 1e-18 {
                break 0.0;
            }
        };
        if improved < 1e-12 {
            break;
        }
    }
    (pi, f)
}

pub fn q0_fit_matches_projected_gradient_solver() -> Result<(), String> {
    for seed in 0..5 {
        let inst = Instance::new(300, 0, 0.7);
        let s = inst.draw(seed);
        let cfg = MouthwashConfig {
            xi: XiMode::Fixed(1.0),
            ..Default::default()
        };
        let fit = fit_summaries(&s, &cfg).unwrap();
        let sds: Vec<f64> = fit
            .g_hat
            .components
            .iter()
            .map(|c| match *c {
                Component::PointMass => 0.0,
                Component::Normal { sd } => sd,
                _ => unreachable!(),
            })
            .collect();
        let mut lambda = vec![1.0; sds.len()];
        lambda[0] = cfg.lambda0;
        let (_, oracle) = projected_gradient(&s, &sds, &lambda);
        let ours = ash_objective(&s, &sds, &lambda, &fit.g_hat.pi);
        check!((ours - oracle).abs() < 1e-4, "seed {seed}: {ours} vs {oracle}");
        check!((fit.objective() - ours).abs() < 1e-8 * ours.abs());
    }
    Ok(())
}

/// Posterior summaries of one gene by adaptive quadrature over beta.
struct Quad {
    lfdr: f64,
    lfsr: f64,
    mean: f64,
    sd: f64,
}

fn quad_posterior(comps: &[Component], pi: &[f64], r: f64, sd: f64, nu: Option<f64>) -> Quad {
    let lik = |b: f64| match nu {
        None => ln_normal(r - b, sd * sd).exp(),
        Some(nu) => StudentsT::new(0.0, 1.0, nu).unwrap().pdf((r - b) / sd) / sd,
    };
    let tol = 1e-13;
    let (mut w, mut m1, mut m2, mut neg, mut point) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (c, &p) in comps.iter().zip(pi) {
        if p == 0.0 {
            continue;
        }
        match *c {
            Component::PointMass => {
                point = p * lik(0.0);
                w += point;
            }
            Component::Normal { sd: tau } => {
                let dens = |b: f64| ln_normal(b, tau * tau).exp() * lik(b);
                let span = 40.0 * tau.max(sd) + r.abs();
                let mut cuts = vec![-span, 0.0, span, r, r - 5.0 * sd, r + 5.0 * sd, -5.0 * tau, 5.0 * tau];
                cuts.retain(|x| x.abs() <= span);
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                for win in cuts.windows(2) {
                    let (a, b) = (win[0], win[1]);
                    let z = quadrature::integrate(&dens, a, b, tol).integral;
                    w += p * z;
                    m1 += p * quadrature::integrate(|x| x * dens(x), a, b, tol).integral;
                    m2 += p * quadrature::integrate(|x| x * x * dens(x), a, b, tol).integral;
                    if b <= 0.0 {
                        neg += p * z;
                    }
                }
            }
            Component::Uniform { lo, hi } => {
                let h = 1.0 / (hi - lo);
                let dens = |b: f64| h * lik(b);
                let mut cuts = vec![lo, hi, 0.0, r, r - 5.0 * sd, r + 5.0 * sd];
                cuts.retain(|x| *x >= lo && *x <= hi);
                cuts.sort_by(f64::total_cmp);
                cuts.dedup();
                for win in cuts.windows(2) {
                    let (a, b) = (win[0], win[1]);
                    let z = quadrature::integrate(&dens, a, b, tol).integral;
                    w += p * z;
                    m1 += p * quadrature::integrate(|x| x * dens(x), a, b, tol).integral;
                    m2 += p * quadrature::integrate(|x| x * x * dens(x), a, b, tol).integral;
                    if b <= 0.0 {
                        neg += p * z;
                    }
                }
            }
        }
    }
    let lfdr = point / w;
    let pneg = neg / w;
    let ppos = 1.0 - lfdr - pneg;
    let mean = m1 / w;
    Quad {
        lfdr,
        lfsr: (pneg + lfdr).min(ppos + lfdr),
        mean,
        sd: (m2 / w - mean * mean).max(0.0).sqrt(),
    }
}

pub fn posteriors_match_adaptive_quadrature() -> Result<(), String> {
    let cases = [
        (MixtureKind::ScaleNormal, Likelihood::Normal),
        (MixtureKind::SymmetricUniform, Likelihood::Normal),
        (MixtureKind::HalfUniform, Likelihood::Normal),
        (MixtureKind::SymmetricUniform, Likelihood::T { nu: 6.0 }),
        (MixtureKind::HalfUniform, Likelihood::T { nu: 6.0 }),
    ];
    for (i, (kind, likelihood)) in cases.into_iter().enumerate() {
        let mut inst = Instance::new(200, 2, 0.6);
        if let Likelihood::T { nu } = likelihood {
            inst.nu = Some(nu);
        }
        let s = inst.draw(50 + i as u64);
        let cfg = MouthwashConfig {
            kind,
            likelihood,
            ..Default::default()
        };
        let fit = fit_summaries(&s, &cfg).unwrap();
        let genes = mouthwash_summaries(&s, &fit).unwrap();
        let nu = match likelihood {
            Likelihood::T { nu } => Some(nu),
            Likelihood::Normal => None,
        };
        for j in (0..s.p()).step_by(10).take(20) {
            let r = s.betahat[j] - s.alpha.column(j).dot(&fit.z_hat);
            let sd = fit.xi_hat.sqrt() * s.sebetahat[j];
            let o = quad_posterior(&fit.g_hat.components, &fit.g_hat.pi, r, sd, nu);
            let g = &genes[j];
            for (name, ours, oracle) in [
                ("lfdr", g.lfdr, o.lfdr),
                ("lfsr", g.lfsr, o.lfsr),
                ("mean", g.post_mean, o.mean),
                ("sd", g.post_sd, o.sd),
            ] {
                check!(
                    (ours - oracle).abs() < 1e-6,
                    "{kind:?}/{likelihood:?} gene {j} {name}: {ours} vs {oracle}"
                );
            }
        }
    }
    Ok(())
}

pub fn t_uniform_z_gradient_matches_central_differences() -> Result<(), String> {
    let mut r = rng(77);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    for state in 0..20 {
        let mut inst = Instance::new(80, 1 + state % 3, 0.7);
        inst.nu = Some(4.0);
        let s = inst.draw(300 + state as u64);
        let kind = if state % 2 == 0 {
            MixtureKind::SymmetricUniform
        } else {
            MixtureKind::HalfUniform
        };
        let cfg = MouthwashConfig {
            kind,
            likelihood: Likelihood::T { nu: 4.0 },
            ..Default::default()
        };
        let grid = default_grid(&s.betahat, &s.sebetahat, kind).unwrap();
        let pr = WorkingProblem::new(s.betahat.clone(), s.sebetahat.clone(), s.alpha.clone(), &grid, &cfg).unwrap();
        let draws: Vec<f64> = (0..pr.k()).map(|_| Exp1.sample(&mut r)).collect();
        let tot: f64 = draws.iter().sum();
        let pi: Vec<f64> = draws.iter().map(|d| d / tot).collect();
        let z = DVector::from_fn(pr.q(), |_, _| n01.sample(&mut r));
        let xi = r.random_range(0.5..2.0);
        let (_, grad) = pr.loglik_and_z_gradient(&pi, &z, xi);
        let mut fd = DVector::zeros(pr.q());
        for i in 0..pr.q() {
            let h = 1e-5 * z[i].abs().max(1.0);
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[i] += h;
            zm[i] -= h;
            fd[i] = (pr.loglik_and_z_gradient(&pi, &zp, xi).0 - pr.loglik_and_z_gradient(&pi, &zm, xi).0) / (2.0 * h);
        }
        let rel = (&grad - &fd).amax() / grad.amax().max(1e-12);
        check!(rel < 1e-5, "state {state}: relative error {rel}");
    }
    Ok(())
}

pub fn auc_equals_pair_enumeration() -> Result<(), String> {
    let mut r = rng(5);
    for _ in 0..200 {
        let p = r.random_range(2..=50);
        let scores: Vec<f64> = (0..p).map(|_| r.random_range(0..8) as f64).collect();
        let mut is_null: Vec<bool> = (0..p).map(|_| r.random_bool(0.5)).collect();
        is_null[0] = true;
        is_null[1] = false;
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in (0..p).filter(|&i| !is_null[i]) {
            for j in (0..p).filter(|&j| is_null[j]) {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let ours = auc(&scores, &is_null).unwrap();
        check!(ours == wins / pairs, "auc {ours} vs {}", wins / pairs);
    }
    Ok(())
}

pub fn control_gene_t_em_matches_grid_search() -> Result<(), String> {
    let mut r = rng(8);
    let (m, q, nu, xi_true) = (200, 2, 4.0, 2.0);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let t = StudentT::new(nu).unwrap();
    let alpha = DMatrix::from_fn(q, m, |_, _| n01.sample(&mut r));
    let z_true = [0.7, -1.2];
    let s2: Vec<f64> = (0..m).map(|_| r.random_range(0.3..1.5)).collect();
    let bhat: Vec<f64> = (0..m)
        .map(|j| alpha[(0, j)] * z_true[0] + alpha[(1, j)] * z_true[1] + (xi_true * s2[j]).sqrt() * t.sample(&mut r))
        .collect();
    let nus = vec![nu; m];
    let fit = control_gene_tem(&bhat, &alpha, &s2, &nus, &DVector::zeros(q), 1.0).unwrap();
    let ours = control_gene_loglik(&bhat, &alpha, &s2, &nus, &fit.z, fit.xi);

    // independent log-likelihood, xi profiled by golden section on ln xi
    let dist = StudentsT::new(0.0, 1.0, nu).unwrap();
    let ll = |z: [f64; 2], xi: f64| -> f64 {
        (0..m)
            .map(|j| {
                let sd = (xi * s2[j]).sqrt();
                dist.ln_pdf((bhat[j] - alpha[(0, j)] * z[0] - alpha[(1, j)] * z[1]) / sd) - sd.ln()
            })
            .sum()
    };
    let profile = |z: [f64; 2]| -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = ((0.01f64).ln(), (100f64).ln());
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if ll(z, c.exp()) > ll(z, d.exp()) {
                b = d;
            } else {
                a = c;
            }
        }
        ll(z, (0.5 * (a + b)).exp())
    };
    let (mut center, mut half) = ([0.0, 0.0], 3.0);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..6 {
        let mut arg = center;
        for a in 0..=40 {
            for b in 0..=40 {
                let z = [
                    center[0] - half + a as f64 * half / 20.0,
                    center[1] - half + b as f64 * half / 20.0,
                ];
                let v = profile(z);
                if v > best {
                    best = v;
                    arg = z;
                }
            }
        }
        center = arg;
        half /= 8.0;
    }
    check!((ours - best).abs() < 1e-3, "t-EM {ours} vs grid {best}");
    Ok(())
}

pub fn fits_depend_on_alpha_only_through_its_rowspace() -> Result<(), String> {
    let mut r = rng(21);
    let kinds = [
        MixtureKind::ScaleNormal,
        MixtureKind::SymmetricUniform,
        MixtureKind::HalfUniform,
    ];
    for d in 0..20u64 {
        let q = 1 + (d as usize) % 3;
        let s = Instance::new(150, q, 0.8).draw(400 + d);
        let a = invertible(q, &mut r);
        let s2 = s.with_alpha(&a * &s.alpha);
        let cfg = MouthwashConfig {
            kind: kinds[d as usize % 3],
            rel_tol: 1e-15,
            max_iters: 5000,
            ..Default::default()
        };
        let (f1, f2) = (fit_summaries(&s, &cfg).unwrap(), fit_summaries(&s2, &cfg).unwrap());
        let (g1, g2) = (
            mouthwash_summaries(&s, &f1).unwrap(),
            mouthwash_summaries(&s2, &f2).unwrap(),
        );
        for (x, y) in f1.g_hat.pi.iter().zip(&f2.g_hat.pi) {
            check!((x - y).abs() < 1e-6, "dataset {d}: pi {x} vs {y}");
        }
        for (x, y) in g1.iter().zip(&g2) {
            check!(
                (x.lfdr - y.lfdr).abs() < 1e-6,
                "dataset {d}: lfdr {} vs {}",
                x.lfdr,
                y.lfdr
            );
            check!((x.lfsr - y.lfsr).abs() < 1e-6, "dataset {d}: lfsr");
        }
    }
    Ok(())
}

pub fn xi_penalty_moves_xi_upwards() -> Result<(), String> {
    for seed in 0..5 {
        let mut inst = Instance::new(300, 2, 0.8);
        inst.xi = 1.5;
        let s = inst.draw(600 + seed);
        let xi_with = |scaling, lambda_xi| {
            let cfg = MouthwashConfig {
                scaling,
                lambda_xi,
                ..Default::default()
            };
            fit_summaries(&s, &cfg).unwrap().xi_hat
        };
        let (free, pen) = (
            xi_with(EffectScaling::Identity, 0.0),
            xi_with(EffectScaling::Identity, 5.0),
        );
        check!(pen >= free - 1e-8, "gamma 0: {pen} < {free}");
        let (low, high) = (
            xi_with(EffectScaling::ByStandardError, 0.5),
            xi_with(EffectScaling::ByStandardError, 20.0),
        );
        check!(high >= low - 1e-8, "gamma 1: {high} < {low}");
    }
    Ok(())
}

pub fn thinning_halves_the_mean() -> Result<(), String> {
    let mut r = rng(99);
    let pois = Poisson::new(1000.0).unwrap();
    let n = 10_000;
    let z: Vec<u64> = (0..n).map(|_| pois.sample(&mut r) as u64).collect();
    let thinned = thin_column(&z, &vec![1u8; n], -1.0, &mut r);
    let x: Vec<f64> = thinned.iter().map(|&c| c as f64).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    check!((mean - 500.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    Ok(())
}
