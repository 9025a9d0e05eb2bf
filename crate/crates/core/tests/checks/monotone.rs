//! Every iteration of each fitting algorithm is nondecreasing in its objective.

use super::common::{rng, Instance};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use unwash_core::backwash::{backwash_init, elbo, sweep, BackwashConfig};
use unwash_core::factor::control_gene_tem;
use unwash_core::mixture::{default_grid, MixtureKind};
use unwash_core::mouthwash::{coord_ascent_step, em_normal_step, Likelihood, MouthwashConfig, State, WorkingProblem};
use unwash_core::weights::{self, WeightsOptions};

const SLACK: f64 = 1e-10;
const ELBO_SLACK: f64 = 1e-8;
const INSTANCES: u64 = 50;

fn instance(seed: u64) -> Instance {
    let mut r = rng(1000 + seed);
    let mut inst = Instance::new(r.random_range(40..200), r.random_range(1..4), r.random_range(0.5..1.0));
    inst.xi = r.random_range(0.6..1.8);
    inst
}

fn start(problem: &WorkingProblem, grid_pi: &[f64]) -> State {
    State {
        pi: grid_pi.to_vec(),
        z: problem.gls_start().unwrap(),
        xi: 1.0,
    }
}

fn nondecreasing(trace: &[f64], slack: f64, what: &str) -> Result<(), String> {
    for (i, w) in trace.windows(2).enumerate() {
        check!(w[1] >= w[0] - slack, "{what}: step {i} went from {} to {}", w[0], w[1]);
    }
    Ok(())
}

pub fn em_objective_nondecreasing() -> Result<(), String> {
    for seed in 0..INSTANCES {
        let s = instance(seed).draw(seed);
        let cfg = MouthwashConfig::default();
        let grid = default_grid(&s.betahat, &s.sebetahat, cfg.kind).unwrap();
        let pr = WorkingProblem::new(s.betahat.clone(), s.sebetahat.clone(), s.alpha.clone(), &grid, &cfg).unwrap();
        let mut st = start(&pr, &grid.pi);
        let mut trace = vec![pr.objective(&st)];
        for _ in 0..40 {
            // the plain EM sweep, then the exact weight re-solve, each checked
            st = em_normal_step(&pr, &st).unwrap();
            trace.push(pr.objective(&st));
            let lik = pr.component_matrix(&st.z, st.xi);
            st.pi = weights::solve(&lik, &pr.penalty.lambda, &st.pi, &WeightsOptions::default()).pi;
            trace.push(pr.objective(&st));
        }
        nondecreasing(&trace, SLACK, &format!("EM instance {seed}"))?;
    }
    Ok(())
}

pub fn coordinate_ascent_objective_nondecreasing() -> Result<(), String> {
    for seed in 0..INSTANCES {
        let mut inst = instance(seed);
        let t = seed % 2 == 1;
        if t {
            inst.nu = Some(5.0);
        }
        let s = inst.draw(seed);
        let cfg = MouthwashConfig {
            kind: if seed % 4 < 2 {
                MixtureKind::SymmetricUniform
            } else {
                MixtureKind::HalfUniform
            },
            likelihood: if t {
                Likelihood::T { nu: 5.0 }
            } else {
                Likelihood::Normal
            },
            ..Default::default()
        };
        let grid = default_grid(&s.betahat, &s.sebetahat, cfg.kind).unwrap();
        let pr = WorkingProblem::new(s.betahat.clone(), s.sebetahat.clone(), s.alpha.clone(), &grid, &cfg).unwrap();
        let mut st = start(&pr, &grid.pi);
        let mut trace = vec![pr.objective(&st)];
        for _ in 0..15 {
            st = coord_ascent_step(&pr, &st).unwrap().0;
            trace.push(pr.objective(&st));
        }
        nondecreasing(&trace, SLACK, &format!("coordinate ascent instance {seed}"))?;
    }
    Ok(())
}

pub fn control_gene_t_em_nondecreasing() -> Result<(), String> {
    let n01 = Normal::new(0.0, 1.0).unwrap();
    for seed in 0..INSTANCES {
        let mut r = rng(2000 + seed);
        let (m, q) = (r.random_range(30..150), r.random_range(1..4));
        let alpha = nalgebra::DMatrix::from_fn(q, m, |_, _| n01.sample(&mut r));
        let z: Vec<f64> = (0..q).map(|_| n01.sample(&mut r)).collect();
        let s2: Vec<f64> = (0..m).map(|_| r.random_range(0.2..2.0)).collect();
        let nu: Vec<f64> = (0..m).map(|_| r.random_range(3.0..30.0)).collect();
        let xi: f64 = r.random_range(0.5..3.0);
        let bhat: Vec<f64> = (0..m)
            .map(|j| {
                let t = rand_distr::StudentT::new(nu[j]).unwrap().sample(&mut r);
                (0..q).map(|i| alpha[(i, j)] * z[i]).sum::<f64>() + (xi * s2[j]).sqrt() * t
            })
            .collect();
        let z0 = DVector::from_fn(q, |_, _| n01.sample(&mut r));
        let fit = control_gene_tem(&bhat, &alpha, &s2, &nu, &z0, 1.0).unwrap();
        nondecreasing(&fit.trace, SLACK, &format!("t-EM instance {seed}"))?;
    }
    Ok(())
}

pub fn backwash_elbo_nondecreasing() -> Result<(), String> {
    for seed in 0..INSTANCES {
        let s = instance(seed).draw(seed);
        for exact_weights in [true, false] {
            let cfg = BackwashConfig {
                exact_weights,
                ..Default::default()
            };
            let grid = default_grid(&s.betahat, &s.sebetahat, MixtureKind::ScaleNormal).unwrap();
            let mut st = backwash_init(&s, &grid, &cfg).unwrap();
            let mut trace = Vec::new();
            for _ in 0..40 {
                sweep(&mut st, &s.betahat, &s.sebetahat, &cfg).unwrap();
                trace.push(elbo(&st, &s.betahat, &s.sebetahat));
            }
            nondecreasing(
                &trace,
                ELBO_SLACK,
                &format!("ELBO instance {seed} exact={exact_weights}"),
            )?;
        }
    }
    Ok(())
}
