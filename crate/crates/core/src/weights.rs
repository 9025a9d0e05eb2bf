//! Penalized maximum-likelihood mixture weights for a fixed component
//! likelihood matrix: maximize
//! `sum_j ln(sum_k pi_k L_jk) + sum_k (lambda_k - 1) ln pi_k` over the simplex.
//!
//! The problem is convex. We iterate the EM fixed-point map and accelerate it
//! with SQUAREM, falling back to the plain EM step whenever the extrapolated
//! point is worse.

use crate::par;

/// Component log-likelihoods, row-major `p x k`, stored with per-row maxima
/// removed so the exponentiated rows lie in `(0, 1]`.
#[derive(Debug, Clone)]
pub struct LikelihoodMatrix {
    p: usize,
    k: usize,
    scaled: Vec<f64>,
    row_max: Vec<f64>,
}

impl LikelihoodMatrix {
    /// Builds from row-major log-likelihoods.
    pub fn from_log(p: usize, k: usize, log_lik: Vec<f64>) -> Self {
        assert_eq!(log_lik.len(), p * k);
        let mut scaled = log_lik;
        let mut row_max = vec![0.0; p];
        for j in 0..p {
            let row = &mut scaled[j * k..(j + 1) * k];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row_max[j] = m;
            for v in row.iter_mut() {
                *v = if m.is_finite() { (*v - m).exp() } else { 0.0 };
            }
        }
        Self { p, k, scaled, row_max }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.scaled[j * self.k..(j + 1) * self.k]
    }

    /// `sum_j ln(sum_k pi_k L_jk)`.
    pub fn log_lik(&self, pi: &[f64]) -> f64 {
        par::sum(self.p, |j| {
            let s: f64 = self.row(j).iter().zip(pi).map(|(l, w)| l * w).sum();
            s.ln() + self.row_max[j]
        })
    }

    /// Posterior component probabilities, row-major `p x k`.
    pub fn responsibilities(&self, pi: &[f64]) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = par::map(self.p, |j| {
            let row = self.row(j);
            let s: f64 = row.iter().zip(pi).map(|(l, w)| l * w).sum();
            row.iter().zip(pi).map(|(l, w)| l * w / s).collect()
        });
        rows.concat()
    }
}

/// Penalty contribution `sum_k (lambda_k - 1) ln pi_k`, with `0 ln 0 = 0`.
pub fn penalty_term(pi: &[f64], lambda: &[f64]) -> f64 {
    pi.iter()
        .zip(lambda)
        .map(|(&w, &l)| {
            let c = l - 1.0;
            if c == 0.0 {
                0.0
            } else if w > 0.0 {
                c * w.ln()
            } else {
                f64::NEG_INFINITY * c.signum()
            }
        })
        .sum()
}

pub fn objective(lik: &LikelihoodMatrix, pi: &[f64], lambda: &[f64]) -> f64 {
    lik.log_lik(pi) + penalty_term(pi, lambda)
}

/// One EM update of the weights.
pub fn em_update(lik: &LikelihoodMatrix, pi: &[f64], lambda: &[f64]) -> Vec<f64> {
    let k = lik.k;
    let counts = par::sum_vec(lik.p, k, |j, acc| {
        let row = lik.row(j);
        let s: f64 = row.iter().zip(pi).map(|(l, w)| l * w).sum();
        if s > 0.0 {
            for m in 0..k {
                acc[m] += row[m] * pi[m] / s;
            }
        }
    });
    let mut out: Vec<f64> = counts.iter().zip(lambda).map(|(c, l)| (c + l - 1.0).max(0.0)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

#[derive(Debug, Clone)]
pub struct WeightsSolution {
    pub pi: Vec<f64>,
    pub objective: f64,
    pub iters: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct WeightsOptions {
    pub max_iters: usize,
    /// Stop when the objective gain falls below `tol * (1 + |objective|)`.
    pub tol: f64,
}

impl Default for WeightsOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            tol: 1e-13,
        }
    }
}

fn project(v: &mut [f64]) {
    for x in v.iter_mut() {
        if !(*x > 0.0) {
            *x = 0.0;
        }
    }
    let t: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= t;
    }
}

/// Solves the penalized weights problem starting from `init`.
pub fn solve(lik: &LikelihoodMatrix, lambda: &[f64], init: &[f64], opts: &WeightsOptions) -> WeightsSolution {
    let mut pi = init.to_vec();
    project(&mut pi);
    let mut f = objective(lik, &pi, lambda);
    let mut converged = false;
    let mut iters = 0;
    while iters < opts.max_iters {
        iters += 1;
        let p1 = em_update(lik, &pi, lambda);
        let p2 = em_update(lik, &p1, lambda);
        let r: Vec<f64> = p1.iter().zip(&pi).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = p2.iter().zip(&p1).zip(&r).map(|((a, b), c)| a - b - c).collect();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let f2 = objective(lik, &p2, lambda);
        let (mut next, mut fnext) = (p2, f2);
        if vn > 0.0 && rn > 0.0 {
            // step length, halved toward the plain double EM step until the
            // extrapolated point stays inside the simplex and improves
            let mut alpha = (-rn / vn).min(-1.0);
            while alpha < -1.0 - 1e-3 {
                let cand: Vec<f64> = pi
                    .iter()
                    .zip(&r)
                    .zip(&v)
                    .map(|((p0, r), v)| p0 - 2.0 * alpha * r + alpha * alpha * v)
                    .collect();
                if cand.iter().all(|&x| x > 0.0) {
                    let mut cand = cand;
                    project(&mut cand);
                    let cand = em_update(lik, &cand, lambda);
                    let fc = objective(lik, &cand, lambda);
                    if fc.is_finite() && fc > fnext {
                        next = cand;
                        fnext = fc;
                        break;
                    }
                }
                alpha = 0.5 * (alpha - 1.0);
            }
        }
        let gain = fnext - f;
        let delta = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gain >= 0.0 || !f.is_finite() {
            pi = next;
            f = fnext;
        }
        if gain.abs() <= opts.tol * (1.0 + f.abs()) || delta < 1e-14 {
            converged = true;
            break;
        }
    }
    WeightsSolution {
        pi,
        objective: f,
        iters,
        converged,
    }
}
