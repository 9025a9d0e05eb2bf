#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT, Uniform};

use unwash_core::model::EffectSummaries;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance of the confounded normal-means model: `bhat = beta +
/// alpha^T z + sqrt(xi) s e`, a fraction `pi0` of zero effects, non-null
/// effects `N(0, 2^2)`, `s ~ U(0.5, 1.5)`. With `nu` the noise is t.
pub struct Instance {
    pub p: usize,
    pub q: usize,
    pub pi0: f64,
    pub xi: f64,
    pub nu: Option<f64>,
}

impl Instance {
    pub fn new(p: usize, q: usize, pi0: f64) -> Self {
        Self {
            p,
            q,
            pi0,
            xi: 1.0,
            nu: None,
        }
    }

    pub fn draw(&self, seed: u64) -> EffectSummaries {
        let mut r = rng(seed);
        let n01 = Normal::new(0.0, 1.0).unwrap();
        let su = Uniform::new(0.5, 1.5).unwrap();
        let alpha = DMatrix::from_fn(self.q, self.p, |_, _| n01.sample(&mut r));
        let z: Vec<f64> = (0..self.q).map(|_| n01.sample(&mut r)).collect();
        let shat: Vec<f64> = (0..self.p).map(|_| su.sample(&mut r)).collect();
        let t = self.nu.map(|nu| StudentT::new(nu).unwrap());
        let bhat = (0..self.p)
            .map(|j| {
                let beta = if r.random::<f64>() < self.pi0 {
                    0.0
                } else {
                    2.0 * n01.sample(&mut r)
                };
                let conf: f64 = (0..self.q).map(|i| alpha[(i, j)] * z[i]).sum();
                let e = match &t {
                    Some(t) => t.sample(&mut r),
                    None => n01.sample(&mut r),
                };
                beta + conf + self.xi.sqrt() * shat[j] * e
            })
            .collect();
        EffectSummaries::new(bhat, shat, alpha).unwrap()
    }
}

/// Random `q x q` matrix with singular values in `[0.5, 2]`.
pub fn invertible(q: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let m = DMatrix::from_fn(q, q, |_, _| n01.sample(r));
    let svd = m.svd(true, true);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(q, |_, _| r.random_range(0.5..2.0)));
    svd.u.unwrap() * d * svd.v_t.unwrap()
}
