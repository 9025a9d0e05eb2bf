//! Null count data with signal planted by binomial thinning.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

/// Offsets separating the random streams used for different stages.
const THIN_KEY: u64 = 0x5eed_7417;
const BASE_KEY: u64 = 0xba5e_c0de;

/// Row-major `n x p` matrix of counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    n: usize,
    p: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn new(n: usize, p: usize, data: Vec<u64>) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::DimensionMismatch(format!(
                "{} counts for a {n} x {p} matrix",
                data.len()
            )));
        }
        Ok(Self { n, p, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.p + j]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn column(&self, j: usize) -> Vec<u64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    fn from_columns(n: usize, cols: &[Vec<u64>]) -> Self {
        let p = cols.len();
        let mut data = vec![0; n * p];
        for (j, c) in cols.iter().enumerate() {
            for i in 0..n {
                data[i * p + j] = c[i];
            }
        }
        Self { n, p, data }
    }

    /// `log2(count + pseudocount)`.
    pub fn log2(&self, pseudocount: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p, |i, j| (self.get(i, j) as f64 + pseudocount).log2())
    }

    fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let data = rows
            .iter()
            .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self {
            n: rows.len(),
            p: cols.len(),
            data,
        }
    }
}

/// Synthetic base counts: log-normal gene rates, optional planted low-rank
/// log-rate factors and independent log-normal biological noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub uv_rank: usize,
    pub uv_strength: f64,
    pub noise_sd: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            uv_rank: 0,
            uv_strength: 0.5,
            noise_sd: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub enum BaseCounts {
    Synthetic(SyntheticSpec),
    /// Samples are drawn from the rows; the `p` most expressed genes are kept.
    Supplied(CountMatrix),
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub n: usize,
    pub p: usize,
    pub pi0: f64,
    pub effect_sd: f64,
    pub m_controls: usize,
    pub seed: u64,
    pub base: BaseCounts,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 20,
            p: 1000,
            pi0: 0.9,
            effect_sd: 0.8,
            m_controls: 0,
            seed: 1,
            base: BaseCounts::Synthetic(SyntheticSpec::default()),
        }
    }
}

impl SimulationConfig {
    pub fn n_nonnull(&self) -> usize {
        ((1.0 - self.pi0) * self.p as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.n % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n must be even and at least 2, got {}",
                self.n
            )));
        }
        if self.p == 0 {
            return Err(Error::InvalidConfig("p must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.pi0) {
            return Err(Error::InvalidConfig(format!(
                "pi0 must lie in [0, 1], got {}",
                self.pi0
            )));
        }
        if !(self.effect_sd > 0.0) {
            return Err(Error::InvalidConfig("effect_sd must be positive".into()));
        }
        if self.m_controls > self.p - self.n_nonnull() {
            return Err(Error::InvalidConfig(format!(
                "{} controls requested but only {} null genes",
                self.m_controls,
                self.p - self.n_nonnull()
            )));
        }
        match &self.base {
            BaseCounts::Synthetic(s) => {
                if !(s.uv_strength >= 0.0) || !(s.noise_sd >= 0.0) {
                    return Err(Error::InvalidConfig(
                        "uv_strength and noise_sd must be nonnegative".into(),
                    ));
                }
            }
            BaseCounts::Supplied(c) => {
                if c.n() < self.n || c.p() < self.p {
                    return Err(Error::InvalidConfig(format!(
                        "base counts are {} x {}, need at least {} x {}",
                        c.n(),
                        c.p(),
                        self.n,
                        self.p
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedStudy {
    /// Thinned counts.
    pub counts: CountMatrix,
    /// `log2(counts + 1)`.
    pub y: DMatrix<f64>,
    /// Group indicator per sample.
    pub groups: Vec<u8>,
    pub is_null: Vec<bool>,
    /// log2 effects; zero for nulls.
    pub effects: Vec<f64>,
    pub controls: Vec<usize>,
}

impl SimulatedStudy {
    /// Intercept and group indicator.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.groups.len(),
            2,
            |i, c| if c == 0 { 1.0 } else { self.groups[i] as f64 },
        )
    }

    pub fn pi0(&self) -> f64 {
        self.is_null.iter().filter(|&&b| b).count() as f64 / self.is_null.len() as f64
    }
}

fn stream(seed: u64, key: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
    rng.set_stream(j as u64);
    rng
}

/// Synthetic `n x p` counts with gene rates `LogNormal(ln 500, 1)`.
pub fn synthetic_base_counts(n: usize, p: usize, seed: u64, spec: &SyntheticSpec) -> CountMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BASE_KEY);
    let rate = LogNormal::new(500f64.ln(), 1.0).unwrap();
    let std = Normal::new(0.0, 1.0).unwrap();
    let lambda: Vec<f64> = (0..p).map(|_| rate.sample(&mut rng)).collect();
    let k = if spec.uv_strength > 0.0 { spec.uv_rank } else { 0 };
    let u = DMatrix::from_fn(n, k, |_, _| std.sample(&mut rng));
    let v = DMatrix::from_fn(k, p, |_, _| std.sample(&mut rng));
    let cols: Vec<Vec<u64>> = par::map(p, |j| {
        let mut g = stream(seed, BASE_KEY, j);
        (0..n)
            .map(|i| {
                let mut lr = lambda[j].ln();
                for f in 0..k {
                    lr += spec.uv_strength * u[(i, f)] * v[(f, j)];
                }
                if spec.noise_sd > 0.0 {
                    lr += spec.noise_sd * std.sample(&mut g);
                }
                Poisson::new(lr.exp()).map(|d| d.sample(&mut g) as u64).unwrap_or(0)
            })
            .collect()
    });
    CountMatrix::from_columns(n, &cols)
}

/// Thins counts of sample `i` by `2^{a x_i}` (a < 0) or `2^{-a (1 - x_i)}` (a > 0).
pub fn thin_column(z: &[u64], groups: &[u8], a: f64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    z.iter()
        .zip(groups)
        .map(|(&c, &x)| {
            let x = x as f64;
            let prob = if a < 0.0 {
                2f64.powf(a * x)
            } else if a > 0.0 {
                2f64.powf(-a * (1.0 - x))
            } else {
                1.0
            };
            if prob >= 1.0 || c == 0 {
                c
            } else {
                Binomial::new(c, prob).unwrap().sample(rng)
            }
        })
        .collect()
}

/// Indices (ascending) of the `p` columns with the largest totals; ties go to
/// the lower index.
pub fn top_expressed(c: &CountMatrix, p: usize) -> Vec<usize> {
    let totals: Vec<u64> = (0..c.p()).map(|j| c.column(j).iter().sum()).collect();
    let mut cols: Vec<usize> = (0..c.p()).collect();
    cols.sort_by(|&a, &b| totals[b].cmp(&totals[a]).then(a.cmp(&b)));
    cols.truncate(p);
    cols.sort_unstable();
    cols
}

pub fn simulate(cfg: &SimulationConfig) -> Result<SimulatedStudy> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let base = match &cfg.base {
        BaseCounts::Synthetic(spec) => synthetic_base_counts(n, p, cfg.seed, spec),
        BaseCounts::Supplied(c) => {
            let mut rows = sample(&mut rng, c.n(), n).into_vec();
            rows.sort_unstable();
            c.select(&rows, &top_expressed(c, p))
        }
    };

    let mut groups: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    groups.shuffle(&mut rng);

    let mut nonnull = sample(&mut rng, p, cfg.n_nonnull()).into_vec();
    nonnull.sort_unstable();
    let mut is_null = vec![true; p];
    let mut effects = vec![0.0; p];
    let eff = Normal::new(0.0, cfg.effect_sd).unwrap();
    for &j in &nonnull {
        is_null[j] = false;
        effects[j] = eff.sample(&mut rng);
    }
    let nulls: Vec<usize> = (0..p).filter(|&j| is_null[j]).collect();
    let mut controls: Vec<usize> = sample(&mut rng, nulls.len(), cfg.m_controls)
        .into_iter()
        .map(|i| nulls[i])
        .collect();
    controls.sort_unstable();

    let cols: Vec<Vec<u64>> = par::map(p, |j| {
        let z = base.column(j);
        if effects[j] == 0.0 {
            z
        } else {
            thin_column(&z, &groups, effects[j], &mut stream(cfg.seed, THIN_KEY, j))
        }
    });
    let counts = CountMatrix::from_columns(n, &cols);
    let y = counts.log2(1.0);
    Ok(SimulatedStudy {
        counts,
        y,
        groups,
        is_null,
        effects,
        controls,
    })
}
