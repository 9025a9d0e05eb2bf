//! Standardized normal and Student-t helpers used by the likelihood code.
//!
//! Everything here works with the *standard* (location 0, scale 1) form; callers
//! standardize `(x - center) / scale` themselves and add `-ln(scale)` to log
//! densities where needed.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Degrees of freedom above which the t-distribution is evaluated as a normal.
const T_NORMAL_CUTOFF: f64 = 1e7;

/// Observation noise family for `bhat_j` given its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Normal,
    StudentT { nu: f64, log_norm: f64 },
}

impl Noise {
    pub fn normal() -> Self {
        Noise::Normal
    }

    /// Student-t with `nu` degrees of freedom. Infinite (or very large) `nu`
    /// collapses to the normal.
    pub fn student_t(nu: f64) -> Self {
        if !nu.is_finite() || nu > T_NORMAL_CUTOFF {
            return Noise::Normal;
        }
        let log_norm = ln_gamma_half_ratio(nu) - 0.5 * (nu * std::f64::consts::PI).ln();
        Noise::StudentT { nu, log_norm }
    }

    pub fn nu(&self) -> f64 {
        match self {
            Noise::Normal => f64::INFINITY,
            Noise::StudentT { nu, .. } => *nu,
        }
    }

    /// Log density of the standard form at `u`.
    #[inline]
    pub fn ln_pdf(&self, u: f64) -> f64 {
        match *self {
            Noise::Normal => -0.5 * u * u - LN_SQRT_2PI,
            Noise::StudentT { nu, log_norm } => log_norm - 0.5 * (nu + 1.0) * (u * u / nu).ln_1p(),
        }
    }

    #[inline]
    pub fn pdf(&self, u: f64) -> f64 {
        self.ln_pdf(u).exp()
    }

    /// Lower-tail probability of the standard form.
    pub fn cdf(&self, u: f64) -> f64 {
        if u <= 0.0 {
            self.lower_tail(u)
        } else {
            1.0 - self.lower_tail(-u)
        }
    }

    /// Upper-tail probability of the standard form.
    pub fn sf(&self, u: f64) -> f64 {
        self.cdf(-u)
    }

    /// `P(U <= u)` for `u <= 0`, computed without cancellation.
    fn lower_tail(&self, u: f64) -> f64 {
        debug_assert!(u <= 0.0);
        match *self {
            Noise::Normal => 0.5 * erfc(-u / std::f64::consts::SQRT_2),
            Noise::StudentT { nu, .. } => {
                let h = nu / (nu + u * u);
                0.5 * beta_reg(0.5 * nu, 0.5, h)
            }
        }
    }

    /// `ln P(U <= u)`, accurate far into the lower tail.
    pub fn ln_cdf(&self, u: f64) -> f64 {
        if u > 0.0 {
            return (-self.lower_tail(-u)).ln_1p();
        }
        match *self {
            Noise::Normal => ln_ndtr_lower(u),
            Noise::StudentT { nu, .. } => {
                let p = self.lower_tail(u);
                if p > 0.0 {
                    p.ln()
                } else {
                    // P(U <= u) ~ pdf(u) |u| / nu far out in the tail.
                    self.ln_pdf(u) + (-u / nu).ln()
                }
            }
        }
    }

    /// `ln(F(hi) - F(lo))` for `lo <= hi`; `-inf` when the interval is empty.
    pub fn ln_cdf_diff(&self, hi: f64, lo: f64) -> f64 {
        if hi <= lo {
            return f64::NEG_INFINITY;
        }
        if lo >= 0.0 {
            // mirror into the lower tail: F(hi) - F(lo) = F(-lo) - F(-hi)
            return self.ln_cdf_diff(-lo, -hi);
        }
        if hi <= 0.0 {
            let a = self.ln_cdf(hi);
            let b = self.ln_cdf(lo);
            return a + ln1mexp(b - a);
        }
        let mass = 1.0 - self.lower_tail(lo) - self.lower_tail(-hi);
        mass.max(0.0).ln()
    }

    /// `F(hi) - F(lo)` computed from the tail closest to the interval.
    pub fn cdf_diff(&self, hi: f64, lo: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        if lo >= 0.0 {
            self.lower_tail(-lo) - self.lower_tail(-hi)
        } else if hi <= 0.0 {
            self.lower_tail(hi) - self.lower_tail(lo)
        } else {
            1.0 - self.lower_tail(lo) - self.lower_tail(-hi)
        }
    }
}

/// `ln(1 - exp(x))` for `x <= 0`.
#[inline]
pub fn ln1mexp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Log of the standard normal cdf for `u <= 0`.
fn ln_ndtr_lower(u: f64) -> f64 {
    if u > -30.0 {
        return (0.5 * erfc(-u / std::f64::consts::SQRT_2)).ln();
    }
    // asymptotic Mills-ratio series
    let z2 = 1.0 / (u * u);
    let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2.powi(4);
    -0.5 * u * u - (-u).ln() - LN_SQRT_2PI + series.ln()
}

/// `ln Γ((nu + 1) / 2) - ln Γ(nu / 2)` without cancellation for large `nu`.
pub fn ln_gamma_half_ratio(nu: f64) -> f64 {
    let x = 0.5 * nu;
    if x < 50.0 {
        ln_gamma(x + 0.5) - ln_gamma(x)
    } else {
        let ix = 1.0 / x;
        0.5 * x.ln() - ix / 8.0 + ix.powi(3) / 192.0 - ix.powi(5) / 640.0
    }
}

/// Log density of `N(x | mean, var)`.
#[inline]
pub fn ln_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - LN_SQRT_2PI
}

/// Numerically stable `ln(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Trigamma function ψ'(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let ix = 1.0 / x;
    let ix2 = ix * ix;
    acc + ix
        + 0.5 * ix2
        + ix * ix2 * (1.0 / 6.0 - ix2 * (1.0 / 30.0 - ix2 * (1.0 / 42.0 - ix2 * (1.0 / 30.0 - ix2 * (5.0 / 66.0)))))
}

/// Inverse of the trigamma function by Newton iteration (Smyth's scheme).
pub fn inv_trigamma(y: f64) -> f64 {
    if y > 1e7 {
        return 1.0 / y.sqrt();
    }
    if y < 1e-6 {
        return 1.0 / y;
    }
    let mut x = 0.5 + 1.0 / y;
    for _ in 0..50 {
        let tri = trigamma(x);
        let dif = tri * (1.0 - tri / y) / tetragamma(x);
        x += dif;
        if -dif / x < 1e-10 {
            break;
        }
    }
    x
}

fn tetragamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 2.0 / (x * x * x);
        x += 1.0;
    }
    let ix = 1.0 / x;
    let ix2 = ix * ix;
    acc - ix2 - ix2 * ix - ix2 * ix2 * (0.5 - ix2 * (1.0 / 6.0 - ix2 * (1.0 / 6.0 - ix2 * 0.3)))
}
