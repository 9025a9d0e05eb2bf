//! Unimodal mixture priors: a point mass at zero plus normal or uniform
//! components on a fixed grid, and their convolution with the noise model.

use serde::{Deserialize, Serialize};

use crate::dist::{ln_normal_pdf, Noise};
use crate::error::{Error, Result};
use crate::weights::penalty_term;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureKind {
    /// Zero-mean normals, `N(0, tau_m^2)`.
    #[serde(rename = "normal")]
    ScaleNormal,
    /// `U[-a_m, a_m]`.
    #[serde(rename = "uniform")]
    SymmetricUniform,
    /// `U[-a_m, 0]` and `U[0, a_m]`.
    #[serde(rename = "halfuniform")]
    HalfUniform,
}

impl MixtureKind {
    pub fn is_uniform(self) -> bool {
        !matches!(self, MixtureKind::ScaleNormal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Component {
    PointMass,
    Normal { sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Component {
    /// Log of the component convolved with `noise` scaled by `sd`, evaluated
    /// at residual `r = x - center`.
    #[inline]
    pub fn ln_convolved(&self, r: f64, sd: f64, noise: &Noise) -> f64 {
        match *self {
            Component::PointMass => noise.ln_pdf(r / sd) - sd.ln(),
            Component::Normal { sd: tau } => ln_normal_pdf(r, 0.0, sd * sd + tau * tau),
            Component::Uniform { lo, hi } => noise.ln_cdf_diff((r - lo) / sd, (r - hi) / sd) - (hi - lo).ln(),
        }
    }

    fn scaled(&self, c: f64) -> Component {
        match *self {
            Component::PointMass => Component::PointMass,
            Component::Normal { sd } => Component::Normal { sd: sd * c },
            Component::Uniform { lo, hi } => Component::Uniform { lo: lo * c, hi: hi * c },
        }
    }
}

/// `g = pi_0 delta_0 + sum_m pi_m f_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalMixture {
    pub kind: MixtureKind,
    pub components: Vec<Component>,
    pub pi: Vec<f64>,
}

impl UnimodalMixture {
    pub fn new(kind: MixtureKind, components: Vec<Component>, pi: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components[0] != Component::PointMass {
            return Err(Error::InvalidInput("component 0 must be the point mass".into()));
        }
        if pi.len() != components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                pi.len(),
                components.len()
            )));
        }
        for (m, c) in components.iter().enumerate().skip(1) {
            match (*c, kind) {
                (Component::Normal { sd }, MixtureKind::ScaleNormal) if sd >= 0.0 => {}
                (Component::Uniform { lo, hi }, k) if k.is_uniform() => {
                    if lo == hi {
                        return Err(Error::DegenerateComponent(m));
                    }
                    if !(lo <= 0.0 && 0.0 <= hi) {
                        return Err(Error::InvalidInput(format!("component {m} does not contain 0")));
                    }
                }
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "component {m} does not match mixture kind"
                    )))
                }
            }
        }
        if pi.iter().any(|&w| !(w >= 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput("mixture weights must lie on the simplex".into()));
        }
        Ok(Self { kind, components, pi })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn pi0(&self) -> f64 {
        self.pi[0]
    }

    /// Grid scale for each component (0 for the point mass).
    pub fn scales(&self) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| match *c {
                Component::PointMass => 0.0,
                Component::Normal { sd } => sd,
                Component::Uniform { lo, hi } => lo.abs().max(hi.abs()),
            })
            .collect()
    }

    /// Same grid, rescaled by `c > 0`.
    pub fn rescaled(&self, c: f64) -> Self {
        Self {
            kind: self.kind,
            components: self.components.iter().map(|m| m.scaled(c)).collect(),
            pi: self.pi.clone(),
        }
    }

    pub fn with_pi(&self, pi: Vec<f64>) -> Self {
        Self {
            kind: self.kind,
            components: self.components.clone(),
            pi,
        }
    }

    /// Prior variance of the mixture.
    pub fn variance(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.pi)
            .map(|(c, w)| {
                w * match *c {
                    Component::PointMass => 0.0,
                    Component::Normal { sd } => sd * sd,
                    Component::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
                }
            })
            .sum()
    }
}

/// Checks that the noise model is supported for this mixture kind.
pub fn check_compatible(kind: MixtureKind, noise: &Noise) -> Result<()> {
    if kind == MixtureKind::ScaleNormal && matches!(noise, Noise::StudentT { .. }) {
        return Err(Error::InvalidConfig(
            "t likelihood is only available with uniform mixture components".into(),
        ));
    }
    Ok(())
}

const GRID_MULT: f64 = std::f64::consts::SQRT_2;

/// Geometric grid from `min(shat) / 10` up to `2 sqrt(max(bhat^2 - shat^2))`
/// in steps of `sqrt(2)`, anchored at the top. `pi_0` starts at `1 - 1/(10 M)`.
pub fn default_grid(bhat: &[f64], shat: &[f64], kind: MixtureKind) -> Result<UnimodalMixture> {
    if bhat.len() != shat.len() || bhat.is_empty() {
        return Err(Error::DimensionMismatch(
            "bhat and shat must be non-empty and equal length".into(),
        ));
    }
    if let Some(j) = shat.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::NonPositiveVariance(j));
    }
    let smin = shat.iter().copied().fold(f64::INFINITY, f64::min) / 10.0;
    let smax_obs = shat.iter().copied().fold(0.0, f64::max);
    let excess = bhat.iter().zip(shat).map(|(b, s)| b * b - s * s).fold(0.0f64, f64::max);
    let smax = 2.0 * excess.sqrt();
    let scales: Vec<f64> = if smax <= smin {
        // no detectable signal: single component
        vec![2.0 * smax_obs]
    } else {
        let steps = ((smax / smin).ln() / GRID_MULT.ln()).ceil() as i32;
        (0..=steps).rev().map(|i| smax / GRID_MULT.powi(i)).collect()
    };
    let mut components = vec![Component::PointMass];
    for &s in &scales {
        match kind {
            MixtureKind::ScaleNormal => components.push(Component::Normal { sd: s }),
            MixtureKind::SymmetricUniform => components.push(Component::Uniform { lo: -s, hi: s }),
            MixtureKind::HalfUniform => {
                components.push(Component::Uniform { lo: -s, hi: 0.0 });
                components.push(Component::Uniform { lo: 0.0, hi: s });
            }
        }
    }
    let m = components.len() - 1;
    let mut pi = vec![1.0 / (10.0 * m as f64 * m as f64); m + 1];
    pi[0] = 1.0 - 1.0 / (10.0 * m as f64);
    let total: f64 = pi.iter().sum();
    for w in &mut pi {
        *w /= total;
    }
    UnimodalMixture::new(kind, components, pi)
}

/// Per-component densities `f_m` of `x` after convolving each component with
/// the noise at scale `sqrt(s2)` around `center`, and their `pi`-weighted total.
pub fn convolved_density(
    mix: &UnimodalMixture,
    x: f64,
    center: f64,
    s2: f64,
    noise: &Noise,
) -> Result<(Vec<f64>, f64)> {
    if !(s2 > 0.0) {
        return Err(Error::NonPositiveVariance(0));
    }
    check_compatible(mix.kind, noise)?;
    for (m, c) in mix.components.iter().enumerate() {
        if let Component::Uniform { lo, hi } = c {
            if lo == hi {
                return Err(Error::DegenerateComponent(m));
            }
        }
    }
    let sd = s2.sqrt();
    let parts: Vec<f64> = mix
        .components
        .iter()
        .map(|c| c.ln_convolved(x - center, sd, noise).exp())
        .collect();
    let total = parts.iter().zip(&mix.pi).map(|(f, w)| f * w).sum();
    Ok((parts, total))
}

/// Dirichlet-style weight penalty and the variance-inflation penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: Vec<f64>,
    pub lambda_xi: f64,
}

impl PenaltySpec {
    /// `lambda_0` on the point mass, 1 elsewhere.
    pub fn new(n_components: usize, lambda0: f64, lambda_xi: f64) -> Result<Self> {
        let mut lambda = vec![1.0; n_components];
        lambda[0] = lambda0;
        Self::from_parts(lambda, lambda_xi)
    }

    pub fn from_parts(lambda: Vec<f64>, lambda_xi: f64) -> Result<Self> {
        if lambda.iter().any(|&l| !(l >= 1.0)) {
            return Err(Error::InvalidConfig("mixture penalties must be >= 1".into()));
        }
        if !(lambda_xi >= 0.0) {
            return Err(Error::InvalidConfig("lambda_xi must be >= 0".into()));
        }
        Ok(Self { lambda, lambda_xi })
    }

    /// No penalty at all.
    pub fn none(n_components: usize) -> Self {
        Self {
            lambda: vec![1.0; n_components],
            lambda_xi: 0.0,
        }
    }
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self {
            lambda: vec![10.0],
            lambda_xi: 0.0,
        }
    }
}

/// `loglik + sum_m (lambda_m - 1) ln pi_m - lambda_xi / xi`.
pub fn penalized_log_objective(mix: &UnimodalMixture, penalty: &PenaltySpec, loglik: f64, xi: f64) -> f64 {
    let xi_term = if penalty.lambda_xi > 0.0 {
        penalty.lambda_xi / xi
    } else {
        0.0
    };
    loglik + penalty_term(&mix.pi, &penalty.lambda) - xi_term
}

/// How prior effects relate to the standard errors: `beta_j / s_j^gamma ~ g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EffectScaling {
    /// gamma = 0
    #[default]
    Identity,
    /// gamma = 1
    ByStandardError,
}

impl EffectScaling {
    pub fn from_gamma(gamma: u8) -> Result<Self> {
        match gamma {
            0 => Ok(EffectScaling::Identity),
            1 => Ok(EffectScaling::ByStandardError),
            _ => Err(Error::InvalidConfig(format!("gamma must be 0 or 1, got {gamma}"))),
        }
    }

    pub fn gamma(self) -> u8 {
        match self {
            EffectScaling::Identity => 0,
            EffectScaling::ByStandardError => 1,
        }
    }

    /// With gamma = 1 a free `xi` trades off against the prior scale; only a
    /// positive `lambda_xi` pins it down (towards the conservative side).
    pub fn check_identifiable(self, estimate_xi: bool, lambda_xi: f64) -> Result<()> {
        if self == EffectScaling::ByStandardError && estimate_xi && !(lambda_xi > 0.0) {
            return Err(Error::UnidentifiableConfig);
        }
        Ok(())
    }
}

/// Working-scale data: `(bhat_j / s_j, 1, alpha_j / s_j)` for gamma = 1 and the
/// inputs unchanged for gamma = 0. `factor[j]` maps working-scale effects
/// back to the original scale.
#[derive(Debug, Clone)]
pub struct ScaledData {
    pub bhat: Vec<f64>,
    pub shat: Vec<f64>,
    pub alpha: nalgebra::DMatrix<f64>,
    pub factor: Vec<f64>,
}

pub fn scale_by_se(scaling: EffectScaling, bhat: &[f64], shat: &[f64], alpha: &nalgebra::DMatrix<f64>) -> ScaledData {
    match scaling {
        EffectScaling::Identity => ScaledData {
            bhat: bhat.to_vec(),
            shat: shat.to_vec(),
            alpha: alpha.clone(),
            factor: vec![1.0; bhat.len()],
        },
        EffectScaling::ByStandardError => {
            let mut a = alpha.clone();
            for (j, mut col) in a.column_iter_mut().enumerate() {
                col /= shat[j];
            }
            ScaledData {
                bhat: bhat.iter().zip(shat).map(|(b, s)| b / s).collect(),
                shat: vec![1.0; bhat.len()],
                alpha: a,
                factor: shat.to_vec(),
            }
        }
    }
}
