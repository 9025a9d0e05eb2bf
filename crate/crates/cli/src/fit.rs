//! `fit` and `backwash`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use unwash_core::backwash::BackwashConfig;
use unwash_core::data::{validate_dataset, ExpressionDataset, Interest};
use unwash_core::mixture::{Component, EffectScaling, MixtureKind};
use unwash_core::mouthwash::{Likelihood, MouthwashConfig, XiMode};
use unwash_core::pipeline::{self, Fit, Method, PipelineConfig, PipelineOutput};

use crate::io;
use crate::manifest::Outcome;

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Expression matrix, samples in rows, header of gene IDs.
    #[arg(long)]
    pub y: PathBuf,
    /// Design matrix, samples in rows, header of covariate names.
    #[arg(long)]
    pub x: PathBuf,
    /// Covariate of interest: 1-based column of X or its header name.
    #[arg(long, required_unless_present = "contrast", conflicts_with = "contrast")]
    pub interest: Option<String>,
    /// Contrast over the columns of X, e.g. "0,1,-1".
    #[arg(long, allow_hyphen_values = true)]
    pub contrast: Option<String>,
    /// Number of hidden factors.
    #[arg(long)]
    pub q: usize,
    /// Shrink residual variances towards a common prior.
    #[arg(long)]
    pub moderate_variances: bool,
    /// Hold the variance inflation factor at this value.
    #[arg(long)]
    pub fix_xi: Option<f64>,
    /// Penalty on the null weight.
    #[arg(long, default_value_t = 10.0)]
    pub lambda0: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    /// Method name written to the scores file.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MixtureArg {
    Normal,
    Uniform,
    Halfuniform,
}

impl From<MixtureArg> for MixtureKind {
    fn from(m: MixtureArg) -> Self {
        match m {
            MixtureArg::Normal => MixtureKind::ScaleNormal,
            MixtureArg::Uniform => MixtureKind::SymmetricUniform,
            MixtureArg::Halfuniform => MixtureKind::HalfUniform,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodArg {
    Normal,
    T,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value = "normal")]
    pub mixture: MixtureArg,
    #[arg(long, value_enum, default_value = "normal")]
    pub likelihood: LikelihoodArg,
    /// Degrees of freedom of the t likelihood; defaults to n - k - q.
    #[arg(long)]
    pub nu: Option<f64>,
    /// 1 models effects on the standard-error scale.
    #[arg(long, default_value_t = 0)]
    pub gamma: u8,
    /// Penalty pushing the variance inflation factor upwards.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_xi: f64,
    /// Estimate the factors on this many randomly chosen genes.
    #[arg(long)]
    pub subsample: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BackwashArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Hold the confounder scaling at this value.
    #[arg(long)]
    pub fix_phi: Option<f64>,
}

pub struct Loaded {
    pub genes: Vec<String>,
    pub dataset: ExpressionDataset,
}

fn parse_interest(a: &InputArgs, x_header: &[String]) -> Result<Interest> {
    if let Some(c) = &a.contrast {
        let v: Vec<f64> = c
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| anyhow!("--contrast: cannot parse {s:?} as a number"))
            })
            .collect::<Result<_>>()?;
        if v.len() != x_header.len() {
            bail!(
                "--contrast has {} entries but {} has {} columns",
                v.len(),
                a.x.display(),
                x_header.len()
            );
        }
        return Ok(Interest::Contrast(v));
    }
    let s = a.interest.as_deref().expect("clap enforces interest or contrast");
    if let Ok(i) = s.parse::<usize>() {
        if i == 0 || i > x_header.len() {
            bail!(
                "--interest {i} out of range: {} has {} columns (1-based)",
                a.x.display(),
                x_header.len()
            );
        }
        return Ok(Interest::Column(i - 1));
    }
    x_header
        .iter()
        .position(|h| h == s)
        .map(Interest::Column)
        .ok_or_else(|| anyhow!("--interest {s:?} is not a column of {}", a.x.display()))
}

pub fn load(a: &InputArgs) -> Result<Loaded> {
    let y = io::read_numeric(&a.y)?;
    let x = io::read_numeric(&a.x)?;
    if y.rows.len() != x.rows.len() {
        bail!(
            "{} has {} data rows but {} has {}",
            a.y.display(),
            y.rows.len(),
            a.x.display(),
            x.rows.len()
        );
    }
    let interest = parse_interest(a, &x.header)?;
    let dataset = validate_dataset(y.to_matrix(), x.to_matrix(), interest)?;
    Ok(Loaded {
        genes: y.header,
        dataset,
    })
}

#[derive(Serialize)]
struct GeneRow<'a> {
    gene: &'a str,
    betahat: f64,
    sebetahat: f64,
    adjusted_betahat: f64,
    post_mean: f64,
    post_sd: f64,
    lfdr: f64,
    lfsr: f64,
    qvalue_analog: f64,
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    method: &'a str,
    gene: &'a str,
    score: f64,
    pi0hat: f64,
}

#[derive(Serialize)]
struct ModelJson<'a> {
    method: &'a str,
    mixture: MixtureKind,
    pi: &'a [f64],
    grid: &'a [Component],
    pi0: f64,
    z: Vec<f64>,
    xi: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi: Option<f64>,
    objective_trace: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    subsample_trace: Option<&'a [f64]>,
    converged: bool,
    iterations: usize,
}

fn model_json<'a>(method: &'a str, out: &'a PipelineOutput) -> ModelJson<'a> {
    match &out.fit {
        Fit::Mouthwash(f) => ModelJson {
            method,
            mixture: f.g_hat.kind,
            pi: &f.g_hat.pi,
            grid: &f.g_hat.components,
            pi0: f.pi0(),
            z: f.z_hat.iter().copied().collect(),
            xi: f.xi_hat,
            phi: None,
            objective_trace: &f.objective_trace,
            subsample_trace: f.subsample_trace.as_deref(),
            converged: f.converged,
            iterations: f.iterations,
        },
        Fit::Backwash(f) => {
            let st = &f.state;
            // confounder shift A mu_v phi expressed as alpha^T z
            let alpha = &out.prepared.summaries.alpha;
            let z = if st.q() == 0 {
                Vec::new()
            } else {
                let shift: DVector<f64> = &st.a * &st.mu_v * st.phi;
                alpha
                    .transpose()
                    .svd(true, true)
                    .solve(&shift, 1e-12)
                    .map(|z| z.iter().copied().collect())
                    .unwrap_or_default()
            };
            ModelJson {
                method,
                mixture: f.g_hat.kind,
                pi: &f.g_hat.pi,
                grid: &f.g_hat.components,
                pi0: f.pi0(),
                z,
                xi: st.xi,
                phi: Some(st.phi),
                objective_trace: &st.elbo_trace,
                subsample_trace: None,
                converged: f.converged,
                iterations: f.iterations,
            }
        }
    }
}

/// Writes `genes.csv`, `scores.csv` and `model.json`; returns their paths.
fn write_outputs(dir: &Path, label: &str, genes: &[String], out: &PipelineOutput) -> Result<Vec<PathBuf>> {
    let gpath = dir.join("genes.csv");
    io::write_csv(
        &gpath,
        genes.iter().zip(&out.genes).map(|(g, s)| GeneRow {
            gene: g,
            betahat: s.betahat,
            sebetahat: s.sebetahat,
            adjusted_betahat: s.adjusted_betahat,
            post_mean: s.post_mean,
            post_sd: s.post_sd,
            lfdr: s.lfdr,
            lfsr: s.lfsr,
            qvalue_analog: s.qvalue_analog,
        }),
    )?;
    let pi0 = out.fit.pi0();
    let spath = dir.join("scores.csv");
    io::write_csv(
        &spath,
        genes.iter().zip(&out.genes).map(|(g, s)| ScoreRow {
            method: label,
            gene: g,
            score: 1.0 - s.lfdr,
            pi0hat: pi0,
        }),
    )?;
    let mpath = dir.join("model.json");
    io::write_json(&mpath, &model_json(label, out))?;
    Ok(vec![gpath, spath, mpath])
}

#[derive(Serialize)]
pub struct FitEcho<'a, C: Serialize> {
    y: &'a Path,
    x: &'a Path,
    interest: Option<&'a str>,
    contrast: Option<&'a str>,
    q: usize,
    moderate_variances: bool,
    method: C,
}

fn echo<'a, C: Serialize>(a: &'a InputArgs, method: C) -> FitEcho<'a, C> {
    FitEcho {
        y: &a.y,
        x: &a.x,
        interest: a.interest.as_deref(),
        contrast: a.contrast.as_deref(),
        q: a.q,
        moderate_variances: a.moderate_variances,
        method,
    }
}

fn execute(a: &InputArgs, label: &str, loaded: &Loaded, cfg: PipelineConfig) -> Result<(Vec<PathBuf>, bool)> {
    let out = pipeline::run(&loaded.dataset, &cfg).context("fit failed")?;
    let dir = io::out_dir(&a.out)?;
    let paths = write_outputs(&dir, label, &loaded.genes, &out)?;
    Ok((paths, out.fit.converged()))
}

pub fn cmd_fit(a: &FitArgs) -> Result<Outcome> {
    let loaded = load(&a.input)?;
    let ds = &loaded.dataset;
    let likelihood = match a.likelihood {
        LikelihoodArg::Normal => {
            if a.nu.is_some() {
                bail!("--nu requires --likelihood t");
            }
            Likelihood::Normal
        }
        LikelihoodArg::T => {
            let nu = match a.nu {
                Some(v) => v,
                None => {
                    let df = ds.n() as i64 - ds.k() as i64 - a.input.q as i64;
                    if df < 1 {
                        bail!("--likelihood t needs --nu when n - k - q < 1");
                    }
                    df as f64
                }
            };
            Likelihood::T { nu }
        }
    };
    let cfg = MouthwashConfig {
        kind: a.mixture.into(),
        likelihood,
        scaling: EffectScaling::from_gamma(a.gamma)?,
        lambda0: a.input.lambda0,
        lambda_xi: a.lambda_xi,
        xi: a.input.fix_xi.map_or(XiMode::Estimate, XiMode::Fixed),
        max_iters: a.input.max_iters,
        subsample: a.subsample,
        seed: a.seed,
        ..MouthwashConfig::default()
    };
    cfg.validate()?;
    let label = a.input.label.clone().unwrap_or_else(|| "mouthwash".into());
    let config = serde_json::to_value(echo(&a.input, &cfg))?;
    let pc = PipelineConfig {
        q: a.input.q,
        moderate_variances: a.input.moderate_variances,
        method: Method::Mouthwash(cfg),
    };
    let (outputs, converged) = execute(&a.input, &label, &loaded, pc)?;
    Ok(Outcome {
        out_dir: a.input.out.clone(),
        config,
        seed: Some(a.seed),
        converged: Some(converged),
        outputs,
    })
}

pub fn cmd_backwash(a: &BackwashArgs) -> Result<Outcome> {
    let loaded = load(&a.input)?;
    let cfg = BackwashConfig {
        lambda0: a.input.lambda0,
        max_iters: a.input.max_iters,
        fix_phi: a.fix_phi,
        fix_xi: a.input.fix_xi,
        ..BackwashConfig::default()
    };
    if let Some(x) = cfg.fix_xi {
        if !(x > 0.0) {
            bail!("--fix-xi must be positive");
        }
    }
    let label = a.input.label.clone().unwrap_or_else(|| "backwash".into());
    let config = serde_json::to_value(echo(&a.input, &cfg))?;
    let pc = PipelineConfig {
        q: a.input.q,
        moderate_variances: a.input.moderate_variances,
        method: Method::Backwash(cfg),
    };
    let (outputs, converged) = execute(&a.input, &label, &loaded, pc)?;
    Ok(Outcome {
        out_dir: a.input.out.clone(),
        config,
        seed: None,
        converged: Some(converged),
        outputs,
    })
}
