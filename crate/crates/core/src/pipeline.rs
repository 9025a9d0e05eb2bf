//! End-to-end fitting from a validated dataset.

use crate::backwash::{fit_backwash_summaries, BackwashConfig, BackwashFit};
use crate::data::ExpressionDataset;
use crate::error::Result;
use crate::factor::{moderate_variances, truncated_pca, FactorEstimate, ModeratedVariances};
use crate::model::EffectSummaries;
use crate::mouthwash::{fit_summaries, MouthwashConfig, MouthwashFit};
use crate::posterior::{backwash_summaries, mouthwash_summaries, GeneSummary};
use crate::rotation::{rotate, RotatedModel};

#[derive(Debug, Clone)]
pub enum Method {
    Mouthwash(MouthwashConfig),
    Backwash(BackwashConfig),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub q: usize,
    pub moderate_variances: bool,
    pub method: Method,
}

#[derive(Debug, Clone)]
pub enum Fit {
    Mouthwash(MouthwashFit),
    Backwash(BackwashFit),
}

impl Fit {
    pub fn converged(&self) -> bool {
        match self {
            Fit::Mouthwash(f) => f.converged,
            Fit::Backwash(f) => f.converged,
        }
    }

    pub fn pi0(&self) -> f64 {
        match self {
            Fit::Mouthwash(f) => f.pi0(),
            Fit::Backwash(f) => f.pi0(),
        }
    }
}

/// Everything upstream of the shrinkage fit.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub rotated: RotatedModel,
    pub factors: FactorEstimate,
    pub moderated: Option<ModeratedVariances>,
    pub summaries: EffectSummaries,
}

pub fn prepare(ds: &ExpressionDataset, q: usize, moderate: bool) -> Result<Prepared> {
    let rotated = rotate(ds);
    let mut factors = truncated_pca(&rotated.y3, q)?;
    let moderated = if moderate {
        let m = moderate_variances(&factors.sigma2, factors.df)?;
        factors.sigma2 = m.sigma2.clone();
        Some(m)
    } else {
        None
    };
    let summaries = EffectSummaries::from_rotation(&rotated, &factors)?;
    Ok(Prepared {
        rotated,
        factors,
        moderated,
        summaries,
    })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub prepared: Prepared,
    pub fit: Fit,
    pub genes: Vec<GeneSummary>,
}

pub fn run(ds: &ExpressionDataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let prepared = prepare(ds, cfg.q, cfg.moderate_variances)?;
    let s = &prepared.summaries;
    let (fit, genes) = match &cfg.method {
        Method::Mouthwash(c) => {
            let f = fit_summaries(s, c)?;
            let g = mouthwash_summaries(s, &f)?;
            (Fit::Mouthwash(f), g)
        }
        Method::Backwash(c) => {
            let f = fit_backwash_summaries(s, c)?;
            let g = backwash_summaries(s, &f)?;
            (Fit::Backwash(f), g)
        }
    };
    Ok(PipelineOutput { prepared, fit, genes })
}

/// Ordinary least squares summaries with no confounder adjustment.
pub fn ols_summaries(ds: &ExpressionDataset) -> Result<EffectSummaries> {
    Ok(prepare(ds, 0, false)?.summaries)
}
