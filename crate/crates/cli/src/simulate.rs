//! `simulate`.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;

use unwash_core::simulation::{simulate, top_expressed, BaseCounts, CountMatrix, SimulationConfig, SyntheticSpec};

use crate::io;
use crate::manifest::Outcome;

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Number of samples (even).
    #[arg(long)]
    pub n: usize,
    /// Number of genes.
    #[arg(long)]
    pub p: usize,
    /// Proportion of null genes.
    #[arg(long)]
    pub pi0: f64,
    /// Standard deviation of non-null log2 effects.
    #[arg(long, default_value_t = 0.8)]
    pub effect_sd: f64,
    /// Number of null genes flagged as controls.
    #[arg(long, default_value_t = 0)]
    pub m_controls: usize,
    /// Rank of planted unwanted variation in synthetic base counts.
    #[arg(long, default_value_t = 0)]
    pub uv_rank: usize,
    #[arg(long, default_value_t = 0.5)]
    pub uv_strength: f64,
    /// Per-entry log-rate noise in synthetic base counts.
    #[arg(long, default_value_t = 0.3)]
    pub noise_sd: f64,
    /// Base count matrix (samples in rows, header of gene IDs) instead of synthetic counts.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written to `study.json`; read back by `evaluate`.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct StudyInfo {
    pub n: usize,
    pub p: usize,
    pub pi0: f64,
    pub m: usize,
    pub uv_rank: usize,
    pub effect_sd: f64,
    pub uv_strength: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub base: Option<PathBuf>,
    pub n_nonnull: usize,
}

#[derive(Serialize)]
struct TruthRow<'a> {
    gene: &'a str,
    is_null: bool,
    effect: f64,
    control: bool,
}

#[derive(Serialize)]
struct GroupRow {
    sample: usize,
    group: u8,
}

fn gene_ids(p: usize) -> Vec<String> {
    let w = p.to_string().len();
    (1..=p).map(|j| format!("gene{j:0w$}")).collect()
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome> {
    let (base, genes) = match &a.base {
        None => (
            BaseCounts::Synthetic(SyntheticSpec {
                uv_rank: a.uv_rank,
                uv_strength: a.uv_strength,
                noise_sd: a.noise_sd,
            }),
            gene_ids(a.p),
        ),
        Some(path) => {
            let t = io::read_counts(path)?;
            let (n, p) = (t.rows.len(), t.header.len());
            let counts = CountMatrix::new(n, p, t.rows.into_iter().flatten().collect())?;
            let genes = top_expressed(&counts, a.p)
                .into_iter()
                .map(|j| t.header[j].clone())
                .collect();
            (BaseCounts::Supplied(counts), genes)
        }
    };
    let cfg = SimulationConfig {
        n: a.n,
        p: a.p,
        pi0: a.pi0,
        effect_sd: a.effect_sd,
        m_controls: a.m_controls,
        seed: a.seed,
        base,
    };
    let study = simulate(&cfg)?;
    let dir = io::out_dir(&a.out)?;

    let counts = dir.join("counts.csv");
    io::write_matrix(&counts, &genes, (0..a.n).map(|i| study.counts.row(i).to_vec()))?;
    let y = dir.join("y.csv");
    io::write_matrix(
        &y,
        &genes,
        (0..a.n).map(|i| study.y.row(i).iter().copied().collect::<Vec<f64>>()),
    )?;
    let x = dir.join("x.csv");
    io::write_matrix(
        &x,
        &["intercept".to_string(), "group".to_string()],
        study.groups.iter().map(|&g| vec![1, g]),
    )?;
    let groups = dir.join("groups.csv");
    io::write_csv(
        &groups,
        study.groups.iter().enumerate().map(|(i, &g)| GroupRow {
            sample: i + 1,
            group: g,
        }),
    )?;
    let truth = dir.join("truth.csv");
    let controls: std::collections::HashSet<usize> = study.controls.iter().copied().collect();
    io::write_csv(
        &truth,
        genes.iter().enumerate().map(|(j, g)| TruthRow {
            gene: g,
            is_null: study.is_null[j],
            effect: study.effects[j],
            control: controls.contains(&j),
        }),
    )?;
    let info = StudyInfo {
        n: a.n,
        p: a.p,
        pi0: a.pi0,
        m: a.m_controls,
        uv_rank: if a.base.is_some() { 0 } else { a.uv_rank },
        effect_sd: a.effect_sd,
        uv_strength: a.uv_strength,
        noise_sd: a.noise_sd,
        seed: a.seed,
        base: a.base.clone(),
        n_nonnull: cfg.n_nonnull(),
    };
    let sj = dir.join("study.json");
    io::write_json(&sj, &info)?;
    Ok(Outcome {
        out_dir: a.out.clone(),
        config: serde_json::to_value(&info)?,
        seed: Some(a.seed),
        converged: None,
        outputs: vec![counts, y, x, groups, truth, sj],
    })
}
