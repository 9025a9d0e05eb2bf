//! `evaluate`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use unwash_core::evaluation::{compare, summary_csv, Condition, MethodScores, StudyScores};

use crate::io;
use crate::manifest::Outcome;
use crate::simulate::StudyInfo;

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Study directories written by `simulate`.
    #[arg(long, num_args = 1.., required = true)]
    pub studies: Vec<PathBuf>,
    /// Scores files (columns method, gene, score, optional pi0hat). Each file
    /// belongs to the study directory that contains it.
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

struct Study {
    dir: PathBuf,
    condition: Condition,
    genes: HashMap<String, usize>,
    is_null: Vec<bool>,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "TRUE" | "1" => Some(true),
        "false" | "FALSE" | "0" => Some(false),
        _ => None,
    }
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{}: line 1: missing column {name:?}", path.display()))
}

fn load_study(dir: &Path) -> Result<Study> {
    let sj = dir.join("study.json");
    let info: StudyInfo =
        serde_json::from_str(&fs::read_to_string(&sj).with_context(|| format!("{}: cannot read", sj.display()))?)
            .with_context(|| format!("{}: invalid study description", sj.display()))?;
    let tp = dir.join("truth.csv");
    let (header, rows) = io::read_records(&tp)?;
    let (gi, ni) = (column(&header, "gene", &tp)?, column(&header, "is_null", &tp)?);
    let mut genes = HashMap::new();
    let mut is_null = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        let Some(b) = parse_bool(&r[ni]) else {
            bail!("{}: line {line}: cannot parse {:?} as a boolean", tp.display(), r[ni]);
        };
        if genes.insert(r[gi].clone(), is_null.len()).is_some() {
            bail!("{}: line {line}: duplicate gene {:?}", tp.display(), r[gi]);
        }
        is_null.push(b);
    }
    Ok(Study {
        dir: fs::canonicalize(dir).with_context(|| format!("{}: cannot resolve", dir.display()))?,
        condition: Condition {
            n: info.n,
            p: info.p,
            pi0: info.pi0,
            m: info.m,
            uv_rank: info.uv_rank,
        },
        genes,
        is_null,
    })
}

/// Per method in first-appearance order: scores by gene index and pi0hat.
type Parsed = Vec<(String, Vec<Option<f64>>, Option<f64>)>;

fn load_scores(path: &Path, study: &Study, acc: &mut Parsed) -> Result<()> {
    let (header, rows) = io::read_records(path)?;
    let mi = column(&header, "method", path)?;
    let gi = column(&header, "gene", path)?;
    let si = column(&header, "score", path)?;
    let pi = header.iter().position(|h| h == "pi0hat");
    let missing = |s: &str| s.is_empty() || s == "NA";
    for (line, r) in rows {
        let Some(&j) = study.genes.get(&r[gi]) else {
            bail!(
                "{}: line {line}: gene {:?} not in {}",
                path.display(),
                r[gi],
                study.dir.join("truth.csv").display()
            );
        };
        let k = match acc.iter().position(|(m, _, _)| *m == r[mi]) {
            Some(k) => k,
            None => {
                acc.push((r[mi].clone(), vec![None; study.is_null.len()], None));
                acc.len() - 1
            }
        };
        let entry = &mut acc[k];
        if !missing(&r[si]) {
            let Some(v) = r[si].parse::<f64>().ok().filter(|v| v.is_finite()) else {
                bail!("{}: line {line}: cannot parse score {:?}", path.display(), r[si]);
            };
            if entry.1[j].replace(v).is_some() {
                bail!(
                    "{}: line {line}: duplicate score for {:?} / {:?}",
                    path.display(),
                    r[mi],
                    r[gi]
                );
            }
        }
        if let Some(pi) = pi {
            if !missing(&r[pi]) {
                let Some(v) = r[pi].parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v)) else {
                    bail!(
                        "{}: line {line}: pi0hat {:?} is not a number in [0, 1]",
                        path.display(),
                        r[pi]
                    );
                };
                entry.2.get_or_insert(v);
            }
        }
    }
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<Outcome> {
    let studies: Vec<Study> = a.studies.iter().map(|d| load_study(d)).collect::<Result<_>>()?;
    let mut parsed: Vec<Parsed> = vec![Vec::new(); studies.len()];
    for path in &a.scores {
        let canon = fs::canonicalize(path).with_context(|| format!("{}: cannot open", path.display()))?;
        let owner = studies
            .iter()
            .enumerate()
            .filter(|(_, s)| canon.starts_with(&s.dir))
            .max_by_key(|(_, s)| s.dir.components().count())
            .map(|(i, _)| i);
        let Some(i) = owner else {
            bail!("{}: not inside any of the --studies directories", path.display());
        };
        load_scores(path, &studies[i], &mut parsed[i])?;
    }
    let scored: Vec<StudyScores> = studies
        .iter()
        .zip(parsed)
        .map(|(s, methods)| StudyScores {
            condition: s.condition,
            is_null: s.is_null.clone(),
            methods: methods
                .into_iter()
                .map(|(name, scores, pi0_hat)| {
                    let absent = scores.iter().filter(|v| v.is_none()).count();
                    let res = if absent > 0 {
                        Err(format!("{name}: {absent} genes without scores in {}", s.dir.display()))
                    } else {
                        Ok(MethodScores {
                            method: name.clone(),
                            scores: scores.into_iter().flatten().collect(),
                            pi0_hat,
                        })
                    };
                    (name, res)
                })
                .collect(),
        })
        .collect();
    let rows = compare(&scored);
    let dir = io::out_dir(&a.out)?;
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(&rows)).with_context(|| format!("{}: cannot write", path.display()))?;
    Ok(Outcome {
        out_dir: a.out.clone(),
        config: serde_json::json!({
            "studies": a.studies,
            "scores": a.scores,
        }),
        seed: None,
        converged: None,
        outputs: vec![path],
    })
}
