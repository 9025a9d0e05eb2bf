//! Scoring of per-gene significance against simulation truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average ranks (1-based), ties sharing the mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Probability that a random non-null gene scores above a random null gene,
/// ties counting one half.
pub fn auc(scores: &[f64], is_null: &[bool]) -> Result<f64> {
    if scores.len() != is_null.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} genes",
            scores.len(),
            is_null.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput("scores"));
    }
    let n0 = is_null.iter().filter(|&&b| b).count();
    let n1 = is_null.len() - n0;
    if n0 == 0 || n1 == 0 {
        return Err(Error::SingleClass);
    }
    let r = ranks(scores);
    let rank_sum: f64 = r.iter().zip(is_null).filter(|(_, &b)| !b).map(|(r, _)| r).sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n0 as f64 * n1 as f64))
}

/// `(pi0_hat - pi0, (pi0_hat - pi0)^2)`.
pub fn pi0_error(pi0_hat: f64, pi0_true: f64) -> (f64, f64) {
    let d = pi0_hat - pi0_true;
    (d, d * d)
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScores {
    pub method: String,
    /// Higher means more significant.
    pub scores: Vec<f64>,
    pub pi0_hat: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub n: usize,
    pub p: usize,
    pub pi0: f64,
    pub m: usize,
    pub uv_rank: usize,
}

/// One replicate: truth plus the scores of each method (or why they are missing).
#[derive(Debug, Clone)]
pub struct StudyScores {
    pub condition: Condition,
    pub is_null: Vec<bool>,
    pub methods: Vec<(String, std::result::Result<MethodScores, String>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub n: usize,
    pub p: usize,
    pub pi0: f64,
    pub m: usize,
    pub uv_rank: usize,
    pub replicates: usize,
    pub mean_auc: Option<f64>,
    pub pi0_mean: Option<f64>,
    pub pi0_sd: Option<f64>,
    pub pi0_bias: Option<f64>,
    pub pi0_mse: Option<f64>,
    pub note: String,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per method and condition, in order of first appearance.
pub fn compare(studies: &[StudyScores]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Condition)> = Vec::new();
    for s in studies {
        for (name, _) in &s.methods {
            let key = (name.clone(), s.condition);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(method, c)| {
            let (mut aucs, mut pi0s, mut bias, mut sq) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut notes: Vec<String> = Vec::new();
            let mut replicates = 0;
            for s in studies.iter().filter(|s| s.condition == c) {
                for (_, res) in s.methods.iter().filter(|(n, _)| *n == method) {
                    replicates += 1;
                    let ms = match res {
                        Ok(ms) => ms,
                        Err(e) => {
                            notes.push(e.clone());
                            continue;
                        }
                    };
                    if ms.scores.len() != s.is_null.len() {
                        notes.push(format!("{} scores for {} genes", ms.scores.len(), s.is_null.len()));
                        continue;
                    }
                    match auc(&ms.scores, &s.is_null) {
                        Ok(a) => aucs.push(a),
                        Err(Error::SingleClass) => {}
                        Err(e) => notes.push(e.to_string()),
                    }
                    if let Some(h) = ms.pi0_hat {
                        let truth = s.is_null.iter().filter(|&&b| b).count() as f64 / s.is_null.len() as f64;
                        let (b, e2) = pi0_error(h, truth);
                        pi0s.push(h);
                        bias.push(b);
                        sq.push(e2);
                    }
                }
            }
            let pi0_mean = mean(&pi0s);
            let pi0_sd = (pi0s.len() > 1).then(|| {
                let m = pi0_mean.unwrap();
                (pi0s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (pi0s.len() - 1) as f64).sqrt()
            });
            notes.dedup();
            SummaryRow {
                method,
                n: c.n,
                p: c.p,
                pi0: c.pi0,
                m: c.m,
                uv_rank: c.uv_rank,
                replicates,
                mean_auc: mean(&aucs),
                pi0_mean,
                pi0_sd,
                pi0_bias: mean(&bias),
                pi0_mse: mean(&sq),
                note: notes.join("; "),
            }
        })
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

/// Summary table as CSV text, `NA` for missing entries.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,n,p,pi0,m,uv_rank,replicates,mean_auc,pi0_mean,pi0_sd,pi0_bias,pi0_mse,note\n");
    for r in rows {
        let note = if r.note.is_empty() {
            String::new()
        } else {
            format!("\"{}\"", r.note.replace('"', "\"\""))
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.n,
            r.p,
            r.pi0,
            r.m,
            r.uv_rank,
            r.replicates,
            fmt(r.mean_auc),
            fmt(r.pi0_mean),
            fmt(r.pi0_sd),
            fmt(r.pi0_bias),
            fmt(r.pi0_mse),
            note
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_pair_enumeration_example() {
        let scores = [3.0, 1.0, 2.0, 0.0, 2.0, 1.0];
        let a = auc(&scores, &[false, false, false, true, true, true]).unwrap();
        let mut pairs = 0.0;
        for x in &scores[..3] {
            for y in &scores[3..] {
                pairs += if x > y {
                    1.0
                } else if x == y {
                    0.5
                } else {
                    0.0
                };
            }
        }
        assert_eq!(pairs, 7.0);
        assert!((a - pairs / 9.0).abs() < 1e-15);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(auc(&[5.0, 6.0, 1.0, 2.0], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0; 4], &[false, false, true, true]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0, 2.0], &[true, true]).unwrap_err(), Error::SingleClass);
    }

    #[test]
    fn pi0_error_values() {
        assert_eq!(pi0_error(0.9, 0.9), (0.0, 0.0));
        let (b, e) = pi0_error(1.0, 0.9);
        assert!((b - 0.1).abs() < 1e-15 && (e - 0.01).abs() < 1e-15);
    }

    #[test]
    fn compare_rows_and_na() {
        let c = Condition {
            n: 4,
            p: 3,
            pi0: 2.0 / 3.0,
            m: 0,
            uv_rank: 0,
        };
        let study = StudyScores {
            condition: c,
            is_null: vec![true, true, false],
            methods: vec![
                (
                    "a".into(),
                    Ok(MethodScores {
                        method: "a".into(),
                        scores: vec![0.1, 0.2, 0.9],
                        pi0_hat: Some(0.7),
                    }),
                ),
                (
                    "b".into(),
                    Ok(MethodScores {
                        method: "b".into(),
                        scores: vec![0.1],
                        pi0_hat: None,
                    }),
                ),
            ],
        };
        let rows = compare(&[study]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mean_auc, Some(1.0));
        assert!(rows[1].mean_auc.is_none() && !rows[1].note.is_empty());
        let csv = summary_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("NA"));
    }
}
