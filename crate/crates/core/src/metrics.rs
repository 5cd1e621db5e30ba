//! Precision@K, Recall@K and NDCG@K averaged over patents.

use std::collections::HashSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RankedPrediction {
    pub id: String,
    /// Code indices, best first, no duplicates.
    pub ranking: Vec<usize>,
    pub truth: Vec<usize>,
}

impl RankedPrediction {
    pub fn from_scores(id: impl Into<String>, scores: &[f32], truth: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            ranking: rank_codes(scores),
            truth,
        }
    }

    fn hits(&self, k: usize) -> Result<Vec<bool>> {
        if k == 0 {
            return Err(Error::Contract("k must be at least 1".into()));
        }
        if self.ranking.len() < k {
            return Err(Error::Contract(format!(
                "ranking of `{}` has {} codes, fewer than k = {k}",
                self.id,
                self.ranking.len()
            )));
        }
        let truth: HashSet<usize> = self.truth.iter().copied().collect();
        Ok(self.ranking[..k].iter().map(|c| truth.contains(c)).collect())
    }

    fn truth_len(&self) -> usize {
        self.truth.iter().collect::<HashSet<_>>().len()
    }
}

/// Code indices by descending score; ties keep code order.
pub fn rank_codes(scores: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn precision_at_k(r: &RankedPrediction, k: usize) -> Result<f64> {
    let hits = r.hits(k)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / k as f64)
}

pub fn recall_at_k(r: &RankedPrediction, k: usize) -> Result<f64> {
    let hits = r.hits(k)?;
    let n = r.truth_len();
    if n == 0 {
        return Err(Error::Contract(format!("`{}` has no true labels", r.id)));
    }
    Ok(hits.iter().filter(|&&h| h).count() as f64 / n as f64)
}

pub fn ndcg_at_k(r: &RankedPrediction, k: usize) -> Result<f64> {
    let hits = r.hits(k)?;
    let n = r.truth_len();
    if n == 0 {
        return Err(Error::Contract(format!("`{}` has no true labels", r.id)));
    }
    let gain = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = hits.iter().enumerate().filter(|(_, &h)| h).map(|(p, _)| gain(p)).sum();
    let ideal: f64 = (0..k.min(n)).map(gain).sum();
    Ok(dcg / ideal)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Precision,
    Recall,
    Ndcg,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Precision, Metric::Recall, Metric::Ndcg];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "precision" | "p" => Ok(Metric::Precision),
            "recall" | "r" => Ok(Metric::Recall),
            "ndcg" => Ok(Metric::Ndcg),
            _ => Err(Error::Config(format!("unknown metric `{s}`"))),
        }
    }
}

/// Mean metric values per K.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub ks: Vec<usize>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    /// Patents averaged over.
    pub count: usize,
}

impl MetricTable {
    pub fn get(&self, metric: Metric, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&x| x == k)?;
        Some(match metric {
            Metric::Precision => self.precision[i],
            Metric::Recall => self.recall[i],
            Metric::Ndcg => self.ndcg[i],
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<10}", "K");
        for m in Metric::ALL {
            let _ = write!(s, "{:>12}", m.name());
        }
        s.push('\n');
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<10}{:>12.4}{:>12.4}{:>12.4}",
                k, self.precision[i], self.recall[i], self.ndcg[i]
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,K,value\n");
        for m in Metric::ALL {
            for &k in &self.ks {
                let _ = writeln!(s, "{},{},{}", m.name(), k, self.get(m, k).unwrap_or(f64::NAN));
            }
        }
        s
    }
}

/// Unweighted means over patents with at least one true label.
pub fn evaluate_run(preds: &[RankedPrediction], ks: &[usize]) -> Result<MetricTable> {
    let scored: Vec<&RankedPrediction> = preds.iter().filter(|p| !p.truth.is_empty()).collect();
    if scored.is_empty() {
        return Err(Error::Contract("no labelled predictions to evaluate".into()));
    }
    let n = scored.len() as f64;
    let mut table = MetricTable {
        ks: ks.to_vec(),
        precision: Vec::new(),
        recall: Vec::new(),
        ndcg: Vec::new(),
        count: scored.len(),
    };
    for &k in ks {
        let (mut p, mut r, mut d) = (0.0, 0.0, 0.0);
        for x in &scored {
            p += precision_at_k(x, k)?;
            r += recall_at_k(x, k)?;
            d += ndcg_at_k(x, k)?;
        }
        table.precision.push(p / n);
        table.recall.push(r / n);
        table.ndcg.push(d / n);
    }
    Ok(table)
}
