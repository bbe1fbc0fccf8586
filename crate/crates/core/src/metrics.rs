//! Evaluation statistics: classification report, Cohen's kappa, Pearson
//! correlation with a two-tailed t-test, Precision@k, DCG@k and
//! Krippendorff's alpha over Likert relevance judgments.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::corpus::Sentiment;
use crate::error::{Error, Result};

/// Rows are gold classes, columns predicted classes, both in
/// [`Sentiment::index`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..3).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: Sentiment,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Mean of per-class F1.
    pub macro_f1: f64,
    /// Harmonic mean of `macro_precision` and `macro_recall`.
    pub f1_of_macro_averages: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn check_lengths<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "gold and predicted lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("no labels to evaluate".into()));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Accuracy, per-class and macro precision/recall/F1. Macro averages run
/// over the classes that occur in either the gold or the predicted labels.
pub fn classification_report(gold: &[Sentiment], pred: &[Sentiment]) -> Result<ClassificationReport> {
    check_lengths(gold, pred)?;
    let mut confusion = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        confusion.counts[g.index()][p.index()] += 1;
    }
    let per_class: Vec<ClassMetrics> = Sentiment::ALL
        .iter()
        .map(|&s| {
            let i = s.index();
            let tp = confusion.counts[i][i];
            let predicted: usize = (0..3).map(|g| confusion.counts[g][i]).sum();
            let support: usize = confusion.counts[i].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                class: s,
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|m| {
            let i = m.class.index();
            m.support > 0 || (0..3).any(|g| confusion.counts[g][i] > 0)
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|m| f(m)).sum::<f64>() / present.len() as f64;
    let macro_precision = mean(|m| m.precision);
    let macro_recall = mean(|m| m.recall);
    Ok(ClassificationReport {
        accuracy: ratio(confusion.trace(), confusion.total()),
        macro_precision,
        macro_recall,
        macro_f1: mean(|m| m.f1),
        f1_of_macro_averages: harmonic(macro_precision, macro_recall),
        per_class,
        confusion,
    })
}

/// Cohen's kappa between two label sequences; 0 when chance agreement is 1.
pub fn cohen_kappa<L: Ord>(gold: &[L], pred: &[L]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let n = gold.len() as f64;
    let mut gold_counts: BTreeMap<&L, usize> = BTreeMap::new();
    let mut pred_counts: BTreeMap<&L, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (g, p) in gold.iter().zip(pred) {
        *gold_counts.entry(g).or_default() += 1;
        *pred_counts.entry(p).or_default() += 1;
        if g == p {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = gold_counts
        .iter()
        .map(|(label, &c)| (c as f64 / n) * (*pred_counts.get(label).unwrap_or(&0) as f64 / n))
        .sum();
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-tailed p-value of the t-test with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

/// Pearson's r and its two-tailed p-value.
///
/// `p = I_{df/(df+t^2)}(df/2, 1/2)` with `t = r sqrt(df / (1 - r^2))`, which
/// is the two-sided tail mass of Student's t.
pub fn pearson_with_p(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 3 pairs, got {n}"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InsufficientData(
            "correlation undefined for a constant series".into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let one_minus_r2 = 1.0 - r * r;
    let p_value = if one_minus_r2 <= 1e-15 {
        0.0
    } else {
        let t2 = r * r * df / one_minus_r2;
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok(Correlation { r, p_value, n })
}

/// One annotator's 1-5 rating of a retrieved post for a query post.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub retrieved_id: String,
    pub rating: u8,
    pub annotator_id: String,
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<RelevanceJudgment>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_judgments(&text, &path.display().to_string())
}

/// `query_id<TAB>retrieved_id<TAB>rating<TAB>annotator_id` per line.
pub fn parse_judgments(text: &str, source_name: &str) -> Result<Vec<RelevanceJudgment>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [q, r, rating, a] = fields.as_slice() else {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        };
        let rating: u8 = rating.parse().ok().filter(|v| (1..=5).contains(v)).ok_or_else(|| {
            Error::parse(
                source_name,
                lineno,
                format!("rating `{rating}` is not an integer in 1..=5"),
            )
        })?;
        out.push(RelevanceJudgment {
            query_id: q.to_string(),
            retrieved_id: r.to_string(),
            rating,
            annotator_id: a.to_string(),
        });
    }
    Ok(out)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// Median rating per `(query_id, retrieved_id)` across annotators.
pub fn median_ratings(judgments: &[RelevanceJudgment]) -> BTreeMap<(String, String), f64> {
    let mut grouped: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for j in judgments {
        grouped
            .entry((j.query_id.clone(), j.retrieved_id.clone()))
            .or_default()
            .push(j.rating as f64);
    }
    grouped
        .into_iter()
        .map(|(k, v)| (k, median(&v).expect("group is non-empty")))
        .collect()
}

pub const DEFAULT_RELEVANCE_THRESHOLD: f64 = 4.0;

/// Fraction of the top `k` positions whose (median) rating reaches
/// `threshold`. `ranked[i]` is the rating at rank `i + 1`, `None` if unjudged;
/// unjudged and missing positions count as not relevant.
pub fn precision_at_k(ranked: &[Option<f64>], k: usize, threshold: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let top = &ranked[..ranked.len().min(k)];
    if top.iter().all(Option::is_none) {
        return Err(Error::InsufficientData(format!("no judged items in the top {k}")));
    }
    let relevant = top.iter().flatten().filter(|&&r| r >= threshold).count();
    Ok(relevant as f64 / k as f64)
}

/// `sum_{i=1..k} rel_i / log2(i + 1)` with `rel_i = rating_i - 1`, so a 1-5
/// rating maps to 0-4 relevance. Shorter lists sum what is available.
pub fn dcg_at_k(ratings: &[f64], k: usize) -> f64 {
    ratings
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &r)| (r - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AlphaLevel {
    #[default]
    Interval,
    Ordinal,
}

/// Krippendorff's alpha. Each unit lists the ratings it received, one per
/// annotator who rated it; units with fewer than two ratings are unpairable
/// and ignored. Returns 1 when every pairable value is identical.
pub fn krippendorff_alpha(units: &[Vec<f64>], level: AlphaLevel) -> Result<f64> {
    let pairable: Vec<&Vec<f64>> = units.iter().filter(|u| u.len() >= 2).collect();
    if pairable.len() < 2 {
        return Err(Error::InsufficientData(
            "Krippendorff's alpha needs at least two units with two or more ratings".into(),
        ));
    }
    let mut values: Vec<f64> = pairable.iter().flat_map(|u| u.iter().copied()).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let m = values.len();
    let pos = |v: f64| {
        values
            .binary_search_by(|x| x.total_cmp(&v))
            .expect("value is in the list")
    };

    // Coincidence matrix.
    let mut o = vec![vec![0.0f64; m]; m];
    for u in &pairable {
        let w = 1.0 / (u.len() - 1) as f64;
        for (i, &a) in u.iter().enumerate() {
            for (j, &b) in u.iter().enumerate() {
                if i != j {
                    o[pos(a)][pos(b)] += w;
                }
            }
        }
    }
    let marg: Vec<f64> = o.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marg.iter().sum();

    let delta = |c: usize, k: usize| -> f64 {
        match level {
            AlphaLevel::Interval => (values[c] - values[k]).powi(2),
            AlphaLevel::Ordinal => {
                let (lo, hi) = (c.min(k), c.max(k));
                let span: f64 = marg[lo..=hi].iter().sum();
                (span - (marg[c] + marg[k]) / 2.0).powi(2)
            }
        }
    };

    let mut observed = 0.0;
    let mut expected = 0.0;
    for c in 0..m {
        for k in 0..m {
            let d = delta(c, k);
            observed += o[c][k] * d;
            expected += marg[c] * marg[k] * d;
        }
    }
    if expected == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// Group judgments into alpha units: one unit per `(query, retrieved)` pair,
/// one value per distinct annotator.
pub fn units_from_judgments(judgments: &[RelevanceJudgment]) -> Vec<Vec<f64>> {
    let mut grouped: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for j in judgments {
        grouped
            .entry((&j.query_id, &j.retrieved_id))
            .or_default()
            .insert(&j.annotator_id, j.rating as f64);
    }
    grouped.into_values().map(|m| m.into_values().collect()).collect()
}

/// Distinct query ids in first-seen order.
pub fn judged_queries(judgments: &[RelevanceJudgment]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    judgments
        .iter()
        .filter(|j| seen.insert(j.query_id.as_str()))
        .map(|j| j.query_id.clone())
        .collect()
}
