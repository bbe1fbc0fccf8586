//! Treatment suggestion: `G(T, D) = Sim(P, Q) * Pr(positive | T, D)`,
//! reported when `G >= tau`.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentiment;
use crate::error::{Error, Result};
use crate::retrieval::{overall_similarity, IndexedPost, PostIndex};

/// Per (treatment, disease) pair: posts mentioning both, and how many of
/// those are Positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub n_total: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairStats {
    counts: BTreeMap<(String, String), PairCount>,
}

impl PairStats {
    pub fn get(&self, treatment: &str, disease: &str) -> Option<PairCount> {
        self.counts.get(&(treatment.to_string(), disease.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `((treatment, disease), count)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &PairCount)> {
        self.counts.iter()
    }

    fn treatments_for<'a>(&'a self, disease: &'a str) -> impl Iterator<Item = (&'a str, PairCount)> + 'a {
        self.counts
            .iter()
            .filter(move |((_, d), _)| d == disease)
            .map(|((t, _), c)| (t.as_str(), *c))
    }
}

/// Count co-occurrences over every post. All posts must carry a sentiment.
pub fn build_pair_stats(posts: &[IndexedPost]) -> Result<PairStats> {
    let missing: Vec<String> = posts
        .iter()
        .filter(|p| p.sentiment.is_none())
        .map(|p| p.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Unclassified(missing));
    }
    let mut counts: BTreeMap<(String, String), PairCount> = BTreeMap::new();
    for p in posts {
        let positive = p.sentiment == Some(Sentiment::Positive);
        for t in &p.concepts.treatments {
            for d in &p.concepts.diseases {
                let c = counts.entry((t.clone(), d.clone())).or_default();
                c.n_total += 1;
                c.n_positive += usize::from(positive);
            }
        }
    }
    Ok(PairStats { counts })
}

/// `(n_positive + alpha) / (n_total + 2 alpha)`; 0 for an unseen pair.
pub fn pr_positive(stats: &PairStats, treatment: &str, disease: &str, alpha: f64) -> f64 {
    stats.get(treatment, disease).map_or(0.0, |c| smoothed(c, alpha))
}

fn smoothed(c: PairCount, alpha: f64) -> f64 {
    let den = c.n_total as f64 + 2.0 * alpha;
    if den == 0.0 {
        0.0
    } else {
        (c.n_positive as f64 + alpha) / den
    }
}

/// Which sentiments feed the pair statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Gold,
    Predicted,
    /// Gold where present, the classifier's prediction otherwise.
    #[default]
    GoldThenPredicted,
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gold" => Ok(LabelSource::Gold),
            "predicted" => Ok(LabelSource::Predicted),
            "gold_then_predicted" | "auto" => Ok(LabelSource::GoldThenPredicted),
            _ => Err(Error::InvalidArgument(format!("unknown label source `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuggestionConfig {
    pub tau: f64,
    pub alpha: f64,
    pub max_per_disease: usize,
}

impl Default for SuggestionConfig {
    fn default() -> Self {
        SuggestionConfig {
            tau: 0.3,
            alpha: 0.0,
            max_per_disease: 10,
        }
    }
}

impl SuggestionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.max_per_disease == 0 {
            return Err(Error::InvalidArgument(
                "max suggestions per disease must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub disease: String,
    pub treatment: String,
    pub evidence_post_id: String,
    pub sim: f64,
    pub pr: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionResult {
    pub query_id: String,
    pub tau: f64,
    pub suggestions: Vec<Suggestion>,
}

/// For each disease `D` of the query and each treatment `T` seen with `D`,
/// score `G = max_P Sim(P, query) * pr(T, D)` over indexed posts `P != query`
/// that mention `T`; the maximising post is the evidence (smallest id on
/// ties). Entries with `G > 0` and `G >= tau` are kept, sorted by `G`
/// descending, then disease and treatment.
pub fn suggest(
    query: &IndexedPost,
    index: &PostIndex,
    stats: &PairStats,
    config: &SuggestionConfig,
) -> Result<SuggestionResult> {
    config.validate()?;
    if query.concepts.diseases.is_empty() {
        return Err(Error::NoDiseases(query.id.clone()));
    }

    // Best supporting post per treatment.
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for p in index.posts().iter().filter(|p| p.id != query.id) {
        if p.concepts.treatments.is_empty() {
            continue;
        }
        let sim = overall_similarity(p, query).sim;
        for t in &p.concepts.treatments {
            let slot = best.entry(t.as_str()).or_insert((sim, p.id.as_str()));
            if sim > slot.0 || (sim == slot.0 && p.id.as_str() < slot.1) {
                *slot = (sim, p.id.as_str());
            }
        }
    }

    let mut out = Vec::new();
    for d in &query.concepts.diseases {
        let mut rows: Vec<Suggestion> = stats
            .treatments_for(d)
            .filter_map(|(t, count)| {
                let &(sim, evidence) = best.get(t)?;
                let pr = smoothed(count, config.alpha);
                let g = sim * pr;
                (g > 0.0 && g >= config.tau).then(|| Suggestion {
                    disease: d.clone(),
                    treatment: t.to_string(),
                    evidence_post_id: evidence.to_string(),
                    sim,
                    pr,
                    g,
                })
            })
            .collect();
        rows.sort_by(|a, b| b.g.total_cmp(&a.g).then_with(|| a.treatment.cmp(&b.treatment)));
        rows.truncate(config.max_per_disease);
        out.extend(rows);
    }
    out.sort_by(|a, b| {
        b.g.total_cmp(&a.g)
            .then_with(|| a.disease.cmp(&b.disease))
            .then_with(|| a.treatment.cmp(&b.treatment))
    });
    Ok(SuggestionResult {
        query_id: query.id.clone(),
        tau: config.tau,
        suggestions: out,
    })
}
