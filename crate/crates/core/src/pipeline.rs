//! End-to-end runs: ingest, train, classify, retrieve, suggest.
//!
//! Everything here is deterministic for a fixed seed and input, so the JSON
//! produced by [`PipelineOutput::to_json`] is byte-stable across runs.

use std::collections::BTreeSet;
use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::classifier::{train, ArchitectureKind, ArchitectureSpec, EpochStats, Model, TrainConfig};
use crate::concepts::ConceptExtractor;
use crate::corpus::{ingest_reader, Corpus, Ingested, Sentiment};
use crate::embeddings::{random_table, EmbeddingTable};
use crate::error::{Error, Result};
use crate::retrieval::{top_n_for_id, PostIndex, RankMode, RetrievalResult};
use crate::suggestion::{build_pair_stats, suggest, LabelSource, SuggestionConfig, SuggestionResult};
use crate::textprep::{preprocess, StopWords};

const BUNDLED_CORPUS: &str = include_str!("../data/synthetic_corpus.jsonl");

pub const DEFAULT_EMBEDDING_DIM: usize = 200;
pub const DEFAULT_EMBEDDING_SEED: u64 = 7;

/// The 60-post synthetic corpus shipped with the crate.
pub fn bundled_corpus() -> Ingested {
    ingest_reader(Cursor::new(BUNDLED_CORPUS), "synthetic_corpus.jsonl").expect("bundled corpus is valid")
}

pub fn bundled_corpus_text() -> &'static str {
    BUNDLED_CORPUS
}

/// Random vectors for every preprocessed token of the corpus, in sorted
/// word order. Stand-in when no pretrained vectors are supplied.
pub fn corpus_embeddings(corpus: &Corpus, stopwords: &StopWords, dim: usize, seed: u64) -> Result<EmbeddingTable<f64>> {
    let vocab: BTreeSet<String> = corpus
        .posts()
        .iter()
        .flat_map(|p| preprocess(&p.text, stopwords).as_slice().to_vec())
        .collect();
    let vocab: Vec<String> = vocab.into_iter().collect();
    random_table(&vocab, dim, seed)
}

/// Sentiment per post according to `source`; `predicted` holds the
/// classifier output in corpus order when available.
pub fn resolve_labels(
    corpus: &Corpus,
    predicted: Option<&[Sentiment]>,
    source: LabelSource,
) -> Result<Vec<Option<Sentiment>>> {
    if let Some(p) = predicted {
        if p.len() != corpus.len() {
            return Err(Error::InvalidArgument("one prediction per post is required".into()));
        }
    }
    let need_predictions = || Error::InvalidArgument("predicted labels requested but no model is available".into());
    corpus
        .posts()
        .iter()
        .enumerate()
        .map(|(i, post)| match source {
            LabelSource::Gold => Ok(post.sentiment),
            LabelSource::Predicted => predicted.map(|p| Some(p[i])).ok_or_else(need_predictions),
            LabelSource::GoldThenPredicted => Ok(post.sentiment.or_else(|| predicted.map(|p| p[i]))),
        })
        .collect()
}

/// Index with sentiments replaced per `labels` (corpus order).
pub fn labeled_index<E: ConceptExtractor + ?Sized>(
    corpus: &Corpus,
    table: &EmbeddingTable<f64>,
    stopwords: &StopWords,
    extractor: &E,
    labels: &[Option<Sentiment>],
) -> Result<PostIndex> {
    let mut index = PostIndex::build(corpus, table, stopwords, extractor);
    for (post, label) in corpus.posts().iter().zip(labels) {
        index.set_sentiment(&post.id, *label)?;
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub architecture: ArchitectureSpec,
    pub train: TrainConfig,
    pub suggestion: SuggestionConfig,
    pub top_n: usize,
    pub mode: RankMode,
    pub label_source: LabelSource,
    /// Query ids for retrieval and suggestion; empty means every post.
    pub queries: Vec<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            architecture: ArchitectureSpec::new(ArchitectureKind::CnnLstmCnn),
            train: TrainConfig::default(),
            suggestion: SuggestionConfig::default(),
            top_n: 5,
            mode: RankMode::Full,
            label_source: LabelSource::GoldThenPredicted,
            queries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub posts: usize,
    pub labeled: usize,
    pub duplicates_removed: usize,
    /// Positive, Neutral, Negative.
    pub class_histogram: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub architecture: ArchitectureKind,
    pub max_len: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub trace: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostPrediction {
    pub id: String,
    pub sentiment: Sentiment,
    pub probabilities: [f64; 3],
}

/// Suggestions for one query, or why there are none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuggestionOutcome {
    Suggested(SuggestionResult),
    Skipped { query_id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub seed: u64,
    pub ingest: IngestSummary,
    pub training: TrainingSummary,
    pub predictions: Vec<PostPrediction>,
    pub retrieval: Vec<RetrievalResult>,
    pub suggestions: Vec<SuggestionOutcome>,
}

impl PipelineOutput {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn predict_corpus(
    model: &Model<f64>,
    corpus: &Corpus,
    table: &EmbeddingTable<f64>,
    stopwords: &StopWords,
) -> Result<Vec<PostPrediction>> {
    corpus
        .posts()
        .iter()
        .map(|p| {
            model.predict_text(&p.text, table, stopwords).map(|pr| PostPrediction {
                id: p.id.clone(),
                sentiment: pr.sentiment,
                probabilities: pr.probabilities,
            })
        })
        .collect()
}

/// Ingest JSON-lines text, train, classify every post, then retrieve and
/// suggest for each query.
pub fn run<E: ConceptExtractor + ?Sized>(
    corpus_jsonl: &str,
    table: &EmbeddingTable<f64>,
    stopwords: &StopWords,
    extractor: &E,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let ingested = ingest_reader(Cursor::new(corpus_jsonl), "corpus")?;
    let corpus = &ingested.corpus;
    let ingest = IngestSummary {
        posts: corpus.len(),
        labeled: corpus.labeled().count(),
        duplicates_removed: ingested.duplicates_removed,
        class_histogram: corpus.class_histogram(),
    };

    let outcome = train(corpus, table, stopwords, &config.architecture, &config.train)?;
    let training = TrainingSummary {
        architecture: config.architecture.kind,
        max_len: outcome.model.max_len,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        trace: outcome.trace.clone(),
    };
    let predictions = predict_corpus(&outcome.model, corpus, table, stopwords)?;
    let predicted: Vec<Sentiment> = predictions.iter().map(|p| p.sentiment).collect();
    let labels = resolve_labels(corpus, Some(&predicted), config.label_source)?;
    let index = labeled_index(corpus, table, stopwords, extractor, &labels)?;
    let stats = build_pair_stats(index.posts())?;

    let queries: Vec<String> = if config.queries.is_empty() {
        corpus.posts().iter().map(|p| p.id.clone()).collect()
    } else {
        config.queries.clone()
    };
    let mut retrieval = Vec::with_capacity(queries.len());
    let mut suggestions = Vec::with_capacity(queries.len());
    for q in &queries {
        retrieval.push(top_n_for_id(
            q,
            &index,
            config.top_n,
            config.mode,
            config.train.threads,
        )?);
        let query = index.get(q).ok_or_else(|| Error::UnknownPost(q.clone()))?;
        suggestions.push(match suggest(query, &index, &stats, &config.suggestion) {
            Ok(r) => SuggestionOutcome::Suggested(r),
            Err(e @ Error::NoDiseases(_)) => SuggestionOutcome::Skipped {
                query_id: q.clone(),
                reason: e.to_string(),
            },
            Err(e) => return Err(e),
        });
    }

    Ok(PipelineOutput {
        seed: config.train.seed,
        ingest,
        training,
        predictions,
        retrieval,
        suggestions,
    })
}
