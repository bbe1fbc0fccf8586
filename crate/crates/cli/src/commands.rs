//! One function per subcommand. Each prints a table, or JSON with `--json`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use medforum::classifier::{
    cross_validate, load_model, save_model, toy_gradient_check, train as train_model, ArchitectureKind,
    ArchitectureSpec, CrossValidationReport, Model,
};
use medforum::concepts::{extract_text, load_lexicon, ConceptLexicon, ConceptSet};
use medforum::corpus::{load_any, save_store, Corpus, Ingested, Sentiment};
use medforum::embeddings::{load_embeddings, EmbeddingTable};
use medforum::metrics::{
    dcg_at_k, judged_queries, krippendorff_alpha, load_judgments, median_ratings, parse_judgments, pearson_with_p,
    precision_at_k, units_from_judgments, AlphaLevel, Correlation, RelevanceJudgment,
};
use medforum::neural::GradCheckReport;
use medforum::pipeline::{
    bundled_corpus, corpus_embeddings, labeled_index, predict_corpus, resolve_labels, IngestSummary, PostPrediction,
    TrainingSummary,
};
use medforum::retrieval::{overall_similarity, top_n_for_id, PostIndex, RankMode, RetrievalResult};
use medforum::suggestion::{build_pair_stats, suggest as suggest_for, LabelSource, SuggestionResult};
use medforum::textprep::StopWords;

use crate::config::RunConfig;
use crate::table::{fixed, Table};
use crate::CliError;

const SAMPLE_JUDGMENTS: &str = include_str!("../data/sample_judgments.tsv");
const DEFAULT_MODEL_PATH: &str = "model.bin";
const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct Output {
    pub json: bool,
}

impl Output {
    fn emit<T: Serialize>(self, value: &T, text: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.json {
            println!(
                "{}",
                serde_json::to_string_pretty(value).map_err(medforum::Error::from)?
            );
        } else {
            print!("{}", text());
        }
        Ok(())
    }
}

/// Everything loaded from the configured inputs or the bundled defaults.
struct Inputs {
    stopwords: StopWords,
    lexicon: ConceptLexicon,
    ingested: Ingested,
    table: EmbeddingTable<f64>,
}

impl Inputs {
    fn load(config: &RunConfig) -> Result<Self, CliError> {
        let p = &config.paths;
        let stopwords = match &p.stopwords {
            Some(path) => StopWords::load(path)?,
            None => StopWords::english(),
        };
        let lexicon = match &p.lexicon {
            Some(path) => load_lexicon(path, &stopwords)?,
            None => ConceptLexicon::starter(&stopwords),
        };
        let ingested = match &p.corpus {
            Some(path) => load_any(path)?,
            None => bundled_corpus(),
        };
        let table = match &p.embeddings {
            Some(path) => load_embeddings(path)?,
            None => corpus_embeddings(
                &ingested.corpus,
                &stopwords,
                config.embedding_dim,
                config.embedding_seed,
            )?,
        };
        info!(
            "{} posts, {} lexicon entries, {} embeddings of dimension {}",
            ingested.corpus.len(),
            lexicon.len(),
            table.len(),
            table.dim()
        );
        Ok(Inputs {
            stopwords,
            lexicon,
            ingested,
            table,
        })
    }

    fn corpus(&self) -> &Corpus {
        &self.ingested.corpus
    }

    fn index(&self) -> PostIndex {
        PostIndex::build(self.corpus(), &self.table, &self.stopwords, &self.lexicon)
    }
}

fn sentiment_name(s: Sentiment) -> String {
    s.name().to_string()
}

pub fn ingest(config: &RunConfig, store: Option<&Path>, out: Output) -> Result<(), CliError> {
    let inputs = Inputs::load(config)?;
    let corpus = inputs.corpus();
    let summary = IngestSummary {
        posts: corpus.len(),
        labeled: corpus.labeled().count(),
        duplicates_removed: inputs.ingested.duplicates_removed,
        class_histogram: corpus.class_histogram(),
    };
    if let Some(path) = store {
        save_store(corpus, path)?;
    }
    out.emit(&summary, || {
        let mut t = Table::new([
            "posts",
            "labeled",
            "duplicates removed",
            "positive",
            "neutral",
            "negative",
        ]);
        let h = summary.class_histogram;
        t.row(
            [
                summary.posts,
                summary.labeled,
                summary.duplicates_removed,
                h[0],
                h[1],
                h[2],
            ]
            .map(|v| v.to_string()),
        );
        let mut s = t.to_string();
        if let Some(path) = store {
            s.push_str(&format!("store written to {}\n", path.display()));
        }
        s
    })
}

#[derive(Serialize)]
struct ConceptRow {
    id: Option<String>,
    #[serde(flatten)]
    concepts: ConceptSet,
}

fn join(set: &BTreeSet<String>) -> String {
    if set.is_empty() {
        "-".into()
    } else {
        set.iter().cloned().collect::<Vec<_>>().join(",")
    }
}

pub fn extract_concepts(config: &RunConfig, ids: &[String], text: Option<&str>, out: Output) -> Result<(), CliError> {
    let inputs = Inputs::load(config)?;
    let extract = |t: &str| extract_text(&inputs.lexicon, t, &inputs.stopwords);
    let rows: Vec<ConceptRow> = match text {
        Some(t) => vec![ConceptRow {
            id: None,
            concepts: extract(t),
        }],
        None => select_posts(inputs.corpus(), ids)?
            .into_iter()
            .map(|(id, t)| ConceptRow {
                id: Some(id.to_string()),
                concepts: extract(t),
            })
            .collect(),
    };
    out.emit(&rows, || {
        let mut t = Table::new(["id", "diseases", "symptoms", "treatments"]);
        for r in &rows {
            t.row([
                r.id.clone().unwrap_or_else(|| "-".into()),
                join(&r.concepts.diseases),
                join(&r.concepts.symptoms),
                join(&r.concepts.treatments),
            ]);
        }
        t.to_string()
    })
}

/// `(id, text)` for the requested posts, or every post when `ids` is empty.
fn select_posts<'a>(corpus: &'a Corpus, ids: &[String]) -> Result<Vec<(&'a str, &'a str)>, CliError> {
    if ids.is_empty() {
        return Ok(corpus
            .posts()
            .iter()
            .map(|p| (p.id.as_str(), p.text.as_str()))
            .collect());
    }
    ids.iter()
        .map(|id| {
            corpus
                .get(id)
                .map(|p| (p.id.as_str(), p.text.as_str()))
                .ok_or_else(|| medforum::Error::UnknownPost(id.clone()).into())
        })
        .collect()
}

#[derive(Serialize)]
struct TrainReport {
    model: PathBuf,
    training: TrainingSummary,
}

pub fn train(config: &RunConfig, cv: Option<usize>, out: Output) -> Result<(), CliError> {
    let inputs = Inputs::load(config)?;
    let spec = ArchitectureSpec::new(config.architecture);
    if let Some(k) = cv {
        let report = cross_validate(
            inputs.corpus(),
            &inputs.table,
            &inputs.stopwords,
            &spec,
            &config.train,
            k,
        )?;
        return out.emit(&report, || cv_table(&report));
    }
    let outcome = train_model(inputs.corpus(), &inputs.table, &inputs.stopwords, &spec, &config.train)?;
    let path = config
        .paths
        .model
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_MODEL_PATH));
    save_model(&outcome.model, &path)?;
    let report = TrainReport {
        model: path,
        training: TrainingSummary {
            architecture: config.architecture,
            max_len: outcome.model.max_len,
            best_epoch: outcome.best_epoch,
            stopped_early: outcome.stopped_early,
            trace: outcome.trace,
        },
    };
    out.emit(&report, || {
        let mut t = Table::new(["epoch", "train loss", "validation loss", "train accuracy"]);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".into(), fixed);
        for e in &report.training.trace {
            t.row([
                e.epoch.to_string(),
                fixed(e.train_loss),
                opt(e.validation_loss),
                opt(e.train_accuracy),
            ]);
        }
        format!(
            "{t}{} model, max_len {}, best epoch {}{}\nmodel written to {}\n",
            report.training.architecture,
            report.training.max_len,
            report.training.best_epoch,
            if report.training.stopped_early {
                ", stopped early"
            } else {
                ""
            },
            report.model.display()
        )
    })
}

fn cv_table(r: &CrossValidationReport) -> String {
    let mut t = Table::new([
        "fold",
        "train",
        "test",
        "epochs",
        "accuracy",
        "kappa",
        "precision",
        "recall",
        "f1",
    ]);
    for f in &r.folds {
        t.row([
            (f.fold + 1).to_string(),
            f.train_size.to_string(),
            f.test_size.to_string(),
            f.epochs_run.to_string(),
            fixed(f.report.accuracy),
            fixed(f.kappa),
            fixed(f.report.macro_precision),
            fixed(f.report.macro_recall),
            fixed(f.report.macro_f1),
        ]);
    }
    let a = &r.aggregate;
    t.row([
        "mean".to_string(),
        String::new(),
        String::new(),
        String::new(),
        fixed(a.accuracy),
        fixed(a.kappa),
        fixed(a.macro_precision),
        fixed(a.macro_recall),
        fixed(a.macro_f1),
    ]);
    format!(
        "{}, {}-fold cross-validation, seed {}\n{t}",
        r.architecture, r.k, r.seed
    )
}

fn model_path(config: &RunConfig) -> Result<&Path, CliError> {
    config
        .paths
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("a model is required; pass --model or set paths.model".into()))
}

fn load_checked_model(path: &Path, table: &EmbeddingTable<f64>) -> Result<Model<f64>, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("model file {} does not exist", path.display())));
    }
    let model = load_model(path)?;
    if model.input_dim != table.dim() {
        return Err(medforum::Error::ShapeMismatch {
            expected: format!("embeddings of dimension {}", model.input_dim),
            found: format!("dimension {}", table.dim()),
        }
        .into());
    }
    Ok(model)
}

#[derive(Serialize)]
struct Classified {
    id: Option<String>,
    sentiment: Sentiment,
    probabilities: [f64; 3],
}

pub fn classify(config: &RunConfig, text: Option<&str>, ids: &[String], out: Output) -> Result<(), CliError> {
    let path = model_path(config)?;
    let inputs = Inputs::load(config)?;
    let model = load_checked_model(path, &inputs.table)?;
    let targets: Vec<(Option<&str>, &str)> = match text {
        Some(t) => vec![(None, t)],
        None => select_posts(inputs.corpus(), ids)?
            .into_iter()
            .map(|(id, t)| (Some(id), t))
            .collect(),
    };
    let rows = targets
        .into_iter()
        .map(|(id, t)| {
            let p = model.predict_text(t, &inputs.table, &inputs.stopwords)?;
            Ok(Classified {
                id: id.map(str::to_string),
                sentiment: p.sentiment,
                probabilities: p.probabilities,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.emit(&rows, || {
        let mut t = Table::new(["id", "sentiment", "positive", "neutral", "negative"]);
        for r in &rows {
            let [pos, neu, neg] = r.probabilities;
            t.row([
                r.id.clone().unwrap_or_else(|| "-".into()),
                sentiment_name(r.sentiment),
                fixed(pos),
                fixed(neu),
                fixed(neg),
            ]);
        }
        t.to_string()
    })
}

fn retrieval_table(r: &RetrievalResult) -> Table {
    let mut t = Table::new(["rank", "post", "ds", "ss", "ts", "misim", "sim"]);
    for rec in r.records() {
        t.row([
            rec.rank.to_string(),
            rec.post_id,
            fixed(rec.ds),
            fixed(rec.ss),
            fixed(rec.ts),
            fixed(rec.misim),
            fixed(rec.sim),
        ]);
    }
    t
}

pub fn retrieve(config: &RunConfig, query_id: &str, out: Output) -> Result<(), CliError> {
    let inputs = Inputs::load(config)?;
    let index = inputs.index();
    let result = top_n_for_id(query_id, &index, config.top_n, config.mode, config.threads)?;
    out.emit(&result, || retrieval_table(&result).to_string())
}

pub fn suggest(config: &RunConfig, query_id: &str, out: Output) -> Result<(), CliError> {
    let inputs = Inputs::load(config)?;
    let corpus = inputs.corpus();
    let needs_predictions = match config.label_source {
        LabelSource::Gold => false,
        LabelSource::Predicted => true,
        LabelSource::GoldThenPredicted => corpus.labeled().count() < corpus.len(),
    };
    let predicted: Option<Vec<Sentiment>> = if needs_predictions {
        let model = load_checked_model(model_path(config)?, &inputs.table)?;
        let preds: Vec<PostPrediction> = predict_corpus(&model, corpus, &inputs.table, &inputs.stopwords)?;
        Some(preds.into_iter().map(|p| p.sentiment).collect())
    } else {
        None
    };
    let labels = resolve_labels(corpus, predicted.as_deref(), config.label_source)?;
    let index = labeled_index(corpus, &inputs.table, &inputs.stopwords, &inputs.lexicon, &labels)?;
    let stats = build_pair_stats(index.posts())?;
    let query = index
        .get(query_id)
        .ok_or_else(|| medforum::Error::UnknownPost(query_id.to_string()))?;
    let result: SuggestionResult = suggest_for(query, &index, &stats, &config.suggestion)?;
    out.emit(&result, || {
        let mut t = Table::new(["disease", "treatment", "evidence", "sim", "pr", "g"]);
        for s in &result.suggestions {
            t.row([
                s.disease.clone(),
                s.treatment.clone(),
                s.evidence_post_id.clone(),
                fixed(s.sim),
                fixed(s.pr),
                fixed(s.g),
            ]);
        }
        let mut text = t.to_string();
        if t.is_empty() {
            text.push_str(&format!("no treatment clears tau = {}\n", result.tau));
        }
        text
    })
}

#[derive(Serialize)]
struct QueryScore {
    query_id: String,
    judged_in_top_k: usize,
    precision: Option<f64>,
    dcg: f64,
}

#[derive(Serialize)]
struct EvaluationReport {
    mode: RankMode,
    k: usize,
    threshold: f64,
    judgments: usize,
    queries: Vec<QueryScore>,
    mean_precision: Option<f64>,
    mean_dcg: f64,
    /// Metric score against median rating over every judged pair.
    correlation: Option<Correlation>,
    alpha_interval: Option<f64>,
    alpha_ordinal: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn optional(what: &str, r: medforum::Result<f64>) -> Option<f64> {
    r.map_err(|e| warn!("{what} unavailable: {e}")).ok()
}

pub fn evaluate(config: &RunConfig, threshold: f64, out: Output) -> Result<(), CliError> {
    if !(1.0..=5.0).contains(&threshold) {
        return Err(CliError::Usage(format!(
            "--threshold must be within 1..=5, got {threshold}"
        )));
    }
    let judgments: Vec<RelevanceJudgment> = match &config.paths.judgments {
        Some(path) => load_judgments(path)?,
        None => parse_judgments(SAMPLE_JUDGMENTS, "sample_judgments.tsv")?,
    };
    let inputs = Inputs::load(config)?;
    let index = inputs.index();
    let medians = median_ratings(&judgments);
    let k = config.top_n;

    let mut queries = Vec::new();
    for q in judged_queries(&judgments) {
        let result = top_n_for_id(&q, &index, k, config.mode, config.threads)?;
        let ratings: Vec<Option<f64>> = result
            .ranked
            .iter()
            .map(|r| medians.get(&(q.clone(), r.post_id.clone())).copied())
            .collect();
        let judged = ratings.iter().flatten().count();
        let precision = if judged > 0 {
            Some(precision_at_k(&ratings, k, threshold)?)
        } else {
            warn!("no judged post in the top {k} for query {q}");
            None
        };
        // Unjudged positions count as the lowest rating.
        let gains: Vec<f64> = ratings.iter().map(|r| r.unwrap_or(1.0)).collect();
        queries.push(QueryScore {
            query_id: q,
            judged_in_top_k: judged,
            precision,
            dcg: dcg_at_k(&gains, k),
        });
    }

    let mut scores = Vec::new();
    let mut ratings = Vec::new();
    for ((q, r), rating) in &medians {
        let (Some(qp), Some(rp)) = (index.get(q), index.get(r)) else {
            return Err(medforum::Error::UnknownPost(if index.get(q).is_none() { q } else { r }.clone()).into());
        };
        let b = overall_similarity(rp, qp);
        scores.push(match config.mode {
            RankMode::Full => b.sim,
            RankMode::TextOnly => b.ts,
        });
        ratings.push(*rating);
    }
    let correlation = pearson_with_p(&scores, &ratings)
        .map_err(|e| warn!("correlation unavailable: {e}"))
        .ok();
    let units = units_from_judgments(&judgments);
    let report = EvaluationReport {
        mode: config.mode,
        k,
        threshold,
        judgments: judgments.len(),
        mean_precision: mean(queries.iter().filter_map(|q| q.precision)),
        mean_dcg: mean(queries.iter().map(|q| q.dcg)).unwrap_or(0.0),
        queries,
        correlation,
        alpha_interval: optional("interval alpha", krippendorff_alpha(&units, AlphaLevel::Interval)),
        alpha_ordinal: optional("ordinal alpha", krippendorff_alpha(&units, AlphaLevel::Ordinal)),
    };
    out.emit(&report, || {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".into(), fixed);
        let mut t = Table::new(["query".to_string(), "judged".to_string(), format!("P@{k}"), format!("DCG{k}")]);
        for q in &report.queries {
            t.row([q.query_id.clone(), q.judged_in_top_k.to_string(), opt(q.precision), fixed(q.dcg)]);
        }
        t.row(["mean".to_string(), String::new(), opt(report.mean_precision), fixed(report.mean_dcg)]);
        let corr = report.correlation.map_or_else(
            || "-".to_string(),
            |c| format!("r = {:.4}, p = {:.4}, n = {}", c.r, c.p_value, c.n),
        );
        format!(
            "{} ranking, {} judgments\n{t}correlation with median rating: {corr}\nKrippendorff alpha: interval {}, ordinal {}\n",
            match report.mode {
                RankMode::Full => "full",
                RankMode::TextOnly => "text-only",
            },
            report.judgments,
            opt(report.alpha_interval),
            opt(report.alpha_ordinal)
        )
    })
}

#[derive(Serialize)]
struct GradCheckRow {
    architecture: ArchitectureKind,
    passed: bool,
    #[serde(flatten)]
    report: GradCheckReport,
}

pub fn gradcheck(
    config: &RunConfig,
    kind: Option<ArchitectureKind>,
    epsilon: f64,
    out: Output,
) -> Result<(), CliError> {
    let kinds: Vec<ArchitectureKind> = kind.map_or_else(|| ArchitectureKind::ALL.to_vec(), |k| vec![k]);
    let rows = kinds
        .into_iter()
        .map(|k| {
            let report = toy_gradient_check(k, config.seed, epsilon)?;
            Ok(GradCheckRow {
                architecture: k,
                passed: report.max_relative_error < GRADCHECK_TOLERANCE,
                report,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    out.emit(&rows, || {
        let mut t = Table::new(["architecture", "parameters", "max relative error", "status"]);
        for r in &rows {
            t.row([
                r.architecture.to_string(),
                r.report.parameters_checked.to_string(),
                format!("{:.3e}", r.report.max_relative_error),
                if r.passed { "ok" } else { "FAIL" }.to_string(),
            ]);
        }
        t.to_string()
    })?;
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.architecture.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed for {} (tolerance {GRADCHECK_TOLERANCE:e})",
            failed.join(", ")
        )))
    }
}
