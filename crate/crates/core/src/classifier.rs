//! Sentiment classifiers: architecture assembly, mini-batch training,
//! prediction, k-fold evaluation and the model file.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{stratified_kfold, ByteCursor, Corpus, Sentiment};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::metrics::{classification_report, cohen_kappa, ClassificationReport};
use crate::neural::{
    adam_update, finite_difference_check, Activation, AdamConfig, ConvBlock, Dense, GradCheckReport, Gradients, Lstm,
    Network, OptimizerState, SequenceStage, Tensor2D,
};
use crate::scalar::Scalar;
use crate::textprep::{compute_max_len, preprocess, vectorize, StopWords, TokenSequence, DEFAULT_MAX_LEN_CEILING};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchitectureKind {
    /// Conv block, max pool, softmax.
    CnnBaseline,
    /// LSTM, max pool, dense ReLU, softmax.
    Lstm,
    /// Conv block, LSTM, max pool, dense ReLU, softmax.
    CnnLstm,
    /// Conv block, LSTM, conv block, max pool, dense ReLU, softmax.
    CnnLstmCnn,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 4] = [
        ArchitectureKind::CnnBaseline,
        ArchitectureKind::Lstm,
        ArchitectureKind::CnnLstm,
        ArchitectureKind::CnnLstmCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::CnnBaseline => "cnn",
            ArchitectureKind::Lstm => "lstm",
            ArchitectureKind::CnnLstm => "cnn-lstm",
            ArchitectureKind::CnnLstmCnn => "cnn-lstm-cnn",
        }
    }

    fn code(self) -> u8 {
        match self {
            ArchitectureKind::CnnBaseline => 0,
            ArchitectureKind::Lstm => 1,
            ArchitectureKind::CnnLstm => 2,
            ArchitectureKind::CnnLstmCnn => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "cnn" | "cnn-baseline" | "baseline" => Ok(ArchitectureKind::CnnBaseline),
            "lstm" => Ok(ArchitectureKind::Lstm),
            "cnn-lstm" => Ok(ArchitectureKind::CnnLstm),
            "cnn-lstm-cnn" | "proposed" => Ok(ArchitectureKind::CnnLstmCnn),
            _ => Err(Error::InvalidArgument(format!("unknown architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchitectureKind,
    /// One conv branch per size; branch outputs are concatenated.
    pub filter_sizes: Vec<usize>,
    /// Filters per branch.
    pub filters: usize,
    pub lstm_hidden: usize,
    pub dense_hidden: usize,
    pub num_classes: usize,
}

pub const NUM_CLASSES: usize = 3;

impl ArchitectureSpec {
    /// Unigram and bigram branches of 200 filters, 200 LSTM units and a
    /// 128-unit dense layer.
    pub fn new(kind: ArchitectureKind) -> Self {
        ArchitectureSpec {
            kind,
            filter_sizes: vec![1, 2],
            filters: 200,
            lstm_hidden: 200,
            dense_hidden: 128,
            num_classes: NUM_CLASSES,
        }
    }

    /// Same topology with tiny widths, for gradient checks.
    pub fn toy(kind: ArchitectureKind) -> Self {
        ArchitectureSpec {
            kind,
            filter_sizes: vec![1, 2],
            filters: 3,
            lstm_hidden: 4,
            dense_hidden: 5,
            num_classes: NUM_CLASSES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.num_classes != NUM_CLASSES {
            return bad("the classifier has exactly 3 classes");
        }
        if self.filters == 0 || self.filter_sizes.is_empty() || self.filter_sizes.contains(&0) {
            return bad("filters and filter sizes must be positive");
        }
        if self.lstm_hidden == 0 || self.dense_hidden == 0 {
            return bad("hidden sizes must be positive");
        }
        Ok(())
    }

    fn conv_width(&self) -> usize {
        self.filters * self.filter_sizes.len()
    }

    /// Randomly initialised network for `input_dim`-wide rows.
    pub fn build<T: Scalar, R: Rng>(&self, input_dim: usize, rng: &mut R) -> Result<Network<T>> {
        self.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be positive".into()));
        }
        let (fs, f, h, dh, c) = (
            &self.filter_sizes,
            self.filters,
            self.lstm_hidden,
            self.dense_hidden,
            self.num_classes,
        );
        let cw = self.conv_width();
        let conv = |inputs: usize, rng: &mut R| SequenceStage::Conv(ConvBlock::new(fs, inputs, f, rng));
        let (stages, pooled) = match self.kind {
            ArchitectureKind::CnnBaseline => (vec![conv(input_dim, rng)], cw),
            ArchitectureKind::Lstm => (vec![SequenceStage::Lstm(Lstm::new(input_dim, h, rng))], h),
            ArchitectureKind::CnnLstm => {
                let c1 = conv(input_dim, rng);
                (vec![c1, SequenceStage::Lstm(Lstm::new(cw, h, rng))], h)
            }
            ArchitectureKind::CnnLstmCnn => {
                let c1 = conv(input_dim, rng);
                let l = SequenceStage::Lstm(Lstm::new(cw, h, rng));
                let c2 = conv(h, rng);
                (vec![c1, l, c2], cw)
            }
        };
        let head = match self.kind {
            ArchitectureKind::CnnBaseline => vec![Dense::new(pooled, c, Activation::Identity, rng)],
            _ => vec![
                Dense::new(pooled, dh, Activation::Relu, rng),
                Dense::new(dh, c, Activation::Identity, rng),
            ],
        };
        Ok(Network {
            input_dim,
            stages,
            head,
        })
    }

    /// Network with every parameter zero.
    pub fn build_zeros<T: Scalar>(&self, input_dim: usize) -> Result<Network<T>> {
        let mut net = self.build(input_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        for p in net.params_mut() {
            p.values.iter_mut().for_each(|v| *v = T::zero());
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Epochs without validation-loss improvement before stopping; 0 disables
    /// early stopping and the validation split.
    pub patience: usize,
    /// Share of each class held out for early stopping.
    pub validation_fraction: f64,
    /// Worker threads for per-example gradients (and folds in
    /// [`cross_validate`]). Results do not depend on it.
    pub threads: usize,
    /// Stop once accuracy on the training examples reaches this value.
    pub target_train_accuracy: Option<f64>,
    pub max_len_ceiling: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 42,
            patience: 3,
            validation_fraction: 0.1,
            threads: 1,
            target_train_accuracy: None,
            max_len_ceiling: DEFAULT_MAX_LEN_CEILING,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        if let Some(t) = self.target_train_accuracy {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("target accuracy must be in (0, 1], got {t}"));
            }
        }
        if self.max_len_ceiling == 0 {
            return bad("max_len ceiling must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ArchitectureSpec,
    pub input_dim: usize,
    pub max_len: usize,
    pub network: Network<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction<T> {
    pub sentiment: Sentiment,
    /// Positive, Neutral, Negative.
    pub probabilities: [T; 3],
}

impl<T: Scalar> Model<T> {
    pub fn new(spec: ArchitectureSpec, input_dim: usize, max_len: usize, seed: u64) -> Result<Self> {
        let network = spec.build(input_dim, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Self::check_len(max_len)?;
        Ok(Model {
            spec,
            input_dim,
            max_len,
            network,
        })
    }

    pub fn zeros(spec: ArchitectureSpec, input_dim: usize, max_len: usize) -> Result<Self> {
        let network = spec.build_zeros(input_dim)?;
        Self::check_len(max_len)?;
        Ok(Model {
            spec,
            input_dim,
            max_len,
            network,
        })
    }

    fn check_len(max_len: usize) -> Result<()> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be at least 1".into()));
        }
        Ok(())
    }

    fn check_shape(&self, input: &Tensor2D<T>) -> Result<()> {
        if input.shape() != (self.max_len, self.input_dim) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.max_len, self.input_dim),
                found: format!("{}x{}", input.rows(), input.cols()),
            });
        }
        Ok(())
    }

    /// Most probable class; ties go to the earlier of Positive, Neutral, Negative.
    pub fn predict(&self, input: &Tensor2D<T>) -> Result<Prediction<T>> {
        self.check_shape(input)?;
        let p = self.network.probabilities(input)?;
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        Ok(Prediction {
            sentiment: Sentiment::from_index(best).expect("three classes"),
            probabilities: [p[0], p[1], p[2]],
        })
    }

    pub fn predict_tokens(&self, tokens: &TokenSequence, table: &EmbeddingTable<T>) -> Result<Prediction<T>> {
        if table.dim() != self.input_dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{}-dimensional embeddings", self.input_dim),
                found: format!("{}", table.dim()),
            });
        }
        self.predict(&vectorize(tokens, table, self.max_len).matrix)
    }

    pub fn predict_text(&self, text: &str, table: &EmbeddingTable<T>, stopwords: &StopWords) -> Result<Prediction<T>> {
        self.predict_tokens(&preprocess(text, stopwords), table)
    }

    /// Output shapes of the input, each stage, pooling and each dense layer.
    pub fn shape_trace(&self) -> Result<Vec<(usize, usize)>> {
        self.network.shape_trace(&Tensor2D::zeros(self.max_len, self.input_dim))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub trace: Vec<EpochStats>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTokens {
    pub id: String,
    pub tokens: TokenSequence,
    pub label: Sentiment,
}

pub fn labeled_tokens(corpus: &Corpus, stopwords: &StopWords) -> Vec<LabeledTokens> {
    corpus
        .labeled()
        .map(|p| LabeledTokens {
            id: p.id.clone(),
            tokens: preprocess(&p.text, stopwords),
            label: p.sentiment.expect("labeled post"),
        })
        .collect()
}

/// Train on every labeled post; `max_len` comes from the longest of them.
pub fn train<T: Scalar>(
    corpus: &Corpus,
    table: &EmbeddingTable<T>,
    stopwords: &StopWords,
    spec: &ArchitectureSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let examples = labeled_tokens(corpus, stopwords);
    let max_len = compute_max_len(examples.iter().map(|e| &e.tokens), table, config.max_len_ceiling);
    train_examples(&examples, table, spec, config, max_len)
}

pub fn train_examples<T: Scalar>(
    examples: &[LabeledTokens],
    table: &EmbeddingTable<T>,
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    max_len: usize,
) -> Result<TrainOutcome<T>> {
    let labels: Vec<Sentiment> = examples.iter().map(|e| e.label).collect();
    fit(
        &labels,
        |i| vectorize(&examples[i].tokens, table, max_len).matrix,
        spec,
        config,
        table.dim(),
        max_len,
    )
}

/// Train on ready-made input matrices, all of one shape.
pub fn train_matrices<T: Scalar>(
    inputs: &[Tensor2D<T>],
    labels: &[Sentiment],
    spec: &ArchitectureSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if inputs.len() != labels.len() {
        return Err(Error::InvalidArgument("inputs and labels differ in length".into()));
    }
    let (max_len, dim) = inputs.first().map_or((0, 0), Tensor2D::shape);
    if let Some(bad) = inputs.iter().find(|m| m.shape() != (max_len, dim)) {
        return Err(Error::ShapeMismatch {
            expected: format!("{max_len}x{dim}"),
            found: format!("{}x{}", bad.rows(), bad.cols()),
        });
    }
    fit(labels, |i| inputs[i].clone(), spec, config, dim, max_len)
}

fn check_classes(labels: &[Sentiment]) -> Result<()> {
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.index()] += 1;
    }
    for s in Sentiment::ALL {
        if counts[s.index()] == 0 {
            return Err(Error::InsufficientClass {
                class: s.to_string(),
                count: 0,
                required: 1,
            });
        }
    }
    Ok(())
}

/// Per class, hold out `floor(count * fraction)` shuffled examples while
/// keeping at least one for training.
fn validation_split<R: Rng>(labels: &[Sentiment], fraction: f64, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for s in Sentiment::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == s).collect();
        idx.shuffle(rng);
        let take = ((idx.len() as f64 * fraction).floor() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

struct Pool(Option<rayon::ThreadPool>);

impl Pool {
    fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Pool(None));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(|p| Pool(Some(p)))
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
    }

    /// `f` over `items`, results in item order.
    fn map<I: Sync, O: Send>(&self, items: &[I], f: impl Fn(&I) -> O + Sync + Send) -> Vec<O> {
        match &self.0 {
            Some(p) => p.install(|| items.par_iter().map(&f).collect()),
            None => items.iter().map(f).collect(),
        }
    }
}

fn fit<T: Scalar, F>(
    labels: &[Sentiment],
    input: F,
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    input_dim: usize,
    max_len: usize,
) -> Result<TrainOutcome<T>>
where
    F: Fn(usize) -> Tensor2D<T> + Sync,
{
    config.validate()?;
    spec.validate()?;
    check_classes(labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Model {
        spec: spec.clone(),
        input_dim,
        max_len,
        network: spec.build(input_dim, &mut rng)?,
    };
    Model::<T>::check_len(max_len)?;

    let (train_idx, val_idx) = if config.patience > 0 && config.validation_fraction > 0.0 {
        validation_split(labels, config.validation_fraction, &mut rng)
    } else {
        ((0..labels.len()).collect(), Vec::new())
    };
    let early_stopping = !val_idx.is_empty();
    let pool = Pool::new(config.threads)?;
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt = OptimizerState::new(&model.network.params(), adam);

    let mean_loss = |net: &Network<T>, idx: &[usize]| -> Result<(f64, f64)> {
        let out = pool.map(idx, |&i| -> Result<(f64, bool)> {
            let p = net.probabilities(&input(i))?;
            let target = labels[i].index();
            let argmax = (1..p.len()).fold(0, |b, j| if p[j] > p[b] { j } else { b });
            let loss = -p[target].as_f64().max(f64::MIN_POSITIVE).ln();
            Ok((loss, argmax == target))
        });
        let mut loss = 0.0;
        let mut correct = 0usize;
        for r in out {
            let (l, ok) = r?;
            loss += l;
            correct += usize::from(ok);
        }
        Ok((loss / idx.len() as f64, correct as f64 / idx.len() as f64))
    };

    let mut trace = Vec::with_capacity(config.epochs);
    let mut order = train_idx.clone();
    let mut best: Option<(f64, usize, Network<T>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let net = &model.network;
            let results = pool.map(batch, |&i| net.backprop(&input(i), labels[i].index()));
            let mut total = Gradients::zeros_like(&net.params());
            for r in results {
                let (loss, _, g) = r?;
                epoch_loss += loss.as_f64();
                total.accumulate(&g)?;
            }
            total.scale(T::of(1.0 / batch.len() as f64));
            adam_update(&mut model.network.params_mut(), &total, &mut opt)?;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let train_accuracy = match config.target_train_accuracy {
            Some(_) => Some(mean_loss(&model.network, &train_idx)?.1),
            None => None,
        };
        let validation_loss = if early_stopping {
            Some(mean_loss(&model.network, &val_idx)?.0)
        } else {
            None
        };
        debug!("epoch {epoch}: train loss {train_loss:.6}, validation loss {validation_loss:?}, accuracy {train_accuracy:?}");
        trace.push(EpochStats {
            epoch,
            train_loss,
            validation_loss,
            train_accuracy,
        });

        if let Some(vl) = validation_loss {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, model.network.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
        if let (Some(target), Some(acc)) = (config.target_train_accuracy, train_accuracy) {
            if acc >= target {
                stopped_early = epoch < config.epochs;
                best = None;
                break;
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, net)) => {
            model.network = net;
            epoch
        }
        _ => trace.len(),
    };
    info!(
        "trained {} for {} epochs (kept epoch {best_epoch}), final train loss {:.6}",
        spec.kind,
        trace.len(),
        trace.last().map_or(f64::NAN, |s| s.train_loss)
    );
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        stopped_early,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub test_ids: Vec<String>,
    pub max_len: usize,
    pub epochs_run: usize,
    pub kappa: f64,
    pub report: ClassificationReport,
}

/// Unweighted mean over folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub accuracy: f64,
    pub kappa: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub f1_of_macro_averages: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub architecture: ArchitectureKind,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub aggregate: AggregateMetrics,
}

/// Stratified k-fold evaluation. Each fold trains on the other `k - 1`
/// folds with `max_len` taken from its own training posts. With
/// `threads > 1` folds train in parallel, each on one thread.
pub fn cross_validate<T: Scalar>(
    corpus: &Corpus,
    table: &EmbeddingTable<T>,
    stopwords: &StopWords,
    spec: &ArchitectureSpec,
    config: &TrainConfig,
    k: usize,
) -> Result<CrossValidationReport> {
    config.validate()?;
    spec.validate()?;
    let split = stratified_kfold(corpus, k, config.seed)?;
    let examples = labeled_tokens(corpus, stopwords);
    let fold_config = TrainConfig {
        threads: 1,
        ..config.clone()
    };
    let run_fold = |fold: &usize| -> Result<FoldReport> {
        let fold = *fold;
        let (test, train): (Vec<&LabeledTokens>, Vec<&LabeledTokens>) =
            examples.iter().partition(|e| split.fold_of(&e.id) == Some(fold));
        let train: Vec<LabeledTokens> = train.into_iter().cloned().collect();
        let max_len = compute_max_len(train.iter().map(|e| &e.tokens), table, config.max_len_ceiling);
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(fold as u64 + 1),
            ..fold_config.clone()
        };
        let outcome = train_examples(&train, table, spec, &cfg, max_len)?;
        let gold: Vec<Sentiment> = test.iter().map(|e| e.label).collect();
        let pred = test
            .iter()
            .map(|e| outcome.model.predict_tokens(&e.tokens, table).map(|p| p.sentiment))
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldReport {
            fold,
            train_size: train.len(),
            test_size: test.len(),
            test_ids: test.iter().map(|e| e.id.clone()).collect(),
            max_len,
            epochs_run: outcome.trace.len(),
            kappa: cohen_kappa(&gold, &pred)?,
            report: classification_report(&gold, &pred)?,
        })
    };
    let folds_idx: Vec<usize> = (0..k).collect();
    let folds = Pool::new(config.threads.min(k))?
        .map(&folds_idx, run_fold)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mean = |f: &dyn Fn(&FoldReport) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    let aggregate = AggregateMetrics {
        accuracy: mean(&|f| f.report.accuracy),
        kappa: mean(&|f| f.kappa),
        macro_precision: mean(&|f| f.report.macro_precision),
        macro_recall: mean(&|f| f.report.macro_recall),
        macro_f1: mean(&|f| f.report.macro_f1),
        f1_of_macro_averages: mean(&|f| f.report.f1_of_macro_averages),
    };
    Ok(CrossValidationReport {
        architecture: spec.kind,
        k,
        seed: config.seed,
        folds,
        aggregate,
    })
}

/// Rows and columns of the input used by [`toy_gradient_check`].
pub const TOY_INPUT_SHAPE: (usize, usize) = (6, 8);

/// Central-difference check of a toy-sized `kind` on a seeded random input,
/// over every target class. Reports the worst parameter.
pub fn toy_gradient_check(kind: ArchitectureKind, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let (rows, cols) = TOY_INPUT_SHAPE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor2D::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let mut model = Model::<f64>::new(ArchitectureSpec::toy(kind), cols, rows, seed.wrapping_add(1))?;
    let mut worst: Option<GradCheckReport> = None;
    let mut checked = 0;
    for target in 0..NUM_CLASSES {
        let r = finite_difference_check(&mut model.network, &x, target, epsilon)?;
        checked += r.parameters_checked;
        if worst
            .as_ref()
            .is_none_or(|w| r.max_relative_error > w.max_relative_error)
        {
            worst = Some(r);
        }
    }
    let mut report = worst.expect("at least one class");
    report.parameters_checked = checked;
    Ok(report)
}

const MODEL_MAGIC: &[u8; 4] = b"MFM1";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(model, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_model<T: Scalar, W: Write>(model: &Model<T>, w: &mut W) -> std::io::Result<()> {
    let u32le = |v: usize| (v as u32).to_le_bytes();
    let spec = &model.spec;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&[spec.kind.code()])?;
    w.write_all(&u32le(spec.filter_sizes.len()))?;
    for &k in &spec.filter_sizes {
        w.write_all(&u32le(k))?;
    }
    for v in [
        spec.filters,
        spec.lstm_hidden,
        spec.dense_hidden,
        spec.num_classes,
        model.input_dim,
        model.max_len,
    ] {
        w.write_all(&u32le(v))?;
    }
    let params = model.network.params();
    w.write_all(&u32le(params.len()))?;
    for p in params {
        w.write_all(&u32le(p.rows))?;
        w.write_all(&u32le(p.cols))?;
        w.write_all(&(p.values.len() as u64).to_le_bytes())?;
        for v in &p.values {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}

/// [`load_model`], failing unless the stored architecture equals `expected`.
pub fn load_model_for<T: Scalar>(path: impl AsRef<Path>, expected: &ArchitectureSpec) -> Result<Model<T>> {
    let model = load_model(path)?;
    if &model.spec != expected {
        return Err(Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            found: format!("{:?}", model.spec),
        });
    }
    Ok(model)
}

pub fn read_model<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("missing MFM1 magic".into()));
    }
    let version = cur.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let code = cur.u8()?;
    let kind =
        ArchitectureKind::from_code(code).ok_or_else(|| Error::Format(format!("bad architecture code {code}")))?;
    let n_sizes = cur.u32()? as usize;
    if n_sizes > 64 {
        return Err(Error::Format(format!("implausible filter size count {n_sizes}")));
    }
    let filter_sizes = (0..n_sizes)
        .map(|_| cur.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut next = || cur.u32().map(|v| v as usize);
    let spec = ArchitectureSpec {
        kind,
        filter_sizes,
        filters: next()?,
        lstm_hidden: next()?,
        dense_hidden: next()?,
        num_classes: next()?,
    };
    let input_dim = next()?;
    let max_len = next()?;
    let mut model = Model::<T>::zeros(spec, input_dim, max_len)?;
    let n_blocks = cur.u32()? as usize;
    let mut params = model.network.params_mut();
    if n_blocks != params.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} parameter blocks", params.len()),
            found: format!("{n_blocks}"),
        });
    }
    for (i, p) in params.iter_mut().enumerate() {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let len = cur.u64()? as usize;
        if (rows, cols) != (p.rows, p.cols) || len != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("block {i} of {}x{}", p.rows, p.cols),
                found: format!("{rows}x{cols} with {len} values"),
            });
        }
        for v in p.values.iter_mut() {
            *v = T::of(cur.f64()?);
        }
    }
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after parameters".into()));
    }
    Ok(model)
}
