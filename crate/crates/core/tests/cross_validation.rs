use std::collections::{BTreeMap, BTreeSet};

use medforum::classifier::{cross_validate, ArchitectureKind, ArchitectureSpec, CrossValidationReport, TrainConfig};
use medforum::corpus::Sentiment;
use medforum::pipeline::{bundled_corpus, corpus_embeddings};
use medforum::textprep::StopWords;

fn small_spec(kind: ArchitectureKind) -> ArchitectureSpec {
    ArchitectureSpec {
        filters: 16,
        lstm_hidden: 16,
        dense_hidden: 16,
        ..ArchitectureSpec::new(kind)
    }
}

fn config(threads: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        epochs: 10,
        learning_rate: 3e-3,
        patience: 0,
        threads,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn run(kind: ArchitectureKind, threads: usize, k: usize) -> CrossValidationReport {
    let sw = StopWords::english();
    let corpus = bundled_corpus().corpus;
    let table = corpus_embeddings(&corpus, &sw, 24, 7).unwrap();
    cross_validate(&corpus, &table, &sw, &small_spec(kind), &config(threads), k).unwrap()
}

#[test]
fn folds_partition_the_labeled_posts_without_leakage() {
    let corpus = bundled_corpus().corpus;
    let labels: BTreeMap<&str, Sentiment> = corpus
        .labeled()
        .map(|p| (p.id.as_str(), p.sentiment.unwrap()))
        .collect();
    let report = run(ArchitectureKind::CnnBaseline, 1, 5);
    assert_eq!(report.k, 5);
    assert_eq!(report.folds.len(), 5);

    let mut seen = BTreeSet::new();
    for (i, f) in report.folds.iter().enumerate() {
        assert_eq!(f.fold, i);
        assert_eq!(f.test_size, f.test_ids.len());
        assert_eq!(f.train_size + f.test_size, labels.len());
        for id in &f.test_ids {
            assert!(seen.insert(id.clone()), "{id} is in two test folds");
        }
        let mut per_class = [0usize; 3];
        for id in &f.test_ids {
            per_class[labels[id.as_str()].index()] += 1;
        }
        assert_eq!(per_class, [4, 4, 4], "fold {i} is not stratified");
    }
    assert_eq!(seen.len(), labels.len());
}

#[test]
fn aggregate_is_the_unweighted_fold_mean() {
    let report = run(ArchitectureKind::CnnBaseline, 1, 3);
    let mean = |f: fn(&medforum::classifier::FoldReport) -> f64| report.folds.iter().map(f).sum::<f64>() / 3.0;
    assert!((report.aggregate.accuracy - mean(|f| f.report.accuracy)).abs() < 1e-12);
    assert!((report.aggregate.kappa - mean(|f| f.kappa)).abs() < 1e-12);
    assert!((report.aggregate.macro_f1 - mean(|f| f.report.macro_f1)).abs() < 1e-12);
}

#[test]
fn folds_are_identical_in_parallel() {
    let a = run(ArchitectureKind::CnnLstmCnn, 1, 3);
    let b = run(ArchitectureKind::CnnLstmCnn, 3, 3);
    assert_eq!(a, b);
}

/// Both architectures trained on every fold until they fit their training
/// posts, so the comparison does not hinge on convergence speed.
fn run_converged(kind: ArchitectureKind) -> CrossValidationReport {
    let sw = StopWords::english();
    let corpus = bundled_corpus().corpus;
    let table = corpus_embeddings(&corpus, &sw, 24, 7).unwrap();
    let config = TrainConfig {
        epochs: 150,
        target_train_accuracy: Some(1.0),
        threads: 5,
        ..config(1)
    };
    cross_validate(&corpus, &table, &sw, &small_spec(kind), &config, 5).unwrap()
}

#[test]
fn proposed_architecture_keeps_pace_with_the_baseline() {
    let proposed = run_converged(ArchitectureKind::CnnLstmCnn);
    let baseline = run_converged(ArchitectureKind::CnnBaseline);
    assert!(
        proposed.aggregate.accuracy >= baseline.aggregate.accuracy - 0.05,
        "proposed {:.3}, baseline {:.3}",
        proposed.aggregate.accuracy,
        baseline.aggregate.accuracy
    );
}

#[test]
fn too_many_folds_is_an_error() {
    let sw = StopWords::english();
    let corpus = bundled_corpus().corpus;
    let table = corpus_embeddings(&corpus, &sw, 8, 7).unwrap();
    let spec = small_spec(ArchitectureKind::CnnBaseline);
    assert!(cross_validate(&corpus, &table, &sw, &spec, &config(1), 1).is_err());
    assert!(cross_validate(&corpus, &table, &sw, &spec, &config(1), 61).is_err());
}
