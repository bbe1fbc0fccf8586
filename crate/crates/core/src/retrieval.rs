//! Composite disease/symptom/text similarity and top-N similar-post ranking.
//!
//! ```text
//! ds    = J(diseases(P), diseases(Q))
//! ss    = J(symptoms(P), symptoms(Q))
//! ts    = max(0, cos(doc(P), doc(Q)))
//! misim = (2 ds + ss) / 3
//! sim   = (2 misim + ts) / 3
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concepts::{extract_text, jaccard, ConceptExtractor, ConceptSet};
use crate::corpus::{Corpus, ForumPost, Sentiment};
use crate::embeddings::{cosine, doc_vector, DocVector, EmbeddingTable};
use crate::error::{Error, Result};
use crate::textprep::{preprocess, StopWords};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimilarityBreakdown {
    pub ds: f64,
    pub ss: f64,
    pub ts: f64,
    pub misim: f64,
    pub sim: f64,
}

impl SimilarityBreakdown {
    pub fn from_components(ds: f64, ss: f64, ts: f64) -> Self {
        let misim = (2.0 * ds + ss) / 3.0;
        let sim = (2.0 * misim + ts) / 3.0;
        SimilarityBreakdown { ds, ss, ts, misim, sim }
    }
}

pub fn disease_similarity(p: &ConceptSet, q: &ConceptSet) -> f64 {
    jaccard(&p.diseases, &q.diseases)
}

pub fn symptom_similarity(p: &ConceptSet, q: &ConceptSet) -> f64 {
    jaccard(&p.symptoms, &q.symptoms)
}

pub fn text_similarity(p: &DocVector<f64>, q: &DocVector<f64>) -> f64 {
    cosine(&p.values, &q.values).map_or(0.0, |c| c.max(0.0))
}

/// A post with its concept set and document vector computed once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedPost {
    pub id: String,
    pub sentiment: Option<Sentiment>,
    pub concepts: ConceptSet,
    pub doc: DocVector<f64>,
}

impl IndexedPost {
    pub fn from_post<E: ConceptExtractor + ?Sized>(
        post: &ForumPost,
        table: &EmbeddingTable<f64>,
        stopwords: &StopWords,
        extractor: &E,
    ) -> Self {
        IndexedPost {
            id: post.id.clone(),
            sentiment: post.sentiment,
            concepts: extract_text(extractor, &post.text, stopwords),
            doc: doc_vector(&preprocess(&post.text, stopwords), table),
        }
    }
}

pub fn overall_similarity(p: &IndexedPost, q: &IndexedPost) -> SimilarityBreakdown {
    SimilarityBreakdown::from_components(
        disease_similarity(&p.concepts, &q.concepts),
        symptom_similarity(&p.concepts, &q.concepts),
        text_similarity(&p.doc, &q.doc),
    )
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PostIndex {
    posts: Vec<IndexedPost>,
    by_id: HashMap<String, usize>,
}

impl PostIndex {
    pub fn build<E: ConceptExtractor + ?Sized>(
        corpus: &Corpus,
        table: &EmbeddingTable<f64>,
        stopwords: &StopWords,
        extractor: &E,
    ) -> Self {
        let posts = corpus
            .posts()
            .iter()
            .map(|p| IndexedPost::from_post(p, table, stopwords, extractor))
            .collect();
        Self::from_posts(posts).expect("corpus ids are unique")
    }

    pub fn from_posts(posts: Vec<IndexedPost>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(posts.len());
        for (i, p) in posts.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        Ok(PostIndex { posts, by_id })
    }

    pub fn posts(&self) -> &[IndexedPost] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&IndexedPost> {
        self.by_id.get(id).map(|&i| &self.posts[i])
    }

    /// Replace sentiments by id, e.g. with classifier predictions.
    pub fn set_sentiment(&mut self, id: &str, sentiment: Option<Sentiment>) -> Result<()> {
        let i = *self.by_id.get(id).ok_or_else(|| Error::UnknownPost(id.to_string()))?;
        self.posts[i].sentiment = sentiment;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Rank by `sim`.
    #[default]
    Full,
    /// Rank by `ts` alone (nearest neighbours on text).
    TextOnly,
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(RankMode::Full),
            "text_only" | "text" | "knn" => Ok(RankMode::TextOnly),
            _ => Err(Error::InvalidArgument(format!("unknown ranking mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPost {
    pub post_id: String,
    pub breakdown: SimilarityBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub n: usize,
    pub mode: RankMode,
    pub ranked: Vec<RankedPost>,
}

/// Flat output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub query_id: String,
    pub rank: usize,
    pub post_id: String,
    pub ds: f64,
    pub ss: f64,
    pub ts: f64,
    pub misim: f64,
    pub sim: f64,
}

impl RetrievalResult {
    pub fn records(&self) -> Vec<RetrievalRecord> {
        self.ranked
            .iter()
            .enumerate()
            .map(|(i, r)| RetrievalRecord {
                query_id: self.query_id.clone(),
                rank: i + 1,
                post_id: r.post_id.clone(),
                ds: r.breakdown.ds,
                ss: r.breakdown.ss,
                ts: r.breakdown.ts,
                misim: r.breakdown.misim,
                sim: r.breakdown.sim,
            })
            .collect()
    }
}

fn rank_key(b: &SimilarityBreakdown, mode: RankMode) -> f64 {
    match mode {
        RankMode::Full => b.sim,
        RankMode::TextOnly => b.ts,
    }
}

/// Score descending, then post id ascending.
pub fn ranking_order(a: &RankedPost, b: &RankedPost, mode: RankMode) -> Ordering {
    rank_key(&b.breakdown, mode)
        .total_cmp(&rank_key(&a.breakdown, mode))
        .then_with(|| a.post_id.cmp(&b.post_id))
}

/// Rank every indexed post except the query (matched by id) and keep the
/// best `n`. `threads > 1` scores candidates on a worker pool; the result is
/// the same for any thread count.
pub fn top_n(
    query: &IndexedPost,
    index: &PostIndex,
    n: usize,
    mode: RankMode,
    threads: usize,
) -> Result<RetrievalResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let score = |p: &IndexedPost| RankedPost {
        post_id: p.id.clone(),
        breakdown: overall_similarity(p, query),
    };
    let candidates = index.posts().iter().filter(|p| p.id != query.id);
    let mut ranked: Vec<RankedPost> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        let candidates: Vec<&IndexedPost> = candidates.collect();
        pool.install(|| candidates.par_iter().map(|p| score(p)).collect())
    } else {
        candidates.map(score).collect()
    };
    ranked.sort_by(|a, b| ranking_order(a, b, mode));
    ranked.truncate(n);
    Ok(RetrievalResult {
        query_id: query.id.clone(),
        n,
        mode,
        ranked,
    })
}

/// [`top_n`] for a post already in the index.
pub fn top_n_for_id(
    query_id: &str,
    index: &PostIndex,
    n: usize,
    mode: RankMode,
    threads: usize,
) -> Result<RetrievalResult> {
    let query = index
        .get(query_id)
        .ok_or_else(|| Error::UnknownPost(query_id.to_string()))?;
    top_n(query, index, n, mode, threads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::ConceptLexicon;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    fn cs(d: &[&str], s: &[&str]) -> ConceptSet {
        ConceptSet {
            diseases: set(d),
            symptoms: set(s),
            treatments: BTreeSet::new(),
        }
    }

    fn post(id: &str, d: &[&str], s: &[&str], v: &[f64]) -> IndexedPost {
        IndexedPost {
            id: id.into(),
            sentiment: None,
            concepts: cs(d, s),
            doc: DocVector {
                values: v.to_vec(),
                token_count: 1,
            },
        }
    }

    #[test]
    fn component_examples() {
        assert_eq!(disease_similarity(&cs(&["anx"], &[]), &cs(&["anx"], &[])), 1.0);
        assert_eq!(disease_similarity(&cs(&["a"], &[]), &cs(&["b"], &[])), 0.0);
        assert_eq!(disease_similarity(&cs(&["anx", "dep"], &[]), &cs(&["anx"], &[])), 0.5);
        assert_eq!(symptom_similarity(&cs(&[], &["ha"]), &cs(&[], &["ha", "nau"])), 0.5);
        assert_eq!(symptom_similarity(&cs(&[], &[]), &cs(&[], &["ha"])), 0.0);
        assert_eq!(symptom_similarity(&cs(&[], &[]), &cs(&[], &[])), 0.0);
    }

    #[test]
    fn weighted_means() {
        let b = SimilarityBreakdown::from_components(0.5, 0.2, 0.9);
        assert!((b.misim - 0.4).abs() < 1e-15);
        assert!((b.sim - 17.0 / 30.0).abs() < 1e-15);
        assert_eq!(SimilarityBreakdown::from_components(0.0, 0.0, 0.0).sim, 0.0);
        let p = post("p", &["d"], &["s"], &[1.0, 2.0]);
        assert!((overall_similarity(&p, &p).sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_cosine_floors_at_zero() {
        let a = post("a", &[], &[], &[1.0, 0.0]);
        let b = post("b", &[], &[], &[-1.0, 0.0]);
        assert_eq!(overall_similarity(&a, &b).ts, 0.0);
    }

    fn small_index() -> PostIndex {
        PostIndex::from_posts(vec![
            post("q", &["anx"], &["ha"], &[1.0, 0.0]),
            post("b", &["anx"], &[], &[0.0, 1.0]),
            post("a", &["anx"], &[], &[0.0, 1.0]),
            post("dup", &["anx"], &["ha"], &[1.0, 0.0]),
            post("z", &[], &[], &[1.0, 1.0]),
        ])
        .unwrap()
    }

    #[test]
    fn ranking_excludes_query_and_breaks_ties_by_id() {
        let idx = small_index();
        let r = top_n_for_id("q", &idx, 10, RankMode::Full, 1).unwrap();
        let ids: Vec<&str> = r.ranked.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["dup", "a", "b", "z"]);
        assert!((r.ranked[0].breakdown.sim - 1.0).abs() < 1e-12);
        let recs = r.records();
        assert_eq!(recs[1].rank, 2);
        assert_eq!(recs[1].post_id, "a");

        let r = top_n_for_id("q", &idx, 2, RankMode::TextOnly, 1).unwrap();
        let ids: Vec<&str> = r.ranked.iter().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["dup", "z"]);
    }

    #[test]
    fn errors_and_empty() {
        let idx = small_index();
        assert!(top_n_for_id("q", &idx, 0, RankMode::Full, 1).is_err());
        assert!(matches!(
            top_n_for_id("nope", &idx, 1, RankMode::Full, 1),
            Err(Error::UnknownPost(_))
        ));
        let q = post("q", &[], &[], &[1.0]);
        assert!(top_n(&q, &PostIndex::default(), 5, RankMode::Full, 1)
            .unwrap()
            .ranked
            .is_empty());
        assert!(PostIndex::from_posts(vec![q.clone(), q]).is_err());
    }

    #[test]
    fn threads_do_not_change_results() {
        let idx = small_index();
        let a = top_n_for_id("q", &idx, 4, RankMode::Full, 1).unwrap();
        let b = top_n_for_id("q", &idx, 4, RankMode::Full, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn build_from_corpus() {
        let sw = StopWords::english();
        let lex = ConceptLexicon::starter(&sw);
        let corpus = Corpus::new(vec![
            ForumPost::new("1", "Xanax helped my anxiety and headaches"),
            ForumPost::new("2", "Sertraline for anxiety gave me nausea"),
        ])
        .unwrap();
        let words = [
            "xanax",
            "helped",
            "anxiety",
            "headaches",
            "sertraline",
            "gave",
            "nausea",
        ];
        let table = crate::embeddings::random_table(&words, 8, 1).unwrap();
        let idx = PostIndex::build(&corpus, &table, &sw, &lex);
        assert_eq!(idx.len(), 2);
        let p1 = idx.get("1").unwrap();
        assert!(!p1.concepts.diseases.is_empty());
        assert_eq!(p1.doc.token_count, 4);
        let r = top_n_for_id("1", &idx, 5, RankMode::Full, 1).unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert!(r.ranked[0].breakdown.ds > 0.0);
    }

    fn arb_post(id: usize) -> impl Strategy<Value = IndexedPost> {
        (
            proptest::collection::btree_set(0u8..5, 0..4),
            proptest::collection::btree_set(0u8..5, 0..4),
            proptest::collection::vec(-1.0f64..1.0, 3),
        )
            .prop_map(move |(d, s, v)| IndexedPost {
                id: format!("p{id}"),
                sentiment: None,
                concepts: ConceptSet {
                    diseases: d.iter().map(|x| format!("D{x}")).collect(),
                    symptoms: s.iter().map(|x| format!("S{x}")).collect(),
                    treatments: BTreeSet::new(),
                },
                doc: DocVector {
                    values: v,
                    token_count: 1,
                },
            })
    }

    proptest! {
        #[test]
        fn similarity_bounded_and_symmetric(a in arb_post(0), b in arb_post(1)) {
            let ab = overall_similarity(&a, &b);
            let ba = overall_similarity(&b, &a);
            prop_assert_eq!(ab, ba);
            for v in [ab.ds, ab.ss, ab.ts, ab.misim, ab.sim] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn sim_strictly_increasing_in_ts(ds in 0.0f64..=1.0, ss in 0.0f64..=1.0, t1 in 0.0f64..1.0, dt in 1e-6f64..0.5) {
            let t2 = (t1 + dt).min(1.0);
            prop_assume!(t2 > t1);
            let a = SimilarityBreakdown::from_components(ds, ss, t1);
            let b = SimilarityBreakdown::from_components(ds, ss, t2);
            prop_assert!(b.sim > a.sim);
        }

        #[test]
        fn modes_agree_without_concepts(vs in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..12)) {
            let posts: Vec<IndexedPost> = vs.iter().enumerate().map(|(i, v)| post(&format!("p{i:02}"), &[], &[], v)).collect();
            let idx = PostIndex::from_posts(posts).unwrap();
            let full = top_n_for_id("p00", &idx, 20, RankMode::Full, 1).unwrap();
            let text = top_n_for_id("p00", &idx, 20, RankMode::TextOnly, 1).unwrap();
            let ids = |r: &RetrievalResult| r.ranked.iter().map(|p| p.post_id.clone()).collect::<Vec<_>>();
            prop_assert_eq!(ids(&full), ids(&text));
        }
    }
}
