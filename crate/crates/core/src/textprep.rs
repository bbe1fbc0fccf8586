//! Post preprocessing and fixed-size vectorisation.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::neural::Tensor2D;
use crate::scalar::Scalar;

/// Tokens shorter than this are dropped from posts.
pub const MIN_TOKEN_LEN: usize = 3;

/// Default upper bound on the padded sequence length.
pub const DEFAULT_MAX_LEN_CEILING: usize = 150;

const ENGLISH_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StopWords {
    words: HashSet<String>,
}

impl StopWords {
    /// The bundled standard English list.
    pub fn english() -> Self {
        Self::parse(ENGLISH_STOPWORDS)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// One word per line; blank lines ignored.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn parse(text: &str) -> Self {
        Self::from_words(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopWords {
            words: words.into_iter().map(|w| w.as_ref().to_lowercase()).collect(),
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowercase ASCII alphanumeric tokens in their original order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        TokenSequence { tokens }
    }

    pub fn as_slice(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str)
    }

    pub fn join(&self, sep: &str) -> String {
        self.tokens.join(sep)
    }
}

impl From<Vec<&str>> for TokenSequence {
    fn from(v: Vec<&str>) -> Self {
        TokenSequence::new(v.into_iter().map(String::from).collect())
    }
}

/// Post preprocessing: drop non-ASCII characters, lowercase, split on
/// anything that is not ASCII alphanumeric, remove stop words and tokens
/// shorter than [`MIN_TOKEN_LEN`].
pub fn preprocess(text: &str, stopwords: &StopWords) -> TokenSequence {
    tokenize(text, stopwords, MIN_TOKEN_LEN)
}

/// [`preprocess`] with an explicit minimum token length.
pub fn tokenize(text: &str, stopwords: &StopWords, min_len: usize) -> TokenSequence {
    let ascii: String = text
        .chars()
        .filter(char::is_ascii)
        .collect::<String>()
        .to_ascii_lowercase();
    let tokens = ascii
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty() && t.len() >= min_len && !stopwords.contains(t))
        .map(String::from)
        .collect();
    TokenSequence { tokens }
}

/// A padded `max_len x dim` embedding matrix plus a row mask that marks
/// rows holding a real token.
#[derive(Debug, Clone, PartialEq)]
pub struct PostMatrix<T> {
    pub matrix: Tensor2D<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> PostMatrix<T> {
    pub fn populated_rows(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Stack in-vocabulary token vectors from the top; unknown tokens are
/// skipped, the tail is truncated and remaining rows stay zero.
///
/// # Panics
/// If `max_len` is zero.
pub fn vectorize<T: Scalar>(tokens: &TokenSequence, table: &EmbeddingTable<T>, max_len: usize) -> PostMatrix<T> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let dim = table.dim();
    let mut matrix = Tensor2D::zeros(max_len, dim);
    let mut mask = vec![false; max_len];
    for (row, v) in tokens.iter().filter_map(|t| table.get(t)).take(max_len).enumerate() {
        matrix.row_mut(row).copy_from_slice(v);
        mask[row] = true;
    }
    PostMatrix { matrix, mask }
}

/// Longest in-vocabulary token count over the given posts, clamped to
/// `[1, ceiling]`.
pub fn compute_max_len<'a, T, I>(posts: I, table: &EmbeddingTable<T>, ceiling: usize) -> usize
where
    T: Scalar,
    I: IntoIterator<Item = &'a TokenSequence>,
{
    let longest = posts
        .into_iter()
        .map(|p| p.iter().filter(|t| table.contains(t)).count())
        .max()
        .unwrap_or(0);
    longest.clamp(1, ceiling.max(1))
}
