//! Word vectors: word2vec text-format loading, seeded random tables,
//! document vectors and cosine similarity.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::textprep::TokenSequence;

/// Word -> fixed-dimension vector map. Vectors are stored contiguously in
/// insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn get(&self, word: &str) -> Option<&[T]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    /// Insert or replace. Returns `true` when an existing vector was replaced.
    pub fn insert(&mut self, word: &str, vector: Vec<T>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: format!("{} components", self.dim),
                found: format!("{}", vector.len()),
            });
        }
        if let Some(&i) = self.index.get(word) {
            self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(&vector);
            return Ok(true);
        }
        self.index.insert(word.to_string(), self.words.len());
        self.words.push(word.to_string());
        self.data.extend(vector);
        Ok(false)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.words
            .iter()
            .enumerate()
            .map(move |(i, w)| (w.as_str(), &self.data[i * self.dim..(i + 1) * self.dim]))
    }
}

pub fn load_embeddings<T: Scalar>(path: impl AsRef<Path>) -> Result<EmbeddingTable<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string())
}

/// Parse the word2vec text format: a `<vocab_size> <dim>` header, then one
/// `<word> <v1> ... <vdim>` line per word. Line numbers in errors are 1-based
/// and count the header.
pub fn read_embeddings<T: Scalar, R: BufRead>(reader: R, source_name: &str) -> Result<EmbeddingTable<T>> {
    let mut lines = reader.lines().enumerate();
    let (declared, dim) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::parse(source_name, 1, "empty embedding file"));
        };
        let line = line.map_err(|e| Error::parse(source_name, idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [n, d] => n.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
            _ => None,
        };
        match parsed {
            Some((n, d)) if d > 0 => break (n, d),
            _ => {
                return Err(Error::parse(
                    source_name,
                    idx + 1,
                    format!("expected header `<vocab_size> <dim>`, found `{line}`"),
                ))
            }
        }
    };

    let mut table = EmbeddingTable::new(dim);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().expect("non-blank line has a first field");
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("word `{word}` has {} components, expected {dim}", values.len()),
            ));
        }
        let vector = values
            .iter()
            .map(|v| {
                T::parse_decimal(v)
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(source_name, lineno, format!("bad number `{v}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        if table.insert(word, vector)? {
            warn!("{source_name}:{lineno}: duplicate word `{word}`, keeping the last vector");
        }
    }
    if table.len() != declared {
        warn!(
            "{source_name}: header declares {declared} words but {} were read",
            table.len()
        );
    }
    Ok(table)
}

/// Write a table in word2vec text format.
pub fn write_embeddings<T: Scalar, W: Write>(table: &EmbeddingTable<T>, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{} {}", table.len(), table.dim())?;
    for (word, v) in table.iter() {
        write!(w, "{word}")?;
        for x in v {
            write!(w, " {x}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Seeded table with components uniform in `[-sqrt(3/dim), sqrt(3/dim)]`, so
/// each vector has unit expected squared norm. Repeated words keep their
/// first vector.
pub fn random_table<T: Scalar, S: AsRef<str>>(vocab: &[S], dim: usize, seed: u64) -> Result<EmbeddingTable<T>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (3.0 / dim as f64).sqrt();
    let mut table = EmbeddingTable::new(dim);
    for w in vocab {
        let v: Vec<T> = (0..dim).map(|_| T::of(rng.gen_range(-half..=half))).collect();
        if !table.contains(w.as_ref()) {
            table.insert(w.as_ref(), v)?;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocVector<T> {
    pub values: Vec<T>,
    pub token_count: usize,
}

/// Sum of the vectors of all in-vocabulary tokens.
pub fn doc_vector<T: Scalar>(tokens: &TokenSequence, table: &EmbeddingTable<T>) -> DocVector<T> {
    let mut values = vec![T::zero(); table.dim()];
    let mut token_count = 0;
    for v in tokens.iter().filter_map(|t| table.get(t)) {
        for (acc, x) in values.iter_mut().zip(v) {
            *acc += *x;
        }
        token_count += 1;
    }
    DocVector { values, token_count }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} components", a.len()),
            found: format!("{}", b.len()),
        });
    }
    let (mut ab, mut aa, mut bb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == T::zero() || bb == T::zero() {
        return Ok(T::zero());
    }
    let c = ab / (aa.sqrt() * bb.sqrt());
    Ok(c.max(-T::one()).min(T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Cursor;

    fn read(text: &str) -> Result<EmbeddingTable<f64>> {
        read_embeddings(Cursor::new(text.as_bytes()), "mem")
    }

    #[test]
    fn parse_small_file() {
        let t = read("2 3\nanxiety 0.1 0.2 0.3\nxanax -1 0 1e-2\n").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.get("xanax").unwrap(), &[-1.0, 0.0, 0.01]);
    }

    #[test]
    fn wrong_arity_reports_line() {
        let err = read("2 3\nanxiety 0.1 0.2 0.3\nxanax 1 2\n").unwrap_err();
        assert_eq!(err.line(), Some(3));
        let err = read("1 3\nanxiety 0.1 x 0.3\n").unwrap_err();
        assert_eq!(err.line(), Some(2));
        assert!(read("").is_err());
        assert_eq!(read("nonsense header here\n").unwrap_err().line(), Some(1));
    }

    #[test]
    fn duplicate_word_last_wins() {
        let t = read("2 1\na 1\na 2\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.get("a").unwrap(), &[2.0]);
    }

    #[test]
    fn write_read_round_trip() {
        let t: EmbeddingTable<f64> = random_table(&["a", "b", "c"], 5, 3).unwrap();
        let mut buf = Vec::new();
        write_embeddings(&t, &mut buf).unwrap();
        assert_eq!(read_embeddings::<f64, _>(Cursor::new(buf), "mem").unwrap(), t);
    }

    #[test]
    fn random_table_properties() {
        let vocab = ["a", "b", "c", "d", "e"];
        let t1: EmbeddingTable<f64> = random_table(&vocab, 200, 42).unwrap();
        let t2: EmbeddingTable<f64> = random_table(&vocab, 200, 42).unwrap();
        let t3: EmbeddingTable<f64> = random_table(&vocab, 200, 43).unwrap();
        assert_eq!(t1, t2);
        assert_ne!(t1, t3);
        assert_eq!(t1.len(), 5);
        let half = (3.0f64 / 200.0).sqrt();
        assert!(t1.iter().all(|(_, v)| v.len() == 200 && v.iter().all(|x| x.abs() <= half)));
        let mean_sq_norm = t1.iter().map(|(_, v)| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / 5.0;
        assert!((mean_sq_norm - 1.0).abs() < 0.1, "{mean_sq_norm}");
        let empty: EmbeddingTable<f64> = random_table::<f64, &str>(&[], 4, 1).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn doc_vector_sums() {
        let mut t = EmbeddingTable::new(2);
        t.insert("w", vec![1.5, -2.0]).unwrap();
        let d = doc_vector(&TokenSequence::default(), &t);
        assert_eq!((d.values, d.token_count), (vec![0.0, 0.0], 0));
        let d = doc_vector(&TokenSequence::from(vec!["w"]), &t);
        assert_eq!((d.values, d.token_count), (vec![1.5, -2.0], 1));
        let d = doc_vector(&TokenSequence::from(vec!["w", "oov", "w"]), &t);
        assert_eq!((d.values, d.token_count), (vec![3.0, -4.0], 2));
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine::<f64>(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine::<f64>(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            lambda in 0.01f64..100.0,
        ) {
            let ab = cosine(&a, &b).unwrap();
            prop_assert_eq!(ab, cosine(&b, &a).unwrap());
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
            if a.iter().any(|&x| x != 0.0) {
                let scaled: Vec<f64> = a.iter().map(|x| x * lambda).collect();
                prop_assert!((cosine(&a, &scaled).unwrap() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn doc_vector_permutation_invariant(perm in Just(vec!["a", "b", "c", "a"]).prop_shuffle()) {
            let t: EmbeddingTable<f64> = random_table(&["a", "b", "c"], 6, 5).unwrap();
            let base = doc_vector(&TokenSequence::from(vec!["a", "b", "c", "a"]), &t);
            let shuffled = doc_vector(&TokenSequence::from(perm), &t);
            prop_assert_eq!(base.token_count, shuffled.token_count);
            for (x, y) in base.values.iter().zip(&shuffled.values) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
