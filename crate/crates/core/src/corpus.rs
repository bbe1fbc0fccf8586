//! Forum-post corpus: JSON-lines ingestion, sentiment taxonomy, binary store
//! and stratified fold assignment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Generic three-way medical sentiment. Declaration order is the tie-break
/// order used by prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    Positive,
    Neutral,
    Negative,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Positive, Sentiment::Neutral, Sentiment::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Positive => "Positive",
            Sentiment::Neutral => "Neutral",
            Sentiment::Negative => "Negative",
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match squash(s).as_str() {
            "positive" => Ok(Sentiment::Positive),
            "neutral" => Ok(Sentiment::Neutral),
            "negative" => Ok(Sentiment::Negative),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// Forum segment a post was scraped from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    MedicalCondition,
    Medication,
    Unlabeled,
}

impl FromStr for Segment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match squash(s).as_str() {
            "medicalcondition" | "condition" => Ok(Segment::MedicalCondition),
            "medication" => Ok(Segment::Medication),
            "unlabeled" | "unlabelled" | "" => Ok(Segment::Unlabeled),
            _ => Err(Error::InvalidArgument(format!("unknown segment `{s}`"))),
        }
    }
}

/// Labels used by the source forum annotation, before taxonomy mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceLabel {
    Exist,
    Recover,
    Deteriorate,
    Effective,
    Ineffective,
    SeriousAdverseEffect,
}

impl SourceLabel {
    pub const ALL: [SourceLabel; 6] = [
        SourceLabel::Exist,
        SourceLabel::Recover,
        SourceLabel::Deteriorate,
        SourceLabel::Effective,
        SourceLabel::Ineffective,
        SourceLabel::SeriousAdverseEffect,
    ];

    /// Segment the label belongs to in the source annotation scheme.
    pub fn segment(self) -> Segment {
        match self {
            SourceLabel::Exist | SourceLabel::Recover | SourceLabel::Deteriorate => Segment::MedicalCondition,
            _ => Segment::Medication,
        }
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }
}

impl FromStr for SourceLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match squash(s).as_str() {
            "exist" => Ok(SourceLabel::Exist),
            "recover" => Ok(SourceLabel::Recover),
            "deteriorate" => Ok(SourceLabel::Deteriorate),
            "effective" => Ok(SourceLabel::Effective),
            "ineffective" => Ok(SourceLabel::Ineffective),
            "seriousadverseeffect" => Ok(SourceLabel::SeriousAdverseEffect),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

/// Lowercase and drop separators so `Serious adverse effect`,
/// `serious_adverse_effect` and `SeriousAdverseEffect` compare equal.
fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

pub fn map_taxonomy(label: SourceLabel) -> Sentiment {
    match label {
        SourceLabel::Exist => Sentiment::Neutral,
        SourceLabel::Recover => Sentiment::Positive,
        SourceLabel::Deteriorate => Sentiment::Negative,
        SourceLabel::Effective => Sentiment::Positive,
        SourceLabel::Ineffective => Sentiment::Neutral,
        SourceLabel::SeriousAdverseEffect => Sentiment::Negative,
    }
}

/// String form of [`map_taxonomy`]; unknown names are reported verbatim.
pub fn map_taxonomy_str(label: &str) -> Result<Sentiment> {
    label.parse::<SourceLabel>().map(map_taxonomy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForumPost {
    pub id: String,
    pub text: String,
    pub segment: Segment,
    pub source_label: Option<SourceLabel>,
    pub sentiment: Option<Sentiment>,
}

impl ForumPost {
    /// An unlabeled post.
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        ForumPost {
            id: id.into(),
            text: text.into(),
            segment: Segment::Unlabeled,
            source_label: None,
            sentiment: None,
        }
    }

    pub fn with_source_label(mut self, label: SourceLabel) -> Self {
        self.segment = label.segment();
        self.source_label = Some(label);
        self.sentiment = Some(map_taxonomy(label));
        self
    }

    pub fn with_sentiment(mut self, sentiment: Sentiment) -> Self {
        self.sentiment = Some(sentiment);
        self
    }
}

/// Ordered, id-unique collection of posts. Immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    posts: Vec<ForumPost>,
    class_histogram: [usize; 3],
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(posts: Vec<ForumPost>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(posts.len());
        let mut class_histogram = [0usize; 3];
        for (i, p) in posts.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::InvalidArgument("post id must be non-empty".into()));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
            if let Some(s) = p.sentiment {
                class_histogram[s.index()] += 1;
            }
        }
        Ok(Corpus {
            posts,
            class_histogram,
            by_id,
        })
    }

    pub fn posts(&self) -> &[ForumPost] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Counts per sentiment, indexed by [`Sentiment::index`].
    pub fn class_histogram(&self) -> [usize; 3] {
        self.class_histogram
    }

    pub fn get(&self, id: &str) -> Option<&ForumPost> {
        self.by_id.get(id).map(|&i| &self.posts[i])
    }

    pub fn labeled(&self) -> impl Iterator<Item = &ForumPost> {
        self.posts.iter().filter(|p| p.sentiment.is_some())
    }

    pub fn into_posts(self) -> Vec<ForumPost> {
        self.posts
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    text: String,
    #[serde(default)]
    segment: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

/// Deduplication key: NFC-normalized text with whitespace runs collapsed.
pub fn dedup_key(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Outcome of ingestion, including how many records were collapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub corpus: Corpus,
    pub duplicates_removed: usize,
}

pub fn ingest(path: impl AsRef<Path>) -> Result<Corpus> {
    ingest_detailed(path).map(|i| i.corpus)
}

pub fn ingest_detailed(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), &path.display().to_string())
}

/// Parse JSON-lines records from any reader. `source_name` is used in error
/// messages only.
pub fn ingest_reader<R: BufRead>(reader: R, source_name: &str) -> Result<Ingested> {
    let mut posts = Vec::new();
    let mut seen_ids = HashSet::new();
    let mut seen_texts = HashSet::new();
    let mut duplicates_removed = 0;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if raw.id.is_empty() {
            return Err(Error::parse(source_name, lineno, "empty `id`"));
        }
        if !seen_ids.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        let post = record_to_post(raw).map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if !seen_texts.insert(dedup_key(&post.text)) {
            duplicates_removed += 1;
            continue;
        }
        posts.push(post);
    }

    Ok(Ingested {
        corpus: Corpus::new(posts)?,
        duplicates_removed,
    })
}

fn record_to_post(raw: RawRecord) -> Result<ForumPost> {
    let mut post = ForumPost::new(raw.id, raw.text);
    if let Some(label) = raw.label.as_deref().filter(|l| !l.trim().is_empty()) {
        // A source-forum label is mapped; a generic sentiment is taken as is.
        match label.parse::<SourceLabel>() {
            Ok(src) => post = post.with_source_label(src),
            Err(_) => post = post.with_sentiment(label.parse::<Sentiment>()?),
        }
    }
    if let Some(seg) = raw.segment.as_deref() {
        post.segment = seg.parse()?;
    }
    Ok(post)
}

const STORE_MAGIC: &[u8; 4] = b"MFR1";
pub const STORE_VERSION: u32 = 1;
const NONE_CODE: u8 = u8::MAX;

pub fn save_store(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_store(corpus, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_store<W: Write>(corpus: &Corpus, w: &mut W) -> std::io::Result<()> {
    w.write_all(STORE_MAGIC)?;
    w.write_all(&STORE_VERSION.to_le_bytes())?;
    w.write_all(&(corpus.len() as u64).to_le_bytes())?;
    let mut rec = Vec::new();
    for p in corpus.posts() {
        rec.clear();
        put_str(&mut rec, &p.id);
        put_str(&mut rec, &p.text);
        rec.push(match p.segment {
            Segment::MedicalCondition => 0,
            Segment::Medication => 1,
            Segment::Unlabeled => 2,
        });
        rec.push(p.source_label.map_or(NONE_CODE, SourceLabel::code));
        rec.push(p.sentiment.map_or(NONE_CODE, |s| s.index() as u8));
        w.write_all(&(rec.len() as u32).to_le_bytes())?;
        w.write_all(&rec)?;
    }
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

/// Whether `bytes` start like a corpus store rather than JSON lines.
pub fn is_store(bytes: &[u8]) -> bool {
    bytes.starts_with(STORE_MAGIC)
}

/// Load either a corpus store or a JSON-lines file, by content.
pub fn load_any(path: impl AsRef<Path>) -> Result<Ingested> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_store(&bytes) {
        return Ok(Ingested {
            corpus: read_store(&bytes)?,
            duplicates_removed: 0,
        });
    }
    ingest_reader(bytes.as_slice(), &path.display().to_string())
}

pub fn load_store(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_store(&bytes)
}

pub fn read_store(bytes: &[u8]) -> Result<Corpus> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(4)? != STORE_MAGIC {
        return Err(Error::Format("missing MFR1 magic".into()));
    }
    let version = cur.u32()?;
    if version != STORE_VERSION {
        return Err(Error::VersionMismatch {
            expected: STORE_VERSION,
            found: version,
        });
    }
    let n = cur.u64()? as usize;
    let mut posts = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = cur.u32()? as usize;
        let mut rec = ByteCursor::new(cur.take(len)?);
        let id = rec.string()?;
        let text = rec.string()?;
        let segment = match rec.u8()? {
            0 => Segment::MedicalCondition,
            1 => Segment::Medication,
            2 => Segment::Unlabeled,
            c => return Err(Error::Format(format!("bad segment code {c}"))),
        };
        let source_label = match rec.u8()? {
            NONE_CODE => None,
            c => Some(SourceLabel::from_code(c).ok_or_else(|| Error::Format(format!("bad label code {c}")))?),
        };
        let sentiment = match rec.u8()? {
            NONE_CODE => None,
            c => Some(
                Sentiment::from_index(c as usize).ok_or_else(|| Error::Format(format!("bad sentiment code {c}")))?,
            ),
        };
        posts.push(ForumPost {
            id,
            text,
            segment,
            source_label,
            sentiment,
        });
    }
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after last record".into()));
    }
    Corpus::new(posts)
}

/// Little-endian reader over a byte slice that reports truncation as an error.
pub(crate) struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteCursor { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated input at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Assignment of every labeled post to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.get(id).copied()
    }

    pub fn test_ids(&self, fold: usize) -> impl Iterator<Item = &str> {
        self.assignments
            .iter()
            .filter(move |(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignments.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold assignment of the labeled posts.
///
/// Posts of each class are shuffled with a seeded RNG and dealt round-robin;
/// the dealing position carries over between classes so that overall fold
/// sizes differ by at most one.
pub fn stratified_kfold(corpus: &Corpus, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let hist = corpus.class_histogram();
    for s in Sentiment::ALL {
        if hist[s.index()] < k {
            return Err(Error::InsufficientClass {
                class: s.to_string(),
                count: hist[s.index()],
                required: k,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = BTreeMap::new();
    let mut next = 0usize;
    for s in Sentiment::ALL {
        let mut ids: Vec<&str> = corpus
            .labeled()
            .filter(|p| p.sentiment == Some(s))
            .map(|p| p.id.as_str())
            .collect();
        ids.shuffle(&mut rng);
        for id in ids {
            assignments.insert(id.to_string(), next % k);
            next += 1;
        }
    }
    Ok(FoldSplit { k, assignments })
}
