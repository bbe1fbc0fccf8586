//! Typed medical concept extraction with a phrase lexicon.
//!
//! Lexicon phrases go through the same preprocessing as posts (minus the
//! minimum-length filter), and extraction is a greedy longest match over the
//! post's token sequence.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textprep::{tokenize, StopWords, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SemType {
    Disease,
    Symptom,
    Treatment,
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SemType::Disease => "Disease",
            SemType::Symptom => "Symptom",
            SemType::Treatment => "Treatment",
        })
    }
}

impl FromStr for SemType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "disease" => Ok(SemType::Disease),
            "symptom" => Ok(SemType::Symptom),
            "treatment" => Ok(SemType::Treatment),
            _ => Err(Error::InvalidArgument(format!("unknown semantic type `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub phrase: Vec<String>,
    pub concept_id: String,
    pub semtype: SemType,
}

/// Concept ids mentioned in one post, split by semantic type.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub diseases: BTreeSet<String>,
    pub symptoms: BTreeSet<String>,
    pub treatments: BTreeSet<String>,
}

impl ConceptSet {
    pub fn of_type(&self, t: SemType) -> &BTreeSet<String> {
        match t {
            SemType::Disease => &self.diseases,
            SemType::Symptom => &self.symptoms,
            SemType::Treatment => &self.treatments,
        }
    }

    fn of_type_mut(&mut self, t: SemType) -> &mut BTreeSet<String> {
        match t {
            SemType::Disease => &mut self.diseases,
            SemType::Symptom => &mut self.symptoms,
            SemType::Treatment => &mut self.treatments,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.diseases.is_empty() && self.symptoms.is_empty() && self.treatments.is_empty()
    }
}

/// Source of typed concepts for a token sequence.
pub trait ConceptExtractor {
    fn extract(&self, tokens: &TokenSequence) -> ConceptSet;
}

#[derive(Debug, Clone, Default)]
pub struct ConceptLexicon {
    entries: Vec<LexiconEntry>,
    /// phrase -> entry indices, in load order
    by_phrase: HashMap<Vec<String>, Vec<usize>>,
    longest: usize,
}

const STARTER_LEXICON: &str = include_str!("../data/lexicon.tsv");

impl ConceptLexicon {
    pub fn new(entries: Vec<LexiconEntry>) -> Result<Self> {
        let mut lex = ConceptLexicon::default();
        let mut seen = HashSet::new();
        for e in entries {
            if e.phrase.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "empty phrase for concept `{}`",
                    e.concept_id
                )));
            }
            if !seen.insert((e.phrase.clone(), e.semtype)) {
                return Err(Error::DuplicatePhrase {
                    phrase: e.phrase.join(" "),
                    semtype: e.semtype.to_string(),
                });
            }
            lex.longest = lex.longest.max(e.phrase.len());
            lex.by_phrase
                .entry(e.phrase.clone())
                .or_default()
                .push(lex.entries.len());
            lex.entries.push(e);
        }
        Ok(lex)
    }

    /// The lexicon bundled with the crate.
    pub fn starter(stopwords: &StopWords) -> Self {
        Self::parse(STARTER_LEXICON, "lexicon.tsv", stopwords).expect("bundled lexicon is valid")
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse `phrase<TAB>concept_id<TAB>semtype` lines; `#` lines and blank
    /// lines are skipped.
    pub fn parse(text: &str, source_name: &str, stopwords: &StopWords) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [phrase, id, semtype] = fields.as_slice() else {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            };
            let semtype: SemType = semtype
                .parse()
                .map_err(|e: Error| Error::parse(source_name, lineno, e.to_string()))?;
            let phrase = tokenize(phrase, stopwords, 1);
            if phrase.is_empty() {
                return Err(Error::parse(source_name, lineno, "phrase is empty after preprocessing"));
            }
            let id = id.trim();
            if id.is_empty() {
                return Err(Error::parse(source_name, lineno, "empty concept id"));
            }
            entries.push(LexiconEntry {
                phrase: phrase.as_slice().to_vec(),
                concept_id: id.to_string(),
                semtype,
            });
        }
        Self::new(entries)
    }
}

pub fn load_lexicon(path: impl AsRef<Path>, stopwords: &StopWords) -> Result<ConceptLexicon> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ConceptLexicon::parse(&text, &path.display().to_string(), stopwords)
}

/// Post tokens for concept matching: same pipeline as lexicon phrases, so
/// short tokens such as "ms" can still match.
pub fn concept_tokens(text: &str, stopwords: &StopWords) -> TokenSequence {
    tokenize(text, stopwords, 1)
}

/// Extract concepts from raw post text.
pub fn extract_text<E: ConceptExtractor + ?Sized>(extractor: &E, text: &str, stopwords: &StopWords) -> ConceptSet {
    extractor.extract(&concept_tokens(text, stopwords))
}

impl ConceptExtractor for ConceptLexicon {
    /// Greedy longest match, left to right. A matched span is consumed; every
    /// entry sharing the matched phrase contributes its concept.
    fn extract(&self, tokens: &TokenSequence) -> ConceptSet {
        let toks = tokens.as_slice();
        let mut out = ConceptSet::default();
        let mut i = 0;
        while i < toks.len() {
            let max = self.longest.min(toks.len() - i);
            let hit = (1..=max)
                .rev()
                .find_map(|n| self.by_phrase.get(&toks[i..i + n]).map(|ids| (n, ids)));
            match hit {
                Some((n, ids)) => {
                    for &e in ids {
                        let entry = &self.entries[e];
                        out.of_type_mut(entry.semtype).insert(entry.concept_id.clone());
                    }
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// `|A ∩ B| / |A ∪ B|`, defined as 0 when both sets are empty.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(rows: &str) -> ConceptLexicon {
        ConceptLexicon::parse(rows, "mem", &StopWords::english()).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    /// Independent oracle: at each position try every span length from
    /// longest to shortest by scanning the raw entry list.
    fn brute_force(lex: &ConceptLexicon, toks: &[String]) -> ConceptSet {
        let mut out = ConceptSet::default();
        let mut i = 0;
        while i < toks.len() {
            let mut best: Option<usize> = None;
            for n in 1..=toks.len() - i {
                if lex.entries().iter().any(|e| e.phrase.as_slice() == &toks[i..i + n]) {
                    best = Some(n);
                }
            }
            match best {
                Some(n) => {
                    for e in lex.entries().iter().filter(|e| e.phrase.as_slice() == &toks[i..i + n]) {
                        out.of_type_mut(e.semtype).insert(e.concept_id.clone());
                    }
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }

    #[test]
    fn load_and_errors() {
        let l = lex("# comment\nanxiety\tD_ANX\tDisease\nxanax\tT_XANAX\tTreatment\nflu\tD_FLU\tDisease\n");
        assert_eq!(l.len(), 3);
        assert_eq!(l.entries()[2].phrase, vec!["flu".to_string()]);

        let err = ConceptLexicon::parse("a b\tX\tFoo\n", "mem", &StopWords::english()).unwrap_err();
        assert_eq!(err.line(), Some(1));
        let err =
            ConceptLexicon::parse("pain\tA\tSymptom\nPain\tB\tSymptom\n", "mem", &StopWords::empty()).unwrap_err();
        assert!(matches!(err, Error::DuplicatePhrase { ref phrase, .. } if phrase == "pain"));
        assert!(ConceptLexicon::parse("only two\tfields\n", "mem", &StopWords::empty()).is_err());
    }

    #[test]
    fn longest_match_wins() {
        let l = lex("chronic tension headaches\tC_CTH\tDisease\nheadaches\tC_HA\tSymptom\n");
        let toks = TokenSequence::from(vec!["chronic", "tension", "headaches"]);
        let got = l.extract(&toks);
        assert_eq!(got.diseases, set(&["C_CTH"]));
        assert!(got.symptoms.is_empty());
        assert_eq!(got, brute_force(&l, toks.as_slice()));
    }

    #[test]
    fn single_tokens_and_empty() {
        let l = lex("xanax\tT_XANAX\tTreatment\nanxiety\tD_ANX\tDisease\n");
        assert!(l.extract(&TokenSequence::default()).is_empty());
        let got = l.extract(&TokenSequence::from(vec!["xanax", "anxiety"]));
        assert_eq!(got.treatments, set(&["T_XANAX"]));
        assert_eq!(got.diseases, set(&["D_ANX"]));
    }

    #[test]
    fn multi_typed_phrase_fills_both_sets() {
        let l = lex("depression\tC_DEP\tDisease\ndepression\tC_DEP\tSymptom\n");
        let got = l.extract(&TokenSequence::from(vec!["depression"]));
        assert_eq!(got.diseases, set(&["C_DEP"]));
        assert_eq!(got.symptoms, set(&["C_DEP"]));
    }

    #[test]
    fn stopwords_inside_phrases_are_removed_like_posts() {
        let sw = StopWords::english();
        let l = ConceptLexicon::parse("pain in the chest\tS_CP\tSymptom\n", "mem", &sw).unwrap();
        let toks = crate::textprep::preprocess("I have pain in the chest", &sw);
        assert_eq!(l.extract(&toks).symptoms, set(&["S_CP"]));
    }

    #[test]
    fn starter_lexicon_loads() {
        let sw = StopWords::english();
        let l = ConceptLexicon::starter(&sw);
        assert!(l.len() >= 150, "{}", l.len());
        let toks = crate::textprep::preprocess(
            "Sertraline and physical therapy helped my tension headaches and anxiety",
            &sw,
        );
        let got = l.extract(&toks);
        assert!(!got.diseases.is_empty() && !got.treatments.is_empty());
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&set(&["x"]), &set(&["x"])), 1.0);
        assert!((jaccard(&set(&["x", "y"]), &set(&["y", "z"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
    }

    proptest! {
        #[test]
        fn extraction_matches_oracle(words in proptest::collection::vec(0usize..6, 0..15)) {
            let vocab = ["anxiety", "chronic", "tension", "headaches", "pain", "back"];
            let l = lex("chronic tension headaches\tC1\tDisease\ntension headaches\tC2\tDisease\nheadaches\tS1\tSymptom\n\
                         back pain\tS2\tSymptom\npain\tS3\tSymptom\nanxiety\tD1\tDisease\nchronic\tX\tSymptom\n");
            let toks = TokenSequence::new(words.iter().map(|&i| vocab[i].to_string()).collect());
            let got = l.extract(&toks);
            prop_assert_eq!(&got, &brute_force(&l, toks.as_slice()));
            let ids: HashSet<&str> = l.entries().iter().map(|e| e.concept_id.as_str()).collect();
            for t in [SemType::Disease, SemType::Symptom, SemType::Treatment] {
                prop_assert!(got.of_type(t).iter().all(|id| ids.contains(id.as_str())));
            }
            prop_assert_eq!(got, l.extract(&toks));
        }

        #[test]
        fn jaccard_properties(a in proptest::collection::btree_set(0u8..10, 0..8),
                              b in proptest::collection::btree_set(0u8..10, 0..8)) {
            let j = jaccard(&a, &b);
            prop_assert!((0.0..=1.0).contains(&j));
            prop_assert_eq!(j, jaccard(&b, &a));
            if !a.is_empty() {
                prop_assert_eq!(jaccard(&a, &a), 1.0);
            }
        }
    }
}
