//! Query tokenization: raw word tokens followed by one composite token per
//! extracted facet (`FACET:name=value`).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const FACET_PREFIX: &str = "FACET:";
pub const DEFAULT_SEQ_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("sequence length must be at least 2, got {0}")]
    SequenceTooShort(usize),
    #[error("vocabulary ids are not dense: expected id {expected} for {token:?}, found {found}")]
    SparseIds { token: String, expected: u32, found: u32 },
    #[error("reserved token {token:?} must have id {expected}")]
    Reserved { token: &'static str, expected: u32 },
    #[error("facet tokens must occupy a contiguous id range at the end of the vocabulary")]
    FacetRange,
    #[error("duplicate token {0:?}")]
    Duplicate(String),
}

/// Facet name to its allowed values, all normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetLexicon {
    facets: BTreeMap<String, BTreeSet<String>>,
}

impl FacetLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: &str) {
        let value = text::normalize(value);
        if value.is_empty() {
            return;
        }
        self.facets
            .entry(text::normalize(name))
            .or_default()
            .insert(value);
    }

    pub fn from_pairs<'a, I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut lex = Self::new();
        for (name, value) in pairs {
            lex.insert(name, value);
        }
        lex
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.facets.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values(&self, name: &str) -> Option<&BTreeSet<String>> {
        self.facets.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }

    pub fn facet_tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.facets
            .iter()
            .flat_map(|(name, values)| values.iter().map(move |v| facet_token(name, v)))
    }
}

pub fn facet_token(name: &str, value: &str) -> String {
    format!("{FACET_PREFIX}{name}={value}")
}

/// At most one value per facet name.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FacetSet(BTreeMap<String, String>);

impl FacetSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: &str) -> Option<String> {
        self.0.insert(name.to_string(), value.to_string())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, name: &str, value: &str) -> bool {
        self.get(name) == Some(value)
    }
}

impl<'a> FromIterator<(&'a str, &'a str)> for FacetSet {
    fn from_iter<T: IntoIterator<Item = (&'a str, &'a str)>>(iter: T) -> Self {
        let mut set = FacetSet::new();
        for (k, v) in iter {
            set.insert(k, v);
        }
        set
    }
}

/// Lexicon-driven n-gram facet extraction.
///
/// For each facet name, the longest lexicon value occurring as a contiguous
/// token run of the query wins; equal lengths go to the earlier occurrence,
/// then the lexicographically smaller value.
pub fn extract_facets(query: &str, lexicon: &FacetLexicon) -> FacetSet {
    let normalized = text::normalize(query);
    let toks = text::token_vec(&normalized);
    let mut out = FacetSet::new();
    for (name, values) in lexicon.iter() {
        let mut best: Option<(usize, usize, &str)> = None;
        for value in values {
            let vt = text::token_vec(value);
            if vt.is_empty() || vt.len() > toks.len() {
                continue;
            }
            let Some(pos) = toks.windows(vt.len()).position(|w| w == vt.as_slice()) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((len, bpos, _)) => vt.len() > len || (vt.len() == len && pos < bpos),
            };
            if better {
                best = Some((vt.len(), pos, value.as_str()));
            }
        }
        if let Some((_, _, value)) = best {
            out.insert(name, value);
        }
    }
    out
}

/// Dense token ↔ id map. Ids 0 and 1 are PAD and UNK, word tokens follow,
/// facet tokens occupy the final range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
    facet_start: u32,
}

impl Vocabulary {
    /// Tokens with corpus frequency ≥ `min_count`, plus every lexicon facet token.
    pub fn build<'a, I>(queries: I, lexicon: &FacetLexicon, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for q in queries {
            let normalized = text::normalize(q);
            for tok in text::tokens(&normalized) {
                *counts.entry(tok.to_string()).or_default() += 1;
            }
        }
        let words = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .map(|(t, _)| t);
        let mut tokens: Vec<String> = [PAD_TOKEN, UNK_TOKEN].iter().map(|t| t.to_string()).collect();
        tokens.extend(words);
        let facet_start = tokens.len() as u32;
        tokens.extend(lexicon.facet_tokens());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            index,
            facet_start,
        }
    }

    /// Rebuilds from persisted `(token, id)` entries, validating density and
    /// the reserved/facet id layout.
    pub fn from_entries<I>(entries: I) -> Result<Self, TokenizeError>
    where
        I: IntoIterator<Item = (String, u32)>,
    {
        let mut sorted: Vec<(String, u32)> = entries.into_iter().collect();
        sorted.sort_by_key(|(_, id)| *id);
        let mut tokens = Vec::with_capacity(sorted.len());
        let mut index = BTreeMap::new();
        for (expected, (token, id)) in sorted.into_iter().enumerate() {
            if id != expected as u32 {
                return Err(TokenizeError::SparseIds {
                    token,
                    expected: expected as u32,
                    found: id,
                });
            }
            if index.insert(token.clone(), id).is_some() {
                return Err(TokenizeError::Duplicate(token));
            }
            tokens.push(token);
        }
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) {
            return Err(TokenizeError::Reserved {
                token: PAD_TOKEN,
                expected: PAD,
            });
        }
        if tokens.get(1).map(String::as_str) != Some(UNK_TOKEN) {
            return Err(TokenizeError::Reserved {
                token: UNK_TOKEN,
                expected: UNK,
            });
        }
        let facet_start = tokens
            .iter()
            .position(|t| t.starts_with(FACET_PREFIX))
            .unwrap_or(tokens.len());
        if tokens[facet_start..]
            .iter()
            .any(|t| !t.starts_with(FACET_PREFIX))
        {
            return Err(TokenizeError::FacetRange);
        }
        Ok(Vocabulary {
            tokens,
            index,
            facet_start: facet_start as u32,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn facet_range(&self) -> core::ops::Range<u32> {
        self.facet_start..self.tokens.len() as u32
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u32)> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
    }
}

/// Fixed-length id sequence with its attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// `[words…, facet tokens…]`, truncated or PAD-filled to `seq_len`.
///
/// Facet tokens are kept even when the facet value also appears among the
/// raw words.
pub fn tokenize_query(
    query: &str,
    facets: &FacetSet,
    vocab: &Vocabulary,
    seq_len: usize,
) -> Result<TokenSequence, TokenizeError> {
    if seq_len < 2 {
        return Err(TokenizeError::SequenceTooShort(seq_len));
    }
    let normalized = text::normalize(query);
    let mut ids: Vec<u32> = text::tokens(&normalized)
        .map(|t| vocab.id_or_unk(t))
        .chain(
            facets
                .iter()
                .map(|(name, value)| vocab.id_or_unk(&facet_token(name, value))),
        )
        .take(seq_len)
        .collect();
    let mut mask: Vec<bool> = ids.iter().map(|&id| id != PAD).collect();
    ids.resize(seq_len, PAD);
    mask.resize(seq_len, false);
    Ok(TokenSequence { ids, mask })
}

/// Vocabulary, lexicon and sequence length bundled for repeated use.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub lexicon: FacetLexicon,
    pub seq_len: usize,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, lexicon: FacetLexicon, seq_len: usize) -> Result<Self, TokenizeError> {
        if seq_len < 2 {
            return Err(TokenizeError::SequenceTooShort(seq_len));
        }
        Ok(Tokenizer {
            vocab,
            lexicon,
            seq_len,
        })
    }

    pub fn encode(&self, query: &str) -> TokenSequence {
        let facets = extract_facets(query, &self.lexicon);
        tokenize_query(query, &facets, &self.vocab, self.seq_len)
            .expect("sequence length validated at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lexicon() -> FacetLexicon {
        FacetLexicon::from_pairs([
            ("color", "red"),
            ("color", "blue"),
            ("gender", "womens"),
            ("gender", "mens"),
        ])
    }

    #[test]
    fn vocabulary_contains_words_and_reserved() {
        let vocab = Vocabulary::build(["red shoes", "blue shoes"], &FacetLexicon::new(), 1);
        for t in ["red", "blue", "shoes"] {
            assert!(vocab.id(t).unwrap() > UNK);
        }
        assert_eq!(vocab.id(PAD_TOKEN), Some(PAD));
        assert_eq!(vocab.id(UNK_TOKEN), Some(UNK));
        assert_eq!(vocab.len(), 5);
    }

    #[test]
    fn empty_corpus_vocabulary() {
        let vocab = Vocabulary::build(core::iter::empty(), &FacetLexicon::new(), 1);
        assert_eq!(vocab.len(), 2);
        assert!(vocab.is_empty());
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let vocab = Vocabulary::build(["a b", "a c"], &FacetLexicon::new(), 2);
        assert!(vocab.id("a").is_some());
        assert!(vocab.id("b").is_none());
    }

    #[test]
    fn facet_tokens_occupy_final_range() {
        let vocab = Vocabulary::build(["red shoes"], &lexicon(), 1);
        let range = vocab.facet_range();
        assert_eq!(range.len(), 4);
        for id in range {
            assert!(vocab.token(id).unwrap().starts_with(FACET_PREFIX));
        }
    }

    #[test]
    fn extract_direct_hits() {
        let got = extract_facets("womens red running shoes", &lexicon());
        let want: FacetSet = [("color", "red"), ("gender", "womens")].into_iter().collect();
        assert_eq!(got, want);
        assert!(extract_facets("laptop", &lexicon()).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let lex = FacetLexicon::from_pairs([("color", "blue"), ("color", "navy blue")]);
        let got = extract_facets("navy blue jacket", &lex);
        assert_eq!(got.get("color"), Some("navy blue"));
        // whole tokens only
        assert!(extract_facets("bluetooth speaker", &lex).is_empty());
    }

    #[test]
    fn concatenates_words_then_facets() {
        let vocab = Vocabulary::build(["red shoes"], &lexicon(), 1);
        let facets: FacetSet = [("color", "red")].into_iter().collect();
        let seq = tokenize_query("red shoes", &facets, &vocab, DEFAULT_SEQ_LEN).unwrap();
        assert_eq!(
            &seq.ids[..3],
            &[
                vocab.id("red").unwrap(),
                vocab.id("shoes").unwrap(),
                vocab.id("FACET:color=red").unwrap()
            ]
        );
        assert!(seq.ids[3..].iter().all(|&i| i == PAD));
        assert_eq!(seq.active(), 3);
    }

    #[test]
    fn empty_query_is_all_pad() {
        let vocab = Vocabulary::build(["x"], &FacetLexicon::new(), 1);
        let seq = tokenize_query("", &FacetSet::new(), &vocab, 16).unwrap();
        assert_eq!(seq.ids, vec![PAD; 16]);
        assert_eq!(seq.mask, vec![false; 16]);
    }

    #[test]
    fn truncates_long_queries() {
        let q: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let q = q.join(" ");
        let vocab = Vocabulary::build([q.as_str()], &FacetLexicon::new(), 1);
        let seq = tokenize_query(&q, &FacetSet::new(), &vocab, 16).unwrap();
        assert_eq!(seq.ids.len(), 16);
        assert!(seq.mask.iter().all(|&m| m));
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let vocab = Vocabulary::build(["shoes"], &FacetLexicon::new(), 1);
        let seq = tokenize_query("green shoes", &FacetSet::new(), &vocab, 4).unwrap();
        assert_eq!(seq.ids[0], UNK);
        assert!(seq.mask[0]);
    }

    #[test]
    fn short_sequences_rejected() {
        let vocab = Vocabulary::build(["x"], &FacetLexicon::new(), 1);
        assert_eq!(
            tokenize_query("x", &FacetSet::new(), &vocab, 1),
            Err(TokenizeError::SequenceTooShort(1))
        );
    }

    #[test]
    fn facet_value_distinguishes_sequences() {
        let vocab = Vocabulary::build(["shoes"], &lexicon(), 1);
        let tok = Tokenizer::new(vocab, lexicon(), 8).unwrap();
        assert_ne!(tok.encode("red shoes"), tok.encode("blue shoes"));
        assert_eq!(tok.encode("red shoes"), tok.encode("red shoes"));
    }

    #[test]
    fn entries_round_trip() {
        let vocab = Vocabulary::build(["red shoes", "blue hat"], &lexicon(), 1);
        let entries: Vec<(String, u32)> = vocab.entries().map(|(t, i)| (t.to_string(), i)).collect();
        let back = Vocabulary::from_entries(entries.into_iter().rev()).unwrap();
        assert_eq!(back, vocab);
        assert!(matches!(
            Vocabulary::from_entries(vec![(PAD_TOKEN.to_string(), 0), (UNK_TOKEN.to_string(), 2)]),
            Err(TokenizeError::SparseIds { .. })
        ));
    }
}
