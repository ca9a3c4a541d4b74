//! Click records, page catalog entries and candidate queries, plus the
//! negative-query filter applied before clustering.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageType {
    Shelf,
    Facet,
    Item,
    Topic,
    Other,
}

impl PageType {
    pub fn as_str(self) -> &'static str {
        match self {
            PageType::Shelf => "shelf",
            PageType::Facet => "facet",
            PageType::Item => "item",
            PageType::Topic => "topic",
            PageType::Other => "other",
        }
    }
}

impl fmt::Display for PageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PageType {
    type Err = RowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shelf" => Ok(PageType::Shelf),
            "facet" => Ok(PageType::Facet),
            "item" => Ok(PageType::Item),
            "topic" => Ok(PageType::Topic),
            "other" => Ok(PageType::Other),
            other => Err(RowError::UnknownPageType(other.to_string())),
        }
    }
}

/// Why a single input row was rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RowError {
    #[error("query is empty after normalization")]
    EmptyQuery,
    #[error("page_id is empty")]
    EmptyPageId,
    #[error("unknown page type {0:?}")]
    UnknownPageType(String),
    #[error("field {field} is not an integer: {value:?}")]
    NotAnInteger { field: &'static str, value: String },
    #[error("field {field} is negative: {value}")]
    NegativeCount { field: &'static str, value: i64 },
    #[error("clicks ({clicks}) exceed impressions ({impressions})")]
    ClicksExceedImpressions { clicks: u64, impressions: u64 },
    #[error("expected {expected} fields, found {found}")]
    FieldCount { expected: usize, found: usize },
    #[error("{0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub query: String,
    pub page_id: String,
    pub page_type: PageType,
    pub clicks: u64,
    pub impressions: u64,
}

fn parse_count(field: &'static str, raw: &str) -> Result<u64, RowError> {
    let value: i64 = raw.trim().parse().map_err(|_| RowError::NotAnInteger {
        field,
        value: raw.to_string(),
    })?;
    if value < 0 {
        return Err(RowError::NegativeCount { field, value });
    }
    Ok(value as u64)
}

impl ClickRecord {
    /// Validates and normalizes one row given as raw field strings.
    pub fn from_fields(
        query: &str,
        page_id: &str,
        page_type: &str,
        clicks: &str,
        impressions: &str,
    ) -> Result<Self, RowError> {
        let clicks = parse_count("clicks", clicks)?;
        let impressions = parse_count("impressions", impressions)?;
        Self::new(query, page_id, page_type.parse()?, clicks, impressions)
    }

    pub fn new(
        query: &str,
        page_id: &str,
        page_type: PageType,
        clicks: u64,
        impressions: u64,
    ) -> Result<Self, RowError> {
        let query = text::normalize(query);
        if query.is_empty() {
            return Err(RowError::EmptyQuery);
        }
        let page_id = page_id.trim();
        if page_id.is_empty() {
            return Err(RowError::EmptyPageId);
        }
        if impressions > 0 && clicks > impressions {
            return Err(RowError::ClicksExceedImpressions {
                clicks,
                impressions,
            });
        }
        Ok(ClickRecord {
            query,
            page_id: page_id.to_string(),
            page_type,
            clicks,
            impressions,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Facet {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub page_id: String,
    pub page_type: PageType,
    pub title: String,
    pub product_type: String,
    #[serde(default)]
    pub facets: Vec<Facet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CatalogError {
    #[error("duplicate page_id {0}")]
    DuplicatePageId(String),
    #[error("facet page {0} has no facets")]
    FacetPageWithoutFacets(String),
}

/// Checks catalog-level invariants: unique ids, facet pages carry facets.
///
/// Facet names and values are normalized in place.
pub fn validate_catalog(pages: &mut [PageRecord]) -> Result<(), CatalogError> {
    let mut seen = BTreeSet::new();
    for page in pages.iter_mut() {
        if !seen.insert(page.page_id.clone()) {
            return Err(CatalogError::DuplicatePageId(page.page_id.clone()));
        }
        if page.page_type == PageType::Facet && page.facets.is_empty() {
            return Err(CatalogError::FacetPageWithoutFacets(page.page_id.clone()));
        }
        page.product_type = text::normalize(&page.product_type);
        for facet in &mut page.facets {
            facet.name = text::normalize(&facet.name);
            facet.value = text::normalize(&facet.value);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    SearchLog,
    SemReport,
    Trending,
    File,
}

impl FromStr for CandidateSource {
    type Err = RowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "search_log" => Ok(CandidateSource::SearchLog),
            "sem_report" => Ok(CandidateSource::SemReport),
            "trending" => Ok(CandidateSource::Trending),
            "file" => Ok(CandidateSource::File),
            other => Err(RowError::Malformed(alloc::format!(
                "unknown candidate source {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateQuery {
    pub query: String,
    pub source: CandidateSource,
    pub clicks_total: u64,
}

/// Merges candidates from several sources, summing clicks per normalized query.
///
/// The merged candidate keeps the first source seen for that query. Output is
/// sorted by query text.
pub fn merge_candidates<I>(candidates: I) -> Vec<CandidateQuery>
where
    I: IntoIterator<Item = CandidateQuery>,
{
    let mut merged: BTreeMap<String, CandidateQuery> = BTreeMap::new();
    for mut cand in candidates {
        cand.query = text::normalize(&cand.query);
        if cand.query.is_empty() {
            continue;
        }
        match merged.get_mut(&cand.query) {
            Some(existing) => existing.clicks_total += cand.clicks_total,
            None => {
                merged.insert(cand.query.clone(), cand);
            }
        }
    }
    merged.into_values().collect()
}

/// Candidates drawn from the click log: one per query with its total clicks.
pub fn candidates_from_clicks(records: &[ClickRecord]) -> Vec<CandidateQuery> {
    merge_candidates(records.iter().map(|r| CandidateQuery {
        query: r.query.clone(),
        source: CandidateSource::SearchLog,
        clicks_total: r.clicks,
    }))
}

/// Splits candidates into (kept, removed); a candidate is removed iff one of
/// its whole tokens is a blocklisted term. Multi-word terms match as a
/// contiguous token run.
pub fn filter_negative_queries(
    candidates: &[CandidateQuery],
    blocklist: &BTreeSet<String>,
) -> (Vec<CandidateQuery>, Vec<CandidateQuery>) {
    let terms: Vec<Vec<&str>> = blocklist
        .iter()
        .map(|t| text::token_vec(t))
        .filter(|t| !t.is_empty())
        .collect();
    candidates
        .iter()
        .cloned()
        .partition(|cand| !is_blocked(&cand.query, &terms))
}

fn is_blocked(query: &str, terms: &[Vec<&str>]) -> bool {
    let toks = text::token_vec(query);
    terms
        .iter()
        .any(|term| toks.windows(term.len()).any(|w| w == term.as_slice()))
}

/// Parses a blocklist: one term per line, `#` starts a comment.
pub fn parse_blocklist(contents: &str) -> BTreeSet<String> {
    contents
        .lines()
        .map(|line| line.split('#').next().unwrap_or(""))
        .map(text::normalize)
        .filter(|t| !t.is_empty())
        .collect()
}
