//! Deduplication of candidate queries against existing category pages.
//!
//! Shelf pages are few, so their title embeddings are precomputed and every
//! query is compared against all of them. Facet pages are too many to embed
//! up front: a query is first mapped to its closest shelf, facets are
//! extracted from its text, and only facet pages under that shelf's product
//! type sharing one of those facets are embedded and compared.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ingest::{PageRecord, PageType};
use crate::model::EmbeddingVector;
use crate::tokenize::FacetSet;

pub const DEFAULT_THRESHOLD: f64 = 0.86;

/// Maps text to an embedding (the fine-tuned task embedding in production).
pub trait Embedder {
    type Error;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, Self::Error>;
}

impl<F, E> Embedder for F
where
    F: Fn(&str) -> Result<EmbeddingVector, E>,
{
    type Error = E;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, E> {
        self(text)
    }
}

/// Source of facet-page embeddings, computed on demand.
pub trait FacetEmbeddings {
    type Error;
    fn page_embedding(&self, page: &FacetPage) -> Result<EmbeddingVector, Self::Error>;
}

/// Embeds the page title on every request.
pub struct Uncached<'a, E>(pub &'a E);

impl<E: Embedder> FacetEmbeddings for Uncached<'_, E> {
    type Error = E::Error;

    fn page_embedding(&self, page: &FacetPage) -> Result<EmbeddingVector, E::Error> {
        self.0.embed(&page.title)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShelfEntry {
    pub page_id: String,
    pub product_type: String,
    pub vector: EmbeddingVector,
}

/// Precomputed shelf-title embeddings, ordered by page id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShelfIndex {
    entries: Vec<ShelfEntry>,
}

impl ShelfIndex {
    pub fn entries(&self) -> &[ShelfEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Embeds every shelf page title. An empty result is not an error; callers
/// should surface it as a warning.
pub fn build_shelf_index<E: Embedder>(catalog: &[PageRecord], embedder: &E) -> Result<ShelfIndex, E::Error> {
    let mut shelves: Vec<&PageRecord> = catalog.iter().filter(|p| p.page_type == PageType::Shelf).collect();
    shelves.sort_by(|a, b| a.page_id.cmp(&b.page_id));
    let entries = shelves
        .into_iter()
        .map(|p| {
            Ok(ShelfEntry {
                page_id: p.page_id.clone(),
                product_type: p.product_type.clone(),
                vector: embedder.embed(&p.title)?,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ShelfIndex { entries })
}

/// Exact maximum cosine similarity over all shelves; ties go to the
/// smaller page id. `None` for an empty index.
pub fn dedup_against_shelves<'a>(query: &EmbeddingVector, index: &'a ShelfIndex) -> Option<(&'a ShelfEntry, f64)> {
    let mut best: Option<(&ShelfEntry, f64)> = None;
    for entry in &index.entries {
        let sim = query.cosine(&entry.vector);
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((entry, sim));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacetPage {
    pub page_id: String,
    pub title: String,
    pub product_type: String,
    pub facets: Vec<(String, String)>,
}

/// `(product_type, facet_name, facet_value)` → facet pages carrying that pair.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FacetIndex {
    by_key: BTreeMap<(String, String, String), Vec<String>>,
    pages: BTreeMap<String, FacetPage>,
}

impl FacetIndex {
    pub fn build(catalog: &[PageRecord]) -> Self {
        let mut index = FacetIndex::default();
        for p in catalog.iter().filter(|p| p.page_type == PageType::Facet) {
            let facets: Vec<(String, String)> = p.facets.iter().map(|f| (f.name.clone(), f.value.clone())).collect();
            for (name, value) in &facets {
                let ids = index
                    .by_key
                    .entry((p.product_type.clone(), name.clone(), value.clone()))
                    .or_default();
                if !ids.contains(&p.page_id) {
                    ids.push(p.page_id.clone());
                }
            }
            index.pages.insert(
                p.page_id.clone(),
                FacetPage {
                    page_id: p.page_id.clone(),
                    title: p.title.clone(),
                    product_type: p.product_type.clone(),
                    facets,
                },
            );
        }
        for ids in index.by_key.values_mut() {
            ids.sort();
        }
        index
    }

    pub fn page(&self, page_id: &str) -> Option<&FacetPage> {
        self.pages.get(page_id)
    }

    pub fn pages(&self) -> impl Iterator<Item = &FacetPage> {
        self.pages.values()
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }
}

/// Facet pages under `product_type` sharing at least one facet pair with
/// the query. Empty when the query has no extracted facets.
pub fn narrow_facet_candidates<'a>(
    facets: &FacetSet,
    product_type: &str,
    index: &'a FacetIndex,
) -> BTreeSet<&'a str> {
    let mut out = BTreeSet::new();
    for (name, value) in facets.iter() {
        let key = (product_type.to_string(), name.to_string(), value.to_string());
        if let Some(ids) = index.by_key.get(&key) {
            out.extend(ids.iter().map(String::as_str));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Kept,
    Duplicate,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Kept => "kept",
            Verdict::Duplicate => "duplicate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchPath {
    Shelf,
    Facet,
}

impl MatchPath {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchPath::Shelf => "shelf",
            MatchPath::Facet => "facet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupDecision {
    pub query: String,
    pub verdict: Verdict,
    pub best_match: Option<String>,
    /// `-inf` when there was nothing to compare against.
    pub best_similarity: f64,
    pub path: MatchPath,
    /// Number of facet pages compared on the facet path.
    pub facet_candidates: usize,
}

/// Similarity cutoffs; both paths share one value unless overridden.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub shelf: f64,
    pub facet: f64,
}

impl Thresholds {
    pub fn shared(value: f64) -> Self {
        Thresholds {
            shelf: value,
            facet: value,
        }
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::shared(DEFAULT_THRESHOLD)
    }
}

/// Decides whether `query` duplicates an existing shelf or facet page.
///
/// The query is a duplicate when the shelf maximum reaches the shelf
/// threshold or the facet maximum reaches the facet threshold. The reported
/// match is the triggering one with the highest similarity, or the overall
/// best match for a kept query. Ties prefer the shelf path.
pub fn dedup<F: FacetEmbeddings>(
    query: &str,
    query_vec: &EmbeddingVector,
    query_facets: &FacetSet,
    shelves: &ShelfIndex,
    facets: &FacetIndex,
    facet_embeddings: &F,
    thresholds: Thresholds,
) -> Result<DedupDecision, F::Error> {
    let shelf_best = dedup_against_shelves(query_vec, shelves);

    let mut facet_best: Option<(&str, f64)> = None;
    let mut facet_candidates = 0;
    if let Some((shelf, _)) = shelf_best {
        let candidates = narrow_facet_candidates(query_facets, &shelf.product_type, facets);
        facet_candidates = candidates.len();
        for id in candidates {
            let page = facets.page(id).expect("candidate ids come from the index");
            let sim = query_vec.cosine(&facet_embeddings.page_embedding(page)?);
            if facet_best.is_none_or(|(_, b)| sim > b) {
                facet_best = Some((id, sim));
            }
        }
    }

    let shelf_hit = shelf_best.filter(|&(_, s)| s >= thresholds.shelf);
    let facet_hit = facet_best.filter(|&(_, s)| s >= thresholds.facet);
    let shelf_pick = shelf_best.map(|(e, s)| (e.page_id.as_str(), s, MatchPath::Shelf));
    let facet_pick = facet_best.map(|(id, s)| (id, s, MatchPath::Facet));

    let (verdict, chosen) = match (shelf_hit, facet_hit) {
        (None, None) => (Verdict::Kept, better(shelf_pick, facet_pick)),
        (Some(_), None) => (Verdict::Duplicate, shelf_pick),
        (None, Some(_)) => (Verdict::Duplicate, facet_pick),
        (Some(_), Some(_)) => (Verdict::Duplicate, better(shelf_pick, facet_pick)),
    };
    let (best_match, best_similarity, path) = match chosen {
        Some((id, s, p)) => (Some(id.to_string()), s, p),
        None => (None, f64::NEG_INFINITY, MatchPath::Shelf),
    };
    Ok(DedupDecision {
        query: query.to_string(),
        verdict,
        best_match,
        best_similarity,
        path,
        facet_candidates,
    })
}

type Pick<'a> = Option<(&'a str, f64, MatchPath)>;

fn better<'a>(shelf: Pick<'a>, facet: Pick<'a>) -> Pick<'a> {
    match (shelf, facet) {
        (Some(s), Some(f)) => Some(if f.1 > s.1 { f } else { s }),
        (s, None) => s,
        (None, f) => f,
    }
}

/// Per-run summary of the dedup stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupSummary {
    pub queries: usize,
    pub duplicates: usize,
    pub shelf_duplicates: usize,
    pub facet_duplicates: usize,
    /// Queries with no extracted facet: the facet path was skipped, so any
    /// facet-page duplicate among them would be missed.
    pub facet_path_skipped: usize,
    pub facet_comparisons: usize,
}

impl DedupSummary {
    pub fn from_decisions(decisions: &[DedupDecision], skipped: usize) -> Self {
        let dup = |p| {
            decisions
                .iter()
                .filter(|d| d.verdict == Verdict::Duplicate && d.path == p)
                .count()
        };
        DedupSummary {
            queries: decisions.len(),
            duplicates: decisions.iter().filter(|d| d.verdict == Verdict::Duplicate).count(),
            shelf_duplicates: dup(MatchPath::Shelf),
            facet_duplicates: dup(MatchPath::Facet),
            facet_path_skipped: skipped,
            facet_comparisons: decisions.iter().map(|d| d.facet_candidates).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Facet;
    use alloc::vec;

    fn page(id: &str, ty: PageType, title: &str, pt: &str, facets: &[(&str, &str)]) -> PageRecord {
        PageRecord {
            page_id: id.into(),
            page_type: ty,
            title: title.into(),
            product_type: pt.into(),
            facets: facets
                .iter()
                .map(|(n, v)| Facet {
                    name: (*n).into(),
                    value: (*v).into(),
                })
                .collect(),
        }
    }

    /// Bag-of-words embedding over a tiny fixed vocabulary.
    fn bow(text: &str) -> Result<EmbeddingVector, ()> {
        const WORDS: [&str; 8] = ["shoes", "red", "blue", "running", "bags", "leather", "kids", "women"];
        let v = WORDS
            .iter()
            .map(|w| text.split_whitespace().filter(|t| t == w).count() as f64)
            .collect();
        Ok(EmbeddingVector::normalized(v))
    }

    fn catalog() -> Vec<PageRecord> {
        vec![
            page("S1", PageType::Shelf, "shoes", "shoes", &[]),
            page("S2", PageType::Shelf, "bags", "bags", &[]),
            page("S3", PageType::Shelf, "kids", "kids", &[]),
            page("F1", PageType::Facet, "red shoes", "shoes", &[("color", "red")]),
            page("F2", PageType::Facet, "blue shoes", "shoes", &[("color", "blue")]),
            page("F3", PageType::Facet, "red running shoes", "shoes", &[("color", "red"), ("style", "running")]),
            page("F4", PageType::Facet, "red bags", "bags", &[("color", "red")]),
        ]
    }

    #[test]
    fn shelf_index_cardinality_and_definition() {
        let idx = build_shelf_index(&catalog(), &bow).unwrap();
        assert_eq!(idx.len(), 3);
        for e in idx.entries() {
            assert_eq!(e.vector, bow(&e.product_type).unwrap());
        }
        assert_eq!(build_shelf_index(&catalog(), &bow).unwrap(), idx);
        assert!(build_shelf_index(&[], &bow).unwrap().is_empty());
    }

    #[test]
    fn identical_title_is_shelf_duplicate() {
        let cat = catalog();
        let shelves = build_shelf_index(&cat, &bow).unwrap();
        let facets = FacetIndex::build(&cat);
        let d = dedup("shoes", &bow("shoes").unwrap(), &FacetSet::new(), &shelves, &facets, &Uncached(&bow), Thresholds::default()).unwrap();
        assert_eq!(d.verdict, Verdict::Duplicate);
        assert_eq!(d.path, MatchPath::Shelf);
        assert_eq!(d.best_match.as_deref(), Some("S1"));
        assert!((d.best_similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn narrowing_is_exact_filter() {
        let facets = FacetIndex::build(&catalog());
        let red: FacetSet = [("color", "red")].into_iter().collect();
        let got = narrow_facet_candidates(&red, "shoes", &facets);
        assert_eq!(got.into_iter().collect::<Vec<_>>(), vec!["F1", "F3"]);
        assert!(narrow_facet_candidates(&FacetSet::new(), "shoes", &facets).is_empty());
    }

    #[test]
    fn facet_path_finds_facet_duplicate() {
        let cat = catalog();
        let shelves = build_shelf_index(&cat, &bow).unwrap();
        let facets = FacetIndex::build(&cat);
        let qf: FacetSet = [("color", "red"), ("style", "running")].into_iter().collect();
        let d = dedup("running shoes red", &bow("running shoes red").unwrap(), &qf, &shelves, &facets, &Uncached(&bow), Thresholds::default()).unwrap();
        assert_eq!(d.verdict, Verdict::Duplicate);
        assert_eq!(d.path, MatchPath::Facet);
        assert_eq!(d.best_match.as_deref(), Some("F3"));
        assert_eq!(d.facet_candidates, 2);
    }

    #[test]
    fn below_threshold_is_kept() {
        let cat = catalog();
        let shelves = build_shelf_index(&cat, &bow).unwrap();
        let facets = FacetIndex::build(&cat);
        // cos("leather shoes", "shoes") = 1/√2 ≈ 0.707
        let d = dedup("leather shoes", &bow("leather shoes").unwrap(), &FacetSet::new(), &shelves, &facets, &Uncached(&bow), Thresholds::default()).unwrap();
        assert_eq!(d.verdict, Verdict::Kept);
        assert_eq!(d.best_match.as_deref(), Some("S1"));
        assert!((d.best_similarity - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn empty_index_keeps_query() {
        let d = dedup("x", &bow("shoes").unwrap(), &FacetSet::new(), &ShelfIndex::default(), &FacetIndex::default(), &Uncached(&bow), Thresholds::shared(0.0)).unwrap();
        assert_eq!(d.verdict, Verdict::Kept);
        assert_eq!(d.best_match, None);
        assert_eq!(d.best_similarity, f64::NEG_INFINITY);
    }
}
