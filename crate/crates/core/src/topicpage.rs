//! Quota-bounded topic selection and topic-page emission.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::text::{normalize, stable_hash, tokens};

pub const DEFAULT_ITEMS_PER_PAGE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Cluster representatives that survived deduplication.
    #[default]
    Pipeline,
    /// Highest-click candidate queries, ignoring clusters and dedup.
    TopClicks,
}

impl core::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pipeline" => Ok(Strategy::Pipeline),
            "top-clicks" => Ok(Strategy::TopClicks),
            other => Err(format!("unknown strategy {other:?} (expected pipeline or top-clicks)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicCandidate {
    pub query: String,
    pub clicks: u64,
    #[serde(default)]
    pub product_type: Option<String>,
    #[serde(default)]
    pub cluster_id: Option<usize>,
}

/// The `quota` candidates with most clicks, ties broken by query text.
pub fn select_topics(candidates: &[TopicCandidate], quota: usize) -> Vec<TopicCandidate> {
    let mut sorted: Vec<&TopicCandidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| b.clicks.cmp(&a.clicks).then_with(|| a.query.cmp(&b.query)));
    sorted.into_iter().take(quota).cloned().collect()
}

/// Hex-encoded stable hash of the normalized keyword.
pub fn page_id(keyword: &str) -> String {
    format!("{:016x}", stable_hash(&normalize(keyword)))
}

/// Maps a keyword to ranked item ids.
pub trait Retriever {
    type Error: Display;
    fn retrieve(&self, keyword: &str, k: usize) -> Result<Vec<String>, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: String,
    pub title: String,
}

/// Ranks items by the number of distinct keyword tokens in their title.
/// Ties go to the smaller item id; items with no overlap are never returned.
#[derive(Debug, Clone, Default)]
pub struct TokenOverlapRetriever {
    items: Vec<(String, BTreeSet<String>)>,
}

impl TokenOverlapRetriever {
    pub fn new(items: &[CatalogItem]) -> Self {
        let mut items: Vec<(String, BTreeSet<String>)> = items
            .iter()
            .map(|it| (it.item_id.clone(), tokens(&normalize(&it.title)).map(str::to_string).collect()))
            .collect();
        items.sort_by(|a, b| a.0.cmp(&b.0));
        items.dedup_by(|a, b| a.0 == b.0);
        TokenOverlapRetriever { items }
    }

    pub fn score(&self, keyword: &str, item_id: &str) -> Option<usize> {
        let query = keyword_tokens(keyword);
        self.items
            .binary_search_by(|(id, _)| id.as_str().cmp(item_id))
            .ok()
            .map(|i| overlap(&query, &self.items[i].1))
    }
}

fn keyword_tokens(keyword: &str) -> BTreeSet<String> {
    tokens(&normalize(keyword)).map(str::to_string).collect()
}

fn overlap(query: &BTreeSet<String>, title: &BTreeSet<String>) -> usize {
    query.intersection(title).count()
}

impl Retriever for TokenOverlapRetriever {
    type Error = core::convert::Infallible;

    fn retrieve(&self, keyword: &str, k: usize) -> Result<Vec<String>, Self::Error> {
        let query = keyword_tokens(keyword);
        let mut scored: Vec<(usize, &str)> = self
            .items
            .iter()
            .map(|(id, title)| (overlap(&query, title), id.as_str()))
            .filter(|&(s, _)| s > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        Ok(scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicPageSpec {
    pub keyword: String,
    pub page_id: String,
    pub item_ids: Vec<String>,
    pub source_cluster: Option<usize>,
    pub product_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Emission {
    pub specs: Vec<TopicPageSpec>,
    /// Topics the retriever found nothing for.
    pub empty: Vec<String>,
    /// Topics whose retrieval failed or whose page id collided, with the reason.
    pub failed: Vec<(String, String)>,
}

/// One spec per topic with up to `k` items, in topic order.
pub fn emit_pages<R: Retriever>(topics: &[TopicCandidate], retriever: &R, k: usize) -> Emission {
    let mut out = Emission::default();
    let mut ids: BTreeMap<String, String> = BTreeMap::new();
    for topic in topics {
        let items = match retriever.retrieve(&topic.query, k) {
            Ok(items) => items,
            Err(e) => {
                out.failed.push((topic.query.clone(), e.to_string()));
                continue;
            }
        };
        if items.is_empty() {
            out.empty.push(topic.query.clone());
            continue;
        }
        let id = page_id(&topic.query);
        if let Some(prev) = ids.get(&id) {
            out.failed.push((topic.query.clone(), format!("page id {id} already used by {prev:?}")));
            continue;
        }
        ids.insert(id.clone(), topic.query.clone());
        out.specs.push(TopicPageSpec {
            keyword: topic.query.clone(),
            page_id: id,
            item_ids: items.into_iter().take(k).collect(),
            source_cluster: topic.cluster_id,
            product_type: topic.product_type.clone(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cand(q: &str, clicks: u64) -> TopicCandidate {
        TopicCandidate {
            query: q.into(),
            clicks,
            product_type: None,
            cluster_id: None,
        }
    }

    fn items() -> Vec<CatalogItem> {
        [
            ("i01", "Red running shoes"),
            ("i02", "Blue running shoes"),
            ("i03", "Red leather handbag"),
            ("i04", "Red shoes for kids"),
            ("i05", "Black boots"),
            ("i06", "Shoes rack, red"),
            ("i07", "Green scarf"),
            ("i08", "red"),
            ("i09", "Walking shoes"),
            ("i10", "Desk lamp"),
        ]
        .iter()
        .map(|(id, t)| CatalogItem {
            item_id: (*id).into(),
            title: (*t).into(),
        })
        .collect()
    }

    #[test]
    fn top_quota_by_clicks() {
        let cands: Vec<_> = (0..10).map(|i| cand(&format!("q{i}"), (i * 7 % 10) as u64)).collect();
        let got: Vec<_> = select_topics(&cands, 3).into_iter().map(|c| c.query).collect();
        // clicks: q0 0, q1 7, q2 4, q3 1, q4 8, q5 5, q6 2, q7 9, q8 6, q9 3
        assert_eq!(got, vec!["q7", "q4", "q1"]);
        assert!(select_topics(&cands, 0).is_empty());
        let all = select_topics(&cands, 50);
        assert_eq!(all.len(), 10);
        let set: BTreeSet<_> = all.iter().map(|c| &c.query).collect();
        assert_eq!(set, cands.iter().map(|c| &c.query).collect());
    }

    #[test]
    fn ties_are_lexicographic() {
        let cands = vec![cand("b", 5), cand("a", 5), cand("c", 9)];
        let got: Vec<_> = select_topics(&cands, 3).into_iter().map(|c| c.query).collect();
        assert_eq!(got, vec!["c", "a", "b"]);
    }

    #[test]
    fn overlap_ranking_by_hand() {
        let r = TokenOverlapRetriever::new(&items());
        // "red shoes": i01 2, i04 2, i06 2, i02 1, i03 1, i08 1, i09 1
        assert_eq!(
            r.retrieve("red shoes", 24).unwrap(),
            vec!["i01", "i04", "i06", "i02", "i03", "i08", "i09"]
        );
        assert_eq!(r.score("red shoes", "i06"), Some(2));
        assert_eq!(r.retrieve("red shoes", 1).unwrap(), vec!["i01"]);
    }

    #[test]
    fn empty_topics_are_flagged() {
        let r = TokenOverlapRetriever::new(&items());
        let out = emit_pages(&[cand("red shoes", 3), cand("garden hose", 2)], &r, 1);
        assert_eq!(out.specs.len(), 1);
        assert_eq!(out.specs[0].item_ids.len(), 1);
        assert_eq!(out.specs[0].page_id, page_id("Red Shoes"));
        assert_eq!(out.empty, vec!["garden hose"]);
    }

    #[test]
    fn page_ids_are_stable_hex() {
        let id = page_id("red shoes");
        assert_eq!(id.len(), 16);
        assert_eq!(id, format!("{:016x}", stable_hash("red shoes")));
        assert_ne!(id, page_id("blue shoes"));
    }

    struct Failing;
    impl Retriever for Failing {
        type Error = &'static str;
        fn retrieve(&self, keyword: &str, _k: usize) -> Result<Vec<String>, &'static str> {
            if keyword.starts_with('x') {
                Err("backend down")
            } else {
                Ok(vec!["i".into()])
            }
        }
    }

    #[test]
    fn retriever_failure_is_per_topic() {
        let out = emit_pages(&[cand("xa", 1), cand("b", 1)], &Failing, 24);
        assert_eq!(out.failed, vec![("xa".into(), "backend down".into())]);
        assert_eq!(out.specs.len(), 1);
    }
}
