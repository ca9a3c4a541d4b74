//! Two-stage query clustering: assign each query to its nearest product
//! type, then agglomerate within each product type under cosine distance.
//!
//! Splitting by product type first means only within-type pairwise
//! distances are ever evaluated; the count is reported so the saving
//! against a direct clustering can be measured.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{cosine, EmbeddingVector};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Single,
    Complete,
}

pub const DEFAULT_THRESHOLD: f64 = 0.15;

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - cosine(a, b)
}

/// Product type label → embedding of the label text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProductTypeIndex {
    types: BTreeMap<String, EmbeddingVector>,
}

impl ProductTypeIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, label: impl Into<String>, vector: EmbeddingVector) {
        self.types.insert(label.into(), vector);
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.types.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, EmbeddingVector)> for ProductTypeIndex {
    fn from_iter<T: IntoIterator<Item = (String, EmbeddingVector)>>(iter: T) -> Self {
        ProductTypeIndex {
            types: iter.into_iter().collect(),
        }
    }
}

/// Arg-max cosine similarity; ties go to the smallest label. `None` only
/// for an empty index.
pub fn classify_product_type<'a>(query: &[f64], index: &'a ProductTypeIndex) -> Option<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (label, vec) in index.iter() {
        let sim = cosine(query, vec.as_slice());
        if best.is_none_or(|(_, b)| sim > b) {
            best = Some((label, sim));
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterItem {
    pub query: String,
    pub clicks: u64,
    pub vector: Vec<f64>,
}

/// One merge; clusters are named by their lexicographically smallest member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: String,
    pub right: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agglomeration {
    /// Member queries per cluster, each sorted; clusters sorted by first member.
    pub clusters: Vec<Vec<String>>,
    pub representatives: Vec<String>,
    pub merges: Vec<Merge>,
    pub distance_evaluations: u64,
}

/// Bottom-up agglomerative clustering. Merges the closest pair until the
/// smallest linkage distance exceeds `threshold`.
///
/// Items are processed in query order and ties are broken by the position
/// of the clusters' first members, so the result does not depend on input
/// order. Representatives are the member with most clicks (ties: smallest
/// query).
pub fn agglomerate(items: &[ClusterItem], threshold: f64, linkage: Linkage) -> Agglomeration {
    let mut sorted: Vec<&ClusterItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.query.cmp(&b.query));
    let n = sorted.len();

    // Pairwise distances (upper triangle, mirrored for convenience).
    let mut dist = vec![0.0; n * n];
    let mut evaluations = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(&sorted[i].vector, &sorted[j].vector);
            evaluations += 1;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    // For average linkage the matrix holds distance sums between clusters.
    let mut size = vec![1usize; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut active = vec![true; n];
    let mut merges = Vec::new();

    let link = |dist: &[f64], size: &[usize], i: usize, j: usize| -> f64 {
        let d = dist[i * n + j];
        match linkage {
            Linkage::Average => d / (size[i] * size[j]) as f64,
            _ => d,
        }
    };
    // Row minimum over active j > i as (distance, j).
    let row_min = |dist: &[f64], size: &[usize], active: &[bool], i: usize| -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (j, _) in active.iter().enumerate().skip(i + 1).filter(|(_, a)| **a) {
            let d = link(dist, size, i, j);
            if best.is_none_or(|(b, _)| d < b) {
                best = Some((d, j));
            }
        }
        best
    };
    let mut nearest: Vec<Option<(f64, usize)>> = (0..n).map(|i| row_min(&dist, &size, &active, i)).collect();

    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            if let Some((d, j)) = nearest[i] {
                if best.is_none_or(|(b, _, _)| d < b) {
                    best = Some((d, i, j));
                }
            }
        }
        let Some((d, i, j)) = best else { break };
        if d > threshold {
            break;
        }
        merges.push(Merge {
            left: sorted[i].query.clone(),
            right: sorted[j].query.clone(),
            distance: d,
        });

        // Merge j into i (i < j, so i stays the first member).
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let (dik, djk) = (dist[i * n + k], dist[j * n + k]);
            let merged = match linkage {
                Linkage::Average => dik + djk,
                Linkage::Single => dik.min(djk),
                Linkage::Complete => dik.max(djk),
            };
            dist[i * n + k] = merged;
            dist[k * n + i] = merged;
        }
        size[i] += size[j];
        active[j] = false;
        let moved = core::mem::take(&mut members[j]);
        members[i].extend(moved);
        nearest[j] = None;

        for k in 0..n {
            if !active[k] {
                continue;
            }
            let stale = match nearest[k] {
                Some((_, m)) => k == i || m == i || m == j,
                None => k == i,
            };
            if stale {
                nearest[k] = row_min(&dist, &size, &active, k);
            } else if k < i {
                let d = link(&dist, &size, k, i);
                if let Some((b, m)) = nearest[k] {
                    if d < b || (d == b && i < m) {
                        nearest[k] = Some((d, i));
                    }
                }
            }
        }
    }

    let mut clusters = Vec::new();
    let mut representatives = Vec::new();
    for (i, group) in members.iter_mut().enumerate() {
        if !active[i] {
            continue;
        }
        group.sort_unstable();
        let rep = group
            .iter()
            .map(|&m| sorted[m])
            .max_by(|a, b| a.clicks.cmp(&b.clicks).then_with(|| b.query.cmp(&a.query)))
            .expect("clusters are non-empty");
        representatives.push(rep.query.clone());
        clusters.push(group.iter().map(|&m| sorted[m].query.clone()).collect());
    }
    Agglomeration {
        clusters,
        representatives,
        merges,
        distance_evaluations: evaluations,
    }
}

/// Naive reference for [`agglomerate`]: recomputes every cluster-pair
/// linkage from member distances at each step. Far slower; meant for
/// verification on small inputs. Returns clusters sorted by first member.
pub fn reference_partition(items: &[ClusterItem], threshold: f64, linkage: Linkage) -> Vec<Vec<String>> {
    let mut sorted: Vec<&ClusterItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.query.cmp(&b.query));
    let n = sorted.len();
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 1.0 - cosine(&sorted[i].vector, &sorted[j].vector)).collect())
        .collect();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let pairs = clusters[a].iter().flat_map(|&x| clusters[b].iter().map(move |&y| (x, y)));
                let l = match linkage {
                    Linkage::Average => {
                        let (s, c) = pairs.fold((0.0, 0usize), |(s, c), (x, y)| (s + d[x][y], c + 1));
                        s / c as f64
                    }
                    Linkage::Single => pairs.map(|(x, y)| d[x][y]).fold(f64::INFINITY, f64::min),
                    Linkage::Complete => pairs.map(|(x, y)| d[x][y]).fold(f64::NEG_INFINITY, f64::max),
                };
                if best.is_none_or(|(bl, _, _)| l < bl) {
                    best = Some((l, a, b));
                }
            }
        }
        match best {
            Some((l, a, b)) if l <= threshold => {
                let moved = clusters.remove(b);
                clusters[a].extend(moved);
                clusters[a].sort_unstable();
            }
            _ => break,
        }
    }
    clusters
        .into_iter()
        .map(|c| c.into_iter().map(|i| sorted[i].query.clone()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub product_type: String,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClusterResult {
    pub assignments: BTreeMap<String, Assignment>,
    pub representatives: BTreeMap<usize, String>,
    pub merges: Vec<(String, Merge)>,
    pub distance_evaluations: u64,
    pub classification_evaluations: u64,
}

impl ClusterResult {
    pub fn is_representative(&self, query: &str) -> bool {
        self.assignments
            .get(query)
            .is_some_and(|a| self.representatives.get(&a.cluster_id).map(String::as_str) == Some(query))
    }

    pub fn cluster_count(&self) -> usize {
        self.representatives.len()
    }

    /// Members of every cluster, keyed by cluster id.
    pub fn clusters(&self) -> BTreeMap<usize, Vec<&str>> {
        let mut out: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
        for (q, a) in &self.assignments {
            out.entry(a.cluster_id).or_default().push(q);
        }
        out
    }
}

/// A candidate query with its click volume and embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicQuery {
    pub query: String,
    pub clicks: u64,
    pub vector: EmbeddingVector,
}

/// Classifies every query to a product type, then clusters within each type.
///
/// Cluster ids are assigned in product-type order, then by first member.
pub fn cluster_topics(
    queries: &[TopicQuery],
    index: &ProductTypeIndex,
    threshold: f64,
    linkage: Linkage,
) -> ClusterResult {
    let mut result = ClusterResult::default();
    if index.is_empty() {
        return result;
    }
    let mut by_type: BTreeMap<&str, Vec<ClusterItem>> = BTreeMap::new();
    for q in queries {
        let pt = classify_product_type(q.vector.as_slice(), index).expect("index is non-empty");
        result.classification_evaluations += index.len() as u64;
        by_type.entry(pt).or_default().push(ClusterItem {
            query: q.query.clone(),
            clicks: q.clicks,
            vector: q.vector.as_slice().to_vec(),
        });
    }
    let mut next_id = 0usize;
    for (pt, items) in by_type {
        let agg = agglomerate(&items, threshold, linkage);
        result.distance_evaluations += agg.distance_evaluations;
        for (members, rep) in agg.clusters.iter().zip(agg.representatives) {
            for m in members {
                result.assignments.insert(
                    m.clone(),
                    Assignment {
                        product_type: pt.into(),
                        cluster_id: next_id,
                    },
                );
            }
            result.representatives.insert(next_id, rep);
            next_id += 1;
        }
        result
            .merges
            .extend(agg.merges.into_iter().map(|m| (String::from(pt), m)));
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn item(q: &str, clicks: u64, v: &[f64]) -> ClusterItem {
        ClusterItem {
            query: q.to_string(),
            clicks,
            vector: v.to_vec(),
        }
    }

    #[test]
    fn identical_vectors_form_one_cluster() {
        let items: Vec<_> = (0..5).map(|i| item(&alloc::format!("q{i}"), i, &[1.0, 2.0])).collect();
        for linkage in [Linkage::Average, Linkage::Single, Linkage::Complete] {
            let agg = agglomerate(&items, 1e-9, linkage);
            assert_eq!(agg.clusters.len(), 1);
            assert_eq!(agg.representatives, vec!["q4".to_string()]);
            assert_eq!(agg.merges.len(), 4);
        }
    }

    #[test]
    fn tiny_threshold_keeps_singletons() {
        let items = vec![
            item("a", 1, &[1.0, 0.0]),
            item("b", 1, &[0.0, 1.0]),
            item("c", 1, &[1.0, 1.0]),
        ];
        let agg = agglomerate(&items, 0.1, Linkage::Average);
        assert_eq!(agg.clusters.len(), 3);
        assert!(agg.merges.is_empty());
        assert_eq!(agg.distance_evaluations, 3);
    }

    #[test]
    fn representative_ties_are_lexicographic() {
        let items = vec![item("b", 5, &[1.0, 0.0]), item("a", 5, &[1.0, 0.01])];
        let agg = agglomerate(&items, 0.5, Linkage::Average);
        assert_eq!(agg.representatives, vec!["a".to_string()]);
    }

    #[test]
    fn classify_picks_closest_with_lexicographic_ties() {
        let index: ProductTypeIndex = [
            ("shoes".to_string(), EmbeddingVector::normalized(vec![1.0, 0.0])),
            ("bags".to_string(), EmbeddingVector::normalized(vec![0.0, 1.0])),
        ]
        .into_iter()
        .collect();
        assert_eq!(classify_product_type(&[1.0, 0.0], &index), Some("shoes"));
        assert_eq!(classify_product_type(&[-1.0, 0.0], &index), Some("bags"));
        assert_eq!(classify_product_type(&[1.0, 1.0], &index), Some("bags"));
        assert_eq!(classify_product_type(&[1.0], &ProductTypeIndex::new()), None);
    }

    #[test]
    fn empty_input() {
        let index: ProductTypeIndex = [("x".to_string(), EmbeddingVector::normalized(vec![1.0]))]
            .into_iter()
            .collect();
        let r = cluster_topics(&[], &index, 0.15, Linkage::Average);
        assert!(r.assignments.is_empty());
        assert_eq!(r.distance_evaluations, 0);
        let agg = agglomerate(&[], 0.15, Linkage::Average);
        assert!(agg.clusters.is_empty());
    }
}
