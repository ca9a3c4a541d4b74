//! Co-click aggregation and the interactive metric between two queries.
//!
//! Two queries are co-clicked on a page when both have at least one click
//! on it. `CLK(a co b)` is `a`'s clicks summed over the pages it shares with
//! `b`, and the metric is
//! `sqrt(CLK(a co b) * CLK(b co a) / (CLK(a) * CLK(b)))`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::ClickRecord;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("query {0:?} has no clicks; interactive metric is undefined")]
    ZeroClicks(String),
    #[error("query {0:?} is not present in the click statistics")]
    UnknownQuery(String),
    #[error("click statistics are empty")]
    EmptyStats,
}

/// Per-query click totals and per-pair co-click sums.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoClickStats {
    totals: BTreeMap<String, u64>,
    /// Keyed by `(a, b)` with `a < b`; value is `(CLK(a co b), CLK(b co a))`.
    pairs: BTreeMap<(String, String), (u64, u64)>,
}

impl CoClickStats {
    pub fn totals(&self) -> &BTreeMap<String, u64> {
        &self.totals
    }

    pub fn total(&self, query: &str) -> Option<u64> {
        self.totals.get(query).copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str, u64, u64)> {
        self.pairs
            .iter()
            .map(|((a, b), &(ab, ba))| (a.as_str(), b.as_str(), ab, ba))
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    /// Co-click sums oriented as `(CLK(q1 co q2), CLK(q2 co q1))`.
    pub fn coclicks(&self, q1: &str, q2: &str) -> Option<(u64, u64)> {
        if q1 <= q2 {
            self.pairs
                .get(&(String::from(q1), String::from(q2)))
                .copied()
        } else {
            self.pairs
                .get(&(String::from(q2), String::from(q1)))
                .map(|&(a, b)| (b, a))
        }
    }
}

/// Single pass over the log grouped by page; clicks for a repeated
/// (query, page) pair are summed.
pub fn aggregate_clicks(records: &[ClickRecord]) -> CoClickStats {
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    let mut by_page: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for r in records {
        *totals.entry(r.query.clone()).or_default() += r.clicks;
        *by_page
            .entry(r.page_id.as_str())
            .or_default()
            .entry(r.query.as_str())
            .or_default() += r.clicks;
    }

    let mut pairs: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    for queries in by_page.values() {
        let clicked: Vec<(&str, u64)> = queries
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&q, &c)| (q, c))
            .collect();
        // BTreeMap iteration gives ascending query order, so i < j means a < b.
        for (i, &(a, ca)) in clicked.iter().enumerate() {
            for &(b, cb) in &clicked[i + 1..] {
                let entry = pairs
                    .entry((String::from(a), String::from(b)))
                    .or_insert((0, 0));
                entry.0 += ca;
                entry.1 += cb;
            }
        }
    }
    CoClickStats { totals, pairs }
}

/// Interactive metric between two queries; 0 when they share no clicked page.
pub fn interactive_metric(stats: &CoClickStats, q1: &str, q2: &str) -> Result<f64, MetricError> {
    let t1 = stats
        .total(q1)
        .ok_or_else(|| MetricError::UnknownQuery(q1.into()))?;
    let t2 = stats
        .total(q2)
        .ok_or_else(|| MetricError::UnknownQuery(q2.into()))?;
    if t1 == 0 {
        return Err(MetricError::ZeroClicks(q1.into()));
    }
    if t2 == 0 {
        return Err(MetricError::ZeroClicks(q2.into()));
    }
    if q1 == q2 {
        return Ok(1.0);
    }
    Ok(match stats.coclicks(q1, q2) {
        Some((c12, c21)) => interactive_from_counts(c12, c21, t1, t2),
        None => 0.0,
    })
}

/// The closed form on raw counts. Both products are formed in `f64` so large
/// counts cannot overflow.
pub fn interactive_from_counts(co_12: u64, co_21: u64, total_1: u64, total_2: u64) -> f64 {
    let num = co_12 as f64 * co_21 as f64;
    let den = total_1 as f64 * total_2 as f64;
    libm::sqrt(num / den)
}

/// One training tuple. `interactive == -1` marks a sampled negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPairSample {
    pub query_a: String,
    pub query_b: String,
    pub interactive: f64,
}

impl QueryPairSample {
    pub const NEGATIVE: f64 = -1.0;

    pub fn is_negative(&self) -> bool {
        self.interactive == Self::NEGATIVE
    }
}

/// How many negatives to draw per positive tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeRatio {
    /// positives / negatives ≈ mean positive interactive value.
    Auto,
    /// Negatives per positive; `0` disables sampling.
    PerPositive(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetOptions {
    pub negative_ratio: NegativeRatio,
    pub seed: u64,
    /// Drop positives whose interactive value falls below this floor.
    pub interactive_floor: Option<f64>,
}

impl Default for TrainingSetOptions {
    fn default() -> Self {
        TrainingSetOptions {
            negative_ratio: NegativeRatio::Auto,
            seed: 0,
            interactive_floor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub samples: Vec<QueryPairSample>,
    pub positives: usize,
    pub negatives: usize,
    /// Negatives requested by the ratio rule, before availability capping.
    pub requested_negatives: usize,
    pub warnings: Vec<String>,
}

/// Every co-clicked pair with its metric, followed by uniformly sampled
/// non-co-clicked pairs labelled `-1`.
pub fn build_training_set(
    stats: &CoClickStats,
    options: &TrainingSetOptions,
) -> Result<TrainingSet, MetricError> {
    if stats.is_empty() {
        return Err(MetricError::EmptyStats);
    }
    let mut warnings = Vec::new();
    let mut samples = Vec::new();
    for (a, b, ab, ba) in stats.pairs() {
        let (ta, tb) = (stats.totals[a], stats.totals[b]);
        let value = interactive_from_counts(ab, ba, ta, tb);
        if value <= 0.0 {
            continue;
        }
        if let Some(floor) = options.interactive_floor {
            if value < floor {
                continue;
            }
        }
        samples.push(QueryPairSample {
            query_a: a.into(),
            query_b: b.into(),
            interactive: value,
        });
    }
    let positives = samples.len();

    let requested = match options.negative_ratio {
        NegativeRatio::PerPositive(r) if r <= 0.0 => 0,
        NegativeRatio::PerPositive(r) => libm::round(r * positives as f64) as usize,
        NegativeRatio::Auto if positives == 0 => 0,
        NegativeRatio::Auto => {
            let mean = samples.iter().map(|s| s.interactive).sum::<f64>() / positives as f64;
            libm::round(positives as f64 / mean) as usize
        }
    };

    let queries: Vec<&str> = stats.totals.keys().map(String::as_str).collect();
    let negatives = sample_negative_pairs(stats, &queries, requested, options.seed);
    if negatives.len() < requested {
        warnings.push(alloc::format!(
            "only {} non-co-clicked pairs available, {} negatives requested",
            negatives.len(),
            requested
        ));
    }
    let negative_count = negatives.len();
    samples.extend(negatives.into_iter().map(|(i, j)| QueryPairSample {
        query_a: queries[i].into(),
        query_b: queries[j].into(),
        interactive: QueryPairSample::NEGATIVE,
    }));

    Ok(TrainingSet {
        samples,
        positives,
        negatives: negative_count,
        requested_negatives: requested,
        warnings,
    })
}

fn sample_negative_pairs(
    stats: &CoClickStats,
    queries: &[&str],
    wanted: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let n = queries.len();
    let all_pairs = n * n.saturating_sub(1) / 2;
    let available = all_pairs - stats.pair_count();
    if wanted == 0 || available == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let is_coclicked = |i: usize, j: usize| stats.coclicks(queries[i], queries[j]).is_some();

    if wanted * 2 >= available {
        // Dense: enumerate the complement, then partial Fisher-Yates.
        let mut pool: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| !is_coclicked(i, j))
            .collect();
        let take = wanted.min(pool.len());
        for k in 0..take {
            let pick = rng.random_range(k..pool.len());
            pool.swap(k, pick);
        }
        pool.truncate(take);
        return pool;
    }

    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(wanted);
    while out.len() < wanted {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        let pair = (i.min(j), i.max(j));
        if is_coclicked(pair.0, pair.1) || !chosen.insert(pair) {
            continue;
        }
        out.push(pair);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PageType;
    use alloc::vec;

    fn rec(q: &str, page: &str, clicks: u64) -> ClickRecord {
        ClickRecord::new(q, page, PageType::Item, clicks, 0).unwrap()
    }

    /// A per-page breakdown consistent with the worked example: totals 52
    /// and 55, shared pages P2 and P3 carrying 43 and 42 clicks.
    pub(crate) fn fig2_records() -> Vec<ClickRecord> {
        vec![
            rec("iphone accessories", "P1", 9),
            rec("iphone accessories", "P2", 22),
            rec("iphone accessories", "P3", 21),
            rec("iphone case", "P2", 30),
            rec("iphone case", "P3", 12),
            rec("iphone case", "P4", 13),
        ]
    }

    #[test]
    fn fig2_aggregation_and_metric() {
        let stats = aggregate_clicks(&fig2_records());
        assert_eq!(stats.total("iphone accessories"), Some(52));
        assert_eq!(stats.total("iphone case"), Some(55));
        assert_eq!(
            stats.coclicks("iphone accessories", "iphone case"),
            Some((43, 42))
        );
        let value = interactive_metric(&stats, "iphone accessories", "iphone case").unwrap();
        // sqrt(1806 / 2860); the commonly quoted 0.798 does not follow from these counts
        assert!((value - 0.794_649_942_722_285_4).abs() < 1e-12, "{value}");
        assert_eq!(
            value,
            interactive_metric(&stats, "iphone case", "iphone accessories").unwrap()
        );
    }

    #[test]
    fn disjoint_queries_have_no_pair() {
        let stats = aggregate_clicks(&[rec("a", "P1", 3), rec("b", "P2", 4)]);
        assert_eq!(stats.pair_count(), 0);
        assert_eq!(interactive_metric(&stats, "a", "b").unwrap(), 0.0);
    }

    #[test]
    fn identical_click_profiles_give_one() {
        let stats = aggregate_clicks(&[
            rec("a", "P1", 3),
            rec("a", "P2", 5),
            rec("b", "P1", 7),
            rec("b", "P2", 1),
        ]);
        assert_eq!(interactive_metric(&stats, "a", "b").unwrap(), 1.0);
    }

    #[test]
    fn zero_click_pages_do_not_count_as_coclicked() {
        let stats = aggregate_clicks(&[rec("a", "P1", 3), rec("b", "P1", 0), rec("b", "P2", 2)]);
        assert_eq!(stats.pair_count(), 0);
    }

    #[test]
    fn zero_total_is_an_error() {
        let stats = aggregate_clicks(&[rec("a", "P1", 3), rec("b", "P1", 0)]);
        assert_eq!(
            interactive_metric(&stats, "a", "b"),
            Err(MetricError::ZeroClicks("b".into()))
        );
        assert!(matches!(
            interactive_metric(&stats, "a", "zzz"),
            Err(MetricError::UnknownQuery(_))
        ));
    }

    #[test]
    fn auto_ratio_follows_mean_interactive() {
        // Two positives with I = 0.8 and 0.6 (a-b and c-d) plus an isolated
        // query pool so enough non-co-clicked pairs exist.
        let mut stats = CoClickStats::default();
        for q in ["a", "b", "c", "d", "e", "f"] {
            stats.totals.insert(q.into(), 10);
        }
        stats.pairs.insert(("a".into(), "b".into()), (8, 8));
        stats.pairs.insert(("c".into(), "d".into()), (6, 6));
        let set = build_training_set(&stats, &TrainingSetOptions::default()).unwrap();
        assert_eq!(set.positives, 2);
        assert_eq!(set.negatives, 3);
        assert_eq!(set.samples.iter().filter(|s| s.is_negative()).count(), 3);
        for s in set.samples.iter().filter(|s| s.is_negative()) {
            assert_ne!(s.query_a, s.query_b);
            assert!(stats.coclicks(&s.query_a, &s.query_b).is_none());
        }
    }

    #[test]
    fn zero_ratio_disables_negatives() {
        let stats = aggregate_clicks(&fig2_records());
        let opts = TrainingSetOptions {
            negative_ratio: NegativeRatio::PerPositive(0.0),
            ..Default::default()
        };
        let set = build_training_set(&stats, &opts).unwrap();
        assert_eq!(set.negatives, 0);
        assert_eq!(set.samples.len(), 1);
    }

    #[test]
    fn dense_graph_warns() {
        let stats = aggregate_clicks(&fig2_records());
        let set = build_training_set(&stats, &TrainingSetOptions::default()).unwrap();
        assert_eq!(set.negatives, 0);
        assert_eq!(set.requested_negatives, 1);
        assert_eq!(set.warnings.len(), 1);
    }

    #[test]
    fn floor_drops_weak_pairs() {
        let stats = aggregate_clicks(&[
            rec("a", "P1", 1),
            rec("a", "P2", 999),
            rec("b", "P1", 1),
            rec("b", "P3", 999),
        ]);
        let opts = TrainingSetOptions {
            interactive_floor: Some(0.01),
            negative_ratio: NegativeRatio::PerPositive(0.0),
            ..Default::default()
        };
        assert_eq!(build_training_set(&stats, &opts).unwrap().positives, 0);
        let opts = TrainingSetOptions {
            interactive_floor: None,
            ..opts
        };
        assert_eq!(build_training_set(&stats, &opts).unwrap().positives, 1);
    }

    #[test]
    fn empty_stats_rejected() {
        assert_eq!(
            build_training_set(&CoClickStats::default(), &TrainingSetOptions::default()),
            Err(MetricError::EmptyStats)
        );
    }
}
