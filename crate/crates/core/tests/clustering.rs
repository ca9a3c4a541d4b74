//! Agglomerative clustering against a naive reference implementation.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicforge_core::cluster::{
    agglomerate, classify_product_type, cluster_topics, reference_partition, ClusterItem, Linkage,
    ProductTypeIndex, TopicQuery,
};
use topicforge_core::cluster::cosine_distance as cos_dist;
use topicforge_core::synthetic::blobs;
use topicforge_core::EmbeddingVector;

#[test]
fn matches_naive_reference() {
    for linkage in [Linkage::Average, Linkage::Single, Linkage::Complete] {
        for (seed, n) in [(1u64, 30usize), (2, 30), (3, 120), (4, 200)] {
            let items = blobs(seed, n, 6, 8, 0.35);
            for threshold in [0.05, 0.15, 0.4] {
                let fast = agglomerate(&items, threshold, linkage);
                let naive = reference_partition(&items, threshold, linkage);
                assert_eq!(fast.clusters, naive, "{linkage:?} seed {seed} n {n} t {threshold}");
                assert!(fast.merges.iter().all(|m| m.distance <= threshold));
            }
        }
    }
}

#[test]
fn single_linkage_chains_stay_under_threshold() {
    let items = blobs(9, 60, 4, 6, 0.4);
    let t = 0.1;
    let agg = agglomerate(&items, t, Linkage::Single);
    let by_query = |q: &str| &items.iter().find(|i| i.query == q).unwrap().vector;
    // every member reaches the rest of its cluster through ≤ t hops
    for cluster in &agg.clusters {
        let mut reached = vec![cluster[0].clone()];
        let mut frontier = vec![cluster[0].clone()];
        while let Some(cur) = frontier.pop() {
            for other in cluster {
                if !reached.contains(other) && cos_dist(by_query(&cur), by_query(other)) <= t {
                    reached.push(other.clone());
                    frontier.push(other.clone());
                }
            }
        }
        assert_eq!(reached.len(), cluster.len());
    }
}

#[test]
fn ten_types_reduce_distance_evaluations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 16;
    let mut index = ProductTypeIndex::new();
    let mut protos = Vec::new();
    for t in 0..10 {
        let mut v = vec![0.0; dim];
        v[t] = 1.0;
        protos.push(v.clone());
        index.insert(format!("type{t}"), EmbeddingVector::normalized(v));
    }
    let queries: Vec<TopicQuery> = (0..1000)
        .map(|i| {
            let mut v = protos[i % 10].clone();
            for x in &mut v {
                *x += rng.random_range(-0.2..0.2);
            }
            TopicQuery {
                query: format!("q{i:04}"),
                clicks: i as u64,
                vector: EmbeddingVector::normalized(v),
            }
        })
        .collect();
    let two_stage = cluster_topics(&queries, &index, 0.15, Linkage::Average);
    assert_eq!(two_stage.distance_evaluations, 10 * 100 * 99 / 2);

    let direct_items: Vec<ClusterItem> = queries
        .iter()
        .map(|q| ClusterItem {
            query: q.query.clone(),
            clicks: q.clicks,
            vector: q.vector.as_slice().to_vec(),
        })
        .collect();
    let direct = agglomerate(&direct_items, 0.15, Linkage::Average);
    assert_eq!(direct.distance_evaluations, 1000 * 999 / 2);
    let reduction = 1.0 - two_stage.distance_evaluations as f64 / direct.distance_evaluations as f64;
    assert!(reduction >= 0.8, "{reduction}");

    // no cluster spans two product types
    for members in two_stage.clusters().values() {
        let types: std::collections::BTreeSet<_> = members
            .iter()
            .map(|m| &two_stage.assignments[*m].product_type)
            .collect();
        assert_eq!(types.len(), 1);
    }
}

#[test]
fn single_type_equals_direct_agglomeration() {
    let items = blobs(11, 50, 3, 5, 0.3);
    let mut index = ProductTypeIndex::new();
    index.insert("only", EmbeddingVector::normalized(vec![1.0; 5]));
    let queries: Vec<TopicQuery> = items
        .iter()
        .map(|i| TopicQuery {
            query: i.query.clone(),
            clicks: i.clicks,
            vector: EmbeddingVector::normalized(i.vector.clone()),
        })
        .collect();
    let result = cluster_topics(&queries, &index, 0.15, Linkage::Average);
    let direct = agglomerate(&items, 0.15, Linkage::Average);
    let got: Vec<Vec<&str>> = result.clusters().into_values().collect();
    let want: Vec<Vec<&str>> = direct
        .clusters
        .iter()
        .map(|c| c.iter().map(String::as_str).collect())
        .collect();
    assert_eq!(got, want);
    for rep in &direct.representatives {
        assert!(result.is_representative(rep));
    }
}

#[test]
fn classification_matches_exhaustive_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let index: ProductTypeIndex = (0..10)
        .map(|t| {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("t{t}"), EmbeddingVector::normalized(v))
        })
        .collect();
    for _ in 0..100 {
        let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut best = ("", f64::NEG_INFINITY);
        for (label, v) in index.iter() {
            let s = 1.0 - cos_dist(&q, v.as_slice());
            if s > best.1 {
                best = (label, s);
            }
        }
        assert_eq!(classify_product_type(&q, &index), Some(best.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn partition_is_order_independent(seed in 0u64..1000, rot in 0usize..40) {
        let items = blobs(seed, 40, 5, 4, 0.5);
        let mut shuffled = items.clone();
        shuffled.rotate_left(rot);
        shuffled.reverse();
        let a = agglomerate(&items, 0.2, Linkage::Average);
        let b = agglomerate(&shuffled, 0.2, Linkage::Average);
        prop_assert_eq!(&a.clusters, &b.clusters);
        prop_assert_eq!(&a.representatives, &b.representatives);
        // partition: every query exactly once
        let mut all: Vec<&String> = a.clusters.iter().flatten().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), items.len());
    }
}
