//! Seeded synthetic corpora for tests, fixtures and benchmarks.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::convert::Infallible;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cluster::ClusterItem;
use crate::dedup::Embedder;
use crate::ingest::{Facet, PageRecord, PageType};
use crate::metric::QueryPairSample;
use crate::model::{EmbeddingVector, ModelConfig, ModelError, ModelParams};
use crate::tokenize::TokenSequence;
use crate::text::{stable_hash, tokens};
use crate::tokenize::FacetLexicon;

/// Order-insensitive bag of Gaussian token vectors, normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashedEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(token) ^ self.seed);
        (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }
}

impl Embedder for HashedEmbedder {
    type Error = Infallible;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, Infallible> {
        let mut sum = alloc::vec![0.0; self.dim];
        for tok in tokens(text) {
            for (s, x) in sum.iter_mut().zip(self.token_vector(tok)) {
                *s += x;
            }
        }
        Ok(EmbeddingVector::normalized(sum))
    }
}

pub const PRODUCT_TYPES: [&str; 12] = [
    "shoes", "bags", "jackets", "watches", "lamps", "chairs", "tables", "rugs", "hats", "gloves", "scarves", "belts",
];
pub const COLORS: [&str; 8] = ["red", "blue", "black", "white", "green", "brown", "pink", "grey"];
pub const MATERIALS: [&str; 6] = ["leather", "cotton", "wool", "canvas", "suede", "denim"];
pub const STYLES: [&str; 6] = ["vintage", "modern", "casual", "classic", "sporty", "rustic"];
pub const MODIFIERS: [&str; 6] = ["cheap", "best", "sale", "mens", "womens", "kids"];

const FACETS: [(&str, &[&str]); 3] = [("color", &COLORS), ("material", &MATERIALS), ("style", &STYLES)];

#[derive(Debug, Clone)]
pub struct PlantedCatalog {
    pub catalog: Vec<PageRecord>,
    pub lexicon: FacetLexicon,
    pub queries: Vec<String>,
}

/// A catalog of `shelves` shelf pages with `facet_pages` facet pages each,
/// a lexicon covering every facet value, and `queries` candidate queries.
///
/// Facet values appear verbatim in page titles. Roughly a third of the
/// queries are shuffled facet-page titles, a tenth are shelf titles and
/// the rest are fresh facet combinations, some with a modifier word.
pub fn planted_catalog(shelves: usize, facet_pages: usize, queries: usize, seed: u64) -> PlantedCatalog {
    assert!(shelves <= PRODUCT_TYPES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut catalog = Vec::new();
    let mut titles = Vec::new();
    for (s, &pt) in PRODUCT_TYPES[..shelves].iter().enumerate() {
        catalog.push(PageRecord {
            page_id: format!("shelf-{s:02}"),
            page_type: PageType::Shelf,
            title: pt.to_string(),
            product_type: pt.to_string(),
            facets: Vec::new(),
        });
        let mut seen = BTreeSet::new();
        let mut f = 0;
        while f < facet_pages {
            let facets = random_facets(&mut rng);
            let title = facet_title(&facets, pt);
            if !seen.insert(title.clone()) {
                continue;
            }
            catalog.push(PageRecord {
                page_id: format!("facet-{s:02}-{f:03}"),
                page_type: PageType::Facet,
                title: title.clone(),
                product_type: pt.to_string(),
                facets,
            });
            titles.push(title);
            f += 1;
        }
    }

    let mut lexicon = FacetLexicon::new();
    for (name, values) in FACETS {
        for v in values {
            lexicon.insert(name, v);
        }
    }

    let mut out = Vec::with_capacity(queries);
    while out.len() < queries {
        let roll: f64 = rng.random();
        let q = if roll < 0.35 && !titles.is_empty() {
            let mut words: Vec<&str> = titles[rng.random_range(0..titles.len())].split(' ').collect();
            words.shuffle(&mut rng);
            words.join(" ")
        } else if roll < 0.45 {
            PRODUCT_TYPES[rng.random_range(0..shelves)].to_string()
        } else {
            let pt = PRODUCT_TYPES[rng.random_range(0..shelves)];
            let mut q = facet_title(&random_facets(&mut rng), pt);
            if rng.random_bool(0.5) {
                q = format!("{} {q}", MODIFIERS[rng.random_range(0..MODIFIERS.len())]);
            }
            q
        };
        out.push(q);
    }
    PlantedCatalog {
        catalog,
        lexicon,
        queries: out,
    }
}

fn random_facets(rng: &mut ChaCha8Rng) -> Vec<Facet> {
    let count = rng.random_range(1..=2);
    let mut names: Vec<usize> = (0..FACETS.len()).collect();
    names.shuffle(rng);
    let mut picked: Vec<usize> = names[..count].to_vec();
    picked.sort();
    picked
        .into_iter()
        .map(|i| {
            let (name, values) = FACETS[i];
            Facet {
                name: name.to_string(),
                value: values[rng.random_range(0..values.len())].to_string(),
            }
        })
        .collect()
}

fn facet_title(facets: &[Facet], product_type: &str) -> String {
    let mut words: Vec<&str> = facets.iter().map(|f| f.value.as_str()).collect();
    words.push(product_type);
    words.join(" ")
}

/// A left-aligned sequence with 1..=len active positions and PAD after.
pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize, vocab: u32) -> TokenSequence {
    let active = rng.random_range(1..=len);
    let ids = (0..len)
        .map(|i| if i < active { rng.random_range(1..vocab) } else { 0 })
        .collect();
    let mask = (0..len).map(|i| i < active).collect();
    TokenSequence { ids, mask }
}

/// Initialized parameters with uniform ±`noise` added to every coordinate,
/// so no gain is exactly 1 and no bias exactly 0.
pub fn perturbed_params(config: ModelConfig, seed: u64, noise: f64) -> Result<ModelParams, ModelError> {
    let mut params = ModelParams::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    for v in params.values_mut() {
        *v += rng.random_range(-noise..noise);
    }
    Ok(params)
}

pub const GROUP_A: [&str; 6] = ["running", "trail", "sneakers", "shoes", "jogging", "boots"];
pub const GROUP_B: [&str; 6] = ["laptop", "notebook", "charger", "keyboard", "monitor", "usb"];

/// Two groups of one- and two-word queries over disjoint word lists.
#[derive(Debug, Clone)]
pub struct TwoClusterCorpus {
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
    /// Trailing queries of each group excluded from `samples`.
    pub held_out: usize,
    /// Intra-group pairs with I in [0.6, 1.0) and all cross-group pairs at −1.
    pub samples: Vec<QueryPairSample>,
}

impl TwoClusterCorpus {
    pub fn held_a(&self) -> &[String] {
        &self.group_a[self.group_a.len() - self.held_out..]
    }

    pub fn held_b(&self) -> &[String] {
        &self.group_b[self.group_b.len() - self.held_out..]
    }

    pub fn all_queries(&self) -> impl Iterator<Item = &str> {
        self.group_a.iter().chain(&self.group_b).map(String::as_str)
    }

    /// Mean cosine of held-out queries to their own group minus mean cosine
    /// to the other group.
    pub fn separation<E>(&self, mut embed: impl FnMut(&str) -> Result<EmbeddingVector, E>) -> Result<f64, E> {
        let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
        for (held, own, other) in [
            (self.held_a(), &self.group_a, &self.group_b),
            (self.held_b(), &self.group_b, &self.group_a),
        ] {
            for h in held {
                let hv = embed(h)?;
                for q in own.iter().filter(|q| *q != h) {
                    intra += hv.cosine(&embed(q)?);
                    n_intra += 1;
                }
                for q in other {
                    inter += hv.cosine(&embed(q)?);
                    n_inter += 1;
                }
            }
        }
        Ok(intra / n_intra as f64 - inter / n_inter as f64)
    }
}

fn group_queries(words: &[&str], count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut out = Vec::new();
    while out.len() < count {
        let a = words[rng.random_range(0..words.len())];
        let b = words[rng.random_range(0..words.len())];
        let q = if a == b { a.to_string() } else { format!("{a} {b}") };
        if !out.contains(&q) {
            out.push(q);
        }
    }
    out
}

pub fn two_cluster_corpus(per_group: usize, held_out: usize, seed: u64) -> TwoClusterCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group_a = group_queries(&GROUP_A, per_group, &mut rng);
    let group_b = group_queries(&GROUP_B, per_group, &mut rng);
    let a_train = &group_a[..per_group - held_out];
    let b_train = &group_b[..per_group - held_out];
    let mut samples = Vec::new();
    for group in [a_train, b_train] {
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                samples.push(QueryPairSample {
                    query_a: group[i].clone(),
                    query_b: group[j].clone(),
                    interactive: rng.random_range(0.6..1.0),
                });
            }
        }
    }
    for x in a_train {
        for y in b_train {
            samples.push(QueryPairSample {
                query_a: x.clone(),
                query_b: y.clone(),
                interactive: QueryPairSample::NEGATIVE,
            });
        }
    }
    TwoClusterCorpus {
        group_a,
        group_b,
        held_out,
        samples,
    }
}

/// `n` points scattered uniformly within ±`spread` of a few random centers.
pub fn blobs(seed: u64, n: usize, centers: usize, dim: usize, spread: f64) -> Vec<ClusterItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cs: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    (0..n)
        .map(|i| {
            let c = &cs[rng.random_range(0..centers)];
            ClusterItem {
                query: format!("query {i:04}"),
                clicks: rng.random_range(0..1000),
                vector: c.iter().map(|x| x + rng.random_range(-spread..spread)).collect(),
            }
        })
        .collect()
}
