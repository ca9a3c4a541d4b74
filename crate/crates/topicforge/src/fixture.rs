//! The small seeded reference dataset used by the CLI tests and the
//! acceptance run.
//!
//! Clicks follow the catalog structure: a query clicks the facet pages
//! whose facet values it mentions (occasionally pages matching only part
//! of it) and bare product-type queries click the shelf, so co-clicked
//! queries share intent. A repeated row and a malformed row are
//! planted to exercise ingest reporting.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topicforge_core::ingest::{ClickRecord, PageRecord, PageType};
use topicforge_core::synthetic::{planted_catalog, MODIFIERS};
use topicforge_core::topicpage::CatalogItem;

use crate::formats::{self, CLICK_FIELDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureSize {
    pub shelves: usize,
    pub facet_pages: usize,
    pub queries: usize,
    pub items_per_page: usize,
}

impl Default for FixtureSize {
    fn default() -> Self {
        FixtureSize {
            shelves: 6,
            facet_pages: 8,
            queries: 360,
            items_per_page: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub clicks: Vec<ClickRecord>,
    pub catalog: Vec<PageRecord>,
    pub items: Vec<CatalogItem>,
    pub lexicon: Vec<formats::LexiconEntry>,
    pub blocklist: Vec<String>,
}

pub fn generate(size: FixtureSize, seed: u64) -> Fixture {
    let planted = planted_catalog(size.shelves, size.facet_pages, size.queries, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let queries: BTreeSet<String> = planted.queries.iter().cloned().collect();

    let mut items = Vec::new();
    for page in planted.catalog.iter().filter(|p| p.page_type == PageType::Facet) {
        for n in 0..size.items_per_page {
            items.push(CatalogItem {
                item_id: format!("item-{}-{n}", page.page_id.trim_start_matches("facet-")),
                title: format!("{} {}", page.title, ["classic fit", "new season", "everyday", "premium", "limited"][n % 5]),
            });
        }
    }

    let mut clicks = Vec::new();
    for q in &queries {
        let words: BTreeSet<&str> = q.split(' ').collect();
        for page in &planted.catalog {
            if !words.contains(page.product_type.as_str()) {
                continue;
            }
            let matched = page.facets.iter().filter(|f| words.contains(f.value.as_str())).count();
            let weight = match page.page_type {
                PageType::Shelf if words.len() == 1 || rng.random_bool(0.1) => 3,
                PageType::Shelf => continue,
                _ if matched == page.facets.len() => 10,
                _ if matched > 0 && rng.random_bool(0.25) => 1,
                _ => continue,
            };
            let c = weight * rng.random_range(1..=4u64);
            clicks.push(ClickRecord {
                query: q.clone(),
                page_id: page.page_id.clone(),
                page_type: page.page_type,
                clicks: c,
                impressions: c * rng.random_range(3..=9u64),
            });
        }
        if rng.random_bool(0.3) {
            let item = &items[rng.random_range(0..items.len())];
            clicks.push(ClickRecord {
                query: q.clone(),
                page_id: item.item_id.clone(),
                page_type: PageType::Item,
                clicks: 1,
                impressions: rng.random_range(2..=6u64),
            });
        }
    }
    if let Some(first) = clicks.first().cloned() {
        clicks.push(first);
    }

    let lexicon = planted
        .lexicon
        .iter()
        .map(|(name, values)| formats::LexiconEntry {
            facet_name: name.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
        })
        .collect();
    Fixture {
        clicks,
        catalog: planted.catalog,
        items,
        lexicon,
        blocklist: vec![MODIFIERS[0].to_string()],
    }
}

/// Pipeline configuration matching the files written by [`write`].
pub const CONFIG: &str = r#"seed = 7
workdir = "work"

[inputs]
click_log = "clicks.csv"
catalog = "catalog.jsonl"
lexicon = "lexicon.jsonl"
blocklist = "blocklist.txt"
items = "items.jsonl"

[model]
model_dim = 16
num_layers = 1
num_heads = 2
ffn_hidden_dim = 32
output_dim = 16

[train]
# the literal negative term flattens every embedding on this data
negative_loss = "complement"
learning_rate = 0.003
batch_size = 32
epochs = 30

[finetune]
learning_rate = 0.01
batch_size = 16
epochs = 30

[select]
quota = 40

[emit]
k = 24

[experiment]
start = "2021-01-01"
days = 120
"#;

pub fn write(dir: &Path, fixture: &Fixture) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = csv::Writer::from_path(dir.join("clicks.csv"))?;
    w.write_record(CLICK_FIELDS)?;
    for r in &fixture.clicks {
        w.write_record([
            r.query.as_str(),
            r.page_id.as_str(),
            r.page_type.as_str(),
            &r.clicks.to_string(),
            &r.impressions.to_string(),
        ])?;
    }
    // one short row, reported and skipped by ingest
    w.write_record(["broken row", "shelf-00", "shelf", "", ""])?;
    w.flush()?;
    formats::write_jsonl(&dir.join("catalog.jsonl"), &fixture.catalog)?;
    formats::write_jsonl(&dir.join("items.jsonl"), &fixture.items)?;
    formats::write_jsonl(&dir.join("lexicon.jsonl"), &fixture.lexicon)?;
    let mut block = String::from("# queries containing these terms never become topics\n");
    for t in &fixture.blocklist {
        block.push_str(t);
        block.push('\n');
    }
    fs::write(dir.join("blocklist.txt"), block)?;
    fs::write(dir.join("topicforge.toml"), CONFIG)?;
    Ok(())
}
