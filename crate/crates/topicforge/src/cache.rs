//! Bounded, thread-safe cache of facet-page embeddings.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use lru::LruCache;
use topicforge_core::dedup::{Embedder, FacetEmbeddings, FacetPage};
use topicforge_core::EmbeddingVector;

pub const DEFAULT_CAPACITY: usize = 10_000;

/// Computes facet-page title embeddings on demand and keeps the most
/// recently used `capacity` of them.
///
/// The lock is not held while embedding, so concurrent callers may compute
/// the same page twice; the second insert is a no-op.
pub struct CachedFacetEmbeddings<'a, E> {
    embedder: &'a E,
    cache: Mutex<LruCache<String, EmbeddingVector>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<'a, E> CachedFacetEmbeddings<'a, E> {
    pub fn new(embedder: &'a E, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("capacity is at least 1");
        CachedFacetEmbeddings {
            embedder,
            cache: Mutex::new(LruCache::new(cap)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Embedder> FacetEmbeddings for CachedFacetEmbeddings<'_, E> {
    type Error = E::Error;

    fn page_embedding(&self, page: &FacetPage) -> Result<EmbeddingVector, E::Error> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(&page.page_id) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.embedder.embed(&page.title)?;
        let mut cache = self.cache.lock().expect("cache lock");
        if !cache.contains(&page.page_id) {
            cache.put(page.page_id.clone(), v.clone());
        }
        Ok(v)
    }
}
