use std::collections::HashMap;
use std::sync::Arc;

use super::{Seed, SeedId, StoreAccess, StoreError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Per-worker read-through seed cache. Iteration order is insertion order,
/// which keeps splice-partner choice reproducible.
#[derive(Debug, Default)]
pub struct LocalCache {
    map: HashMap<SeedId, (usize, Arc<Seed>)>,
    order: Vec<SeedId>,
    stats: CacheStats,
}

impl LocalCache {
    pub fn new() -> Self {
        LocalCache::default()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, id: &SeedId) -> bool {
        self.map.contains_key(id)
    }

    pub fn peek(&self, id: &SeedId) -> Option<&Arc<Seed>> {
        self.map.get(id).map(|(_, s)| s)
    }

    /// Position of `id` in insertion order.
    pub fn position(&self, id: &SeedId) -> Option<usize> {
        self.map.get(id).map(|(i, _)| *i)
    }

    pub fn nth(&self, i: usize) -> &Arc<Seed> {
        &self.map[&self.order[i]].1
    }

    pub fn insert(&mut self, seed: Seed) -> Arc<Seed> {
        if let Some((_, s)) = self.map.get(&seed.id) {
            return s.clone();
        }
        let id = seed.id;
        let seed = Arc::new(seed);
        self.map.insert(id, (self.order.len(), seed.clone()));
        self.order.push(id);
        seed
    }

    /// Returns a cached copy, or fetches from `store` and verifies the hash.
    pub fn get_or_fetch(
        &mut self,
        id: SeedId,
        store: &mut dyn StoreAccess,
    ) -> Result<Arc<Seed>, StoreError> {
        if let Some((_, s)) = self.map.get(&id) {
            self.stats.hits += 1;
            return Ok(s.clone());
        }
        self.stats.misses += 1;
        let seed = store.get_seed(id)?;
        if seed.id != id || !seed.verify() {
            return Err(StoreError::HashMismatch(id));
        }
        Ok(self.insert(seed))
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seedstore::{FuzzStatus, InProcessStore, SeedStore, StoreConfig};

    #[test]
    fn second_get_is_local() {
        let mut store = InProcessStore(Arc::new(SeedStore::new(StoreConfig::default())));
        let id = store
            .put_seed(Seed::new(b"abc".to_vec(), None, 0, "corpus"), FuzzStatus::initial(1, 1))
            .unwrap()
            .id;
        let mut cache = LocalCache::new();
        cache.get_or_fetch(id, &mut store).unwrap();
        cache.get_or_fetch(id, &mut store).unwrap();
        assert_eq!(cache.stats(), CacheStats { hits: 1, misses: 1 });
    }

    struct Tampering;
    impl StoreAccess for Tampering {
        fn put_seed(&mut self, _: Seed, _: FuzzStatus) -> Result<crate::seedstore::PutOutcome, StoreError> {
            unimplemented!()
        }
        fn get_seed(&mut self, id: SeedId) -> Result<Seed, StoreError> {
            Ok(Seed {
                id,
                content: b"not what was hashed".to_vec(),
                parent: None,
                discovered_at: 0,
                origin: "x".into(),
            })
        }
        fn get_status(&mut self, id: SeedId) -> Result<FuzzStatus, StoreError> {
            Err(StoreError::NotFound(id))
        }
        fn update_status(&mut self, id: SeedId, _: crate::seedstore::StatusDelta) -> Result<FuzzStatus, StoreError> {
            Err(StoreError::NotFound(id))
        }
        fn pop_pending(&mut self, _: usize) -> Result<Vec<SeedId>, StoreError> {
            Ok(vec![])
        }
        fn activate(&mut self, id: SeedId, _: [u8; 32]) -> Result<crate::seedstore::ActivateOutcome, StoreError> {
            Err(StoreError::NotFound(id))
        }
        fn discard_seed(&mut self, _: SeedId) -> Result<(), StoreError> {
            Ok(())
        }
        fn put_crash(&mut self, _: crate::seedstore::CrashRecord) -> Result<bool, StoreError> {
            Ok(false)
        }
        fn list_active(&mut self, _: usize) -> Result<Vec<SeedId>, StoreError> {
            Ok(vec![])
        }
    }

    #[test]
    fn tampered_content_detected() {
        let mut cache = LocalCache::new();
        let err = cache.get_or_fetch(SeedId::of(b"original"), &mut Tampering).unwrap_err();
        assert!(matches!(err, StoreError::HashMismatch(_)));
        assert!(cache.is_empty());
    }
}
