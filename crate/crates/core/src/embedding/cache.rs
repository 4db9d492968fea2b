use std::collections::{HashMap, VecDeque};
use std::sync::{Mutex, RwLock};

use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::Result;
use crate::frame::FrameRecord;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Key {
    Text(String),
    Frame { id: String, clip_ref: Option<String> },
}

/// Bounded FIFO cache in front of another provider. Hits return the stored
/// vector unchanged.
pub struct CachedProvider<P> {
    inner: P,
    capacity: usize,
    entries: RwLock<HashMap<Key, Embedding>>,
    order: Mutex<VecDeque<Key>>,
}

impl<P: EmbeddingProvider> CachedProvider<P> {
    pub fn new(inner: P, capacity: usize) -> Self {
        CachedProvider {
            inner,
            capacity: capacity.max(1),
            entries: RwLock::new(HashMap::new()),
            order: Mutex::new(VecDeque::new()),
        }
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_or_insert(&self, key: Key, f: impl FnOnce() -> Result<Embedding>) -> Result<Embedding> {
        if let Some(e) = self.entries.read().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let value = f()?;
        let mut order = self.order.lock().unwrap();
        let mut entries = self.entries.write().unwrap();
        if entries.contains_key(&key) {
            return Ok(entries[&key].clone());
        }
        while entries.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    entries.remove(&old);
                }
                None => break,
            }
        }
        order.push_back(key.clone());
        entries.insert(key, value.clone());
        Ok(value)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedProvider<P> {
    fn clip_dim(&self) -> usize {
        self.inner.clip_dim()
    }

    fn rnr_dim(&self) -> usize {
        self.inner.rnr_dim()
    }

    fn embed_text(&self, query: &str) -> Result<Embedding> {
        self.get_or_insert(Key::Text(query.trim().to_owned()), || {
            self.inner.embed_text(query)
        })
    }

    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding> {
        let key = Key::Frame {
            id: frame.id.clone(),
            clip_ref: frame.clip_ref.clone(),
        };
        self.get_or_insert(key, || self.inner.embed_frame(frame))
    }

    fn embed_frame_rnr(&self, frame: &FrameRecord) -> Result<Option<Embedding>> {
        self.inner.embed_frame_rnr(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::SyntheticProvider;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting {
        inner: SyntheticProvider,
        calls: AtomicUsize,
    }

    impl EmbeddingProvider for Counting {
        fn clip_dim(&self) -> usize {
            self.inner.clip_dim()
        }
        fn rnr_dim(&self) -> usize {
            self.inner.rnr_dim()
        }
        fn embed_text(&self, q: &str) -> Result<Embedding> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.embed_text(q)
        }
        fn embed_frame(&self, f: &FrameRecord) -> Result<Embedding> {
            self.inner.embed_frame(f)
        }
        fn embed_frame_rnr(&self, f: &FrameRecord) -> Result<Option<Embedding>> {
            self.inner.embed_frame_rnr(f)
        }
    }

    #[test]
    fn hits_are_bitwise_equal_and_bounded() {
        let c = CachedProvider::new(
            Counting {
                inner: SyntheticProvider::default(),
                calls: AtomicUsize::new(0),
            },
            2,
        );
        let a = c.embed_text("couch").unwrap();
        let b = c.embed_text("couch").unwrap();
        assert_eq!(a, b);
        assert_eq!(a, SyntheticProvider::default().embed_text("couch").unwrap());
        assert_eq!(c.inner().calls.load(Ordering::SeqCst), 1);
        c.embed_text("floor").unwrap();
        c.embed_text("wall").unwrap();
        assert_eq!(c.len(), 2);
        // evicted, recomputed identically
        assert_eq!(c.embed_text("couch").unwrap(), a);
        assert_eq!(c.inner().calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn errors_are_not_cached() {
        let c = CachedProvider::new(SyntheticProvider::default(), 4);
        assert!(c.embed_text("").is_err());
        assert!(c.is_empty());
    }
}
