//! Language-aligned and visual feature providers.
//!
//! Every provider returns unit-norm vectors, so downstream cosine similarity
//! reduces to a dot product against the normalized query.

mod cache;
mod file;
mod remote;
mod synthetic;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use cache::CachedProvider;
pub use file::{FeatureEntry, FileProvider};
pub use remote::{RemoteProvider, RetryPolicy};
pub use synthetic::{fnv1a64, synthetic_scheme, tokenize, SyntheticProvider, XorShift64Star};

use crate::error::{Error, Result};
use crate::frame::FrameRecord;

pub const DEFAULT_D_CLIP: usize = 512;
pub const DEFAULT_D_RNR: usize = 32;

/// A unit-norm feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    /// Normalizes `values` to unit length. Fails on empty, non-finite or zero
    /// input.
    pub fn normalized(values: impl IntoIterator<Item = f64>) -> Result<Self> {
        let raw: Vec<f64> = values.into_iter().collect();
        if raw.is_empty() {
            return Err(Error::input("embedding must have positive dimension"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("embedding has non-finite entries"));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::input("cannot normalize a zero vector"));
        }
        Ok(Embedding {
            values: raw.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::normalized(values.iter().map(|&v| v as f64))
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        (self.dot(other) / (self.norm() * other.norm())).clamp(-1.0, 1.0)
    }
}

/// Source of language-aligned and visual features.
pub trait EmbeddingProvider: Send + Sync {
    fn clip_dim(&self) -> usize;

    fn rnr_dim(&self) -> usize;

    /// Language-aligned embedding of a text prompt.
    fn embed_text(&self, query: &str) -> Result<Embedding>;

    /// Language-aligned embedding of a whole frame.
    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding>;

    /// Visual feature for a frame; `None` when the provider has none.
    fn embed_frame_rnr(&self, frame: &FrameRecord) -> Result<Option<Embedding>>;
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<P> {
    fn clip_dim(&self) -> usize {
        (**self).clip_dim()
    }
    fn rnr_dim(&self) -> usize {
        (**self).rnr_dim()
    }
    fn embed_text(&self, query: &str) -> Result<Embedding> {
        (**self).embed_text(query)
    }
    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding> {
        (**self).embed_frame(frame)
    }
    fn embed_frame_rnr(&self, frame: &FrameRecord) -> Result<Option<Embedding>> {
        (**self).embed_frame_rnr(frame)
    }
}

impl<P: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<P> {
    fn clip_dim(&self) -> usize {
        (**self).clip_dim()
    }
    fn rnr_dim(&self) -> usize {
        (**self).rnr_dim()
    }
    fn embed_text(&self, query: &str) -> Result<Embedding> {
        (**self).embed_text(query)
    }
    fn embed_frame(&self, frame: &FrameRecord) -> Result<Embedding> {
        (**self).embed_frame(frame)
    }
    fn embed_frame_rnr(&self, frame: &FrameRecord) -> Result<Option<Embedding>> {
        (**self).embed_frame_rnr(frame)
    }
}

pub(crate) fn check_query(query: &str) -> Result<&str> {
    let q = query.trim();
    if q.is_empty() {
        Err(Error::input("query must not be empty"))
    } else {
        Ok(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Synthetic,
    File,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub d_clip: usize,
    pub d_rnr: usize,
    /// Base URL of the remote embedding service.
    pub endpoint: Option<String>,
    /// JSONL feature manifest for the file provider.
    pub features: Option<PathBuf>,
    /// Zero disables caching.
    pub cache_capacity: usize,
    pub max_in_flight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Synthetic,
            d_clip: DEFAULT_D_CLIP,
            d_rnr: DEFAULT_D_RNR,
            endpoint: None,
            features: None,
            cache_capacity: 1024,
            max_in_flight: 8,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_clip == 0 || self.d_rnr == 0 {
            return Err(Error::input("feature dimensions must be positive"));
        }
        match self.kind {
            ProviderKind::Remote if self.endpoint.is_none() => {
                Err(Error::input("remote provider requires an endpoint"))
            }
            ProviderKind::File if self.features.is_none() => {
                Err(Error::input("file provider requires a feature manifest"))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>> {
        self.validate()?;
        let inner: Box<dyn EmbeddingProvider> = match self.kind {
            ProviderKind::Synthetic => Box::new(SyntheticProvider::new(self.d_clip, self.d_rnr)),
            ProviderKind::File => Box::new(FileProvider::open(
                self.features.as_ref().expect("validated"),
                self.d_clip,
                self.d_rnr,
            )?),
            ProviderKind::Remote => Box::new(
                RemoteProvider::new(
                    self.endpoint.clone().expect("validated"),
                    self.d_clip,
                    self.d_rnr,
                )
                .with_max_in_flight(self.max_in_flight),
            ),
        };
        Ok(if self.cache_capacity > 0 {
            Box::new(CachedProvider::new(inner, self.cache_capacity))
        } else {
            inner
        })
    }
}
