use std::path::PathBuf;

use crate::embedding::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthImage, RotoTranslation};

/// A trajectory entry before its features are resolved: geometry plus the
/// references a provider needs to produce embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub id: String,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub pose: RotoTranslation,
    /// Object labels visible in the frame. Only the synthetic provider reads
    /// these.
    pub labels: Vec<String>,
    pub clip_ref: Option<String>,
    pub rnr_ref: Option<String>,
    pub rgb_path: Option<PathBuf>,
}

impl FrameRecord {
    pub fn new(
        id: impl Into<String>,
        depth: DepthImage,
        intrinsics: CameraIntrinsics,
        pose: RotoTranslation,
    ) -> Self {
        FrameRecord {
            id: id.into(),
            depth,
            intrinsics,
            pose,
            labels: Vec::new(),
            clip_ref: None,
            rnr_ref: None,
            rgb_path: None,
        }
    }

    pub fn with_labels<S: Into<String>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }
}

/// Visual (non-language) features attached to a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum RnrFeature {
    /// One vector broadcast to every projected pixel.
    Frame(Embedding),
    /// Row-major `height × width × dim` per-pixel features.
    PerPixel { dim: usize, values: Vec<f32> },
}

impl RnrFeature {
    pub fn dim(&self) -> usize {
        match self {
            RnrFeature::Frame(e) => e.dim(),
            RnrFeature::PerPixel { dim, .. } => *dim,
        }
    }
}

/// One observation ready for registration.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedFrame {
    pub id: String,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub pose: RotoTranslation,
    pub f_clip: Embedding,
    /// Absent visual features contribute zeros to the visual block.
    pub f_rnr: Option<RnrFeature>,
}

impl PosedFrame {
    /// Resolves a record's features through `provider`.
    pub fn from_record(record: FrameRecord, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let f_clip = provider.embed_frame(&record)?;
        let f_rnr = provider.embed_frame_rnr(&record)?.map(RnrFeature::Frame);
        Ok(PosedFrame {
            id: record.id,
            depth: record.depth,
            intrinsics: record.intrinsics,
            pose: record.pose,
            f_clip,
            f_rnr,
        })
    }

    pub fn validate(&self, d_clip: usize, d_rnr: usize) -> Result<()> {
        if self.depth.width != self.intrinsics.width || self.depth.height != self.intrinsics.height
        {
            return Err(Error::frame(
                &self.id,
                format!(
                    "depth is {}x{} but intrinsics declare {}x{}",
                    self.depth.width,
                    self.depth.height,
                    self.intrinsics.width,
                    self.intrinsics.height
                ),
            ));
        }
        if self.f_clip.dim() != d_clip {
            return Err(Error::frame(
                &self.id,
                format!("language feature has dim {}, map expects {d_clip}", self.f_clip.dim()),
            ));
        }
        match &self.f_rnr {
            Some(f) if f.dim() != d_rnr => Err(Error::frame(
                &self.id,
                format!("visual feature has dim {}, map expects {d_rnr}", f.dim()),
            )),
            Some(RnrFeature::PerPixel { dim, values })
                if values.len() != dim * self.depth.width * self.depth.height =>
            {
                Err(Error::frame(&self.id, "per-pixel visual feature size mismatch"))
            }
            _ => Ok(()),
        }
    }
}
