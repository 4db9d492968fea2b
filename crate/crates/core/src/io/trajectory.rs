//! JSONL trajectory manifests, one frame per line:
//!
//! ```json
//! {"id": "f0", "depth_path": "depth/f0.bin", "depth_format": "f32",
//!  "intrinsics": {"fx": 64, "fy": 64, "cx": 64, "cy": 64, "w": 128, "h": 128},
//!  "pose": [16 row-major f64], "f_clip_ref": "f0", "f_rnr_ref": null,
//!  "labels": ["couch"], "rgb_path": null}
//! ```
//!
//! Depth is either a raw little-endian f32 raster in meters (`f32`) or a
//! 16-bit grayscale PNG in millimeters (`png16`). When `depth_format` is
//! omitted it is inferred from the extension. Relative paths resolve against
//! the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::FrameRecord;
use crate::geometry::{CameraIntrinsics, DepthImage, RotoTranslation};

/// Rotation blocks read from disk may deviate this much from orthonormal;
/// they are re-orthonormalized on load.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    F32,
    Png16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub depth_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_format: Option<DepthFormat>,
    pub intrinsics: CameraIntrinsics,
    pub pose: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_clip_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_rnr_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_path: Option<PathBuf>,
}

impl ManifestEntry {
    fn format(&self) -> DepthFormat {
        self.depth_format.unwrap_or_else(|| {
            match self.depth_path.extension().and_then(|e| e.to_str()) {
                Some(e) if e.eq_ignore_ascii_case("png") => DepthFormat::Png16,
                _ => DepthFormat::F32,
            }
        })
    }

    pub fn into_record(self, base: &Path) -> Result<FrameRecord> {
        let resolve = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let id = self.id.clone();
        self.intrinsics
            .validate()
            .map_err(|e| Error::frame(&id, e.to_string()))?;
        if self.pose.len() != 16 || self.pose.iter().any(|v| !v.is_finite()) {
            return Err(Error::frame(&id, "pose must be 16 finite values"));
        }
        let pose = RotoTranslation::from_matrix_lenient(
            Matrix4::from_row_slice(&self.pose),
            POSE_TOLERANCE,
        )
        .map_err(|e| Error::frame(&id, e.to_string()))?;
        let depth_path = resolve(&self.depth_path);
        let depth = match self.format() {
            DepthFormat::F32 => read_depth_f32(&depth_path, &self.intrinsics),
            DepthFormat::Png16 => read_depth_png16(&depth_path),
        }
        .map_err(|e| Error::frame(&id, format!("{}: {e}", depth_path.display())))?;
        if depth.width != self.intrinsics.width || depth.height != self.intrinsics.height {
            return Err(Error::frame(
                &id,
                format!(
                    "depth raster is {}x{} but intrinsics declare {}x{}",
                    depth.width, depth.height, self.intrinsics.width, self.intrinsics.height
                ),
            ));
        }
        Ok(FrameRecord {
            id: self.id,
            depth,
            intrinsics: self.intrinsics,
            pose,
            labels: self.labels,
            clip_ref: self.f_clip_ref,
            rnr_ref: self.f_rnr_ref,
            rgb_path: self.rgb_path.as_deref().map(resolve),
        })
    }
}

fn read_depth_f32(path: &Path, intr: &CameraIntrinsics) -> Result<DepthImage> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::input("f32 raster length is not a multiple of 4"));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if data.len() != intr.width * intr.height {
        return Err(Error::input(format!(
            "raster has {} values, intrinsics declare {}x{}",
            data.len(),
            intr.width,
            intr.height
        )));
    }
    DepthImage::new(intr.width, intr.height, data)
}

fn read_depth_png16(path: &Path) -> Result<DepthImage> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::input(e.to_string()))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(i) => i,
        other => {
            return Err(Error::input(format!(
                "expected 16-bit grayscale PNG, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect();
    DepthImage::new(w as usize, h as usize, data)
}

pub fn write_depth_f32(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut bytes = Vec::with_capacity(depth.data.len() * 4);
    for v in &depth.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Millimeter PNG; invalid depths become 0, values saturate at 65.535 m.
pub fn write_depth_png16(path: &Path, depth: &DepthImage) -> Result<()> {
    let raw: Vec<u16> = depth
        .data
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d as f64 * 1000.0).round().min(u16::MAX as f64) as u16
            } else {
                0
            }
        })
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(
        depth.width as u32,
        depth.height as u32,
        raw,
    )
    .expect("raster matches dimensions");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::input(e.to_string()))
}

/// Streams frames from a manifest in file order.
pub struct TrajectoryReader {
    base: PathBuf,
    lines: Lines<BufReader<fs::File>>,
    line_no: usize,
}

impl TrajectoryReader {
    pub fn open(manifest: &Path) -> Result<Self> {
        let file = fs::File::open(manifest)?;
        Ok(TrajectoryReader {
            base: manifest.parent().unwrap_or(Path::new(".")).to_path_buf(),
            lines: BufReader::new(file).lines(),
            line_no: 0,
        })
    }
}

impl Iterator for TrajectoryReader {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = match serde_json::from_str(&line) {
                Ok(e) => e,
                Err(e) => {
                    return Some(Err(Error::frame(
                        &format!("line {}", self.line_no),
                        e.to_string(),
                    )))
                }
            };
            return Some(entry.into_record(&self.base));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoadMode {
    /// First bad frame aborts.
    Strict,
    /// Bad frames are skipped and reported.
    Lenient,
}

#[derive(Debug, Default)]
pub struct TrajectoryLoad {
    pub frames: Vec<FrameRecord>,
    pub skipped: Vec<Error>,
}

pub fn load_trajectory(manifest: &Path, mode: LoadMode) -> Result<TrajectoryLoad> {
    let mut out = TrajectoryLoad::default();
    for item in TrajectoryReader::open(manifest)? {
        match (item, mode) {
            (Ok(f), _) => out.frames.push(f),
            (Err(e), LoadMode::Strict) => return Err(e),
            (Err(e), LoadMode::Lenient) => {
                log::warn!("skipping frame: {e}");
                out.skipped.push(e);
            }
        }
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 10.0,
            fy: 10.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            width: w,
            height: h,
        }
    }

    fn entry(id: &str, path: &str, w: usize, h: usize) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            depth_path: path.into(),
            depth_format: None,
            intrinsics: intr(w, h),
            pose: RotoTranslation::identity().to_row_major().to_vec(),
            f_clip_ref: None,
            f_rnr_ref: None,
            labels: vec!["couch".into()],
            rgb_path: None,
        }
    }

    #[test]
    fn ordered_load_and_dim_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthImage::filled(4, 3, 1.5);
        write_depth_f32(&dir.path().join("a.bin"), &d).unwrap();
        write_depth_png16(&dir.path().join("b.png"), &d).unwrap();
        let manifest = dir.path().join("traj.jsonl");
        write_manifest(
            &manifest,
            &[entry("a", "a.bin", 4, 3), entry("b", "b.png", 4, 3)],
        )
        .unwrap();
        let load = load_trajectory(&manifest, LoadMode::Strict).unwrap();
        let ids: Vec<_> = load.frames.iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!(load.frames[0].depth, load.frames[1].depth);
        assert_eq!(load.frames[1].labels, ["couch"]);

        write_manifest(
            &manifest,
            &[entry("a", "a.bin", 4, 3), entry("bad", "b.png", 5, 3)],
        )
        .unwrap();
        match load_trajectory(&manifest, LoadMode::Strict) {
            Err(Error::Frame { frame, message }) => {
                assert_eq!(frame, "bad");
                assert!(message.contains("5x3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let lenient = load_trajectory(&manifest, LoadMode::Lenient).unwrap();
        assert_eq!(lenient.frames.len(), 1);
        assert_eq!(lenient.skipped.len(), 1);
    }

    #[test]
    fn bad_pose_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("traj.jsonl");
        let mut e = entry("p", "missing.bin", 2, 2);
        e.pose[3] = f64::INFINITY;
        // serde_json writes non-finite numbers as null, which fails to parse
        let mut e2 = entry("q", "missing.bin", 2, 2);
        e2.pose[0] = 2.0;
        write_manifest(&manifest, &[e, e2, entry("r", "missing.bin", 2, 2)]).unwrap();
        let load = load_trajectory(&manifest, LoadMode::Lenient).unwrap();
        assert!(load.frames.is_empty());
        assert_eq!(load.skipped.len(), 3);
        assert!(matches!(&load.skipped[1], Error::Frame { frame, .. } if frame == "q"));
        assert!(matches!(&load.skipped[2], Error::Frame { frame, .. } if frame == "r"));
    }
}
