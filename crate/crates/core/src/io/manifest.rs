//! Dataset manifests: one JSON object per line describing a frame.
//!
//! ```text
//! {"index":0,"image":"images/0000.png","camera_id":"front","w2c":[16 row-major],
//!  "fx":64,"fy":64,"cx":32,"cy":32,"width":64,"height":64,"near":1,"far":8}
//! ```
//! Image paths are relative to the manifest's directory unless absolute.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orthonormality_error, Camera, Intrinsics, SceneFrame, Vec3};

/// Rotations further than this from orthonormal (Frobenius) are rejected.
pub const ORTHONORMAL_TOL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("manifest has no frames")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub index: usize,
    pub image: String,
    pub camera_id: String,
    pub w2c: [f64; 16],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl FrameRecord {
    pub fn from_camera(index: usize, image: String, camera: &Camera) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&camera.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&camera.translation);
        let mut w2c = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                w2c[4 * r + c] = m[(r, c)];
            }
        }
        Self {
            index,
            image,
            camera_id: camera.camera_id.clone(),
            w2c,
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            width: camera.width,
            height: camera.height,
            near: camera.near,
            far: camera.far,
        }
    }

    pub fn camera(&self) -> Result<Camera, String> {
        let m = &self.w2c;
        if [m[12], m[13], m[14], m[15]] != [0.0, 0.0, 0.0, 1.0] {
            return Err("w2c bottom row must be [0, 0, 0, 1]".into());
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let err = orthonormality_error(&rotation);
        if !(err <= ORTHONORMAL_TOL) {
            return Err(format!("rotation is not orthonormal (error {err:.3e})"));
        }
        let intr = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        let cam = Camera {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            rotation,
            translation: Vec3::new(m[3], m[7], m[11]),
            near: self.near,
            far: self.far,
            camera_id: self.camera_id.clone(),
        };
        cam.validate(ORTHONORMAL_TOL).map_err(|e| e.to_string())?;
        Ok(cam)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub image: PathBuf,
    pub camera: Camera,
}

impl Frame {
    pub fn is_test(&self) -> bool {
        is_test_index(self.index)
    }
}

/// Every tenth frame is held out.
pub fn is_test_index(index: usize) -> bool {
    index.is_multiple_of(10)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    /// Centroid of the camera centers.
    pub scene_center: Vec3,
    /// 1.1 times the largest camera distance from the centroid.
    pub scene_radius: f64,
}

impl Dataset {
    pub fn from_frames(frames: Vec<Frame>) -> Self {
        let n = frames.len().max(1) as f64;
        let center = frames.iter().map(|f| f.camera.center()).sum::<Vec3>() / n;
        let max_dist = frames
            .iter()
            .map(|f| (f.camera.center() - center).norm())
            .fold(0.0, f64::max);
        // A single camera (or a rig at one spot) still needs a positive scale.
        let radius = if max_dist > 1e-9 { 1.1 * max_dist } else { 1.0 };
        Self {
            frames,
            scene_center: center,
            scene_radius: radius,
        }
    }

    pub fn scene_frame(&self) -> SceneFrame {
        SceneFrame {
            center: self.scene_center.into(),
            radius: self.scene_radius,
        }
    }

    pub fn train_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| !f.is_test())
    }

    pub fn test_frames(&self) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(|f| f.is_test())
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path, check_images: bool) -> Result<Dataset, ManifestError> {
    let mut frames = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let fail = |message: String| ManifestError::Line { line, message };
        let rec: FrameRecord = serde_json::from_str(raw).map_err(|e| fail(e.to_string()))?;
        if !seen.insert(rec.index) {
            return Err(fail(format!("duplicate frame index {}", rec.index)));
        }
        let camera = rec.camera().map_err(fail)?;
        let image = base_dir.join(&rec.image);
        if check_images && !image.is_file() {
            return Err(fail(format!("image file {} not found", image.display())));
        }
        frames.push(Frame {
            index: rec.index,
            image,
            camera,
        });
    }
    if frames.is_empty() {
        return Err(ManifestError::Empty);
    }
    Ok(Dataset::from_frames(frames))
}

pub fn load_dataset(path: &Path) -> Result<Dataset, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), true)
}

/// Writes one line per frame; image paths under the manifest directory are stored relative.
pub fn write_manifest(dataset: &Dataset, path: &Path) -> Result<(), ManifestError> {
    let io_err = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for f in &dataset.frames {
        let image = f.image.strip_prefix(base).unwrap_or(&f.image).to_string_lossy().into_owned();
        let rec = FrameRecord::from_camera(f.index, image, &f.camera);
        serde_json::to_writer(&mut out, &rec).expect("frame records always serialize");
        out.push(b'\n');
    }
    fs::File::create(path).and_then(|mut file| file.write_all(&out)).map_err(io_err)
}
