//! Cameras, instance boxes, views and scenes.
//!
//! Everything here is immutable once validated. Views keep their instance
//! order stable because distance matrices address instances by index.

mod io;
mod matching;
mod sidecar;

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_scene, parse_scene, save_scene, scene_to_json};
pub use matching::{assign_detections_to_gt, assign_detections_with, iou, FreshIds, DEFAULT_IOU_FLOOR};
pub use sidecar::{
    decode_embeddings, encode_embeddings, load_embeddings, save_embeddings, SIDECAR_MAGIC,
    SIDECAR_VERSION,
};

const ROTATION_TOL: f64 = 1e-9;

/// Pinhole camera with a world-to-camera rigid pose.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub camera_id: u32,
    pub intrinsics: Matrix3<f64>,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation, meters.
    pub translation: Vector3<f64>,
    /// (width, height) in pixels.
    pub image_size: (u32, u32),
}

impl CameraModel {
    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[(1, 2)]
    }

    /// Length of the image diagonal in pixels.
    pub fn image_diagonal(&self) -> f64 {
        let (w, h) = self.image_size;
        (w as f64).hypot(h as f64)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidCamera {
            camera_id: self.camera_id,
            reason,
        };
        if !self.intrinsics.iter().all(|v| v.is_finite())
            || !self.rotation.iter().all(|v| v.is_finite())
            || !self.translation.iter().all(|v| v.is_finite())
        {
            return Err(fail("non-finite parameter".into()));
        }
        let rrt = self.rotation * self.rotation.transpose();
        let ortho_err = (rrt - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOL {
            return Err(fail(format!(
                "rotation is not orthonormal (max |RRᵀ - I| = {ortho_err:e})"
            )));
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(fail(format!("rotation determinant {det} != 1")));
        }
        let (w, h) = self.image_size;
        if w == 0 || h == 0 {
            return Err(fail("image size must be positive".into()));
        }
        if self.fx() <= 0.0 || self.fy() <= 0.0 {
            return Err(fail("focal lengths must be positive".into()));
        }
        if !(0.0..=w as f64).contains(&self.cx()) || !(0.0..=h as f64).contains(&self.cy()) {
            return Err(fail("principal point outside the image".into()));
        }
        Ok(())
    }
}

/// Axis-aligned box in continuous pixel coordinates, y growing downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [(self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5]
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoxSource {
    GroundTruth,
    Detection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBox {
    pub bbox: BBox,
    pub class_id: i64,
    /// Shared across views for the same physical object. Negative ids are
    /// reserved for detections that matched no ground truth.
    pub instance_id: i64,
    pub source: BoxSource,
}

impl InstanceBox {
    pub fn ground_truth(bbox: BBox, class_id: i64, instance_id: i64) -> Self {
        Self {
            bbox,
            class_id,
            instance_id,
            source: BoxSource::GroundTruth,
        }
    }

    pub fn detection(bbox: BBox, class_id: i64) -> Self {
        Self {
            bbox,
            class_id,
            instance_id: -1,
            source: BoxSource::Detection,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub camera: CameraModel,
    pub image_path: Option<String>,
    pub instances: Vec<InstanceBox>,
}

impl SceneView {
    pub fn camera_id(&self) -> u32 {
        self.camera.camera_id
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let mut seen = HashSet::new();
        for inst in &self.instances {
            if !inst.bbox.is_valid() {
                return Err(Error::InvalidBox {
                    camera_id: self.camera.camera_id,
                    instance_id: inst.instance_id,
                    reason: format!(
                        "need x1 < x2 and y1 < y2, got ({}, {}, {}, {})",
                        inst.bbox.x1, inst.bbox.y1, inst.bbox.x2, inst.bbox.y2
                    ),
                });
            }
            if !seen.insert(inst.instance_id) {
                return Err(Error::DuplicateInstance {
                    camera_id: self.camera.camera_id,
                    instance_id: inst.instance_id,
                });
            }
        }
        Ok(())
    }

    /// Index of the instance carrying `instance_id`, if present.
    pub fn index_of(&self, instance_id: i64) -> Option<usize> {
        self.instances
            .iter()
            .position(|i| i.instance_id == instance_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub views: Vec<SceneView>,
    pub difficulty: Difficulty,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if self.views.len() < 2 {
            return Err(Error::InvalidScene(format!(
                "scene {} has {} view(s), need at least 2",
                self.scene_id,
                self.views.len()
            )));
        }
        let mut cams = HashSet::new();
        for view in &self.views {
            if !cams.insert(view.camera_id()) {
                return Err(Error::InvalidScene(format!(
                    "camera {} has more than one view",
                    view.camera_id()
                )));
            }
            view.validate()?;
        }
        Ok(())
    }

    pub fn view(&self, camera_id: u32) -> Option<&SceneView> {
        self.views.iter().find(|v| v.camera_id() == camera_id)
    }

    /// All unordered view pairs as `(low camera id, high camera id)`, sorted.
    pub fn view_pairs(&self) -> Vec<(u32, u32)> {
        let mut ids: Vec<u32> = self.views.iter().map(SceneView::camera_id).collect();
        ids.sort_unstable();
        let mut pairs = Vec::with_capacity(ids.len() * ids.len().saturating_sub(1) / 2);
        for (i, &a) in ids.iter().enumerate() {
            for &b in &ids[i + 1..] {
                pairs.push((a, b));
            }
        }
        pairs
    }

    pub fn instance_count(&self) -> usize {
        self.views.iter().map(|v| v.instances.len()).sum()
    }
}

/// Appearance and surrounding vectors for one instance in one view.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPair {
    pub appearance: Vec<f32>,
    pub surrounding: Vec<f32>,
}

/// Per-(camera, instance) feature vectors, stored at sidecar precision.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: std::collections::BTreeMap<(u32, i64), EmbeddingPair>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be positive".into()));
        }
        Ok(Self {
            dim,
            entries: Default::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces an entry after checking length and finiteness.
    pub fn insert(&mut self, camera_id: u32, instance_id: i64, pair: EmbeddingPair) -> Result<()> {
        for v in [&pair.appearance, &pair.surrounding] {
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: v.len(),
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite("embedding vector"));
            }
        }
        self.entries.insert((camera_id, instance_id), pair);
        Ok(())
    }

    pub fn get(&self, camera_id: u32, instance_id: i64) -> Option<&EmbeddingPair> {
        self.entries.get(&(camera_id, instance_id))
    }

    pub fn require(&self, camera_id: u32, instance_id: i64) -> Result<&EmbeddingPair> {
        self.get(camera_id, instance_id)
            .ok_or(Error::MissingEmbedding {
                camera_id,
                instance_id,
            })
    }

    /// Entries in ascending (camera_id, instance_id) order.
    pub fn iter(&self) -> impl Iterator<Item = (&(u32, i64), &EmbeddingPair)> {
        self.entries.iter()
    }

    /// Fails with the first key that does not resolve to an instance of `scene`.
    pub fn check_against(&self, scene: &Scene) -> Result<()> {
        for &(camera_id, instance_id) in self.entries.keys() {
            let resolved = scene
                .view(camera_id)
                .is_some_and(|v| v.index_of(instance_id).is_some());
            if !resolved {
                return Err(Error::DanglingEmbedding {
                    camera_id,
                    instance_id,
                });
            }
        }
        Ok(())
    }
}
