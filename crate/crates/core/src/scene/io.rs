//! Scene JSON reader and writer.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{BBox, BoxSource, CameraModel, Difficulty, InstanceBox, Scene, SceneView};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    scene_id: String,
    difficulty: Difficulty,
    cameras: Vec<CameraDoc>,
    views: Vec<ViewDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    camera_id: u32,
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewDoc {
    camera_id: u32,
    image_path: Option<String>,
    instances: Vec<InstanceDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    bbox: [f64; 4],
    class_id: i64,
    instance_id: i64,
    source: SourceDoc,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
enum SourceDoc {
    #[serde(rename = "gt")]
    Gt,
    #[serde(rename = "det")]
    Det,
}

fn row_major(m: &Matrix3<f64>) -> [f64; 9] {
    let mut out = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = m[(r, c)];
        }
    }
    out
}

impl From<&CameraModel> for CameraDoc {
    fn from(cam: &CameraModel) -> Self {
        Self {
            camera_id: cam.camera_id,
            k: row_major(&cam.intrinsics),
            r: row_major(&cam.rotation),
            t: [cam.translation.x, cam.translation.y, cam.translation.z],
            width: cam.image_size.0,
            height: cam.image_size.1,
        }
    }
}

impl From<&CameraDoc> for CameraModel {
    fn from(doc: &CameraDoc) -> Self {
        Self {
            camera_id: doc.camera_id,
            intrinsics: Matrix3::from_row_slice(&doc.k),
            rotation: Matrix3::from_row_slice(&doc.r),
            translation: Vector3::from_column_slice(&doc.t),
            image_size: (doc.width, doc.height),
        }
    }
}

/// Serializes a scene to the canonical JSON document.
pub fn scene_to_json(scene: &Scene) -> String {
    let doc = SceneDoc {
        scene_id: scene.scene_id.clone(),
        difficulty: scene.difficulty,
        cameras: scene.views.iter().map(|v| CameraDoc::from(&v.camera)).collect(),
        views: scene
            .views
            .iter()
            .map(|v| ViewDoc {
                camera_id: v.camera.camera_id,
                image_path: v.image_path.clone(),
                instances: v
                    .instances
                    .iter()
                    .map(|i| InstanceDoc {
                        bbox: [i.bbox.x1, i.bbox.y1, i.bbox.x2, i.bbox.y2],
                        class_id: i.class_id,
                        instance_id: i.instance_id,
                        source: match i.source {
                            BoxSource::GroundTruth => SourceDoc::Gt,
                            BoxSource::Detection => SourceDoc::Det,
                        },
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("scene document is always serializable")
}

/// Parses and validates a scene JSON document.
pub fn parse_scene(text: &str) -> Result<Scene> {
    let doc: SceneDoc = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;

    let mut cameras: HashMap<u32, CameraModel> = HashMap::new();
    for cam in &doc.cameras {
        if cameras.insert(cam.camera_id, cam.into()).is_some() {
            return Err(Error::Schema(format!(
                "camera {} declared twice",
                cam.camera_id
            )));
        }
    }

    let mut views = Vec::with_capacity(doc.views.len());
    for view in doc.views {
        let camera = cameras.remove(&view.camera_id).ok_or_else(|| {
            Error::Schema(format!(
                "view references unknown or already used camera {}",
                view.camera_id
            ))
        })?;
        let instances = view
            .instances
            .into_iter()
            .map(|i| InstanceBox {
                bbox: BBox::new(i.bbox[0], i.bbox[1], i.bbox[2], i.bbox[3]),
                class_id: i.class_id,
                instance_id: i.instance_id,
                source: match i.source {
                    SourceDoc::Gt => BoxSource::GroundTruth,
                    SourceDoc::Det => BoxSource::Detection,
                },
            })
            .collect();
        views.push(SceneView {
            camera,
            image_path: view.image_path,
            instances,
        });
    }
    if let Some(id) = cameras.keys().min() {
        return Err(Error::Schema(format!("camera {id} has no view")));
    }

    let scene = Scene {
        scene_id: doc.scene_id,
        views,
        difficulty: doc.difficulty,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scene_to_json(scene)).map_err(|e| Error::io(path, e))
}
