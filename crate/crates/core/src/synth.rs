//! Deterministic tabletop simulator.
//!
//! Objects are cuboids on (or above) a square table centered at the world
//! origin, cameras sit on an upper hemisphere looking at the table, and boxes
//! come from projecting each cuboid. Appearance lives only in oracle
//! embeddings, so no pixels are rendered.
//!
//! Every random quantity is drawn from its own ChaCha stream keyed by the
//! scene seed, so changing one knob (say the identical fraction) leaves the
//! unrelated draws untouched.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descriptors::crop_with_zoom_out;
use crate::error::{Error, Result};
use crate::geometry::{line_of_sight, look_at_camera, point_depth, project_point};
use crate::scene::{
    save_embeddings, save_scene, BBox, CameraModel, Difficulty, EmbeddingPair, EmbeddingTable,
    InstanceBox, Scene, SceneView,
};

pub const DEFAULT_EMBEDDING_DIM: usize = 128;
pub const CLASS_COUNT: i64 = 120;

const RADIUS_RANGE: (f64, f64) = (0.5, 1.2);
const ELEVATION_RANGE_DEG: (f64, f64) = (10.0, 90.0);
const ELEVATED_Z_RANGE: (f64, f64) = (0.05, 0.3);
const FOOTPRINT_RANGE: (f64, f64) = (0.03, 0.12);
const HEIGHT_RANGE: (f64, f64) = (0.03, 0.15);
/// Smallest angle between two camera directions seen from the table center.
const MIN_CAMERA_SEPARATION_DEG: f64 = 12.0;
const MIN_VISIBLE_DEPTH: f64 = 0.05;
const CAMERA_ATTEMPTS: usize = 10_000;
const DROPOUT_ATTEMPTS: usize = 100;

const STREAM_OBJECTS: u64 = 1;
const STREAM_CAMERAS: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_ORDER: u64 = 4;
const STREAM_EMBEDDINGS: u64 = 1 << 32;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    /// One identity vector per object.
    #[default]
    UniqueInstance,
    /// One identity vector per identical group.
    ClassLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub object_id: i64,
    pub class_id: i64,
    /// Center of the cuboid's base, meters.
    pub position: [f64; 3],
    /// Width (x), depth (y) and height (z), meters.
    pub footprint: [f64; 3],
    /// Objects sharing a group look identical.
    pub identical_group: i64,
}

impl SyntheticObject {
    pub fn centroid(&self) -> Vector3<f64> {
        let [x, y, z] = self.position;
        Vector3::new(x, y, z + 0.5 * self.footprint[2])
    }

    pub fn is_elevated(&self) -> bool {
        self.position[2] > 0.0
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let [x, y, z] = self.position;
        let [w, d, h] = self.footprint;
        let mut out = [Vector3::zeros(); 8];
        for (k, c) in out.iter_mut().enumerate() {
            let sx = if k & 1 == 0 { -0.5 } else { 0.5 };
            let sy = if k & 2 == 0 { -0.5 } else { 0.5 };
            let sz = if k & 4 == 0 { 0.0 } else { 1.0 };
            *c = Vector3::new(x + sx * w, y + sy * d, z + sz * h);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub n_cameras: usize,
    pub identical_fraction: f64,
    pub elevated_fraction: f64,
    pub full_occlusion_rate: f64,
    pub embedding_noise_sigma: f64,
    /// Side length of the square table, meters.
    pub table_extent: f64,
    pub embedding_mode: EmbeddingMode,
    pub embedding_dim: usize,
    pub zoom_out_ratio: f64,
    pub focal_length: f64,
    pub image_size: (u32, u32),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            min_objects: 6,
            max_objects: 73,
            n_cameras: 9,
            identical_fraction: 0.3,
            elevated_fraction: 0.3,
            full_occlusion_rate: 0.1,
            embedding_noise_sigma: 0.1,
            table_extent: 0.8,
            embedding_mode: EmbeddingMode::UniqueInstance,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            zoom_out_ratio: crate::descriptors::DEFAULT_ZOOM_OUT_RATIO,
            focal_length: 800.0,
            image_size: (1280, 960),
        }
    }
}

impl SimConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        for (name, v) in [
            ("identical_fraction", self.identical_fraction),
            ("elevated_fraction", self.elevated_fraction),
            ("full_occlusion_rate", self.full_occlusion_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad(format!(
                "object range {}..={} is empty or starts at 0",
                self.min_objects, self.max_objects
            ));
        }
        if self.n_cameras < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.n_cameras));
        }
        if !(self.embedding_noise_sigma >= 0.0 && self.embedding_noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be finite and >= 0", self.embedding_noise_sigma));
        }
        if !(self.table_extent > 0.0 && self.table_extent.is_finite()) {
            return bad(format!("table extent {} must be positive", self.table_extent));
        }
        if self.embedding_dim == 0 {
            return bad("embedding dim must be positive".into());
        }
        if !(self.zoom_out_ratio >= 1.0) {
            return bad(format!("zoom-out ratio {} must be >= 1", self.zoom_out_ratio));
        }
        if !(self.focal_length > 0.0) || self.image_size.0 == 0 || self.image_size.1 == 0 {
            return bad("focal length and image size must be positive".into());
        }
        Ok(())
    }

    pub fn embedding_params(&self) -> EmbeddingParams {
        EmbeddingParams {
            mode: self.embedding_mode,
            noise_sigma: self.embedding_noise_sigma,
            dim: self.embedding_dim,
            zoom_out_ratio: self.zoom_out_ratio,
            seed: self.seed,
        }
    }

    fn intrinsics(&self) -> Matrix3<f64> {
        let (w, h) = self.image_size;
        Matrix3::new(
            self.focal_length,
            0.0,
            w as f64 / 2.0,
            0.0,
            self.focal_length,
            h as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// What the simulator knows that the scene file does not.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub objects: Vec<SyntheticObject>,
    /// Object ids with a box in each camera.
    pub visibility: BTreeMap<u32, BTreeSet<i64>>,
}

impl GroundTruth {
    pub fn object(&self, object_id: i64) -> Option<&SyntheticObject> {
        usize::try_from(object_id)
            .ok()
            .and_then(|k| self.objects.get(k))
            .filter(|o| o.object_id == object_id)
    }

    /// Objects visible in both cameras; each is its own true partner.
    pub fn co_visible(&self, cam_a: u32, cam_b: u32) -> Vec<i64> {
        match (self.visibility.get(&cam_a), self.visibility.get(&cam_b)) {
            (Some(a), Some(b)) => a.intersection(b).copied().collect(),
            _ => Vec::new(),
        }
    }

    /// True correspondences for every unordered camera pair.
    pub fn adjacency(&self) -> BTreeMap<(u32, u32), Vec<i64>> {
        let cams: Vec<u32> = self.visibility.keys().copied().collect();
        let mut out = BTreeMap::new();
        for (i, &a) in cams.iter().enumerate() {
            for &b in &cams[i + 1..] {
                out.insert((a, b), self.co_visible(a, b));
            }
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sample_objects(config: &SimConfig) -> Vec<SyntheticObject> {
    let mut rng = stream(config.seed, STREAM_OBJECTS);
    let n = rng.random_range(config.min_objects..=config.max_objects);
    let half = config.table_extent / 2.0;
    let mut objects = Vec::with_capacity(n);
    let mut identical_keys = Vec::with_capacity(n);
    for k in 0..n {
        let w = uniform(&mut rng, FOOTPRINT_RANGE);
        let d = uniform(&mut rng, FOOTPRINT_RANGE);
        let h = uniform(&mut rng, HEIGHT_RANGE);
        let margin = 0.5 * w.max(d);
        let x = uniform(&mut rng, (-half + margin, half - margin));
        let y = uniform(&mut rng, (-half + margin, half - margin));
        let lift = uniform(&mut rng, ELEVATED_Z_RANGE);
        let elevated = rng.random::<f64>() < config.elevated_fraction;
        let class_id = rng.random_range(0..CLASS_COUNT);
        identical_keys.push(rng.random::<f64>());
        objects.push(SyntheticObject {
            object_id: k as i64,
            class_id,
            position: [x, y, if elevated { lift } else { 0.0 }],
            footprint: [w, d, h],
            identical_group: k as i64,
        });
    }
    assign_identical_groups(&mut objects, &identical_keys, config.identical_fraction);
    objects
}

/// Objects whose key falls under `fraction` are chunked into groups of 2 or
/// 3 in key order; a lone leftover stays unique. Group members copy the
/// leader's class and size.
fn assign_identical_groups(objects: &mut [SyntheticObject], keys: &[f64], fraction: f64) {
    let mut eligible: Vec<usize> = (0..objects.len()).filter(|&k| keys[k] < fraction).collect();
    eligible.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let mut rest = eligible.as_slice();
    while rest.len() >= 2 {
        let take = if rest.len() == 4 || rest.len() == 2 { 2 } else { 3 };
        let (group, tail) = rest.split_at(take);
        let leader = group[0];
        let (class_id, footprint, gid) = (
            objects[leader].class_id,
            objects[leader].footprint,
            objects[leader].object_id,
        );
        for &m in group {
            objects[m].class_id = class_id;
            objects[m].footprint = footprint;
            objects[m].identical_group = gid;
        }
        rest = tail;
    }
}

/// Box around the projected cuboid, centered on the projected centroid.
/// `None` when the object is not seen: a corner too close to or behind the
/// camera, or the center outside the image.
fn project_object(camera: &CameraModel, object: &SyntheticObject) -> Option<BBox> {
    let corners = object.corners();
    if corners.iter().any(|c| point_depth(camera, c) < MIN_VISIBLE_DEPTH) {
        return None;
    }
    let center = project_point(camera, &object.centroid()).ok()?;
    let (w, h) = camera.image_size;
    if !(0.0..=w as f64).contains(&center.x) || !(0.0..=h as f64).contains(&center.y) {
        return None;
    }
    let (mut hx, mut hy) = (0.0f64, 0.0f64);
    for c in &corners {
        let p = project_point(camera, c).ok()?;
        hx = hx.max((p.x - center.x).abs());
        hy = hy.max((p.y - center.y).abs());
    }
    if hx <= 0.0 || hy <= 0.0 {
        return None;
    }
    Some(BBox::new(center.x - hx, center.y - hy, center.x + hx, center.y + hy))
}

fn visible_count(camera: &CameraModel, objects: &[SyntheticObject]) -> usize {
    objects.iter().filter(|o| project_object(camera, o).is_some()).count()
}

/// Fixed bird's-eye camera high enough to frame the whole table.
fn overhead_camera(config: &SimConfig) -> CameraModel {
    let (_, h) = config.image_size;
    let half_view = (h as f64 / 2.0) / config.focal_length;
    let height = 1.2 * (config.table_extent / 2.0) / half_view + ELEVATED_Z_RANGE.1 + HEIGHT_RANGE.1;
    look_at_camera(
        1,
        Vector3::new(0.0, 0.0, height),
        Vector3::zeros(),
        config.intrinsics(),
        config.image_size,
    )
}

/// Camera 1 overhead, the rest on the hemisphere. Each camera must see more
/// than half the objects, so any two cameras share at least one.
fn sample_cameras(config: &SimConfig, objects: &[SyntheticObject]) -> Result<Vec<CameraModel>> {
    let need = objects.len() / 2 + 1;
    let overhead = overhead_camera(config);
    if visible_count(&overhead, objects) < need {
        return Err(Error::InfeasibleConfig(
            "overhead camera does not see the table".into(),
        ));
    }
    let mut rng = stream(config.seed, STREAM_CAMERAS);
    let mut directions = vec![Vector3::z()];
    let mut cameras = vec![overhead];
    let min_sep = MIN_CAMERA_SEPARATION_DEG.to_radians().cos();
    let jitter = 0.1 * config.table_extent;
    for id in 2..=config.n_cameras as u32 {
        let mut placed = false;
        for _ in 0..CAMERA_ATTEMPTS {
            let radius = uniform(&mut rng, RADIUS_RANGE);
            let azimuth = uniform(&mut rng, (0.0, 2.0 * PI));
            let elevation = uniform(&mut rng, ELEVATION_RANGE_DEG).to_radians();
            let target = Vector3::new(uniform(&mut rng, (-jitter, jitter)), uniform(&mut rng, (-jitter, jitter)), 0.0);
            let dir = Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
            if directions.iter().any(|d| d.dot(&dir) > min_sep) {
                continue;
            }
            let cam = look_at_camera(id, dir * radius, target, config.intrinsics(), config.image_size);
            if visible_count(&cam, objects) < need {
                continue;
            }
            directions.push(dir);
            cameras.push(cam);
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::InfeasibleConfig(format!(
                "no pose for camera {id} sees more than half of {} objects",
                objects.len()
            )));
        }
    }
    Ok(cameras)
}

/// Per-view boxes after dropout, retried until every camera pair shares an
/// object.
fn visible_boxes(
    config: &SimConfig,
    cameras: &[CameraModel],
    objects: &[SyntheticObject],
) -> Result<Vec<Vec<(i64, BBox)>>> {
    let geometric: Vec<Vec<Option<BBox>>> = cameras
        .iter()
        .map(|c| objects.iter().map(|o| project_object(c, o)).collect())
        .collect();
    let mut rng = stream(config.seed, STREAM_DROPOUT);
    for _ in 0..DROPOUT_ATTEMPTS {
        let views: Vec<Vec<(i64, BBox)>> = geometric
            .iter()
            .map(|per_obj| {
                per_obj
                    .iter()
                    .zip(objects)
                    .filter_map(|(b, o)| {
                        let dropped = rng.random::<f64>() < config.full_occlusion_rate;
                        b.filter(|_| !dropped).map(|b| (o.object_id, b))
                    })
                    .collect()
            })
            .collect();
        let sets: Vec<BTreeSet<i64>> = views.iter().map(|v| v.iter().map(|x| x.0).collect()).collect();
        let linked = sets
            .iter()
            .enumerate()
            .all(|(i, a)| sets[i + 1..].iter().all(|b| !a.is_disjoint(b)));
        if linked {
            return Ok(views);
        }
    }
    Err(Error::InfeasibleConfig(format!(
        "occlusion rate {} leaves some camera pair without a shared object",
        config.full_occlusion_rate
    )))
}

/// Generates one scene with its ground truth and oracle embeddings.
pub fn generate_scene(config: &SimConfig) -> Result<(Scene, GroundTruth, EmbeddingTable)> {
    config.validate()?;
    let objects = sample_objects(config);
    let cameras = sample_cameras(config, &objects)?;
    let per_view = visible_boxes(config, &cameras, &objects)?;

    let mut order_rng = stream(config.seed, STREAM_ORDER);
    let mut visibility = BTreeMap::new();
    let mut views = Vec::with_capacity(cameras.len());
    for (camera, boxes) in cameras.into_iter().zip(per_view) {
        visibility.insert(camera.camera_id, boxes.iter().map(|b| b.0).collect());
        let mut instances: Vec<InstanceBox> = boxes
            .into_iter()
            .map(|(id, bbox)| InstanceBox::ground_truth(bbox, objects[id as usize].class_id, id))
            .collect();
        instances.shuffle(&mut order_rng);
        views.push(SceneView {
            camera,
            image_path: None,
            instances,
        });
    }
    let scene = Scene {
        scene_id: format!("synth-{:06}", config.seed),
        views,
        difficulty: Difficulty::Synthetic,
    };
    scene.validate()?;
    let truth = GroundTruth {
        objects,
        visibility,
    };
    let embeddings = oracle_embeddings(&scene, &truth, &config.embedding_params())?;
    Ok((scene, truth, embeddings))
}

/// Scenes for consecutive seeds, generated in parallel, returned in seed order.
pub fn generate_suite(
    base: &SimConfig,
    seeds: std::ops::Range<u64>,
) -> Result<Vec<(Scene, GroundTruth, EmbeddingTable)>> {
    seeds
        .into_par_iter()
        .map(|s| generate_scene(&base.with_seed(s)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingParams {
    pub mode: EmbeddingMode,
    pub noise_sigma: f64,
    pub dim: usize,
    pub zoom_out_ratio: f64,
    pub seed: u64,
}

/// Identity vectors for one appearance key.
struct KeyCodes {
    appearance: DVector<f64>,
    context: DVector<f64>,
    appearance_noise: DMatrix<f64>,
    context_noise: DMatrix<f64>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        let mut e = DVector::zeros(dim);
        e[0] = 1.0;
        e
    }
}

impl KeyCodes {
    fn new(seed: u64, key: i64, dim: usize) -> Self {
        let mut rng = stream(seed, STREAM_EMBEDDINGS + key as u64);
        let appearance = unit_gaussian(&mut rng, dim);
        let context = unit_gaussian(&mut rng, dim);
        let appearance_noise = DMatrix::from_fn(dim, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let context_noise = DMatrix::from_fn(dim, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self {
            appearance,
            context,
            appearance_noise,
            context_noise,
        }
    }
}

fn to_f32(v: &DVector<f64>) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Oracle appearance and surrounding vectors.
///
/// The appearance vector is the key's unit identity vector plus
/// `sigma * N_key * view_direction`, where `N_key` has standard-normal
/// entries. For one view that is isotropic Gaussian noise of per-component
/// scale `sigma`; between views it differs by `sigma * N_key * (d1 - d2)`, so
/// agreement decays with the angle between the cameras.
///
/// The surrounding vector is the normalized sum of the context codes of every
/// visible instance whose box center falls inside the zoom-out crop
/// (including the instance itself), with noise built the same way.
pub fn oracle_embeddings(
    scene: &Scene,
    truth: &GroundTruth,
    params: &EmbeddingParams,
) -> Result<EmbeddingTable> {
    if !(params.noise_sigma >= 0.0 && params.noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma {} must be finite and >= 0",
            params.noise_sigma
        )));
    }
    let key_of = |id: i64| -> Result<i64> {
        let obj = truth.object(id).ok_or_else(|| {
            Error::GroundTruthMismatch(format!("scene instance {id} is not a simulated object"))
        })?;
        Ok(match params.mode {
            EmbeddingMode::UniqueInstance => obj.object_id,
            EmbeddingMode::ClassLevel => obj.identical_group,
        })
    };
    let mut codes: BTreeMap<i64, KeyCodes> = BTreeMap::new();
    for view in &scene.views {
        for inst in &view.instances {
            let key = key_of(inst.instance_id)?;
            codes
                .entry(key)
                .or_insert_with(|| KeyCodes::new(params.seed, key, params.dim));
        }
    }

    let mut table = EmbeddingTable::new(params.dim)?;
    let sigma = params.noise_sigma;
    for view in &scene.views {
        let dir = line_of_sight(&view.camera);
        let centers: Vec<[f64; 2]> = view.instances.iter().map(|i| i.bbox.center()).collect();
        for inst in &view.instances {
            let code = &codes[&key_of(inst.instance_id)?];
            let appearance = &code.appearance + &code.appearance_noise * dir * sigma;

            let crop = crop_with_zoom_out(&inst.bbox, params.zoom_out_ratio, view.camera.image_size)?;
            let mut context = DVector::zeros(params.dim);
            for (other, c) in view.instances.iter().zip(&centers) {
                if (crop.x1..=crop.x2).contains(&c[0]) && (crop.y1..=crop.y2).contains(&c[1]) {
                    context += &codes[&key_of(other.instance_id)?].context;
                }
            }
            let norm = context.norm();
            if norm > 0.0 {
                context /= norm;
            }
            let surrounding = context + &code.context_noise * dir * sigma;
            table.insert(
                view.camera_id(),
                inst.instance_id,
                EmbeddingPair {
                    appearance: to_f32(&appearance),
                    surrounding: to_f32(&surrounding),
                },
            )?;
        }
    }
    Ok(table)
}

/// File names written for one scene, relative to the export directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seed: u64,
    pub scene_id: String,
    pub scene: String,
    pub embeddings: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SimConfig,
    pub scenes: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<scene_id>.json` and `<scene_id>.mteb` into `out_dir`.
pub fn export_scene(scene: &Scene, embeddings: &EmbeddingTable, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let scene_path = out_dir.join(format!("{}.json", scene.scene_id));
    let emb_path = out_dir.join(format!("{}.mteb", scene.scene_id));
    save_scene(scene, &scene_path)?;
    save_embeddings(embeddings, &emb_path)?;
    Ok((scene_path, emb_path))
}

/// Generates and exports one scene per seed, then writes the manifest.
pub fn export_suite(base: &SimConfig, seeds: std::ops::Range<u64>, out_dir: &Path) -> Result<Manifest> {
    base.validate()?;
    let suite = generate_suite(base, seeds.clone())?;
    let mut entries = Vec::with_capacity(suite.len());
    for (seed, (scene, _, emb)) in seeds.zip(&suite) {
        export_scene(scene, emb, out_dir)?;
        entries.push(ManifestEntry {
            seed,
            scene_id: scene.scene_id.clone(),
            scene: format!("{}.json", scene.scene_id),
            embeddings: format!("{}.mteb", scene.scene_id),
        });
    }
    let manifest = Manifest {
        config: base.clone(),
        scenes: entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest is always serializable");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{associate_scene, ScorerConfig};
    use crate::descriptors::l2_distance;
    use crate::geometry::{fundamental_matrix, plane_homography};
    use crate::scene::{load_embeddings, load_scene, scene_to_json, encode_embeddings};
    use nalgebra::Vector2;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            seed,
            min_objects: 8,
            max_objects: 20,
            ..Default::default()
        }
    }

    fn l2(a: &[f32], b: &[f32]) -> f64 {
        let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
        l2_distance(&a, &b).unwrap()
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (s1, g1, e1) = generate_scene(&small(3)).unwrap();
        let (s2, g2, e2) = generate_scene(&small(3)).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(g1, g2);
        assert_eq!(encode_embeddings(&e1).unwrap(), encode_embeddings(&e2).unwrap());
        let (s3, _, _) = generate_scene(&small(4)).unwrap();
        assert_ne!(scene_to_json(&s1), scene_to_json(&s3));
    }

    #[test]
    fn rig_shape_and_ranges() {
        let (scene, truth, _) = generate_scene(&SimConfig::default()).unwrap();
        assert_eq!(scene.views.len(), 9);
        assert_eq!(scene.views[0].camera_id(), 1);
        assert!((line_of_sight(&scene.views[0].camera) + Vector3::z()).norm() < 1e-12);
        for v in &scene.views[1..] {
            let c = v.camera.center();
            let r = c.norm();
            assert!((0.5..=1.2).contains(&r), "radius {r}");
            let elev = (c.z / r).asin().to_degrees();
            assert!((10.0..=90.0).contains(&elev), "elevation {elev}");
        }
        let n = truth.objects.len();
        assert!((6..=73).contains(&n));
        for o in &truth.objects {
            assert!(o.position[2] >= 0.0);
            assert!(o.footprint.iter().all(|&f| f > 0.0));
        }
    }

    #[test]
    fn visibility_matches_boxes_and_adjacency() {
        let (scene, truth, emb) = generate_scene(&small(11)).unwrap();
        for v in &scene.views {
            let ids: BTreeSet<i64> = v.instances.iter().map(|i| i.instance_id).collect();
            assert_eq!(&ids, &truth.visibility[&v.camera_id()]);
            for inst in &v.instances {
                let c = inst.bbox.center();
                let (w, h) = v.camera.image_size;
                assert!(c[0] >= 0.0 && c[0] <= w as f64 && c[1] >= 0.0 && c[1] <= h as f64);
            }
        }
        for ((a, b), ids) in truth.adjacency() {
            assert!(!ids.is_empty());
            for id in ids {
                assert!(truth.visibility[&a].contains(&id) && truth.visibility[&b].contains(&id));
            }
        }
        assert_eq!(emb.len(), scene.instance_count());
    }

    #[test]
    fn occluded_objects_never_get_boxes() {
        let base = SimConfig {
            full_occlusion_rate: 0.0,
            ..small(5)
        };
        let occluded = SimConfig {
            full_occlusion_rate: 0.3,
            ..base.clone()
        };
        let (s0, _, _) = generate_scene(&base).unwrap();
        let (s1, t1, _) = generate_scene(&occluded).unwrap();
        for (v0, v1) in s0.views.iter().zip(&s1.views) {
            let all: BTreeSet<i64> = v0.instances.iter().map(|i| i.instance_id).collect();
            let kept = &t1.visibility[&v1.camera_id()];
            assert!(kept.is_subset(&all));
        }
        assert!(s1.instance_count() < s0.instance_count());
    }

    #[test]
    fn true_correspondences_satisfy_epipolar_identity() {
        let (scene, truth, _) = generate_scene(&small(21)).unwrap();
        for (a, b) in scene.view_pairs() {
            let (va, vb) = (scene.view(a).unwrap(), scene.view(b).unwrap());
            let f = fundamental_matrix(&va.camera, &vb.camera).unwrap();
            for id in truth.co_visible(a, b) {
                let ca = va.instances[va.index_of(id).unwrap()].bbox.center();
                let cb = vb.instances[vb.index_of(id).unwrap()].bbox.center();
                let r = f.residual(&Vector2::new(ca[0], ca[1]), &Vector2::new(cb[0], cb[1]));
                assert!(r.abs() < 1e-9, "{r}");
            }
        }
    }

    #[test]
    fn elevated_objects_break_plane_transfer() {
        let config = SimConfig {
            elevated_fraction: 1.0,
            ..small(8)
        };
        let (scene, truth, _) = generate_scene(&config).unwrap();
        for (a, b) in scene.view_pairs() {
            let (ca, cb) = (&scene.view(a).unwrap().camera, &scene.view(b).unwrap().camera);
            let h = plane_homography(ca, cb).unwrap();
            for id in truth.co_visible(a, b) {
                let obj = truth.object(id).unwrap();
                assert!(obj.position[2] >= 0.05);
                let foot = Vector3::new(obj.position[0], obj.position[1], obj.position[2]);
                let pa = project_point(ca, &foot).unwrap();
                let pb = project_point(cb, &foot).unwrap();
                let err = (h.transfer(&pa).unwrap() - pb).norm();
                assert!(err > 1.0, "pair {a}-{b} object {id}: {err}");
            }
        }
    }

    #[test]
    fn unique_noise_free_vectors_agree_across_views() {
        let config = SimConfig {
            embedding_noise_sigma: 0.0,
            identical_fraction: 0.0,
            ..small(2)
        };
        let (scene, truth, emb) = generate_scene(&config).unwrap();
        for (a, b) in scene.view_pairs() {
            for id in truth.co_visible(a, b) {
                let (ea, eb) = (emb.get(a, id).unwrap(), emb.get(b, id).unwrap());
                assert_eq!(ea.appearance, eb.appearance);
            }
        }
        let assoc = associate_scene(&scene, &emb, &ScorerConfig::default()).unwrap();
        for ((a, b), outcome) in &assoc {
            let (va, vb) = (scene.view(*a).unwrap(), scene.view(*b).unwrap());
            let shared = truth.co_visible(*a, *b);
            assert_eq!(outcome.result.matches.len(), shared.len());
            for &(i, j, _) in &outcome.result.matches {
                assert_eq!(va.instances[i].instance_id, vb.instances[j].instance_id);
            }
        }
    }

    #[test]
    fn class_level_groups_share_appearance() {
        let config = SimConfig {
            identical_fraction: 1.0,
            embedding_noise_sigma: 0.0,
            embedding_mode: EmbeddingMode::ClassLevel,
            ..small(6)
        };
        let (scene, truth, emb) = generate_scene(&config).unwrap();
        let mut checked = 0;
        for (a, b) in scene.view_pairs() {
            for &ia in &truth.visibility[&a] {
                for &ib in &truth.visibility[&b] {
                    let (ga, gb) = (truth.object(ia).unwrap(), truth.object(ib).unwrap());
                    if ia != ib && ga.identical_group == gb.identical_group {
                        assert_eq!(l2(&emb.get(a, ia).unwrap().appearance, &emb.get(b, ib).unwrap().appearance), 0.0);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
        // with noise, identical objects still coincide inside one view
        let noisy = SimConfig {
            embedding_noise_sigma: 0.2,
            ..config
        };
        let (scene, truth, emb) = generate_scene(&noisy).unwrap();
        let v = &scene.views[0];
        let ids: Vec<i64> = v.instances.iter().map(|i| i.instance_id).collect();
        for &x in &ids {
            for &y in &ids {
                if truth.object(x).unwrap().identical_group == truth.object(y).unwrap().identical_group {
                    assert_eq!(emb.get(v.camera_id(), x).unwrap().appearance, emb.get(v.camera_id(), y).unwrap().appearance);
                }
            }
        }
    }

    #[test]
    fn identical_groups_are_nested_and_sized() {
        let mut prev: Option<Vec<SyntheticObject>> = None;
        for fraction in [0.0, 0.2, 0.5, 1.0] {
            let objs = sample_objects(&SimConfig {
                identical_fraction: fraction,
                ..small(9)
            });
            let mut sizes: BTreeMap<i64, usize> = BTreeMap::new();
            for o in &objs {
                *sizes.entry(o.identical_group).or_default() += 1;
            }
            assert!(sizes.values().all(|&s| (1..=3).contains(&s)));
            if fraction == 0.0 {
                assert!(sizes.values().all(|&s| s == 1));
            }
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&objs) {
                    assert_eq!(a.position, b.position);
                }
            }
            prev = Some(objs);
        }
    }

    #[test]
    fn noisy_true_pairs_beat_typical_false_pairs() {
        let config = SimConfig {
            embedding_noise_sigma: 0.1,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut wins, mut total) = (0usize, 0usize);
        for seed in 0..5 {
            let (scene, truth, emb) = generate_scene(&config.with_seed(seed)).unwrap();
            let pairs = scene.view_pairs();
            let mut false_d = Vec::new();
            let mut true_d = Vec::new();
            for _ in 0..2_000 {
                let (a, b) = pairs[rng.random_range(0..pairs.len())];
                let shared = truth.co_visible(a, b);
                let id = shared[rng.random_range(0..shared.len())];
                true_d.push(l2(&emb.get(a, id).unwrap().appearance, &emb.get(b, id).unwrap().appearance));
                let ids_b: Vec<i64> = truth.visibility[&b].iter().copied().filter(|&x| x != id).collect();
                if let Some(&other) = ids_b.get(rng.random_range(0..ids_b.len().max(1))) {
                    false_d.push(l2(&emb.get(a, id).unwrap().appearance, &emb.get(b, other).unwrap().appearance));
                }
            }
            false_d.sort_by(f64::total_cmp);
            let typical = false_d[false_d.len() / 2];
            wins += true_d.iter().filter(|&&d| d < typical).count();
            total += true_d.len();
        }
        assert_eq!(total, 10_000);
        assert!(wins as f64 >= 0.99 * total as f64, "{wins}/{total}");
    }

    #[test]
    fn export_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, _, emb) = generate_scene(&small(13)).unwrap();
        let (sp, ep) = export_scene(&scene, &emb, dir.path()).unwrap();
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
        let back = load_scene(&sp).unwrap();
        assert_eq!(back, scene);
        let emb_back = load_embeddings(&ep, &back).unwrap();
        assert_eq!(emb_back, emb);
        let visible: usize = scene.views.iter().map(|v| v.instances.len()).sum();
        assert_eq!(emb_back.len(), visible);
    }

    #[test]
    fn suite_export_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = export_suite(&small(0), 0..3, dir.path()).unwrap();
        assert_eq!(manifest.scenes.len(), 3);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 7);
        let back = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, manifest);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            SimConfig { identical_fraction: 1.2, ..Default::default() },
            SimConfig { min_objects: 10, max_objects: 5, ..Default::default() },
            SimConfig { n_cameras: 1, ..Default::default() },
            SimConfig { embedding_noise_sigma: -1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_scene(&bad), Err(Error::InvalidArgument(_))));
        }
        let tiny_table_far_away = SimConfig {
            table_extent: 50.0,
            ..small(1)
        };
        assert!(matches!(generate_scene(&tiny_table_far_away), Err(Error::InfeasibleConfig(_))));
    }
}
