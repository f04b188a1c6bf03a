//! Cross-view association: distance matrices from pluggable scorers, the
//! appearance/surrounding fusion rule, the epipolar soft constraint and a
//! thresholded Kuhn-Munkres assignment.
//!
//! [`associate_view_pair`] runs the full pipeline:
//! build -> normalize -> (epipolar penalty -> re-normalize) -> assign -> threshold.

mod hungarian;
mod output;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::descriptors::{chi_square_distance, cosine_similarity, l2_distance, DEFAULT_ZOOM_OUT_RATIO};
use crate::error::{Error, Result};
use crate::geometry::{
    bottom_mid_anchor, box_center_anchor, epipolar_line, fundamental_matrix, plane_homography,
    point_line_distance,
};
use crate::scene::{EmbeddingTable, Scene, SceneView};

pub use hungarian::{assignment_cost, kuhn_munkres};
pub use output::{
    parse_scene_association, scene_association_to_json, PairRecord, SceneAssociationRecord,
};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_EPIPOLAR_WEIGHT: f64 = 1.0;

/// Spread below which a matrix is treated as constant by normalization.
const FLAT_SPREAD: f64 = 1e-12;

/// Pairwise costs between the instances of two views.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: DMatrix<f64>,
    scale_info: Option<(f64, f64)>,
}

impl DistanceMatrix {
    /// Wraps finite, non-negative values.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("distance matrix"));
        }
        if let Some(&neg) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidArgument(format!("negative distance {neg}")));
        }
        Ok(Self {
            values,
            scale_info: None,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    /// `(min, max)` used by the most recent normalization.
    pub fn scale_info(&self) -> Option<(f64, f64)> {
        self.scale_info
    }

    fn extrema(&self) -> Option<(f64, f64)> {
        if self.values.is_empty() {
            return None;
        }
        Some((self.values.min(), self.values.max()))
    }
}

/// Pooled `(min, max)` over a set of matrices, for global normalization.
pub fn pooled_extrema<'a>(matrices: impl IntoIterator<Item = &'a DistanceMatrix>) -> Option<(f64, f64)> {
    matrices
        .into_iter()
        .filter_map(DistanceMatrix::extrema)
        .reduce(|(lo, hi), (l, h)| (lo.min(l), hi.max(h)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// Extrema of the matrix itself.
    PerPair,
    /// Extrema supplied by the caller, usually [`pooled_extrema`] over an evaluation set.
    Global { min: f64, max: f64 },
}

/// Min-max scaling into `[0, 1]`. A flat range maps every entry to 0.5.
/// Values outside supplied global extrema are clamped.
pub fn normalize_distances(matrix: &DistanceMatrix, population: Normalization) -> DistanceMatrix {
    let stats = match population {
        Normalization::PerPair => matrix.extrema(),
        Normalization::Global { min, max } => Some((min, max)),
    };
    let Some((min, max)) = stats else {
        return matrix.clone();
    };
    let spread = max - min;
    let values = if spread < FLAT_SPREAD {
        matrix.values.map(|_| 0.5)
    } else {
        matrix.values.map(|v| ((v - min) / spread).clamp(0.0, 1.0))
    };
    DistanceMatrix {
        values,
        scale_info: Some((min, max)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMode {
    /// Cosine similarity clamped to `[0, 1]`, keeping the fusion convex.
    Clamped,
    /// Raw cosine similarity in `[-1, 1]`.
    Raw,
}

/// Fused distance `(1 - λ) D(app) + λ D(sur)` with `λ` the cosine similarity
/// of the appearance vectors. Returns `(distance, λ)`.
pub fn asnet_fusion_distance(
    app_a: &[f64],
    sur_a: &[f64],
    app_b: &[f64],
    sur_b: &[f64],
    lambda_mode: LambdaMode,
) -> Result<(f64, f64)> {
    let cos = cosine_similarity(app_a, app_b)?;
    let lambda = match lambda_mode {
        LambdaMode::Clamped => cos.clamp(0.0, 1.0),
        LambdaMode::Raw => cos,
    };
    let d_app = l2_distance(app_a, app_b)?;
    let d_sur = l2_distance(sur_a, sur_b)?;
    Ok(((1.0 - lambda) * d_app + lambda * d_sur, lambda))
}

/// Produces the raw distance matrix between two views.
pub trait PairScorer: Sync {
    fn distance_matrix(&self, view_a: &SceneView, view_b: &SceneView) -> Result<DMatrix<f64>>;
}

fn pairwise<T>(
    view_a: &SceneView,
    view_b: &SceneView,
    prepare: impl Fn(&SceneView, usize) -> Result<T>,
    distance: impl Fn(&T, &T) -> Result<f64>,
) -> Result<DMatrix<f64>> {
    let a: Vec<T> = (0..view_a.instances.len())
        .map(|i| prepare(view_a, i))
        .collect::<Result<_>>()?;
    let b: Vec<T> = (0..view_b.instances.len())
        .map(|j| prepare(view_b, j))
        .collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(a.len(), b.len());
    for (i, fa) in a.iter().enumerate() {
        for (j, fb) in b.iter().enumerate() {
            m[(i, j)] = distance(fa, fb)?;
        }
    }
    Ok(m)
}

struct Features {
    appearance: Vec<f64>,
    surrounding: Vec<f64>,
}

fn features(embeddings: &EmbeddingTable, view: &SceneView, index: usize) -> Result<Features> {
    let pair = embeddings.require(view.camera_id(), view.instances[index].instance_id)?;
    let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect();
    Ok(Features {
        appearance: widen(&pair.appearance),
        surrounding: widen(&pair.surrounding),
    })
}

/// L2 distance between appearance vectors.
pub struct AppearanceScorer<'a>(pub &'a EmbeddingTable);

impl PairScorer for AppearanceScorer<'_> {
    fn distance_matrix(&self, view_a: &SceneView, view_b: &SceneView) -> Result<DMatrix<f64>> {
        pairwise(
            view_a,
            view_b,
            |v, i| features(self.0, v, i),
            |a, b| l2_distance(&a.appearance, &b.appearance),
        )
    }
}

/// Appearance/surrounding fusion weighted by appearance cosine similarity.
pub struct FusionScorer<'a> {
    pub embeddings: &'a EmbeddingTable,
    pub lambda_mode: LambdaMode,
}

impl PairScorer for FusionScorer<'_> {
    fn distance_matrix(&self, view_a: &SceneView, view_b: &SceneView) -> Result<DMatrix<f64>> {
        pairwise(
            view_a,
            view_b,
            |v, i| features(self.embeddings, v, i),
            |a, b| {
                asnet_fusion_distance(
                    &a.appearance,
                    &a.surrounding,
                    &b.appearance,
                    &b.surrounding,
                    self.lambda_mode,
                )
                .map(|(d, _)| d)
            },
        )
    }
}

/// Chi-square distance between appearance vectors holding VBoW histograms.
pub struct VbowScorer<'a>(pub &'a EmbeddingTable);

impl PairScorer for VbowScorer<'_> {
    fn distance_matrix(&self, view_a: &SceneView, view_b: &SceneView) -> Result<DMatrix<f64>> {
        pairwise(
            view_a,
            view_b,
            |v, i| features(self.0, v, i),
            |a, b| chi_square_distance(&a.appearance, &b.appearance),
        )
    }
}

/// Pixel distance in view B between the plane-transferred bottom-mid anchor
/// of the view-A box and the bottom-mid anchor of the view-B box.
pub struct HomographyScorer;

impl PairScorer for HomographyScorer {
    fn distance_matrix(&self, view_a: &SceneView, view_b: &SceneView) -> Result<DMatrix<f64>> {
        let h = plane_homography(&view_a.camera, &view_b.camera)?;
        // anchors transferred past the horizon get the largest finite cost
        let far = 1e3 * view_b.camera.image_diagonal();
        let moved: Vec<_> = view_a
            .instances
            .iter()
            .map(|inst| h.transfer(&bottom_mid_anchor(inst)))
            .collect();
        let targets: Vec<_> = view_b.instances.iter().map(bottom_mid_anchor).collect();
        Ok(DMatrix::from_fn(moved.len(), targets.len(), |i, j| match moved[i] {
            Some(p) => (p - targets[j]).norm().min(far),
            None => far,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScorerMode {
    AppearanceOnly,
    AsnetFusion,
    Vbow,
    Homography,
    /// Caller-supplied [`PairScorer`]; use the `*_with` entry points.
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerConfig {
    pub mode: ScorerMode,
    pub use_epipolar: bool,
    pub epipolar_weight: f64,
    pub threshold: f64,
    /// Crop enlargement applied by whatever produced the surrounding vectors.
    pub zoom_out_ratio: f64,
    pub lambda_mode: LambdaMode,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            mode: ScorerMode::AppearanceOnly,
            use_epipolar: false,
            epipolar_weight: DEFAULT_EPIPOLAR_WEIGHT,
            threshold: DEFAULT_THRESHOLD,
            zoom_out_ratio: DEFAULT_ZOOM_OUT_RATIO,
            lambda_mode: LambdaMode::Clamped,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        if !self.epipolar_weight.is_finite() || self.epipolar_weight < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epipolar weight {} must be finite and >= 0",
                self.epipolar_weight
            )));
        }
        if !(self.zoom_out_ratio >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "zoom-out ratio {} must be >= 1",
                self.zoom_out_ratio
            )));
        }
        Ok(())
    }

    /// Built-in scorer for `mode`; `None` for [`ScorerMode::Custom`].
    pub fn scorer<'a>(&self, embeddings: &'a EmbeddingTable) -> Option<Box<dyn PairScorer + 'a>> {
        match self.mode {
            ScorerMode::AppearanceOnly => Some(Box::new(AppearanceScorer(embeddings))),
            ScorerMode::AsnetFusion => Some(Box::new(FusionScorer {
                embeddings,
                lambda_mode: self.lambda_mode,
            })),
            ScorerMode::Vbow => Some(Box::new(VbowScorer(embeddings))),
            ScorerMode::Homography => Some(Box::new(HomographyScorer)),
            ScorerMode::Custom => None,
        }
    }
}

fn custom_needs_scorer() -> Error {
    Error::InvalidArgument("custom mode needs a caller-supplied scorer".into())
}

pub fn build_distance_matrix(
    view_a: &SceneView,
    view_b: &SceneView,
    embeddings: &EmbeddingTable,
    config: &ScorerConfig,
) -> Result<DistanceMatrix> {
    let scorer = config.scorer(embeddings).ok_or_else(custom_needs_scorer)?;
    DistanceMatrix::new(scorer.distance_matrix(view_a, view_b)?)
}

/// Adds `weight * d(center_j, epiline(center_i)) / diagonal_B` to every entry.
///
/// A box center sitting exactly on the epipole carries no epipolar
/// information and receives no penalty.
pub fn add_epipolar_penalty(
    matrix: &DistanceMatrix,
    view_a: &SceneView,
    view_b: &SceneView,
    weight: f64,
) -> Result<DistanceMatrix> {
    check_shape(matrix, view_a, view_b)?;
    if weight == 0.0 || matrix.values.is_empty() {
        return Ok(matrix.clone());
    }
    let f = fundamental_matrix(&view_a.camera, &view_b.camera)?;
    let diagonal = view_b.camera.image_diagonal();
    let centers_b: Vec<_> = view_b.instances.iter().map(box_center_anchor).collect();
    let mut values = matrix.values.clone();
    for (i, inst) in view_a.instances.iter().enumerate() {
        let line = match epipolar_line(&f, &box_center_anchor(inst)) {
            Ok(line) => line,
            Err(Error::EpipoleDegeneracy) => continue,
            Err(e) => return Err(e),
        };
        for (j, c) in centers_b.iter().enumerate() {
            values[(i, j)] += weight * point_line_distance(&line, c) / diagonal;
        }
    }
    Ok(DistanceMatrix {
        values,
        scale_info: matrix.scale_info,
    })
}

fn check_shape(matrix: &DistanceMatrix, view_a: &SceneView, view_b: &SceneView) -> Result<()> {
    if matrix.rows() != view_a.instances.len() || matrix.cols() != view_b.instances.len() {
        return Err(Error::InvalidArgument(format!(
            "{}x{} matrix does not match views with {} and {} instances",
            matrix.rows(),
            matrix.cols(),
            view_a.instances.len(),
            view_b.instances.len()
        )));
    }
    Ok(())
}

pub fn kuhn_munkres_assign(matrix: &DistanceMatrix) -> Vec<(usize, usize)> {
    kuhn_munkres(&matrix.values)
}

/// Accepted pairs plus the unmatched indices of each side.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub matches: Vec<(usize, usize, f64)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl AssociationResult {
    /// True when matches and unmatched lists partition `0..rows` and `0..cols`.
    pub fn is_partition(&self, rows: usize, cols: usize) -> bool {
        let mut a: Vec<usize> = self.matches.iter().map(|m| m.0).chain(self.unmatched_a.iter().copied()).collect();
        let mut b: Vec<usize> = self.matches.iter().map(|m| m.1).chain(self.unmatched_b.iter().copied()).collect();
        a.sort_unstable();
        b.sort_unstable();
        a == (0..rows).collect::<Vec<_>>() && b == (0..cols).collect::<Vec<_>>()
    }
}

/// Keeps assigned pairs whose distance is at most `threshold`.
pub fn threshold_filter(
    assignment: &[(usize, usize)],
    matrix: &DistanceMatrix,
    threshold: f64,
) -> AssociationResult {
    let mut kept_a = vec![false; matrix.rows()];
    let mut kept_b = vec![false; matrix.cols()];
    let mut matches = Vec::new();
    for &(i, j) in assignment {
        let d = matrix.get(i, j);
        if d <= threshold {
            kept_a[i] = true;
            kept_b[j] = true;
            matches.push((i, j, d));
        }
    }
    let unmatched = |kept: &[bool]| (0..kept.len()).filter(|&k| !kept[k]).collect();
    AssociationResult {
        matches,
        unmatched_a: unmatched(&kept_a),
        unmatched_b: unmatched(&kept_b),
    }
}

/// Association of one view pair together with the final cost matrix it was
/// decided on.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub result: AssociationResult,
    pub distances: DistanceMatrix,
}

pub fn associate_view_pair(
    view_a: &SceneView,
    view_b: &SceneView,
    embeddings: &EmbeddingTable,
    config: &ScorerConfig,
) -> Result<AssociationResult> {
    let scorer = config.scorer(embeddings).ok_or_else(custom_needs_scorer)?;
    associate_view_pair_with(view_a, view_b, scorer.as_ref(), config).map(|o| o.result)
}

pub fn associate_view_pair_with(
    view_a: &SceneView,
    view_b: &SceneView,
    scorer: &dyn PairScorer,
    config: &ScorerConfig,
) -> Result<PairOutcome> {
    config.validate()?;
    let raw = DistanceMatrix::new(scorer.distance_matrix(view_a, view_b)?)?;
    check_shape(&raw, view_a, view_b)?;
    let mut distances = normalize_distances(&raw, Normalization::PerPair);
    if config.use_epipolar {
        let penalized = add_epipolar_penalty(&distances, view_a, view_b, config.epipolar_weight)?;
        distances = normalize_distances(&penalized, Normalization::PerPair);
    }
    let assignment = kuhn_munkres_assign(&distances);
    let result = threshold_filter(&assignment, &distances, config.threshold);
    Ok(PairOutcome { result, distances })
}

/// Outcomes keyed by `(low camera id, high camera id)`; view A is the lower id.
pub type SceneAssociation = BTreeMap<(u32, u32), PairOutcome>;

pub fn associate_scene(
    scene: &Scene,
    embeddings: &EmbeddingTable,
    config: &ScorerConfig,
) -> Result<SceneAssociation> {
    let scorer = config.scorer(embeddings).ok_or_else(custom_needs_scorer)?;
    associate_scene_with(scene, scorer.as_ref(), config)
}

/// Runs every unordered view pair in parallel on the current rayon pool.
pub fn associate_scene_with(
    scene: &Scene,
    scorer: &dyn PairScorer,
    config: &ScorerConfig,
) -> Result<SceneAssociation> {
    if scene.views.len() < 2 {
        return Err(Error::InvalidScene(format!(
            "scene {} needs at least 2 views",
            scene.scene_id
        )));
    }
    scene
        .view_pairs()
        .into_par_iter()
        .map(|(a, b)| {
            let (va, vb) = (scene.view(a).unwrap(), scene.view(b).unwrap());
            associate_view_pair_with(va, vb, scorer, config).map(|o| ((a, b), o))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

#[cfg(test)]
mod tests;
