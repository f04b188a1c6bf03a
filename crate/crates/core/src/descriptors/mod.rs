//! Feature vectors and the distances between them, plus hand-crafted
//! descriptors that stand in for learned extractors.

mod codebook;
mod patch;

use crate::error::{Error, Result};
use crate::scene::BBox;

pub use codebook::{kmeans_codebook, kmeans_with_trace, vbow_encode, Codebook, DEFAULT_MAX_ITERS};
pub use patch::{
    color_histogram_descriptor, dense_grid_descriptors, PixelSource, RgbPatch,
    DEFAULT_HISTOGRAM_BINS, DEFAULT_GRID_CELL,
};

pub const DEFAULT_ZOOM_OUT_RATIO: f64 = 2.0;
pub const CHI_SQUARE_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Appearance,
    Surrounding,
    Vbow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    kind: FeatureKind,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, kind: FeatureKind) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("feature vector is empty".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        Ok(Self { values, kind })
    }

    pub fn from_f32(values: &[f32], kind: FeatureKind) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect(), kind)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Symmetric chi-square distance between histograms,
/// `0.5 Σ (aᵢ - bᵢ)² / (aᵢ + bᵢ + ε)`.
pub fn chi_square_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    if let Some(&neg) = a.iter().chain(b).find(|&&v| v < 0.0) {
        return Err(Error::NegativeComponent(neg));
    }
    Ok(0.5
        * a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2) / (x + y + CHI_SQUARE_EPS))
            .sum::<f64>())
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    let na2 = a.iter().map(|v| v * v).sum::<f64>();
    let nb2 = b.iter().map(|v| v * v).sum::<f64>();
    if na2.sqrt() <= 1e-12 || nb2.sqrt() <= 1e-12 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // a single square root keeps cos(a, a) exactly 1
    Ok((dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
}

/// Crop rectangle clamped to the image, `x1 < x2` and `y1 < y2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropRect {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl CropRect {
    pub fn contains(&self, other: &CropRect) -> bool {
        self.x1 <= other.x1 && self.y1 <= other.y1 && self.x2 >= other.x2 && self.y2 >= other.y2
    }
}

/// Scales a box about its center by `ratio` and clamps it to `[0, w] x [0, h]`.
pub fn crop_with_zoom_out(bbox: &BBox, ratio: f64, image_size: (u32, u32)) -> Result<CropRect> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::InvalidArgument(format!("zoom-out ratio {ratio} must be >= 1")));
    }
    let [cx, cy] = bbox.center();
    let hw = bbox.width() * ratio * 0.5;
    let hh = bbox.height() * ratio * 0.5;
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let rect = CropRect {
        x1: (cx - hw).clamp(0.0, w),
        y1: (cy - hh).clamp(0.0, h),
        x2: (cx + hw).clamp(0.0, w),
        y2: (cy + hh).clamp(0.0, h),
    };
    if rect.x1 >= rect.x2 || rect.y1 >= rect.y2 {
        return Err(Error::InvalidArgument(format!(
            "box ({}, {}, {}, {}) lies outside the {}x{} image",
            bbox.x1, bbox.y1, bbox.x2, bbox.y2, image_size.0, image_size.1
        )));
    }
    Ok(rect)
}
