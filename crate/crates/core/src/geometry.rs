//! Calibrated two-view geometry.
//!
//! Cameras map world points as `K (R X + t)`. Lens distortion is not modeled.
//! The reference plane for homography transfer is world `z = 0`.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::scene::{CameraModel, InstanceBox};

const MIN_DEPTH: f64 = 1e-9;
const MIN_BASELINE: f64 = 1e-9;
const MAX_PLANE_CONDITION: f64 = 1e12;

/// Projects a world point (meters) to pixel coordinates.
pub fn project_point(camera: &CameraModel, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    let cam = camera.rotation * point + camera.translation;
    if cam.z <= MIN_DEPTH {
        return Err(Error::BehindCamera { depth: cam.z });
    }
    let h = camera.intrinsics * cam;
    Ok(Vector2::new(h.x / h.z, h.y / h.z))
}

/// Depth of a world point along the camera's optical axis.
pub fn point_depth(camera: &CameraModel, point: &Vector3<f64>) -> f64 {
    (camera.rotation * point + camera.translation).z
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn homogeneous(p: &Vector2<f64>) -> Vector3<f64> {
    Vector3::new(p.x, p.y, 1.0)
}

/// Relative pose taking camera-1 coordinates to camera-2 coordinates.
pub fn relative_pose(cam1: &CameraModel, cam2: &CameraModel) -> (Matrix3<f64>, Vector3<f64>) {
    let r = cam2.rotation * cam1.rotation.transpose();
    let t = cam2.translation - r * cam1.translation;
    (r, t)
}

/// Rank-2 fundamental matrix with unit Frobenius norm, `x2ᵀ F x1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// The matrix for the reversed view order.
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// Algebraic residual `x2ᵀ F x1`.
    pub fn residual(&self, x1: &Vector2<f64>, x2: &Vector2<f64>) -> f64 {
        homogeneous(x2).dot(&(self.0 * homogeneous(x1)))
    }
}

pub fn fundamental_matrix(cam1: &CameraModel, cam2: &CameraModel) -> Result<FundamentalMatrix> {
    let (r, t) = relative_pose(cam1, cam2);
    if t.norm() <= MIN_BASELINE {
        return Err(Error::ZeroBaseline(cam1.camera_id, cam2.camera_id));
    }
    let k1_inv = cam1
        .intrinsics
        .try_inverse()
        .ok_or_else(|| Error::InvalidCamera {
            camera_id: cam1.camera_id,
            reason: "singular intrinsics".into(),
        })?;
    let k2_inv = cam2
        .intrinsics
        .try_inverse()
        .ok_or_else(|| Error::InvalidCamera {
            camera_id: cam2.camera_id,
            reason: "singular intrinsics".into(),
        })?;
    let f = k2_inv.transpose() * skew(&t) * r * k1_inv;
    Ok(FundamentalMatrix(f / f.norm()))
}

/// Line `a u + b v + c = 0` with `a² + b² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl EpipolarLine {
    /// Normalizes arbitrary homogeneous coefficients; `None` if `(a, b)` vanishes.
    pub fn from_coefficients(a: f64, b: f64, c: f64) -> Option<Self> {
        let n = a.hypot(b);
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        Some(Self {
            a: a / n,
            b: b / n,
            c: c / n,
        })
    }
}

/// Epipolar line in the second view of `pixel` from the first view.
pub fn epipolar_line(f: &FundamentalMatrix, pixel: &Vector2<f64>) -> Result<EpipolarLine> {
    let l = f.0 * homogeneous(pixel);
    let scale = 1.0_f64.max(pixel.x.abs()).max(pixel.y.abs());
    if l.x.hypot(l.y) <= 1e-12 * scale {
        return Err(Error::EpipoleDegeneracy);
    }
    EpipolarLine::from_coefficients(l.x, l.y, l.z).ok_or(Error::EpipoleDegeneracy)
}

/// Unsigned pixel distance from a point to a normalized line.
pub fn point_line_distance(line: &EpipolarLine, pixel: &Vector2<f64>) -> f64 {
    (line.a * pixel.x + line.b * pixel.y + line.c).abs()
}

/// Pixel-to-pixel map between two views induced by the world plane `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneHomography(Matrix3<f64>);

impl PlaneHomography {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Maps a view-1 pixel into view 2. `None` if it lands on the line at infinity.
    pub fn transfer(&self, pixel: &Vector2<f64>) -> Option<Vector2<f64>> {
        let h = self.0 * homogeneous(pixel);
        if h.z.abs() <= 1e-15 * h.x.abs().max(h.y.abs()).max(1.0) {
            return None;
        }
        Some(Vector2::new(h.x / h.z, h.y / h.z))
    }
}

/// `K [r1 r2 t]`, the map from plane coordinates `(x, y, 1)` to pixels.
fn plane_to_image(cam: &CameraModel) -> Result<Matrix3<f64>> {
    let mut m = Matrix3::zeros();
    m.set_column(0, &cam.rotation.column(0));
    m.set_column(1, &cam.rotation.column(1));
    m.set_column(2, &cam.translation);
    let m = cam.intrinsics * m;
    let sv = m.singular_values();
    let (max, min) = (sv.max(), sv.min());
    if !(min > 0.0) || max / min >= MAX_PLANE_CONDITION {
        return Err(Error::DegeneratePlane(cam.camera_id));
    }
    Ok(m)
}

pub fn plane_homography(cam1: &CameraModel, cam2: &CameraModel) -> Result<PlaneHomography> {
    let h1 = plane_to_image(cam1)?;
    let h2 = plane_to_image(cam2)?;
    let h1_inv = h1.try_inverse().ok_or(Error::DegeneratePlane(cam1.camera_id))?;
    let h = h2 * h1_inv;
    let h = if h[(2, 2)].abs() > 1e-12 * h.norm() {
        h / h[(2, 2)]
    } else {
        h / h.norm()
    };
    Ok(PlaneHomography(h))
}

/// Midpoint of the bottom edge, `((x1 + x2) / 2, y2)`.
pub fn bottom_mid_anchor(instance: &InstanceBox) -> Vector2<f64> {
    let b = &instance.bbox;
    Vector2::new((b.x1 + b.x2) * 0.5, b.y2)
}

/// Box center, the anchor used by the epipolar penalty.
pub fn box_center_anchor(instance: &InstanceBox) -> Vector2<f64> {
    let [u, v] = instance.bbox.center();
    Vector2::new(u, v)
}

/// World-frame viewing direction `Rᵀ (0, 0, 1)`.
pub fn line_of_sight(camera: &CameraModel) -> Vector3<f64> {
    camera.rotation.transpose() * Vector3::z()
}

/// Angle in degrees between the two cameras' lines of sight.
pub fn camera_angle_difference(cam1: &CameraModel, cam2: &CameraModel) -> f64 {
    let d = line_of_sight(cam1).dot(&line_of_sight(cam2)).clamp(-1.0, 1.0);
    d.acos().to_degrees()
}

/// Camera at `center` looking at `target` with world `+z` as up. Image rows
/// grow along world "down". A straight-down view uses world `+y` as up.
pub fn look_at_camera(
    camera_id: u32,
    center: Vector3<f64>,
    target: Vector3<f64>,
    intrinsics: Matrix3<f64>,
    image_size: (u32, u32),
) -> CameraModel {
    let fwd = (target - center).normalize();
    let up_hint = if fwd.cross(&Vector3::z()).norm() < 1e-6 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let right = fwd.cross(&up_hint).normalize();
    let down = fwd.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
    CameraModel {
        camera_id,
        intrinsics,
        rotation,
        translation: -(rotation * center),
        image_size,
    }
}
