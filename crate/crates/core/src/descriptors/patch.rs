//! Minimal pixel access and the descriptors computed from it.

use super::{FeatureKind, FeatureVector};
use crate::error::{Error, Result};

pub const DEFAULT_HISTOGRAM_BINS: usize = 8;
pub const DEFAULT_GRID_CELL: usize = 16;

/// Read-only RGB pixel access. Callers own decoding.
pub trait PixelSource {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn rgb(&self, x: usize, y: usize) -> [u8; 3];
}

/// Row-major packed RGB buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbPatch {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbPatch {
    pub fn new(width: usize, height: usize, data: Vec<[u8; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width.max(1)) {
            data.extend(row.iter().rev());
        }
        Self { data, ..*self }
    }
}

impl PixelSource for RgbPatch {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }
}

/// Per-channel color histograms concatenated as `[R bins | G bins | B bins]`,
/// normalized so the whole vector sums to 1.
pub fn color_histogram_descriptor(patch: &impl PixelSource, bins_per_channel: usize) -> Result<FeatureVector> {
    if !(2..=16).contains(&bins_per_channel) {
        return Err(Error::InvalidArgument(format!(
            "bins_per_channel {bins_per_channel} outside [2, 16]"
        )));
    }
    let (w, h) = (patch.width(), patch.height());
    if w == 0 || h == 0 {
        return Err(Error::EmptyPatch);
    }
    let mut hist = vec![0.0; 3 * bins_per_channel];
    for y in 0..h {
        for x in 0..w {
            for (c, &v) in patch.rgb(x, y).iter().enumerate() {
                let bin = v as usize * bins_per_channel / 256;
                hist[c * bins_per_channel + bin] += 1.0;
            }
        }
    }
    let total = (3 * w * h) as f64;
    hist.iter_mut().for_each(|v| *v /= total);
    FeatureVector::new(hist, FeatureKind::Appearance)
}

const ORIENTATION_BINS: usize = 8;

/// Local descriptors on a regular grid of `cell x cell` tiles: an 8-bin
/// gradient-orientation histogram (magnitude weighted, L1 normalized) followed
/// by the tile's mean R, G, B scaled to `[0, 1]`. Tiles smaller than 2x2 at
/// the right/bottom border are skipped.
pub fn dense_grid_descriptors(patch: &impl PixelSource, cell: usize) -> Result<Vec<Vec<f64>>> {
    if cell < 2 {
        return Err(Error::InvalidArgument(format!("grid cell {cell} must be >= 2")));
    }
    let (w, h) = (patch.width(), patch.height());
    if w == 0 || h == 0 {
        return Err(Error::EmptyPatch);
    }
    let luma = |x: usize, y: usize| {
        let [r, g, b] = patch.rgb(x, y);
        0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
    };
    let mut out = Vec::new();
    for y0 in (0..h).step_by(cell) {
        for x0 in (0..w).step_by(cell) {
            let (x1, y1) = ((x0 + cell).min(w), (y0 + cell).min(h));
            if x1 - x0 < 2 || y1 - y0 < 2 {
                continue;
            }
            let mut desc = vec![0.0; ORIENTATION_BINS + 3];
            let mut mean = [0.0; 3];
            for y in y0..y1 {
                for x in x0..x1 {
                    let gx = luma((x + 1).min(w - 1), y) - luma(x.saturating_sub(1), y);
                    let gy = luma(x, (y + 1).min(h - 1)) - luma(x, y.saturating_sub(1));
                    let mag = gx.hypot(gy);
                    if mag > 0.0 {
                        let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                        let bin = ((angle / std::f64::consts::TAU) * ORIENTATION_BINS as f64) as usize;
                        desc[bin.min(ORIENTATION_BINS - 1)] += mag;
                    }
                    for (m, v) in mean.iter_mut().zip(patch.rgb(x, y)) {
                        *m += v as f64;
                    }
                }
            }
            let total: f64 = desc[..ORIENTATION_BINS].iter().sum();
            if total > 0.0 {
                desc[..ORIENTATION_BINS].iter_mut().for_each(|v| *v /= total);
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            for (slot, m) in desc[ORIENTATION_BINS..].iter_mut().zip(mean) {
                *slot = m / n / 255.0;
            }
            out.push(desc);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_patch(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbPatch {
        let data = (0..w * h).map(|_| rng.random::<[u8; 3]>()).collect();
        RgbPatch::new(w, h, data).unwrap()
    }

    #[test]
    fn uniform_patch_is_a_delta_per_channel() {
        let patch = RgbPatch::filled(5, 4, [255, 0, 130]);
        let d = color_histogram_descriptor(&patch, 8).unwrap();
        let v = d.values();
        let nonzero: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
        assert_eq!(nonzero, vec![7, 8, 16 + 4]);
        for i in nonzero {
            assert!((v[i] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mirror_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patch = random_patch(&mut rng, 7, 5);
        assert_eq!(
            color_histogram_descriptor(&patch, 6).unwrap(),
            color_histogram_descriptor(&patch.mirrored(), 6).unwrap()
        );
    }

    #[test]
    fn histogram_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let patch = random_patch(&mut rng, 9, 11);
        let bins = 5;
        let d = color_histogram_descriptor(&patch, bins).unwrap();
        let mut counts = vec![0usize; 3 * bins];
        for y in 0..11 {
            for x in 0..9 {
                let px = patch.rgb(x, y);
                for c in 0..3 {
                    // bin edges at multiples of 256 / bins
                    let bin = (0..bins)
                        .rev()
                        .find(|&b| px[c] as f64 >= b as f64 * 256.0 / bins as f64)
                        .unwrap();
                    counts[c * bins + bin] += 1;
                }
            }
        }
        for (got, count) in d.values().iter().zip(counts) {
            assert!((got - count as f64 / (3.0 * 99.0)).abs() < 1e-15);
        }
        assert!((d.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn histogram_errors() {
        let empty = RgbPatch::new(0, 3, vec![]).unwrap();
        assert!(matches!(color_histogram_descriptor(&empty, 8), Err(Error::EmptyPatch)));
        let p = RgbPatch::filled(2, 2, [0, 0, 0]);
        assert!(color_histogram_descriptor(&p, 1).is_err());
        assert!(color_histogram_descriptor(&p, 17).is_err());
    }

    #[test]
    fn dense_grid_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let patch = random_patch(&mut rng, 40, 33);
        let d = dense_grid_descriptors(&patch, 16).unwrap();
        // columns 0,16,32(8 wide); rows 0,16,32(1 tall, skipped)
        assert_eq!(d.len(), 6);
        for desc in &d {
            assert_eq!(desc.len(), 11);
            let s: f64 = desc[..8].iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        let flat = RgbPatch::filled(16, 16, [255, 0, 0]);
        let d = dense_grid_descriptors(&flat, 16).unwrap();
        assert_eq!(d, vec![vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]]);
    }
}
