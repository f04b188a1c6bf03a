//! k-means codebooks and visual-bag-of-words encoding.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FeatureKind, FeatureVector};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = centroids.first() else {
            return Err(Error::InvalidArgument("codebook needs at least one centroid".into()));
        };
        let dim = first.len();
        for c in &centroids {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.len(),
                });
            }
            if !c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("centroid"));
            }
        }
        for (i, a) in centroids.iter().enumerate() {
            for b in &centroids[i + 1..] {
                if sq_dist(a, b).sqrt() <= 1e-12 {
                    return Err(Error::InvalidArgument("duplicate centroids".into()));
                }
            }
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Index of the closest centroid; ties go to the lowest index.
    pub fn nearest(&self, descriptor: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(c, descriptor);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

/// Lloyd's k-means from a seeded k-means++ start.
pub fn kmeans_codebook(descriptors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Result<Codebook> {
    kmeans_with_trace(descriptors, k, seed, max_iters).map(|(c, _)| c)
}

/// Like [`kmeans_codebook`], also returning the objective (sum of squared
/// distances to the assigned centroid) after each assignment step.
pub fn kmeans_with_trace(
    descriptors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<(Codebook, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let dim = descriptors.first().map(Vec::len).unwrap_or(0);
    for d in descriptors {
        if d.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: d.len(),
            });
        }
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("descriptor"));
        }
    }
    let distinct = distinct_count(descriptors);
    if k > distinct || dim == 0 {
        return Err(Error::TooFewDescriptors { k, distinct });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![descriptors[rng.random_range(0..descriptors.len())].clone()];
    let mut nearest_sq: Vec<f64> = descriptors.iter().map(|d| sq_dist(d, &centroids[0])).collect();
    while centroids.len() < k {
        // points already chosen have weight 0, so picks stay distinct
        let pick = WeightedIndex::new(&nearest_sq)
            .expect("k <= distinct guarantees positive total weight")
            .sample(&mut rng);
        let c = descriptors[pick].clone();
        for (w, d) in nearest_sq.iter_mut().zip(descriptors) {
            *w = w.min(sq_dist(d, &c));
        }
        centroids.push(c);
    }

    let mut book = Codebook { centroids };
    let mut assignment: Vec<usize> = descriptors.iter().map(|d| book.nearest(d)).collect();
    let objective = |book: &Codebook, assignment: &[usize]| -> f64 {
        descriptors
            .iter()
            .zip(assignment)
            .map(|(d, &a)| sq_dist(d, &book.centroids[a]))
            .sum()
    };
    let mut trace = vec![objective(&book, &assignment)];

    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (d, &a) in descriptors.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(d) {
                *s += v;
            }
        }
        for ((c, s), n) in book.centroids.iter_mut().zip(sums).zip(&counts) {
            // an empty cluster keeps its previous centroid
            if *n > 0 {
                *c = s.into_iter().map(|v| v / *n as f64).collect();
            }
        }
        let next: Vec<usize> = descriptors.iter().map(|d| book.nearest(d)).collect();
        trace.push(objective(&book, &next));
        let changed = next != assignment;
        assignment = next;
        if !changed {
            break;
        }
    }
    let book = Codebook::new(book.centroids)?;
    Ok((book, trace))
}

/// Hard-assignment histogram over the codebook, L1 normalized. An empty
/// descriptor list encodes to the uniform vector.
pub fn vbow_encode(descriptors: &[Vec<f64>], codebook: &Codebook) -> Result<FeatureVector> {
    let k = codebook.k();
    if descriptors.is_empty() {
        return FeatureVector::new(vec![1.0 / k as f64; k], FeatureKind::Vbow);
    }
    let mut hist = vec![0.0; k];
    for d in descriptors {
        if d.len() != codebook.dim() {
            return Err(Error::DimensionMismatch {
                expected: codebook.dim(),
                actual: d.len(),
            });
        }
        hist[codebook.nearest(d)] += 1.0;
    }
    let n = descriptors.len() as f64;
    hist.iter_mut().for_each(|v| *v /= n);
    FeatureVector::new(hist, FeatureKind::Vbow)
}
