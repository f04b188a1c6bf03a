//! Evaluation: class-agnostic AP, FPR at a recall target, IPAA-X and an
//! angle-binned breakdown.
//!
//! AP and FPR work on instance-pair confidences; IPAA works on whole image
//! pairs, counting an object as correct when its predicted partner (or lack
//! of one) agrees with the ground truth.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Serialize, Serializer};

use crate::association::{PairRecord, SceneAssociationRecord};
use crate::error::{Error, Result};
use crate::geometry::camera_angle_difference;
use crate::scene::Scene;

/// IPAA levels reported by default, in report order.
pub const IPAA_LEVELS: [u32; 3] = [100, 90, 80];
pub const DEFAULT_RECALL_TARGET: f64 = 0.95;
pub const DEFAULT_BIN_WIDTH: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub confidence: f64,
    pub is_positive: bool,
}

/// `1 - x` for a distance already scaled into `[0, 1]`.
pub fn confidence_from_distance(scaled_distance: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&scaled_distance) {
        return Err(Error::InvalidArgument(format!(
            "scaled distance {scaled_distance} outside [0, 1]"
        )));
    }
    Ok(1.0 - scaled_distance)
}

/// Indices ordered by descending confidence; ties keep input order.
fn ranked(pairs: &[ScoredPair]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[b].confidence.total_cmp(&pairs[a].confidence));
    order
}

/// Mean of the precision at the rank of every positive.
pub fn average_precision(pairs: &[ScoredPair]) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.is_positive).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, idx) in ranked(pairs).into_iter().enumerate() {
        if pairs[idx].is_positive {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// False-positive rate at the highest confidence threshold whose recall
/// reaches `recall_target`. All pairs sharing a confidence enter together.
pub fn fpr_at_recall(pairs: &[ScoredPair], recall_target: f64) -> Result<f64> {
    let positives = pairs.iter().filter(|p| p.is_positive).count();
    let negatives = pairs.len() - positives;
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    if negatives == 0 {
        return Err(Error::NoNegatives);
    }
    let order = ranked(pairs);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let level = pairs[order[k]].confidence;
        while k < order.len() && pairs[order[k]].confidence == level {
            if pairs[order[k]].is_positive {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        if tp as f64 / positives as f64 >= recall_target {
            break;
        }
    }
    Ok(fp as f64 / negatives as f64)
}

/// One side's mapping from instance id to matched partner id.
pub type PartnerMap = BTreeMap<i64, Option<i64>>;

/// Predicted and true correspondences for one image pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAdjacency {
    ids_a: BTreeSet<i64>,
    ids_b: BTreeSet<i64>,
    predicted: (PartnerMap, PartnerMap),
    truth: (PartnerMap, PartnerMap),
}

fn partner_maps(
    ids_a: &BTreeSet<i64>,
    ids_b: &BTreeSet<i64>,
    pairs: &[(i64, i64)],
) -> Result<(PartnerMap, PartnerMap)> {
    let mut a_to_b: PartnerMap = ids_a.iter().map(|&id| (id, None)).collect();
    let mut b_to_a: PartnerMap = ids_b.iter().map(|&id| (id, None)).collect();
    for &(a, b) in pairs {
        let slot_a = a_to_b
            .get_mut(&a)
            .ok_or_else(|| Error::GroundTruthMismatch(format!("id {a} not in view A")))?;
        if slot_a.replace(b).is_some() {
            return Err(Error::InvalidArgument(format!("id {a} of view A matched twice")));
        }
        let slot_b = b_to_a
            .get_mut(&b)
            .ok_or_else(|| Error::GroundTruthMismatch(format!("id {b} not in view B")))?;
        if slot_b.replace(a).is_some() {
            return Err(Error::InvalidArgument(format!("id {b} of view B matched twice")));
        }
    }
    Ok((a_to_b, b_to_a))
}

impl PairAdjacency {
    /// Truth links every id present in both views to itself.
    pub fn from_shared_ids(
        ids_a: impl IntoIterator<Item = i64>,
        ids_b: impl IntoIterator<Item = i64>,
        predicted: &[(i64, i64)],
    ) -> Result<Self> {
        let ids_a: BTreeSet<i64> = ids_a.into_iter().collect();
        let ids_b: BTreeSet<i64> = ids_b.into_iter().collect();
        let truth: Vec<(i64, i64)> = ids_a.intersection(&ids_b).map(|&id| (id, id)).collect();
        Self::with_truth(ids_a, ids_b, predicted, &truth)
    }

    pub fn with_truth(
        ids_a: impl IntoIterator<Item = i64>,
        ids_b: impl IntoIterator<Item = i64>,
        predicted: &[(i64, i64)],
        truth: &[(i64, i64)],
    ) -> Result<Self> {
        let ids_a: BTreeSet<i64> = ids_a.into_iter().collect();
        let ids_b: BTreeSet<i64> = ids_b.into_iter().collect();
        let predicted = partner_maps(&ids_a, &ids_b, predicted)?;
        let truth = partner_maps(&ids_a, &ids_b, truth)?;
        Ok(Self {
            ids_a,
            ids_b,
            predicted,
            truth,
        })
    }

    /// Objects present in either view.
    pub fn universe(&self) -> BTreeSet<i64> {
        self.ids_a.union(&self.ids_b).copied().collect()
    }

    pub fn predicted(&self) -> &(PartnerMap, PartnerMap) {
        &self.predicted
    }

    pub fn truth(&self) -> &(PartnerMap, PartnerMap) {
        &self.truth
    }

    /// `(correct, universe size)`. An object is correct when every view it
    /// appears in predicts the true partner, including "no partner".
    pub fn correct_counts(&self) -> (usize, usize) {
        let universe = self.universe();
        let correct = universe
            .iter()
            .filter(|id| {
                let side_ok = |pred: &PartnerMap, truth: &PartnerMap| pred.get(id) == truth.get(id);
                side_ok(&self.predicted.0, &self.truth.0) && side_ok(&self.predicted.1, &self.truth.1)
            })
            .count();
        (correct, universe.len())
    }

    /// Same adjacency seen from the other view.
    pub fn swapped(&self) -> Self {
        Self {
            ids_a: self.ids_b.clone(),
            ids_b: self.ids_a.clone(),
            predicted: (self.predicted.1.clone(), self.predicted.0.clone()),
            truth: (self.truth.1.clone(), self.truth.0.clone()),
        }
    }
}

/// Fraction of objects in the pair's universe associated correctly. An empty
/// universe counts as fully correct.
pub fn pair_fraction_correct(adj: &PairAdjacency) -> f64 {
    let (correct, total) = adj.correct_counts();
    if total == 0 {
        1.0
    } else {
        correct as f64 / total as f64
    }
}

fn check_level(x: u32) -> Result<()> {
    if x == 0 || x > 100 {
        return Err(Error::InvalidArgument(format!("IPAA level {x} outside (0, 100]")));
    }
    Ok(())
}

fn meets_level((correct, total): (usize, usize), x: u32) -> bool {
    // exact integer form of correct / total >= x / 100
    correct * 100 >= x as usize * total
}

/// Fraction of image pairs with at least `x` percent of objects correct.
pub fn ipaa(adjacencies: &[PairAdjacency], x: u32) -> Result<f64> {
    check_level(x)?;
    if adjacencies.is_empty() {
        return Err(Error::EmptyInput("no image pairs"));
    }
    let hits = adjacencies
        .iter()
        .filter(|a| meets_level(a.correct_counts(), x))
        .count();
    Ok(hits as f64 / adjacencies.len() as f64)
}

/// IPAA over precomputed per-pair fractions.
pub fn ipaa_from_fractions(fractions: &[f64], x: u32) -> Result<f64> {
    check_level(x)?;
    if fractions.is_empty() {
        return Err(Error::EmptyInput("no image pairs"));
    }
    let level = x as f64 / 100.0;
    let hits = fractions.iter().filter(|&&f| f >= level - 1e-12).count();
    Ok(hits as f64 / fractions.len() as f64)
}

/// Everything the metrics need about one evaluated view pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEvaluation {
    pub scene_id: String,
    pub cameras: (u32, u32),
    pub angle_deg: f64,
    pub adjacency: PairAdjacency,
    /// `(distance, same instance)` for every candidate instance pair.
    pub candidates: Vec<(f64, bool)>,
}

impl PairEvaluation {
    /// Joins one association record with its scene's ground-truth ids.
    pub fn from_record(scene: &Scene, record: &PairRecord) -> Result<Self> {
        let [ca, cb] = record.cameras;
        let lookup = |cam: u32| {
            scene.view(cam).ok_or_else(|| {
                Error::GroundTruthMismatch(format!(
                    "scene {} has no camera {cam}",
                    scene.scene_id
                ))
            })
        };
        let (va, vb) = (lookup(ca)?, lookup(cb)?);
        let id = |view: &crate::scene::SceneView, idx: usize| {
            view.instances.get(idx).map(|i| i.instance_id).ok_or_else(|| {
                Error::GroundTruthMismatch(format!(
                    "index {idx} out of range for camera {} in scene {}",
                    view.camera_id(),
                    scene.scene_id
                ))
            })
        };
        let predicted = record
            .matches
            .iter()
            .map(|&(i, j, _)| Ok((id(va, i)?, id(vb, j)?)))
            .collect::<Result<Vec<_>>>()?;
        let adjacency = PairAdjacency::from_shared_ids(
            va.instances.iter().map(|i| i.instance_id),
            vb.instances.iter().map(|i| i.instance_id),
            &predicted,
        )?;
        let mut candidates = Vec::new();
        if let Some(rows) = &record.distances {
            if rows.len() != va.instances.len()
                || rows.iter().any(|r| r.len() != vb.instances.len())
            {
                return Err(Error::GroundTruthMismatch(format!(
                    "distance matrix shape does not match cameras {ca}/{cb} of scene {}",
                    scene.scene_id
                )));
            }
            for (ia, row) in va.instances.iter().zip(rows) {
                for (ib, &d) in vb.instances.iter().zip(row) {
                    candidates.push((d, ia.instance_id == ib.instance_id));
                }
            }
        }
        Ok(Self {
            scene_id: scene.scene_id.clone(),
            cameras: (ca, cb),
            angle_deg: camera_angle_difference(&va.camera, &vb.camera),
            adjacency,
            candidates,
        })
    }
}

/// Every pair of one scene's association output joined with the scene.
pub fn scene_evaluations(scene: &Scene, record: &SceneAssociationRecord) -> Result<Vec<PairEvaluation>> {
    if record.scene_id != scene.scene_id {
        return Err(Error::GroundTruthMismatch(format!(
            "association output is for scene {}, not {}",
            record.scene_id, scene.scene_id
        )));
    }
    record
        .pairs
        .iter()
        .map(|p| PairEvaluation::from_record(scene, p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApPooling {
    /// All candidate pairs of the evaluation set ranked together.
    #[default]
    Global,
    /// AP per image pair, averaged over pairs with at least one positive.
    PerPairAverage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub recall_target: f64,
    pub bin_width: f64,
    pub levels: Vec<u32>,
    pub pooling: ApPooling,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            recall_target: DEFAULT_RECALL_TARGET,
            bin_width: DEFAULT_BIN_WIDTH,
            levels: IPAA_LEVELS.to_vec(),
            pooling: ApPooling::Global,
        }
    }
}

/// Writes `(X, value)` levels as an ordered `{"ipaa100": .., "ipaa90": ..}` map.
pub fn serialize_levels<S: Serializer>(levels: &[(u32, f64)], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_map(levels.iter().map(|(x, v)| (format!("ipaa{x}"), v)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngleBin {
    pub lo_deg: f64,
    pub hi_deg: f64,
    pub pairs: usize,
    pub ap: Option<f64>,
    pub fpr95: Option<f64>,
    #[serde(serialize_with = "serialize_levels")]
    pub ipaa: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub pairs: usize,
    pub ap: Option<f64>,
    pub fpr95: Option<f64>,
    /// `(X, IPAA-X)` in the order requested, 100/90/80 by default.
    #[serde(serialize_with = "serialize_levels")]
    pub ipaa: Vec<(u32, f64)>,
    pub angle_bins: Vec<AngleBin>,
}

impl MetricsReport {
    pub fn ipaa_at(&self, x: u32) -> Option<f64> {
        self.ipaa.iter().find(|(l, _)| *l == x).map(|(_, v)| *v)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// One summary row followed by one row per angle bin.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("row,angle_lo,angle_hi,pairs,ap,fpr95");
        for (l, _) in &self.ipaa {
            out.push_str(&format!(",ipaa{l}"));
        }
        out.push('\n');
        let mut line = |label: &str, lo: String, hi: String, pairs: usize, ap, fpr, ipaa: &[(u32, f64)]| {
            out.push_str(&format!("{label},{lo},{hi},{pairs},{},{}", opt(ap), opt(fpr)));
            for (_, v) in ipaa {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        };
        line("summary", String::new(), String::new(), self.pairs, self.ap, self.fpr95, &self.ipaa);
        for b in &self.angle_bins {
            line("bin", b.lo_deg.to_string(), b.hi_deg.to_string(), b.pairs, b.ap, b.fpr95, &b.ipaa);
        }
        out
    }
}

fn scored_pairs(evals: &[&PairEvaluation], extrema: Option<(f64, f64)>) -> Vec<ScoredPair> {
    let Some((lo, hi)) = extrema else {
        return Vec::new();
    };
    let spread = hi - lo;
    evals
        .iter()
        .flat_map(|e| e.candidates.iter())
        .map(|&(d, is_positive)| {
            let scaled = if spread < 1e-12 {
                0.5
            } else {
                ((d - lo) / spread).clamp(0.0, 1.0)
            };
            ScoredPair {
                confidence: 1.0 - scaled,
                is_positive,
            }
        })
        .collect()
}

fn extrema(evals: &[&PairEvaluation]) -> Option<(f64, f64)> {
    evals
        .iter()
        .flat_map(|e| e.candidates.iter().map(|c| c.0))
        .fold(None, |acc, d| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
}

fn ranking_metrics(
    evals: &[&PairEvaluation],
    extrema: Option<(f64, f64)>,
    options: &EvalOptions,
) -> (Option<f64>, Option<f64>) {
    let pooled = scored_pairs(evals, extrema);
    let ap = match options.pooling {
        ApPooling::Global => average_precision(&pooled).ok(),
        ApPooling::PerPairAverage => {
            let per: Vec<f64> = evals
                .iter()
                .filter_map(|e| average_precision(&scored_pairs(&[*e], extrema)).ok())
                .collect();
            (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
        }
    };
    let fpr = fpr_at_recall(&pooled, options.recall_target).ok();
    (ap, fpr)
}

fn ipaa_levels(evals: &[&PairEvaluation], levels: &[u32]) -> Result<Vec<(u32, f64)>> {
    let adjs: Vec<PairAdjacency> = evals.iter().map(|e| e.adjacency.clone()).collect();
    levels.iter().map(|&x| Ok((x, ipaa(&adjs, x)?))).collect()
}

/// Bin index for an angle under `[k w, (k+1) w)` bins, the last bin closed at 180.
pub fn angle_bin_index(angle_deg: f64, bin_width: f64) -> usize {
    let count = (180.0 / bin_width).ceil() as usize;
    ((angle_deg / bin_width).floor() as usize).min(count - 1)
}

/// Groups pairs by camera angle difference. Distances are scaled with the
/// extrema of the whole set so bins stay comparable with the summary.
pub fn angle_binned_report(evals: &[PairEvaluation], options: &EvalOptions) -> Result<Vec<AngleBin>> {
    if !(options.bin_width > 0.0 && options.bin_width <= 180.0) {
        return Err(Error::InvalidArgument(format!(
            "bin width {} outside (0, 180]",
            options.bin_width
        )));
    }
    let all: Vec<&PairEvaluation> = evals.iter().collect();
    let ext = extrema(&all);
    let count = (180.0 / options.bin_width).ceil() as usize;
    let mut buckets: Vec<Vec<&PairEvaluation>> = vec![Vec::new(); count];
    for e in evals {
        buckets[angle_bin_index(e.angle_deg, options.bin_width)].push(e);
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let lo = k as f64 * options.bin_width;
            let hi = ((k + 1) as f64 * options.bin_width).min(180.0);
            let (ap, fpr95) = ranking_metrics(&members, ext, options);
            let ipaa = if members.is_empty() {
                Vec::new()
            } else {
                ipaa_levels(&members, &options.levels)?
            };
            Ok(AngleBin {
                lo_deg: lo,
                hi_deg: hi,
                pairs: members.len(),
                ap,
                fpr95,
                ipaa,
            })
        })
        .collect()
}

/// Full report over an evaluation set.
pub fn evaluate(evals: &[PairEvaluation], options: &EvalOptions) -> Result<MetricsReport> {
    if evals.is_empty() {
        return Err(Error::EmptyInput("no image pairs"));
    }
    let all: Vec<&PairEvaluation> = evals.iter().collect();
    let (ap, fpr95) = ranking_metrics(&all, extrema(&all), options);
    Ok(MetricsReport {
        pairs: evals.len(),
        ap,
        fpr95,
        ipaa: ipaa_levels(&all, &options.levels)?,
        angle_bins: angle_binned_report(evals, options)?,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[k]] {
            end += 1;
        }
        let rank = (k + end) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=end] {
            ranks[idx] = rank;
        }
        k = end + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
