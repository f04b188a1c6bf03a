//! Box overlap and detection-to-ground-truth identity transfer.

use nalgebra::DMatrix;

use super::{BBox, InstanceBox};
use crate::association::kuhn_munkres;

pub const DEFAULT_IOU_FLOOR: f64 = 0.5;

/// Intersection over union of two valid boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Hands out negative instance ids: -1, -2, ...
///
/// Share one allocator across every view of a scene so unmatched detections
/// never collide with each other across views.
#[derive(Debug, Clone)]
pub struct FreshIds {
    next: i64,
}

impl Default for FreshIds {
    fn default() -> Self {
        Self { next: -1 }
    }
}

impl FreshIds {
    pub fn next_id(&mut self) -> i64 {
        let id = self.next;
        self.next -= 1;
        id
    }
}

/// Transfers ground-truth instance ids onto detections via a maximum-IoU
/// bipartite matching. Matches below `iou_floor` and unmatched detections get
/// fresh negative ids. Output order follows `detections`.
pub fn assign_detections_to_gt(
    detections: &[InstanceBox],
    ground_truth: &[InstanceBox],
    iou_floor: f64,
) -> Vec<InstanceBox> {
    assign_detections_with(detections, ground_truth, iou_floor, &mut FreshIds::default())
}

pub fn assign_detections_with(
    detections: &[InstanceBox],
    ground_truth: &[InstanceBox],
    iou_floor: f64,
    fresh: &mut FreshIds,
) -> Vec<InstanceBox> {
    let overlaps = DMatrix::from_fn(detections.len(), ground_truth.len(), |i, j| {
        iou(&detections[i].bbox, &ground_truth[j].bbox)
    });
    let mut inherited: Vec<Option<i64>> = vec![None; detections.len()];
    for (i, j) in kuhn_munkres(&overlaps.map(|v| 1.0 - v)) {
        if overlaps[(i, j)] >= iou_floor {
            inherited[i] = Some(ground_truth[j].instance_id);
        }
    }
    detections
        .iter()
        .zip(inherited)
        .map(|(det, id)| InstanceBox {
            instance_id: id.unwrap_or_else(|| fresh.next_id()),
            ..det.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(id: i64, b: BBox) -> InstanceBox {
        InstanceBox::ground_truth(b, 0, id)
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &BBox::new(2.0, 0.0, 3.0, 2.0)), 0.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn identical_detections_inherit_ids() {
        let truth = vec![
            gt(4, BBox::new(0.0, 0.0, 10.0, 10.0)),
            gt(9, BBox::new(20.0, 0.0, 30.0, 10.0)),
        ];
        let dets: Vec<_> = truth
            .iter()
            .rev()
            .map(|g| InstanceBox::detection(g.bbox, 0))
            .collect();
        let out = assign_detections_to_gt(&dets, &truth, DEFAULT_IOU_FLOOR);
        assert_eq!(
            out.iter().map(|d| d.instance_id).collect::<Vec<_>>(),
            vec![9, 4]
        );
    }

    #[test]
    fn isolated_detection_gets_fresh_id() {
        let truth = vec![gt(1, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let dets = vec![
            InstanceBox::detection(BBox::new(0.0, 0.0, 10.0, 10.0), 0),
            InstanceBox::detection(BBox::new(50.0, 50.0, 60.0, 60.0), 0),
            InstanceBox::detection(BBox::new(70.0, 50.0, 80.0, 60.0), 0),
        ];
        let out = assign_detections_to_gt(&dets, &truth, DEFAULT_IOU_FLOOR);
        assert_eq!(out[0].instance_id, 1);
        assert!(out[1].instance_id < 0 && out[2].instance_id < 0);
        assert_ne!(out[1].instance_id, out[2].instance_id);
    }

    #[test]
    fn low_overlap_match_is_rejected() {
        let truth = vec![gt(1, BBox::new(0.0, 0.0, 10.0, 10.0))];
        let dets = vec![InstanceBox::detection(BBox::new(6.0, 0.0, 16.0, 10.0), 0)];
        let out = assign_detections_to_gt(&dets, &truth, DEFAULT_IOU_FLOOR);
        assert!(out[0].instance_id < 0);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn shifted_detections_match_brute_force() {
        // GT boxes crowded together so that several assignments overlap.
        let truth = vec![
            gt(10, BBox::new(0.0, 0.0, 10.0, 10.0)),
            gt(11, BBox::new(4.0, 0.0, 14.0, 10.0)),
            gt(12, BBox::new(8.0, 2.0, 18.0, 12.0)),
        ];
        let dets: Vec<_> = truth
            .iter()
            .map(|g| {
                let b = g.bbox;
                InstanceBox::detection(BBox::new(b.x1 + 1.0, b.y1 + 1.0, b.x2 + 1.0, b.y2 + 1.0), 0)
            })
            .collect();
        let best = permutations(3)
            .into_iter()
            .max_by(|p, q| {
                let score =
                    |p: &Vec<usize>| (0..3).map(|i| iou(&dets[i].bbox, &truth[p[i]].bbox)).sum::<f64>();
                score(p).partial_cmp(&score(q)).unwrap()
            })
            .unwrap();
        let out = assign_detections_with(&dets, &truth, 0.0, &mut FreshIds::default());
        for i in 0..3 {
            assert_eq!(out[i].instance_id, truth[best[i]].instance_id);
        }
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.1..50.0f64, 0.1..50.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn assignment_never_duplicates_or_drops(
            dets in prop::collection::vec(arb_box(), 0..8),
            gts in prop::collection::vec(arb_box(), 0..8),
        ) {
            let truth: Vec<_> = gts.iter().enumerate().map(|(i, b)| gt(i as i64, *b)).collect();
            let dets: Vec<_> = dets.iter().map(|b| InstanceBox::detection(*b, 0)).collect();
            let out = assign_detections_to_gt(&dets, &truth, 0.3);
            prop_assert_eq!(out.len(), dets.len());
            let mut ids: Vec<_> = out.iter().map(|d| d.instance_id).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), out.len());
        }
    }
}
