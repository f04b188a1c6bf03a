use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::{look_at_camera, project_point};
use crate::scene::{BBox, CameraModel, EmbeddingPair, InstanceBox};

fn k(width: u32, height: u32) -> Matrix3<f64> {
    Matrix3::new(700.0, 0.0, width as f64 / 2.0, 0.0, 700.0, height as f64 / 2.0, 0.0, 0.0, 1.0)
}

fn view(camera: CameraModel, boxes: &[(BBox, i64)]) -> SceneView {
    SceneView {
        camera,
        image_path: None,
        instances: boxes
            .iter()
            .map(|&(b, id)| InstanceBox::ground_truth(b, 0, id))
            .collect(),
    }
}

fn centered_box(u: f64, v: f64) -> BBox {
    BBox::new(u - 10.0, v - 15.0, u + 10.0, v + 15.0)
}

fn table(dim: usize, rows: &[(u32, i64, Vec<f32>, Vec<f32>)]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(dim).unwrap();
    for (cam, id, app, sur) in rows {
        t.insert(
            *cam,
            *id,
            EmbeddingPair {
                appearance: app.clone(),
                surrounding: sur.clone(),
            },
        )
        .unwrap();
    }
    t
}

fn dm(rows: usize, cols: usize, data: &[f64]) -> DistanceMatrix {
    DistanceMatrix::new(DMatrix::from_row_slice(rows, cols, data)).unwrap()
}

#[test]
fn fusion_extremes() {
    let app = [0.3, -0.4, 0.5];
    let (sa, sb) = ([1.0, 2.0, 3.0], [1.5, 0.0, 3.0]);
    let (d, lambda) = asnet_fusion_distance(&app, &sa, &app, &sb, LambdaMode::Clamped).unwrap();
    assert_eq!(lambda, 1.0);
    assert_eq!(d, l2_distance(&sa, &sb).unwrap());

    let (ba, bb) = ([1.0, 0.0, 0.0], [0.0, 2.0, 0.0]);
    let (d, lambda) = asnet_fusion_distance(&ba, &sa, &bb, &sb, LambdaMode::Clamped).unwrap();
    assert_eq!(lambda, 0.0);
    assert_eq!(d, l2_distance(&ba, &bb).unwrap());
}

#[test]
fn fusion_hand_example() {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let app_a = [1.0, 0.0];
    let app_b = [s, s];
    let (sur_a, sur_b) = ([0.0, 0.0], [2.0, 0.0]);
    let (d, lambda) = asnet_fusion_distance(&app_a, &sur_a, &app_b, &sur_b, LambdaMode::Clamped).unwrap();
    // D(app) = sqrt((1 - s)² + s²) = sqrt(2 - sqrt 2)
    let d_app = (2.0 - 2.0f64.sqrt()).sqrt();
    assert!((d_app - 0.7654).abs() < 1e-4);
    assert!((lambda - s).abs() < 1e-15);
    let want = (1.0 - s) * d_app + s * 2.0;
    assert!((d - want).abs() < 1e-12);
    assert!((d - 1.6384).abs() < 1e-4);
}

#[test]
fn fusion_raw_lambda_can_be_negative() {
    let (d, lambda) = asnet_fusion_distance(&[1.0, 0.0], &[0.0], &[-1.0, 0.0], &[1.0], LambdaMode::Raw).unwrap();
    assert_eq!(lambda, -1.0);
    assert_eq!(d, 2.0 * 2.0 - 1.0);
    let (_, clamped) =
        asnet_fusion_distance(&[1.0, 0.0], &[0.0], &[-1.0, 0.0], &[1.0], LambdaMode::Clamped).unwrap();
    assert_eq!(clamped, 0.0);
    assert!(matches!(
        asnet_fusion_distance(&[0.0, 0.0], &[0.0], &[1.0, 0.0], &[1.0], LambdaMode::Clamped),
        Err(Error::ZeroVector)
    ));
}

fn two_camera_rig() -> (CameraModel, CameraModel) {
    let a = look_at_camera(0, Vector3::new(0.0, -0.7, 0.5), Vector3::zeros(), k(1280, 960), (1280, 960));
    let b = look_at_camera(1, Vector3::new(0.6, 0.3, 0.55), Vector3::zeros(), k(1280, 960), (1280, 960));
    (a, b)
}

#[test]
fn identical_embeddings_give_zero_matrix() {
    let (ca, cb) = two_camera_rig();
    let va = view(ca, &[(centered_box(100.0, 100.0), 5)]);
    let vb = view(cb, &[(centered_box(300.0, 200.0), 5)]);
    let e = vec![0.5f32, -1.0, 2.0];
    let t = table(3, &[(0, 5, e.clone(), e.clone()), (1, 5, e.clone(), e)]);
    let m = build_distance_matrix(&va, &vb, &t, &ScorerConfig::default()).unwrap();
    assert_eq!(m.values(), &DMatrix::from_element(1, 1, 0.0));
}

#[test]
fn missing_embedding_is_reported() {
    let (ca, cb) = two_camera_rig();
    let va = view(ca, &[(centered_box(100.0, 100.0), 5)]);
    let vb = view(cb, &[(centered_box(300.0, 200.0), 6)]);
    let t = table(1, &[(0, 5, vec![1.0], vec![1.0])]);
    assert!(matches!(
        build_distance_matrix(&va, &vb, &t, &ScorerConfig::default()),
        Err(Error::MissingEmbedding {
            camera_id: 1,
            instance_id: 6
        })
    ));
    let custom = ScorerConfig {
        mode: ScorerMode::Custom,
        ..Default::default()
    };
    assert!(build_distance_matrix(&va, &vb, &t, &custom).is_err());
}

#[test]
fn fusion_matrix_matches_per_pair_oracle() {
    let (ca, cb) = two_camera_rig();
    let va = view(ca, &[(centered_box(100.0, 100.0), 1), (centered_box(200.0, 100.0), 2)]);
    let vb = view(cb, &[(centered_box(300.0, 200.0), 2), (centered_box(400.0, 200.0), 1)]);
    let rows = vec![
        (0, 1, vec![1.0f32, 0.0, 0.2], vec![0.1f32, 0.9, 0.0]),
        (0, 2, vec![0.0, 1.0, 0.1], vec![0.5, 0.5, 0.5]),
        (1, 2, vec![0.1, 0.9, 0.1], vec![0.4, 0.6, 0.5]),
        (1, 1, vec![0.9, 0.1, 0.3], vec![0.2, 0.8, 0.1]),
    ];
    let t = table(3, &rows);
    let config = ScorerConfig {
        mode: ScorerMode::AsnetFusion,
        ..Default::default()
    };
    let m = build_distance_matrix(&va, &vb, &t, &config).unwrap();
    let widen = |v: &Vec<f32>| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    for (i, ia) in [1i64, 2].iter().enumerate() {
        for (j, ib) in [2i64, 1].iter().enumerate() {
            let a = rows.iter().find(|r| r.0 == 0 && r.1 == *ia).unwrap();
            let b = rows.iter().find(|r| r.0 == 1 && r.1 == *ib).unwrap();
            let (aa, sa, ab, sb) = (widen(&a.2), widen(&a.3), widen(&b.2), widen(&b.3));
            let cos = aa.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>()
                / (aa.iter().map(|x| x * x).sum::<f64>().sqrt() * ab.iter().map(|x| x * x).sum::<f64>().sqrt());
            let lambda = cos.clamp(0.0, 1.0);
            let l2 = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let want = (1.0 - lambda) * l2(&aa, &ab) + lambda * l2(&sa, &sb);
            assert!((m.get(i, j) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn vbow_mode_uses_chi_square() {
    let (ca, cb) = two_camera_rig();
    let va = view(ca, &[(centered_box(100.0, 100.0), 1)]);
    let vb = view(cb, &[(centered_box(300.0, 200.0), 1)]);
    let t = table(2, &[(0, 1, vec![1.0, 0.0], vec![0.0, 0.0]), (1, 1, vec![0.0, 1.0], vec![0.0, 0.0])]);
    let config = ScorerConfig {
        mode: ScorerMode::Vbow,
        ..Default::default()
    };
    let m = build_distance_matrix(&va, &vb, &t, &config).unwrap();
    assert!((m.get(0, 0) - 1.0).abs() < 1e-9);
}

#[test]
fn homography_mode_exact_for_on_plane_anchors() {
    let (ca, cb) = two_camera_rig();
    let ground = [
        Vector3::new(0.05, 0.02, 0.0),
        Vector3::new(-0.12, 0.1, 0.0),
        Vector3::new(0.2, -0.15, 0.0),
    ];
    // boxes whose bottom-mid anchor is the projection of a table point
    let anchored = |cam: &CameraModel, ids: &[usize]| -> Vec<(BBox, i64)> {
        ids.iter()
            .map(|&i| {
                let p = project_point(cam, &ground[i]).unwrap();
                (BBox::new(p.x - 12.0, p.y - 40.0, p.x + 12.0, p.y), i as i64)
            })
            .collect()
    };
    let va = view(ca.clone(), &anchored(&ca, &[0, 1, 2]));
    let vb = view(cb.clone(), &anchored(&cb, &[2, 0, 1]));
    let empty = EmbeddingTable::new(1).unwrap();
    let config = ScorerConfig {
        mode: ScorerMode::Homography,
        ..Default::default()
    };
    let m = build_distance_matrix(&va, &vb, &empty, &config).unwrap();
    for (i, j) in [(0, 1), (1, 2), (2, 0)] {
        assert!(m.get(i, j) < 1e-6, "{}", m.get(i, j));
    }
    let result = associate_view_pair(&va, &vb, &empty, &config).unwrap();
    let mut pairs: Vec<_> = result.matches.iter().map(|m| (m.0, m.1)).collect();
    pairs.sort_unstable();
    assert_eq!(pairs, vec![(0, 1), (1, 2), (2, 0)]);
}

/// Rectified 800x600 pair (diagonal 1000 px): epipolar lines are image rows.
fn rectified_rig() -> (CameraModel, CameraModel) {
    let make = |id: u32, x: f64| CameraModel {
        camera_id: id,
        intrinsics: k(800, 600),
        rotation: Matrix3::identity(),
        translation: Vector3::new(x, 0.0, 0.0),
        image_size: (800, 600),
    };
    (make(0, 0.0), make(1, -0.3))
}

#[test]
fn epipolar_penalty_examples() {
    let (ca, cb) = rectified_rig();
    let va = view(ca, &[(centered_box(400.0, 300.0), 1)]);
    let vb = view(cb, &[(centered_box(350.0, 500.0), 1), (centered_box(120.0, 300.0), 2)]);
    let m = dm(1, 2, &[0.25, 0.5]);
    assert_eq!(add_epipolar_penalty(&m, &va, &vb, 0.0).unwrap(), m);
    let p = add_epipolar_penalty(&m, &va, &vb, 1.0).unwrap();
    assert!((p.get(0, 0) - (0.25 + 0.2)).abs() < 1e-12);
    assert!((p.get(0, 1) - 0.5).abs() < 1e-12);

    let bad = dm(2, 2, &[0.0; 4]);
    assert!(add_epipolar_penalty(&bad, &va, &vb, 1.0).is_err());

    let mut same = va.clone();
    same.camera.camera_id = 9;
    assert!(matches!(
        add_epipolar_penalty(&dm(1, 1, &[0.0]), &va, &same, 1.0),
        Err(Error::ZeroBaseline(0, 9))
    ));
}

#[test]
fn normalization_examples() {
    let m = dm(1, 3, &[2.0, 4.0, 6.0]);
    let n = normalize_distances(&m, Normalization::PerPair);
    assert_eq!(n.values().as_slice(), &[0.0, 0.5, 1.0]);
    assert_eq!(n.scale_info(), Some((2.0, 6.0)));

    let flat = normalize_distances(&dm(2, 2, &[3.0; 4]), Normalization::PerPair);
    assert!(flat.values().iter().all(|&v| v == 0.5));

    let set = [dm(1, 2, &[1.0, 3.0]), dm(2, 1, &[0.5, 2.0]), dm(1, 1, &[9.0])];
    let (lo, hi) = pooled_extrema(&set).unwrap();
    // pooled scan
    let all: Vec<f64> = set.iter().flat_map(|m| m.values().iter().copied()).collect();
    let scan_lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let scan_hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((lo, hi), (scan_lo, scan_hi));
    for m in &set {
        let n = normalize_distances(m, Normalization::Global { min: lo, max: hi });
        for (x, y) in m.values().iter().zip(n.values().iter()) {
            assert!((y - (x - 0.5) / 8.5).abs() < 1e-15);
        }
    }
    assert!(pooled_extrema(&[dm(0, 3, &[])]).is_none());
}

#[test]
fn threshold_examples() {
    let m = dm(3, 3, &[0.1, 0.7, 0.8, 0.6, 0.4, 0.95, 0.7, 0.99, 0.9]);
    let assignment = kuhn_munkres_assign(&m);
    assert_eq!(assignment, vec![(0, 0), (1, 1), (2, 2)]);

    let all = threshold_filter(&assignment, &m, 1.0);
    assert_eq!(all.matches.len(), 3);
    assert!(all.unmatched_a.is_empty() && all.unmatched_b.is_empty());

    let none = threshold_filter(&assignment, &m, 0.0);
    assert!(none.matches.is_empty());
    assert_eq!(none.unmatched_a, vec![0, 1, 2]);

    let mixed = threshold_filter(&assignment, &m, 0.5);
    assert_eq!(mixed.matches, vec![(0, 0, 0.1), (1, 1, 0.4)]);
    assert_eq!(mixed.unmatched_a, vec![2]);
    assert_eq!(mixed.unmatched_b, vec![2]);
    assert!(mixed.is_partition(3, 3));

    let rect = dm(2, 3, &[0.2, 0.9, 0.1, 0.3, 0.2, 0.9]);
    let r = threshold_filter(&kuhn_munkres_assign(&rect), &rect, 0.5);
    assert_eq!(r.unmatched_b, vec![0]);
    assert!(r.is_partition(2, 3));
}

#[test]
fn self_pair_matches_identity() {
    let (ca, _) = two_camera_rig();
    let boxes: Vec<_> = (0..5).map(|i| (centered_box(100.0 + 60.0 * i as f64, 300.0), i as i64)).collect();
    let va = view(ca.clone(), &boxes);
    let mut vb = va.clone();
    vb.camera.camera_id = 1;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rows = Vec::new();
    for id in 0..5 {
        let v: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        rows.push((0, id, v.clone(), v.clone()));
        rows.push((1, id, v.clone(), v));
    }
    let t = table(8, &rows);
    let r = associate_view_pair(&va, &vb, &t, &ScorerConfig::default()).unwrap();
    let pairs: Vec<_> = r.matches.iter().map(|m| (m.0, m.1)).collect();
    assert_eq!(pairs, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
}

/// Two appearance-identical objects; only geometry separates them.
#[test]
fn epipolar_resolves_identical_pair() {
    let (ca, cb) = two_camera_rig();
    let objects = [Vector3::new(-0.1, 0.05, 0.04), Vector3::new(0.12, -0.08, 0.04)];
    let boxes = |cam: &CameraModel, order: [usize; 2]| -> Vec<(BBox, i64)> {
        order
            .iter()
            .map(|&o| {
                let p = project_point(cam, &objects[o]).unwrap();
                (centered_box(p.x, p.y), o as i64)
            })
            .collect()
    };
    // view B lists the objects in swapped order
    let va = view(ca.clone(), &boxes(&ca, [0, 1]));
    let vb = view(cb.clone(), &boxes(&cb, [1, 0]));
    let same = vec![1.0f32, 0.0, 0.0];
    let t = table(
        3,
        &[
            (0, 0, same.clone(), same.clone()),
            (0, 1, same.clone(), same.clone()),
            (1, 0, same.clone(), same.clone()),
            (1, 1, same.clone(), same),
        ],
    );
    let plain = ScorerConfig::default();
    let esc = ScorerConfig {
        use_epipolar: true,
        threshold: 1.0,
        ..Default::default()
    };
    // without geometry every pairing costs the same
    let raw = build_distance_matrix(&va, &vb, &t, &plain).unwrap();
    assert!(raw.values().iter().all(|&v| v == 0.0));

    let f = fundamental_matrix(&ca, &cb).unwrap();
    let pen = |i: usize, j: usize| {
        let l = epipolar_line(&f, &box_center_anchor(&va.instances[i])).unwrap();
        point_line_distance(&l, &box_center_anchor(&vb.instances[j]))
    };
    // enumeration oracle over both pairings
    let identity = pen(0, 0) + pen(1, 1);
    let swapped = pen(0, 1) + pen(1, 0);
    assert!(swapped < identity);
    assert!(pen(0, 1) < 1e-6 && pen(1, 0) < 1e-6);

    let r = associate_view_pair(&va, &vb, &t, &esc).unwrap();
    let pairs: Vec<_> = r.matches.iter().map(|m| (m.0, m.1)).collect();
    assert_eq!(pairs, vec![(0, 1), (1, 0)]);
}

#[test]
fn scene_pair_keys() {
    let (ca, cb) = two_camera_rig();
    let mut cc = cb.clone();
    cc.camera_id = 7;
    cc.translation.x += 0.1;
    let mk = |c: CameraModel| view(c, &[(centered_box(300.0, 300.0), 1)]);
    let scene = Scene {
        scene_id: "s".into(),
        views: vec![mk(cc), mk(ca), mk(cb)],
        difficulty: crate::scene::Difficulty::Synthetic,
    };
    let e = vec![1.0f32];
    let t = table(1, &[(0, 1, e.clone(), e.clone()), (1, 1, e.clone(), e.clone()), (7, 1, e.clone(), e)]);
    let out = associate_scene(&scene, &t, &ScorerConfig::default()).unwrap();
    assert_eq!(out.keys().copied().collect::<Vec<_>>(), vec![(0, 1), (0, 7), (1, 7)]);

    let record = SceneAssociationRecord::new("s", &out, true);
    let text = scene_association_to_json(&record);
    assert_eq!(parse_scene_association(&text).unwrap(), record);
    assert!(text.contains("\"unmatched_a\""));
}

fn arb_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0..1.0f64, r * c).prop_map(move |v| DMatrix::from_row_slice(r, c, &v))
    })
}

proptest! {
    #[test]
    fn threshold_is_monotone(m in arb_matrix(), t1 in 0.0..1.0f64, dt in 0.0..1.0f64) {
        let m = DistanceMatrix::new(m).unwrap();
        let a = kuhn_munkres_assign(&m);
        let low = threshold_filter(&a, &m, t1);
        let high = threshold_filter(&a, &m, (t1 + dt).min(1.0));
        prop_assert!(high.matches.len() >= low.matches.len());
        prop_assert!(low.is_partition(m.rows(), m.cols()));
    }

    #[test]
    fn permutation_equivariance(m in arb_matrix(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (r, c) = m.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pr: Vec<usize> = (0..r).collect();
        let mut pc: Vec<usize> = (0..c).collect();
        pr.shuffle(&mut rng);
        pc.shuffle(&mut rng);
        let permuted = DMatrix::from_fn(r, c, |i, j| m[(pr[i], pc[j])]);
        let base = kuhn_munkres(&m);
        let other = kuhn_munkres(&permuted);
        // optimal totals agree and mapped pairs keep their distances
        prop_assert!((assignment_cost(&m, &base) - assignment_cost(&permuted, &other)).abs() < 1e-12);
        let mut mapped: Vec<f64> = other.iter().map(|&(i, j)| m[(pr[i], pc[j])]).collect();
        let mut direct: Vec<f64> = other.iter().map(|&(i, j)| permuted[(i, j)]).collect();
        mapped.sort_by(f64::total_cmp);
        direct.sort_by(f64::total_cmp);
        prop_assert_eq!(mapped, direct);
    }

    #[test]
    fn fusion_stays_between_branches(
        a in prop::collection::vec(0.01..1.0f64, 4),
        b in prop::collection::vec(0.01..1.0f64, 4),
        sa in prop::collection::vec(-1.0..1.0f64, 4),
        sb in prop::collection::vec(-1.0..1.0f64, 4),
    ) {
        let (d, lambda) = asnet_fusion_distance(&a, &sa, &b, &sb, LambdaMode::Clamped).unwrap();
        let (da, ds) = (l2_distance(&a, &b).unwrap(), l2_distance(&sa, &sb).unwrap());
        prop_assert!((0.0..=1.0).contains(&lambda));
        prop_assert!(d >= da.min(ds) - 1e-12 && d <= da.max(ds) + 1e-12);
    }

    #[test]
    fn penalty_never_lowers_cost(m in prop::collection::vec(0.0..1.0f64, 6), us in prop::collection::vec(50.0..1200.0f64, 5), weight in 0.0..3.0f64) {
        let (ca, cb) = two_camera_rig();
        let va = view(ca, &[(centered_box(us[0], 300.0), 0), (centered_box(us[1], 500.0), 1)]);
        let vb = view(cb, &[(centered_box(us[2], 200.0), 0), (centered_box(us[3], 400.0), 1), (centered_box(us[4], 700.0), 2)]);
        let mat = dm(2, 3, &m);
        let p = add_epipolar_penalty(&mat, &va, &vb, weight).unwrap();
        for (x, y) in mat.values().iter().zip(p.values().iter()) {
            prop_assert!(y >= x);
        }
    }
}
