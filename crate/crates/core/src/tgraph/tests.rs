use super::*;
use crate::types::{BBox, Detection, Frame};
use proptest::prelude::*;

fn track(id: usize, frames: std::ops::RangeInclusive<Frame>, x0: f64, vx: f64, emb: &[f64]) -> Tracklet {
    let dets = frames
        .map(|f| {
            let b = BBox::new(x0 + vx * f64::from(f), 100.0, 20.0, 50.0).unwrap();
            Detection::new(f, b, 0.9, 0).with_embedding(emb.to_vec())
        })
        .collect();
    Tracklet::new(id, dets).unwrap()
}

const E1: [f64; 2] = [1.0, 0.0];

#[test]
fn overlapping_tracklets_have_no_edge() {
    let g = build_graph(&[track(1, 1..=10, 0.0, 1.0, &E1), track(2, 5..=15, 50.0, 1.0, &E1)], &GraphConfig::default(), 25.0).unwrap();
    assert!(g.edges.is_empty());
}

#[test]
fn sequential_tracklets_connect_all_pairs() {
    let ts = [
        track(1, 1..=5, 0.0, 1.0, &E1),
        track(2, 8..=12, 0.0, 1.0, &E1),
        track(3, 15..=20, 0.0, 1.0, &E1),
    ];
    let g = build_graph(&ts, &GraphConfig::default(), 25.0).unwrap();
    assert_eq!(g.edges, vec![(0, 1), (0, 2), (1, 2)]);
    assert!(g.raw_edge_features.iter().all(|f| f.len() == EDGE_FEATURE_DIM));
}

#[test]
fn k_one_keeps_one_successor() {
    let mut ts = vec![track(0, 1..=5, 0.0, 1.0, &E1)];
    for i in 0..20 {
        ts.push(track(i + 1, 10 + i as Frame..=12 + i as Frame, 30.0 * i as f64, 0.0, &[0.0, 1.0]));
    }
    let cfg = GraphConfig { k: 1, ..Default::default() };
    let sel = select_neighbors(&ts, &cfg).unwrap();
    assert_eq!(sel[0].0.len(), 1);
    assert!(sel[0].1.is_empty());
}

#[test]
fn appearance_feature_cases() {
    let a = track(1, 1..=5, 0.0, 1.0, &E1);
    let b = track(2, 8..=9, 0.0, 1.0, &E1);
    assert_eq!(appearance_features(&a, &b, 5).unwrap(), [0.0, 1.0]);
    let c = track(3, 8..=9, 0.0, 1.0, &[-1.0, 0.0]);
    let f = appearance_features(&a, &c, 5).unwrap();
    assert!((f[0] - 2.0).abs() < 1e-12 && (f[1] + 1.0).abs() < 1e-12);
    // more than the available detections is fine
    assert!(appearance_features(&a, &c, 100).is_ok());
}

#[test]
fn appearance_uses_detections_nearest_the_gap() {
    let mut dets: Vec<Detection> = (1..=4)
        .map(|f| Detection::new(f, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, 0).with_embedding(vec![0.0, 1.0]))
        .collect();
    dets[3].embedding = Some(vec![1.0, 0.0]);
    let a = Tracklet::new(1, dets).unwrap();
    let b = track(2, 8..=9, 0.0, 1.0, &E1);
    assert!((appearance_features(&a, &b, 1).unwrap()[1] - 1.0).abs() < 1e-12);
    assert!((appearance_features(&a, &b, 2).unwrap()[1] - 0.5).abs() < 1e-12);
}

#[test]
fn missing_embedding_is_an_error() {
    let a = Tracklet::new(1, vec![Detection::new(1, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, 0)]).unwrap();
    assert!(matches!(node_input(&a), Err(Error::MissingEmbedding(_))));
}

#[test]
fn node_input_is_the_mean() {
    let mk = |f, e: Vec<f64>| Detection::new(f, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 1.0, 0).with_embedding(e);
    let e = vec![0.3, -0.2, 0.7];
    let neg: Vec<f64> = e.iter().map(|v| -v).collect();
    assert_eq!(node_input(&Tracklet::new(1, vec![mk(1, e.clone())]).unwrap()).unwrap(), e);
    let z = node_input(&Tracklet::new(1, vec![mk(1, e.clone()), mk(2, neg)]).unwrap()).unwrap();
    assert!(z.iter().all(|v| *v == 0.0));
    let rows = [vec![0.1, 0.25, -3.0], vec![1.5, 0.0, 2.0], vec![-0.4, 0.9, 0.01]];
    let t = Tracklet::new(1, rows.iter().enumerate().map(|(i, r)| mk(i as Frame + 1, r.clone())).collect()).unwrap();
    let m = node_input(&t).unwrap();
    for c in 0..3 {
        let brute = (rows[0][c] + rows[1][c] + rows[2][c]) / 3.0;
        assert!((m[c] - brute).abs() < 1e-12);
    }
}

#[test]
fn split_constant_velocity_feature() {
    let a = track(1, 1..=5, 0.0, 2.0, &E1);
    let b = track(2, 11..=15, 0.0, 2.0, &E1);
    let cfg = GraphConfig {
        kalman: KalmanConfig::noiseless(),
        ..Default::default()
    };
    let f = raw_edge_feature(&a, &b, &cfg, 25.0).unwrap();
    // 12 px of displacement over a mean height of 50
    assert!((f[0] - 12.0 / 50.0).abs() < 1e-12);
    assert_eq!((f[1], f[2], f[3]), (0.0, 0.0, 0.0));
    assert!((f[4] - 6.0 / 25.0).abs() < 1e-12);
    assert_eq!([f[5], f[6]], [0.0, 1.0]);
    assert!((f[7] - 1.0).abs() < 1e-6);
    assert!(raw_edge_feature(&b, &a, &cfg, 25.0).is_err());
}

#[test]
fn majority_labels() {
    let gt_box = |f: Frame, id: u32, x: f64| GtRecord {
        frame: f,
        id,
        bbox: BBox::new(x, 0.0, 10.0, 10.0).unwrap(),
        flag: 1,
        class: 1,
        visibility: 1.0,
    };
    let det = |f: Frame, x: f64| Detection::new(f, BBox::new(x, 0.0, 10.0, 10.0).unwrap(), 1.0, 0).with_embedding(E1.to_vec());
    let mut gt = Vec::new();
    for f in 1..=5 {
        gt.push(gt_box(f, 7, 0.0));
    }
    gt.push(gt_box(4, 9, 500.0));
    for f in 10..=14 {
        gt.push(gt_box(f, 7, 0.0));
        gt.push(gt_box(f, 9, 500.0));
    }
    // attributions [7, 7, 7, 9, none]
    let mixed = Tracklet::new(1, vec![det(1, 0.0), det(2, 0.0), det(3, 0.0), det(4, 500.0), det(5, 900.0)]).unwrap();
    let pure7 = Tracklet::new(2, (10..=14).map(|f| det(f, 0.0)).collect()).unwrap();
    let pure9 = Tracklet::new(3, (10..=14).map(|f| det(f, 500.0)).collect()).unwrap();
    let g = build_graph(&[mixed, pure7, pure9], &GraphConfig::default(), 25.0).unwrap();
    let g = label_edges(g, &gt, 0.5);
    assert_eq!(g.edges, vec![(0, 1), (0, 2)]);
    assert_eq!(g.labels.unwrap(), vec![1.0, 0.0]);
}

fn arb_tracklets() -> impl Strategy<Value = Vec<Tracklet>> {
    prop::collection::vec((1u32..60, 1u32..12, 0.0..600.0f64, -3.0..3.0f64, -1.0..1.0f64), 1..14).prop_map(|specs| {
        specs
            .into_iter()
            .enumerate()
            .map(|(i, (s, len, x, v, e))| track(i + 1, s..=s + len - 1, x, v, &[e, 1.0 - e.abs()]))
            .collect()
    })
}

proptest! {
    #[test]
    fn graph_invariants(ts in arb_tracklets(), k in 1usize..5) {
        let cfg = GraphConfig { k, ..Default::default() };
        let g = build_graph(&ts, &cfg, 30.0).unwrap();
        prop_assert!(g.edges.len() <= 2 * k * ts.len());
        for (&(a, b), f) in g.edges.iter().zip(&g.raw_edge_features) {
            prop_assert!(g.nodes[a].end() < g.nodes[b].start());
            prop_assert!(f.iter().all(|v| v.is_finite()));
        }
        for (succ, pred) in select_neighbors(&ts, &cfg).unwrap() {
            prop_assert!(succ.len() <= k && pred.len() <= k);
        }
    }
}

#[test]
fn raw_features_finite_on_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let cfg = GraphConfig::default();
    for _ in 0..10_000 {
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, start: Frame, len: Frame| {
            let dets = (start..start + len)
                .map(|f| {
                    let b = BBox::new(rng.random_range(-50.0..1300.0), rng.random_range(-50.0..700.0), rng.random_range(1.0..200.0), rng.random_range(1.0..300.0)).unwrap();
                    let e: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                    Detection::new(f, b, 1.0, 0).with_embedding(e)
                })
                .collect();
            Tracklet::new(0, dets).unwrap()
        };
        let la = rng.random_range(1..6);
        let a = mk(&mut rng, 1, la);
        let gap = rng.random_range(1..40);
        let lb = rng.random_range(1..6);
        let b = mk(&mut rng, la + gap, lb);
        let f = raw_edge_feature(&a, &b, &cfg, 30.0).unwrap();
        assert!(f.iter().all(|v| v.is_finite()));
        assert_eq!(f, raw_edge_feature(&a, &b, &cfg, 30.0).unwrap());
    }
}
