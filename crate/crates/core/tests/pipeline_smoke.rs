//! Library-level end-to-end exercise: synthesize, render, label, train both
//! stages, pseudo-label, and evaluate on a miniature benchmark.

use pgov_core::embed::{embed_entities, EncoderParams, LookupEncoder, SceneNormalizer};
use pgov_core::geometry::{
    frame_to_partial_cloud, render_frame, CameraIntrinsics,
};
use pgov_core::linalg::Vec3;
use pgov_core::metrics::{build_confusion, compute_metrics, segment_scene};
use pgov_core::oracle::{oracle_pixel_entities, NoiseConfig};
use pgov_core::pseudo::{aggregate_vocabulary, generate_pseudo_labels, PseudoLabelConfig};
use pgov_core::scene::{
    generate_scene, generate_trajectory, GlobalScene, ObjectSpec, PrimitiveKind, SceneSpec,
};
use pgov_core::train::{
    finetune_stage, pretrain_stage, FinetuneItem, TrainConfig, TrainFrame,
};

const ROOM: [f64; 3] = [4.0, 4.0, 2.5];

fn mini_scene(seed: u64) -> GlobalScene<f64> {
    let mk_box = |cat: &str, cx: f64, cy: f64, he: f64, color: [f64; 3]| ObjectSpec {
        kind: PrimitiveKind::Box,
        center: Vec3::new(cx, cy, -1.25 + he),
        half_extents: Vec3::new(he, he, he),
        category: cat.into(),
        color,
    };
    generate_scene(&SceneSpec {
        room_extent: Vec3::new(ROOM[0], ROOM[1], ROOM[2]),
        objects: vec![
            ObjectSpec {
                kind: PrimitiveKind::Plane,
                center: Vec3::new(0.0, 0.0, -1.25),
                half_extents: Vec3::new(2.0, 2.0, 0.0),
                category: "floor".into(),
                color: [0.55, 0.55, 0.55],
            },
            mk_box("chair", 0.6, -0.4, 0.25, [0.85, 0.15, 0.1]),
            mk_box("table", -0.7, 0.5, 0.4, [0.45, 0.3, 0.1]),
        ],
        surface_density: 60.0,
        color_jitter: 0.02,
        seed,
    })
    .unwrap()
}

fn intrinsics() -> CameraIntrinsics<f64> {
    CameraIntrinsics { fx: 55.0, fy: 55.0, cx: 32.0, cy: 24.0, width: 64, height: 48 }
}

#[test]
fn miniature_curriculum_runs_end_to_end() {
    let scene = mini_scene(3);
    let eval_scene = mini_scene(4);
    let k = intrinsics();
    let norm = SceneNormalizer::from_room_extent(Vec3::new(ROOM[0], ROOM[1], ROOM[2]));
    let noise = NoiseConfig {
        category_dropout_prob: 0.1,
        pixel_mislabel_prob: 0.05,
        boundary_erosion_px: 1,
        seed: 11,
    };

    let traj = generate_trajectory(&scene, 8, 21).unwrap();
    let mut frames = Vec::new();
    let mut vocabs = Vec::new();
    for (fi, pose) in traj.poses.iter().enumerate() {
        let frame = render_frame(&scene, &k, pose, 1, fi);
        let entities = oracle_pixel_entities(&frame, &scene, &noise).unwrap();
        let cloud = frame_to_partial_cloud(&frame, &entities).unwrap();
        vocabs.push(entities.vocabulary.clone());
        frames.push(TrainFrame { cloud, vocab: entities.vocabulary, scene_id: 0, order: fi });
    }

    let vocab = aggregate_vocabulary(&vocabs);
    assert!(!vocab.is_empty());
    let table = embed_entities::<f64>(&vocab.entities, 16, 5);

    let cfg = TrainConfig {
        epochs_stage1: 4,
        epochs_stage2: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let params0 = EncoderParams::init(&[6, 24, 16], 1);
    let (stage1, log1) = pretrain_stage(&frames, &table, params0, &cfg, &norm).unwrap();
    assert!(log1.iter().all(|r| r.total.is_finite()));

    let pseudo_cfg = PseudoLabelConfig {
        voxel_size: 0.1,
        repetitions: 4,
        seed: 13,
        ..PseudoLabelConfig::default()
    };
    let pseudo = generate_pseudo_labels(&scene, &stage1, &vocab, &table, &pseudo_cfg, &norm).unwrap();
    assert!(pseudo.accepted_count() > 0, "some points must pass the confidence gate");

    let items = [FinetuneItem { scene: &scene, pseudo: &pseudo, entities: &vocab.entities }];
    let (stage2, log2) = finetune_stage(&items, &table, stage1, &cfg, &norm).unwrap();
    assert!(log2.last().unwrap().total.is_finite());

    // Evaluate on the held-out scene: predictions over the aggregated
    // vocabulary, mapped onto the eval scene's categories by exact name.
    let pred = segment_scene(&stage2, &eval_scene, &vocab.entities, &table, &norm).unwrap();
    let mapping: Vec<i64> = pred
        .iter()
        .map(|&p| {
            eval_scene
                .categories
                .iter()
                .position(|c| c == &vocab.entities[p])
                .map_or(-1, |i| i as i64)
        })
        .collect();
    let gt: Vec<i64> = eval_scene.points.iter().map(|p| p.gt_label as i64).collect();
    let m = build_confusion(&mapping, &gt, eval_scene.categories.len(), -1).unwrap();
    let report = compute_metrics(&m).unwrap();
    assert!((0.0..=1.0).contains(&report.miou));
    assert!((0.0..=1.0).contains(&report.macc));
}

#[test]
fn zero_noise_lookup_encoder_scores_perfectly() {
    let scene = mini_scene(7);
    let k = intrinsics();
    let norm = SceneNormalizer::from_room_extent(Vec3::new(ROOM[0], ROOM[1], ROOM[2]));

    // Zero-noise oracle: frame vocabularies aggregate to exactly the visible
    // categories.
    let traj = generate_trajectory(&scene, 6, 2).unwrap();
    let mut vocabs = Vec::new();
    for (fi, pose) in traj.poses.iter().enumerate() {
        let frame = render_frame(&scene, &k, pose, 1, fi);
        let entities = oracle_pixel_entities(&frame, &scene, &NoiseConfig::zero(0)).unwrap();
        vocabs.push(entities.vocabulary);
    }
    let vocab = aggregate_vocabulary(&vocabs);
    let table = embed_entities::<f64>(&vocab.entities, 16, 5);
    let enc = LookupEncoder::from_scene_ground_truth(&scene, &table).unwrap();

    let pseudo_cfg = PseudoLabelConfig { voxel_size: 0.15, repetitions: 3, ..Default::default() };
    let pseudo = generate_pseudo_labels(&scene, &enc, &vocab, &table, &pseudo_cfg, &norm).unwrap();
    for (i, p) in scene.points.iter().enumerate() {
        assert_eq!(vocab.entities[pseudo.entity[i]], scene.categories[p.gt_label]);
        assert!(pseudo.accepted[i]);
    }

    let pred = segment_scene(&enc, &scene, &vocab.entities, &table, &norm).unwrap();
    let mapping: Vec<i64> = pred
        .iter()
        .map(|&p| {
            scene
                .categories
                .iter()
                .position(|c| c == &vocab.entities[p])
                .map_or(-1, |i| i as i64)
        })
        .collect();
    let gt: Vec<i64> = scene.points.iter().map(|p| p.gt_label as i64).collect();
    let m = build_confusion(&mapping, &gt, scene.categories.len(), -1).unwrap();
    let report = compute_metrics(&m).unwrap();
    assert_eq!(report.miou, 1.0, "plumbing must be lossless");
    assert_eq!(report.macc, 1.0);
}
