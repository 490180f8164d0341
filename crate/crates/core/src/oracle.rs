//! Per-frame entity vocabularies and pixel-wise entity masks: a deterministic
//! ground-truth oracle with configurable degradation (category dropout, pixel
//! mislabeling, boundary erosion, in that order), plus an adapter that ingests
//! externally produced masks.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Frame, UNLABELED};
use crate::scalar::{mix_seed, Real};
use crate::scene::GlobalScene;

#[derive(Clone, Copy, Debug)]
pub struct NoiseConfig {
    /// Probability that a visible category is missing from the frame
    /// vocabulary entirely.
    pub category_dropout_prob: f64,
    /// Probability that a labeled pixel is swapped to another surviving
    /// category.
    pub pixel_mislabel_prob: f64,
    /// Labeled pixels within this Chebyshev distance of a label boundary
    /// (a differently labeled pixel; unlabeled gaps are not boundaries)
    /// become unlabeled.
    pub boundary_erosion_px: usize,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn zero(seed: u64) -> Self {
        Self {
            category_dropout_prob: 0.0,
            pixel_mislabel_prob: 0.0,
            boundary_erosion_px: 0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, p) in [
            ("category_dropout_prob", self.category_dropout_prob),
            ("pixel_mislabel_prob", self.pixel_mislabel_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid_config(key, "probability must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Frame-local entity raster plus the vocabulary its ids index.
#[derive(Clone, Debug)]
pub struct PixelEntityMap {
    pub width: usize,
    pub height: usize,
    /// Entity id per pixel, [`UNLABELED`] where no entity applies.
    pub ids: Vec<i32>,
    pub vocabulary: Vec<String>,
}

impl PixelEntityMap {
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.width * self.height {
            return Err(Error::DimMismatch {
                expected: (self.width, self.height),
                got: (self.ids.len(), 1),
            });
        }
        for (i, v) in self.vocabulary.iter().enumerate() {
            if self.vocabulary[..i].contains(v) {
                return Err(Error::invalid_config(
                    "vocabulary",
                    format!("duplicate entity `{v}`"),
                ));
            }
        }
        for &id in &self.ids {
            if id != UNLABELED && (id < 0 || id as usize >= self.vocabulary.len()) {
                return Err(Error::VocabMismatch {
                    id: i64::from(id),
                    vocab_len: self.vocabulary.len(),
                });
            }
        }
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        self.ids.iter().filter(|&&id| id != UNLABELED).count()
    }
}

/// Ground-truth pixel entities for a rendered frame, degraded by the noise
/// model. With zero noise the vocabulary is exactly the visible categories in
/// first-appearance (row-major) order and every valid pixel keeps its label.
pub fn oracle_pixel_entities<F: Real>(
    frame: &Frame<F>,
    scene: &GlobalScene<F>,
    noise: &NoiseConfig,
) -> Result<PixelEntityMap> {
    noise.validate()?;
    let source_id = frame.source_id.as_ref().ok_or(Error::MissingProvenance)?;
    let labels_by_id = scene.labels_by_id();
    let (w, h) = (frame.intrinsics.width, frame.intrinsics.height);
    let n = w * h;

    // Visible categories in first-appearance order, row-major scan.
    let mut visible: Vec<usize> = Vec::new();
    let mut gt_pixels: Vec<i64> = vec![-1; n]; // scene category index or -1
    for idx in 0..n {
        if !(frame.depth[idx] > F::zero()) || source_id[idx] < 0 {
            continue;
        }
        let label = *labels_by_id
            .get(&(source_id[idx] as u64))
            .ok_or(Error::MissingProvenance)?;
        gt_pixels[idx] = label as i64;
        if !visible.contains(&label) {
            visible.push(label);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, frame.frame_index as u64));

    // Dropout: whole categories disappear from vocabulary and mask.
    let mut kept: Vec<usize> = Vec::new();
    for &label in &visible {
        let u: f64 = rng.gen();
        if u >= noise.category_dropout_prob {
            kept.push(label);
        }
    }
    let vocabulary: Vec<String> = kept.iter().map(|&l| scene.categories[l].clone()).collect();
    let remap: std::collections::HashMap<i64, i32> = kept
        .iter()
        .enumerate()
        .map(|(vid, &l)| (l as i64, vid as i32))
        .collect();

    let mut ids: Vec<i32> = gt_pixels
        .iter()
        .map(|l| {
            if *l < 0 {
                UNLABELED
            } else {
                remap.get(l).copied().unwrap_or(UNLABELED)
            }
        })
        .collect();

    // Mislabel: swap labeled pixels to a different surviving entity.
    if noise.pixel_mislabel_prob > 0.0 && vocabulary.len() > 1 {
        for id in ids.iter_mut() {
            if *id == UNLABELED {
                continue;
            }
            let u: f64 = rng.gen();
            if u < noise.pixel_mislabel_prob {
                let alt = rng.gen_range(0..vocabulary.len() - 1) as i32;
                *id = if alt >= *id { alt + 1 } else { alt };
            }
        }
    }

    // Erosion: unlabel pixels whose (2k+1)^2 window contains a different
    // label. Unlabeled pixels are gaps, not boundaries; sparse point splats
    // leave many of them between valid hits.
    if noise.boundary_erosion_px > 0 {
        ids = erode(&ids, w, h, noise.boundary_erosion_px);
    }

    let map = PixelEntityMap { width: w, height: h, ids, vocabulary };
    map.validate()?;
    Ok(map)
}

fn erode(ids: &[i32], w: usize, h: usize, k: usize) -> Vec<i32> {
    let k = k as i64;
    let mut out = ids.to_vec();
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            let idx = (v as usize) * w + u as usize;
            let val = ids[idx];
            if val == UNLABELED {
                continue;
            }
            'scan: for dv in -k..=k {
                for du in -k..=k {
                    let (qu, qv) = (u + du, v + dv);
                    if qu < 0 || qu >= w as i64 || qv < 0 || qv >= h as i64 {
                        continue;
                    }
                    let q = ids[(qv as usize) * w + qu as usize];
                    if q != val && q != UNLABELED {
                        out[idx] = UNLABELED;
                        break 'scan;
                    }
                }
            }
        }
    }
    out
}

/// Read an externally produced mask (i16 LE raster, -1 = unlabeled) and its
/// vocabulary (JSON string array), validated against the expected dimensions.
pub fn ingest_external_masks(
    mask_path: &Path,
    vocab_path: &Path,
    width: usize,
    height: usize,
) -> Result<PixelEntityMap> {
    let vocab_bytes = fs::read(vocab_path)
        .map_err(|e| Error::format(vocab_path, 0, format!("cannot read vocabulary: {e}")))?;
    let vocabulary: Vec<String> = serde_json::from_slice(&vocab_bytes)
        .map_err(|e| Error::format(vocab_path, e.column() as u64, e.to_string()))?;
    for (i, v) in vocabulary.iter().enumerate() {
        if vocabulary[..i].contains(v) {
            return Err(Error::format(
                vocab_path,
                0,
                format!("duplicate entity `{v}`"),
            ));
        }
    }

    let bytes = fs::read(mask_path)
        .map_err(|e| Error::format(mask_path, 0, format!("cannot read mask: {e}")))?;
    let expected = width * height * 2;
    if bytes.len() != expected {
        return Err(Error::format(
            mask_path,
            bytes.len() as u64,
            format!("expected {expected} bytes for a {width}x{height} i16 raster"),
        ));
    }
    let mut ids = Vec::with_capacity(width * height);
    for (i, chunk) in bytes.chunks_exact(2).enumerate() {
        let raw = i16::from_le_bytes([chunk[0], chunk[1]]);
        if raw < -1 {
            return Err(Error::format(
                mask_path,
                (i * 2) as u64,
                format!("entity id {raw} is negative"),
            ));
        }
        if raw >= 0 && raw as usize >= vocabulary.len() {
            return Err(Error::VocabMismatch {
                id: i64::from(raw),
                vocab_len: vocabulary.len(),
            });
        }
        ids.push(i32::from(raw));
    }
    Ok(PixelEntityMap { width, height, ids, vocabulary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{render_frame, CameraIntrinsics, CameraPose};
    use crate::linalg::Vec3;
    use crate::scene::{generate_scene, generate_trajectory, ObjectSpec, PrimitiveKind, SceneSpec};

    fn test_scene(categories: &[&str]) -> GlobalScene<f64> {
        let objects = categories
            .iter()
            .enumerate()
            .map(|(i, cat)| ObjectSpec {
                kind: PrimitiveKind::Box,
                center: Vec3::new(-0.8 + 0.8 * i as f64, 0.0, 0.0),
                half_extents: Vec3::new(0.3, 0.3, 0.3),
                category: (*cat).into(),
                color: [0.2 * (i + 1) as f64, 0.4, 0.6],
            })
            .collect();
        generate_scene(&SceneSpec {
            room_extent: Vec3::new(4.0, 4.0, 2.5),
            objects,
            surface_density: 120.0,
            color_jitter: 0.0,
            seed: 3,
        })
        .unwrap()
    }

    fn render_first(scene: &GlobalScene<f64>) -> Frame<f64> {
        let traj = generate_trajectory(scene, 4, 5).unwrap();
        let k = CameraIntrinsics { fx: 55.0, fy: 55.0, cx: 32.0, cy: 24.0, width: 64, height: 48 };
        render_frame(scene, &k, &traj.poses[0], 1, 0)
    }

    #[test]
    fn zero_noise_matches_ground_truth() {
        let scene = test_scene(&["chair"]);
        let frame = render_first(&scene);
        let map = oracle_pixel_entities(&frame, &scene, &NoiseConfig::zero(0)).unwrap();
        assert_eq!(map.vocabulary, vec!["chair".to_string()]);
        for idx in 0..map.ids.len() {
            if frame.depth[idx] > 0.0 {
                assert_eq!(map.ids[idx], 0);
            } else {
                assert_eq!(map.ids[idx], UNLABELED);
            }
        }
    }

    #[test]
    fn full_dropout_empties_everything() {
        let scene = test_scene(&["chair", "table"]);
        let frame = render_first(&scene);
        let noise = NoiseConfig {
            category_dropout_prob: 1.0,
            pixel_mislabel_prob: 0.0,
            boundary_erosion_px: 0,
            seed: 0,
        };
        let map = oracle_pixel_entities(&frame, &scene, &noise).unwrap();
        assert!(map.vocabulary.is_empty());
        assert_eq!(map.labeled_count(), 0);
    }

    #[test]
    fn oracle_is_deterministic() {
        let scene = test_scene(&["chair", "table", "lamp"]);
        let frame = render_first(&scene);
        let noise = NoiseConfig {
            category_dropout_prob: 0.3,
            pixel_mislabel_prob: 0.2,
            boundary_erosion_px: 1,
            seed: 42,
        };
        let a = oracle_pixel_entities(&frame, &scene, &noise).unwrap();
        let b = oracle_pixel_entities(&frame, &scene, &noise).unwrap();
        assert_eq!(a.ids, b.ids);
        assert_eq!(a.vocabulary, b.vocabulary);
    }

    #[test]
    fn missing_provenance_rejected() {
        let scene = test_scene(&["chair"]);
        let mut frame = render_first(&scene);
        frame.source_id = None;
        assert!(matches!(
            oracle_pixel_entities(&frame, &scene, &NoiseConfig::zero(0)),
            Err(Error::MissingProvenance)
        ));
    }

    #[test]
    fn erosion_matches_brute_force_on_toy_mask() {
        // 6x6 mask, two vertical regions meeting at u = 2/3.
        let (w, h) = (6, 6);
        let mut ids = vec![0i32; w * h];
        for v in 0..h {
            for u in 3..w {
                ids[v * w + u] = 1;
            }
        }
        let eroded = erode(&ids, w, h, 1);

        // Brute force: a labeled pixel is eroded iff some labeled pixel
        // within Chebyshev distance 1 carries a different label.
        for v in 0..h as i64 {
            for u in 0..w as i64 {
                let idx = (v * w as i64 + u) as usize;
                let mut near_boundary = false;
                for qv in 0..h as i64 {
                    for qu in 0..w as i64 {
                        let qidx = (qv * w as i64 + qu) as usize;
                        if ids[qidx] != ids[idx]
                            && ids[qidx] != UNLABELED
                            && (qu - u).abs().max((qv - v).abs()) <= 1
                        {
                            near_boundary = true;
                        }
                    }
                }
                if near_boundary {
                    assert_eq!(eroded[idx], UNLABELED, "({u},{v}) should erode");
                } else {
                    assert_eq!(eroded[idx], ids[idx], "({u},{v}) should survive");
                }
            }
        }
        // Sanity: interior columns survive, columns 2 and 3 are gone.
        assert_eq!(eroded[0], 0);
        assert_eq!(eroded[2], UNLABELED);
        assert_eq!(eroded[3], UNLABELED);
        assert_eq!(eroded[5], 1);
    }

    #[test]
    fn erosion_degrades_monotonically() {
        let scene = test_scene(&["chair", "table", "lamp"]);
        let frame = render_first(&scene);
        let mut last = usize::MAX;
        for k in 0..4 {
            let noise = NoiseConfig {
                category_dropout_prob: 0.0,
                pixel_mislabel_prob: 0.0,
                boundary_erosion_px: k,
                seed: 7,
            };
            let map = oracle_pixel_entities(&frame, &scene, &noise).unwrap();
            assert!(map.labeled_count() <= last);
            last = map.labeled_count();
        }
    }

    #[test]
    fn ingest_round_trip_small_mask() {
        let dir = tempfile::tempdir().unwrap();
        let mask_path = dir.path().join("m.entmask");
        let vocab_path = dir.path().join("m.vocab.json");
        let ids: [i16; 4] = [0, 0, 1, -1];
        let bytes: Vec<u8> = ids.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&mask_path, bytes).unwrap();
        std::fs::write(&vocab_path, br#"["wall","door"]"#).unwrap();
        let map = ingest_external_masks(&mask_path, &vocab_path, 2, 2).unwrap();
        assert_eq!(map.labeled_count(), 3);
        assert_eq!(map.vocabulary, vec!["wall".to_string(), "door".to_string()]);
    }

    #[test]
    fn ingest_rejects_out_of_vocab_id() {
        let dir = tempfile::tempdir().unwrap();
        let mask_path = dir.path().join("m.entmask");
        let vocab_path = dir.path().join("m.vocab.json");
        let ids: [i16; 4] = [0, 5, 1, -1];
        let bytes: Vec<u8> = ids.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&mask_path, bytes).unwrap();
        std::fs::write(&vocab_path, br#"["wall","door"]"#).unwrap();
        assert!(matches!(
            ingest_external_masks(&mask_path, &vocab_path, 2, 2),
            Err(Error::VocabMismatch { id: 5, vocab_len: 2 })
        ));
    }

    #[test]
    fn ingest_rejects_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let mask_path = dir.path().join("m.entmask");
        let vocab_path = dir.path().join("m.vocab.json");
        std::fs::write(&mask_path, [0u8, 0, 1]).unwrap();
        std::fs::write(&vocab_path, br#"["wall"]"#).unwrap();
        match ingest_external_masks(&mask_path, &vocab_path, 2, 2) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
