//! Stage-2 supervision: scene-level vocabulary aggregation, repeated voxel
//! grid sampling, per-point probability averaging, and confidence filtering.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::embed::{Encoder, SceneNormalizer, TextEmbeddingTable};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix, Vec3};
use crate::scalar::{mix_seed, Real};
use crate::scene::GlobalScene;

/// Ordered, de-duplicated union of frame vocabularies, with the contributing
/// frame indices per entity.
#[derive(Clone, Debug, Default)]
pub struct SceneVocabulary {
    pub entities: Vec<String>,
    /// Parallel to `entities`: ascending frame indices that mentioned it.
    pub provenance: Vec<Vec<usize>>,
}

impl SceneVocabulary {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

/// Union in first-appearance order across ascending frame index.
pub fn aggregate_vocabulary(frame_vocabs: &[Vec<String>]) -> SceneVocabulary {
    let mut vocab = SceneVocabulary::default();
    for (frame_idx, frame) in frame_vocabs.iter().enumerate() {
        for entity in frame {
            match vocab.entities.iter().position(|e| e == entity) {
                Some(i) => vocab.provenance[i].push(frame_idx),
                None => {
                    vocab.entities.push(entity.clone());
                    vocab.provenance.push(vec![frame_idx]);
                }
            }
        }
    }
    vocab
}

/// One uniformly chosen point index per occupied voxel (keys floor(p / size)
/// per axis); output sorted ascending, deterministic per seed.
pub fn voxel_subsample<F: Real>(positions: &[Vec3<F>], voxel_size_m: f64, seed: u64) -> Vec<usize> {
    assert!(voxel_size_m > 0.0, "voxel size must be > 0");
    let key = |p: &Vec3<F>| -> [i64; 3] {
        [
            (p.x.widen() / voxel_size_m).floor() as i64,
            (p.y.widen() / voxel_size_m).floor() as i64,
            (p.z.widen() / voxel_size_m).floor() as i64,
        ]
    };
    let mut cells: std::collections::HashMap<[i64; 3], Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        cells.entry(key(p)).or_default().push(i);
    }
    // Per-voxel RNG seeded from the cell key, so the draw does not depend on
    // hash-map iteration order.
    let mut out: Vec<usize> = cells
        .into_iter()
        .map(|(k, members)| {
            let kh = (k[0] as u64)
                .wrapping_mul(0x9e37_79b9_7f4a_7c15)
                .wrapping_add((k[1] as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f))
                .wrapping_add(k[2] as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, kh));
            members[rng.gen_range(0..members.len())]
        })
        .collect();
    out.sort_unstable();
    out
}

/// Softmax over cosine similarities to every entity embedding, temperature
/// scaled. Rows sum to one.
pub fn predict_distribution<F: Real, E: Encoder<F>>(
    encoder: &E,
    inputs: &Matrix<F>,
    point_ids: &[u64],
    entity_embeddings: &Matrix<F>,
    temperature: f64,
) -> Result<Matrix<F>> {
    if entity_embeddings.rows == 0 {
        return Err(Error::EmptyVocabulary);
    }
    assert!(temperature > 0.0, "temperature must be > 0");
    let features = encoder.encode_with_ids(inputs, point_ids)?;
    if features.cols != entity_embeddings.cols {
        return Err(Error::ShapeMismatch(format!(
            "feature dim {} vs embedding dim {}",
            features.cols, entity_embeddings.cols
        )));
    }
    let inv_t = F::of(1.0 / temperature);
    let k = entity_embeddings.rows;
    let mut probs = Matrix::zeros(features.rows, k);
    for r in 0..features.rows {
        let f = features.row(r);
        let nf = norm(f);
        let row = probs.row_mut(r);
        let mut max_logit = F::neg_infinity();
        for (j, cell) in row.iter_mut().enumerate() {
            let e = entity_embeddings.row(j);
            let ne = norm(e);
            let c = if nf == F::zero() || ne == F::zero() {
                F::zero()
            } else {
                (dot(f, e) / (nf * ne)).min(F::one()).max(-F::one())
            };
            *cell = c * inv_t;
            max_logit = max_logit.max(*cell);
        }
        let mut z = F::zero();
        for cell in row.iter_mut() {
            *cell = (*cell - max_logit).exp();
            z += *cell;
        }
        for cell in row.iter_mut() {
            *cell = *cell / z;
        }
    }
    Ok(probs)
}

#[derive(Clone, Copy, Debug)]
pub struct PseudoLabelConfig {
    pub voxel_size: f64,
    pub repetitions: usize,
    pub temperature: f64,
    pub confidence_threshold: f64,
    pub seed: u64,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.05,
            repetitions: 8,
            temperature: 0.07,
            confidence_threshold: 0.5,
            seed: 0,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) {
            return Err(Error::invalid_config("voxel_size", "must be > 0"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid_config("repetitions", "must be >= 1"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid_config("temperature", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::invalid_config(
                "confidence_threshold",
                "must be in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Per-point averaged distribution over the scene vocabulary, plus the chosen
/// entity, its confidence, and the acceptance flag.
#[derive(Clone, Debug)]
pub struct PseudoLabelSet<F> {
    pub probabilities: Matrix<F>,
    pub entity: Vec<usize>,
    pub confidence: Vec<F>,
    pub accepted: Vec<bool>,
    pub config: PseudoLabelConfig,
}

impl<F: Real> PseudoLabelSet<F> {
    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }
}

/// Repeated-grid-sampling pseudo labels: R voxel subsamples with derived
/// seeds, per-point probability averaging over the repetitions that sampled
/// the point, and a deterministic full-cloud fallback for points never
/// sampled, so coverage is total.
pub fn generate_pseudo_labels<F: Real, E: Encoder<F> + Sync>(
    scene: &GlobalScene<F>,
    encoder: &E,
    vocab: &SceneVocabulary,
    table: &TextEmbeddingTable<F>,
    cfg: &PseudoLabelConfig,
    norm: &SceneNormalizer<F>,
) -> Result<PseudoLabelSet<F>> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let embeddings = table.rows(&vocab.entities)?;
    let n = scene.len();
    let k = vocab.len();
    let positions: Vec<Vec3<F>> = scene.points.iter().map(|p| p.position).collect();

    let predict_subset = |subset: &[usize]| -> Result<Matrix<F>> {
        let inputs = norm.inputs(
            subset
                .iter()
                .map(|&i| (scene.points[i].position, scene.points[i].color)),
        );
        let ids: Vec<u64> = subset.iter().map(|&i| scene.points[i].id).collect();
        predict_distribution(encoder, &inputs, &ids, &embeddings, cfg.temperature)
    };

    // Repetitions are independent given derived seeds; merge in ascending
    // repetition order.
    let reps: Vec<(Vec<usize>, Matrix<F>)> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| {
            let subset = voxel_subsample(&positions, cfg.voxel_size, mix_seed(cfg.seed, r as u64));
            let probs = predict_subset(&subset)?;
            Ok((subset, probs))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums = Matrix::zeros(n, k);
    let mut counts = vec![0u32; n];
    for (subset, probs) in &reps {
        for (row, &i) in subset.iter().enumerate() {
            counts[i] += 1;
            for (acc, p) in sums.row_mut(i).iter_mut().zip(probs.row(row)) {
                *acc += *p;
            }
        }
    }

    // Coverage fallback: one direct prediction for points no repetition saw.
    let uncovered: Vec<usize> = (0..n).filter(|&i| counts[i] == 0).collect();
    if !uncovered.is_empty() {
        let probs = predict_subset(&uncovered)?;
        for (row, &i) in uncovered.iter().enumerate() {
            counts[i] = 1;
            sums.row_mut(i).copy_from_slice(probs.row(row));
        }
    }

    let mut probabilities = sums;
    let mut entity = Vec::with_capacity(n);
    let mut confidence = Vec::with_capacity(n);
    let mut accepted = Vec::with_capacity(n);
    let threshold = F::of(cfg.confidence_threshold);
    for i in 0..n {
        let inv = F::one() / F::from_count(counts[i] as usize);
        let row = probabilities.row_mut(i);
        let mut best = 0;
        let mut best_p = F::neg_infinity();
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = *cell * inv;
            if *cell > best_p {
                best_p = *cell;
                best = j;
            }
        }
        entity.push(best);
        confidence.push(best_p);
        accepted.push(best_p >= threshold);
    }
    Ok(PseudoLabelSet {
        probabilities,
        entity,
        confidence,
        accepted,
        config: *cfg,
    })
}
