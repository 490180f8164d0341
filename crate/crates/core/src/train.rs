//! Alignment and cross-frame consistency losses with exact gradients, the
//! AdamW optimizer, stage-1 pre-training on partial clouds, and stage-2
//! fine-tuning on global clouds.
//!
//! Determinism contract: for a fixed seed and config, both stages shuffle with
//! seeded generators and reduce gradients in ascending frame order, so
//! repeated runs produce bit-identical parameters and loss logs.

use rayon::prelude::*;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::{EncoderGradients, EncoderParams, SceneNormalizer, TextEmbeddingTable};
use crate::error::{Error, Result};
use crate::geometry::{match_points, MatchMode, MatchSet, PartialCloud, UNLABELED};
use crate::linalg::{dot, norm, Matrix};
use crate::pseudo::PseudoLabelSet;
use crate::scalar::{mix_seed, Real};
use crate::scene::GlobalScene;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda_consistency: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Frames per stage-1 step (a contiguous trajectory window, so each batch
    /// carries adjacent pairs for the consistency term).
    pub batch_size_stage1: usize,
    /// Scenes per stage-2 step.
    pub batch_size_stage2: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub seed: u64,
    pub load_pretrained: bool,
    /// How stage 1 mines cross-frame pairs: by synthetic provenance id, or by
    /// nearest neighbor within a radius for ingested data.
    pub match_mode: MatchMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_consistency: 0.2,
            learning_rate: 5e-3,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size_stage1: 4,
            batch_size_stage2: 1,
            epochs_stage1: 8,
            epochs_stage2: 30,
            seed: 0,
            load_pretrained: true,
            match_mode: MatchMode::ById,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_consistency < 0.0 {
            return Err(Error::invalid_config("lambda_consistency", "must be >= 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid_config("learning_rate", "must be > 0"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid_config("weight_decay", "must be >= 0"));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid_config(key, "must be in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid_config("adam_eps", "must be > 0"));
        }
        if self.batch_size_stage1 == 0 || self.batch_size_stage2 == 0 {
            return Err(Error::invalid_config("batch_size", "must be >= 1"));
        }
        if let MatchMode::ByRadius { radius_m } = self.match_mode {
            if !(radius_m > 0.0) {
                return Err(Error::invalid_config("match_mode.radius_m", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Cosine similarity clamped to [-1, 1] against rounding.
pub fn cosine_similarity<F: Real>(a: &[F], b: &[F]) -> Result<F> {
    let (na, nb) = (norm(a), norm(b));
    if na == F::zero() || nb == F::zero() {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).min(F::one()).max(-F::one()))
}

fn cos_and_grad<F: Real>(f: &[F], t: &[F]) -> Result<(F, Vec<F>)> {
    let (nf, nt) = (norm(f), norm(t));
    if nf == F::zero() || nt == F::zero() {
        return Err(Error::ZeroVector);
    }
    let c = dot(f, t) / (nf * nt);
    let inv = F::one() / (nf * nt);
    let inv_ff = c / (nf * nf);
    let grad = f
        .iter()
        .zip(t)
        .map(|(fi, ti)| *ti * inv - *fi * inv_ff)
        .collect();
    Ok((c.min(F::one()).max(-F::one()), grad))
}

/// Mean (1 - cos) between feature rows and their target embedding rows,
/// with the exact gradient w.r.t. the features.
pub fn alignment_loss<F: Real>(
    features: &Matrix<F>,
    targets: &Matrix<F>,
) -> Result<(F, Matrix<F>)> {
    if features.rows == 0 {
        return Err(Error::EmptyBatch);
    }
    if features.rows != targets.rows || features.cols != targets.cols {
        return Err(Error::ShapeMismatch(format!(
            "features {}x{} vs targets {}x{}",
            features.rows, features.cols, targets.rows, targets.cols
        )));
    }
    let inv_n = F::one() / F::from_count(features.rows);
    let mut loss = F::zero();
    let mut grad = Matrix::zeros(features.rows, features.cols);
    for r in 0..features.rows {
        let (c, g) = cos_and_grad(features.row(r), targets.row(r))?;
        loss += (F::one() - c) * inv_n;
        for (o, gv) in grad.row_mut(r).iter_mut().zip(&g) {
            *o = -*gv * inv_n;
        }
    }
    Ok((loss, grad))
}

/// 1 - mean cosine over matched pairs; an empty match set contributes zero
/// loss and zero gradients. Gradients flow symmetrically into both sides.
pub fn consistency_loss<F: Real>(
    features_1: &Matrix<F>,
    features_2: &Matrix<F>,
    matches: &MatchSet,
) -> Result<(F, Matrix<F>, Matrix<F>)> {
    let mut g1 = Matrix::zeros(features_1.rows, features_1.cols);
    let mut g2 = Matrix::zeros(features_2.rows, features_2.cols);
    if matches.is_empty() {
        return Ok((F::zero(), g1, g2));
    }
    if features_1.cols != features_2.cols {
        return Err(Error::ShapeMismatch(format!(
            "feature dims {} vs {}",
            features_1.cols, features_2.cols
        )));
    }
    let inv_n = F::one() / F::from_count(matches.len());
    let mut mean_cos = F::zero();
    for &(a, b) in &matches.pairs {
        let fa = features_1.row(a);
        let fb = features_2.row(b);
        let (c, ga) = cos_and_grad(fa, fb)?;
        let (_, gb) = cos_and_grad(fb, fa)?;
        mean_cos += c * inv_n;
        for (o, gv) in g1.row_mut(a).iter_mut().zip(&ga) {
            *o = *o - *gv * inv_n;
        }
        for (o, gv) in g2.row_mut(b).iter_mut().zip(&gb) {
            *o = *o - *gv * inv_n;
        }
    }
    Ok((F::one() - mean_cos, g1, g2))
}

pub fn total_loss<F: Real>(alignment: F, consistency: F, lambda: F) -> F {
    alignment + lambda * consistency
}

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<F> {
    pub m: EncoderGradients<F>,
    pub v: EncoderGradients<F>,
    pub step: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(params: &EncoderParams<F>) -> Self {
        Self {
            m: EncoderGradients::zeros_like(params),
            v: EncoderGradients::zeros_like(params),
            step: 0,
        }
    }
}

/// One AdamW update: bias-corrected adaptive moments plus decoupled weight
/// decay applied directly to the parameters.
pub fn optimizer_step<F: Real>(
    params: &mut EncoderParams<F>,
    grads: &EncoderGradients<F>,
    state: &mut OptimizerState<F>,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.weights.len() != params.weights.len() {
        return Err(Error::ShapeMismatch("gradient layer count".into()));
    }
    for l in 0..params.weights.len() {
        if grads.weights[l].len() != params.weights[l].len()
            || grads.biases[l].len() != params.biases[l].len()
        {
            return Err(Error::ShapeMismatch(format!("gradient shapes at layer {l}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::of(cfg.adam_beta1);
    let b2 = F::of(cfg.adam_beta2);
    let lr = F::of(cfg.learning_rate);
    let eps = F::of(cfg.adam_eps);
    let wd = F::of(cfg.weight_decay);
    let bc1 = F::one() - b1.powi(t);
    let bc2 = F::one() - b2.powi(t);

    let update = |p: &mut [F], g: &[F], m: &mut [F], v: &mut [F]| {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (F::one() - b1) * g[i];
            v[i] = b2 * v[i] + (F::one() - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
        }
    };
    for l in 0..params.weights.len() {
        update(
            &mut params.weights[l],
            &grads.weights[l],
            &mut state.m.weights[l],
            &mut state.v.weights[l],
        );
        update(
            &mut params.biases[l],
            &grads.biases[l],
            &mut state.m.biases[l],
            &mut state.v.biases[l],
        );
    }
    Ok(())
}

/// One labeled partial cloud plus the frame vocabulary its entity ids index.
#[derive(Clone, Debug)]
pub struct TrainFrame<F> {
    pub cloud: PartialCloud<F>,
    pub vocab: Vec<String>,
    pub scene_id: usize,
    /// Position within its trajectory; consecutive positions in the same
    /// scene are adjacency candidates for the consistency term.
    pub order: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub alignment: f64,
    pub consistency: f64,
    pub total: f64,
}

struct PreparedFrame<F> {
    inputs: Matrix<F>,
    labeled_rows: Vec<usize>,
    targets: Matrix<F>,
}

fn prepare_frame<F: Real>(
    frame: &TrainFrame<F>,
    table: &TextEmbeddingTable<F>,
    norm: &SceneNormalizer<F>,
) -> Result<PreparedFrame<F>> {
    let inputs = norm.inputs(frame.cloud.points.iter().map(|p| (p.position, p.color)));
    let mut labeled_rows = Vec::new();
    let mut target_rows: Vec<&[F]> = Vec::new();
    for (r, p) in frame.cloud.points.iter().enumerate() {
        if p.entity_id == UNLABELED {
            continue;
        }
        let entity = frame.vocab.get(p.entity_id as usize).ok_or_else(|| {
            Error::VocabMismatch {
                id: i64::from(p.entity_id),
                vocab_len: frame.vocab.len(),
            }
        })?;
        let emb = table.vector(entity).ok_or_else(|| {
            Error::invalid_config("vocabulary", format!("no embedding for `{entity}`"))
        })?;
        labeled_rows.push(r);
        target_rows.push(emb);
    }
    let mut targets = Matrix::zeros(target_rows.len(), table.dim());
    for (i, row) in target_rows.iter().enumerate() {
        targets.row_mut(i).copy_from_slice(row);
    }
    Ok(PreparedFrame { inputs, labeled_rows, targets })
}

/// Stage 1: alignment on pixel-entity labels plus the weighted cross-frame
/// consistency term, over contiguous trajectory windows.
pub fn pretrain_stage<F: Real>(
    frames: &[TrainFrame<F>],
    table: &TextEmbeddingTable<F>,
    params_init: EncoderParams<F>,
    cfg: &TrainConfig,
    norm: &SceneNormalizer<F>,
) -> Result<(EncoderParams<F>, Vec<LossRecord>)> {
    cfg.validate()?;
    let prepared: Vec<PreparedFrame<F>> = frames
        .iter()
        .map(|f| prepare_frame(f, table, norm))
        .collect::<Result<_>>()?;
    if prepared.iter().all(|p| p.labeled_rows.is_empty()) {
        return Err(Error::NoLabels);
    }

    // Contiguous windows per scene, in ascending trajectory order.
    let mut scene_ids: Vec<usize> = frames.iter().map(|f| f.scene_id).collect();
    scene_ids.sort_unstable();
    scene_ids.dedup();
    let mut windows: Vec<Vec<usize>> = Vec::new();
    for sid in scene_ids {
        let mut slots: Vec<usize> = (0..frames.len())
            .filter(|&i| frames[i].scene_id == sid)
            .collect();
        slots.sort_by_key(|&i| frames[i].order);
        for chunk in slots.chunks(cfg.batch_size_stage1) {
            windows.push(chunk.to_vec());
        }
    }

    // Cross-frame matches are static; mine them once per adjacent pair.
    let adjacency: Vec<(usize, usize, MatchSet)> = {
        let mut pairs = Vec::new();
        for window in &windows {
            for w in window.windows(2) {
                let (i, j) = (w[0], w[1]);
                if frames[i].scene_id == frames[j].scene_id
                    && frames[j].order == frames[i].order + 1
                {
                    pairs.push((i, j));
                }
            }
        }
        pairs
            .into_par_iter()
            .map(|(i, j)| {
                match_points(&frames[i].cloud, &frames[j].cloud, cfg.match_mode.clone())
                    .map(|m| (i, j, m))
            })
            .collect::<Result<Vec<_>>>()?
    };

    let mut params = params_init;
    let mut opt = OptimizerState::new(&params);
    let mut log = Vec::new();
    let lambda = F::of(cfg.lambda_consistency);
    let mut global_step = 0;
    for epoch in 0..cfg.epochs_stage1 {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x5731 ^ epoch as u64));
        order.shuffle(&mut rng);
        for &widx in &order {
            let window = &windows[widx];
            let record = train_step_window(
                window,
                &prepared,
                &adjacency,
                &mut params,
                &mut opt,
                cfg,
                lambda,
                epoch,
                global_step,
            )?;
            log.push(record);
            global_step += 1;
        }
    }
    Ok((params, log))
}

#[allow(clippy::too_many_arguments)]
fn train_step_window<F: Real>(
    window: &[usize],
    prepared: &[PreparedFrame<F>],
    adjacency: &[(usize, usize, MatchSet)],
    params: &mut EncoderParams<F>,
    opt: &mut OptimizerState<F>,
    cfg: &TrainConfig,
    lambda: F,
    epoch: usize,
    step: usize,
) -> Result<LossRecord> {
    // Forward every frame in the window (read-only params, order preserved).
    let passes: Vec<_> = window
        .par_iter()
        .map(|&slot| params.forward(&prepared[slot].inputs).map(|fc| (slot, fc)))
        .collect::<Result<Vec<_>>>()?;
    let pos_of = |slot: usize| window.iter().position(|&s| s == slot).unwrap();

    // Alignment over all labeled points in the window.
    let dim = params.output_dim();
    let mut labeled_feats: Vec<Vec<F>> = Vec::new();
    let mut labeled_targets: Vec<Vec<F>> = Vec::new();
    let mut owners: Vec<(usize, usize)> = Vec::new(); // (window pos, feature row)
    for (pos, (slot, (features, _))) in passes.iter().enumerate() {
        let pf = &prepared[*slot];
        for (k, &row) in pf.labeled_rows.iter().enumerate() {
            labeled_feats.push(features.row(row).to_vec());
            labeled_targets.push(pf.targets.row(k).to_vec());
            owners.push((pos, row));
        }
    }
    let mut upstream: Vec<Matrix<F>> = passes
        .iter()
        .map(|(_, (features, _))| Matrix::zeros(features.rows, dim))
        .collect();
    let alignment = if labeled_feats.is_empty() {
        F::zero()
    } else {
        let (loss, grad) = alignment_loss(
            &Matrix::from_rows(&labeled_feats),
            &Matrix::from_rows(&labeled_targets),
        )?;
        for (i, &(pos, row)) in owners.iter().enumerate() {
            let dst = upstream[pos].row_mut(row);
            for (d, g) in dst.iter_mut().zip(grad.row(i)) {
                *d += *g;
            }
        }
        loss
    };

    // Consistency, averaged over the adjacent pairs inside this window.
    let in_window: Vec<&(usize, usize, MatchSet)> = adjacency
        .iter()
        .filter(|(i, j, _)| window.contains(i) && window.contains(j))
        .collect();
    let mut consistency = F::zero();
    if !in_window.is_empty() {
        let inv_pairs = F::one() / F::from_count(in_window.len());
        for (i, j, matches) in in_window {
            let fi = &passes[pos_of(*i)].1 .0;
            let fj = &passes[pos_of(*j)].1 .0;
            let (loss, gi, gj) = consistency_loss(fi, fj, matches)?;
            consistency += loss * inv_pairs;
            if lambda > F::zero() {
                let w = lambda * inv_pairs;
                let dst = upstream[pos_of(*i)].data.iter_mut();
                for (d, g) in dst.zip(&gi.data) {
                    *d += *g * w;
                }
                let dst = upstream[pos_of(*j)].data.iter_mut();
                for (d, g) in dst.zip(&gj.data) {
                    *d += *g * w;
                }
            }
        }
    }

    // Backward per frame, then reduce in ascending window position.
    let per_frame: Vec<EncoderGradients<F>> = passes
        .par_iter()
        .zip(upstream.par_iter())
        .map(|((_, (_, cache)), up)| params.backward(cache, up))
        .collect::<Result<Vec<_>>>()?;
    let mut grads = EncoderGradients::zeros_like(params);
    for g in &per_frame {
        grads.accumulate(g);
    }
    optimizer_step(params, &grads, opt, cfg)?;

    let total = total_loss(alignment, consistency, lambda);
    Ok(LossRecord {
        epoch,
        step,
        alignment: alignment.widen(),
        consistency: consistency.widen(),
        total: total.widen(),
    })
}

/// One global scene with its pseudo labels; `pseudo.entity` indexes
/// `entities`, the scene's aggregated vocabulary.
pub struct FinetuneItem<'a, F: Real> {
    pub scene: &'a GlobalScene<F>,
    pub pseudo: &'a PseudoLabelSet<F>,
    pub entities: &'a [String],
}

/// Stage 2: alignment on accepted pseudo-labeled points of global scenes; no
/// consistency term (a single cloud has no cross-frame pairs).
pub fn finetune_stage<F: Real>(
    items: &[FinetuneItem<'_, F>],
    table: &TextEmbeddingTable<F>,
    params_init: EncoderParams<F>,
    cfg: &TrainConfig,
    norm: &SceneNormalizer<F>,
) -> Result<(EncoderParams<F>, Vec<LossRecord>)> {
    cfg.validate()?;
    struct Prep<F> {
        inputs: Matrix<F>,
        targets: Matrix<F>,
    }
    let mut preps = Vec::new();
    for item in items {
        if item.pseudo.entity.len() != item.scene.len() {
            return Err(Error::ShapeMismatch(format!(
                "pseudo labels cover {} points, scene has {}",
                item.pseudo.entity.len(),
                item.scene.len()
            )));
        }
        let mut positions = Vec::new();
        let mut target_rows: Vec<&[F]> = Vec::new();
        for (idx, p) in item.scene.points.iter().enumerate() {
            if !item.pseudo.accepted[idx] {
                continue;
            }
            let entity = item
                .entities
                .get(item.pseudo.entity[idx])
                .ok_or_else(|| Error::VocabMismatch {
                    id: item.pseudo.entity[idx] as i64,
                    vocab_len: item.entities.len(),
                })?;
            let emb = table.vector(entity).ok_or_else(|| {
                Error::invalid_config("vocabulary", format!("no embedding for `{entity}`"))
            })?;
            positions.push((p.position, p.color));
            target_rows.push(emb);
        }
        let inputs = norm.inputs(positions);
        let mut targets = Matrix::zeros(target_rows.len(), table.dim());
        for (i, row) in target_rows.iter().enumerate() {
            targets.row_mut(i).copy_from_slice(row);
        }
        preps.push(Prep { inputs, targets });
    }
    if preps.iter().all(|p| p.inputs.rows == 0) {
        return Err(Error::NoAcceptedLabels);
    }

    let mut params = params_init;
    let mut opt = OptimizerState::new(&params);
    let mut log = Vec::new();
    let mut global_step = 0;
    for epoch in 0..cfg.epochs_stage2 {
        let mut order: Vec<usize> = (0..preps.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0xf17e ^ epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size_stage2) {
            let mut batch = batch.to_vec();
            batch.sort_unstable();
            let passes: Vec<_> = batch
                .par_iter()
                .map(|&i| params.forward(&preps[i].inputs))
                .collect::<Result<Vec<_>>>()?;
            let mut feats: Vec<Vec<F>> = Vec::new();
            let mut targets: Vec<Vec<F>> = Vec::new();
            for (k, &i) in batch.iter().enumerate() {
                let (features, _) = &passes[k];
                for r in 0..features.rows {
                    feats.push(features.row(r).to_vec());
                    targets.push(preps[i].targets.row(r).to_vec());
                }
            }
            if feats.is_empty() {
                continue;
            }
            let (alignment, grad) =
                alignment_loss(&Matrix::from_rows(&feats), &Matrix::from_rows(&targets))?;
            let mut offset = 0;
            let per_item: Vec<EncoderGradients<F>> = passes
                .iter()
                .map(|(features, cache)| {
                    let mut up = Matrix::zeros(features.rows, features.cols);
                    up.data
                        .copy_from_slice(&grad.data[offset * grad.cols..(offset + features.rows) * grad.cols]);
                    offset += features.rows;
                    params.backward(cache, &up)
                })
                .collect::<Result<Vec<_>>>()?;
            let mut grads = EncoderGradients::zeros_like(&params);
            for g in &per_item {
                grads.accumulate(g);
            }
            optimizer_step(&mut params, &grads, &mut opt, cfg)?;
            log.push(LossRecord {
                epoch,
                step: global_step,
                alignment: alignment.widen(),
                consistency: 0.0,
                total: alignment.widen(),
            });
            global_step += 1;
        }
    }
    Ok((params, log))
}
