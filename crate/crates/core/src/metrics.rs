//! Zero-shot segmentation inference and evaluation: confusion matrix,
//! per-class IoU and accuracy, mIoU/mAcc, and harmonic IoU over base/novel
//! splits.

use std::collections::HashMap;

use crate::embed::{Encoder, SceneNormalizer, TextEmbeddingTable};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::scalar::Real;
use crate::scene::GlobalScene;

/// Sentinel for predictions that map to no evaluation category.
pub const UNMATCHED: i64 = -1;

/// Argmax cosine against each entity embedding, lowest index on ties.
pub fn segment_features<F: Real>(features: &Matrix<F>, embeddings: &Matrix<F>) -> Result<Vec<usize>> {
    if embeddings.rows == 0 {
        return Err(Error::EmptyVocabulary);
    }
    if features.cols != embeddings.cols {
        return Err(Error::ShapeMismatch(format!(
            "feature dim {} vs embedding dim {}",
            features.cols, embeddings.cols
        )));
    }
    let mut out = Vec::with_capacity(features.rows);
    for r in 0..features.rows {
        let f = features.row(r);
        let nf = norm(f);
        let mut best = 0usize;
        let mut best_cos = F::neg_infinity();
        for j in 0..embeddings.rows {
            let e = embeddings.row(j);
            let ne = norm(e);
            let c = if nf == F::zero() || ne == F::zero() {
                F::zero()
            } else {
                dot(f, e) / (nf * ne)
            };
            if c > best_cos {
                best_cos = c;
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Per-point predicted entity id over `eval_entities`.
pub fn segment_scene<F: Real, E: Encoder<F>>(
    encoder: &E,
    scene: &GlobalScene<F>,
    eval_entities: &[String],
    table: &TextEmbeddingTable<F>,
    normalizer: &SceneNormalizer<F>,
) -> Result<Vec<usize>> {
    if eval_entities.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let embeddings = table.rows(eval_entities)?;
    let inputs = normalizer.inputs(scene.points.iter().map(|p| (p.position, p.color)));
    let ids: Vec<u64> = scene.points.iter().map(|p| p.id).collect();
    let features = encoder.encode_with_ids(&inputs, &ids)?;
    segment_features(&features, &embeddings)
}

/// Rows are ground truth, columns predictions; points whose ground truth is
/// `ignore_id` are skipped, predictions equal to `ignore_id` are tallied as
/// unmatched (wrong) against their ground-truth row.
#[derive(Clone, Debug)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
    unmatched: Vec<u64>,
    evaluated: u64,
}

impl ConfusionMatrix {
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn unmatched_for(&self, gt: usize) -> u64 {
        self.unmatched[gt]
    }

    pub fn unmatched_total(&self) -> u64 {
        self.unmatched.iter().sum()
    }

    pub fn evaluated(&self) -> u64 {
        self.evaluated
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unmatched.iter_mut().zip(&other.unmatched) {
            *a += b;
        }
        self.evaluated += other.evaluated;
    }

    pub fn zeros(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            unmatched: vec![0; classes],
            evaluated: 0,
        }
    }
}

pub fn build_confusion(
    pred: &[i64],
    gt: &[i64],
    classes: usize,
    ignore_id: i64,
) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            gt.len()
        )));
    }
    let mut m = ConfusionMatrix::zeros(classes);
    for (&p, &g) in pred.iter().zip(gt) {
        for v in [p, g] {
            if v != ignore_id && (v < 0 || v as usize >= classes) {
                return Err(Error::OutOfRangeLabel { label: v, classes });
            }
        }
        if g == ignore_id {
            continue;
        }
        m.evaluated += 1;
        if p == ignore_id {
            m.unmatched[g as usize] += 1;
        } else {
            m.counts[g as usize * classes + p as usize] += 1;
        }
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitMetrics {
    pub miou_base: f64,
    pub miou_novel: f64,
    pub hiou: f64,
}

/// Per-class ratios plus their unweighted means. Classes absent from both
/// ground truth and predictions are excluded (`None`).
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub class_iou: Vec<Option<f64>>,
    pub class_acc: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    pub unmatched_predictions: u64,
    pub splits: Option<SplitMetrics>,
}

pub fn compute_metrics(matrix: &ConfusionMatrix) -> Result<EvalReport> {
    if matrix.evaluated == 0 {
        return Err(Error::EmptyMatrix);
    }
    let k = matrix.classes;
    let mut class_iou = vec![None; k];
    let mut class_acc = vec![None; k];
    let mut iou_sum = 0.0;
    let mut acc_sum = 0.0;
    let mut included = 0usize;
    for c in 0..k {
        let tp = matrix.count(c, c);
        let row: u64 = (0..k).map(|j| matrix.count(c, j)).sum::<u64>() + matrix.unmatched[c];
        let col: u64 = (0..k).map(|i| matrix.count(i, c)).sum();
        if row == 0 && col == 0 {
            continue;
        }
        let fp = col - tp;
        let fn_ = row - tp;
        let iou = tp as f64 / (tp + fp + fn_) as f64;
        // Accuracy of a class never observed in ground truth is defined as 0.
        let acc = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        class_iou[c] = Some(iou);
        class_acc[c] = Some(acc);
        iou_sum += iou;
        acc_sum += acc;
        included += 1;
    }
    if included == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(EvalReport {
        class_iou,
        class_acc,
        miou: iou_sum / included as f64,
        macc: acc_sum / included as f64,
        unmatched_predictions: matrix.unmatched_total(),
        splits: None,
    })
}

/// Harmonic mean of the base and novel mIoU; zero when both are zero. Inputs
/// may be on the 0-1 or percentage scale, consistently.
pub fn compute_hiou(miou_base: f64, miou_novel: f64) -> f64 {
    if miou_base + miou_novel == 0.0 {
        0.0
    } else {
        2.0 * miou_base * miou_novel / (miou_base + miou_novel)
    }
}

/// mIoU restricted to each split (over included classes), plus their hIoU.
pub fn split_metrics(report: &EvalReport, base: &[usize], novel: &[usize]) -> SplitMetrics {
    let mean_over = |idx: &[usize]| -> f64 {
        let vals: Vec<f64> = idx.iter().filter_map(|&i| report.class_iou[i]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let miou_base = mean_over(base);
    let miou_novel = mean_over(novel);
    SplitMetrics {
        miou_base,
        miou_novel,
        hiou: compute_hiou(miou_base, miou_novel),
    }
}

/// Map open-vocabulary entity strings onto the evaluation categories: exact
/// match first, then explicit aliases; anything else is unmatched.
pub fn map_entities(
    pred_entities: &[String],
    eval_categories: &[String],
    aliases: &HashMap<String, String>,
) -> Vec<Option<usize>> {
    let index: HashMap<&str, usize> = eval_categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    pred_entities
        .iter()
        .map(|e| {
            index.get(e.as_str()).copied().or_else(|| {
                aliases
                    .get(e)
                    .and_then(|target| index.get(target.as_str()).copied())
            })
        })
        .collect()
}

/// Per-point remap of predicted entity ids (over `pred_entities`) onto the
/// evaluation categories; unmatched points get [`UNMATCHED`] and are scored
/// as wrong.
pub fn remap_vocab(
    pred_ids: &[usize],
    pred_entities: &[String],
    eval_categories: &[String],
    aliases: &HashMap<String, String>,
) -> Result<Vec<i64>> {
    let mapping = map_entities(pred_entities, eval_categories, aliases);
    pred_ids
        .iter()
        .map(|&id| {
            mapping
                .get(id)
                .ok_or_else(|| Error::VocabMismatch {
                    id: id as i64,
                    vocab_len: pred_entities.len(),
                })
                .map(|m| m.map_or(UNMATCHED, |v| v as i64))
        })
        .collect()
}
