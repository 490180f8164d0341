//! On-disk formats. All multi-byte binary values are little-endian; text
//! files are UTF-8. Writers are deterministic byte for byte and go through an
//! atomic temp-file rename.
//!
//! - `*.pgov`: `pgov-points v1` labeled point cloud text format.
//! - `frame_%06d.depth/.color/.srcid/.meta.json`: RGB-D frame rasters.
//! - `frame_%06d.entmask/.vocab.json`: pixel entities.
//! - `*.ckpt`: encoder checkpoint, JSON header line + f64 blob.
//! - `pseudo_labels.bin`: JSON header line + per-point records.
//! - loss/eval CSV helpers.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::EncoderParams;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, Frame};
use crate::linalg::Vec3;
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::oracle::PixelEntityMap;
use crate::pseudo::{PseudoLabelConfig, PseudoLabelSet};
use crate::scalar::Real;
use crate::scene::{CameraTrajectory, GlobalScene, ScenePoint};
use crate::train::LossRecord;

/// Write via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// pgov-points v1

/// Raw rows of a points file; labels may be -1 (unlabeled).
#[derive(Clone, Debug)]
pub struct PointsFile {
    pub categories: Vec<String>,
    /// (x, y, z, r, g, b, label, point_id)
    pub rows: Vec<([f64; 6], i64, u64)>,
}

impl PointsFile {
    pub fn into_scene<F: Real>(self) -> Result<GlobalScene<F>> {
        let mut points = Vec::with_capacity(self.rows.len());
        for (vals, label, id) in self.rows {
            if label < 0 || label as usize >= self.categories.len() {
                return Err(Error::OutOfRangeLabel {
                    label,
                    classes: self.categories.len(),
                });
            }
            points.push(ScenePoint {
                id,
                position: Vec3::new(F::of(vals[0]), F::of(vals[1]), F::of(vals[2])),
                color: [F::of(vals[3]), F::of(vals[4]), F::of(vals[5])],
                gt_label: label as usize,
            });
        }
        Ok(GlobalScene {
            points,
            categories: self.categories,
        })
    }
}

pub fn write_points<F: Real>(path: &Path, scene: &GlobalScene<F>) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "#pgov-points v1 count={} categories={}\n",
        scene.points.len(),
        scene.categories.len()
    ));
    for (i, cat) in scene.categories.iter().enumerate() {
        out.push_str(&format!("#cat {i} {cat}\n"));
    }
    for p in &scene.points {
        // 9 significant digits per float.
        out.push_str(&format!(
            "{:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {} {}\n",
            p.position.x.widen(),
            p.position.y.widen(),
            p.position.z.widen(),
            p.color[0].widen(),
            p.color[1].widen(),
            p.color[2].widen(),
            p.gt_label,
            p.id
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_points(path: &Path) -> Result<PointsFile> {
    let text = fs::read_to_string(path)
        .map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    let mut offset: u64 = 0;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, 0, "empty file"))?;
    let rest = header
        .strip_prefix("#pgov-points v1 ")
        .ok_or_else(|| Error::format(path, 0, "missing `#pgov-points v1` header"))?;
    let mut count = None;
    let mut n_categories = None;
    for field in rest.split_whitespace() {
        if let Some(v) = field.strip_prefix("count=") {
            count = v.parse::<usize>().ok();
        } else if let Some(v) = field.strip_prefix("categories=") {
            n_categories = v.parse::<usize>().ok();
        }
    }
    let (count, n_categories) = match (count, n_categories) {
        (Some(c), Some(k)) => (c, k),
        _ => return Err(Error::format(path, 0, "bad header fields")),
    };
    offset += header.len() as u64 + 1;

    let mut categories = vec![String::new(); n_categories];
    for _ in 0..n_categories {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(path, offset, "truncated category list"))?;
        let parts: Vec<&str> = line.splitn(3, ' ').collect();
        if parts.len() != 3 || parts[0] != "#cat" {
            return Err(Error::format(path, offset, "expected `#cat <index> <name>`"));
        }
        let idx: usize = parts[1]
            .parse()
            .map_err(|_| Error::format(path, offset, "bad category index"))?;
        if idx >= n_categories {
            return Err(Error::format(path, offset, "category index out of range"));
        }
        categories[idx] = parts[2].to_string();
        offset += line.len() as u64 + 1;
    }

    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(path, offset, "truncated point list"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 8 {
            return Err(Error::format(path, offset, "expected 8 columns"));
        }
        let mut vals = [0.0f64; 6];
        for (v, s) in vals.iter_mut().zip(&parts[..6]) {
            *v = s
                .parse()
                .map_err(|_| Error::format(path, offset, format!("bad float `{s}`")))?;
        }
        let label: i64 = parts[6]
            .parse()
            .map_err(|_| Error::format(path, offset, "bad label"))?;
        let id: u64 = parts[7]
            .parse()
            .map_err(|_| Error::format(path, offset, "bad point id"))?;
        rows.push((vals, label, id));
        offset += line.len() as u64 + 1;
    }
    Ok(PointsFile { categories, rows })
}

// ---------------------------------------------------------------------------
// Frames

#[derive(Serialize, Deserialize)]
struct FrameMeta {
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    /// Row-major 4x4 camera-to-world transform.
    pose: [f64; 16],
    frame_index: usize,
}

pub fn frame_basename(frame_index: usize) -> String {
    format!("frame_{frame_index:06}")
}

pub fn write_frame<F: Real>(dir: &Path, frame: &Frame<F>) -> Result<()> {
    let base = frame_basename(frame.frame_index);
    let mut depth = Vec::with_capacity(frame.depth.len() * 4);
    for d in &frame.depth {
        depth.extend_from_slice(&(d.widen() as f32).to_le_bytes());
    }
    atomic_write(&dir.join(format!("{base}.depth")), &depth)?;

    let mut color = Vec::with_capacity(frame.color.len() * 12);
    for px in &frame.color {
        for c in px {
            color.extend_from_slice(&(c.widen() as f32).to_le_bytes());
        }
    }
    atomic_write(&dir.join(format!("{base}.color")), &color)?;

    if let Some(source) = &frame.source_id {
        let mut srcid = Vec::with_capacity(source.len() * 8);
        for s in source {
            srcid.extend_from_slice(&s.to_le_bytes());
        }
        atomic_write(&dir.join(format!("{base}.srcid")), &srcid)?;
    }

    let meta = FrameMeta {
        width: frame.intrinsics.width,
        height: frame.intrinsics.height,
        fx: frame.intrinsics.fx.widen(),
        fy: frame.intrinsics.fy.widen(),
        cx: frame.intrinsics.cx.widen(),
        cy: frame.intrinsics.cy.widen(),
        pose: frame.pose.to_matrix4(),
        frame_index: frame.frame_index,
    };
    atomic_write(
        &dir.join(format!("{base}.meta.json")),
        serde_json::to_string_pretty(&meta)?.as_bytes(),
    )
}

pub fn read_frame<F: Real>(dir: &Path, frame_index: usize) -> Result<Frame<F>> {
    let base = frame_basename(frame_index);
    let meta_path = dir.join(format!("{base}.meta.json"));
    let meta_bytes =
        fs::read(&meta_path).map_err(|_| Error::MissingArtifacts(meta_path.clone()))?;
    let meta: FrameMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::format(&meta_path, e.column() as u64, e.to_string()))?;
    let n = meta.width * meta.height;

    let depth_path = dir.join(format!("{base}.depth"));
    let depth_bytes =
        fs::read(&depth_path).map_err(|_| Error::MissingArtifacts(depth_path.clone()))?;
    if depth_bytes.len() != n * 4 {
        return Err(Error::format(
            &depth_path,
            depth_bytes.len() as u64,
            format!("expected {} bytes of f32 depth", n * 4),
        ));
    }
    let depth: Vec<F> = depth_bytes
        .chunks_exact(4)
        .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();

    let color_path = dir.join(format!("{base}.color"));
    let color_bytes =
        fs::read(&color_path).map_err(|_| Error::MissingArtifacts(color_path.clone()))?;
    if color_bytes.len() != n * 12 {
        return Err(Error::format(
            &color_path,
            color_bytes.len() as u64,
            format!("expected {} bytes of f32 rgb", n * 12),
        ));
    }
    let color: Vec<[F; 3]> = color_bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| {
                F::of(f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]) as f64)
            };
            [f(0), f(4), f(8)]
        })
        .collect();

    let srcid_path = dir.join(format!("{base}.srcid"));
    let source_id = match fs::read(&srcid_path) {
        Err(_) => None,
        Ok(bytes) => {
            if bytes.len() != n * 8 {
                return Err(Error::format(
                    &srcid_path,
                    bytes.len() as u64,
                    format!("expected {} bytes of i64 ids", n * 8),
                ));
            }
            Some(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
    };

    Ok(Frame {
        frame_index: meta.frame_index,
        intrinsics: CameraIntrinsics {
            fx: F::of(meta.fx),
            fy: F::of(meta.fy),
            cx: F::of(meta.cx),
            cy: F::of(meta.cy),
            width: meta.width,
            height: meta.height,
        },
        pose: CameraPose::from_matrix4(&meta.pose)?,
        depth,
        color,
        source_id,
    })
}

// ---------------------------------------------------------------------------
// Pixel entities

pub fn write_entity_map(dir: &Path, frame_index: usize, map: &PixelEntityMap) -> Result<()> {
    let base = frame_basename(frame_index);
    let mut bytes = Vec::with_capacity(map.ids.len() * 2);
    for &id in &map.ids {
        let v: i16 = if id < 0 { -1 } else { id as i16 };
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(&dir.join(format!("{base}.entmask")), &bytes)?;
    atomic_write(
        &dir.join(format!("{base}.vocab.json")),
        serde_json::to_string_pretty(&map.vocabulary)?.as_bytes(),
    )
}

pub fn read_entity_map(dir: &Path, frame_index: usize, width: usize, height: usize) -> Result<PixelEntityMap> {
    let base = frame_basename(frame_index);
    crate::oracle::ingest_external_masks(
        &dir.join(format!("{base}.entmask")),
        &dir.join(format!("{base}.vocab.json")),
        width,
        height,
    )
}

// ---------------------------------------------------------------------------
// Trajectory

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    frame_stride: usize,
    poses: Vec<[f64; 16]>,
}

pub fn write_trajectory<F: Real>(path: &Path, traj: &CameraTrajectory<F>) -> Result<()> {
    let file = TrajectoryFile {
        frame_stride: traj.frame_stride,
        poses: traj.poses.iter().map(CameraPose::to_matrix4).collect(),
    };
    atomic_write(path, serde_json::to_string_pretty(&file)?.as_bytes())
}

pub fn read_trajectory<F: Real>(path: &Path) -> Result<CameraTrajectory<F>> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    let file: TrajectoryFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(path, e.column() as u64, e.to_string()))?;
    let poses = file
        .poses
        .iter()
        .map(CameraPose::from_matrix4)
        .collect::<Result<Vec<_>>>()?;
    Ok(CameraTrajectory {
        poses,
        frame_stride: file.frame_stride.max(1),
    })
}

// ---------------------------------------------------------------------------
// Checkpoints

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layer_sizes: Vec<usize>,
    seed: u64,
    step: u64,
}

/// JSON header line, then the f64 LE parameter blob in flat order.
pub fn write_checkpoint<F: Real>(path: &Path, params: &EncoderParams<F>, step: u64) -> Result<()> {
    let header = CheckpointHeader {
        layer_sizes: params.layer_sizes.clone(),
        seed: params.seed,
        step,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for v in params.flat_values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_checkpoint<F: Real>(path: &Path) -> Result<(EncoderParams<F>, u64)> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, 0, "missing header line"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(path, e.column() as u64, e.to_string()))?;
    let blob = &bytes[newline + 1..];
    let mut params = EncoderParams::<F>::init(&header.layer_sizes, header.seed);
    let expected = params.param_count() * 8;
    if blob.len() != expected {
        return Err(Error::format(
            path,
            (newline + 1 + blob.len()) as u64,
            format!("expected {expected} blob bytes, found {}", blob.len()),
        ));
    }
    let values: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    params.set_flat_values(&values)?;
    Ok((params, header.step))
}

// ---------------------------------------------------------------------------
// Pseudo labels

#[derive(Serialize, Deserialize)]
struct PseudoHeader {
    points: usize,
    entities: usize,
    voxel_size: f64,
    repetitions: usize,
    temperature: f64,
    confidence_threshold: f64,
    seed: u64,
}

/// Chosen entity, confidence, and acceptance per point (the averaged
/// distributions stay in memory).
#[derive(Clone, Debug)]
pub struct PseudoLabelFile {
    pub entities: usize,
    pub entity: Vec<usize>,
    pub confidence: Vec<f32>,
    pub accepted: Vec<bool>,
    pub config: PseudoLabelConfig,
}

pub fn write_pseudo_labels<F: Real>(
    path: &Path,
    set: &PseudoLabelSet<F>,
    n_entities: usize,
) -> Result<()> {
    let header = PseudoHeader {
        points: set.entity.len(),
        entities: n_entities,
        voxel_size: set.config.voxel_size,
        repetitions: set.config.repetitions,
        temperature: set.config.temperature,
        confidence_threshold: set.config.confidence_threshold,
        seed: set.config.seed,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for i in 0..set.entity.len() {
        bytes.extend_from_slice(&(set.entity[i] as i32).to_le_bytes());
        bytes.extend_from_slice(&(set.confidence[i].widen() as f32).to_le_bytes());
        bytes.push(u8::from(set.accepted[i]));
    }
    atomic_write(path, &bytes)
}

pub fn read_pseudo_labels(path: &Path) -> Result<PseudoLabelFile> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, 0, "missing header line"))?;
    let header: PseudoHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(path, e.column() as u64, e.to_string()))?;
    let blob = &bytes[newline + 1..];
    let record = 9usize;
    if blob.len() != header.points * record {
        return Err(Error::format(
            path,
            (newline + 1 + blob.len()) as u64,
            format!("expected {} record bytes", header.points * record),
        ));
    }
    let mut entity = Vec::with_capacity(header.points);
    let mut confidence = Vec::with_capacity(header.points);
    let mut accepted = Vec::with_capacity(header.points);
    for (i, rec) in blob.chunks_exact(record).enumerate() {
        let id = i32::from_le_bytes(rec[0..4].try_into().unwrap());
        if id < 0 || id as usize >= header.entities {
            return Err(Error::format(
                path,
                (newline + 1 + i * record) as u64,
                format!("entity id {id} out of range"),
            ));
        }
        entity.push(id as usize);
        confidence.push(f32::from_le_bytes(rec[4..8].try_into().unwrap()));
        accepted.push(rec[8] != 0);
    }
    Ok(PseudoLabelFile {
        entities: header.entities,
        entity,
        confidence,
        accepted,
        config: PseudoLabelConfig {
            voxel_size: header.voxel_size,
            repetitions: header.repetitions,
            temperature: header.temperature,
            confidence_threshold: header.confidence_threshold,
            seed: header.seed,
        },
    })
}

// ---------------------------------------------------------------------------
// CSV / JSON helpers

pub fn write_string_array(path: &Path, values: &[String]) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(values)?.as_bytes())
}

pub fn read_string_array(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.column() as u64, e.to_string()))
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    let mut out = String::from("epoch,step,alignment,consistency,total\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.step, r.alignment, r.consistency, r.total
        ));
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.lines().enumerate() {
        if i > 0 && !line.is_empty() {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(Error::format(path, offset, "expected 5 columns"));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::format(path, offset, format!("bad float `{s}`")))
            };
            records.push(LossRecord {
                epoch: parts[0]
                    .parse()
                    .map_err(|_| Error::format(path, offset, "bad epoch"))?,
                step: parts[1]
                    .parse()
                    .map_err(|_| Error::format(path, offset, "bad step"))?,
                alignment: parse_f(parts[2])?,
                consistency: parse_f(parts[3])?,
                total: parse_f(parts[4])?,
            });
        }
        offset += line.len() as u64 + 1;
    }
    Ok(records)
}

/// `metric,class,value` rows: per-class ratios on both the 0-1 and percent
/// scales, then the aggregates.
pub fn write_eval_report_csv(
    path: &Path,
    report: &EvalReport,
    class_names: &[String],
    extra_rows: &[(String, String, f64)],
) -> Result<()> {
    let mut out = String::from("metric,class,value\n");
    for (c, name) in class_names.iter().enumerate() {
        if let Some(iou) = report.class_iou[c] {
            out.push_str(&format!("iou,{name},{iou}\n"));
            out.push_str(&format!("iou_pct,{name},{}\n", 100.0 * iou));
        }
        if let Some(acc) = report.class_acc[c] {
            out.push_str(&format!("acc,{name},{acc}\n"));
            out.push_str(&format!("acc_pct,{name},{}\n", 100.0 * acc));
        }
    }
    out.push_str(&format!("miou,,{}\n", report.miou));
    out.push_str(&format!("miou_pct,,{}\n", 100.0 * report.miou));
    out.push_str(&format!("macc,,{}\n", report.macc));
    out.push_str(&format!("macc_pct,,{}\n", 100.0 * report.macc));
    out.push_str(&format!("unmatched_predictions,,{}\n", report.unmatched_predictions));
    if let Some(s) = &report.splits {
        out.push_str(&format!("miou_base,,{}\n", s.miou_base));
        out.push_str(&format!("miou_novel,,{}\n", s.miou_novel));
        out.push_str(&format!("hiou,,{}\n", s.hiou));
    }
    for (metric, class, value) in extra_rows {
        out.push_str(&format!("{metric},{class},{value}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Integer grid with category names on both axes.
pub fn write_confusion_csv(
    path: &Path,
    matrix: &ConfusionMatrix,
    class_names: &[String],
) -> Result<()> {
    let mut out = String::from("gt\\pred");
    for name in class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (g, name) in class_names.iter().enumerate() {
        out.push_str(name);
        for p in 0..class_names.len() {
            out.push_str(&format!(",{}", matrix.count(g, p)));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Read `metric,class,value` rows back into a map keyed by (metric, class).
pub fn read_eval_report_csv(path: &Path) -> Result<HashMap<(String, String), f64>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingArtifacts(path.to_path_buf()))?;
    let mut out = HashMap::new();
    let mut offset = 0u64;
    for (i, line) in text.lines().enumerate() {
        if i > 0 && !line.is_empty() {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::format(path, offset, "expected 3 columns"));
            }
            let value: f64 = parts[2]
                .parse()
                .map_err(|_| Error::format(path, offset, format!("bad value `{}`", parts[2])))?;
            out.insert((parts[0].to_string(), parts[1].to_string()), value);
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

pub fn scene_path(dir: &Path) -> PathBuf {
    dir.join("scene.pgov")
}

pub fn trajectory_path(dir: &Path) -> PathBuf {
    dir.join("trajectory.json")
}
