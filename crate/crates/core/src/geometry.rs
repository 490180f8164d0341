//! Pinhole camera model, z-buffer point-splat rendering, depth backprojection,
//! frame-to-partial-cloud conversion, and cross-frame point matching.
//!
//! Conventions: camera axes are x-right, y-down, z-forward; the pose maps
//! camera coordinates to world coordinates; integer pixel (u, v) rays pass
//! through exactly (u, v), so the renderer and the backprojector share one
//! coordinate convention. Invalid depth is 0.0.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::oracle::PixelEntityMap;
use crate::scalar::{mix_seed, Real};
use crate::scene::GlobalScene;

/// Source-id raster value for pixels no point covers.
pub const SENTINEL_NONE: i64 = -1;
/// Entity id for pixels/points without a label.
pub const UNLABELED: i32 = -1;

#[derive(Clone, Copy, Debug)]
pub struct CameraIntrinsics<F> {
    pub fx: F,
    pub fy: F,
    pub cx: F,
    pub cy: F,
    pub width: usize,
    pub height: usize,
}

impl<F: Real> CameraIntrinsics<F> {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > F::zero() && self.fy > F::zero()) {
            return Err(Error::invalid_config("fx/fy", "focal lengths must be > 0"));
        }
        let (w, h) = (F::from_count(self.width), F::from_count(self.height));
        if !(self.cx >= F::zero() && self.cx < w && self.cy >= F::zero() && self.cy < h) {
            return Err(Error::invalid_config(
                "cx/cy",
                "principal point must lie inside the raster",
            ));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Rigid camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose<F> {
    pub rotation: Mat3<F>,
    pub translation: Vec3<F>,
}

impl<F: Real> CameraPose<F> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checks orthonormality and orientation to 1e-9.
    pub fn validate(&self) -> Result<()> {
        let tol = F::of(1e-9);
        let gram = self.rotation.mul_mat(self.rotation.transpose());
        let eye = Mat3::identity();
        for i in 0..3 {
            for j in 0..3 {
                if (gram.rows[i][j] - eye.rows[i][j]).abs() > tol {
                    return Err(Error::invalid_config("pose", "rotation is not orthonormal"));
                }
            }
        }
        if (self.rotation.det() - F::one()).abs() > tol {
            return Err(Error::invalid_config("pose", "rotation must have det +1"));
        }
        if !self.translation.is_finite() {
            return Err(Error::invalid_config("pose", "translation must be finite"));
        }
        Ok(())
    }

    /// Pose at `eye` whose optical axis points at `target`, with `up`
    /// selecting the image-down direction (image down maps to world -up).
    pub fn looking_at(eye: Vec3<F>, target: Vec3<F>, up: Vec3<F>) -> Self {
        let forward = (target - eye).normalized();
        let mut up = up;
        if forward.cross(up).norm() < F::of(1e-9) {
            up = Vec3::new(F::zero(), F::one(), F::zero());
        }
        let right = forward.cross(up).normalized();
        let down = forward.cross(right);
        Self {
            rotation: Mat3::from_cols(right, down, forward),
            translation: eye,
        }
    }

    pub fn to_world(&self, camera_point: Vec3<F>) -> Vec3<F> {
        self.rotation.mul_vec(camera_point) + self.translation
    }

    pub fn to_camera(&self, world_point: Vec3<F>) -> Vec3<F> {
        self.rotation
            .transpose()
            .mul_vec(world_point - self.translation)
    }

    pub fn cast<G: Real>(&self) -> CameraPose<G> {
        let mut rows = [[G::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rows[i][j] = G::of(self.rotation.rows[i][j].widen());
            }
        }
        CameraPose {
            rotation: Mat3 { rows },
            translation: Vec3::new(
                G::of(self.translation.x.widen()),
                G::of(self.translation.y.widen()),
                G::of(self.translation.z.widen()),
            ),
        }
    }

    /// Row-major 4x4 homogeneous matrix, for serialization.
    pub fn to_matrix4(&self) -> [f64; 16] {
        let mut m = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                m[i * 4 + j] = self.rotation.rows[i][j].widen();
            }
        }
        // Row-major [R t; 0 1]: t sits in the last column of each row.
        m[3] = self.translation.x.widen();
        m[7] = self.translation.y.widen();
        m[11] = self.translation.z.widen();
        m[15] = 1.0;
        m
    }

    pub fn from_matrix4(m: &[f64; 16]) -> Result<Self> {
        let mut rows = [[F::zero(); 3]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = F::of(m[i * 4 + j]);
            }
        }
        let pose = Self {
            rotation: Mat3 { rows },
            translation: Vec3::new(F::of(m[3]), F::of(m[7]), F::of(m[11])),
        };
        pose.validate()?;
        Ok(pose)
    }
}

/// One rendered RGB-D observation with synthetic provenance.
#[derive(Clone, Debug)]
pub struct Frame<F> {
    pub frame_index: usize,
    pub intrinsics: CameraIntrinsics<F>,
    pub pose: CameraPose<F>,
    /// Row-major depth in meters; 0.0 marks an invalid pixel.
    pub depth: Vec<F>,
    pub color: Vec<[F; 3]>,
    /// Scene point id per pixel; `None` for frames ingested without provenance.
    pub source_id: Option<Vec<i64>>,
}

impl<F: Real> Frame<F> {
    pub fn pixel_index(&self, u: usize, v: usize) -> usize {
        v * self.intrinsics.width + u
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > F::zero()).count()
    }
}

/// One point backprojected from a frame pixel.
#[derive(Clone, Debug)]
pub struct PartialPoint<F> {
    pub position: Vec3<F>,
    pub color: [F; 3],
    /// Index into the frame vocabulary, or [`UNLABELED`].
    pub entity_id: i32,
    pub source_point_id: i64,
    pub source_pixel: (usize, usize),
    pub frame_index: usize,
}

#[derive(Clone, Debug, Default)]
pub struct PartialCloud<F> {
    pub points: Vec<PartialPoint<F>>,
}

impl<F: Real> PartialCloud<F> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MatchMode {
    ById,
    ByRadius { radius_m: f64 },
}

/// Index pairs (into cloud A, into cloud B), sorted by A index.
#[derive(Clone, Debug)]
pub struct MatchSet {
    pub pairs: Vec<(usize, usize)>,
    pub mode: MatchMode,
}

impl MatchSet {
    pub fn empty(mode: MatchMode) -> Self {
        Self { pairs: Vec::new(), mode }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Eq.-style pixel backprojection: lift (u, v, depth) through the inverse
/// intrinsics and the rigid pose into world coordinates.
pub fn backproject_pixel<F: Real>(
    u: F,
    v: F,
    depth_m: F,
    intrinsics: &CameraIntrinsics<F>,
    pose: &CameraPose<F>,
) -> Result<Vec3<F>> {
    if !(depth_m > F::zero()) || !depth_m.is_finite() {
        return Err(Error::InvalidDepth(depth_m.widen()));
    }
    let cam = Vec3::new(
        (u - intrinsics.cx) / intrinsics.fx * depth_m,
        (v - intrinsics.cy) / intrinsics.fy * depth_m,
        depth_m,
    );
    Ok(pose.to_world(cam))
}

/// Inverse of [`backproject_pixel`]: continuous pixel coordinates plus
/// camera-frame depth, or `BehindCamera` when z <= 0.
pub fn project_point<F: Real>(
    world_point: Vec3<F>,
    intrinsics: &CameraIntrinsics<F>,
    pose: &CameraPose<F>,
) -> Result<(F, F, F)> {
    let cam = pose.to_camera(world_point);
    if !(cam.z > F::zero()) {
        return Err(Error::BehindCamera { z: cam.z.widen() });
    }
    let u = cam.x / cam.z * intrinsics.fx + intrinsics.cx;
    let v = cam.y / cam.z * intrinsics.fy + intrinsics.cy;
    Ok((u, v, cam.z))
}

/// Z-buffer splatting: every scene point covers a disc of pixel offsets with
/// du^2 + dv^2 < radius^2 around its rounded projection; the smallest
/// camera-frame z wins each pixel and records the point's exact depth, color,
/// and id. radius 1 means single-pixel splats.
pub fn render_frame<F: Real>(
    scene: &GlobalScene<F>,
    intrinsics: &CameraIntrinsics<F>,
    pose: &CameraPose<F>,
    point_radius_px: usize,
    frame_index: usize,
) -> Frame<F> {
    let n = intrinsics.pixel_count();
    let mut depth = vec![F::zero(); n];
    let mut color = vec![[F::zero(); 3]; n];
    let mut source_id = vec![SENTINEL_NONE; n];

    let radius = point_radius_px.max(1) as i64;
    let r2 = radius * radius;
    let (w, h) = (intrinsics.width as i64, intrinsics.height as i64);
    for point in &scene.points {
        let (u, v, z) = match project_point(point.position, intrinsics, pose) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let (cu, cv) = (u.round().widen() as i64, v.round().widen() as i64);
        for dv in -(radius - 1)..=(radius - 1) {
            for du in -(radius - 1)..=(radius - 1) {
                if du * du + dv * dv >= r2 {
                    continue;
                }
                let (pu, pv) = (cu + du, cv + dv);
                if pu < 0 || pu >= w || pv < 0 || pv >= h {
                    continue;
                }
                let idx = (pv as usize) * intrinsics.width + pu as usize;
                if depth[idx] == F::zero() || z < depth[idx] {
                    depth[idx] = z;
                    color[idx] = point.color;
                    source_id[idx] = point.id as i64;
                }
            }
        }
    }
    Frame {
        frame_index,
        intrinsics: *intrinsics,
        pose: *pose,
        depth,
        color,
        source_id: Some(source_id),
    }
}

/// Add per-frame Gaussian color noise, clamped to [0, 1]; models
/// view-dependent appearance changes across observations of the same point.
pub fn jitter_frame_colors<F: Real>(frame: &mut Frame<F>, std_dev: f64, seed: u64) {
    if std_dev <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, frame.frame_index as u64));
    for (i, px) in frame.color.iter_mut().enumerate() {
        if frame.depth[i] == F::zero() {
            continue;
        }
        for c in px.iter_mut() {
            let n: f64 = StandardNormal.sample(&mut rng);
            *c = F::of((c.widen() + std_dev * n).clamp(0.0, 1.0));
        }
    }
}

/// Backproject every valid-depth pixel; each point inherits the pixel's
/// entity id and keeps full provenance.
pub fn frame_to_partial_cloud<F: Real>(
    frame: &Frame<F>,
    pixel_entities: &PixelEntityMap,
) -> Result<PartialCloud<F>> {
    let dims = (frame.intrinsics.width, frame.intrinsics.height);
    if (pixel_entities.width, pixel_entities.height) != dims {
        return Err(Error::DimMismatch {
            expected: dims,
            got: (pixel_entities.width, pixel_entities.height),
        });
    }
    let mut points = Vec::new();
    for v in 0..frame.intrinsics.height {
        for u in 0..frame.intrinsics.width {
            let idx = frame.pixel_index(u, v);
            let d = frame.depth[idx];
            if !(d > F::zero()) {
                continue;
            }
            let position = backproject_pixel(
                F::from_count(u),
                F::from_count(v),
                d,
                &frame.intrinsics,
                &frame.pose,
            )?;
            points.push(PartialPoint {
                position,
                color: frame.color[idx],
                entity_id: pixel_entities.ids[idx],
                source_point_id: frame
                    .source_id
                    .as_ref()
                    .map_or(SENTINEL_NONE, |s| s[idx]),
                source_pixel: (u, v),
                frame_index: frame.frame_index,
            });
        }
    }
    Ok(PartialCloud { points })
}

/// Pair points across two clouds, either by shared source-point id or by
/// nearest neighbor within a radius (voxel-hash accelerated, each B point
/// used at most once, ties to the lower B index).
pub fn match_points<F: Real>(
    cloud_a: &PartialCloud<F>,
    cloud_b: &PartialCloud<F>,
    mode: MatchMode,
) -> Result<MatchSet> {
    match mode {
        MatchMode::ById => {
            let mut first_in_b: HashMap<i64, usize> = HashMap::new();
            for (j, p) in cloud_b.points.iter().enumerate() {
                if p.source_point_id != SENTINEL_NONE {
                    first_in_b.entry(p.source_point_id).or_insert(j);
                }
            }
            let mut pairs = Vec::new();
            for (i, p) in cloud_a.points.iter().enumerate() {
                if p.source_point_id == SENTINEL_NONE {
                    continue;
                }
                if let Some(&j) = first_in_b.get(&p.source_point_id) {
                    pairs.push((i, j));
                }
            }
            Ok(MatchSet { pairs, mode: MatchMode::ById })
        }
        MatchMode::ByRadius { radius_m } => {
            if !(radius_m > 0.0) {
                return Err(Error::invalid_config("radius_m", "must be > 0"));
            }
            let key = |p: &Vec3<F>| -> [i64; 3] {
                [
                    (p.x.widen() / radius_m).floor() as i64,
                    (p.y.widen() / radius_m).floor() as i64,
                    (p.z.widen() / radius_m).floor() as i64,
                ]
            };
            let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
            for (j, p) in cloud_b.points.iter().enumerate() {
                grid.entry(key(&p.position)).or_default().push(j);
            }
            let r2 = radius_m * radius_m;
            let mut used = vec![false; cloud_b.points.len()];
            let mut pairs = Vec::new();
            for (i, pa) in cloud_a.points.iter().enumerate() {
                let k = key(&pa.position);
                let mut best: Option<(f64, usize)> = None;
                for dz in -1..=1_i64 {
                    for dy in -1..=1_i64 {
                        for dx in -1..=1_i64 {
                            let Some(cell) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                                continue;
                            };
                            for &j in cell {
                                if used[j] {
                                    continue;
                                }
                                let d = (cloud_b.points[j].position - pa.position).widen();
                                let d2 = d.dot(d);
                                if d2 > r2 {
                                    continue;
                                }
                                let better = match best {
                                    None => true,
                                    Some((bd, bj)) => d2 < bd || (d2 == bd && j < bj),
                                };
                                if better {
                                    best = Some((d2, j));
                                }
                            }
                        }
                    }
                }
                if let Some((_, j)) = best {
                    used[j] = true;
                    pairs.push((i, j));
                }
            }
            Ok(MatchSet {
                pairs,
                mode: MatchMode::ByRadius { radius_m },
            })
        }
    }
}
