//! Procedural generation of labeled global point clouds and camera
//! trajectories, plus base/novel category splits.
//!
//! Scenes are built from axis-aligned boxes and planes so surface sampling is
//! closed-form and rendering stays exact. Every generator is a pure function
//! of its spec and seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::CameraPose;
use crate::linalg::Vec3;
use crate::scalar::{mix_seed, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrimitiveKind {
    Box,
    Plane,
}

#[derive(Clone, Debug)]
pub struct ObjectSpec<F> {
    pub kind: PrimitiveKind,
    pub center: Vec3<F>,
    /// For planes the smallest component is the normal axis and may be zero.
    pub half_extents: Vec3<F>,
    pub category: String,
    pub color: [F; 3],
}

#[derive(Clone, Debug)]
pub struct SceneSpec<F> {
    pub room_extent: Vec3<F>,
    pub objects: Vec<ObjectSpec<F>>,
    /// Points per square meter of primitive surface.
    pub surface_density: F,
    /// Uniform per-point, per-channel color jitter amplitude.
    pub color_jitter: F,
    pub seed: u64,
}

impl<F: Real> SceneSpec<F> {
    pub fn validate(&self) -> Result<()> {
        let e = self.room_extent;
        if !(e.x > F::zero() && e.y > F::zero() && e.z > F::zero()) {
            return Err(Error::invalid_config("room_extent", "must be strictly positive"));
        }
        if !(self.surface_density > F::zero()) {
            return Err(Error::invalid_config("surface_density", "must be > 0"));
        }
        if self.color_jitter < F::zero() {
            return Err(Error::invalid_config("color_jitter", "must be >= 0"));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.category.is_empty() {
                return Err(Error::invalid_config(
                    "objects",
                    format!("object {i} has an empty category"),
                ));
            }
            let he = obj.half_extents;
            let positive = match obj.kind {
                PrimitiveKind::Box => he.x > F::zero() && he.y > F::zero() && he.z > F::zero(),
                // A plane needs two spanning axes; the normal axis may be zero.
                PrimitiveKind::Plane => {
                    let mut dims = [he.x, he.y, he.z];
                    dims.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    dims[0] >= F::zero() && dims[1] > F::zero() && dims[2] > F::zero()
                }
            };
            if !positive {
                return Err(Error::invalid_config(
                    "objects",
                    format!("object {i} has non-positive half extents"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ScenePoint<F> {
    pub id: u64,
    pub position: Vec3<F>,
    pub color: [F; 3],
    pub gt_label: usize,
}

#[derive(Clone, Debug)]
pub struct GlobalScene<F> {
    pub points: Vec<ScenePoint<F>>,
    pub categories: Vec<String>,
}

impl<F: Real> GlobalScene<F> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Ground-truth category index per point id. Ids are assigned densely by
    /// the generator but this does not assume it.
    pub fn labels_by_id(&self) -> std::collections::HashMap<u64, usize> {
        self.points.iter().map(|p| (p.id, p.gt_label)).collect()
    }

    pub fn bounding_box(&self) -> (Vec3<F>, Vec3<F>) {
        let mut lo = Vec3::new(F::infinity(), F::infinity(), F::infinity());
        let mut hi = -lo;
        for p in &self.points {
            lo.x = lo.x.min(p.position.x);
            lo.y = lo.y.min(p.position.y);
            lo.z = lo.z.min(p.position.z);
            hi.x = hi.x.max(p.position.x);
            hi.y = hi.y.max(p.position.y);
            hi.z = hi.z.max(p.position.z);
        }
        (lo, hi)
    }
}

#[derive(Clone, Debug)]
pub struct CameraTrajectory<F> {
    pub poses: Vec<CameraPose<F>>,
    pub frame_stride: usize,
}

fn surface_area<F: Real>(obj: &ObjectSpec<F>) -> F {
    let he = obj.half_extents;
    let four = F::of(4.0);
    match obj.kind {
        PrimitiveKind::Box => {
            let (a, b, c) = (he.x, he.y, he.z);
            F::of(8.0) * (a * b + b * c + c * a)
        }
        PrimitiveKind::Plane => {
            let mut dims = [he.x, he.y, he.z];
            dims.sort_by(|a, b| a.partial_cmp(b).unwrap());
            four * dims[1] * dims[2]
        }
    }
}

fn plane_normal_axis<F: Real>(he: Vec3<F>) -> usize {
    let dims = he.to_array();
    let mut axis = 0;
    for (i, d) in dims.iter().enumerate() {
        if *d < dims[axis] {
            axis = i;
        }
    }
    axis
}

fn sample_on_surface<F: Real>(obj: &ObjectSpec<F>, rng: &mut ChaCha8Rng) -> Vec3<F> {
    let he = obj.half_extents.widen();
    let mut local = [0.0f64; 3];
    match obj.kind {
        PrimitiveKind::Plane => {
            let axis = plane_normal_axis(obj.half_extents);
            let dims = [he.x, he.y, he.z];
            for (i, v) in local.iter_mut().enumerate() {
                *v = if i == axis {
                    0.0
                } else {
                    rng.gen_range(-dims[i]..=dims[i])
                };
            }
        }
        PrimitiveKind::Box => {
            // Pick a face weighted by area, then a uniform point on it.
            let areas = [he.y * he.z, he.x * he.z, he.x * he.y]; // faces normal to x, y, z
            let total = 2.0 * (areas[0] + areas[1] + areas[2]);
            let mut pick = rng.gen_range(0.0..total);
            let mut face = 5;
            for i in 0..6 {
                let a = areas[i / 2];
                if pick < a {
                    face = i;
                    break;
                }
                pick -= a;
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let dims = [he.x, he.y, he.z];
            for (i, v) in local.iter_mut().enumerate() {
                *v = if i == axis {
                    sign * dims[i]
                } else {
                    rng.gen_range(-dims[i]..=dims[i])
                };
            }
        }
    }
    obj.center
        + Vec3::new(F::of(local[0]), F::of(local[1]), F::of(local[2]))
}

/// Sample a labeled point cloud from the spec's primitives. Deterministic for
/// a fixed spec; every object contributes at least one point.
pub fn generate_scene<F: Real>(spec: &SceneSpec<F>) -> Result<GlobalScene<F>> {
    if spec.objects.is_empty() {
        return Err(Error::EmptySpec);
    }
    spec.validate()?;

    let mut categories: Vec<String> = Vec::new();
    let labels: Vec<usize> = spec
        .objects
        .iter()
        .map(|obj| {
            if let Some(idx) = categories.iter().position(|c| c == &obj.category) {
                idx
            } else {
                categories.push(obj.category.clone());
                categories.len() - 1
            }
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = spec.color_jitter.widen();
    let mut points = Vec::new();
    let mut next_id: u64 = 0;
    for (obj, label) in spec.objects.iter().zip(&labels) {
        let target = (surface_area(obj) * spec.surface_density).widen().round();
        let count = (target as usize).max(1);
        for _ in 0..count {
            let position = sample_on_surface(obj, &mut rng);
            let mut color = [F::zero(); 3];
            for (c, base) in color.iter_mut().zip(&obj.color) {
                let mut v = base.widen();
                if jitter > 0.0 {
                    v += rng.gen_range(-jitter..=jitter);
                }
                *c = F::of(v.clamp(0.0, 1.0));
            }
            points.push(ScenePoint {
                id: next_id,
                position,
                color,
                gt_label: *label,
            });
            next_id += 1;
        }
    }
    Ok(GlobalScene { points, categories })
}

/// Poses on a jittered circle inside the scene volume, looking inward and
/// slightly down so the floor stays in view.
pub fn generate_trajectory<F: Real>(
    scene: &GlobalScene<F>,
    n_frames: usize,
    seed: u64,
) -> Result<CameraTrajectory<F>> {
    if n_frames == 0 {
        return Err(Error::invalid_config("n_frames", "must be >= 1"));
    }
    if scene.is_empty() {
        return Err(Error::EmptySpec);
    }
    let (lo, hi) = scene.bounding_box();
    let center = ((lo + hi) * F::of(0.5)).widen();
    let extent = (hi - lo).widen();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7261_6a65));
    let base_radius = 0.40 * extent.x.min(extent.y).max(0.2);
    let mut poses = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        let angle = 2.0 * std::f64::consts::PI * (k as f64) / (n_frames as f64)
            + rng.gen_range(-0.05..=0.05);
        let radius = base_radius * rng.gen_range(0.9..=1.1);
        let eye = Vec3::new(
            center.x + radius * angle.cos(),
            center.y + radius * angle.sin(),
            center.z + extent.z * rng.gen_range(0.15..=0.30),
        );
        let target = Vec3::new(
            center.x + rng.gen_range(-0.1..=0.1),
            center.y + rng.gen_range(-0.1..=0.1),
            center.z - extent.z * 0.30,
        );
        let pose64 = CameraPose::looking_at(eye, target, Vec3::new(0.0, 0.0, 1.0));
        poses.push(pose64.cast::<F>());
    }
    Ok(CameraTrajectory {
        poses,
        frame_stride: 1,
    })
}

#[derive(Clone, Debug)]
pub enum SplitSpec {
    /// A named split such as "B15/N4": first B categories are base, the next
    /// N are novel.
    Named(String),
    Explicit { base: Vec<usize>, novel: Vec<usize> },
}

/// Partition category indices into base and novel sets.
pub fn split_base_novel(
    categories: &[String],
    split: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>)> {
    match split {
        SplitSpec::Named(name) => {
            let (b, n) = parse_split_name(name)?;
            if b + n > categories.len() {
                return Err(Error::BadSplit(format!(
                    "{name} needs {} categories, have {}",
                    b + n,
                    categories.len()
                )));
            }
            Ok(((0..b).collect(), (b..b + n).collect()))
        }
        SplitSpec::Explicit { base, novel } => {
            for idx in base.iter().chain(novel) {
                if *idx >= categories.len() {
                    return Err(Error::BadSplit(format!(
                        "index {idx} out of range for {} categories",
                        categories.len()
                    )));
                }
            }
            for b in base {
                if novel.contains(b) {
                    return Err(Error::BadSplit(format!("index {b} in both base and novel")));
                }
            }
            Ok((base.clone(), novel.clone()))
        }
    }
}

fn parse_split_name(name: &str) -> Result<(usize, usize)> {
    let bad = || Error::BadSplit(format!("unrecognized split name `{name}`"));
    let rest = name.strip_prefix('B').ok_or_else(bad)?;
    let (b, n) = rest.split_once("/N").ok_or_else(bad)?;
    Ok((
        b.parse().map_err(|_| bad())?,
        n.parse().map_err(|_| bad())?,
    ))
}
