//! Pipeline configuration: one JSON document with namespaced sections, strict
//! about unknown keys, with the desk-scale benchmark as the default.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pgov_core::error::{Error, Result};
use pgov_core::geometry::{CameraIntrinsics, MatchMode};
use pgov_core::linalg::Vec3;
use pgov_core::scalar::mix_seed;
use pgov_core::scene::{ObjectSpec, PrimitiveKind, SceneSpec};
use pgov_core::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub scene: SceneSection,
    pub camera: CameraSection,
    pub oracle: OracleSection,
    pub encoder: EncoderSection,
    pub train: TrainSection,
    pub pseudo: PseudoSection,
    pub eval: EvalSection,
    pub ablation: AblationSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneSection::default(),
            camera: CameraSection::default(),
            oracle: OracleSection::default(),
            encoder: EncoderSection::default(),
            train: TrainSection::default(),
            pseudo: PseudoSection::default(),
            eval: EvalSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    pub room_extent: [f64; 3],
    /// Points per square meter of primitive surface.
    pub surface_density: f64,
    pub color_jitter: f64,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    /// Random objects drawn from the pool per scene, on top of the fixtures.
    pub objects_per_scene: usize,
    pub include_floor: bool,
    pub include_walls: bool,
    pub pool: Vec<CategorySpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategorySpec {
    pub name: String,
    /// "box" or "plane"; planes are mounted on a wall with
    /// `half_extents[0]` as half-width and `half_extents[2]` as half-height.
    pub kind: String,
    pub half_extents: [f64; 3],
    pub color: [f64; 3],
}

impl Default for SceneSection {
    fn default() -> Self {
        let cat = |name: &str, kind: &str, he: [f64; 3], color: [f64; 3]| CategorySpec {
            name: name.into(),
            kind: kind.into(),
            half_extents: he,
            color,
        };
        Self {
            room_extent: [4.0, 4.0, 2.5],
            surface_density: 150.0,
            color_jitter: 0.02,
            train_scenes: 8,
            eval_scenes: 2,
            objects_per_scene: 8,
            include_floor: true,
            include_walls: true,
            // Colors spread across the RGB cube so categories stay
            // separable under per-frame color noise.
            pool: vec![
                cat("table", "box", [0.60, 0.60, 0.35], [0.95, 0.60, 0.10]),
                cat("chair", "box", [0.32, 0.32, 0.50], [0.90, 0.10, 0.10]),
                cat("sofa", "box", [0.90, 0.45, 0.40], [0.10, 0.20, 0.90]),
                cat("bed", "box", [1.00, 0.80, 0.30], [0.10, 0.80, 0.20]),
                cat("cabinet", "box", [0.45, 0.30, 0.90], [0.60, 0.10, 0.80]),
                cat("lamp", "box", [0.26, 0.26, 0.90], [0.95, 0.95, 0.20]),
                cat("door", "plane", [0.50, 0.0, 1.00], [0.10, 0.90, 0.90]),
                cat("window", "plane", [0.80, 0.0, 0.60], [0.90, 0.20, 0.90]),
            ],
        }
    }
}

pub const FLOOR_CATEGORY: &str = "floor";
pub const WALL_CATEGORY: &str = "wall";
const FLOOR_COLOR: [f64; 3] = [0.55, 0.55, 0.55];
const WALL_COLOR: [f64; 3] = [0.85, 0.82, 0.78];

impl SceneSection {
    /// Every category a generated scene can contain, fixtures first.
    pub fn all_categories(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.include_floor {
            out.push(FLOOR_CATEGORY.to_string());
        }
        if self.include_walls {
            out.push(WALL_CATEGORY.to_string());
        }
        out.extend(self.pool.iter().map(|c| c.name.clone()));
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_extent.iter().any(|e| *e <= 0.0) {
            return Err(Error::invalid_config("scene.room_extent", "must be strictly positive"));
        }
        if self.surface_density <= 0.0 {
            return Err(Error::invalid_config("scene.surface_density", "must be > 0"));
        }
        if self.color_jitter < 0.0 {
            return Err(Error::invalid_config("scene.color_jitter", "must be >= 0"));
        }
        if self.train_scenes == 0 || self.eval_scenes == 0 {
            return Err(Error::invalid_config(
                "scene.train_scenes",
                "need at least one train and one eval scene",
            ));
        }
        if self.pool.is_empty() && !self.include_floor && !self.include_walls {
            return Err(Error::invalid_config("scene.pool", "no categories to place"));
        }
        for c in &self.pool {
            if c.name.is_empty() {
                return Err(Error::invalid_config("scene.pool", "category name must be non-empty"));
            }
            if c.kind != "box" && c.kind != "plane" {
                return Err(Error::invalid_config(
                    "scene.pool",
                    format!("category `{}` has kind `{}`; expected box or plane", c.name, c.kind),
                ));
            }
            if c.half_extents.iter().all(|h| *h <= 0.0) {
                return Err(Error::invalid_config(
                    "scene.pool",
                    format!("category `{}` has no positive extent", c.name),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSection {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub frames_per_scene: usize,
    pub frame_stride: usize,
    pub point_radius_px: usize,
    /// Per-frame Gaussian color noise; models view-dependent appearance.
    pub color_noise_std: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            width: 64,
            height: 48,
            fx: 55.0,
            fy: 55.0,
            cx: 32.0,
            cy: 24.0,
            frames_per_scene: 30,
            frame_stride: 1,
            point_radius_px: 1,
            color_noise_std: 0.10,
        }
    }
}

impl CameraSection {
    pub fn intrinsics(&self) -> CameraIntrinsics<f64> {
        CameraIntrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid_config("camera.width", "raster must be non-empty"));
        }
        self.intrinsics().validate().map_err(|e| prefix_key("camera", e))?;
        if self.frames_per_scene == 0 {
            return Err(Error::invalid_config("camera.frames_per_scene", "must be >= 1"));
        }
        if self.frame_stride == 0 {
            return Err(Error::invalid_config("camera.frame_stride", "must be >= 1"));
        }
        if self.point_radius_px == 0 {
            return Err(Error::invalid_config("camera.point_radius_px", "must be >= 1"));
        }
        if self.color_noise_std < 0.0 {
            return Err(Error::invalid_config("camera.color_noise_std", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub category_dropout_prob: f64,
    pub pixel_mislabel_prob: f64,
    pub boundary_erosion_px: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            category_dropout_prob: 0.1,
            pixel_mislabel_prob: 0.05,
            boundary_erosion_px: 1,
        }
    }
}

impl OracleSection {
    pub fn noise(&self, seed: u64) -> pgov_core::oracle::NoiseConfig {
        pgov_core::oracle::NoiseConfig {
            category_dropout_prob: self.category_dropout_prob,
            pixel_mislabel_prob: self.pixel_mislabel_prob,
            boundary_erosion_px: self.boundary_erosion_px,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.noise(0).validate().map_err(|e| prefix_key("oracle", e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub hidden: Vec<usize>,
    pub dim: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self { hidden: vec![48], dim: 16 }
    }
}

impl EncoderSection {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![6];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid_config("encoder.dim", "must be >= 2"));
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::invalid_config("encoder.hidden", "layer sizes must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchModeSection {
    ById,
    ByRadius { radius_m: f64 },
}

impl MatchModeSection {
    pub fn to_mode(&self) -> MatchMode {
        match self {
            MatchModeSection::ById => MatchMode::ById,
            MatchModeSection::ByRadius { radius_m } => MatchMode::ByRadius { radius_m: *radius_m },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda_consistency: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size_stage1: usize,
    pub batch_size_stage2: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub load_pretrained: bool,
    pub match_mode: MatchModeSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            lambda_consistency: 0.2,
            learning_rate: 1e-2,
            weight_decay: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size_stage1: 4,
            batch_size_stage2: 1,
            epochs_stage1: 8,
            epochs_stage2: 36,
            load_pretrained: true,
            match_mode: MatchModeSection::ById,
        }
    }
}

impl TrainSection {
    pub fn core_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda_consistency: self.lambda_consistency,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            batch_size_stage1: self.batch_size_stage1,
            batch_size_stage2: self.batch_size_stage2,
            epochs_stage1: self.epochs_stage1,
            epochs_stage2: self.epochs_stage2,
            seed,
            load_pretrained: self.load_pretrained,
            match_mode: self.match_mode.to_mode(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.core_config(0).validate().map_err(|e| prefix_key("train", e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PseudoSection {
    pub voxel_size: f64,
    pub repetitions: usize,
    pub temperature: f64,
    pub confidence_threshold: f64,
}

impl Default for PseudoSection {
    fn default() -> Self {
        // Voxel size scaled to the default room extent.
        Self {
            voxel_size: 0.1,
            repetitions: 8,
            temperature: 0.07,
            confidence_threshold: 0.5,
        }
    }
}

impl PseudoSection {
    pub fn core_config(&self, seed: u64) -> pgov_core::pseudo::PseudoLabelConfig {
        pgov_core::pseudo::PseudoLabelConfig {
            voxel_size: self.voxel_size,
            repetitions: self.repetitions,
            temperature: self.temperature,
            confidence_threshold: self.confidence_threshold,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.core_config(0).validate().map_err(|e| prefix_key("pseudo", e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSection {
    Named(String),
    Explicit { base: Vec<usize>, novel: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Synonym table: predicted entity string -> evaluation category.
    pub aliases: BTreeMap<String, String>,
    pub split: Option<SplitSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { seeds: vec![1, 2, 3] }
    }
}

fn prefix_key(ns: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig { key, message } => Error::InvalidConfig {
            key: format!("{ns}.{key}"),
            message,
        },
        other => other,
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::InvalidConfig {
            key: "config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        let cfg: PipelineConfig = serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig {
            key: "config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.camera.validate()?;
        self.oracle.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        self.pseudo.validate()?;
        if let Some(SplitSection::Explicit { base, novel }) = &self.eval.split {
            for b in base {
                if novel.contains(b) {
                    return Err(Error::invalid_config(
                        "eval.split",
                        format!("index {b} in both base and novel"),
                    ));
                }
            }
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::invalid_config("ablation.seeds", "must list at least one seed"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Room half-extent-normalized encoder inputs, shared by every stage.
    pub fn normalizer(&self) -> pgov_core::embed::SceneNormalizer<f64> {
        let e = self.scene.room_extent;
        pgov_core::embed::SceneNormalizer::from_room_extent(Vec3::new(e[0], e[1], e[2]))
    }

    /// Scene spec for one generated scene. `scene_index` is global: train
    /// scenes first, then eval scenes. With `full_coverage` every pool
    /// category is placed at least once, so evaluation always scores the
    /// complete label set.
    pub fn scene_spec(&self, scene_index: usize, full_coverage: bool) -> SceneSpec<f64> {
        use rand::Rng;

        let s = &self.scene;
        let [ex, ey, ez] = s.room_extent;
        let mut objects = Vec::new();
        if s.include_floor {
            objects.push(ObjectSpec {
                kind: PrimitiveKind::Plane,
                center: Vec3::new(0.0, 0.0, -ez / 2.0),
                half_extents: Vec3::new(ex / 2.0, ey / 2.0, 0.0),
                category: FLOOR_CATEGORY.into(),
                color: FLOOR_COLOR,
            });
        }
        if s.include_walls {
            let walls = [
                (Vec3::new(ex / 2.0, 0.0, 0.0), Vec3::new(0.0, ey / 2.0, ez / 2.0)),
                (Vec3::new(-ex / 2.0, 0.0, 0.0), Vec3::new(0.0, ey / 2.0, ez / 2.0)),
                (Vec3::new(0.0, ey / 2.0, 0.0), Vec3::new(ex / 2.0, 0.0, ez / 2.0)),
                (Vec3::new(0.0, -ey / 2.0, 0.0), Vec3::new(ex / 2.0, 0.0, ez / 2.0)),
            ];
            for (center, half) in walls {
                objects.push(ObjectSpec {
                    kind: PrimitiveKind::Plane,
                    center,
                    half_extents: half,
                    category: WALL_CATEGORY.into(),
                    color: WALL_COLOR,
                });
            }
        }

        let mut rng =
            rand_chacha_seeded(mix_seed(self.seed, 0x5ce0_0000 + scene_index as u64));
        let picks: Vec<usize> = if full_coverage {
            let extra = s.objects_per_scene.saturating_sub(s.pool.len());
            let mut picks: Vec<usize> = (0..s.pool.len()).collect();
            picks.extend((0..extra).map(|_| rng.gen_range(0..s.pool.len())));
            picks
        } else {
            (0..s.objects_per_scene)
                .map(|_| rng.gen_range(0..s.pool.len()))
                .collect()
        };
        for pick in picks {
            if s.pool.is_empty() {
                break;
            }
            let spec = &s.pool[pick];
            let he = spec.half_extents;
            match spec.kind.as_str() {
                "box" => {
                    let margin = 0.05;
                    let span_x = (ex / 2.0 - he[0] - margin).max(0.0);
                    let span_y = (ey / 2.0 - he[1] - margin).max(0.0);
                    objects.push(ObjectSpec {
                        kind: PrimitiveKind::Box,
                        center: Vec3::new(
                            rng.gen_range(-span_x..=span_x),
                            rng.gen_range(-span_y..=span_y),
                            -ez / 2.0 + he[2],
                        ),
                        half_extents: Vec3::new(he[0], he[1], he[2]),
                        category: spec.name.clone(),
                        color: spec.color,
                    });
                }
                _ => {
                    // Wall-mounted plane: half-width he[0], half-height he[2],
                    // offset slightly into the room to stay in front of the
                    // wall surface.
                    let (half_w, half_h) = (he[0], he[2]);
                    let wall = rng.gen_range(0..4u8);
                    let inset = 0.02;
                    let z = -ez / 2.0 + half_h + rng.gen_range(0.0..=0.3) * ez.max(0.1);
                    let z = z.min(ez / 2.0 - half_h);
                    let (center, half) = match wall {
                        0 => {
                            let span = (ey / 2.0 - half_w - 0.05).max(0.0);
                            (
                                Vec3::new(ex / 2.0 - inset, rng.gen_range(-span..=span), z),
                                Vec3::new(0.0, half_w, half_h),
                            )
                        }
                        1 => {
                            let span = (ey / 2.0 - half_w - 0.05).max(0.0);
                            (
                                Vec3::new(-ex / 2.0 + inset, rng.gen_range(-span..=span), z),
                                Vec3::new(0.0, half_w, half_h),
                            )
                        }
                        2 => {
                            let span = (ex / 2.0 - half_w - 0.05).max(0.0);
                            (
                                Vec3::new(rng.gen_range(-span..=span), ey / 2.0 - inset, z),
                                Vec3::new(half_w, 0.0, half_h),
                            )
                        }
                        _ => {
                            let span = (ex / 2.0 - half_w - 0.05).max(0.0);
                            (
                                Vec3::new(rng.gen_range(-span..=span), -ey / 2.0 + inset, z),
                                Vec3::new(half_w, 0.0, half_h),
                            )
                        }
                    };
                    objects.push(ObjectSpec {
                        kind: PrimitiveKind::Plane,
                        center,
                        half_extents: half,
                        category: spec.name.clone(),
                        color: spec.color,
                    });
                }
            }
        }

        SceneSpec {
            room_extent: Vec3::new(ex, ey, ez),
            objects,
            surface_density: s.surface_density,
            color_jitter: s.color_jitter,
            seed: mix_seed(self.seed, 0x9e0e_0000 + scene_index as u64),
        }
    }
}

fn rand_chacha_seeded(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Experiment presets: named deviations from the full curriculum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    FullCurriculum,
    Stage1Only,
    NoConsistency,
    NoPretrainedWeights,
}

pub const ALL_PRESETS: [Preset; 4] = [
    Preset::FullCurriculum,
    Preset::Stage1Only,
    Preset::NoConsistency,
    Preset::NoPretrainedWeights,
];

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "full_curriculum" => Ok(Preset::FullCurriculum),
            "stage1_only" => Ok(Preset::Stage1Only),
            "no_consistency" => Ok(Preset::NoConsistency),
            "no_pretrained_weights" => Ok(Preset::NoPretrainedWeights),
            other => Err(Error::invalid_config(
                "preset",
                format!("unknown preset `{other}`; expected one of full_curriculum, stage1_only, no_consistency, no_pretrained_weights"),
            )),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::FullCurriculum => "full_curriculum",
            Preset::Stage1Only => "stage1_only",
            Preset::NoConsistency => "no_consistency",
            Preset::NoPretrainedWeights => "no_pretrained_weights",
        }
    }

    /// Config-key overrides relative to full_curriculum. `stage1_only` keeps
    /// the config identical and instead skips the stage-2 path.
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        match self {
            Preset::FullCurriculum | Preset::Stage1Only => {}
            Preset::NoConsistency => cfg.train.lambda_consistency = 0.0,
            Preset::NoPretrainedWeights => cfg.train.load_pretrained = false,
        }
    }

    pub fn runs_stage2(&self) -> bool {
        !matches!(self, Preset::Stage1Only)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = cfg.to_json();
        let parsed: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, cfg);
        assert_eq!(parsed.to_json(), json, "serialization is idempotent");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<PipelineConfig>(r#"{"sneaky": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sneaky"));
        let err =
            serde_json::from_str::<PipelineConfig>(r#"{"train": {"lr": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("lr"));
    }

    #[test]
    fn invalid_values_name_the_key() {
        let mut cfg = PipelineConfig::default();
        cfg.train.learning_rate = -1.0;
        match cfg.validate() {
            Err(Error::InvalidConfig { key, .. }) => assert_eq!(key, "train.learning_rate"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn presets_differ_in_documented_keys_only() {
        let base = PipelineConfig::default();
        for preset in ALL_PRESETS {
            let mut cfg = base.clone();
            preset.apply(&mut cfg);
            let changed: Vec<&str> = [
                (cfg.train.lambda_consistency != base.train.lambda_consistency)
                    .then_some("train.lambda_consistency"),
                (cfg.train.load_pretrained != base.train.load_pretrained)
                    .then_some("train.load_pretrained"),
            ]
            .into_iter()
            .flatten()
            .collect();
            // Everything else identical.
            let mut reverted = cfg.clone();
            reverted.train.lambda_consistency = base.train.lambda_consistency;
            reverted.train.load_pretrained = base.train.load_pretrained;
            assert_eq!(reverted, base, "{}: unexpected extra overrides", preset.name());
            match preset {
                Preset::FullCurriculum | Preset::Stage1Only => assert!(changed.is_empty()),
                Preset::NoConsistency => assert_eq!(changed, vec!["train.lambda_consistency"]),
                Preset::NoPretrainedWeights => assert_eq!(changed, vec!["train.load_pretrained"]),
            }
        }
    }

    #[test]
    fn scene_specs_are_deterministic_and_scene_dependent() {
        let cfg = PipelineConfig::default();
        let a = cfg.scene_spec(0, false);
        let b = cfg.scene_spec(0, false);
        assert_eq!(a.objects.len(), b.objects.len());
        assert_eq!(a.seed, b.seed);
        let c = cfg.scene_spec(1, false);
        assert_ne!(a.seed, c.seed);
        a.validate().unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn pool_categories_cover_about_ten() {
        let cats = SceneSection::default().all_categories();
        assert_eq!(cats.len(), 10);
        assert!(cats.contains(&"floor".to_string()));
        assert!(cats.contains(&"window".to_string()));
    }
}
