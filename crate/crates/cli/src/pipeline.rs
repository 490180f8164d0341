//! Stage runners. Stages communicate only through documented files under the
//! run directory and are restartable: re-running a stage with unchanged
//! inputs rewrites byte-identical outputs.
//!
//! Layout of a run directory:
//!   config.json, manifest.json
//!   scenes/{train,eval}_NNN/scene.pgov + trajectory.json        (synth)
//!   frames/{train,eval}_NNN/frame_NNNNNN.{depth,color,srcid,meta.json} (render)
//!   frames/train_NNN/frame_NNNNNN.{entmask,vocab.json}          (oracle)
//!   checkpoints/stage1.ckpt, losses_stage1.csv                  (pretrain)
//!   pseudo/scene_NNN/{pseudo_labels.bin,scene_vocab.json}       (pseudolabel)
//!   checkpoints/stage2.ckpt, losses_stage2.csv                  (finetune)
//!   eval_report.csv, confusion.csv                              (eval)

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pgov_core::embed::{embed_entities, EncoderParams, TextEmbeddingTable};
use pgov_core::error::{Error, Result};
use pgov_core::geometry::{
    frame_to_partial_cloud, jitter_frame_colors, match_points, render_frame, Frame, MatchMode,
    PartialCloud, UNLABELED,
};
use pgov_core::io;
use pgov_core::linalg::Matrix;
use pgov_core::metrics::{
    build_confusion, compute_metrics, map_entities, remap_vocab, segment_scene, split_metrics,
    ConfusionMatrix,
};
use pgov_core::oracle::PixelEntityMap;
use pgov_core::pseudo::{aggregate_vocabulary, generate_pseudo_labels, SceneVocabulary};
use pgov_core::scalar::mix_seed;
use pgov_core::scene::{generate_scene, generate_trajectory, split_base_novel, GlobalScene, SplitSpec};
use pgov_core::train::{
    cosine_similarity, finetune_stage, pretrain_stage, FinetuneItem, TrainFrame,
};
use pgov_core::Scalar;

use crate::config::{PipelineConfig, Preset, SplitSection};

// Seed stream tags; one per consumer so streams never collide.
const TAG_TRAJECTORY: u64 = 0x11 << 56;
const TAG_COLOR_NOISE: u64 = 0x22 << 56;
const TAG_ORACLE: u64 = 0x33 << 56;
const TAG_EMBED: u64 = 0x44 << 56;
const TAG_INIT: u64 = 0x55 << 56;
const TAG_STAGE1: u64 = 0x66 << 56;
const TAG_PSEUDO: u64 = 0x77 << 56;
const TAG_STAGE2: u64 = 0x88 << 56;
const TAG_FRESH_INIT: u64 = 0x99 << 56;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn prefix(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

pub struct Run<'a> {
    pub cfg: &'a PipelineConfig,
    pub out: PathBuf,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a PipelineConfig, out: &Path) -> Self {
        Self { cfg, out: out.to_path_buf() }
    }

    fn scene_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.cfg.scene.train_scenes,
            Split::Eval => self.cfg.scene.eval_scenes,
        }
    }

    /// Global scene index: train scenes first, then eval scenes.
    fn global_index(&self, split: Split, idx: usize) -> usize {
        match split {
            Split::Train => idx,
            Split::Eval => self.cfg.scene.train_scenes + idx,
        }
    }

    pub fn scene_dir(&self, split: Split, idx: usize) -> PathBuf {
        self.out.join("scenes").join(format!("{}_{idx:03}", split.prefix()))
    }

    pub fn frames_dir(&self, split: Split, idx: usize) -> PathBuf {
        self.out.join("frames").join(format!("{}_{idx:03}", split.prefix()))
    }

    pub fn pseudo_dir(&self, idx: usize) -> PathBuf {
        self.out.join("pseudo").join(format!("scene_{idx:03}"))
    }

    pub fn checkpoint_path(&self, stage: u8) -> PathBuf {
        self.out.join("checkpoints").join(format!("stage{stage}.ckpt"))
    }

    fn load_scene(&self, split: Split, idx: usize) -> Result<GlobalScene<Scalar>> {
        io::read_points(&io::scene_path(&self.scene_dir(split, idx)))?.into_scene()
    }

    fn load_frame(&self, split: Split, scene_idx: usize, frame_idx: usize) -> Result<Frame<Scalar>> {
        io::read_frame(&self.frames_dir(split, scene_idx), frame_idx)
    }

    // -----------------------------------------------------------------
    // Stages

    pub fn synth(&self) -> Result<()> {
        self.write_config()?;
        for split in [Split::Train, Split::Eval] {
            for idx in 0..self.scene_count(split) {
                let g = self.global_index(split, idx);
                let spec = self.cfg.scene_spec(g, split == Split::Eval);
                let scene = generate_scene(&spec)?;
                let mut traj = generate_trajectory(
                    &scene,
                    self.cfg.camera.frames_per_scene,
                    mix_seed(self.cfg.seed, TAG_TRAJECTORY | g as u64),
                )?;
                traj.frame_stride = self.cfg.camera.frame_stride;
                let dir = self.scene_dir(split, idx);
                io::write_points(&io::scene_path(&dir), &scene)?;
                io::write_trajectory(&io::trajectory_path(&dir), &traj)?;
            }
        }
        self.mark_stage("synth")
    }

    pub fn render(&self) -> Result<()> {
        let intrinsics = self.cfg.camera.intrinsics();
        for split in [Split::Train, Split::Eval] {
            for idx in 0..self.scene_count(split) {
                let g = self.global_index(split, idx);
                let scene = self.load_scene(split, idx)?;
                let traj = io::read_trajectory::<Scalar>(&io::trajectory_path(&self.scene_dir(split, idx)))?;
                let dir = self.frames_dir(split, idx);
                for (fi, pose) in traj.poses.iter().enumerate() {
                    let mut frame =
                        render_frame(&scene, &intrinsics, pose, self.cfg.camera.point_radius_px, fi);
                    jitter_frame_colors(
                        &mut frame,
                        self.cfg.camera.color_noise_std,
                        mix_seed(self.cfg.seed, TAG_COLOR_NOISE | g as u64),
                    );
                    io::write_frame(&dir, &frame)?;
                }
            }
        }
        self.mark_stage("render")
    }

    pub fn oracle(&self) -> Result<()> {
        for idx in 0..self.cfg.scene.train_scenes {
            let scene = self.load_scene(Split::Train, idx)?;
            let dir = self.frames_dir(Split::Train, idx);
            let noise = self
                .cfg
                .oracle
                .noise(mix_seed(self.cfg.seed, TAG_ORACLE | idx as u64));
            for fi in 0..self.cfg.camera.frames_per_scene {
                let frame = self.load_frame(Split::Train, idx, fi)?;
                let map = pgov_core::oracle::oracle_pixel_entities(&frame, &scene, &noise)?;
                io::write_entity_map(&dir, fi, &map)?;
            }
        }
        self.mark_stage("oracle")
    }

    fn load_train_frames(&self) -> Result<Vec<TrainFrame<Scalar>>> {
        let mut frames = Vec::new();
        for idx in 0..self.cfg.scene.train_scenes {
            let dir = self.frames_dir(Split::Train, idx);
            for fi in 0..self.cfg.camera.frames_per_scene {
                let frame = self.load_frame(Split::Train, idx, fi)?;
                let map = io::read_entity_map(
                    &dir,
                    fi,
                    frame.intrinsics.width,
                    frame.intrinsics.height,
                )?;
                let cloud = frame_to_partial_cloud(&frame, &map)?;
                frames.push(TrainFrame {
                    cloud,
                    vocab: map.vocabulary,
                    scene_id: idx,
                    order: fi,
                });
            }
        }
        Ok(frames)
    }

    /// Entity union over all train frames, ascending (scene, frame).
    fn training_vocabulary(&self) -> Result<SceneVocabulary> {
        let mut per_frame = Vec::new();
        for idx in 0..self.cfg.scene.train_scenes {
            let dir = self.frames_dir(Split::Train, idx);
            for fi in 0..self.cfg.camera.frames_per_scene {
                per_frame.push(io::read_string_array(
                    &dir.join(format!("{}.vocab.json", io::frame_basename(fi))),
                )?);
            }
        }
        Ok(aggregate_vocabulary(&per_frame))
    }

    fn embedding_table(&self, entities: &[String]) -> TextEmbeddingTable<Scalar> {
        embed_entities(entities, self.cfg.encoder.dim, mix_seed(self.cfg.seed, TAG_EMBED))
    }

    pub fn pretrain(&self) -> Result<()> {
        let frames = self.load_train_frames()?;
        let vocab = self.training_vocabulary()?;
        if vocab.is_empty() {
            return Err(Error::NoLabels);
        }
        let table = self.embedding_table(&vocab.entities);
        let params = EncoderParams::init(
            &self.cfg.encoder.layer_sizes(),
            mix_seed(self.cfg.seed, TAG_INIT),
        );
        let cfg = self
            .cfg
            .train
            .core_config(mix_seed(self.cfg.seed, TAG_STAGE1));
        let norm = self.cfg.normalizer();
        let (params, log) = pretrain_stage(&frames, &table, params, &cfg, &norm)?;
        io::write_checkpoint(&self.checkpoint_path(1), &params, log.len() as u64)?;
        io::write_loss_csv(&self.out.join("losses_stage1.csv"), &log)?;
        self.mark_stage("pretrain")
    }

    pub fn pseudolabel(&self) -> Result<()> {
        let (params, _) = io::read_checkpoint::<Scalar>(&self.checkpoint_path(1))?;
        let norm = self.cfg.normalizer();
        for idx in 0..self.cfg.scene.train_scenes {
            let scene = self.load_scene(Split::Train, idx)?;
            let dir = self.frames_dir(Split::Train, idx);
            let mut per_frame = Vec::new();
            for fi in 0..self.cfg.camera.frames_per_scene {
                per_frame.push(io::read_string_array(
                    &dir.join(format!("{}.vocab.json", io::frame_basename(fi))),
                )?);
            }
            let vocab = aggregate_vocabulary(&per_frame);
            if vocab.is_empty() {
                return Err(Error::EmptyVocabulary);
            }
            let table = self.embedding_table(&vocab.entities);
            let cfg = self
                .cfg
                .pseudo
                .core_config(mix_seed(self.cfg.seed, TAG_PSEUDO | idx as u64));
            let set = generate_pseudo_labels(&scene, &params, &vocab, &table, &cfg, &norm)?;
            let pdir = self.pseudo_dir(idx);
            io::write_pseudo_labels(&pdir.join("pseudo_labels.bin"), &set, vocab.len())?;
            io::write_string_array(&pdir.join("scene_vocab.json"), &vocab.entities)?;
        }
        self.mark_stage("pseudolabel")
    }

    pub fn finetune(&self) -> Result<()> {
        let norm = self.cfg.normalizer();
        let mut scenes = Vec::new();
        let mut pseudos = Vec::new();
        let mut vocabs = Vec::new();
        for idx in 0..self.cfg.scene.train_scenes {
            scenes.push(self.load_scene(Split::Train, idx)?);
            let pdir = self.pseudo_dir(idx);
            let file = io::read_pseudo_labels(&pdir.join("pseudo_labels.bin"))?;
            vocabs.push(io::read_string_array(&pdir.join("scene_vocab.json"))?);
            pseudos.push(file);
        }
        let union: Vec<String> = {
            let mut seen = Vec::new();
            for v in &vocabs {
                for e in v {
                    if !seen.contains(e) {
                        seen.push(e.clone());
                    }
                }
            }
            seen
        };
        let table = self.embedding_table(&union);

        let sets: Vec<pgov_core::pseudo::PseudoLabelSet<Scalar>> = pseudos
            .iter()
            .map(|f| pgov_core::pseudo::PseudoLabelSet {
                probabilities: Matrix::zeros(0, 0),
                entity: f.entity.clone(),
                confidence: f.confidence.iter().map(|c| *c as Scalar).collect(),
                accepted: f.accepted.clone(),
                config: f.config,
            })
            .collect();
        let items: Vec<FinetuneItem<'_, Scalar>> = scenes
            .iter()
            .zip(&sets)
            .zip(&vocabs)
            .map(|((scene, pseudo), entities)| FinetuneItem {
                scene,
                pseudo,
                entities,
            })
            .collect();

        let params_init = if self.cfg.train.load_pretrained {
            io::read_checkpoint::<Scalar>(&self.checkpoint_path(1))?.0
        } else {
            EncoderParams::init(
                &self.cfg.encoder.layer_sizes(),
                mix_seed(self.cfg.seed, TAG_FRESH_INIT),
            )
        };
        let cfg = self
            .cfg
            .train
            .core_config(mix_seed(self.cfg.seed, TAG_STAGE2));
        let (params, log) = finetune_stage(&items, &table, params_init, &cfg, &norm)?;
        io::write_checkpoint(&self.checkpoint_path(2), &params, log.len() as u64)?;
        io::write_loss_csv(&self.out.join("losses_stage2.csv"), &log)?;
        self.mark_stage("finetune")
    }

    /// Mean feature cosine over by-id matched points of consecutive held-out
    /// frames; the quantity the consistency term optimizes.
    fn heldout_pair_cosine(&self, params: &EncoderParams<Scalar>) -> Result<f64> {
        let norm = self.cfg.normalizer();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for idx in 0..self.cfg.scene.eval_scenes {
            let mut prev: Option<PartialCloud<Scalar>> = None;
            for fi in 0..self.cfg.camera.frames_per_scene {
                let frame = self.load_frame(Split::Eval, idx, fi)?;
                let dummy = PixelEntityMap {
                    width: frame.intrinsics.width,
                    height: frame.intrinsics.height,
                    ids: vec![UNLABELED; frame.intrinsics.pixel_count()],
                    vocabulary: Vec::new(),
                };
                let cloud = frame_to_partial_cloud(&frame, &dummy)?;
                if let Some(a) = prev.take() {
                    let matches = match_points(&a, &cloud, MatchMode::ById)?;
                    if !matches.is_empty() {
                        let fa = params.encode(&norm.inputs(
                            a.points.iter().map(|p| (p.position, p.color)),
                        ))?;
                        let fb = params.encode(&norm.inputs(
                            cloud.points.iter().map(|p| (p.position, p.color)),
                        ))?;
                        for &(i, j) in &matches.pairs {
                            total += cosine_similarity(fa.row(i), fb.row(j))?;
                            pairs += 1;
                        }
                    }
                }
                prev = Some(cloud);
            }
        }
        Ok(if pairs == 0 { 0.0 } else { total / pairs as f64 })
    }

    pub fn eval(&self) -> Result<()> {
        let ckpt = if self.checkpoint_path(2).exists() {
            self.checkpoint_path(2)
        } else {
            self.checkpoint_path(1)
        };
        let (params, _) = io::read_checkpoint::<Scalar>(&ckpt)?;
        let vocab = self.training_vocabulary()?;
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let table = self.embedding_table(&vocab.entities);
        let norm = self.cfg.normalizer();
        let eval_categories = self.cfg.scene.all_categories();
        let aliases: std::collections::HashMap<String, String> = self
            .cfg
            .eval
            .aliases
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();

        let mut confusion = ConfusionMatrix::zeros(eval_categories.len());
        for idx in 0..self.cfg.scene.eval_scenes {
            let scene = self.load_scene(Split::Eval, idx)?;
            let pred = segment_scene(&params, &scene, &vocab.entities, &table, &norm)?;
            let pred = remap_vocab(&pred, &vocab.entities, &eval_categories, &aliases)?;
            let gt_map = map_entities(&scene.categories, &eval_categories, &aliases);
            let gt: Vec<i64> = scene
                .points
                .iter()
                .map(|p| gt_map[p.gt_label].map_or(-1, |v| v as i64))
                .collect();
            confusion.merge(&build_confusion(&pred, &gt, eval_categories.len(), -1)?);
        }
        let mut report = compute_metrics(&confusion)?;
        if let Some(split) = &self.cfg.eval.split {
            let spec = match split {
                SplitSection::Named(name) => SplitSpec::Named(name.clone()),
                SplitSection::Explicit { base, novel } => SplitSpec::Explicit {
                    base: base.clone(),
                    novel: novel.clone(),
                },
            };
            let (base, novel) = split_base_novel(&eval_categories, &spec)?;
            report.splits = Some(split_metrics(&report, &base, &novel));
        }
        // The matched-pair cosine measures what the stage-1 consistency term
        // optimizes, so it is always computed on the stage-1 model.
        let (stage1_params, _) = io::read_checkpoint::<Scalar>(&self.checkpoint_path(1))?;
        let paircos = self.heldout_pair_cosine(&stage1_params)?;
        io::write_eval_report_csv(
            &self.out.join("eval_report.csv"),
            &report,
            &eval_categories,
            &[("heldout_paircos".into(), String::new(), paircos)],
        )?;
        io::write_confusion_csv(&self.out.join("confusion.csv"), &confusion, &eval_categories)?;
        self.mark_stage("eval")
    }

    /// Run the preset's stage sequence end to end.
    pub fn experiment(&self, preset: Preset) -> Result<()> {
        self.synth()?;
        self.render()?;
        self.oracle()?;
        self.pretrain()?;
        if preset.runs_stage2() {
            self.pseudolabel()?;
            self.finetune()?;
        }
        self.eval()?;
        self.write_manifest_preset(preset)
    }

    // -----------------------------------------------------------------
    // Manifest

    fn write_config(&self) -> Result<()> {
        io::atomic_write(&self.out.join("config.json"), self.cfg.to_json().as_bytes())
    }

    fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.cfg.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn mark_stage(&self, stage: &str) -> Result<()> {
        let mut manifest = self.read_manifest().unwrap_or_else(|_| Manifest {
            config_sha256: self.config_hash(),
            seed: self.cfg.seed,
            preset: None,
            stages: BTreeMap::new(),
        });
        manifest.config_sha256 = self.config_hash();
        manifest.seed = self.cfg.seed;
        manifest.stages.insert(stage.to_string(), true);
        io::atomic_write(
            &self.out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    fn write_manifest_preset(&self, preset: Preset) -> Result<()> {
        let mut manifest = self.read_manifest()?;
        manifest.preset = Some(preset.name().to_string());
        io::atomic_write(
            &self.out.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )
    }

    pub fn read_manifest(&self) -> Result<Manifest> {
        let path = self.out.join("manifest.json");
        let bytes = std::fs::read(&path).map_err(|_| Error::MissingArtifacts(path.clone()))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.column() as u64, e.to_string()))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub preset: Option<String>,
    pub stages: BTreeMap<String, bool>,
}
