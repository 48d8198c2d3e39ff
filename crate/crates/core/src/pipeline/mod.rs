//! End-to-end pipeline: dataset assembly, training, evaluation, ablation,
//! and synthetic dataset emission.
//!
//! Every randomized stage seeds from (config seed, stage label, counter),
//! and all internal parallelism reduces deterministically, so a config +
//! seed reproduces checkpoints, reports, and logs bitwise at any worker
//! count.

mod ablate;
mod emit;
mod eval;
mod train;

pub use ablate::{ablate, rows_to_csv, rows_to_text, AblationAxis, AblationMode, AblationRow};
pub use emit::emit_synthetic_dataset;
pub use eval::{evaluate, rescore, EvalOptions, EvalOutcome, FmrCurves, PredictedPose};
pub use train::{train, Checkpoint, EpochStats, ModelPair, TrainOutcome, CHECKPOINT_FORMAT_VERSION};

use crate::augment::AugmentError;
use crate::config::{ConfigError, RunConfig};
use crate::data::{
    read_ply_model, sample_mesh_surface, ClutterSpec, DataError, PoseSpec, ShapeKind, ShapeSpec,
};
use crate::embed::{
    compute_descriptors, embed_forward, ActivationCache, Descriptors, EmbedError, EmbeddingModel,
    ModelGrads,
};
use crate::features::FeatureSet;
use crate::geometry::{cloud_diameter, GeometryError, PointCloud, RigidPose};
use crate::loss::LossError;
use crate::metrics::MetricsError;
use crate::mining::MiningError;
use crate::optim::{OptimError, OptimHyper, OptimState};
use crate::register::RegisterError;
use crate::seeding;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Register(#[from] RegisterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("training diverged at epoch {epoch}, sample {sample}: loss is not finite")]
    Diverged { epoch: usize, sample: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint parse error: {0}")]
    CheckpointParse(String),
    #[error("checkpoint holds no model for object {0}")]
    MissingModel(u32),
    #[error("checkpoint shape mismatch: {0}")]
    CheckpointMismatch(String),
}

/// One object/scene sample with ground truth and bookkeeping.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub object: PointCloud,
    pub scene: PointCloud,
    pub gt: RigidPose,
    pub diameter: f64,
    pub object_id: u32,
    pub symmetric: bool,
    pub image_id: u32,
    /// Source pixel per scene point, when the scene came from a depth image.
    pub pixels: Option<Vec<(u32, u32)>>,
}

/// A loaded dataset plus its train/holdout split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<SamplePair>,
}

impl Dataset {
    /// Procedural synthetic dataset: `synth_pairs` scenes cycling through
    /// the four object classes, everything derived from the config seed.
    pub fn synthetic(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
        let classes = ShapeKind::all();
        let object_points = (cfg.v_o as f64 * cfg.oversample).ceil() as usize;
        let scene_budget = (cfg.v_s as f64 * cfg.oversample).ceil() as usize;
        let mut pairs = Vec::with_capacity(cfg.synth_pairs);
        for i in 0..cfg.synth_pairs {
            let class = i % classes.len();
            let shape = ShapeSpec::new(
                classes[class],
                cfg.synth_object_scale_mm,
                object_points,
                seeding::derive_labeled(cfg.seed, "texture", class as u64),
            );
            let visible = ((1.0 - cfg.synth_occlusion) * object_points as f64) as usize;
            let clutter_budget = scene_budget.saturating_sub(visible).max(600);
            let distractor_count = 3;
            let distractor_points = (clutter_budget / 5).max(100);
            let clutter = ClutterSpec {
                support_extent_mm: 3.5 * cfg.synth_object_scale_mm,
                support_points: clutter_budget - distractor_count * distractor_points,
                distractor_count,
                distractor_points_each: distractor_points,
            };
            let pair = crate::data::generate_synthetic_pair(
                &shape,
                &PoseSpec::default(),
                &clutter,
                cfg.synth_occlusion,
                cfg.synth_noise_sigma_mm,
                seeding::derive_labeled(cfg.seed, "synth-pair", i as u64),
            )?;
            pairs.push(SamplePair {
                object: pair.object_cloud,
                scene: pair.scene_cloud,
                gt: pair.gt_pose,
                diameter: pair.object_diameter,
                object_id: class as u32 + 1,
                symmetric: false,
                image_id: i as u32,
                pixels: None,
            });
        }
        Ok(Dataset { pairs })
    }

    /// Loads a BOP-layout dataset: `models/obj_XXXXXX.ply` plus scene
    /// directories with camera/gt JSON and depth/rgb images.
    pub fn from_bop(root: &Path, cfg: &RunConfig) -> Result<Dataset, PipelineError> {
        let models_dir = root.join("models");
        let mut meshes: BTreeMap<u32, crate::data::TexturedMesh> = BTreeMap::new();
        for entry in std::fs::read_dir(&models_dir)? {
            let path = entry?.path();
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            if let Some(id_str) = name.strip_prefix("obj_") {
                if let Ok(id) = id_str.parse::<u32>() {
                    meshes.insert(id, read_ply_model(&path)?);
                }
            }
        }
        // optional models_info.json: {"<id>": {"diameter": mm, ...}}
        let mut diameters: BTreeMap<u32, f64> = BTreeMap::new();
        let mut symmetric: BTreeMap<u32, bool> = BTreeMap::new();
        let info_path = models_dir.join("models_info.json");
        if info_path.exists() {
            let text = std::fs::read_to_string(&info_path)?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| DataError::Json {
                    path: info_path.clone(),
                    message: e.to_string(),
                })?;
            if let Some(map) = value.as_object() {
                for (k, v) in map {
                    if let Ok(id) = k.parse::<u32>() {
                        if let Some(d) = v.get("diameter").and_then(|d| d.as_f64()) {
                            diameters.insert(id, d);
                        }
                        let sym = v.get("symmetries_discrete").is_some()
                            || v.get("symmetries_continuous").is_some();
                        symmetric.insert(id, sym);
                    }
                }
            }
        }

        let object_points = (cfg.v_o as f64 * cfg.oversample).ceil() as usize;
        let mut object_clouds: BTreeMap<u32, (PointCloud, f64)> = BTreeMap::new();
        for (&id, mesh) in &meshes {
            let cloud = sample_mesh_surface(
                mesh,
                object_points,
                seeding::derive_labeled(cfg.seed, "bop-model", id as u64),
            )?;
            let diameter = match diameters.get(&id) {
                Some(&d) => d,
                None => cloud_diameter(&cloud)?,
            };
            object_clouds.insert(id, (cloud, diameter));
        }

        let scenes_root = root.join("scenes");
        let scene_dirs: Vec<std::path::PathBuf> = if scenes_root.exists() {
            let mut dirs: Vec<_> = std::fs::read_dir(&scenes_root)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            dirs
        } else {
            return Err(PipelineError::Data(DataError::FileOpen {
                path: scenes_root,
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no scenes directory"),
            }));
        };

        let scene_cap = (cfg.v_s as f64 * cfg.oversample).ceil() as usize;
        let mut pairs = Vec::new();
        for scene_dir in scene_dirs {
            let gt_path = scene_dir.join("scene_gt.json");
            let text = std::fs::read_to_string(&gt_path).map_err(|e| DataError::FileOpen {
                path: gt_path.clone(),
                source: e,
            })?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| DataError::Json {
                    path: gt_path.clone(),
                    message: e.to_string(),
                })?;
            let mut image_ids: Vec<u32> = value
                .as_object()
                .map(|m| m.keys().filter_map(|k| k.parse().ok()).collect())
                .unwrap_or_default();
            image_ids.sort_unstable();
            for image_id in image_ids {
                let scene =
                    crate::data::read_bop_scene(&scene_dir, image_id, cfg.hole_fill_iterations)?;
                // cap very dense scenes up front, keeping the pixel map aligned
                let (scene_cloud, pixels) = if scene.cloud.len() > scene_cap {
                    let mut rng = seeding::rng_labeled(cfg.seed, "bop-scene-cap", image_id as u64);
                    let mut ids: Vec<usize> =
                        rand::seq::index::sample(&mut rng, scene.cloud.len(), scene_cap).into_vec();
                    ids.sort_unstable();
                    let cloud = scene.cloud.select(&ids);
                    let pixels = ids.iter().map(|&i| scene.pixels[i]).collect();
                    (cloud, pixels)
                } else {
                    (scene.cloud.clone(), scene.pixels.clone())
                };
                for (obj_id, pose) in &scene.poses {
                    let (object, diameter) = object_clouds
                        .get(obj_id)
                        .ok_or(PipelineError::MissingModel(*obj_id))?
                        .clone();
                    pairs.push(SamplePair {
                        object,
                        scene: scene_cloud.clone(),
                        gt: *pose,
                        diameter,
                        object_id: *obj_id,
                        symmetric: symmetric.get(obj_id).copied().unwrap_or(false),
                        image_id,
                        pixels: Some(pixels.clone()),
                    });
                }
            }
        }
        if pairs.is_empty() {
            return Err(PipelineError::EmptyDataset);
        }
        Ok(Dataset { pairs })
    }

    /// Deterministic split: every `holdout_every`-th pair is held out.
    pub fn split(&self, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut holdout = Vec::new();
        for i in 0..self.pairs.len() {
            if (i + 1) % holdout_every == 0 {
                holdout.push(i);
            } else {
                train.push(i);
            }
        }
        (train, holdout)
    }
}

/// Runs `f` inside a dedicated rayon pool of `jobs` workers (or the global
/// pool when `None`). Results are identical either way; the pool only
/// changes how much runs concurrently.
pub fn run_with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match jobs {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("thread pool")
            .install(f),
    }
}

/// Object/scene model bank handling the shared-weights ablation.
pub(crate) enum ModelBank {
    Shared {
        model: EmbeddingModel,
        optim: OptimState,
    },
    Independent {
        object: EmbeddingModel,
        scene: EmbeddingModel,
        optim_object: OptimState,
        optim_scene: OptimState,
    },
}

impl ModelBank {
    pub fn new(cfg: &RunConfig, seed_offset: u64) -> ModelBank {
        let input_dim = crate::embed::DESCRIPTOR_DIM;
        let rule = cfg.optimizer;
        let hyper: OptimHyper = cfg.optim_hyper();
        let make_optim = |model: &EmbeddingModel| {
            OptimState::new(rule, hyper, model.block_names(), &model.block_sizes())
        };
        if cfg.shared_weights {
            let model = EmbeddingModel::new(
                input_dim,
                &cfg.hidden_dims,
                cfg.feature_dim,
                seeding::derive_labeled(cfg.seed, "model-shared", seed_offset),
            );
            let optim = make_optim(&model);
            ModelBank::Shared { model, optim }
        } else {
            let object = EmbeddingModel::new(
                input_dim,
                &cfg.hidden_dims,
                cfg.feature_dim,
                seeding::derive_labeled(cfg.seed, "model-object", seed_offset),
            );
            let scene = EmbeddingModel::new(
                input_dim,
                &cfg.hidden_dims,
                cfg.feature_dim,
                seeding::derive_labeled(cfg.seed, "model-scene", seed_offset),
            );
            let optim_object = make_optim(&object);
            let optim_scene = make_optim(&scene);
            ModelBank::Independent {
                object,
                scene,
                optim_object,
                optim_scene,
            }
        }
    }

    pub fn from_models(cfg: &RunConfig, object: EmbeddingModel, scene: EmbeddingModel) -> ModelBank {
        let hyper = cfg.optim_hyper();
        if cfg.shared_weights {
            let optim = OptimState::new(
                cfg.optimizer,
                hyper,
                object.block_names(),
                &object.block_sizes(),
            );
            ModelBank::Shared {
                model: object,
                optim,
            }
        } else {
            let optim_object = OptimState::new(
                cfg.optimizer,
                hyper,
                object.block_names(),
                &object.block_sizes(),
            );
            let optim_scene = OptimState::new(
                cfg.optimizer,
                hyper,
                scene.block_names(),
                &scene.block_sizes(),
            );
            ModelBank::Independent {
                object,
                scene,
                optim_object,
                optim_scene,
            }
        }
    }

    pub fn object_model(&self) -> &EmbeddingModel {
        match self {
            ModelBank::Shared { model, .. } => model,
            ModelBank::Independent { object, .. } => object,
        }
    }

    pub fn scene_model(&self) -> &EmbeddingModel {
        match self {
            ModelBank::Shared { model, .. } => model,
            ModelBank::Independent { scene, .. } => scene,
        }
    }

    /// One optimizer step from the two per-side gradients.
    pub fn step(
        &mut self,
        grads_object: &ModelGrads,
        grads_scene: &ModelGrads,
        lr: f64,
    ) -> Result<(), OptimError> {
        match self {
            ModelBank::Shared { model, optim } => {
                let mut summed = grads_object.clone();
                summed.add(grads_scene);
                model.apply_step(optim, &summed, lr)
            }
            ModelBank::Independent {
                object,
                scene,
                optim_object,
                optim_scene,
            } => {
                object.apply_step(optim_object, grads_object, lr)?;
                scene.apply_step(optim_scene, grads_scene, lr)
            }
        }
    }
}

/// Descriptors with the RGB channels zeroed when the config disables them.
pub(crate) fn descriptors_for(
    cloud: &PointCloud,
    diameter: f64,
    cfg: &RunConfig,
) -> Result<Descriptors, EmbedError> {
    let radii = (
        cfg.descriptor_r1_scale * diameter,
        cfg.descriptor_r2_scale * diameter,
    );
    let mut desc = compute_descriptors(cloud, radii)?;
    if !cfg.use_rgb {
        // zero the point color and both mean-color blocks
        for r in 0..desc.values.rows() {
            let row = desc.values.row_mut(r);
            row[0..3].fill(0.0);
            row[14..20].fill(0.0);
        }
    }
    Ok(desc)
}

pub(crate) struct EmbeddedPair {
    pub object_cloud: PointCloud,
    pub scene_cloud: PointCloud,
    pub f_obj: FeatureSet,
    pub f_scn: FeatureSet,
    pub cache_obj: ActivationCache,
    pub cache_scn: ActivationCache,
}

/// Quantize + descriptors + forward for an already augmented pair.
pub(crate) fn embed_pair(
    bank: &ModelBank,
    object: &PointCloud,
    scene: &PointCloud,
    diameter: f64,
    cfg: &RunConfig,
) -> Result<EmbeddedPair, PipelineError> {
    let q_obj = crate::voxel::quantize(
        object,
        cfg.q_mm,
        crate::voxel::ReductionMode::Barycenter,
        0,
    )
    .map_err(|e| {
        PipelineError::Config(ConfigError::Invalid(format!("quantization failed: {e}")))
    })?;
    let q_scn = crate::voxel::quantize(scene, cfg.q_mm, crate::voxel::ReductionMode::Barycenter, 0)
        .map_err(|e| {
            PipelineError::Config(ConfigError::Invalid(format!("quantization failed: {e}")))
        })?;
    let d_obj = descriptors_for(&q_obj.representatives, diameter, cfg)?;
    let d_scn = descriptors_for(&q_scn.representatives, diameter, cfg)?;
    let (f_obj, cache_obj) = embed_forward(bank.object_model(), &d_obj.values)?;
    let (f_scn, cache_scn) = embed_forward(bank.scene_model(), &d_scn.values)?;
    Ok(EmbeddedPair {
        object_cloud: q_obj.representatives,
        scene_cloud: q_scn.representatives,
        f_obj,
        f_scn,
        cache_obj,
        cache_scn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::desk();
        cfg.v_o = 400;
        cfg.v_s = 1200;
        cfg.synth_pairs = 6;
        cfg.synth_object_scale_mm = 100.0;
        cfg
    }

    #[test]
    fn synthetic_dataset_is_deterministic() {
        let cfg = tiny_cfg();
        let a = Dataset::synthetic(&cfg).unwrap();
        let b = Dataset::synthetic(&cfg).unwrap();
        assert_eq!(a.pairs.len(), 6);
        for (x, y) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(x.object.positions(), y.object.positions());
            assert_eq!(x.scene.positions(), y.scene.positions());
        }
        // classes cycle
        assert_eq!(a.pairs[0].object_id, 1);
        assert_eq!(a.pairs[4].object_id, 1);
        assert_eq!(a.pairs[5].object_id, 2);
    }

    #[test]
    fn split_holds_out_every_kth() {
        let cfg = tiny_cfg();
        let ds = Dataset::synthetic(&cfg).unwrap();
        let (train, holdout) = ds.split(3);
        assert_eq!(holdout, vec![2, 5]);
        assert_eq!(train, vec![0, 1, 3, 4]);
    }

    #[test]
    fn rgb_toggle_zeroes_color_columns() {
        let cfg = tiny_cfg();
        let ds = Dataset::synthetic(&cfg).unwrap();
        let pair = &ds.pairs[0];
        let mut cfg_off = cfg.clone();
        cfg_off.use_rgb = false;
        let on = descriptors_for(&pair.object, pair.diameter, &cfg).unwrap();
        let off = descriptors_for(&pair.object, pair.diameter, &cfg_off).unwrap();
        let mut any_color = false;
        for r in 0..on.values.rows() {
            for c in (0..3).chain(14..20) {
                if on.values.get(r, c) != 0.0 {
                    any_color = true;
                }
                assert_eq!(off.values.get(r, c), 0.0);
            }
            for c in 3..14 {
                assert_eq!(on.values.get(r, c), off.values.get(r, c));
            }
        }
        assert!(any_color);
    }

    #[test]
    fn jobs_pool_does_not_change_results() {
        let cfg = tiny_cfg();
        let ds = Dataset::synthetic(&cfg).unwrap();
        let pair = &ds.pairs[0];
        let compute = || {
            let bank = ModelBank::new(&cfg, 0);
            let emb = embed_pair(&bank, &pair.object, &pair.scene, pair.diameter, &cfg).unwrap();
            emb.f_obj.data().to_vec()
        };
        let one = run_with_jobs(Some(1), compute);
        let four = run_with_jobs(Some(4), compute);
        assert_eq!(one, four);
    }
}
