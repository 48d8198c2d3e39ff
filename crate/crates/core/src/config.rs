//! Run configuration: every pipeline hyperparameter in one validated,
//! hashable bundle.
//!
//! Configs load from TOML with unknown keys rejected, so ablation variants
//! stay exactly diffable. The config hash (sha256 of the canonical JSON
//! serialization) is embedded in checkpoints and reports.

use crate::augment::JitterRanges;
use crate::loss::{LossConfig, NegativeNormalization};
use crate::optim::{OptimHyper, Schedule, UpdateRule};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Exponential,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Bop,
}

/// Full pipeline configuration with benchmark-scale defaults.
///
/// `desk()` shrinks the scene budget and epoch count for the synthetic
/// suite; the defaults here are the documented large-scale settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Points sampled on the object model surface.
    pub v_o: usize,
    /// Points kept in the scene cloud.
    pub v_s: usize,
    /// Oversampling factor applied when generating data, so per-epoch
    /// resampling has spare points to draw from.
    pub oversample: f64,
    /// Voxel size in mm.
    pub q_mm: f64,
    /// Output feature dimension.
    pub feature_dim: usize,
    /// Hidden layer widths of the embedding model.
    pub hidden_dims: Vec<usize>,
    /// Positive-mining distance threshold in mm.
    pub tau_p_mm: f64,
    /// Cap on mined positive pairs.
    pub max_pairs: usize,
    /// Scene-side negative pool cap.
    pub scene_sample_cap: usize,
    pub mu_p: f64,
    pub mu_n: f64,
    pub lambda_p: f64,
    pub lambda_no: f64,
    pub lambda_ns: f64,
    /// Safety radius scale: tau_no = t_scale * object diameter.
    pub t_scale: f64,
    /// Optional scene-side override of `t_scale` (experimentation only).
    pub t_scale_scene: Option<f64>,
    pub negative_normalization: NegativeNormalization,
    pub optimizer: UpdateRule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleKind,
    pub lr_start: f64,
    pub lr_end: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Use RGB channels in descriptors; off zeroes them.
    pub use_rgb: bool,
    pub use_color_jitter: bool,
    pub use_random_erase: bool,
    /// Share one model between object and scene (ablation baseline).
    pub shared_weights: bool,
    /// Train one model pair per object instead of a single pair for all.
    pub per_object_models: bool,
    /// Random-erase radius as a fraction of the object diameter.
    pub erase_rho_scale: f64,
    pub jitter: JitterRanges,
    /// Descriptor radii as fractions of the object diameter.
    pub descriptor_r1_scale: f64,
    pub descriptor_r2_scale: f64,
    /// Mutual nearest-neighbour check when matching features.
    pub match_mutual: bool,
    /// RANSAC inlier threshold in voxels (mm = value * q_mm).
    pub ransac_inlier_voxels: f64,
    pub ransac_max_iterations: usize,
    pub ransac_confidence: f64,
    /// FMR thresholds.
    pub fmr_tau1_voxels: f64,
    pub fmr_tau2_ratio: f64,
    /// Every k-th sample is held out for evaluation during training.
    pub holdout_every: usize,
    /// Data source selector.
    pub data_source: DataSource,
    pub synth_pairs: usize,
    pub synth_object_scale_mm: f64,
    pub synth_occlusion: f64,
    pub synth_noise_sigma_mm: f64,
    /// Depth hole-filling iterations for BOP ingestion.
    pub hole_fill_iterations: usize,
    /// Detection crop margin in pixels.
    pub detection_margin_px: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            v_o: 4000,
            v_s: 50_000,
            oversample: 1.4,
            q_mm: 2.0,
            feature_dim: 32,
            hidden_dims: vec![64, 64],
            tau_p_mm: 4.0,
            max_pairs: 1000,
            scene_sample_cap: 10_000,
            mu_p: 0.1,
            mu_n: 10.0,
            lambda_p: 1.0,
            lambda_no: 0.6,
            lambda_ns: 0.4,
            t_scale: 0.1,
            t_scale_scene: None,
            negative_normalization: NegativeNormalization::AnchorCount,
            optimizer: UpdateRule::AdamW,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-2,
            schedule: ScheduleKind::Cosine,
            lr_start: 1e-3,
            lr_end: 1e-4,
            gamma: 0.99,
            epochs: 12,
            seed: 0,
            use_rgb: true,
            use_color_jitter: true,
            use_random_erase: true,
            shared_weights: false,
            per_object_models: false,
            erase_rho_scale: 0.1,
            jitter: JitterRanges::default(),
            descriptor_r1_scale: 0.05,
            descriptor_r2_scale: 0.15,
            match_mutual: false,
            ransac_inlier_voxels: 3.0,
            ransac_max_iterations: 10_000,
            ransac_confidence: 0.999,
            fmr_tau1_voxels: 5.0,
            fmr_tau2_ratio: 0.05,
            holdout_every: 5,
            data_source: DataSource::Synthetic,
            synth_pairs: 200,
            synth_object_scale_mm: 120.0,
            synth_occlusion: 0.2,
            synth_noise_sigma_mm: 0.5,
            hole_fill_iterations: 2,
            detection_margin_px: 5.0,
        }
    }
}

impl RunConfig {
    /// Desk-scale profile for the synthetic suite: smaller clouds, a short
    /// schedule, and a learning rate matched to the small embedding model.
    pub fn desk() -> Self {
        Self {
            v_o: 2000,
            v_s: 5000,
            epochs: 30,
            max_pairs: 512,
            lr_start: 1e-2,
            lr_end: 1e-3,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.v_o < 10 || self.v_s < 10 {
            return fail(format!("v_o/v_s too small: {}/{}", self.v_o, self.v_s));
        }
        if self.oversample < 1.0 {
            return fail(format!("oversample must be >= 1, got {}", self.oversample));
        }
        if self.q_mm <= 0.0 {
            return fail(format!("q_mm must be positive, got {}", self.q_mm));
        }
        if self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if self.tau_p_mm <= 0.0 {
            return fail(format!("tau_p_mm must be positive, got {}", self.tau_p_mm));
        }
        if self.mu_p < 0.0 || self.mu_n < 0.0 {
            return fail("margins must be non-negative".into());
        }
        if self.lambda_p < 0.0 || self.lambda_no < 0.0 || self.lambda_ns < 0.0 {
            return fail("loss weights must be non-negative".into());
        }
        if self.t_scale < 0.0 || self.t_scale_scene.is_some_and(|t| t < 0.0) {
            return fail("t_scale must be non-negative".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("betas must lie in (0,1)".into());
        }
        if self.lr_start <= 0.0 || self.lr_end <= 0.0 {
            return fail("learning rates must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail(format!("gamma must be in (0,1], got {}", self.gamma));
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.erase_rho_scale < 0.0 {
            return fail("erase_rho_scale must be non-negative".into());
        }
        if !(self.descriptor_r1_scale > 0.0 && self.descriptor_r1_scale < self.descriptor_r2_scale)
        {
            return fail(format!(
                "descriptor radii must satisfy 0 < r1 < r2, got ({}, {})",
                self.descriptor_r1_scale, self.descriptor_r2_scale
            ));
        }
        if self.ransac_max_iterations == 0 {
            return fail("ransac_max_iterations must be positive".into());
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return fail("ransac_confidence must be in (0,1)".into());
        }
        if !(0.0..1.0).contains(&self.synth_occlusion) {
            return fail(format!(
                "synth_occlusion must be in [0,1), got {}",
                self.synth_occlusion
            ));
        }
        if self.holdout_every < 2 {
            return fail("holdout_every must be at least 2".into());
        }
        let jitter_ok = |(lo, hi): (f64, f64)| lo <= hi;
        if !(jitter_ok(self.jitter.brightness)
            && jitter_ok(self.jitter.contrast)
            && jitter_ok(self.jitter.saturation)
            && jitter_ok(self.jitter.hue_turns))
        {
            return fail("jitter ranges must be well-ordered".into());
        }
        Ok(())
    }

    /// sha256 over the canonical JSON serialization, hex-encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            mu_p: self.mu_p,
            mu_n: self.mu_n,
            lambda_p: self.lambda_p,
            lambda_no: self.lambda_no,
            lambda_ns: self.lambda_ns,
            t_scale: self.t_scale,
            tau_p: self.tau_p_mm,
            max_pairs: self.max_pairs,
            scene_sample_cap: self.scene_sample_cap,
            negative_normalization: self.negative_normalization,
        }
    }

    pub fn optim_hyper(&self) -> OptimHyper {
        OptimHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn schedule(&self) -> Schedule {
        match self.schedule {
            ScheduleKind::Exponential => Schedule::Exponential {
                lr0: self.lr_start,
                gamma: self.gamma,
            },
            ScheduleKind::Cosine => Schedule::Cosine {
                lr_start: self.lr_start,
                lr_end: self.lr_end,
            },
        }
    }

    pub fn t_scale_scene(&self) -> f64 {
        self.t_scale_scene.unwrap_or(self.t_scale)
    }
}
