//! `key = value` run configuration.

use crate::clustering::ClusterConfig;
use crate::encoder::Nonlinearity;
use crate::error::{DmcError, Result};
use crate::eval::EvalConfig;
use crate::grad::GradCheckConfig;
use crate::loss_train::{AdamConfig, LossConfig, ModelConfig, Pairing, TrainConfig};
use crate::synth::SynthConfig;

/// Every tunable of the command-line tool. Defaults are listed in the README.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_scenes: usize,
    pub visual_height: usize,
    pub visual_width: usize,
    pub visual_channels: usize,
    pub visual_patch: usize,
    pub audio_frames: usize,
    pub audio_bins: usize,
    pub audio_patch: usize,
    pub latent_dim: usize,
    pub min_components: usize,
    pub max_components: usize,
    pub noise_sigma: f64,
    pub distractor_prob: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub radius_min: usize,
    pub radius_max: usize,
    pub time_span_min: usize,
    pub time_span_max: usize,
    pub freq_span_min: usize,
    pub freq_span_max: usize,
    pub max_latent_cosine: f64,
    pub world_seed: u64,

    pub feature_dim: usize,
    pub center_dim: usize,
    pub clusters: usize,
    pub cluster_iterations: usize,
    pub smoothing: f64,
    pub nonlinearity: Nonlinearity,

    pub margin: f64,
    pub pairing: Pairing,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub train_iterations: usize,
    pub seed: u64,

    pub threshold: f64,
    pub auc_step: f64,

    pub gradcheck_h: f64,
    pub gradcheck_coords: usize,
    pub gradcheck_batch: usize,
    pub gradcheck_retries: usize,
    pub gradcheck_tolerance: f64,
    pub gradcheck_corrupt: bool,
    pub gradcheck_kink_tolerance: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        Self {
            num_scenes: 2000,
            visual_height: synth.visual_height,
            visual_width: synth.visual_width,
            visual_channels: synth.visual_channels,
            visual_patch: synth.visual_patch.0,
            audio_frames: synth.audio_frames,
            audio_bins: synth.audio_bins,
            audio_patch: synth.audio_patch.0,
            latent_dim: synth.latent_dim,
            min_components: synth.min_components,
            max_components: synth.max_components,
            noise_sigma: synth.noise_sigma,
            distractor_prob: synth.distractor_prob,
            amplitude_min: synth.amplitude_range.0,
            amplitude_max: synth.amplitude_range.1,
            radius_min: synth.radius_range.0,
            radius_max: synth.radius_range.1,
            time_span_min: synth.time_span_range.0,
            time_span_max: synth.time_span_range.1,
            freq_span_min: synth.freq_span_range.0,
            freq_span_max: synth.freq_span_range.1,
            max_latent_cosine: synth.max_latent_cosine,
            world_seed: synth.world_seed,

            feature_dim: 32,
            center_dim: 32,
            clusters: 2,
            cluster_iterations: 3,
            smoothing: 30.0,
            nonlinearity: Nonlinearity::RationalCubic,

            margin: 1.0,
            pairing: Pairing::SameIndex,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 16,
            train_iterations: 8000,
            seed: 0,

            threshold: 0.7,
            auc_step: 0.05,

            gradcheck_h: 1e-5,
            gradcheck_coords: 200,
            gradcheck_batch: 2,
            gradcheck_retries: 10,
            gradcheck_tolerance: 1e-4,
            gradcheck_corrupt: false,
            gradcheck_kink_tolerance: 1e-6,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| DmcError::Config(format!("invalid value `{value}` for key `{key}`")))
}

impl RunConfig {
    /// Parses `key = value` lines over the defaults. Blank lines and text
    /// after `#` are ignored. Unknown keys are rejected by name.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| DmcError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        macro_rules! fields {
            ($($name:ident),* $(,)?) => {
                match key {
                    $(stringify!($name) => self.$name = parse_value(key, value)?,)*
                    "nonlinearity" => {
                        self.nonlinearity = Nonlinearity::from_name(value).ok_or_else(|| {
                            DmcError::Config(format!(
                                "invalid value `{value}` for key `nonlinearity` (tanh, cubic, identity)"
                            ))
                        })?
                    }
                    "pairing" => {
                        self.pairing = Pairing::from_name(value).ok_or_else(|| {
                            DmcError::Config(format!(
                                "invalid value `{value}` for key `pairing` (same_index, all_pairs)"
                            ))
                        })?
                    }
                    _ => return Err(DmcError::Config(format!("unknown config key `{key}`"))),
                }
            };
        }
        fields!(
            num_scenes,
            visual_height,
            visual_width,
            visual_channels,
            visual_patch,
            audio_frames,
            audio_bins,
            audio_patch,
            latent_dim,
            min_components,
            max_components,
            noise_sigma,
            distractor_prob,
            amplitude_min,
            amplitude_max,
            radius_min,
            radius_max,
            time_span_min,
            time_span_max,
            freq_span_min,
            freq_span_max,
            max_latent_cosine,
            world_seed,
            feature_dim,
            center_dim,
            clusters,
            cluster_iterations,
            smoothing,
            margin,
            learning_rate,
            beta1,
            beta2,
            adam_epsilon,
            batch_size,
            train_iterations,
            seed,
            threshold,
            auc_step,
            gradcheck_h,
            gradcheck_coords,
            gradcheck_batch,
            gradcheck_retries,
            gradcheck_tolerance,
            gradcheck_corrupt,
            gradcheck_kink_tolerance,
        );
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            visual_height: self.visual_height,
            visual_width: self.visual_width,
            visual_channels: self.visual_channels,
            visual_patch: (self.visual_patch, self.visual_patch),
            audio_frames: self.audio_frames,
            audio_bins: self.audio_bins,
            audio_patch: (self.audio_patch, self.audio_patch),
            latent_dim: self.latent_dim,
            min_components: self.min_components,
            max_components: self.max_components,
            noise_sigma: self.noise_sigma,
            distractor_prob: self.distractor_prob,
            amplitude_range: (self.amplitude_min, self.amplitude_max),
            radius_range: (self.radius_min, self.radius_max),
            time_span_range: (self.time_span_min, self.time_span_max),
            freq_span_range: (self.freq_span_min, self.freq_span_max),
            max_latent_cosine: self.max_latent_cosine,
            world_seed: self.world_seed,
        }
    }

    pub fn cluster(&self) -> ClusterConfig {
        ClusterConfig {
            k: self.clusters,
            iterations: self.cluster_iterations,
            z: self.smoothing,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.feature_dim,
            center_dim: self.center_dim,
            cluster: self.cluster(),
            nonlinearity: self.nonlinearity,
            visual_patch: (self.visual_patch, self.visual_patch),
            visual_channels: self.visual_channels,
            audio_patch: (self.audio_patch, self.audio_patch),
        }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            pairing: self.pairing,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train_iterations,
            batch_size: self.batch_size,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.adam_epsilon,
            },
            loss: self.loss(),
            seed: self.seed,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            threshold: self.threshold,
            auc_step: self.auc_step,
            seed: self.seed,
        }
    }

    pub fn gradcheck(&self) -> GradCheckConfig {
        GradCheckConfig {
            h: self.gradcheck_h,
            coords_per_block: self.gradcheck_coords,
            seed: self.seed,
            corrupt: self.gradcheck_corrupt,
            kink_tolerance: self.gradcheck_kink_tolerance,
        }
    }
}
