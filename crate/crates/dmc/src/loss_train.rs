//! Cross-modal center scores, the max-margin loss, Adam and the training loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clustering::{self, ClusterConfig, ClusterState, FeatureSet, Modality, ProjectionBank};
use crate::encoder::{self, EncoderParams, Nonlinearity};
use crate::error::{DmcError, Result};
use crate::grad::{self, GradientBundle};
use crate::grid::RawGrid;
use crate::numerics;
use crate::synth::{self, ScenePair};

/// Which negative centers each visual center is contrasted against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Visual center `i` against negative audio center `i`: k hinge terms.
    SameIndex,
    /// Visual center `i` against every negative audio center `j ≠ i`: k(k-1) hinge terms.
    AllPairs,
}

impl Pairing {
    pub fn name(self) -> &'static str {
        match self {
            Pairing::SameIndex => "same_index",
            Pairing::AllPairs => "all_pairs",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "same_index" => Some(Pairing::SameIndex),
            "all_pairs" => Some(Pairing::AllPairs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub pairing: Pairing,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            pairing: Pairing::SameIndex,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(DmcError::Config(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// `score_i = cos(audio_i, visual_i)` for every center index.
pub fn center_scores(audio_centers: &[Vec<f64>], visual_centers: &[Vec<f64>]) -> Result<Vec<f64>> {
    if audio_centers.len() != visual_centers.len() {
        return Err(DmcError::Shape(format!(
            "{} audio centers against {} visual centers",
            audio_centers.len(),
            visual_centers.len()
        )));
    }
    audio_centers
        .iter()
        .zip(visual_centers)
        .map(|(a, v)| numerics::cosine_similarity(a, v))
        .collect()
}

/// One hinge `max(0, cos(negative_j, visual_i) - cos(positive_i, visual_i) + Δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hinge {
    pub visual: usize,
    pub negative: usize,
    /// The hinge argument before clamping at zero.
    pub argument: f64,
}

/// All hinge terms of the margin loss under the configured pairing.
pub fn hinge_terms(
    pos_audio_centers: &[Vec<f64>],
    visual_centers: &[Vec<f64>],
    neg_audio_centers: &[Vec<f64>],
    config: &LossConfig,
) -> Result<Vec<Hinge>> {
    let k = visual_centers.len();
    if pos_audio_centers.len() != k || neg_audio_centers.len() != k {
        return Err(DmcError::Shape(format!(
            "center counts {}, {} and {} differ",
            pos_audio_centers.len(),
            k,
            neg_audio_centers.len()
        )));
    }
    let pos = center_scores(pos_audio_centers, visual_centers)?;
    let mut terms = Vec::new();
    for i in 0..k {
        let negatives: Vec<usize> = match config.pairing {
            Pairing::SameIndex => vec![i],
            Pairing::AllPairs => (0..k).filter(|&j| j != i).collect(),
        };
        for j in negatives {
            let neg = numerics::cosine_similarity(&neg_audio_centers[j], &visual_centers[i])?;
            terms.push(Hinge {
                visual: i,
                negative: j,
                argument: neg - pos[i] + config.margin,
            });
        }
    }
    Ok(terms)
}

/// `Σ max(0, s(ĉ^a, c^v) - s(c^a, c^v) + Δ)` over the configured hinge terms.
pub fn margin_loss(
    pos_audio_centers: &[Vec<f64>],
    visual_centers: &[Vec<f64>],
    neg_audio_centers: &[Vec<f64>],
    config: &LossConfig,
) -> Result<f64> {
    config.validate()?;
    Ok(
        hinge_terms(pos_audio_centers, visual_centers, neg_audio_centers, config)?
            .iter()
            .map(|h| h.argument.max(0.0))
            .sum(),
    )
}

/// Architecture of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub center_dim: usize,
    pub cluster: ClusterConfig,
    pub nonlinearity: Nonlinearity,
    pub visual_patch: (usize, usize),
    pub visual_channels: usize,
    pub audio_patch: (usize, usize),
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            center_dim: 32,
            cluster: ClusterConfig::default(),
            nonlinearity: Nonlinearity::RationalCubic,
            visual_patch: (4, 4),
            visual_channels: 3,
            audio_patch: (4, 4),
        }
    }
}

/// Encoders, projection bank and clustering settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub visual_encoder: EncoderParams,
    pub audio_encoder: EncoderParams,
    pub bank: ProjectionBank,
    pub cluster: ClusterConfig,
}

impl Model {
    /// Seeded initialization: visual encoder, then audio encoder, then projections.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.cluster.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual_encoder = EncoderParams::init(
            config.feature_dim,
            config.visual_patch,
            config.visual_channels,
            config.nonlinearity,
            &mut rng,
        )?;
        let audio_encoder =
            EncoderParams::init(config.feature_dim, config.audio_patch, 1, config.nonlinearity, &mut rng)?;
        let bank = ProjectionBank::random(config.cluster.k, config.center_dim, config.feature_dim, &mut rng)?;
        Self::new(visual_encoder, audio_encoder, bank, config.cluster)
    }

    pub fn new(
        visual_encoder: EncoderParams,
        audio_encoder: EncoderParams,
        bank: ProjectionBank,
        cluster: ClusterConfig,
    ) -> Result<Self> {
        cluster.validate()?;
        let n = bank.n();
        if visual_encoder.feature_dim() != n || audio_encoder.feature_dim() != n {
            return Err(DmcError::Shape(format!(
                "encoders output {} and {} features but projections expect {n}",
                visual_encoder.feature_dim(),
                audio_encoder.feature_dim()
            )));
        }
        if bank.k() != cluster.k {
            return Err(DmcError::Shape(format!(
                "{} projections for {} clusters",
                bank.k(),
                cluster.k
            )));
        }
        Ok(Self {
            visual_encoder,
            audio_encoder,
            bank,
            cluster,
        })
    }

    pub fn encode_visual(&self, grid: &RawGrid) -> Result<FeatureSet> {
        encoder::encode(grid, &self.visual_encoder, Modality::Visual)
    }

    pub fn encode_audio(&self, grid: &RawGrid) -> Result<FeatureSet> {
        encoder::encode(grid, &self.audio_encoder, Modality::Audio)
    }

    pub fn cluster(&self, features: &FeatureSet) -> Result<ClusterState> {
        clustering::run_clustering(features, &self.bank, &self.cluster)
    }

    /// Parameter blocks in a fixed order: visual weight, visual bias, audio
    /// weight, audio bias, then each projection matrix.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.visual_encoder.weight.data(),
            &self.visual_encoder.bias,
            self.audio_encoder.weight.data(),
            &self.audio_encoder.bias,
        ];
        out.extend(self.bank.matrices().iter().map(|w| w.data()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.visual_encoder.weight.data_mut(),
            &mut self.visual_encoder.bias,
            self.audio_encoder.weight.data_mut(),
            &mut self.audio_encoder.bias,
        ];
        out.extend(self.bank.matrices_mut().iter_mut().map(|w| w.data_mut()));
        out
    }
}

/// Adam constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step count and moment accumulators, one pair per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(model: &Model, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Self {
            step: 0,
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// Applies one bias-corrected Adam update.
pub fn optimizer_step(model: &mut Model, grads: &GradientBundle, state: &mut OptimizerState) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut param_blocks = model.blocks_mut();
    if grad_blocks.len() != param_blocks.len() || state.first_moment.len() != param_blocks.len() {
        return Err(DmcError::Shape(format!(
            "{} gradient blocks and {} moment blocks for {} parameter blocks",
            grad_blocks.len(),
            state.first_moment.len(),
            param_blocks.len()
        )));
    }
    for (b, (g, p)) in grad_blocks.iter().zip(&param_blocks).enumerate() {
        if g.len() != p.len() || state.first_moment[b].len() != p.len() {
            return Err(DmcError::Shape(format!(
                "gradient block {b} has {} entries for {} parameters",
                g.len(),
                p.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(DmcError::TrainingDiverged {
                iteration: state.step as usize,
                detail: format!("non-finite gradient in parameter block {b}"),
            });
        }
    }
    state.step += 1;
    for (b, (g, p)) in grad_blocks.iter().zip(param_blocks.iter_mut()).enumerate() {
        adam_update(
            p,
            g,
            &mut state.first_moment[b],
            &mut state.second_moment[b],
            state.step,
            &state.config,
        );
    }
    Ok(())
}

/// One bias-corrected Adam update of `params` at step `step` (counting from 1).
pub fn adam_update(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, config: &AdamConfig) {
    let t = step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grads[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

/// Training loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 8000,
            batch_size: 16,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            loss: LossConfig {
                margin: 1.0,
                ..LossConfig::default()
            },
            seed: 0,
        }
    }
}

/// One training log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub loss: f64,
    pub pos_score_mean: f64,
    pub neg_score_mean: f64,
}

pub const LOG_HEADER: &str = "iter,loss,pos_score_mean,neg_score_mean";

impl LogEntry {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e}",
            self.iter, self.loss, self.pos_score_mean, self.neg_score_mean
        )
    }
}

/// Renders a log as CSV with a header line.
pub fn log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for e in log {
        out.push_str(&e.csv_line());
        out.push('\n');
    }
    out
}

/// Seed of the batch drawn at iteration `iter`.
pub fn batch_seed(seed: u64, iter: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iter as u64);
    rng.random()
}

/// Trains `model` on `dataset` and returns the per-iteration log.
pub fn train(dataset: &[ScenePair], model: &mut Model, config: &TrainConfig) -> Result<Vec<LogEntry>> {
    config.loss.validate()?;
    if dataset.len() < 2 {
        return Err(DmcError::Config(format!(
            "training needs at least 2 scenes, got {}",
            dataset.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(DmcError::Config("batch size must be positive".into()));
    }
    let mut state = OptimizerState::new(model, config.adam);
    let mut log = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let batch = synth::sample_batch(dataset.len(), config.batch_size, batch_seed(config.seed, iter))?;
        let samples = grad::batch_refs(dataset, &batch);
        let out =
            grad::backward(model, &samples, &config.loss, &grad::BackwardOptions::default()).map_err(|e| match e {
                DmcError::DegenerateCenter { cluster, norm } => DmcError::TrainingDiverged {
                    iteration: iter,
                    detail: format!("cluster {cluster} center collapsed to norm {norm:e}"),
                },
                other => other,
            })?;
        if !out.loss.is_finite() {
            return Err(DmcError::TrainingDiverged {
                iteration: iter,
                detail: format!("loss is {}", out.loss),
            });
        }
        log.push(LogEntry {
            iter,
            loss: out.loss,
            pos_score_mean: out.pos_score_mean,
            neg_score_mean: out.neg_score_mean,
        });
        optimizer_step(model, &out.grads, &mut state).map_err(|e| match e {
            DmcError::TrainingDiverged { detail, .. } => DmcError::TrainingDiverged {
                iteration: iter,
                detail,
            },
            other => other,
        })?;
    }
    Ok(log)
}

/// Mean center score between a scene's visual grid and an audio grid.
pub fn mean_center_score(model: &Model, visual: &RawGrid, audio: &RawGrid) -> Result<f64> {
    let v = model.cluster(&model.encode_visual(visual)?)?;
    let a = model.cluster(&model.encode_audio(audio)?)?;
    let scores = center_scores(&a.centers, &v.centers)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
