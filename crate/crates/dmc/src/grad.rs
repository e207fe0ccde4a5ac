//! Reverse-mode gradients through the unrolled clustering and a
//! central-difference checker.
//!
//! The batch loss is the mean over samples of the per-sample margin loss.
//! Backpropagation runs through every clustering iteration, including the
//! dependence of each softmax assignment on the previous iteration's unit
//! centers. At an exactly zero hinge argument the subgradient 0 is used.

use crate::clustering::{self, ProjectionBank, Trace};
use crate::encoder::{self, EncoderGrads};
use crate::error::{DmcError, Result};
use crate::grid::RawGrid;
use crate::loss_train::{hinge_terms, LossConfig, Model};
use crate::numerics::{self, Matrix};
use crate::synth::{self, MatchBatch, ScenePair};

/// One training sample: a visual grid, its own audio and a mismatched audio.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    pub visual: &'a RawGrid,
    pub audio: &'a RawGrid,
    pub negative_audio: &'a RawGrid,
}

/// Resolves a batch of scene indices into sample references.
pub fn batch_refs<'a>(scenes: &'a [ScenePair], batch: &MatchBatch) -> Vec<SampleRef<'a>> {
    batch
        .positives
        .iter()
        .zip(&batch.negatives)
        .map(|(&p, &n)| SampleRef {
            visual: &scenes[p].visual,
            audio: &scenes[p].audio,
            negative_audio: &scenes[n].audio,
        })
        .collect()
}

/// Gradients with respect to one sample's encoded features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrads {
    pub visual: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

/// Gradients of the batch loss with respect to every trainable parameter,
/// plus the per-sample feature gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub visual_encoder: EncoderGrads,
    pub audio_encoder: EncoderGrads,
    pub projections: Vec<Matrix>,
    pub features: Vec<FeatureGrads>,
}

impl GradientBundle {
    /// Parameter gradient blocks in the order of [`Model::blocks`].
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![
            self.visual_encoder.weight.data(),
            &self.visual_encoder.bias,
            self.audio_encoder.weight.data(),
            &self.audio_encoder.bias,
        ];
        out.extend(self.projections.iter().map(|w| w.data()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BackwardOptions {
    /// Treat visual centers as constants, so no gradient reaches the visual path.
    pub detach_visual: bool,
}

/// Loss, gradients and score statistics of one batch.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: f64,
    pub grads: GradientBundle,
    pub pos_score_mean: f64,
    pub neg_score_mean: f64,
}

/// Per-sample result of the feature-level pass.
#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub loss: f64,
    pub pos_scores: Vec<f64>,
    pub neg_scores: Vec<f64>,
    pub features: FeatureGrads,
    pub projections: Vec<Matrix>,
}

fn center_rows(trace: &Trace) -> Vec<Vec<f64>> {
    (0..trace.k).map(|j| trace.center(j).to_vec()).collect()
}

/// Adds `scale·∂cos(a,b)/∂a` to `out`.
fn add_cosine_grad(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let na = numerics::norm(a);
    let nb = numerics::norm(b);
    let cos = numerics::dot(a, b) / (na * nb);
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += scale * (bi / (na * nb) - cos * ai / (na * na));
    }
}

/// Backpropagates a gradient on the final centers through every unrolled
/// iteration, returning the gradient on the projected features `y_ij`.
pub(crate) fn trace_backward(trace: &Trace, upstream: &[f64], z: f64) -> Vec<f64> {
    let (p, k, m) = (trace.p, trace.k, trace.m);
    let y = &trace.y;
    let mut gy = vec![0.0; p * k * m];
    let mut gc = upstream.to_vec();
    let mut gd = vec![0.0; p * k];
    for t in (0..trace.steps.len()).rev() {
        let step = &trace.steps[t];
        let mut gchat = vec![0.0; k * m];
        for i in 0..p {
            for j in 0..k {
                let g = gd[i * k + j];
                if g == 0.0 {
                    continue;
                }
                let off = (i * k + j) * m;
                for r in 0..m {
                    gy[off + r] -= g * step.chat[j * m + r];
                    gchat[j * m + r] -= g * y[off + r];
                }
            }
        }
        for j in 0..k {
            let h = &step.chat[j * m..(j + 1) * m];
            let gh = &gchat[j * m..(j + 1) * m];
            let radial = numerics::dot(h, gh);
            let inv = 1.0 / step.norms[j];
            for r in 0..m {
                gc[j * m + r] += (gh[r] - h[r] * radial) * inv;
            }
        }
        let mut gs = vec![0.0; p * k];
        for i in 0..p {
            for j in 0..k {
                let off = (i * k + j) * m;
                let gcj = &gc[j * m..(j + 1) * m];
                gs[i * k + j] = numerics::dot(gcj, &y[off..off + m]);
                let sij = step.s[i * k + j];
                for r in 0..m {
                    gy[off + r] += sij * gcj[r];
                }
            }
        }
        if t == 0 {
            break;
        }
        for i in 0..p {
            let row = &step.s[i * k..(i + 1) * k];
            let gsr = &gs[i * k..(i + 1) * k];
            let mean = numerics::dot(row, gsr);
            for j in 0..k {
                gd[i * k + j] = -z * row[j] * (gsr[j] - mean);
            }
        }
        gc.iter_mut().for_each(|v| *v = 0.0);
    }
    gy
}

/// Accumulates `gW_j += Σ_i gy_ij u_iᵀ` and returns `gu_i = Σ_j W_jᵀ gy_ij`.
fn projection_backward(vectors: &[Vec<f64>], bank: &ProjectionBank, gy: &[f64], gw: &mut [Matrix]) -> Vec<Vec<f64>> {
    let (k, m, n) = (bank.k(), bank.m(), bank.n());
    vectors
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let mut gu = vec![0.0; n];
            for (j, w) in bank.matrices().iter().enumerate() {
                let off = (i * k + j) * m;
                let g = &gy[off..off + m];
                if g.iter().all(|&v| v == 0.0) {
                    continue;
                }
                gw[j].add_outer(g, u);
                w.add_matvec_t(g, &mut gu);
            }
            gu
        })
        .collect()
}

fn zero_projection_grads(bank: &ProjectionBank) -> Vec<Matrix> {
    bank.matrices()
        .iter()
        .map(|w| Matrix::zeros(w.rows(), w.cols()))
        .collect()
}

fn zero_features(count: usize, n: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; n]; count]
}

/// Margin loss of one sample given its encoded features, and its gradient
/// with respect to those features and the projections, scaled by `scale`.
pub fn sample_backward(
    visual: &[Vec<f64>],
    audio: &[Vec<f64>],
    negative: &[Vec<f64>],
    bank: &ProjectionBank,
    cluster: &clustering::ClusterConfig,
    loss: &LossConfig,
    options: &BackwardOptions,
    scale: f64,
) -> Result<SampleOutput> {
    let (k, m, n) = (bank.k(), bank.m(), bank.n());
    let tv = clustering::run_traced(visual, bank, cluster)?;
    let ta = clustering::run_traced(audio, bank, cluster)?;
    let tn = clustering::run_traced(negative, bank, cluster)?;
    let cv = center_rows(&tv);
    let ca = center_rows(&ta);
    let cn = center_rows(&tn);
    let terms = hinge_terms(&ca, &cv, &cn, loss)?;
    let value: f64 = terms.iter().map(|h| h.argument.max(0.0)).sum();
    let pos_scores = (0..k)
        .map(|i| numerics::cosine_similarity(&ca[i], &cv[i]))
        .collect::<Result<Vec<_>>>()?;
    let neg_scores = (0..k)
        .map(|i| numerics::cosine_similarity(&cn[i], &cv[i]))
        .collect::<Result<Vec<_>>>()?;

    let mut gcv = vec![0.0; k * m];
    let mut gca = vec![0.0; k * m];
    let mut gcn = vec![0.0; k * m];
    for h in terms.iter().filter(|h| h.argument > 0.0) {
        let (i, j) = (h.visual, h.negative);
        add_cosine_grad(&cn[j], &cv[i], scale, &mut gcn[j * m..(j + 1) * m]);
        add_cosine_grad(&cv[i], &cn[j], scale, &mut gcv[i * m..(i + 1) * m]);
        add_cosine_grad(&ca[i], &cv[i], -scale, &mut gca[i * m..(i + 1) * m]);
        add_cosine_grad(&cv[i], &ca[i], -scale, &mut gcv[i * m..(i + 1) * m]);
    }

    let mut projections = zero_projection_grads(bank);
    let mut backprop = |trace: &Trace, gc: &[f64], vectors: &[Vec<f64>]| {
        if gc.iter().all(|&v| v == 0.0) {
            return zero_features(vectors.len(), n);
        }
        let gy = trace_backward(trace, gc, cluster.z);
        projection_backward(vectors, bank, &gy, &mut projections)
    };
    let gv = if options.detach_visual {
        zero_features(visual.len(), n)
    } else {
        backprop(&tv, &gcv, visual)
    };
    let ga = backprop(&ta, &gca, audio);
    let gn = backprop(&tn, &gcn, negative);
    Ok(SampleOutput {
        loss: value,
        pos_scores,
        neg_scores,
        features: FeatureGrads {
            visual: gv,
            audio: ga,
            negative: gn,
        },
        projections,
    })
}

/// Mean margin loss over `samples` and its gradient with respect to every
/// parameter of `model`.
pub fn backward(
    model: &Model,
    samples: &[SampleRef],
    loss: &LossConfig,
    options: &BackwardOptions,
) -> Result<BackwardOutput> {
    if samples.is_empty() {
        return Err(DmcError::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut grads = GradientBundle {
        visual_encoder: EncoderGrads::zeros(&model.visual_encoder),
        audio_encoder: EncoderGrads::zeros(&model.audio_encoder),
        projections: zero_projection_grads(&model.bank),
        features: Vec::with_capacity(samples.len()),
    };
    let mut total = 0.0;
    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    let mut score_count = 0usize;
    for s in samples {
        let uv = model.encode_visual(s.visual)?;
        let ua = model.encode_audio(s.audio)?;
        let un = model.encode_audio(s.negative_audio)?;
        let out = sample_backward(
            uv.vectors(),
            ua.vectors(),
            un.vectors(),
            &model.bank,
            &model.cluster,
            loss,
            options,
            scale,
        )?;
        total += out.loss;
        pos_sum += out.pos_scores.iter().sum::<f64>();
        neg_sum += out.neg_scores.iter().sum::<f64>();
        score_count += out.pos_scores.len();
        for (acc, g) in grads.projections.iter_mut().zip(&out.projections) {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        if !options.detach_visual {
            let ev = encoder::encoder_backward(&out.features.visual, &model.visual_encoder, s.visual)?;
            grads.visual_encoder.add(&ev);
        }
        let ea = encoder::encoder_backward(&out.features.audio, &model.audio_encoder, s.audio)?;
        grads.audio_encoder.add(&ea);
        let en = encoder::encoder_backward(&out.features.negative, &model.audio_encoder, s.negative_audio)?;
        grads.audio_encoder.add(&en);
        grads.features.push(out.features);
    }
    Ok(BackwardOutput {
        loss: total * scale,
        grads,
        pos_score_mean: pos_sum / score_count as f64,
        neg_score_mean: neg_sum / score_count as f64,
    })
}

/// Mean margin loss over `samples`, without gradients.
pub fn batch_loss(model: &Model, samples: &[SampleRef], loss: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(DmcError::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for s in samples {
        total += sample_loss(
            model.encode_visual(s.visual)?.vectors(),
            model.encode_audio(s.audio)?.vectors(),
            model.encode_audio(s.negative_audio)?.vectors(),
            &model.bank,
            &model.cluster,
            loss,
        )?;
    }
    Ok(total / samples.len() as f64)
}

/// Margin loss of one sample from its encoded features.
pub fn sample_loss(
    visual: &[Vec<f64>],
    audio: &[Vec<f64>],
    negative: &[Vec<f64>],
    bank: &ProjectionBank,
    cluster: &clustering::ClusterConfig,
    loss: &LossConfig,
) -> Result<f64> {
    Ok(sample_hinges(visual, audio, negative, bank, cluster, loss)?
        .iter()
        .map(|a| a.max(0.0))
        .sum())
}

/// Hinge arguments of one sample.
fn sample_hinges(
    visual: &[Vec<f64>],
    audio: &[Vec<f64>],
    negative: &[Vec<f64>],
    bank: &ProjectionBank,
    cluster: &clustering::ClusterConfig,
    loss: &LossConfig,
) -> Result<Vec<f64>> {
    let cv = center_rows(&clustering::run_traced(visual, bank, cluster)?);
    let ca = center_rows(&clustering::run_traced(audio, bank, cluster)?);
    let cn = center_rows(&clustering::run_traced(negative, bank, cluster)?);
    Ok(hinge_terms(&ca, &cv, &cn, loss)?.iter().map(|h| h.argument).collect())
}

/// Relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference `(f(x + h·e_i) - f(x - h·e_i)) / 2h`, restoring `x[i]`.
pub fn central_difference<F>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let orig = x[i];
    x[i] = orig + h;
    let plus = f(x);
    x[i] = orig - h;
    let minus = f(x);
    x[i] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Largest relative error between `analytic` and central differences of `f`
/// over the coordinates `coords`.
pub fn check_gradient<F>(mut f: F, x: &[f64], analytic: &[f64], coords: &[usize], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for &i in coords {
        let numeric = central_difference(&mut f, &mut x, i, h)?;
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Settings of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Coordinates sampled per block; smaller blocks are checked in full.
    pub coords_per_block: usize,
    pub seed: u64,
    /// Hinge arguments closer than this to zero require a new batch.
    pub kink_tolerance: f64,
    /// Scales the analytic gradient by 1.5 before comparison, for exercising the failure path.
    pub corrupt: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-5,
            coords_per_block: 200,
            seed: 0,
            kink_tolerance: 1e-6,
            corrupt: false,
        }
    }
}

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub blocks: Vec<(String, f64)>,
    pub h: f64,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "h = {:e}", self.h)?;
        for (name, err) in &self.blocks {
            writeln!(f, "{name:<24} max rel error {err:.3e}")?;
        }
        write!(f, "overall max rel error {:.3e}", self.max_rel_error)
    }
}

/// Compares the analytic gradient of the batch loss with central differences
/// on every parameter block and every feature block.
pub fn grad_check(
    model: &Model,
    samples: &[SampleRef],
    loss: &LossConfig,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let scale = 1.0 / samples.len().max(1) as f64;
    let encoded = samples
        .iter()
        .map(|s| {
            Ok((
                model.encode_visual(s.visual)?.vectors().to_vec(),
                model.encode_audio(s.audio)?.vectors().to_vec(),
                model.encode_audio(s.negative_audio)?.vectors().to_vec(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    for (idx, (v, a, n)) in encoded.iter().enumerate() {
        let hinges = sample_hinges(v, a, n, &model.bank, &model.cluster, loss)?;
        if let Some(arg) = hinges.iter().find(|a| a.abs() < config.kink_tolerance) {
            return Err(DmcError::ResampleRequired(format!(
                "sample {idx} has a hinge argument {arg:e} within {:e} of its kink",
                config.kink_tolerance
            )));
        }
    }

    let out = backward(model, samples, loss, &BackwardOptions::default())?;
    let factor = if config.corrupt { 1.5 } else { 1.0 };
    let mut blocks = Vec::new();
    let names = [
        "visual_encoder.weight",
        "visual_encoder.bias",
        "audio_encoder.weight",
        "audio_encoder.bias",
    ];
    let analytic: Vec<Vec<f64>> = {
        let mut all: Vec<Vec<f64>> = out.grads.blocks().iter().map(|b| b.to_vec()).collect();
        let proj: Vec<f64> = all.drain(4..).flatten().collect();
        all.push(proj);
        all
    };

    let mut probe = model.clone();
    for (b, name) in names.iter().chain(["projections"].iter()).enumerate() {
        let len = analytic[b].len();
        let coords = synth::sample_distinct(len, config.coords_per_block, config.seed.wrapping_add(b as u64));
        let mut worst = 0.0f64;
        for &i in &coords {
            let (block, offset) = locate(&probe, b, i);
            let orig = probe.blocks()[block][offset];
            probe.blocks_mut()[block][offset] = orig + config.h;
            let plus = batch_loss(&probe, samples, loss);
            probe.blocks_mut()[block][offset] = orig - config.h;
            let minus = batch_loss(&probe, samples, loss);
            probe.blocks_mut()[block][offset] = orig;
            let numeric = (plus? - minus?) / (2.0 * config.h);
            worst = worst.max(relative_error(factor * analytic[b][i], numeric));
        }
        blocks.push((name.to_string(), worst));
    }

    let feature_names = ["features.visual", "features.audio", "features.negative"];
    for (slot, name) in feature_names.iter().enumerate() {
        let n = model.bank.n();
        let per_sample: Vec<usize> = encoded.iter().map(|e| [&e.0, &e.1, &e.2][slot].len() * n).collect();
        let total: usize = per_sample.iter().sum();
        let coords = synth::sample_distinct(
            total,
            config.coords_per_block,
            config.seed.wrapping_add(100 + slot as u64),
        );
        let mut worst = 0.0f64;
        for &flat in &coords {
            let (sample, rem) = split_index(&per_sample, flat);
            let (row, col) = (rem / n, rem % n);
            let a = [
                &out.grads.features[sample].visual,
                &out.grads.features[sample].audio,
                &out.grads.features[sample].negative,
            ][slot][row][col];
            let mut feats = encoded[sample].clone();
            let orig = [&feats.0, &feats.1, &feats.2][slot][row][col];
            let mut eval = |delta: f64| -> Result<f64> {
                let target = match slot {
                    0 => &mut feats.0,
                    1 => &mut feats.1,
                    _ => &mut feats.2,
                };
                target[row][col] = orig + delta;
                let value = sample_loss(&feats.0, &feats.1, &feats.2, &model.bank, &model.cluster, loss);
                value.map(|v| v * scale)
            };
            let plus = eval(config.h)?;
            let minus = eval(-config.h)?;
            let numeric = (plus - minus) / (2.0 * config.h);
            worst = worst.max(relative_error(factor * a, numeric));
        }
        blocks.push((name.to_string(), worst));
    }

    let max_rel_error = blocks.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        blocks,
        h: config.h,
    })
}

/// Maps a flat index of check block `b` onto a model block and offset. Block 4
/// spans all projection matrices.
fn locate(model: &Model, b: usize, i: usize) -> (usize, usize) {
    if b < 4 {
        return (b, i);
    }
    let size = model.bank.m() * model.bank.n();
    (4 + i / size, i % size)
}

fn split_index(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (s, &len) in sizes.iter().enumerate() {
        if flat < len {
            return (s, flat);
        }
        flat -= len;
    }
    unreachable!("index beyond block sizes")
}
