//! Localization heatmaps, binary segmentation, IoU, AUC and match accuracy.

use crate::clustering::{self, ClusterConfig, FeatureSet, ProjectionBank};
use crate::error::{DmcError, Result};
use crate::grid::BinaryGrid;
use crate::loss_train::{mean_center_score, Model};
use crate::numerics;
use crate::synth::{self, ScenePair};

/// Assignment coefficients of one cluster laid out on the feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(DmcError::Shape(format!(
                "{} values for a {rows}x{cols} heatmap",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DmcError::InvalidArgument(format!(
                "heatmap value {v} lies outside [0, 1]"
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Index of the largest value, ties going to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// The visual cluster matched to the pooled audio center.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub chosen_cluster: usize,
    /// Cosine of the pooled audio center with each visual center.
    pub scores: Vec<f64>,
    /// Chosen cluster's assignment column.
    pub heatmap: Heatmap,
    /// Every cluster's assignment column, in cluster order.
    pub cluster_heatmaps: Vec<Heatmap>,
}

fn column_heatmaps(assignments: &[Vec<f64>], shape: (usize, usize), k: usize) -> Result<Vec<Heatmap>> {
    (0..k)
        .map(|j| {
            Heatmap::new(
                shape.0,
                shape.1,
                assignments.iter().map(|row| row[j].clamp(0.0, 1.0)).collect(),
            )
        })
        .collect()
}

/// Index of the visual center with the highest cosine to `pooled`, ties going
/// to the lower index, together with all cosines.
pub fn select_center(pooled: &[f64], visual_centers: &[Vec<f64>]) -> Result<(usize, Vec<f64>)> {
    if visual_centers.is_empty() {
        return Err(DmcError::InvalidArgument("no visual centers to select from".into()));
    }
    let scores = visual_centers
        .iter()
        .map(|c| numerics::cosine_similarity(pooled, c))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen = 0;
    for (j, &s) in scores.iter().enumerate() {
        if s > scores[chosen] {
            chosen = j;
        }
    }
    Ok((chosen, scores))
}

/// Pools the audio centers by their mean and picks the visual center of
/// highest cosine proximity. Ties go to the lower index.
pub fn localize(
    audio_features: &FeatureSet,
    visual_features: &FeatureSet,
    bank: &ProjectionBank,
    config: &ClusterConfig,
) -> Result<Localization> {
    let audio = clustering::run_clustering(audio_features, bank, config)?;
    let visual = clustering::run_clustering(visual_features, bank, config)?;
    let m = bank.m();
    let mut pooled = vec![0.0; m];
    for c in &audio.centers {
        for (p, v) in pooled.iter_mut().zip(c) {
            *p += v;
        }
    }
    let k = audio.centers.len() as f64;
    pooled.iter_mut().for_each(|p| *p /= k);
    if !(numerics::norm(&pooled) >= numerics::NORM_EPS) {
        return Err(DmcError::DegenerateVector("pooled audio center has zero norm".into()));
    }
    let (chosen, scores) = select_center(&pooled, &visual.centers)?;
    let cluster_heatmaps = column_heatmaps(&visual.assignments, visual_features.grid_shape(), config.k)?;
    Ok(Localization {
        chosen_cluster: chosen,
        scores,
        heatmap: cluster_heatmaps[chosen].clone(),
        cluster_heatmaps,
    })
}

/// Cell is set iff its value is at least `threshold`.
pub fn binarize(heatmap: &Heatmap, threshold: f64) -> BinaryGrid {
    let cells = heatmap.values.iter().map(|&v| v >= threshold).collect();
    BinaryGrid::new(heatmap.rows, heatmap.cols, cells).expect("heatmap shape is consistent")
}

/// `|pred ∩ gt| / |pred ∪ gt|`, defined as 0 for an empty prediction.
pub fn iou(pred: &BinaryGrid, gt: &BinaryGrid) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(DmcError::Shape(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.shape(),
            gt.shape()
        )));
    }
    if gt.is_empty() {
        return Err(DmcError::InvalidArgument("ground-truth mask is empty".into()));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred.cells().iter().zip(gt.cells()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(inter as f64 / union as f64)
}

/// Area under the success curve `τ ↦ fraction of samples with value ≥ τ` for
/// `τ = 0, step, …, 1`, integrated with the trapezoid rule.
pub fn auc_over_threshold(samples: &[f64], step: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(DmcError::InvalidArgument("no samples for the AUC".into()));
    }
    if let Some(v) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DmcError::InvalidArgument(format!("sample {v} lies outside [0, 1]")));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(DmcError::InvalidArgument(format!("AUC step {step} must lie in (0, 1]")));
    }
    let intervals = (1.0 / step).round();
    if (intervals * step - 1.0).abs() > 1e-9 {
        return Err(DmcError::InvalidArgument(format!("AUC step {step} does not divide 1")));
    }
    let intervals = intervals as usize;
    let success = |i: usize| {
        let tau = i as f64 / intervals as f64;
        samples.iter().filter(|&&v| v >= tau - 1e-12).count() as f64 / samples.len() as f64
    };
    let width = 1.0 / intervals as f64;
    Ok((0..intervals)
        .map(|i| 0.5 * width * (success(i) + success(i + 1)))
        .sum())
}

/// Fraction of scenes whose own audio outscores one mismatched audio.
pub fn match_accuracy(model: &Model, scenes: &[ScenePair], seed: u64) -> Result<f64> {
    Ok(match_outcomes(model, scenes, seed)?.iter().filter(|&&ok| ok).count() as f64 / scenes.len() as f64)
}

/// Per-scene match outcome: true iff the own audio scores strictly higher.
pub fn match_outcomes(model: &Model, scenes: &[ScenePair], seed: u64) -> Result<Vec<bool>> {
    match_outcomes_by(scenes.len(), seed, |visual, audio| {
        mean_center_score(model, &scenes[visual].visual, &scenes[audio].audio)
    })
}

/// Match outcomes under an arbitrary scorer `score(visual_index, audio_index)`.
/// Scene `i` is compared against one other scene drawn uniformly with `seed`.
pub fn match_outcomes_by<F>(count: usize, seed: u64, mut score: F) -> Result<Vec<bool>>
where
    F: FnMut(usize, usize) -> Result<f64>,
{
    let indices: Vec<usize> = (0..count).collect();
    let batch = synth::make_batch(count, &indices, seed)?;
    batch
        .positives
        .iter()
        .zip(&batch.negatives)
        .map(|(&p, &n)| Ok(score(p, p)? > score(p, n)?))
        .collect()
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub auc_step: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            auc_step: 0.05,
            seed: 0,
        }
    }
}

/// Per-scene localization result.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneReport {
    pub chosen_cluster: usize,
    pub heatmap: Heatmap,
    pub mask: BinaryGrid,
    /// IoU of the chosen cluster's mask with the sounding objects' mask.
    pub iou: f64,
    /// Mean IoU of the other clusters' masks, `None` when `k = 1`.
    pub unrelated_iou: Option<f64>,
    pub match_correct: bool,
}

/// Evaluation over a scene set.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    pub scenes: Vec<SceneReport>,
    /// Fraction of scenes with IoU ≥ 0.5.
    pub ciou_at_0_5: f64,
    /// Fraction of scenes with IoU ≥ 0.7.
    pub ciou_at_0_7: f64,
    pub auc: f64,
    pub match_accuracy: f64,
    pub mean_iou: f64,
    /// Mean over scenes of the unrelated-cluster IoU, `None` when `k = 1`.
    pub mean_unrelated_iou: Option<f64>,
}

fn fraction_at_least(values: &[f64], tau: f64) -> f64 {
    values.iter().filter(|&&v| v >= tau).count() as f64 / values.len() as f64
}

/// Localizes every scene against its sounding objects and measures match accuracy.
pub fn evaluate(model: &Model, scenes: &[ScenePair], config: &EvalConfig) -> Result<LocalizationReport> {
    if scenes.len() < 2 {
        return Err(DmcError::InvalidArgument(format!(
            "evaluation needs at least 2 scenes, got {}",
            scenes.len()
        )));
    }
    let matches = match_outcomes(model, scenes, config.seed)?;
    let mut reports = Vec::with_capacity(scenes.len());
    for (scene, &match_correct) in scenes.iter().zip(&matches) {
        let loc = localize(
            &model.encode_audio(&scene.audio)?,
            &model.encode_visual(&scene.visual)?,
            &model.bank,
            &model.cluster,
        )?;
        let gt = scene.sounding_visual_mask();
        let mask = binarize(&loc.heatmap, config.threshold);
        let score = iou(&mask, &gt)?;
        let others = loc
            .cluster_heatmaps
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != loc.chosen_cluster)
            .map(|(_, h)| iou(&binarize(h, config.threshold), &gt))
            .collect::<Result<Vec<_>>>()?;
        let unrelated_iou = (!others.is_empty()).then(|| others.iter().sum::<f64>() / others.len() as f64);
        reports.push(SceneReport {
            chosen_cluster: loc.chosen_cluster,
            heatmap: loc.heatmap,
            mask,
            iou: score,
            unrelated_iou,
            match_correct,
        });
    }
    let ious: Vec<f64> = reports.iter().map(|r| r.iou).collect();
    let unrelated: Vec<f64> = reports.iter().filter_map(|r| r.unrelated_iou).collect();
    let n = reports.len() as f64;
    Ok(LocalizationReport {
        ciou_at_0_5: fraction_at_least(&ious, 0.5),
        ciou_at_0_7: fraction_at_least(&ious, 0.7),
        auc: auc_over_threshold(&ious, config.auc_step)?,
        match_accuracy: matches.iter().filter(|&&m| m).count() as f64 / n,
        mean_iou: ious.iter().sum::<f64>() / n,
        mean_unrelated_iou: (!unrelated.is_empty()).then(|| unrelated.iter().sum::<f64>() / unrelated.len() as f64),
        scenes: reports,
    })
}

pub const METRICS_HEADER: &str = "row,chosen_cluster,iou,unrelated_iou,ciou@0.5,ciou@0.7,auc,match_accuracy";

/// Per-scene rows followed by a `summary` row. Per-scene `ciou@*` and
/// `match_accuracy` are 0/1 indicators and `auc` is that scene's own
/// success-curve area, so the summary row holds their means.
pub fn metrics_csv(report: &LocalizationReport, auc_step: f64) -> Result<String> {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let fmt_opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    for (i, r) in report.scenes.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{:.6},{},{},{},{:.6},{}\n",
            r.chosen_cluster,
            r.iou,
            fmt_opt(r.unrelated_iou),
            u8::from(r.iou >= 0.5),
            u8::from(r.iou >= 0.7),
            auc_over_threshold(&[r.iou], auc_step)?,
            u8::from(r.match_correct),
        ));
    }
    out.push_str(&format!(
        "summary,,{:.6},{},{:.6},{:.6},{:.6},{:.6}\n",
        report.mean_iou,
        fmt_opt(report.mean_unrelated_iou),
        report.ciou_at_0_5,
        report.ciou_at_0_7,
        report.auc,
        report.match_accuracy,
    ));
    Ok(out)
}

/// Binary PGM (`P5`, maxval 255) with each value written as `round(255·v)`.
pub fn pgm_bytes(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    out
}

pub fn heatmap_pgm(heatmap: &Heatmap) -> Vec<u8> {
    pgm_bytes(heatmap.rows, heatmap.cols, &heatmap.values)
}

pub fn mask_pgm(mask: &BinaryGrid) -> Vec<u8> {
    let values: Vec<f64> = mask.cells().iter().map(|&c| f64::from(u8::from(c))).collect();
    pgm_bytes(mask.rows(), mask.cols(), &values)
}
