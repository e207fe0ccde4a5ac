//! Planted synthetic audiovisual scenes.
//!
//! Each component owns a unit latent vector. Two fixed world matrices map a
//! latent to one visual patch texture and one audio patch texture. A
//! component paints its visual texture into every patch of a disk on the
//! visual patch grid, and its audio texture into every patch of a rectangle
//! on the audio patch grid. Silent distractors paint only the visual grid.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{DmcError, Result};
use crate::grid::{BinaryGrid, RawGrid};
use crate::numerics::{self, Matrix};

const LATENT_ATTEMPTS: usize = 10_000;
const PLACEMENT_ATTEMPTS: usize = 1_000;

/// Generator settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub visual_height: usize,
    pub visual_width: usize,
    pub visual_channels: usize,
    pub visual_patch: (usize, usize),
    pub audio_frames: usize,
    pub audio_bins: usize,
    pub audio_patch: (usize, usize),
    pub latent_dim: usize,
    pub min_components: usize,
    pub max_components: usize,
    pub noise_sigma: f64,
    pub distractor_prob: f64,
    pub amplitude_range: (f64, f64),
    /// Disk radius range on the visual patch grid.
    pub radius_range: (usize, usize),
    /// Rectangle length range along audio time, in patches.
    pub time_span_range: (usize, usize),
    /// Rectangle length range along audio frequency, in patches.
    pub freq_span_range: (usize, usize),
    /// Bound on the absolute cosine between two components' latents and textures.
    pub max_latent_cosine: f64,
    pub world_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            visual_height: 32,
            visual_width: 32,
            visual_channels: 3,
            visual_patch: (4, 4),
            audio_frames: 48,
            audio_bins: 16,
            audio_patch: (4, 4),
            latent_dim: 8,
            min_components: 1,
            max_components: 3,
            noise_sigma: 0.05,
            distractor_prob: 0.3,
            amplitude_range: (0.6, 1.0),
            radius_range: (1, 2),
            time_span_range: (3, 6),
            freq_span_range: (1, 2),
            max_latent_cosine: 0.3,
            world_seed: 12345,
        }
    }
}

impl SynthConfig {
    pub fn visual_grid_shape(&self) -> (usize, usize) {
        (
            self.visual_height / self.visual_patch.0,
            self.visual_width / self.visual_patch.1,
        )
    }

    pub fn audio_grid_shape(&self) -> (usize, usize) {
        (
            self.audio_frames / self.audio_patch.0,
            self.audio_bins / self.audio_patch.1,
        )
    }

    pub fn visual_fan_in(&self) -> usize {
        self.visual_patch.0 * self.visual_patch.1 * self.visual_channels
    }

    pub fn audio_fan_in(&self) -> usize {
        self.audio_patch.0 * self.audio_patch.1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DmcError::Config(msg));
        let (vph, vpw) = self.visual_patch;
        let (aph, apw) = self.audio_patch;
        if vph == 0 || vpw == 0 || aph == 0 || apw == 0 {
            return fail("patch sizes must be positive".into());
        }
        if self.visual_channels == 0 {
            return fail("visual channel count must be positive".into());
        }
        if self.visual_height == 0
            || self.visual_width == 0
            || self.visual_height % vph != 0
            || self.visual_width % vpw != 0
        {
            return fail(format!(
                "visual grid {}x{} is not divisible into {vph}x{vpw} patches",
                self.visual_height, self.visual_width
            ));
        }
        if self.audio_frames == 0 || self.audio_bins == 0 || self.audio_frames % aph != 0 || self.audio_bins % apw != 0
        {
            return fail(format!(
                "audio grid {}x{} is not divisible into {aph}x{apw} patches",
                self.audio_frames, self.audio_bins
            ));
        }
        if self.latent_dim == 0 {
            return fail("latent dimension must be positive".into());
        }
        if self.min_components == 0 || self.min_components > self.max_components {
            return fail(format!(
                "component range {}..={} is invalid",
                self.min_components, self.max_components
            ));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail(format!("noise sigma must be non-negative, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.distractor_prob) {
            return fail(format!(
                "distractor probability must lie in [0, 1], got {}",
                self.distractor_prob
            ));
        }
        let (alo, ahi) = self.amplitude_range;
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            return fail(format!("amplitude range ({alo}, {ahi}) is invalid"));
        }
        let (vrows, vcols) = self.visual_grid_shape();
        let (rlo, rhi) = self.radius_range;
        if rlo > rhi || 2 * rhi + 1 > vrows.min(vcols) {
            return fail(format!(
                "radius range ({rlo}, {rhi}) does not fit a {vrows}x{vcols} patch grid"
            ));
        }
        let (arows, acols) = self.audio_grid_shape();
        let (tlo, thi) = self.time_span_range;
        let (flo, fhi) = self.freq_span_range;
        if tlo == 0 || tlo > thi || thi > arows {
            return fail(format!(
                "time span range ({tlo}, {thi}) does not fit {arows} time patches"
            ));
        }
        if flo == 0 || flo > fhi || fhi > acols {
            return fail(format!(
                "frequency span range ({flo}, {fhi}) does not fit {acols} frequency patches"
            ));
        }
        if !(self.max_latent_cosine > 0.0 && self.max_latent_cosine <= 1.0) {
            return fail(format!(
                "latent cosine bound must lie in (0, 1], got {}",
                self.max_latent_cosine
            ));
        }
        Ok(())
    }
}

/// Fixed maps from latent space to visual and audio patch textures.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// `visual_fan_in × latent_dim`.
    pub visual_proj: Matrix,
    /// `audio_fan_in × latent_dim`.
    pub audio_proj: Matrix,
}

impl World {
    pub fn new(config: &SynthConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.world_seed);
        let l = config.latent_dim;
        let mut gaussian = |rows: usize| -> Result<Matrix> {
            let data = (0..rows * l).map(|_| StandardNormal.sample(&mut rng)).collect();
            Matrix::from_vec(rows, l, data)
        };
        let visual_proj = gaussian(config.visual_fan_in())?;
        let audio_proj = gaussian(config.audio_fan_in())?;
        Ok(Self {
            visual_proj,
            audio_proj,
        })
    }

    pub fn visual_texture(&self, latent: &[f64]) -> Result<Vec<f64>> {
        texture(&self.visual_proj, latent)
    }

    pub fn audio_texture(&self, latent: &[f64]) -> Result<Vec<f64>> {
        texture(&self.audio_proj, latent)
    }
}

/// `P·latent` rescaled to unit root-mean-square.
fn texture(proj: &Matrix, latent: &[f64]) -> Result<Vec<f64>> {
    let t = proj.matvec(latent);
    let rms = (numerics::dot(&t, &t) / t.len() as f64).sqrt();
    if !(rms >= numerics::NORM_EPS) {
        return Err(DmcError::DegenerateVector("latent maps to a zero texture".into()));
    }
    Ok(t.into_iter().map(|v| v / rms).collect())
}

/// A disk on the visual patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisualBlob {
    pub row: usize,
    pub col: usize,
    pub radius: usize,
}

impl VisualBlob {
    pub fn mask(&self, rows: usize, cols: usize) -> BinaryGrid {
        let mut m = BinaryGrid::empty(rows, cols);
        let r2 = (self.radius * self.radius) as i64;
        for r in 0..rows {
            for c in 0..cols {
                let dr = r as i64 - self.row as i64;
                let dc = c as i64 - self.col as i64;
                if dr * dr + dc * dc <= r2 {
                    m.set(r, c, true);
                }
            }
        }
        m
    }
}

/// A rectangle on the audio patch grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioBlob {
    pub time_start: usize,
    pub time_len: usize,
    pub freq_start: usize,
    pub freq_len: usize,
}

impl AudioBlob {
    pub fn mask(&self, rows: usize, cols: usize) -> BinaryGrid {
        let mut m = BinaryGrid::empty(rows, cols);
        for r in self.time_start..self.time_start + self.time_len {
            for c in self.freq_start..self.freq_start + self.freq_len {
                m.set(r, c, true);
            }
        }
        m
    }
}

/// One planted component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSignature {
    pub id: usize,
    pub latent: Vec<f64>,
    pub visual_blob: VisualBlob,
    /// `None` for a silent distractor.
    pub audio_blob: Option<AudioBlob>,
    pub amplitude: f64,
}

/// A visual grid and an audio grid with their planted components and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub visual: RawGrid,
    pub audio: RawGrid,
    pub components: Vec<ComponentSignature>,
    pub visual_masks: Vec<BinaryGrid>,
    pub audio_masks: Vec<BinaryGrid>,
    pub silent_flags: Vec<bool>,
}

impl ScenePair {
    /// Union of the visual masks of all sounding components.
    pub fn sounding_visual_mask(&self) -> BinaryGrid {
        let (rows, cols) = self.visual_masks.first().map_or((0, 0), BinaryGrid::shape);
        let mut out = BinaryGrid::empty(rows, cols);
        for (mask, &silent) in self.visual_masks.iter().zip(&self.silent_flags) {
            if !silent {
                out = out.union(mask).expect("masks share one shape");
            }
        }
        out
    }

    pub fn sounding_count(&self) -> usize {
        self.silent_flags.iter().filter(|&&s| !s).count()
    }
}

fn abs_cos(a: &[f64], b: &[f64]) -> f64 {
    numerics::cosine_similarity(a, b).map_or(1.0, f64::abs)
}

struct Latent {
    latent: Vec<f64>,
    visual: Vec<f64>,
    audio: Vec<f64>,
    /// Textures as painted at the component's amplitude, after clipping.
    painted_visual: Vec<f64>,
    painted_audio: Vec<f64>,
}

fn clipped(texture: &[f64], amplitude: f64) -> Vec<f64> {
    texture.iter().map(|v| (amplitude * v).clamp(-1.0, 1.0)).collect()
}

fn sample_latents(
    amplitudes: &[f64],
    config: &SynthConfig,
    world: &World,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Latent>> {
    let count = amplitudes.len();
    let bound = config.max_latent_cosine;
    let mut out: Vec<Latent> = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > LATENT_ATTEMPTS {
            return Err(DmcError::Config(format!(
                "could not draw {count} latents with pairwise cosine below {bound}"
            )));
        }
        let raw: Vec<f64> = (0..config.latent_dim).map(|_| StandardNormal.sample(rng)).collect();
        let latent = match numerics::l2_normalize(&raw) {
            Ok(l) => l,
            Err(_) => continue,
        };
        let visual = world.visual_texture(&latent)?;
        let audio = world.audio_texture(&latent)?;
        let amplitude = amplitudes[out.len()];
        let painted_visual = clipped(&visual, amplitude);
        let painted_audio = clipped(&audio, amplitude);
        let separated = out.iter().all(|o| {
            abs_cos(&latent, &o.latent) < bound
                && abs_cos(&visual, &o.visual) < bound
                && abs_cos(&audio, &o.audio) < bound
                && abs_cos(&painted_visual, &o.visual) < bound
                && abs_cos(&visual, &o.painted_visual) < bound
                && abs_cos(&painted_audio, &o.audio) < bound
                && abs_cos(&audio, &o.painted_audio) < bound
        });
        if separated {
            out.push(Latent {
                latent,
                visual,
                audio,
                painted_visual,
                painted_audio,
            });
        }
    }
    Ok(out)
}

fn place_visual(config: &SynthConfig, occupied: &BinaryGrid, rng: &mut ChaCha8Rng) -> Result<(VisualBlob, BinaryGrid)> {
    let (rows, cols) = config.visual_grid_shape();
    let (rlo, rhi) = config.radius_range;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let radius = rng.random_range(rlo..=rhi);
        let row = rng.random_range(radius..rows - radius);
        let col = rng.random_range(radius..cols - radius);
        let blob = VisualBlob { row, col, radius };
        let mask = blob.mask(rows, cols);
        if !mask.intersects(occupied) {
            return Ok((blob, mask));
        }
    }
    Err(DmcError::Config(
        "visual blobs cannot be packed without overlap; lower the component count".into(),
    ))
}

fn place_audio(config: &SynthConfig, occupied: &BinaryGrid, rng: &mut ChaCha8Rng) -> Result<(AudioBlob, BinaryGrid)> {
    let (rows, cols) = config.audio_grid_shape();
    let (tlo, thi) = config.time_span_range;
    let (flo, fhi) = config.freq_span_range;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let time_len = rng.random_range(tlo..=thi);
        let freq_len = rng.random_range(flo..=fhi);
        let blob = AudioBlob {
            time_start: rng.random_range(0..=rows - time_len),
            time_len,
            freq_start: rng.random_range(0..=cols - freq_len),
            freq_len,
        };
        let mask = blob.mask(rows, cols);
        if !mask.intersects(occupied) {
            return Ok((blob, mask));
        }
    }
    Err(DmcError::Config(
        "audio blobs cannot be packed without overlap; lower the component count".into(),
    ))
}

fn paint(
    values: &mut [f64],
    grid_width: usize,
    channels: usize,
    patch: (usize, usize),
    mask: &BinaryGrid,
    texture: &[f64],
    amplitude: f64,
) {
    let (ph, pw) = patch;
    for pr in 0..mask.rows() {
        for pc in 0..mask.cols() {
            if !mask.get(pr, pc) {
                continue;
            }
            for dy in 0..ph {
                for dx in 0..pw {
                    for ch in 0..channels {
                        let idx = ((pr * ph + dy) * grid_width + pc * pw + dx) * channels + ch;
                        values[idx] = amplitude * texture[(dy * pw + dx) * channels + ch];
                    }
                }
            }
        }
    }
}

/// Generates one scene, deterministically in `seed`.
pub fn generate_pair(seed: u64, config: &SynthConfig) -> Result<ScenePair> {
    config.validate()?;
    let world = World::new(config)?;
    generate_pair_in(seed, config, &world)
}

/// Generates one scene against a prebuilt world.
pub fn generate_pair_in(seed: u64, config: &SynthConfig, world: &World) -> Result<ScenePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sounding = rng.random_range(config.min_components..=config.max_components);
    let distractor = rng.random::<f64>() < config.distractor_prob;
    let total = sounding + usize::from(distractor);
    let (alo, ahi) = config.amplitude_range;
    let amplitudes: Vec<f64> = (0..total)
        .map(|_| if alo < ahi { rng.random_range(alo..ahi) } else { alo })
        .collect();
    let latents = sample_latents(&amplitudes, config, world, &mut rng)?;

    let (vrows, vcols) = config.visual_grid_shape();
    let (arows, acols) = config.audio_grid_shape();
    let mut v_occupied = BinaryGrid::empty(vrows, vcols);
    let mut a_occupied = BinaryGrid::empty(arows, acols);
    let mut components = Vec::with_capacity(total);
    let mut visual_masks = Vec::with_capacity(total);
    let mut audio_masks = Vec::with_capacity(total);
    let mut silent_flags = Vec::with_capacity(total);
    for (id, lat) in latents.iter().enumerate() {
        let silent = id >= sounding;
        let (visual_blob, vmask) = place_visual(config, &v_occupied, &mut rng)?;
        v_occupied = v_occupied.union(&vmask)?;
        let (audio_blob, amask) = if silent {
            (None, BinaryGrid::empty(arows, acols))
        } else {
            let (blob, mask) = place_audio(config, &a_occupied, &mut rng)?;
            a_occupied = a_occupied.union(&mask)?;
            (Some(blob), mask)
        };
        components.push(ComponentSignature {
            id,
            latent: lat.latent.clone(),
            visual_blob,
            audio_blob,
            amplitude: amplitudes[id],
        });
        visual_masks.push(vmask);
        audio_masks.push(amask);
        silent_flags.push(silent);
    }

    let mut visual = vec![0.0; config.visual_height * config.visual_width * config.visual_channels];
    let mut audio = vec![0.0; config.audio_frames * config.audio_bins];
    for (c, lat) in components.iter().zip(&latents) {
        let id = c.id;
        paint(
            &mut visual,
            config.visual_width,
            config.visual_channels,
            config.visual_patch,
            &visual_masks[id],
            &lat.visual,
            c.amplitude,
        );
        if !silent_flags[id] {
            paint(
                &mut audio,
                config.audio_bins,
                1,
                config.audio_patch,
                &audio_masks[id],
                &lat.audio,
                c.amplitude,
            );
        }
    }
    if config.noise_sigma > 0.0 {
        let noise =
            Normal::new(0.0, config.noise_sigma).map_err(|e| DmcError::Config(format!("noise distribution: {e}")))?;
        for v in visual.iter_mut().chain(audio.iter_mut()) {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(ScenePair {
        visual: RawGrid::new(
            config.visual_height,
            config.visual_width,
            config.visual_channels,
            visual,
        )?,
        audio: RawGrid::new(config.audio_frames, config.audio_bins, 1, audio)?,
        components,
        visual_masks,
        audio_masks,
        silent_flags,
    })
}

/// Seed of the `index`-th scene in a dataset rooted at `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Generates `count` scenes with seeds `scene_seed(base_seed, i)`.
pub fn generate_dataset(base_seed: u64, count: usize, config: &SynthConfig) -> Result<Vec<ScenePair>> {
    config.validate()?;
    let world = World::new(config)?;
    (0..count)
        .map(|i| generate_pair_in(scene_seed(base_seed, i), config, &world))
        .collect()
}

/// Positive scene indices with one mismatched negative index each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchBatch {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Pairs every positive index with a negative drawn uniformly from the other
/// dataset entries.
pub fn make_batch(dataset_len: usize, indices: &[usize], seed: u64) -> Result<MatchBatch> {
    if dataset_len < 2 {
        return Err(DmcError::Config(format!(
            "negative sampling needs at least 2 scenes, got {dataset_len}"
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset_len) {
        return Err(DmcError::InvalidArgument(format!(
            "index {bad} is outside a dataset of {dataset_len} scenes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = indices
        .iter()
        .map(|&i| (i + 1 + rng.random_range(0..dataset_len - 1)) % dataset_len)
        .collect();
    Ok(MatchBatch {
        positives: indices.to_vec(),
        negatives,
    })
}

/// Draws `batch_size` positive indices uniformly with replacement, then their negatives.
pub fn sample_batch(dataset_len: usize, batch_size: usize, seed: u64) -> Result<MatchBatch> {
    if dataset_len < 2 {
        return make_batch(dataset_len, &[], seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..dataset_len)).collect();
    make_batch(dataset_len, &indices, rng.random())
}

/// `count` distinct indices below `len`, in a seeded random order.
pub fn sample_distinct(len: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, len, count.min(len)).into_vec()
}
