//! Binary scene and model files, and the dataset manifest.
//!
//! All integers are little-endian `u32`, all reals little-endian `f64`.

use std::path::Path;

use crate::clustering::{ClusterConfig, ProjectionBank};
use crate::encoder::{EncoderParams, Nonlinearity};
use crate::error::{DmcError, Result};
use crate::grid::{BinaryGrid, RawGrid};
use crate::loss_train::Model;
use crate::numerics::Matrix;
use crate::synth::{AudioBlob, ComponentSignature, ScenePair, VisualBlob};

pub const SCENE_MAGIC: &[u8; 4] = b"DMCS";
pub const SCENE_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"DMCM";
pub const MODEL_VERSION: u32 = 1;
pub const MANIFEST_HEADER: &str = "index,seed,file,sounding,silent";

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u8(&mut self, v: bool) {
        self.buf.push(u8::from(v));
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn mask(&mut self, m: &BinaryGrid) {
        self.buf.extend(m.cells().iter().map(|&c| u8::from(c)));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| DmcError::Format(format!("{} file truncated at byte {}", self.what, self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("four bytes")) as usize)
    }

    fn u8(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(DmcError::Format(format!("{} file has flag byte {other}", self.what))),
        }
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn mask(&mut self, rows: usize, cols: usize) -> Result<BinaryGrid> {
        let cells = (0..rows * cols).map(|_| self.u8()).collect::<Result<Vec<_>>>()?;
        BinaryGrid::new(rows, cols, cells)
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4)? != magic {
            return Err(DmcError::Format(format!("not a {} file", self.what)));
        }
        let found = self.u32()?;
        if found != version as usize {
            return Err(DmcError::Format(format!(
                "unsupported {} file version {found} (expected {version})",
                self.what
            )));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(DmcError::Format(format!(
                "{} file has {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Serializes a scene.
///
/// Layout: magic `DMCS`, version, then the dimensions visual height, width,
/// channels, audio frames, bins, visual patch-grid rows and columns, audio
/// patch-grid rows and columns, latent dimension and component count. Then
/// the visual and audio values row-major, then per component its id, silent
/// flag, amplitude, latent, disk (row, col, radius), audio flag and rectangle
/// (time start, time length, frequency start, frequency length), visual mask
/// bytes and audio mask bytes.
pub fn encode_scene(scene: &ScenePair) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(SCENE_MAGIC);
    w.u32(SCENE_VERSION as usize);
    let (vr, vc) = scene.visual_masks.first().map_or((0, 0), BinaryGrid::shape);
    let (ar, ac) = scene.audio_masks.first().map_or((0, 0), BinaryGrid::shape);
    let latent_dim = scene.components.first().map_or(0, |c| c.latent.len());
    for d in [
        scene.visual.height(),
        scene.visual.width(),
        scene.visual.channels(),
        scene.audio.height(),
        scene.audio.width(),
        vr,
        vc,
        ar,
        ac,
        latent_dim,
        scene.components.len(),
    ] {
        w.u32(d);
    }
    w.f64s(scene.visual.values());
    w.f64s(scene.audio.values());
    for (i, c) in scene.components.iter().enumerate() {
        w.u32(c.id);
        w.u8(scene.silent_flags[i]);
        w.f64s(&[c.amplitude]);
        w.f64s(&c.latent);
        w.u32(c.visual_blob.row);
        w.u32(c.visual_blob.col);
        w.u32(c.visual_blob.radius);
        let blob = c.audio_blob.unwrap_or(AudioBlob {
            time_start: 0,
            time_len: 0,
            freq_start: 0,
            freq_len: 0,
        });
        w.u8(c.audio_blob.is_some());
        w.u32(blob.time_start);
        w.u32(blob.time_len);
        w.u32(blob.freq_start);
        w.u32(blob.freq_len);
        w.mask(&scene.visual_masks[i]);
        w.mask(&scene.audio_masks[i]);
    }
    w.buf
}

pub fn decode_scene(bytes: &[u8]) -> Result<ScenePair> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "scene",
    };
    r.header(SCENE_MAGIC, SCENE_VERSION)?;
    let mut dims = [0usize; 11];
    for d in dims.iter_mut() {
        *d = r.u32()?;
    }
    let [vh, vw, vch, af, ab, vr, vc, ar, ac, latent_dim, count] = dims;
    let visual = RawGrid::new(vh, vw, vch, r.f64s(vh * vw * vch)?)?;
    let audio = RawGrid::new(af, ab, 1, r.f64s(af * ab)?)?;
    let mut components = Vec::with_capacity(count);
    let mut visual_masks = Vec::with_capacity(count);
    let mut audio_masks = Vec::with_capacity(count);
    let mut silent_flags = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.u32()?;
        let silent = r.u8()?;
        let amplitude = r.f64()?;
        let latent = r.f64s(latent_dim)?;
        let visual_blob = VisualBlob {
            row: r.u32()?,
            col: r.u32()?,
            radius: r.u32()?,
        };
        let has_audio = r.u8()?;
        let blob = AudioBlob {
            time_start: r.u32()?,
            time_len: r.u32()?,
            freq_start: r.u32()?,
            freq_len: r.u32()?,
        };
        components.push(ComponentSignature {
            id,
            latent,
            visual_blob,
            audio_blob: has_audio.then_some(blob),
            amplitude,
        });
        visual_masks.push(r.mask(vr, vc)?);
        audio_masks.push(r.mask(ar, ac)?);
        silent_flags.push(silent);
    }
    r.finish()?;
    Ok(ScenePair {
        visual,
        audio,
        components,
        visual_masks,
        audio_masks,
        silent_flags,
    })
}

fn nonlinearity_code(f: Nonlinearity) -> usize {
    match f {
        Nonlinearity::Tanh => 0,
        Nonlinearity::RationalCubic => 1,
        Nonlinearity::Identity => 2,
    }
}

fn nonlinearity_from_code(code: usize) -> Result<Nonlinearity> {
    match code {
        0 => Ok(Nonlinearity::Tanh),
        1 => Ok(Nonlinearity::RationalCubic),
        2 => Ok(Nonlinearity::Identity),
        other => Err(DmcError::Format(format!("unknown nonlinearity code {other}"))),
    }
}

/// Serializes a model.
///
/// Layout: magic `DMCM`, version, then k, m, n, clustering iterations,
/// nonlinearity code (0 tanh, 1 cubic, 2 identity), visual patch rows and
/// columns, visual channels, audio patch rows and columns, then `z` as f64,
/// then the parameter blocks in order: visual weight, visual bias, audio
/// weight, audio bias, projection matrices 0..k, each row-major.
pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION as usize);
    let v = &model.visual_encoder;
    let a = &model.audio_encoder;
    for d in [
        model.bank.k(),
        model.bank.m(),
        model.bank.n(),
        model.cluster.iterations,
        nonlinearity_code(v.nonlinearity),
        v.patch.0,
        v.patch.1,
        v.channels,
        a.patch.0,
        a.patch.1,
    ] {
        w.u32(d);
    }
    w.f64s(&[model.cluster.z]);
    for block in model.blocks() {
        w.f64s(block);
    }
    w.buf
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "model",
    };
    r.header(MODEL_MAGIC, MODEL_VERSION)?;
    let mut dims = [0usize; 10];
    for d in dims.iter_mut() {
        *d = r.u32()?;
    }
    let [k, m, n, iterations, code, vph, vpw, vch, aph, apw] = dims;
    let nonlinearity = nonlinearity_from_code(code)?;
    let z = r.f64()?;
    let vfan = vph * vpw * vch;
    let afan = aph * apw;
    let visual_encoder = EncoderParams::new(
        (vph, vpw),
        vch,
        Matrix::from_vec(n, vfan, r.f64s(n * vfan)?)?,
        r.f64s(n)?,
        nonlinearity,
    )?;
    let audio_encoder = EncoderParams::new(
        (aph, apw),
        1,
        Matrix::from_vec(n, afan, r.f64s(n * afan)?)?,
        r.f64s(n)?,
        nonlinearity,
    )?;
    let matrices = (0..k)
        .map(|_| Matrix::from_vec(m, n, r.f64s(m * n)?))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Model::new(
        visual_encoder,
        audio_encoder,
        ProjectionBank::new(matrices)?,
        ClusterConfig { k, iterations, z },
    )
}

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:05}.dmcs")
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub index: usize,
    pub seed: u64,
    pub file: String,
    pub sounding: usize,
    pub silent: usize,
}

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.index, e.seed, e.file, e.sounding, e.silent
        ));
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(DmcError::Format("manifest header is missing".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            let bad = || DmcError::Format(format!("manifest row {} is malformed", row + 1));
            if fields.len() != 5 {
                return Err(bad());
            }
            Ok(ManifestEntry {
                index: fields[0].parse().map_err(|_| bad())?,
                seed: fields[1].parse().map_err(|_| bad())?,
                file: fields[2].to_string(),
                sounding: fields[3].parse().map_err(|_| bad())?,
                silent: fields[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn read_scene(path: &Path) -> Result<ScenePair> {
    decode_scene(&std::fs::read(path)?)
}

pub fn read_model(path: &Path) -> Result<Model> {
    decode_model(&std::fs::read(path)?)
}

/// Loads every scene listed in `dir/manifest.csv`, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<Vec<ScenePair>> {
    let manifest = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| DmcError::Config(format!("cannot read dataset manifest {}: {e}", manifest.display())))?;
    parse_manifest(&text)?
        .iter()
        .map(|e| read_scene(&dir.join(&e.file)))
        .collect()
}
