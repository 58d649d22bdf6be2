//! Blurring faces on raw frames.
//!
//! Frames travel as binary PPM (`P6`, or `P5` for grayscale) named
//! `frame_%06d.ppm`. Every mosaic applied is written to a mask log, one JSON
//! object per line, which the metrics read back.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoundingBox;
use crate::piap::ClusterId;
use crate::trajectory::Trajectory;

/// An 8-bit image with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Parameter(format!("images have 1 or 3 channels, not {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(Error::Input(format!(
                "{width}x{height}x{channels} image needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self> {
        let n = width as usize * height as usize * channels as usize;
        Image::new(width, height, channels, vec![value; n])
    }

    fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width as usize + x) * self.channels as usize + c
    }

    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.index(x as usize, y as usize, c as usize)]
    }

    pub fn set(&mut self, x: u32, y: u32, c: u8, v: u8) {
        let i = self.index(x as usize, y as usize, c as usize);
        self.data[i] = v;
    }
}

fn read_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let b = byte[0];
        if b == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b as char);
    }
    if tok.is_empty() {
        return Err(Error::Input("truncated PPM header".into()));
    }
    Ok(tok)
}

pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Image> {
    let magic = read_token(&mut r)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::Input(format!("unsupported image format {other:?}"))),
    };
    let num = |t: String| -> Result<u32> {
        t.parse()
            .map_err(|_| Error::Input(format!("bad PPM header field {t:?}")))
    };
    let width = num(read_token(&mut r)?)?;
    let height = num(read_token(&mut r)?)?;
    let maxval = num(read_token(&mut r)?)?;
    if maxval != 255 {
        return Err(Error::Input(format!("only 8-bit PPM is supported, maxval {maxval}")));
    }
    let mut data = vec![0u8; width as usize * height as usize * channels as usize];
    r.read_exact(&mut data)?;
    Image::new(width, height, channels, data)
}

pub fn write_ppm<W: Write>(mut w: W, img: &Image) -> Result<()> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    write!(w, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

pub fn frame_path(dir: &Path, frame: u64) -> PathBuf {
    dir.join(format!("frame_{frame:06}.ppm"))
}

pub fn load_frame(dir: &Path, frame: u64) -> Result<Image> {
    let path = frame_path(dir, frame);
    let f = fs::File::open(&path).map_err(|e| Error::file(&path, e))?;
    read_ppm(BufReader::new(f))
}

pub fn save_frame(dir: &Path, frame: u64, img: &Image) -> Result<()> {
    let path = frame_path(dir, frame);
    let f = fs::File::create(&path).map_err(|e| Error::file(&path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_ppm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

/// Frame numbers of every `frame_NNNNNN.ppm` in `dir`, ascending.
pub fn list_frames(dir: &Path) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(n) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".ppm"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            out.push(n);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Normalized samples of `exp(-u^2 / 2 sigma^2)` for `u` in
/// `[-radius, radius]`; the radius defaults to `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64, radius: Option<usize>) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("blur sigma must be positive, got {sigma}")));
    }
    let radius = radius.unwrap_or((3.0 * sigma).ceil() as usize);
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let u = i as f64 - radius as f64;
            (-u * u / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)` covered by `b` within the image.
fn pixel_rect(img: &Image, b: &BoundingBox) -> Option<(usize, usize, usize, usize)> {
    let c = b.clamp_to(img.width, img.height)?;
    let x0 = c.x.floor().max(0.0) as usize;
    let y0 = c.y.floor().max(0.0) as usize;
    let x1 = ((c.x + c.w).ceil() as usize).min(img.width as usize);
    let y1 = ((c.y + c.h).ceil() as usize).min(img.height as usize);
    (x1 > x0 && y1 > y0).then_some((x0, y0, x1, y1))
}

/// Separable Gaussian blur of the pixels under `b`. Samples beyond the
/// region edge repeat the edge pixel, so nothing outside the box is read
/// or written.
pub fn blur_region(img: &mut Image, b: &BoundingBox, sigma: f64) -> Result<()> {
    let kernel = gaussian_kernel(sigma, None)?;
    let Some((x0, y0, x1, y1)) = pixel_rect(img, b) else {
        return Ok(());
    };
    let (rw, rh) = (x1 - x0, y1 - y0);
    let ch = img.channels as usize;
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f64; rw * rh * ch];
    for y in 0..rh {
        for x in 0..rw {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let sx = (x as isize + k as isize - r).clamp(0, rw as isize - 1) as usize;
                    acc += w * img.data[img.index(x0 + sx, y0 + y, c)] as f64;
                }
                tmp[(y * rw + x) * ch + c] = acc;
            }
        }
    }
    for y in 0..rh {
        for x in 0..rw {
            for c in 0..ch {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let sy = (y as isize + k as isize - r).clamp(0, rh as isize - 1) as usize;
                    acc += w * tmp[(sy * rw + x) * ch + c];
                }
                let i = img.index(x0 + x, y0 + y, c);
                img.data[i] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(())
}

/// Replace each `block x block` tile under `b` by its mean color.
pub fn pixelate_blocks(img: &mut Image, b: &BoundingBox, block: u32) -> Result<()> {
    if block == 0 {
        return Err(Error::Parameter("block size must be positive".into()));
    }
    let Some((x0, y0, x1, y1)) = pixel_rect(img, b) else {
        return Ok(());
    };
    let ch = img.channels as usize;
    let block = block as usize;
    for by in (y0..y1).step_by(block) {
        for bx in (x0..x1).step_by(block) {
            let (ex, ey) = ((bx + block).min(x1), (by + block).min(y1));
            let count = ((ex - bx) * (ey - by)) as f64;
            for c in 0..ch {
                let mut sum = 0.0;
                for y in by..ey {
                    for x in bx..ex {
                        sum += img.data[img.index(x, y, c)] as f64;
                    }
                }
                let v = (sum / count).round() as u8;
                for y in by..ey {
                    for x in bx..ex {
                        let i = img.index(x, y, c);
                        img.data[i] = v;
                    }
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    /// `max(w, h) / divisor`.
    Proportional(f64),
    Fixed(f64),
}

impl Default for SigmaPolicy {
    fn default() -> Self {
        SigmaPolicy::Proportional(6.0)
    }
}

impl SigmaPolicy {
    pub fn sigma(&self, b: &BoundingBox) -> f64 {
        match *self {
            SigmaPolicy::Proportional(d) => (b.w.max(b.h) / d).max(1e-3),
            SigmaPolicy::Fixed(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MosaicMode {
    Blur(SigmaPolicy),
    Blocks(u32),
}

impl Default for MosaicMode {
    fn default() -> Self {
        MosaicMode::Blur(SigmaPolicy::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MosaicConfig {
    pub mode: MosaicMode,
    /// Pixels added on every side of each box before clamping.
    pub margin: f64,
}

/// One applied mosaic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskEntry {
    pub frame: u64,
    pub cluster: ClusterId,
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BoundingBox,
}

mod box_array {
    use super::BoundingBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BoundingBox, s: S) -> Result<S::Ok, S::Error> {
        b.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BoundingBox, D::Error> {
        let a = <[f64; 4]>::deserialize(d)?;
        BoundingBox::from_array(a).map_err(serde::de::Error::custom)
    }
}

pub type MaskLog = Vec<MaskEntry>;

/// Mask entries for every sample of every non-exempt trajectory, clamped to
/// the frame, sorted by `(frame, cluster)`.
pub fn plan_mosaics(
    trajs: &[Trajectory],
    exempt: &BTreeSet<ClusterId>,
    width: u32,
    height: u32,
    margin: f64,
) -> MaskLog {
    let mut log: MaskLog = trajs
        .iter()
        .filter(|t| !exempt.contains(&t.cluster_id))
        .flat_map(|t| {
            t.samples.iter().filter_map(move |s| {
                s.bbox.expand(margin).clamp_to(width, height).map(|b| MaskEntry {
                    frame: s.frame,
                    cluster: t.cluster_id,
                    bbox: b,
                })
            })
        })
        .collect();
    log.sort_by_key(|m| (m.frame, m.cluster));
    log
}

pub fn apply_mask(img: &mut Image, entry: &MaskEntry, mode: &MosaicMode) -> Result<()> {
    match mode {
        MosaicMode::Blur(policy) => blur_region(img, &entry.bbox, policy.sigma(&entry.bbox)),
        MosaicMode::Blocks(block) => pixelate_blocks(img, &entry.bbox, *block),
    }
}

/// Blur every non-exempt trajectory box on `frames`, where `frames[i]` is
/// frame `i`. Fails with [`Error::MissingFrame`] when a trajectory reaches
/// past the last image.
pub fn apply_mosaics(
    frames: &mut [Image],
    trajs: &[Trajectory],
    exempt: &BTreeSet<ClusterId>,
    cfg: &MosaicConfig,
) -> Result<MaskLog> {
    let (width, height) = match frames.first() {
        Some(f) => (f.width, f.height),
        None => (0, 0),
    };
    let log = plan_mosaics(trajs, exempt, width, height, cfg.margin);
    if let Some(t) = trajs
        .iter()
        .filter(|t| !exempt.contains(&t.cluster_id))
        .find(|t| t.span.1 as usize >= frames.len())
    {
        return Err(Error::MissingFrame(t.span.1.max(frames.len() as u64)));
    }
    for m in &log {
        apply_mask(&mut frames[m.frame as usize], m, &cfg.mode)?;
    }
    Ok(log)
}

/// Apply `log` to every frame image in `input`, writing all frames to
/// `output`. A logged frame without an image is an error.
pub fn mosaic_directory(input: &Path, output: &Path, log: &[MaskEntry], mode: &MosaicMode) -> Result<usize> {
    let frames = list_frames(input)?;
    let available: BTreeSet<u64> = frames.iter().copied().collect();
    if let Some(m) = log.iter().find(|m| !available.contains(&m.frame)) {
        return Err(Error::MissingFrame(m.frame));
    }
    fs::create_dir_all(output).map_err(|e| Error::file(output, e))?;
    let mut cursor = 0;
    for &f in &frames {
        let mut img = load_frame(input, f)?;
        while cursor < log.len() && log[cursor].frame < f {
            cursor += 1;
        }
        while cursor < log.len() && log[cursor].frame == f {
            apply_mask(&mut img, &log[cursor], mode)?;
            cursor += 1;
        }
        save_frame(output, f, &img)?;
    }
    Ok(frames.len())
}

pub fn write_mask_log<W: Write>(mut out: W, log: &[MaskEntry]) -> Result<()> {
    for m in log {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_mask_log<R: BufRead>(reader: R) -> Result<MaskLog> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
