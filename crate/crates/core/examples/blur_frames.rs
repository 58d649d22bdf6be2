//! Blur two tracked faces on a short run of synthetic frames, leaving a
//! third exempt, then pixelate the same boxes in block mode for comparison.
//! Both versions are written as PPM files.

use std::collections::BTreeSet;
use std::path::Path;

use faceveil::model::BoundingBox;
use faceveil::pixelate::{apply_mosaics, save_frame, Image, MosaicConfig, MosaicMode};
use faceveil::trajectory::{Sample, SampleSource, Status, Trajectory};

fn checkerboard(width: u32, height: u32) -> faceveil::Result<Image> {
    let mut img = Image::filled(width, height, 3, 0)?;
    for y in 0..height {
        for x in 0..width {
            let v = if (x / 8 + y / 8) % 2 == 0 { 230 } else { 20 };
            for c in 0..3 {
                img.set(x, y, c, v);
            }
        }
    }
    Ok(img)
}

fn drifting(id: u32, frames: u64, x: f64) -> faceveil::Result<Trajectory> {
    let samples = (0..frames)
        .map(|f| Sample {
            frame: f,
            bbox: BoundingBox::from_center(x + 2.0 * f as f64, 60.0, 48.0, 56.0),
            source: SampleSource::Detector,
        })
        .collect();
    Trajectory::from_samples(id, samples, Status::Refined)
}

/// Writes frames under `out` and returns how many channel values the blur
/// changed.
pub fn run_example(out: &Path) -> faceveil::Result<usize> {
    let original = (0..4).map(|_| checkerboard(240, 120)).collect::<faceveil::Result<Vec<_>>>()?;
    let trajs = vec![drifting(0, 4, 40.0)?, drifting(1, 4, 120.0)?, drifting(2, 4, 190.0)?];
    let exempt = BTreeSet::from([1]);

    let mut blurred = original.clone();
    let log = apply_mosaics(&mut blurred, &trajs, &exempt, &MosaicConfig::default())?;
    let mut blocky = original.clone();
    let blocks = MosaicConfig {
        mode: MosaicMode::Blocks(12),
        margin: 4.0,
    };
    apply_mosaics(&mut blocky, &trajs, &exempt, &blocks)?;

    for sub in ["blur", "blocks"] {
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| faceveil::Error::file(&dir, e))?;
    }
    let mut changed = 0;
    for (f, (a, b)) in blurred.iter().zip(&original).enumerate() {
        changed += a.data.iter().zip(&b.data).filter(|(x, y)| x != y).count();
        save_frame(&out.join("blur"), f as u64, a)?;
        save_frame(&out.join("blocks"), f as u64, &blocky[f])?;
    }
    println!(
        "{} masks per mode, {changed} channel values blurred, frames in {}",
        log.len(),
        out.display()
    );
    Ok(changed)
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    run_example(&std::env::temp_dir().join("faceveil-blur-example")).map(|_| ())
}
