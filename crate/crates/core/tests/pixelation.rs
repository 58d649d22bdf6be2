use std::collections::BTreeSet;

use faceveil::model::BoundingBox;
use faceveil::pixelate::{
    apply_mosaics, blur_region, gaussian_kernel, pixelate_blocks, read_ppm, write_ppm, Image, MosaicConfig,
    MosaicMode,
};
use faceveil::trajectory::{Sample, SampleSource, Status, Trajectory};
use proptest::prelude::*;

/// Affine ramp plus a bounded pseudo-random ripple.
fn ramp(width: u32, height: u32, gx: f64, gy: f64, ripple: u8, seed: u64) -> Image {
    let mut data = Vec::with_capacity((width * height) as usize);
    let mut state = seed | 1;
    for y in 0..height {
        for x in 0..width {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let noise = if ripple == 0 { 0.0 } else { (state % (ripple as u64 + 1)) as f64 };
            data.push((40.0 + gx * x as f64 + gy * y as f64 + noise).clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(width, height, 1, data).unwrap()
}

fn mean_over(img: &Image, x0: u32, y0: u32, x1: u32, y1: u32) -> f64 {
    let mut sum = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            sum += img.get(x, y, 0) as f64;
        }
    }
    sum / ((x1 - x0) * (y1 - y0)) as f64
}

fn track(id: u32, frames: std::ops::Range<u64>, bbox: BoundingBox) -> Trajectory {
    let samples = frames
        .map(|f| Sample {
            frame: f,
            bbox,
            source: SampleSource::Detector,
        })
        .collect();
    Trajectory::from_samples(id, samples, Status::Refined).unwrap()
}

#[test]
fn ppm_round_trip() {
    let img = ramp(17, 9, 3.0, 5.0, 20, 4);
    let mut buf = Vec::new();
    write_ppm(&mut buf, &img).unwrap();
    assert_eq!(read_ppm(buf.as_slice()).unwrap(), img);
}

#[test]
fn blur_flattens_the_face_region() {
    let mut img = ramp(120, 120, 0.0, 0.0, 200, 9);
    let before = img.clone();
    let b = BoundingBox::new(20.0, 20.0, 60.0, 72.0).unwrap();
    blur_region(&mut img, &b, 12.0).unwrap();
    let spread = |im: &Image| {
        let m = mean_over(im, 30, 30, 70, 80);
        let mut v = 0.0;
        for y in 30..80 {
            for x in 30..70 {
                v += (im.get(x, y, 0) as f64 - m).powi(2);
            }
        }
        v / 2000.0
    };
    assert!(spread(&img) < 0.05 * spread(&before));
}

#[test]
fn mask_log_counts_every_sample_of_blurred_tracks() {
    let mut frames: Vec<Image> = (0..12).map(|_| Image::filled(64, 48, 3, 90).unwrap()).collect();
    let a = BoundingBox::new(4.0, 4.0, 20.0, 20.0).unwrap();
    let b = BoundingBox::new(30.0, 10.0, 20.0, 24.0).unwrap();
    let trajs = vec![track(0, 0..12, a), track(1, 3..9, b), track(2, 5..7, a)];
    let exempt = BTreeSet::from([1]);
    let log = apply_mosaics(&mut frames, &trajs, &exempt, &MosaicConfig::default()).unwrap();
    let expected: u64 = trajs
        .iter()
        .filter(|t| !exempt.contains(&t.cluster_id))
        .map(|t| t.span_len())
        .sum();
    assert_eq!(log.len() as u64, expected);
    assert!(log.iter().all(|m| m.cluster != 1));
    assert!(log.windows(2).all(|w| (w[0].frame, w[0].cluster) <= (w[1].frame, w[1].cluster)));
}

#[test]
fn exempting_every_track_leaves_frames_untouched() {
    let mut frames: Vec<Image> = (0..5).map(|i| ramp(40, 30, 1.0, 2.0, 30, i)).collect();
    let before = frames.clone();
    let trajs = vec![track(4, 0..5, BoundingBox::new(5.0, 5.0, 20.0, 20.0).unwrap())];
    let log = apply_mosaics(&mut frames, &trajs, &BTreeSet::from([4]), &MosaicConfig::default()).unwrap();
    assert!(log.is_empty());
    assert_eq!(frames, before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_normalized_and_symmetric(sigma in 0.2..20.0f64) {
        let k = gaussian_kernel(sigma, None).unwrap();
        prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() {
            prop_assert!((k[i] - k[k.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn interior_mean_survives_blur(
        gx in -0.8..0.8f64,
        gy in -0.8..0.8f64,
        ripple in 0u8..16,
        sigma in 0.5..4.0f64,
        x in 0.0..30.0f64,
        y in 0.0..30.0f64,
        w in 50.0..90.0f64,
        h in 50.0..90.0f64,
        seed in any::<u64>(),
    ) {
        let mut img = ramp(128, 128, gx, gy, ripple, seed);
        let before = img.clone();
        let b = BoundingBox::new(x, y, w, h).unwrap();
        blur_region(&mut img, &b, sigma).unwrap();
        let r = (3.0 * sigma).ceil() as u32;
        let (x0, y0) = (x.floor() as u32 + r, y.floor() as u32 + r);
        let (x1, y1) = ((x + w).ceil() as u32 - r, (y + h).ceil() as u32 - r);
        let delta = mean_over(&img, x0, y0, x1, y1) - mean_over(&before, x0, y0, x1, y1);
        prop_assert!(delta.abs() <= 1.0, "interior mean moved by {delta}");
    }

    #[test]
    fn pixels_outside_boxes_are_unchanged(
        boxes in prop::collection::vec((-20.0..100.0f64, -20.0..80.0f64, 1.0..60.0f64, 1.0..60.0f64), 1..4),
        blocks in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut img = ramp(96, 72, 1.3, 0.7, 60, seed);
        let before = img.clone();
        let boxes: Vec<BoundingBox> = boxes.into_iter().map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap()).collect();
        for b in &boxes {
            if blocks {
                pixelate_blocks(&mut img, b, 8).unwrap();
            } else {
                blur_region(&mut img, b, b.w.max(b.h) / 6.0).unwrap();
            }
        }
        for yy in 0..72u32 {
            for xx in 0..96u32 {
                let inside = boxes.iter().any(|b| {
                    let (px, py) = (xx as f64, yy as f64);
                    px + 1.0 > b.x.floor() && px < (b.x + b.w).ceil() && py + 1.0 > b.y.floor() && py < (b.y + b.h).ceil()
                });
                if !inside {
                    prop_assert_eq!(img.get(xx, yy, 0), before.get(xx, yy, 0), "pixel ({}, {})", xx, yy);
                }
            }
        }
    }

    #[test]
    fn block_mode_keeps_flat_regions(value in any::<u8>(), block in 1u32..16) {
        let mut img = Image::filled(50, 40, 3, value).unwrap();
        let before = img.clone();
        let mode = MosaicMode::Blocks(block);
        let trajs = vec![track(0, 0..1, BoundingBox::new(3.0, 2.0, 30.0, 30.0).unwrap())];
        let mut frames = vec![img.clone()];
        apply_mosaics(&mut frames, &trajs, &BTreeSet::new(), &MosaicConfig { mode, margin: 0.0 }).unwrap();
        img = frames.pop().unwrap();
        prop_assert_eq!(img, before);
    }
}
