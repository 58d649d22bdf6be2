#![allow(dead_code)]

use std::collections::HashMap;

use faceveil::model::{BoundingBox, Detection, DetectionSource, StreamHeader};
use faceveil::piap::SimilarityMatrix;
use faceveil::trajectory::{Sample, SampleSource, Status, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Best net similarity over every nonempty exemplar set: exemplars pay
/// their preference, everyone else joins the most similar exemplar.
pub fn exhaustive_optimum(s: &SimilarityMatrix) -> f64 {
    let n = s.dim();
    let mut best = f64::NEG_INFINITY;
    for mask in 1u32..(1 << n) {
        let mut total = 0.0;
        for i in 0..n {
            if mask & (1 << i) != 0 {
                total += s.get(i, i);
            } else {
                total += (0..n)
                    .filter(|&k| mask & (1 << k) != 0)
                    .map(|k| s.get(i, k))
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        best = best.max(total);
    }
    best
}

/// True when two label vectors describe the same partition.
pub fn same_partition<A, B>(a: &[A], b: &[B]) -> bool
where
    A: Copy + Eq + std::hash::Hash,
    B: Copy + Eq + std::hash::Hash,
{
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| {
        *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x
    })
}

pub fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Mutually orthogonal unit vectors (cosine margin 1 between identities).
pub fn orthonormal(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < k {
        let mut v = unit(rng, dim);
        for u in &out {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// A small stream of well-separated faces for clustering checks.
pub struct SeparatedStream {
    pub header: StreamHeader,
    pub segments: Vec<Vec<Detection>>,
    pub identities: Vec<Vec<usize>>,
}

/// Up to four faces on a 2x2 grid, each with an orthogonal identity
/// embedding plus small noise, random-walking at most 2 pixels per frame
/// while grid points sit 360 pixels apart. A face listed in `late` only
/// shows up from the second segment on.
pub fn separated_stream(seed: u64, faces: usize, seg_frames: u64, segments: usize, late: &[usize]) -> SeparatedStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 16;
    let header = StreamHeader::new(30.0, 1280, 720, dim).unwrap();
    let means = orthonormal(&mut rng, faces, dim);
    let step = 2.0;
    let lanes: Vec<(f64, f64)> = (0..faces)
        .map(|k| (320.0 + 640.0 * (k % 2) as f64, 180.0 + 360.0 * (k / 2) as f64))
        .collect();
    let mut out = SeparatedStream {
        header,
        segments: Vec::new(),
        identities: Vec::new(),
    };
    let mut pos = lanes.clone();
    for seg in 0..segments {
        let mut dets = Vec::new();
        let mut ids = Vec::new();
        for f in 0..seg_frames {
            let frame = seg as u64 * seg_frames + f;
            for k in 0..faces {
                let dx: f64 = rng.random_range(-step..step);
                let dy: f64 = rng.random_range(-step..step);
                pos[k] = (pos[k].0 + dx, pos[k].1 + dy);
                if seg == 0 && late.contains(&k) {
                    continue;
                }
                let mut e: Vec<f64> = means[k]
                    .iter()
                    .map(|m| m + 0.05 * { let g: f64 = StandardNormal.sample(&mut rng); g })
                    .collect();
                let n = e.iter().map(|x| x * x).sum::<f64>().sqrt();
                e.iter_mut().for_each(|x| *x /= n);
                dets.push(Detection {
                    frame,
                    bbox: BoundingBox::from_center(pos[k].0, pos[k].1, 80.0, 96.0),
                    confidence: 0.99,
                    embedding: e,
                    source: DetectionSource::Detector,
                });
                ids.push(k);
            }
        }
        out.segments.push(dets);
        out.identities.push(ids);
    }
    out
}

/// Box of a slow sinusoidal track at `frame`.
pub fn sine_box(frame: u64, amplitude: f64, period_frames: f64) -> BoundingBox {
    let t = frame as f64 / period_frames * std::f64::consts::TAU;
    BoundingBox::from_center(640.0 + amplitude * t.sin(), 360.0 + 0.5 * amplitude * t.cos(), 90.0, 108.0)
}

/// Detector trajectory of [`sine_box`] over `0..frames` with `gap`
/// (inclusive) removed.
pub fn sine_trajectory(frames: u64, gap: (u64, u64), amplitude: f64, period_frames: f64) -> Trajectory {
    let samples = (0..frames)
        .filter(|f| *f < gap.0 || *f > gap.1)
        .map(|f| Sample {
            frame: f,
            bbox: sine_box(f, amplitude, period_frames),
            source: SampleSource::Detector,
        })
        .collect();
    Trajectory::from_samples(0, samples, Status::Raw).unwrap()
}
