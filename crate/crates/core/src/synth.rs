//! Seeded synthetic scenes: moving faces, a corrupted detection stream and
//! the ground truth it was derived from.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`, so a seed
//! reproduces the same stream on every platform.
//!
//! Each face keeps to its own vertical lane and follows a sinusoidal path
//! whose per-frame center displacement never exceeds `max_step`. Detector
//! misses come in bursts: a burst starts on an eligible frame with
//! probability `q = p_fn / (b (1 - p_fn) + p_fn)` and lasts a geometric
//! number of frames with mean `b`, which keeps the long-run miss rate at
//! `p_fn`; `b = 1` gives independent misses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::metrics::{GroundTruth, GtEntry, IdentityId};
use crate::model::{BoundingBox, Detection, DetectionSource, StreamHeader};
use crate::pixelate::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub n_faces: usize,
    pub frames: u64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub embedding_dim: usize,
    /// Largest per-frame displacement of a face center, pixels.
    pub max_step: f64,
    /// Face widths are drawn from this range (pixels), height is 1.2x width.
    pub face_size: (f64, f64),
    /// Norm of the per-frame embedding perturbation before renormalization.
    pub tau: f64,
    /// Long-run fraction of missed detections.
    pub p_fn: f64,
    /// Mean miss burst length in frames (at least 1).
    pub burst_mean: f64,
    /// Chance per face slot per frame of a spurious detection.
    pub p_fp: f64,
    /// Standard deviation of detector box noise, pixels.
    pub box_jitter: f64,
    /// Standard deviation of proposal center noise, pixels.
    pub proposal_noise: f64,
    /// Chance that a missed frame also carries a far-off bogus proposal.
    pub proposal_outliers: f64,
    /// Identity that must stay visible (the streamer).
    pub streamer: Option<IdentityId>,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_faces: 3,
            frames: 3000,
            fps: 30.0,
            width: 1280,
            height: 720,
            embedding_dim: 128,
            max_step: 4.0,
            face_size: (70.0, 120.0),
            tau: 0.3,
            p_fn: 0.05,
            burst_mean: 3.0,
            p_fp: 0.02,
            box_jitter: 1.0,
            proposal_noise: 2.0,
            proposal_outliers: 0.2,
            streamer: None,
            seed: 0,
        }
    }
}

/// Common frame sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    P480,
    P720,
    P1080,
}

impl Resolution {
    pub fn size(self) -> (u32, u32) {
        match self {
            Resolution::P480 => (854, 480),
            Resolution::P720 => (1280, 720),
            Resolution::P1080 => (1920, 1080),
        }
    }
}

impl ScenarioSpec {
    pub fn preset(n_faces: usize, res: Resolution) -> Self {
        let (width, height) = res.size();
        let scale = height as f64 / 720.0;
        ScenarioSpec {
            n_faces,
            width,
            height,
            face_size: (70.0 * scale, 120.0 * scale),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Spec(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        rate("p_fn", self.p_fn)?;
        rate("p_fp", self.p_fp)?;
        rate("proposal_outliers", self.proposal_outliers)?;
        if self.p_fn >= 1.0 {
            return Err(Error::Spec("p_fn = 1 leaves no detections".into()));
        }
        if !(self.fps > 0.0) || self.width == 0 || self.height == 0 || self.embedding_dim == 0 {
            return Err(Error::Spec("fps, frame size and embedding size must be positive".into()));
        }
        if !(self.max_step >= 0.0) {
            return Err(Error::Spec(format!("max_step must be non-negative, got {}", self.max_step)));
        }
        if self.max_step > self.width.min(self.height) as f64 {
            return Err(Error::Spec(format!(
                "max_step {} exceeds the {}x{} frame",
                self.max_step, self.width, self.height
            )));
        }
        if !(self.burst_mean >= 1.0) {
            return Err(Error::Spec(format!("burst_mean must be at least 1, got {}", self.burst_mean)));
        }
        let (lo, hi) = self.face_size;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Spec(format!("bad face size range {lo}..{hi}")));
        }
        if hi * 1.2 > self.height as f64 {
            return Err(Error::Spec(format!("faces of {hi} px do not fit a {} px frame", self.height)));
        }
        if self.n_faces > 0 && self.width as f64 / (self.n_faces as f64) < 16.0 {
            return Err(Error::Spec(format!("{} faces do not fit a {} px wide frame", self.n_faces, self.width)));
        }
        if let Some(s) = self.streamer {
            if s as usize >= self.n_faces {
                return Err(Error::Spec(format!("streamer {s} is not one of {} faces", self.n_faces)));
            }
        }
        if !(self.tau >= 0.0 && self.box_jitter >= 0.0 && self.proposal_noise >= 0.0) {
            return Err(Error::Spec("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Smooth path of one face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacePath {
    pub center: (f64, f64),
    pub amplitude: (f64, f64),
    pub period: (f64, f64),
    pub phase: (f64, f64),
    pub width: f64,
}

impl FacePath {
    pub fn bbox(&self, frame: u64) -> BoundingBox {
        let t = frame as f64;
        let tau = std::f64::consts::TAU;
        let cx = self.center.0 + self.amplitude.0 * (tau * t / self.period.0 + self.phase.0).sin();
        let cy = self.center.1 + self.amplitude.1 * (tau * t / self.period.1 + self.phase.1).sin();
        BoundingBox::from_center(cx, cy, self.width, self.width * 1.2)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub header: StreamHeader,
    pub detections: Vec<Detection>,
    /// True identity of each detection; `None` for spurious ones.
    pub labels: Vec<Option<IdentityId>>,
    pub ground_truth: GroundTruth,
    pub identity_means: Vec<Vec<f64>>,
    pub paths: Vec<FacePath>,
    /// Mean embedding of the streamer, if there is one.
    pub reference: Option<Vec<f64>>,
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>();
        if n > 1e-12 {
            normalize(&mut v);
            return v;
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn perturbed(rng: &mut ChaCha8Rng, mean: &[f64], tau: f64) -> Vec<f64> {
    if tau == 0.0 {
        return mean.to_vec();
    }
    let scale = tau / (mean.len() as f64).sqrt();
    let mut v: Vec<f64> = mean
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + scale * z
        })
        .collect();
    normalize(&mut v);
    v
}

fn jittered(rng: &mut ChaCha8Rng, b: &BoundingBox, sd: f64) -> BoundingBox {
    if sd == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sd).unwrap();
    let (cx, cy) = b.center();
    BoundingBox::from_center(
        cx + n.sample(rng),
        cy + n.sample(rng),
        (b.w + n.sample(rng)).max(4.0),
        (b.h + n.sample(rng)).max(4.0),
    )
}

fn random_box(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> BoundingBox {
    let w = rng.random_range(spec.face_size.0..=spec.face_size.1);
    let h = w * 1.2;
    let x = rng.random_range(0.0..=(spec.width as f64 - w).max(0.0));
    let y = rng.random_range(0.0..=(spec.height as f64 - h).max(0.0));
    BoundingBox::from_center(x + w / 2.0, y + h / 2.0, w, h)
}

fn plan_paths(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Vec<FacePath> {
    let lane = spec.width as f64 / spec.n_faces.max(1) as f64;
    let tau = std::f64::consts::TAU;
    (0..spec.n_faces)
        .map(|k| {
            let (lo, hi) = spec.face_size;
            let width = rng.random_range(lo..=hi).min(0.5 * lane);
            let height = width * 1.2;
            let amp_x = ((lane - 1.1 * width) / 2.0 * 0.8).max(0.0);
            let amp_y = ((spec.height as f64 - 1.1 * height) / 2.0 * 0.6).max(0.0);
            let amplitude = (
                amp_x * rng.random_range(0.5..=1.0),
                amp_y * rng.random_range(0.5..=1.0),
            );
            // Peak speed per axis is A * 2 pi / P; keep the 2-D step under max_step.
            let min_period = |a: f64| {
                if spec.max_step > 0.0 {
                    (tau * a * std::f64::consts::SQRT_2 / spec.max_step).max(60.0)
                } else {
                    f64::INFINITY
                }
            };
            let period = (
                min_period(amplitude.0) * rng.random_range(1.0..=2.0),
                min_period(amplitude.1) * rng.random_range(1.0..=2.0),
            );
            let amplitude = if spec.max_step > 0.0 { amplitude } else { (0.0, 0.0) };
            let period = if spec.max_step > 0.0 { period } else { (1.0, 1.0) };
            FacePath {
                center: (lane * (k as f64 + 0.5), spec.height as f64 / 2.0),
                amplitude,
                period,
                phase: (rng.random_range(0.0..tau), rng.random_range(0.0..tau)),
                width,
            }
        })
        .collect()
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let header = StreamHeader::new(spec.fps, spec.width, spec.height, spec.embedding_dim)?;
    let paths = plan_paths(&mut rng, spec);
    let means: Vec<Vec<f64>> = (0..spec.n_faces)
        .map(|_| random_unit(&mut rng, spec.embedding_dim))
        .collect();

    let start_prob = spec.p_fn / (spec.burst_mean * (1.0 - spec.p_fn) + spec.p_fn);
    let stay_prob = 1.0 - 1.0 / spec.burst_mean;
    let mut in_burst = vec![false; spec.n_faces];

    let mut detections = Vec::new();
    let mut labels = Vec::new();
    let mut gt = Vec::new();
    for f in 0..spec.frames {
        let mut proposals = Vec::new();
        for (k, path) in paths.iter().enumerate() {
            let id = k as IdentityId;
            let truth = path.bbox(f);
            gt.push(GtEntry {
                frame: f,
                id,
                bbox: truth,
                must_blur: spec.streamer != Some(id),
            });
            let missed = if in_burst[k] {
                rng.random_bool(stay_prob)
            } else {
                rng.random_bool(start_prob)
            };
            in_burst[k] = missed;
            if missed {
                let noisy = jittered(&mut rng, &truth, spec.proposal_noise);
                proposals.push((
                    Some(id),
                    Detection {
                        frame: f,
                        bbox: noisy,
                        confidence: rng.random_range(0.3..0.6),
                        embedding: perturbed(&mut rng, &means[k], spec.tau * 1.5),
                        source: DetectionSource::Proposal,
                    },
                ));
                if rng.random_bool(spec.proposal_outliers) {
                    let (cx, cy) = truth.center();
                    let (ox, oy) = (
                        rng.random_range(1.5..3.0) * truth.w * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                        rng.random_range(0.5..1.5) * truth.h * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                    );
                    proposals.push((
                        None,
                        Detection {
                            frame: f,
                            bbox: BoundingBox::from_center(cx + ox * 0.5, cy + oy * 0.5, truth.w, truth.h),
                            confidence: rng.random_range(0.3..0.6),
                            embedding: random_unit(&mut rng, spec.embedding_dim),
                            source: DetectionSource::Proposal,
                        },
                    ));
                }
            } else {
                detections.push(Detection {
                    frame: f,
                    bbox: jittered(&mut rng, &truth, spec.box_jitter),
                    confidence: rng.random_range(0.9..1.0),
                    embedding: perturbed(&mut rng, &means[k], spec.tau),
                    source: DetectionSource::Detector,
                });
                labels.push(Some(id));
            }
        }
        for _ in 0..spec.n_faces {
            if !rng.random_bool(spec.p_fp) {
                continue;
            }
            let emb = loop {
                let e = random_unit(&mut rng, spec.embedding_dim);
                if means.iter().all(|m| cosine(&e, m) < 0.3) {
                    break e;
                }
            };
            detections.push(Detection {
                frame: f,
                bbox: random_box(&mut rng, spec),
                confidence: rng.random_range(0.5..0.95),
                embedding: emb,
                source: DetectionSource::Detector,
            });
            labels.push(None);
        }
        for (label, p) in proposals {
            detections.push(p);
            labels.push(label);
        }
    }

    let reference = spec.streamer.map(|s| means[s as usize].clone());
    Ok(Scenario {
        header,
        detections,
        labels,
        ground_truth: GroundTruth::new(gt),
        identity_means: means,
        paths,
        reference,
    })
}

/// A frame image: a smooth background with a high-contrast pattern inside
/// every face box, so blurring visibly changes the face pixels.
pub fn render_frame(scenario: &Scenario, frame: u64) -> Image {
    let (w, h) = (scenario.header.width, scenario.header.height);
    let mut data = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h {
        for x in 0..w {
            data.push((x * 255 / w.max(1)) as u8);
            data.push((y * 255 / h.max(1)) as u8);
            data.push(96);
        }
    }
    let mut img = Image::new(w, h, 3, data).expect("buffer sized from header");
    for (k, path) in scenario.paths.iter().enumerate() {
        let Some(b) = path.bbox(frame).clamp_to(w, h) else {
            continue;
        };
        let cell = 4 + k as u32 % 4;
        for y in b.y as u32..((b.y + b.h) as u32).min(h) {
            for x in b.x as u32..((b.x + b.w) as u32).min(w) {
                let on = ((x / cell) + (y / cell)).is_multiple_of(2);
                let v = if on { 250 } else { 5 };
                img.set(x, y, 0, v);
                img.set(x, y, 1, if on { 5 } else { 200 });
                img.set(x, y, 2, (40 * k as u32 % 256) as u8);
            }
        }
    }
    img
}
