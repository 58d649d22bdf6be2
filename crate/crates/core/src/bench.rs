//! Timing of the incremental clustering step on a synthetic crowd.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{segment_stream, DetectionSource};
use crate::pipeline::percentile;
use crate::piap::{PiapConfig, StreamClusterer};
use crate::synth::{generate, Resolution, ScenarioSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub faces: usize,
    pub frames: u64,
    /// Frames of new detections per step.
    pub step_frames: u64,
    pub compaction_window: u64,
    pub piap: PiapConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            faces: 10,
            frames: 180,
            step_frames: 1,
            compaction_window: 90,
            piap: PiapConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub faces: usize,
    pub step_frames: u64,
    pub compaction_window: u64,
    /// Steps timed (those after the window first fills).
    pub steps: usize,
    pub step_p50_ms: f64,
    pub step_p95_ms: f64,
    pub sweep_p50_ms: f64,
    pub mean_sweeps: f64,
    pub mean_dimension: f64,
    pub unconverged_steps: usize,
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.step_frames == 0 || cfg.frames <= cfg.compaction_window {
        return Err(Error::Parameter(
            "bench needs step_frames >= 1 and more frames than the compaction window".into(),
        ));
    }
    let spec = ScenarioSpec {
        frames: cfg.frames,
        seed: cfg.seed,
        ..ScenarioSpec::preset(cfg.faces, Resolution::P1080)
    };
    let scenario = generate(&spec)?;
    let observed: Vec<_> = scenario
        .detections
        .into_iter()
        .filter(|d| d.source == DetectionSource::Detector)
        .collect();
    let mut clusterer = StreamClusterer::new(scenario.header, cfg.piap)?;
    let mut step_ms = Vec::new();
    let mut sweep_ms = Vec::new();
    let mut sweeps = 0usize;
    let mut dims = 0usize;
    let mut unconverged = 0;
    for seg in segment_stream(observed, cfg.step_frames)? {
        if seg.detections.is_empty() {
            continue;
        }
        let start = Instant::now();
        let rep = clusterer.step(&seg.detections)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        clusterer.compact(cfg.compaction_window)?;
        if seg.frames.start < cfg.compaction_window {
            continue;
        }
        step_ms.push(ms);
        sweep_ms.push(ms / rep.iterations.max(1) as f64);
        sweeps += rep.iterations;
        dims += rep.dimension;
        if !rep.converged {
            unconverged += 1;
        }
    }
    let n = step_ms.len().max(1) as f64;
    Ok(BenchReport {
        faces: cfg.faces,
        step_frames: cfg.step_frames,
        compaction_window: cfg.compaction_window,
        steps: step_ms.len(),
        step_p50_ms: percentile(&step_ms, 50.0),
        step_p95_ms: percentile(&step_ms, 95.0),
        sweep_p50_ms: percentile(&sweep_ms, 50.0),
        mean_sweeps: sweeps as f64 / n,
        mean_dimension: dims as f64 / n,
        unconverged_steps: unconverged,
    })
}
