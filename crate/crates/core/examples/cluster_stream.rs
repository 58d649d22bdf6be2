//! Cluster a synthetic three-person stream segment by segment and print how
//! many identities the clusterer holds after each step.

use faceveil::model::{segment_stream, DetectionSource};
use faceveil::piap::{PiapConfig, StreamClusterer};
use faceveil::synth::{generate, ScenarioSpec};

/// Returns the number of distinct labels handed out.
pub fn run_example() -> faceveil::Result<usize> {
    let scenario = generate(&ScenarioSpec {
        frames: 450,
        ..Default::default()
    })?;
    let observed: Vec<_> = scenario
        .detections
        .into_iter()
        .filter(|d| d.source == DetectionSource::Detector)
        .collect();
    let mut clusterer = StreamClusterer::new(scenario.header, PiapConfig::default())?;
    let mut labels = Vec::new();
    for seg in segment_stream(observed, 90)? {
        let step = clusterer.step(&seg.detections)?;
        println!(
            "frames {:>4}..{:<4} {:>3} new points, {} clusters, {} sweeps",
            seg.frames.start,
            seg.frames.end,
            seg.detections.len(),
            step.clusters,
            step.iterations
        );
        labels.extend(step.labels);
        clusterer.compact(90)?;
    }
    labels.sort_unstable();
    labels.dedup();
    println!("{} labels used", labels.len());
    Ok(labels.len())
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    run_example().map(|_| ())
}
