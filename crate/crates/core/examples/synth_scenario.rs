//! Generate a 1080p four-person scenario with a streamer and summarize what
//! the corrupted detector stream contains.

use faceveil::model::DetectionSource;
use faceveil::synth::{generate, Resolution, Scenario, ScenarioSpec};

pub fn run_example() -> faceveil::Result<Scenario> {
    let spec = ScenarioSpec {
        frames: 600,
        streamer: Some(0),
        seed: 3,
        ..ScenarioSpec::preset(4, Resolution::P1080)
    };
    let s = generate(&spec)?;
    let count = |src| s.detections.iter().filter(|d| d.source == src).count();
    let spurious = s.labels.iter().filter(|l| l.is_none()).count();
    let to_blur = s.ground_truth.entries.iter().filter(|e| e.must_blur).count();
    println!(
        "{}x{} at {} fps: {} true faces ({} to blur), {} detector records ({} spurious), {} proposals",
        s.header.width,
        s.header.height,
        s.header.fps,
        s.ground_truth.entries.len(),
        to_blur,
        count(DetectionSource::Detector),
        spurious,
        count(DetectionSource::Proposal)
    );
    Ok(s)
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    run_example().map(|_| ())
}
