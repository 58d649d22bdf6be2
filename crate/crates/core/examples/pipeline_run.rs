//! The full file-level pipeline: synthesize a stream and its ground truth,
//! run clustering, refinement and masking with the streamer exempt by
//! reference embedding, and print the metrics and stage timings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use faceveil::metrics::MetricsReport;
use faceveil::model::write_stream;
use faceveil::pipeline::{run, RunConfig};
use faceveil::synth::{generate, ScenarioSpec};

pub fn run_example(dir: &Path) -> faceveil::Result<MetricsReport> {
    let s = generate(&ScenarioSpec {
        frames: 900,
        streamer: Some(2),
        ..Default::default()
    })?;
    let create = |name: &str| {
        let path = dir.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| faceveil::Error::file(&path, e))
    };
    let mut w = create("detections.jsonl")?;
    write_stream(&mut w, &s.header, &s.detections)?;
    w.flush()?;
    let mut w = create("gt.jsonl")?;
    s.ground_truth.write(&mut w)?;
    w.flush()?;
    let mut w = create("reference.json")?;
    serde_json::to_writer(&mut w, s.reference.as_ref().expect("streamer set"))?;
    w.flush()?;

    let summary = run(&RunConfig {
        input: dir.join("detections.jsonl"),
        out_dir: dir.join("out"),
        ground_truth: Some(dir.join("gt.jsonl")),
        exempt_ref: Some(dir.join("reference.json")),
        ..Default::default()
    })?;
    let out = &summary.output;
    println!(
        "{} segments, {} trajectories, exempt {:?}, {} masks",
        out.segments,
        out.trajectories.len(),
        out.exempt,
        out.masks.len()
    );
    for (stage, stats) in &out.timings.report().stages {
        println!("{stage:>10}: p50 {:.2} ms, p95 {:.2} ms", stats.p50_ms, stats.p95_ms);
    }
    let m = summary.metrics.expect("ground truth given");
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(m)
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    let dir = std::env::temp_dir().join("faceveil-pipeline-example");
    std::fs::create_dir_all(&dir).map_err(|e| faceveil::Error::file(&dir, e))?;
    run_example(&dir).map(|_| ())
}
