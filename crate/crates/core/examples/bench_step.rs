//! Time the incremental clustering step for a growing crowd with a short
//! compaction window.

use faceveil::bench::{run_bench, BenchConfig, BenchReport};

pub fn run_example(frames: u64) -> faceveil::Result<Vec<BenchReport>> {
    let mut out = Vec::new();
    for faces in [2, 5, 10] {
        let r = run_bench(&BenchConfig {
            faces,
            frames,
            compaction_window: 30,
            ..Default::default()
        })?;
        println!(
            "{faces:>2} faces: {:>4.0} points, p50 {:.2} ms, p95 {:.2} ms, {:.1} sweeps per step",
            r.mean_dimension, r.step_p50_ms, r.step_p95_ms, r.mean_sweeps
        );
        out.push(r);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    run_example(90).map(|_| ())
}
