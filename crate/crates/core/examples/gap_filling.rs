//! Fill a 30-frame detection gap in a moving face track. Two compensation
//! proposals sit in the gap: one on the face, one well off it. The Wilks
//! test keeps the first and the GP mean covers the rest.

use faceveil::gp::{refine_with_report, RefineConfig, RefineReport};
use faceveil::model::{BoundingBox, Detection, DetectionSource, StreamHeader};
use faceveil::trajectory::{Sample, SampleSource, Status, Trajectory};

fn face_at(frame: u64) -> BoundingBox {
    let t = frame as f64 / 150.0 * std::f64::consts::TAU;
    BoundingBox::from_center(640.0 + 100.0 * t.sin(), 360.0 + 50.0 * t.cos(), 90.0, 108.0)
}

fn proposal(frame: u64, bbox: BoundingBox) -> Detection {
    Detection {
        frame,
        bbox,
        confidence: 0.3,
        embedding: vec![0.0; 8],
        source: DetectionSource::Proposal,
    }
}

pub fn run_example() -> faceveil::Result<RefineReport> {
    let header = StreamHeader::new(30.0, 1280, 720, 8)?;
    let samples = (0..300)
        .filter(|f| !(135..165).contains(f))
        .map(|f| Sample {
            frame: f,
            bbox: face_at(f),
            source: SampleSource::Detector,
        })
        .collect();
    let track = Trajectory::from_samples(0, samples, Status::Raw)?;
    let good = face_at(150);
    let (cx, cy) = good.center();
    let bad = BoundingBox::from_center(cx + 70.0, cy, good.w, good.h);
    let proposals = [proposal(150, good), proposal(150, bad)];

    let (refined, report) = refine_with_report(&track, &proposals, &header, &RefineConfig::default())?;
    let mut worst: f64 = 0.0;
    for f in 135..165 {
        let s = refined.sample_at(f).expect("gap filled");
        let err = s.bbox.to_array().iter().zip(face_at(f).to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if f % 5 == 0 {
            println!("frame {f}: {:?} from {:?}", s.bbox.to_array().map(|v| v.round()), s.source);
        }
    }
    println!(
        "{} proposals accepted, {} rejected, {} GP frames, worst channel error {worst:.2} px",
        report.proposals_accepted, report.proposals_rejected, report.gp_frames
    );
    Ok(report)
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    run_example().map(|_| ())
}
