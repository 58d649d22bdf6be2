//! Score a small hand-made mask log against ground truth: one exact hit,
//! one shifted hit that still clears IoU 0.5, one mask on nothing and one
//! face never masked.

use faceveil::metrics::{mosaic_counts, weighted_clustering_purity, GroundTruth, GtEntry, DEFAULT_IOU_THRESHOLD};
use faceveil::model::BoundingBox;
use faceveil::pixelate::MaskEntry;

fn bx(x: f64, y: f64) -> BoundingBox {
    BoundingBox::from_center(x, y, 40.0, 48.0)
}

/// Returns `(precision, recall, purity)`.
pub fn run_example() -> faceveil::Result<(f64, f64, f64)> {
    let gt = GroundTruth::new(vec![
        GtEntry { frame: 0, id: 0, bbox: bx(100.0, 100.0), must_blur: true },
        GtEntry { frame: 0, id: 1, bbox: bx(300.0, 100.0), must_blur: true },
        GtEntry { frame: 1, id: 0, bbox: bx(104.0, 100.0), must_blur: true },
        GtEntry { frame: 1, id: 1, bbox: bx(304.0, 100.0), must_blur: true },
        GtEntry { frame: 1, id: 2, bbox: bx(500.0, 300.0), must_blur: false },
    ]);
    let masks = vec![
        MaskEntry { frame: 0, cluster: 7, bbox: bx(100.0, 100.0) },
        MaskEntry { frame: 0, cluster: 9, bbox: bx(306.0, 104.0) },
        MaskEntry { frame: 1, cluster: 7, bbox: bx(104.0, 100.0) },
        MaskEntry { frame: 1, cluster: 9, bbox: bx(700.0, 50.0) },
    ];
    let c = mosaic_counts(&masks, &gt, DEFAULT_IOU_THRESHOLD)?;
    println!(
        "TP {} FP {} FN {}: precision {:.2}, recall {:.2}",
        c.true_positives,
        c.false_positives,
        c.false_negatives,
        c.precision(),
        c.recall()
    );
    // One pure cluster of 3 and one even 2+2 split.
    let pairs = [(0, 0), (0, 0), (0, 0), (1, 1), (1, 1), (1, 2), (1, 2)];
    let wcp = weighted_clustering_purity(&pairs);
    println!("purity {wcp:.3}");
    Ok((c.precision(), c.recall(), wcp))
}

#[allow(dead_code)]
fn main() -> faceveil::Result<()> {
    run_example().map(|_| ())
}
