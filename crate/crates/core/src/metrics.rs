//! Scoring mosaics and clusters against ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoundingBox;
use crate::pixelate::MaskEntry;
use crate::piap::ClusterId;
use crate::trajectory::{SampleSource, Trajectory};

pub type IdentityId = u32;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// One true face in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtEntry {
    pub frame: u64,
    pub id: IdentityId,
    #[serde(rename = "box", with = "box_array")]
    pub bbox: BoundingBox,
    pub must_blur: bool,
}

mod box_array {
    use super::BoundingBox;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(b: &BoundingBox, s: S) -> Result<S::Ok, S::Error> {
        b.to_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BoundingBox, D::Error> {
        BoundingBox::from_array(<[f64; 4]>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub entries: Vec<GtEntry>,
}

impl GroundTruth {
    pub fn new(mut entries: Vec<GtEntry>) -> Self {
        entries.sort_by_key(|e| (e.frame, e.id));
        GroundTruth { entries }
    }

    pub fn identities(&self) -> BTreeSet<IdentityId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn by_frame(&self) -> BTreeMap<u64, Vec<&GtEntry>> {
        let mut out: BTreeMap<u64, Vec<&GtEntry>> = BTreeMap::new();
        for e in &self.entries {
            out.entry(e.frame).or_default().push(e);
        }
        out
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(GroundTruth::new(entries))
    }
}

/// Greedy one-to-one matching by descending IoU; returns matched
/// `(a_index, b_index)` pairs whose IoU is at least `threshold`.
pub fn greedy_match(a: &[BoundingBox], b: &[BoundingBox], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let iou = x.iou(y);
            if iou >= threshold && iou > 0.0 {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MatchCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchCounts {
    /// 1.0 when no masks were emitted.
    pub fn precision(&self) -> f64 {
        let emitted = self.true_positives + self.false_positives;
        if emitted == 0 {
            1.0
        } else {
            self.true_positives as f64 / emitted as f64
        }
    }

    /// 1.0 when there was nothing to blur.
    pub fn recall(&self) -> f64 {
        let due = self.true_positives + self.false_negatives;
        if due == 0 {
            1.0
        } else {
            self.true_positives as f64 / due as f64
        }
    }
}

/// Counts pooled over all frames.
pub fn mosaic_counts(masks: &[MaskEntry], gt: &GroundTruth, iou_thresh: f64) -> Result<MatchCounts> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::Parameter(format!("IoU threshold must lie in (0, 1], got {iou_thresh}")));
    }
    let mut mask_frames: BTreeMap<u64, Vec<BoundingBox>> = BTreeMap::new();
    for m in masks {
        mask_frames.entry(m.frame).or_default().push(m.bbox);
    }
    let mut gt_frames: BTreeMap<u64, Vec<BoundingBox>> = BTreeMap::new();
    for e in gt.entries.iter().filter(|e| e.must_blur) {
        gt_frames.entry(e.frame).or_default().push(e.bbox);
    }
    let frames: BTreeSet<u64> = mask_frames.keys().chain(gt_frames.keys()).copied().collect();
    let mut counts = MatchCounts::default();
    for f in frames {
        let m = mask_frames.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let g = gt_frames.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let tp = greedy_match(m, g, iou_thresh).len();
        counts.true_positives += tp;
        counts.false_positives += m.len() - tp;
        counts.false_negatives += g.len() - tp;
    }
    Ok(counts)
}

pub fn mosaic_precision_recall(masks: &[MaskEntry], gt: &GroundTruth, iou_thresh: f64) -> Result<(f64, f64)> {
    let c = mosaic_counts(masks, gt, iou_thresh)?;
    Ok((c.precision(), c.recall()))
}

/// `sum_c n_c * purity_c / N` over `(cluster, identity)` pairs, where
/// `purity_c` is the largest identity share within cluster `c`. An empty
/// input scores 1.0.
pub fn weighted_clustering_purity(pairs: &[(ClusterId, IdentityId)]) -> f64 {
    if pairs.is_empty() {
        return 1.0;
    }
    let mut table: BTreeMap<ClusterId, BTreeMap<IdentityId, usize>> = BTreeMap::new();
    for &(c, id) in pairs {
        *table.entry(c).or_default().entry(id).or_default() += 1;
    }
    // n_c * (max_c / n_c) reduces to max_c.
    let dominant: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    dominant as f64 / pairs.len() as f64
}

/// Ground-truth identity for each observed trajectory sample, matching per
/// frame by IoU. Samples that match no true face are left out.
pub fn identify_samples(trajs: &[Trajectory], gt: &GroundTruth, iou_thresh: f64) -> Vec<(ClusterId, IdentityId)> {
    let frames = gt.by_frame();
    let mut per_frame: BTreeMap<u64, Vec<(ClusterId, BoundingBox)>> = BTreeMap::new();
    for t in trajs {
        for s in t.samples.iter().filter(|s| s.source != SampleSource::Gp) {
            per_frame.entry(s.frame).or_default().push((t.cluster_id, s.bbox));
        }
    }
    let mut out = Vec::new();
    for (f, samples) in per_frame {
        let Some(truth) = frames.get(&f) else { continue };
        let a: Vec<BoundingBox> = samples.iter().map(|s| s.1).collect();
        let b: Vec<BoundingBox> = truth.iter().map(|e| e.bbox).collect();
        for (i, j) in greedy_match(&a, &b, iou_thresh) {
            out.push((samples[i].0, truth[j].id));
        }
    }
    out
}

/// `(kept clusters, ground-truth identities)`.
pub fn cluster_count_check(trajs: &[Trajectory], gt: &GroundTruth) -> (usize, usize) {
    let found: BTreeSet<ClusterId> = trajs.iter().map(|t| t.cluster_id).collect();
    (found.len(), gt.identities().len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub iou_threshold: f64,
    pub wcp: f64,
    pub clusters_found: usize,
    pub clusters_expected: usize,
}

impl MetricsReport {
    pub fn compute(masks: &[MaskEntry], trajs: &[Trajectory], gt: &GroundTruth, iou_thresh: f64) -> Result<Self> {
        let c = mosaic_counts(masks, gt, iou_thresh)?;
        let (found, expected) = cluster_count_check(trajs, gt);
        Ok(MetricsReport {
            precision: c.precision(),
            recall: c.recall(),
            true_positives: c.true_positives,
            false_positives: c.false_positives,
            false_negatives: c.false_negatives,
            iou_threshold: iou_thresh,
            wcp: weighted_clustering_purity(&identify_samples(trajs, gt, iou_thresh)),
            clusters_found: found,
            clusters_expected: expected,
        })
    }
}
