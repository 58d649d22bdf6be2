//! Per-identity trajectories: assembly from clustered detections, gap
//! bookkeeping, pruning of unstable clusters, and the JSONL output format.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox, Detection, DetectionSource};
use crate::piap::ClusterId;

/// Default minimum number of observed samples a trajectory needs.
pub const DEFAULT_MIN_SUPPORT: usize = 5;
/// Default minimum ratio of observed samples to span length.
pub const DEFAULT_MIN_DENSITY: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleSource {
    Detector,
    Proposal,
    /// Filled from the Gaussian-process posterior mean (or interpolation).
    Gp,
}

impl From<DetectionSource> for SampleSource {
    fn from(s: DetectionSource) -> Self {
        match s {
            DetectionSource::Detector => SampleSource::Detector,
            DetectionSource::Proposal => SampleSource::Proposal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub source: SampleSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Raw,
    Refined,
}

/// Inclusive range of frames with no sample.
pub type Gap = (u64, u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub cluster_id: ClusterId,
    /// Strictly increasing in frame.
    pub samples: Vec<Sample>,
    /// First and last sampled frame, inclusive.
    pub span: (u64, u64),
    pub gaps: Vec<Gap>,
    pub status: Status,
    /// Mean embedding of the detections the cluster was built from.
    pub mean_embedding: Option<Vec<f64>>,
}

impl Trajectory {
    /// Build from samples sorted by strictly increasing frame.
    pub fn from_samples(cluster_id: ClusterId, samples: Vec<Sample>, status: Status) -> Result<Self> {
        let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
            return Err(Error::Input(format!("trajectory {cluster_id} has no samples")));
        };
        if samples.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return Err(Error::Input(format!(
                "trajectory {cluster_id} samples are not strictly increasing"
            )));
        }
        let span = (first.frame, last.frame);
        let gaps = compute_gaps(&samples);
        Ok(Trajectory {
            cluster_id,
            samples,
            span,
            gaps,
            status,
            mean_embedding: None,
        })
    }

    /// Number of frames from the first to the last sample, inclusive.
    pub fn span_len(&self) -> u64 {
        self.span.1 - self.span.0 + 1
    }

    /// Samples that came from a detector or proposal, not from filling.
    pub fn observed_count(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.source != SampleSource::Gp)
            .count()
    }

    pub fn density(&self) -> f64 {
        self.observed_count() as f64 / self.span_len() as f64
    }

    pub fn sample_at(&self, frame: u64) -> Option<&Sample> {
        self.samples
            .binary_search_by_key(&frame, |s| s.frame)
            .ok()
            .map(|i| &self.samples[i])
    }

    /// Every frame in the span carries exactly one sample.
    pub fn is_gap_free(&self) -> bool {
        self.gaps.is_empty() && self.samples.len() as u64 == self.span_len()
    }
}

/// Maximal runs of missing frames between consecutive samples.
pub fn compute_gaps(samples: &[Sample]) -> Vec<Gap> {
    samples
        .windows(2)
        .filter(|w| w[1].frame > w[0].frame + 1)
        .map(|w| (w[0].frame + 1, w[1].frame - 1))
        .collect()
}

/// Group detections by cluster label into one trajectory per cluster,
/// ordered by label. Several detections of one cluster in the same frame
/// are resolved by keeping the most confident one.
pub fn assemble(assignments: &[ClusterId], detections: &[Detection]) -> Result<Vec<Trajectory>> {
    if assignments.len() != detections.len() {
        return Err(Error::Input(format!(
            "{} assignments for {} detections",
            assignments.len(),
            detections.len()
        )));
    }
    struct Acc<'a> {
        best: BTreeMap<u64, &'a Detection>,
        emb_sum: Vec<f64>,
        count: usize,
    }
    let mut by_cluster: BTreeMap<ClusterId, Acc> = BTreeMap::new();
    for (&c, d) in assignments.iter().zip(detections) {
        let acc = by_cluster.entry(c).or_insert_with(|| Acc {
            best: BTreeMap::new(),
            emb_sum: vec![0.0; d.embedding.len()],
            count: 0,
        });
        if acc.emb_sum.len() == d.embedding.len() {
            acc.emb_sum.iter_mut().zip(&d.embedding).for_each(|(s, v)| *s += v);
            acc.count += 1;
        }
        acc.best
            .entry(d.frame)
            .and_modify(|cur| {
                if d.confidence > cur.confidence {
                    *cur = d;
                }
            })
            .or_insert(d);
    }
    by_cluster
        .into_iter()
        .map(|(c, acc)| {
            let samples = acc
                .best
                .values()
                .map(|d| Sample {
                    frame: d.frame,
                    bbox: d.bbox,
                    source: d.source.into(),
                })
                .collect();
            let mut t = Trajectory::from_samples(c, samples, Status::Raw)?;
            let count = acc.count as f64;
            t.mean_embedding = Some(acc.emb_sum.into_iter().map(|v| v / count).collect());
            Ok(t)
        })
        .collect()
}

/// Split trajectories into those that look like real faces and those that
/// look like detector false positives (too few samples, or too sparse).
pub fn prune_unstable(
    trajs: Vec<Trajectory>,
    min_support: usize,
    min_density: f64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if min_support == 0 {
        return Err(Error::Parameter("min_support must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&min_density) {
        return Err(Error::Parameter(format!(
            "min_density must lie in [0, 1], got {min_density}"
        )));
    }
    Ok(trajs
        .into_iter()
        .partition(|t| t.observed_count() >= min_support && t.density() >= min_density))
}

// ---------------------------------------------------------------------------
// JSONL

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    cluster: ClusterId,
    span: [u64; 2],
    samples: Vec<(u64, f64, f64, f64, f64, SampleSource)>,
}

pub fn write_trajectories<W: Write>(mut out: W, trajs: &[Trajectory]) -> Result<()> {
    for t in trajs {
        let rec = TrajectoryRecord {
            cluster: t.cluster_id,
            span: [t.span.0, t.span.1],
            samples: t
                .samples
                .iter()
                .map(|s| (s.frame, s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h, s.source))
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectories<R: BufRead>(reader: R) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let samples = rec
            .samples
            .into_iter()
            .map(|(frame, x, y, w, h, source)| {
                Ok(Sample {
                    frame,
                    bbox: BoundingBox::new(x, y, w, h)?,
                    source,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let refined = samples.iter().any(|s| s.source == SampleSource::Gp);
        let mut t = Trajectory::from_samples(
            rec.cluster,
            samples,
            if refined { Status::Refined } else { Status::Raw },
        )?;
        if t.gaps.is_empty() {
            t.status = Status::Refined;
        }
        if t.span != (rec.span[0], rec.span[1]) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("span {:?} disagrees with samples", rec.span),
            });
        }
        out.push(t);
    }
    Ok(out)
}
