//! End-to-end driver: segment the detection stream, cluster each segment
//! incrementally, fill trajectory gaps as segments close, blur every
//! non-exempt face and score the result.
//!
//! Only `detector` records are clustered. `proposal` records never form
//! clusters; they are offered to the gap filler, which accepts them only
//! when they pass the likelihood-ratio test.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::{fill_gaps, RefineConfig};
use crate::metrics::{GroundTruth, MetricsReport, DEFAULT_IOU_THRESHOLD};
use crate::model::{Detection, DetectionSource, Segmenter, StreamHeader, StreamReader, DEFAULT_SEGMENT_LEN};
use crate::piap::{ClusterId, PiapConfig, Preference, StreamClusterer};
use crate::pixelate::{mosaic_directory, plan_mosaics, write_mask_log, MaskLog, MosaicConfig, MosaicMode, SigmaPolicy};
use crate::trajectory::{
    assemble, prune_unstable, write_trajectories, Sample, Status, Trajectory, DEFAULT_MIN_DENSITY, DEFAULT_MIN_SUPPORT,
};

// ---------------------------------------------------------------------------
// Timing

/// Wall-clock samples per named stage.
#[derive(Debug, Clone, Default)]
pub struct Timings {
    samples: BTreeMap<String, Vec<f64>>,
}

impl Timings {
    pub fn record(&mut self, stage: &str, millis: f64) {
        self.samples.entry(stage.to_string()).or_default().push(millis);
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn samples(&self, stage: &str) -> &[f64] {
        self.samples.get(stage).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn report(&self) -> TimingReport {
        TimingReport {
            stages: self
                .samples
                .iter()
                .map(|(k, v)| (k.clone(), StageStats::from_samples(v)))
                .collect(),
        }
    }
}

/// Nearest-rank percentile of `values`; 0 for an empty slice.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageStats {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub total_ms: f64,
}

impl StageStats {
    pub fn from_samples(v: &[f64]) -> Self {
        StageStats {
            count: v.len(),
            p50_ms: percentile(v, 50.0),
            p95_ms: percentile(v, 95.0),
            total_ms: v.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub stages: BTreeMap<String, StageStats>,
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub segment_len: u64,
    /// Frames of history kept in the cluster state after each step.
    pub compaction_window: u64,
    pub piap: PiapConfig,
    /// Overrides the stream header's `quality_scale`.
    pub kappa: Option<f64>,
    pub refine: RefineConfig,
    pub min_support: usize,
    pub min_density: f64,
    pub mosaic: MosaicConfig,
    pub iou_threshold: f64,
    pub exempt_clusters: BTreeSet<ClusterId>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            segment_len: DEFAULT_SEGMENT_LEN,
            compaction_window: DEFAULT_SEGMENT_LEN,
            piap: PiapConfig::default(),
            kappa: None,
            refine: RefineConfig::default(),
            min_support: DEFAULT_MIN_SUPPORT,
            min_density: DEFAULT_MIN_DENSITY,
            mosaic: MosaicConfig::default(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            exempt_clusters: BTreeSet::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::Parameter(format!("{key}: expected true or false, got {other:?}"))),
    }
}

impl PipelineConfig {
    /// Apply one `key = value` setting. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "segment_len" => self.segment_len = parse_num(&key, v)?,
            "compaction_window" => self.compaction_window = parse_num(&key, v)?,
            "damping" => self.piap.ap.damping = parse_num(&key, v)?,
            "max_iters" => self.piap.ap.max_iters = parse_num(&key, v)?,
            "stable_window" => self.piap.ap.stable_window = parse_num(&key, v)?,
            "message_tol" => {
                self.piap.ap.message_tol = match v {
                    "none" => None,
                    num => Some(parse_num(&key, num)?),
                }
            }
            "preference" => {
                self.piap.preference = match v {
                    "median" => Preference::Median,
                    "minimum" | "min" => Preference::Minimum,
                    num => Preference::Value(parse_num(&key, num)?),
                }
            }
            "preference_floor" => {
                self.piap.preference_floor = match v {
                    "none" => None,
                    num => Some(parse_num(&key, num)?),
                }
            }
            "kappa" => self.kappa = Some(parse_num(&key, v)?),
            "literal_similarity" => self.piap.literal_similarity = parse_bool(&key, v)?,
            "alpha" => self.refine.alpha = parse_num(&key, v)?,
            "min_gp_points" => self.refine.min_gp_points = parse_num(&key, v)?,
            "context_frames" => self.refine.context_frames = parse_num(&key, v)?,
            "min_support" => self.min_support = parse_num(&key, v)?,
            "min_density" => self.min_density = parse_num(&key, v)?,
            "sigma_divisor" => {
                self.mosaic.mode = MosaicMode::Blur(SigmaPolicy::Proportional(parse_num(&key, v)?))
            }
            "blur_sigma" => self.mosaic.mode = MosaicMode::Blur(SigmaPolicy::Fixed(parse_num(&key, v)?)),
            "mode" => {
                self.mosaic.mode = match (v, self.mosaic.mode) {
                    ("blur", MosaicMode::Blur(p)) => MosaicMode::Blur(p),
                    ("blur", _) => MosaicMode::Blur(SigmaPolicy::default()),
                    ("blocks", MosaicMode::Blocks(b)) => MosaicMode::Blocks(b),
                    ("blocks", _) => MosaicMode::Blocks(16),
                    (other, _) => return Err(Error::Parameter(format!("mode: expected blur or blocks, got {other:?}"))),
                }
            }
            "block" => self.mosaic.mode = MosaicMode::Blocks(parse_num(&key, v)?),
            "box_margin" => self.mosaic.margin = parse_num(&key, v)?,
            "iou_threshold" => self.iou_threshold = parse_num(&key, v)?,
            "exempt_cluster" => {
                for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    self.exempt_clusters.insert(parse_num(&key, part)?);
                }
            }
            other => return Err(Error::Parameter(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Apply a config file of `key = value` lines; `#` starts a comment.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.segment_len == 0 || self.compaction_window == 0 {
            return Err(Error::Parameter("segment_len and compaction_window must be positive".into()));
        }
        self.piap.ap.validate()?;
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::Parameter(format!("kappa must be positive, got {k}")));
            }
        }
        if let Some(f) = self.piap.preference_floor {
            if !(f >= 0.0 && f.is_finite()) {
                return Err(Error::Parameter(format!("preference_floor must be non-negative, got {f}")));
            }
        }
        if !(self.refine.alpha > 0.0 && self.refine.alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", self.refine.alpha)));
        }
        if self.min_support == 0 || !(0.0..=1.0).contains(&self.min_density) {
            return Err(Error::Parameter("min_support must be >= 1 and min_density in [0, 1]".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Parameter(format!("iou_threshold must lie in (0, 1], got {}", self.iou_threshold)));
        }
        if !(self.mosaic.margin >= 0.0) {
            return Err(Error::Parameter("box_margin must be non-negative".into()));
        }
        match self.mosaic.mode {
            MosaicMode::Blur(SigmaPolicy::Proportional(d)) if !(d > 0.0) => {
                Err(Error::Parameter("sigma_divisor must be positive".into()))
            }
            MosaicMode::Blur(SigmaPolicy::Fixed(s)) if !(s > 0.0) => {
                Err(Error::Parameter("blur_sigma must be positive".into()))
            }
            MosaicMode::Blocks(0) => Err(Error::Parameter("block must be positive".into())),
            _ => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Streamer exemption

/// The trajectory whose mean embedding points closest to `reference`
/// (cosine); ties go to the lowest cluster id.
pub fn exempt_by_reference(reference: &[f64], trajs: &[Trajectory]) -> Result<ClusterId> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rn = norm(reference);
    if !(rn > 0.0) {
        return Err(Error::Input("reference embedding has zero norm".into()));
    }
    let mut best: Option<(f64, ClusterId)> = None;
    let mut ordered: Vec<&Trajectory> = trajs.iter().collect();
    ordered.sort_by_key(|t| t.cluster_id);
    for t in ordered {
        let Some(m) = &t.mean_embedding else { continue };
        if m.len() != reference.len() {
            return Err(Error::Input(format!(
                "reference has {} dimensions, trajectory {} has {}",
                reference.len(),
                t.cluster_id,
                m.len()
            )));
        }
        let mn = norm(m);
        if mn == 0.0 {
            continue;
        }
        let cos = m.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / (mn * rn);
        if best.is_none_or(|(b, _)| cos > b) {
            best = Some((cos, t.cluster_id));
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| Error::NotFound("no trajectory to match the reference embedding against".into()))
}

pub fn read_reference(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: 1,
        message: format!("{}: {e}", path.display()),
    })
}

// ---------------------------------------------------------------------------
// Processing

/// Which faces stay visible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Exemption {
    pub clusters: BTreeSet<ClusterId>,
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub header: StreamHeader,
    /// Kept, gap-free trajectories ordered by cluster id.
    pub trajectories: Vec<Trajectory>,
    /// Clusters discarded as unstable.
    pub dropped: Vec<ClusterId>,
    pub masks: MaskLog,
    pub exempt: BTreeSet<ClusterId>,
    /// Label of every `detector` record, in stream order.
    pub labels: Vec<ClusterId>,
    pub segments: usize,
    pub unconverged_steps: usize,
    pub proposals_accepted: usize,
    pub proposals_rejected: usize,
    pub timings: Timings,
}

/// Gap filling state carried across segment closes.
#[derive(Default)]
struct GapFiller {
    filled: BTreeMap<ClusterId, Vec<Sample>>,
    /// Frames before this are settled for the cluster.
    settled: BTreeMap<ClusterId, u64>,
    accepted: usize,
    rejected: usize,
}

impl GapFiller {
    /// Fill gaps whose right-hand training context lies before `horizon`
    /// (all remaining gaps when `horizon` is `None`).
    fn close(
        &mut self,
        trajs: &[Trajectory],
        proposals: &[Detection],
        hdr: &StreamHeader,
        cfg: &PipelineConfig,
        horizon: Option<u64>,
        timings: &mut Timings,
    ) -> Result<()> {
        for t in trajs {
            let start = self.settled.get(&t.cluster_id).copied().unwrap_or(0);
            let gaps: Vec<_> = t
                .gaps
                .iter()
                .copied()
                .filter(|g| g.0 >= start)
                .take_while(|g| horizon.is_none_or(|h| g.1 + cfg.refine.context_frames < h))
                .collect();
            let Some(last) = gaps.last() else { continue };
            let (samples, report) = fill_gaps(t, &gaps, proposals, hdr, &cfg.refine)?;
            for ms in &report.fit_millis {
                timings.record("gp_fit", *ms);
            }
            self.accepted += report.proposals_accepted;
            self.rejected += report.proposals_rejected;
            self.settled.insert(t.cluster_id, last.1 + 1);
            self.filled.entry(t.cluster_id).or_default().extend(samples);
        }
        Ok(())
    }
}

fn stable(t: &Trajectory, cfg: &PipelineConfig) -> bool {
    t.observed_count() >= cfg.min_support && t.density() >= cfg.min_density
}

/// Run the whole pipeline on an in-memory stream. `detections` must be in
/// nondecreasing frame order.
pub fn process(
    header: &StreamHeader,
    detections: &[Detection],
    cfg: &PipelineConfig,
    exemption: &Exemption,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let mut header = *header;
    if let Some(k) = cfg.kappa {
        header.quality_scale = k;
    }
    header.validate()?;
    let mut timings = Timings::default();
    let total = Instant::now();

    let (observed, proposals): (Vec<Detection>, Vec<Detection>) = detections
        .iter()
        .cloned()
        .partition(|d| d.source == DetectionSource::Detector);

    let mut clusterer = StreamClusterer::new(header, cfg.piap).map_err(|e| e.in_stage("piap"))?;
    let mut labels: Vec<ClusterId> = Vec::with_capacity(observed.len());
    let mut filler = GapFiller::default();
    let mut segments = 0;
    let mut unconverged = 0;
    let mut seen = 0usize;

    let segmenter = Segmenter::new(observed.iter().cloned().map(Ok), cfg.segment_len).map_err(|e| e.in_stage("segment"))?;
    for seg in segmenter {
        let seg = seg.map_err(|e| e.in_stage("segment"))?;
        segments += 1;
        if !seg.detections.is_empty() {
            let start = Instant::now();
            let step = clusterer.step(&seg.detections).map_err(|e| e.in_stage("piap"))?;
            timings.record("piap_step", start.elapsed().as_secs_f64() * 1e3);
            if !step.converged {
                unconverged += 1;
            }
            labels.extend(step.labels);
            seen += seg.detections.len();
            timings.time("compaction", || clusterer.compact(cfg.compaction_window))
                .map_err(|e| e.in_stage("piap"))?;
        }
        let start = Instant::now();
        let trajs = assemble(&labels, &observed[..seen]).map_err(|e| e.in_stage("trajectory"))?;
        let live: Vec<Trajectory> = trajs.into_iter().filter(|t| stable(t, cfg)).collect();
        filler
            .close(&live, &proposals, &header, cfg, Some(seg.frames.end), &mut timings)
            .map_err(|e| e.in_stage("refine"))?;
        timings.record("refine", start.elapsed().as_secs_f64() * 1e3);
    }

    let start = Instant::now();
    let trajs = assemble(&labels, &observed).map_err(|e| e.in_stage("trajectory"))?;
    let (kept, dropped) =
        prune_unstable(trajs, cfg.min_support, cfg.min_density).map_err(|e| e.in_stage("trajectory"))?;
    filler
        .close(&kept, &proposals, &header, cfg, None, &mut timings)
        .map_err(|e| e.in_stage("refine"))?;
    let mut refined = Vec::with_capacity(kept.len());
    for t in kept {
        let mut samples = t.samples.clone();
        if let Some(extra) = filler.filled.remove(&t.cluster_id) {
            samples.extend(extra);
        }
        samples.sort_by_key(|s| s.frame);
        let mut r = Trajectory::from_samples(t.cluster_id, samples, Status::Refined).map_err(|e| e.in_stage("refine"))?;
        r.mean_embedding = t.mean_embedding;
        refined.push(r);
    }
    timings.record("refine", start.elapsed().as_secs_f64() * 1e3);

    let mut exempt = exemption.clusters.clone();
    exempt.extend(cfg.exempt_clusters.iter().copied());
    if let Some(reference) = &exemption.reference {
        exempt.insert(exempt_by_reference(reference, &refined).map_err(|e| e.in_stage("exempt"))?);
    }
    let masks = timings.time("plan_mosaics", || {
        plan_mosaics(&refined, &exempt, header.width, header.height, cfg.mosaic.margin)
    });
    timings.record("total", total.elapsed().as_secs_f64() * 1e3);

    Ok(PipelineOutput {
        header,
        trajectories: refined,
        dropped: dropped.iter().map(|t| t.cluster_id).collect(),
        masks,
        exempt,
        labels,
        segments,
        unconverged_steps: unconverged,
        proposals_accepted: filler.accepted,
        proposals_rejected: filler.rejected,
        timings,
    })
}

// ---------------------------------------------------------------------------
// File-level run

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    /// Raw frames (`frame_%06d.ppm`); blurred copies go to `out_dir/frames`.
    pub frames_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub exempt_ref: Option<PathBuf>,
}

/// Names of the files [`run`] writes inside the output directory.
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const MASKS_FILE: &str = "masks.jsonl";
pub const TIMING_FILE: &str = "timing.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output: PipelineOutput,
    pub metrics: Option<MetricsReport>,
    pub frames_written: usize,
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::file(path, e))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::file(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Read the stream, process it and write every artifact to `out_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    let mut timings = Timings::default();
    let start = Instant::now();
    let reader = open(&cfg.input).map_err(|e| e.in_stage("ingest"))?;
    let mut stream = StreamReader::new(reader).map_err(|e| e.in_stage("ingest"))?;
    let header = *stream.header();
    let detections: Vec<Detection> = stream
        .by_ref()
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("ingest"))?;
    timings.record("ingest", start.elapsed().as_secs_f64() * 1e3);

    let exemption = Exemption {
        clusters: BTreeSet::new(),
        reference: match &cfg.exempt_ref {
            Some(p) => Some(read_reference(p).map_err(|e| e.in_stage("exempt"))?),
            None => None,
        },
    };
    let mut output = process(&header, &detections, &cfg.pipeline, &exemption)?;
    for (k, v) in &timings.samples {
        for ms in v {
            output.timings.record(k, *ms);
        }
    }

    let out = &cfg.out_dir;
    let write = |f: &dyn Fn() -> Result<()>| f().map_err(|e| e.in_stage("output"));
    write(&|| fs::create_dir_all(out).map_err(|e| Error::file(out, e)))?;
    write(&|| {
        let mut w = create(&out.join(TRAJECTORIES_FILE))?;
        write_trajectories(&mut w, &output.trajectories)?;
        w.flush()?;
        Ok(())
    })?;
    write(&|| {
        let mut w = create(&out.join(MASKS_FILE))?;
        write_mask_log(&mut w, &output.masks)?;
        w.flush()?;
        Ok(())
    })?;

    let mut frames_written = 0;
    if let Some(dir) = &cfg.frames_dir {
        let start = Instant::now();
        frames_written = mosaic_directory(dir, &out.join("frames"), &output.masks, &cfg.pipeline.mosaic.mode)
            .map_err(|e| e.in_stage("pixelate"))?;
        output.timings.record("pixelate", start.elapsed().as_secs_f64() * 1e3);
    }

    let metrics = match &cfg.ground_truth {
        Some(p) => {
            let start = Instant::now();
            let gt = GroundTruth::read(open(p)?).map_err(|e| e.in_stage("metrics"))?;
            let m = MetricsReport::compute(&output.masks, &output.trajectories, &gt, cfg.pipeline.iou_threshold)
                .map_err(|e| e.in_stage("metrics"))?;
            output.timings.record("metrics", start.elapsed().as_secs_f64() * 1e3);
            write(&|| write_json(&out.join(METRICS_FILE), &m))?;
            Some(m)
        }
        None => None,
    };
    write(&|| write_json(&out.join(TIMING_FILE), &output.timings.report()))?;
    Ok(RunSummary {
        output,
        metrics,
        frames_written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoundingBox;

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 10.0);
        assert_eq!(percentile(&v, 95.0), 19.0);
        assert_eq!(percentile(&v, 100.0), 20.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
        assert_eq!(percentile(&[3.0], 95.0), 3.0);
    }

    #[test]
    fn config_text_overrides() {
        let mut c = PipelineConfig::default();
        c.apply_file_text("# tuned\nsegment-len = 45\ndamping=0.7\nmode = blocks\nblock = 8\nexempt_cluster = 2, 5\npreference = median\n")
            .unwrap();
        assert_eq!(c.segment_len, 45);
        assert_eq!(c.piap.ap.damping, 0.7);
        assert_eq!(c.mosaic.mode, MosaicMode::Blocks(8));
        assert_eq!(c.exempt_clusters, BTreeSet::from([2, 5]));
        assert_eq!(c.piap.preference, Preference::Median);
        let err = c.apply_file_text("segment_len = 10\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(c.apply_file_text("no equals sign").is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = PipelineConfig::default();
        c.refine.alpha = 1.0;
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            segment_len: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    fn traj_with(id: ClusterId, emb: Vec<f64>) -> Trajectory {
        let s = Sample {
            frame: 0,
            bbox: BoundingBox::new(0.0, 0.0, 5.0, 5.0).unwrap(),
            source: crate::trajectory::SampleSource::Detector,
        };
        let mut t = Trajectory::from_samples(id, vec![s], Status::Refined).unwrap();
        t.mean_embedding = Some(emb);
        t
    }

    #[test]
    fn reference_picks_closest() {
        let trajs = [traj_with(3, vec![1.0, 0.0]), traj_with(1, vec![0.0, 1.0])];
        assert_eq!(exempt_by_reference(&[0.1, 2.0], &trajs).unwrap(), 1);
        assert_eq!(exempt_by_reference(&[2.0, 0.1], &trajs).unwrap(), 3);
    }

    #[test]
    fn reference_tie_goes_to_lowest_id() {
        let trajs = [traj_with(7, vec![1.0, 1.0]), traj_with(4, vec![1.0, 1.0])];
        assert_eq!(exempt_by_reference(&[1.0, 0.0], &trajs).unwrap(), 4);
    }

    #[test]
    fn reference_without_trajectories() {
        assert!(matches!(exempt_by_reference(&[1.0], &[]), Err(Error::NotFound(_))));
    }

    #[test]
    fn stage_tag_in_message() {
        let e = Error::Input("boom".into()).in_stage("piap");
        assert_eq!(e.to_string(), "[piap] invalid input: boom");
        assert!(matches!(e.root(), Error::Input(_)));
    }
}
