//! Domain types, the line-delimited JSON detection stream, and segmentation
//! of that stream into fixed-length frame windows.

use std::io::{BufRead, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of frames per processing window.
pub const DEFAULT_SEGMENT_LEN: u64 = 90;

/// Reference frame rate the motion shrinkage is calibrated against.
pub const BASELINE_FPS: f64 = 30.0;

/// Axis-aligned box in pixel coordinates, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::Input(format!("non-finite box {:?}", b.to_array())));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::Input(format!(
                "box must have positive size, got {:?}",
                b.to_array()
            )));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.w).min(other.x + other.w);
        let y1 = (self.y + self.h).min(other.y + other.h);
        if x1 > x0 && y1 > y0 {
            Some(BoundingBox {
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
            })
        } else {
            None
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        match self.intersection(other) {
            Some(i) => {
                let inter = i.area();
                inter / (self.area() + other.area() - inter)
            }
            None => 0.0,
        }
    }

    /// Clip to `[0, width) x [0, height)`. `None` when nothing is left.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let frame = BoundingBox {
            x: 0.0,
            y: 0.0,
            w: width as f64,
            h: height as f64,
        };
        self.intersection(&frame)
    }

    /// Grow every side by `margin` pixels.
    pub fn expand(&self, margin: f64) -> BoundingBox {
        BoundingBox {
            x: self.x - margin,
            y: self.y - margin,
            w: self.w + 2.0 * margin,
            h: self.h + 2.0 * margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    /// Strict-threshold detector output.
    Detector,
    /// Loose-threshold compensation candidate.
    Proposal,
}

/// One face observation in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u64,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub embedding: Vec<f64>,
    pub source: DetectionSource,
}

impl Detection {
    pub fn center(&self) -> (f64, f64) {
        self.bbox.center()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamHeader {
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub embedding_dim: usize,
    /// Multiplier on the motion shrinkage (`kappa`).
    pub quality_scale: f64,
}

impl StreamHeader {
    pub fn new(fps: f64, width: u32, height: u32, embedding_dim: usize) -> Result<Self> {
        let h = StreamHeader {
            fps,
            width,
            height,
            embedding_dim,
            quality_scale: 1.0,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Input(format!("fps must be positive, got {}", self.fps)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Input("frame size must be positive".into()));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Input("embedding_dim must be positive".into()));
        }
        if !(self.quality_scale.is_finite() && self.quality_scale > 0.0) {
            return Err(Error::Input(format!(
                "quality_scale must be positive, got {}",
                self.quality_scale
            )));
        }
        Ok(())
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }
}

/// A contiguous window of frames and the detections that fall in it.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub index: usize,
    pub frames: Range<u64>,
    pub detections: Vec<Detection>,
}

// ---------------------------------------------------------------------------
// Wire format

fn default_quality() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type")]
enum WireRecord {
    #[serde(rename = "header")]
    Header {
        fps: f64,
        width: u32,
        height: u32,
        embedding_dim: usize,
        #[serde(default = "default_quality")]
        quality_scale: f64,
    },
    #[serde(rename = "det")]
    Det {
        frame: u64,
        #[serde(rename = "box")]
        bbox: [f64; 4],
        conf: f64,
        emb: Vec<f64>,
        source: DetectionSource,
    },
}

/// Streaming reader over the detection wire format.
///
/// The header is consumed on construction; iteration yields detections and
/// validates embedding length, confidence range, box shape and frame order.
pub struct StreamReader<R> {
    lines: std::io::Lines<R>,
    header: StreamHeader,
    line_no: usize,
    last_frame: Option<u64>,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut line_no = 0;
        let header = loop {
            line_no += 1;
            let line = match lines.next() {
                Some(l) => l?,
                None => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "missing header record".into(),
                    })
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<WireRecord>(&line) {
                Ok(WireRecord::Header {
                    fps,
                    width,
                    height,
                    embedding_dim,
                    quality_scale,
                }) => {
                    let h = StreamHeader {
                        fps,
                        width,
                        height,
                        embedding_dim,
                        quality_scale,
                    };
                    h.validate().map_err(|e| Error::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    break h;
                }
                Ok(WireRecord::Det { .. }) => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "first record must be the header".into(),
                    })
                }
                Err(e) => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: e.to_string(),
                    })
                }
            }
        };
        Ok(StreamReader {
            lines,
            header,
            line_no,
            last_frame: None,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    fn decode(&mut self, line: &str) -> Result<Detection> {
        let line_no = self.line_no;
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let record: WireRecord =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let (frame, bbox, conf, emb, source) = match record {
            WireRecord::Det {
                frame,
                bbox,
                conf,
                emb,
                source,
            } => (frame, bbox, conf, emb, source),
            WireRecord::Header { .. } => return Err(parse_err("duplicate header".into())),
        };
        if emb.len() != self.header.embedding_dim {
            return Err(Error::Schema {
                line: line_no,
                expected: self.header.embedding_dim,
                found: emb.len(),
            });
        }
        if !(0.0..=1.0).contains(&conf) {
            return Err(parse_err(format!("confidence {conf} outside [0, 1]")));
        }
        if emb.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite embedding value".into()));
        }
        let bbox = BoundingBox::from_array(bbox).map_err(|e| parse_err(e.to_string()))?;
        if let Some(prev) = self.last_frame {
            if frame < prev {
                return Err(Error::Ordering {
                    line: line_no,
                    frame,
                    previous: prev,
                });
            }
        }
        self.last_frame = Some(frame);
        Ok(Detection {
            frame,
            bbox,
            confidence: conf,
            embedding: emb,
            source,
        })
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<Detection>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.decode(&line));
        }
    }
}

/// Read a whole stream into memory.
pub fn parse_stream<R: BufRead>(reader: R) -> Result<(StreamHeader, Vec<Detection>)> {
    let mut stream = StreamReader::new(reader)?;
    let header = *stream.header();
    let detections = stream.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((header, detections))
}

pub fn write_header<W: Write>(mut out: W, header: &StreamHeader) -> Result<()> {
    let rec = WireRecord::Header {
        fps: header.fps,
        width: header.width,
        height: header.height,
        embedding_dim: header.embedding_dim,
        quality_scale: header.quality_scale,
    };
    serde_json::to_writer(&mut out, &rec)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_detection<W: Write>(mut out: W, det: &Detection) -> Result<()> {
    let rec = WireRecord::Det {
        frame: det.frame,
        bbox: det.bbox.to_array(),
        conf: det.confidence,
        emb: det.embedding.clone(),
        source: det.source,
    };
    serde_json::to_writer(&mut out, &rec)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn write_stream<W: Write>(mut out: W, header: &StreamHeader, dets: &[Detection]) -> Result<()> {
    write_header(&mut out, header)?;
    for d in dets {
        write_detection(&mut out, d)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Segmentation

/// Groups a frame-ordered detection iterator into consecutive windows of
/// `segment_len` frames. Windows without detections are still emitted so
/// frame ranges stay contiguous.
pub struct Segmenter<I: Iterator> {
    inner: std::iter::Peekable<I>,
    segment_len: u64,
    next_index: usize,
    /// Frames known to exist past the last detection.
    total_frames: Option<u64>,
}

impl<I> Segmenter<I>
where
    I: Iterator<Item = Result<Detection>>,
{
    pub fn new(inner: I, segment_len: u64) -> Result<Self> {
        if segment_len == 0 {
            return Err(Error::Parameter("segment_len must be at least 1".into()));
        }
        Ok(Segmenter {
            inner: inner.peekable(),
            segment_len,
            next_index: 0,
            total_frames: None,
        })
    }

    /// Declare the stream length so trailing empty frames are covered.
    pub fn with_total_frames(mut self, frames: u64) -> Self {
        self.total_frames = Some(frames);
        self
    }
}

impl<I> Iterator for Segmenter<I>
where
    I: Iterator<Item = Result<Detection>>,
{
    type Item = Result<Segment>;

    fn next(&mut self) -> Option<Self::Item> {
        let start = self.next_index as u64 * self.segment_len;
        let end = start + self.segment_len;
        if matches!(self.inner.peek(), Some(Err(_))) {
            return self.inner.next().map(|r| r.map(|_| unreachable!()));
        }
        let has_input = self.inner.peek().is_some();
        if !has_input && !self.total_frames.is_some_and(|t| start < t) {
            return None;
        }
        let mut detections = Vec::new();
        loop {
            match self.inner.peek() {
                Some(Ok(d)) if d.frame < end => {
                    if d.frame < start {
                        return Some(Err(Error::Input(format!(
                            "frame {} arrived after segment starting at {start}",
                            d.frame
                        ))));
                    }
                    if let Some(Ok(d)) = self.inner.next() {
                        detections.push(d);
                    }
                }
                Some(Err(_)) => return self.inner.next().map(|r| r.map(|_| unreachable!())),
                _ => break,
            }
        }
        let stop = if self.inner.peek().is_some() {
            end
        } else {
            let observed = detections.last().map_or(start + 1, |d| d.frame + 1);
            self.total_frames.map_or(observed, |t| t.max(observed)).min(end)
        };
        let index = self.next_index;
        self.next_index += 1;
        Some(Ok(Segment {
            index,
            frames: start..stop,
            detections,
        }))
    }
}

/// Partition frame-ordered detections into windows of `segment_len` frames.
/// Segment `k` covers `[k * len, (k + 1) * len)`; the last one may be partial.
pub fn segment_stream(detections: Vec<Detection>, segment_len: u64) -> Result<Vec<Segment>> {
    Segmenter::new(detections.into_iter().map(Ok), segment_len)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(frame: u64) -> Detection {
        Detection {
            frame,
            bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            confidence: 0.9,
            embedding: vec![1.0, 0.0],
            source: DetectionSource::Detector,
        }
    }

    #[test]
    fn parses_single_detection() {
        let input = "{\"type\":\"header\",\"fps\":30,\"width\":1280,\"height\":720,\"embedding_dim\":4,\"quality_scale\":1.0}\n\
                     {\"type\":\"det\",\"frame\":0,\"box\":[10,10,20,20],\"conf\":0.99,\"emb\":[1,0,0,0],\"source\":\"detector\"}\n";
        let (hdr, dets) = parse_stream(input.as_bytes()).unwrap();
        assert_eq!(hdr.fps, 30.0);
        assert_eq!(hdr.embedding_dim, 4);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].center(), (20.0, 20.0));
        assert_eq!(dets[0].source, DetectionSource::Detector);
    }

    #[test]
    fn embedding_length_mismatch_is_schema_error() {
        let input = "{\"type\":\"header\",\"fps\":30,\"width\":64,\"height\":64,\"embedding_dim\":4}\n\
                     {\"type\":\"det\",\"frame\":0,\"box\":[1,1,2,2],\"conf\":0.5,\"emb\":[1,0,0],\"source\":\"detector\"}\n";
        let err = parse_stream(input.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            Error::Schema {
                line: 2,
                expected: 4,
                found: 3
            }
        ));
    }

    #[test]
    fn empty_body_gives_no_detections() {
        let input = "{\"type\":\"header\",\"fps\":30,\"width\":64,\"height\":64,\"embedding_dim\":4}\n";
        let (hdr, dets) = parse_stream(input.as_bytes()).unwrap();
        assert_eq!(hdr.quality_scale, 1.0);
        assert!(dets.is_empty());
    }

    #[test]
    fn frame_regression_is_ordering_error() {
        let input = "{\"type\":\"header\",\"fps\":30,\"width\":64,\"height\":64,\"embedding_dim\":1}\n\
                     {\"type\":\"det\",\"frame\":5,\"box\":[1,1,2,2],\"conf\":0.5,\"emb\":[1],\"source\":\"detector\"}\n\
                     {\"type\":\"det\",\"frame\":4,\"box\":[1,1,2,2],\"conf\":0.5,\"emb\":[1],\"source\":\"detector\"}\n";
        let err = parse_stream(input.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Ordering { line: 3, frame: 4, previous: 5 }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = "{\"type\":\"header\",\"fps\":30,\"width\":64,\"height\":64,\"embedding_dim\":1}\n\
                     {\"type\":\"det\",\"frame\":0,\"box\":[1,1,2,2],\"conf\":0.5,\"emb\":[1],\"source\":\"detector\"}\n\
                     not json\n";
        let err = parse_stream(input.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn bad_confidence_and_box_rejected() {
        let hdr = "{\"type\":\"header\",\"fps\":30,\"width\":64,\"height\":64,\"embedding_dim\":1}\n";
        let conf = format!("{hdr}{{\"type\":\"det\",\"frame\":0,\"box\":[1,1,2,2],\"conf\":1.5,\"emb\":[1],\"source\":\"detector\"}}\n");
        assert!(parse_stream(conf.as_bytes()).is_err());
        let bx = format!("{hdr}{{\"type\":\"det\",\"frame\":0,\"box\":[1,1,0,2],\"conf\":0.5,\"emb\":[1],\"source\":\"detector\"}}\n");
        assert!(parse_stream(bx.as_bytes()).is_err());
    }

    #[test]
    fn segments_exact_division() {
        let dets: Vec<_> = (0..270).map(det).collect();
        let segs = segment_stream(dets, 90).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs.iter().all(|s| s.detections.len() == 90));
        assert_eq!(segs[2].frames, 180..270);
    }

    #[test]
    fn segments_partial_tail() {
        // 6753 frames at 90 per window: 75 full windows and a 3-frame tail.
        let dets: Vec<_> = (0..6753).map(det).collect();
        let segs = segment_stream(dets, 90).unwrap();
        assert_eq!(segs.len(), 76);
        assert!(segs[..75].iter().all(|s| s.frames.end - s.frames.start == 90));
        assert_eq!(segs[75].frames, 6750..6753);
    }

    #[test]
    fn segments_empty_input() {
        assert!(segment_stream(Vec::new(), 90).unwrap().is_empty());
    }

    #[test]
    fn empty_windows_are_kept() {
        let segs = segment_stream(vec![det(1), det(25)], 10).unwrap();
        assert_eq!(segs.len(), 3);
        assert!(segs[1].detections.is_empty());
        assert_eq!(segs[1].frames, 10..20);
        assert_eq!(segs[2].frames, 20..26);
    }

    #[test]
    fn total_frames_extends_tail() {
        let segs: Vec<_> = Segmenter::new(vec![det(3)].into_iter().map(Ok), 10)
            .unwrap()
            .with_total_frames(25)
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].frames, 20..25);
    }

    #[test]
    fn zero_segment_len_rejected() {
        assert!(segment_stream(vec![det(0)], 0).is_err());
    }

    #[test]
    fn iou_basics() {
        let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BoundingBox::new(5.0, 0.0, 10.0, 10.0).unwrap();
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        let far = BoundingBox::new(100.0, 100.0, 1.0, 1.0).unwrap();
        assert_eq!(a.iou(&far), 0.0);
        assert!(far.clamp_to(50, 50).is_none());
    }
}
