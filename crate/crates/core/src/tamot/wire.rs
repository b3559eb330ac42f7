//! Line-delimited JSON formats for detections and tracks.
//!
//! Each file starts with a header line naming the format and version,
//! followed by one line per frame.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::candidates::Detection;
use super::geometry::{BBox, BinaryMask};
use super::tracker::{FrameOutput, TrackMode, TrackRecord};
use crate::error::{Error, Result};

pub const DETECTIONS_FORMAT: &str = "moetrack-detections";
pub const TRACKS_FORMAT: &str = "moetrack-tracks";
pub const WIRE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionHeader {
    format: String,
    version: u32,
    mask_height: usize,
    mask_width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    mask: Vec<u32>,
    s_mask: f64,
    s_occ: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    frame: usize,
    detections: Vec<DetectionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<[f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackHeader {
    format: String,
    version: u32,
    mode: TrackMode,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackLine {
    frame: usize,
    tracks: Vec<TrackRecord>,
}

/// Detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame: usize,
    pub detections: Vec<Detection>,
    pub prior: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFile {
    pub mask_height: usize,
    pub mask_width: usize,
    pub frames: Vec<DetectionFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFrame {
    pub frame: usize,
    pub tracks: Vec<TrackRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub mode: TrackMode,
    pub frames: Vec<TrackFrame>,
}

pub(crate) fn record_err(index: usize, message: impl ToString) -> Error {
    Error::Record {
        index,
        message: message.to_string(),
    }
}

pub(crate) fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))
}

/// Non-empty lines with their 0-based line numbers.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
}

pub(crate) fn parse_line<T: DeserializeOwned>(index: usize, line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| record_err(index, e))
}

fn check_box(index: usize, v: [f64; 4]) -> Result<BBox> {
    BBox::from_array(v).map_err(|e| record_err(index, e))
}

fn check_header(index: usize, format: &str, version: u32, want: &str) -> Result<()> {
    if format != want {
        return Err(record_err(index, format!("expected format `{want}`, found `{format}`")));
    }
    if version != WIRE_VERSION {
        return Err(record_err(index, format!("unsupported version {version}")));
    }
    Ok(())
}

impl DetectionFile {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = to_line(&DetectionHeader {
            format: DETECTIONS_FORMAT.into(),
            version: WIRE_VERSION,
            mask_height: self.mask_height,
            mask_width: self.mask_width,
        })?;
        out.push('\n');
        for f in &self.frames {
            let line = DetectionLine {
                frame: f.frame,
                detections: f
                    .detections
                    .iter()
                    .map(|d| DetectionRecord {
                        bbox: d.bbox.to_array(),
                        mask: d.mask.to_rle(),
                        s_mask: d.s_mask,
                        s_occ: d.s_occ,
                        feature: d.feature.clone(),
                    })
                    .collect(),
                prior: f.prior.map(BBox::to_array),
            };
            out.push_str(&to_line(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut it = lines(text);
        let (hi, hl) = it.next().ok_or_else(|| record_err(0, "missing header line"))?;
        let header: DetectionHeader = parse_line(hi, hl)?;
        check_header(hi, &header.format, header.version, DETECTIONS_FORMAT)?;
        let (h, w) = (header.mask_height, header.mask_width);
        let mut frames = Vec::new();
        for (i, l) in it {
            let line: DetectionLine = parse_line(i, l)?;
            let detections = line
                .detections
                .into_iter()
                .map(|r| {
                    let mask = BinaryMask::from_rle(&r.mask, h, w).map_err(|e| record_err(i, e))?;
                    if !(r.s_mask.is_finite() && r.s_occ.is_finite()) {
                        return Err(record_err(i, "non-finite detection score"));
                    }
                    Ok(Detection {
                        bbox: check_box(i, r.bbox)?,
                        mask,
                        s_mask: r.s_mask,
                        s_occ: r.s_occ,
                        feature: r.feature,
                    })
                })
                .collect::<Result<_>>()?;
            let prior = line.prior.map(|p| check_box(i, p)).transpose()?;
            frames.push(DetectionFrame {
                frame: line.frame,
                detections,
                prior,
            });
        }
        Ok(Self {
            mask_height: h,
            mask_width: w,
            frames,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

impl TrackFile {
    pub fn from_outputs(mode: TrackMode, outputs: &[FrameOutput]) -> Self {
        Self {
            mode,
            frames: outputs
                .iter()
                .map(|o| TrackFrame {
                    frame: o.frame,
                    tracks: o.tracks.clone(),
                })
                .collect(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = to_line(&TrackHeader {
            format: TRACKS_FORMAT.into(),
            version: WIRE_VERSION,
            mode: self.mode,
        })?;
        out.push('\n');
        for f in &self.frames {
            out.push_str(&to_line(&TrackLine {
                frame: f.frame,
                tracks: f.tracks.clone(),
            })?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut it = lines(text);
        let (hi, hl) = it.next().ok_or_else(|| record_err(0, "missing header line"))?;
        let header: TrackHeader = parse_line(hi, hl)?;
        check_header(hi, &header.format, header.version, TRACKS_FORMAT)?;
        let mut frames = Vec::new();
        for (i, l) in it {
            let line: TrackLine = parse_line(i, l)?;
            for t in &line.tracks {
                check_box(i, t.bbox.to_array())?;
            }
            frames.push(TrackFrame {
                frame: line.frame,
                tracks: line.tracks,
            });
        }
        Ok(Self {
            mode: header.mode,
            frames,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}
