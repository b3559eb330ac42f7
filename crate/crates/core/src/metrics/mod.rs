//! Tracking-quality metrics: CLEAR-MOT, identity F1 and single-object
//! average overlap, all on boxes.

mod align;
mod clear;
mod identity;

use serde::{Deserialize, Serialize};

pub use crate::tamot::iou;
pub use align::{align, AlignedFrame};
pub use clear::{clear_mot, ClearMot, FrameLog};
pub use identity::{identity_scores, IdentityScores};

use crate::error::{Error, Result};
use crate::simworld::GroundTruth;
use crate::tamot::wire::TrackFile;
use crate::tamot::{BBox, TrackMode};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Mean per-frame IoU over the ground-truth frames; frames without a
/// prediction contribute 0.
pub fn average_overlap(gt: &[BBox], predicted: &[Option<BBox>]) -> Result<f64> {
    if gt.len() != predicted.len() {
        return Err(Error::Contract(format!(
            "{} ground-truth frames against {} predicted",
            gt.len(),
            predicted.len()
        )));
    }
    if gt.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = gt
        .iter()
        .zip(predicted)
        .map(|(g, p)| p.map_or(0.0, |p| g.iou(&p)))
        .sum();
    Ok(total / gt.len() as f64)
}

/// Flat metric summary plus the per-frame match log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mota: Option<f64>,
    pub idf1: Option<f64>,
    pub id_switches: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub ao: Option<f64>,
    pub gt_count: usize,
    pub matches: usize,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
    #[serde(skip)]
    pub frames: Vec<FrameLog>,
}

const CSV_COLUMNS: [&str; 11] = [
    "mota", "idf1", "id_switches", "fp", "fn", "ao", "gt_count", "matches", "idtp", "idfp", "idfn",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Header line plus one data row; absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let row = [
            opt(self.mota),
            opt(self.idf1),
            self.id_switches.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
            opt(self.ao),
            self.gt_count.to_string(),
            self.matches.to_string(),
            self.idtp.to_string(),
            self.idfp.to_string(),
            self.idfn.to_string(),
        ];
        format!("{}\n{}\n", CSV_COLUMNS.join(","), row.join(","))
    }

    /// One JSON line per frame.
    pub fn frame_log_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for f in &self.frames {
            out.push_str(&serde_json::to_string(f).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Evaluates a track file against ground truth.
///
/// Single-object files are scored against `sot_target` only and also report
/// the average overlap over the frames where that object is visible.
pub fn evaluate(
    gt: &GroundTruth,
    tracks: &TrackFile,
    iou_threshold: f64,
    sot_target: usize,
) -> Result<MetricReport> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Contract(format!("IoU threshold {iou_threshold} outside (0, 1]")));
    }
    let only = (tracks.mode == TrackMode::Sot).then_some(sot_target);
    let frames = align(gt, tracks, iou_threshold, only);
    let clear = clear_mot(&frames, iou_threshold);
    let ids = identity_scores(&frames, iou_threshold);
    let ao = match only {
        None => None,
        Some(target) => {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for f in &gt.frames {
                let Some(o) = f.objects.iter().find(|o| o.id == target && o.visible) else {
                    continue;
                };
                g.push(o.bbox);
                let pred = tracks
                    .frames
                    .iter()
                    .find(|t| t.frame == f.frame)
                    .and_then(|t| t.tracks.first())
                    .map(|t| t.bbox);
                p.push(pred);
            }
            Some(average_overlap(&g, &p)?)
        }
    };
    Ok(MetricReport {
        mota: clear.mota,
        idf1: ids.idf1,
        id_switches: clear.id_switches,
        fp: clear.fp,
        fn_: clear.fn_,
        ao,
        gt_count: clear.gt_count,
        matches: clear.matches,
        idtp: ids.idtp,
        idfp: ids.idfp,
        idfn: ids.idfn,
        frames: clear.frames,
    })
}

#[cfg(test)]
mod tests;
