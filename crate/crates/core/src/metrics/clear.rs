use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::align::AlignedFrame;
use crate::numerics::Matrix;
use crate::tamot::{hungarian, TrackId};

/// Per-frame outcome of CLEAR-MOT matching.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameLog {
    pub frame: usize,
    /// `(ground-truth id, track id)`.
    pub matches: Vec<(usize, TrackId)>,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub id_switches: usize,
    pub ignored: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClearMot {
    /// `None` when there is no ground truth.
    pub mota: Option<f64>,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub matches: usize,
    pub gt_count: usize,
    pub frames: Vec<FrameLog>,
}

const INVALID: f64 = -1e6;

/// CLEAR-MOT over aligned frames.
///
/// Correspondences from the previous frame are kept while their IoU stays
/// at or above the threshold; the rest are assigned by maximum-IoU matching.
/// An identity switch is counted when an object is matched to a different
/// track than at its last match.
pub fn clear_mot(frames: &[AlignedFrame], iou_threshold: f64) -> ClearMot {
    let mut last: BTreeMap<usize, TrackId> = BTreeMap::new();
    let mut out = ClearMot::default();
    for f in frames {
        let mut matched_gt = vec![false; f.gt.len()];
        let mut matched_pred = vec![false; f.predictions.len()];
        let mut matches = Vec::new();
        for (gi, (gid, g)) in f.gt.iter().enumerate() {
            let Some(prev) = last.get(gid) else { continue };
            if let Some(pi) = f.predictions.iter().position(|(pid, p)| pid == prev && g.iou(p) >= iou_threshold) {
                if !matched_pred[pi] {
                    matched_gt[gi] = true;
                    matched_pred[pi] = true;
                    matches.push((gi, pi));
                }
            }
        }
        let rows: Vec<usize> = (0..f.gt.len()).filter(|i| !matched_gt[*i]).collect();
        let cols: Vec<usize> = (0..f.predictions.len()).filter(|j| !matched_pred[*j]).collect();
        if !rows.is_empty() && !cols.is_empty() {
            let a = Matrix::from_fn(rows.len(), cols.len(), |i, j| {
                let v = f.gt[rows[i]].1.iou(&f.predictions[cols[j]].1);
                if v >= iou_threshold {
                    v
                } else {
                    INVALID
                }
            });
            for (i, j) in hungarian(&a).unwrap_or_default() {
                if a.get(i, j) > INVALID {
                    matches.push((rows[i], cols[j]));
                }
            }
        }
        let mut log = FrameLog {
            frame: f.frame,
            ignored: f.ignored,
            ..Default::default()
        };
        for (gi, pi) in &matches {
            let gid = f.gt[*gi].0;
            let pid = f.predictions[*pi].0;
            if last.get(&gid).is_some_and(|p| *p != pid) {
                log.id_switches += 1;
            }
            last.insert(gid, pid);
            log.matches.push((gid, pid));
        }
        log.matches.sort_unstable();
        log.fp = f.predictions.len() - matches.len();
        log.fn_ = f.gt.len() - matches.len();
        out.fp += log.fp;
        out.fn_ += log.fn_;
        out.id_switches += log.id_switches;
        out.matches += matches.len();
        out.gt_count += f.gt.len();
        out.frames.push(log);
    }
    if out.gt_count > 0 {
        out.mota = Some(1.0 - (out.fp + out.fn_ + out.id_switches) as f64 / out.gt_count as f64);
    }
    out
}
