use std::collections::BTreeMap;

use crate::simworld::GroundTruth;
use crate::tamot::wire::TrackFile;
use crate::tamot::{BBox, TrackId};

/// Ground truth and predictions of one frame, after ignore filtering.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignedFrame {
    pub frame: usize,
    pub gt: Vec<(usize, BBox)>,
    pub predictions: Vec<(TrackId, BBox)>,
    /// Predictions dropped because they cover an occluded object.
    pub ignored: usize,
}

/// Pairs ground truth with predictions frame by frame.
///
/// Only visible objects count as ground truth. A prediction that overlaps an
/// invisible object at `iou_threshold` or more and no visible object at that
/// level is ignored rather than counted. With `only` set, the ground truth is
/// restricted to that object.
pub fn align(
    gt: &GroundTruth,
    tracks: &TrackFile,
    iou_threshold: f64,
    only: Option<usize>,
) -> Vec<AlignedFrame> {
    let mut frames: BTreeMap<usize, (Vec<(usize, BBox)>, Vec<BBox>, Vec<(TrackId, BBox)>)> =
        BTreeMap::new();
    for f in &gt.frames {
        let e = frames.entry(f.frame).or_default();
        for o in &f.objects {
            if only.is_some_and(|id| id != o.id) {
                continue;
            }
            if o.visible {
                e.0.push((o.id, o.bbox));
            } else {
                e.1.push(o.bbox);
            }
        }
    }
    for f in &tracks.frames {
        let e = frames.entry(f.frame).or_default();
        e.2.extend(f.tracks.iter().map(|t| (t.id, t.bbox)));
    }
    frames
        .into_iter()
        .map(|(frame, (visible, hidden, preds))| {
            let before = preds.len();
            let predictions: Vec<(TrackId, BBox)> = preds
                .into_iter()
                .filter(|(_, p)| {
                    let covers_hidden = hidden.iter().any(|h| h.iou(p) >= iou_threshold);
                    let covers_visible = visible.iter().any(|(_, g)| g.iou(p) >= iou_threshold);
                    !covers_hidden || covers_visible
                })
                .collect();
            AlignedFrame {
                frame,
                ignored: before - predictions.len(),
                gt: visible,
                predictions,
            }
        })
        .collect()
}
