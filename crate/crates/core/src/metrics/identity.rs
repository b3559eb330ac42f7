use std::collections::BTreeMap;

use super::align::AlignedFrame;
use crate::numerics::Matrix;
use crate::tamot::{hungarian, TrackId};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdentityScores {
    /// `None` when there is neither ground truth nor prediction.
    pub idf1: Option<f64>,
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

/// IDF1 under the one-to-one id correspondence maximizing the number of
/// frames in which a ground-truth object and its track overlap at the
/// threshold.
pub fn identity_scores(frames: &[AlignedFrame], iou_threshold: f64) -> IdentityScores {
    let mut gt_ids = BTreeMap::new();
    let mut pred_ids = BTreeMap::new();
    let mut overlaps: BTreeMap<(usize, TrackId), usize> = BTreeMap::new();
    let (mut n_gt, mut n_pred) = (0usize, 0usize);
    for f in frames {
        n_gt += f.gt.len();
        n_pred += f.predictions.len();
        for (gid, g) in &f.gt {
            let next = gt_ids.len();
            gt_ids.entry(*gid).or_insert(next);
            for (pid, p) in &f.predictions {
                if g.iou(p) >= iou_threshold {
                    *overlaps.entry((*gid, *pid)).or_default() += 1;
                }
            }
        }
        for (pid, _) in &f.predictions {
            let next = pred_ids.len();
            pred_ids.entry(*pid).or_insert(next);
        }
    }
    if n_gt + n_pred == 0 {
        return IdentityScores::default();
    }
    let mut counts = Matrix::zeros(gt_ids.len(), pred_ids.len());
    for ((g, p), c) in &overlaps {
        counts.set(gt_ids[g], pred_ids[p], *c as f64);
    }
    let idtp: usize = hungarian(&counts)
        .unwrap_or_default()
        .into_iter()
        .map(|(i, j)| counts.get(i, j) as usize)
        .sum();
    let (idfp, idfn) = (n_pred - idtp, n_gt - idtp);
    IdentityScores {
        idf1: Some(2.0 * idtp as f64 / (2 * idtp + idfp + idfn) as f64),
        idtp,
        idfp,
        idfn,
    }
}
