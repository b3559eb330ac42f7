use super::geometry::{BBox, BinaryMask};
use crate::error::Result;

/// One detector output for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub s_mask: f64,
    pub s_occ: f64,
    /// Explicit appearance vector used when no feature map is available.
    pub feature: Option<Vec<f64>>,
}

/// A detection admitted for association, with its mask-refined box.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub s_mask: f64,
    pub s_occ: f64,
    pub feature: Option<Vec<f64>>,
    /// Index of the originating detection.
    pub source: usize,
}

impl Candidate {
    fn from_detection(d: &Detection, source: usize) -> Self {
        Self {
            bbox: d.mask.tight_box().unwrap_or(d.bbox),
            mask: d.mask.clone(),
            s_mask: d.s_mask,
            s_occ: d.s_occ,
            feature: d.feature.clone(),
            source,
        }
    }
}

/// Single-object mode: keeps visible detections scoring at least `tau_mask`.
pub fn generate_candidates_sot(detections: &[Detection], tau_mask: f64) -> Result<Vec<Candidate>> {
    Ok(detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.s_occ > 0.0 && d.s_mask >= tau_mask)
        .map(|(i, d)| Candidate::from_detection(d, i))
        .collect())
}

/// Multi-object mode: keeps every detection scoring at least `score_floor`.
pub fn generate_candidates_mot(
    detections: &[Detection],
    score_floor: f64,
) -> Result<Vec<Candidate>> {
    Ok(detections
        .iter()
        .enumerate()
        .filter(|(_, d)| d.s_mask >= score_floor)
        .map(|(i, d)| Candidate::from_detection(d, i))
        .collect())
}
