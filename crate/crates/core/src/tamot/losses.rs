use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::{embed_tape, CandidateInput};
use super::geometry::BBox;
use super::params::{AugmentConfig, TrackerConfig, TrackerParams};
use super::similarity::similarity_tape;
use crate::error::{ensure, Result};
use crate::numerics::rng::{normal, StreamRng};
use crate::numerics::tape::LOG_CLAMP;
use crate::numerics::{Gradients, Matrix, Tape};

/// A negative log-likelihood with a flag raised when any probability was
/// clamped to `1e-12`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nll {
    pub value: f64,
    pub clamped: bool,
}

fn nll_entries(a: &Matrix, entries: &[(usize, usize)]) -> Result<Nll> {
    let mut value = 0.0;
    let mut clamped = false;
    for (i, j) in entries {
        ensure!(
            *i < a.rows() && *j < a.cols(),
            "entry ({i}, {j}) outside a {:?} matrix",
            a.shape()
        );
        let p = a.get(*i, *j);
        if p < LOG_CLAMP {
            clamped = true;
        }
        value -= p.max(LOG_CLAMP).ln();
    }
    Ok(Nll { value, clamped })
}

/// `-ln A[i, i]`.
pub fn loss_sup(a: &Matrix, i: usize) -> Result<Nll> {
    nll_entries(a, &[(i, i)])
}

/// `sum -ln A[i, j]` over the correspondences.
pub fn loss_self(a: &Matrix, correspondences: &[(usize, usize)]) -> Result<Nll> {
    ensure!(!correspondences.is_empty(), "empty correspondence set");
    nll_entries(a, correspondences)
}

/// Mean binary cross-entropy of `A` against the binary ground-truth matrix.
pub fn loss_tamot_m(a: &Matrix, a_gt: &Matrix) -> Result<f64> {
    ensure!(
        a.shape() == a_gt.shape(),
        "affinity {:?} and ground truth {:?} differ in shape",
        a.shape(),
        a_gt.shape()
    );
    ensure!(!a.is_empty(), "cross entropy over an empty matrix");
    let sum: f64 = a
        .data()
        .iter()
        .zip(a_gt.data())
        .map(|(p, t)| {
            let p = p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    Ok(-sum / a.len() as f64)
}

/// Seeded perturbation of candidate inputs: boxes shift by up to
/// `translate` of the image, RoI features receive Gaussian noise.
pub fn augment_inputs(
    inputs: &[CandidateInput],
    cfg: &AugmentConfig,
    rng: &mut StreamRng,
) -> Result<Vec<CandidateInput>> {
    inputs
        .iter()
        .map(|c| {
            let dx = rng.random_range(-1.0..=1.0) * cfg.translate;
            let dy = rng.random_range(-1.0..=1.0) * cfg.translate;
            let b = &c.bbox;
            let bbox = BBox::new((b.cx + dx).clamp(0.0, 1.0), (b.cy + dy).clamp(0.0, 1.0), b.w, b.h)?;
            let mut roi = c.roi.clone();
            for v in roi.data_mut() {
                *v += normal(rng, cfg.feature_noise);
            }
            Ok(CandidateInput {
                roi,
                mask: c.mask.clone(),
                bbox,
            })
        })
        .collect()
}

/// Detection score after symmetric jitter, kept in `[0, 1]`.
pub fn jitter_score(score: f64, cfg: &AugmentConfig, rng: &mut StreamRng) -> f64 {
    (score + rng.random_range(-1.0..=1.0) * cfg.score_jitter).clamp(0.0, 1.0)
}

/// Two consecutive frames of one scene with known identities.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationInstance {
    pub previous: Vec<CandidateInput>,
    pub current: Vec<CandidateInput>,
    /// `(previous index, current index)` pairs of the same identity.
    pub correspondences: Vec<(usize, usize)>,
    /// Index into `correspondences` of the supervised target.
    pub target: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationReport {
    pub l_sup: f64,
    pub l_self: f64,
    pub l_tamot_m: f64,
    pub total: f64,
    pub clamped: bool,
}

/// Association losses on one instance and their gradients with respect to
/// the tracker parameters (bound under `prefix`).
///
/// `A` compares previous-frame features (tracklet side) with current-frame
/// features; the self-supervised term compares current features with an
/// augmented copy of themselves.
pub fn association_objective(
    params: &TrackerParams,
    cfg: &TrackerConfig,
    instance: &AssociationInstance,
    augmented: &[CandidateInput],
    prefix: &str,
) -> Result<(AssociationReport, Gradients)> {
    let (n, m) = (instance.previous.len(), instance.current.len());
    ensure!(n > 0 && m > 0, "association instance without candidates");
    ensure!(augmented.len() == m, "augmented copy has a different candidate count");
    ensure!(
        instance.target < instance.correspondences.len(),
        "target correspondence out of range"
    );
    ensure!(
        instance.correspondences.iter().all(|(i, j)| *i < n && *j < m),
        "correspondence out of range"
    );
    let g = cfg.roi_grid;
    let mut tape = Tape::new(cfg.precision);
    let t = params.bind(&mut tape, prefix)?;
    let prev = embed_tape(&mut tape, &t, g, &instance.previous)?;
    let cur = embed_tape(&mut tape, &t, g, &instance.current)?;
    let aug = embed_tape(&mut tape, &t, g, augmented)?;
    let (Some(fp), Some(fc), Some(fa)) = (prev.f, cur.f, aug.f) else {
        return Err(crate::error::Error::contract("empty embedding"));
    };
    let a = similarity_tape(&mut tape, fc, fp, cfg.similarity_scale)?;
    let a_self = similarity_tape(&mut tape, fa, fc, cfg.similarity_scale)?;

    let target = instance.correspondences[instance.target];
    let sup = tape.neg_log_entries(a, vec![target])?;
    let diag: Vec<(usize, usize)> = (0..m).map(|j| (j, j)).collect();
    let selfl = tape.neg_log_entries(a_self, diag.clone())?;
    let mut gt = Matrix::zeros(n, m);
    for (i, j) in &instance.correspondences {
        gt.set(*i, *j, 1.0);
    }
    let bce = tape.binary_cross_entropy(a, gt)?;
    let total = tape.add_all(&[sup, selfl, bce])?;

    let av = tape.value(a).clone();
    let asv = tape.value(a_self).clone();
    let clamped = nll_entries(&av, &[target])?.clamped || nll_entries(&asv, &diag)?.clamped;
    let report = AssociationReport {
        l_sup: tape.value(sup).get(0, 0),
        l_self: tape.value(selfl).get(0, 0),
        l_tamot_m: tape.value(bce).get(0, 0),
        total: tape.value(total).get(0, 0),
        clamped,
    };
    let grads = tape.backward(total)?;
    Ok((report, tape.named_gradients(&grads)))
}
