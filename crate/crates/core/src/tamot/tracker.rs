use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::candidates::{generate_candidates_mot, generate_candidates_sot, Candidate, Detection};
use super::embed::{embed_tape, CandidateInput};
use super::geometry::BBox;
use super::hungarian::match_pairs;
use super::memory::{update_memory, FrameResult, MemoryEntry, TrackId, TrackletStore};
use super::params::{TrackerConfig, TrackerParams};
use super::roi::{roi_align, FeatureMap};
use super::similarity::similarity_matrix;
use crate::error::{ensure, Error, Result};
use crate::numerics::{Matrix, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackMode {
    Sot,
    Mot,
}

impl TrackMode {
    pub fn name(self) -> &'static str {
        match self {
            TrackMode::Sot => "sot",
            TrackMode::Mot => "mot",
        }
    }
}

/// One frame as seen by the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub frame: usize,
    pub detections: Vec<Detection>,
    /// Single-object prior, required on the first frame in SOT mode and
    /// kept until a candidate is found for it.
    pub prior: Option<BBox>,
    /// Unified embedding of the frame on its spatial grid.
    pub feature_map: Option<FeatureMap>,
}

/// One emitted track for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: TrackId,
    #[serde(rename = "box", with = "super::geometry::box_array")]
    pub bbox: BBox,
    pub affinity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame: usize,
    pub tracks: Vec<TrackRecord>,
    /// Candidate indices refer to the frame's detection list.
    pub result: FrameResult,
    /// Assignment matrix over active tracklets (rows, id order) and
    /// candidates (columns, canonical order).
    pub affinity: Option<Matrix>,
}

/// Per-candidate embedding results.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEmbedding {
    pub ae: Vec<f64>,
    pub query: Matrix,
    pub feature: Vec<f64>,
}

/// Builds RoI features and pooled masks for candidates.
///
/// With a feature map the RoI grid is sampled from it; otherwise the
/// candidate's explicit feature is replicated over the grid (zeros when
/// absent).
pub fn candidate_inputs(
    candidates: &[Candidate],
    map: Option<&FeatureMap>,
    cfg: &TrackerConfig,
) -> Result<Vec<CandidateInput>> {
    let g = cfg.roi_grid;
    let c = cfg.feature_width;
    candidates
        .iter()
        .map(|cand| {
            let roi = match (map, &cand.feature) {
                (Some(m), _) => {
                    ensure!(
                        m.channels() == c,
                        "feature map has {} channels, tracker expects {c}",
                        m.channels()
                    );
                    roi_align(m, &cand.bbox, g)?
                }
                (None, Some(f)) => {
                    ensure!(
                        f.len() == c,
                        "explicit feature has {} entries, tracker expects {c}",
                        f.len()
                    );
                    Matrix::from_fn(g * g, c, |_, j| f[j])
                }
                (None, None) => Matrix::zeros(g * g, c),
            };
            Ok(CandidateInput {
                roi,
                mask: cand.mask.pool(&cand.bbox, g),
                bbox: cand.bbox,
            })
        })
        .collect()
}

/// Embeds one frame's candidates jointly.
pub fn embed_candidates(
    params: &TrackerParams,
    cfg: &TrackerConfig,
    inputs: &[CandidateInput],
) -> Result<Vec<CandidateEmbedding>> {
    let mut tape = Tape::new(cfg.precision);
    let t = params.bind(&mut tape, "")?;
    let vars = embed_tape(&mut tape, &t, cfg.roi_grid, inputs)?;
    let Some(f) = vars.f else {
        return Ok(Vec::new());
    };
    let f = tape.value(f).clone();
    Ok(vars
        .ae
        .iter()
        .zip(&vars.q)
        .enumerate()
        .map(|(m, (ae, q))| CandidateEmbedding {
            ae: tape.value(*ae).data().to_vec(),
            query: tape.value(*q).clone(),
            feature: f.row(m).to_vec(),
        })
        .collect())
}

fn canonical_order(candidates: &[Candidate]) -> Vec<usize> {
    let key = |c: &Candidate| [c.bbox.cx, c.bbox.cy, c.bbox.w, c.bbox.h, c.s_mask];
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|a, b| {
        let (ka, kb) = (key(&candidates[*a]), key(&candidates[*b]));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
            .then(candidates[*a].source.cmp(&candidates[*b].source))
    });
    idx
}

/// Online tracker over one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    params: TrackerParams,
    mode: TrackMode,
    store: TrackletStore,
    target: Option<TrackId>,
    prior: Option<BBox>,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, params: TrackerParams, mode: TrackMode) -> Result<Self> {
        cfg.validate()?;
        ensure!(
            params.feature_width() == cfg.feature_width && params.query_dim() == cfg.query_dim,
            "tracker parameters do not match the configuration"
        );
        let store = TrackletStore::new(cfg.history_len, cfg.termination_gap)?;
        Ok(Self {
            cfg,
            params,
            mode,
            store,
            target: None,
            prior: None,
            last_frame: None,
        })
    }

    pub fn store(&self) -> &TrackletStore {
        &self.store
    }

    pub fn target(&self) -> Option<TrackId> {
        self.target
    }

    pub fn step(&mut self, input: &FrameInput) -> Result<FrameOutput> {
        if let Some(prev) = self.last_frame {
            ensure!(
                input.frame > prev,
                "frame {} does not follow frame {prev}",
                input.frame
            );
        }
        self.last_frame = Some(input.frame);
        let frame = input.frame;
        self.store.retire_expired(frame);

        let candidates = match self.mode {
            TrackMode::Sot => generate_candidates_sot(&input.detections, self.cfg.tau_mask)?,
            TrackMode::Mot => generate_candidates_mot(&input.detections, self.cfg.score_floor)?,
        };
        let order = canonical_order(&candidates);
        let ordered: Vec<Candidate> = order.iter().map(|i| candidates[*i].clone()).collect();
        let inputs = candidate_inputs(&ordered, input.feature_map.as_ref(), &self.cfg)?;
        let embeds = embed_candidates(&self.params, &self.cfg, &inputs)?;

        let active: Vec<TrackId> = self.store.active().map(|t| t.id).collect();
        let mut affinity = None;
        let mut matches: Vec<(TrackId, usize)> = Vec::new();
        if !active.is_empty() && !embeds.is_empty() {
            let reps: Vec<Vec<f64>> = self
                .store
                .active()
                .map(|t| t.representative())
                .collect::<Result<_>>()?;
            let reps = Matrix::from_rows(&reps)?;
            let feats = Matrix::from_rows(&embeds.iter().map(|e| e.feature.clone()).collect::<Vec<_>>())?;
            let a = similarity_matrix(&feats, &reps, self.cfg.similarity_scale)?.a;
            matches = self.associate(&a, &active)?;
            affinity = Some(a);
        }

        let mut spawn: Vec<usize> = (0..ordered.len()).collect();
        if self.mode == TrackMode::Sot && self.target.is_none() {
            if input.prior.is_some() {
                self.prior = input.prior;
            }
            let prior = self.prior.ok_or_else(|| Error::Record {
                index: frame,
                message: "single-object tracking needs a prior on its first frame".into(),
            })?;
            if let Some(best) = (0..ordered.len()).max_by(|a, b| {
                prior
                    .iou(&ordered[*a].bbox)
                    .total_cmp(&prior.iou(&ordered[*b].bbox))
                    .then(b.cmp(a))
            }) {
                spawn.retain(|c| *c != best);
                spawn.insert(0, best);
            }
        }

        let entries: Vec<MemoryEntry> = ordered
            .iter()
            .zip(&embeds)
            .enumerate()
            .map(|(m, (c, e))| MemoryEntry {
                feature: e.feature.clone(),
                query: e.query.clone(),
                bbox: c.bbox,
                affinity: matches.iter().find(|(_, j)| *j == m).and_then(|(id, _)| {
                    let row = active.iter().position(|a| a == id)?;
                    affinity.as_ref().map(|a: &Matrix| a.get(row, m))
                }),
            })
            .collect();
        let result = update_memory(&mut self.store, frame, &matches, &entries, &spawn)?;
        if self.mode == TrackMode::Sot && self.target.is_none() {
            self.target = result.new_ids.first().map(|(id, _)| *id);
        }

        let touched: Vec<(TrackId, usize)> = result
            .matches
            .iter()
            .chain(&result.new_ids)
            .copied()
            .collect();
        let mut tracks: Vec<TrackRecord> = touched
            .iter()
            .filter(|(id, _)| self.mode == TrackMode::Mot || Some(*id) == self.target)
            .map(|(id, m)| TrackRecord {
                id: *id,
                bbox: ordered[*m].bbox,
                affinity: entries[*m].affinity,
            })
            .collect();
        for t in self.store.active() {
            let gap = frame - t.last_seen;
            let wanted = self.mode == TrackMode::Mot || Some(t.id) == self.target;
            if wanted && gap > 0 && gap <= self.cfg.coast_frames {
                tracks.push(TrackRecord {
                    id: t.id,
                    bbox: t.last_box,
                    affinity: None,
                });
            }
        }
        tracks.sort_by_key(|t| t.id);

        let to_source = |v: &[(TrackId, usize)]| -> Vec<(TrackId, usize)> {
            v.iter().map(|(id, m)| (*id, ordered[*m].source)).collect()
        };
        let mut matches_src = to_source(&result.matches);
        matches_src.sort_unstable();
        let result = FrameResult {
            matches: matches_src,
            new_ids: to_source(&result.new_ids),
            terminated: result.terminated,
        };
        Ok(FrameOutput {
            frame,
            tracks,
            result,
            affinity,
        })
    }

    /// Matches active tracklets (rows of `a`, ids in `active`) to candidates.
    fn associate(&self, a: &Matrix, active: &[TrackId]) -> Result<Vec<(TrackId, usize)>> {
        let tau = self.cfg.tau_th;
        let mut out = Vec::new();
        let mut rows: Vec<usize> = (0..active.len()).collect();
        let mut cols: Vec<usize> = (0..a.cols()).collect();
        if self.mode == TrackMode::Sot {
            if let Some(row) = self.target.and_then(|id| active.iter().position(|a| *a == id)) {
                let best = (0..a.cols())
                    .max_by(|x, y| a.get(row, *x).total_cmp(&a.get(row, *y)).then(y.cmp(x)));
                if let Some(m) = best.filter(|m| a.get(row, *m) > tau) {
                    out.push((active[row], m));
                    cols.retain(|c| *c != m);
                }
                rows.retain(|r| *r != row);
            }
        }
        if !rows.is_empty() && !cols.is_empty() {
            let sub = Matrix::from_fn(rows.len(), cols.len(), |i, j| a.get(rows[i], cols[j]));
            for (i, j) in match_pairs(&sub, tau)? {
                out.push((active[rows[i]], cols[j]));
            }
        }
        Ok(out)
    }
}

/// Runs a tracker over a whole sequence.
pub fn track_sequence(
    cfg: &TrackerConfig,
    params: &TrackerParams,
    mode: TrackMode,
    frames: &[FrameInput],
) -> Result<Vec<FrameOutput>> {
    let mut tracker = Tracker::new(cfg.clone(), params.clone(), mode)?;
    frames.iter().map(|f| tracker.step(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tamot::geometry::BinaryMask;

    fn det(cx: f64, cy: f64, feature: Vec<f64>) -> Detection {
        let b = BBox::new(cx, cy, 0.1, 0.1).unwrap();
        Detection {
            bbox: b,
            mask: BinaryMask::from_box(&b, 32, 32),
            s_mask: 0.9,
            s_occ: 1.0,
            feature: Some(feature),
        }
    }

    fn small_cfg() -> TrackerConfig {
        TrackerConfig {
            feature_width: 4,
            embed_dim: 4,
            query_dim: 4,
            roi_grid: 3,
            ..Default::default()
        }
    }

    fn frames(n: usize) -> Vec<FrameInput> {
        (0..n)
            .map(|t| {
                let s = t as f64 * 0.002;
                FrameInput {
                    frame: t,
                    detections: vec![
                        det(0.2 + s, 0.3, vec![1.0, 0.0, 0.0, 0.0]),
                        det(0.7 - s, 0.6, vec![0.0, 0.0, 1.0, 0.0]),
                    ],
                    prior: None,
                    feature_map: None,
                }
            })
            .collect()
    }

    #[test]
    fn stable_ids_for_separated_objects() {
        let cfg = small_cfg();
        let params = TrackerParams::init(&cfg, 7).unwrap();
        let out = track_sequence(&cfg, &params, TrackMode::Mot, &frames(30)).unwrap();
        for o in &out {
            let ids: Vec<TrackId> = o.tracks.iter().map(|t| t.id).collect();
            assert_eq!(ids, vec![0, 1]);
        }
        assert_eq!(out[0].result.new_ids.len(), 2);
        assert!(out[1..].iter().all(|o| o.result.new_ids.is_empty()));
    }

    #[test]
    fn sot_requires_prior_and_follows_target() {
        let cfg = small_cfg();
        let params = TrackerParams::init(&cfg, 7).unwrap();
        let mut fs = frames(10);
        assert!(matches!(
            track_sequence(&cfg, &params, TrackMode::Sot, &fs),
            Err(Error::Record { index: 0, .. })
        ));
        fs[0].prior = Some(BBox::new(0.7, 0.6, 0.1, 0.1).unwrap());
        let out = track_sequence(&cfg, &params, TrackMode::Sot, &fs).unwrap();
        for o in &out {
            assert_eq!(o.tracks.len(), 1);
            assert_eq!(o.tracks[0].id, 0);
            assert!(o.tracks[0].bbox.cx > 0.5);
        }
    }

    #[test]
    fn permuting_detections_permutes_results() {
        let cfg = small_cfg();
        let params = TrackerParams::init(&cfg, 7).unwrap();
        let fs = frames(5);
        let mut rev = fs.clone();
        for f in &mut rev {
            f.detections.reverse();
        }
        let a = track_sequence(&cfg, &params, TrackMode::Mot, &fs).unwrap();
        let b = track_sequence(&cfg, &params, TrackMode::Mot, &rev).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.tracks, y.tracks);
            let flip = |v: &[(TrackId, usize)]| {
                let mut w: Vec<_> = v.iter().map(|(i, c)| (*i, 1 - c)).collect();
                w.sort_unstable();
                w
            };
            let mut ym = y.result.matches.clone();
            ym.sort_unstable();
            assert_eq!(flip(&x.result.matches), ym);
        }
    }

    #[test]
    fn short_misses_coast_on_the_last_box() {
        let cfg = small_cfg();
        let params = TrackerParams::init(&cfg, 7).unwrap();
        let mut fs = frames(12);
        for f in &mut fs[3..9] {
            f.detections.truncate(1);
        }
        let out = track_sequence(&cfg, &params, TrackMode::Mot, &fs).unwrap();
        for o in &out[3..8] {
            assert_eq!(o.tracks.len(), 2);
            assert_eq!(o.tracks[1].affinity, None);
            assert_eq!(o.tracks[1].bbox, out[2].tracks[1].bbox);
        }
        assert_eq!(out[8].tracks.len(), 1);
        assert_eq!(out[9].tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn frames_must_increase() {
        let cfg = small_cfg();
        let params = TrackerParams::init(&cfg, 7).unwrap();
        let mut fs = frames(2);
        fs[1].frame = 0;
        assert!(track_sequence(&cfg, &params, TrackMode::Mot, &fs).is_err());
    }
}
