use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::geometry::BBox;
use super::similarity::representative;
use crate::error::{ensure, Result};
use crate::numerics::Matrix;

pub type TrackId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackletState {
    Active,
    Terminated,
}

/// Everything the store keeps about one candidate once it is assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub feature: Vec<f64>,
    pub query: Matrix,
    pub bbox: BBox,
    /// Affinity of the match that produced this entry, `None` at spawn.
    pub affinity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub id: TrackId,
    /// `(frame, feature)` pairs, oldest first.
    pub history: VecDeque<(usize, Vec<f64>)>,
    /// Learned queries aligned with `history`.
    pub queries: VecDeque<Matrix>,
    pub last_seen: usize,
    pub last_box: BBox,
    pub last_affinity: Option<f64>,
    pub state: TrackletState,
}

impl Tracklet {
    pub fn is_active(&self) -> bool {
        self.state == TrackletState::Active
    }

    /// Normalized mean of the history features.
    pub fn representative(&self) -> Result<Vec<f64>> {
        let feats: Vec<Vec<f64>> = self.history.iter().map(|(_, f)| f.clone()).collect();
        representative(&feats)
    }
}

/// Outcome of one frame's memory update.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameResult {
    /// `(tracklet id, candidate index)`.
    pub matches: Vec<(TrackId, usize)>,
    /// Spawned `(tracklet id, candidate index)`.
    pub new_ids: Vec<(TrackId, usize)>,
    pub terminated: Vec<TrackId>,
}

/// Tracklets of one sequence, in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackletStore {
    tracklets: Vec<Tracklet>,
    next_id: TrackId,
    history_len: usize,
    termination_gap: usize,
    pending_terminated: Vec<TrackId>,
}

impl TrackletStore {
    pub fn new(history_len: usize, termination_gap: usize) -> Result<Self> {
        ensure!(history_len > 0, "history length must be positive");
        Ok(Self {
            tracklets: Vec::new(),
            next_id: 0,
            history_len,
            termination_gap,
            pending_terminated: Vec::new(),
        })
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn get(&self, id: TrackId) -> Option<&Tracklet> {
        self.tracklets
            .binary_search_by_key(&id, |t| t.id)
            .ok()
            .map(|i| &self.tracklets[i])
    }

    pub fn next_id(&self) -> TrackId {
        self.next_id
    }

    pub fn active(&self) -> impl Iterator<Item = &Tracklet> {
        self.tracklets.iter().filter(|t| t.is_active())
    }

    /// Terminates active tracklets unseen for more than the termination gap.
    pub fn retire_expired(&mut self, frame: usize) -> Vec<TrackId> {
        let gap = self.termination_gap;
        let mut out = Vec::new();
        for t in &mut self.tracklets {
            if t.is_active() && frame.saturating_sub(t.last_seen) > gap {
                t.state = TrackletState::Terminated;
                out.push(t.id);
            }
        }
        self.pending_terminated.extend(&out);
        out
    }

    fn index_of(&self, id: TrackId) -> Option<usize> {
        self.tracklets.binary_search_by_key(&id, |t| t.id).ok()
    }

    fn spawn(&mut self, frame: usize, entry: &MemoryEntry) -> TrackId {
        let id = self.next_id;
        self.next_id += 1;
        self.tracklets.push(Tracklet {
            id,
            history: VecDeque::from([(frame, entry.feature.clone())]),
            queries: VecDeque::from([entry.query.clone()]),
            last_seen: frame,
            last_box: entry.bbox,
            last_affinity: entry.affinity,
            state: TrackletState::Active,
        });
        id
    }
}

/// Applies one frame's matches: matched tracklets record their candidate,
/// the remaining candidates (in `spawn_order`) become new tracklets, and
/// tracklets past the termination gap are retired.
///
/// `spawn_order` lists candidate indices; unmatched ones spawn in that order.
pub fn update_memory(
    store: &mut TrackletStore,
    frame: usize,
    matches: &[(TrackId, usize)],
    entries: &[MemoryEntry],
    spawn_order: &[usize],
) -> Result<FrameResult> {
    store.retire_expired(frame);
    let mut seen_ids = BTreeSet::new();
    let mut seen_cands = BTreeSet::new();
    for (id, c) in matches {
        ensure!(*c < entries.len(), "matched candidate {c} out of range");
        ensure!(seen_ids.insert(*id), "tracklet {id} matched twice");
        ensure!(seen_cands.insert(*c), "candidate {c} assigned twice");
        let idx = store.index_of(*id);
        ensure!(
            idx.is_some_and(|i| store.tracklets[i].is_active()),
            "tracklet {id} is not active"
        );
        ensure!(
            frame >= store.tracklets[idx.unwrap_or(0)].last_seen,
            "frame {frame} precedes tracklet {id}'s last update"
        );
    }
    let mut order: Vec<usize> = spawn_order.to_vec();
    let listed: BTreeSet<usize> = order.iter().copied().collect();
    ensure!(
        listed.len() == order.len() && listed.iter().all(|c| *c < entries.len()),
        "spawn order is not a set of candidate indices"
    );
    order.extend((0..entries.len()).filter(|c| !listed.contains(c)));

    let cap = store.history_len;
    for (id, c) in matches {
        let Some(i) = store.index_of(*id) else { continue };
        let t = &mut store.tracklets[i];
        let e = &entries[*c];
        t.history.push_back((frame, e.feature.clone()));
        t.queries.push_back(e.query.clone());
        while t.history.len() > cap {
            t.history.pop_front();
            t.queries.pop_front();
        }
        t.last_seen = frame;
        t.last_box = e.bbox;
        t.last_affinity = e.affinity;
    }
    let mut new_ids = Vec::new();
    for c in order {
        if !seen_cands.contains(&c) {
            let id = store.spawn(frame, &entries[c]);
            new_ids.push((id, c));
        }
    }
    let mut matches = matches.to_vec();
    matches.sort_unstable();
    Ok(FrameResult {
        matches,
        new_ids,
        terminated: std::mem::take(&mut store.pending_terminated),
    })
}
