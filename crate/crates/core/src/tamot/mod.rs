//! Mask-based association tracker: candidate gating, appearance and query
//! embeddings, bi-softmax similarity, Hungarian matching and tracklet memory.

mod candidates;
mod embed;
mod geometry;
mod hungarian;
mod losses;
mod memory;
mod params;
mod roi;
mod similarity;
mod tracker;
pub mod wire;

pub use candidates::{generate_candidates_mot, generate_candidates_sot, Candidate, Detection};
pub use embed::{
    comprehensive_feature, fine_grained_embedding, mem_forward, position_embedding, CandidateInput,
    MemOutput,
};
pub use geometry::{iou, BBox, BinaryMask};
pub use hungarian::{hungarian, match_pairs, total_affinity, PAD_AFFINITY};
pub use losses::{
    association_objective, augment_inputs, jitter_score, loss_self, loss_sup, loss_tamot_m,
    AssociationInstance, AssociationReport, Nll,
};
pub use memory::{
    update_memory, FrameResult, MemoryEntry, TrackId, Tracklet, TrackletState, TrackletStore,
};
pub use params::{
    AttentionBlock, AugmentConfig, BoundAttention, BoundTracker, TrackerConfig, TrackerParams,
    QUERY_TOKENS,
};
pub use roi::{roi_align, roi_sampling_matrix, FeatureMap};
pub use similarity::{bi_softmax, representative, similarity_matrix, Similarity};
pub use tracker::{
    candidate_inputs, embed_candidates, track_sequence, CandidateEmbedding, FrameInput,
    FrameOutput, TrackMode, TrackRecord, Tracker,
};
pub use wire::{DetectionFile, DetectionFrame, TrackFile, TrackFrame};
