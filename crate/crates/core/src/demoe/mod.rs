//! Decoupled mixture-of-experts layer and the toy encoder built from it.
//!
//! Each layer combines a frozen shared expert, modality-common experts whose
//! gated outputs are fused across modalities into a prompt, and
//! modality-specific experts. Three losses pull the two expert families
//! apart: masked reconstruction of the common path, an orthogonality
//! penalty, and cross-entropy on a router that predicts the modality pair.

mod forward;
mod frame;
mod gradcheck;
mod loss;
mod mask;
mod params;

pub use forward::{
    cpmoe_forward, demoe_layer_forward, encoder_forward, expert_forward, route, samoe_forward,
    CpMoeOutput, EncoderOutput, ExpertOutputs, LayerRecord, SaMoeOutput,
};
pub use frame::{Frame, FramePair, ModalityPair};
pub use gradcheck::{grad_check, BlockCheck, GradCheckReport, DEFAULT_EPSILON};
pub use loss::{
    cm_targets, decoupling_objective, loss_ce, loss_cm, loss_cm_with_plan, loss_moe_total,
    loss_task, term_gradients, CmTargets, LossReport, LossTerm, LossWeights,
};
pub use mask::{Branch, MaskPlan};
pub use params::{
    Affine, BoundAffine, BoundEncoder, BoundExpert, BoundLayer, BoundMoe, BoundMsa, BoundRouter,
    DeMoELayerParams, EncoderConfig, EncoderLayer, EncoderStack, Expert, MsaParams, Router,
    MASK_TOKEN_SIGMA, MODALITY_CLASSES,
};

#[cfg(test)]
mod tests;
