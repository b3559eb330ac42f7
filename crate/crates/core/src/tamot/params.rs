use serde::{Deserialize, Serialize};

use crate::demoe::{Affine, BoundAffine};
use crate::error::{Error, Result};
use crate::numerics::rng::{gaussian_matrix, stream_rng, streams, StreamRng};
use crate::numerics::{Matrix, Precision, Tape, Var};
use crate::params::{join, ParamBlocks};

/// Learned query tokens per instance.
pub const QUERY_TOKENS: usize = 8;

/// Seeded perturbations used to build self-supervised correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Maximum box translation as a fraction of the image size.
    pub translate: f64,
    pub score_jitter: f64,
    pub feature_noise: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            translate: 0.05,
            score_jitter: 0.05,
            feature_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub tau_mask: f64,
    pub tau_th: f64,
    pub score_floor: f64,
    pub history_len: usize,
    pub termination_gap: usize,
    /// Unmatched active tracklets seen within this many frames keep
    /// reporting their last box.
    pub coast_frames: usize,
    pub roi_grid: usize,
    pub feature_width: usize,
    pub embed_dim: usize,
    pub query_dim: usize,
    /// Multiplier on the dot-product logits inside the bi-softmax term.
    pub similarity_scale: f64,
    pub precision: Precision,
    pub augment: AugmentConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_mask: 0.7,
            tau_th: 0.75,
            score_floor: 0.5,
            history_len: 15,
            termination_gap: 50,
            coast_frames: 5,
            roi_grid: 7,
            feature_width: 32,
            embed_dim: 32,
            query_dim: 16,
            similarity_scale: 10.0,
            precision: Precision::F32,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if v.is_finite() && (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} outside [0, 1]")))
            }
        };
        unit("tracker.tau_mask", self.tau_mask)?;
        unit("tracker.tau_th", self.tau_th)?;
        unit("tracker.score_floor", self.score_floor)?;
        for (key, v) in [
            ("tracker.history_len", self.history_len),
            ("tracker.roi_grid", self.roi_grid),
            ("tracker.feature_width", self.feature_width),
            ("tracker.embed_dim", self.embed_dim),
            ("tracker.query_dim", self.query_dim),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.coast_frames > self.termination_gap {
            return Err(Error::config(
                "tracker.coast_frames",
                "must not exceed tracker.termination_gap",
            ));
        }
        if !(self.similarity_scale.is_finite() && self.similarity_scale > 0.0) {
            return Err(Error::config(
                "tracker.similarity_scale",
                "must be positive and finite",
            ));
        }
        let a = &self.augment;
        for (key, v) in [
            ("tracker.augment.translate", a.translate),
            ("tracker.augment.score_jitter", a.score_jitter),
            ("tracker.augment.feature_noise", a.feature_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, "must be nonnegative and finite"));
            }
        }
        Ok(())
    }

    /// Length of the comprehensive feature `f`.
    pub fn feature_dim(&self) -> usize {
        self.embed_dim + QUERY_TOKENS * self.query_dim
    }
}

/// Residual attention `x + O(attn(Q x, K y, V y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub output: Affine,
}

impl AttentionBlock {
    fn random(rng: &mut StreamRng, d: usize) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        let affine = |rng: &mut StreamRng, sigma: f64| Affine {
            w: gaussian_matrix(rng, d, d, sigma),
            b: Matrix::zeros(1, d),
        };
        Self {
            query: affine(rng, s),
            key: affine(rng, s),
            value: affine(rng, s),
            output: affine(rng, 0.1 * s),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            query: Affine::zeros(d, d),
            key: Affine::zeros(d, d),
            value: Affine::zeros(d, d),
            output: Affine::zeros(d, d),
        }
    }

    fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundAttention> {
        Ok(BoundAttention {
            query: self.query.bind(tape, &join(prefix, "query"))?,
            key: self.key.bind(tape, &join(prefix, "key"))?,
            value: self.value.bind(tape, &join(prefix, "value"))?,
            output: self.output.bind(tape, &join(prefix, "output"))?,
        })
    }
}

impl ParamBlocks for AttentionBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    pub query: BoundAffine,
    pub key: BoundAffine,
    pub value: BoundAffine,
    pub output: BoundAffine,
}

impl BoundAttention {
    pub fn forward(&self, tape: &mut Tape, x: Var, context: Var) -> Result<Var> {
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, context)?;
        let v = self.value.forward(tape, context)?;
        let a = tape.attention(q, k, v)?;
        let o = self.output.forward(tape, a)?;
        tape.add(x, o)
    }
}

/// All learned weights of the association pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    /// 3x3 conv lifting the pooled mask to `C` channels, `9 x C`.
    pub conv_mask: Affine,
    /// 3x3 conv over mask-conditioned RoI features, `9C x C`.
    pub conv_fuse: Affine,
    pub embed_proj: Affine,
    pub pos_hidden: Affine,
    pub pos_out: Affine,
    pub pooled_proj: Affine,
    /// Initial query tokens shared by every instance, `8 x C_q`.
    pub qo: Matrix,
    pub spatial: AttentionBlock,
    pub cross: AttentionBlock,
    /// Temporal attention scores; values are the raw history queries.
    pub temporal_query: Affine,
    pub temporal_key: Affine,
}

impl TrackerParams {
    /// Initialization under which untrained features already follow appearance:
    /// the fusion conv passes the center tap through unchanged and the
    /// embedding projection is the identity when widths agree.
    pub fn init(cfg: &TrackerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (c, de, dq) = (cfg.feature_width, cfg.embed_dim, cfg.query_dim);
        let mut rng = stream_rng(seed, streams::TRACKER_INIT);
        let conv_mask = Affine {
            w: gaussian_matrix(&mut rng, 9, c, 0.01),
            b: Matrix::zeros(1, c),
        };
        let mut fuse = Matrix::zeros(9 * c, c);
        for ch in 0..c {
            fuse.set(4 * c + ch, ch, 1.0);
        }
        let embed_proj = if de == c {
            Affine::identity(c)
        } else {
            Affine::random(&mut rng, c, de)
        };
        let pos_hidden = Affine::random(&mut rng, 4, dq);
        let pos_out = Affine::random(&mut rng, dq, dq);
        let pooled_proj = Affine {
            w: gaussian_matrix(&mut rng, c, dq, 0.1 / (c as f64).sqrt()),
            b: Matrix::zeros(1, dq),
        };
        let qo = gaussian_matrix(&mut rng, QUERY_TOKENS, dq, 0.02);
        let spatial = AttentionBlock::random(&mut rng, dq);
        let cross = AttentionBlock::random(&mut rng, dq);
        let temporal_query = Affine::random(&mut rng, dq, dq);
        let temporal_key = Affine::random(&mut rng, dq, dq);
        Ok(Self {
            conv_mask,
            conv_fuse: Affine {
                w: fuse,
                b: Matrix::zeros(1, c),
            },
            embed_proj,
            pos_hidden,
            pos_out,
            pooled_proj,
            qo,
            spatial,
            cross,
            temporal_query,
            temporal_key,
        })
    }

    /// Every weight zero.
    pub fn zeros(cfg: &TrackerConfig) -> Self {
        let (c, de, dq) = (cfg.feature_width, cfg.embed_dim, cfg.query_dim);
        Self {
            conv_mask: Affine::zeros(9, c),
            conv_fuse: Affine::zeros(9 * c, c),
            embed_proj: Affine::zeros(c, de),
            pos_hidden: Affine::zeros(4, dq),
            pos_out: Affine::zeros(dq, dq),
            pooled_proj: Affine::zeros(c, dq),
            qo: Matrix::zeros(QUERY_TOKENS, dq),
            spatial: AttentionBlock::zeros(dq),
            cross: AttentionBlock::zeros(dq),
            temporal_query: Affine::zeros(dq, dq),
            temporal_key: Affine::zeros(dq, dq),
        }
    }

    pub fn feature_width(&self) -> usize {
        self.conv_fuse.w.cols()
    }

    pub fn query_dim(&self) -> usize {
        self.qo.cols()
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundTracker> {
        Ok(BoundTracker {
            conv_mask: self.conv_mask.bind(tape, &join(prefix, "conv_mask"))?,
            conv_fuse: self.conv_fuse.bind(tape, &join(prefix, "conv_fuse"))?,
            embed_proj: self.embed_proj.bind(tape, &join(prefix, "embed_proj"))?,
            pos_hidden: self.pos_hidden.bind(tape, &join(prefix, "pos_hidden"))?,
            pos_out: self.pos_out.bind(tape, &join(prefix, "pos_out"))?,
            pooled_proj: self.pooled_proj.bind(tape, &join(prefix, "pooled_proj"))?,
            qo: tape.param(&join(prefix, "qo"), &self.qo)?,
            spatial: self.spatial.bind(tape, &join(prefix, "spatial"))?,
            cross: self.cross.bind(tape, &join(prefix, "cross"))?,
            temporal_query: self
                .temporal_query
                .bind(tape, &join(prefix, "temporal_query"))?,
            temporal_key: self.temporal_key.bind(tape, &join(prefix, "temporal_key"))?,
        })
    }
}

impl ParamBlocks for TrackerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        self.conv_mask.visit(&join(prefix, "conv_mask"), f);
        self.conv_fuse.visit(&join(prefix, "conv_fuse"), f);
        self.embed_proj.visit(&join(prefix, "embed_proj"), f);
        self.pos_hidden.visit(&join(prefix, "pos_hidden"), f);
        self.pos_out.visit(&join(prefix, "pos_out"), f);
        self.pooled_proj.visit(&join(prefix, "pooled_proj"), f);
        f(&join(prefix, "qo"), &self.qo, false);
        self.spatial.visit(&join(prefix, "spatial"), f);
        self.cross.visit(&join(prefix, "cross"), f);
        self.temporal_query.visit(&join(prefix, "temporal_query"), f);
        self.temporal_key.visit(&join(prefix, "temporal_key"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        self.conv_mask.visit_mut(&join(prefix, "conv_mask"), f);
        self.conv_fuse.visit_mut(&join(prefix, "conv_fuse"), f);
        self.embed_proj.visit_mut(&join(prefix, "embed_proj"), f);
        self.pos_hidden.visit_mut(&join(prefix, "pos_hidden"), f);
        self.pos_out.visit_mut(&join(prefix, "pos_out"), f);
        self.pooled_proj.visit_mut(&join(prefix, "pooled_proj"), f);
        f(&join(prefix, "qo"), &mut self.qo, false);
        self.spatial.visit_mut(&join(prefix, "spatial"), f);
        self.cross.visit_mut(&join(prefix, "cross"), f);
        self.temporal_query
            .visit_mut(&join(prefix, "temporal_query"), f);
        self.temporal_key.visit_mut(&join(prefix, "temporal_key"), f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundTracker {
    pub conv_mask: BoundAffine,
    pub conv_fuse: BoundAffine,
    pub embed_proj: BoundAffine,
    pub pos_hidden: BoundAffine,
    pub pos_out: BoundAffine,
    pub pooled_proj: BoundAffine,
    pub qo: Var,
    pub spatial: BoundAttention,
    pub cross: BoundAttention,
    pub temporal_query: BoundAffine,
    pub temporal_key: BoundAffine,
}
