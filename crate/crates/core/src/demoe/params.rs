use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::{gaussian_matrix, stream_rng, streams, StreamRng};
use crate::numerics::{Matrix, Precision, Tape, Var};
use crate::params::{join, ParamBlocks};

/// Number of modality-pair classes the cross-modal router predicts.
pub const MODALITY_CLASSES: usize = 4;

/// Standard deviation of the initial mask token.
pub const MASK_TOKEN_SIGMA: f64 = 0.02;

/// Scale of the second expert layer at initialization, relative to the
/// fan-in default.
pub const EXPERT_OUTPUT_GAIN: f64 = 0.1;

/// Shape of the toy encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub width: usize,
    pub depth: usize,
    pub patch: usize,
    pub in_channels: usize,
    pub heads: usize,
    pub common_experts: usize,
    pub specific_experts: usize,
    pub top_k: usize,
    pub precision: Precision,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            width: 32,
            depth: 2,
            patch: 8,
            in_channels: 3,
            heads: 2,
            common_experts: 4,
            specific_experts: 4,
            top_k: 2,
            precision: Precision::F32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 {
            return Err(Error::config(
                "encoder.width",
                format!("width {} gives an expert latent size below 1", self.width),
            ));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(
                "encoder.heads",
                format!("{} heads do not divide width {}", self.heads, self.width),
            ));
        }
        for (key, v) in [
            ("encoder.patch", self.patch),
            ("encoder.in_channels", self.in_channels),
            ("encoder.common_experts", self.common_experts),
            ("encoder.specific_experts", self.specific_experts),
            ("encoder.top_k", self.top_k),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be at least 1"));
            }
        }
        if self.top_k > self.common_experts.min(self.specific_experts) {
            return Err(Error::config(
                "encoder.top_k",
                format!("top_k {} exceeds the expert count", self.top_k),
            ));
        }
        Ok(())
    }

    /// Expert bottleneck width, `floor(C / 8)`.
    pub fn latent(&self) -> usize {
        self.width / 8
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * self.in_channels
    }
}

fn bind_blocks<const N: usize>(
    tape: &mut Tape,
    prefix: &str,
    blocks: [(&str, &Matrix); N],
    frozen: bool,
) -> Result<[Var; N]> {
    let mut out = Vec::with_capacity(N);
    for (name, m) in blocks {
        let full = join(prefix, name);
        out.push(if frozen {
            tape.frozen(&full, m)?
        } else {
            tape.param(&full, m)?
        });
    }
    Ok(out.try_into().expect("one var per block"))
}

/// Two-layer bottleneck MLP, `W2 gelu(W1 t + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub frozen: bool,
}

impl Expert {
    pub fn new(w1: Matrix, b1: Matrix, w2: Matrix, b2: Matrix) -> Result<Self> {
        let (c, k) = w1.shape();
        if k == 0 || b1.shape() != (1, k) || w2.shape() != (k, c) || b2.shape() != (1, c) {
            return Err(Error::contract(format!(
                "inconsistent expert shapes: w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                w1.shape(),
                b1.shape(),
                w2.shape(),
                b2.shape()
            )));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            frozen: false,
        })
    }

    pub fn zeros(width: usize, latent: usize) -> Self {
        Self {
            w1: Matrix::zeros(width, latent),
            b1: Matrix::zeros(1, latent),
            w2: Matrix::zeros(latent, width),
            b2: Matrix::zeros(1, width),
            frozen: false,
        }
    }

    pub fn random(rng: &mut StreamRng, width: usize, latent: usize) -> Self {
        Self {
            w1: gaussian_matrix(rng, width, latent, 1.0 / (width as f64).sqrt()),
            b1: Matrix::zeros(1, latent),
            w2: gaussian_matrix(rng, latent, width, EXPERT_OUTPUT_GAIN / (latent as f64).sqrt()),
            b2: Matrix::zeros(1, width),
            frozen: false,
        }
    }

    pub fn width(&self) -> usize {
        self.w1.rows()
    }

    pub fn latent(&self) -> usize {
        self.w1.cols()
    }

    fn blocks(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundExpert> {
        let [w1, b1, w2, b2] = bind_blocks(tape, prefix, self.blocks(), self.frozen)?;
        Ok(BoundExpert { w1, b1, w2, b2 })
    }
}

impl ParamBlocks for Expert {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        for (n, m) in self.blocks() {
            f(&join(prefix, n), m, self.frozen);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        let frozen = self.frozen;
        for (n, m) in [
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ] {
            f(&join(prefix, n), m, frozen);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundExpert {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BoundExpert {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.linear(x, self.w1, self.b1)?;
        let h = tape.gelu(h)?;
        tape.linear(h, self.w2, self.b2)
    }
}

/// Affine gate network followed by softmax and top-k selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Router {
    pub w: Matrix,
    pub b: Matrix,
    pub k_active: usize,
}

impl Router {
    pub fn new(w: Matrix, b: Matrix, k_active: usize) -> Result<Self> {
        let e = w.cols();
        if b.shape() != (1, e) {
            return Err(Error::contract(format!(
                "router bias {:?} does not match {e} experts",
                b.shape()
            )));
        }
        if k_active == 0 || k_active > e {
            return Err(Error::contract(format!(
                "router activates {k_active} of {e} experts"
            )));
        }
        Ok(Self { w, b, k_active })
    }

    pub fn random(rng: &mut StreamRng, width: usize, experts: usize, k_active: usize) -> Self {
        Self {
            w: gaussian_matrix(rng, width, experts, 1.0 / (width as f64).sqrt()),
            b: Matrix::zeros(1, experts),
            k_active,
        }
    }

    pub fn experts(&self) -> usize {
        self.w.cols()
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundRouter> {
        let [w, b] = bind_blocks(tape, prefix, [("w", &self.w), ("b", &self.b)], false)?;
        Ok(BoundRouter {
            w,
            b,
            k_active: self.k_active,
        })
    }
}

impl ParamBlocks for Router {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        f(&join(prefix, "w"), &self.w, false);
        f(&join(prefix, "b"), &self.b, false);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        f(&join(prefix, "w"), &mut self.w, false);
        f(&join(prefix, "b"), &mut self.b, false);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundRouter {
    pub w: Var,
    pub b: Var,
    pub k_active: usize,
}

/// Affine map `x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Matrix,
    pub b: Matrix,
}

impl Affine {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        if b.shape() != (1, w.cols()) {
            return Err(Error::contract(format!(
                "affine bias {:?} does not match output width {}",
                b.shape(),
                w.cols()
            )));
        }
        Ok(Self { w, b })
    }

    pub fn identity(width: usize) -> Self {
        Self {
            w: Matrix::identity(width),
            b: Matrix::zeros(1, width),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            w: Matrix::zeros(rows, cols),
            b: Matrix::zeros(1, cols),
        }
    }

    pub fn random(rng: &mut StreamRng, rows: usize, cols: usize) -> Self {
        Self {
            w: gaussian_matrix(rng, rows, cols, 1.0 / (rows as f64).sqrt()),
            b: Matrix::zeros(1, cols),
        }
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundAffine> {
        let [w, b] = bind_blocks(tape, prefix, [("w", &self.w), ("b", &self.b)], false)?;
        Ok(BoundAffine { w, b })
    }
}

impl ParamBlocks for Affine {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        f(&join(prefix, "w"), &self.w, false);
        f(&join(prefix, "b"), &self.b, false);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        f(&join(prefix, "w"), &mut self.w, false);
        f(&join(prefix, "b"), &mut self.b, false);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAffine {
    pub w: Var,
    pub b: Var,
}

impl BoundAffine {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

/// Pre-norm multi-head self-attention.
#[derive(Debug, Clone, PartialEq)]
pub struct MsaParams {
    pub heads: usize,
    pub ln_gain: Matrix,
    pub ln_bias: Matrix,
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub output: Affine,
}

impl MsaParams {
    pub fn random(rng: &mut StreamRng, width: usize, heads: usize) -> Self {
        Self {
            heads,
            ln_gain: Matrix::filled(1, width, 1.0),
            ln_bias: Matrix::zeros(1, width),
            query: Affine::random(rng, width, width),
            key: Affine::random(rng, width, width),
            value: Affine::random(rng, width, width),
            output: Affine::random(rng, width, width),
        }
    }

    /// Attention whose output projection is zero, so the block is the identity.
    pub fn passthrough(width: usize, heads: usize) -> Self {
        Self {
            heads,
            ln_gain: Matrix::filled(1, width, 1.0),
            ln_bias: Matrix::zeros(1, width),
            query: Affine::zeros(width, width),
            key: Affine::zeros(width, width),
            value: Affine::zeros(width, width),
            output: Affine::zeros(width, width),
        }
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundMsa> {
        let [ln_gain, ln_bias] = bind_blocks(
            tape,
            prefix,
            [("ln_gain", &self.ln_gain), ("ln_bias", &self.ln_bias)],
            false,
        )?;
        Ok(BoundMsa {
            heads: self.heads,
            ln_gain,
            ln_bias,
            query: self.query.bind(tape, &join(prefix, "query"))?,
            key: self.key.bind(tape, &join(prefix, "key"))?,
            value: self.value.bind(tape, &join(prefix, "value"))?,
            output: self.output.bind(tape, &join(prefix, "output"))?,
        })
    }
}

impl ParamBlocks for MsaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        f(&join(prefix, "ln_gain"), &self.ln_gain, false);
        f(&join(prefix, "ln_bias"), &self.ln_bias, false);
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        f(&join(prefix, "ln_gain"), &mut self.ln_gain, false);
        f(&join(prefix, "ln_bias"), &mut self.ln_bias, false);
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMsa {
    pub heads: usize,
    pub ln_gain: Var,
    pub ln_bias: Var,
    pub query: BoundAffine,
    pub key: BoundAffine,
    pub value: BoundAffine,
    pub output: BoundAffine,
}

impl BoundMsa {
    /// `x + MSA(LN(x))`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n = tape.layer_norm_rows(x)?;
        let n = tape.mul_row(n, self.ln_gain)?;
        let n = tape.add_row(n, self.ln_bias)?;
        let q = self.query.forward(tape, n)?;
        let k = self.key.forward(tape, n)?;
        let v = self.value.forward(tape, n)?;
        let width = tape.value(x).cols();
        let dh = width / self.heads;
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            heads.push(tape.attention(qh, kh, vh)?);
        }
        let cat = tape.concat_cols(&heads)?;
        let out = self.output.forward(tape, cat)?;
        tape.add(x, out)
    }
}

/// All weights of one decoupled mixture-of-experts layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DeMoELayerParams {
    pub shared_expert: Expert,
    pub common_experts: Vec<Expert>,
    pub specific_experts_r: Vec<Expert>,
    pub specific_experts_tde: Vec<Expert>,
    pub router_common: Router,
    pub router_r: Router,
    pub router_tde: Router,
    pub router_crossmodal: Router,
    pub proj_r: Affine,
    pub proj_tde: Affine,
    pub mask_token: Matrix,
}

impl DeMoELayerParams {
    pub fn random(rng: &mut StreamRng, cfg: &EncoderConfig) -> Self {
        let (c, k) = (cfg.width, cfg.latent());
        let mut shared_expert = Expert::random(rng, c, k);
        shared_expert.frozen = true;
        let common_experts = (0..cfg.common_experts)
            .map(|_| Expert::random(rng, c, k))
            .collect();
        let specific_experts_r = (0..cfg.specific_experts)
            .map(|_| Expert::random(rng, c, k))
            .collect();
        let specific_experts_tde = (0..cfg.specific_experts)
            .map(|_| Expert::random(rng, c, k))
            .collect();
        Self {
            shared_expert,
            common_experts,
            specific_experts_r,
            specific_experts_tde,
            router_common: Router::random(rng, c, cfg.common_experts, cfg.top_k),
            router_r: Router::random(rng, c, cfg.specific_experts, cfg.top_k),
            router_tde: Router::random(rng, c, cfg.specific_experts, cfg.top_k),
            router_crossmodal: Router::random(rng, c, MODALITY_CLASSES, MODALITY_CLASSES),
            proj_r: Affine::identity(c),
            proj_tde: Affine::identity(c),
            mask_token: gaussian_matrix(rng, 1, c, MASK_TOKEN_SIGMA),
        }
    }

    /// Every expert, router, projection and the mask token set to zero.
    pub fn zeros(cfg: &EncoderConfig) -> Self {
        let (c, k) = (cfg.width, cfg.latent());
        let mut shared_expert = Expert::zeros(c, k);
        shared_expert.frozen = true;
        let zero_router = |e: usize, top: usize| Router {
            w: Matrix::zeros(c, e),
            b: Matrix::zeros(1, e),
            k_active: top,
        };
        Self {
            shared_expert,
            common_experts: vec![Expert::zeros(c, k); cfg.common_experts],
            specific_experts_r: vec![Expert::zeros(c, k); cfg.specific_experts],
            specific_experts_tde: vec![Expert::zeros(c, k); cfg.specific_experts],
            router_common: zero_router(cfg.common_experts, cfg.top_k),
            router_r: zero_router(cfg.specific_experts, cfg.top_k),
            router_tde: zero_router(cfg.specific_experts, cfg.top_k),
            router_crossmodal: zero_router(MODALITY_CLASSES, MODALITY_CLASSES),
            proj_r: Affine::zeros(c, c),
            proj_tde: Affine::zeros(c, c),
            mask_token: Matrix::zeros(1, c),
        }
    }

    pub fn width(&self) -> usize {
        self.mask_token.cols()
    }

    pub fn bind(&self, tape: &mut Tape, prefix: &str) -> Result<BoundMoe> {
        let experts = |tape: &mut Tape, list: &[Expert], name: &str| -> Result<Vec<BoundExpert>> {
            list.iter()
                .enumerate()
                .map(|(i, e)| e.bind(tape, &join(prefix, &format!("{name}.{i}"))))
                .collect()
        };
        let shared = self.shared_expert.bind(tape, &join(prefix, "shared"))?;
        let common = experts(tape, &self.common_experts, "common")?;
        let specific_r = experts(tape, &self.specific_experts_r, "specific_r")?;
        let specific_tde = experts(tape, &self.specific_experts_tde, "specific_tde")?;
        Ok(BoundMoe {
            shared,
            common,
            specific_r,
            specific_tde,
            router_common: self.router_common.bind(tape, &join(prefix, "router_common"))?,
            router_r: self.router_r.bind(tape, &join(prefix, "router_r"))?,
            router_tde: self.router_tde.bind(tape, &join(prefix, "router_tde"))?,
            router_crossmodal: self
                .router_crossmodal
                .bind(tape, &join(prefix, "router_crossmodal"))?,
            proj_r: self.proj_r.bind(tape, &join(prefix, "proj_r"))?,
            proj_tde: self.proj_tde.bind(tape, &join(prefix, "proj_tde"))?,
            mask_token: tape.param(&join(prefix, "mask_token"), &self.mask_token)?,
        })
    }
}

impl ParamBlocks for DeMoELayerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        self.shared_expert.visit(&join(prefix, "shared"), f);
        for (name, list) in [
            ("common", &self.common_experts),
            ("specific_r", &self.specific_experts_r),
            ("specific_tde", &self.specific_experts_tde),
        ] {
            for (i, e) in list.iter().enumerate() {
                e.visit(&join(prefix, &format!("{name}.{i}")), f);
            }
        }
        self.router_common.visit(&join(prefix, "router_common"), f);
        self.router_r.visit(&join(prefix, "router_r"), f);
        self.router_tde.visit(&join(prefix, "router_tde"), f);
        self.router_crossmodal
            .visit(&join(prefix, "router_crossmodal"), f);
        self.proj_r.visit(&join(prefix, "proj_r"), f);
        self.proj_tde.visit(&join(prefix, "proj_tde"), f);
        f(&join(prefix, "mask_token"), &self.mask_token, false);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        self.shared_expert.visit_mut(&join(prefix, "shared"), f);
        for (name, list) in [
            ("common", &mut self.common_experts),
            ("specific_r", &mut self.specific_experts_r),
            ("specific_tde", &mut self.specific_experts_tde),
        ] {
            for (i, e) in list.iter_mut().enumerate() {
                e.visit_mut(&join(prefix, &format!("{name}.{i}")), f);
            }
        }
        self.router_common
            .visit_mut(&join(prefix, "router_common"), f);
        self.router_r.visit_mut(&join(prefix, "router_r"), f);
        self.router_tde.visit_mut(&join(prefix, "router_tde"), f);
        self.router_crossmodal
            .visit_mut(&join(prefix, "router_crossmodal"), f);
        self.proj_r.visit_mut(&join(prefix, "proj_r"), f);
        self.proj_tde.visit_mut(&join(prefix, "proj_tde"), f);
        f(&join(prefix, "mask_token"), &mut self.mask_token, false);
    }
}

#[derive(Debug, Clone)]
pub struct BoundMoe {
    pub shared: BoundExpert,
    pub common: Vec<BoundExpert>,
    pub specific_r: Vec<BoundExpert>,
    pub specific_tde: Vec<BoundExpert>,
    pub router_common: BoundRouter,
    pub router_r: BoundRouter,
    pub router_tde: BoundRouter,
    pub router_crossmodal: BoundRouter,
    pub proj_r: BoundAffine,
    pub proj_tde: BoundAffine,
    pub mask_token: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub msa: MsaParams,
    pub moe: DeMoELayerParams,
}

/// Patch embedding followed by `depth` attention + mixture layers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack {
    pub config: EncoderConfig,
    pub patch_embed: Affine,
    pub layers: Vec<EncoderLayer>,
}

impl EncoderStack {
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, streams::ENCODER_INIT);
        let patch_embed = Affine::random(&mut rng, config.patch_dim(), config.width);
        let layers = (0..config.depth)
            .map(|_| EncoderLayer {
                msa: MsaParams::random(&mut rng, config.width, config.heads),
                moe: DeMoELayerParams::random(&mut rng, &config),
            })
            .collect();
        Ok(Self {
            config,
            patch_embed,
            layers,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> Result<BoundEncoder> {
        let patch_embed = self.patch_embed.bind(tape, "patch_embed")?;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let prefix = format!("layers.{l}");
            layers.push(BoundLayer {
                msa: layer.msa.bind(tape, &join(&prefix, "msa"))?,
                moe: layer.moe.bind(tape, &join(&prefix, "moe"))?,
            });
        }
        Ok(BoundEncoder {
            patch_embed,
            layers,
        })
    }
}

impl ParamBlocks for EncoderStack {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Matrix, bool)) {
        self.patch_embed.visit(&join(prefix, "patch_embed"), f);
        for (l, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layers.{l}"));
            layer.msa.visit(&join(&p, "msa"), f);
            layer.moe.visit(&join(&p, "moe"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Matrix, bool)) {
        self.patch_embed.visit_mut(&join(prefix, "patch_embed"), f);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layers.{l}"));
            layer.msa.visit_mut(&join(&p, "msa"), f);
            layer.moe.visit_mut(&join(&p, "moe"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundLayer {
    pub msa: BoundMsa,
    pub moe: BoundMoe,
}

#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub patch_embed: BoundAffine,
    pub layers: Vec<BoundLayer>,
}
