use super::frame::FramePair;
use super::mask::{Branch, MaskPlan};
use super::params::{
    BoundEncoder, BoundMoe, BoundRouter, DeMoELayerParams, EncoderStack, Expert, Router,
};
use crate::error::{ensure, Result};
use crate::numerics::{GateVector, Matrix, Precision, Tape, Var};

impl BoundRouter {
    pub fn logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }

    /// Dense `N x E` gate matrix (zero outside each row's top-k) and the
    /// matching per-token gate vectors.
    pub fn gates(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<GateVector>)> {
        let logits = self.logits(tape, x)?;
        let lm = tape.value(logits).clone();
        let mut mask = Vec::with_capacity(lm.len());
        let mut gates = Vec::with_capacity(lm.rows());
        for r in 0..lm.rows() {
            let g = GateVector::from_logits(lm.row(r), self.k_active)?;
            mask.extend((0..lm.cols()).map(|e| g.active().contains(&e)));
            gates.push(g);
        }
        Ok((tape.masked_softmax_rows(logits, mask)?, gates))
    }
}

/// `sum_n gates[:, n] * outs[n]`.
fn mixture(tape: &mut Tape, gates: Var, outs: &[Var]) -> Result<Var> {
    let mut terms = Vec::with_capacity(outs.len());
    for (n, out) in outs.iter().enumerate() {
        let g = tape.column(gates, n)?;
        terms.push(tape.mul_col(*out, g)?);
    }
    tape.add_all(&terms)
}

fn check_grids(tape: &Tape, t_r: Var, t_tde: Var, width: usize) -> Result<()> {
    let (a, b) = (tape.value(t_r).shape(), tape.value(t_tde).shape());
    ensure!(a == b, "token grids differ in shape: {a:?} vs {b:?}");
    ensure!(
        a.1 == width,
        "token width {} does not match layer width {width}",
        a.1
    );
    ensure!(a.0 > 0, "empty token grid");
    Ok(())
}

#[derive(Debug, Clone)]
pub(crate) struct CpVars {
    pub p_g: Var,
    pub hg_r: Var,
    pub hg_tde: Var,
    pub common_r: Vec<Var>,
    pub common_tde: Vec<Var>,
}

#[derive(Debug, Clone)]
pub(crate) struct SaVars {
    pub hs_r: Var,
    pub hs_tde: Var,
    pub specific_r: Vec<Var>,
    pub specific_tde: Vec<Var>,
    pub crossmodal_logits: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerVars {
    pub t_r: Var,
    pub t_tde: Var,
    pub cp: CpVars,
    pub sa: SaVars,
    pub f_r: Var,
    pub f_tde: Var,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderVars {
    pub grid: (usize, usize),
    pub layers: Vec<LayerVars>,
    pub f_u: Var,
}

fn run_experts(
    tape: &mut Tape,
    experts: &[super::params::BoundExpert],
    x: Var,
) -> Result<Vec<Var>> {
    experts.iter().map(|e| e.forward(tape, x)).collect()
}

pub(crate) fn cp_tape(tape: &mut Tape, b: &BoundMoe, t_r: Var, t_tde: Var) -> Result<CpVars> {
    let tg_r = b.shared.forward(tape, t_r)?;
    let tg_tde = b.shared.forward(tape, t_tde)?;
    let common_r = run_experts(tape, &b.common, t_r)?;
    let common_tde = run_experts(tape, &b.common, t_tde)?;
    let (g_r, _) = b.router_common.gates(tape, t_r)?;
    let (g_tde, _) = b.router_common.gates(tape, t_tde)?;
    let p_r = mixture(tape, g_r, &common_r)?;
    let p_tde = mixture(tape, g_tde, &common_tde)?;
    let q_r = b.proj_r.forward(tape, p_r)?;
    let q_tde = b.proj_tde.forward(tape, p_tde)?;
    let p_g = tape.hadamard(q_r, q_tde)?;
    let hg_r = tape.add(p_g, tg_r)?;
    let hg_tde = tape.add(p_g, tg_tde)?;
    Ok(CpVars {
        p_g,
        hg_r,
        hg_tde,
        common_r,
        common_tde,
    })
}

pub(crate) fn sa_tape(
    tape: &mut Tape,
    b: &BoundMoe,
    t_r: Var,
    t_tde: Var,
    tde_present: bool,
) -> Result<SaVars> {
    let specific_r = run_experts(tape, &b.specific_r, t_r)?;
    let (g_r, _) = b.router_r.gates(tape, t_r)?;
    let hs_r = mixture(tape, g_r, &specific_r)?;
    let (hs_tde, specific_tde) = if tde_present {
        let outs = run_experts(tape, &b.specific_tde, t_tde)?;
        let (g, _) = b.router_tde.gates(tape, t_tde)?;
        (mixture(tape, g, &outs)?, outs)
    } else {
        let (n, c) = tape.value(t_tde).shape();
        (tape.constant(Matrix::zeros(n, c))?, Vec::new())
    };
    let stacked = tape.concat_rows(&[t_r, t_tde])?;
    let logits = b.router_crossmodal.logits(tape, stacked)?;
    let crossmodal_logits = tape.mean_rows(logits)?;
    Ok(SaVars {
        hs_r,
        hs_tde,
        specific_r,
        specific_tde,
        crossmodal_logits,
    })
}

pub(crate) fn layer_tape(
    tape: &mut Tape,
    b: &BoundMoe,
    t_r: Var,
    t_tde: Var,
    tde_present: bool,
) -> Result<LayerVars> {
    let cp = cp_tape(tape, b, t_r, t_tde)?;
    let sa = sa_tape(tape, b, t_r, t_tde, tde_present)?;
    let f_r = tape.add_all(&[cp.hg_r, sa.hs_r, t_r])?;
    let f_tde = tape.add_all(&[cp.hg_tde, sa.hs_tde, t_tde])?;
    Ok(LayerVars {
        t_r,
        t_tde,
        cp,
        sa,
        f_r,
        f_tde,
    })
}

pub(crate) fn encoder_tape(
    tape: &mut Tape,
    stack: &EncoderStack,
    bound: &BoundEncoder,
    pair: &FramePair,
    plan: Option<&MaskPlan>,
) -> Result<EncoderVars> {
    let cfg = &stack.config;
    ensure!(
        pair.rgb.channels() == cfg.in_channels,
        "frame has {} channels, encoder expects {}",
        pair.rgb.channels(),
        cfg.in_channels
    );
    let grid = pair.rgb.grid(cfg.patch)?;
    let x_r = tape.constant(pair.rgb.patchify(cfg.patch)?)?;
    let x_tde = tape.constant(pair.tde_or_rgb().patchify(cfg.patch)?)?;
    let mut h_r = bound.patch_embed.forward(tape, x_r)?;
    let mut h_tde = bound.patch_embed.forward(tape, x_tde)?;
    if let Some(plan) = plan {
        ensure!(
            plan.rows.len() == bound.layers.len(),
            "mask plan covers {} layers, encoder has {}",
            plan.rows.len(),
            bound.layers.len()
        );
    }
    let present = pair.tde.is_some();
    let mut layers = Vec::with_capacity(bound.layers.len());
    for (l, layer) in bound.layers.iter().enumerate() {
        let mut t_r = layer.msa.forward(tape, h_r)?;
        let mut t_tde = layer.msa.forward(tape, h_tde)?;
        if let Some(plan) = plan {
            let rows = plan.rows[l].clone();
            if !rows.is_empty() {
                match plan.branch {
                    Branch::Rgb => t_r = tape.replace_rows(t_r, layer.moe.mask_token, rows)?,
                    Branch::Tde => t_tde = tape.replace_rows(t_tde, layer.moe.mask_token, rows)?,
                }
            }
        }
        check_grids(tape, t_r, t_tde, cfg.width)?;
        let lv = layer_tape(tape, &layer.moe, t_r, t_tde, present)?;
        h_r = lv.f_r;
        h_tde = lv.f_tde;
        layers.push(lv);
    }
    let f_u = tape.add(h_r, h_tde)?;
    Ok(EncoderVars { grid, layers, f_u })
}

/// Outputs of the common-prompt branch.
#[derive(Debug, Clone, PartialEq)]
pub struct CpMoeOutput {
    pub hg_r: Matrix,
    pub hg_tde: Matrix,
    pub p_g: Matrix,
}

/// Outputs of the modality-specific branch.
#[derive(Debug, Clone, PartialEq)]
pub struct SaMoeOutput {
    pub hs_r: Matrix,
    pub hs_tde: Matrix,
    pub crossmodal_logits: Vec<f64>,
}

/// Raw expert outputs of one modality in one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertOutputs {
    pub common: Vec<Matrix>,
    pub specific: Vec<Matrix>,
}

/// Intermediates of one encoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub t_r: Matrix,
    pub t_tde: Matrix,
    pub p_g: Matrix,
    pub hg_r: Matrix,
    pub hg_tde: Matrix,
    pub hs_r: Matrix,
    pub hs_tde: Matrix,
    pub f_r: Matrix,
    pub f_tde: Matrix,
    pub rgb_experts: ExpertOutputs,
    pub tde_experts: ExpertOutputs,
    pub crossmodal_logits: Vec<f64>,
}

impl LayerRecord {
    fn from_vars(tape: &Tape, lv: &LayerVars) -> Self {
        let vals = |vs: &[Var]| vs.iter().map(|v| tape.value(*v).clone()).collect();
        Self {
            t_r: tape.value(lv.t_r).clone(),
            t_tde: tape.value(lv.t_tde).clone(),
            p_g: tape.value(lv.cp.p_g).clone(),
            hg_r: tape.value(lv.cp.hg_r).clone(),
            hg_tde: tape.value(lv.cp.hg_tde).clone(),
            hs_r: tape.value(lv.sa.hs_r).clone(),
            hs_tde: tape.value(lv.sa.hs_tde).clone(),
            f_r: tape.value(lv.f_r).clone(),
            f_tde: tape.value(lv.f_tde).clone(),
            rgb_experts: ExpertOutputs {
                common: vals(&lv.cp.common_r),
                specific: vals(&lv.sa.specific_r),
            },
            tde_experts: ExpertOutputs {
                common: vals(&lv.cp.common_tde),
                specific: vals(&lv.sa.specific_tde),
            },
            crossmodal_logits: tape.value(lv.sa.crossmodal_logits).data().to_vec(),
        }
    }
}

/// Unified representation plus per-layer records.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub f_u: Matrix,
    /// Token grid `(rows, cols)`; `f_u` has `rows * cols` rows.
    pub grid: (usize, usize),
    pub layers: Vec<LayerRecord>,
}

impl EncoderOutput {
    pub(crate) fn from_vars(tape: &Tape, ev: &EncoderVars) -> Self {
        Self {
            f_u: tape.value(ev.f_u).clone(),
            grid: ev.grid,
            layers: ev
                .layers
                .iter()
                .map(|lv| LayerRecord::from_vars(tape, lv))
                .collect(),
        }
    }
}

fn check_width(tokens: &Matrix, width: usize) -> Result<()> {
    ensure!(
        tokens.cols() == width,
        "token width {} does not match expert width {width}",
        tokens.cols()
    );
    Ok(())
}

pub fn expert_forward(e: &Expert, tokens: &Matrix) -> Result<Matrix> {
    check_width(tokens, e.width())?;
    let mut tape = Tape::new(Precision::F64);
    let b = e.bind(&mut tape, "expert")?;
    let x = tape.constant(tokens.clone())?;
    let y = b.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

pub fn route(r: &Router, tokens: &Matrix) -> Result<Vec<GateVector>> {
    check_width(tokens, r.w.rows())?;
    let mut tape = Tape::new(Precision::F64);
    let b = r.bind(&mut tape, "router")?;
    let x = tape.constant(tokens.clone())?;
    Ok(b.gates(&mut tape, x)?.1)
}

pub fn cpmoe_forward(p: &DeMoELayerParams, t_r: &Matrix, t_tde: &Matrix) -> Result<CpMoeOutput> {
    let mut tape = Tape::new(Precision::F64);
    let b = p.bind(&mut tape, "")?;
    let r = tape.constant(t_r.clone())?;
    let t = tape.constant(t_tde.clone())?;
    check_grids(&tape, r, t, p.width())?;
    let cp = cp_tape(&mut tape, &b, r, t)?;
    Ok(CpMoeOutput {
        hg_r: tape.value(cp.hg_r).clone(),
        hg_tde: tape.value(cp.hg_tde).clone(),
        p_g: tape.value(cp.p_g).clone(),
    })
}

/// With `t_tde = None` the auxiliary branch is skipped and its output is zero.
pub fn samoe_forward(
    p: &DeMoELayerParams,
    t_r: &Matrix,
    t_tde: Option<&Matrix>,
) -> Result<SaMoeOutput> {
    let mut tape = Tape::new(Precision::F64);
    let b = p.bind(&mut tape, "")?;
    let r = tape.constant(t_r.clone())?;
    let t = tape.constant(t_tde.unwrap_or(t_r).clone())?;
    check_grids(&tape, r, t, p.width())?;
    let sa = sa_tape(&mut tape, &b, r, t, t_tde.is_some())?;
    Ok(SaMoeOutput {
        hs_r: tape.value(sa.hs_r).clone(),
        hs_tde: tape.value(sa.hs_tde).clone(),
        crossmodal_logits: tape.value(sa.crossmodal_logits).data().to_vec(),
    })
}

/// Returns `(F^R, F^TDE)`.
pub fn demoe_layer_forward(
    p: &DeMoELayerParams,
    t_r: &Matrix,
    t_tde: Option<&Matrix>,
) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new(Precision::F64);
    let b = p.bind(&mut tape, "")?;
    let r = tape.constant(t_r.clone())?;
    let t = tape.constant(t_tde.unwrap_or(t_r).clone())?;
    check_grids(&tape, r, t, p.width())?;
    let lv = layer_tape(&mut tape, &b, r, t, t_tde.is_some())?;
    Ok((tape.value(lv.f_r).clone(), tape.value(lv.f_tde).clone()))
}

/// Full encoder pass in the stack's configured precision.
pub fn encoder_forward(stack: &EncoderStack, pair: &FramePair) -> Result<EncoderOutput> {
    let mut tape = Tape::new(stack.config.precision);
    let bound = stack.bind(&mut tape)?;
    let ev = encoder_tape(&mut tape, stack, &bound, pair, None)?;
    Ok(EncoderOutput::from_vars(&tape, &ev))
}
