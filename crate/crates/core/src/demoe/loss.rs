use serde::{Deserialize, Serialize};

use super::forward::{encoder_tape, EncoderVars, ExpertOutputs};
use super::frame::FramePair;
use super::mask::MaskPlan;
use super::params::{EncoderStack, MODALITY_CLASSES};
use crate::error::{ensure, Result};
use crate::numerics::tape::projection_penalty;
use crate::numerics::{mse, Gradients, Matrix, Tape, Var};

/// Orthogonality penalty between the summed common-expert output and each
/// specific-expert output, summed over the given groups.
pub fn loss_ce(groups: &[ExpertOutputs]) -> Result<f64> {
    let mut total = 0.0;
    for g in groups {
        if g.specific.is_empty() {
            continue;
        }
        ensure!(!g.common.is_empty(), "orthogonality loss without common outputs");
        let mut u = g.common[0].clone();
        for c in &g.common[1..] {
            u = u.add(c)?;
        }
        for v in &g.specific {
            ensure!(
                v.shape() == u.shape(),
                "specific output {:?} does not match common output {:?}",
                v.shape(),
                u.shape()
            );
            total += projection_penalty(&u, v);
        }
    }
    Ok(total)
}

/// Summed cross-entropy of the cross-modal router over layers.
pub fn loss_task(logits: &[Vec<f64>], label: usize) -> Result<f64> {
    ensure!(
        label < MODALITY_CLASSES,
        "modality label {label} out of range for {MODALITY_CLASSES} classes"
    );
    let mut total = 0.0;
    for row in logits {
        ensure!(
            row.len() == MODALITY_CLASSES,
            "router produced {} logits, expected {MODALITY_CLASSES}",
            row.len()
        );
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total)
}

pub fn loss_moe_total(l_cm: f64, l_ce: f64, mu: f64, lambda: f64) -> Result<f64> {
    ensure!(mu >= 0.0 && lambda >= 0.0, "loss weights must be nonnegative");
    Ok(mu * l_cm + lambda * l_ce)
}

/// Detached per-layer `(HG^R, HG^TDE)` targets for the masked reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct CmTargets(pub Vec<(Matrix, Matrix)>);

impl CmTargets {
    fn from_vars(tape: &Tape, ev: &EncoderVars) -> Self {
        Self(
            ev.layers
                .iter()
                .map(|l| (tape.value(l.cp.hg_r).clone(), tape.value(l.cp.hg_tde).clone()))
                .collect(),
        )
    }
}

pub fn cm_targets(stack: &EncoderStack, pair: &FramePair) -> Result<CmTargets> {
    let mut tape = Tape::new(stack.config.precision);
    let bound = stack.bind(&mut tape)?;
    let ev = encoder_tape(&mut tape, stack, &bound, pair, None)?;
    Ok(CmTargets::from_vars(&tape, &ev))
}

/// Masked reconstruction loss with a freshly sampled plan.
pub fn loss_cm(stack: &EncoderStack, pair: &FramePair, mask_ratio: f64, seed: u64) -> Result<f64> {
    let (gh, gw) = pair.rgb.grid(stack.config.patch)?;
    let plan = MaskPlan::sample(
        seed,
        stack.layers.len(),
        gh * gw,
        mask_ratio,
        pair.tde.is_some(),
    )?;
    loss_cm_with_plan(stack, pair, &plan)
}

pub fn loss_cm_with_plan(stack: &EncoderStack, pair: &FramePair, plan: &MaskPlan) -> Result<f64> {
    if plan.is_empty() {
        return Ok(0.0);
    }
    let targets = cm_targets(stack, pair)?;
    let mut tape = Tape::new(stack.config.precision);
    let bound = stack.bind(&mut tape)?;
    let masked = encoder_tape(&mut tape, stack, &bound, pair, Some(plan))?;
    let mut total = 0.0;
    for (l, (tr, tt)) in masked.layers.iter().zip(&targets.0) {
        total += mse(tape.value(l.cp.hg_r), tr)? + mse(tape.value(l.cp.hg_tde), tt)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mu: f64,
    pub lambda: f64,
    pub task: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mu: 1.0,
            lambda: 1.0,
            task: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cm: f64,
    pub l_ce: f64,
    pub l_task: f64,
    pub total: f64,
    pub mu: f64,
    pub lambda: f64,
}

/// Selects one loss term for isolated gradient evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerm {
    Cm,
    Ce,
    Task,
}

struct TermVars {
    l_cm: Var,
    l_ce: Var,
    l_task: Var,
}

fn zero(tape: &mut Tape) -> Result<Var> {
    tape.constant(Matrix::zeros(1, 1))
}

fn build_terms(
    tape: &mut Tape,
    stack: &EncoderStack,
    pair: &FramePair,
    plan: &MaskPlan,
    targets: Option<&CmTargets>,
) -> Result<TermVars> {
    let bound = stack.bind(tape)?;
    let ev = encoder_tape(tape, stack, &bound, pair, None)?;

    let mut ce_terms = Vec::new();
    for l in &ev.layers {
        for (common, specific) in [
            (&l.cp.common_r, &l.sa.specific_r),
            (&l.cp.common_tde, &l.sa.specific_tde),
        ] {
            if specific.is_empty() {
                continue;
            }
            let u = tape.add_all(common)?;
            for v in specific {
                ce_terms.push(tape.projection_penalty(u, *v)?);
            }
        }
    }
    let l_ce = if ce_terms.is_empty() {
        zero(tape)?
    } else {
        tape.add_all(&ce_terms)?
    };

    let label = pair.modality.class_index();
    let mut task_terms = Vec::new();
    for l in &ev.layers {
        task_terms.push(tape.cross_entropy(l.sa.crossmodal_logits, label)?);
    }
    let l_task = if task_terms.is_empty() {
        zero(tape)?
    } else {
        tape.add_all(&task_terms)?
    };

    let l_cm = if plan.is_empty() {
        zero(tape)?
    } else {
        let owned;
        let targets = match targets {
            Some(t) => t,
            None => {
                owned = CmTargets::from_vars(tape, &ev);
                &owned
            }
        };
        ensure!(
            targets.0.len() == ev.layers.len(),
            "reconstruction targets cover {} layers, encoder has {}",
            targets.0.len(),
            ev.layers.len()
        );
        let masked = encoder_tape(tape, stack, &bound, pair, Some(plan))?;
        let mut terms = Vec::new();
        for (l, (tr, tt)) in masked.layers.iter().zip(&targets.0) {
            terms.push(tape.mse(l.cp.hg_r, tr.clone())?);
            terms.push(tape.mse(l.cp.hg_tde, tt.clone())?);
        }
        tape.add_all(&terms)?
    };
    Ok(TermVars { l_cm, l_ce, l_task })
}

/// Weighted decoupling objective and its parameter gradients.
pub fn decoupling_objective(
    stack: &EncoderStack,
    pair: &FramePair,
    weights: &LossWeights,
    plan: &MaskPlan,
) -> Result<(LossReport, Gradients)> {
    ensure!(
        weights.mu >= 0.0 && weights.lambda >= 0.0 && weights.task >= 0.0,
        "loss weights must be nonnegative"
    );
    let mut tape = Tape::new(stack.config.precision);
    let t = build_terms(&mut tape, stack, pair, plan, None)?;
    let a = tape.scale(t.l_cm, weights.mu)?;
    let b = tape.scale(t.l_ce, weights.lambda)?;
    let c = tape.scale(t.l_task, weights.task)?;
    let total = tape.add_all(&[c, a, b])?;
    let grads = tape.named_gradients(&tape.backward(total)?);
    let report = LossReport {
        l_cm: tape.scalar(t.l_cm),
        l_ce: tape.scalar(t.l_ce),
        l_task: tape.scalar(t.l_task),
        total: tape.scalar(total),
        mu: weights.mu,
        lambda: weights.lambda,
    };
    Ok((report, grads))
}

/// Value and gradients of a single term. For [`LossTerm::Cm`] the targets are
/// held fixed, which is the function whose gradient training uses.
pub fn term_gradients(
    stack: &EncoderStack,
    pair: &FramePair,
    term: LossTerm,
    plan: &MaskPlan,
    targets: &CmTargets,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new(stack.config.precision);
    let t = build_terms(&mut tape, stack, pair, plan, Some(targets))?;
    let v = match term {
        LossTerm::Cm => t.l_cm,
        LossTerm::Ce => t.l_ce,
        LossTerm::Task => t.l_task,
    };
    let grads = tape.named_gradients(&tape.backward(v)?);
    Ok((tape.scalar(v), grads))
}
