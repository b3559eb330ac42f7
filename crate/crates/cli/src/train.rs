use moetrack::demoe::{decoupling_objective, EncoderStack, FramePair, LossReport, MaskPlan, ModalityPair};
use moetrack::numerics::rng::{stream_rng, streams, substream};
use moetrack::numerics::Gradients;
use moetrack::params::{collect_blocks, gradient_step, NamedBlock};
use moetrack::simworld::{generate_sequence, oracle_detect, render_frame, SceneConfig};
use moetrack::tamot::{
    association_objective, augment_inputs, candidate_inputs, generate_candidates_mot,
    AssociationInstance, TrackerParams,
};
use moetrack::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Prefix of tracker blocks in gradients and parameter snapshots.
pub const TRACKER_PREFIX: &str = "tracker";

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLosses {
    pub step: usize,
    pub l_cm: f64,
    pub l_ce: f64,
    pub l_task: f64,
    pub total: f64,
    pub l_assoc: f64,
}

impl StepLosses {
    pub const CSV_HEADER: &'static str = "step,l_cm,l_ce,l_task,total,l_assoc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.l_cm, self.l_ce, self.l_task, self.total, self.l_assoc
        )
    }

    fn is_finite(&self) -> bool {
        [self.l_cm, self.l_ce, self.l_task, self.total, self.l_assoc]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Frames of every modality pair, rendered from small seeded scenes.
pub fn toy_frames(cfg: &RunConfig) -> Result<Vec<FramePair>, CliError> {
    let t = &cfg.train;
    let mut out = Vec::new();
    for m in ModalityPair::ALL {
        let scene = SceneConfig {
            n_objects: t.objects,
            n_frames: t.frames_per_modality,
            image_height: t.image_size,
            image_width: t.image_size,
            modality: m,
            miss_rate: 0.0,
            occlusions: Vec::new(),
            appearance_dim: cfg.tracker.feature_width,
            seed: substream(substream(streams::TRAIN_DATA, cfg.seed), m.class_index() as u64),
            ..SceneConfig::default()
        };
        let seq = generate_sequence(&scene)?;
        for f in 0..t.frames_per_modality {
            out.push(render_frame(&seq, f)?);
        }
    }
    Ok(out)
}

/// Two consecutive frames of a seeded scene with identity correspondences.
pub fn toy_association(cfg: &RunConfig) -> Result<AssociationInstance, CliError> {
    let scene = SceneConfig {
        n_objects: cfg.train.association_objects,
        n_frames: 2,
        miss_rate: 0.0,
        occlusions: Vec::new(),
        ghosts: false,
        appearance_dim: cfg.tracker.feature_width,
        seed: substream(streams::TRAIN_DATA, cfg.seed ^ 0xA550),
        ..cfg.sim.clone()
    };
    let seq = generate_sequence(&scene)?;
    let inputs = |t: usize| -> Result<_, CliError> {
        let dets = oracle_detect(&seq, t)?;
        let cands = generate_candidates_mot(&dets, cfg.tracker.score_floor)?;
        Ok(candidate_inputs(&cands, None, &cfg.tracker)?)
    };
    let previous = inputs(0)?;
    let current = inputs(1)?;
    let n = previous.len().min(current.len());
    Ok(AssociationInstance {
        previous,
        current,
        correspondences: (0..n).map(|i| (i, i)).collect(),
        target: 0,
    })
}

/// Result of a toy optimization run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub curve: Vec<StepLosses>,
    pub encoder: EncoderStack,
    pub tracker: TrackerParams,
    pub frozen_before: Vec<NamedBlock>,
}

impl TrainOutcome {
    /// Frozen blocks whose bits changed during training.
    pub fn changed_frozen_blocks(&self) -> Vec<String> {
        let after = frozen_blocks(&self.encoder);
        self.frozen_before
            .iter()
            .zip(&after)
            .filter(|(a, b)| {
                a.name != b.name
                    || a.matrix.data().iter().zip(b.matrix.data()).any(|(x, y)| x.to_bits() != y.to_bits())
            })
            .map(|(a, _)| a.name.clone())
            .collect()
    }
}

pub fn frozen_blocks(stack: &EncoderStack) -> Vec<NamedBlock> {
    collect_blocks(stack, "").into_iter().filter(|b| b.frozen).collect()
}

fn encoder_pass(
    stack: &EncoderStack,
    frames: &[FramePair],
    cfg: &RunConfig,
    step: usize,
) -> Result<(LossReport, Gradients), CliError> {
    let weights = cfg.encoder.weights();
    let depth = stack.config.depth;
    let mut grads = Gradients::new();
    let mut sum = LossReport {
        l_cm: 0.0,
        l_ce: 0.0,
        l_task: 0.0,
        total: 0.0,
        mu: weights.mu,
        lambda: weights.lambda,
    };
    let n = frames.len() as f64;
    for (i, pair) in frames.iter().enumerate() {
        let (gh, gw) = pair.rgb.grid(stack.config.patch)?;
        let seed = substream(substream(streams::MASKING, cfg.seed), (step * frames.len() + i) as u64);
        let plan = MaskPlan::sample(seed, depth, gh * gw, cfg.encoder.mask_ratio, pair.tde.is_some())?;
        let (r, g) = decoupling_objective(stack, pair, &weights, &plan)?;
        sum.l_cm += r.l_cm / n;
        sum.l_ce += r.l_ce / n;
        sum.l_task += r.l_task / n;
        sum.total += r.total / n;
        grads.accumulate(&g);
    }
    grads.scale(1.0 / n);
    Ok((sum, grads))
}

/// Plain gradient descent on the decoupling objective over toy frames and,
/// when enabled, on the association losses.
///
/// Row `s` of the curve holds the losses at the parameters before update
/// `s`; the final row (step = `steps`) is evaluated after the last update.
pub fn train_toy(cfg: &RunConfig, steps: usize) -> Result<TrainOutcome, CliError> {
    let frames = toy_frames(cfg)?;
    train_on(cfg, &frames, steps)
}

/// [`train_toy`] on caller-supplied encoder frames.
pub fn train_on(cfg: &RunConfig, frames: &[FramePair], steps: usize) -> Result<TrainOutcome, CliError> {
    if steps == 0 {
        return Err(CliError::Config {
            key: "train.steps".into(),
            message: "must be at least 1".into(),
        });
    }
    let mut encoder = EncoderStack::init(cfg.encoder.encoder_config(), cfg.seed)?;
    let mut tracker = TrackerParams::init(&cfg.tracker, cfg.seed)?;
    let frozen_before = frozen_blocks(&encoder);
    let assoc = if cfg.train.association {
        Some(toy_association(cfg)?)
    } else {
        None
    };
    let lr = cfg.train.learning_rate;
    let mut curve = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (report, grads) = encoder_pass(&encoder, frames, cfg, step)?;
        let mut l_assoc = 0.0;
        let mut tracker_grads = None;
        if let Some(inst) = &assoc {
            let mut rng = stream_rng(cfg.seed, substream(streams::AUGMENT, step as u64));
            let augmented = augment_inputs(&inst.current, &cfg.tracker.augment, &mut rng)?;
            let (r, g) = association_objective(&tracker, &cfg.tracker, inst, &augmented, TRACKER_PREFIX)?;
            l_assoc = r.total;
            tracker_grads = Some(g);
        }
        let row = StepLosses {
            step,
            l_cm: report.l_cm,
            l_ce: report.l_ce,
            l_task: report.l_task,
            total: report.total,
            l_assoc,
        };
        if !row.is_finite() {
            return Err(Error::Divergence(step).into());
        }
        curve.push(row);
        if step == steps {
            break;
        }
        gradient_step(&mut encoder, "", &grads, lr);
        if let Some(g) = tracker_grads {
            gradient_step(&mut tracker, TRACKER_PREFIX, &g, lr);
        }
    }
    Ok(TrainOutcome {
        curve,
        encoder,
        tracker,
        frozen_before,
    })
}
