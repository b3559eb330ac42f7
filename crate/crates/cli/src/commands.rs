use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use moetrack::demoe::{
    cm_targets, grad_check, term_gradients, EncoderConfig, EncoderStack, Frame, FramePair,
    GradCheckReport, LossTerm, MaskPlan, ModalityPair,
};
use moetrack::metrics::evaluate;
use moetrack::numerics::rng::{gaussian_matrix, stream_rng, streams};
use moetrack::numerics::Precision;
use moetrack::params::{ArchiveHeader, ParamArchive, ParamBlocks, VERSION};
use moetrack::simworld::{generate_sequence, oracle_detections, GroundTruth};
use moetrack::tamot::wire::{DetectionFile, TrackFile};
use moetrack::tamot::{track_sequence, FrameInput, TrackMode, TrackerParams};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::train::{train_toy, StepLosses, TRACKER_PREFIX};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const FRAME_RESULTS_FILE: &str = "frame_results.jsonl";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const MATCH_LOG_FILE: &str = "match_log.jsonl";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const LOSSES_FILE: &str = "losses.csv";
pub const PARAMS_FILE: &str = "params.bin";

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(path))
}

/// Missing inputs are reported with their path before any parsing.
fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}

/// Generates a scene and writes oracle detections plus ground truth.
///
/// Frame 0 of the detection file carries the ground-truth box of
/// `eval.sot_target` as the single-object prior.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let seq = generate_sequence(&cfg.sim)?;
    let mut dets = oracle_detections(&seq)?;
    let target = cfg.eval.sot_target;
    if let (Some(first), Some(gt)) = (dets.frames.first_mut(), seq.ground_truth.frames.first()) {
        let obj = gt.objects.iter().find(|o| o.id == target).ok_or_else(|| CliError::Config {
            key: "eval.sot_target".into(),
            message: format!("scene has no object {target}"),
        })?;
        first.prior = Some(obj.bbox);
    }
    prepare_dir(out)?;
    let det_path = out.join(DETECTIONS_FILE);
    let gt_path = out.join(GROUNDTRUTH_FILE);
    dets.write(&det_path).map_err(CliError::input(&det_path))?;
    seq.ground_truth.write(&gt_path).map_err(CliError::input(&gt_path))?;
    Ok(vec![det_path, gt_path])
}

#[derive(Serialize)]
struct FrameResultLine<'a> {
    frame: usize,
    #[serde(flatten)]
    result: &'a moetrack::tamot::FrameResult,
}

/// Runs the tracker over a detection file.
pub fn track(
    cfg: &RunConfig,
    detections: &Path,
    mode: TrackMode,
    out: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    require_file(detections)?;
    let dets = DetectionFile::read(detections).map_err(CliError::input(detections))?;
    let frames: Vec<FrameInput> = dets
        .frames
        .into_iter()
        .map(|f| FrameInput {
            frame: f.frame,
            detections: f.detections,
            prior: f.prior,
            feature_map: None,
        })
        .collect();
    let params = TrackerParams::init(&cfg.tracker, cfg.seed)?;
    let outputs = track_sequence(&cfg.tracker, &params, mode, &frames)?;
    let tracks = TrackFile::from_outputs(mode, &outputs);

    let mut log = String::new();
    for o in &outputs {
        let line = FrameResultLine {
            frame: o.frame,
            result: &o.result,
        };
        log.push_str(&serde_json::to_string(&line).map_err(|e| CliError::Core(moetrack::Error::Format(e.to_string())))?);
        log.push('\n');
    }
    prepare_dir(out)?;
    let tracks_path = out.join(TRACKS_FILE);
    let log_path = out.join(FRAME_RESULTS_FILE);
    tracks.write(&tracks_path).map_err(CliError::input(&tracks_path))?;
    write_text(&log_path, &log)?;
    Ok(vec![tracks_path, log_path])
}

/// Scores a track file against ground truth.
pub fn eval(cfg: &RunConfig, gt: &Path, tracks: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    require_file(gt)?;
    require_file(tracks)?;
    let truth = GroundTruth::read(gt).map_err(CliError::input(gt))?;
    let predicted = TrackFile::read(tracks).map_err(CliError::input(tracks))?;
    let report = evaluate(&truth, &predicted, cfg.eval.iou_threshold, cfg.eval.sot_target)?;
    prepare_dir(out)?;
    let json_path = out.join(METRICS_JSON_FILE);
    let csv_path = out.join(METRICS_CSV_FILE);
    let log_path = out.join(MATCH_LOG_FILE);
    write_text(&json_path, &(report.to_json()? + "\n"))?;
    write_text(&csv_path, &report.to_csv())?;
    write_text(&log_path, &report.frame_log_jsonl()?)?;
    Ok(vec![json_path, csv_path, log_path])
}

/// Gradient check of one loss term.
#[derive(Debug, Clone, Serialize)]
pub struct TermCheck {
    pub term: &'static str,
    pub value: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub report: GradCheckReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckOutcome {
    pub width: usize,
    pub depth: usize,
    pub tokens: usize,
    pub tolerance: f64,
    #[serde(skip)]
    pub seconds: f64,
    pub passed: bool,
    pub terms: Vec<TermCheck>,
    /// Frozen blocks together with the largest analytic gradient seen on them.
    pub frozen: Vec<(String, f64)>,
}

/// Standard deviation of the noise added to trainable blocks before the
/// gradient check.
pub const GRADCHECK_JITTER: f64 = 0.1;

/// Small 64-bit encoder at a randomized point and a random frame pair for
/// the gradient check.
pub fn gradcheck_problem(cfg: &RunConfig) -> Result<(EncoderStack, FramePair), CliError> {
    let g = &cfg.gradcheck;
    let e = &cfg.encoder;
    let config = EncoderConfig {
        width: g.width,
        depth: g.depth,
        precision: Precision::F64,
        ..e.encoder_config()
    };
    config.validate()?;
    let side = (g.tokens as f64).sqrt().round() as usize * config.patch;
    let mut stack = EncoderStack::init(config, cfg.seed)?;
    let mut rng = stream_rng(cfg.seed, streams::TRAIN_DATA);
    // move every trainable block off its initial values, biases included
    stack.visit_mut("", &mut |_, m, frozen| {
        if !frozen {
            let noise = gaussian_matrix(&mut rng, m.rows(), m.cols(), GRADCHECK_JITTER);
            for (x, n) in m.data_mut().iter_mut().zip(noise.data()) {
                *x += n;
            }
        }
    });
    let mut frame = || {
        let m = gaussian_matrix(&mut rng, 1, side * side * e.in_channels, 1.0);
        Frame::new(side, side, e.in_channels, m.data().to_vec())
    };
    let rgb = frame()?;
    let tde = frame()?;
    Ok((stack, FramePair::new(rgb, Some(tde), ModalityPair::RgbThermal)?))
}

/// Finite-difference check of L_CM, L_CE and L_TASK. A term passes when
/// every trainable block stays strictly below the tolerance and every frozen
/// block has an identically zero gradient.
pub fn gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckOutcome, CliError> {
    let start = Instant::now();
    let g = &cfg.gradcheck;
    let (stack, pair) = gradcheck_problem(cfg)?;
    let plan = MaskPlan::sample(
        cfg.seed,
        g.depth,
        g.tokens,
        cfg.encoder.mask_ratio,
        true,
    )?;
    let targets = cm_targets(&stack, &pair)?;
    let mut terms = Vec::new();
    for (name, term) in [("l_cm", LossTerm::Cm), ("l_ce", LossTerm::Ce), ("l_task", LossTerm::Task)] {
        let f = |s: &EncoderStack| term_gradients(s, &pair, term, &plan, &targets);
        let (value, _) = f(&stack)?;
        let report = grad_check(&stack, f, g.epsilon, g.tolerance)?;
        let max_rel_error = report.max_rel_error();
        let frozen_clean = report.blocks.iter().filter(|b| b.frozen).all(|b| b.max_abs_analytic == 0.0);
        terms.push(TermCheck {
            term: name,
            value,
            max_rel_error,
            passed: max_rel_error < g.tolerance && frozen_clean,
            report,
        });
    }
    let mut frozen: Vec<(String, f64)> = Vec::new();
    for t in &terms {
        for b in t.report.blocks.iter().filter(|b| b.frozen) {
            match frozen.iter_mut().find(|(n, _)| *n == b.name) {
                Some((_, m)) => *m = m.max(b.max_abs_analytic),
                None => frozen.push((b.name.clone(), b.max_abs_analytic)),
            }
        }
    }
    let outcome = GradcheckOutcome {
        width: g.width,
        depth: g.depth,
        tokens: g.tokens,
        tolerance: g.tolerance,
        seconds: start.elapsed().as_secs_f64(),
        passed: terms.iter().all(|t| t.passed),
        terms,
        frozen,
    };
    prepare_dir(out)?;
    let path = out.join(GRADCHECK_FILE);
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| CliError::Core(moetrack::Error::Format(e.to_string())))?;
    write_text(&path, &(json + "\n"))?;
    Ok(outcome)
}

/// One-line-per-term summary of a gradient check.
pub fn gradcheck_summary(o: &GradcheckOutcome) -> String {
    let mut s = String::new();
    for t in &o.terms {
        s.push_str(&format!(
            "{:<7} value {:>12.6e}  max rel error {:.3e}  {}\n",
            t.term,
            t.value,
            t.max_rel_error,
            if t.passed { "ok" } else { "FAIL" }
        ));
        for b in t.report.failures() {
            s.push_str(&format!("    {} {:.3e}\n", b.name, b.max_rel_error));
        }
    }
    for (name, m) in &o.frozen {
        s.push_str(&format!("frozen  {name}: max |grad| {m}\n"));
    }
    s
}

/// Runs the toy optimization and writes the loss curve and a parameter
/// snapshot. Fails verification if a frozen block changed.
pub fn train(cfg: &RunConfig, steps: usize, out: &Path) -> Result<Vec<StepLosses>, CliError> {
    let outcome = train_toy(cfg, steps)?;
    prepare_dir(out)?;
    let mut csv = String::from(StepLosses::CSV_HEADER);
    csv.push('\n');
    for row in &outcome.curve {
        csv.push_str(&row.csv_row());
        csv.push('\n');
    }
    write_text(&out.join(LOSSES_FILE), &csv)?;

    let e = &outcome.encoder.config;
    let mut archive = ParamArchive::new(ArchiveHeader {
        version: VERSION,
        width: e.width as u32,
        depth: e.depth as u32,
        common_experts: e.common_experts as u32,
        specific_experts: e.specific_experts as u32,
    });
    archive.push_params(&outcome.encoder, "");
    archive.push_params(&outcome.tracker, TRACKER_PREFIX);
    let path = out.join(PARAMS_FILE);
    archive.write(&path).map_err(CliError::input(&path))?;

    let changed = outcome.changed_frozen_blocks();
    if !changed.is_empty() {
        return Err(CliError::Verification(format!(
            "frozen blocks changed during training: {}",
            changed.join(", ")
        )));
    }
    Ok(outcome.curve)
}
