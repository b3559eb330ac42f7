use std::path::{Path, PathBuf};

use moetrack::demoe::{EncoderConfig, LossWeights};
use moetrack::numerics::Precision;
use moetrack::simworld::SceneConfig;
use moetrack::tamot::TrackerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Encoder architecture plus the decoupling-loss settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub width: usize,
    pub depth: usize,
    pub patch: usize,
    pub in_channels: usize,
    pub heads: usize,
    pub common_experts: usize,
    pub specific_experts: usize,
    pub top_k: usize,
    pub mu: f64,
    pub lambda: f64,
    pub task_weight: f64,
    pub mask_ratio: f64,
    pub precision: Precision,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let e = EncoderConfig::default();
        let w = LossWeights::default();
        Self {
            width: e.width,
            depth: e.depth,
            patch: e.patch,
            in_channels: e.in_channels,
            heads: e.heads,
            common_experts: e.common_experts,
            specific_experts: e.specific_experts,
            top_k: e.top_k,
            mu: w.mu,
            lambda: w.lambda,
            task_weight: w.task,
            mask_ratio: 0.25,
            precision: e.precision,
        }
    }
}

impl EncoderSection {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            width: self.width,
            depth: self.depth,
            patch: self.patch,
            in_channels: self.in_channels,
            heads: self.heads,
            common_experts: self.common_experts,
            specific_experts: self.specific_experts,
            top_k: self.top_k,
            precision: self.precision,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mu: self.mu,
            lambda: self.lambda,
            task: self.task_weight,
        }
    }
}

/// Toy optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: usize,
    pub learning_rate: f64,
    /// Side length of the square training images.
    pub image_size: usize,
    pub objects: usize,
    pub frames_per_modality: usize,
    /// Also trains the tracker on association losses.
    pub association: bool,
    pub association_objects: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 1e-2,
            image_size: 32,
            objects: 2,
            frames_per_modality: 1,
            association: true,
            association_objects: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub iou_threshold: f64,
    /// Ground-truth object followed in single-object mode.
    pub sot_target: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            sot_target: 0,
        }
    }
}

/// Problem size for the finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub width: usize,
    pub depth: usize,
    /// Tokens per modality; must be a perfect square.
    pub tokens: usize,
    pub epsilon: f64,
    pub tolerance: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            width: 8,
            depth: 2,
            tokens: 4,
            epsilon: 1e-5,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub encoder: EncoderSection,
    pub tracker: TrackerConfig,
    pub sim: SceneConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub gradcheck: GradcheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            encoder: EncoderSection::default(),
            tracker: TrackerConfig::default(),
            sim: SceneConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Dotted path of the offending key, recovered from a TOML error.
fn key_of(err: &toml::de::Error) -> String {
    let msg = err.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    "config".to_string()
}

fn unknown_key_path(value: &toml::Value, err: &toml::de::Error) -> String {
    let key = key_of(err);
    // look for the table holding the key so the message names its section
    if let toml::Value::Table(root) = value {
        if root.contains_key(&key) {
            return key;
        }
        for (section, v) in root {
            if let toml::Value::Table(t) = v {
                if t.contains_key(&key) {
                    return format!("{section}.{key}");
                }
                for (sub, w) in t {
                    if matches!(w, toml::Value::Table(s) if s.contains_key(&key)) {
                        return format!("{section}.{sub}.{key}");
                    }
                }
            }
        }
    }
    key
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let value: toml::Value =
            toml::from_str(text).map_err(|e| config_err("config", format!("invalid TOML: {}", e.message())))?;
        if value.get("sim").and_then(|s| s.get("seed")).is_some() {
            return Err(config_err("sim.seed", "scene seed comes from the top-level `seed`"));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = unknown_key_path(&value, &e);
            config_err(&key, e.message().to_string())
        })?;
        cfg.sim.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sim.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder.encoder_config().validate()?;
        let e = &self.encoder;
        for (key, v) in [
            ("encoder.mu", e.mu),
            ("encoder.lambda", e.lambda),
            ("encoder.task_weight", e.task_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(key, format!("{v} must be nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&e.mask_ratio) {
            return Err(config_err("encoder.mask_ratio", format!("{} outside [0, 1]", e.mask_ratio)));
        }
        self.tracker.validate()?;
        self.sim.validate()?;
        if self.sim.appearance_dim != self.tracker.feature_width {
            return Err(config_err(
                "sim.appearance_dim",
                format!(
                    "{} must equal tracker.feature_width ({})",
                    self.sim.appearance_dim, self.tracker.feature_width
                ),
            ));
        }
        let t = &self.train;
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(config_err("train.learning_rate", "must be positive"));
        }
        if t.image_size == 0 || t.image_size % e.patch != 0 {
            return Err(config_err(
                "train.image_size",
                format!("{} is not a positive multiple of encoder.patch ({})", t.image_size, e.patch),
            ));
        }
        if t.frames_per_modality == 0 {
            return Err(config_err("train.frames_per_modality", "must be at least 1"));
        }
        if t.association && t.association_objects == 0 {
            return Err(config_err("train.association_objects", "must be at least 1"));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            return Err(config_err("eval.iou_threshold", "must lie in (0, 1]"));
        }
        let g = &self.gradcheck;
        let side = (g.tokens as f64).sqrt().round() as usize;
        if g.tokens == 0 || side * side != g.tokens {
            return Err(config_err("gradcheck.tokens", format!("{} is not a perfect square", g.tokens)));
        }
        if g.width < 8 {
            return Err(config_err("gradcheck.width", "must be at least 8"));
        }
        if !(g.epsilon > 0.0) {
            return Err(config_err("gradcheck.epsilon", "must be positive"));
        }
        if !(g.tolerance >= 0.0) {
            return Err(config_err("gradcheck.tolerance", "must be nonnegative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_hold_the_reference_constants() {
        let c = RunConfig::default();
        assert_eq!((c.encoder.common_experts, c.encoder.specific_experts, c.encoder.top_k), (4, 4, 2));
        assert_eq!((c.tracker.tau_mask, c.tracker.tau_th), (0.7, 0.75));
        assert_eq!((c.tracker.history_len, c.tracker.termination_gap), (15, 50));
        assert_eq!(moetrack::tamot::QUERY_TOKENS, 8);
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::from_toml("[tracker]\ntau_th = 1.5\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { key, .. } if key == "tracker.tau_th"), "{e}");
        let e = RunConfig::from_toml("[encoder]\nwidht = 8\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { key, .. } if key == "encoder.widht"), "{e}");
        let e = RunConfig::from_toml("bogus = 1\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { key, .. } if key == "bogus"), "{e}");
        let e = RunConfig::from_toml("[sim]\nseed = 3\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { key, .. } if key == "sim.seed"), "{e}");
        let e = RunConfig::from_toml("[sim]\nmiss_rate = 1.0\n").unwrap_err();
        assert!(matches!(&e, CliError::Config { key, .. } if key == "sim.miss_rate"), "{e}");
    }

    #[test]
    fn seed_reaches_the_scene() {
        let c = RunConfig::from_toml("seed = 9\n").unwrap();
        assert_eq!(c.sim.seed, 9);
        assert_eq!(c.with_seed(4).sim.seed, 4);
    }
}
