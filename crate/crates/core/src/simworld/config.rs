use serde::{Deserialize, Serialize};

use crate::demoe::ModalityPair;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Linear,
    Bounce,
}

/// An object hidden for `length` frames starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionWindow {
    pub object: usize,
    pub start: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_objects: usize,
    pub n_frames: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub motion: Motion,
    /// Standard deviation of detector center noise, in image units.
    pub sigma_pos: f64,
    pub miss_rate: f64,
    pub occlusions: Vec<OcclusionWindow>,
    /// Minimum pairwise Euclidean distance between appearance vectors.
    pub appearance_margin: f64,
    pub appearance_dim: usize,
    pub modality: ModalityPair,
    /// Object side lengths are drawn from `[min_size, max_size]`.
    pub min_size: f64,
    pub max_size: f64,
    /// Largest per-frame displacement along each axis.
    pub max_speed: f64,
    /// Lets objects share space; otherwise each object keeps to its own cell.
    pub allow_overlap: bool,
    /// Occluded objects emit low-score detections with `s_occ = -1`.
    pub ghosts: bool,
    /// Standard deviation of pixel noise in rendered frames.
    pub render_noise: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_objects: 5,
            n_frames: 200,
            image_height: 64,
            image_width: 64,
            motion: Motion::Bounce,
            sigma_pos: 0.005,
            miss_rate: 0.05,
            occlusions: Vec::new(),
            appearance_margin: 2.0,
            appearance_dim: 32,
            modality: ModalityPair::RgbThermal,
            min_size: 0.1,
            max_size: 0.16,
            max_speed: 0.004,
            allow_overlap: false,
            ghosts: false,
            render_noise: 0.01,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, msg: String| Err(Error::config(format!("sim.{key}"), msg));
        if self.image_height == 0 || self.image_width == 0 {
            return err("image_height", "image dimensions must be positive".into());
        }
        if !(self.sigma_pos.is_finite() && self.sigma_pos >= 0.0) {
            return err("sigma_pos", format!("{} is not a nonnegative number", self.sigma_pos));
        }
        if !(self.miss_rate.is_finite() && (0.0..1.0).contains(&self.miss_rate)) {
            return err("miss_rate", format!("{} outside [0, 1)", self.miss_rate));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size <= 1.0) {
            return err(
                "min_size",
                format!("need 0 < min_size <= max_size <= 1, got {} and {}", self.min_size, self.max_size),
            );
        }
        if !(self.max_speed.is_finite() && self.max_speed >= 0.0) {
            return err("max_speed", format!("{} is not a nonnegative number", self.max_speed));
        }
        if !(self.appearance_margin.is_finite() && self.appearance_margin >= 0.0) {
            return err("appearance_margin", "must be nonnegative".into());
        }
        if self.appearance_dim == 0 {
            return err("appearance_dim", "must be at least 1".into());
        }
        if !(self.render_noise.is_finite() && self.render_noise >= 0.0) {
            return err("render_noise", "must be nonnegative".into());
        }
        for (i, w) in self.occlusions.iter().enumerate() {
            if w.object >= self.n_objects {
                return err("occlusions", format!("window {i} names object {} of {}", w.object, self.n_objects));
            }
            if w.length == 0 || w.start + w.length > self.n_frames {
                return err(
                    "occlusions",
                    format!("window {i} [{}, {}) leaves [0, {})", w.start, w.start + w.length, self.n_frames),
                );
            }
        }
        Ok(())
    }

    pub fn occluded(&self, object: usize, frame: usize) -> bool {
        self.occlusions
            .iter()
            .any(|w| w.object == object && (w.start..w.start + w.length).contains(&frame))
    }
}
