use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Motion, SceneConfig};
use crate::error::{Error, Result};
use crate::numerics::rng::{normal, stream_rng, streams};
use crate::tamot::wire::{lines, parse_line, record_err, to_line, WIRE_VERSION};
use crate::tamot::{BBox, BinaryMask};

pub const GROUND_TRUTH_FORMAT: &str = "moetrack-groundtruth";

const PALETTE: [[f64; 3]; 3] = [[0.9, 0.2, 0.2], [0.2, 0.8, 0.3], [0.25, 0.35, 0.9]];
const SIGNATURES: [f64; 2] = [0.35, 0.85];

/// Static description of one simulated object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub id: usize,
    pub width: f64,
    pub height: f64,
    pub start: (f64, f64),
    pub velocity: (f64, f64),
    /// Admissible center range `(x_lo, x_hi, y_lo, y_hi)`.
    pub bounds: (f64, f64, f64, f64),
    /// Identity vector handed to the tracker by the oracle detector.
    pub appearance: Vec<f64>,
    /// RGB color.
    pub color: [f64; 3],
    /// Auxiliary-modality intensity (temperature, depth or event strength).
    pub signature: f64,
}

impl ObjectSpec {
    /// Center at frame `t`.
    pub fn center(&self, t: usize, motion: Motion) -> (f64, f64) {
        let t = t as f64;
        let (x_lo, x_hi, y_lo, y_hi) = self.bounds;
        match motion {
            Motion::Linear => (self.start.0 + self.velocity.0 * t, self.start.1 + self.velocity.1 * t),
            Motion::Bounce => (
                reflect(self.start.0 + self.velocity.0 * t, x_lo, x_hi),
                reflect(self.start.1 + self.velocity.1 * t, y_lo, y_hi),
            ),
        }
    }

    pub fn bbox(&self, t: usize, motion: Motion) -> Result<BBox> {
        let (cx, cy) = self.center(t, motion);
        BBox::new(cx, cy, self.width, self.height)
    }
}

/// Folds `x` into `[lo, hi]` as a ball bouncing between the walls.
fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let u = (x - lo).rem_euclid(2.0 * span);
    if u <= span {
        lo + u
    } else {
        lo + 2.0 * span - u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: usize,
    pub bbox: BBox,
    pub mask: BinaryMask,
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtFrame {
    pub frame: usize,
    pub objects: Vec<GtObject>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mask_height: usize,
    pub mask_width: usize,
    pub frames: Vec<GtFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtHeader {
    format: String,
    version: u32,
    mask_height: usize,
    mask_width: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtRecord {
    id: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    mask: Vec<u32>,
    visible: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtLine {
    frame: usize,
    objects: Vec<GtRecord>,
}

impl GroundTruth {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = to_line(&GtHeader {
            format: GROUND_TRUTH_FORMAT.into(),
            version: WIRE_VERSION,
            mask_height: self.mask_height,
            mask_width: self.mask_width,
        })?;
        out.push('\n');
        for f in &self.frames {
            let line = GtLine {
                frame: f.frame,
                objects: f
                    .objects
                    .iter()
                    .map(|o| GtRecord {
                        id: o.id,
                        bbox: o.bbox.to_array(),
                        mask: o.mask.to_rle(),
                        visible: o.visible,
                    })
                    .collect(),
            };
            out.push_str(&to_line(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut it = lines(text);
        let (hi, hl) = it.next().ok_or_else(|| record_err(0, "missing header line"))?;
        let header: GtHeader = parse_line(hi, hl)?;
        if header.format != GROUND_TRUTH_FORMAT || header.version != WIRE_VERSION {
            return Err(record_err(
                hi,
                format!("expected {GROUND_TRUTH_FORMAT} v{WIRE_VERSION}, found {} v{}", header.format, header.version),
            ));
        }
        let (h, w) = (header.mask_height, header.mask_width);
        let mut frames = Vec::new();
        for (i, l) in it {
            let line: GtLine = parse_line(i, l)?;
            let objects = line
                .objects
                .into_iter()
                .map(|o| {
                    Ok(GtObject {
                        id: o.id,
                        bbox: BBox::from_array(o.bbox).map_err(|e| record_err(i, e))?,
                        mask: BinaryMask::from_rle(&o.mask, h, w).map_err(|e| record_err(i, e))?,
                        visible: o.visible,
                    })
                })
                .collect::<Result<_>>()?;
            frames.push(GtFrame {
                frame: line.frame,
                objects,
            });
        }
        Ok(Self {
            mask_height: h,
            mask_width: w,
            frames,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

/// A generated scene: object specs plus the per-frame ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub config: SceneConfig,
    pub objects: Vec<ObjectSpec>,
    pub ground_truth: GroundTruth,
}

fn sample_appearances(cfg: &SceneConfig, rng: &mut crate::numerics::rng::StreamRng) -> Result<Vec<Vec<f64>>> {
    const ATTEMPTS: usize = 10_000;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_objects);
    for k in 0..cfg.n_objects {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let v: Vec<f64> = (0..cfg.appearance_dim).map(|_| normal(rng, 1.0)).collect();
            let ok = out.iter().all(|u| {
                let d2: f64 = u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= cfg.appearance_margin
            });
            if ok {
                out.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::config(
                "sim.appearance_margin",
                format!("could not place appearance {k} at margin {}", cfg.appearance_margin),
            ));
        }
    }
    Ok(out)
}

/// Generates object layouts, trajectories and ground truth.
///
/// Without `allow_overlap` the image is split into a grid of cells and each
/// object moves inside its own cell, which keeps masks disjoint.
pub fn generate_sequence(cfg: &SceneConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, streams::SCENE_LAYOUT);
    let n = cfg.n_objects;
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    let rows = n.div_ceil(cols).max(1);
    let (cell_w, cell_h) = if cfg.allow_overlap {
        (1.0, 1.0)
    } else {
        (1.0 / cols as f64, 1.0 / rows as f64)
    };
    let (gap_x, gap_y) = (0.5 / cfg.image_width as f64, 0.5 / cfg.image_height as f64);
    if cfg.max_size + 2.0 * gap_x.max(gap_y) > cell_w.min(cell_h) {
        return Err(Error::config(
            "sim.max_size",
            format!(
                "objects up to {} do not fit disjoint {cell_w:.3}x{cell_h:.3} cells for {n} objects",
                cfg.max_size
            ),
        ));
    }
    let appearances = sample_appearances(cfg, &mut rng)?;
    let steps = cfg.n_frames.saturating_sub(1).max(1) as f64;
    let mut objects = Vec::with_capacity(n);
    for (k, appearance) in appearances.into_iter().enumerate() {
        let width = rng.random_range(cfg.min_size..=cfg.max_size);
        let height = rng.random_range(cfg.min_size..=cfg.max_size);
        let (ox, oy) = if cfg.allow_overlap {
            (0.0, 0.0)
        } else {
            ((k % cols) as f64 * cell_w, (k / cols) as f64 * cell_h)
        };
        let x_lo = ox + width / 2.0 + gap_x;
        let x_hi = ox + cell_w - width / 2.0 - gap_x;
        let y_lo = oy + height / 2.0 + gap_y;
        let y_hi = oy + cell_h - height / 2.0 - gap_y;
        let sx = rng.random_range(x_lo..=x_hi);
        let sy = rng.random_range(y_lo..=y_hi);
        let mut vx = rng.random_range(-1.0..=1.0) * cfg.max_speed;
        let mut vy = rng.random_range(-1.0..=1.0) * cfg.max_speed;
        if cfg.motion == Motion::Linear {
            vx = vx.clamp((x_lo - sx) / steps, (x_hi - sx) / steps);
            vy = vy.clamp((y_lo - sy) / steps, (y_hi - sy) / steps);
        }
        objects.push(ObjectSpec {
            id: k,
            width,
            height,
            start: (sx, sy),
            velocity: (vx, vy),
            bounds: (x_lo, x_hi, y_lo, y_hi),
            appearance,
            color: PALETTE[k % PALETTE.len()],
            signature: SIGNATURES[(k / PALETTE.len()) % SIGNATURES.len()],
        });
    }
    let mut frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        let objs = objects
            .iter()
            .map(|o| {
                let bbox = o.bbox(t, cfg.motion)?;
                Ok(GtObject {
                    id: o.id,
                    bbox,
                    mask: BinaryMask::from_box(&bbox, cfg.image_height, cfg.image_width),
                    visible: !cfg.occluded(o.id, t),
                })
            })
            .collect::<Result<_>>()?;
        frames.push(GtFrame { frame: t, objects: objs });
    }
    Ok(Sequence {
        config: cfg.clone(),
        objects,
        ground_truth: GroundTruth {
            mask_height: cfg.image_height,
            mask_width: cfg.image_width,
            frames,
        },
    })
}
