use rand::Rng;

use super::scene::Sequence;
use crate::error::{ensure, Result};
use crate::numerics::rng::{normal, stream_rng, streams, substream};
use crate::tamot::{BBox, BinaryMask, Detection, DetectionFile, DetectionFrame};

/// Detector stand-in for frame `t`.
///
/// Visible objects are detected unless dropped at the miss rate, with
/// Gaussian center noise, `s_mask` in `[0.8, 1.0]` and `s_occ = +1`, and
/// carry their appearance vector as the explicit feature. Occluded objects
/// emit nothing, or a low-score ghost with `s_occ = -1` when ghosts are on.
pub fn oracle_detect(seq: &Sequence, t: usize) -> Result<Vec<Detection>> {
    let cfg = &seq.config;
    ensure!(t < cfg.n_frames, "frame {t} outside a {}-frame sequence", cfg.n_frames);
    let mut rng = stream_rng(cfg.seed, substream(streams::ORACLE, t as u64));
    let mut out = Vec::new();
    for (spec, obj) in seq.objects.iter().zip(&seq.ground_truth.frames[t].objects) {
        // fixed draw count per object keeps later objects' noise stable
        let u: f64 = rng.random();
        let nx = normal(&mut rng, cfg.sigma_pos);
        let ny = normal(&mut rng, cfg.sigma_pos);
        let score: f64 = rng.random();
        if obj.visible {
            if u < cfg.miss_rate {
                continue;
            }
            let b = obj.bbox;
            let bbox = BBox::new(
                (b.cx + nx).clamp(0.0, 1.0),
                (b.cy + ny).clamp(0.0, 1.0),
                b.w,
                b.h,
            )?;
            let mask = if nx == 0.0 && ny == 0.0 {
                obj.mask.clone()
            } else {
                BinaryMask::from_box(&bbox, cfg.image_height, cfg.image_width)
            };
            out.push(Detection {
                bbox,
                mask,
                s_mask: 0.8 + 0.2 * score,
                s_occ: 1.0,
                feature: Some(spec.appearance.clone()),
            });
        } else if cfg.ghosts {
            out.push(Detection {
                bbox: obj.bbox,
                mask: obj.mask.clone(),
                s_mask: 0.05 + 0.25 * score,
                s_occ: -1.0,
                feature: Some(spec.appearance.clone()),
            });
        }
    }
    Ok(out)
}

/// Oracle detections for every frame, in the detection wire layout.
pub fn oracle_detections(seq: &Sequence) -> Result<DetectionFile> {
    let frames = (0..seq.config.n_frames)
        .map(|t| {
            Ok(DetectionFrame {
                frame: t,
                detections: oracle_detect(seq, t)?,
                prior: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(DetectionFile {
        mask_height: seq.config.image_height,
        mask_width: seq.config.image_width,
        frames,
    })
}
