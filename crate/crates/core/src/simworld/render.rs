use super::scene::Sequence;
use crate::demoe::{Frame, FramePair, ModalityPair};
use crate::error::{ensure, Result};
use crate::numerics::rng::{normal, stream_rng, streams, substream};
use crate::tamot::BinaryMask;

const BACKGROUND: f64 = 0.1;
const CHANNELS: usize = 3;

fn on_boundary(mask: &BinaryMask, y: usize, x: usize) -> bool {
    let (h, w) = (mask.height(), mask.width());
    y == 0
        || x == 0
        || y + 1 == h
        || x + 1 == w
        || !mask.get(y - 1, x)
        || !mask.get(y + 1, x)
        || !mask.get(y, x - 1)
        || !mask.get(y, x + 1)
}

/// Renders frame `t` as an RGB image and, for multi-modal scenes, an
/// auxiliary image.
///
/// RGB shows each visible object's color. The auxiliary image shows its
/// signature: a flat temperature field (thermal), constant object depth over
/// a vertical ramp (depth), or mask boundaries (event).
pub fn render_frame(seq: &Sequence, t: usize) -> Result<FramePair> {
    let cfg = &seq.config;
    ensure!(t < cfg.n_frames, "frame {t} outside a {}-frame sequence", cfg.n_frames);
    let (h, w) = (cfg.image_height, cfg.image_width);
    let mut rng = stream_rng(cfg.seed, substream(streams::SCENE_RENDER, t as u64));
    let mut rgb = Frame::zeros(h, w, CHANNELS);
    let mut aux = Frame::zeros(h, w, CHANNELS);
    for y in 0..h {
        for x in 0..w {
            let bg = match cfg.modality {
                ModalityPair::RgbDepth => 0.2 + 0.6 * (y as f64 + 0.5) / h as f64,
                _ => 0.0,
            };
            for c in 0..CHANNELS {
                rgb.set(y, x, c, BACKGROUND);
                aux.set(y, x, c, bg);
            }
        }
    }
    let gt = &seq.ground_truth.frames[t];
    for (spec, obj) in seq.objects.iter().zip(&gt.objects) {
        if !obj.visible {
            continue;
        }
        for y in 0..h {
            for x in 0..w {
                if !obj.mask.get(y, x) {
                    continue;
                }
                for c in 0..CHANNELS {
                    rgb.set(y, x, c, spec.color[c]);
                }
                let v = match cfg.modality {
                    ModalityPair::RgbEvent if !on_boundary(&obj.mask, y, x) => None,
                    _ => Some(spec.signature),
                };
                if let Some(v) = v {
                    for c in 0..CHANNELS {
                        aux.set(y, x, c, v);
                    }
                }
            }
        }
    }
    if cfg.render_noise > 0.0 {
        for frame in [&mut rgb, &mut aux] {
            for y in 0..h {
                for x in 0..w {
                    for c in 0..CHANNELS {
                        let v = frame.get(y, x, c) + normal(&mut rng, cfg.render_noise);
                        frame.set(y, x, c, v);
                    }
                }
            }
        }
    }
    if cfg.modality.has_auxiliary() {
        FramePair::new(rgb, Some(aux), cfg.modality)
    } else {
        Ok(FramePair::rgb_only(rgb))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{generate_sequence, SceneConfig};

    #[test]
    fn renders_colors_and_signatures() {
        let cfg = SceneConfig {
            n_frames: 2,
            render_noise: 0.0,
            ..Default::default()
        };
        let s = generate_sequence(&cfg).unwrap();
        let pair = render_frame(&s, 1).unwrap();
        let o = &s.ground_truth.frames[1].objects[0];
        let b = o.bbox;
        let (y, x) = ((b.cy * 64.0) as usize, (b.cx * 64.0) as usize);
        assert!(o.mask.get(y, x));
        assert_eq!(pair.rgb.get(y, x, 0), s.objects[0].color[0]);
        assert_eq!(pair.tde.as_ref().unwrap().get(y, x, 2), s.objects[0].signature);
        assert_eq!(pair.rgb.get(0, 0, 1), BACKGROUND);
        assert!(render_frame(&s, 2).is_err());
    }

    #[test]
    fn modalities_differ() {
        let mut cfg = SceneConfig {
            n_frames: 1,
            render_noise: 0.0,
            ..Default::default()
        };
        let mut aux = Vec::new();
        for m in [ModalityPair::RgbThermal, ModalityPair::RgbDepth, ModalityPair::RgbEvent] {
            cfg.modality = m;
            let s = generate_sequence(&cfg).unwrap();
            aux.push(render_frame(&s, 0).unwrap().tde.unwrap());
        }
        assert_ne!(aux[0], aux[1]);
        assert_ne!(aux[0], aux[2]);
        cfg.modality = ModalityPair::RgbOnly;
        let s = generate_sequence(&cfg).unwrap();
        assert!(render_frame(&s, 0).unwrap().tde.is_none());
    }
}
