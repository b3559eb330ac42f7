use super::*;
use crate::simworld::{GtFrame, GtObject};
use crate::tamot::wire::TrackFrame;
use crate::tamot::{BinaryMask, TrackRecord};

fn bx(cx: f64, cy: f64) -> BBox {
    BBox::new(cx, cy, 0.1, 0.1).unwrap()
}

/// Two objects at fixed places, `n` frames.
fn two_objects(n: usize) -> GroundTruth {
    GroundTruth {
        mask_height: 1,
        mask_width: 1,
        frames: (0..n)
            .map(|t| GtFrame {
                frame: t,
                objects: vec![
                    GtObject {
                        id: 0,
                        bbox: bx(0.2, 0.2),
                        mask: BinaryMask::empty(1, 1),
                        visible: true,
                    },
                    GtObject {
                        id: 1,
                        bbox: bx(0.7, 0.7),
                        mask: BinaryMask::empty(1, 1),
                        visible: true,
                    },
                ],
            })
            .collect(),
    }
}

fn tracks_from(gt: &GroundTruth, id_of: impl Fn(usize, usize) -> u64) -> TrackFile {
    TrackFile {
        mode: TrackMode::Mot,
        frames: gt
            .frames
            .iter()
            .map(|f| TrackFrame {
                frame: f.frame,
                tracks: f
                    .objects
                    .iter()
                    .map(|o| TrackRecord {
                        id: id_of(f.frame, o.id),
                        bbox: o.bbox,
                        affinity: None,
                    })
                    .collect(),
            })
            .collect(),
    }
}

#[test]
fn iou_examples() {
    let a = BBox::new(0.5, 0.5, 0.2, 0.2).unwrap();
    assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    assert_eq!(iou(&a, &bx(0.1, 0.1)), 0.0);
    let b = BBox::new(0.6, 0.5, 0.2, 0.2).unwrap();
    assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-9);
}

#[test]
fn perfect_tracks() {
    let gt = two_objects(10);
    let r = evaluate(&gt, &tracks_from(&gt, |_, o| o as u64 + 7), 0.5, 0).unwrap();
    assert_eq!(r.mota, Some(1.0));
    assert_eq!(r.idf1, Some(1.0));
    assert_eq!((r.id_switches, r.fp, r.fn_), (0, 0, 0));
    assert_eq!(r.frames.len(), 10);
}

#[test]
fn one_false_positive_in_ten() {
    let mut gt = two_objects(10);
    for f in &mut gt.frames {
        f.objects.truncate(1);
    }
    let mut tr = tracks_from(&gt, |_, _| 0);
    tr.frames[4].tracks.push(TrackRecord {
        id: 9,
        bbox: bx(0.9, 0.9),
        affinity: None,
    });
    let r = evaluate(&gt, &tr, 0.5, 0).unwrap();
    assert_eq!(r.fp, 1);
    assert!((r.mota.unwrap() - 0.9).abs() < 1e-12);
}

#[test]
fn mid_sequence_flips() {
    let gt = two_objects(10);
    let tr = tracks_from(&gt, |t, o| if t < 5 { o as u64 } else { o as u64 + 2 });
    let r = evaluate(&gt, &tr, 0.5, 0).unwrap();
    assert_eq!(r.id_switches, 2);
    assert!((r.mota.unwrap() - (1.0 - 2.0 / 20.0)).abs() < 1e-12);
}

#[test]
fn half_swapped_identity() {
    let gt = two_objects(10);
    let tr = tracks_from(&gt, |t, o| if t < 5 { o as u64 } else { 1 - o as u64 });
    let r = evaluate(&gt, &tr, 0.5, 0).unwrap();
    assert!((r.idf1.unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn empty_inputs() {
    let gt = two_objects(4);
    let none = TrackFile {
        mode: TrackMode::Mot,
        frames: vec![],
    };
    let r = evaluate(&gt, &none, 0.5, 0).unwrap();
    assert_eq!(r.idf1, Some(0.0));
    assert_eq!(r.fn_, 8);
    let empty = GroundTruth {
        mask_height: 1,
        mask_width: 1,
        frames: vec![],
    };
    let r = evaluate(&empty, &none, 0.5, 0).unwrap();
    assert_eq!(r.mota, None);
    assert_eq!(r.idf1, None);
}

#[test]
fn average_overlap_examples() {
    let g = vec![bx(0.5, 0.5); 4];
    let p: Vec<Option<BBox>> = g.iter().map(|b| Some(*b)).collect();
    assert_eq!(average_overlap(&g, &p).unwrap(), 1.0);
    assert_eq!(average_overlap(&g, &[None; 4]).unwrap(), 0.0);
    // a box covering half of the ground truth has IoU 0.5
    let half = BBox::new(0.5, 0.475, 0.1, 0.05).unwrap();
    let alt: Vec<Option<BBox>> = (0..4).map(|i| Some(if i % 2 == 0 { g[0] } else { half })).collect();
    assert!((average_overlap(&g, &alt).unwrap() - 0.75).abs() < 1e-12);
    assert!(average_overlap(&g, &alt[..3]).is_err());
}

#[test]
fn sot_scores_the_target_only() {
    let gt = two_objects(6);
    let mut tr = tracks_from(&gt, |_, o| o as u64);
    tr.mode = TrackMode::Sot;
    for f in &mut tr.frames {
        f.tracks.retain(|t| t.id == 1);
    }
    let r = evaluate(&gt, &tr, 0.5, 1).unwrap();
    assert_eq!(r.ao, Some(1.0));
    assert_eq!(r.mota, Some(1.0));
    let r = evaluate(&gt, &tr, 0.5, 0).unwrap();
    assert_eq!(r.ao, Some(0.0));
}

#[test]
fn predictions_on_occluded_objects_are_ignored() {
    let mut gt = two_objects(5);
    gt.frames[2].objects[1].visible = false;
    let tr = tracks_from(&gt, |_, o| o as u64);
    let r = evaluate(&gt, &tr, 0.5, 0).unwrap();
    assert_eq!((r.fp, r.fn_, r.id_switches), (0, 0, 0));
    assert_eq!(r.frames[2].ignored, 1);
    assert_eq!(r.idf1, Some(1.0));
}

#[test]
fn relabeling_leaves_scores_unchanged() {
    let gt = two_objects(8);
    let a = tracks_from(&gt, |t, o| if t < 3 { o as u64 } else { 1 - o as u64 });
    let b = tracks_from(&gt, |t, o| 100 + if t < 3 { o as u64 } else { 1 - o as u64 } * 3);
    let ra = evaluate(&gt, &a, 0.5, 0).unwrap();
    let rb = evaluate(&gt, &b, 0.5, 0).unwrap();
    assert_eq!((ra.mota, ra.idf1, ra.id_switches), (rb.mota, rb.idf1, rb.id_switches));
}

#[test]
fn serialization() {
    let gt = two_objects(3);
    let r = evaluate(&gt, &tracks_from(&gt, |_, o| o as u64), 0.5, 0).unwrap();
    let json = r.to_json().unwrap();
    assert!(json.contains("\"fn\": 0") && !json.contains("frames"));
    let csv = r.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    assert!(lines[1].starts_with("1,1,0,0,0,,6"));
    assert_eq!(r.frame_log_jsonl().unwrap().lines().count(), 3);
}
