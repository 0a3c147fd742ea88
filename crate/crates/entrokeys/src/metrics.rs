//! Detection/tracking evaluation against ground-truth object label masks:
//! detected-object and tracked-object percentages, unassigned keypoints on
//! background, and area-normalized redundant assignment.

use std::path::Path;

use serde::Serialize;

use crate::discover::Trajectory;
use crate::error::{Error, Result};
use crate::Scalar;

/// Per-frame object labels: 0 is background, 1..=n_objects are object ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMaskFrame {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    n_objects: usize,
}

impl ObjectMaskFrame {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, n_objects: usize) -> Self {
        assert_eq!(labels.len(), width * height, "mask size mismatch");
        ObjectMaskFrame {
            width,
            height,
            labels,
            n_objects,
        }
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let (width, height, maxval, labels) = crate::image_io::load_pgm_bytes(path)?;
        Ok(ObjectMaskFrame {
            width,
            height,
            labels,
            n_objects: maxval,
        })
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::image_io::save_pgm_bytes(
            self.width,
            self.height,
            self.n_objects.max(1),
            &self.labels,
            path,
        )
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    /// Label at integer coordinates; anything outside the image is background.
    pub fn label_at(&self, x: isize, y: isize) -> u8 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0
        } else {
            self.labels[y as usize * self.width + x as usize]
        }
    }

    /// Pixel area of every label present in this frame (label -> area).
    fn areas(&self) -> Vec<(u8, usize)> {
        let mut counts = vec![0usize; self.n_objects + 1];
        for &l in &self.labels {
            if l as usize <= self.n_objects {
                counts[l as usize] += 1;
            }
        }
        counts
            .into_iter()
            .enumerate()
            .skip(1)
            .filter(|&(_, a)| a > 0)
            .map(|(l, a)| (l as u8, a))
            .collect()
    }
}

/// Load `mask_%06d.pgm` files from a directory in lexicographic order.
pub fn load_mask_dir(dir: impl AsRef<Path>) -> Result<Vec<ObjectMaskFrame>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "pgm")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("mask_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    paths.into_iter().map(ObjectMaskFrame::load_pgm).collect()
}

/// Round-half-up keypoint-to-pixel convention shared by all metrics.
fn keypoint_pixel<T: Scalar>(x: T, y: T) -> (isize, isize) {
    (
        x.round().to_isize().unwrap_or(isize::MIN),
        y.round().to_isize().unwrap_or(isize::MIN),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub n_gt: usize,
    pub dop: Option<f64>,
    pub top: Option<f64>,
    pub uak: f64,
    pub rak: Option<f64>,
}

/// Aggregated detection/tracking metrics for one video.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub dop: Option<f64>,
    pub top: Option<f64>,
    pub uak: f64,
    pub rak: Option<f64>,
    pub a_k: f64,
    pub per_frame: Vec<FrameMetrics>,
}

/// Mean object-mask area over all frames and objects, the default `A_k`.
pub fn a_k_default(masks: &[ObjectMaskFrame]) -> Result<f64> {
    let mut total = 0usize;
    let mut count = 0usize;
    for m in masks {
        for (_, area) in m.areas() {
            total += area;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoObjects);
    }
    Ok(total as f64 / count as f64)
}

/// Active keypoints of frame `t` as (label, on-some-object) assignments.
fn frame_assignments<T: Scalar>(
    traj: &Trajectory<T>,
    mask: &ObjectMaskFrame,
    t: usize,
) -> Vec<Option<u8>> {
    let frame = &traj.frames[t];
    frame
        .keypoints
        .iter()
        .zip(&frame.active)
        .map(|(kp, &active)| {
            if !active {
                return None;
            }
            let (px, py) = keypoint_pixel(kp.x, kp.y);
            Some(mask.label_at(px, py))
        })
        .collect()
}

/// Evaluate all four metrics for one video.
///
/// `a_k` falls back to the dataset mean object area when not given.
pub fn evaluate<T: Scalar>(
    traj: &Trajectory<T>,
    masks: &[ObjectMaskFrame],
    a_k: Option<f64>,
) -> Result<MetricsReport> {
    if traj.frames.len() != masks.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} frames but {} masks were provided",
            traj.frames.len(),
            masks.len()
        )));
    }
    if masks.is_empty() {
        return Err(Error::InvalidInput("empty evaluation".into()));
    }
    let a_k = match a_k {
        Some(v) if v > 0.0 => v,
        Some(v) => {
            return Err(Error::InvalidConfig(format!("a_k must be positive, got {v}")));
        }
        None => a_k_default(masks)?,
    };

    let assignments: Vec<Vec<Option<u8>>> = (0..masks.len())
        .map(|t| frame_assignments(traj, &masks[t], t))
        .collect();

    let mut per_frame = Vec::with_capacity(masks.len());
    let mut dop_sum = 0.0;
    let mut dop_frames = 0usize;
    let mut top_sum = 0.0;
    let mut top_frames = 0usize;
    let mut uak_sum = 0.0;
    let mut rak_sum = 0.0;
    let mut rak_count = 0usize;

    for t in 0..masks.len() {
        let areas = masks[t].areas();
        let n_gt = areas.len();
        let assigned = &assignments[t];

        // Detected: objects with at least one active keypoint on their mask.
        let frame_dop = if n_gt > 0 {
            let detected = areas
                .iter()
                .filter(|(label, _)| assigned.contains(&Some(*label)))
                .count();
            let v = detected as f64 / n_gt as f64;
            dop_sum += v;
            dop_frames += 1;
            Some(v)
        } else {
            None
        };

        // Tracked: same keypoint index on the object's mask at t-1 and t.
        let frame_top = if t > 0 && n_gt > 0 {
            let prev_assigned = &assignments[t - 1];
            let tracked = areas
                .iter()
                .filter(|(label, _)| {
                    assigned
                        .iter()
                        .zip(prev_assigned)
                        .any(|(a, b)| *a == Some(*label) && *b == Some(*label))
                })
                .count();
            let v = tracked as f64 / n_gt as f64;
            top_sum += v;
            top_frames += 1;
            Some(v)
        } else {
            None
        };

        // Unsuccessful: active keypoints on background.
        let frame_uak = assigned.iter().filter(|a| **a == Some(0)).count() as f64;
        uak_sum += frame_uak;

        // Redundant: area mismatch per object.
        let frame_rak = if n_gt > 0 {
            let mut s = 0.0;
            for (label, area) in &areas {
                let n_obj = assigned.iter().filter(|a| **a == Some(*label)).count();
                s += (*area as f64 - a_k * n_obj as f64).abs() / *area as f64;
                rak_sum += (*area as f64 - a_k * n_obj as f64).abs() / *area as f64;
                rak_count += 1;
            }
            Some(s / n_gt as f64)
        } else {
            None
        };

        per_frame.push(FrameMetrics {
            frame: t,
            n_gt,
            dop: frame_dop,
            top: frame_top,
            uak: frame_uak,
            rak: frame_rak,
        });
    }

    Ok(MetricsReport {
        dop: (dop_frames > 0).then(|| dop_sum / dop_frames as f64),
        top: (top_frames > 0).then(|| top_sum / top_frames as f64),
        uak: uak_sum / masks.len() as f64,
        rak: (rak_count > 0).then(|| rak_sum / rak_count as f64),
        a_k,
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discover::{Trajectory, TrajectoryFrame};
    use crate::geometry::Keypoint;
    use crate::losses::LossBreakdown;

    type F = f64;

    fn mask_two_squares() -> ObjectMaskFrame {
        // 8x8: label 1 fills rows 0..4 x cols 0..4, label 2 rows 4..8 x cols 4..8.
        let mut labels = vec![0u8; 64];
        for y in 0..4 {
            for x in 0..4 {
                labels[y * 8 + x] = 1;
            }
        }
        for y in 4..8 {
            for x in 4..8 {
                labels[y * 8 + x] = 2;
            }
        }
        ObjectMaskFrame::new(8, 8, labels, 2)
    }

    fn traj_frame(kps: &[(F, F, bool)]) -> TrajectoryFrame<F> {
        TrajectoryFrame {
            keypoints: kps
                .iter()
                .map(|&(x, y, _)| Keypoint::new(x, y, 0.0))
                .collect(),
            active: kps.iter().map(|&(_, _, a)| a).collect(),
            loss: LossBreakdown::empty(kps.len()),
        }
    }

    fn traj(frames: Vec<TrajectoryFrame<F>>) -> Trajectory<F> {
        Trajectory {
            frames,
            status_threshold: 0.5,
        }
    }

    /// Golden fixture: 3 frames, 2 objects, hand-computed values.
    ///
    /// kp0 sits on object 1 in every frame (always active). kp1 sits on
    /// object 2 but is inactive in frame 1 (detection without persistence).
    /// kp2 sits on background in every frame.
    fn golden() -> (Trajectory<F>, Vec<ObjectMaskFrame>) {
        let masks = vec![mask_two_squares(), mask_two_squares(), mask_two_squares()];
        let frames = vec![
            traj_frame(&[(1.0, 1.0, true), (5.0, 5.0, true), (1.0, 6.0, true)]),
            traj_frame(&[(1.0, 1.0, true), (5.0, 5.0, false), (1.0, 6.0, true)]),
            traj_frame(&[(1.0, 1.0, true), (5.0, 5.0, true), (1.0, 6.0, true)]),
        ];
        (traj(frames), masks)
    }

    #[test]
    fn golden_fixture_reproduces_hand_computed_values() {
        let (t, masks) = golden();
        let r = evaluate(&t, &masks, None).unwrap();
        // A_k = mean object area = 16.
        assert_eq!(r.a_k, 16.0);
        // DOP per frame: 1, 1/2, 1 -> mean 5/6.
        assert_eq!(r.dop, Some((1.0 + 0.5 + 1.0) / 3.0));
        // TOP frames 1, 2: obj1 tracked only -> 1/2 each.
        assert_eq!(r.top, Some(0.5));
        // kp2 on background every frame.
        assert_eq!(r.uak, 1.0);
        // RAK: frame 0: (0 + 0), frame 1: (0 + 1), frame 2: (0 + 0) over 6 object-frames.
        assert_eq!(r.rak, Some(1.0 / 6.0));
        // Detection without persistence: DOP strictly above TOP.
        assert!(r.top.unwrap() <= r.dop.unwrap());
        assert!(r.dop.unwrap() > r.top.unwrap());
    }

    #[test]
    fn single_object_single_keypoint_is_perfect() {
        let masks = vec![mask_two_squares(); 10];
        let frames = (0..10)
            .map(|_| traj_frame(&[(1.0, 1.0, true), (5.0, 5.0, true)]))
            .collect();
        let r = evaluate(&traj(frames), &masks, None).unwrap();
        assert_eq!(r.dop, Some(1.0));
        assert_eq!(r.top, Some(1.0));
        assert_eq!(r.uak, 0.0);
        assert_eq!(r.rak, Some(0.0));
    }

    #[test]
    fn keypoint_alternating_objects_never_tracks() {
        let masks = vec![mask_two_squares(); 4];
        let frames = (0..4)
            .map(|t| {
                if t % 2 == 0 {
                    traj_frame(&[(1.0, 1.0, true)])
                } else {
                    traj_frame(&[(5.0, 5.0, true)])
                }
            })
            .collect();
        let r = evaluate(&traj(frames), &masks, None).unwrap();
        assert_eq!(r.top, Some(0.0));
    }

    #[test]
    fn rounding_convention_is_half_up() {
        // Keypoint at (10.6, 20.3) tests mask pixel (11, 20); here (3.5, 3.49)
        // must probe (4, 3) which is background in the two-squares mask.
        let masks = vec![mask_two_squares()];
        let frames = vec![traj_frame(&[(3.5, 3.49, true)])];
        let r = evaluate(&traj(frames), &masks, None).unwrap();
        assert_eq!(r.uak, 1.0);
        assert_eq!(r.dop, Some(0.0));
    }

    #[test]
    fn inactive_keypoints_are_not_assignments() {
        let masks = vec![mask_two_squares()];
        let frames = vec![traj_frame(&[(1.0, 6.0, false), (1.0, 1.0, false)])];
        let r = evaluate(&traj(frames), &masks, None).unwrap();
        assert_eq!(r.uak, 0.0);
        assert_eq!(r.dop, Some(0.0));
        // No detection at all: RAK goes to 1.
        assert_eq!(r.rak, Some(1.0));
    }

    #[test]
    fn rak_arithmetic_cases() {
        // One object of area 16, a_k = 8: two keypoints on it -> 0.
        let masks: Vec<_> = (0..1)
            .map(|_| {
                let mut labels = vec![0u8; 64];
                for y in 0..4 {
                    for x in 0..4 {
                        labels[y * 8 + x] = 1;
                    }
                }
                ObjectMaskFrame::new(8, 8, labels, 1)
            })
            .collect();
        let frames = vec![traj_frame(&[(1.0, 1.0, true), (2.0, 2.0, true)])];
        let r = evaluate(&traj(frames), &masks, Some(8.0)).unwrap();
        assert_eq!(r.rak, Some(0.0));
        // Three keypoints -> |16 - 24| / 16 = 0.5.
        let frames =
            vec![traj_frame(&[(1.0, 1.0, true), (2.0, 2.0, true), (0.0, 0.0, true)])];
        let r = evaluate(&traj(frames), &masks, Some(8.0)).unwrap();
        assert_eq!(r.rak, Some(0.5));
    }

    #[test]
    fn a_k_default_is_mean_area_and_frame_order_invariant() {
        let mut labels = vec![0u8; 64];
        for i in 0..20 {
            labels[i] = 1;
        }
        for i in 30..40 {
            labels[i] = 2;
        }
        let m1 = ObjectMaskFrame::new(8, 8, labels, 2);
        let mut labels2 = vec![0u8; 64];
        for i in 0..30 {
            labels2[i] = 1;
        }
        let m2 = ObjectMaskFrame::new(8, 8, labels2, 2);
        let fwd = a_k_default(&[m1.clone(), m2.clone()]).unwrap();
        let rev = a_k_default(&[m2, m1]).unwrap();
        assert_eq!(fwd, (20.0 + 10.0 + 30.0) / 3.0);
        assert_eq!(fwd, rev);

        let empty = ObjectMaskFrame::new(8, 8, vec![0u8; 64], 0);
        assert!(a_k_default(&[empty]).is_err());
    }

    #[test]
    fn out_of_bounds_keypoints_count_as_background() {
        let masks = vec![mask_two_squares()];
        let frames = vec![traj_frame(&[(-5.0, 2.0, true)])];
        let r = evaluate(&traj(frames), &masks, None).unwrap();
        assert_eq!(r.uak, 1.0);
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let (t, masks) = golden();
        assert!(evaluate(&t, &masks[..2], None).is_err());
    }
}
