//! Per-video keypoint discovery by direct gradient descent on keypoint
//! parameters under the combined loss, with warm-started temporal sweeps:
//! frame 1 is optimized on its own (coverage, overlap and scheduled status),
//! then each subsequent frame starts from the previous solution and is
//! optimized on the frame pair with the previous frame frozen.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::{conditional_entropy, spatial_entropy, HistogramSpec};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{GeometryConfig, Keypoint, KeypointState};
use crate::grad::{pack_params, unpack_params, EvalContext, ParamLayout};
use crate::image_io::{preprocess, Frame};
use crate::losses::{LossBreakdown, LossWeights};
use crate::Scalar;

/// Initial keypoint placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Inverse-CDF sampling proportional to the first frame's entropy map.
    Entropy,
    /// Evenly spaced grid.
    Grid,
}

/// Everything the discoverer needs to run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryConfig<T> {
    pub k: usize,
    pub iterations: usize,
    /// Step size in pixel units (status logits share it).
    pub learning_rate: T,
    pub momentum: T,
    /// Global gradient-norm clip.
    pub grad_clip: T,
    pub init: InitStrategy,
    pub seed: u64,
    /// Hard-status threshold used at export.
    pub status_threshold: T,
    pub blur_radius: usize,
    pub threads: usize,
    pub weights: LossWeights<T>,
    pub geometry: GeometryConfig<T>,
    pub histogram: HistogramSpec<T>,
}

/// Movement weight used by the direct optimizer.
///
/// The loss-module default (1.0) comes from network training, where the
/// penalty regularizes predictions of a shared model. Direct per-pair
/// optimization anchors the raw coordinates instead: with weight `w` the term
/// acts as a spring of stiffness `2 lambda_it w` per pixel, and at 20 * 1.0
/// the spring force exceeds every coverage gradient for any motion beyond
/// ~0.1 px/frame, freezing the keypoints. 0.05 keeps the stabilizing effect
/// while letting keypoints follow objects at a few pixels per frame.
pub const DIRECT_OPT_MOVEMENT_WEIGHT: f64 = 0.05;

impl<T: Scalar> Default for DiscoveryConfig<T> {
    fn default() -> Self {
        DiscoveryConfig {
            k: 25,
            iterations: 300,
            learning_rate: T::from_f64_c(0.5),
            momentum: T::from_f64_c(0.9),
            grad_clip: T::from_f64_c(10.0),
            init: InitStrategy::Entropy,
            seed: 0,
            status_threshold: T::from_f64_c(0.5),
            blur_radius: crate::image_io::DEFAULT_BLUR_RADIUS,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            weights: LossWeights {
                m_d: T::from_f64_c(DIRECT_OPT_MOVEMENT_WEIGHT),
                ..LossWeights::default()
            },
            geometry: GeometryConfig::default(),
            histogram: HistogramSpec::default(),
        }
    }
}

impl<T: Scalar> DiscoveryConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("need at least one keypoint".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("need at least one iteration".into()));
        }
        if self.learning_rate <= T::zero() {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if self.momentum < T::zero() || self.momentum >= T::one() {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".into()));
        }
        self.weights.validate()?;
        self.geometry.validate()
    }
}

/// One frame of a discovered trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryFrame<T> {
    pub keypoints: KeypointState<T>,
    /// Hard activation per keypoint (`status > threshold`).
    pub active: Vec<bool>,
    pub loss: LossBreakdown<T>,
}

/// Discovered keypoints over a whole video; index = stable identity.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub frames: Vec<TrajectoryFrame<T>>,
    pub status_threshold: T,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Placeholder breakdown for trajectories loaded from disk.
    pub fn empty(k: usize) -> Self {
        LossBreakdown {
            me: T::zero(),
            mce: T::zero(),
            it: T::zero(),
            overlap: T::zero(),
            status: T::zero(),
            total: T::zero(),
            it_terms: vec![T::zero(); k],
            movement: vec![T::zero(); k],
            blank_frame: false,
            static_pair: false,
        }
    }
}

fn initial_keypoints<T: Scalar>(
    h1: &ScalarField<T>,
    config: &DiscoveryConfig<T>,
) -> KeypointState<T> {
    let logit = T::from_f64_c(2.0);
    let (w, h) = (h1.width(), h1.height());
    let total = h1.sum().to_f64().unwrap_or(0.0);
    let use_grid = matches!(config.init, InitStrategy::Grid) || total <= 0.0;
    if use_grid {
        let g = (config.k as f64).sqrt().ceil() as usize;
        return (0..config.k)
            .map(|i| {
                let (cx, cy) = (i % g, i / g);
                Keypoint::new(
                    T::from_f64_c((cx as f64 + 0.5) * w as f64 / g as f64 - 0.5),
                    T::from_f64_c((cy as f64 + 0.5) * h as f64 / g as f64 - 0.5),
                    logit,
                )
            })
            .collect();
    }
    // Inverse-CDF sampling over the normalized entropy map. A single draw per
    // keypoint can leave whole entropy modes without a keypoint, and coverage
    // gradients are local, so an uncovered mode would never be discovered.
    // Draw a pool of candidates instead and keep a farthest-point subset.
    let mut cdf = Vec::with_capacity(w * h);
    let mut acc = 0.0;
    for &v in h1.values() {
        acc += v.to_f64().unwrap_or(0.0).max(0.0);
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let candidates: Vec<(f64, f64)> = (0..config.k * 8)
        .map(|_| {
            let u: f64 = rng.gen_range(0.0..acc);
            let idx = cdf.partition_point(|&c| c <= u).min(w * h - 1);
            ((idx % w) as f64, (idx / w) as f64)
        })
        .collect();
    let mut chosen: Vec<(f64, f64)> = vec![candidates[0]];
    while chosen.len() < config.k {
        let far = candidates
            .iter()
            .map(|&(x, y)| {
                chosen
                    .iter()
                    .map(|&(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2))
                    .fold(f64::INFINITY, f64::min)
            })
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        chosen.push(candidates[far]);
    }
    chosen
        .into_iter()
        .map(|(x, y)| Keypoint::new(T::from_f64_c(x), T::from_f64_c(y), logit))
        .collect()
}

/// Momentum descent with backtracking: on a loss increase the step is halved
/// up to five times; if no shrunken step descends, the iterate is kept and
/// the momentum reset. The final loss never exceeds the starting loss.
fn optimize<T: Scalar>(
    ctx: &mut EvalContext<T>,
    params: &mut Vec<T>,
    config: &DiscoveryConfig<T>,
) -> Result<LossBreakdown<T>> {
    let n = params.len();
    let mut velocity = vec![T::zero(); n];
    let mut current = ctx.evaluate(params, ParamLayout::Single)?;
    let half = T::from_f64_c(0.5);

    for _ in 0..config.iterations {
        let (_, mut grad) = ctx.evaluate_with_gradients(params, ParamLayout::Single)?;
        let norm = grad.iter().map(|g| *g * *g).sum::<T>().sqrt();
        if norm > config.grad_clip {
            let scale = config.grad_clip / norm;
            grad.iter_mut().for_each(|g| *g *= scale);
        }
        let step: Vec<T> = velocity
            .iter()
            .zip(&grad)
            .map(|(&v, &g)| config.momentum * v - config.learning_rate * g)
            .collect();

        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..=5 {
            let trial: Vec<T> = params
                .iter()
                .zip(&step)
                .map(|(&p, &s)| p + s * scale)
                .collect();
            let bd = ctx.evaluate(&trial, ParamLayout::Single)?;
            if bd.total <= current.total {
                *params = trial;
                velocity = step.iter().map(|&s| s * scale).collect();
                current = bd;
                accepted = true;
                break;
            }
            scale *= half;
        }
        if !accepted {
            velocity.iter_mut().for_each(|v| *v = T::zero());
        }
    }
    Ok(current)
}

/// Discover a keypoint trajectory for an ordered frame sequence.
pub fn discover<T: Scalar>(
    frames: &[Frame<T>],
    config: &DiscoveryConfig<T>,
) -> Result<Trajectory<T>> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames".into()));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    for f in frames {
        if f.width() != w || f.height() != h {
            return Err(Error::DimensionMismatch {
                context: "discover frames",
                left_w: w,
                left_h: h,
                right_w: f.width(),
                right_h: f.height(),
            });
        }
    }

    // Entropy maps are computed once per frame, never per iteration.
    let maps: Vec<ScalarField<T>> = frames
        .iter()
        .map(|f| {
            spatial_entropy(
                &preprocess(f, config.blur_radius),
                &config.histogram,
                config.threads,
            )
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(frames.len());

    // Frame 1: coverage + overlap + scheduled status on the first map alone.
    let mut params = pack_params(&initial_keypoints(&maps[0], config));
    let mut ctx = EvalContext::for_single_frame(maps[0].clone(), config.geometry, config.weights)?;
    let loss = optimize(&mut ctx, &mut params, config)?;
    push_frame(&mut out, &params, loss, config.status_threshold);

    // Subsequent frames: warm start, previous frame frozen, full loss.
    for t in 1..frames.len() {
        let h_cond = conditional_entropy(&maps[t], &maps[t - 1])?;
        let mut ctx = EvalContext::for_pair(
            maps[t].clone(),
            maps[t - 1].clone(),
            h_cond,
            config.geometry,
            config.weights,
        )?;
        ctx.set_frozen_previous(unpack_params(&params));
        let loss = optimize(&mut ctx, &mut params, config)?;
        push_frame(&mut out, &params, loss, config.status_threshold);
    }

    Ok(Trajectory {
        frames: out,
        status_threshold: config.status_threshold,
    })
}

fn push_frame<T: Scalar>(
    out: &mut Vec<TrajectoryFrame<T>>,
    params: &[T],
    loss: LossBreakdown<T>,
    threshold: T,
) {
    let keypoints = unpack_params(params);
    let active = keypoints.iter().map(|kp| kp.is_active(threshold)).collect();
    out.push(TrajectoryFrame {
        keypoints,
        active,
        loss,
    });
}

// ---------------------------------------------------------------------------
// Trajectory JSONL
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct JsonKeypoint {
    id: usize,
    x: f64,
    y: f64,
    status: f64,
    active: bool,
}

#[derive(Serialize, Deserialize)]
struct JsonFrame {
    frame: usize,
    keypoints: Vec<JsonKeypoint>,
}

/// One JSON object per frame:
/// `{"frame": t, "keypoints": [{"id", "x", "y", "status", "active"}, ...]}`.
pub fn write_trajectory_jsonl<T: Scalar>(
    traj: &Trajectory<T>,
    mut out: impl std::io::Write,
) -> Result<()> {
    for (t, frame) in traj.frames.iter().enumerate() {
        let record = JsonFrame {
            frame: t,
            keypoints: frame
                .keypoints
                .iter()
                .zip(&frame.active)
                .enumerate()
                .map(|(id, (kp, &active))| JsonKeypoint {
                    id,
                    x: kp.x.to_f64().unwrap_or(f64::NAN),
                    y: kp.y.to_f64().unwrap_or(f64::NAN),
                    status: kp.status().to_f64().unwrap_or(f64::NAN),
                    active,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Read a trajectory written by [`write_trajectory_jsonl`]. Loss breakdowns
/// are not serialized and come back empty.
pub fn read_trajectory_jsonl<T: Scalar>(path: impl AsRef<Path>) -> Result<Trajectory<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut frames = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let record: JsonFrame = serde_json::from_str(line)?;
        let k = record.keypoints.len();
        let mut keypoints = Vec::with_capacity(k);
        let mut active = Vec::with_capacity(k);
        for kp in record.keypoints {
            // Reconstruct the logit from the stored soft status.
            let s = kp.status.clamp(1e-9, 1.0 - 1e-9);
            let logit = (s / (1.0 - s)).ln();
            keypoints.push(Keypoint::new(
                T::from_f64_c(kp.x),
                T::from_f64_c(kp.y),
                T::from_f64_c(logit),
            ));
            active.push(kp.active);
        }
        frames.push(TrajectoryFrame {
            keypoints,
            active,
            loss: LossBreakdown::empty(k),
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    Ok(Trajectory {
        frames,
        status_threshold: T::from_f64_c(0.5),
    })
}

/// Fixed per-id overlay colors.
const PALETTE: [[f64; 3]; 12] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.3, 0.4, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0],
    [0.2, 1.0, 1.0],
    [1.0, 0.6, 0.2],
    [0.6, 0.2, 1.0],
    [0.6, 1.0, 0.4],
    [1.0, 0.8, 0.6],
    [0.5, 0.8, 1.0],
    [0.9, 0.9, 0.9],
];

/// Draw 3x3 colored squares at every active keypoint (color fixed per id).
pub fn render_overlay<T: Scalar>(frame: &Frame<T>, traj_frame: &TrajectoryFrame<T>) -> Frame<T> {
    let mut out = frame.clone();
    let (w, h) = (frame.width() as isize, frame.height() as isize);
    for (id, (kp, &active)) in traj_frame
        .keypoints
        .iter()
        .zip(&traj_frame.active)
        .enumerate()
    {
        if !active {
            continue;
        }
        let color = PALETTE[id % PALETTE.len()];
        let cx = kp.x.round().to_isize().unwrap_or(0);
        let cy = kp.y.round().to_isize().unwrap_or(0);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (px, py) = (cx + dx, cy + dy);
                if px >= 0 && px < w && py >= 0 && py < h {
                    out.set_pixel(
                        px as usize,
                        py as usize,
                        [
                            T::from_f64_c(color[0]),
                            T::from_f64_c(color[1]),
                            T::from_f64_c(color[2]),
                        ],
                    );
                }
            }
        }
    }
    out
}
