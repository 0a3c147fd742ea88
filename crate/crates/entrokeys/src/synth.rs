//! Deterministic synthetic videos with ground-truth object masks: moving and
//! static shapes, checkered textures, come-and-go entities and occlusion
//! passes. Every render is a pure function of the scene description.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_io::Frame;
use crate::metrics::ObjectMaskFrame;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disc { radius: f64 },
    Square { halfwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    Constant { color: [f64; 3] },
    /// Two-color checker anchored to the object center.
    Checker { a: [f64; 3], b: [f64; 3], pitch: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Constant { color: [f64; 3] },
    /// Per-pixel uniform noise around `color`, frozen across frames.
    Noise { color: [f64; 3], amplitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub fill: Fill,
    /// Initial center position at frame 0.
    pub start: (f64, f64),
    /// Pixels per frame; integrated at unit timestep with elastic wall bounce.
    pub velocity: (f64, f64),
    /// Inclusive frame range the object exists in; absent means always.
    pub lifetime: Option<(usize, usize)>,
}

impl ObjectSpec {
    fn extent(&self) -> f64 {
        match self.shape {
            Shape::Disc { radius } => radius,
            Shape::Square { halfwidth } => halfwidth,
        }
    }

    fn alive(&self, t: usize) -> bool {
        self.lifetime.is_none_or(|(a, b)| t >= a && t <= b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub background: Background,
    pub objects: Vec<ObjectSpec>,
    pub frames: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 || self.frames == 0 {
            return Err(Error::InvalidConfig("scene too small or empty".into()));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let e = obj.extent();
            if e < 3.0 {
                return Err(Error::InvalidConfig(format!(
                    "object {i}: extent {e} below the 3 px minimum"
                )));
            }
            let (vx, vy) = obj.velocity;
            if vx.abs() > e || vy.abs() > e {
                return Err(Error::InvalidConfig(format!(
                    "object {i}: speed exceeds its extent (untrackable)"
                )));
            }
            let (x, y) = obj.start;
            if x < 0.0 || y < 0.0 || x > (self.width - 1) as f64 || y > (self.height - 1) as f64 {
                return Err(Error::InvalidConfig(format!(
                    "object {i}: initial position outside the canvas"
                )));
            }
        }
        Ok(())
    }
}

/// Rendered frames, per-frame label masks and ground-truth centers.
/// `centers[t][i]` is `Some` exactly when object `i` exists at frame `t`.
pub struct RenderedScene<T> {
    pub frames: Vec<Frame<T>>,
    pub masks: Vec<ObjectMaskFrame>,
    pub centers: Vec<Vec<Option<(f64, f64)>>>,
}

fn bounce(pos: f64, lo: f64, hi: f64) -> (f64, bool) {
    if pos < lo {
        (lo + (lo - pos), true)
    } else if pos > hi {
        (hi - (pos - hi), true)
    } else {
        (pos, false)
    }
}

fn fill_color(fill: &Fill, du: f64, dv: f64) -> [f64; 3] {
    match fill {
        Fill::Constant { color } => *color,
        Fill::Checker { a, b, pitch } => {
            let cell = (du / pitch).floor() + (dv / pitch).floor();
            if (cell as i64).rem_euclid(2) == 0 {
                *a
            } else {
                *b
            }
        }
    }
}

/// Render a scene: frames plus masks, deterministic from the spec.
/// Later-listed objects occlude earlier ones.
pub fn render<T: Scalar>(spec: &SceneSpec) -> Result<RenderedScene<T>> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);

    // Background is generated once and shared by every frame.
    let background: Vec<[f64; 3]> = match spec.background {
        Background::Constant { color } => vec![color; w * h],
        Background::Noise { color, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            (0..w * h)
                .map(|_| {
                    let mut px = [0.0; 3];
                    for (c, slot) in px.iter_mut().enumerate() {
                        let n: f64 = rng.gen_range(-amplitude..=amplitude);
                        *slot = (color[c] + n).clamp(0.0, 1.0);
                    }
                    px
                })
                .collect()
        }
    };

    let mut positions: Vec<(f64, f64)> = spec.objects.iter().map(|o| o.start).collect();
    let mut velocities: Vec<(f64, f64)> = spec.objects.iter().map(|o| o.velocity).collect();

    let mut frames = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    let mut centers = Vec::with_capacity(spec.frames);

    for t in 0..spec.frames {
        let mut rgb = vec![0.0f64; w * h * 3];
        for (i, px) in background.iter().enumerate() {
            rgb[i * 3..i * 3 + 3].copy_from_slice(px);
        }
        let mut labels = vec![0u8; w * h];
        let mut frame_centers = Vec::with_capacity(spec.objects.len());

        for (i, obj) in spec.objects.iter().enumerate() {
            let (cx, cy) = positions[i];
            if !obj.alive(t) {
                frame_centers.push(None);
                continue;
            }
            frame_centers.push(Some((cx, cy)));
            let e = obj.extent();
            let x0 = ((cx - e).floor().max(0.0)) as usize;
            let x1 = ((cx + e).ceil() as usize + 1).min(w);
            let y0 = ((cy - e).floor().max(0.0)) as usize;
            let y1 = ((cy + e).ceil() as usize + 1).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    let du = x as f64 - cx;
                    let dv = y as f64 - cy;
                    let inside = match obj.shape {
                        Shape::Disc { radius } => du * du + dv * dv <= radius * radius,
                        Shape::Square { halfwidth } => du.abs() <= halfwidth && dv.abs() <= halfwidth,
                    };
                    if inside {
                        let color = fill_color(&obj.fill, du, dv);
                        rgb[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&color);
                        labels[y * w + x] = (i + 1) as u8;
                    }
                }
            }
        }

        frames.push(Frame::new(
            w,
            h,
            rgb.into_iter().map(T::from_f64_c).collect(),
        ));
        masks.push(ObjectMaskFrame::new(w, h, labels, spec.objects.len()));
        centers.push(frame_centers);

        // Advance trajectories (elastic wall bounce keeps shapes inside).
        for (i, obj) in spec.objects.iter().enumerate() {
            let e = obj.extent();
            let (mut x, mut y) = positions[i];
            let (mut vx, mut vy) = velocities[i];
            x += vx;
            y += vy;
            let (nx, bx) = bounce(x, e, w as f64 - 1.0 - e);
            let (ny, by) = bounce(y, e, h as f64 - 1.0 - e);
            if bx {
                vx = -vx;
            }
            if by {
                vy = -vy;
            }
            positions[i] = (nx, ny);
            velocities[i] = (vx, vy);
        }
    }

    Ok(RenderedScene {
        frames,
        masks,
        centers,
    })
}

/// Named fixture scenes.
pub fn preset(name: &str) -> Result<SceneSpec> {
    let checker = |a: f64, b: f64| Fill::Checker {
        a: [a, a * 0.8, a * 0.6],
        b: [b * 0.5, b * 0.9, b],
        pitch: 2.0,
    };
    let disc = |r: f64| Shape::Disc { radius: r };
    let spec = match name {
        "static3" => SceneSpec {
            width: 64,
            height: 64,
            background: Background::Constant { color: [0.08; 3] },
            objects: vec![
                ObjectSpec {
                    shape: disc(8.0),
                    fill: checker(0.9, 0.3),
                    start: (16.0, 16.0),
                    velocity: (0.0, 0.0),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(7.0),
                    fill: checker(0.7, 0.9),
                    start: (46.0, 22.0),
                    velocity: (0.0, 0.0),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(8.0),
                    fill: checker(0.5, 0.6),
                    start: (30.0, 47.0),
                    velocity: (0.0, 0.0),
                    lifetime: None,
                },
            ],
            frames: 8,
            seed: 11,
        },
        // Two static discs in the top corners, two movers sweeping disjoint
        // horizontal bands; trajectories never cross or occlude.
        "mixed" => SceneSpec {
            width: 96,
            height: 96,
            background: Background::Constant { color: [0.08; 3] },
            objects: vec![
                ObjectSpec {
                    shape: disc(8.0),
                    fill: checker(0.9, 0.3),
                    start: (14.0, 14.0),
                    velocity: (0.0, 0.0),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(8.0),
                    fill: checker(0.6, 0.8),
                    start: (82.0, 14.0),
                    velocity: (0.0, 0.0),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(9.0),
                    fill: checker(0.8, 0.5),
                    start: (72.0, 48.0),
                    velocity: (-1.4, 0.1),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(9.0),
                    fill: checker(0.4, 0.95),
                    start: (22.0, 78.0),
                    velocity: (1.1, -0.1),
                    lifetime: None,
                },
            ],
            frames: 40,
            seed: 23,
        },
        "comeandgo" => SceneSpec {
            width: 64,
            height: 64,
            background: Background::Noise {
                color: [0.35; 3],
                amplitude: 0.03,
            },
            objects: vec![
                ObjectSpec {
                    shape: disc(8.0),
                    fill: checker(0.9, 0.2),
                    start: (18.0, 20.0),
                    velocity: (0.0, 0.0),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(8.0),
                    fill: checker(0.85, 0.35),
                    start: (44.0, 42.0),
                    velocity: (0.0, 0.0),
                    lifetime: Some((10, 40)),
                },
            ],
            frames: 60,
            seed: 37,
        },
        "occlusion" => SceneSpec {
            width: 64,
            height: 64,
            background: Background::Constant { color: [0.08; 3] },
            objects: vec![
                ObjectSpec {
                    shape: disc(7.0),
                    fill: checker(0.9, 0.3),
                    start: (12.0, 32.0),
                    velocity: (1.5, 0.0),
                    lifetime: None,
                },
                ObjectSpec {
                    shape: disc(7.0),
                    fill: checker(0.4, 0.9),
                    start: (52.0, 32.0),
                    velocity: (-1.5, 0.0),
                    lifetime: None,
                },
            ],
            frames: 30,
            seed: 41,
        },
        other => {
            return Err(Error::InvalidInput(format!("unknown preset {other:?}")));
        }
    };
    Ok(spec)
}

/// Write `frame_%06d.ppm`, `mask_%06d.pgm` and `centers.jsonl` into `dir`.
pub fn write_scene<T: Scalar>(scene: &RenderedScene<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut centers_out = String::new();
    for (t, frame) in scene.frames.iter().enumerate() {
        crate::image_io::save_ppm(frame, dir.join(format!("frame_{t:06}.ppm")))?;
        scene.masks[t].save_pgm(dir.join(format!("mask_{t:06}.pgm")))?;
        let centers: Vec<serde_json::Value> = scene.centers[t]
            .iter()
            .enumerate()
            .map(|(i, c)| match c {
                Some((x, y)) => serde_json::json!({"id": i + 1, "x": x, "y": y, "visible": true}),
                None => serde_json::json!({"id": i + 1, "visible": false}),
            })
            .collect();
        let record = serde_json::json!({"frame": t, "centers": centers});
        centers_out.push_str(&record.to_string());
        centers_out.push('\n');
    }
    std::fs::write(dir.join("centers.jsonl"), centers_out)
        .map_err(|e| Error::io(dir.join("centers.jsonl"), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    type F = f64;

    #[test]
    fn static_disc_renders_identically_every_frame() {
        let spec = SceneSpec {
            width: 32,
            height: 32,
            background: Background::Constant { color: [0.1; 3] },
            objects: vec![ObjectSpec {
                shape: Shape::Disc { radius: 5.0 },
                fill: Fill::Constant { color: [0.9; 3] },
                start: (16.0, 16.0),
                velocity: (0.0, 0.0),
                lifetime: None,
            }],
            frames: 5,
            seed: 0,
        };
        let scene: RenderedScene<F> = render(&spec).unwrap();
        for t in 1..5 {
            assert_eq!(scene.frames[t], scene.frames[0]);
            assert_eq!(scene.masks[t].labels(), scene.masks[0].labels());
        }
    }

    #[test]
    fn linear_motion_advances_centers() {
        let spec = SceneSpec {
            width: 48,
            height: 32,
            background: Background::Constant { color: [0.0; 3] },
            objects: vec![ObjectSpec {
                shape: Shape::Disc { radius: 4.0 },
                fill: Fill::Constant { color: [1.0; 3] },
                start: (10.0, 16.0),
                velocity: (2.0, 0.0),
                lifetime: None,
            }],
            frames: 5,
            seed: 0,
        };
        let scene: RenderedScene<F> = render(&spec).unwrap();
        let xs: Vec<f64> = scene
            .centers
            .iter()
            .map(|c| c[0].unwrap().0)
            .collect();
        assert_eq!(xs, vec![10.0, 12.0, 14.0, 16.0, 18.0]);
    }

    #[test]
    fn lifetime_controls_mask_presence() {
        let mut spec = preset("comeandgo").unwrap();
        spec.frames = 60;
        let scene: RenderedScene<F> = render(&spec).unwrap();
        for t in 0..60 {
            let has_label2 = scene.masks[t].labels().iter().any(|&l| l == 2);
            assert_eq!(has_label2, (10..=40).contains(&t), "frame {t}");
        }
    }

    #[test]
    fn render_is_deterministic() {
        let spec = preset("mixed").unwrap();
        let a: RenderedScene<F> = render(&spec).unwrap();
        let b: RenderedScene<F> = render(&spec).unwrap();
        for t in 0..spec.frames {
            assert_eq!(a.frames[t], b.frames[t]);
            assert_eq!(a.masks[t].labels(), b.masks[t].labels());
        }
    }

    #[test]
    fn centers_lie_on_their_own_mask_label() {
        for name in ["static3", "mixed", "comeandgo"] {
            let spec = preset(name).unwrap();
            let scene: RenderedScene<F> = render(&spec).unwrap();
            for t in 0..spec.frames {
                for (i, c) in scene.centers[t].iter().enumerate() {
                    if let Some((x, y)) = c {
                        let label =
                            scene.masks[t].label_at(x.round() as isize, y.round() as isize);
                        assert_eq!(label, (i + 1) as u8, "{name} frame {t} object {i}");
                    }
                }
            }
        }
    }

    #[test]
    fn bounce_reflects_at_walls() {
        let spec = SceneSpec {
            width: 32,
            height: 32,
            background: Background::Constant { color: [0.0; 3] },
            objects: vec![ObjectSpec {
                shape: Shape::Disc { radius: 4.0 },
                fill: Fill::Constant { color: [1.0; 3] },
                start: (25.0, 16.0),
                velocity: (3.0, 0.0),
                lifetime: None,
            }],
            frames: 6,
            seed: 0,
        };
        let scene: RenderedScene<F> = render(&spec).unwrap();
        // Wall at x = 27 (width-1-radius): 25 -> 28 reflects to 26, then back.
        let xs: Vec<f64> = scene.centers.iter().map(|c| c[0].unwrap().0).collect();
        assert_eq!(xs[0], 25.0);
        assert!(xs.iter().all(|&x| x + 4.0 <= 31.0 && x - 4.0 >= 0.0));
        assert!(xs[2] < xs[1], "velocity flipped after bounce");
    }

    #[test]
    fn unknown_preset_and_invalid_specs_are_rejected() {
        assert!(preset("nope").is_err());
        let mut spec = preset("static3").unwrap();
        spec.objects[0].start = (1000.0, 0.0);
        assert!(render::<F>(&spec).is_err());
        let mut spec2 = preset("static3").unwrap();
        spec2.objects[0].shape = Shape::Disc { radius: 1.0 };
        assert!(render::<F>(&spec2).is_err());
    }
}
