//! Differentiable geometry between keypoints and pixel space: spatial
//! soft-argmax, Gaussian fields, thresholded heatmaps, aggregated masks and
//! soft activation statuses.
//!
//! Coordinate convention: `x` is the column, `y` the row, origin at the
//! top-left, pixel centers at integer coordinates.

use crate::entropy::logistic;
use crate::error::Result;
use crate::field::ScalarField;
use crate::Scalar;

/// Heatmap construction parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConfig<T> {
    /// Gaussian standard deviation `sigma_G`.
    pub sigma: T,
    /// Heatmap threshold `tau` in `[0, 1)`.
    pub tau: T,
    /// Post-threshold scale `eta > 0`.
    pub eta: T,
}

impl<T: Scalar> Default for GeometryConfig<T> {
    fn default() -> Self {
        GeometryConfig {
            sigma: T::from_f64_c(9.0),
            tau: T::from_f64_c(0.1),
            eta: T::from_f64_c(3.5),
        }
    }
}

impl<T: Scalar> GeometryConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.sigma <= T::zero() {
            return Err(crate::Error::InvalidConfig("sigma must be > 0".into()));
        }
        if self.tau < T::zero() || self.tau >= T::one() {
            return Err(crate::Error::InvalidConfig("tau must lie in [0, 1)".into()));
        }
        if self.eta <= T::zero() {
            return Err(crate::Error::InvalidConfig("eta must be > 0".into()));
        }
        Ok(())
    }

    /// Radius beyond which the heatmap is exactly zero: `sigma sqrt(-2 ln tau)`.
    pub fn support_radius(&self) -> T {
        if self.tau <= T::zero() {
            T::infinity()
        } else {
            self.sigma * (-(T::one() + T::one()) * self.tau.ln()).sqrt()
        }
    }
}

/// One keypoint: continuous coordinates plus an unbounded status logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<T> {
    pub x: T,
    pub y: T,
    pub status_logit: T,
}

impl<T: Scalar> Keypoint<T> {
    pub fn new(x: T, y: T, status_logit: T) -> Self {
        Keypoint { x, y, status_logit }
    }

    /// Soft activation `s = logistic(status_logit)` in `[0, 1]`.
    pub fn status(&self) -> T {
        logistic(self.status_logit)
    }

    /// Hard activation used at export and by the metrics.
    pub fn is_active(&self, threshold: T) -> bool {
        self.status() > threshold
    }

    /// Coordinates clamped into the image rectangle, applied at evaluation.
    pub fn clamped(&self, width: usize, height: usize) -> (T, T) {
        (
            self.x.max(T::zero()).min(T::from_f64_c((width - 1) as f64)),
            self.y.max(T::zero()).min(T::from_f64_c((height - 1) as f64)),
        )
    }
}

/// Per-frame set of K keypoints; the index is the stable identity.
pub type KeypointState<T> = Vec<Keypoint<T>>;

/// Spatial soft-argmax of a nonnegative feature map.
///
/// Weights are `softmax(f - max f)` over all pixels; the result is the
/// weighted mean of the coordinate grid, hence always inside the image.
pub fn soft_argmax<T: Scalar>(f: &ScalarField<T>) -> (T, T) {
    let max = f.max_value();
    let mut total = T::zero();
    let mut sx = T::zero();
    let mut sy = T::zero();
    for y in 0..f.height() {
        for x in 0..f.width() {
            let w = (f.get(x, y) - max).exp();
            total += w;
            sx += w * T::from_f64_c(x as f64);
            sy += w * T::from_f64_c(y as f64);
        }
    }
    (sx / total, sy / total)
}

/// Dense Gaussian field `G(u, v) = exp(-((u-x)^2 + (v-y)^2) / (2 sigma^2))`,
/// sampled at pixel centers. Coordinates are clamped into the image first.
pub fn gaussian_field<T: Scalar>(
    x: T,
    y: T,
    sigma: T,
    width: usize,
    height: usize,
) -> ScalarField<T> {
    let kp = Keypoint::new(x, y, T::zero());
    let (cx, cy) = kp.clamped(width, height);
    let inv = T::one() / ((T::one() + T::one()) * sigma * sigma);
    // Separable: exp of the row part times exp of the column part.
    let cols: Vec<T> = (0..width)
        .map(|u| (-(T::from_f64_c(u as f64) - cx).powi(2) * inv).exp())
        .collect();
    let mut out = ScalarField::zeros(width, height);
    for v in 0..height {
        let row = (-(T::from_f64_c(v as f64) - cy).powi(2) * inv).exp();
        for (u, &col) in cols.iter().enumerate() {
            out.set(u, v, row * col);
        }
    }
    out
}

/// Threshold, scale and clamp a Gaussian field: `clamp(eta (G - tau)^+, 0, 1)`.
pub fn heatmap_from_gaussian<T: Scalar>(g: &ScalarField<T>, tau: T, eta: T) -> ScalarField<T> {
    let mut out = g.clone();
    for v in out.values_mut() {
        *v = (eta * (*v - tau).max(T::zero())).min(T::one());
    }
    out
}

/// Heatmap of a keypoint, built directly from its coordinates.
pub fn heatmap<T: Scalar>(
    x: T,
    y: T,
    cfg: &GeometryConfig<T>,
    width: usize,
    height: usize,
) -> ScalarField<T> {
    heatmap_from_gaussian(&gaussian_field(x, y, cfg.sigma, width, height), cfg.tau, cfg.eta)
}

/// Pixel count of the support of a heatmap centered in a canvas large enough
/// for the full disc; independent of position as long as the disc fits, so the
/// `dims` argument only sets a lower bound on the canvas.
pub fn heatmap_area<T: Scalar>(cfg: &GeometryConfig<T>, dims: (usize, usize)) -> usize {
    let r = cfg.support_radius();
    let needed = if r.is_finite() {
        2 * (r.to_f64().unwrap_or(0.0).ceil() as usize) + 3
    } else {
        return dims.0 * dims.1; // tau = 0: every pixel is support
    };
    let side = needed.max(dims.0).max(dims.1);
    let center = T::from_f64_c((side / 2) as f64);
    let h = heatmap(center, center, cfg, side, side);
    h.values().iter().filter(|&&v| v > T::zero()).count()
}

/// Aggregated mask `M = min(sum_i h_i s_i, 1)`, pixel-wise.
pub fn aggregate_mask<T: Scalar>(
    heatmaps: &[ScalarField<T>],
    statuses: &[T],
) -> Result<ScalarField<T>> {
    assert_eq!(heatmaps.len(), statuses.len(), "one status per heatmap");
    let first = &heatmaps[0];
    let mut acc: ScalarField<T> = ScalarField::zeros(first.width(), first.height());
    for (h, &s) in heatmaps.iter().zip(statuses) {
        first.same_dims(h, "aggregate_mask")?;
        for (a, &v) in acc.values_mut().iter_mut().zip(h.values()) {
            *a += v * s;
        }
    }
    for a in acc.values_mut() {
        *a = a.min(T::one());
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    type F = f64;

    fn cfg(sigma: F, tau: F, eta: F) -> GeometryConfig<F> {
        GeometryConfig { sigma, tau, eta }
    }

    #[test]
    fn soft_argmax_of_uniform_map_is_center() {
        let f: ScalarField<F> = ScalarField::filled(9, 5, 0.7);
        let (x, y) = soft_argmax(&f);
        assert!((x - 4.0).abs() < 1e-12);
        assert!((y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn soft_argmax_finds_a_sharp_peak() {
        let mut f: ScalarField<F> = ScalarField::zeros(64, 64);
        f.set(20, 10, 50.0);
        let (x, y) = soft_argmax(&f);
        assert!((x - 20.0).abs() < 0.01, "x = {x}");
        assert!((y - 10.0).abs() < 0.01, "y = {y}");
    }

    #[test]
    fn soft_argmax_is_translation_equivariant_away_from_borders() {
        let mut f = ScalarField::zeros(48, 48);
        // Tall enough that the zero background carries negligible softmax mass.
        let bump = |f: &mut ScalarField<F>, cx: isize, cy: isize| {
            for dy in -3..=3_isize {
                for dx in -3..=3_isize {
                    let v = 50.0 + 8.0 * (-((dx * dx + dy * dy) as F) / 4.0).exp();
                    f.set((cx + dx) as usize, (cy + dy) as usize, v);
                }
            }
        };
        bump(&mut f, 14, 20);
        let (x0, y0) = soft_argmax(&f);
        let mut g = ScalarField::zeros(48, 48);
        bump(&mut g, 19, 27);
        let (x1, y1) = soft_argmax(&g);
        assert!((x1 - x0 - 5.0).abs() < 1e-6);
        assert!((y1 - y0 - 7.0).abs() < 1e-6);
    }

    #[test]
    fn soft_argmax_stays_inside_the_image() {
        let mut f = ScalarField::zeros(8, 8);
        f.set(0, 0, 100.0);
        let (x, y) = soft_argmax(&f);
        assert!(x >= 0.0 && x <= 7.0 && y >= 0.0 && y <= 7.0);
    }

    #[test]
    fn gaussian_peak_is_one_and_half_value_radius_matches() {
        let g = gaussian_field(20.0, 15.0, 9.0, 48, 48);
        assert_eq!(g.get(20, 15), 1.0);
        // Value at distance sigma * sqrt(2 ln 2) is exactly 1/2.
        let r = 9.0 * (2.0f64 * 2.0f64.ln()).sqrt();
        let v = (-(r * r) / (2.0 * 81.0)).exp();
        assert!((v - 0.5).abs() < 1e-12);
        // Radially non-increasing along a scan line.
        let mut prev = g.get(20, 15);
        for x in 21..48 {
            assert!(g.get(x, 15) <= prev);
            prev = g.get(x, 15);
        }
    }

    #[test]
    fn heatmap_arithmetic_matches_hand_values() {
        let tau = 0.1;
        let eta = 3.5;
        let hv = |g: F| (eta * (g - tau).max(0.0)).min(1.0);
        assert_eq!(hv(1.0), 1.0); // min(3.5 * 0.9, 1)
        assert_eq!(hv(0.1), 0.0);
        assert!((hv(0.3) - 0.7) < 1e-12);
        let g = ScalarField::from_vec(3, 1, vec![1.0, 0.1, 0.3]);
        let h = heatmap_from_gaussian(&g, tau, eta);
        assert_eq!(h.get(0, 0), 1.0);
        assert_eq!(h.get(1, 0), 0.0);
        assert!((h.get(2, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn heatmap_support_is_contained_in_the_disc() {
        let c = cfg(9.0, 0.1, 3.5);
        let h = heatmap(24.0, 24.0, &c, 48, 48);
        let r = c.support_radius();
        for y in 0..48 {
            for x in 0..48 {
                let d = ((x as F - 24.0).powi(2) + (y as F - 24.0).powi(2)).sqrt();
                if h.get(x, y) > 0.0 {
                    assert!(d < r + 1e-9, "support pixel outside disc at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn heatmap_area_matches_disc_count() {
        let c = cfg(9.0, 0.1, 3.5);
        let a = heatmap_area(&c, (48, 48));
        let r = c.support_radius();
        assert!((r - 19.3137).abs() < 1e-3);
        let disc = std::f64::consts::PI * r * r;
        let rel = (a as F - disc).abs() / disc;
        assert!(rel <= 0.02, "A_h = {a}, disc = {disc:.1}, rel = {rel:.4}");
    }

    #[test]
    fn heatmap_area_shrinks_to_zero_as_tau_grows() {
        let mut prev = usize::MAX;
        for tau in [0.1, 0.5, 0.9, 0.999] {
            let a = heatmap_area(&cfg(9.0, tau, 3.5), (16, 16));
            assert!(a <= prev);
            prev = a;
        }
        assert!(heatmap_area(&cfg(9.0, 0.9999999, 3.5), (16, 16)) <= 1);
    }

    #[test]
    fn heatmap_area_is_position_independent() {
        // Count support pixels of heatmaps at different positions on a canvas
        // large enough for the disc; all match the cached-area computation.
        let c = cfg(4.0, 0.2, 3.5);
        let a = heatmap_area(&c, (64, 64));
        for &(x, y) in &[(20.0, 20.0), (40.0, 30.0), (31.0, 41.0)] {
            let h = heatmap(x, y, &c, 64, 64);
            let count = h.values().iter().filter(|&&v| v > 0.0).count();
            assert_eq!(count, a);
        }
    }

    #[test]
    fn aggregate_mask_saturates_and_scales() {
        let h: ScalarField<F> = ScalarField::filled(4, 4, 0.8);
        let m = aggregate_mask(&[h.clone(), h.clone()], &[1.0, 1.0]).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0)); // min(1.6, 1)
        let m0 = aggregate_mask(&[h.clone(), h.clone()], &[0.0, 0.0]).unwrap();
        assert!(m0.values().iter().all(|&v| v == 0.0));
        let mh = aggregate_mask(&[h], &[0.5]).unwrap();
        assert!(mh.values().iter().all(|&v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn aggregate_mask_is_monotone_in_status() {
        let h1 = heatmap(5.0, 5.0, &cfg(3.0, 0.1, 3.5), 16, 16);
        let h2 = heatmap(10.0, 9.0, &cfg(3.0, 0.1, 3.5), 16, 16);
        let lo = aggregate_mask(&[h1.clone(), h2.clone()], &[0.3, 0.6]).unwrap();
        let hi = aggregate_mask(&[h1, h2], &[0.7, 0.6]).unwrap();
        for (a, b) in lo.values().iter().zip(hi.values()) {
            assert!(a <= b);
        }
    }

    #[test]
    fn status_is_logistic_of_logit() {
        let kp = Keypoint::new(0.0, 0.0, 0.0);
        assert_eq!(kp.status(), 0.5);
        assert!(Keypoint::new(0.0, 0.0, 2.0).status() > 0.85);
        assert!(!Keypoint::new(0.0, 0.0, -0.1).is_active(0.5));
        assert!(Keypoint::new(0.0, 0.0, 0.1).is_active(0.5));
    }

    #[test]
    fn coordinates_clamp_to_image_rectangle() {
        let kp = Keypoint::new(-3.0, 99.0, 0.0);
        assert_eq!(kp.clamped(64, 48), (0.0, 47.0));
    }
}
