//! Exact gradients of the combined loss with respect to keypoint parameters
//! (coordinates and status logits) for a frame pair, plus a central
//! finite-difference verification harness.
//!
//! Entropy maps are constants here: gradients flow through Gaussian fields,
//! heatmaps, masks and the loss terms, never through the histogram. At clamp
//! and threshold kinks the derivative takes the flat (saturated) branch;
//! the finite-difference harness flags parameters within two steps of a kink
//! and excludes them from its verdict.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{heatmap_area, GeometryConfig, Keypoint};
use crate::losses::{LossBreakdown, LossWeights, OverlapForm, STATIC_PAIR_EPSILON};
use crate::Scalar;

type FrozenPrev<T> = (Vec<Keypoint<T>>, Vec<KpFields<T>>);

/// Which parameters a flat vector describes.
///
/// `Single`: 3K scalars `x_1, y_1, l_1, x_2, ...` for the current frame; the
/// previous frame is frozen inside the context. `Pair`: 6K scalars, current
/// frame first, previous frame second.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamLayout {
    Single,
    Pair,
}

/// Pack keypoints into the flat layout.
pub fn pack_params<T: Scalar>(kps: &[Keypoint<T>]) -> Vec<T> {
    let mut out = Vec::with_capacity(kps.len() * 3);
    for kp in kps {
        out.extend_from_slice(&[kp.x, kp.y, kp.status_logit]);
    }
    out
}

/// Unpack a 3K slice into keypoints.
pub fn unpack_params<T: Scalar>(params: &[T]) -> Vec<Keypoint<T>> {
    assert_eq!(params.len() % 3, 0, "parameter vector length must be 3K");
    params
        .chunks_exact(3)
        .map(|c| Keypoint::new(c[0], c[1], c[2]))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Bbox {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl Bbox {
    fn full(w: usize, h: usize) -> Self {
        Bbox { x0: 0, x1: w, y0: 0, y1: h }
    }

    fn hull(a: Bbox, b: Bbox) -> Self {
        Bbox {
            x0: a.x0.min(b.x0),
            x1: a.x1.max(b.x1),
            y0: a.y0.min(b.y0),
            y1: a.y1.max(b.y1),
        }
    }
}

/// Per-keypoint evaluation state: separable Gaussian factors over the whole
/// frame plus the heatmap restricted to its support bounding box.
struct KpFields<T> {
    cx: T,
    cy: T,
    x_free: bool,
    y_free: bool,
    bbox: Bbox,
    ht: Vec<T>,
    rows: Vec<T>,
    cols: Vec<T>,
    support_count: u64,
    ring_count: u64,
}

impl<T: Scalar> KpFields<T> {
    fn build(kp: &Keypoint<T>, geom: &GeometryConfig<T>, w: usize, h: usize) -> Self {
        let (cx, cy) = kp.clamped(w, h);
        let inv2s2 = T::one() / ((T::one() + T::one()) * geom.sigma * geom.sigma);
        let rows: Vec<T> = (0..h)
            .map(|v| (-(T::from_f64_c(v as f64) - cy).powi(2) * inv2s2).exp())
            .collect();
        let cols: Vec<T> = (0..w)
            .map(|u| (-(T::from_f64_c(u as f64) - cx).powi(2) * inv2s2).exp())
            .collect();

        let r = geom.support_radius();
        let bbox = if r.is_finite() {
            let rf = r.to_f64().unwrap() + 2.0;
            let cxf = cx.to_f64().unwrap();
            let cyf = cy.to_f64().unwrap();
            Bbox {
                x0: (cxf - rf).floor().max(0.0) as usize,
                x1: (((cxf + rf).ceil() as usize) + 1).min(w),
                y0: (cyf - rf).floor().max(0.0) as usize,
                y1: (((cyf + rf).ceil() as usize) + 1).min(h),
            }
        } else {
            Bbox::full(w, h)
        };

        let bw = bbox.x1 - bbox.x0;
        let bh = bbox.y1 - bbox.y0;
        let mut ht = vec![T::zero(); bw * bh];
        let ring_hi = geom.tau + T::one() / geom.eta;
        let mut support_count = 0u64;
        let mut ring_count = 0u64;
        for y in bbox.y0..bbox.y1 {
            let gy = rows[y];
            let row = &mut ht[(y - bbox.y0) * bw..(y - bbox.y0 + 1) * bw];
            for (x, slot) in (bbox.x0..bbox.x1).zip(row.iter_mut()) {
                let g = gy * cols[x];
                if g > geom.tau {
                    support_count += 1;
                    if g < ring_hi {
                        ring_count += 1;
                    }
                    *slot = (geom.eta * (g - geom.tau)).min(T::one());
                }
            }
        }
        KpFields {
            cx,
            cy,
            x_free: kp.x == cx,
            y_free: kp.y == cy,
            bbox,
            ht,
            rows,
            cols,
            support_count,
            ring_count,
        }
    }

    #[inline]
    fn h_at(&self, x: usize, y: usize) -> T {
        if x >= self.bbox.x0 && x < self.bbox.x1 && y >= self.bbox.y0 && y < self.bbox.y1 {
            self.ht[(y - self.bbox.y0) * (self.bbox.x1 - self.bbox.x0) + (x - self.bbox.x0)]
        } else {
            T::zero()
        }
    }

    #[inline]
    fn g_at(&self, x: usize, y: usize) -> T {
        self.rows[y] * self.cols[x]
    }
}

/// Finite-difference comparison of the analytic gradient.
#[derive(Debug, Clone)]
pub struct GradientReport<T> {
    pub analytic: Vec<T>,
    pub numeric: Vec<T>,
    pub rel_err: Vec<T>,
    /// Parameters within two steps of a non-smooth set; excluded from the verdict.
    pub flagged: Vec<bool>,
    /// Max relative error over non-flagged parameters.
    pub max_rel_err: T,
}

impl<T: Scalar> GradientReport<T> {
    pub fn to_json(&self) -> serde_json::Value {
        let f = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
        serde_json::json!({
            "analytic": f(&self.analytic),
            "numeric": f(&self.numeric),
            "rel_err": f(&self.rel_err),
            "flagged": self.flagged,
            "max_rel_err": self.max_rel_err.to_f64(),
        })
    }
}

/// Evaluation context for one frame pair: maps, configuration and
/// precomputed constants. One context per optimization instance; a single
/// context is not reentrant (it owns scratch buffers).
pub struct EvalContext<T> {
    h_t: ScalarField<T>,
    h_prev: ScalarField<T>,
    h_cond: ScalarField<T>,
    geometry: GeometryConfig<T>,
    weights: LossWeights<T>,
    sum_h_t: T,
    sum_h_cond: T,
    a_h: T,
    base_deficit: Vec<T>,
    base_deficit_sum: T,
    single_frame: bool,
    frozen_prev: Option<FrozenPrev<T>>,
    /// When set, the status-loss schedule factor `(1 - me)` uses this value
    /// instead of the live one. The factor is excluded from differentiation,
    /// so finite-difference probes must hold it fixed to sample the same
    /// objective the analytic gradient describes.
    schedule_me_pin: Option<T>,
    mask_acc: Vec<T>,
    gsum: Vec<T>,
}

impl<T: Scalar> EvalContext<T> {
    /// Context for a frame pair (`h_cond` must be the conditional entropy of
    /// `h_t` given `h_prev`).
    pub fn for_pair(
        h_t: ScalarField<T>,
        h_prev: ScalarField<T>,
        h_cond: ScalarField<T>,
        geometry: GeometryConfig<T>,
        weights: LossWeights<T>,
    ) -> Result<Self> {
        h_t.same_dims(&h_prev, "eval context")?;
        h_t.same_dims(&h_cond, "eval context")?;
        geometry.validate()?;
        weights.validate()?;
        let n = h_t.values().len();
        let mut base_deficit = vec![T::zero(); n];
        let mut base_sum = T::zero();
        for (i, slot) in base_deficit.iter_mut().enumerate() {
            let bg = h_prev.values()[i] + weights.kappa * h_cond.values()[i];
            let d = (h_t.values()[i] - bg).max(T::zero());
            *slot = d;
            base_sum += d;
        }
        let a_h = heatmap_area(&geometry, (h_t.width(), h_t.height()));
        if a_h == 0 && weights.lambda_it > T::zero() {
            return Err(Error::InvalidConfig(
                "heatmap area is zero; the transport loss cannot be normalized".into(),
            ));
        }
        let sum_h_t = h_t.sum();
        let sum_h_cond = h_cond.sum();
        Ok(EvalContext {
            schedule_me_pin: None,
            mask_acc: vec![T::zero(); n],
            gsum: vec![T::zero(); n],
            sum_h_t,
            sum_h_cond,
            a_h: T::from_f64_c(a_h as f64),
            base_deficit,
            base_deficit_sum: base_sum,
            single_frame: false,
            frozen_prev: None,
            h_t,
            h_prev,
            h_cond,
            geometry,
            weights,
        })
    }

    /// Context for single-frame optimization: only the masked-entropy,
    /// overlap and scheduled status terms are active.
    pub fn for_single_frame(
        h_t: ScalarField<T>,
        geometry: GeometryConfig<T>,
        mut weights: LossWeights<T>,
    ) -> Result<Self> {
        weights.lambda_mce = T::zero();
        weights.lambda_it = T::zero();
        let zeros = ScalarField::zeros(h_t.width(), h_t.height());
        let mut ctx = Self::for_pair(h_t.clone(), h_t, zeros, geometry, weights)?;
        ctx.single_frame = true;
        Ok(ctx)
    }

    /// Freeze the previous frame's keypoints for `ParamLayout::Single`.
    pub fn set_frozen_previous(&mut self, prev: Vec<Keypoint<T>>) {
        let (w, h) = (self.h_t.width(), self.h_t.height());
        let fields = prev
            .par_iter()
            .map(|kp| KpFields::build(kp, &self.geometry, w, h))
            .collect();
        self.frozen_prev = Some((prev, fields));
    }

    pub fn weights(&self) -> &LossWeights<T> {
        &self.weights
    }

    pub fn h_t(&self) -> &ScalarField<T> {
        &self.h_t
    }

    fn keypoint_count(&self, params: &[T], layout: ParamLayout) -> Result<usize> {
        let per = match layout {
            ParamLayout::Single => 3,
            ParamLayout::Pair => 6,
        };
        if params.is_empty() || !params.len().is_multiple_of(per) {
            return Err(Error::InvalidInput(format!(
                "parameter vector length {} is not a multiple of {per}",
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::InvalidInput("non-finite parameter".into()));
        }
        if layout == ParamLayout::Single {
            match &self.frozen_prev {
                None if !self.single_frame => {
                    return Err(Error::InvalidInput(
                        "single layout requires frozen previous keypoints".into(),
                    ))
                }
                Some((prev, _)) if prev.len() * 3 != params.len() => {
                    return Err(Error::InvalidInput(
                        "frozen previous keypoint count mismatch".into(),
                    ))
                }
                _ => {}
            }
        } else if self.single_frame {
            return Err(Error::InvalidInput(
                "pair layout is meaningless for a single-frame context".into(),
            ));
        }
        Ok(params.len() / per)
    }

    /// Loss only.
    pub fn evaluate(&mut self, params: &[T], layout: ParamLayout) -> Result<LossBreakdown<T>> {
        let (bd, _, _) = self.eval_inner(params, layout, false)?;
        Ok(bd)
    }

    /// Loss plus the gradient with respect to every parameter in `params`.
    pub fn evaluate_with_gradients(
        &mut self,
        params: &[T],
        layout: ParamLayout,
    ) -> Result<(LossBreakdown<T>, Vec<T>)> {
        let (bd, grad, _) = self.eval_inner(params, layout, true)?;
        Ok((bd, grad.expect("gradient requested")))
    }

    fn eval_with_signature(
        &mut self,
        params: &[T],
        layout: ParamLayout,
    ) -> Result<(LossBreakdown<T>, Vec<u64>)> {
        let (bd, _, sig) = self.eval_inner(params, layout, false)?;
        Ok((bd, sig))
    }

    #[allow(clippy::type_complexity)]
    fn eval_inner(
        &mut self,
        params: &[T],
        layout: ParamLayout,
        want_grad: bool,
    ) -> Result<(LossBreakdown<T>, Option<Vec<T>>, Vec<u64>)> {
        let k = self.keypoint_count(params, layout)?;
        let (w, h) = (self.h_t.width(), self.h_t.height());
        let n = w * h;
        let geom = self.geometry;
        let wts = self.weights;

        let cur = unpack_params(&params[..3 * k]);
        let prev_owned;
        let prev: &[Keypoint<T>] = match layout {
            ParamLayout::Pair => {
                prev_owned = unpack_params(&params[3 * k..]);
                &prev_owned
            }
            ParamLayout::Single => {
                if self.single_frame {
                    &cur
                } else {
                    &self.frozen_prev.as_ref().unwrap().0
                }
            }
        };

        let cur_fields: Vec<KpFields<T>> = cur
            .par_iter()
            .map(|kp| KpFields::build(kp, &geom, w, h))
            .collect();
        let prev_fields_owned: Option<Vec<KpFields<T>>>;
        let prev_fields: &[KpFields<T>] = if self.single_frame {
            &cur_fields
        } else {
            match layout {
                ParamLayout::Pair => {
                    prev_fields_owned = Some(
                        prev.par_iter()
                            .map(|kp| KpFields::build(kp, &geom, w, h))
                            .collect(),
                    );
                    prev_fields_owned.as_ref().unwrap()
                }
                ParamLayout::Single => &self.frozen_prev.as_ref().unwrap().1,
            }
        };

        let statuses: Vec<T> = cur.iter().map(|kp| kp.status()).collect();

        // Aggregated mask (pre-saturation) over the full frame.
        self.mask_acc.iter_mut().for_each(|v| *v = T::zero());
        for (f, &s) in cur_fields.iter().zip(&statuses) {
            let bw = f.bbox.x1 - f.bbox.x0;
            for y in f.bbox.y0..f.bbox.y1 {
                let row = &f.ht[(y - f.bbox.y0) * bw..(y - f.bbox.y0 + 1) * bw];
                let acc = &mut self.mask_acc[y * w + f.bbox.x0..y * w + f.bbox.x1];
                for (a, &hv) in acc.iter_mut().zip(row) {
                    *a += hv * s;
                }
            }
        }

        // Coverage sums and mask saturation count.
        let blank_frame = self.sum_h_t <= T::zero();
        let static_pair = self.sum_h_cond <= T::from_f64_c(STATIC_PAIR_EPSILON);
        let mut covered_t = T::zero();
        let mut covered_cond = T::zero();
        let mut sat_count = 0u64;
        for i in 0..n {
            let a = self.mask_acc[i];
            let m = a.min(T::one());
            if a >= T::one() {
                sat_count += 1;
            }
            covered_t += self.h_t.values()[i] * m;
            covered_cond += self.h_cond.values()[i] * m;
        }
        let me = if blank_frame {
            T::zero()
        } else {
            T::one() - covered_t / self.sum_h_t
        };
        let mce = if static_pair || wts.lambda_mce == T::zero() {
            T::zero()
        } else {
            T::one() - covered_cond / self.sum_h_cond
        };

        // Overlap: pixel-wise sum of Gaussians, hard max, hinge.
        self.gsum.iter_mut().for_each(|v| *v = T::zero());
        for f in &cur_fields {
            for y in 0..h {
                let gy = f.rows[y];
                let row = &mut self.gsum[y * w..(y + 1) * w];
                for (slot, &cx) in row.iter_mut().zip(&f.cols) {
                    *slot += gy * cx;
                }
            }
        }
        let mut peak = T::neg_infinity();
        let mut argmax = 0usize;
        for (i, &v) in self.gsum.iter().enumerate() {
            if v > peak {
                peak = v;
                argmax = i;
            }
        }
        let kf = T::from_f64_c(k as f64);
        let (overlap, overlap_active) = match wts.overlap_form {
            OverlapForm::Hinge => ((peak - wts.beta).max(T::zero()) / kf, peak > wts.beta),
            OverlapForm::Paper => ((peak - wts.beta).min(T::zero()) / kf, peak < wts.beta),
        };

        // Information transportation.
        let mut it_terms = vec![T::zero(); k];
        let movement: Vec<T> = cur
            .iter()
            .zip(prev.iter())
            .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
            .collect();
        let mut deficit_counts = vec![0u64; k];
        if wts.lambda_it > T::zero() {
            for i in 0..k {
                let ft = &cur_fields[i];
                let fp = &prev_fields[i];
                let hull = Bbox::hull(ft.bbox, fp.bbox);
                let mut corr = T::zero();
                let mut count = 0u64;
                for y in hull.y0..hull.y1 {
                    for x in hull.x0..hull.x1 {
                        let idx = y * w + x;
                        let ht = ft.h_at(x, y);
                        let hp = fp.h_at(x, y);
                        let source =
                            self.h_prev.values()[idx] * (T::one() - hp) * (T::one() - ht);
                        let target = self.h_t.values()[idx] * ht
                            + wts.kappa * self.h_cond.values()[idx] * (T::one() - ht);
                        let deficit = (self.h_t.values()[idx] - source - target).max(T::zero());
                        if deficit > T::zero() {
                            count += 1;
                        }
                        corr += deficit - self.base_deficit[idx];
                    }
                }
                deficit_counts[i] = count;
                let pixel_part = (self.base_deficit_sum + corr).max(T::zero());
                it_terms[i] = pixel_part / self.a_h + wts.m_d * movement[i];
            }
        }
        let it: T = it_terms.iter().copied().sum();

        let status = statuses.iter().copied().sum::<T>() / kf;
        let me_sched = self.schedule_me_pin.unwrap_or(me);
        let total = wts.lambda_me * me
            + wts.lambda_mce * mce
            + wts.lambda_it * it
            + wts.lambda_o * overlap
            + (T::one() - me_sched) * wts.lambda_s * status;

        let breakdown = LossBreakdown {
            me,
            mce,
            it,
            overlap,
            status,
            total,
            it_terms,
            movement,
            blank_frame,
            static_pair,
        };

        // Branch signature for kink detection.
        let mut sig = Vec::with_capacity(4 + 4 * k);
        sig.push(u64::from(blank_frame) | (u64::from(static_pair) << 1));
        sig.push(sat_count);
        sig.push(argmax as u64);
        sig.push(u64::from(overlap_active));
        for (i, f) in cur_fields.iter().enumerate() {
            sig.push(
                u64::from(!f.x_free) | (u64::from(!f.y_free) << 1) | (deficit_counts[i] << 2),
            );
            sig.push(f.support_count);
            sig.push(f.ring_count);
        }
        if layout == ParamLayout::Pair {
            for f in prev_fields {
                sig.push(f.support_count);
                sig.push(f.ring_count);
            }
        }

        if !want_grad {
            return Ok((breakdown, None, sig));
        }

        // ------------------------------------------------------------------
        // Backward pass.
        // ------------------------------------------------------------------
        let mut grad = vec![T::zero(); params.len()];
        let inv_sigma2 = T::one() / (geom.sigma * geom.sigma);
        let ring_hi = geom.tau + T::one() / geom.eta;
        let prev_free = layout == ParamLayout::Pair && !self.single_frame;

        let me_coef = if blank_frame {
            T::zero()
        } else {
            -wts.lambda_me / self.sum_h_t
        };
        let mce_coef = if static_pair || wts.lambda_mce == T::zero() {
            T::zero()
        } else {
            -wts.lambda_mce / self.sum_h_cond
        };

        for i in 0..k {
            let f = &cur_fields[i];
            let s = statuses[i];
            let ds = s * (T::one() - s);
            let (gx, gy, gl) = (3 * i, 3 * i + 1, 3 * i + 2);
            let bw = f.bbox.x1 - f.bbox.x0;

            // Masked-entropy and masked-conditional-entropy terms: gradient
            // flows where the mask is not saturated.
            if me_coef != T::zero() || mce_coef != T::zero() {
                let mut acc_x = T::zero();
                let mut acc_y = T::zero();
                let mut acc_l = T::zero();
                for y in f.bbox.y0..f.bbox.y1 {
                    let gyv = f.rows[y];
                    let dyv = T::from_f64_c(y as f64) - f.cy;
                    for x in f.bbox.x0..f.bbox.x1 {
                        let idx = y * w + x;
                        if self.mask_acc[idx] >= T::one() {
                            continue;
                        }
                        let weight = me_coef * self.h_t.values()[idx]
                            + mce_coef * self.h_cond.values()[idx];
                        if weight == T::zero() {
                            continue;
                        }
                        let g = gyv * f.cols[x];
                        if g > geom.tau {
                            let hv = f.ht[(y - f.bbox.y0) * bw + (x - f.bbox.x0)];
                            acc_l += weight * hv * ds;
                            if g < ring_hi {
                                let dh_dg = geom.eta;
                                let dxv = T::from_f64_c(x as f64) - f.cx;
                                let dg_dx = g * dxv * inv_sigma2;
                                let dg_dy = g * dyv * inv_sigma2;
                                acc_x += weight * s * dh_dg * dg_dx;
                                acc_y += weight * s * dh_dg * dg_dy;
                            }
                        }
                    }
                }
                if f.x_free {
                    grad[gx] += acc_x;
                }
                if f.y_free {
                    grad[gy] += acc_y;
                }
                grad[gl] += acc_l;
            }

            // Overlap: gradient at the arg-max pixel only.
            if overlap_active && wts.lambda_o > T::zero() {
                let (px, py) = (argmax % w, argmax / w);
                let g = f.g_at(px, py);
                let coef = wts.lambda_o / kf;
                if f.x_free {
                    grad[gx] += coef * g * (T::from_f64_c(px as f64) - f.cx) * inv_sigma2;
                }
                if f.y_free {
                    grad[gy] += coef * g * (T::from_f64_c(py as f64) - f.cy) * inv_sigma2;
                }
            }

            // Scheduled status term; (1 - me) is a constant multiplier.
            grad[gl] += (T::one() - me_sched) * wts.lambda_s * ds / kf;

            // Transport term.
            if wts.lambda_it > T::zero() {
                let fp = &prev_fields[i];
                let coef = wts.lambda_it / self.a_h;
                let mut acc_x = T::zero();
                let mut acc_y = T::zero();
                for y in f.bbox.y0..f.bbox.y1 {
                    let gyv = f.rows[y];
                    let dyv = T::from_f64_c(y as f64) - f.cy;
                    for x in f.bbox.x0..f.bbox.x1 {
                        let g = gyv * f.cols[x];
                        if g <= geom.tau || g >= ring_hi {
                            continue;
                        }
                        let idx = y * w + x;
                        let ht = f.ht[(y - f.bbox.y0) * bw + (x - f.bbox.x0)];
                        let hp = fp.h_at(x, y);
                        let source =
                            self.h_prev.values()[idx] * (T::one() - hp) * (T::one() - ht);
                        let target = self.h_t.values()[idx] * ht
                            + wts.kappa * self.h_cond.values()[idx] * (T::one() - ht);
                        if self.h_t.values()[idx] - source - target <= T::zero() {
                            continue;
                        }
                        // d deficit / d ht = H_prev (1 - hp) - H_t + kappa H_cond
                        let dd_dht = self.h_prev.values()[idx] * (T::one() - hp)
                            - self.h_t.values()[idx]
                            + wts.kappa * self.h_cond.values()[idx];
                        let dh = geom.eta;
                        acc_x += dd_dht * dh * g * (T::from_f64_c(x as f64) - f.cx) * inv_sigma2;
                        acc_y += dd_dht * dh * g * dyv * inv_sigma2;
                    }
                }
                if f.x_free {
                    grad[gx] += coef * acc_x;
                }
                if f.y_free {
                    grad[gy] += coef * acc_y;
                }

                // Movement penalty on raw coordinates.
                let two = T::one() + T::one();
                let mdx = wts.lambda_it * wts.m_d * two * (cur[i].x - prev[i].x);
                let mdy = wts.lambda_it * wts.m_d * two * (cur[i].y - prev[i].y);
                grad[gx] += mdx;
                grad[gy] += mdy;

                if prev_free {
                    let (pxg, pyg) = (3 * k + 3 * i, 3 * k + 3 * i + 1);
                    let bpw = fp.bbox.x1 - fp.bbox.x0;
                    let mut pacc_x = T::zero();
                    let mut pacc_y = T::zero();
                    for y in fp.bbox.y0..fp.bbox.y1 {
                        let gyv = fp.rows[y];
                        let dyv = T::from_f64_c(y as f64) - fp.cy;
                        for x in fp.bbox.x0..fp.bbox.x1 {
                            let g = gyv * fp.cols[x];
                            if g <= geom.tau || g >= ring_hi {
                                continue;
                            }
                            let idx = y * w + x;
                            let hp = fp.ht[(y - fp.bbox.y0) * bpw + (x - fp.bbox.x0)];
                            let ht = f.h_at(x, y);
                            let source =
                                self.h_prev.values()[idx] * (T::one() - hp) * (T::one() - ht);
                            let target = self.h_t.values()[idx] * ht
                                + wts.kappa * self.h_cond.values()[idx] * (T::one() - ht);
                            if self.h_t.values()[idx] - source - target <= T::zero() {
                                continue;
                            }
                            // d deficit / d hp = H_prev (1 - ht)
                            let dd_dhp = self.h_prev.values()[idx] * (T::one() - ht);
                            let dh = geom.eta;
                            pacc_x +=
                                dd_dhp * dh * g * (T::from_f64_c(x as f64) - fp.cx) * inv_sigma2;
                            pacc_y += dd_dhp * dh * g * dyv * inv_sigma2;
                        }
                    }
                    if fp.x_free {
                        grad[pxg] += coef * pacc_x;
                    }
                    if fp.y_free {
                        grad[pyg] += coef * pacc_y;
                    }
                    grad[pxg] -= mdx;
                    grad[pyg] -= mdy;
                }
            }
        }

        Ok((breakdown, Some(grad), sig))
    }
}

/// Central differences `(f(p + d e_j) - f(p - d e_j)) / (2d)` per parameter.
pub fn central_differences<T: Scalar>(
    mut f: impl FnMut(&[T]) -> T,
    params: &[T],
    step: T,
) -> Vec<T> {
    let mut p = params.to_vec();
    let two = T::one() + T::one();
    (0..params.len())
        .map(|j| {
            let orig = p[j];
            p[j] = orig + step;
            let plus = f(&p);
            p[j] = orig - step;
            let minus = f(&p);
            p[j] = orig;
            (plus - minus) / (two * step)
        })
        .collect()
}

/// Verify the analytic gradient against central finite differences.
///
/// Parameters whose branch signature changes anywhere within two steps of the
/// base point are flagged and excluded from `max_rel_err`.
pub fn finite_diff_check<T: Scalar>(
    ctx: &mut EvalContext<T>,
    params: &[T],
    layout: ParamLayout,
    step: T,
) -> Result<GradientReport<T>> {
    assert!(step > T::zero(), "step must be positive");
    let (base_bd, analytic) = ctx.evaluate_with_gradients(params, layout)?;
    // Pin the status-schedule factor at its base value: it is excluded from
    // differentiation, so the probes must not let it vary.
    ctx.schedule_me_pin = Some(base_bd.me);
    let (_, base_sig) = ctx.eval_with_signature(params, layout)?;

    let two = T::one() + T::one();
    let mut p = params.to_vec();
    let mut numeric = vec![T::zero(); params.len()];
    let mut flagged = vec![false; params.len()];
    for j in 0..params.len() {
        let orig = p[j];
        let mut probe = |offset: T| -> Result<(T, Vec<u64>)> {
            p[j] = orig + offset;
            let out = ctx.eval_with_signature(&p, layout);
            p[j] = orig;
            out.map(|(bd, sig)| (bd.total, sig))
        };
        let (f_p1, s_p1) = probe(step)?;
        let (f_m1, s_m1) = probe(-step)?;
        let (_, s_p2) = probe(two * step)?;
        let (_, s_m2) = probe(-(two * step))?;
        numeric[j] = (f_p1 - f_m1) / (two * step);
        flagged[j] =
            s_p1 != base_sig || s_m1 != base_sig || s_p2 != base_sig || s_m2 != base_sig;
    }
    ctx.schedule_me_pin = None;

    let floor = T::from_f64_c(1e-6);
    let rel_err: Vec<T> = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect();
    let max_rel_err = rel_err
        .iter()
        .zip(&flagged)
        .filter(|(_, &fl)| !fl)
        .map(|(&e, _)| e)
        .fold(T::zero(), T::max);

    Ok(GradientReport {
        analytic,
        numeric,
        rel_err,
        flagged,
        max_rel_err,
    })
}
