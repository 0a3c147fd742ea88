//! The five loss terms driving keypoint discovery and their scheduled
//! combination: masked entropy, masked conditional entropy, information
//! transportation, overlap and active status.

use serde::{Deserialize, Serialize};

use crate::field::ScalarField;
use crate::geometry::Keypoint;
use crate::Scalar;

/// Static pairs with total conditional entropy below this are degenerate.
pub const STATIC_PAIR_EPSILON: f64 = 1e-9;

/// Overlap-loss formulation.
///
/// `Hinge` penalizes the aggregate Gaussian peak above the lower bound beta
/// and is flat below it. `Paper` keeps the printed min-form for fidelity
/// experiments; it rewards pushing the peak below beta instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapForm {
    Hinge,
    Paper,
}

/// Loss weights and related scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights<T> {
    pub lambda_me: T,
    pub lambda_mce: T,
    pub lambda_it: T,
    pub lambda_o: T,
    pub lambda_s: T,
    /// Conditional-entropy contribution inside the IT target, `kappa <= 1`.
    pub kappa: T,
    /// Movement penalty weight inside the IT loss.
    pub m_d: T,
    /// Overlap lower bound.
    pub beta: T,
    pub overlap_form: OverlapForm,
}

impl<T: Scalar> Default for LossWeights<T> {
    fn default() -> Self {
        LossWeights {
            lambda_me: T::from_f64_c(100.0),
            lambda_mce: T::from_f64_c(100.0),
            lambda_it: T::from_f64_c(20.0),
            lambda_o: T::from_f64_c(30.0),
            lambda_s: T::from_f64_c(10.0),
            kappa: T::from_f64_c(0.9),
            m_d: T::one(),
            beta: T::from_f64_c(4.0),
            overlap_form: OverlapForm::Hinge,
        }
    }
}

impl<T: Scalar> LossWeights<T> {
    pub fn validate(&self) -> crate::error::Result<()> {
        let nonneg = [
            ("lambda_me", self.lambda_me),
            ("lambda_mce", self.lambda_mce),
            ("lambda_it", self.lambda_it),
            ("lambda_o", self.lambda_o),
            ("lambda_s", self.lambda_s),
            ("m_d", self.m_d),
            ("beta", self.beta),
            ("kappa", self.kappa),
        ];
        for (name, v) in nonneg {
            if v < T::zero() || !v.is_finite() {
                return Err(crate::Error::InvalidConfig(format!(
                    "{name} must be a nonnegative finite number"
                )));
            }
        }
        if self.kappa > T::one() {
            return Err(crate::Error::InvalidConfig("kappa must be <= 1".into()));
        }
        Ok(())
    }
}

/// All loss components of one frame-pair evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub me: T,
    pub mce: T,
    pub it: T,
    pub overlap: T,
    pub status: T,
    pub total: T,
    /// Per-keypoint IT terms (reconstruction deficit plus movement).
    pub it_terms: Vec<T>,
    /// Per-keypoint squared movement distances `d_i`.
    pub movement: Vec<T>,
    /// Frame entropy summed to zero; ME was defined as 0.
    pub blank_frame: bool,
    /// Conditional entropy summed below threshold; MCE was defined as 0.
    pub static_pair: bool,
}

impl<T: Scalar> LossBreakdown<T> {
    /// Flat JSON object with the five components and the total.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "me": self.me.to_f64(),
            "mce": self.mce.to_f64(),
            "it": self.it.to_f64(),
            "overlap": self.overlap.to_f64(),
            "status": self.status.to_f64(),
            "total": self.total.to_f64(),
        })
    }
}

/// Masked entropy loss: `1 - sum(H . M) / sum(H)`, or 0 on a blank frame.
pub fn masked_entropy_loss<T: Scalar>(h: &ScalarField<T>, mask: &ScalarField<T>) -> T {
    masked_fraction_loss(h, mask, T::zero())
}

/// Masked conditional entropy loss; static pairs (tiny total) yield 0.
pub fn masked_conditional_entropy_loss<T: Scalar>(
    h_cond: &ScalarField<T>,
    mask: &ScalarField<T>,
) -> T {
    masked_fraction_loss(h_cond, mask, T::from_f64_c(STATIC_PAIR_EPSILON))
}

fn masked_fraction_loss<T: Scalar>(h: &ScalarField<T>, mask: &ScalarField<T>, eps: T) -> T {
    h.same_dims(mask, "masked loss").expect("masked loss dims");
    let total = h.sum();
    if total <= eps {
        return T::zero();
    }
    let covered: T = h
        .values()
        .iter()
        .zip(mask.values())
        .map(|(&hv, &mv)| hv * mv)
        .sum();
    T::one() - covered / total
}

/// Information-transportation loss for all keypoints.
///
/// Per keypoint `i` the previous frame's entropy outside both of its heatmaps
/// is the source, the current entropy inside its heatmap plus `kappa` times
/// the conditional entropy outside it is the target, and the reconstruction is
/// their sum. The loss is the positive entropy deficit normalized by the
/// heatmap area, plus `m_d` times the squared distance traveled.
#[allow(clippy::too_many_arguments)]
pub fn information_transport_loss<T: Scalar>(
    h_t: &ScalarField<T>,
    h_prev: &ScalarField<T>,
    h_cond: &ScalarField<T>,
    kp_t: &[Keypoint<T>],
    kp_prev: &[Keypoint<T>],
    heatmaps_t: &[ScalarField<T>],
    heatmaps_prev: &[ScalarField<T>],
    heatmap_area: T,
    kappa: T,
    m_d: T,
) -> (T, Vec<T>) {
    assert!(heatmap_area > T::zero(), "heatmap area must be positive");
    let k = kp_t.len();
    assert!(
        kp_prev.len() == k && heatmaps_t.len() == k && heatmaps_prev.len() == k,
        "keypoint/heatmap counts must agree"
    );
    let mut terms = Vec::with_capacity(k);
    for i in 0..k {
        let ht_i = &heatmaps_t[i];
        let hp_i = &heatmaps_prev[i];
        let mut deficit = T::zero();
        for idx in 0..h_t.values().len() {
            let ht = ht_i.values()[idx];
            let hp = hp_i.values()[idx];
            let source = h_prev.values()[idx] * (T::one() - hp) * (T::one() - ht);
            let target = h_t.values()[idx] * ht + kappa * h_cond.values()[idx] * (T::one() - ht);
            let recon = source + target;
            deficit += (h_t.values()[idx] - recon).max(T::zero());
        }
        let d = (kp_t[i].x - kp_prev[i].x).powi(2) + (kp_t[i].y - kp_prev[i].y).powi(2);
        terms.push(deficit / heatmap_area + m_d * d);
    }
    (terms.iter().copied().sum(), terms)
}

/// Squared movement distances `d_i` between two keypoint sets (raw coords).
pub fn movement_distances<T: Scalar>(kp_t: &[Keypoint<T>], kp_prev: &[Keypoint<T>]) -> Vec<T> {
    kp_t.iter()
        .zip(kp_prev)
        .map(|(a, b)| (a.x - b.x).powi(2) + (a.y - b.y).powi(2))
        .collect()
}

/// Overlap loss over the pixel-wise sum of the Gaussian fields.
///
/// Hinge form: `(1/K) max(max_p sum_i G_i(p) - beta, 0)`. Ties in the pixel
/// max resolve to the first index in row-major order.
pub fn overlap_loss<T: Scalar>(gaussians: &[ScalarField<T>], beta: T, form: OverlapForm) -> T {
    assert!(!gaussians.is_empty(), "overlap loss needs at least one field");
    let first = &gaussians[0];
    let mut sum = vec![T::zero(); first.values().len()];
    for g in gaussians {
        first.same_dims(g, "overlap_loss").expect("overlap dims");
        for (a, &v) in sum.iter_mut().zip(g.values()) {
            *a += v;
        }
    }
    let mut peak = T::neg_infinity();
    for &v in &sum {
        if v > peak {
            peak = v;
        }
    }
    let k = T::from_f64_c(gaussians.len() as f64);
    match form {
        OverlapForm::Hinge => (peak - beta).max(T::zero()) / k,
        OverlapForm::Paper => (peak - beta).min(T::zero()) / k,
    }
}

/// Active status loss: mean soft status.
pub fn status_loss<T: Scalar>(statuses: &[T]) -> T {
    assert!(!statuses.is_empty(), "status loss needs at least one keypoint");
    let sum: T = statuses.iter().copied().sum();
    sum / T::from_f64_c(statuses.len() as f64)
}

/// Weighted combination of all losses. The status weight is scheduled by
/// `(1 - me)`; that factor is treated as a constant by the gradient engine.
pub fn mint_total<T: Scalar>(me: T, mce: T, it: T, overlap: T, status: T, w: &LossWeights<T>) -> T {
    w.lambda_me * me
        + w.lambda_mce * mce
        + w.lambda_it * it
        + w.lambda_o * overlap
        + (T::one() - me) * w.lambda_s * status
}
