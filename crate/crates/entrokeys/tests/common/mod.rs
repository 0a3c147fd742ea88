//! Oracles shared by the integration and acceptance suites. These are
//! deliberately naive re-implementations, independent of the engine's
//! incremental/banded execution paths.

#![allow(dead_code)]

use entrokeys::entropy::{HistogramSpec, BINS, BIN_WIDTH, PROB_FLOOR};
use entrokeys::image_io::{Frame, PreprocessedFrame};

type F = f64;

fn sigmoid(x: F) -> F {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Direct per-pixel, per-bin, per-sample evaluation of the soft-histogram
/// entropy map: gather the region with replicate padding, accumulate the
/// sigmoid differences for all 256 bins, normalize, take Shannon entropy.
pub fn entropy_map_oracle(frame: &PreprocessedFrame<F>, spec: &HistogramSpec<F>) -> Vec<F> {
    let (w, h) = (frame.width(), frame.height());
    let r = spec.region_size() / 2;
    let b = spec.bandwidth();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut hist = [0.0f64; BINS];
            for dy in -(r as isize)..=(r as isize) {
                for dx in -(r as isize)..=(r as isize) {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for c in 0..3 {
                        let v = frame.channel(sx, sy, c);
                        for (bin, slot) in hist.iter_mut().enumerate() {
                            let center = bin as F * BIN_WIDTH;
                            *slot += sigmoid((v - center + BIN_WIDTH / 2.0) / b)
                                - sigmoid((v - center - BIN_WIDTH / 2.0) / b);
                        }
                    }
                }
            }
            let n = (3 * spec.region_area()) as F;
            let mut entropy = 0.0;
            for &m in &hist {
                if m > 0.0 {
                    let p = m / n;
                    entropy -= p * p.max(PROB_FLOOR).ln();
                }
            }
            out[y * w + x] = entropy.clamp(0.0, (BINS as F).ln());
        }
    }
    out
}

/// Hard 256-bin histogram entropy: every sample is assigned entirely to the
/// bin whose center is nearest to its value.
pub fn hard_histogram_entropy_oracle(frame: &PreprocessedFrame<F>, region_size: usize) -> Vec<F> {
    let (w, h) = (frame.width(), frame.height());
    let r = region_size / 2;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut counts = [0usize; BINS];
            for dy in -(r as isize)..=(r as isize) {
                for dx in -(r as isize)..=(r as isize) {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                    for c in 0..3 {
                        let v = frame.channel(sx, sy, c);
                        let bin = ((v / BIN_WIDTH).round() as isize).clamp(0, BINS as isize - 1);
                        counts[bin as usize] += 1;
                    }
                }
            }
            let n = (3 * region_size * region_size) as F;
            let mut entropy = 0.0;
            for &c in &counts {
                if c > 0 {
                    let p = c as F / n;
                    entropy -= p * p.ln();
                }
            }
            out[y * w + x] = entropy;
        }
    }
    out
}

/// Random frame whose intensities all sit on the bin-center lattice `k/256`,
/// the discrete color values the histogram is built around.
pub fn random_lattice_frame(w: usize, h: usize, seed: u64) -> Frame<F> {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let data: Vec<F> = (0..w * h * 3)
        .map(|_| (next() % 256) as F / 256.0)
        .collect();
    Frame::new(w, h, data)
}
