//! Per-pixel image spatial entropy via differentiable soft histograms,
//! joint/conditional entropy and mutual-information maps, and Fano-bound
//! diagnostics.
//!
//! The engine is organized for throughput: work is split into bands of rows
//! (one per worker thread), and within a band the per-pixel 256-bin histogram
//! is maintained incrementally — a ring of per-row bin-weight buffers feeds
//! per-column accumulators, and each output row is produced by a sliding
//! window over columns (add the entering column, remove the leaving one).
//! Identical inputs and thread counts always produce identical maps.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::image_io::PreprocessedFrame;
use crate::Scalar;

/// Number of histogram bins; bin `b` represents the color value `b / 256`.
pub const BINS: usize = 256;

/// Bin width `L`.
pub const BIN_WIDTH: f64 = 1.0 / 256.0;

/// Default kernel bandwidth (`L / 16`).
///
/// Small enough that a bin-centered value keeps >= 99.9% of its mass in its
/// own bin (so constant regions stay near zero entropy) while the histogram
/// remains a smooth function of the intensities.
pub const DEFAULT_BANDWIDTH: f64 = 1.0 / 4096.0;

/// Probability floor applied before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Beyond this argument magnitude the logistic saturates to 0/1 in f64.
const SIGMOID_SATURATION: f64 = 38.0;

/// Soft-histogram configuration: 256 bins of width `1/256`, a kernel
/// bandwidth, and an odd square region size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec<T> {
    bandwidth: T,
    region_size: usize,
}

impl<T: Scalar> Default for HistogramSpec<T> {
    fn default() -> Self {
        HistogramSpec {
            bandwidth: T::from_f64_c(DEFAULT_BANDWIDTH),
            region_size: 3,
        }
    }
}

impl<T: Scalar> HistogramSpec<T> {
    pub fn new(bandwidth: T, region_size: usize) -> Result<Self> {
        if bandwidth <= T::zero() {
            return Err(Error::InvalidConfig("bandwidth must be > 0".into()));
        }
        if region_size < 3 || region_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "region size must be odd and >= 3, got {region_size}"
            )));
        }
        Ok(HistogramSpec {
            bandwidth,
            region_size,
        })
    }

    #[inline]
    pub fn bandwidth(&self) -> T {
        self.bandwidth
    }

    #[inline]
    pub fn region_size(&self) -> usize {
        self.region_size
    }

    /// Region pixel count `|R|`.
    #[inline]
    pub fn region_area(&self) -> usize {
        self.region_size * self.region_size
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Add one sample's per-bin kernel mass into `acc` (length 256).
///
/// The mass of bin `b` is the kernel CDF difference across the bin,
/// `sigma((v - b L + L/2)/B) - sigma((v - b L - L/2)/B)`; consecutive bins
/// share an edge, so the 257 edge values telescope and only edges where the
/// logistic is not saturated need to be evaluated.
#[inline]
fn accumulate_sample<T: Scalar>(v: T, bandwidth: T, acc: &mut [T]) {
    debug_assert_eq!(acc.len(), BINS);
    let l = T::from_f64_c(BIN_WIDTH);
    let half = T::from_f64_c(BIN_WIDTH / 2.0);
    let sat = T::from_f64_c(SIGMOID_SATURATION);
    // Edge b has argument (v + L/2 - b L)/B, strictly decreasing in b.
    // Edges below `lo` saturate to 1, edges above `hi` to 0.
    let top = v + half;
    let lo = ((top - sat * bandwidth) / l)
        .floor()
        .to_isize()
        .unwrap_or(0)
        + 1;
    let hi = ((top + sat * bandwidth) / l)
        .ceil()
        .to_isize()
        .unwrap_or(0)
        - 1;
    let edge = |b: isize| -> T {
        if b < lo {
            T::one()
        } else if b > hi {
            T::zero()
        } else {
            logistic((top - T::from_f64_c(b as f64) * l) / bandwidth)
        }
    };
    let first = (lo - 1).max(0);
    let last = hi.min(BINS as isize - 1);
    let mut prev = edge(first);
    for b in first..=last {
        let next = edge(b + 1);
        acc[b as usize] += prev - next;
        prev = next;
    }
}

/// Soft histogram of a region: `samples` holds all `|R| * C` intensities
/// (every channel of every region pixel); returns the 256 bin probabilities
/// `p(b) = sum_c hist_c(b) / (C * |R|)`.
pub fn soft_histogram<T: Scalar>(samples: &[T], spec: &HistogramSpec<T>) -> [T; BINS] {
    let mut acc = [T::zero(); BINS];
    for &v in samples {
        accumulate_sample(v, spec.bandwidth, &mut acc);
    }
    let inv = T::one() / T::from_f64_c(samples.len() as f64);
    for a in acc.iter_mut() {
        *a *= inv;
    }
    acc
}

/// Shannon entropy (nats) of unnormalized bin masses scaled by `inv_n`,
/// with `0 ln 0 := 0` and the probability floored at `PROB_FLOOR` before the
/// logarithm. Clamped into `[0, ln 256]`.
#[inline]
fn entropy_of_scaled_bins<T: Scalar>(bins: &[T], inv_n: T) -> T {
    let floor = T::from_f64_c(PROB_FLOOR);
    let mut h = T::zero();
    for &m in bins {
        if m > T::zero() {
            let p = m * inv_n;
            h -= p * p.max(floor).ln();
        }
    }
    h.max(T::zero()).min(T::from_f64_c((BINS as f64).ln()))
}

/// Entropy (nats) of a probability vector, same conventions as the engine.
pub fn entropy_of_probs<T: Scalar>(probs: &[T]) -> T {
    entropy_of_scaled_bins(probs, T::one())
}

// ---------------------------------------------------------------------------
// Spatial entropy engine
// ---------------------------------------------------------------------------

/// Per-band worker state: ring of per-row bin buffers plus column accumulators.
struct BandState<T> {
    width: usize,
    /// `width * 256` channel-summed kernel masses for each row in the window.
    ring: Vec<Vec<T>>,
    ring_head: usize,
    /// Vertical sums over the window, `width * 256`.
    col_acc: Vec<T>,
}

impl<T: Scalar> BandState<T> {
    fn new(width: usize, region_size: usize) -> Self {
        BandState {
            width,
            ring: (0..region_size).map(|_| vec![T::zero(); width * BINS]).collect(),
            ring_head: 0,
            col_acc: vec![T::zero(); width * BINS],
        }
    }

    /// Fill the oldest ring slot with row `y`'s kernel masses and add it to
    /// the column accumulators; subtract the slot's previous contents first.
    fn push_row(&mut self, frame: &PreprocessedFrame<T>, bandwidth: T, y: usize, subtract_old: bool) {
        let slot = self.ring_head;
        self.ring_head = (self.ring_head + 1) % self.ring.len();
        let buf = &mut self.ring[slot];
        if subtract_old {
            for (a, b) in self.col_acc.iter_mut().zip(buf.iter()) {
                *a -= *b;
            }
        }
        buf.iter_mut().for_each(|v| *v = T::zero());
        for x in 0..self.width {
            let cell = &mut buf[x * BINS..(x + 1) * BINS];
            for c in 0..3 {
                accumulate_sample(frame.channel(x, y, c), bandwidth, cell);
            }
        }
        for (a, b) in self.col_acc.iter_mut().zip(buf.iter()) {
            *a += *b;
        }
    }
}

fn clamp_idx(i: isize, max: usize) -> usize {
    i.clamp(0, max as isize - 1) as usize
}

fn compute_band<T: Scalar>(
    frame: &PreprocessedFrame<T>,
    spec: &HistogramSpec<T>,
    y_start: usize,
    out_rows: &mut [T],
) {
    let (w, h) = (frame.width(), frame.height());
    let r = spec.region_size / 2;
    let n_rows = out_rows.len() / w;
    let inv_n = T::one() / T::from_f64_c((3 * spec.region_area()) as f64);

    let mut band = BandState::new(w, spec.region_size);
    for dy in -(r as isize)..=(r as isize) {
        band.push_row(frame, spec.bandwidth, clamp_idx(y_start as isize + dy, h), false);
    }

    let mut hist = vec![T::zero(); BINS];
    for row in 0..n_rows {
        let y = y_start + row;
        // Sliding histogram across columns with replicate clamping.
        hist.iter_mut().for_each(|v| *v = T::zero());
        for dx in -(r as isize)..=(r as isize) {
            let col = clamp_idx(dx, w);
            for (hb, cb) in hist.iter_mut().zip(&band.col_acc[col * BINS..(col + 1) * BINS]) {
                *hb += *cb;
            }
        }
        out_rows[row * w] = entropy_of_scaled_bins(&hist, inv_n);
        for x in 1..w {
            let enter = clamp_idx((x + r) as isize, w);
            let leave = clamp_idx(x as isize - 1 - r as isize, w);
            {
                let col = &band.col_acc[enter * BINS..(enter + 1) * BINS];
                for (hb, cb) in hist.iter_mut().zip(col) {
                    *hb += *cb;
                }
            }
            {
                let col = &band.col_acc[leave * BINS..(leave + 1) * BINS];
                for (hb, cb) in hist.iter_mut().zip(col) {
                    *hb -= *cb;
                }
            }
            out_rows[row * w + x] = entropy_of_scaled_bins(&hist, inv_n);
        }
        if row + 1 < n_rows {
            band.push_row(
                frame,
                spec.bandwidth,
                clamp_idx((y + 1 + r) as isize, h),
                true,
            );
        }
    }
}

/// Per-pixel spatial entropy of a preprocessed frame (nats), using the soft
/// histogram over the square region centered at each pixel with replicate
/// padding. `threads` row bands are computed in parallel.
pub fn spatial_entropy<T: Scalar>(
    frame: &PreprocessedFrame<T>,
    spec: &HistogramSpec<T>,
    threads: usize,
) -> Result<ScalarField<T>> {
    let (w, h) = (frame.width(), frame.height());
    if w < spec.region_size || h < spec.region_size {
        return Err(Error::InvalidInput(format!(
            "frame {w}x{h} smaller than region size {}",
            spec.region_size
        )));
    }
    let threads = threads.max(1).min(h);
    let mut out = vec![T::zero(); w * h];

    if threads == 1 {
        compute_band(frame, spec, 0, &mut out);
    } else {
        // Contiguous bands of rows; band boundaries depend only on `threads`,
        // so results are reproducible for a fixed thread count.
        let base = h / threads;
        let extra = h % threads;
        let mut slices = Vec::with_capacity(threads);
        let mut rest = out.as_mut_slice();
        let mut y = 0usize;
        for i in 0..threads {
            let rows = base + usize::from(i < extra);
            let (head, tail) = rest.split_at_mut(rows * w);
            slices.push((y, head));
            rest = tail;
            y += rows;
        }
        std::thread::scope(|scope| {
            for (y_start, slice) in slices {
                scope.spawn(move || compute_band(frame, spec, y_start, slice));
            }
        });
    }
    Ok(ScalarField::from_vec(w, h, out))
}

// ---------------------------------------------------------------------------
// Map algebra
// ---------------------------------------------------------------------------

/// Joint entropy approximation: pixel-wise max of the marginal entropies.
pub fn joint_entropy<T: Scalar>(a: &ScalarField<T>, b: &ScalarField<T>) -> Result<ScalarField<T>> {
    a.zip_map(b, "joint_entropy", T::max)
}

/// Conditional entropy `H(t | prev) = max(h_t, h_prev) - h_prev`.
pub fn conditional_entropy<T: Scalar>(
    h_t: &ScalarField<T>,
    h_prev: &ScalarField<T>,
) -> Result<ScalarField<T>> {
    h_t.zip_map(h_prev, "conditional_entropy", |t, p| (t - p).max(T::zero()))
}

/// Mutual information under the max-joint approximation: pixel-wise min.
pub fn mutual_information<T: Scalar>(
    a: &ScalarField<T>,
    b: &ScalarField<T>,
) -> Result<ScalarField<T>> {
    a.zip_map(b, "mutual_information", T::min)
}

/// Fano lower bound on the average error probability of representing `n_pixels`
/// values over a `vocab`-symbol alphabet given `covered` nats of entropy:
/// `1 - covered / (N ln |B|) - ln 2 / ln |B|`.
pub fn fano_bound<T: Scalar>(covered: T, n_pixels: usize, vocab: usize) -> T {
    let log_b = T::from_f64_c((vocab as f64).ln());
    let n = T::from_f64_c(n_pixels as f64);
    T::one() - covered / (n * log_b) - T::from_f64_c(2f64.ln()) / log_b
}

// ---------------------------------------------------------------------------
// EMAP / PGM export
// ---------------------------------------------------------------------------

const EMAP_MAGIC: &[u8] = b"EMAP1\n";

/// Write an entropy map: magic `EMAP1\n`, ASCII `width height\n`, then
/// row-major little-endian f32 values.
pub fn write_emap<T: Scalar>(map: &ScalarField<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(map.values().len() * 4 + 32);
    out.extend_from_slice(EMAP_MAGIC);
    writeln!(out, "{} {}", map.width(), map.height()).expect("vec write");
    for &v in map.values() {
        out.extend_from_slice(&(v.to_f32().unwrap_or(0.0)).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read an EMAP file written by [`write_emap`].
pub fn read_emap<T: Scalar>(path: impl AsRef<Path>) -> Result<ScalarField<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < EMAP_MAGIC.len() || &bytes[..EMAP_MAGIC.len()] != EMAP_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "EMAP1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(5)]).into_owned(),
        });
    }
    let rest = &bytes[EMAP_MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "missing dimension line".into(),
        })?;
    let dims: Vec<usize> = std::str::from_utf8(&rest[..nl])
        .ok()
        .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    let [w, h] = dims[..] else {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "expected `width height`".into(),
        });
    };
    let payload = &rest[nl + 1..];
    let expected = w * h * 4;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected]
        .chunks_exact(4)
        .map(|c| T::from_f64_c(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(ScalarField::from_vec(w, h, data))
}

/// Export an entropy map as P5 PGM scaled by `255 / ln 256` for inspection.
pub fn write_entropy_pgm<T: Scalar>(map: &ScalarField<T>, path: impl AsRef<Path>) -> Result<()> {
    let scale = 255.0 / (BINS as f64).ln();
    let bytes: Vec<u8> = map
        .values()
        .iter()
        .map(|&v| (v.to_f64().unwrap_or(0.0) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    crate::image_io::save_pgm_bytes(map.width(), map.height(), 255, &bytes, path)
}
