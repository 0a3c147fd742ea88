//! Frame representation, PPM/PGM file I/O and the entropy-layer
//! preprocessing chain (blur, sharpen, divide).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Scalar;

/// Guard added to the smooth image before division.
pub const DIVIDE_EPSILON: f64 = 1e-6;

/// Default box-blur radius (5x5 window).
pub const DEFAULT_BLUR_RADIUS: usize = 2;

/// Interleaved RGB raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// A [`Frame`] that went through the blur/sharpen/divide chain.
///
/// Same layout as `Frame`; values remain in `[0, 1]` and are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFrame<T> {
    frame: Frame<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height * 3, "frame data length mismatch");
        debug_assert!(
            data.iter().all(|v| *v >= T::zero() && *v <= T::one()),
            "frame intensities must lie in [0,1]"
        );
        Frame {
            width,
            height,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [T; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Frame {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [T; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn channel(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

impl<T: Scalar> PreprocessedFrame<T> {
    /// Wrap an already-normalized raster without running the chain.
    ///
    /// Used by tests and by callers that synthesize entropy inputs directly.
    pub fn from_frame(frame: Frame<T>) -> Self {
        PreprocessedFrame { frame }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.frame.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.frame.height
    }

    #[inline]
    pub fn channel(&self, x: usize, y: usize, c: usize) -> T {
        self.frame.channel(x, y, c)
    }

    pub fn as_frame(&self) -> &Frame<T> {
        &self.frame
    }
}

// ---------------------------------------------------------------------------
// PPM / PGM
// ---------------------------------------------------------------------------

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        HeaderCursor { bytes, pos: 0 }
    }

    /// Skip whitespace and `#` comment lines.
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_token(&mut self) -> Option<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos > start {
            Some(&self.bytes[start..self.pos])
        } else {
            None
        }
    }

    fn read_usize(&mut self, path: &Path, what: &str) -> Result<usize> {
        let tok = self.read_token().ok_or_else(|| Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: format!("missing {what}"),
        })?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader {
                path: path.to_path_buf(),
                detail: format!("unparsable {what}: {:?}", String::from_utf8_lossy(tok)),
            })
    }
}

/// Parses a binary netpbm header; maxval must lie in `allowed_maxval`.
fn parse_netpbm<'a>(
    bytes: &'a [u8],
    path: &Path,
    magic: &str,
    channels: usize,
    allowed_maxval: std::ops::RangeInclusive<usize>,
) -> Result<(usize, usize, usize, &'a [u8])> {
    let mut cur = HeaderCursor::new(bytes);
    let found = cur.read_token().unwrap_or(b"");
    if found != magic.as_bytes() {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: magic.to_string(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let width = cur.read_usize(path, "width")?;
    let height = cur.read_usize(path, "height")?;
    let maxval = cur.read_usize(path, "maxval")?;
    if !allowed_maxval.contains(&maxval) {
        return Err(Error::UnsupportedMaxval {
            path: path.to_path_buf(),
            maxval: maxval as u32,
        });
    }
    // Exactly one whitespace byte separates the header from the payload.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "missing separator before payload".into(),
        });
    }
    let payload = &bytes[cur.pos + 1..];
    let expected = width * height * channels;
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    Ok((width, height, maxval, &payload[..expected]))
}

/// Load a binary P6 PPM with maxval 255; intensities become `byte / 255`.
pub fn load_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Frame<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, _, payload) = parse_netpbm(&bytes, path, "P6", 3, 255..=255)?;
    let s255 = T::from_f64_c(255.0);
    let data = payload
        .iter()
        .map(|&b| T::from_f64_c(b as f64) / s255)
        .collect();
    Ok(Frame {
        width,
        height,
        data,
    })
}

/// Write a binary P6 PPM, quantizing with `round(v * 255)` (half away from zero).
pub fn save_ppm<T: Scalar>(frame: &Frame<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(frame.data.len() + 32);
    write!(out, "P6\n{} {}\n255\n", frame.width, frame.height).expect("vec write");
    let s255 = T::from_f64_c(255.0);
    out.extend(frame.data.iter().map(|&v| {
        let q = (v * s255).round().to_f64().unwrap_or(0.0);
        q.clamp(0.0, 255.0) as u8
    }));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Load a binary 8-bit P5 PGM as raw bytes plus its maxval.
///
/// Label masks use `maxval = N_obj`, so any maxval in 1..=255 is accepted.
pub fn load_pgm_bytes(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<u8>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (width, height, maxval, payload) = parse_netpbm(&bytes, path, "P5", 1, 1..=255)?;
    Ok((width, height, maxval, payload.to_vec()))
}

/// Write a binary P5 PGM from raw bytes with the given maxval.
pub fn save_pgm_bytes(
    width: usize,
    height: usize,
    maxval: usize,
    bytes: &[u8],
    path: impl AsRef<Path>,
) -> Result<()> {
    assert_eq!(bytes.len(), width * height, "pgm payload length mismatch");
    assert!((1..=255).contains(&maxval), "pgm maxval out of range");
    let path = path.as_ref();
    let mut out = Vec::with_capacity(bytes.len() + 32);
    write!(out, "P5\n{width} {height}\n{maxval}\n").expect("vec write");
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

#[inline]
fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Separable box average over a `(2r+1)^2` window with replicate padding,
/// applied per channel.
fn box_blur<T: Scalar>(frame: &Frame<T>, radius: usize) -> Frame<T> {
    let (w, h) = (frame.width, frame.height);
    let win = T::from_f64_c((2 * radius + 1) as f64);
    let clamp_w = |i: isize| i.clamp(0, w as isize - 1) as usize;
    let clamp_h = |i: isize| i.clamp(0, h as isize - 1) as usize;

    // Horizontal pass.
    let mut tmp = vec![T::zero(); w * h * 3];
    for y in 0..h {
        for c in 0..3 {
            let mut acc = T::zero();
            for dx in -(radius as isize)..=(radius as isize) {
                acc += frame.channel(clamp_w(dx), y, c);
            }
            tmp[(y * w) * 3 + c] = acc;
            for x in 1..w {
                acc += frame.channel(clamp_w((x + radius) as isize), y, c);
                acc -= frame.channel(clamp_w(x as isize - 1 - radius as isize), y, c);
                tmp[(y * w + x) * 3 + c] = acc;
            }
        }
    }
    // Vertical pass.
    let mut out = vec![T::zero(); w * h * 3];
    let idx = |x: usize, y: usize, c: usize| (y * w + x) * 3 + c;
    for x in 0..w {
        for c in 0..3 {
            let mut acc = T::zero();
            for dy in -(radius as isize)..=(radius as isize) {
                acc += tmp[idx(x, clamp_h(dy), c)];
            }
            out[idx(x, 0, c)] = acc / (win * win);
            for y in 1..h {
                acc += tmp[idx(x, clamp_h((y + radius) as isize), c)];
                acc -= tmp[idx(x, clamp_h(y as isize - 1 - radius as isize), c)];
                out[idx(x, y, c)] = acc / (win * win);
            }
        }
    }
    Frame {
        width: w,
        height: h,
        data: out,
    }
}

/// Blur, unsharp-mask, then divide the sharp image by the smooth image.
///
/// `smooth = box_avg(I)`, `sharp = clamp(2 I - smooth, 0, 1)`,
/// `out = clamp(sharp / (smooth + eps), 0, 1)`, per channel.
pub fn preprocess<T: Scalar>(frame: &Frame<T>, blur_radius: usize) -> PreprocessedFrame<T> {
    assert!(blur_radius >= 1, "blur radius must be >= 1");
    let smooth = box_blur(frame, blur_radius);
    let eps = T::from_f64_c(DIVIDE_EPSILON);
    let two = T::from_f64_c(2.0);
    let data = frame
        .data
        .iter()
        .zip(smooth.data.iter())
        .map(|(&v, &s)| {
            let sharp = clamp01(two * v - s);
            clamp01(sharp / (s + eps))
        })
        .collect();
    PreprocessedFrame {
        frame: Frame {
            width: frame.width,
            height: frame.height,
            data,
        },
    }
}

/// Frames named `frame_%06d.ppm` in `dir`, lexicographic = temporal order.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "ppm")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("frame_"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    Ok(paths)
}
