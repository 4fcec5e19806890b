//! 1D and 2D upsampling with nearest-neighbor, bilinear and bicubic kernels.
//!
//! Sample positions follow the half-pixel-center convention of the common
//! deep-learning frameworks: `src = (dst + 0.5) * in/out - 0.5`, with source
//! indices clamped to `[0, in-1]` so borders replicate the edge value. The
//! bicubic kernel is cubic convolution with `a = -0.75`. 2D upsampling is
//! separable: rows first, then columns, all in f64 with no intermediate
//! rounding.
//!
//! Only upsampling is supported (`out >= in` per axis). Bilinear outputs stay
//! within `[min, max]` of the input; bicubic may overshoot, values are not
//! clamped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nearest,
    Bilinear,
    Bicubic,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Nearest, Method::Bilinear, Method::Bicubic];

    /// Duplication-type methods conserve mean and variance exactly at integer
    /// scales; interpolation-type methods do not.
    pub fn is_interpolation_type(self) -> bool {
        !matches!(self, Method::Nearest)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Nearest => "nearest",
            Method::Bilinear => "bilinear",
            Method::Bicubic => "bicubic",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Method::Nearest),
            "bilinear" => Ok(Method::Bilinear),
            "bicubic" => Ok(Method::Bicubic),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected nearest|bilinear|bicubic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dims {
    OneD,
    TwoD,
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dims::OneD => "1d",
            Dims::TwoD => "2d",
        })
    }
}

impl FromStr for Dims {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1d" | "1D" => Ok(Dims::OneD),
            "2d" | "2D" => Ok(Dims::TwoD),
            other => Err(Error::InvalidArgument(format!(
                "unknown dims `{other}` (expected 1d|2d)"
            ))),
        }
    }
}

/// Interpolation method plus per-axis target size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleSpec {
    pub method: Method,
    target: Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Target {
    OneD(usize),
    TwoD(usize, usize),
}

impl UpsampleSpec {
    pub fn one_d(method: Method, out_len: usize) -> Self {
        Self {
            method,
            target: Target::OneD(out_len),
        }
    }

    pub fn two_d(method: Method, out_h: usize, out_w: usize) -> Self {
        Self {
            method,
            target: Target::TwoD(out_h, out_w),
        }
    }

    pub fn dims(&self) -> Dims {
        match self.target {
            Target::OneD(_) => Dims::OneD,
            Target::TwoD(..) => Dims::TwoD,
        }
    }

    pub fn out_len(&self) -> Option<usize> {
        match self.target {
            Target::OneD(n) => Some(n),
            Target::TwoD(..) => None,
        }
    }

    pub fn out_hw(&self) -> Option<(usize, usize)> {
        match self.target {
            Target::OneD(_) => None,
            Target::TwoD(h, w) => Some((h, w)),
        }
    }
}

/// Half-pixel-center source coordinate for an output index.
#[inline]
fn src_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5
}

#[inline]
fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

// Cubic convolution weight pieces, a = -0.75. `near` covers |d| <= 1, `far`
// covers 1 < |d| < 2; both are exactly 1/0 at d = 0/1/2 so identity-size
// upsampling reproduces the input bitwise.
const A: f64 = -0.75;

#[inline]
fn cubic_near(d: f64) -> f64 {
    ((A + 2.0) * d - (A + 3.0)) * d * d + 1.0
}

#[inline]
fn cubic_far(d: f64) -> f64 {
    ((A * d - 5.0 * A) * d + 8.0 * A) * d - 4.0 * A
}

/// Resamples one line. `input` must be non-empty, `out.len()` is the target
/// length, which must be >= `input.len()` (checked by callers).
fn resample_line(input: &[f64], method: Method, out: &mut [f64]) {
    let n = input.len();
    let m = out.len();
    match method {
        Method::Nearest => {
            for (dst, slot) in out.iter_mut().enumerate() {
                let src = src_coord(dst, n, m);
                *slot = input[clamp_idx((src + 0.5).floor() as isize, n)];
            }
        }
        Method::Bilinear => {
            for (dst, slot) in out.iter_mut().enumerate() {
                let src = src_coord(dst, n, m);
                let base = src.floor();
                let t = src - base;
                let i0 = base as isize;
                let a = input[clamp_idx(i0, n)];
                let b = input[clamp_idx(i0 + 1, n)];
                *slot = (1.0 - t) * a + t * b;
            }
        }
        Method::Bicubic => {
            for (dst, slot) in out.iter_mut().enumerate() {
                let src = src_coord(dst, n, m);
                let base = src.floor();
                let t = src - base;
                let i0 = base as isize;
                let w = [
                    cubic_far(t + 1.0),
                    cubic_near(t),
                    cubic_near(1.0 - t),
                    cubic_far(2.0 - t),
                ];
                let mut acc = 0.0;
                for (j, &wj) in w.iter().enumerate() {
                    acc += wj * input[clamp_idx(i0 + j as isize - 1, n)];
                }
                *slot = acc;
            }
        }
    }
}

/// Upsamples a rank-1 tensor to `spec.out_len()`.
pub fn upsample1d(t: &Tensor, spec: &UpsampleSpec) -> Result<Tensor> {
    if t.rank() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            got: t.rank(),
        });
    }
    let out_len = spec.out_len().ok_or_else(|| {
        Error::InvalidArgument("1d upsample called with a 2d spec".into())
    })?;
    let n = t.len();
    if out_len < n {
        return Err(Error::Downsample {
            input: n,
            out: out_len,
        });
    }
    let mut out = vec![0.0; out_len];
    resample_line(t.data(), spec.method, &mut out);
    Tensor::from_vec(out)
}

/// Upsamples the two leading (spatial) axes of a rank-2 `[H,W]` or rank-3
/// `[H,W,C]` tensor. Channels are processed independently; the two 1D passes
/// run rows first, then columns.
pub fn upsample2d(t: &Tensor, spec: &UpsampleSpec) -> Result<Tensor> {
    let (out_h, out_w) = spec.out_hw().ok_or_else(|| {
        Error::InvalidArgument("2d upsample called with a 1d spec".into())
    })?;
    let (h, w, c) = match t.shape() {
        [h, w] => (*h, *w, 1usize),
        [h, w, c] => (*h, *w, *c),
        _ => {
            return Err(Error::RankMismatch {
                expected: 2,
                got: t.rank(),
            })
        }
    };
    if out_h < h {
        return Err(Error::Downsample {
            input: h,
            out: out_h,
        });
    }
    if out_w < w {
        return Err(Error::Downsample {
            input: w,
            out: out_w,
        });
    }

    // pass 1: widen rows, [h, w, c] -> [h, out_w, c]
    let mut mid = vec![0.0; h * out_w * c];
    let mut line_in = vec![0.0; w];
    let mut line_out = vec![0.0; out_w];
    for row in 0..h {
        for ch in 0..c {
            for x in 0..w {
                line_in[x] = t.data()[(row * w + x) * c + ch];
            }
            resample_line(&line_in, spec.method, &mut line_out);
            for x in 0..out_w {
                mid[(row * out_w + x) * c + ch] = line_out[x];
            }
        }
    }

    // pass 2: stretch columns, [h, out_w, c] -> [out_h, out_w, c]
    let mut out = vec![0.0; out_h * out_w * c];
    let mut col_in = vec![0.0; h];
    let mut col_out = vec![0.0; out_h];
    for x in 0..out_w {
        for ch in 0..c {
            for row in 0..h {
                col_in[row] = mid[(row * out_w + x) * c + ch];
            }
            resample_line(&col_in, spec.method, &mut col_out);
            for row in 0..out_h {
                out[(row * out_w + x) * c + ch] = col_out[row];
            }
        }
    }

    let shape = match t.rank() {
        2 => vec![out_h, out_w],
        _ => vec![out_h, out_w, c],
    };
    Tensor::new(shape, out)
}

/// Dispatches on the spec's dimensionality.
pub fn upsample(t: &Tensor, spec: &UpsampleSpec) -> Result<Tensor> {
    match spec.dims() {
        Dims::OneD => upsample1d(t, spec),
        Dims::TwoD => upsample2d(t, spec),
    }
}

/// True iff `t_out` is multiset-equal to `s` copies of `t_in`, where
/// `s = |t_out| / |t_in|` must be a positive integer. Nearest-neighbor
/// upsampling at integer scale satisfies this by construction.
pub fn duplication_decompose(t_in: &Tensor, t_out: &Tensor) -> Result<bool> {
    if t_in.rank() != 1 || t_out.rank() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            got: t_in.rank().max(t_out.rank()),
        });
    }
    let (n, m) = (t_in.len(), t_out.len());
    if m % n != 0 {
        return Err(Error::NonIntegerRatio { input: n, out: m });
    }
    let s = m / n;
    let mut expect: Vec<f64> = t_in
        .data()
        .iter()
        .flat_map(|&x| std::iter::repeat(x).take(s))
        .collect();
    let mut got = t_out.data().to_vec();
    expect.sort_by(f64::total_cmp);
    got.sort_by(f64::total_cmp);
    Ok(expect == got)
}
