//! The analyzed train-time augmentations, each as a deterministic, seeded
//! transformation with a known effect on mean and variance: mixup (and its
//! extended two-ratio form), cutmix, random erasing in its three modes,
//! random-resize-crop and mean-std normalization.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{upsample1d, upsample2d, Dims, Method, UpsampleSpec};
use crate::tensor::{crop, SeededRng, Tensor};

/// Per-channel normalization statistics (3 channels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub name: NormStatsName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormStatsName {
    DefaultImagenet,
    Inception,
    Identity,
    Custom,
}

impl NormStats {
    /// ImageNet per-channel statistics, the "default-mean-std".
    pub fn default_imagenet() -> Self {
        Self {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            name: NormStatsName::DefaultImagenet,
        }
    }

    /// (0.5, 0.5, 0.5) / (0.5, 0.5, 0.5), the "inception-mean-std".
    pub fn inception() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
            name: NormStatsName::Inception,
        }
    }

    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
            name: NormStatsName::Identity,
        }
    }

    pub fn custom(mean: [f64; 3], std: [f64; 3]) -> Result<Self> {
        if std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "std components must be > 0, got {std:?}"
            )));
        }
        Ok(Self {
            mean,
            std,
            name: NormStatsName::Custom,
        })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default_imagenet" => Ok(Self::default_imagenet()),
            "inception" => Ok(Self::inception()),
            "identity" => Ok(Self::identity()),
            other => Err(Error::InvalidArgument(format!(
                "unknown norm stats `{other}` (expected default_imagenet|inception|identity)"
            ))),
        }
    }

    /// True when normalizing data that actually has these per-channel
    /// statistics yields zero mean and unit variance.
    pub fn unit_producing(&self) -> bool {
        matches!(
            self.name,
            NormStatsName::DefaultImagenet | NormStatsName::Identity
        )
    }
}

impl fmt::Display for NormStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name {
            NormStatsName::DefaultImagenet => f.write_str("default_imagenet"),
            NormStatsName::Inception => f.write_str("inception"),
            NormStatsName::Identity => f.write_str("identity"),
            NormStatsName::Custom => write!(f, "custom({:?}/{:?})", self.mean, self.std),
        }
    }
}

/// Fill behavior of the erased block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EraseMode {
    /// Zeros.
    Const,
    /// One shared standard-normal scalar for the whole block.
    Rand,
    /// Independent standard-normal draw per element.
    Pixel,
}

impl fmt::Display for EraseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EraseMode::Const => "const",
            EraseMode::Rand => "rand",
            EraseMode::Pixel => "pixel",
        })
    }
}

pub const DEFAULT_ERASE_AREA_RANGE: (f64, f64) = (0.02, 1.0 / 3.0);
pub const DEFAULT_ERASE_ASPECT_RANGE: (f64, f64) = (0.3, 10.0 / 3.0);

/// Elementwise `lambda * a + (1 - lambda) * b`. `lambda` must lie strictly
/// inside (0, 1); the endpoints degenerate to a plain sample.
pub fn mixup(a: &Tensor, b: &Tensor, lambda: f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mixup ratio {lambda} outside (0, 1)"
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Two-ratio blend `lambda_i * a + lambda_j * b`. Unconstrained ratios; with
/// `lambda_j = 1 - lambda_i` this reduces to `mixup` exactly.
pub fn extended_mixup(a: &Tensor, b: &Tensor, lambda_i: f64, lambda_j: f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| lambda_i * x + lambda_j * y)
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// `mask (*) a + (1 - mask) (*) b`. The mask must be exactly {0,1}-valued and
/// either match the inputs' shape or, for rank-3 `[H,W,C]` inputs, be a
/// rank-2 `[H,W]` mask broadcast over the channel axis.
pub fn cutmix(a: &Tensor, b: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    for (i, &m) in mask.data().iter().enumerate() {
        if m != 0.0 && m != 1.0 {
            return Err(Error::NonBinaryMask { index: i, value: m });
        }
    }
    let channels = if mask.shape() == a.shape() {
        1
    } else if a.rank() == 3 && mask.shape() == &a.shape()[..2] {
        a.shape()[2]
    } else {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: mask.shape().to_vec(),
        });
    };
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .enumerate()
        .map(|(i, (&x, &y))| {
            let m = mask.data()[i / channels];
            m * x + (1.0 - m) * y
        })
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Axis-aligned rectangle of zeros with nominal area fraction `1 - lambda`,
/// uniformly centered and clipped at the borders; ones elsewhere.
pub fn sample_cutmix_mask(shape: (usize, usize), lambda: f64, rng: &SeededRng) -> Result<Tensor> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cutmix lambda {lambda} outside (0, 1)"
        )));
    }
    let (h, w) = shape;
    let cut = (1.0 - lambda).sqrt();
    let cut_h = (h as f64 * cut).round() as usize;
    let cut_w = (w as f64 * cut).round() as usize;
    let mut gen = rng.rng();
    let cy = gen.random_range(0..h);
    let cx = gen.random_range(0..w);
    let y0 = cy.saturating_sub(cut_h / 2);
    let y1 = (cy + cut_h.div_ceil(2)).min(h);
    let x0 = cx.saturating_sub(cut_w / 2);
    let x1 = (cx + cut_w.div_ceil(2)).min(w);
    let mut data = vec![1.0; h * w];
    for y in y0..y1 {
        for x in x0..x1 {
            data[y * w + x] = 0.0;
        }
    }
    Tensor::new(vec![h, w], data)
}

/// What a `random_erase` call actually did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EraseOutcome {
    pub applied: bool,
    /// (top, left, height, width) of the erased block, when applied.
    pub rect: Option<(usize, usize, usize, usize)>,
    /// Erased fraction of the spatial area (0 when skipped).
    pub fraction: f64,
}

/// With probability `prob`, replaces one uniformly placed rectangle of the
/// image. Area fraction is uniform in `area_range`, aspect ratio log-uniform
/// in `aspect_range`; placement is retried up to 10 times, then skipped.
/// Input is `[H,W]` or `[H,W,C]`.
pub fn random_erase(
    t: &Tensor,
    mode: EraseMode,
    prob: f64,
    area_range: (f64, f64),
    aspect_range: (f64, f64),
    rng: &SeededRng,
) -> Result<(Tensor, EraseOutcome)> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::InvalidArgument(format!(
            "erase probability {prob} outside [0, 1]"
        )));
    }
    if !(area_range.0 > 0.0 && area_range.1 < 1.0 && area_range.0 <= area_range.1) {
        return Err(Error::InvalidArgument(format!(
            "erase area range {area_range:?} must be a non-empty subset of (0, 1)"
        )));
    }
    if !(aspect_range.0 > 0.0 && aspect_range.0 <= aspect_range.1) {
        return Err(Error::InvalidArgument(format!(
            "erase aspect range {aspect_range:?} must be positive and non-empty"
        )));
    }
    let (h, w, c) = match t.shape() {
        [h, w] => (*h, *w, 1usize),
        [h, w, c] => (*h, *w, *c),
        _ => {
            return Err(Error::RankMismatch {
                expected: 3,
                got: t.rank(),
            })
        }
    };

    let skipped = EraseOutcome {
        applied: false,
        rect: None,
        fraction: 0.0,
    };
    let mut gen = rng.rng();
    if prob == 0.0 || gen.random_range(0.0..1.0) >= prob {
        return Ok((t.clone(), skipped));
    }

    let area = (h * w) as f64;
    let mut chosen = None;
    for _ in 0..10 {
        let target = gen.random_range(area_range.0..=area_range.1) * area;
        let log_aspect = gen.random_range(aspect_range.0.ln()..=aspect_range.1.ln());
        let aspect = log_aspect.exp();
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh >= 1 && ew >= 1 && eh < h && ew < w {
            let top = gen.random_range(0..=h - eh);
            let left = gen.random_range(0..=w - ew);
            chosen = Some((top, left, eh, ew));
            break;
        }
    }
    let Some((top, left, eh, ew)) = chosen else {
        return Ok((t.clone(), skipped));
    };

    let mut data = t.data().to_vec();
    let shared = match mode {
        EraseMode::Rand => gen.sample(rand_distr::StandardNormal),
        _ => 0.0,
    };
    for y in top..top + eh {
        for x in left..left + ew {
            for ch in 0..c {
                let value = match mode {
                    EraseMode::Const => 0.0,
                    EraseMode::Rand => shared,
                    EraseMode::Pixel => gen.sample(rand_distr::StandardNormal),
                };
                data[(y * w + x) * c + ch] = value;
            }
        }
    }
    let out = Tensor::new(t.shape().to_vec(), data)?;
    Ok((
        out,
        EraseOutcome {
            applied: true,
            rect: Some((top, left, eh, ew)),
            fraction: (eh * ew) as f64 / area,
        },
    ))
}

/// Per-channel `(x - mean) / std` on a `[H,W,C]` tensor with C = 3.
pub fn normalize(t: &Tensor, stats: &NormStats) -> Result<Tensor> {
    let [_, _, c] = t.shape() else {
        return Err(Error::RankMismatch {
            expected: 3,
            got: t.rank(),
        });
    };
    if *c != 3 {
        return Err(Error::ShapeMismatch {
            left: t.shape().to_vec(),
            right: vec![t.shape()[0], t.shape()[1], 3],
        });
    }
    let data = t
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let ch = i % 3;
            (x - stats.mean[ch]) / stats.std[ch]
        })
        .collect();
    Tensor::new(t.shape().to_vec(), data)
}

/// Upsamples by a scale drawn uniformly from `scale_range` (>= 1), then crops
/// a uniformly positioned `out_size` window. Input is `[H,W]` or `[H,W,C]`.
pub fn random_resize_crop(
    t: &Tensor,
    scale_range: (f64, f64),
    out_size: (usize, usize),
    method: Method,
    rng: &SeededRng,
) -> Result<Tensor> {
    let (h, w) = match t.shape() {
        [h, w] | [h, w, _] => (*h, *w),
        _ => {
            return Err(Error::RankMismatch {
                expected: 3,
                got: t.rank(),
            })
        }
    };
    let (lo, hi) = scale_range;
    if !(lo >= 1.0 && hi >= lo) {
        return Err(Error::InvalidArgument(format!(
            "scale range {scale_range:?} must satisfy 1 <= lo <= hi"
        )));
    }
    let min_h = (h as f64 * lo).round() as usize;
    let min_w = (w as f64 * lo).round() as usize;
    if min_h < out_size.0 || min_w < out_size.1 {
        return Err(Error::InvalidArgument(format!(
            "infeasible geometry: minimum resize {min_h}x{min_w} smaller than crop {}x{}",
            out_size.0, out_size.1
        )));
    }
    let mut gen = rng.rng();
    let scale = if hi > lo { gen.random_range(lo..hi) } else { lo };
    let rh = (h as f64 * scale).round() as usize;
    let rw = (w as f64 * scale).round() as usize;
    let resized = upsample2d(t, &UpsampleSpec::two_d(method, rh, rw))?;
    let oy = gen.random_range(0..=rh - out_size.0);
    let ox = gen.random_range(0..=rw - out_size.1);
    match t.rank() {
        2 => crop(&resized, &[oy, ox], &[out_size.0, out_size.1]),
        _ => crop(
            &resized,
            &[oy, ox, 0],
            &[out_size.0, out_size.1, t.shape()[2]],
        ),
    }
}

/// Draws a mixup ratio from Beta(alpha, alpha), clamped into the open unit
/// interval so the result is always a valid ratio.
pub fn draw_mixup_lambda(alpha: f64, rng: &SeededRng) -> Result<f64> {
    let beta = rand_distr::Beta::new(alpha, alpha)
        .map_err(|e| Error::InvalidArgument(format!("beta({alpha}, {alpha}): {e}")))?;
    let raw: f64 = rng.rng().sample(beta);
    Ok(raw.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

/// Mixup ratio configuration: pinned, or drawn per sample from Beta(a, a).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixupRatio {
    Fixed(f64),
    BetaAlpha(f64),
}

/// One declarative augmentation step, the vocabulary shared by pipeline
/// configs and the `augment` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AugmentOp {
    Resize {
        method: Method,
        dims: Dims,
        scale: f64,
    },
    Crop {
        fraction: f64,
    },
    ResizeCrop {
        method: Method,
        dims: Dims,
        scale: f64,
    },
    Mixup {
        ratio: MixupRatio,
    },
    ExtendedMixup {
        lambda_i: f64,
        lambda_j: f64,
    },
    Cutmix {
        lambda: f64,
    },
    RandomErase {
        mode: EraseMode,
        probability: f64,
        area_range: (f64, f64),
        aspect_range: (f64, f64),
    },
    Normalize {
        stats: NormStats,
    },
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentOp::Resize { scale, .. } | AugmentOp::ResizeCrop { scale, .. } => {
                if scale < 1.0 {
                    return Err(Error::InvalidArgument(format!(
                        "resize scale {scale} must be >= 1 (upsampling only)"
                    )));
                }
            }
            AugmentOp::Crop { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "crop fraction {fraction} outside (0, 1]"
                    )));
                }
            }
            AugmentOp::Mixup { ratio } => match ratio {
                MixupRatio::Fixed(l) => {
                    if !(l > 0.0 && l < 1.0) {
                        return Err(Error::InvalidArgument(format!(
                            "mixup lambda {l} outside (0, 1)"
                        )));
                    }
                }
                MixupRatio::BetaAlpha(a) => {
                    if a <= 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "mixup alpha {a} must be > 0"
                        )));
                    }
                }
            },
            AugmentOp::Cutmix { lambda } => {
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "cutmix lambda {lambda} outside (0, 1)"
                    )));
                }
            }
            AugmentOp::RandomErase {
                probability,
                area_range,
                aspect_range,
                ..
            } => {
                if !(0.0..=1.0).contains(&probability) {
                    return Err(Error::InvalidArgument(format!(
                        "erase probability {probability} outside [0, 1]"
                    )));
                }
                if !(area_range.0 > 0.0 && area_range.1 < 1.0 && area_range.0 <= area_range.1) {
                    return Err(Error::InvalidArgument(format!(
                        "erase area range {area_range:?} must be a non-empty subset of (0, 1)"
                    )));
                }
                if !(aspect_range.0 > 0.0 && aspect_range.0 <= aspect_range.1) {
                    return Err(Error::InvalidArgument(format!(
                        "erase aspect range {aspect_range:?} must be positive and non-empty"
                    )));
                }
            }
            AugmentOp::ExtendedMixup { .. } | AugmentOp::Normalize { .. } => {}
        }
        Ok(())
    }

    /// Short human-readable tag for reports and findings.
    pub fn describe(&self) -> String {
        match self {
            AugmentOp::Resize {
                method,
                dims,
                scale,
            } => {
                format!("resize({method}, {dims}, x{scale})")
            }
            AugmentOp::Crop { fraction } => format!("crop({fraction})"),
            AugmentOp::ResizeCrop {
                method,
                dims,
                scale,
            } => {
                format!("resize_crop({method}, {dims}, x{scale})")
            }
            AugmentOp::Mixup { ratio } => match ratio {
                MixupRatio::Fixed(l) => format!("mixup(lambda={l})"),
                MixupRatio::BetaAlpha(a) => format!("mixup(alpha={a})"),
            },
            AugmentOp::ExtendedMixup { lambda_i, lambda_j } => {
                format!("extended_mixup({lambda_i}, {lambda_j})")
            }
            AugmentOp::Cutmix { lambda } => format!("cutmix(lambda={lambda})"),
            AugmentOp::RandomErase {
                mode, probability, ..
            } => {
                format!("random_erase({mode}, p={probability})")
            }
            AugmentOp::Normalize { stats } => format!("normalize({stats})"),
        }
    }

    /// True for ops that blend a second sample.
    pub fn needs_partner(&self) -> bool {
        matches!(
            self,
            AugmentOp::Mixup { .. } | AugmentOp::ExtendedMixup { .. } | AugmentOp::Cutmix { .. }
        )
    }
}

/// Applies one op. `partner` supplies the second sample for mixing ops and is
/// only invoked when needed; `rng` drives every stochastic choice.
pub fn apply_op(
    op: &AugmentOp,
    input: &Tensor,
    partner: impl FnOnce() -> Result<Tensor>,
    rng: &SeededRng,
) -> Result<Tensor> {
    op.validate()?;
    match op {
        AugmentOp::Resize {
            method,
            dims,
            scale,
        } => resize_tensor(input, *method, *dims, *scale),
        AugmentOp::Crop { fraction } => match input.rank() {
            1 => {
                let n = input.len();
                let cn = ((n as f64 * fraction).round() as usize).clamp(1, n);
                let o = rng.rng().random_range(0..=n - cn);
                crop(input, &[o], &[cn])
            }
            _ => {
                let (h, w) = spatial_dims(input)?;
                let ch = ((h as f64 * fraction).round() as usize).clamp(1, h);
                let cw = ((w as f64 * fraction).round() as usize).clamp(1, w);
                let mut gen = rng.rng();
                let oy = gen.random_range(0..=h - ch);
                let ox = gen.random_range(0..=w - cw);
                match input.rank() {
                    2 => crop(input, &[oy, ox], &[ch, cw]),
                    _ => crop(input, &[oy, ox, 0], &[ch, cw, input.shape()[2]]),
                }
            }
        },
        AugmentOp::ResizeCrop {
            method,
            dims,
            scale,
        } => {
            let resized = resize_tensor(input, *method, *dims, *scale)?;
            let mut gen = rng.rng();
            match input.rank() {
                1 => {
                    let n = input.len();
                    let o = gen.random_range(0..=resized.len() - n);
                    crop(&resized, &[o], &[n])
                }
                _ => {
                    let (h, w) = spatial_dims(input)?;
                    let (rh, rw) = spatial_dims(&resized)?;
                    let oy = gen.random_range(0..=rh - h);
                    let ox = gen.random_range(0..=rw - w);
                    match input.rank() {
                        2 => crop(&resized, &[oy, ox], &[h, w]),
                        _ => crop(&resized, &[oy, ox, 0], &[h, w, input.shape()[2]]),
                    }
                }
            }
        }
        AugmentOp::Mixup { ratio } => {
            let lambda = match ratio {
                MixupRatio::Fixed(l) => *l,
                MixupRatio::BetaAlpha(a) => draw_mixup_lambda(*a, &rng.substream(1))?,
            };
            mixup(input, &partner()?, lambda)
        }
        AugmentOp::ExtendedMixup { lambda_i, lambda_j } => {
            extended_mixup(input, &partner()?, *lambda_i, *lambda_j)
        }
        AugmentOp::Cutmix { lambda } => {
            let (h, w) = spatial_dims(input)?;
            let mask = sample_cutmix_mask((h, w), *lambda, rng)?;
            cutmix(input, &partner()?, &mask)
        }
        AugmentOp::RandomErase {
            mode,
            probability,
            area_range,
            aspect_range,
        } => random_erase(input, *mode, *probability, *area_range, *aspect_range, rng)
            .map(|(t, _)| t),
        AugmentOp::Normalize { stats } => normalize(input, stats),
    }
}

fn spatial_dims(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [h, w] | [h, w, _] => Ok((*h, *w)),
        _ => Err(Error::RankMismatch {
            expected: 2,
            got: t.rank(),
        }),
    }
}

fn resize_tensor(t: &Tensor, method: Method, dims: Dims, scale: f64) -> Result<Tensor> {
    match (dims, t.rank()) {
        (Dims::OneD, 1) => {
            let out = (t.len() as f64 * scale).round() as usize;
            upsample1d(t, &UpsampleSpec::one_d(method, out))
        }
        (Dims::OneD, _) => {
            // 1D resize of an image: one spatial axis grows, the other stays
            let (h, w) = spatial_dims(t)?;
            let out_w = (w as f64 * scale).round() as usize;
            upsample2d(t, &UpsampleSpec::two_d(method, h, out_w))
        }
        (Dims::TwoD, 1) => Err(Error::RankMismatch { expected: 2, got: 1 }),
        (Dims::TwoD, _) => {
            let (h, w) = spatial_dims(t)?;
            let out_h = (h as f64 * scale).round() as usize;
            let out_w = (w as f64 * scale).round() as usize;
            upsample2d(t, &UpsampleSpec::two_d(method, out_h, out_w))
        }
    }
}
