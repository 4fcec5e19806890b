//! Toy ViT early stage: non-overlapping patch projection, positional
//! embedding addition and layer normalization, with analytic gradients.
//!
//! Layer norm here carries no learned affine parameters; the analysis
//! concerns the normalization itself. `eps` sits inside the square root.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{randn, SeededRng, Tensor};

pub const LN_EPS: f64 = 1e-6;

/// Maximum token width for which an explicit Jacobian is formed; use
/// [`ln_jvp`] beyond this.
pub const MAX_EXPLICIT_JACOBIAN_DIM: usize = 64;

/// Strided linear projection of non-overlapping patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchProjection {
    /// `[P, P, C_in, D]`
    pub kernel: Tensor,
    /// `[D]`
    pub bias: Tensor,
    pub patch_size: usize,
}

impl PatchProjection {
    pub fn new(kernel: Tensor, bias: Tensor) -> Result<Self> {
        if kernel.rank() != 4 {
            return Err(Error::RankMismatch {
                expected: 4,
                got: kernel.rank(),
            });
        }
        let [ph, pw, _, d] = kernel.shape() else {
            unreachable!()
        };
        if ph != pw {
            return Err(Error::InvalidShape {
                shape: kernel.shape().to_vec(),
                reason: "patches are square: kernel dims 0 and 1 must match".into(),
            });
        }
        if bias.rank() != 1 || bias.len() != *d {
            return Err(Error::ShapeMismatch {
                left: bias.shape().to_vec(),
                right: vec![*d],
            });
        }
        let patch_size = *ph;
        Ok(Self {
            kernel,
            bias,
            patch_size,
        })
    }

    /// Seeded random projection with N(0, 1/fan_in) weights and zero bias.
    pub fn seeded(patch_size: usize, in_channels: usize, dim: usize, rng: &SeededRng) -> Self {
        let fan_in = (patch_size * patch_size * in_channels) as f64;
        let kernel = randn(vec![patch_size, patch_size, in_channels, dim], rng)
            .expect("valid kernel shape")
            .scale(1.0 / fan_in.sqrt());
        let bias = Tensor::zeros(vec![dim]).expect("valid bias shape");
        Self::new(kernel, bias).expect("construction is consistent")
    }
}

/// The early-stage tensors for one image: patch embedding, positional
/// embedding, their sum and the layer-norm output. The two embeddings always
/// share a shape, and every ln_out token has mean 0 and unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    /// `[H/P, W/P, D]`
    pub patch_embed: Tensor,
    /// same shape as `patch_embed`
    pub pos_embed: Tensor,
    pub sum: Tensor,
    pub ln_out: Tensor,
}

/// Runs the front end: project patches, add the positional embedding,
/// normalize per token.
pub fn embed_forward(
    img: &Tensor,
    proj: &PatchProjection,
    pos_embed: &Tensor,
    eps: f64,
) -> Result<EmbeddingState> {
    let patch_embed = patch_project(img, proj)?;
    if pos_embed.shape() != patch_embed.shape() {
        return Err(Error::ShapeMismatch {
            left: pos_embed.shape().to_vec(),
            right: patch_embed.shape().to_vec(),
        });
    }
    let sum = Tensor::new(
        patch_embed.shape().to_vec(),
        patch_embed
            .data()
            .iter()
            .zip(pos_embed.data())
            .map(|(&x, &p)| x + p)
            .collect(),
    )?;
    let ln_out = layer_norm(&sum, eps)?;
    Ok(EmbeddingState {
        patch_embed,
        pos_embed: pos_embed.clone(),
        sum,
        ln_out,
    })
}

/// `X = W * I` with stride equal to the patch size: flattens each
/// non-overlapping patch and applies the linear map plus bias. Input
/// `[H,W,C]`, output `[H/P, W/P, D]`.
pub fn patch_project(img: &Tensor, proj: &PatchProjection) -> Result<Tensor> {
    let [h, w, c] = img.shape() else {
        return Err(Error::RankMismatch {
            expected: 3,
            got: img.rank(),
        });
    };
    let p = proj.patch_size;
    if h % p != 0 || w % p != 0 {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} not divisible by patch size {p}"
        )));
    }
    let kc = proj.kernel.shape()[2];
    if *c != kc {
        return Err(Error::ShapeMismatch {
            left: img.shape().to_vec(),
            right: vec![*h, *w, kc],
        });
    }
    let d = proj.kernel.shape()[3];
    let (gh, gw) = (h / p, w / p);
    let mut out = vec![0.0; gh * gw * d];
    let kdata = proj.kernel.data();
    let idata = img.data();
    for gy in 0..gh {
        for gx in 0..gw {
            let base = (gy * gw + gx) * d;
            out[base..base + d].copy_from_slice(proj.bias.data());
            for py in 0..p {
                for px in 0..p {
                    let pixel = ((gy * p + py) * w + gx * p + px) * c;
                    for ch in 0..*c {
                        let x = idata[pixel + ch];
                        let krow = ((py * p + px) * c + ch) * d;
                        for dd in 0..d {
                            out[base + dd] += x * kdata[krow + dd];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![gh, gw, d], out)
}

/// Per-token standardization over the last axis:
/// `(x - mean) / sqrt(max(var, eps))`, population variance, no learned
/// affine. `eps` only floors the divisor, so any token with healthy variance
/// comes out with exactly zero mean and unit variance; a constant token maps
/// to the zero vector.
pub fn layer_norm(t: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *t.shape().last().expect("rank >= 1");
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "token width {d} must be >= 2"
        )));
    }
    let mut out = t.data().to_vec();
    for token in out.chunks_mut(d) {
        let mean = token.iter().sum::<f64>() / d as f64;
        let var = token.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / var.max(eps).sqrt();
        for x in token.iter_mut() {
            *x = (*x - mean) * inv;
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Analytic Jacobian of `LN(x + p)` with respect to `p`, as a `[D,D]` tensor
/// (row i = gradient of output i). Both inputs are rank-1 tokens; for wide
/// tokens use [`ln_jvp`] instead.
pub fn ln_grad_wrt_p(x: &Tensor, p: &Tensor, eps: f64) -> Result<Tensor> {
    let parts = ln_forward_parts(x, p, eps)?;
    let d = parts.d;
    if d > MAX_EXPLICIT_JACOBIAN_DIM {
        return Err(Error::InvalidArgument(format!(
            "token width {d} exceeds explicit-Jacobian limit {MAX_EXPLICIT_JACOBIAN_DIM}; use ln_jvp"
        )));
    }
    let inv_d = 1.0 / d as f64;
    // below the eps floor the divisor is constant, so the y y^T term vanishes
    let curvature = if parts.floored { 0.0 } else { inv_d };
    let mut jac = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac[i * d + j] =
                (delta - inv_d - parts.y[i] * parts.y[j] * curvature) * parts.inv_sigma;
        }
    }
    Tensor::new(vec![d, d], jac)
}

/// Jacobian-vector product `J v` of `LN(x + p)` w.r.t. `p`, without forming
/// the Jacobian; valid for any token width.
pub fn ln_jvp(x: &Tensor, p: &Tensor, v: &Tensor, eps: f64) -> Result<Tensor> {
    let parts = ln_forward_parts(x, p, eps)?;
    let d = parts.d;
    if v.rank() != 1 || v.len() != d {
        return Err(Error::ShapeMismatch {
            left: v.shape().to_vec(),
            right: vec![d],
        });
    }
    let inv_d = 1.0 / d as f64;
    let v_mean = v.data().iter().sum::<f64>() * inv_d;
    let yv = if parts.floored {
        0.0
    } else {
        parts
            .y
            .iter()
            .zip(v.data())
            .map(|(&yi, &vi)| yi * vi)
            .sum::<f64>()
            * inv_d
    };
    let out = v
        .data()
        .iter()
        .zip(&parts.y)
        .map(|(&vi, &yi)| (vi - v_mean - yi * yv) * parts.inv_sigma)
        .collect();
    Tensor::from_vec(out)
}

struct LnParts {
    y: Vec<f64>,
    inv_sigma: f64,
    d: usize,
    floored: bool,
}

fn ln_forward_parts(x: &Tensor, p: &Tensor, eps: f64) -> Result<LnParts> {
    if x.rank() != 1 || p.rank() != 1 {
        return Err(Error::RankMismatch {
            expected: 1,
            got: x.rank().max(p.rank()),
        });
    }
    if x.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: p.shape().to_vec(),
        });
    }
    let d = x.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "token width {d} must be >= 2"
        )));
    }
    let s: Vec<f64> = x.data().iter().zip(p.data()).map(|(&a, &b)| a + b).collect();
    let mean = s.iter().sum::<f64>() / d as f64;
    let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let floored = var < eps;
    let inv_sigma = 1.0 / var.max(eps).sqrt();
    let y = s.iter().map(|&v| (v - mean) * inv_sigma).collect();
    Ok(LnParts {
        y,
        inv_sigma,
        d,
        floored,
    })
}

/// `Var[x] / Var[p]`, the quantity that must match between the training and
/// test phases. Errors when `Var[p]` is zero.
pub fn contribution_ratio(x: &Tensor, p: &Tensor) -> Result<f64> {
    if x.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: p.shape().to_vec(),
        });
    }
    let vp = p.stats().variance;
    if vp == 0.0 {
        return Err(Error::InvalidArgument(
            "positional embedding has zero variance".into(),
        ));
    }
    Ok(x.stats().variance / vp)
}

/// Keeps a uniform subset of `ceil(keep_fraction * N)` token rows in their
/// original order; no rescaling of the survivors.
pub fn patch_dropout(x: &Tensor, keep_fraction: f64, rng: &SeededRng) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::RankMismatch {
            expected: 2,
            got: x.rank(),
        });
    }
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "keep fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let m = ((keep_fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut indices: Vec<usize> = (0..n).collect();
    let (kept, _) = indices.partial_shuffle(&mut rng.rng(), m);
    let mut kept = kept.to_vec();
    kept.sort_unstable();
    let mut data = Vec::with_capacity(m * d);
    for &row in &kept {
        data.extend_from_slice(&x.data()[row * d..(row + 1) * d]);
    }
    Tensor::new(vec![m, d], data)
}

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1/(1-rate)`.
pub fn inverted_dropout(t: &Tensor, rate: f64, rng: &SeededRng) -> Result<Tensor> {
    let mask = dropout_mask(t.len(), rate, rng)?;
    let data = t
        .data()
        .iter()
        .zip(&mask)
        .map(|(&x, &m)| x * m)
        .collect();
    Tensor::new(t.shape().to_vec(), data)
}

fn dropout_mask(n: usize, rate: f64, rng: &SeededRng) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate {rate} outside (0, 1)"
        )));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut gen = rng.rng();
    Ok((0..n)
        .map(|_| {
            if gen.random_range(0.0..1.0) < rate {
                0.0
            } else {
                scale
            }
        })
        .collect())
}

/// How the contribution ratio `Var[x']/Var[p']` behaves when inverted
/// dropout hits (a) the patch embedding alone vs (b) the sum of both
/// embeddings, i.e. one shared mask over `x` and `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutComparison {
    pub rate: f64,
    pub baseline_ratio: f64,
    /// Var[x']/Var[p] with dropout on x only.
    pub ratio_x_only: f64,
    /// Var[x']/Var[p'] with one shared mask on both embeddings.
    pub ratio_joint: f64,
    /// ratio_x_only / baseline_ratio; ~ 1/(1-rate) for zero-mean x.
    pub factor_x_only: f64,
    /// ratio_joint / baseline_ratio; ~ 1.
    pub factor_joint: f64,
}

/// Compares the two dropout placements on one (x, p) pair.
pub fn dropout_sum_vs_single(
    x: &Tensor,
    p: &Tensor,
    rate: f64,
    rng: &SeededRng,
) -> Result<DropoutComparison> {
    if x.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: p.shape().to_vec(),
        });
    }
    let baseline_ratio = contribution_ratio(x, p)?;

    let x_only = inverted_dropout(x, rate, &rng.substream(0))?;
    let ratio_x_only = x_only.stats().variance / p.stats().variance;

    // one mask, applied to both; equivalent to dropout on the sum x + p
    let mask = dropout_mask(x.len(), rate, &rng.substream(1))?;
    let apply = |t: &Tensor| -> Tensor {
        let data = t
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| v * m)
            .collect::<Vec<_>>();
        Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
    };
    let (xj, pj) = (apply(x), apply(p));
    let ratio_joint = xj.stats().variance / pj.stats().variance;

    Ok(DropoutComparison {
        rate,
        baseline_ratio,
        ratio_x_only,
        ratio_joint,
        factor_x_only: ratio_x_only / baseline_ratio,
        factor_joint: ratio_joint / baseline_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_constant_token_is_zero() {
        let t = Tensor::constant(vec![2, 8], 3.5).unwrap();
        let out = layer_norm(&t, LN_EPS).unwrap();
        for &v in out.data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_fixed_point() {
        // [1, -1] already has mean 0 and population sigma 1
        let t = Tensor::from_vec(vec![1.0, -1.0]).unwrap();
        let out = layer_norm(&t, 0.0).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12);
        assert!((out.data()[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_standardizes_tokens() {
        let t = randn(vec![10, 32], &SeededRng::new(1)).unwrap();
        let out = layer_norm(&t, LN_EPS).unwrap();
        for token in out.data().chunks(32) {
            let token = Tensor::from_vec(token.to_vec()).unwrap();
            let s = token.stats();
            assert!(s.mean.abs() < 1e-9);
            assert!((s.variance - 1.0).abs() < 1e-9);
        }
        assert!(layer_norm(&Tensor::from_vec(vec![1.0]).unwrap(), LN_EPS).is_err());
    }

    fn fd_jacobian(x: &Tensor, p: &Tensor, eps: f64, step: f64) -> Tensor {
        let d = p.len();
        let ln_of = |p: &Tensor| -> Vec<f64> {
            let s: Vec<f64> = x.data().iter().zip(p.data()).map(|(&a, &b)| a + b).collect();
            layer_norm(&Tensor::from_vec(s).unwrap(), eps)
                .unwrap()
                .into_data()
        };
        let mut jac = vec![0.0; d * d];
        for j in 0..d {
            let mut plus = p.data().to_vec();
            plus[j] += step;
            let mut minus = p.data().to_vec();
            minus[j] -= step;
            let f_plus = ln_of(&Tensor::from_vec(plus).unwrap());
            let f_minus = ln_of(&Tensor::from_vec(minus).unwrap());
            for i in 0..d {
                jac[i * d + j] = (f_plus[i] - f_minus[i]) / (2.0 * step);
            }
        }
        Tensor::new(vec![d, d], jac).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for (seed, d) in [(1u64, 4usize), (2, 8), (3, 16), (4, 33)] {
            let x = randn(vec![d], &SeededRng::with_stream(seed, 0)).unwrap();
            let p = randn(vec![d], &SeededRng::with_stream(seed, 1))
                .unwrap()
                .scale(0.02);
            let analytic = ln_grad_wrt_p(&x, &p, LN_EPS).unwrap();
            let fd = fd_jacobian(&x, &p, LN_EPS, 1e-5);
            let scale = fd.data().iter().fold(0f64, |m, &v| m.max(v.abs()));
            for (&a, &f) in analytic.data().iter().zip(fd.data()) {
                assert!((a - f).abs() / scale < 1e-4, "d={d} a={a} fd={f}");
            }
        }
    }

    #[test]
    fn jacobian_with_zero_x_reduces() {
        let d = 8;
        let p = randn(vec![d], &SeededRng::new(5)).unwrap();
        let zero = Tensor::zeros(vec![d]).unwrap();
        let j1 = ln_grad_wrt_p(&zero, &p, LN_EPS).unwrap();
        let j2 = ln_grad_wrt_p(&p, &zero, LN_EPS).unwrap();
        for (&a, &b) in j1.data().iter().zip(j2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_norm_decays_with_input_scale() {
        let d = 32;
        let x = randn(vec![d], &SeededRng::with_stream(6, 0)).unwrap();
        let p = randn(vec![d], &SeededRng::with_stream(6, 1))
            .unwrap()
            .scale(0.02);
        let fro = |j: &Tensor| j.data().iter().map(|&v| v * v).sum::<f64>().sqrt();
        let base = fro(&ln_grad_wrt_p(&x, &p, LN_EPS).unwrap());
        for c in [2.0, 5.0, 10.0] {
            let scaled = fro(&ln_grad_wrt_p(&x.scale(c), &p, LN_EPS).unwrap());
            let ratio = scaled / base;
            assert!(
                (ratio * c - 1.0).abs() < 0.05,
                "c={c}: ratio {ratio} not ~ 1/{c}"
            );
        }
    }

    #[test]
    fn jvp_matches_explicit_jacobian() {
        let d = 16;
        let x = randn(vec![d], &SeededRng::with_stream(7, 0)).unwrap();
        let p = randn(vec![d], &SeededRng::with_stream(7, 1)).unwrap();
        let v = randn(vec![d], &SeededRng::with_stream(7, 2)).unwrap();
        let j = ln_grad_wrt_p(&x, &p, LN_EPS).unwrap();
        let jv = ln_jvp(&x, &p, &v, LN_EPS).unwrap();
        for i in 0..d {
            let row: f64 = (0..d).map(|k| j.get(&[i, k]) * v.data()[k]).sum();
            assert!((row - jv.data()[i]).abs() < 1e-12);
        }
        // explicit Jacobian refuses overly wide tokens
        let wide_x = randn(vec![128], &SeededRng::new(8)).unwrap();
        let wide_p = randn(vec![128], &SeededRng::new(9)).unwrap();
        assert!(ln_grad_wrt_p(&wide_x, &wide_p, LN_EPS).is_err());
        assert!(ln_jvp(&wide_x, &wide_p, &wide_x, LN_EPS).is_ok());
    }

    #[test]
    fn patch_project_zero_image_gives_bias() {
        let rng = SeededRng::new(10);
        let mut proj = PatchProjection::seeded(2, 3, 5, &rng);
        proj.bias = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let img = Tensor::zeros(vec![4, 4, 3]).unwrap();
        let out = patch_project(&img, &proj).unwrap();
        assert_eq!(out.shape(), &[2, 2, 5]);
        for token in out.data().chunks(5) {
            assert_eq!(token, proj.bias.data());
        }
    }

    #[test]
    fn patch_project_is_linear() {
        let rng = SeededRng::new(11);
        let proj = PatchProjection::seeded(2, 2, 6, &rng);
        let img1 = randn(vec![6, 8, 2], &SeededRng::with_stream(12, 0)).unwrap();
        let img2 = randn(vec![6, 8, 2], &SeededRng::with_stream(12, 1)).unwrap();
        let (a, b) = (0.7, -1.3);
        let combined = Tensor::new(
            vec![6, 8, 2],
            img1.data()
                .iter()
                .zip(img2.data())
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        )
        .unwrap();
        let f = |img: &Tensor| patch_project(img, &proj).unwrap();
        let lhs = f(&combined);
        let (f1, f2) = (f(&img1), f(&img2));
        let bias_rep: Vec<f64> = proj
            .bias
            .data()
            .iter()
            .cycle()
            .take(lhs.len())
            .copied()
            .collect();
        for i in 0..lhs.len() {
            let expect = a * (f1.data()[i] - bias_rep[i]) + b * (f2.data()[i] - bias_rep[i]);
            assert!((lhs.data()[i] - bias_rep[i] - expect).abs() < 1e-9);
        }

        // doubling the image doubles (output - bias) exactly
        let doubled = f(&img1.scale(2.0));
        for i in 0..doubled.len() {
            assert_eq!(
                doubled.data()[i] - bias_rep[i],
                2.0 * (f1.data()[i] - bias_rep[i])
            );
        }
    }

    #[test]
    fn patch_project_identity_kernel_rearranges_pixels() {
        // kernel mapping output channel d to flattened patch position d
        let (p, c) = (2usize, 3usize);
        let d = p * p * c;
        let mut kdata = vec![0.0; p * p * c * d];
        for py in 0..p {
            for px in 0..p {
                for ch in 0..c {
                    let flat = (py * p + px) * c + ch;
                    kdata[flat * d + flat] = 1.0;
                }
            }
        }
        let proj = PatchProjection::new(
            Tensor::new(vec![p, p, c, d], kdata).unwrap(),
            Tensor::zeros(vec![d]).unwrap(),
        )
        .unwrap();
        let img = randn(vec![4, 6, c], &SeededRng::new(13)).unwrap();
        let out = patch_project(&img, &proj).unwrap();
        // brute-force flatten oracle
        for gy in 0..2 {
            for gx in 0..3 {
                for py in 0..p {
                    for px in 0..p {
                        for ch in 0..c {
                            let flat = (py * p + px) * c + ch;
                            assert_eq!(
                                out.get(&[gy, gx, flat]),
                                img.get(&[gy * p + py, gx * p + px, ch])
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn patch_project_rejects_indivisible() {
        let proj = PatchProjection::seeded(3, 1, 2, &SeededRng::new(0));
        let img = randn(vec![7, 9, 1], &SeededRng::new(1)).unwrap();
        assert!(patch_project(&img, &proj).is_err());
    }

    #[test]
    fn embed_forward_invariants() {
        let proj = PatchProjection::seeded(4, 3, 16, &SeededRng::new(30));
        let img = randn(vec![32, 32, 3], &SeededRng::new(31)).unwrap();
        let pe = randn(vec![8, 8, 16], &SeededRng::new(32)).unwrap().scale(0.02);
        let state = embed_forward(&img, &proj, &pe, LN_EPS).unwrap();
        assert_eq!(state.patch_embed.shape(), state.pos_embed.shape());
        assert_eq!(state.sum.shape(), state.patch_embed.shape());
        for token in state.ln_out.data().chunks(16) {
            let s = Tensor::from_vec(token.to_vec()).unwrap().stats();
            assert!(s.mean.abs() < 1e-9);
            assert!((s.variance - 1.0).abs() < 1e-9);
        }
        let wrong_pe = randn(vec![4, 4, 16], &SeededRng::new(33)).unwrap();
        assert!(embed_forward(&img, &proj, &wrong_pe, LN_EPS).is_err());
    }

    #[test]
    fn contribution_ratio_scales_quadratically() {
        let x = randn(vec![4096], &SeededRng::with_stream(14, 0)).unwrap();
        let p = randn(vec![4096], &SeededRng::with_stream(14, 1)).unwrap();
        let r = contribution_ratio(&x, &p).unwrap();
        let r2 = contribution_ratio(&x.scale(2.0), &p).unwrap();
        assert!((r2 / r - 4.0).abs() < 1e-9);
        assert!((contribution_ratio(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let zeros = Tensor::zeros(vec![4096]).unwrap();
        assert!(contribution_ratio(&x, &zeros).is_err());
    }

    #[test]
    fn patch_dropout_keep_all_is_identity() {
        let x = randn(vec![40, 8], &SeededRng::new(15)).unwrap();
        let out = patch_dropout(&x, 1.0, &SeededRng::new(16)).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn patch_dropout_deterministic_and_conserving() {
        let x = randn(vec![10_000, 4], &SeededRng::new(17)).unwrap();
        let a = patch_dropout(&x, 0.5, &SeededRng::new(18)).unwrap();
        let b = patch_dropout(&x, 0.5, &SeededRng::new(18)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape()[0], 5000);

        let mut acc = 0.0;
        let trials = 100;
        for s in 0..trials {
            let kept = patch_dropout(&x, 0.5, &SeededRng::new(100 + s)).unwrap();
            acc += kept.stats().variance / x.stats().variance;
        }
        assert!((acc / trials as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn dropout_rate_bounds() {
        let x = randn(vec![16], &SeededRng::new(19)).unwrap();
        assert!(inverted_dropout(&x, 0.0, &SeededRng::new(0)).is_err());
        assert!(inverted_dropout(&x, 1.0, &SeededRng::new(0)).is_err());
    }

    #[test]
    fn dropout_joint_on_identical_embeddings_is_exactly_one() {
        let x = randn(vec![2048], &SeededRng::new(20)).unwrap();
        let cmp = dropout_sum_vs_single(&x, &x, 0.5, &SeededRng::new(21)).unwrap();
        assert_eq!(cmp.ratio_joint, 1.0);
    }

    #[test]
    fn dropout_placement_comparison() {
        // equal-variance zero-mean embeddings, rate 0.5: x-only doubles the
        // ratio, joint preserves it
        let mut fx = 0.0;
        let mut fj = 0.0;
        let trials = 200;
        for s in 0..trials {
            let x = randn(vec![10_000], &SeededRng::with_stream(7000 + s, 0)).unwrap();
            let p = randn(vec![10_000], &SeededRng::with_stream(7000 + s, 1)).unwrap();
            let cmp = dropout_sum_vs_single(&x, &p, 0.5, &SeededRng::new(9000 + s)).unwrap();
            fx += cmp.factor_x_only;
            fj += cmp.factor_joint;
        }
        let (fx, fj) = (fx / trials as f64, fj / trials as f64);
        assert!((fx - 2.0).abs() < 0.1, "x-only factor {fx}");
        assert!((fj - 1.0).abs() < 0.05, "joint factor {fj}");
    }
}
