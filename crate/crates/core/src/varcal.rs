//! Monte-Carlo estimation of the variance ratio `k = Var[UP(v)] / Var[v]`
//! and the mean ratio `K = E[UP(v)] / E[v]` per upsampling method, plus the
//! `1/sqrt(k)` positional-embedding rescaling calibrator.
//!
//! The canonical measurement protocol is scale x2, 1D length 4096 / 2D 64x64,
//! 1000 trials, master seed 0. Trials are embarrassingly parallel with
//! per-trial RNG streams; aggregation runs over the trial-ordered buffer with
//! pairwise summation, so results are bit-identical regardless of thread
//! count or schedule.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{upsample, upsample2d, Dims, Method, UpsampleSpec};
use crate::tensor::{pairwise_sum, randn, SeededRng, Stats, Tensor};

pub const CANONICAL_SCALE: f64 = 2.0;
pub const CANONICAL_LEN_1D: usize = 4096;
pub const CANONICAL_SIDE_2D: usize = 64;
pub const CANONICAL_TRIALS: usize = 1000;

/// Result of one ratio measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub method: Method,
    pub dims: Dims,
    /// Variance ratio Var[UP(v)] / Var[v], averaged over trials.
    pub k: f64,
    /// Mean ratio E[UP(v)] / E[v] on mean-1 inputs, averaged over trials.
    pub mean_ratio: f64,
    /// 1 / sqrt(k), the rescaling factor that undoes the variance shift.
    pub rescale: f64,
    pub trials: usize,
    pub scale_factor: f64,
    /// Standard error of the k estimate.
    pub std_error: f64,
}

/// Measures k and K for `method`/`dims` at `scale_factor` (> 1). `n` is the
/// per-axis input size: a length-n vector in 1D, an n x n field in 2D.
/// Each trial draws v ~ N(0,1) for k and v ~ N(1,1) for K.
pub fn measure_k(
    method: Method,
    dims: Dims,
    scale_factor: f64,
    n: usize,
    trials: usize,
    rng: &SeededRng,
) -> Result<RatioEstimate> {
    if !(scale_factor > 1.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor {scale_factor} must be > 1"
        )));
    }
    let total = match dims {
        Dims::OneD => n,
        Dims::TwoD => n * n,
    };
    if total < 1024 {
        return Err(Error::InvalidArgument(format!(
            "input size {total} below minimum 1024"
        )));
    }
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "trial count {trials} below minimum 100"
        )));
    }
    let out = (n as f64 * scale_factor).round() as usize;
    let spec = match dims {
        Dims::OneD => UpsampleSpec::one_d(method, out),
        Dims::TwoD => UpsampleSpec::two_d(method, out, out),
    };
    let shape = match dims {
        Dims::OneD => vec![n],
        Dims::TwoD => vec![n, n],
    };

    let per_trial: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let key = rng.substream(trial);
            let v = randn(shape.clone(), &key).expect("valid shape");
            let up = upsample(&v, &spec).expect("upsample within preconditions");
            let k_trial = up.stats().variance / v.stats().variance;

            let shifted = v.add_scalar(1.0);
            let up_shifted = upsample(&shifted, &spec).expect("upsample within preconditions");
            let mean_trial = up_shifted.stats().mean / shifted.stats().mean;
            (k_trial, mean_trial)
        })
        .collect();

    let ks: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let means: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
    let k = pairwise_sum(&ks) / trials as f64;
    let mean_ratio = pairwise_sum(&means) / trials as f64;
    let var_k = ks.iter().map(|&x| (x - k) * (x - k)).sum::<f64>() / (trials - 1) as f64;
    Ok(RatioEstimate {
        method,
        dims,
        k,
        mean_ratio,
        rescale: 1.0 / k.sqrt(),
        trials,
        scale_factor,
        std_error: (var_k / trials as f64).sqrt(),
    })
}

/// Measures `E[Var(UP(v)) / Var(v)]` for a concrete grid geometry: synthetic
/// `[H,W,depth]` noise shaped like the embedding grid, upsampled by `spec`.
/// Small grids have proportionally more border replication than the
/// canonical 64x64 field, so their effective k differs; this estimate
/// matches the geometry actually being rescaled.
pub fn measure_k_for_geometry(
    grid: (usize, usize),
    depth: usize,
    spec: &UpsampleSpec,
    trials: usize,
    rng: &SeededRng,
) -> Result<RatioEstimate> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "trial count {trials} below minimum 100"
        )));
    }
    let (out_h, out_w) = spec
        .out_hw()
        .ok_or_else(|| Error::InvalidArgument("geometry measurement needs a 2D spec".into()))?;
    let (h, w) = grid;
    let per_trial: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let key = rng.substream(trial);
            let v = randn(vec![h, w, depth], &key).expect("valid shape");
            let up = upsample2d(&v, spec).expect("upsample within preconditions");
            let k_trial = up.stats().variance / v.stats().variance;
            let shifted = v.add_scalar(1.0);
            let up_shifted = upsample2d(&shifted, spec).expect("upsample within preconditions");
            (k_trial, up_shifted.stats().mean / shifted.stats().mean)
        })
        .collect();
    let ks: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let means: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
    let k = pairwise_sum(&ks) / trials as f64;
    let mean_ratio = pairwise_sum(&means) / trials as f64;
    let var_k = ks.iter().map(|&x| (x - k) * (x - k)).sum::<f64>() / (trials - 1) as f64;
    Ok(RatioEstimate {
        method: spec.method,
        dims: Dims::TwoD,
        k,
        mean_ratio,
        rescale: 1.0 / k.sqrt(),
        trials,
        scale_factor: (out_h as f64 / h as f64).max(out_w as f64 / w as f64),
        std_error: (var_k / trials as f64).sqrt(),
    })
}

/// Canonical-protocol measurement for one method/dims pair.
pub fn measure_k_canonical(method: Method, dims: Dims, seed: u64) -> RatioEstimate {
    let n = match dims {
        Dims::OneD => CANONICAL_LEN_1D,
        Dims::TwoD => CANONICAL_SIDE_2D,
    };
    measure_k(
        method,
        dims,
        CANONICAL_SCALE,
        n,
        CANONICAL_TRIALS,
        &SeededRng::new(seed),
    )
    .expect("canonical protocol satisfies preconditions")
}

/// Separability verdict for one method: does k_2D match k_1D^2?
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub method: Method,
    pub k_1d: f64,
    pub k_2d: f64,
    /// |k_2D - k_1D^2|
    pub gap: f64,
    pub pass: bool,
}

pub const SEPARABILITY_TOLERANCE: f64 = 0.02;

/// Checks `k_2D == k_1D^2` for every method present at both dimensionalities.
/// A method missing one of the two is an error.
pub fn check_separability(estimates: &[RatioEstimate]) -> Result<Vec<SeparabilityReport>> {
    let mut by_method: BTreeMap<Method, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for e in estimates {
        let entry = by_method.entry(e.method).or_default();
        match e.dims {
            Dims::OneD => entry.0 = Some(e.k),
            Dims::TwoD => entry.1 = Some(e.k),
        }
    }
    let mut reports = Vec::new();
    for (method, (k1, k2)) in by_method {
        let (Some(k_1d), Some(k_2d)) = (k1, k2) else {
            return Err(Error::InvalidArgument(format!(
                "separability check needs both 1D and 2D estimates for {method}"
            )));
        };
        let gap = (k_2d - k_1d * k_1d).abs();
        reports.push(SeparabilityReport {
            method,
            k_1d,
            k_2d,
            gap,
            pass: gap <= SEPARABILITY_TOLERANCE,
        });
    }
    Ok(reports)
}

/// Measured k values per (method, dims), the lookup the auditor consumes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KTable {
    entries: BTreeMap<(Method, Dims), f64>,
}

impl KTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, method: Method, dims: Dims, k: f64) {
        self.entries.insert((method, dims), k);
    }

    pub fn get(&self, method: Method, dims: Dims) -> Option<f64> {
        self.entries.get(&(method, dims)).copied()
    }

    /// Measures every (method, dims) combination at the canonical protocol.
    pub fn measure_canonical(seed: u64) -> Self {
        let mut table = Self::new();
        for method in Method::ALL {
            for dims in [Dims::OneD, Dims::TwoD] {
                table.insert(method, dims, measure_k_canonical(method, dims, seed).k);
            }
        }
        table
    }

    /// Measures only the requested combinations (canonical protocol).
    pub fn measure_for(pairs: &[(Method, Dims)], seed: u64) -> Self {
        let mut table = Self::new();
        for &(method, dims) in pairs {
            if table.get(method, dims).is_none() {
                table.insert(method, dims, measure_k_canonical(method, dims, seed).k);
            }
        }
        table
    }
}

/// Upsamples the spatial grid of a `[H,W,D]` positional embedding per `spec`
/// (2D) and multiplies every element by `1/sqrt(k)`, so the output variance
/// matches the input's.
pub fn rescale_pe(pe: &Tensor, spec: &UpsampleSpec, k: f64) -> Result<Tensor> {
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variance ratio k = {k} must be > 0"
        )));
    }
    if pe.rank() != 3 {
        return Err(Error::RankMismatch {
            expected: 3,
            got: pe.rank(),
        });
    }
    if spec.dims() != Dims::TwoD {
        return Err(Error::InvalidArgument(
            "positional-embedding rescaling needs a 2D spec".into(),
        ));
    }
    let up = upsample2d(pe, spec)?;
    let factor = 1.0 / k.sqrt();
    Ok(up.scale(factor))
}

/// Splits a flat `[N,D]` token embedding into `leading` non-spatial rows and
/// an `[H,W,D]` grid (row-major), with `N == leading + H*W` and
/// `leading` in {0,1}. The leading rows are returned separately because they
/// must not be spatially interpolated.
pub fn split_cls_token(
    pe: &Tensor,
    grid: (usize, usize),
    leading: usize,
) -> Result<(Option<Tensor>, Tensor)> {
    if pe.rank() != 2 {
        return Err(Error::RankMismatch {
            expected: 2,
            got: pe.rank(),
        });
    }
    if leading > 1 {
        return Err(Error::InvalidArgument(format!(
            "leading token count {leading} outside {{0, 1}}"
        )));
    }
    let (n, d) = (pe.shape()[0], pe.shape()[1]);
    let (h, w) = grid;
    if n != leading + h * w {
        return Err(Error::TokenCountMismatch {
            tokens: n,
            leading,
            grid_h: h,
            grid_w: w,
        });
    }
    let cls = if leading == 1 {
        Some(Tensor::new(vec![1, d], pe.data()[..d].to_vec())?)
    } else {
        None
    };
    let grid_pe = Tensor::new(vec![h, w, d], pe.data()[leading * d..].to_vec())?;
    Ok((cls, grid_pe))
}

/// Inverse of [`split_cls_token`]: flattens `[H,W,D]` back to `[H*W, D]` and
/// prepends the leading rows if present.
pub fn merge_cls_token(cls: Option<&Tensor>, grid_pe: &Tensor) -> Result<Tensor> {
    if grid_pe.rank() != 3 {
        return Err(Error::RankMismatch {
            expected: 3,
            got: grid_pe.rank(),
        });
    }
    let (h, w, d) = (grid_pe.shape()[0], grid_pe.shape()[1], grid_pe.shape()[2]);
    let mut data = Vec::with_capacity((h * w + 1) * d);
    let mut leading = 0;
    if let Some(cls) = cls {
        if cls.rank() != 2 || cls.shape()[1] != d {
            return Err(Error::ShapeMismatch {
                left: cls.shape().to_vec(),
                right: vec![cls.shape().first().copied().unwrap_or(1), d],
            });
        }
        leading = cls.shape()[0];
        data.extend_from_slice(cls.data());
    }
    data.extend_from_slice(grid_pe.data());
    Tensor::new(vec![leading + h * w, d], data)
}

/// Zero-mean check for a positional embedding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeMeanReport {
    pub stats: Stats,
    /// |mean| / (0.05 * std); above 1 violates the zero-mean assumption.
    pub severity: f64,
    pub flagged: bool,
}

/// Reports E[P] and flags `|E[P]| > 0.05 * sqrt(Var[P])`.
pub fn pe_mean_report(pe: &Tensor) -> PeMeanReport {
    let stats = pe.stats();
    let threshold = 0.05 * stats.variance.sqrt();
    let flagged = stats.mean.abs() > threshold;
    let severity = if threshold > 0.0 {
        stats.mean.abs() / threshold
    } else if stats.mean == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    PeMeanReport {
        stats,
        severity,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_protocol() {
        let rng = SeededRng::new(0);
        assert!(measure_k(Method::Bicubic, Dims::OneD, 0.5, 4096, 100, &rng).is_err());
        assert!(measure_k(Method::Bicubic, Dims::OneD, 1.0, 4096, 100, &rng).is_err());
        assert!(measure_k(Method::Bicubic, Dims::OneD, 2.0, 512, 100, &rng).is_err());
        assert!(measure_k(Method::Bicubic, Dims::OneD, 2.0, 4096, 50, &rng).is_err());
    }

    #[test]
    fn nearest_is_exact_at_integer_scale() {
        let e = measure_k(
            Method::Nearest,
            Dims::OneD,
            2.0,
            2048,
            100,
            &SeededRng::new(1),
        )
        .unwrap();
        assert!((e.k - 1.0).abs() <= 1e-6, "k = {}", e.k);
        assert!((e.mean_ratio - 1.0).abs() <= 1e-6);
        assert!((e.rescale - 1.0 / e.k.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                measure_k(
                    Method::Bilinear,
                    Dims::OneD,
                    2.0,
                    2048,
                    120,
                    &SeededRng::new(7),
                )
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.k.to_bits(), b.k.to_bits());
        assert_eq!(a.mean_ratio.to_bits(), b.mean_ratio.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn separability_report_needs_both_dims() {
        let one = measure_k(
            Method::Nearest,
            Dims::OneD,
            2.0,
            1024,
            100,
            &SeededRng::new(0),
        )
        .unwrap();
        assert!(check_separability(&[one]).is_err());
        let two = measure_k(
            Method::Nearest,
            Dims::TwoD,
            2.0,
            32,
            100,
            &SeededRng::new(0),
        )
        .unwrap();
        let reports = check_separability(&[one, two]).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].pass);
        assert!(reports[0].gap < 1e-9);
    }

    #[test]
    fn rescale_pe_identity_cases() {
        let pe = randn(vec![7, 7, 16], &SeededRng::new(3)).unwrap();
        // identity-size spec with k = 1: identical tensor
        let same = rescale_pe(&pe, &UpsampleSpec::two_d(Method::Bicubic, 7, 7), 1.0).unwrap();
        for (&a, &b) in pe.data().iter().zip(same.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // k = 1 is a plain upsample
        let up = rescale_pe(&pe, &UpsampleSpec::two_d(Method::Nearest, 14, 14), 1.0).unwrap();
        let plain = upsample2d(&pe, &UpsampleSpec::two_d(Method::Nearest, 14, 14)).unwrap();
        assert_eq!(up, plain);
        assert!(rescale_pe(&pe, &UpsampleSpec::two_d(Method::Nearest, 14, 14), 0.0).is_err());
        assert!(rescale_pe(&pe, &UpsampleSpec::one_d(Method::Nearest, 14), 1.0).is_err());
    }

    #[test]
    fn split_cls_token_cases() {
        let pe = randn(vec![197, 8], &SeededRng::new(4)).unwrap();
        let (cls, grid) = split_cls_token(&pe, (14, 14), 1).unwrap();
        let cls = cls.unwrap();
        assert_eq!(cls.shape(), &[1, 8]);
        assert_eq!(grid.shape(), &[14, 14, 8]);
        assert_eq!(cls.data(), &pe.data()[..8]);
        assert_eq!(grid.data(), &pe.data()[8..]);

        // round trip
        let merged = merge_cls_token(Some(&cls), &grid).unwrap();
        assert_eq!(merged, pe);

        // no leading token
        let flat = randn(vec![196, 8], &SeededRng::new(5)).unwrap();
        let (none, grid) = split_cls_token(&flat, (14, 14), 0).unwrap();
        assert!(none.is_none());
        assert_eq!(merge_cls_token(None, &grid).unwrap(), flat);

        // count mismatch
        assert!(matches!(
            split_cls_token(&pe, (14, 14), 0),
            Err(Error::TokenCountMismatch { .. })
        ));
        assert!(split_cls_token(&pe, (14, 14), 2).is_err());
    }

    #[test]
    fn pe_mean_report_cases() {
        let zero = Tensor::zeros(vec![10, 4]).unwrap();
        assert!(!pe_mean_report(&zero).flagged);

        // common init: N(0, 0.02^2)
        let init = randn(vec![196, 64], &SeededRng::new(6)).unwrap().scale(0.02);
        let report = pe_mean_report(&init);
        assert!(!report.flagged, "severity = {}", report.severity);

        let constant = Tensor::constant(vec![4, 4], 1.0).unwrap();
        assert!(pe_mean_report(&constant).flagged);
    }
}
