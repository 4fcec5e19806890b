//! Train/test pipeline auditor.
//!
//! `audit` folds first-two-moment state (mean, variance) analytically through
//! each phase's op list, compares the train and test contribution ratios
//! `Var[I]/Var[P]`, and recommends the positional-embedding rescale factor
//! that restores consistency. `verify_empirically` replays the same pipeline
//! on synthetic images and cross-checks every analytic multiplier.
//!
//! All multipliers are relative to the unit baseline: an image stream whose
//! correct dataset normalization yields zero mean and unit variance.

mod config;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_op, AugmentOp, EraseMode, MixupRatio, NormStats, NormStatsName};
use crate::error::{Error, Result};
use crate::interp::{Dims, Method, UpsampleSpec};
use crate::tensor::{pairwise_sum, randn, SeededRng, Tensor};
use crate::varcal::KTable;

pub use config::{parse_op_json, DEFAULT_CROP_FRACTION, DEFAULT_CUTMIX_LAMBDA, DEFAULT_OP_SCALE};

/// Consistency threshold: 5% on the log of the train/test ratio quotient.
pub const CONSISTENCY_LOG_TOLERANCE: f64 = 0.048790164169432003; // ln(1.05)

/// Analytic-vs-measured agreement threshold for one op's multiplier.
pub const EMPIRICAL_TOLERANCE: f64 = 0.03;

/// Reference spatial size of the synthetic images used by the empirical
/// verifier and by the erase-geometry constants.
pub const EMPIRICAL_IMAGE_SIDE: usize = 64;
const EMPIRICAL_PE_GRID: usize = 14;
const EMPIRICAL_PE_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Classification,
    Segmentation,
}

/// How (and whether) the positional embedding gets upsampled at test time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeUpsample {
    pub method: Method,
    pub dims: Dims,
    pub in_test: bool,
    /// True once the `1/sqrt(k)` calibration has been applied to the stored
    /// embedding, e.g. by the `rescale-pe` command.
    pub pre_rescaled: bool,
}

/// Declarative train/test pipeline description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenario: Scenario,
    pub norm: NormStats,
    pub pe_upsample: PeUpsample,
    pub train_ops: Vec<AugmentOp>,
    pub test_ops: Vec<AugmentOp>,
}

impl PipelineConfig {
    /// Every (method, dims) pair the analytic model needs k values for.
    pub fn k_requirements(&self) -> Vec<(Method, Dims)> {
        let mut pairs = Vec::new();
        let mut push = |m: Method, d: Dims| {
            if !pairs.contains(&(m, d)) {
                pairs.push((m, d));
            }
        };
        for op in self.train_ops.iter().chain(&self.test_ops) {
            match *op {
                AugmentOp::Resize { method, dims, .. }
                | AugmentOp::ResizeCrop { method, dims, .. } => push(method, dims),
                _ => {}
            }
        }
        if self.pe_upsample.in_test {
            push(self.pe_upsample.method, self.pe_upsample.dims);
        }
        pairs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    Analytic,
    Empirical,
}

/// Variance accounting for one audited pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub scenario: Scenario,
    pub mode: AuditMode,
    pub var_mult_img_train: f64,
    pub var_mult_img_test: f64,
    pub var_mult_pe_train: f64,
    pub var_mult_pe_test: f64,
    pub ratio_train: f64,
    pub ratio_test: f64,
    /// |ln(ratio_train / ratio_test)| <= ln(1.05)
    pub consistent: bool,
    /// Factor to multiply the upsampled PE by so the test ratio matches the
    /// train ratio: sqrt(pe_train_mult / pe_test_mult).
    pub recommended_rescale: f64,
    pub findings: Vec<String>,
}

/// Per-op analytic propagation result.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// Product of per-op variance multipliers for the whole phase.
    pub multiplier: f64,
    /// One multiplier per op, in order.
    pub per_op: Vec<f64>,
    pub findings: Vec<String>,
}

/// First-two-moment state of the image stream. `None` means the statistics
/// are unknown (non-unit-producing normalization upstream).
#[derive(Debug, Clone, Copy)]
struct MomentState(Option<(f64, f64)>);

impl MomentState {
    fn unit() -> Self {
        MomentState(Some((0.0, 1.0)))
    }
    fn unknown() -> Self {
        MomentState(None)
    }
}

/// Expected erased-area fraction moments (E[f], E[f^2]) of the
/// random-erasing geometry, measured on the reference image size by seeded
/// simulation of the placement procedure alone.
pub fn erase_fraction_moments(
    area_range: (f64, f64),
    aspect_range: (f64, f64),
    side: usize,
) -> (f64, f64) {
    let draws = 10_000u64;
    let base = SeededRng::with_stream(0xe5a5_0000, 0);
    let (h, w) = (side, side);
    let area = (h * w) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..draws {
        let mut gen = base.substream(i).rng();
        let mut f = 0.0;
        for _ in 0..10 {
            let target = gen.random_range(area_range.0..=area_range.1) * area;
            let log_aspect = gen.random_range(aspect_range.0.ln()..=aspect_range.1.ln());
            let aspect = log_aspect.exp();
            let eh = (target * aspect).sqrt().round() as usize;
            let ew = (target / aspect).sqrt().round() as usize;
            if eh >= 1 && ew >= 1 && eh < h && ew < w {
                f = (eh * ew) as f64 / area;
                break;
            }
        }
        sum += f;
        sum_sq += f * f;
    }
    (sum / draws as f64, sum_sq / draws as f64)
}

fn k_for(table: &KTable, method: Method, dims: Dims) -> Result<f64> {
    table.get(method, dims).ok_or_else(|| {
        Error::InvalidArgument(format!("k table has no entry for ({method}, {dims})"))
    })
}

/// Analytic variance multiplier of one op given the incoming moment state.
/// Returns the multiplier and the updated state.
fn op_multiplier(
    op: &AugmentOp,
    state: MomentState,
    table: &KTable,
    findings: &mut Vec<String>,
) -> Result<(f64, MomentState)> {
    match *op {
        AugmentOp::Resize { method, dims, .. } | AugmentOp::ResizeCrop { method, dims, .. } => {
            let k = k_for(table, method, dims)?;
            let next = state
                .0
                .map(|(m, v)| (m, v * k));
            if method.is_interpolation_type() {
                findings.push(format!(
                    "{}: interpolation-type upsampling scales variance by k = {k:.4}",
                    op.describe()
                ));
            }
            Ok((k, MomentState(next)))
        }
        AugmentOp::Crop { .. } => {
            findings.push(format!(
                "{}: crop treated as variance-neutral (informational)",
                op.describe()
            ));
            Ok((1.0, state))
        }
        AugmentOp::Mixup { ratio } => {
            let mult = match ratio {
                MixupRatio::Fixed(l) => l * l + (1.0 - l) * (1.0 - l),
                // E[lambda^2 + (1-lambda)^2] over Beta(a, a)
                MixupRatio::BetaAlpha(a) => 0.5 + 1.0 / (2.0 * (2.0 * a + 1.0)),
            };
            findings.push(format!(
                "{}: mixup decreases variance (multiplier {mult:.4})",
                op.describe()
            ));
            Ok((mult, MomentState(state.0.map(|(m, v)| (m, v * mult)))))
        }
        AugmentOp::ExtendedMixup { lambda_i, lambda_j } => {
            let mult = lambda_i * lambda_i + lambda_j * lambda_j;
            let mean_scale = lambda_i + lambda_j;
            if (mult - 1.0).abs() > 1e-9 {
                findings.push(format!(
                    "{}: variance scaled by {mult:.4}",
                    op.describe()
                ));
            }
            if (mean_scale - 1.0).abs() > 1e-9 {
                findings.push(format!(
                    "{}: mean scaled by {mean_scale:.4} (visible for non-zero-mean inputs)",
                    op.describe()
                ));
            }
            Ok((
                mult,
                MomentState(state.0.map(|(m, v)| (m * mean_scale, v * mult))),
            ))
        }
        AugmentOp::Cutmix { .. } => Ok((1.0, state)),
        AugmentOp::RandomErase {
            mode,
            probability,
            area_range,
            aspect_range,
        } => {
            if mode == EraseMode::Rand {
                return Err(Error::UnknownMultiplier {
                    op: op.describe(),
                    reason: "rand mode fills the block with a single shared value; \
                             the per-sample variance has no conserved form"
                        .into(),
                });
            }
            let Some((mean, var)) = state.0 else {
                return Err(Error::UnknownMultiplier {
                    op: op.describe(),
                    reason: "input statistics are unknown after non-unit normalization; \
                             erasing conserves variance only for zero-mean unit-variance inputs"
                        .into(),
                });
            };
            let (ef, ef2) =
                erase_fraction_moments(area_range, aspect_range, EMPIRICAL_IMAGE_SIDE);
            let p = probability;
            let var_out = match mode {
                // blocks of N(0,1) pixels
                EraseMode::Pixel => var + p * ef * (1.0 - var) + p * (ef - ef2) * mean * mean,
                // blocks of zeros
                EraseMode::Const => var * (1.0 - p * ef) + p * (ef - ef2) * mean * mean,
                EraseMode::Rand => unreachable!(),
            };
            let mean_out = mean * (1.0 - p * ef);
            let mult = var_out / var;
            if mode == EraseMode::Const {
                findings.push(format!(
                    "{}: const mode zeroes the block; variance multiplier {mult:.4}",
                    op.describe()
                ));
            }
            Ok((mult, MomentState(Some((mean_out, var_out)))))
        }
        AugmentOp::Normalize { stats } => {
            if stats.unit_producing() {
                Ok((1.0, MomentState::unit()))
            } else {
                findings.push(non_unit_norm_finding(&stats));
                Ok((1.0, MomentState::unknown()))
            }
        }
    }
}

fn non_unit_norm_finding(stats: &NormStats) -> String {
    format!(
        "normalize({stats}): stats do not produce zero-mean unit-variance inputs; \
         mean and variance consistency at risk"
    )
}

/// Folds the analytic multiplier model over an op list.
pub fn propagate(ops: &[AugmentOp], table: &KTable, start_unit: bool) -> Result<Propagation> {
    let mut state = if start_unit {
        MomentState::unit()
    } else {
        MomentState::unknown()
    };
    let mut findings = Vec::new();
    let mut per_op = Vec::with_capacity(ops.len());
    let mut multiplier = 1.0;
    for op in ops {
        op.validate()?;
        let (mult, next) = op_multiplier(op, state, table, &mut findings)?;
        per_op.push(mult);
        multiplier *= mult;
        state = next;
    }
    Ok(Propagation {
        multiplier,
        per_op,
        findings,
    })
}

/// Analytic audit of a pipeline config against a measured k table.
pub fn audit(cfg: &PipelineConfig, table: &KTable) -> Result<AuditReport> {
    let mut findings = Vec::new();
    let start_unit = cfg.norm.unit_producing();
    if !start_unit {
        findings.push(non_unit_norm_finding(&cfg.norm));
    }

    let train = propagate(&cfg.train_ops, table, start_unit)?;
    let test = propagate(&cfg.test_ops, table, start_unit)?;
    findings.extend(train.findings.iter().map(|f| format!("train: {f}")));
    findings.extend(test.findings.iter().map(|f| format!("test: {f}")));

    let pe = pe_multipliers(cfg, table, &mut findings)?;
    if cfg.scenario == Scenario::Segmentation {
        findings.push(
            "segmentation: test-phase resize applies without a crop; both reduce to the \
             same variance multiplier k"
                .into(),
        );
    }

    Ok(assemble_report(
        cfg,
        AuditMode::Analytic,
        train.multiplier,
        test.multiplier,
        pe,
        findings,
    ))
}

struct PeMults {
    train: f64,
    test: f64,
}

fn pe_multipliers(
    cfg: &PipelineConfig,
    table: &KTable,
    findings: &mut Vec<String>,
) -> Result<PeMults> {
    let train = 1.0;
    let mut test = 1.0;
    if cfg.pe_upsample.in_test {
        let k = k_for(table, cfg.pe_upsample.method, cfg.pe_upsample.dims)?;
        test = k;
        if cfg.pe_upsample.pre_rescaled {
            let rescale = (train / test).sqrt();
            test *= rescale * rescale;
            findings.push(format!(
                "positional embedding upsampled in the test phase ({} {}), pre-rescaled by \
                 1/sqrt(k) = {rescale:.4}",
                cfg.pe_upsample.method, cfg.pe_upsample.dims
            ));
        } else {
            findings.push(format!(
                "positional embedding upsampled only in the test phase ({} {}): variance \
                 scaled by k = {k:.4}",
                cfg.pe_upsample.method, cfg.pe_upsample.dims
            ));
        }
    }
    Ok(PeMults { train, test })
}

fn assemble_report(
    cfg: &PipelineConfig,
    mode: AuditMode,
    img_train: f64,
    img_test: f64,
    pe: PeMults,
    findings: Vec<String>,
) -> AuditReport {
    let ratio_train = img_train / pe.train;
    let ratio_test = img_test / pe.test;
    let consistent = (ratio_train / ratio_test).ln().abs() <= CONSISTENCY_LOG_TOLERANCE;
    AuditReport {
        scenario: cfg.scenario,
        mode,
        var_mult_img_train: img_train,
        var_mult_img_test: img_test,
        var_mult_pe_train: pe.train,
        var_mult_pe_test: pe.test,
        ratio_train,
        ratio_test,
        consistent,
        recommended_rescale: (pe.train / pe.test).sqrt(),
        findings,
    }
}

/// Runs the configured ops on synthetic images, measures every per-op
/// variance multiplier, and flags any disagreement with the analytic model
/// beyond [`EMPIRICAL_TOLERANCE`]. Ops without an analytic value (rand-mode
/// erasing, non-unit normalization) use their measured multiplier as the
/// fallback.
pub fn verify_empirically(
    cfg: &PipelineConfig,
    table: &KTable,
    rng: &SeededRng,
    trials: usize,
) -> Result<AuditReport> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!(
            "trial count {trials} below minimum 100"
        )));
    }
    let mut findings = Vec::new();
    let start_unit = cfg.norm.unit_producing();
    if !start_unit {
        findings.push(non_unit_norm_finding(&cfg.norm));
    }

    let train = measure_phase(&cfg.train_ops, cfg, table, &rng.substream(1), trials)?;
    let test = measure_phase(&cfg.test_ops, cfg, table, &rng.substream(2), trials)?;
    findings.extend(train.findings.iter().map(|f| format!("train: {f}")));
    findings.extend(test.findings.iter().map(|f| format!("test: {f}")));

    let pe = measure_pe(cfg, table, &rng.substream(3), trials.min(200), &mut findings)?;

    Ok(assemble_report(
        cfg,
        AuditMode::Empirical,
        train.multiplier,
        test.multiplier,
        pe,
        findings,
    ))
}

struct MeasuredPhase {
    multiplier: f64,
    findings: Vec<String>,
}

/// Generates a raw synthetic image and applies the configured normalization,
/// yielding the phase input. The raw model matches the norm stats: matched
/// dataset stats by inverse transform for `default_imagenet`, N(0,1) for
/// `identity`, and a U(0,1) pixel surrogate otherwise.
fn phase_input(cfg: &PipelineConfig, key: &SeededRng) -> Result<Tensor> {
    let side = EMPIRICAL_IMAGE_SIDE;
    let shape = vec![side, side, 3];
    let raw = match cfg.norm.name {
        NormStatsName::Identity => randn(shape, key)?,
        NormStatsName::DefaultImagenet => {
            let z = randn(shape.clone(), key)?;
            let stats = cfg.norm;
            let data = z
                .data()
                .iter()
                .enumerate()
                .map(|(i, &v)| v * stats.std[i % 3] + stats.mean[i % 3])
                .collect();
            Tensor::new(shape, data)?
        }
        _ => crate::tensor::rand_uniform(shape, 0.0, 1.0, key)?,
    };
    crate::augment::normalize(&raw, &cfg.norm)
}

/// Applies `ops[..upto]` to a fresh phase input; partner samples for mixing
/// ops recurse through the same prefix with independent streams.
fn run_prefix(
    cfg: &PipelineConfig,
    ops: &[AugmentOp],
    upto: usize,
    key: &SeededRng,
) -> Result<Tensor> {
    let mut current = phase_input(cfg, &key.substream(0))?;
    for (i, op) in ops[..upto].iter().enumerate() {
        let op_key = key.substream(1 + i as u64);
        let partner_key = op_key.substream(0x7a57);
        current = apply_op(
            op,
            &current,
            || run_prefix(cfg, ops, i, &partner_key),
            &op_key,
        )?;
    }
    Ok(current)
}

fn measure_phase(
    ops: &[AugmentOp],
    cfg: &PipelineConfig,
    table: &KTable,
    rng: &SeededRng,
    trials: usize,
) -> Result<MeasuredPhase> {
    // analytic reference; unknown-multiplier ops fall back to measurement
    let analytic = match propagate(ops, table, cfg.norm.unit_producing()) {
        Ok(p) => Some(p),
        Err(Error::UnknownMultiplier { op, reason }) => {
            // keep auditing; the measured values stand in for the model
            let mut findings = vec![format!(
                "{op}: no analytic multiplier ({reason}); using measured fallback"
            )];
            findings.extend(
                propagate_known_prefix(ops, table, cfg.norm.unit_producing()).1,
            );
            return measure_phase_inner(ops, cfg, rng, trials, None, findings);
        }
        Err(e) => return Err(e),
    };
    let findings = analytic.as_ref().map(|p| p.findings.clone()).unwrap_or_default();
    measure_phase_inner(ops, cfg, rng, trials, analytic, findings)
}

/// Findings from the longest analytically tractable prefix.
fn propagate_known_prefix(
    ops: &[AugmentOp],
    table: &KTable,
    start_unit: bool,
) -> (usize, Vec<String>) {
    for end in (0..=ops.len()).rev() {
        if let Ok(p) = propagate(&ops[..end], table, start_unit) {
            return (end, p.findings);
        }
    }
    (0, Vec::new())
}

fn measure_phase_inner(
    ops: &[AugmentOp],
    cfg: &PipelineConfig,
    rng: &SeededRng,
    trials: usize,
    analytic: Option<Propagation>,
    mut findings: Vec<String>,
) -> Result<MeasuredPhase> {
    let per_trial: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| -> Result<Vec<f64>> {
            let key = rng.substream(trial);
            let mut current = phase_input(cfg, &key.substream(0))?;
            let mut ratios = Vec::with_capacity(ops.len());
            for (i, op) in ops.iter().enumerate() {
                let before = current.stats().variance;
                let op_key = key.substream(1 + i as u64);
                let partner_key = op_key.substream(0x7a57);
                current = apply_op(
                    op,
                    &current,
                    || run_prefix(cfg, ops, i, &partner_key),
                    &op_key,
                )?;
                ratios.push(current.stats().variance / before);
            }
            Ok(ratios)
        })
        .collect::<Result<_>>()?;

    let mut measured_per_op = Vec::with_capacity(ops.len());
    for i in 0..ops.len() {
        let column: Vec<f64> = per_trial.iter().map(|r| r[i]).collect();
        measured_per_op.push(pairwise_sum(&column) / trials as f64);
    }
    let multiplier: f64 = measured_per_op.iter().product();

    if let Some(analytic) = &analytic {
        for (i, op) in ops.iter().enumerate() {
            let gap = (measured_per_op[i] - analytic.per_op[i]).abs();
            if gap > EMPIRICAL_TOLERANCE {
                findings.push(format!(
                    "divergence: {} measured multiplier {:.4} vs analytic {:.4}",
                    op.describe(),
                    measured_per_op[i],
                    analytic.per_op[i]
                ));
            }
        }
    } else {
        for (i, op) in ops.iter().enumerate() {
            findings.push(format!(
                "measured multiplier for {}: {:.4}",
                op.describe(),
                measured_per_op[i]
            ));
        }
    }
    Ok(MeasuredPhase {
        multiplier,
        findings,
    })
}

fn measure_pe(
    cfg: &PipelineConfig,
    table: &KTable,
    rng: &SeededRng,
    trials: usize,
    findings: &mut Vec<String>,
) -> Result<PeMults> {
    if !cfg.pe_upsample.in_test {
        return Ok(PeMults {
            train: 1.0,
            test: 1.0,
        });
    }
    let grid = EMPIRICAL_PE_GRID;
    let spec = match cfg.pe_upsample.dims {
        Dims::TwoD => UpsampleSpec::two_d(cfg.pe_upsample.method, grid * 2, grid * 2),
        Dims::OneD => UpsampleSpec::two_d(cfg.pe_upsample.method, grid, grid * 2),
    };
    let ratios: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let pe = randn(vec![grid, grid, EMPIRICAL_PE_DIM], &rng.substream(trial))
                .expect("valid shape");
            let up = crate::interp::upsample2d(&pe, &spec).expect("upsample within bounds");
            up.stats().variance / pe.stats().variance
        })
        .collect();
    let mut measured = pairwise_sum(&ratios) / trials as f64;
    if cfg.pe_upsample.pre_rescaled {
        let k = k_for(table, cfg.pe_upsample.method, cfg.pe_upsample.dims)?;
        measured *= 1.0 / k;
        findings.push(format!(
            "positional embedding pre-rescaled; measured residual multiplier {measured:.4}"
        ));
    } else {
        findings.push(format!(
            "positional embedding upsampled only in the test phase: measured variance \
             multiplier {measured:.4}"
        ));
    }
    Ok(PeMults {
        train: 1.0,
        test: measured,
    })
}
