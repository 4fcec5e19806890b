//! JSON pipeline-config parsing with strict key checking.
//!
//! Top-level keys: `scenario`, `norm`, `pe_upsample`, `train`, `test`.
//! Ops are objects with an `op` discriminator; unknown keys anywhere are
//! rejected and listed in the error.

use std::str::FromStr;

use serde_json::Value;

use crate::augment::{
    AugmentOp, EraseMode, MixupRatio, NormStats, DEFAULT_ERASE_AREA_RANGE,
    DEFAULT_ERASE_ASPECT_RANGE,
};
use crate::error::{Error, Result};
use crate::interp::{Dims, Method};

use super::{PeUpsample, PipelineConfig, Scenario};

pub const DEFAULT_OP_SCALE: f64 = 2.0;
pub const DEFAULT_CROP_FRACTION: f64 = 0.5;
pub const DEFAULT_CUTMIX_LAMBDA: f64 = 0.5;

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        parse_config(&value)
    }
}

/// Parses one op object (the same vocabulary as the `train`/`test` arrays).
pub fn parse_op_json(text: &str) -> Result<AugmentOp> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
    parse_op(&value, "op")
}

fn parse_config(value: &Value) -> Result<PipelineConfig> {
    let obj = expect_object(value, "top level")?;
    check_keys(
        obj,
        &["scenario", "norm", "pe_upsample", "train", "test"],
        "top level",
    )?;
    let scenario = match require_str(obj, "scenario", "top level")? {
        "classification" => Scenario::Classification,
        "segmentation" => Scenario::Segmentation,
        other => {
            return Err(Error::Config(format!(
                "unknown scenario `{other}` (expected classification|segmentation)"
            )))
        }
    };
    let norm = parse_norm(
        obj.get("norm")
            .ok_or_else(|| Error::Config("missing key `norm`".into()))?,
    )?;
    let pe_upsample = parse_pe_upsample(
        obj.get("pe_upsample")
            .ok_or_else(|| Error::Config("missing key `pe_upsample`".into()))?,
    )?;
    let train_ops = parse_ops(obj.get("train"), "train")?;
    let test_ops = parse_ops(obj.get("test"), "test")?;
    if train_ops.is_empty() || test_ops.is_empty() {
        return Err(Error::Config("`train` and `test` must be non-empty".into()));
    }
    Ok(PipelineConfig {
        scenario,
        norm,
        pe_upsample,
        train_ops,
        test_ops,
    })
}

fn parse_norm(value: &Value) -> Result<NormStats> {
    match value {
        Value::String(name) => NormStats::by_name(name).map_err(|e| Error::Config(e.to_string())),
        Value::Object(obj) => {
            check_keys(obj, &["mean", "std"], "norm")?;
            let mean = require_triple(obj.get("mean"), "norm.mean")?;
            let std = require_triple(obj.get("std"), "norm.std")?;
            NormStats::custom(mean, std).map_err(|e| Error::Config(e.to_string()))
        }
        _ => Err(Error::Config(
            "`norm` must be a stats name or {mean, std} object".into(),
        )),
    }
}

fn parse_pe_upsample(value: &Value) -> Result<PeUpsample> {
    let obj = expect_object(value, "pe_upsample")?;
    check_keys(
        obj,
        &["method", "in_test", "dims", "pre_rescaled"],
        "pe_upsample",
    )?;
    let method = parse_method(require_str(obj, "method", "pe_upsample")?)?;
    let in_test = obj
        .get("in_test")
        .and_then(Value::as_bool)
        .ok_or_else(|| Error::Config("pe_upsample.in_test must be a boolean".into()))?;
    let dims = match obj.get("dims") {
        None => Dims::TwoD,
        Some(v) => parse_dims(v)?,
    };
    let pre_rescaled = match obj.get("pre_rescaled") {
        None => false,
        Some(v) => v
            .as_bool()
            .ok_or_else(|| Error::Config("pe_upsample.pre_rescaled must be a boolean".into()))?,
    };
    Ok(PeUpsample {
        method,
        dims,
        in_test,
        pre_rescaled,
    })
}

fn parse_ops(value: Option<&Value>, phase: &str) -> Result<Vec<AugmentOp>> {
    let arr = value
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config(format!("`{phase}` must be an array of op objects")))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| parse_op(v, &format!("{phase}[{i}]")))
        .collect()
}

fn parse_op(value: &Value, at: &str) -> Result<AugmentOp> {
    let obj = expect_object(value, at)?;
    let kind = require_str(obj, "op", at)?.to_owned();
    let op = match kind.as_str() {
        "resize" | "resize_crop" => {
            check_keys(obj, &["op", "method", "scale", "dims"], at)?;
            let method = parse_method(require_str(obj, "method", at)?)?;
            let scale = opt_f64(obj, "scale", at)?.unwrap_or(DEFAULT_OP_SCALE);
            let dims = match obj.get("dims") {
                None => Dims::TwoD,
                Some(v) => parse_dims(v)?,
            };
            if kind == "resize" {
                AugmentOp::Resize {
                    method,
                    dims,
                    scale,
                }
            } else {
                AugmentOp::ResizeCrop {
                    method,
                    dims,
                    scale,
                }
            }
        }
        "crop" => {
            check_keys(obj, &["op", "fraction"], at)?;
            AugmentOp::Crop {
                fraction: opt_f64(obj, "fraction", at)?.unwrap_or(DEFAULT_CROP_FRACTION),
            }
        }
        "mixup" => {
            check_keys(obj, &["op", "lambda", "alpha"], at)?;
            let lambda = opt_f64(obj, "lambda", at)?;
            let alpha = opt_f64(obj, "alpha", at)?;
            let ratio = match (lambda, alpha) {
                (Some(l), None) => MixupRatio::Fixed(l),
                (None, Some(a)) => MixupRatio::BetaAlpha(a),
                _ => {
                    return Err(Error::Config(format!(
                        "{at}: mixup takes exactly one of `lambda` or `alpha`"
                    )))
                }
            };
            AugmentOp::Mixup { ratio }
        }
        "extended_mixup" => {
            check_keys(obj, &["op", "lambda_i", "lambda_j"], at)?;
            AugmentOp::ExtendedMixup {
                lambda_i: opt_f64(obj, "lambda_i", at)?
                    .ok_or_else(|| Error::Config(format!("{at}: missing `lambda_i`")))?,
                lambda_j: opt_f64(obj, "lambda_j", at)?
                    .ok_or_else(|| Error::Config(format!("{at}: missing `lambda_j`")))?,
            }
        }
        "cutmix" => {
            check_keys(obj, &["op", "lambda"], at)?;
            AugmentOp::Cutmix {
                lambda: opt_f64(obj, "lambda", at)?.unwrap_or(DEFAULT_CUTMIX_LAMBDA),
            }
        }
        "random_erase" => {
            check_keys(
                obj,
                &["op", "mode", "probability", "area_range", "aspect_range"],
                at,
            )?;
            let mode = match require_str(obj, "mode", at)? {
                "const" => EraseMode::Const,
                "rand" => EraseMode::Rand,
                "pixel" => EraseMode::Pixel,
                other => {
                    return Err(Error::Config(format!(
                        "{at}: unknown erase mode `{other}` (expected const|rand|pixel)"
                    )))
                }
            };
            let probability = opt_f64(obj, "probability", at)?
                .ok_or_else(|| Error::Config(format!("{at}: missing `probability`")))?;
            let area_range = opt_range(obj, "area_range", at)?.unwrap_or(DEFAULT_ERASE_AREA_RANGE);
            let aspect_range =
                opt_range(obj, "aspect_range", at)?.unwrap_or(DEFAULT_ERASE_ASPECT_RANGE);
            AugmentOp::RandomErase {
                mode,
                probability,
                area_range,
                aspect_range,
            }
        }
        "normalize" => {
            check_keys(obj, &["op", "stats"], at)?;
            AugmentOp::Normalize {
                stats: parse_norm(
                    obj.get("stats")
                        .ok_or_else(|| Error::Config(format!("{at}: missing `stats`")))?,
                )?,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "{at}: unknown op `{other}` (expected resize|crop|resize_crop|mixup|\
                 extended_mixup|cutmix|random_erase|normalize)"
            )))
        }
    };
    op.validate().map_err(|e| Error::Config(format!("{at}: {e}")))?;
    Ok(op)
}

fn parse_method(s: &str) -> Result<Method> {
    Method::from_str(s).map_err(|e| Error::Config(e.to_string()))
}

fn parse_dims(v: &Value) -> Result<Dims> {
    let s = v
        .as_str()
        .ok_or_else(|| Error::Config("`dims` must be \"1d\" or \"2d\"".into()))?;
    Dims::from_str(s).map_err(|e| Error::Config(e.to_string()))
}

fn expect_object<'a>(
    value: &'a Value,
    at: &str,
) -> Result<&'a serde_json::Map<String, Value>> {
    value
        .as_object()
        .ok_or_else(|| Error::Config(format!("{at}: expected an object")))
}

fn check_keys(obj: &serde_json::Map<String, Value>, allowed: &[&str], at: &str) -> Result<()> {
    let offending: Vec<&str> = obj
        .keys()
        .map(String::as_str)
        .filter(|k| !allowed.contains(k))
        .collect();
    if offending.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{at}: unknown keys {offending:?} (allowed: {allowed:?})"
        )))
    }
}

fn require_str<'a>(
    obj: &'a serde_json::Map<String, Value>,
    key: &str,
    at: &str,
) -> Result<&'a str> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Config(format!("{at}: missing or non-string key `{key}`")))
}

fn opt_f64(obj: &serde_json::Map<String, Value>, key: &str, at: &str) -> Result<Option<f64>> {
    match obj.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| Error::Config(format!("{at}: `{key}` must be a number"))),
    }
}

fn opt_range(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    at: &str,
) -> Result<Option<(f64, f64)>> {
    match obj.get(key) {
        None => Ok(None),
        Some(Value::Array(a)) if a.len() == 2 => {
            let lo = a[0]
                .as_f64()
                .ok_or_else(|| Error::Config(format!("{at}: `{key}` entries must be numbers")))?;
            let hi = a[1]
                .as_f64()
                .ok_or_else(|| Error::Config(format!("{at}: `{key}` entries must be numbers")))?;
            Ok(Some((lo, hi)))
        }
        Some(_) => Err(Error::Config(format!(
            "{at}: `{key}` must be a two-element array"
        ))),
    }
}

fn require_triple(value: Option<&Value>, at: &str) -> Result<[f64; 3]> {
    let arr = value
        .and_then(Value::as_array)
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::Config(format!("{at}: expected a three-element array")))?;
    let mut out = [0.0; 3];
    for (i, v) in arr.iter().enumerate() {
        out[i] = v
            .as_f64()
            .ok_or_else(|| Error::Config(format!("{at}: entries must be numbers")))?;
    }
    Ok(out)
}
