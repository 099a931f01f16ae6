//! JSON model files.
//!
//! ```json
//! {"version": 1,
//!  "arch": {"kind": "tcn", "k": 3, "dilations": [1, 2, 4],
//!           "channels": [16, 32, 32, 32], "hidden": 16, "window": 64,
//!           "feature_dim": 16},
//!  "params": {"conv0.kernel": [...], ...}}
//! ```
//!
//! Arrays are row-major; every real is written with 17 significant digits
//! so files round-trip bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::mlp::{MlpParams, WIDTHS};
use super::tcn::{self, TcnParams};
use super::{ParamSet, ReuseModel};
use crate::error::{Error, Result};
use crate::fsio;
use crate::trace::{FeatureVector, FEATURE_DIM};

pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Tcn {
        k: usize,
        dilations: Vec<usize>,
        channels: Vec<usize>,
        hidden: usize,
        window: usize,
        feature_dim: usize,
    },
    Mlp {
        widths: Vec<usize>,
        feature_dim: usize,
    },
}

impl Arch {
    pub fn tcn() -> Self {
        Arch::Tcn {
            k: tcn::KERNEL,
            dilations: tcn::DILATIONS.to_vec(),
            channels: tcn::CHANNELS.to_vec(),
            hidden: tcn::HIDDEN,
            window: tcn::WINDOW,
            feature_dim: FEATURE_DIM,
        }
    }

    pub fn mlp() -> Self {
        Arch::Mlp {
            widths: WIDTHS.to_vec(),
            feature_dim: FEATURE_DIM,
        }
    }
}

/// A loaded predictor of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Tcn(TcnParams),
    Mlp(MlpParams),
}

impl AnyModel {
    pub fn arch(&self) -> Arch {
        match self {
            AnyModel::Tcn(_) => Arch::tcn(),
            AnyModel::Mlp(_) => Arch::mlp(),
        }
    }

    pub fn params(&self) -> &dyn ParamSetDyn {
        match self {
            AnyModel::Tcn(p) => p,
            AnyModel::Mlp(p) => p,
        }
    }

    pub fn predict(&self, window: &[FeatureVector]) -> f64 {
        match self {
            AnyModel::Tcn(p) => p.predict(window),
            AnyModel::Mlp(p) => p.predict(window),
        }
    }
}

/// Object-safe view of the named tensors of a model.
pub trait ParamSetDyn {
    fn named_tensors(&self) -> Vec<(&'static str, &[f64])>;
}

impl<T: ParamSet> ParamSetDyn for T {
    fn named_tensors(&self) -> Vec<(&'static str, &[f64])> {
        self.tensors()
    }
}

pub fn model_to_json(model: &AnyModel) -> Result<String> {
    let mut out = String::new();
    let arch = serde_json::to_string(&model.arch())?;
    write!(
        out,
        "{{\n  \"version\": {MODEL_VERSION},\n  \"arch\": {arch},\n  \"params\": {{"
    )
    .unwrap();
    let tensors = model.params().named_tensors();
    for (n, (name, values)) in tensors.iter().enumerate() {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cannot save non-finite parameter {name}[{k}]"
            )));
        }
        let sep = if n == 0 { "" } else { "," };
        write!(out, "{sep}\n    \"{name}\": [").unwrap();
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write!(out, "{v:.16e}").unwrap();
        }
        out.push(']');
    }
    out.push_str("\n  }\n}\n");
    Ok(out)
}

fn fill_params<M: ParamSet>(mut model: M, params: &serde_json::Map<String, Value>) -> Result<M> {
    let expected: Vec<&str> = model.tensors().iter().map(|(n, _)| *n).collect();
    if let Some(extra) = params.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(Error::Shape(format!(
            "unexpected parameter tensor {extra:?}"
        )));
    }
    for (name, slot) in model.tensors_mut() {
        let values = params
            .get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Shape(format!("missing parameter tensor {name}")))?;
        if values.len() != slot.len() {
            return Err(Error::Shape(format!(
                "{name}: expected {} values, found {}",
                slot.len(),
                values.len()
            )));
        }
        for (dst, v) in slot.iter_mut().zip(values) {
            *dst = v
                .as_f64()
                .ok_or_else(|| Error::Corrupt(format!("{name}: non-numeric entry {v}")))?;
        }
    }
    Ok(model)
}

pub fn model_from_json(text: &str) -> Result<AnyModel> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
    let version = doc
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Corrupt("missing integer version field".into()))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let arch: Arch = serde_json::from_value(
        doc.get("arch")
            .cloned()
            .ok_or_else(|| Error::Corrupt("missing arch".into()))?,
    )
    .map_err(|e| Error::Corrupt(format!("bad arch: {e}")))?;
    let params = doc
        .get("params")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Corrupt("missing params object".into()))?;

    if arch == Arch::tcn() {
        let p = fill_params(TcnParams::zeros(), params)?;
        Ok(AnyModel::Tcn(p))
    } else if arch == Arch::mlp() {
        Ok(AnyModel::Mlp(fill_params(MlpParams::zeros(), params)?))
    } else {
        Err(Error::Shape(format!(
            "unsupported architecture constants {arch:?}"
        )))
    }
}

pub fn save_model(model: &AnyModel, path: &Path) -> Result<()> {
    fsio::write_atomic(path, model_to_json(model)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    model_from_json(&fsio::read_to_string(path)?)
}
