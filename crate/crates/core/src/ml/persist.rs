//! Versioned JSON model file.
//!
//! Floats are written in shortest round-trip form, so a loaded model
//! reproduces the saved model's predictions bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpModel, SvmMulticlassModel};
use crate::error::{Error, Result};
use crate::evalreport::TrainingFigures;
use crate::features::Standardizer;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModels {
    pub format_version: u32,
    /// Monitored line the features refer to.
    pub line: String,
    pub feature_names: Vec<String>,
    pub bin_width: f64,
    pub standardizer: Standardizer,
    pub mlp: MlpModel,
    pub svm: Option<SvmMulticlassModel>,
    #[serde(default)]
    pub training: Option<TrainingFigures>,
}

impl TrainedModels {
    fn validate(&self) -> Result<()> {
        let d = self.feature_names.len();
        let bad = |m: &str| Err(Error::CorruptFile(m.to_string()));
        if self.standardizer.mean.len() != d || self.standardizer.std.len() != d {
            return bad("standardizer size does not match feature names");
        }
        let m = &self.mlp;
        if m.n_in != d
            || m.w1.len() != m.n_hidden
            || m.w1.iter().any(|r| r.len() != m.n_in)
            || m.b1.len() != m.n_hidden
            || m.w2.len() != m.n_hidden
        {
            return bad("perceptron weight shapes are inconsistent");
        }
        if let Some(s) = &self.svm {
            let k = s.vocabulary.len();
            if s.dim != d || s.machines.len() != k * (k.saturating_sub(1)) / 2 {
                return bad("svm machine count or dimension is inconsistent");
            }
            for mc in &s.machines {
                if mc.coef.len() != mc.support_vectors.len()
                    || mc.support_vectors.iter().any(|v| v.len() != d)
                    || !s.vocabulary.contains(&mc.positive)
                    || !s.vocabulary.contains(&mc.negative)
                {
                    return bad("svm machine is inconsistent");
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::CorruptFile(e.to_string()))?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::CorruptFile("missing format_version".into()))?;
        if found != FORMAT_VERSION as u64 {
            return Err(Error::FormatVersionMismatch {
                found: found.min(u32::MAX as u64) as u32,
                expected: FORMAT_VERSION,
            });
        }
        let m: TrainedModels = serde_json::from_value(value).map_err(|e| Error::CorruptFile(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

pub fn save_model(models: &TrainedModels, path: &Path) -> Result<()> {
    fs::write(path, models.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TrainedModels> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainedModels::from_json(&text)
}
