//! Versioned JSON model files.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! saved model predicts bit-for-bit like the in-memory one.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::averaging::{AveragedModel, WeightVector};
use crate::candidate::CandidateModel;
use crate::data::{ColumnKind, Dataset};
use crate::error::{QpmaError, Result};
use crate::tau_basis::TauBasis;

pub const FORMAT: &str = "qpma-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Full-sample solver convergence, one flag per candidate.
    pub candidate_converged: Vec<bool>,
    pub weights_converged: bool,
    /// Leave-one-out criterion at the selected weights.
    pub cv: Option<f64>,
    pub cv_grid_len: Option<usize>,
    /// Leave-one-out refits that stopped at the iteration cap.
    pub loo_nonconverged: usize,
    /// Fraction of training rows with crossing predicted quantiles.
    pub crossing: Option<f64>,
    /// Effective settings used for the fit.
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub response: String,
    /// Covariates in model order: continuous first, then discrete.
    pub columns: Vec<ColumnInfo>,
    pub tau_basis: TauBasis,
    pub candidates: Vec<CandidateModel>,
    pub weights: WeightVector,
    pub diagnostics: Diagnostics,
}

impl ModelFile {
    pub fn new(response: &str, data: &Dataset, model: &AveragedModel, diagnostics: Diagnostics) -> Result<Self> {
        let columns = data
            .names
            .iter()
            .enumerate()
            .map(|(j, name)| ColumnInfo { name: name.clone(), kind: data.kind(j) })
            .collect();
        let file = ModelFile {
            format: FORMAT.to_string(),
            version: VERSION,
            response: response.to_string(),
            columns,
            tau_basis: model.candidates[0].tau_basis.clone(),
            candidates: model.candidates.clone(),
            weights: model.weights.clone(),
            diagnostics,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(QpmaError::ModelFile(format!("unexpected format tag '{}'", self.format)));
        }
        if self.version != VERSION {
            return Err(QpmaError::ModelFile(format!(
                "unsupported version {} (this build reads version {VERSION})",
                self.version
            )));
        }
        let width = self.columns.len();
        let p = self.columns.iter().filter(|c| c.kind == ColumnKind::Continuous).count();
        if self.columns[..p].iter().any(|c| c.kind != ColumnKind::Continuous) {
            return Err(QpmaError::ModelFile("continuous columns must precede discrete ones".into()));
        }
        for c in &self.candidates {
            c.validate().map_err(|e| QpmaError::ModelFile(format!("invalid candidate: {e}")))?;
            if c.columns.width() != width || c.s() >= p {
                return Err(QpmaError::ModelFile("candidate column layout does not match the column list".into()));
            }
            if c.tau_basis != self.tau_basis {
                return Err(QpmaError::ModelFile("candidate tau basis differs from the model's".into()));
            }
        }
        WeightVector::new(self.weights.as_slice().to_vec())
            .map_err(|e| QpmaError::ModelFile(format!("invalid weights: {e}")))?;
        if self.weights.len() != self.candidates.len() {
            return Err(QpmaError::ModelFile(format!(
                "{} weights for {} candidates",
                self.weights.len(),
                self.candidates.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| QpmaError::ModelFile(format!("cannot parse model file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QpmaError::ModelFile(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Result<AveragedModel> {
        AveragedModel::new(self.candidates.clone(), self.weights.clone())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn n_continuous(&self) -> usize {
        self.columns.iter().filter(|c| c.kind == ColumnKind::Continuous).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidate::{CoefMatrix, ColumnOrder};
    use crate::spline::SplineSpec;

    fn sample() -> ModelFile {
        let data = Dataset::new(vec![0.0, 1.0], vec![0.1, 2.0, 0.9, 1.0], 1, 1).unwrap();
        let spline = SplineSpec::new(0.1, 0.9, 1, 2).unwrap();
        let mut theta = CoefMatrix::zeros(4, 2);
        theta.set(0, 0, 0.1 + 0.2);
        theta.set(3, 1, -1.0 / 3.0);
        theta.set(2, 1, 1e-300);
        let c = CandidateModel::new(spline, TauBasis::Gaussian, ColumnOrder::for_candidate(0, 2), theta).unwrap();
        let model = AveragedModel::new(vec![c], WeightVector::uniform(1)).unwrap();
        ModelFile::new("y", &data, &model, Diagnostics::default()).unwrap()
    }

    #[test]
    fn json_round_trip_is_exact() {
        let file = sample();
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.candidates[0].theta.get(3, 1).to_bits(), (-1.0f64 / 3.0).to_bits());
    }

    #[test]
    fn rejects_other_versions() {
        let mut file = sample();
        file.version = 99;
        let text = serde_json::to_string(&file).unwrap();
        assert!(ModelFile::from_json(&text).unwrap_err().to_string().contains("version"));
        assert!(ModelFile::from_json("{}").is_err());
    }
}
