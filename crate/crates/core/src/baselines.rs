//! Reference methods evaluated alongside the averaged model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::averaging::{AveragedModel, WeightVector};
use crate::candidate::{CandidateModel, CoefMatrix, Design};
use crate::data::Dataset;
use crate::error::{QpmaError, Result};
use crate::evaluation::QuantilePredictor;
use crate::solver::{default_smoothing, fit, fit_on_grid, FitConfig};
use crate::tau_basis::{check_tau, TauBasis};

fn intercept_row(x_row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    std::iter::once(1.0).chain(x_row.iter().copied())
}

/// Separate linear quantile regressions, one per grid level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QlrmModel {
    pub taus: Vec<f64>,
    /// `coefficients[k]` is `(β₀, β)` at `taus[k]`.
    pub coefficients: Vec<Vec<f64>>,
}

impl QlrmModel {
    fn nearest(&self, tau: f64) -> usize {
        let pos = self.taus.partition_point(|&t| t < tau);
        if pos == 0 {
            0
        } else if pos == self.taus.len() || tau - self.taus[pos - 1] <= self.taus[pos] - tau {
            pos - 1
        } else {
            pos
        }
    }

    pub fn predict_quantile(&self, x_row: &[f64], tau: f64) -> Result<f64> {
        check_tau(tau)?;
        let beta = &self.coefficients[self.nearest(tau)];
        if beta.len() != x_row.len() + 1 {
            return Err(QpmaError::DimensionMismatch { expected: beta.len() - 1, got: x_row.len() });
        }
        Ok(intercept_row(x_row).zip(beta).map(|(a, b)| a * b).sum())
    }
}

impl QuantilePredictor for QlrmModel {
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        taus.iter().map(|&t| self.predict_quantile(x_row, t)).collect()
    }
}

/// Fits the intercept-plus-all-covariates model separately at each τ in
/// `grid` (which must be increasing). Each level after the first starts from
/// its neighbour's solution.
pub fn fit_qlrm(data: &Dataset, grid: &[f64], cfg: &FitConfig) -> Result<QlrmModel> {
    if grid.is_empty() {
        return Err(QpmaError::InvalidArgument("empty tau grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QpmaError::InvalidArgument("tau grid must be increasing".into()));
    }
    let design = Design::linear_with_intercept(data);
    let basis = TauBasis::constant();
    let h = cfg.smoothing.unwrap_or_else(|| default_smoothing(&data.y));
    let mut coefficients = Vec::with_capacity(grid.len());
    let mut previous: Option<CoefMatrix> = None;
    for &tau in grid {
        check_tau(tau)?;
        let mut level_cfg = cfg.clone();
        level_cfg.warm_start = previous.take();
        let res = fit_on_grid(&design, &data.y, &basis, &[tau], h, &level_cfg)?;
        coefficients.push(res.theta.data.clone());
        previous = Some(res.theta);
    }
    Ok(QlrmModel { taus: grid.to_vec(), coefficients })
}

/// Quantile-coefficient model with every covariate entering linearly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrcmModel {
    pub basis: TauBasis,
    /// `(1 + p + q) × K`, intercept first.
    pub theta: CoefMatrix,
}

impl QrcmModel {
    pub fn predict_quantile(&self, x_row: &[f64], tau: f64) -> Result<f64> {
        if self.theta.rows != x_row.len() + 1 {
            return Err(QpmaError::DimensionMismatch { expected: self.theta.rows - 1, got: x_row.len() });
        }
        let coefs = self.theta.times(&self.basis.eval(tau)?);
        Ok(intercept_row(x_row).zip(&coefs).map(|(a, b)| a * b).sum())
    }
}

impl QuantilePredictor for QrcmModel {
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        taus.iter().map(|&t| self.predict_quantile(x_row, t)).collect()
    }
}

pub fn fit_qrcm_linear(data: &Dataset, basis: &TauBasis, cfg: &FitConfig) -> Result<QrcmModel> {
    let design = Design::linear_with_intercept(data);
    let res = fit(&design, &data.y, basis, cfg)?;
    Ok(QrcmModel { basis: basis.clone(), theta: res.theta })
}

pub fn equal_weight_model(candidates: Vec<CandidateModel>) -> Result<AveragedModel> {
    let p = candidates.len();
    AveragedModel::new(candidates, WeightVector::uniform(p.max(1)))
}

/// Puts all weight on candidate `s` (0-based), or on one drawn uniformly
/// from `rng` when `s` is `None`. Returns the chosen index too.
pub fn single_submodel<R: Rng + ?Sized>(
    candidates: Vec<CandidateModel>,
    s: Option<usize>,
    rng: &mut R,
) -> Result<(AveragedModel, usize)> {
    let p = candidates.len();
    if p == 0 {
        return Err(QpmaError::InvalidArgument("no candidates".into()));
    }
    let s = match s {
        Some(s) if s >= p => {
            return Err(QpmaError::InvalidArgument(format!("sub-model {} out of range 1..={p}", s + 1)))
        }
        Some(s) => s,
        None => rng.random_range(0..p),
    };
    Ok((AveragedModel::new(candidates, WeightVector::vertex(p, s))?, s))
}
