//! Partially linear candidate models.
//!
//! Candidate `s` treats covariate `s` nonparametrically through a spline
//! block and enters every other covariate linearly:
//! `μ⁽ˢ⁾(x, τ) = B(x_s)ᵀ γ(τ) + x_{∖s}ᵀ β(τ)`, with `(γ(τ), β(τ)) = θ b(τ)`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{QpmaError, Result};
use crate::spline::SplineSpec;
use crate::tau_basis::{check_tau, TauBasis};

/// Dense column-major matrix; `data` is `vec(θ)` for a coefficient matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CoefMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CoefMatrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(QpmaError::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(CoefMatrix { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[c * self.rows + r]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[c * self.rows + r] = v;
    }

    /// `θ b` for a vector `b` of length `cols`.
    pub fn times(&self, b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (c, &bc) in b.iter().enumerate() {
            let col = &self.data[c * self.rows..(c + 1) * self.rows];
            for (o, &t) in out.iter_mut().zip(col) {
                *o += t * bc;
            }
        }
        out
    }

    /// `zᵀ θ` for a vector `z` of length `rows`.
    pub fn times_row(&self, z: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.rows)
            .map(|col| col.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Design {
    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(QpmaError::DimensionMismatch { expected: rows * cols, got: values.len() });
        }
        Ok(Design { rows, cols, values })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn without_row(&self, i: usize) -> Design {
        let mut values = Vec::with_capacity((self.rows - 1) * self.cols);
        values.extend_from_slice(&self.values[..i * self.cols]);
        values.extend_from_slice(&self.values[(i + 1) * self.cols..]);
        Design { rows: self.rows - 1, cols: self.cols, values }
    }

    /// Intercept column followed by all covariates; the linear baseline design.
    pub fn linear_with_intercept(data: &Dataset) -> Design {
        let w = data.width() + 1;
        let mut values = Vec::with_capacity(data.n() * w);
        for i in 0..data.n() {
            values.push(1.0);
            values.extend_from_slice(data.row(i));
        }
        Design { rows: data.n(), cols: w, values }
    }
}

/// Covariate layout of candidate `s`: which input column feeds the spline
/// and which columns, in order, form the linear block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnOrder {
    pub nonparametric: usize,
    pub linear: Vec<usize>,
}

impl ColumnOrder {
    /// Column `s` nonparametric, all others linear in input order.
    pub fn for_candidate(s: usize, width: usize) -> Self {
        ColumnOrder { nonparametric: s, linear: (0..width).filter(|&j| j != s).collect() }
    }

    pub fn width(&self) -> usize {
        self.linear.len() + 1
    }
}

/// Fills `z` with `(B(x_s), x_{∖s})`.
pub(crate) fn fill_regressors(spline: &SplineSpec, order: &ColumnOrder, x_row: &[f64], z: &mut [f64]) {
    let jn = spline.dim();
    spline.eval_into(x_row[order.nonparametric], &mut z[..jn]);
    for (dst, &j) in z[jn..].iter_mut().zip(&order.linear) {
        *dst = x_row[j];
    }
}

/// Design for candidate `s` (0-based): `n × (J_n + p + q − 1)`, no intercept
/// column since the spline block already sums to one.
pub fn build_design(data: &Dataset, s: usize, spline: &SplineSpec) -> Result<Design> {
    if s >= data.width() {
        return Err(QpmaError::InvalidArgument(format!("candidate index {s} out of range")));
    }
    if s >= data.p {
        return Err(QpmaError::NotContinuous(s));
    }
    let order = ColumnOrder::for_candidate(s, data.width());
    let cols = spline.dim() + order.linear.len();
    let mut values = vec![0.0; data.n() * cols];
    for (i, z) in values.chunks_exact_mut(cols).enumerate() {
        fill_regressors(spline, &order, data.row(i), z);
    }
    Ok(Design { rows: data.n(), cols, values })
}

/// `D(τ) = b(τ) ⊗ z`, so that `zᵀ θ b(τ) = D(τ)ᵀ vec(θ)`.
pub fn regression_vector(z: &[f64], tau: f64, basis: &TauBasis) -> Result<Vec<f64>> {
    let b = basis.eval(tau)?;
    Ok(b.iter().flat_map(|&bk| z.iter().map(move |&zj| bk * zj)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub spline: SplineSpec,
    pub tau_basis: TauBasis,
    pub columns: ColumnOrder,
    /// `(J_n + p + q − 1) × K`
    pub theta: CoefMatrix,
    #[serde(default = "default_true")]
    pub converged: bool,
}

fn default_true() -> bool {
    true
}

impl CandidateModel {
    pub fn new(spline: SplineSpec, tau_basis: TauBasis, columns: ColumnOrder, theta: CoefMatrix) -> Result<Self> {
        let m = CandidateModel { spline, tau_basis, columns, theta, converged: true };
        m.validate()?;
        Ok(m)
    }

    /// 0-based index of the nonparametric covariate.
    pub fn s(&self) -> usize {
        self.columns.nonparametric
    }

    pub fn n_regressors(&self) -> usize {
        self.spline.dim() + self.columns.linear.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.spline.validate()?;
        self.tau_basis.validate()?;
        if self.theta.rows != self.n_regressors() {
            return Err(QpmaError::DimensionMismatch { expected: self.n_regressors(), got: self.theta.rows });
        }
        if self.theta.cols != self.tau_basis.len() {
            return Err(QpmaError::DimensionMismatch { expected: self.tau_basis.len(), got: self.theta.cols });
        }
        Ok(())
    }

    pub fn regressors(&self, x_row: &[f64]) -> Result<Vec<f64>> {
        let width = self.columns.width();
        if x_row.len() != width {
            return Err(QpmaError::DimensionMismatch { expected: width, got: x_row.len() });
        }
        let mut z = vec![0.0; self.n_regressors()];
        fill_regressors(&self.spline, &self.columns, x_row, &mut z);
        Ok(z)
    }

    /// Coefficient curve `ξ(τ) = θ b(τ)`.
    pub fn coefficients(&self, tau: f64) -> Result<Vec<f64>> {
        Ok(self.theta.times(&self.tau_basis.eval(tau)?))
    }

    pub fn predict_quantile(&self, x_row: &[f64], tau: f64) -> Result<f64> {
        check_tau(tau)?;
        let z = self.regressors(x_row)?;
        let xi = self.coefficients(tau)?;
        Ok(z.iter().zip(&xi).map(|(a, b)| a * b).sum())
    }

    /// Predictions for one row on several τ values, sharing the regressors.
    pub fn predict_grid(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        let z = self.regressors(x_row)?;
        let zt: Vec<f64> = (0..self.theta.cols)
            .map(|c| {
                let col = &self.theta.data[c * self.theta.rows..(c + 1) * self.theta.rows];
                z.iter().zip(col).map(|(a, b)| a * b).sum()
            })
            .collect();
        let mut b = vec![0.0; self.theta.cols];
        taus.iter()
            .map(|&tau| {
                check_tau(tau)?;
                self.tau_basis.eval_into(tau, &mut b);
                Ok(zt.iter().zip(&b).map(|(a, c)| a * c).sum())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn hat() -> SplineSpec {
        SplineSpec::new(0.0, 1.0, 1, 2).unwrap()
    }

    #[test]
    fn design_rows() {
        let data = Dataset::new(vec![1.0, 2.0], vec![0.5, 7.0, 0.0, 3.0], 2, 0).unwrap();
        let d = build_design(&data, 0, &hat()).unwrap();
        assert_eq!(d.cols, 4);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.0, 7.0]);
        assert_eq!(d.row(1), &[1.0, 0.0, 0.0, 3.0]);

        let only = Dataset::new(vec![1.0, 2.0], vec![0.0, 1.0], 1, 0).unwrap();
        assert_eq!(build_design(&only, 0, &hat()).unwrap().cols, 3);

        let mixed = Dataset::new(vec![1.0, 2.0], vec![0.1, 0.0, 0.9, 1.0], 1, 1).unwrap();
        assert!(matches!(build_design(&mixed, 1, &hat()), Err(QpmaError::NotContinuous(1))));
    }

    #[test]
    fn kronecker_layout() {
        let basis = TauBasis::Custom(vec![crate::tau_basis::TauPrimitive::One]);
        assert_eq!(regression_vector(&[3.0, 4.0], 0.3, &basis).unwrap(), vec![3.0, 4.0]);
        // b = (1, τ) at τ = 2 is not allowed; use cubic-poly to get a known b
        let cubic = TauBasis::CubicPoly;
        let d = regression_vector(&[3.0, 4.0], 0.5, &cubic).unwrap();
        assert_eq!(d, vec![3.0, 4.0, 1.5, 2.0, 0.75, 1.0, 0.375, 0.5]);
    }

    #[test]
    fn kronecker_vec_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let theta = CoefMatrix::from_vec(3, 2, (0..6).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let tau = rng.random_range(0.01..0.99);
            let b = TauBasis::Gaussian.eval(tau).unwrap();
            let direct: f64 = z.iter().zip(theta.times(&b)).map(|(a, c)| a * c).sum();
            let d = regression_vector(&z, tau, &TauBasis::Gaussian).unwrap();
            let via_vec: f64 = d.iter().zip(&theta.data).map(|(a, c)| a * c).sum();
            assert!((direct - via_vec).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    fn model(theta: CoefMatrix) -> CandidateModel {
        CandidateModel::new(hat(), TauBasis::Gaussian, ColumnOrder::for_candidate(0, 2), theta).unwrap()
    }

    #[test]
    fn zero_and_constant_predictions() {
        let m = model(CoefMatrix::zeros(4, 2));
        assert_eq!(m.predict_quantile(&[0.3, 5.0], 0.7).unwrap(), 0.0);

        let mut theta = CoefMatrix::zeros(4, 2);
        for r in 0..3 {
            theta.set(r, 0, 2.5);
        }
        let m = model(theta);
        for x in [0.0, 0.2, 0.77, 1.0, 4.0] {
            for tau in [0.1, 0.5, 0.93] {
                assert_abs_diff_eq!(m.predict_quantile(&[x, 0.0], tau).unwrap(), 2.5, epsilon = 1e-14);
            }
        }
        assert!(m.predict_quantile(&[0.3], 0.5).is_err());
        assert!(m.predict_quantile(&[0.3, 1.0], 1.0).is_err());
        assert_eq!(
            m.predict_grid(&[0.3, 1.0], &[0.2, 0.8]).unwrap(),
            vec![m.predict_quantile(&[0.3, 1.0], 0.2).unwrap(), m.predict_quantile(&[0.3, 1.0], 0.8).unwrap()]
        );
    }

    proptest! {
        #[test]
        fn prediction_is_linear_in_theta(
            a in proptest::collection::vec(-5.0f64..5.0, 8),
            b in proptest::collection::vec(-5.0f64..5.0, 8),
            x0 in 0.0f64..1.0, x1 in -3.0f64..3.0, tau in 0.01f64..0.99,
        ) {
            let ma = model(CoefMatrix::from_vec(4, 2, a.clone()).unwrap());
            let mb = model(CoefMatrix::from_vec(4, 2, b.clone()).unwrap());
            let sum: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u + v).collect();
            let ms = model(CoefMatrix::from_vec(4, 2, sum).unwrap());
            let row = [x0, x1];
            let lhs = ms.predict_quantile(&row, tau).unwrap();
            let rhs = ma.predict_quantile(&row, tau).unwrap() + mb.predict_quantile(&row, tau).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn permuting_covariates_with_column_order(
            theta in proptest::collection::vec(-5.0f64..5.0, 10),
            row in proptest::collection::vec(0.0f64..1.0, 3),
            tau in 0.01f64..0.99,
        ) {
            // candidate with column 0 nonparametric, linear block (1, 2)
            let spline = hat();
            let theta = CoefMatrix::from_vec(5, 2, theta).unwrap();
            let m = CandidateModel::new(spline.clone(), TauBasis::Gaussian, ColumnOrder::for_candidate(0, 3), theta.clone()).unwrap();
            // same model on input with columns 0 and 2 swapped
            let swapped = CandidateModel::new(
                spline,
                TauBasis::Gaussian,
                ColumnOrder { nonparametric: 2, linear: vec![1, 0] },
                theta,
            ).unwrap();
            let permuted = [row[2], row[1], row[0]];
            let a = m.predict_quantile(&row, tau).unwrap();
            let b = swapped.predict_quantile(&permuted, tau).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
