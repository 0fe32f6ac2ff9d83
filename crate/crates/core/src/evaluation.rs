//! Out-of-sample quantile prediction error and cross-method comparisons.

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{QpmaError, Result};
use crate::solver::check_loss;

/// Anything that predicts conditional quantiles for one covariate row.
pub trait QuantilePredictor {
    /// Predictions for `x_row` at each τ in `taus`.
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>>;
}

/// Adapter for closures `(x_row, τ) -> prediction`.
pub struct FnPredictor<F>(pub F);

impl<F> QuantilePredictor for FnPredictor<F>
where
    F: Fn(&[f64], f64) -> f64,
{
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        Ok(taus.iter().map(|&t| (self.0)(x_row, t)).collect())
    }
}

/// `Σ_k Σ_{i∈I} ρ_{τ_k}(Y_i − μ̂(X_i, τ_k)) / (m |I|)` with `m` the grid length.
pub fn oaqpe(predict: &dyn QuantilePredictor, test: &Dataset, grid: &[f64]) -> Result<f64> {
    if test.n() == 0 || grid.is_empty() {
        return Err(QpmaError::InvalidArgument("empty test set or grid".into()));
    }
    let mut total = 0.0;
    for i in 0..test.n() {
        let preds = predict.predict_taus(test.row(i), grid)?;
        let yi = test.y[i];
        total += grid.iter().zip(&preds).map(|(&t, &mu)| check_loss(t, yi - mu)).sum::<f64>();
    }
    Ok(total / (grid.len() * test.n()) as f64)
}

/// Fraction of rows whose predicted quantiles decrease somewhere along the
/// (increasing) grid.
pub fn crossing_diagnostic(predict: &dyn QuantilePredictor, test: &Dataset, grid: &[f64]) -> Result<f64> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QpmaError::InvalidArgument("crossing diagnostic needs an increasing grid".into()));
    }
    if test.n() == 0 {
        return Ok(0.0);
    }
    let mut crossed = 0usize;
    for i in 0..test.n() {
        let preds = predict.predict_taus(test.row(i), grid)?;
        if preds.windows(2).any(|w| w[1] < w[0]) {
            crossed += 1;
        }
    }
    Ok(crossed as f64 / test.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub oaqpe_by_rep: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureRow {
    pub method: String,
    pub average_oaqpe: f64,
    /// Standard deviation across replications.
    pub sd_oaqpe: f64,
    pub winning_ratio: f64,
    /// `None` for the reference method itself.
    pub loss_to_reference: Option<f64>,
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for a single value.
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Average OAQPE, winning ratio and loss-to-reference for each method.
/// Both indicator counts use strict inequalities, so ties count for nobody.
pub fn comparison_measures(results: &[MethodResult], reference: &str) -> Result<Vec<MeasureRow>> {
    let Some(first) = results.first() else {
        return Err(QpmaError::InvalidArgument("no methods to compare".into()));
    };
    let reps = first.oaqpe_by_rep.len();
    if reps == 0 {
        return Err(QpmaError::InvalidArgument("no replications".into()));
    }
    for r in results {
        if r.oaqpe_by_rep.len() != reps {
            return Err(QpmaError::DimensionMismatch { expected: reps, got: r.oaqpe_by_rep.len() });
        }
    }
    let reference_values = results.iter().find(|r| r.method == reference).map(|r| &r.oaqpe_by_rep);
    Ok(results
        .iter()
        .enumerate()
        .map(|(a, res)| {
            let wins = (0..reps)
                .filter(|&r| {
                    let v = res.oaqpe_by_rep[r];
                    results.iter().enumerate().all(|(b, other)| b == a || v < other.oaqpe_by_rep[r])
                })
                .count();
            let loss = match reference_values {
                Some(refv) if res.method != reference => {
                    Some((0..reps).filter(|&r| refv[r] < res.oaqpe_by_rep[r]).count() as f64 / reps as f64)
                }
                _ => None,
            };
            MeasureRow {
                method: res.method.clone(),
                average_oaqpe: mean(&res.oaqpe_by_rep),
                sd_oaqpe: sd(&res.oaqpe_by_rep),
                winning_ratio: wins as f64 / reps as f64,
                loss_to_reference: loss,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tau_basis::normal_quantile;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_point(y: f64) -> Dataset {
        Dataset::new(vec![y], vec![0.0], 1, 0).unwrap()
    }

    fn mr(name: &str, v: &[f64]) -> MethodResult {
        MethodResult { method: name.into(), oaqpe_by_rep: v.to_vec() }
    }

    #[test]
    fn oaqpe_direct_formula() {
        let zero = FnPredictor(|_: &[f64], _| 0.0);
        let got = oaqpe(&zero, &one_point(1.0), &[0.25, 0.5, 0.75]).unwrap();
        assert_abs_diff_eq!(got, 0.5, epsilon = 1e-15);

        let exact = FnPredictor(|_: &[f64], _| 3.0);
        assert_eq!(oaqpe(&exact, &one_point(3.0), &[0.1, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn crossing() {
        let grid = [0.1, 0.3, 0.5, 0.9];
        let data = Dataset::new(vec![0.0; 3], vec![0.1, 0.2, 0.3], 1, 0).unwrap();
        let mono = FnPredictor(|_: &[f64], t| normal_quantile(t));
        assert_eq!(crossing_diagnostic(&mono, &data, &grid).unwrap(), 0.0);
        let flat = FnPredictor(|_: &[f64], _| 1.0);
        assert_eq!(crossing_diagnostic(&flat, &data, &grid).unwrap(), 0.0);
        let down = FnPredictor(|_: &[f64], t: f64| -t);
        assert_eq!(crossing_diagnostic(&down, &data, &grid).unwrap(), 1.0);
    }

    #[test]
    fn measures_two_methods() {
        let rows = comparison_measures(&[mr("a", &[1.0, 3.0]), mr("b", &[2.0, 2.0])], "a").unwrap();
        assert_eq!(rows[0].winning_ratio, 0.5);
        assert_eq!(rows[1].winning_ratio, 0.5);
        assert_eq!(rows[1].loss_to_reference, Some(0.5));
        assert_eq!(rows[0].loss_to_reference, None);
        assert_eq!(rows[0].average_oaqpe, 2.0);
    }

    #[test]
    fn dominated_and_ties() {
        let rows = comparison_measures(&[mr("ref", &[1.0, 1.0, 1.0]), mr("bad", &[2.0, 3.0, 4.0])], "ref").unwrap();
        assert_eq!(rows[1].winning_ratio, 0.0);
        assert_eq!(rows[1].loss_to_reference, Some(1.0));

        let rows = comparison_measures(&[mr("x", &[1.0]), mr("y", &[1.0])], "x").unwrap();
        assert_eq!(rows[0].winning_ratio, 0.0);
        assert_eq!(rows[1].winning_ratio, 0.0);
        assert_eq!(rows[1].loss_to_reference, Some(0.0));

        assert!(comparison_measures(&[mr("x", &[1.0]), mr("y", &[1.0, 2.0])], "x").is_err());
    }

    proptest! {
        #[test]
        fn winning_ratios_sum_to_at_most_one(
            vals in proptest::collection::vec(proptest::collection::vec(0u8..4, 6), 3),
        ) {
            let results: Vec<_> = vals.iter().enumerate()
                .map(|(j, v)| mr(&format!("m{j}"), &v.iter().map(|&x| x as f64).collect::<Vec<_>>()))
                .collect();
            let rows = comparison_measures(&results, "m0").unwrap();
            let total: f64 = rows.iter().map(|r| r.winning_ratio).sum();
            prop_assert!(total <= 1.0 + 1e-12);

            // permutation equivariance
            let mut reversed = results.clone();
            reversed.reverse();
            let rrows = comparison_measures(&reversed, "m0").unwrap();
            for row in &rows {
                let other = rrows.iter().find(|r| r.method == row.method).unwrap();
                prop_assert_eq!(row, other);
            }
        }
    }
}
