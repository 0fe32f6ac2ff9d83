//! Normalized B-spline bases with equally spaced interior knots.

use serde::{Deserialize, Serialize};

use crate::error::{QpmaError, Result};

/// Knot sequence and order of a clamped univariate B-spline basis.
///
/// Boundary knots are repeated `order` times, so the basis has
/// `n_interior + order` functions that sum to one on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineSpec {
    pub order: usize,
    pub n_interior: usize,
    pub lower: f64,
    pub upper: f64,
    pub knots: Vec<f64>,
}

/// Default number of interior knots, `⌊n^{1/5}⌋`.
pub fn default_interior_knots(n: usize) -> usize {
    let mut k = (n as f64).powf(0.2).floor() as usize;
    // guard against pow rounding just below an exact integer root
    while ((k + 1) as f64).powi(5) <= n as f64 {
        k += 1;
    }
    while k > 0 && (k as f64).powi(5) > n as f64 {
        k -= 1;
    }
    k
}

impl SplineSpec {
    pub fn new(lower: f64, upper: f64, n_interior: usize, order: usize) -> Result<Self> {
        if order < 2 {
            return Err(QpmaError::InvalidSpline(format!("order must be >= 2, got {order}")));
        }
        if !(lower.is_finite() && upper.is_finite()) {
            return Err(QpmaError::InvalidSpline("non-finite domain".into()));
        }
        if lower >= upper {
            return Err(QpmaError::DegenerateDomain);
        }
        let mut knots = Vec::with_capacity(n_interior + 2 * order);
        knots.extend(std::iter::repeat_n(lower, order));
        let width = upper - lower;
        for j in 1..=n_interior {
            knots.push(lower + width * j as f64 / (n_interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(upper, order));
        Ok(SplineSpec { order, n_interior, lower, upper, knots })
    }

    /// Builds the spec on the range of `x_values`.
    pub fn from_values(x_values: &[f64], n_interior: usize, order: usize) -> Result<Self> {
        if x_values.is_empty() {
            return Err(QpmaError::InvalidSpline("no covariate values".into()));
        }
        let (lo, hi) = x_values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self::new(lo, hi, n_interior, order)
    }

    /// Number of basis functions, `J_n = N_n + d`.
    pub fn dim(&self) -> usize {
        self.n_interior + self.order
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let fresh = SplineSpec::new(self.lower, self.upper, self.n_interior, self.order)?;
        if fresh.knots.len() != self.knots.len()
            || fresh.knots.iter().zip(&self.knots).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(QpmaError::InvalidSpline("knot sequence does not match domain".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, &mut out);
        out
    }

    /// Cox–de Boor evaluation into `out` (length `dim()`); `x` is clamped to
    /// `[lower, upper]`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        out.iter_mut().for_each(|v| *v = 0.0);
        let d = self.order;
        let t = &self.knots;
        let x = if x.is_nan() { self.lower } else { x.clamp(self.lower, self.upper) };

        // knot span: t[span] <= x < t[span+1], with the right end folded into
        // the last non-empty span
        let last = self.dim() - 1;
        let mut span = d - 1;
        while span < last && x >= t[span + 1] {
            span += 1;
        }

        // order-1 value is 1 on the span; raise order one step at a time.
        // local[j] holds B_{span-k+j, k+1}
        let mut local = [0.0f64; 16];
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        let mut heap;
        let (local, left, right): (&mut [f64], &mut [f64], &mut [f64]) = if d <= 16 {
            (&mut local[..d], &mut left[..d], &mut right[..d])
        } else {
            heap = vec![0.0; 3 * d];
            let (a, rest) = heap.split_at_mut(d);
            let (b, c) = rest.split_at_mut(d);
            (a, b, c)
        };
        local[0] = 1.0;
        for k in 1..d {
            left[k] = x - t[span + 1 - k];
            right[k] = t[span + k] - x;
            let mut saved = 0.0;
            for r in 0..k {
                let denom = right[r + 1] + left[k - r];
                let temp = if denom > 0.0 { local[r] / denom } else { 0.0 };
                local[r] = saved + right[r + 1] * temp;
                saved = left[k - r] * temp;
            }
            local[k] = saved;
        }
        let first = span + 1 - d;
        out[first..first + d].copy_from_slice(local);
    }
}
