//! Integrated quantile check-loss minimization.
//!
//! The objective for one candidate design `Z` (rows `z_i`) and τ-basis `b` is
//! the grid average
//!
//! ```text
//! L(θ) = (1/m) Σ_k (1/n) Σ_i ρ_{τ_k}(y_i − z_iᵀ θ b(τ_k)),   τ_k = k/(m+1)
//! ```
//!
//! It is convex and piecewise linear in `vec(θ)`. We minimize the Moreau
//! envelope of the check loss with parameter `h` (quadratic on
//! `[(τ−1)h, τh]`, slopes `τ−1` and `τ` outside) by damped Newton steps with
//! Armijo backtracking, then halve `h` and restart from the previous solution.
//! The surrogate is within `h/2` of `ρ_τ` everywhere.

use nalgebra::{DMatrix, DVector};

use crate::candidate::{CoefMatrix, Design};
use crate::error::{QpmaError, Result};
use crate::tau_basis::{tau_grid, TauBasis};

/// Quantile check loss `ρ_τ(u) = u(τ − 1{u<0})`.
#[inline]
pub fn check_loss(tau: f64, u: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Moreau envelope of `ρ_τ` with parameter `h`: `(value, first, second)`
/// derivatives in `u`.
#[inline]
pub fn smoothed_check_loss(tau: f64, u: f64, h: f64) -> (f64, f64, f64) {
    let hi = tau * h;
    let lo = (tau - 1.0) * h;
    if u >= hi {
        (tau * u - 0.5 * tau * hi, tau, 0.0)
    } else if u <= lo {
        ((tau - 1.0) * u - 0.5 * (tau - 1.0) * lo, tau - 1.0, 0.0)
    } else {
        (0.5 * u * u / h, u / h, 1.0 / h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// τ-grid resolution `m` of the integral; `None` uses the number of
    /// training rows.
    pub grid_size: Option<usize>,
    /// Final-stage smoothing is `smoothing / 2^continuation`; `None` uses
    /// `0.1 · MAD(y)`.
    pub smoothing: Option<f64>,
    pub continuation: usize,
    pub max_iters: usize,
    /// Relative objective-decrease stopping threshold.
    pub tol: f64,
    pub warm_start: Option<CoefMatrix>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { grid_size: None, smoothing: None, continuation: 2, max_iters: 200, tol: 1e-9, warm_start: None }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == Some(0) {
            return Err(QpmaError::Config("grid size must be >= 1".into()));
        }
        if let Some(h) = self.smoothing {
            if !(h > 0.0 && h.is_finite()) {
                return Err(QpmaError::Config(format!("smoothing must be > 0, got {h}")));
            }
        }
        if !(self.tol > 0.0) {
            return Err(QpmaError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(QpmaError::Config("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: CoefMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// Exact (unsmoothed) integrated loss at `theta`.
    pub loss: f64,
    /// Surrogate objective at `theta` for the final smoothing level.
    pub smoothed_loss: f64,
    /// Final smoothing parameter.
    pub smoothing: f64,
    /// Accepted surrogate values, tagged with the continuation level.
    pub history: Vec<(usize, f64)>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Default smoothing scale `0.1 · MAD(y)`, with fallbacks for degenerate `y`.
pub fn default_smoothing(y: &[f64]) -> f64 {
    let mut work = y.to_vec();
    let med = median(&mut work);
    let mut dev: Vec<f64> = y.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    if mad > 0.0 {
        return 0.1 * mad;
    }
    let mean_dev = dev.iter().sum::<f64>() / dev.len().max(1) as f64;
    if mean_dev > 0.0 {
        return 0.1 * mean_dev;
    }
    1e-8 * (1.0 + med.abs())
}

fn check_inputs(design: &Design, y: &[f64], basis: &TauBasis, grid: &[f64]) -> Result<()> {
    if design.rows != y.len() {
        return Err(QpmaError::DimensionMismatch { expected: design.rows, got: y.len() });
    }
    if design.rows == 0 {
        return Err(QpmaError::Data("empty design".into()));
    }
    if grid.is_empty() {
        return Err(QpmaError::InvalidArgument("empty tau grid".into()));
    }
    basis.validate()
}

fn check_theta(theta: &CoefMatrix, design: &Design, basis: &TauBasis) -> Result<()> {
    if theta.rows != design.cols || theta.cols != basis.len() {
        return Err(QpmaError::DimensionMismatch {
            expected: design.cols * basis.len(),
            got: theta.rows * theta.cols,
        });
    }
    Ok(())
}

/// `F = Z θ`, row-major `n × K`.
fn fitted_coefs(design: &Design, theta: &[f64], k: usize) -> Vec<f64> {
    let j = design.cols;
    let mut out = vec![0.0; design.rows * k];
    for (i, f) in out.chunks_exact_mut(k).enumerate() {
        let z = design.row(i);
        for (c, fc) in f.iter_mut().enumerate() {
            *fc = z.iter().zip(&theta[c * j..(c + 1) * j]).map(|(a, b)| a * b).sum();
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact discretized integrated check loss.
pub fn integrated_loss(
    theta: &CoefMatrix,
    design: &Design,
    y: &[f64],
    basis: &TauBasis,
    grid: &[f64],
) -> Result<f64> {
    check_inputs(design, y, basis, grid)?;
    check_theta(theta, design, basis)?;
    let k = basis.len();
    let bgrid = basis.eval_grid(grid)?;
    let f = fitted_coefs(design, &theta.data, k);
    Ok(exact_loss(&f, y, &bgrid, grid, k))
}

fn exact_loss(f: &[f64], y: &[f64], bgrid: &[f64], grid: &[f64], k: usize) -> f64 {
    let mut total = 0.0;
    for (fi, &yi) in f.chunks_exact(k).zip(y) {
        let mut row = 0.0;
        for (bk, &tau) in bgrid.chunks_exact(k).zip(grid) {
            row += check_loss(tau, yi - dot(fi, bk));
        }
        total += row;
    }
    total / (y.len() * grid.len()) as f64
}

/// Surrogate objective and its gradient with respect to `vec(θ)`.
pub fn smoothed_objective(
    theta: &CoefMatrix,
    design: &Design,
    y: &[f64],
    basis: &TauBasis,
    grid: &[f64],
    h: f64,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(design, y, basis, grid)?;
    check_theta(theta, design, basis)?;
    let problem = Problem::new(design, y, basis, grid)?;
    let f = fitted_coefs(design, &theta.data, problem.k);
    let (value, grad, _) = problem.evaluate(&f, h, false);
    Ok((value, grad))
}

struct Problem<'a> {
    design: &'a Design,
    y: &'a [f64],
    grid: &'a [f64],
    bgrid: Vec<f64>,
    k: usize,
}

impl<'a> Problem<'a> {
    fn new(design: &'a Design, y: &'a [f64], basis: &TauBasis, grid: &'a [f64]) -> Result<Self> {
        Ok(Problem { design, y, grid, bgrid: basis.eval_grid(grid)?, k: basis.len() })
    }

    fn dim(&self) -> usize {
        self.design.cols * self.k
    }

    /// `max_{c,a} Σ_i z_ia² Σ_k b_kc² / (n m)`
    fn max_curvature(&self) -> f64 {
        let jdim = self.design.cols;
        let mut zsq = vec![0.0; jdim];
        for i in 0..self.design.rows {
            for (acc, z) in zsq.iter_mut().zip(self.design.row(i)) {
                *acc += z * z;
            }
        }
        let mut bsq = vec![0.0; self.k];
        for bk in self.bgrid.chunks_exact(self.k) {
            for (acc, b) in bsq.iter_mut().zip(bk) {
                *acc += b * b;
            }
        }
        let zmax = zsq.iter().fold(0.0f64, |m, v| m.max(*v));
        let bmax = bsq.iter().fold(0.0f64, |m, v| m.max(*v));
        zmax * bmax * self.scale()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.y.len() * self.grid.len()) as f64
    }

    fn value(&self, f: &[f64], h: f64) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for (fi, &yi) in f.chunks_exact(k).zip(self.y) {
            for (bk, &tau) in self.bgrid.chunks_exact(k).zip(self.grid) {
                total += smoothed_check_loss(tau, yi - dot(fi, bk), h).0;
            }
        }
        total * self.scale()
    }

    /// Value along `f + α·df` without materializing the shifted matrix.
    fn value_along(&self, f: &[f64], df: &[f64], alpha: f64, h: f64) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        let mut shifted = [0.0f64; 32];
        let mut heap = Vec::new();
        let buf: &mut [f64] = if k <= 32 {
            &mut shifted[..k]
        } else {
            heap.resize(k, 0.0);
            &mut heap
        };
        for ((fi, dfi), &yi) in f.chunks_exact(k).zip(df.chunks_exact(k)).zip(self.y) {
            for c in 0..k {
                buf[c] = fi[c] + alpha * dfi[c];
            }
            for (bk, &tau) in self.bgrid.chunks_exact(k).zip(self.grid) {
                total += smoothed_check_loss(tau, yi - dot(buf, bk), h).0;
            }
        }
        total * self.scale()
    }

    /// Value, gradient and (optionally) Hessian in `vec(θ)` coordinates,
    /// index `c·J + j`.
    fn evaluate(&self, f: &[f64], h: f64, hessian: bool) -> (f64, Vec<f64>, Option<DMatrix<f64>>) {
        let k = self.k;
        let jdim = self.design.cols;
        let p = jdim * k;
        let mut value = 0.0;
        let mut grad = vec![0.0; p];
        let mut hess = if hessian { Some(DMatrix::<f64>::zeros(p, p)) } else { None };
        let mut g_row = vec![0.0; k];
        let mut w_row = vec![0.0; k * k];
        for (i, (fi, &yi)) in f.chunks_exact(k).zip(self.y).enumerate() {
            g_row.iter_mut().for_each(|v| *v = 0.0);
            w_row.iter_mut().for_each(|v| *v = 0.0);
            let mut any_curv = false;
            for (bk, &tau) in self.bgrid.chunks_exact(k).zip(self.grid) {
                let (v, d1, d2) = smoothed_check_loss(tau, yi - dot(fi, bk), h);
                value += v;
                for c in 0..k {
                    g_row[c] += d1 * bk[c];
                }
                if hessian && d2 > 0.0 {
                    any_curv = true;
                    for c in 0..k {
                        let s = d2 * bk[c];
                        for e in c..k {
                            w_row[c * k + e] += s * bk[e];
                        }
                    }
                }
            }
            let z = self.design.row(i);
            for c in 0..k {
                let gc = g_row[c];
                if gc != 0.0 {
                    for (gj, &zj) in grad[c * jdim..(c + 1) * jdim].iter_mut().zip(z) {
                        *gj -= gc * zj;
                    }
                }
            }
            if let (Some(hm), true) = (hess.as_mut(), any_curv) {
                for c in 0..k {
                    for e in c..k {
                        let w = w_row[c * k + e];
                        if w == 0.0 {
                            continue;
                        }
                        for a in 0..jdim {
                            let wa = w * z[a];
                            if wa == 0.0 {
                                continue;
                            }
                            let row = c * jdim + a;
                            let start = if c == e { a } else { 0 };
                            for b in start..jdim {
                                let col = e * jdim + b;
                                hm[(row, col)] += wa * z[b];
                            }
                        }
                    }
                }
            }
        }
        let scale = self.scale();
        value *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if let Some(hm) = hess.as_mut() {
            // fill lower triangle from upper
            for r in 0..p {
                for c in (r + 1)..p {
                    let v = hm[(r, c)] * scale;
                    hm[(r, c)] = v;
                    hm[(c, r)] = v;
                }
                hm[(r, r)] *= scale;
            }
        }
        (value, grad, hess)
    }
}

/// Rank check plus least-squares coefficients of `y` on the design.
fn rank_checked_least_squares(design: &Design, y: &[f64]) -> Result<Vec<f64>> {
    let z = DMatrix::from_row_slice(design.rows, design.cols, &design.values);
    let svd = z.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if design.rows < design.cols || !(smax > 0.0) || smin < 1e-10 * smax {
        return Err(QpmaError::CollinearDesign);
    }
    let rhs = DVector::from_column_slice(y);
    let beta = svd
        .solve(&rhs, 0.0)
        .map_err(|e| QpmaError::Numerical(format!("least-squares start failed: {e}")))?;
    Ok(beta.iter().copied().collect())
}

fn cold_start(design: &Design, y: &[f64], k: usize) -> Result<Vec<f64>> {
    let beta = rank_checked_least_squares(design, y)?;
    let mut theta = vec![0.0; design.cols * k];
    theta[..design.cols].copy_from_slice(&beta);
    Ok(theta)
}

fn newton_level(
    problem: &Problem<'_>,
    theta: &mut [f64],
    h: f64,
    tol: f64,
    budget: usize,
    level: usize,
    history: &mut Vec<(usize, f64)>,
) -> (bool, usize, f64) {
    let p = problem.dim();
    let k = problem.k;
    let mut f = fitted_coefs(problem.design, theta, k);
    let mut iters = 0;
    // largest diagonal the Hessian could have (every residual in the
    // quadratic zone); sets the scale for damping
    let full_curv = problem.max_curvature() / h;
    let floor = 1e-12 * full_curv.max(f64::MIN_POSITIVE);
    let mut damping = 1e-8 * full_curv.max(f64::MIN_POSITIVE);
    let mut current = problem.value(&f, h);
    history.push((level, current));
    loop {
        if iters >= budget {
            return (false, iters, current);
        }
        iters += 1;
        let (value, grad, hess) = problem.evaluate(&f, h, true);
        current = value;
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 {
            return (true, iters, current);
        }
        let mut hess = hess.expect("hessian requested");
        let g = DVector::from_column_slice(&grad);
        let mut accepted = None;
        for _attempt in 0..12 {
            let mut reg = hess.clone();
            for r in 0..p {
                reg[(r, r)] += damping;
            }
            let Some(chol) = reg.cholesky() else {
                damping *= 100.0;
                continue;
            };
            let dir = -chol.solve(&g);
            let slope = g.dot(&dir);
            if !(slope < 0.0) {
                damping *= 100.0;
                continue;
            }
            let dtheta: Vec<f64> = dir.iter().copied().collect();
            let df = fitted_coefs(problem.design, &dtheta, k);
            let mut alpha = 1.0;
            for _ in 0..40 {
                let trial = problem.value_along(&f, &df, alpha, h);
                if trial <= current + 1e-4 * alpha * slope {
                    accepted = Some((dtheta.clone(), alpha, trial, -slope));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            damping *= 100.0;
        }
        hess.fill(0.0);
        let Some((dtheta, alpha, trial, decrement)) = accepted else {
            // no descent direction found: numerically stationary
            return (true, iters, current);
        };
        for (t, d) in theta.iter_mut().zip(&dtheta) {
            *t += alpha * d;
        }
        f = fitted_coefs(problem.design, theta, k);
        let decrease = current - trial;
        current = trial;
        history.push((level, current));
        if alpha == 1.0 {
            damping = (damping * 0.1).max(floor);
        }
        let step = dtheta.iter().fold(0.0f64, |m, d| m.max(d.abs())) * alpha;
        let size = theta.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        // Newton decrement bounds the remaining gap of the local model
        let gap = 0.5 * decrement;
        if (gap <= tol * (1.0 + current.abs()) && alpha == 1.0 && decrease >= 0.0) || step <= 1e-14 * (1.0 + size) {
            return (true, iters, current);
        }
    }
}

/// Minimizes the integrated loss on an explicit τ grid.
pub fn fit_on_grid(
    design: &Design,
    y: &[f64],
    basis: &TauBasis,
    grid: &[f64],
    smoothing: f64,
    cfg: &FitConfig,
) -> Result<FitResult> {
    check_inputs(design, y, basis, grid)?;
    cfg.validate()?;
    if !(smoothing > 0.0) {
        return Err(QpmaError::Config(format!("smoothing must be > 0, got {smoothing}")));
    }
    let k = basis.len();
    let problem = Problem::new(design, y, basis, grid)?;
    let (mut theta, levels) = match &cfg.warm_start {
        Some(w) => {
            check_theta(w, design, basis)?;
            rank_checked_least_squares(design, y)?;
            (w.data.clone(), vec![cfg.continuation])
        }
        None => (cold_start(design, y, k)?, (0..=cfg.continuation).collect()),
    };
    let mut history = Vec::new();
    let mut used = 0;
    let mut converged = false;
    let mut smoothed = f64::NAN;
    let mut h = smoothing;
    for &level in &levels {
        h = smoothing / f64::powi(2.0, level as i32);
        let remaining = cfg.max_iters.saturating_sub(used).max(1);
        let (ok, it, value) = newton_level(&problem, &mut theta, h, cfg.tol, remaining, level, &mut history);
        used += it;
        converged = ok;
        smoothed = value;
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(QpmaError::Numerical("solver produced non-finite coefficients".into()));
    }
    let f = fitted_coefs(design, &theta, k);
    let loss = exact_loss(&f, y, &problem.bgrid, grid, k);
    Ok(FitResult {
        theta: CoefMatrix::from_vec(design.cols, k, theta)?,
        converged,
        iterations: used,
        loss,
        smoothed_loss: smoothed,
        smoothing: h,
        history,
    })
}

fn resolve(cfg: &FitConfig, y_full: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = cfg.grid_size.unwrap_or(y_full.len());
    let h = cfg.smoothing.unwrap_or_else(|| default_smoothing(y_full));
    Ok((tau_grid(m)?, h))
}

/// Full-sample fit on the grid `τ_k = k/(m+1)`.
pub fn fit(design: &Design, y: &[f64], basis: &TauBasis, cfg: &FitConfig) -> Result<FitResult> {
    let (grid, h) = resolve(cfg, y)?;
    fit_on_grid(design, y, basis, &grid, h, cfg)
}

/// Fit with observation `i` removed. Grid size and smoothing default to the
/// full-sample values so that folds share one objective definition.
pub fn fit_loo(design: &Design, y: &[f64], basis: &TauBasis, cfg: &FitConfig, i: usize) -> Result<FitResult> {
    if y.len() < 2 {
        return Err(QpmaError::Data("leave-one-out needs n >= 2".into()));
    }
    if i >= y.len() || design.rows != y.len() {
        return Err(QpmaError::InvalidArgument(format!("row {i} out of range")));
    }
    let (grid, h) = resolve(cfg, y)?;
    let reduced = design.without_row(i);
    let mut y_red = y.to_vec();
    y_red.remove(i);
    fit_on_grid(&reduced, &y_red, basis, &grid, h, cfg)
}
