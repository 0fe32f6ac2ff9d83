//! Jackknife (leave-one-out) weighting of the candidate models.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::{build_design, CandidateModel, CoefMatrix, ColumnOrder};
use crate::data::Dataset;
use crate::error::{QpmaError, Result};
use crate::evaluation::QuantilePredictor;
use crate::solver::{check_loss, fit, fit_loo, smoothed_check_loss, FitConfig, FitResult};
use crate::spline::{default_interior_knots, SplineSpec};
use crate::tau_basis::{tau_grid, thin_grid, TauBasis};

/// Point of the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(QpmaError::InvalidArgument("empty weight vector".into()));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&v| !(0.0..=1.0 + 1e-10).contains(&v)) || (sum - 1.0).abs() > 1e-10 {
            return Err(QpmaError::InvalidArgument(format!("weights not on the simplex: {w:?}")));
        }
        Ok(WeightVector(w))
    }

    pub fn uniform(p: usize) -> Self {
        WeightVector(vec![1.0 / p as f64; p])
    }

    pub fn vertex(p: usize, s: usize) -> Self {
        let mut w = vec![0.0; p];
        w[s] = 1.0;
        WeightVector(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}` (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u: Vec<f64> = v.iter().map(|x| if x.is_finite() { *x } else { -1e300 }).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            shift = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&x| if x.is_finite() { (x - shift).max(0.0) } else { 0.0 }).collect();
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|x| *x /= sum);
    } else {
        let p = w.len() as f64;
        w.iter_mut().for_each(|x| *x = 1.0 / p);
    }
    w
}

/// Leave-one-out predictions `P[i][k][s]` on a τ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LooPredictions {
    pub n: usize,
    pub p: usize,
    pub y: Vec<f64>,
    pub grid: Vec<f64>,
    /// Index `(i·m + k)·p + s`.
    pub values: Vec<f64>,
    /// Number of leave-one-out fits that hit their iteration cap.
    pub nonconverged: usize,
}

impl LooPredictions {
    pub fn new(y: Vec<f64>, grid: Vec<f64>, p: usize, values: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if values.len() != n * grid.len() * p {
            return Err(QpmaError::DimensionMismatch { expected: n * grid.len() * p, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QpmaError::Numerical("non-finite leave-one-out prediction".into()));
        }
        Ok(LooPredictions { n, p, y, grid, values, nonconverged: 0 })
    }

    pub fn m(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, s: usize) -> f64 {
        self.values[(i * self.m() + k) * self.p + s]
    }
}

/// Spline settings shared by all candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineOptions {
    pub order: usize,
    /// `None` uses `⌊n^{1/5}⌋`.
    pub n_interior: Option<usize>,
}

impl Default for SplineOptions {
    fn default() -> Self {
        SplineOptions { order: 2, n_interior: None }
    }
}

impl SplineOptions {
    pub fn spec_for(&self, data: &Dataset, s: usize) -> Result<SplineSpec> {
        let knots = self.n_interior.unwrap_or_else(|| default_interior_knots(data.n()));
        SplineSpec::from_values(&data.column(s), knots, self.order)
    }
}

/// Spline spec for each continuous covariate, built once on the full sample.
pub fn candidate_specs(data: &Dataset, spline: &SplineOptions) -> Result<Vec<SplineSpec>> {
    (0..data.p).map(|s| spline.spec_for(data, s)).collect()
}

/// Full-sample fit of every candidate.
pub fn fit_candidates(
    data: &Dataset,
    specs: &[SplineSpec],
    basis: &TauBasis,
    cfg: &FitConfig,
) -> Result<Vec<(CandidateModel, FitResult)>> {
    data.validate_for_fit()?;
    if specs.len() != data.p {
        return Err(QpmaError::DimensionMismatch { expected: data.p, got: specs.len() });
    }
    specs
        .par_iter()
        .enumerate()
        .map(|(s, spec)| {
            let design = build_design(data, s, spec)?;
            let res = fit(&design, &data.y, basis, cfg)?;
            let mut model = CandidateModel::new(
                spec.clone(),
                basis.clone(),
                ColumnOrder::for_candidate(s, data.width()),
                res.theta.clone(),
            )?;
            model.converged = res.converged;
            Ok((model, res))
        })
        .collect()
}

/// Leave-one-out predictions for every candidate and observation.
///
/// Knots stay fixed at the full-sample `specs`. When `warm` holds the
/// full-sample coefficients they seed every fold.
pub fn loo_predictions(
    data: &Dataset,
    specs: &[SplineSpec],
    basis: &TauBasis,
    cfg: &FitConfig,
    grid: &[f64],
    warm: Option<&[CoefMatrix]>,
) -> Result<LooPredictions> {
    let n = data.n();
    let p = specs.len();
    if p == 0 {
        return Err(QpmaError::InvalidArgument("no candidates".into()));
    }
    if n < 2 {
        return Err(QpmaError::Data("leave-one-out needs n >= 2".into()));
    }
    if let Some(w) = warm {
        if w.len() != p {
            return Err(QpmaError::DimensionMismatch { expected: p, got: w.len() });
        }
    }
    let designs = specs
        .iter()
        .enumerate()
        .map(|(s, spec)| build_design(data, s, spec))
        .collect::<Result<Vec<_>>>()?;
    let m = grid.len();
    let bgrid = basis.eval_grid(grid)?;
    let k = basis.len();

    let cells: Vec<(Vec<f64>, bool)> = (0..p * n)
        .into_par_iter()
        .map(|cell| {
            let (s, i) = (cell / n, cell % n);
            let mut fold_cfg = cfg.clone();
            fold_cfg.warm_start = warm.map(|w| w[s].clone());
            let res = fit_loo(&designs[s], &data.y, basis, &fold_cfg, i).map_err(|e| QpmaError::LooFit {
                candidate: s + 1,
                index: i + 1,
                source: Box::new(e),
            })?;
            let zt = res.theta.times_row(designs[s].row(i));
            let preds = bgrid.chunks_exact(k).map(|b| zt.iter().zip(b).map(|(a, c)| a * c).sum()).collect();
            Ok((preds, res.converged))
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0.0; n * m * p];
    let mut nonconverged = 0;
    for (cell, (preds, ok)) in cells.into_iter().enumerate() {
        let (s, i) = (cell / n, cell % n);
        for (kk, v) in preds.into_iter().enumerate() {
            values[(i * m + kk) * p + s] = v;
        }
        nonconverged += usize::from(!ok);
    }
    let mut loo = LooPredictions::new(data.y.clone(), grid.to_vec(), p, values)?;
    loo.nonconverged = nonconverged;
    Ok(loo)
}

/// `(1/m) Σ_k (1/n) Σ_i ρ_{τ_k}(y_i − Σ_s w_s P[i][k][s])`
pub fn cv_criterion(w: &[f64], loo: &LooPredictions) -> f64 {
    debug_assert_eq!(w.len(), loo.p);
    let m = loo.m();
    let mut total = 0.0;
    for (i, &yi) in loo.y.iter().enumerate() {
        for (k, &tau) in loo.grid.iter().enumerate() {
            let base = (i * m + k) * loo.p;
            let pred: f64 = loo.values[base..base + loo.p].iter().zip(w).map(|(a, b)| a * b).sum();
            total += check_loss(tau, yi - pred);
        }
    }
    total / (loo.n * m) as f64
}

/// Exact value and one subgradient of the criterion.
fn cv_subgradient(w: &[f64], loo: &LooPredictions) -> (f64, Vec<f64>) {
    let m = loo.m();
    let mut total = 0.0;
    let mut g = vec![0.0; loo.p];
    for (i, &yi) in loo.y.iter().enumerate() {
        for (k, &tau) in loo.grid.iter().enumerate() {
            let base = (i * m + k) * loo.p;
            let row = &loo.values[base..base + loo.p];
            let r = yi - row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            total += check_loss(tau, r);
            let slope = if r < 0.0 { tau - 1.0 } else { tau };
            for (gs, &ps) in g.iter_mut().zip(row) {
                *gs -= slope * ps;
            }
        }
    }
    let scale = 1.0 / (loo.n * m) as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    (total * scale, g)
}

fn cv_smoothed(w: &[f64], loo: &LooPredictions, h: f64) -> (f64, Vec<f64>, f64) {
    let m = loo.m();
    let mut total = 0.0;
    let mut exact = 0.0;
    let mut g = vec![0.0; loo.p];
    for (i, &yi) in loo.y.iter().enumerate() {
        for (k, &tau) in loo.grid.iter().enumerate() {
            let base = (i * m + k) * loo.p;
            let row = &loo.values[base..base + loo.p];
            let r = yi - row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            let (v, d1, _) = smoothed_check_loss(tau, r, h);
            total += v;
            exact += check_loss(tau, r);
            for (gs, &ps) in g.iter_mut().zip(row) {
                *gs -= d1 * ps;
            }
        }
    }
    let scale = 1.0 / (loo.n * m) as f64;
    g.iter_mut().for_each(|v| *v *= scale);
    (total * scale, g, exact * scale)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    pub subgradient_iters: usize,
    pub smoothing_levels: usize,
    pub polish_iters: usize,
}

impl Default for WeightOptions {
    fn default() -> Self {
        WeightOptions { subgradient_iters: 300, smoothing_levels: 8, polish_iters: 300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFit {
    pub weights: WeightVector,
    pub cv: f64,
    pub converged: bool,
}

struct Best {
    w: Vec<f64>,
    value: f64,
}

impl Best {
    fn offer(&mut self, w: &[f64], value: f64) {
        if value < self.value {
            self.value = value;
            self.w.copy_from_slice(w);
        }
    }
}

/// Minimizes the leave-one-out criterion over the simplex.
///
/// Starts from the best of the vertices and the uniform vector, runs
/// projected subgradient steps with diminishing step size, then polishes with
/// accelerated projected gradient on a smoothed criterion whose smoothing is
/// halved level by level. The best exact value seen is returned, so the
/// result is never worse than any vertex or equal weighting.
pub fn optimize_weights(loo: &LooPredictions, opts: &WeightOptions) -> Result<WeightFit> {
    let p = loo.p;
    if p == 0 {
        return Err(QpmaError::InvalidArgument("no candidates".into()));
    }
    if p == 1 {
        return Ok(WeightFit { weights: WeightVector(vec![1.0]), cv: cv_criterion(&[1.0], loo), converged: true });
    }
    let uniform = vec![1.0 / p as f64; p];
    let mut best = Best { w: uniform.clone(), value: cv_criterion(&uniform, loo) };
    for s in 0..p {
        let e = WeightVector::vertex(p, s);
        best.offer(e.as_slice(), cv_criterion(e.as_slice(), loo));
    }

    // projected subgradient, normalized steps 0.5/√t
    let mut w = best.w.clone();
    for t in 1..=opts.subgradient_iters {
        let (value, g) = cv_subgradient(&w, loo);
        best.offer(&w, value);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let step = 0.5 / (t as f64).sqrt() / norm;
        let trial: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - step * b).collect();
        w = project_simplex(&trial);
    }

    // smoothing scale from the spread of residuals at the incumbent
    let mut resid: Vec<f64> = Vec::with_capacity(loo.n * loo.m());
    for i in 0..loo.n {
        for k in 0..loo.m() {
            let pred: f64 = (0..p).map(|s| best.w[s] * loo.get(i, k, s)).sum();
            resid.push((loo.y[i] - pred).abs());
        }
    }
    resid.sort_by(f64::total_cmp);
    let mut h = 0.1 * resid[resid.len() / 2].max(1e-12);

    let mut converged = true;
    let mut w = best.w.clone();
    for _level in 0..opts.smoothing_levels {
        let (ok, w_new) = accelerated_polish(loo, &w, h, opts.polish_iters, &mut best);
        converged = ok;
        w = w_new;
        h *= 0.5;
    }
    let weights = WeightVector(project_simplex(&best.w));
    let cv = cv_criterion(weights.as_slice(), loo);
    Ok(WeightFit { weights, cv, converged })
}

/// FISTA with backtracking on the smoothed criterion, restarted when the
/// objective goes up.
fn accelerated_polish(loo: &LooPredictions, start: &[f64], h: f64, iters: usize, best: &mut Best) -> (bool, Vec<f64>) {
    let mut x = start.to_vec();
    let mut yv = x.clone();
    let mut t = 1.0f64;
    let (mut fx, _, ex) = cv_smoothed(&x, loo, h);
    best.offer(&x, ex);
    let mut lipschitz = {
        // curvature bound: max ‖P_ik‖² / h
        let mut mx = 0.0f64;
        for cell in loo.values.chunks_exact(loo.p) {
            mx = mx.max(cell.iter().map(|v| v * v).sum());
        }
        (mx / h).max(1e-12) * 1e-3
    };
    for _ in 0..iters {
        let (fy, gy, ey) = cv_smoothed(&yv, loo, h);
        best.offer(&yv, ey);
        let mut next;
        loop {
            let trial: Vec<f64> = yv.iter().zip(&gy).map(|(a, g)| a - g / lipschitz).collect();
            next = project_simplex(&trial);
            let diff: Vec<f64> = next.iter().zip(&yv).map(|(a, b)| a - b).collect();
            let (fn_, _, en) = cv_smoothed(&next, loo, h);
            best.offer(&next, en);
            let model = fy
                + gy.iter().zip(&diff).map(|(g, d)| g * d).sum::<f64>()
                + 0.5 * lipschitz * diff.iter().map(|d| d * d).sum::<f64>();
            if fn_ <= model + 1e-15 * (1.0 + fy.abs()) {
                break;
            }
            lipschitz *= 2.0;
            if lipschitz > 1e300 {
                return (false, x);
            }
        }
        let (f_next, _, _) = cv_smoothed(&next, loo, h);
        let step: f64 = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if f_next > fx {
            // restart momentum
            t = 1.0;
            yv = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        yv = next.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_next * (a - b)).collect();
        yv = project_simplex(&yv);
        x = next;
        let decrease = fx - f_next;
        fx = f_next;
        t = t_next;
        lipschitz *= 0.9;
        if step < 1e-12 || decrease.abs() <= 1e-15 * (1.0 + fx.abs()) && step < 1e-9 {
            return (true, x);
        }
    }
    (true, x)
}

/// Candidates plus simplex weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedModel {
    pub candidates: Vec<CandidateModel>,
    pub weights: WeightVector,
}

impl AveragedModel {
    pub fn new(candidates: Vec<CandidateModel>, weights: WeightVector) -> Result<Self> {
        if candidates.is_empty() || candidates.len() != weights.len() {
            return Err(QpmaError::DimensionMismatch { expected: candidates.len(), got: weights.len() });
        }
        let basis = &candidates[0].tau_basis;
        let width = candidates[0].columns.width();
        if candidates.iter().any(|c| &c.tau_basis != basis || c.columns.width() != width) {
            return Err(QpmaError::InvalidArgument("candidates disagree on tau basis or covariate layout".into()));
        }
        Ok(AveragedModel { candidates, weights })
    }

    pub fn averaged_predict(&self, x_row: &[f64], tau: f64) -> Result<f64> {
        let mut total = 0.0;
        for (c, &w) in self.candidates.iter().zip(self.weights.as_slice()) {
            total += w * c.predict_quantile(x_row, tau)?;
        }
        Ok(total)
    }
}

impl QuantilePredictor for CandidateModel {
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        self.predict_grid(x_row, taus)
    }
}

impl QuantilePredictor for AveragedModel {
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; taus.len()];
        for (c, &w) in self.candidates.iter().zip(self.weights.as_slice()) {
            if w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(c.predict_grid(x_row, taus)?) {
                *o += w * v;
            }
        }
        Ok(out)
    }
}

/// Settings of the complete jackknife averaging pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct JackknifeOptions {
    pub basis: TauBasis,
    pub spline: SplineOptions,
    pub fit: FitConfig,
    /// Iteration cap for each warm-started leave-one-out refit.
    pub loo_max_iters: usize,
    pub warm_start: bool,
    /// Keep every `cv_thin`-th point of the `k/(n+1)` criterion grid.
    pub cv_thin: usize,
    pub weights: WeightOptions,
}

impl Default for JackknifeOptions {
    fn default() -> Self {
        JackknifeOptions {
            basis: TauBasis::Gaussian,
            spline: SplineOptions::default(),
            fit: FitConfig::default(),
            loo_max_iters: 50,
            warm_start: true,
            cv_thin: 1,
            weights: WeightOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct JackknifeFit {
    pub model: AveragedModel,
    pub cv: f64,
    pub cv_grid_len: usize,
    pub weights_converged: bool,
    pub loo_nonconverged: usize,
}

pub fn cv_grid(n: usize, thin: usize) -> Result<Vec<f64>> {
    Ok(thin_grid(&tau_grid(n)?, thin))
}

/// Leave-one-out predictions for already fitted full-sample candidates.
pub fn loo_for_candidates(data: &Dataset, candidates: &[CandidateModel], opts: &JackknifeOptions) -> Result<LooPredictions> {
    let specs: Vec<SplineSpec> = candidates.iter().map(|c| c.spline.clone()).collect();
    let warm: Vec<CoefMatrix> = candidates.iter().map(|c| c.theta.clone()).collect();
    let mut loo_cfg = opts.fit.clone();
    if opts.warm_start {
        loo_cfg.max_iters = opts.loo_max_iters;
    }
    let grid = cv_grid(data.n(), opts.cv_thin)?;
    loo_predictions(data, &specs, &opts.basis, &loo_cfg, &grid, opts.warm_start.then_some(&warm[..]))
}

/// Weights for already fitted candidates.
pub fn jackknife_weights(data: &Dataset, candidates: Vec<CandidateModel>, opts: &JackknifeOptions) -> Result<JackknifeFit> {
    let loo = loo_for_candidates(data, &candidates, opts)?;
    let wf = optimize_weights(&loo, &opts.weights)?;
    Ok(JackknifeFit {
        model: AveragedModel::new(candidates, wf.weights)?,
        cv: wf.cv,
        cv_grid_len: loo.m(),
        weights_converged: wf.converged,
        loo_nonconverged: loo.nonconverged,
    })
}

/// Full pipeline: fit every candidate, then choose weights by leave-one-out.
pub fn fit_jackknife(data: &Dataset, opts: &JackknifeOptions) -> Result<JackknifeFit> {
    let specs = candidate_specs(data, &opts.spline)?;
    let fits = fit_candidates(data, &specs, &opts.basis, &opts.fit)?;
    let candidates = fits.into_iter().map(|(m, _)| m).collect();
    jackknife_weights(data, candidates, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_loo(seed: u64, n: usize, m: usize, p: usize) -> LooPredictions {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values = (0..n * m * p).map(|_| rng.random_range(-2.0..2.0)).collect();
        LooPredictions::new(y, tau_grid(m).unwrap(), p, values).unwrap()
    }

    #[test]
    fn projection() {
        let w = project_simplex(&[0.2, 0.3, 0.5]);
        assert_eq!(w, vec![0.2, 0.3, 0.5]);
        let w = project_simplex(&[2.0, 0.0]);
        assert_eq!(w, vec![1.0, 0.0]);
        let w = project_simplex(&[-1.0, 0.5, 0.5, 3.0]);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    proptest! {
        #[test]
        fn projection_is_feasible(v in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
            let w = project_simplex(&v);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn cv_hand_case() {
        // n=2, m=1 (τ=0.5), p=2, y=(0,0), P rows (1,−1)
        let loo = LooPredictions::new(vec![0.0, 0.0], vec![0.5], 2, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(cv_criterion(&[0.5, 0.5], &loo), 0.0);
        assert_eq!(cv_criterion(&[1.0, 0.0], &loo), 0.5);
    }

    #[test]
    fn identical_candidates_are_flat() {
        let base = random_loo(1, 10, 5, 1);
        let values: Vec<f64> = base.values.iter().flat_map(|&v| [v, v, v]).collect();
        let loo = LooPredictions::new(base.y.clone(), base.grid.clone(), 3, values).unwrap();
        let vertex = cv_criterion(&[1.0, 0.0, 0.0], &loo);
        assert_abs_diff_eq!(cv_criterion(&[0.2, 0.5, 0.3], &loo), vertex, epsilon = 1e-12);
        let fit = optimize_weights(&loo, &WeightOptions::default()).unwrap();
        assert_abs_diff_eq!(fit.cv, vertex, epsilon = 1e-10);
    }

    #[test]
    fn singleton_simplex() {
        let loo = random_loo(2, 8, 4, 1);
        let fit = optimize_weights(&loo, &WeightOptions::default()).unwrap();
        assert_eq!(fit.weights.as_slice(), &[1.0]);
        assert_eq!(fit.cv, cv_criterion(&[1.0], &loo));
    }

    fn grid_search_min(loo: &LooPredictions, step: f64) -> f64 {
        let steps = (1.0 / step).round() as usize;
        let mut best = f64::INFINITY;
        for a in 0..=steps {
            for b in 0..=(steps - a) {
                let w = [a as f64 * step, b as f64 * step, (steps - a - b) as f64 * step];
                best = best.min(cv_criterion(&w, loo));
            }
        }
        best
    }

    #[test]
    fn optimizer_beats_simplex_grid() {
        for seed in 0..5 {
            let loo = random_loo(100 + seed, 30, 15, 3);
            let fit = optimize_weights(&loo, &WeightOptions::default()).unwrap();
            let oracle = grid_search_min(&loo, 0.02);
            assert!(fit.cv <= oracle + 1e-4, "seed {seed}: {} vs {}", fit.cv, oracle);
        }
    }

    #[test]
    fn jensen_and_dominance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let loo = random_loo(9, 20, 7, 4);
        let vertices: Vec<f64> = (0..4).map(|s| cv_criterion(WeightVector::vertex(4, s).as_slice(), &loo)).collect();
        for _ in 0..100 {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let bound: f64 = w.iter().zip(&vertices).map(|(a, b)| a * b).sum();
            assert!(cv_criterion(&w, &loo) <= bound + 1e-10);
        }
        let fit = optimize_weights(&loo, &WeightOptions::default()).unwrap();
        let uniform = cv_criterion(WeightVector::uniform(4).as_slice(), &loo);
        assert!(fit.cv <= uniform + 1e-12);
        assert!(vertices.iter().all(|&v| fit.cv <= v + 1e-12));
        let sum: f64 = fit.weights.as_slice().iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
    }

    #[test]
    fn permuting_candidates() {
        let loo = random_loo(4, 12, 6, 3);
        let perm = [2usize, 0, 1];
        let values: Vec<f64> = loo
            .values
            .chunks_exact(3)
            .flat_map(|c| perm.iter().map(|&s| c[s]).collect::<Vec<_>>())
            .collect();
        let permuted = LooPredictions::new(loo.y.clone(), loo.grid.clone(), 3, values).unwrap();
        let w = [0.2, 0.5, 0.3];
        let wp: Vec<f64> = perm.iter().map(|&s| w[s]).collect();
        assert_abs_diff_eq!(cv_criterion(&w, &loo), cv_criterion(&wp, &permuted), epsilon = 1e-13);
    }

    #[test]
    fn two_point_loo_swaps_observations() {
        // intercept-only equivalent: p=1 with a spline of one basis... use a
        // 2-row dataset whose design is the linear-spline block with no knots;
        // with the constant tau basis each fold fits the other point.
        let data = Dataset::new(vec![3.0, 7.0], vec![0.0, 1.0], 1, 0).unwrap();
        let spec = SplineSpec::new(0.0, 1.0, 0, 2).unwrap();
        let grid = [0.3, 0.5, 0.8];
        // two-parameter line through one point is not identified, so use
        // the intercept-only design directly
        let d = crate::candidate::Design::from_rows(2, 1, vec![1.0, 1.0]).unwrap();
        for i in 0..2 {
            let r = fit_loo(&d, &data.y, &TauBasis::constant(), &FitConfig::default(), i).unwrap();
            assert_abs_diff_eq!(r.theta.data[0], data.y[1 - i], epsilon = 1e-8);
        }
        // the spline design itself is rank deficient after dropping a row
        assert!(loo_predictions(&data, &[spec], &TauBasis::constant(), &FitConfig::default(), &grid, None).is_err());
    }

    #[test]
    fn averaged_prediction_combines() {
        let spline = SplineSpec::new(0.0, 1.0, 1, 2).unwrap();
        let mk = |c: f64| {
            let mut theta = CoefMatrix::zeros(4, 2);
            for r in 0..3 {
                theta.set(r, 0, c);
            }
            CandidateModel::new(spline.clone(), TauBasis::Gaussian, ColumnOrder::for_candidate(0, 2), theta).unwrap()
        };
        let avg = AveragedModel::new(vec![mk(1.0), mk(3.0)], WeightVector::new(vec![0.25, 0.75]).unwrap()).unwrap();
        let v = avg.averaged_predict(&[0.4, 2.0], 0.3).unwrap();
        assert_abs_diff_eq!(v, 2.5, epsilon = 1e-14);
        let vertex = AveragedModel::new(vec![mk(1.0), mk(3.0)], WeightVector::vertex(2, 1)).unwrap();
        assert_eq!(vertex.averaged_predict(&[0.4, 2.0], 0.3).unwrap(), 3.0);
        let same = AveragedModel::new(vec![mk(2.0), mk(2.0)], WeightVector::new(vec![0.9, 0.1]).unwrap()).unwrap();
        assert_abs_diff_eq!(same.averaged_predict(&[0.1, 0.0], 0.6).unwrap(), 2.0, epsilon = 1e-14);
        assert!(avg.averaged_predict(&[0.4], 0.3).is_err());
    }
}
