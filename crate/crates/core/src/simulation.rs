//! Data-generating processes and the replication driver.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp1, LogNormal, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::averaging::{candidate_specs, fit_candidates, jackknife_weights, JackknifeOptions};
use crate::baselines::{equal_weight_model, fit_qlrm, fit_qrcm_linear, single_submodel};
use crate::data::Dataset;
use crate::error::{QpmaError, Result};
use crate::evaluation::{comparison_measures, mean, oaqpe, sd, MeasureRow, MethodResult, QuantilePredictor};
use crate::tau_basis::{check_tau, normal_quantile, tau_grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleKind {
    Example1,
    Example2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCase {
    Normal,
    T3,
    NormalMix,
    Chisq1,
    Gamma11,
    Lognorm,
}

impl ErrorCase {
    pub const ALL: [ErrorCase; 6] =
        [ErrorCase::Normal, ErrorCase::T3, ErrorCase::NormalMix, ErrorCase::Chisq1, ErrorCase::Gamma11, ErrorCase::Lognorm];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCase::Normal => "normal",
            ErrorCase::T3 => "t3",
            ErrorCase::NormalMix => "normal_mix",
            ErrorCase::Chisq1 => "chisq1",
            ErrorCase::Gamma11 => "gamma11",
            ErrorCase::Lognorm => "lognorm",
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorCase::Normal => rng.sample(StandardNormal),
            ErrorCase::T3 => StudentT::new(3.0).expect("valid dof").sample(rng),
            ErrorCase::NormalMix => {
                let z: f64 = rng.sample(StandardNormal);
                if rng.random_bool(0.05) {
                    5.0 * z
                } else {
                    z
                }
            }
            ErrorCase::Chisq1 => {
                let z: f64 = rng.sample(StandardNormal);
                z * z
            }
            ErrorCase::Gamma11 => rng.sample(Exp1),
            ErrorCase::Lognorm => LogNormal::new(0.5, 0.5).expect("valid parameters").sample(rng),
        }
    }

    /// Quantile function of the error distribution.
    pub fn quantile(self, tau: f64) -> f64 {
        match self {
            ErrorCase::Normal => normal_quantile(tau),
            ErrorCase::T3 => StudentsT::new(0.0, 1.0, 3.0).expect("valid dof").inverse_cdf(tau),
            ErrorCase::NormalMix => mixture_quantile(tau),
            ErrorCase::Chisq1 => normal_quantile(0.5 * (1.0 + tau)).powi(2),
            ErrorCase::Gamma11 => -(-tau).ln_1p(),
            ErrorCase::Lognorm => (0.5 + 0.5 * normal_quantile(tau)).exp(),
        }
    }
}

impl fmt::Display for ErrorCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorCase {
    type Err = QpmaError;

    fn from_str(s: &str) -> Result<Self> {
        ErrorCase::ALL
            .into_iter()
            .find(|c| c.name() == s.to_ascii_lowercase())
            .ok_or_else(|| QpmaError::Config(format!("unknown error case '{s}'")))
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Quantile of `0.95 N(0,1) + 0.05 N(0,25)` by bisection on the CDF.
pub fn mixture_quantile(tau: f64) -> f64 {
    let cdf = |x: f64| 0.95 * std_normal_cdf(x) + 0.05 * std_normal_cdf(x / 5.0);
    // the mixture quantile lies between the two component quantiles
    let z = normal_quantile(tau);
    let (mut lo, mut hi) = if z < 0.0 { (5.0 * z, z) } else { (z, 5.0 * z) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn default_test_size() -> usize {
    100
}
fn default_r2() -> f64 {
    0.8
}
fn default_p() -> usize {
    10
}
fn default_error_case() -> ErrorCase {
    ErrorCase::Normal
}
fn default_reps() -> usize {
    50
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ExampleKind,
    pub n: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Example 1 correlation knob; `Corr = t²/(1+t²)`.
    #[serde(default)]
    pub t: f64,
    #[serde(default = "default_r2")]
    pub r2: f64,
    /// Example 2 dimension.
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_error_case")]
    pub error_case: ErrorCase,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Example 1: recompute σ in every replication from the training
    /// sample's signal variance instead of the fixed Monte Carlo value.
    #[serde(default)]
    pub recalibrate_sigma: bool,
}

impl Scenario {
    pub fn example1(n: usize, t: f64, r2: f64) -> Self {
        Scenario {
            kind: ExampleKind::Example1,
            n,
            test_size: 100,
            t,
            r2,
            p: 10,
            error_case: ErrorCase::Normal,
            reps: 50,
            seed: 1,
            recalibrate_sigma: false,
        }
    }

    pub fn example2(n: usize, p: usize, error_case: ErrorCase) -> Self {
        Scenario { kind: ExampleKind::Example2, p, error_case, ..Scenario::example1(n, 0.0, 0.8) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(QpmaError::Config(format!("scenario field '{field}': {msg}")));
        if self.n < 10 {
            return bad("n", format!("must be >= 10, got {}", self.n));
        }
        if self.test_size == 0 {
            return bad("test_size", "must be >= 1".into());
        }
        if self.reps == 0 {
            return bad("reps", "must be >= 1".into());
        }
        match self.kind {
            ExampleKind::Example1 => {
                if !(self.t >= 0.0 && self.t.is_finite()) {
                    return bad("t", format!("must be >= 0, got {}", self.t));
                }
                if !(self.r2 > 0.0 && self.r2 < 1.0) {
                    return bad("r2", format!("must lie in (0, 1), got {}", self.r2));
                }
            }
            ExampleKind::Example2 => {
                if self.p < 10 {
                    return bad("p", format!("must be >= 10, got {}", self.p));
                }
            }
        }
        Ok(())
    }

    /// `(key, value)` pairs describing the scenario, for table headers.
    pub fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("kind".to_string(), format!("{:?}", self.kind).to_lowercase()),
            ("n".into(), self.n.to_string()),
            ("test_size".into(), self.test_size.to_string()),
        ];
        match self.kind {
            ExampleKind::Example1 => {
                out.push(("t".into(), self.t.to_string()));
                out.push(("r2".into(), self.r2.to_string()));
                out.push(("recalibrate_sigma".into(), self.recalibrate_sigma.to_string()));
            }
            ExampleKind::Example2 => {
                out.push(("p".into(), self.p.to_string()));
                out.push(("error_case".into(), self.error_case.to_string()));
            }
        }
        out.push(("reps".into(), self.reps.to_string()));
        out.push(("seed".into(), self.seed.to_string()));
        out
    }
}

/// Role of a random stream within one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Train = 0,
    Test = 1,
    QplChoice = 2,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `r` under `master`.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    splitmix64(splitmix64(master) ^ (r as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Independent stream for one role of a replication.
pub fn stream(seed: u64, role: StreamRole) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}

pub fn m1(u: f64) -> f64 {
    (2.0 * u - 1.0).powi(2)
}

pub fn m2(u: f64) -> f64 {
    let s = (2.0 * std::f64::consts::PI * u).sin();
    s / (2.0 - s)
}

pub fn m3(u: f64) -> f64 {
    let (s, c) = (2.0 * std::f64::consts::PI * u).sin_cos();
    0.1 * s + 0.2 * c + 0.3 * s * s + 0.4 * c.powi(3) + 0.5 * s.powi(3)
}

/// Mean function of Example 1 for a row `(x₁, …, x₁₀)`.
pub fn example1_signal(x: &[f64]) -> f64 {
    6.0 * x[0] + 4.0 * m1(x[1]) + 4.0 * m2(x[2]) + 3.0 * m3(x[3]) + 2.0 * x[4] + 2.0 * x[5] + 2.0 * x[6]
        - 2.0 * x[7]
        - 2.0 * x[8]
        - 2.0 * x[9]
}

pub fn example2_signal(x: &[f64]) -> f64 {
    4.0 * (x[0] * x[1] * x[2] * x[3]).cos() * x[4] * x[5] - 3.0 * (x[6] * x[7] * x[8] * x[9] / 4.0).sin()
}

pub fn example2_scale(x: &[f64]) -> f64 {
    (0.5 * x[8] - 0.5 * x[9]).abs() + 1.0
}

fn example1_row<R: Rng + ?Sized>(t: f64, rng: &mut R, row: &mut [f64]) {
    let u: f64 = rng.random();
    for v in row.iter_mut().take(6) {
        let w: f64 = rng.random();
        *v = (w + t * u) / (1.0 + t);
    }
    let b1 = Binomial::new(1, 0.5).expect("valid");
    let b2 = Binomial::new(2, 0.5).expect("valid");
    row[6] = b1.sample(rng) as f64;
    row[7] = b1.sample(rng) as f64;
    row[8] = b2.sample(rng) as f64;
    row[9] = b2.sample(rng) as f64;
}

fn example2_row<R: Rng + ?Sized>(rng: &mut R, row: &mut [f64]) {
    let rho: f64 = 0.5;
    let innovation = (1.0 - rho * rho).sqrt();
    let mut prev = 0.0;
    for (j, v) in row.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        *v = if j == 0 { e } else { rho * prev + innovation * e };
        prev = *v;
    }
}

/// `σ = sqrt(signal_var (1 − r2) / (r2 · error_var))`
pub fn calibrate_sigma(r2: f64, signal_var: f64, error_var: f64) -> Result<f64> {
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(QpmaError::InvalidArgument(format!("r2 must lie in (0, 1), got {r2}")));
    }
    if !(signal_var > 0.0 && error_var > 0.0) {
        return Err(QpmaError::InvalidArgument("variances must be positive".into()));
    }
    Ok((signal_var * (1.0 - r2) / (r2 * error_var)).sqrt())
}

const SIGNAL_VAR_DRAWS: usize = 1_000_000;
const SIGNAL_VAR_SEED: u64 = 0x005E_ED0F_5167_4A11;

/// Monte Carlo variance of the Example 1 signal at correlation knob `t`,
/// from a fixed internal seed; cached per `t`.
pub fn example1_signal_variance(t: f64) -> f64 {
    static CACHE: OnceLock<Mutex<BTreeMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    if let Some(&v) = cache.lock().expect("cache lock").get(&t.to_bits()) {
        return v;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SIGNAL_VAR_SEED);
    let mut row = [0.0; 10];
    let values: Vec<f64> = (0..SIGNAL_VAR_DRAWS)
        .map(|_| {
            example1_row(t, &mut rng, &mut row);
            example1_signal(&row)
        })
        .collect();
    let v = sd(&values).powi(2);
    cache.lock().expect("cache lock").insert(t.to_bits(), v);
    v
}

/// Oracle conditional quantile `μ(x, τ)` of a generated scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrueQuantile {
    Example1 { sigma: f64 },
    Example2 { error_case: ErrorCase },
}

impl TrueQuantile {
    pub fn eval(&self, x: &[f64], tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(match *self {
            TrueQuantile::Example1 { sigma } => example1_signal(x) + sigma * normal_quantile(tau),
            TrueQuantile::Example2 { error_case } => example2_signal(x) + example2_scale(x) * error_case.quantile(tau),
        })
    }
}

impl QuantilePredictor for TrueQuantile {
    fn predict_taus(&self, x_row: &[f64], taus: &[f64]) -> Result<Vec<f64>> {
        taus.iter().map(|&t| self.eval(x_row, t)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: Dataset,
    pub test: Dataset,
    pub true_quantile: TrueQuantile,
}

fn draw_example1(n: usize, t: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut x = vec![0.0; n * 10];
    let mut y = Vec::with_capacity(n);
    for row in x.chunks_exact_mut(10) {
        example1_row(t, rng, row);
        let e: f64 = rng.sample(StandardNormal);
        y.push(example1_signal(row) + sigma * e);
    }
    Dataset::new(y, x, 6, 4)
}

/// Example 1 with σ set from the Monte Carlo signal variance. `seed` is a
/// replication seed; train and test use separate streams.
pub fn gen_example1(n: usize, test_size: usize, t: f64, r2: f64, seed: u64) -> Result<GeneratedData> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(QpmaError::InvalidArgument(format!("t must be >= 0, got {t}")));
    }
    let sigma = calibrate_sigma(r2, example1_signal_variance(t), 1.0)?;
    gen_example1_with_sigma(n, test_size, t, sigma, seed)
}

pub fn gen_example1_with_sigma(n: usize, test_size: usize, t: f64, sigma: f64, seed: u64) -> Result<GeneratedData> {
    let train = draw_example1(n, t, sigma, &mut stream(seed, StreamRole::Train))?;
    let test = draw_example1(test_size, t, sigma, &mut stream(seed, StreamRole::Test))?;
    Ok(GeneratedData { train, test, true_quantile: TrueQuantile::Example1 { sigma } })
}

/// Example 1 with σ recomputed from the training draw's own signal variance.
fn gen_example1_recalibrated(n: usize, test_size: usize, t: f64, r2: f64, seed: u64) -> Result<GeneratedData> {
    let mut rng = stream(seed, StreamRole::Train);
    let mut row = [0.0; 10];
    let signal: Vec<f64> = (0..n)
        .map(|_| {
            example1_row(t, &mut rng, &mut row);
            example1_signal(&row)
        })
        .collect();
    let sigma = calibrate_sigma(r2, sd(&signal).powi(2), 1.0)?;
    gen_example1_with_sigma(n, test_size, t, sigma, seed)
}

fn draw_example2(n: usize, p: usize, case: ErrorCase, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let mut x = vec![0.0; n * p];
    let mut y = Vec::with_capacity(n);
    for row in x.chunks_exact_mut(p) {
        example2_row(rng, row);
        let e = case.sample(rng);
        y.push(example2_signal(row) + example2_scale(row) * e);
    }
    Dataset::new(y, x, p, 0)
}

pub fn gen_example2(n: usize, test_size: usize, p: usize, error_case: ErrorCase, seed: u64) -> Result<GeneratedData> {
    if p < 10 {
        return Err(QpmaError::InvalidArgument(format!("example 2 needs p >= 10, got {p}")));
    }
    let train = draw_example2(n, p, error_case, &mut stream(seed, StreamRole::Train))?;
    let test = draw_example2(test_size, p, error_case, &mut stream(seed, StreamRole::Test))?;
    Ok(GeneratedData { train, test, true_quantile: TrueQuantile::Example2 { error_case } })
}

/// Data for replication `r` of a scenario.
pub fn generate(scenario: &Scenario, r: usize) -> Result<GeneratedData> {
    let seed = replication_seed(scenario.seed, r);
    match scenario.kind {
        ExampleKind::Example1 if scenario.recalibrate_sigma => {
            gen_example1_recalibrated(scenario.n, scenario.test_size, scenario.t, scenario.r2, seed)
        }
        ExampleKind::Example1 => gen_example1(scenario.n, scenario.test_size, scenario.t, scenario.r2, seed),
        ExampleKind::Example2 => gen_example2(scenario.n, scenario.test_size, scenario.p, scenario.error_case, seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qlrm,
    Qrcm,
    Ew,
    Qpl,
    Jqplma,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Qlrm, Method::Qrcm, Method::Ew, Method::Qpl, Method::Jqplma];

    pub fn name(self) -> &'static str {
        match self {
            Method::Qlrm => "qlrm",
            Method::Qrcm => "qrcm",
            Method::Ew => "ew",
            Method::Qpl => "qpl",
            Method::Jqplma => "jqplma",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = QpmaError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| QpmaError::Config(format!("unknown method '{s}' (expected qlrm, qrcm, ew, qpl, jqplma)")))
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    pub methods: Vec<Method>,
    /// Candidate, QRCM and leave-one-out settings.
    pub jackknife: JackknifeOptions,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions { methods: Method::ALL.to_vec(), jackknife: JackknifeOptions::default() }
    }
}

impl BenchmarkOptions {
    pub fn describe(&self) -> Vec<(String, String)> {
        let j = &self.jackknife;
        vec![
            ("methods".into(), self.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("basis".into(), j.basis.to_string()),
            ("spline_order".into(), j.spline.order.to_string()),
            ("knots".into(), j.spline.n_interior.map_or("auto".into(), |k| k.to_string())),
            ("fit_grid".into(), j.fit.grid_size.map_or("n".into(), |m| m.to_string())),
            ("smoothing".into(), j.fit.smoothing.map_or("auto".into(), |h| h.to_string())),
            ("continuation".into(), j.fit.continuation.to_string()),
            ("max_iters".into(), j.fit.max_iters.to_string()),
            ("tol".into(), j.fit.tol.to_string()),
            ("loo_warm_start".into(), j.warm_start.to_string()),
            ("loo_max_iters".into(), j.loo_max_iters.to_string()),
            ("cv_thin".into(), j.cv_thin.to_string()),
        ]
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationResult {
    pub replication: usize,
    /// OAQPE per method, in `BenchmarkOptions::methods` order.
    pub oaqpe: Vec<f64>,
    pub weights: Option<Vec<f64>>,
    pub cv: Option<f64>,
    pub qpl_choice: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub scenario: Scenario,
    pub config: Vec<(String, String)>,
    pub methods: Vec<Method>,
    pub replications: Vec<ReplicationResult>,
    /// `(replication, message)` for each excluded replication.
    pub failures: Vec<(usize, String)>,
    pub measures: Vec<MeasureRow>,
    pub weight_mean: Option<Vec<f64>>,
    pub weight_sd: Option<Vec<f64>>,
}

/// Runs one replication: generate, fit every requested method, evaluate.
pub fn run_replication(scenario: &Scenario, opts: &BenchmarkOptions, r: usize) -> Result<ReplicationResult> {
    let data = generate(scenario, r)?;
    let train = &data.train;
    let grid = tau_grid(scenario.n)?;
    let j = &opts.jackknife;
    let needs_candidates = opts.methods.iter().any(|m| matches!(m, Method::Ew | Method::Qpl | Method::Jqplma));
    let candidates = if needs_candidates {
        let specs = candidate_specs(train, &j.spline)?;
        fit_candidates(train, &specs, &j.basis, &j.fit)?.into_iter().map(|(m, _)| m).collect()
    } else {
        Vec::new()
    };

    let mut result = ReplicationResult { replication: r, oaqpe: Vec::new(), weights: None, cv: None, qpl_choice: None };
    for &method in &opts.methods {
        let value = match method {
            Method::Qlrm => oaqpe(&fit_qlrm(train, &grid, &j.fit)?, &data.test, &grid)?,
            Method::Qrcm => oaqpe(&fit_qrcm_linear(train, &j.basis, &j.fit)?, &data.test, &grid)?,
            Method::Ew => oaqpe(&equal_weight_model(candidates.clone())?, &data.test, &grid)?,
            Method::Qpl => {
                let mut rng = stream(replication_seed(scenario.seed, r), StreamRole::QplChoice);
                let (model, s) = single_submodel(candidates.clone(), None, &mut rng)?;
                result.qpl_choice = Some(s);
                oaqpe(&model, &data.test, &grid)?
            }
            Method::Jqplma => {
                let fit = jackknife_weights(train, candidates.clone(), j)?;
                if fit.loo_nonconverged > 0 {
                    log::debug!("replication {r}: {} leave-one-out fits hit the iteration cap", fit.loo_nonconverged);
                }
                result.weights = Some(fit.model.weights.as_slice().to_vec());
                result.cv = Some(fit.cv);
                oaqpe(&fit.model, &data.test, &grid)?
            }
        };
        result.oaqpe.push(value);
    }
    Ok(result)
}

/// All replications of a scenario plus the comparison measures. Results do
/// not depend on the number of worker threads.
pub fn run_benchmark(scenario: &Scenario, opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    scenario.validate()?;
    if opts.methods.is_empty() {
        return Err(QpmaError::Config("no methods selected".into()));
    }
    let mut seen = opts.methods.clone();
    seen.sort();
    seen.dedup();
    if seen.len() != opts.methods.len() {
        return Err(QpmaError::Config("duplicate method in list".into()));
    }

    let outcomes: Vec<Result<ReplicationResult>> =
        (0..scenario.reps).into_par_iter().map(|r| run_replication(scenario, opts, r)).collect();

    let mut replications = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(res) => replications.push(res),
            Err(e) => {
                log::warn!("replication {} excluded: {e}", r + 1);
                failures.push((r, e.to_string()));
            }
        }
    }
    if replications.is_empty() {
        return Err(QpmaError::Numerical(format!(
            "all {} replications failed; first error: {}",
            scenario.reps, failures[0].1
        )));
    }

    let results: Vec<MethodResult> = opts
        .methods
        .iter()
        .enumerate()
        .map(|(a, m)| MethodResult {
            method: m.name().to_string(),
            oaqpe_by_rep: replications.iter().map(|r| r.oaqpe[a]).collect(),
        })
        .collect();
    let measures = comparison_measures(&results, Method::Jqplma.name())?;

    let weights: Vec<&Vec<f64>> = replications.iter().filter_map(|r| r.weights.as_ref()).collect();
    let (weight_mean, weight_sd) = if weights.is_empty() {
        (None, None)
    } else {
        let p = weights[0].len();
        let column = |s: usize| weights.iter().map(|w| w[s]).collect::<Vec<_>>();
        (Some((0..p).map(|s| mean(&column(s))).collect()), Some((0..p).map(|s| sd(&column(s))).collect()))
    };

    let mut config = scenario.describe();
    config.extend(opts.describe());
    Ok(BenchmarkReport {
        scenario: scenario.clone(),
        config,
        methods: opts.methods.clone(),
        replications,
        failures,
        measures,
        weight_mean,
        weight_sd,
    })
}

impl BenchmarkReport {
    fn header(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.config {
            let _ = writeln!(out, "# {k} = {v}");
        }
        let _ = writeln!(out, "# completed_replications = {}", self.replications.len());
        let _ = writeln!(out, "# failed_replications = {}", self.failures.len());
        for (r, msg) in &self.failures {
            let _ = writeln!(out, "# failure replication {} : {}", r + 1, msg.replace('\n', " "));
        }
        out
    }

    /// Average OAQPE, SD, winning ratio and loss to the averaged model.
    pub fn measures_csv(&self) -> String {
        let mut out = self.header();
        out.push_str("method,average_oaqpe,sd_oaqpe,winning_ratio,loss_to_jqplma\n");
        for row in &self.measures {
            let loss = row.loss_to_reference.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                row.method, row.average_oaqpe, row.sd_oaqpe, row.winning_ratio, loss
            );
        }
        out
    }

    pub fn measures_text(&self) -> String {
        let mut out = self.header();
        let _ = writeln!(
            out,
            "{:<8} {:>14} {:>10} {:>14} {:>14}",
            "method", "avg OAQPE", "(sd)", "winning ratio", "loss to JQPLMA"
        );
        for row in &self.measures {
            let loss = row.loss_to_reference.map_or("-".to_string(), |v| format!("{:.1}%", 100.0 * v));
            let _ = writeln!(
                out,
                "{:<8} {:>14.3} {:>10} {:>14} {:>14}",
                row.method,
                row.average_oaqpe,
                format!("({:.3})", row.sd_oaqpe),
                format!("{:.1}%", 100.0 * row.winning_ratio),
                loss
            );
        }
        out
    }

    fn jqplma_oaqpe(&self) -> Option<&MeasureRow> {
        self.measures.iter().find(|m| m.method == Method::Jqplma.name())
    }

    /// Mean (SD) of the selected weights and the averaged model's OAQPE.
    pub fn weights_csv(&self) -> Option<String> {
        let (mean_w, sd_w) = (self.weight_mean.as_ref()?, self.weight_sd.as_ref()?);
        let row = self.jqplma_oaqpe()?;
        let mut out = self.header();
        out.push_str("quantity,mean,sd\n");
        let _ = writeln!(out, "oaqpe,{},{}", row.average_oaqpe, row.sd_oaqpe);
        for (s, (m, d)) in mean_w.iter().zip(sd_w).enumerate() {
            let _ = writeln!(out, "w{},{},{}", s + 1, m, d);
        }
        Some(out)
    }

    pub fn weights_text(&self) -> Option<String> {
        let (mean_w, sd_w) = (self.weight_mean.as_ref()?, self.weight_sd.as_ref()?);
        let row = self.jqplma_oaqpe()?;
        let mut out = self.header();
        let mut names = vec![format!("{:>14}", "OAQPE")];
        let mut cells = vec![format!("{:>14}", format!("{:.3}({:.3})", row.average_oaqpe, row.sd_oaqpe))];
        for (s, (m, d)) in mean_w.iter().zip(sd_w).enumerate() {
            names.push(format!("{:>14}", format!("w{}", s + 1)));
            cells.push(format!("{:>14}", format!("{:.3}({:.3})", m, d)));
        }
        let _ = writeln!(out, "{}", names.join(" "));
        let _ = writeln!(out, "{}", cells.join(" "));
        Some(out)
    }

    /// Per-replication OAQPE values (plus weights when available).
    pub fn replications_csv(&self) -> String {
        let mut out = self.header();
        let mut head = vec!["replication".to_string()];
        head.extend(self.methods.iter().map(|m| m.name().to_string()));
        let p = self.weight_mean.as_ref().map_or(0, Vec::len);
        head.extend((1..=p).map(|s| format!("w{s}")));
        if self.methods.contains(&Method::Qpl) {
            head.push("qpl_choice".into());
        }
        let _ = writeln!(out, "{}", head.join(","));
        for rep in &self.replications {
            let mut cells = vec![(rep.replication + 1).to_string()];
            cells.extend(rep.oaqpe.iter().map(f64::to_string));
            if let Some(w) = &rep.weights {
                cells.extend(w.iter().map(f64::to_string));
            }
            if let Some(s) = rep.qpl_choice {
                cells.push((s + 1).to_string());
            }
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}
