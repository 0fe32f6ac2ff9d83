//! Known basis functions of the quantile level.
//!
//! Every regression coefficient of a candidate model is a linear combination
//! `θ_row · b(τ)` of these functions, so the fitted model describes the whole
//! conditional quantile process rather than a finite set of levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{QpmaError, Result};

/// Primitive functions of τ that can be combined into a custom family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TauPrimitive {
    One,
    Tau,
    TauSquared,
    TauCubed,
    NormalQuantile,
    LogTau,
    NegLogOneMinusTau,
}

impl TauPrimitive {
    pub fn eval(self, tau: f64) -> f64 {
        match self {
            TauPrimitive::One => 1.0,
            TauPrimitive::Tau => tau,
            TauPrimitive::TauSquared => tau * tau,
            TauPrimitive::TauCubed => tau * tau * tau,
            TauPrimitive::NormalQuantile => normal_quantile(tau),
            TauPrimitive::LogTau => tau.ln(),
            TauPrimitive::NegLogOneMinusTau => -(-tau).ln_1p(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TauPrimitive::One => "one",
            TauPrimitive::Tau => "tau",
            TauPrimitive::TauSquared => "tau2",
            TauPrimitive::TauCubed => "tau3",
            TauPrimitive::NormalQuantile => "qnorm",
            TauPrimitive::LogTau => "log-tau",
            TauPrimitive::NegLogOneMinusTau => "neg-log1m-tau",
        }
    }
}

impl FromStr for TauPrimitive {
    type Err = QpmaError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "one" | "1" => TauPrimitive::One,
            "tau" => TauPrimitive::Tau,
            "tau2" => TauPrimitive::TauSquared,
            "tau3" => TauPrimitive::TauCubed,
            "qnorm" => TauPrimitive::NormalQuantile,
            "log-tau" => TauPrimitive::LogTau,
            "neg-log1m-tau" => TauPrimitive::NegLogOneMinusTau,
            other => {
                return Err(QpmaError::Config(format!("unknown tau-basis primitive '{other}'")))
            }
        })
    }
}

/// A family of `K` known functions of τ.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "family", content = "functions", rename_all = "kebab-case")]
pub enum TauBasis {
    /// `(1, Φ⁻¹(τ))`
    #[default]
    Gaussian,
    /// `(1, τ, τ², τ³)`
    CubicPoly,
    /// `(1, τ, Φ⁻¹(τ), −log(1−τ))`
    Mixed,
    Custom(Vec<TauPrimitive>),
}

impl TauBasis {
    /// The single constant function; reduces the integrated loss to a
    /// τ-independent location fit.
    pub fn constant() -> Self {
        TauBasis::Custom(vec![TauPrimitive::One])
    }

    pub fn len(&self) -> usize {
        match self {
            TauBasis::Gaussian => 2,
            TauBasis::CubicPoly | TauBasis::Mixed => 4,
            TauBasis::Custom(fs) => fs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(QpmaError::Config("tau basis needs at least one function".into()));
        }
        Ok(())
    }

    pub fn eval(&self, tau: f64) -> Result<Vec<f64>> {
        check_tau(tau)?;
        let mut out = vec![0.0; self.len()];
        self.eval_into(tau, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation into a caller-provided buffer of length `K`.
    pub(crate) fn eval_into(&self, tau: f64, out: &mut [f64]) {
        match self {
            TauBasis::Gaussian => {
                out[0] = 1.0;
                out[1] = normal_quantile(tau);
            }
            TauBasis::CubicPoly => {
                out[0] = 1.0;
                out[1] = tau;
                out[2] = tau * tau;
                out[3] = tau * tau * tau;
            }
            TauBasis::Mixed => {
                out[0] = 1.0;
                out[1] = tau;
                out[2] = normal_quantile(tau);
                out[3] = -(-tau).ln_1p();
            }
            TauBasis::Custom(fs) => {
                for (o, f) in out.iter_mut().zip(fs) {
                    *o = f.eval(tau);
                }
            }
        }
    }

    /// Row-major `m × K` matrix of basis values on a grid.
    pub fn eval_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let k = self.len();
        let mut out = vec![0.0; grid.len() * k];
        for (row, &tau) in out.chunks_exact_mut(k).zip(grid) {
            check_tau(tau)?;
            self.eval_into(tau, row);
        }
        Ok(out)
    }
}

impl fmt::Display for TauBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauBasis::Gaussian => write!(f, "gaussian"),
            TauBasis::CubicPoly => write!(f, "cubic-poly"),
            TauBasis::Mixed => write!(f, "mixed"),
            TauBasis::Custom(fs) => {
                let names: Vec<_> = fs.iter().map(|p| p.name()).collect();
                write!(f, "custom:{}", names.join(","))
            }
        }
    }
}

impl FromStr for TauBasis {
    type Err = QpmaError;

    /// Accepts `gaussian`, `cubic-poly`, `mixed` or `custom:f1,f2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "gaussian" => Ok(TauBasis::Gaussian),
            "cubic-poly" => Ok(TauBasis::CubicPoly),
            "mixed" => Ok(TauBasis::Mixed),
            _ => {
                let Some(list) = s.strip_prefix("custom:") else {
                    return Err(QpmaError::Config(format!(
                        "unknown tau basis '{s}' (expected gaussian | cubic-poly | mixed | custom:...)"
                    )));
                };
                let fs = list.split(',').map(str::parse).collect::<Result<Vec<_>>>()?;
                let basis = TauBasis::Custom(fs);
                basis.validate()?;
                Ok(basis)
            }
        }
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(QpmaError::TauOutOfRange(tau))
    }
}

/// Equally spaced interior grid `τ_k = k/(n+1)`, `k = 1..=n`.
pub fn tau_grid(n: usize) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(QpmaError::InvalidArgument("tau grid needs at least one point".into()));
    }
    let denom = (n + 1) as f64;
    Ok((1..=n).map(|k| k as f64 / denom).collect())
}

/// Keeps every `thin`-th point of a grid, starting with the first.
pub fn thin_grid(grid: &[f64], thin: usize) -> Vec<f64> {
    grid.iter().step_by(thin.max(1)).copied().collect()
}

/// Standard normal quantile function Φ⁻¹.
///
/// Wichura's AS241 (PPND16) rational approximations; relative accuracy about
/// 1e-16 over the open unit interval. Returns ±∞ at 0 and 1, NaN outside.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }

    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn builtin_families_at_one_half() {
        assert_eq!(TauBasis::Gaussian.eval(0.5).unwrap(), vec![1.0, 0.0]);
        assert_eq!(TauBasis::CubicPoly.eval(0.5).unwrap(), vec![1.0, 0.5, 0.25, 0.125]);
        let mixed = TauBasis::Mixed.eval(0.5).unwrap();
        assert_eq!(&mixed[..3], &[1.0, 0.5, 0.0]);
        assert_abs_diff_eq!(mixed[3], std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn rejects_tau_outside_open_interval() {
        for tau in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(TauBasis::Gaussian.eval(tau), Err(QpmaError::TauOutOfRange(_))));
        }
    }

    #[test]
    fn grids() {
        let g = tau_grid(4).unwrap();
        for (a, b) in g.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(tau_grid(1).unwrap(), vec![0.5]);
        assert_eq!(tau_grid(3).unwrap(), vec![0.25, 0.5, 0.75]);
        assert!(tau_grid(0).is_err());
        assert_eq!(thin_grid(&tau_grid(9).unwrap(), 4), vec![0.1, 0.5, 0.9]);
    }

    #[test]
    fn parse_round_trip() {
        for s in ["gaussian", "cubic-poly", "mixed", "custom:one,qnorm,neg-log1m-tau"] {
            let b: TauBasis = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert!("bogus".parse::<TauBasis>().is_err());
        assert!("custom:one,nope".parse::<TauBasis>().is_err());
    }

    #[test]
    fn normal_quantile_against_statrs() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut p = 1e-8;
        while p < 1.0 - 1e-8 {
            let want = normal.inverse_cdf(p);
            assert_abs_diff_eq!(normal_quantile(p), want, epsilon = 1e-9);
            p += 1.7e-4;
        }
        for p in [1e-8, 1e-6, 1e-3, 0.0227501319481792, 0.975, 1.0 - 1e-8] {
            assert_abs_diff_eq!(normal_quantile(p), normal.inverse_cdf(p), epsilon = 1e-9);
        }
        // Φ(1.2815515655446004) = 0.9
        assert_abs_diff_eq!(normal_quantile(0.9), 1.2815515655446004, epsilon = 1e-13);
    }

    #[test]
    fn finite_on_fine_grids() {
        let n = 1_000_000usize;
        for tau in [1.0 / (n as f64 + 1.0), n as f64 / (n as f64 + 1.0)] {
            for b in [TauBasis::Gaussian, TauBasis::CubicPoly, TauBasis::Mixed] {
                assert!(b.eval(tau).unwrap().iter().all(|v| v.is_finite()));
            }
        }
    }

    proptest! {
        #[test]
        fn normal_quantile_is_odd(tau in 1e-9f64..0.5) {
            prop_assert!((normal_quantile(tau) + normal_quantile(1.0 - tau)).abs() < 1e-10);
        }

        #[test]
        fn first_component_is_one(tau in 1e-6f64..(1.0 - 1e-6)) {
            for b in [TauBasis::Gaussian, TauBasis::CubicPoly, TauBasis::Mixed] {
                prop_assert_eq!(b.eval(tau).unwrap()[0], 1.0);
            }
        }
    }
}
