//! Rate models for density-dependent one-step processes.
//!
//! A model consists of polynomial rate functions `A` (up-jumps) and `C`
//! (down-jumps) on `[0, 1]`, extended to `[-eta, 1+eta]`, plus an initial
//! density `u0` on `[0, 1]`. Admissibility demands:
//!
//! * `A(1) = 0` and `C(0) = 0` (no escape from `{0..N}`),
//! * `A + C > 0` on all of `[-eta, 1+eta]`,
//! * `A - C > 0` on `[-eta, 0]` and `A - C < 0` on `[1, 1+eta]`
//!   (drift points back into the unit interval),
//! * some integer `N0 > 1/(2 eta)` with `2 N0 |A - C| > |A' + C'|` on both
//!   extension strips.
//!
//! All sampled checks use a 10^4-point uniform grid, the crate-wide
//! convention for polynomial sup norms.

use std::fmt::Write as _;

use thiserror::Error;

use crate::grid::{GridFunction, GridSpec};
use crate::poly::Poly;
use crate::scalar::{real, real_of, Scalar};

/// Number of sample points for every sampled sup norm / sign check.
pub const SIGN_CHECK_POINTS: usize = 10_000;

/// Absolute tolerance for the endpoint conditions `A(1) = 0`, `C(0) = 0` and
/// the initial-data endpoint conditions.
pub const ENDPOINT_TOL: f64 = 1e-12;

/// Search ceiling for the admissible lattice size threshold.
pub const N0_SEARCH_LIMIT: u64 = 1_000_000_000;

pub const MAX_DEGREE: usize = 16;

#[derive(Debug, Error)]
pub enum RatesError {
    #[error("empty coefficient list for {0}")]
    EmptyCoeffs(&'static str),
    #[error("{which} has degree {degree}, above the supported maximum {MAX_DEGREE}")]
    DegreeTooHigh { which: &'static str, degree: usize },
    #[error("extension half-width eta must be positive and at most 1, got {0}")]
    BadEta(f64),
    #[error("total rate A+C is not positive at z = {z} (value {value:e})")]
    DegenerateModel { z: f64, value: f64 },
    #[error("drift sign condition violated at z = {z} (A-C = {value:e})")]
    SignConditionViolated { z: f64, value: f64 },
    #[error("no admissible lattice threshold N0 below {0}")]
    NoAdmissibleN0(u64),
    #[error("derivative order {0} not supported (max 4)")]
    OrderTooHigh(usize),
    #[error("z = {z} outside the model domain [{lo}, {hi}]")]
    OutOfDomain { z: f64, lo: f64, hi: f64 },
    #[error("initial density not admissible: {0}")]
    InvalidInitial(String),
    #[error("model file parse error: {0}")]
    Parse(String),
}

/// Which rate function to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateKind {
    /// Up-jump rate density `A`.
    Up,
    /// Down-jump rate density `C`.
    Down,
}

/// Polynomial rate model. Construction checks only structure (degrees, eta);
/// the analytic admissibility conditions are checked by [`validate_rate_model`].
#[derive(Clone, Debug)]
pub struct RateModel<F> {
    a: Poly<F>,
    c: Poly<F>,
    eta: F,
    label: String,
}

impl<F: Scalar> RateModel<F> {
    pub fn new(
        a_coeffs: Vec<F>,
        c_coeffs: Vec<F>,
        eta: F,
        label: impl Into<String>,
    ) -> Result<Self, RatesError> {
        if a_coeffs.is_empty() {
            return Err(RatesError::EmptyCoeffs("a_coeffs"));
        }
        if c_coeffs.is_empty() {
            return Err(RatesError::EmptyCoeffs("c_coeffs"));
        }
        if a_coeffs.len() - 1 > MAX_DEGREE {
            return Err(RatesError::DegreeTooHigh {
                which: "A",
                degree: a_coeffs.len() - 1,
            });
        }
        if c_coeffs.len() - 1 > MAX_DEGREE {
            return Err(RatesError::DegreeTooHigh {
                which: "C",
                degree: c_coeffs.len() - 1,
            });
        }
        let eta_f = eta.to_f64().unwrap_or(f64::NAN);
        if !(eta_f > 0.0 && eta_f <= 1.0) {
            return Err(RatesError::BadEta(eta_f));
        }
        Ok(RateModel {
            a: Poly::new(a_coeffs),
            c: Poly::new(c_coeffs),
            eta,
            label: label.into(),
        })
    }

    pub fn a(&self) -> &Poly<F> {
        &self.a
    }

    pub fn c(&self) -> &Poly<F> {
        &self.c
    }

    pub fn eta(&self) -> F {
        self.eta
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `A + C` as an exact polynomial.
    pub fn total_rate(&self) -> Poly<F> {
        self.a.add(&self.c)
    }

    /// `A - C` as an exact polynomial.
    pub fn drift(&self) -> Poly<F> {
        self.a.sub(&self.c)
    }

    /// Model domain `[-eta, 1 + eta]`.
    pub fn domain(&self) -> (F, F) {
        (-self.eta, F::one() + self.eta)
    }

    /// Sup norm of the `order`-th derivative of a rate combination over the
    /// model domain, sampled on the crate-wide 10^4-point grid.
    pub fn sup_norm(&self, p: &Poly<F>, order: usize) -> F {
        let (lo, hi) = self.domain();
        p.derivative_n(order).sup_norm_sampled(lo, hi, SIGN_CHECK_POINTS).0
    }
}

/// Location/value pair witnessing a sampled extremum.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct PointValue<F> {
    pub z: F,
    pub value: F,
}

/// Outcome of [`validate_rate_model`]: per-condition witnesses plus the
/// admissible lattice threshold `N0`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ValidationReport<F> {
    pub label: String,
    /// `A(1)`; must vanish to `ENDPOINT_TOL`.
    pub a_at_one: F,
    /// `C(0)`; must vanish to `ENDPOINT_TOL`.
    pub c_at_zero: F,
    pub endpoints_ok: bool,
    /// Sampled minimum of `A + C` over `[-eta, 1+eta]` (must be positive).
    pub total_rate_min: PointValue<F>,
    /// Sampled minimum of `A - C` over `[-eta, 0]` (must be positive).
    pub drift_min_left: PointValue<F>,
    /// Sampled maximum of `A - C` over `[1, 1+eta]` (must be negative).
    pub drift_max_right: PointValue<F>,
    /// Smallest integer `> 1/(2 eta)` with `2 N0 |A-C| > |A'+C'|` on the strips.
    pub n0: usize,
}

impl<F: Scalar> ValidationReport<F> {
    pub fn all_passed(&self) -> bool {
        self.endpoints_ok
            && self.total_rate_min.value > F::zero()
            && self.drift_min_left.value > F::zero()
            && self.drift_max_right.value < F::zero()
    }
}

fn uniform_points<F: Scalar>(lo: F, hi: F, n: usize) -> impl Iterator<Item = F> {
    let step = (hi - lo) / real_of::<F>(n - 1);
    (0..n).map(move |i| lo + step * real_of::<F>(i))
}

/// Smallest integer strictly greater than `x`, guarding against `x` sitting a
/// few ulps below an exact integer (e.g. `1/(2*0.1)` evaluating to
/// `4.999...97`, which must still yield 6, not 5).
fn smallest_integer_above(x: f64) -> u64 {
    let nudged = x + x.abs() * 1e-12 + 1e-12;
    nudged.floor() as u64 + 1
}

/// Check the admissibility conditions on sampled grids and locate `N0`.
///
/// Returns hard errors for a non-positive total rate, a violated drift sign
/// condition (first offending sample point, scanning left to right), and a
/// failed `N0` search; the endpoint conditions are reported as a flag with
/// the measured values.
pub fn validate_rate_model<F: Scalar>(
    model: &RateModel<F>,
) -> Result<ValidationReport<F>, RatesError> {
    let (lo, hi) = model.domain();
    let total = model.total_rate();
    let drift = model.drift();
    let slope_sum = model.a().derivative().add(&model.c().derivative());

    let a_at_one = model.a().eval(F::one());
    let c_at_zero = model.c().eval(F::zero());
    let tol: F = real(ENDPOINT_TOL);
    let endpoints_ok = a_at_one.abs() <= tol && c_at_zero.abs() <= tol;

    // Positivity of A + C over the full extended domain.
    let mut total_rate_min = PointValue {
        z: lo,
        value: F::infinity(),
    };
    for z in uniform_points(lo, hi, SIGN_CHECK_POINTS) {
        let v = total.eval(z);
        if v < total_rate_min.value {
            total_rate_min = PointValue { z, value: v };
        }
    }
    if total_rate_min.value <= F::zero() {
        return Err(RatesError::DegenerateModel {
            z: total_rate_min.z.to_f64().unwrap_or(f64::NAN),
            value: total_rate_min.value.to_f64().unwrap_or(f64::NAN),
        });
    }

    // Drift sign on the strips. Strip grids use the same 10^4-point density
    // and include the strip endpoints exactly.
    let left: Vec<F> = uniform_points(lo, F::zero(), SIGN_CHECK_POINTS).collect();
    let right: Vec<F> = uniform_points(F::one(), hi, SIGN_CHECK_POINTS).collect();

    let mut drift_min_left = PointValue {
        z: lo,
        value: F::infinity(),
    };
    for &z in &left {
        let v = drift.eval(z);
        if v <= F::zero() {
            return Err(RatesError::SignConditionViolated {
                z: z.to_f64().unwrap_or(f64::NAN),
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
        if v < drift_min_left.value {
            drift_min_left = PointValue { z, value: v };
        }
    }
    let mut drift_max_right = PointValue {
        z: hi,
        value: F::neg_infinity(),
    };
    for &z in &right {
        let v = drift.eval(z);
        if v >= F::zero() {
            return Err(RatesError::SignConditionViolated {
                z: z.to_f64().unwrap_or(f64::NAN),
                value: v.to_f64().unwrap_or(f64::NAN),
            });
        }
        if v > drift_max_right.value {
            drift_max_right = PointValue { z, value: v };
        }
    }

    // N0: need N0 > 1/(2 eta) and 2 N0 |A-C| > |A'+C'| on both strips, i.e.
    // N0 > max over strips of |A'+C'| / (2 |A-C|).
    let eta = model.eta().to_f64().unwrap_or(f64::NAN);
    let mut ratio_max = 1.0 / (2.0 * eta);
    for z in left.iter().chain(right.iter()) {
        let d = drift.eval(*z).abs().to_f64().unwrap_or(f64::NAN);
        let s = slope_sum.eval(*z).abs().to_f64().unwrap_or(f64::NAN);
        let ratio = s / (2.0 * d);
        if !ratio.is_finite() || ratio > N0_SEARCH_LIMIT as f64 {
            return Err(RatesError::NoAdmissibleN0(N0_SEARCH_LIMIT));
        }
        ratio_max = ratio_max.max(ratio);
    }
    let n0 = smallest_integer_above(ratio_max);
    if n0 > N0_SEARCH_LIMIT {
        return Err(RatesError::NoAdmissibleN0(N0_SEARCH_LIMIT));
    }

    Ok(ValidationReport {
        label: model.label().to_string(),
        a_at_one,
        c_at_zero,
        endpoints_ok,
        total_rate_min,
        drift_min_left,
        drift_max_right,
        n0: n0 as usize,
    })
}

/// Evaluate a rate function or one of its first four derivatives.
pub fn eval_rate<F: Scalar>(
    model: &RateModel<F>,
    which: RateKind,
    order: usize,
    z: F,
) -> Result<F, RatesError> {
    if order > 4 {
        return Err(RatesError::OrderTooHigh(order));
    }
    let (lo, hi) = model.domain();
    let slack: F = real(1e-12);
    if z < lo - slack || z > hi + slack {
        return Err(RatesError::OutOfDomain {
            z: z.to_f64().unwrap_or(f64::NAN),
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
        });
    }
    let p = match which {
        RateKind::Up => model.a(),
        RateKind::Down => model.c(),
    };
    Ok(p.derivative_n(order).eval(z))
}

/// Polynomial initial density on `[0, 1]`, extended by zero outside.
#[derive(Clone, Debug)]
pub struct InitialFunction<F> {
    u0: Poly<F>,
}

impl<F: Scalar> InitialFunction<F> {
    pub fn new(coeffs: Vec<F>) -> Result<Self, RatesError> {
        if coeffs.is_empty() {
            return Err(RatesError::EmptyCoeffs("u0_coeffs"));
        }
        if coeffs.len() - 1 > MAX_DEGREE {
            return Err(RatesError::DegreeTooHigh {
                which: "u0",
                degree: coeffs.len() - 1,
            });
        }
        Ok(InitialFunction {
            u0: Poly::new(coeffs),
        })
    }

    pub fn from_f64(coeffs: &[f64]) -> Self {
        InitialFunction {
            u0: Poly::from_f64(coeffs),
        }
    }

    pub fn poly(&self) -> &Poly<F> {
        &self.u0
    }

    /// Admissibility: non-negative on `[0, 1]` (sampled) and vanishing with
    /// its first derivative at both endpoints. Returns the list of failures.
    pub fn admissibility_failures(&self) -> Vec<String> {
        let mut failures = Vec::new();
        let tol: F = real(ENDPOINT_TOL);
        let du = self.u0.derivative();
        for (name, v) in [
            ("u0(0)", self.u0.eval(F::zero())),
            ("u0(1)", self.u0.eval(F::one())),
            ("u0'(0)", du.eval(F::zero())),
            ("u0'(1)", du.eval(F::one())),
        ] {
            if v.abs() > tol {
                let mut msg = String::new();
                let _ = write!(msg, "{name} = {:e} exceeds {ENDPOINT_TOL:e}", v.to_f64().unwrap_or(f64::NAN));
                failures.push(msg);
            }
        }
        for z in uniform_points(F::zero(), F::one(), SIGN_CHECK_POINTS) {
            if self.u0.eval(z) < F::zero() {
                failures.push(format!(
                    "u0({}) < 0",
                    z.to_f64().unwrap_or(f64::NAN)
                ));
                break;
            }
        }
        failures
    }

    pub fn is_admissible(&self) -> bool {
        self.admissibility_failures().is_empty()
    }
}

/// Sample the zero-extended initial density on a grid. Nodes strictly outside
/// `[0, 1]` get exactly `0`; the junction nodes evaluate the polynomial
/// (which the admissibility conditions pin to ~0 there).
///
/// Errors with `InvalidInitial` if `u0` fails its admissibility conditions;
/// use [`extend_initial_unchecked`] to build the extension regardless (guard
/// paths that want to *observe* the effect of inadmissible data).
pub fn extend_initial<F: Scalar>(
    u0: &InitialFunction<F>,
    grid: &GridSpec<F>,
) -> Result<GridFunction<F>, RatesError> {
    let failures = u0.admissibility_failures();
    if !failures.is_empty() {
        return Err(RatesError::InvalidInitial(failures.join("; ")));
    }
    Ok(extend_initial_unchecked(u0, grid))
}

/// See [`extend_initial`]; skips the admissibility check.
pub fn extend_initial_unchecked<F: Scalar>(
    u0: &InitialFunction<F>,
    grid: &GridSpec<F>,
) -> GridFunction<F> {
    let values = grid
        .nodes()
        .iter()
        .map(|&x| {
            if x < F::zero() || x > F::one() {
                F::zero()
            } else {
                u0.poly().eval(x)
            }
        })
        .collect();
    GridFunction::new(grid.clone(), values)
}

/// Built-in model: linear swap rates `A = 1 - z`, `C = z` (two-urn dynamics),
/// `eta = 0.1`. Stationary law is Binomial(N, 1/2).
pub fn ehrenfest<F: Scalar>() -> RateModel<F> {
    RateModel::new(
        vec![F::one(), -F::one()],
        vec![F::zero(), F::one()],
        real(0.1),
        "ehrenfest",
    )
    .expect("builtin model is structurally valid")
}

/// Built-in model with genuinely quadratic rates:
/// `A = (1 - z^2)/2`, `C = z(2 - z)/2`, `eta = 0.1`.
/// Same drift sign pattern as the linear model (`A - C = (1 - 2z)/2`) but a
/// spatially varying total rate `A + C = (1 + 2z - 2z^2)/2`.
pub fn quadratic<F: Scalar>() -> RateModel<F> {
    RateModel::new(
        vec![real(0.5), F::zero(), real(-0.5)],
        vec![F::zero(), F::one(), real(-0.5)],
        real(0.1),
        "quadratic",
    )
    .expect("builtin model is structurally valid")
}

/// Canonical initial density `30 z^2 (1 - z)^2`: a normalized bump with
/// `u0(0) = u0'(0) = u0(1) = u0'(1) = 0` and unit integral over `[0, 1]`.
pub fn default_initial<F: Scalar>() -> InitialFunction<F> {
    InitialFunction::from_f64(&[0.0, 0.0, 30.0, -60.0, 30.0])
}

/// Look up a built-in model by label.
pub fn builtin<F: Scalar>(name: &str) -> Option<RateModel<F>> {
    match name {
        "ehrenfest" => Some(ehrenfest()),
        "quadratic" => Some(quadratic()),
        _ => None,
    }
}

/// Parsed model file: rates plus optional initial density.
#[derive(Clone, Debug)]
pub struct ModelFile<F> {
    pub model: RateModel<F>,
    pub u0: Option<InitialFunction<F>>,
}

/// Parse the plain-text model format: `key = value` lines, `#` comments,
/// keys `label`, `eta`, `a_coeffs`, `c_coeffs`, `u0_coeffs`. Coefficient
/// lists are decimal literals, lowest degree first, separated by whitespace
/// or commas.
pub fn parse_model_file<F: Scalar>(text: &str) -> Result<ModelFile<F>, RatesError> {
    let mut label: Option<String> = None;
    let mut eta: Option<F> = None;
    let mut a_coeffs: Option<Vec<F>> = None;
    let mut c_coeffs: Option<Vec<F>> = None;
    let mut u0_coeffs: Option<Vec<F>> = None;

    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            RatesError::Parse(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        match key {
            "label" => label = Some(value.to_string()),
            "eta" => {
                let v: f64 = value.parse().map_err(|_| {
                    RatesError::Parse(format!("line {}: bad number `{value}`", lineno + 1))
                })?;
                eta = Some(real(v));
            }
            "a_coeffs" | "c_coeffs" | "u0_coeffs" => {
                let coeffs = parse_coeff_list::<F>(value, lineno + 1)?;
                match key {
                    "a_coeffs" => a_coeffs = Some(coeffs),
                    "c_coeffs" => c_coeffs = Some(coeffs),
                    _ => u0_coeffs = Some(coeffs),
                }
            }
            other => {
                return Err(RatesError::Parse(format!(
                    "line {}: unknown key `{other}`",
                    lineno + 1
                )))
            }
        }
    }

    let a_coeffs = a_coeffs.ok_or_else(|| RatesError::Parse("missing a_coeffs".into()))?;
    let c_coeffs = c_coeffs.ok_or_else(|| RatesError::Parse("missing c_coeffs".into()))?;
    let eta = eta.ok_or_else(|| RatesError::Parse("missing eta".into()))?;
    let label = label.unwrap_or_else(|| "unnamed".to_string());
    let model = RateModel::new(a_coeffs, c_coeffs, eta, label)?;
    let u0 = match u0_coeffs {
        Some(coeffs) => Some(InitialFunction::new(coeffs)?),
        None => None,
    };
    Ok(ModelFile { model, u0 })
}

/// Render a model back into the plain-text format (round-trip partner of
/// [`parse_model_file`]).
pub fn render_model_file<F: Scalar>(model: &RateModel<F>, u0: Option<&InitialFunction<F>>) -> String {
    fn list<F: Scalar>(p: &Poly<F>) -> String {
        p.coeffs()
            .iter()
            .map(|c| format!("{}", c))
            .collect::<Vec<_>>()
            .join(" ")
    }
    let mut out = String::new();
    let _ = writeln!(out, "label = {}", model.label());
    let _ = writeln!(out, "eta = {}", model.eta());
    let _ = writeln!(out, "a_coeffs = {}", list(model.a()));
    let _ = writeln!(out, "c_coeffs = {}", list(model.c()));
    if let Some(u0) = u0 {
        let _ = writeln!(out, "u0_coeffs = {}", list(u0.poly()));
    }
    out
}

fn parse_coeff_list<F: Scalar>(value: &str, lineno: usize) -> Result<Vec<F>, RatesError> {
    let mut coeffs = Vec::new();
    for tok in value.split(|c: char| c.is_whitespace() || c == ',') {
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok
            .parse()
            .map_err(|_| RatesError::Parse(format!("line {lineno}: bad number `{tok}`")))?;
        coeffs.push(real(v));
    }
    if coeffs.is_empty() {
        return Err(RatesError::Parse(format!(
            "line {lineno}: empty coefficient list"
        )));
    }
    Ok(coeffs)
}
