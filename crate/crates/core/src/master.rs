//! Master equations of the one-step process on states `{0..N}`.
//!
//! The generator acts on probability vectors `p` by
//! `(Lp)_k = a_{k-1} p_{k-1} - (a_k + c_k) p_k + c_{k+1} p_{k+1}` with
//! `a_k = N A(k/N)`, `c_k = N C(k/N)` and the convention `a_N = c_0 = 0`
//! (no escape from the state space). Column sums vanish identically, so the
//! total probability is a discrete invariant of the flow; the implicit
//! trapezoidal integrator preserves it to rounding.

use serde::Serialize;
use thiserror::Error;

use crate::grid::GridFunction;
use crate::rates::{validate_rate_model, RateModel, RatesError};
use crate::scalar::{real, real_of, sup_norm, Scalar};
use crate::tridiag::{trapezoid_step, TriBand};

/// Relative local-error tolerance of the adaptive trapezoidal integrator.
pub const MASTER_STEP_TOL: f64 = 1e-10;

/// Smallest step the controller may take before giving up.
pub const MASTER_MIN_STEP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MasterError {
    #[error("model failed validation: {0}")]
    InvalidModel(#[from] RatesError),
    #[error("model validation report has failing conditions: {0}")]
    ModelReportFailed(String),
    #[error("N = {n} is not above the admissible threshold N0 = {n0}")]
    NTooSmall { n: usize, n0: usize },
    #[error("initial data has zero lattice mass")]
    ZeroMass,
    #[error("step controller hit the minimum step {MASTER_MIN_STEP:e} at t = {t} without meeting tolerance")]
    ToleranceNotMet { t: f64 },
    #[error("chain is reducible: interior rate vanishes at state {k}")]
    Reducible { k: usize },
}

/// Generator of the one-step process in band form.
///
/// `sub[k] = a_k` for `k = 0..N-1` (up-jump out of `k`, matrix entry
/// `(k+1, k)`), `sup[k] = c_{k+1}` for `k = 0..N-1` (down-jump out of `k+1`,
/// entry `(k, k+1)`), `diag[k] = -(a_k + c_k)`.
#[derive(Clone, Debug)]
pub struct TridiagonalGenerator<F> {
    n: usize,
    band: TriBand<F>,
}

impl<F: Scalar> TridiagonalGenerator<F> {
    /// Lattice size `N`; the state space is `{0..N}` (dimension `N + 1`).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    /// Up-jump rates `a_k`, `k = 0..N-1`.
    pub fn sub(&self) -> &[F] {
        &self.band.sub
    }

    /// Down-jump rates `c_{k+1}`, `k = 0..N-1`.
    pub fn sup(&self) -> &[F] {
        &self.band.sup
    }

    pub fn diag(&self) -> &[F] {
        &self.band.diag
    }

    pub fn band(&self) -> &TriBand<F> {
        &self.band
    }

    pub fn apply(&self, p: &[F], out: &mut [F]) {
        self.band.matvec(p, out);
    }
}

/// Assemble the generator for lattice size `N`. Requires `N` above the
/// model's admissible threshold `N0`; rate values that round to tiny
/// negatives (endpoint roundoff) are clamped to zero so the band stays
/// non-negative.
pub fn build_generator<F: Scalar>(
    model: &RateModel<F>,
    n: usize,
) -> Result<TridiagonalGenerator<F>, MasterError> {
    let report = validate_rate_model(model)?;
    if !report.all_passed() {
        return Err(MasterError::ModelReportFailed(format!(
            "endpoints_ok = {}",
            report.endpoints_ok
        )));
    }
    if n <= report.n0 {
        return Err(MasterError::NTooSmall { n, n0: report.n0 });
    }

    let nf: F = real_of(n);
    let clamp = |v: F| {
        if v < F::zero() {
            debug_assert!(
                v > -real::<F>(1e-9) * nf,
                "rate significantly negative: {v:?}"
            );
            F::zero()
        } else {
            v
        }
    };
    let lattice = |k: usize| real_of::<F>(k) / nf;

    let mut sub = Vec::with_capacity(n);
    let mut sup = Vec::with_capacity(n);
    for k in 0..n {
        sub.push(clamp(nf * model.a().eval(lattice(k))));
        sup.push(clamp(nf * model.c().eval(lattice(k + 1))));
    }
    // diag[k] = -(a_k + c_k) built from the stored band values so that the
    // column sums vanish exactly, not just to rounding.
    let mut diag = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let a_k = if k < n { sub[k] } else { F::zero() };
        let c_k = if k > 0 { sup[k - 1] } else { F::zero() };
        diag.push(-(a_k + c_k));
    }

    Ok(TridiagonalGenerator {
        n,
        band: TriBand { sub, diag, sup },
    })
}

/// Initial probability vector derived from the extended density `u0`:
/// `p_k(0) = u0(k/N) / Q_N` with `Q_N = sum_k u0(k/N)`, followed by one
/// final renormalization so the entries sum to 1 in floating point.
#[derive(Clone, Debug)]
pub struct NormalizedInitial<F> {
    pub p0: Vec<F>,
    /// Lattice mass `Q_N` of the unnormalized density.
    pub qn: F,
    /// The final renormalization factor (the sum after dividing by `Q_N`).
    pub renorm: F,
}

pub fn normalize_initial<F: Scalar>(
    u0_grid: &GridFunction<F>,
    n: usize,
) -> Result<NormalizedInitial<F>, MasterError> {
    assert_eq!(u0_grid.grid.n(), n, "grid was built for a different N");
    let lattice: Vec<F> = (0..=n)
        .map(|k| u0_grid.values[u0_grid.grid.lattice_index(k)])
        .collect();
    let qn = crate::scalar::total(&lattice);
    if !(qn > F::zero()) {
        return Err(MasterError::ZeroMass);
    }
    let scaled: Vec<F> = lattice.iter().map(|&v| v / qn).collect();
    let renorm = crate::scalar::total(&scaled);
    let p0 = scaled.iter().map(|&v| v / renorm).collect();
    Ok(NormalizedInitial { p0, qn, renorm })
}

/// Probability trajectory on the output time grid.
#[derive(Clone, Debug, Serialize)]
pub struct DistributionTrajectory<F> {
    pub n: usize,
    pub times: Vec<F>,
    /// `states[i][k]` is `p_k(times[i])`.
    pub states: Vec<Vec<F>>,
}

/// Integrate `p' = L p` with the implicit trapezoidal rule and step-doubling
/// error control (relative tolerance [`MASTER_STEP_TOL`]). Steps are capped
/// at `2 / max|diag|` so the implicit matrix stays safely diagonally
/// dominant for the pivot-free tridiagonal solve.
pub fn solve_master<F: Scalar>(
    gen: &TridiagonalGenerator<F>,
    p0: &[F],
    times: &[F],
) -> Result<DistributionTrajectory<F>, MasterError> {
    let states = evolve_vector(gen.band(), p0, times)?;
    Ok(DistributionTrajectory {
        n: gen.n(),
        times: times.to_vec(),
        states,
    })
}

/// Core integrator, usable for arbitrary real vectors (probability or not);
/// complex diagnostics run it once on the real and once on the imaginary
/// part. Output `states[i]` is the solution at `times[i]`.
pub fn evolve_vector<F: Scalar>(
    band: &TriBand<F>,
    v0: &[F],
    times: &[F],
) -> Result<Vec<Vec<F>>, MasterError> {
    assert_eq!(band.dim(), v0.len(), "vector length must match generator");
    assert!(!times.is_empty(), "need at least one output time");
    assert!(
        times.windows(2).all(|w| w[0] < w[1]),
        "output times must be strictly increasing"
    );
    assert!(times[0] >= F::zero(), "output times start at or after 0");

    let dim = band.dim();
    let tol: F = real(MASTER_STEP_TOL);
    let min_step: F = real(MASTER_MIN_STEP);
    let max_diag = sup_norm(&band.diag);
    let dt_cap = if max_diag > F::zero() {
        real::<F>(2.0) / max_diag
    } else {
        F::infinity()
    };

    let mut states = Vec::with_capacity(times.len());
    let mut y = v0.to_vec();
    let mut t = F::zero();
    let mut dt = dt_cap.min(real(1e-2));

    let mut rhs = vec![F::zero(); dim];
    let mut full = vec![F::zero(); dim];
    let mut half = vec![F::zero(); dim];
    let mut half2 = vec![F::zero(); dim];

    for &t_out in times {
        while t < t_out {
            let remaining = t_out - t;
            if remaining <= min_step {
                // Rounding in `t += h` can leave a sub-minimum sliver before
                // the output time; the state cannot change beyond rounding
                // over it, so snap rather than demand an impossible step.
                t = t_out;
                break;
            }
            let output_clamped = remaining < dt;
            let mut h = dt.min(remaining).min(dt_cap);
            loop {
                if h < min_step {
                    return Err(MasterError::ToleranceNotMet {
                        t: t.to_f64().unwrap_or(f64::NAN),
                    });
                }
                let two = real::<F>(2.0);
                // One full step of size h.
                let factor_full = band.implicit_matrix(h / two).factor();
                trapezoid_step(band, &factor_full, h / two, &y, &mut rhs, &mut full);
                // Two half steps.
                let quarter = h / real::<F>(4.0);
                let factor_half = band.implicit_matrix(quarter).factor();
                trapezoid_step(band, &factor_half, quarter, &y, &mut rhs, &mut half);
                trapezoid_step(band, &factor_half, quarter, &half, &mut rhs, &mut half2);

                // Step-doubling estimate for the halved step (order 2).
                let mut err = F::zero();
                for i in 0..dim {
                    err = err.max((half2[i] - full[i]).abs());
                }
                err = err / real::<F>(3.0);
                let scale = sup_norm(&half2).max(real(1e-300));
                let rel = err / scale;

                if rel <= tol {
                    y.copy_from_slice(&half2);
                    t = t + h;
                    // Grow cautiously; the cube root matches the O(h^3)
                    // local error of the trapezoidal rule.
                    let growth = if rel > F::zero() {
                        (tol / rel).powf(real(1.0 / 3.0)) * real(0.9)
                    } else {
                        real(5.0)
                    };
                    let proposal = (h * growth.min(real(5.0))).min(dt_cap);
                    // A step clamped to the output time says nothing about
                    // accuracy; keep the larger working step in that case.
                    dt = if output_clamped { dt.max(proposal) } else { proposal };
                    break;
                }
                let shrink = (tol / rel).powf(real(1.0 / 3.0)) * real(0.9);
                h = h * shrink.max(real(0.2));
            }
        }
        states.push(y.clone());
    }
    Ok(states)
}

/// Stationary distribution by detailed balance, accumulated in log space:
/// `log pi_k = sum_{j=1..k} (log a_{j-1} - log c_j)`, shifted and normalized.
/// Requires every interior rate to be strictly positive (irreducibility).
pub fn stationary_distribution<F: Scalar>(
    gen: &TridiagonalGenerator<F>,
) -> Result<Vec<F>, MasterError> {
    let n = gen.n();
    for k in 0..n {
        if !(gen.sub()[k] > F::zero()) {
            return Err(MasterError::Reducible { k });
        }
        if !(gen.sup()[k] > F::zero()) {
            return Err(MasterError::Reducible { k: k + 1 });
        }
    }
    let mut log_pi = Vec::with_capacity(n + 1);
    let mut acc = F::zero();
    log_pi.push(acc);
    for k in 1..=n {
        acc = acc + gen.sub()[k - 1].ln() - gen.sup()[k - 1].ln();
        log_pi.push(acc);
    }
    let max = log_pi.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut pi: Vec<F> = log_pi.iter().map(|&v| (v - max).exp()).collect();
    let total = crate::scalar::total(&pi);
    for v in &mut pi {
        *v = *v / total;
    }
    Ok(pi)
}

/// Swap-rate model with a wide extension strip (eta = 0.6 gives N0 = 1),
/// so small pinned examples (N = 2) pass the admissibility gate. The
/// generator bands depend only on the rates, not on eta. Test-only helper
/// shared across module test suites.
#[cfg(test)]
pub(crate) fn swap_wide() -> RateModel<f64> {
    RateModel::new(vec![1.0, -1.0], vec![0.0, 1.0], 0.6, "swap-wide").unwrap()
}
