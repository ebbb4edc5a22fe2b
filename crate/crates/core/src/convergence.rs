//! The headline experiment: solve the lattice master equation and the
//! drift-diffusion field side by side, measure the lattice error
//! `e(t) = max_k |v(t, k/N) - p_k(t)|` across a ladder of `N`, and fit the
//! empirical convergence order by least squares on `(log N, log e)`.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fpde::{discretize_fp, sample_at_lattice, solve_fp, uniform_times, FieldTrajectory, FpdeError};
use crate::grid::GridFunction;
use crate::master::{
    build_generator, normalize_initial, solve_master, DistributionTrajectory, MasterError,
};
use crate::rates::{extend_initial_unchecked, InitialFunction, RateModel};
use crate::scalar::{real, real_of, total, Scalar};

/// Number of uniform output times on `[0, t0]` used by ladder runs.
pub const LADDER_OUTPUT_TIMES: usize = 21;

/// Fixed step for the mean-field integrator.
pub const MEAN_FIELD_DT: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum ConvergenceError {
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error(transparent)]
    Fpde(#[from] FpdeError),
    #[error("order fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("order fit requires positive errors; point {index} has {value:e}")]
    NonPositiveError { index: usize, value: f64 },
    #[error("ladder sizes must be strictly increasing")]
    LadderNotIncreasing,
}

/// Outcome of one side-by-side solve at a fixed `N`.
#[derive(Clone, Debug)]
pub struct ComparisonRun<F> {
    pub master: DistributionTrajectory<F>,
    pub field: FieldTrajectory<F>,
    /// `errors[i] = max_k |v(times[i], k/N) - p_k(times[i])|`.
    pub errors: Vec<F>,
    /// Same curve with the initial density's scale restored (multiply by the
    /// normalization mass; linearity makes a second solve unnecessary).
    pub errors_unnormalized: Vec<F>,
    /// Lattice mass `Q_N` of the unnormalized initial density.
    pub qn: F,
    pub renorm: F,
    /// Admissibility failures of the initial density (empty when admissible).
    pub u0_failures: Vec<String>,
    /// `max_t |sum_k p_k(t) - 1|`.
    pub master_mass_drift: F,
    /// `max_t |dx sum_j u_j(t) - m(0)| / m(0)`.
    pub field_mass_drift: F,
}

/// Solve both systems from the shared initial density and compare at the
/// lattice points. The distribution starts from `p_k(0) = u0(k/N) / Q_N` and
/// the field from the zero-extension of `u0 / Q_N`; both normalizations
/// apply the identical floating-point operations to identical lattice
/// values, so `e(0) = 0` exactly.
pub fn run_pair<F: Scalar>(
    model: &RateModel<F>,
    u0: &InitialFunction<F>,
    n: usize,
    t_grid: &[F],
    r: usize,
) -> Result<ComparisonRun<F>, ConvergenceError> {
    let gen = build_generator(model, n)?;
    let disc = discretize_fp(model, n, r)?;
    let u0_failures = u0.admissibility_failures();

    let ext = extend_initial_unchecked(u0, disc.grid());
    let norm = normalize_initial(&ext, n)?;
    let v0: Vec<F> = ext
        .values
        .iter()
        .map(|&v| (v / norm.qn) / norm.renorm)
        .collect();
    let v0 = GridFunction::new(disc.grid().clone(), v0);

    let master = solve_master(&gen, &norm.p0, t_grid)?;
    let field = solve_fp(&disc, &v0, t_grid)?;

    let mut errors = Vec::with_capacity(t_grid.len());
    for (p, u) in master.states.iter().zip(&field.fields) {
        let snapshot = GridFunction::new(disc.grid().clone(), u.clone());
        let samples = sample_at_lattice(&snapshot, n)?;
        let e = samples
            .iter()
            .zip(p)
            .fold(F::zero(), |m, (&v, &pk)| m.max((v - pk).abs()));
        errors.push(e);
    }
    let scale = norm.qn * norm.renorm;
    let errors_unnormalized: Vec<F> = errors.iter().map(|&e| scale * e).collect();

    let master_mass_drift = master
        .states
        .iter()
        .fold(F::zero(), |m, p| m.max((total(p) - F::one()).abs()));
    let mass0 = disc.mass(&field.fields[0]);
    let field_mass_drift = field
        .fields
        .iter()
        .fold(F::zero(), |m, u| m.max((disc.mass(u) - mass0).abs()))
        / mass0.abs();

    Ok(ComparisonRun {
        master,
        field,
        errors,
        errors_unnormalized,
        qn: norm.qn,
        renorm: norm.renorm,
        u0_failures,
        master_mass_drift,
        field_mass_drift,
    })
}

/// One ladder rung.
#[derive(Clone, Debug, Serialize)]
pub struct LadderEntry<F> {
    pub n: usize,
    /// `max_t e(t)` over the output grid.
    pub sup_error: F,
    /// `e(t0)` at the final output time.
    pub error_at_t0: F,
    pub sup_error_unnormalized: F,
    pub qn: F,
    pub seconds: f64,
    pub master_mass_drift: F,
    pub field_mass_drift: F,
}

/// Least-squares power-law fit `log e = slope * log N + intercept`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct OrderFit<F> {
    pub slope: F,
    pub intercept: F,
    pub r2: F,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport<F> {
    pub model_label: String,
    pub t0: F,
    pub r: usize,
    pub entries: Vec<LadderEntry<F>>,
    pub fitted_order: F,
    pub intercept: F,
    pub r2: F,
    /// `max_N N * sup_error(N)`: empirical constant in the `1/N` bound.
    pub k_estimate: F,
    pub u0_admissible: bool,
    pub u0_failures: Vec<String>,
    pub config_digest: String,
}

/// Run the ladder: for each `N` solve both systems on 21 uniform output
/// times spanning `[0, t0]`, then fit the order of `sup_error` against `N`.
/// Rungs run concurrently; each rung is deterministic, so the report does
/// not depend on thread count.
pub fn run_convergence<F: Scalar>(
    model: &RateModel<F>,
    u0: &InitialFunction<F>,
    t0: F,
    n_list: &[usize],
    r: usize,
) -> Result<ConvergenceReport<F>, ConvergenceError> {
    if n_list.len() < 3 {
        return Err(ConvergenceError::TooFewPoints(n_list.len()));
    }
    if !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(ConvergenceError::LadderNotIncreasing);
    }
    assert!(t0 > F::zero(), "horizon must be positive");
    let t_grid = uniform_times(t0, LADDER_OUTPUT_TIMES);

    let entries: Vec<LadderEntry<F>> = n_list
        .par_iter()
        .map(|&n| -> Result<LadderEntry<F>, ConvergenceError> {
            let start = Instant::now();
            let run = run_pair(model, u0, n, &t_grid, r)?;
            let seconds = start.elapsed().as_secs_f64();
            let sup_error = run.errors.iter().fold(F::zero(), |m, &e| m.max(e));
            let sup_unnorm = run
                .errors_unnormalized
                .iter()
                .fold(F::zero(), |m, &e| m.max(e));
            Ok(LadderEntry {
                n,
                sup_error,
                error_at_t0: *run.errors.last().unwrap(),
                sup_error_unnormalized: sup_unnorm,
                qn: run.qn,
                seconds,
                master_mass_drift: run.master_mass_drift,
                field_mass_drift: run.field_mass_drift,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let points: Vec<(usize, F)> = entries.iter().map(|e| (e.n, e.sup_error)).collect();
    let fit = fit_order(&points)?;
    let k_estimate = entries
        .iter()
        .fold(F::zero(), |m, e| m.max(real_of::<F>(e.n) * e.sup_error));
    let u0_failures = u0.admissibility_failures();

    let mut config = format!("model={};t0={:e};r={r};times={LADDER_OUTPUT_TIMES};N=", model.label(), t0);
    for (i, n) in n_list.iter().enumerate() {
        if i > 0 {
            config.push(',');
        }
        config.push_str(&n.to_string());
    }
    let config_digest = format!("{:016x}", fnv1a64(config.as_bytes()));

    Ok(ConvergenceReport {
        model_label: model.label().to_string(),
        t0,
        r,
        entries,
        fitted_order: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        k_estimate,
        u0_admissible: u0_failures.is_empty(),
        u0_failures,
        config_digest,
    })
}

/// Ordinary least squares on `(log N, log error)`.
pub fn fit_order<F: Scalar>(points: &[(usize, F)]) -> Result<OrderFit<F>, ConvergenceError> {
    if points.len() < 3 {
        return Err(ConvergenceError::TooFewPoints(points.len()));
    }
    for (i, &(_, e)) in points.iter().enumerate() {
        if !(e > F::zero()) || !e.is_finite() {
            return Err(ConvergenceError::NonPositiveError {
                index: i,
                value: e.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let xs: Vec<F> = points.iter().map(|&(n, _)| real_of::<F>(n).ln()).collect();
    let ys: Vec<F> = points.iter().map(|&(_, e)| e.ln()).collect();
    let m = real_of::<F>(points.len());
    let xbar = total(&xs) / m;
    let ybar = total(&ys) / m;
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    let mut syy = F::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - xbar) * (x - xbar);
        sxy += (x - xbar) * (y - ybar);
        syy += (y - ybar) * (y - ybar);
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let mut ss_res = F::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        let p = slope * x + intercept;
        ss_res += (y - p) * (y - p);
    }
    let r2 = if syy > F::zero() {
        F::one() - ss_res / syy
    } else {
        F::one()
    };
    Ok(OrderFit {
        slope,
        intercept,
        r2,
    })
}

/// Classic fourth-order fixed-step integration of the rate ODE
/// `dx/dt = A(x) - C(x)`, evaluated on the output grid.
pub fn mean_field<F: Scalar>(model: &RateModel<F>, x0: F, t_grid: &[F]) -> Vec<F> {
    assert!(
        x0 >= F::zero() && x0 <= F::one(),
        "initial fraction must lie in [0, 1]"
    );
    assert!(!t_grid.is_empty());
    assert!(t_grid.windows(2).all(|w| w[0] < w[1]));
    assert!(t_grid[0] >= F::zero());

    let drift = model.drift();
    let f = |x: F| drift.eval(x);
    let dt: F = real(MEAN_FIELD_DT);
    let half = real::<F>(0.5);
    let sixth = F::one() / real::<F>(6.0);

    let mut out = Vec::with_capacity(t_grid.len());
    let mut x = x0;
    let mut t = F::zero();
    for &t_out in t_grid {
        if t_out > t {
            let span = t_out - t;
            let n_steps = (span / dt).ceil().to_usize().unwrap_or(1).max(1);
            let h = span / real_of::<F>(n_steps);
            for _ in 0..n_steps {
                let k1 = f(x);
                let k2 = f(x + half * h * k1);
                let k3 = f(x + half * h * k2);
                let k4 = f(x + h * k3);
                x = x + h * sixth * (k1 + real::<F>(2.0) * (k2 + k3) + k4);
            }
            t = t_out;
        }
        out.push(x);
    }
    out
}

/// Lattice mean `sum_k (k/N) p_k(t)` per output time, for comparison with
/// the rate ODE.
pub fn distribution_mean<F: Scalar>(traj: &DistributionTrajectory<F>) -> Vec<F> {
    let nf: F = real_of(traj.n);
    traj.states
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold(F::zero(), |s, (k, &pk)| s + real_of::<F>(k) / nf * pk)
        })
        .collect()
}

/// FNV-1a 64-bit digest, used to stamp reports with their configuration.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
