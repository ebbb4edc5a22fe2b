//! Observational probes of the field's boundary derivatives and of the
//! exponential-decay (contraction) estimates used by the error analysis.
//!
//! The headline objects: for a solved field u(t, x),
//!
//! * does `|u''|` (and `|u'''|`) attain its maximum away from the boundary
//!   strips `[-h, 0] + [1, 1+h]`? (`margin = global_max - boundary_max`)
//! * does the boundary-strip maximum of `|u''|` decay like `1/N`?
//! * is `t -> e^{-dt} ||u(t)||` non-increasing for the advertised decay
//!   rate `d = ||(A+C)''|| + ||A'|| + ||C'|| + 0.01` (sup norm for
//!   distributions; sup and C1 norms for fields)?
//!
//! These are recorded as flags, slopes, and margins, never as hard
//! assertions: they probe open conjectures, not proven statements.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::convergence::{
    fit_order, run_convergence, ConvergenceError, ConvergenceReport, OrderFit,
};
use crate::fpde::{discretize_fp, solve_fp, FieldTrajectory, FpdeError};
use crate::grid::GridFunction;
use crate::master::DistributionTrajectory;
use crate::rates::{InitialFunction, RateModel, SIGN_CHECK_POINTS};
use crate::scalar::{real, real_of, sup_norm, Scalar};

/// Contraction slack: discrete trajectories may overshoot the continuum
/// decay estimate by this relative amount.
pub const CONTRACTION_SLACK: f64 = 1e-6;

/// Minimum node count for the 5-point derivative stencils.
pub const MIN_STENCIL_NODES: usize = 7;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Fpde(#[from] FpdeError),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error("derivative stencils need at least {MIN_STENCIL_NODES} nodes, grid has {nodes}")]
    StencilOutOfRange { nodes: usize },
}

// ---------------------------------------------------------------------------
// Finite-difference derivatives
// ---------------------------------------------------------------------------

/// Solve the 5x5 Vandermonde system for stencil weights: `sum_i w_i o_i^p =
/// p! [p == order]` over powers `p = 0..4`, for integer offsets `o_i`.
/// Dividing by `dx^order` afterwards yields derivative weights exact on
/// polynomials of degree <= 4.
fn stencil_weights<F: Scalar>(offsets: [i64; 5], order: usize) -> [F; 5] {
    let mut a = [[F::zero(); 6]; 5];
    for (p, row) in a.iter_mut().enumerate() {
        for (i, &o) in offsets.iter().enumerate() {
            row[i] = real::<F>(o as f64).powi(p as i32);
        }
        row[5] = if p == order {
            real::<F>((1..=order).product::<usize>() as f64)
        } else {
            F::zero()
        };
    }
    // Gaussian elimination with partial pivoting on the augmented system.
    for col in 0..5 {
        let pivot = (col..5)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        for row in col + 1..5 {
            let factor = a[row][col] / a[col][col];
            for k in col..6 {
                let upper = a[col][k];
                a[row][k] = a[row][k] - factor * upper;
            }
        }
    }
    let mut w = [F::zero(); 5];
    for col in (0..5).rev() {
        let mut acc = a[col][5];
        for k in col + 1..5 {
            acc = acc - a[col][k] * w[k];
        }
        w[col] = acc / a[col][col];
    }
    w
}

/// Differentiate a grid field with fixed 5-point stencils: 4th-order central
/// stencils in the interior, one-sided 5-point stencils at the four outermost
/// nodes. Exact (to rounding) on polynomials of degree <= 4. `order` is 1, 2,
/// or 3.
pub fn derivative_field<F: Scalar>(
    field: &GridFunction<F>,
    order: usize,
) -> Result<GridFunction<F>, DiagnosticsError> {
    assert!((1..=3).contains(&order), "derivative order must be 1..=3");
    let m = field.values.len();
    if m < MIN_STENCIL_NODES {
        return Err(DiagnosticsError::StencilOutOfRange { nodes: m });
    }
    let scale = field.grid.dx().powi(order as i32);
    // Five distinct offset patterns: two left-edge, central, two right-edge.
    let patterns: [[i64; 5]; 5] = [
        [0, 1, 2, 3, 4],
        [-1, 0, 1, 2, 3],
        [-2, -1, 0, 1, 2],
        [-3, -2, -1, 0, 1],
        [-4, -3, -2, -1, 0],
    ];
    let weights: Vec<[F; 5]> = patterns
        .iter()
        .map(|&o| stencil_weights(o, order))
        .collect();

    let values = (0..m)
        .map(|j| {
            let pat = if j < 2 { j } else if j >= m - 2 { 5 - (m - j) } else { 2 };
            let offsets = &patterns[pat];
            let w = &weights[pat];
            let mut acc = F::zero();
            for i in 0..5 {
                let idx = (j as i64 + offsets[i]) as usize;
                acc += w[i] * field.values[idx];
            }
            acc / scale
        })
        .collect();
    Ok(GridFunction::new(field.grid.clone(), values))
}

// ---------------------------------------------------------------------------
// Boundary-derivative probes
// ---------------------------------------------------------------------------

/// One snapshot measurement of where a derivative of the field is large.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConjectureProbe<F> {
    pub n: usize,
    pub t: F,
    /// Derivative order, 2 or 3.
    pub order: usize,
    /// Max of the |derivative| over the strips `x <= 0` and `x >= 1`.
    pub boundary_max: F,
    /// Max over the whole domain.
    pub global_max: F,
    /// `global_max - boundary_max`; positive means the derivative peaks
    /// away from the boundary strips.
    pub margin: F,
    /// For order 3: whether `u0''' (0) = u0''' (1)` (the extra smoothness
    /// hypothesis of the third-derivative statement). Always true for
    /// order 2.
    pub initial_hypothesis: bool,
}

/// Measure boundary/global derivative maxima on one field snapshot.
pub fn probe_from_field<F: Scalar>(
    field: &GridFunction<F>,
    t: F,
    order: usize,
) -> Result<ConjectureProbe<F>, DiagnosticsError> {
    assert!(order == 2 || order == 3, "probe order must be 2 or 3");
    let deriv = derivative_field(field, order)?;
    let grid = &field.grid;
    let m = grid.m();
    let r = grid.r();
    // Strips: nodes with x <= 0 (indices 0..=r) and x >= 1 (top r+1).
    let mut boundary_max = F::zero();
    for j in (0..=r).chain(m - 1 - r..m) {
        boundary_max = boundary_max.max(deriv.values[j].abs());
    }
    let global_max = sup_norm(&deriv.values);
    Ok(ConjectureProbe {
        n: grid.n(),
        t,
        order,
        boundary_max,
        global_max,
        margin: global_max - boundary_max,
        initial_hypothesis: true,
    })
}

/// Whether `u0'''(0) = u0'''(1)` (to 1e-12 relative): the extra smoothness
/// hypothesis under which the third-order boundary statement is probed.
pub fn third_derivative_hypothesis<F: Scalar>(u0: &InitialFunction<F>) -> bool {
    let d3 = u0.poly().derivative_n(3);
    let a = d3.eval(F::zero());
    let b = d3.eval(F::one());
    (a - b).abs() <= real::<F>(1e-12) * F::one().max(a.abs()).max(b.abs())
}

/// Solve the field from `u0` and probe the chosen derivative at every output
/// time. For order 3 the probes also record whether `u0` satisfies the
/// endpoint third-derivative hypothesis.
pub fn probe_derivative_conjecture<F: Scalar>(
    model: &RateModel<F>,
    u0: &InitialFunction<F>,
    n: usize,
    t_grid: &[F],
    order: usize,
    r: usize,
) -> Result<Vec<ConjectureProbe<F>>, DiagnosticsError> {
    let disc = discretize_fp(model, n, r)?;
    let ext = crate::rates::extend_initial_unchecked(u0, disc.grid());
    let traj = solve_fp(&disc, &ext, t_grid)?;
    let hypothesis = if order == 3 {
        third_derivative_hypothesis(u0)
    } else {
        true
    };
    traj.times
        .iter()
        .zip(&traj.fields)
        .map(|(&t, u)| {
            let snapshot = GridFunction::new(disc.grid().clone(), u.clone());
            let mut probe = probe_from_field(&snapshot, t, order)?;
            probe.initial_hypothesis = hypothesis;
            Ok(probe)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryDecayEntry<F> {
    pub n: usize,
    /// Max over the time grid of the boundary-strip max of |u''|.
    pub boundary_max: F,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryDecayReport<F> {
    pub entries: Vec<BoundaryDecayEntry<F>>,
    pub slope: F,
    pub r2: F,
    /// Empirical support flag: slope <= -0.9.
    pub supports_decay: bool,
}

/// Fit the decay of the boundary-strip second derivative across a ladder of
/// `N` (slope of `log max |u''|_strips` vs `log N`). A slope near -1 supports
/// the conjectured `K'/N` bound.
///
/// Measure at times `t > 0`: at `t = 0` the field is the raw zero-extension
/// of `u0`, whose curvature jump at the junctions (e.g. `u0''(0+) = 60` for
/// the canonical bump) sits inside the strips and does not decay with `N`.
/// The conjecture concerns the solved flow, which smooths instantly.
pub fn probe_boundary_decay<F: Scalar>(
    model: &RateModel<F>,
    u0: &InitialFunction<F>,
    n_list: &[usize],
    t_grid: &[F],
    r: usize,
) -> Result<BoundaryDecayReport<F>, DiagnosticsError> {
    assert!(n_list.len() >= 3, "ladder needs at least 3 sizes");
    let entries: Vec<BoundaryDecayEntry<F>> = n_list
        .par_iter()
        .map(|&n| -> Result<BoundaryDecayEntry<F>, DiagnosticsError> {
            let probes = probe_derivative_conjecture(model, u0, n, t_grid, 2, r)?;
            let boundary_max = probes
                .iter()
                .fold(F::zero(), |m, p| m.max(p.boundary_max));
            Ok(BoundaryDecayEntry { n, boundary_max })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let points: Vec<(usize, F)> = entries.iter().map(|e| (e.n, e.boundary_max)).collect();
    let fit = fit_order(&points)?;
    Ok(BoundaryDecayReport {
        entries,
        slope: fit.slope,
        r2: fit.r2,
        supports_decay: fit.slope <= real(-0.9),
    })
}

// ---------------------------------------------------------------------------
// Contraction checks
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum TrajectoryNorm {
    Sup,
    C1,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContractionViolation<F> {
    pub t: F,
    /// How far the weighted norm rose above its running minimum requirement.
    pub excess: F,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport<F> {
    pub d: F,
    pub norm: TrajectoryNorm,
    /// `e^{-d t_i} * norm(t_i)` per output time.
    pub weighted: Vec<F>,
    pub ok: bool,
    pub first_violation: Option<ContractionViolation<F>>,
}

/// The decay rate `||(A+C)''|| + ||A'|| + ||C'|| + 0.01` (sups sampled over
/// the extended domain).
pub fn default_decay_rate<F: Scalar>(model: &RateModel<F>) -> F {
    let (lo, hi) = model.domain();
    let sup = |p: crate::poly::Poly<F>| p.sup_norm_sampled(lo, hi, SIGN_CHECK_POINTS).0;
    sup(model.total_rate().derivative_n(2))
        + sup(model.a().derivative())
        + sup(model.c().derivative())
        + real(0.01)
}

fn verify_decay<F: Scalar>(
    times: &[F],
    norms: &[F],
    d: F,
    norm_kind: TrajectoryNorm,
) -> ContractionReport<F> {
    let weighted: Vec<F> = times
        .iter()
        .zip(norms)
        .map(|(&t, &v)| (-d * t).exp() * v)
        .collect();
    let slack = real::<F>(CONTRACTION_SLACK) * F::one().max(weighted[0]);
    let mut first_violation = None;
    for i in 1..weighted.len() {
        let excess = weighted[i] - weighted[i - 1];
        if excess > slack {
            first_violation = Some(ContractionViolation {
                t: times[i],
                excess,
            });
            break;
        }
    }
    ContractionReport {
        d,
        norm: norm_kind,
        weighted,
        ok: first_violation.is_none(),
        first_violation,
    }
}

/// Check `t -> e^{-dt} ||p(t)||_sup` along a distribution trajectory.
pub fn check_contraction_distribution<F: Scalar>(
    traj: &DistributionTrajectory<F>,
    d: F,
) -> ContractionReport<F> {
    assert!(d >= F::zero(), "decay rate must be nonnegative");
    let norms: Vec<F> = traj.states.iter().map(|p| sup_norm(p)).collect();
    verify_decay(&traj.times, &norms, d, TrajectoryNorm::Sup)
}

/// Check `t -> e^{-dt} ||u(t)||` along a field trajectory in the sup norm or
/// the C1 norm (`sup|u| + sup|u'|`, first derivative by 5-point stencils).
pub fn check_contraction_field<F: Scalar>(
    traj: &FieldTrajectory<F>,
    d: F,
    norm: TrajectoryNorm,
) -> Result<ContractionReport<F>, DiagnosticsError> {
    assert!(d >= F::zero(), "decay rate must be nonnegative");
    let mut norms = Vec::with_capacity(traj.fields.len());
    for u in &traj.fields {
        let value = match norm {
            TrajectoryNorm::Sup => sup_norm(u),
            TrajectoryNorm::C1 => {
                let snapshot = GridFunction::new(traj.grid.clone(), u.clone());
                sup_norm(u) + sup_norm(&derivative_field(&snapshot, 1)?.values)
            }
        };
        norms.push(value);
    }
    Ok(verify_decay(&traj.times, &norms, d, norm))
}

/// Search the doubling ladder `d0, 2 d0, 4 d0, ...` for the smallest rate
/// whose C1 contraction check passes; gives up after `max_doublings`.
pub fn search_c1_contraction_rate<F: Scalar>(
    traj: &FieldTrajectory<F>,
    d0: F,
    max_doublings: usize,
) -> Result<Option<ContractionReport<F>>, DiagnosticsError> {
    assert!(d0 > F::zero());
    let mut d = d0;
    for _ in 0..=max_doublings {
        let report = check_contraction_field(traj, d, TrajectoryNorm::C1)?;
        if report.ok {
            return Ok(Some(report));
        }
        d = d * real(2.0);
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Conditional-order experiment
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct ConditionalOrderReport<F> {
    /// 2 or 3: the power of 1/N the conjecture-conditional theorem claims.
    pub claimed_order: usize,
    /// Slope threshold `-(claimed_order) + 0.2` for the support flag.
    pub threshold: F,
    pub consistent_with_claim: bool,
    pub report: ConvergenceReport<F>,
}

/// Decide whether a fitted slope reaches the claimed order (with a fixed
/// 0.2 allowance for fit noise).
pub fn conditional_flag<F: Scalar>(fit: &OrderFit<F>, claimed_order: usize) -> bool {
    fit.slope <= -real_of::<F>(claimed_order) + real(0.2)
}

/// The ladder experiment of the convergence module, annotated with whether
/// the empirical order reaches the conjecture-conditional claim (`1/N^2`
/// under the second-derivative statement, `1/N^3` under the
/// third-derivative one). Purely observational.
pub fn conditional_order_experiment<F: Scalar>(
    model: &RateModel<F>,
    u0: &InitialFunction<F>,
    n_list: &[usize],
    t0: F,
    claimed_order: usize,
    r: usize,
) -> Result<ConditionalOrderReport<F>, DiagnosticsError> {
    assert!(
        claimed_order == 2 || claimed_order == 3,
        "claimed order must be 2 or 3"
    );
    let report = run_convergence(model, u0, t0, n_list, r)?;
    let fit = OrderFit {
        slope: report.fitted_order,
        intercept: report.intercept,
        r2: report.r2,
    };
    let threshold = -real_of::<F>(claimed_order) + real::<F>(0.2);
    Ok(ConditionalOrderReport {
        claimed_order,
        threshold,
        consistent_with_claim: conditional_flag(&fit, claimed_order),
        report,
    })
}
