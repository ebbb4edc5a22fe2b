//! Finite-volume solver for the drift-diffusion approximation
//!
//! ```text
//! du/dt = (1/2N) d^2/dz^2 [ (A+C) u ] - d/dz [ (A-C) u ]   on [-h, 1+h]
//! ```
//!
//! with zero-flux boundaries: the flux `(1/2N) ((A+C)u)' - (A-C)u` vanishes
//! at both ends of the domain, which is exactly the reflecting condition the
//! lattice process satisfies at its extended endpoints.
//!
//! Unknowns are cell averages on `m = 2r(N+1)+1` cells of width `dx`
//! centered at the grid nodes; the outermost interfaces carry no flux, so
//! the plain discrete mass `dx * sum_j u_j` is a conserved quantity of the
//! semi-discrete system (column sums of the operator vanish identically).

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridFunction, GridSpec};
use crate::rates::{validate_rate_model, RateModel, RatesError};
use crate::scalar::{real, real_of, sup_norm, total, Scalar};
use crate::tridiag::{trapezoid_step, TriBand};

/// Fixed-step ceiling for the Crank-Nicolson integrator.
pub const FP_DT_MAX: f64 = 1e-3;

/// Accept a run when halving the step changes the final field by less than
/// this in sup norm.
pub const FP_RICHARDSON_TOL: f64 = 1e-6;

/// Absolute tolerance for the stationary-density quadrature.
pub const FP_QUADRATURE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FpdeError {
    #[error("model failed validation: {0}")]
    InvalidModel(#[from] RatesError),
    #[error("model validation report has failing conditions")]
    ModelReportFailed,
    #[error("N = {n} is not above the admissible threshold N0 = {n0}")]
    NTooSmall { n: usize, n0: usize },
    #[error("refinement factor r = {0} must be at least 2")]
    RefinementTooSmall(usize),
    #[error("step-halving check failed twice: last sup differences {first:e}, {second:e}")]
    RichardsonFailed { first: f64, second: f64 },
    #[error("adaptive quadrature failed to converge on [{a}, {b}]")]
    QuadratureFailed { a: f64, b: f64 },
    #[error("field grid is not aligned with lattice size N = {0}")]
    MisalignedGrid(usize),
}

/// Discrete operator data. `node_diffusion[j] = (A+C)(x_j) / (2N)` feeds the
/// conservative second difference of `(A+C)u`; `iface_drift[j] = (A-C)` at
/// the interface `x_{j+1/2}` multiplies the centered average of `u` there.
/// (Per-cell Peclet is `|A-C| / (r (A+C))`, at most ~1/r, so the centered
/// drift average is stable without upwinding.)
#[derive(Clone, Debug)]
pub struct FpDiscretization<F> {
    grid: GridSpec<F>,
    node_diffusion: Vec<F>,
    iface_drift: Vec<F>,
    op: TriBand<F>,
}

impl<F: Scalar> FpDiscretization<F> {
    pub fn grid(&self) -> &GridSpec<F> {
        &self.grid
    }

    pub fn node_diffusion(&self) -> &[F] {
        &self.node_diffusion
    }

    pub fn iface_drift(&self) -> &[F] {
        &self.iface_drift
    }

    /// The assembled operator `L` in band form.
    pub fn op(&self) -> &TriBand<F> {
        &self.op
    }

    pub fn apply(&self, w: &[F], out: &mut [F]) {
        self.op.matvec(w, out);
    }

    /// Discrete mass `dx * sum_j w_j`.
    pub fn mass(&self, w: &[F]) -> F {
        self.grid.dx() * total(w)
    }
}

/// Assemble the finite-volume operator for lattice size `N` and refinement
/// `r >= 2` (cells per half lattice spacing).
pub fn discretize_fp<F: Scalar>(
    model: &RateModel<F>,
    n: usize,
    r: usize,
) -> Result<FpDiscretization<F>, FpdeError> {
    let report = validate_rate_model(model)?;
    if !report.all_passed() {
        return Err(FpdeError::ModelReportFailed);
    }
    if n <= report.n0 {
        return Err(FpdeError::NTooSmall { n, n0: report.n0 });
    }
    if r < 2 {
        return Err(FpdeError::RefinementTooSmall(r));
    }

    let grid = GridSpec::new(n, r);
    let m = grid.m();
    let dx = grid.dx();
    let total_rate = model.total_rate();
    let drift = model.drift();
    let two_n: F = real_of::<F>(2 * n);

    let node_diffusion: Vec<F> = grid
        .nodes()
        .iter()
        .map(|&x| total_rate.eval(x) / two_n)
        .collect();
    let iface_drift: Vec<F> = (0..m - 1).map(|j| drift.eval(grid.interface(j))).collect();

    // Interface flux:  Phi_{j+1/2} = (P_{j+1} w_{j+1} - P_j w_j)/dx
    //                              - D_{j+1/2} (w_j + w_{j+1})/2,
    // row j of L:      (Phi_{j+1/2} - Phi_{j-1/2}) / dx,
    // with the outermost fluxes dropped (zero-flux boundary).
    let mut op = TriBand::zeros(m);
    let half = real::<F>(0.5);
    for j in 0..m {
        let mut diag = F::zero();
        if j + 1 < m {
            let d = iface_drift[j];
            op.sup[j] = (node_diffusion[j + 1] / dx - half * d) / dx;
            diag = diag + (-node_diffusion[j] / dx - half * d) / dx;
        }
        if j > 0 {
            let d = iface_drift[j - 1];
            op.sub[j - 1] = (node_diffusion[j - 1] / dx + half * d) / dx;
            diag = diag - (node_diffusion[j] / dx - half * d) / dx;
        }
        op.diag[j] = diag;
    }

    Ok(FpDiscretization {
        grid,
        node_diffusion,
        iface_drift,
        op,
    })
}

/// Field trajectory on the output time grid.
#[derive(Clone, Debug, Serialize)]
pub struct FieldTrajectory<F> {
    pub grid: GridSpec<F>,
    pub times: Vec<F>,
    /// `fields[i][j]` is the cell value at node `j`, time `times[i]`.
    pub fields: Vec<Vec<F>>,
    /// Step size of the accepted run.
    pub dt: F,
}

/// Crank-Nicolson integration with a fixed step
/// `dt = min(1e-3, dx / (2 max|A-C|))` and one step-halving acceptance
/// check: the run is accepted when halving `dt` moves the final field by
/// less than [`FP_RICHARDSON_TOL`] in sup norm (the halved-step solution is
/// returned). A second failed halving aborts with `RichardsonFailed`.
pub fn solve_fp<F: Scalar>(
    disc: &FpDiscretization<F>,
    u0: &GridFunction<F>,
    times: &[F],
) -> Result<FieldTrajectory<F>, FpdeError> {
    assert_eq!(
        u0.values.len(),
        disc.grid.m(),
        "initial field must live on the discretization grid"
    );
    assert!(!times.is_empty(), "need at least one output time");
    assert!(
        times.windows(2).all(|w| w[0] < w[1]),
        "output times must be strictly increasing"
    );
    assert!(times[0] >= F::zero(), "output times start at or after 0");

    let drift_max = disc
        .iface_drift
        .iter()
        .fold(F::zero(), |m, &d| m.max(d.abs()));
    let mut dt: F = real(FP_DT_MAX);
    if drift_max > F::zero() {
        dt = dt.min(disc.grid.dx() / (real::<F>(2.0) * drift_max));
    }

    let tol: F = real(FP_RICHARDSON_TOL);
    let coarse = run_fixed_step(disc, &u0.values, times, dt);
    let fine = run_fixed_step(disc, &u0.values, times, dt * real(0.5));
    let first = final_sup_diff(&coarse, &fine);
    if first <= tol {
        return Ok(FieldTrajectory {
            grid: disc.grid.clone(),
            times: times.to_vec(),
            fields: fine,
            dt: dt * real(0.5),
        });
    }
    let finer = run_fixed_step(disc, &u0.values, times, dt * real(0.25));
    let second = final_sup_diff(&fine, &finer);
    if second <= tol {
        return Ok(FieldTrajectory {
            grid: disc.grid.clone(),
            times: times.to_vec(),
            fields: finer,
            dt: dt * real(0.25),
        });
    }
    Err(FpdeError::RichardsonFailed {
        first: first.to_f64().unwrap_or(f64::NAN),
        second: second.to_f64().unwrap_or(f64::NAN),
    })
}

fn final_sup_diff<F: Scalar>(a: &[Vec<F>], b: &[Vec<F>]) -> F {
    let (la, lb) = (a.last().unwrap(), b.last().unwrap());
    la.iter()
        .zip(lb)
        .fold(F::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

fn run_fixed_step<F: Scalar>(
    disc: &FpDiscretization<F>,
    u0: &[F],
    times: &[F],
    dt: F,
) -> Vec<Vec<F>> {
    let m = disc.grid.m();
    let mut fields = Vec::with_capacity(times.len());
    let mut u = u0.to_vec();
    let mut t = F::zero();
    let mut rhs = vec![F::zero(); m];
    let mut next = vec![F::zero(); m];

    for &t_out in times {
        if t_out > t {
            let span = t_out - t;
            let n_steps = (span / dt).ceil().to_usize().unwrap_or(1).max(1);
            let h = span / real_of::<F>(n_steps);
            let factor = disc.op.implicit_matrix(h * real(0.5)).factor();
            for _ in 0..n_steps {
                trapezoid_step(&disc.op, &factor, h * real(0.5), &u, &mut rhs, &mut next);
                std::mem::swap(&mut u, &mut next);
            }
            t = t_out;
        }
        fields.push(u.clone());
    }
    fields
}

/// Extract the field values at the lattice points `k/N`, `k = 0..=N`.
/// No interpolation: lattice points are grid nodes by construction, and the
/// alignment is verified before extraction.
pub fn sample_at_lattice<F: Scalar>(
    field: &GridFunction<F>,
    n: usize,
) -> Result<Vec<F>, FpdeError> {
    let grid = &field.grid;
    if grid.n() != n || field.values.len() != grid.m() {
        return Err(FpdeError::MisalignedGrid(n));
    }
    let tol: F = real(1e-13);
    let nf: F = real_of(n);
    let mut out = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let j = grid.lattice_index(k);
        if j >= grid.m() || (grid.node(j) - real_of::<F>(k) / nf).abs() > tol {
            return Err(FpdeError::MisalignedGrid(n));
        }
        out.push(field.values[j]);
    }
    Ok(out)
}

/// Analytic stationary density of the zero-flux problem,
///
/// ```text
/// u*(x) = exp( 2N int_0^x (A-C)/(A+C) ds ) / (A+C)(x),
/// ```
///
/// evaluated in log space (the exponent reaches ~N/2) and normalized to unit
/// discrete mass on the grid. The integral is accumulated per grid cell with
/// adaptive Simpson quadrature.
pub fn fp_stationary<F: Scalar>(
    model: &RateModel<F>,
    grid: &GridSpec<F>,
) -> Result<GridFunction<F>, FpdeError> {
    let m = grid.m();
    let n = grid.n();
    let total_rate = model.total_rate();
    let drift = model.drift();
    let ratio = |x: F| drift.eval(x) / total_rate.eval(x);

    // Integral of (A-C)/(A+C) from 0 to every node, accumulated outward from
    // the node that sits exactly at x = 0.
    let origin = grid.lattice_index(0);
    let mut integral = vec![F::zero(); m];
    let cell_tol: F = real(FP_QUADRATURE_TOL);
    for j in origin..m - 1 {
        let inc = adaptive_simpson(&ratio, grid.node(j), grid.node(j + 1), cell_tol)
            .ok_or(FpdeError::QuadratureFailed {
                a: grid.node(j).to_f64().unwrap_or(f64::NAN),
                b: grid.node(j + 1).to_f64().unwrap_or(f64::NAN),
            })?;
        integral[j + 1] = integral[j] + inc;
    }
    for j in (0..origin).rev() {
        let inc = adaptive_simpson(&ratio, grid.node(j), grid.node(j + 1), cell_tol)
            .ok_or(FpdeError::QuadratureFailed {
                a: grid.node(j).to_f64().unwrap_or(f64::NAN),
                b: grid.node(j + 1).to_f64().unwrap_or(f64::NAN),
            })?;
        integral[j] = integral[j + 1] - inc;
    }

    let two_n: F = real_of(2 * n);
    let log_u: Vec<F> = (0..m)
        .map(|j| two_n * integral[j] - total_rate.eval(grid.node(j)).ln())
        .collect();
    let max = log_u.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let mut values: Vec<F> = log_u.iter().map(|&v| (v - max).exp()).collect();
    let mass = grid.dx() * total(&values);
    for v in &mut values {
        *v = *v / mass;
    }
    Ok(GridFunction::new(grid.clone(), values))
}

/// Discrete stationary field: the null vector of the assembled operator,
/// found by inverse iteration with shift 0 (at most 50 iterations, stopping
/// early once `||L x||_inf < 1e-12 * max(1, ||L||_inf)`), made positive and
/// normalized to unit discrete mass.
pub fn discrete_stationary<F: Scalar>(
    disc: &FpDiscretization<F>,
) -> Result<GridFunction<F>, FpdeError> {
    let m = disc.grid.m();
    let factor = disc.op.factor();
    let row_norm = sup_norm(&disc.op.diag)
        .max(sup_norm(&disc.op.sub))
        .max(sup_norm(&disc.op.sup));
    let target = real::<F>(1e-12) * F::one().max(row_norm);

    let mut x = vec![F::one() / real_of::<F>(m); m];
    let mut residual = vec![F::zero(); m];
    for _ in 0..50 {
        let y = factor.solve(&x);
        let norm = sup_norm(&y);
        debug_assert!(norm > F::zero(), "inverse iteration collapsed to zero");
        x = y.iter().map(|&v| v / norm).collect();
        disc.op.matvec(&x, &mut residual);
        if sup_norm(&residual) < target {
            break;
        }
    }
    // Null vector of an irreducible conservative operator is single-signed;
    // orient it positive and normalize the discrete mass.
    if total(&x) < F::zero() {
        for v in &mut x {
            *v = -*v;
        }
    }
    let mass = disc.mass(&x);
    for v in &mut x {
        *v = *v / mass;
    }
    Ok(GridFunction::new(disc.grid.clone(), x))
}

/// Adaptive Simpson quadrature; returns `None` if the recursion depth limit
/// is hit before reaching the requested absolute tolerance.
fn adaptive_simpson<F: Scalar>(f: &impl Fn(F) -> F, a: F, b: F, tol: F) -> Option<F> {
    fn simpson<F: Scalar>(f: &impl Fn(F) -> F, a: F, fa: F, b: F, fb: F) -> (F, F, F) {
        let mid = (a + b) * real::<F>(0.5);
        let fm = f(mid);
        let h = b - a;
        let s = h / real::<F>(6.0) * (fa + real::<F>(4.0) * fm + fb);
        (mid, fm, s)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Scalar>(
        f: &impl Fn(F) -> F,
        a: F,
        fa: F,
        b: F,
        fb: F,
        whole: F,
        mid: F,
        fm: F,
        tol: F,
        depth: usize,
    ) -> Option<F> {
        let (lm, flm, left) = simpson(f, a, fa, mid, fm);
        let (rm, frm, right) = simpson(f, mid, fm, b, fb);
        let delta = left + right - whole;
        if delta.abs() <= real::<F>(15.0) * tol {
            return Some(left + right + delta / real::<F>(15.0));
        }
        if depth == 0 {
            return None;
        }
        let half_tol = tol * real(0.5);
        let l = recurse(f, a, fa, mid, fm, left, lm, flm, half_tol, depth - 1)?;
        let r = recurse(f, mid, fm, b, fb, right, rm, frm, half_tol, depth - 1)?;
        Some(l + r)
    }

    let fa = f(a);
    let fb = f(b);
    let (mid, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, mid, fm, tol, 50)
}

/// Canonical output grid: `count` uniform times on `[0, t_end]`.
pub fn uniform_times<F: Scalar>(t_end: F, count: usize) -> Vec<F> {
    assert!(count >= 1);
    if count == 1 {
        return vec![t_end];
    }
    (0..count)
        .map(|i| t_end * real_of::<F>(i) / real_of::<F>(count - 1))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct FieldMetadata<F> {
    pub label: String,
    pub n: usize,
    pub r: usize,
    pub dx: F,
    pub dt: F,
    pub mass_initial: F,
    pub mass_final: F,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::{default_initial, ehrenfest, extend_initial, quadratic};

    #[test]
    fn refinement_and_threshold_guards() {
        assert!(matches!(
            discretize_fp(&ehrenfest::<f64>(), 5, 8),
            Err(FpdeError::NTooSmall { n: 5, n0: 6 })
        ));
        assert!(matches!(
            discretize_fp(&ehrenfest::<f64>(), 20, 1),
            Err(FpdeError::RefinementTooSmall(1))
        ));
    }

    #[test]
    fn operator_annihilates_mass_for_random_fields() {
        let disc = discretize_fp(&quadratic::<f64>(), 20, 4).unwrap();
        let m = disc.grid().m();
        let mut s: u64 = 7;
        let mut rand = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..5 {
            let w: Vec<f64> = (0..m).map(|_| rand()).collect();
            let mut lw = vec![0.0; m];
            disc.apply(&w, &mut lw);
            let signed: f64 = lw.iter().sum::<f64>() * disc.grid().dx();
            let absolute: f64 = lw.iter().map(|v| v.abs()).sum::<f64>() * disc.grid().dx();
            assert!(
                signed.abs() <= 1e-13 * absolute.max(1.0),
                "mass leak {signed:e} vs scale {absolute:e}"
            );
        }
        // And the zero field maps to zero exactly.
        let zero = vec![0.0; m];
        let mut lz = vec![0.0; m];
        disc.apply(&zero, &mut lz);
        assert!(lz.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_is_second_order_consistent_on_stationary_density() {
        // The analytic stationary density makes the continuum flux vanish
        // identically, so ||L u*|| measures pure discretization error and
        // must drop ~4x per refinement doubling.
        let n = 16;
        let mut sups = Vec::new();
        for r in [4usize, 8, 16] {
            let disc = discretize_fp(&ehrenfest::<f64>(), n, r).unwrap();
            let u_star = fp_stationary(&ehrenfest::<f64>(), disc.grid()).unwrap();
            let mut lu = vec![0.0; disc.grid().m()];
            disc.apply(&u_star.values, &mut lu);
            sups.push(sup_norm(&lu));
        }
        for w in sups.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio > 3.0 && ratio < 5.5,
                "refinement ratios {sups:?} not second order"
            );
        }
    }

    #[test]
    fn swap_model_stationary_density_matches_closed_form() {
        // For A = 1-z, C = z: (A-C)/(A+C) = 1-2s, so the exponent is
        // 2N (x - x^2) and A+C = 1 drops out.
        let n = 12;
        let grid: GridSpec<f64> = GridSpec::new(n, 4);
        let u_star = fp_stationary(&ehrenfest::<f64>(), &grid).unwrap();
        let two_n = 2.0 * n as f64;
        let reference: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| (two_n * (x - x * x)).exp())
            .collect();
        let mass: f64 = reference.iter().sum::<f64>() * grid.dx();
        for j in 0..grid.m() {
            let expect = reference[j] / mass;
            assert!(
                (u_star.values[j] - expect).abs() <= 1e-9 * expect.max(1.0),
                "node {j}: {} vs {}",
                u_star.values[j],
                expect
            );
        }
        // Symmetric model (A(z) = C(1-z)): density symmetric about 1/2.
        for j in 0..grid.m() {
            let mirror = grid.m() - 1 - j;
            assert!((u_star.values[j] - u_star.values[mirror]).abs() < 1e-10);
        }
        // Peak at the center.
        let peak = (0..grid.m()).max_by(|&i, &j| {
            u_star.values[i].partial_cmp(&u_star.values[j]).unwrap()
        });
        assert_eq!(peak, Some(grid.lattice_index(n / 2)));
    }

    #[test]
    fn stationary_density_has_zero_flux_residual() {
        // (1/2N)((A+C)u)' - (A-C)u should vanish; check with high-order
        // finite differences on a fine grid at small N so the derivative
        // scales stay benign.
        let n = 4;
        let model = RateModel::new(vec![1.0f64, -1.0], vec![0.0, 1.0], 0.6, "swap-wide").unwrap();
        let grid: GridSpec<f64> = GridSpec::new(n, 128);
        let u_star = fp_stationary(&model, &grid).unwrap();
        let total_rate = model.total_rate();
        let drift = model.drift();
        let g: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(&u_star.values)
            .map(|(&x, &u)| total_rate.eval(x) * u)
            .collect();
        let dx = grid.dx();
        let two_n = 2.0 * n as f64;
        for j in 2..grid.m() - 2 {
            // 4th-order central first derivative of (A+C)u.
            let dg = (g[j - 2] - 8.0 * g[j - 1] + 8.0 * g[j + 1] - g[j + 2]) / (12.0 * dx);
            let flux = dg / two_n - drift.eval(grid.node(j)) * u_star.values[j];
            assert!(
                flux.abs() < 1e-8,
                "node {j}: flux residual {flux:e}"
            );
        }
    }

    #[test]
    fn lattice_sampling_is_exact_extraction() {
        let n = 10;
        let grid: GridSpec<f64> = GridSpec::new(n, 8);
        // Field equal to the node coordinate: sampling returns exactly k/N.
        let coord = GridFunction::new(grid.clone(), grid.nodes().to_vec());
        let samples = sample_at_lattice(&coord, n).unwrap();
        for (k, &v) in samples.iter().enumerate() {
            assert_eq!(v, k as f64 / n as f64);
        }
        // Mismatched N is refused.
        assert!(matches!(
            sample_at_lattice(&coord, n + 1),
            Err(FpdeError::MisalignedGrid(_))
        ));
    }

    #[test]
    fn bump_extension_samples_to_pinned_values() {
        let model = RateModel::new(vec![1.0f64, -1.0], vec![0.0, 1.0], 0.6, "swap-wide").unwrap();
        let disc = discretize_fp(&model, 2, 8).unwrap();
        let ext = extend_initial(&default_initial::<f64>(), disc.grid()).unwrap();
        let samples = sample_at_lattice(&ext, 2).unwrap();
        assert_eq!(samples, vec![0.0, 1.875, 0.0]);
    }

    #[test]
    fn zero_field_stays_zero_and_mass_is_conserved() {
        let disc = discretize_fp(&ehrenfest::<f64>(), 30, 4).unwrap();
        let m = disc.grid().m();
        let times = uniform_times(0.5, 6);

        let zero = GridFunction::new(disc.grid().clone(), vec![0.0; m]);
        let traj = solve_fp(&disc, &zero, &times).unwrap();
        assert!(traj.fields.iter().all(|f| f.iter().all(|&v| v == 0.0)));

        let ext = extend_initial(&default_initial::<f64>(), disc.grid()).unwrap();
        let mass0 = disc.mass(&ext.values);
        let traj = solve_fp(&disc, &ext, &times).unwrap();
        for (i, field) in traj.fields.iter().enumerate() {
            let mass = disc.mass(field);
            assert!(
                ((mass - mass0) / mass0).abs() < 1e-8,
                "t = {}: relative drift {:e}",
                times[i],
                (mass - mass0) / mass0
            );
            let floor = -1e-8 * sup_norm(&ext.values);
            for &v in field {
                assert!(v >= floor, "negative undershoot {v:e} at t = {}", times[i]);
            }
        }
    }

    #[test]
    fn discrete_stationary_field_is_a_fixed_point() {
        let disc = discretize_fp(&ehrenfest::<f64>(), 50, 4).unwrap();
        let u_star = discrete_stationary(&disc).unwrap();
        assert!((disc.mass(&u_star.values) - 1.0).abs() < 1e-12);
        assert!(u_star.values.iter().all(|&v| v >= 0.0));
        let traj = solve_fp(&disc, &u_star, &[0.0, 0.5, 1.0]).unwrap();
        for field in &traj.fields {
            for j in 0..disc.grid().m() {
                assert!(
                    (field[j] - u_star.values[j]).abs() < 1e-8,
                    "drift at node {j}"
                );
            }
        }
    }

    #[test]
    fn discrete_and_analytic_stationary_densities_agree() {
        let disc = discretize_fp(&quadratic::<f64>(), 40, 4).unwrap();
        let discrete = discrete_stationary(&disc).unwrap();
        let analytic = fp_stationary(&quadratic::<f64>(), disc.grid()).unwrap();
        let peak = analytic.values.iter().cloned().fold(0.0f64, f64::max);
        for j in 0..disc.grid().m() {
            assert!(
                (discrete.values[j] - analytic.values[j]).abs() < 2e-3 * peak,
                "node {j}: {} vs {}",
                discrete.values[j],
                analytic.values[j]
            );
        }
    }

    #[test]
    fn refinement_doubling_barely_moves_lattice_values() {
        // Canonical comparison scenario: the field carries probability scale
        // (initial data divided by its lattice mass, as in the two-solver
        // comparison), so spatial self-convergence error must sit well below
        // the modeling error O(1/N).
        let n = 50;
        let times = uniform_times(1.0, 5);
        let mut lattice_runs = Vec::new();
        for r in [8usize, 16] {
            let disc = discretize_fp(&ehrenfest::<f64>(), n, r).unwrap();
            let mut ext = extend_initial(&default_initial::<f64>(), disc.grid()).unwrap();
            let lattice = sample_at_lattice(&ext, n).unwrap();
            let qn: f64 = lattice.iter().sum();
            let renorm: f64 = lattice.iter().map(|v| v / qn).sum();
            for v in &mut ext.values {
                *v = (*v / qn) / renorm;
            }
            let traj = solve_fp(&disc, &ext, &times).unwrap();
            let last = GridFunction::new(disc.grid().clone(), traj.fields.last().unwrap().clone());
            lattice_runs.push(sample_at_lattice(&last, n).unwrap());
        }
        for k in 0..=n {
            assert!(
                (lattice_runs[0][k] - lattice_runs[1][k]).abs() < 1e-5,
                "k = {k}: {} vs {}",
                lattice_runs[0][k],
                lattice_runs[1][k]
            );
        }
    }

    use crate::rates::RateModel;
}
