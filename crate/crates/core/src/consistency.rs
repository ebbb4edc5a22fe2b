//! Generator-defect measurements: how far the lattice operator is from the
//! differential operator when both act on the same smooth observable.
//!
//! For a polynomial `f`, the lattice side applies the tridiagonal operator
//! to the sampled values `f(k/N)`; the differential side evaluates
//!
//! ```text
//! (1/2N) ((A+C) f)'' - ((A-C) f)'
//! ```
//!
//! exactly by polynomial calculus. The componentwise gap is the *defect*.
//! Interior rows are a disguised second-difference/centered-difference pair
//! of `F1 = (A+C)f` and `F2 = (A-C)f` with spacing `1/N`, so they vanish
//! identically when `F1` is at most quadratic and `F2` at most quadratic's
//! centered-exact class (linear suffices), and scale like `1/N^2` for
//! smoother `f`; boundary rows drop those cancellations and scale like
//! `1/N`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::convergence::{fit_order, OrderFit};
use crate::master::{build_generator, MasterError, TridiagonalGenerator};
use crate::poly::Poly;
use crate::rates::{RateModel, SIGN_CHECK_POINTS};
use crate::scalar::{real, real_of, Scalar};

/// Boundary-condition membership tolerance for the domain flag.
pub const BC_MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error("observable has {got} lattice values, generator expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{region} defects have only {positive} positive entries; need 3 for a fit")]
    DegenerateFit {
        region: &'static str,
        positive: usize,
    },
}

/// Which rows enter the headline maximum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Region {
    All,
    Interior,
}

/// Apply the lattice operator to an observable sampled at the lattice
/// points (plain tridiagonal product with the reflecting-endpoint
/// conventions already baked into the generator).
pub fn apply_discrete_generator<F: Scalar>(
    gen: &TridiagonalGenerator<F>,
    f_lattice: &[F],
) -> Result<Vec<F>, ConsistencyError> {
    if f_lattice.len() != gen.dim() {
        return Err(ConsistencyError::LengthMismatch {
            expected: gen.dim(),
            got: f_lattice.len(),
        });
    }
    let mut out = vec![F::zero(); gen.dim()];
    gen.apply(f_lattice, &mut out);
    Ok(out)
}

/// Evaluate `(1/2N)((A+C)f)'' - ((A-C)f)'` at every lattice point, exactly,
/// via polynomial differentiation.
pub fn apply_continuous_generator<F: Scalar>(
    model: &RateModel<F>,
    n: usize,
    f: &Poly<F>,
) -> Vec<F> {
    let f1_dd = model.total_rate().mul(f).derivative_n(2);
    let f2_d = model.drift().mul(f).derivative();
    let two_n: F = real_of(2 * n);
    let nf: F = real_of(n);
    (0..=n)
        .map(|k| {
            let z = real_of::<F>(k) / nf;
            f1_dd.eval(z) / two_n - f2_d.eval(z)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct DefectReport<F> {
    pub n: usize,
    pub region: Region,
    /// Maximum defect over the rows selected by `region`.
    pub defect_all: F,
    /// Maximum over rows `k = 1 .. N-1`.
    pub defect_interior: F,
    /// Maximum over rows `k in {0, N}` (zero when `region` is `Interior`,
    /// where boundary rows are not measured).
    pub defect_boundary: F,
    pub per_k: Option<Vec<F>>,
    /// Sup of `|(1/2N)((A+C)f)' - (A-C)f|` at the two domain endpoints.
    pub bc_residual: F,
    /// Whether `f` satisfies the zero-flux endpoint conditions to
    /// [`BC_MEMBERSHIP_TOL`] (informative: the defect is measured either way).
    pub f_in_domain: bool,
}

/// Componentwise defect with maxima split by region. `region = Interior`
/// restricts the measurement (and the headline `defect_all`) to rows
/// `1..N-1`; `region = All` measures every row.
pub fn generator_defect<F: Scalar>(
    model: &RateModel<F>,
    n: usize,
    f: &Poly<F>,
    region: Region,
) -> Result<DefectReport<F>, ConsistencyError> {
    let gen = build_generator(model, n)?;
    let nf: F = real_of(n);
    let f_lattice: Vec<F> = (0..=n).map(|k| f.eval(real_of::<F>(k) / nf)).collect();
    let discrete = apply_discrete_generator(&gen, &f_lattice)?;
    let continuous = apply_continuous_generator(model, n, f);
    let per_k: Vec<F> = discrete
        .iter()
        .zip(&continuous)
        .map(|(&d, &c)| (d - c).abs())
        .collect();

    let defect_interior = per_k[1..n].iter().fold(F::zero(), |m, &v| m.max(v));
    let defect_boundary = match region {
        Region::All => per_k[0].max(per_k[n]),
        Region::Interior => F::zero(),
    };
    let defect_all = defect_interior.max(defect_boundary);

    // Zero-flux membership of f at the domain endpoints -h and 1+h.
    let flux = model
        .total_rate()
        .mul(f)
        .derivative()
        .scale(F::one() / real_of::<F>(2 * n))
        .sub(&model.drift().mul(f));
    let h = F::one() / real_of::<F>(2 * n);
    let bc_residual = flux.eval(-h).abs().max(flux.eval(F::one() + h).abs());

    Ok(DefectReport {
        n,
        region,
        defect_all,
        defect_interior,
        defect_boundary,
        per_k: Some(per_k),
        bc_residual,
        f_in_domain: bc_residual <= real(BC_MEMBERSHIP_TOL),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DefectStudy<F> {
    pub model_label: String,
    pub entries: Vec<DefectReport<F>>,
    pub fit_all: OrderFit<F>,
    pub fit_interior: OrderFit<F>,
    pub fit_boundary: OrderFit<F>,
    /// Rows excluded from fits because their defect was exactly zero.
    pub excluded_zero_defects: usize,
    /// Per rung: `N * defect_all / (||F1||_C2 + ||F2||_C2)` — the empirical
    /// constant of the first-order defect bound, which should stay bounded
    /// along the ladder.
    pub c0_estimates: Vec<F>,
}

/// Fit the defect decay order per region across a ladder of `N`. Zero
/// defects are excluded from the fits; a region left with fewer than three
/// positive points fails with `DegenerateFit`.
pub fn defect_order_study<F: Scalar>(
    model: &RateModel<F>,
    f: &Poly<F>,
    n_list: &[usize],
) -> Result<DefectStudy<F>, ConsistencyError> {
    assert!(
        n_list.len() >= 3 && n_list.windows(2).all(|w| w[0] < w[1]),
        "ladder must be at least 3 strictly increasing sizes"
    );
    let mut entries: Vec<DefectReport<F>> = n_list
        .par_iter()
        .map(|&n| generator_defect(model, n, f, Region::All))
        .collect::<Result<Vec<_>, _>>()?;
    for e in &mut entries {
        e.per_k = None;
    }

    let mut excluded = 0usize;
    let mut fit_region =
        |name: &'static str, pick: &dyn Fn(&DefectReport<F>) -> F| -> Result<OrderFit<F>, ConsistencyError> {
            let points: Vec<(usize, F)> = entries
                .iter()
                .filter(|e| pick(e) > F::zero())
                .map(|e| (e.n, pick(e)))
                .collect();
            excluded += entries.len() - points.len();
            if points.len() < 3 {
                return Err(ConsistencyError::DegenerateFit {
                    region: name,
                    positive: points.len(),
                });
            }
            Ok(fit_order(&points).expect("positive points of sufficient count always fit"))
        };

    let fit_all = fit_region("all", &|e| e.defect_all)?;
    let fit_interior = fit_region("interior", &|e| e.defect_interior)?;
    let fit_boundary = fit_region("boundary", &|e| e.defect_boundary)?;

    let denom = c2_norm(model, &model.total_rate().mul(f))
        + c2_norm(model, &model.drift().mul(f));
    let c0_estimates = entries
        .iter()
        .map(|e| real_of::<F>(e.n) * e.defect_all / denom)
        .collect();

    Ok(DefectStudy {
        model_label: model.label().to_string(),
        entries,
        fit_all,
        fit_interior,
        fit_boundary,
        excluded_zero_defects: excluded,
        c0_estimates,
    })
}

/// `C^2` norm (sup of the function and its first two derivatives) sampled on
/// the model's extended domain with the usual 10^4-point grid.
fn c2_norm<F: Scalar>(model: &RateModel<F>, p: &Poly<F>) -> F {
    let (lo, hi) = model.domain();
    let mut norm = F::zero();
    let mut q = p.clone();
    for _ in 0..3 {
        norm += q.sup_norm_sampled(lo, hi, SIGN_CHECK_POINTS).0;
        q = q.derivative();
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::swap_wide;
    use crate::rates::ehrenfest;

    fn poly(coeffs: &[f64]) -> Poly<f64> {
        Poly::from_f64(coeffs)
    }

    #[test]
    fn discrete_action_matches_hand_product() {
        // Bands at N = 2 are sub = (2, 1), sup = (1, 2), diag = (-2,-2,-2);
        // applying them to (0, 1, 0) gives (1, -2, 1).
        let gen = build_generator(&swap_wide(), 2).unwrap();
        let out = apply_discrete_generator(&gen, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 1.0]);

        // Constant observables: each row sums its coefficients; interior
        // rows of the swap model sum to exactly 2.
        let gen = build_generator(&swap_wide(), 8).unwrap();
        let out = apply_discrete_generator(&gen, &vec![3.0; 9]).unwrap();
        for k in 1..8 {
            assert_eq!(out[k], 6.0, "interior row {k}");
        }

        let zero = apply_discrete_generator(&gen, &vec![0.0; 9]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));

        assert!(matches!(
            apply_discrete_generator(&gen, &[1.0, 2.0]),
            Err(ConsistencyError::LengthMismatch {
                expected: 9,
                got: 2
            })
        ));
    }

    #[test]
    fn continuous_action_matches_polynomial_calculus() {
        let model = ehrenfest::<f64>();
        // f = 1: (1/2N)(A+C)'' - (A-C)' = 0 + 2 everywhere.
        let out = apply_continuous_generator(&model, 10, &poly(&[1.0]));
        for &v in &out {
            assert!((v - 2.0).abs() < 1e-14);
        }
        // f = z: F1 = z, F2 = z - 2z^2, so the value is 4z - 1.
        let out = apply_continuous_generator(&model, 10, &poly(&[0.0, 1.0]));
        for (k, &v) in out.iter().enumerate() {
            let expect = 4.0 * (k as f64 / 10.0) - 1.0;
            assert!((v - expect).abs() < 1e-13, "k = {k}: {v} vs {expect}");
        }
        // f = 0.
        let out = apply_continuous_generator(&model, 10, &poly(&[0.0]));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn interior_defect_vanishes_for_low_degree_compositions() {
        // Lattice rates at power-of-two N are exact dyadics, so the interior
        // identity holds bit-for-bit, not just to rounding.
        let report =
            generator_defect(&ehrenfest::<f64>(), 8, &poly(&[1.0]), Region::Interior).unwrap();
        assert_eq!(report.defect_interior, 0.0);
        assert_eq!(report.defect_all, 0.0);
        assert_eq!(report.defect_boundary, 0.0);

        // Non-dyadic lattice: still zero to rounding accumulation.
        let report =
            generator_defect(&ehrenfest::<f64>(), 10, &poly(&[1.0]), Region::Interior).unwrap();
        assert!(report.defect_interior <= 1e-12);

        // Genuinely quadratic (A+C)f with the quadratic-rate model and a
        // constant f: second differences are exact on quadratics and
        // centered differences exact on the quadratic (A-C)f.
        let report = generator_defect(
            &crate::rates::quadratic::<f64>(),
            16,
            &poly(&[1.0]),
            Region::Interior,
        )
        .unwrap();
        assert!(report.defect_interior <= 1e-12, "{:e}", report.defect_interior);
    }

    #[test]
    fn boundary_rows_dominate_when_f_misses_the_flux_condition() {
        // f = 1 violates the zero-flux endpoint condition, so the boundary
        // rows carry an O(N) discrepancy while interior rows carry none.
        let report = generator_defect(&ehrenfest::<f64>(), 16, &poly(&[1.0]), Region::All).unwrap();
        assert!(!report.f_in_domain);
        assert!(report.bc_residual > 1e-10);
        assert_eq!(report.defect_interior, 0.0);
        assert!(report.defect_boundary > 10.0);
        assert_eq!(
            report.defect_all,
            report.defect_interior.max(report.defect_boundary)
        );
        let per_k = report.per_k.as_ref().unwrap();
        assert_eq!(per_k.len(), 17);
        assert_eq!(report.defect_boundary, per_k[0].max(per_k[16]));

        // The zero observable trivially satisfies everything.
        let report = generator_defect(&ehrenfest::<f64>(), 16, &poly(&[0.0]), Region::All).unwrap();
        assert!(report.f_in_domain);
        assert_eq!(report.defect_all, 0.0);
    }

    #[test]
    fn smooth_bump_defect_decays_first_order_all_rows_second_order_interior() {
        // f = z^2 (1-z)^2.
        let f = poly(&[0.0, 0.0, 1.0, -2.0, 1.0]);
        let study =
            defect_order_study(&ehrenfest::<f64>(), &f, &[40, 80, 160, 320]).unwrap();
        assert!(
            study.fit_interior.slope <= -1.8,
            "interior slope {}",
            study.fit_interior.slope
        );
        assert!(
            study.fit_all.slope <= -0.9,
            "all-rows slope {}",
            study.fit_all.slope
        );
        assert!(
            study.fit_boundary.slope <= -0.9,
            "boundary slope {}",
            study.fit_boundary.slope
        );
        assert!(study.fit_interior.r2 > 0.98);
        assert_eq!(study.excluded_zero_defects, 0);

        // Empirical first-order constant stays bounded along the ladder.
        let max = study.c0_estimates.iter().cloned().fold(0.0f64, f64::max);
        let min = study.c0_estimates.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.0 && max <= 2.0 * min, "constants {:?}", study.c0_estimates);
    }

    #[test]
    fn all_zero_defects_cannot_be_fitted() {
        // Constant observable at power-of-two N: interior defects are all
        // exactly zero, leaving nothing to fit.
        let err = defect_order_study(&ehrenfest::<f64>(), &poly(&[1.0]), &[8, 16, 32])
            .unwrap_err();
        assert!(matches!(
            err,
            ConsistencyError::DegenerateFit {
                region: "interior",
                positive: 0
            }
        ));
    }

    #[test]
    fn synthetic_power_law_check_through_the_shared_fitter() {
        // The study delegates to the shared least-squares fitter; feed it an
        // exact 1/N law to pin the plumbing end to end.
        let points: Vec<(usize, f64)> = vec![(10, 0.1), (20, 0.05), (40, 0.025)];
        let fit = fit_order(&points).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }
}
