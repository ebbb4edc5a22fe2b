//! Deterministic text artifacts: CSV tables with pinned headers, JSON
//! reports, and gnuplot scripts. Everything here is a pure string builder
//! so output bytes depend only on the input values — the command-line layer
//! owns actual file I/O.
//!
//! Floats are written with Rust's `{}` formatting, which emits the shortest
//! decimal string that round-trips, so equal inputs always produce equal
//! bytes.

use serde::Serialize;

use crate::consistency::DefectStudy;
use crate::convergence::ConvergenceReport;
use crate::diagnostics::ConjectureProbe;
use crate::fpde::FieldTrajectory;
use crate::master::DistributionTrajectory;
use crate::scalar::Scalar;
use crate::ssa::EmpiricalDistribution;

/// Distribution trajectory, one row per (time, state): header `t,k,p`,
/// time-major, `k` ascending within a time block.
pub fn trajectory_csv<F: Scalar>(traj: &DistributionTrajectory<F>) -> String {
    let mut out = String::from("t,k,p\n");
    for (t, state) in traj.times.iter().zip(&traj.states) {
        for (k, p) in state.iter().enumerate() {
            out.push_str(&format!("{t},{k},{p}\n"));
        }
    }
    out
}

/// Field trajectory, one row per (time, node): header `t,x,u`, time-major,
/// `x` ascending within a time block.
pub fn field_csv<F: Scalar>(traj: &FieldTrajectory<F>) -> String {
    let mut out = String::from("t,x,u\n");
    for (t, field) in traj.times.iter().zip(&traj.fields) {
        for (x, u) in traj.grid.nodes().iter().zip(field) {
            out.push_str(&format!("{t},{x},{u}\n"));
        }
    }
    out
}

/// Defect ladder: header `N,defect_all,defect_interior,defect_boundary`.
pub fn defect_csv<F: Scalar>(study: &DefectStudy<F>) -> String {
    let mut out = String::from("N,defect_all,defect_interior,defect_boundary\n");
    for e in &study.entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.n, e.defect_all, e.defect_interior, e.defect_boundary
        ));
    }
    out
}

/// Convergence ladder: header `N,sup_error,error_at_t0,seconds`.
pub fn ladder_csv<F: Scalar>(report: &ConvergenceReport<F>) -> String {
    let mut out = String::from("N,sup_error,error_at_t0,seconds\n");
    for e in &report.entries {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.n, e.sup_error, e.error_at_t0, e.seconds
        ));
    }
    out
}

/// Conjecture probes: header `N,t,order,boundary_max,global_max,margin`.
pub fn probe_csv<F: Scalar>(probes: &[ConjectureProbe<F>]) -> String {
    let mut out = String::from("N,t,order,boundary_max,global_max,margin\n");
    for p in probes {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.n, p.t, p.order, p.boundary_max, p.global_max, p.margin
        ));
    }
    out
}

/// Empirical state counts at one snapshot: header `k,count`.
pub fn counts_csv<F: Scalar>(emp: &EmpiricalDistribution<F>) -> String {
    let mut out = String::from("k,count\n");
    for (k, c) in emp.counts.iter().enumerate() {
        out.push_str(&format!("{k},{c}\n"));
    }
    out
}

/// Pretty-printed JSON with a trailing newline.
pub fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// One curve of a log-log plot: CSV column `y_column` (1-based) against
/// column 1, optionally with a fitted power law `exp(intercept) * x^slope`.
pub struct PlotSeries<'a> {
    pub y_column: usize,
    pub label: &'a str,
    /// `(slope, intercept)` of a least-squares fit in log-log coordinates.
    pub fit: Option<(f64, f64)>,
}

/// Emit a gnuplot script that renders `data_file` (a CSV produced by this
/// module) on log-log axes with the fitted reference lines. Render with
/// `gnuplot -persist <script>`; no image is produced unless the caller adds
/// a terminal, keeping the artifact plain text.
pub fn loglog_plot_script(
    data_file: &str,
    title: &str,
    ylabel: &str,
    series: &[PlotSeries],
) -> String {
    let mut out = String::new();
    out.push_str("# gnuplot script; render with: gnuplot -persist <this file>\n");
    out.push_str("set datafile separator ','\n");
    out.push_str("set logscale xy\n");
    out.push_str("set xlabel 'N'\n");
    out.push_str(&format!("set ylabel '{ylabel}'\n"));
    out.push_str(&format!("set title '{title}'\n"));
    out.push_str("set key left bottom\n");
    let mut clauses: Vec<String> = Vec::new();
    for s in series {
        clauses.push(format!(
            "'{data_file}' skip 1 using 1:{} with linespoints title '{}'",
            s.y_column, s.label
        ));
        if let Some((slope, intercept)) = s.fit {
            clauses.push(format!(
                "exp({intercept}) * x**({slope}) with lines dashtype 2 \
                 title 'fit {}: slope {:.3}'",
                s.label, slope
            ));
        }
    }
    out.push_str(&format!("plot {}\n", clauses.join(", \\\n     ")));
    out
}
