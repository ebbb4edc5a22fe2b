//! Command-line laboratory for density-dependent one-step jump processes:
//! each experiment from the library — distribution solves, the
//! drift-diffusion field approximation, error-order ladders, generator
//! defect studies, boundary-derivative conjecture probes, and exact-event
//! sampling — is one subcommand writing deterministic text artifacts.
//!
//! Exit codes: 0 success, 2 validation error (bad model, parameters, or
//! files), 3 numerical failure (a solver or fit could not meet tolerance).

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use onestep::consistency::{defect_order_study, ConsistencyError};
use onestep::convergence::{
    fit_order, fnv1a64, run_convergence, ConvergenceError, ConvergenceReport, LadderEntry,
    OrderFit,
};
use onestep::diagnostics::{
    check_contraction_distribution, check_contraction_field, conditional_flag,
    default_decay_rate, probe_boundary_decay, probe_derivative_conjecture,
    third_derivative_hypothesis, BoundaryDecayReport, ConjectureProbe, DiagnosticsError,
    TrajectoryNorm,
};
use onestep::export::{self, PlotSeries};
use onestep::fpde::{
    discrete_stationary, discretize_fp, solve_fp, uniform_times, FieldMetadata, FpdeError,
};
use onestep::master::{
    build_generator, normalize_initial, solve_master, stationary_distribution, MasterError,
};
use onestep::poly::Poly;
use onestep::rates::{
    builtin, default_initial, parse_model_file, validate_rate_model, InitialFunction, RateModel,
    RatesError,
};
use onestep::scalar::total;
use onestep::ssa::{simulate, tv_distance, SsaConfig, SsaError, SsaStart};

// ---------------------------------------------------------------------------
// Argument surface
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "onestep",
    version,
    about = "Numerical laboratory for one-step jump processes and their \
             drift-diffusion approximation"
)]
struct Cli {
    /// Built-in model name (`ehrenfest`, `quadratic`) or path to a model
    /// file (`key = value` lines; see README).
    #[arg(long, global = true, default_value = "ehrenfest")]
    model: String,

    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for the sampling subcommand; accepted and ignored by the
    /// deterministic ones.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads for ladder-level parallelism (0 = library default).
    /// Outputs do not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// Which artifact family to write: data tables as CSV, JSON, or both.
    /// Summary reports are always JSON; a manifest is always written.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,

    /// Initial density coefficients, lowest degree first (e.g.
    /// `0,0,30,-60,30`). Default: the model file's `u0_coeffs`, else
    /// 30 z^2 (1-z)^2.
    #[arg(long, global = true, value_delimiter = ',', allow_hyphen_values = true)]
    u0: Option<Vec<f64>>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Both => "both",
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the admissibility conditions of a rate model and report the
    /// lattice-size threshold N0.
    Validate,

    /// Solve the probability master system on {0..N} and export the
    /// trajectory with a conservation report.
    Master {
        #[arg(long = "N", default_value_t = 100)]
        n: usize,
        /// Final time.
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        /// Number of uniform output times spanning [0, t0].
        #[arg(long, default_value_t = 21)]
        times: usize,
        /// Start from the stationary distribution instead of u0.
        #[arg(long)]
        stationary: bool,
    },

    /// Solve the drift-diffusion field equation with zero-flux boundaries
    /// and export the field with a metadata sidecar.
    Fp {
        #[arg(long = "N", default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 21)]
        times: usize,
        /// Cells per half lattice spacing (grid has 2r(N+1)+1 nodes).
        #[arg(long, default_value_t = 8)]
        r: usize,
        /// Start from the discretized stationary density instead of u0.
        #[arg(long)]
        stationary: bool,
    },

    /// Run the distribution-error ladder over a list of N and fit the
    /// convergence order.
    Converge {
        /// Ladder of lattice sizes, strictly increasing, at least 3.
        #[arg(long = "N", value_delimiter = ',', default_value = "50,100,200,400")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 8)]
        r: usize,
        /// Self-test: replace measured errors with exact 0.3/N values; the
        /// fitted slope must come out as -1.
        #[arg(long)]
        synthetic: bool,
    },

    /// Measure the generator defect of a polynomial observable over a
    /// ladder of N and fit the decay orders per row region.
    Consistency {
        #[arg(long = "N", value_delimiter = ',', default_value = "40,80,160,320")]
        n_list: Vec<usize>,
        /// Observable coefficients, lowest degree first; default
        /// z^2 (1-z)^2.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        f: Option<Vec<f64>>,
    },

    /// Probe the boundary-derivative conjectures: strip maxima of |u''|
    /// and |u'''|, their decay in N, and the conditional error orders.
    Conjectures {
        #[arg(long = "N", value_delimiter = ',', default_value = "50,100,200,400")]
        n_list: Vec<usize>,
        /// Probe times (must be > 0: at t = 0 the field is the raw
        /// zero-extension whose junction kink does not decay with N).
        #[arg(long = "t", value_delimiter = ',', default_value = "0.25,0.5")]
        t_grid: Vec<f64>,
        /// Horizon for the conditional error-order ladder.
        #[arg(long, default_value_t = 1.0)]
        t0: f64,
        #[arg(long, default_value_t = 8)]
        r: usize,
    },

    /// Sample the jump chain exactly and compare state frequencies with
    /// the master solution.
    Ssa {
        #[arg(long = "N", default_value_t = 50)]
        n: usize,
        /// Sampling horizon.
        #[arg(long = "t-end", default_value_t = 1.0)]
        t_end: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        /// Common starting state; default N/2.
        #[arg(long)]
        k0: Option<usize>,
        /// Also run the paths ladder {paths/100, paths/10, paths} and fit
        /// the total-variation decay slope (expect -1/2).
        #[arg(long)]
        ladder: bool,
        /// Skip the master-solution comparison (needed for models the
        /// analytic solver rejects, e.g. pure-death rates).
        #[arg(long)]
        no_compare: bool,
    },
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

enum CliError {
    /// Bad inputs: model, parameters, or files. Exit code 2.
    Validation(String),
    /// A solver or fit failed to meet its tolerance. Exit code 3.
    Numerical(String),
}

impl CliError {
    fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }
}

impl From<RatesError> for CliError {
    fn from(e: RatesError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MasterError> for CliError {
    fn from(e: MasterError) -> Self {
        match e {
            MasterError::ToleranceNotMet { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FpdeError> for CliError {
    fn from(e: FpdeError) -> Self {
        match e {
            FpdeError::RichardsonFailed { .. } | FpdeError::QuadratureFailed { .. } => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ConvergenceError> for CliError {
    fn from(e: ConvergenceError) -> Self {
        match e {
            ConvergenceError::Master(inner) => inner.into(),
            ConvergenceError::Fpde(inner) => inner.into(),
            ConvergenceError::NonPositiveError { .. } => CliError::Numerical(e.to_string()),
            ConvergenceError::TooFewPoints(_) | ConvergenceError::LadderNotIncreasing => {
                CliError::Validation(e.to_string())
            }
        }
    }
}

impl From<ConsistencyError> for CliError {
    fn from(e: ConsistencyError) -> Self {
        match e {
            ConsistencyError::Master(inner) => inner.into(),
            ConsistencyError::DegenerateFit { .. } => CliError::Numerical(e.to_string()),
            ConsistencyError::LengthMismatch { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Fpde(inner) => inner.into(),
            DiagnosticsError::Convergence(inner) => inner.into(),
            DiagnosticsError::StencilOutOfRange { .. } => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SsaError> for CliError {
    fn from(e: SsaError) -> Self {
        CliError::Validation(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Output directory with manifest
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    /// Canonical, fully resolved parameter string.
    config: &'a str,
    /// FNV-1a 64-bit digest of `config`, hex.
    config_digest: String,
    versions: BTreeMap<&'static str, &'static str>,
    wall_seconds: f64,
    outputs: Vec<String>,
}

struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    fn create(dir: &PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Validation(format!(
                "cannot create output directory {}: {e}",
                dir.display()
            ))
        })?;
        Ok(OutDir {
            dir: dir.clone(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
        self.written.push(name.to_string());
        Ok(())
    }

    /// Write `manifest.json` recording the run. The wall time makes this
    /// one file differ between reruns; every other artifact is
    /// byte-for-byte reproducible.
    fn finish(mut self, command: &str, config: &str, started: Instant) -> Result<(), CliError> {
        let mut outputs = self.written.clone();
        outputs.sort();
        let manifest = Manifest {
            command,
            config,
            config_digest: format!("{:016x}", fnv1a64(config.as_bytes())),
            versions: BTreeMap::from([
                ("onestep", onestep::VERSION),
                ("onestep-cli", env!("CARGO_PKG_VERSION")),
            ]),
            wall_seconds: started.elapsed().as_secs_f64(),
            outputs,
        };
        self.write("manifest.json", &export::json_pretty(&manifest))
    }
}

// ---------------------------------------------------------------------------
// Model / initial-density resolution
// ---------------------------------------------------------------------------

struct Inputs {
    model: RateModel<f64>,
    u0: InitialFunction<f64>,
    /// Canonical identifier entering the config digest: builtin name, or
    /// file path plus content digest.
    model_id: String,
}

fn resolve_inputs(cli: &Cli) -> Result<Inputs, CliError> {
    let (model, file_u0, model_id) = if let Some(model) = builtin::<f64>(&cli.model) {
        (model, None, format!("builtin:{}", cli.model))
    } else {
        let text = fs::read_to_string(&cli.model).map_err(|e| {
            CliError::Validation(format!("cannot read model file {}: {e}", cli.model))
        })?;
        let parsed = parse_model_file::<f64>(&text)?;
        let id = format!("file:{}#{:016x}", cli.model, fnv1a64(text.as_bytes()));
        (parsed.model, parsed.u0, id)
    };
    let u0 = match &cli.u0 {
        Some(coeffs) => InitialFunction::new(coeffs.clone())?,
        None => file_u0.unwrap_or_else(default_initial),
    };
    Ok(Inputs { model, u0, model_id })
}

fn coeff_list(p: &Poly<f64>) -> String {
    p.coeffs()
        .iter()
        .map(|c| format!("{c}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn usize_list(xs: &[usize]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn f64_list(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Strict initial-density check for direct solves: the ladder experiments
/// record admissibility failures in their reports instead, but a plain
/// `master`/`fp` run with an invalid u0 is a parameter error.
fn require_admissible(u0: &InitialFunction<f64>) -> Result<(), CliError> {
    let failures = u0.admissibility_failures();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(format!(
            "initial density is not admissible: {}",
            failures.join("; ")
        )))
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_validate(cli: &Cli, inputs: &Inputs, started: Instant) -> Result<(), CliError> {
    let config = format!(
        "cmd=validate;model={};u0={};format={}",
        inputs.model_id,
        coeff_list(inputs.u0.poly()),
        cli.format.name()
    );
    let report = validate_rate_model(&inputs.model)?;
    let passed = report.all_passed();

    println!("model '{}':", inputs.model.label());
    println!(
        "  A(1) = {:e}, C(0) = {:e} (endpoints {})",
        report.a_at_one,
        report.c_at_zero,
        if report.endpoints_ok { "ok" } else { "VIOLATED" }
    );
    println!(
        "  min A+C = {:.6} at z = {:.4} (must be > 0)",
        report.total_rate_min.value, report.total_rate_min.z
    );
    println!(
        "  min A-C on [-eta,0] = {:.6} at z = {:.4} (must be > 0)",
        report.drift_min_left.value, report.drift_min_left.z
    );
    println!(
        "  max A-C on [1,1+eta] = {:.6} at z = {:.4} (must be < 0)",
        report.drift_max_right.value, report.drift_max_right.z
    );
    println!("  admissible lattice sizes: N > N0 = {}", report.n0);
    println!("{}", if passed { "PASS" } else { "FAIL" });

    let mut out = OutDir::create(&cli.out)?;
    #[derive(Serialize)]
    struct ValidationArtifact<'a> {
        report: &'a onestep::rates::ValidationReport<f64>,
        all_passed: bool,
    }
    out.write(
        "validation.json",
        &export::json_pretty(&ValidationArtifact {
            report: &report,
            all_passed: passed,
        }),
    )?;
    out.finish("validate", &config, started)?;

    if passed {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "model '{}' fails the admissibility conditions",
            inputs.model.label()
        )))
    }
}

#[derive(Serialize)]
struct ConservationReport {
    n: usize,
    t0: f64,
    output_times: usize,
    stationary_start: bool,
    /// `sum_k p_k` at each output time (should stay at 1).
    mass_per_time: Vec<f64>,
    max_mass_drift: f64,
    /// Decay-rate diagnostic: whether `e^{-d t} max_k p_k` is
    /// non-increasing for the model's default rate `d`.
    decay_rate: f64,
    contraction_ok: bool,
}

fn cmd_master(
    cli: &Cli,
    inputs: &Inputs,
    started: Instant,
    n: usize,
    t0: f64,
    times: usize,
    stationary: bool,
) -> Result<(), CliError> {
    if t0 <= 0.0 {
        return Err(CliError::validation("t0 must be positive"));
    }
    if times < 1 {
        return Err(CliError::validation("need at least one output time"));
    }
    let config = format!(
        "cmd=master;model={};u0={};N={n};t0={t0};times={times};stationary={stationary};format={}",
        inputs.model_id,
        coeff_list(inputs.u0.poly()),
        cli.format.name()
    );

    let gen = build_generator(&inputs.model, n)?;
    let p0 = if stationary {
        stationary_distribution(&gen)?
    } else {
        require_admissible(&inputs.u0)?;
        let grid = onestep::grid::GridSpec::new(n, 1);
        let extended = onestep::rates::extend_initial_unchecked(&inputs.u0, &grid);
        normalize_initial(&extended, n)?.p0
    };
    let t_grid = uniform_times(t0, times);
    let traj = solve_master(&gen, &p0, &t_grid)?;

    let mass_per_time: Vec<f64> = traj.states.iter().map(|p| total(p)).collect();
    let max_mass_drift = mass_per_time
        .iter()
        .fold(0.0f64, |m, &s| m.max((s - 1.0).abs()));
    let d = default_decay_rate(&inputs.model);
    let contraction = check_contraction_distribution(&traj, d);

    let mut out = OutDir::create(&cli.out)?;
    if cli.format.csv() {
        out.write("trajectory.csv", &export::trajectory_csv(&traj))?;
    }
    if cli.format.json() {
        out.write("trajectory.json", &export::json_pretty(&traj))?;
    }
    out.write(
        "conservation.json",
        &export::json_pretty(&ConservationReport {
            n,
            t0,
            output_times: times,
            stationary_start: stationary,
            mass_per_time,
            max_mass_drift,
            decay_rate: d,
            contraction_ok: contraction.ok,
        }),
    )?;
    out.finish("master", &config, started)?;

    println!(
        "master: N={n}, {times} outputs on [0,{t0}], max |sum p - 1| = {max_mass_drift:.3e}, \
         contraction(d={d:.3}) {}",
        if contraction.ok { "ok" } else { "VIOLATED" }
    );
    Ok(())
}

fn cmd_fp(
    cli: &Cli,
    inputs: &Inputs,
    started: Instant,
    n: usize,
    t0: f64,
    times: usize,
    r: usize,
    stationary: bool,
) -> Result<(), CliError> {
    if t0 <= 0.0 {
        return Err(CliError::validation("t0 must be positive"));
    }
    if times < 1 {
        return Err(CliError::validation("need at least one output time"));
    }
    let config = format!(
        "cmd=fp;model={};u0={};N={n};t0={t0};times={times};r={r};stationary={stationary};format={}",
        inputs.model_id,
        coeff_list(inputs.u0.poly()),
        cli.format.name()
    );

    let disc = discretize_fp(&inputs.model, n, r)?;
    let v0 = if stationary {
        // The discrete operator's own stationary vector (inverse iteration),
        // which the time stepper preserves exactly; the continuous
        // closed-form density differs from it by the discretization error.
        discrete_stationary(&disc)?
    } else {
        require_admissible(&inputs.u0)?;
        let mut extended = onestep::rates::extend_initial(&inputs.u0, disc.grid())?;
        let norm = normalize_initial(&extended, n)?;
        for v in &mut extended.values {
            *v = (*v / norm.qn) / norm.renorm;
        }
        extended
    };
    let t_grid = uniform_times(t0, times);
    let traj = solve_fp(&disc, &v0, &t_grid)?;

    let mass_initial = disc.mass(&traj.fields[0]);
    let mass_final = disc.mass(traj.fields.last().expect("at least one output"));
    let metadata = FieldMetadata {
        label: inputs.model.label().to_string(),
        n,
        r,
        dx: disc.grid().dx(),
        dt: traj.dt,
        mass_initial,
        mass_final,
    };
    let d = default_decay_rate(&inputs.model);
    let contraction = check_contraction_field(&traj, d, TrajectoryNorm::Sup)?;

    let mut out = OutDir::create(&cli.out)?;
    if cli.format.csv() {
        out.write("field.csv", &export::field_csv(&traj))?;
    }
    if cli.format.json() {
        out.write("field.json", &export::json_pretty(&traj))?;
    }
    out.write("metadata.json", &export::json_pretty(&metadata))?;
    out.finish("fp", &config, started)?;

    let drift = (mass_final - mass_initial).abs() / mass_initial.abs().max(f64::MIN_POSITIVE);
    println!(
        "fp: N={n}, r={r}, {} nodes, dt={:.3e}, relative mass drift = {drift:.3e}, \
         contraction(d={d:.3}) {}",
        disc.grid().m(),
        traj.dt,
        if contraction.ok { "ok" } else { "VIOLATED" }
    );
    Ok(())
}

fn write_convergence_artifacts(
    cli: &Cli,
    report: &ConvergenceReport<f64>,
    config: &str,
    started: Instant,
) -> Result<(), CliError> {
    let mut out = OutDir::create(&cli.out)?;
    if cli.format.csv() {
        out.write("ladder.csv", &export::ladder_csv(report))?;
        out.write(
            "error_vs_n.gnuplot",
            &export::loglog_plot_script(
                "ladder.csv",
                &format!("distribution error vs N ({})", report.model_label),
                "sup error",
                &[PlotSeries {
                    y_column: 2,
                    label: "sup error",
                    fit: Some((report.fitted_order, report.intercept)),
                }],
            ),
        )?;
    }
    out.write("report.json", &export::json_pretty(report))?;
    out.finish("converge", config, started)
}

fn cmd_converge(
    cli: &Cli,
    inputs: &Inputs,
    started: Instant,
    n_list: &[usize],
    t0: f64,
    r: usize,
    synthetic: bool,
) -> Result<(), CliError> {
    if t0 <= 0.0 {
        return Err(CliError::validation("t0 must be positive"));
    }
    let config = format!(
        "cmd=converge;model={};u0={};N={};t0={t0};r={r};synthetic={synthetic};format={}",
        inputs.model_id,
        coeff_list(inputs.u0.poly()),
        usize_list(n_list),
        cli.format.name()
    );

    let report = if synthetic {
        synthetic_report(n_list, t0, r, &config)?
    } else {
        run_convergence(&inputs.model, &inputs.u0, t0, n_list, r)?
    };

    write_convergence_artifacts(cli, &report, &config, started)?;
    println!(
        "converge{}: fitted order {:.4} (R^2 = {:.5}), error constant K <= {:.4}",
        if synthetic { " [synthetic]" } else { "" },
        report.fitted_order,
        report.r2,
        report.k_estimate
    );
    Ok(())
}

/// Self-test ladder: exact `0.3 / N` errors, so the fit must return slope
/// -1 and R^2 = 1 up to rounding. Exercises the fit and the artifact
/// plumbing without any solver.
fn synthetic_report(
    n_list: &[usize],
    t0: f64,
    r: usize,
    config: &str,
) -> Result<ConvergenceReport<f64>, CliError> {
    if n_list.len() < 3 {
        return Err(ConvergenceError::TooFewPoints(n_list.len()).into());
    }
    if !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(ConvergenceError::LadderNotIncreasing.into());
    }
    let entries: Vec<LadderEntry<f64>> = n_list
        .iter()
        .map(|&n| {
            let e = 0.3 / n as f64;
            LadderEntry {
                n,
                sup_error: e,
                error_at_t0: e,
                sup_error_unnormalized: e,
                qn: 1.0,
                seconds: 0.0,
                master_mass_drift: 0.0,
                field_mass_drift: 0.0,
            }
        })
        .collect();
    let points: Vec<(usize, f64)> = entries.iter().map(|e| (e.n, e.sup_error)).collect();
    let fit = fit_order(&points)?;
    Ok(ConvergenceReport {
        model_label: "synthetic".to_string(),
        t0,
        r,
        entries,
        fitted_order: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        k_estimate: 0.3,
        u0_admissible: true,
        u0_failures: Vec::new(),
        config_digest: format!("{:016x}", fnv1a64(config.as_bytes())),
    })
}

fn cmd_consistency(
    cli: &Cli,
    inputs: &Inputs,
    started: Instant,
    n_list: &[usize],
    f: &Option<Vec<f64>>,
) -> Result<(), CliError> {
    if n_list.len() < 3 || !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::validation(
            "defect ladder needs at least 3 strictly increasing sizes",
        ));
    }
    let observable = match f {
        Some(coeffs) => {
            if coeffs.is_empty() {
                return Err(CliError::validation("observable needs coefficients"));
            }
            Poly::new(coeffs.clone())
        }
        None => Poly::from_f64(&[0.0, 0.0, 1.0, -2.0, 1.0]),
    };
    let config = format!(
        "cmd=consistency;model={};f={};N={};format={}",
        inputs.model_id,
        coeff_list(&observable),
        usize_list(n_list),
        cli.format.name()
    );

    let study = defect_order_study(&inputs.model, &observable, n_list)?;

    let mut out = OutDir::create(&cli.out)?;
    if cli.format.csv() {
        out.write("defects.csv", &export::defect_csv(&study))?;
        out.write(
            "defect_vs_n.gnuplot",
            &export::loglog_plot_script(
                "defects.csv",
                &format!("generator defect vs N ({})", study.model_label),
                "sup defect",
                &[
                    PlotSeries {
                        y_column: 2,
                        label: "all rows",
                        fit: Some((study.fit_all.slope, study.fit_all.intercept)),
                    },
                    PlotSeries {
                        y_column: 3,
                        label: "interior rows",
                        fit: Some((study.fit_interior.slope, study.fit_interior.intercept)),
                    },
                    PlotSeries {
                        y_column: 4,
                        label: "boundary rows",
                        fit: None,
                    },
                ],
            ),
        )?;
    }
    out.write("defect_report.json", &export::json_pretty(&study))?;
    out.finish("consistency", &config, started)?;

    println!(
        "consistency: defect slopes all {:.3} (R^2 {:.4}), interior {:.3} (R^2 {:.4}), \
         boundary {:.3}",
        study.fit_all.slope,
        study.fit_all.r2,
        study.fit_interior.slope,
        study.fit_interior.r2,
        study.fit_boundary.slope
    );
    Ok(())
}

#[derive(Serialize)]
struct ConditionalClaim {
    /// Power of 1/N the conjecture-conditional bound would give.
    claimed_order: usize,
    /// Fitted-slope threshold for counting the run as support.
    threshold: f64,
    consistent_with_claim: bool,
}

#[derive(Serialize)]
struct ConjecturesSummary {
    model_label: String,
    n_list: Vec<usize>,
    probe_times: Vec<f64>,
    r: usize,
    /// Whether u0 satisfies the matched-third-derivative hypothesis
    /// u0'''(0) = u0'''(1) of the third-order statement.
    third_derivative_hypothesis_holds: bool,
    /// Decay of the boundary-strip |u''| maximum across the ladder.
    boundary_decay: BoundaryDecayReport<f64>,
    /// The error ladder the conditional claims are judged against.
    error_ladder: ConvergenceReport<f64>,
    conditional: Vec<ConditionalClaim>,
    probes: Vec<ConjectureProbe<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_conjectures(
    cli: &Cli,
    inputs: &Inputs,
    started: Instant,
    n_list: &[usize],
    t_grid: &[f64],
    t0: f64,
    r: usize,
) -> Result<(), CliError> {
    if n_list.len() < 3 || !n_list.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::validation(
            "conjecture ladder needs at least 3 strictly increasing sizes",
        ));
    }
    if t_grid.is_empty() || t_grid.iter().any(|&t| t <= 0.0) {
        return Err(CliError::validation(
            "probe times must be positive (the t = 0 extension kink does not decay)",
        ));
    }
    if t0 <= 0.0 {
        return Err(CliError::validation("t0 must be positive"));
    }
    let config = format!(
        "cmd=conjectures;model={};u0={};N={};t={};t0={t0};r={r};format={}",
        inputs.model_id,
        coeff_list(inputs.u0.poly()),
        usize_list(n_list),
        f64_list(t_grid),
        cli.format.name()
    );

    let mut probes: Vec<ConjectureProbe<f64>> = Vec::new();
    for &n in n_list {
        for order in [2usize, 3] {
            probes.extend(probe_derivative_conjecture(
                &inputs.model,
                &inputs.u0,
                n,
                t_grid,
                order,
                r,
            )?);
        }
    }
    let decay = probe_boundary_decay(&inputs.model, &inputs.u0, n_list, t_grid, r)?;
    let ladder = run_convergence(&inputs.model, &inputs.u0, t0, n_list, r)?;
    let fit = OrderFit {
        slope: ladder.fitted_order,
        intercept: ladder.intercept,
        r2: ladder.r2,
    };
    let conditional: Vec<ConditionalClaim> = [2usize, 3]
        .iter()
        .map(|&claimed| ConditionalClaim {
            claimed_order: claimed,
            threshold: 0.2 - claimed as f64,
            consistent_with_claim: conditional_flag(&fit, claimed),
        })
        .collect();
    let summary = ConjecturesSummary {
        model_label: inputs.model.label().to_string(),
        n_list: n_list.to_vec(),
        probe_times: t_grid.to_vec(),
        r,
        third_derivative_hypothesis_holds: third_derivative_hypothesis(&inputs.u0),
        boundary_decay: decay,
        error_ladder: ladder,
        conditional,
        probes,
    };

    let mut out = OutDir::create(&cli.out)?;
    if cli.format.csv() {
        out.write("probes.csv", &export::probe_csv(&summary.probes))?;
    }
    out.write("conjectures.json", &export::json_pretty(&summary))?;
    out.finish("conjectures", &config, started)?;

    println!(
        "conjectures: boundary |u''| decay slope {:.3} (R^2 {:.4}), supports 1/N bound: {}; \
         error slope {:.3}; conditional order-2: {}, order-3: {}; u0 third-derivative \
         hypothesis: {}",
        summary.boundary_decay.slope,
        summary.boundary_decay.r2,
        summary.boundary_decay.supports_decay,
        summary.error_ladder.fitted_order,
        summary.conditional[0].consistent_with_claim,
        summary.conditional[1].consistent_with_claim,
        summary.third_derivative_hypothesis_holds
    );
    Ok(())
}

#[derive(Serialize)]
struct SnapshotStat {
    t: f64,
    mean: f64,
    tv_vs_master: Option<f64>,
}

#[derive(Serialize)]
struct SsaLadderReport {
    entries: Vec<(usize, f64)>,
    slope: f64,
    r2: f64,
}

#[derive(Serialize)]
struct SsaSummary {
    n: usize,
    k0: usize,
    t_end: f64,
    n_paths: usize,
    seed: u64,
    /// `3 sqrt((N+1)/n_paths)`: the multinomial sampling-noise scale the
    /// final total-variation distance is judged against.
    noise_envelope: f64,
    within_envelope: Option<bool>,
    snapshots: Vec<SnapshotStat>,
    ladder: Option<SsaLadderReport>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_ssa(
    cli: &Cli,
    inputs: &Inputs,
    started: Instant,
    n: usize,
    t_end: f64,
    paths: usize,
    k0: Option<usize>,
    ladder: bool,
    no_compare: bool,
) -> Result<(), CliError> {
    if t_end <= 0.0 {
        return Err(CliError::validation("t-end must be positive"));
    }
    if paths < 1 {
        return Err(CliError::validation("need at least one path"));
    }
    if ladder && paths < 100 {
        return Err(CliError::validation(
            "the paths ladder needs at least 100 paths",
        ));
    }
    let k0 = k0.unwrap_or(n / 2);
    let config = format!(
        "cmd=ssa;model={};N={n};t_end={t_end};paths={paths};k0={k0};seed={};ladder={ladder};\
         compare={};format={}",
        inputs.model_id,
        cli.seed,
        !no_compare,
        cli.format.name()
    );

    let cfg = SsaConfig {
        n,
        start: SsaStart::State(k0),
        times: vec![t_end],
        n_paths: paths,
        seed: cli.seed,
    };
    let snaps = simulate(&inputs.model, &cfg)?;

    // Reference distribution from the analytic solver, unless suppressed.
    let reference: Option<Vec<f64>> = if no_compare {
        None
    } else {
        let gen = build_generator(&inputs.model, n)?;
        let mut p0 = vec![0.0; n + 1];
        p0[k0] = 1.0;
        Some(solve_master(&gen, &p0, &[t_end])?.states[0].clone())
    };

    let snapshots: Vec<SnapshotStat> = snaps
        .iter()
        .map(|snap| {
            let mean = snap
                .counts
                .iter()
                .enumerate()
                .map(|(k, &c)| k as f64 * c as f64)
                .sum::<f64>()
                / snap.n_paths as f64;
            let tv = reference
                .as_ref()
                .map(|p| tv_distance(snap, p))
                .transpose()?;
            Ok(SnapshotStat {
                t: snap.t,
                mean,
                tv_vs_master: tv,
            })
        })
        .collect::<Result<_, SsaError>>()?;

    let ladder_report = if ladder {
        let reference = reference.as_ref().ok_or_else(|| {
            CliError::validation("--ladder needs the master comparison (drop --no-compare)")
        })?;
        let rungs = [paths / 100, paths / 10, paths];
        let points: Vec<(usize, f64)> = rungs
            .iter()
            .map(|&n_paths| -> Result<(usize, f64), CliError> {
                let cfg = SsaConfig {
                    n_paths,
                    ..cfg.clone()
                };
                let snap = &simulate(&inputs.model, &cfg)?[0];
                Ok((n_paths, tv_distance(snap, reference)?))
            })
            .collect::<Result<_, _>>()?;
        let fit = fit_order(&points)?;
        Some(SsaLadderReport {
            entries: points,
            slope: fit.slope,
            r2: fit.r2,
        })
    } else {
        None
    };

    let noise_envelope = 3.0 * ((n as f64 + 1.0) / paths as f64).sqrt();
    let final_tv = snapshots.last().and_then(|s| s.tv_vs_master);
    let summary = SsaSummary {
        n,
        k0,
        t_end,
        n_paths: paths,
        seed: cli.seed,
        noise_envelope,
        within_envelope: final_tv.map(|tv| tv <= noise_envelope),
        snapshots,
        ladder: ladder_report,
    };

    let mut out = OutDir::create(&cli.out)?;
    if cli.format.csv() {
        if snaps.len() == 1 {
            out.write("counts.csv", &export::counts_csv(&snaps[0]))?;
        } else {
            for (i, snap) in snaps.iter().enumerate() {
                out.write(&format!("counts_{i}.csv"), &export::counts_csv(snap))?;
            }
        }
    }
    out.write("ssa.json", &export::json_pretty(&summary))?;
    out.finish("ssa", &config, started)?;

    let tv_text = match final_tv {
        Some(tv) => format!(
            "TV vs master = {tv:.4} (envelope {noise_envelope:.4}, within: {})",
            if tv <= noise_envelope { "yes" } else { "no" }
        ),
        None => "no comparison".to_string(),
    };
    let ladder_text = match &summary.ladder {
        Some(l) => format!("; ladder slope {:.3} (R^2 {:.4})", l.slope, l.r2),
        None => String::new(),
    };
    println!("ssa: N={n}, k0={k0}, {paths} paths to t={t_end}: {tv_text}{ladder_text}");
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn run(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let inputs = resolve_inputs(cli)?;
    match &cli.cmd {
        Cmd::Validate => cmd_validate(cli, &inputs, started),
        Cmd::Master {
            n,
            t0,
            times,
            stationary,
        } => cmd_master(cli, &inputs, started, *n, *t0, *times, *stationary),
        Cmd::Fp {
            n,
            t0,
            times,
            r,
            stationary,
        } => cmd_fp(cli, &inputs, started, *n, *t0, *times, *r, *stationary),
        Cmd::Converge {
            n_list,
            t0,
            r,
            synthetic,
        } => cmd_converge(cli, &inputs, started, n_list, *t0, *r, *synthetic),
        Cmd::Consistency { n_list, f } => cmd_consistency(cli, &inputs, started, n_list, f),
        Cmd::Conjectures {
            n_list,
            t_grid,
            t0,
            r,
        } => cmd_conjectures(cli, &inputs, started, n_list, t_grid, *t0, *r),
        Cmd::Ssa {
            n,
            t_end,
            paths,
            k0,
            ladder,
            no_compare,
        } => cmd_ssa(
            cli, &inputs, started, *n, *t_end, *paths, *k0, *ladder, *no_compare,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 0 {
        // First and only pool initialization; failure would mean a pool
        // already exists, which cannot happen in this binary.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    let started = Instant::now();
    let code = match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    };
    eprintln!("elapsed: {:.3}s", started.elapsed().as_secs_f64());
    code
}
