//! Experiment runners behind the CLI subcommands, plus sweeps and plot-data
//! emission. Every runner writes its ledger (manifest before the run, result
//! JSON atomically after) and returns the process exit code: 0 success,
//! 2 config error (via Err), 3 runtime failure, 4 verdict failure.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    default_eps_grid, default_q_grid, entry_time, envelope_neg_p, mass_floor, persistence_floor,
    threshold_report, verify_rows, EnvelopeCheck, M2Source, MonitorSet, PersistenceFloors,
    RowInvariantReport, ThresholdReport, ENVELOPE_SLACK,
};
use crate::elliptic::{delta0_h, Delta0, EllipticOperator};
use crate::entire::{
    fixed_point_periodic, pullback_entire, steady_state, steady_state_via_periods,
};
use crate::error::{Error, Result};
use crate::harness::config::{InitialSpec, RunConfig};
use crate::harness::ledger::{load_manifest, read_diagnostics, Manifest, RunLedger};
use crate::model::{CoeffExpr, Domain};
use crate::stepper::{evolve, RunStatus, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_VERDICT: i32 = 4;

/// Multiplier for per-cell sweep seeds (64-bit golden ratio), so grid points
/// get decorrelated but reproducible streams.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Thresholds,
    Simulate,
    Periodic,
    Steady,
    Entire,
    Sweep,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Thresholds => "check-thresholds",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Periodic => "periodic",
            ExperimentKind::Steady => "steady",
            ExperimentKind::Entire => "entire",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

/// Everything derivable from the config before touching initial data.
struct Prepared {
    domain: Domain,
    monitors: MonitorSet,
    report: ThresholdReport,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let domain = cfg.domain.build()?;
    let delta0 = match cfg.thresholds.delta0 {
        Some(value) => Delta0 {
            value,
            certified: false,
            columns: 0,
        },
        None => {
            let op = EllipticOperator::assemble(&domain, cfg.coefficients.mu)?;
            delta0_h(&op, cfg.coefficients.nu, cfg.thresholds.exhaustive_cap)?
        }
    };
    let q_grid = cfg
        .thresholds
        .q_grid
        .clone()
        .unwrap_or_else(default_q_grid);
    let eps_grid = cfg
        .thresholds
        .eps_grid
        .clone()
        .unwrap_or_else(default_eps_grid);
    let m2 = cfg
        .monitor
        .m2_star
        .map(|value| M2Source::Configured { value });
    let report = threshold_report(
        &cfg.coefficients,
        &domain,
        delta0,
        cfg.thresholds.c_star,
        &q_grid,
        &eps_grid,
        m2,
    )?;
    let mut monitors = MonitorSet {
        p: cfg.monitor.p,
        q: cfg.monitor.q,
        theta: cfg.monitor.theta,
        holder_cap: cfg.monitor.holder_cap,
        rectangle: report.rectangle,
        forced_times: cfg.monitor.forced_times.clone(),
    };
    // Keep the q-moment column consistent with the rectangle's exponent.
    if let Some(r) = &report.rectangle {
        monitors.q = r.q;
    }
    Ok(Prepared {
        domain,
        monitors,
        report,
    })
}

/// Entry point shared by the CLI subcommands.
pub fn execute(
    cfg: &RunConfig,
    kind: ExperimentKind,
    parallelism: Option<usize>,
    base_dir: &Path,
) -> Result<i32> {
    if let Some(declared) = &cfg.run.experiment {
        if declared != kind.as_str() {
            return Err(Error::Config(format!(
                "run.experiment: config declares `{declared}` but `{}` was invoked",
                kind.as_str()
            )));
        }
    }
    match kind {
        ExperimentKind::Thresholds => run_thresholds(cfg),
        ExperimentKind::Simulate => run_simulate(cfg, base_dir),
        ExperimentKind::Periodic => run_periodic(cfg, base_dir),
        ExperimentKind::Steady => run_steady(cfg, base_dir),
        ExperimentKind::Entire => run_entire(cfg, base_dir),
        ExperimentKind::Sweep => run_sweep(cfg, parallelism, base_dir),
    }
}

/// Common result envelope. `wall_seconds` is the one runtime-dependent field;
/// all CSV artifacts stay byte-stable.
#[derive(Serialize)]
struct RunResult<S: Serialize> {
    status: String,
    exit_code: i32,
    wall_seconds: f64,
    summary: S,
}

fn status_label(status: &RunStatus) -> String {
    match status {
        RunStatus::Completed => "completed".into(),
        RunStatus::PositivityLoss { t, .. } => format!("positivity_loss@t={t}"),
        RunStatus::Stiffness { t, .. } => format!("stiffness@t={t}"),
        RunStatus::SolverFailure { t, .. } => format!("solver_failure@t={t}"),
    }
}

// ---------------------------------------------------------------------------
// check-thresholds
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ThresholdSummary {
    report: ThresholdReport,
}

fn run_thresholds(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let manifest = Manifest::new(
        ExperimentKind::Thresholds.as_str(),
        cfg,
        &prepared.report,
        false,
    );
    let ledger = RunLedger::create(&cfg.out_dir(), &manifest)?;
    let exit = if prepared.report.sharp_ok {
        EXIT_OK
    } else {
        EXIT_VERDICT
    };
    ledger.finish(&RunResult {
        status: if prepared.report.sharp_ok {
            "pass".into()
        } else {
            "fail".into()
        },
        exit_code: exit,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary: ThresholdSummary {
            report: prepared.report,
        },
    })?;
    Ok(exit)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct SimulateSummary {
    trajectory_status: RunStatus,
    prestep_applied: bool,
    diagnostics_rows: usize,
    checkpoints: usize,
    /// Exponential/max/tail envelope check of ∫u⁻¹, when γ > 0.
    envelope: Option<EnvelopeCheck>,
    floors: PersistenceFloors,
    row_invariants: RowInvariantReport,
    /// First time the negative moment crossed the certification threshold,
    /// with the elapsed span.
    entry: Option<(f64, f64)>,
}

fn run_simulate(cfg: &RunConfig, base_dir: &Path) -> Result<i32> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let u0 = cfg
        .initial
        .build(&prepared.domain, cfg.run.seed, base_dir)?;
    let manifest = Manifest::new(
        ExperimentKind::Simulate.as_str(),
        cfg,
        &prepared.report,
        u0.min() <= 0.0,
    );
    let mut ledger = RunLedger::create(&cfg.out_dir(), &manifest)?;

    let traj = evolve(
        &u0,
        cfg.run.s,
        cfg.run.t_end,
        &cfg.coefficients,
        &cfg.step_control,
        &prepared.monitors,
    )?;
    ledger.write_diagnostics(&traj.diagnostics)?;
    ledger.write_field("final_state.csv", traj.final_state().u())?;
    if cfg.run.save_checkpoints {
        for (i, s) in traj.states.iter().enumerate() {
            ledger.write_field(&format!("checkpoint_{i:04}.csv"), s.u())?;
        }
    }

    let envelope = match prepared.report.m1 {
        Some(m1) => Some(envelope_neg_p(
            &traj.diagnostics,
            prepared.report.gamma,
            m1,
            0,
            cfg.monitor.tail_fraction,
            ENVELOPE_SLACK,
        )?),
        None => None,
    };
    let summary = SimulateSummary {
        trajectory_status: traj.status.clone(),
        prestep_applied: traj.prestep_applied,
        diagnostics_rows: traj.diagnostics.rows.len(),
        checkpoints: traj.states.len(),
        envelope,
        floors: persistence_floor(&traj.diagnostics, cfg.monitor.tail_fraction)?,
        row_invariants: verify_rows(
            &traj.diagnostics,
            prepared.domain.measure(),
            prepared.report.delta0.value,
            1e-10,
        ),
        entry: prepared
            .report
            .neg_moment_threshold
            .and_then(|th| entry_time(&traj.diagnostics, th)),
    };
    let exit = if traj.status.is_completed() {
        EXIT_OK
    } else {
        EXIT_RUNTIME
    };
    ledger.finish(&RunResult {
        status: status_label(&traj.status),
        exit_code: exit,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary,
    })?;
    Ok(exit)
}

// ---------------------------------------------------------------------------
// periodic / steady / entire
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PeriodicSummary {
    t_period: f64,
    converged: bool,
    residual: f64,
    iterations: usize,
    orbit_mismatch: Option<f64>,
    rectangle_member: bool,
    /// Set when the sharpened threshold fails: existence is then outside the
    /// certified regime and the fixed point is exploratory.
    sharp_warning: bool,
}

fn run_periodic(cfg: &RunConfig, base_dir: &Path) -> Result<i32> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let section = cfg.periodic.clone().unwrap_or_default();
    let t_period = match section.t_period.or(cfg.coefficients.period()?) {
        Some(t) => t,
        None => {
            return Err(Error::Config(
                "periodic.t_period: required when the coefficients declare no period".into(),
            ))
        }
    };
    let u0 = cfg
        .initial
        .build(&prepared.domain, cfg.run.seed, base_dir)?;
    let manifest = Manifest::new(
        ExperimentKind::Periodic.as_str(),
        cfg,
        &prepared.report,
        u0.min() <= 0.0,
    );
    let mut ledger = RunLedger::create(&cfg.out_dir(), &manifest)?;

    let res = fixed_point_periodic(
        &cfg.coefficients,
        t_period,
        &u0,
        section.omega,
        section.tol,
        section.max_iter,
        &cfg.step_control,
        prepared.report.rectangle.as_ref(),
    )?;
    ledger.write_field("u_star.csv", &res.u_star)?;
    let exit = if res.converged { EXIT_OK } else { EXIT_VERDICT };
    ledger.finish(&RunResult {
        status: if res.converged {
            "converged".into()
        } else {
            "not_converged".into()
        },
        exit_code: exit,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary: PeriodicSummary {
            t_period,
            converged: res.converged,
            residual: res.residual,
            iterations: res.iterations,
            orbit_mismatch: res.orbit_mismatch,
            rectangle_member: res.rectangle_member,
            sharp_warning: !prepared.report.sharp_ok,
        },
    })?;
    Ok(exit)
}

#[derive(Serialize)]
struct CrossCheckSummary {
    max_pairwise: f64,
    all_converged: bool,
}

#[derive(Serialize)]
struct SteadySummary {
    converged: bool,
    residual: f64,
    iterations: usize,
    rectangle_member: bool,
    cross_check: Option<CrossCheckSummary>,
}

fn run_steady(cfg: &RunConfig, base_dir: &Path) -> Result<i32> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let section = cfg.steady.clone().unwrap_or_default();
    let u0 = cfg
        .initial
        .build(&prepared.domain, cfg.run.seed, base_dir)?;
    let manifest = Manifest::new(
        ExperimentKind::Steady.as_str(),
        cfg,
        &prepared.report,
        u0.min() <= 0.0,
    );
    let mut ledger = RunLedger::create(&cfg.out_dir(), &manifest)?;

    let res = steady_state(
        &cfg.coefficients,
        &u0,
        section.tol,
        section.t_cap,
        &cfg.step_control,
        prepared.report.rectangle.as_ref(),
    )?;
    ledger.write_field("u_star.csv", &res.u_star)?;
    let cross = if section.cross_check {
        let c = steady_state_via_periods(
            &cfg.coefficients,
            &u0,
            section.tol,
            section.cross_max_iter,
            &cfg.step_control,
        )?;
        Some(CrossCheckSummary {
            max_pairwise: c.max_pairwise,
            all_converged: c.all_converged,
        })
    } else {
        None
    };
    let exit = if res.converged { EXIT_OK } else { EXIT_VERDICT };
    ledger.finish(&RunResult {
        status: if res.converged {
            "converged".into()
        } else {
            "not_converged".into()
        },
        exit_code: exit,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary: SteadySummary {
            converged: res.converged,
            residual: res.residual,
            iterations: res.iterations,
            rectangle_member: res.rectangle_member,
            cross_check: cross,
        },
    })?;
    Ok(exit)
}

#[derive(Serialize)]
struct EntireSummary {
    converged: bool,
    n_used: f64,
    differences: Vec<f64>,
    window_checkpoints: usize,
}

fn run_entire(cfg: &RunConfig, base_dir: &Path) -> Result<i32> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let section = cfg
        .entire
        .clone()
        .ok_or_else(|| Error::Config("entire: section required (window, n_schedule)".into()))?;
    let u0 = cfg
        .initial
        .build(&prepared.domain, cfg.run.seed, base_dir)?;
    let manifest = Manifest::new(
        ExperimentKind::Entire.as_str(),
        cfg,
        &prepared.report,
        u0.min() <= 0.0,
    );
    let mut ledger = RunLedger::create(&cfg.out_dir(), &manifest)?;

    let res = pullback_entire(
        &cfg.coefficients,
        &u0,
        section.window,
        &section.n_schedule,
        section.tol,
        &cfg.step_control,
    )?;
    ledger.write_field("profile.csv", &res.profile)?;
    ledger.write_states("window.csv", &res.window)?;
    let exit = if res.converged { EXIT_OK } else { EXIT_VERDICT };
    ledger.finish(&RunResult {
        status: if res.converged {
            "converged".into()
        } else {
            "not_converged".into()
        },
        exit_code: exit,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary: EntireSummary {
            converged: res.converged,
            n_used: res.n_used,
            differences: res.differences,
            window_checkpoints: res.window.len(),
        },
    })?;
    Ok(exit)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// One summary row per grid point.
struct SweepRow {
    values: Vec<f64>,
    sharp_ok: Option<bool>,
    rhs_sharp: Option<f64>,
    min_u: Option<f64>,
    min_v: Option<f64>,
    tail_max_u: Option<f64>,
    status: String,
}

fn apply_axis(cfg: &mut RunConfig, path: &str, value: f64) -> Result<()> {
    match path {
        "coefficients.chi" => cfg.coefficients.chi = value,
        "coefficients.mu" => cfg.coefficients.mu = value,
        "coefficients.nu" => cfg.coefficients.nu = value,
        "coefficients.a" => {
            cfg.coefficients.a = CoeffExpr::constant(value);
            cfg.coefficients.a_inf = value;
            cfg.coefficients.a_sup = value;
        }
        "coefficients.b" => {
            cfg.coefficients.b = CoeffExpr::constant(value);
            cfg.coefficients.b_inf = value;
            cfg.coefficients.b_sup = value;
        }
        "initial.sigma" => match &mut cfg.initial {
            InitialSpec::Lognormal { sigma, .. } => *sigma = value,
            _ => {
                return Err(Error::Config(
                    "sweep.axes: initial.sigma needs lognormal initial data".into(),
                ))
            }
        },
        "domain.cells" => {
            if value.fract() != 0.0 || value < 3.0 {
                return Err(Error::Config(format!(
                    "sweep.axes: domain.cells values must be whole numbers ≥ 3, got {value}"
                )));
            }
            let n = value as usize;
            cfg.domain.cells = vec![n; cfg.domain.dim];
        }
        other => {
            return Err(Error::Config(format!(
                "sweep.axes: unsupported parameter path `{other}` \
                 (allowed: coefficients.chi|mu|nu|a|b, initial.sigma, domain.cells)"
            )))
        }
    }
    Ok(())
}

/// Evaluate one grid point in memory; failures become a status string, never
/// a sweep abort.
fn sweep_cell(base: &RunConfig, axes: &[(&String, &Vec<f64>)], index: usize, base_dir: &Path) -> SweepRow {
    // Decompose row-major over the axis grid, last axis fastest.
    let mut values = vec![0.0; axes.len()];
    let mut rest = index;
    for (k, (_, grid)) in axes.iter().enumerate().rev() {
        values[k] = grid[rest % grid.len()];
        rest /= grid.len();
    }
    let mut cfg = base.clone();
    for (k, (path, _)) in axes.iter().enumerate() {
        if let Err(e) = apply_axis(&mut cfg, path, values[k]) {
            return SweepRow {
                values,
                sharp_ok: None,
                rhs_sharp: None,
                min_u: None,
                min_v: None,
                tail_max_u: None,
                status: format!("config_error: {e}"),
            };
        }
    }
    cfg.run.seed = base
        .run
        .seed
        .wrapping_add((index as u64).wrapping_mul(SEED_STRIDE));

    let outcome = (|| -> Result<(ThresholdReport, Trajectory, PersistenceFloors, f64)> {
        let prepared = prepare(&cfg)?;
        let u0 = cfg.initial.build(&prepared.domain, cfg.run.seed, base_dir)?;
        let traj = evolve(
            &u0,
            cfg.run.s,
            cfg.run.t_end,
            &cfg.coefficients,
            &cfg.step_control,
            &prepared.monitors,
        )?;
        let floors = persistence_floor(&traj.diagnostics, cfg.monitor.tail_fraction)?;
        let tail_rows = traj.diagnostics.rows.len() - floors.tail_rows;
        let tail_max_u = traj.diagnostics.rows[tail_rows..]
            .iter()
            .map(|r| r.max_u)
            .fold(0.0_f64, f64::max);
        Ok((prepared.report, traj, floors, tail_max_u))
    })();
    match outcome {
        Ok((report, traj, floors, tail_max_u)) => SweepRow {
            values,
            sharp_ok: Some(report.sharp_ok),
            rhs_sharp: Some(report.rhs_sharp),
            min_u: Some(floors.min_u),
            min_v: Some(floors.min_v),
            tail_max_u: Some(tail_max_u),
            status: status_label(&traj.status),
        },
        Err(e) => SweepRow {
            values,
            sharp_ok: None,
            rhs_sharp: None,
            min_u: None,
            min_v: None,
            tail_max_u: None,
            status: format!("error: {e}"),
        },
    }
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct SweepSummary {
    points: usize,
    failures: usize,
    axes: Vec<String>,
    csv: String,
}

fn run_sweep(cfg: &RunConfig, parallelism: Option<usize>, base_dir: &Path) -> Result<i32> {
    let start = Instant::now();
    let prepared = prepare(cfg)?;
    let section = cfg
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep: section required (axes)".into()))?;
    if section.axes.is_empty() {
        return Err(Error::Config("sweep.axes: at least one axis required".into()));
    }
    let axes: Vec<(&String, &Vec<f64>)> = section.axes.iter().collect();
    for (path, grid) in &axes {
        if grid.is_empty() {
            return Err(Error::Config(format!("sweep.axes.{path}: empty grid")));
        }
        // Surface unsupported paths before launching the grid.
        apply_axis(&mut cfg.clone(), path, grid[0])?;
    }
    let total: usize = axes.iter().map(|(_, g)| g.len()).product();
    if total > section.cap {
        return Err(Error::Config(format!(
            "sweep.axes: grid has {total} points, cap is {}",
            section.cap
        )));
    }

    let manifest = Manifest::new(ExperimentKind::Sweep.as_str(), cfg, &prepared.report, false);
    let mut ledger = RunLedger::create(&cfg.out_dir(), &manifest)?;

    let run_all = || -> Vec<SweepRow> {
        (0..total)
            .into_par_iter()
            .map(|i| sweep_cell(cfg, &axes, i, base_dir))
            .collect()
    };
    let rows = match parallelism {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };

    // Grid-ordered summary; byte-identical at any parallelism.
    let mut csv = String::new();
    for (path, _) in &axes {
        csv.push_str(path);
        csv.push(',');
    }
    csv.push_str("sharp_ok,rhs_sharp,persistence_min_u,persistence_min_v,tail_max_u,status\n");
    for row in &rows {
        for v in &row.values {
            csv.push_str(&v.to_string());
            csv.push(',');
        }
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.sharp_ok.map(|b| u8::from(b).to_string()).unwrap_or_default(),
            opt_f64(row.rhs_sharp),
            opt_f64(row.min_u),
            opt_f64(row.min_v),
            opt_f64(row.tail_max_u),
            row.status,
        ));
    }
    let csv_path = ledger.write_csv("sweep.csv", &csv)?;

    let failures = rows.iter().filter(|r| r.status != "completed").count();
    ledger.finish(&RunResult {
        status: "completed".into(),
        exit_code: EXIT_OK,
        wall_seconds: start.elapsed().as_secs_f64(),
        summary: SweepSummary {
            points: total,
            failures,
            axes: axes.iter().map(|(p, _)| (*p).clone()).collect(),
            csv: csv_path.display().to_string(),
        },
    })?;
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// emit-plotdata
// ---------------------------------------------------------------------------

/// Emit columnar plot data from a completed ledger. Kinds: `envelope`
/// (t, observed ∫u⁻¹, exponential bound), `persistence` (t, min_u, min_v,
/// mass floor), `region` (sweep grid with verdict and floor columns).
pub fn emit_plotdata(ledger_dir: &Path, kind: &str, out_dir: Option<&Path>) -> Result<i32> {
    let manifest = load_manifest(ledger_dir)?;
    let out = out_dir.unwrap_or(ledger_dir);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    match kind {
        "envelope" => {
            let rows = read_diagnostics(&ledger_dir.join("diagnostics.csv"))?;
            let m1 = manifest.constants.m1.ok_or_else(|| {
                Error::Config("envelope plot needs γ > 0 (no M₁ in the manifest)".into())
            })?;
            let gamma = manifest.constants.gamma;
            let (t0, neg0) = rows
                .first()
                .map(|r| (r.t, r.neg_p_moment))
                .ok_or_else(|| Error::Config("diagnostics CSV is empty".into()))?;
            let mut csv = String::from("t,observed,bound\n");
            for r in &rows {
                let bound = (-gamma * (r.t - t0)).exp() * neg0 + m1;
                csv.push_str(&format!("{},{},{}\n", r.t, r.neg_p_moment, bound));
            }
            write_plot(out, "envelope.csv", &csv)
        }
        "persistence" => {
            let rows = read_diagnostics(&ledger_dir.join("diagnostics.csv"))?;
            let m1 = manifest.constants.m1.ok_or_else(|| {
                Error::Config("persistence plot needs γ > 0 (no M₁ in the manifest)".into())
            })?;
            let domain = manifest.config.domain.build()?;
            let floor = mass_floor(m1, &domain);
            let mut csv = String::from("t,min_u,min_v,mass_floor\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{},{}\n", r.t, r.min_u, r.min_v, floor));
            }
            write_plot(out, "persistence.csv", &csv)
        }
        "region" => {
            let path = ledger_dir.join("sweep.csv");
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            write_plot(out, "region.csv", &text)
        }
        other => Err(Error::Config(format!(
            "emit-plotdata kind must be envelope, persistence, or region; got `{other}`"
        ))),
    }
}

fn write_plot(out: &Path, name: &str, payload: &str) -> Result<i32> {
    let path = out.join(name);
    std::fs::write(&path, payload).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_toml(out_dir: &str, extra: &str) -> RunConfig {
        let text = format!(
            r#"
schema_version = 1

[domain]
dim = 1
lengths = [1.0]
cells = [32]

[coefficients]
chi = 1.0
mu = 1.0
nu = 1.0
a_inf = 2.0
a_sup = 2.0
b_inf = 1.0
b_sup = 1.0

[coefficients.a]
kind = "constant"
value = 2.0

[coefficients.b]
kind = "constant"
value = 1.0

[initial]
kind = "constant"
value = 2.0

[run]
t_end = 0.5
out_dir = "{out_dir}"

[thresholds]
delta0 = 0.5

{extra}
"#
        );
        toml::from_str(&text).unwrap()
    }

    #[test]
    fn thresholds_reference_point_margin() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = config_toml(out.to_str().unwrap(), "");
        let exit = execute(&cfg, ExperimentKind::Thresholds, None, dir.path()).unwrap();
        assert_eq!(exit, EXIT_OK);
        let result: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap())
                .unwrap();
        let report = &result["summary"]["report"];
        assert!((report["rhs_sharp"].as_f64().unwrap() - 0.843145750507620).abs() < 1e-12);
        assert!((report["margin_sharp"].as_f64().unwrap() - 1.156854249492380).abs() < 1e-12);
        assert_eq!(report["sharp_ok"], true);
    }

    #[test]
    fn simulate_writes_full_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = config_toml(out.to_str().unwrap(), "");
        let exit = execute(&cfg, ExperimentKind::Simulate, None, dir.path()).unwrap();
        assert_eq!(exit, EXIT_OK);
        assert!(out.join("manifest.json").exists());
        assert!(out.join("diagnostics.csv").exists());
        // Equilibrium u = a/b stays put; final state column is exactly 2.
        let final_csv = std::fs::read_to_string(out.join("final_state.csv")).unwrap();
        for line in final_csv.lines().skip(1) {
            assert_eq!(line.rsplit(',').next().unwrap(), "2");
        }
        let result: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap())
                .unwrap();
        assert_eq!(result["status"], "completed");
        assert_eq!(result["summary"]["envelope"]["exp_ok"], true);
        assert_eq!(result["summary"]["row_invariants"]["holder_ok"], true);
        assert_eq!(result["summary"]["row_invariants"]["green_ok"], true);
        assert_eq!(result["summary"]["prestep_applied"], false);
    }

    #[test]
    fn experiment_name_mismatch_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let mut cfg = config_toml(out.to_str().unwrap(), "");
        cfg.run.experiment = Some("simulate".into());
        let err = execute(&cfg, ExperimentKind::Thresholds, None, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }

    #[test]
    fn steady_and_periodic_and_entire_runners() {
        let dir = tempfile::tempdir().unwrap();

        let out = dir.path().join("steady");
        let cfg = config_toml(
            out.to_str().unwrap(),
            "[steady]\ntol = 1e-8\nt_cap = 40.0\n",
        );
        assert_eq!(
            execute(&cfg, ExperimentKind::Steady, None, dir.path()).unwrap(),
            EXIT_OK
        );
        let star = std::fs::read_to_string(out.join("u_star.csv")).unwrap();
        let last: f64 = star.lines().nth(1).unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert!((last - 2.0).abs() < 1e-6, "steady state {last}");

        let out = dir.path().join("periodic");
        let cfg = config_toml(
            out.to_str().unwrap(),
            "[periodic]\nt_period = 0.5\ntol = 1e-6\nmax_iter = 10\n",
        );
        assert_eq!(
            execute(&cfg, ExperimentKind::Periodic, None, dir.path()).unwrap(),
            EXIT_OK
        );
        let result: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap())
                .unwrap();
        assert_eq!(result["summary"]["converged"], true);
        assert_eq!(result["summary"]["sharp_warning"], false);

        let out = dir.path().join("entire");
        let cfg = config_toml(
            out.to_str().unwrap(),
            "[entire]\nwindow = 1.0\nn_schedule = [1.0, 2.0, 3.0]\ntol = 1e-6\n",
        );
        assert_eq!(
            execute(&cfg, ExperimentKind::Entire, None, dir.path()).unwrap(),
            EXIT_OK
        );
        assert!(out.join("profile.csv").exists());
        assert!(out.join("window.csv").exists());
    }

    #[test]
    fn sweep_chi_axis_flips_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep");
        let mut cfg = config_toml(
            out.to_str().unwrap(),
            "[sweep]\n[sweep.axes]\n\"coefficients.chi\" = [0.5, 1.0, 2.0, 4.0]\n",
        );
        cfg.run.t_end = 0.2;
        assert_eq!(
            execute(&cfg, ExperimentKind::Sweep, None, dir.path()).unwrap(),
            EXIT_OK
        );
        let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
        let verdicts: Vec<&str> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        // rhs grows with max{chi, chi^2}: pass at 0.5 and 1, fail from 2 on.
        assert_eq!(verdicts, ["1", "1", "0", "0"], "csv:\n{csv}");
        for line in csv.lines().skip(1) {
            assert!(line.ends_with("completed"), "line: {line}");
        }
    }

    #[test]
    fn sweep_bytes_identical_across_parallelism() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for (name, par) in [("p1", Some(1)), ("p4", Some(4))] {
            let out = dir.path().join(name);
            let mut cfg = config_toml(
                out.to_str().unwrap(),
                "[sweep]\n[sweep.axes]\n\"coefficients.chi\" = [0.5, 1.0]\n\"initial.sigma\" = [0.1, 0.3]\n",
            );
            cfg.initial = InitialSpec::Lognormal {
                center: 2.0,
                sigma: 0.1,
            };
            cfg.run.t_end = 0.2;
            assert_eq!(
                execute(&cfg, ExperimentKind::Sweep, par, dir.path()).unwrap(),
                EXIT_OK
            );
            bytes.push(std::fs::read(out.join("sweep.csv")).unwrap());
        }
        assert_eq!(bytes[0], bytes[1]);
        // Four grid points, all completed, header + 4 rows.
        assert_eq!(bytes[0].split(|&b| b == b'\n').filter(|l| !l.is_empty()).count(), 5);
    }

    #[test]
    fn sweep_rejects_unknown_path_and_oversized_grid() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep");
        let cfg = config_toml(
            out.to_str().unwrap(),
            "[sweep]\n[sweep.axes]\n\"coefficients.sigma\" = [0.5]\n",
        );
        let err = execute(&cfg, ExperimentKind::Sweep, None, dir.path()).unwrap_err();
        assert!(err.to_string().contains("unsupported parameter path"), "got {err}");

        let cfg = config_toml(
            out.to_str().unwrap(),
            "[sweep]\ncap = 3\n[sweep.axes]\n\"coefficients.chi\" = [0.5, 1.0, 2.0, 4.0]\n",
        );
        let err = execute(&cfg, ExperimentKind::Sweep, None, dir.path()).unwrap_err();
        assert!(err.to_string().contains("cap"), "got {err}");
    }

    #[test]
    fn emit_plotdata_from_simulate_ledger() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let cfg = config_toml(out.to_str().unwrap(), "");
        execute(&cfg, ExperimentKind::Simulate, None, dir.path()).unwrap();

        let plots = dir.path().join("plots");
        assert_eq!(
            emit_plotdata(&out, "envelope", Some(&plots)).unwrap(),
            EXIT_OK
        );
        assert_eq!(
            emit_plotdata(&out, "persistence", Some(&plots)).unwrap(),
            EXIT_OK
        );
        let env = std::fs::read_to_string(plots.join("envelope.csv")).unwrap();
        assert!(env.starts_with("t,observed,bound\n"));
        let pers = std::fs::read_to_string(plots.join("persistence.csv")).unwrap();
        assert!(pers.starts_with("t,min_u,min_v,mass_floor\n"));
        // Equilibrium at u = 2 on the unit interval: mass floor is
        // |Omega|^2 / (2 M1) with M1 = b|Omega|/gamma.
        let diag = std::fs::read_to_string(out.join("diagnostics.csv")).unwrap();
        assert_eq!(env.lines().count(), diag.lines().count());

        let err = emit_plotdata(&out, "surface", None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got {err}");
    }
}
