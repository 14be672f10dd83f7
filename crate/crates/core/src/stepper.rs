//! IMEX time stepping for the density equation.
//!
//! One step from t to t + dt:
//!   (i)   solve the elliptic equation for the signal v;
//!   (ii)  explicit first-order upwind chemotactic advection (face velocity
//!         χ·(∂v)_face / v_face, u upwinded, zero wall flux) plus explicit
//!         logistic reaction u·(a − b·u) evaluated at step start;
//!   (iii) implicit diffusion solve (I − dt·Δ_h)u_new = intermediate.
//!
//! Face fluxes telescope, so transport and diffusion contribute nothing to
//! the mass budget; per step ∆∫u = dt·∫(au − bu²) holds to solver precision.
//! Positivity is a hard contract: a non-positive cell stops the run with an
//! error status, it is never clipped.

use serde::{Deserialize, Serialize};

use crate::analysis::{diag_row, DiagnosticsSeries, MonitorSet};
use crate::elliptic::{implicit_diffusion_solve, solve_v, EllipticOperator};
use crate::error::{Error, Result};
use crate::model::{eval_coeff, integrate, Coefficients, ScalarField, State};

/// Step-size and guard configuration for [`evolve`]. Deserialization fills
/// missing fields from the defaults, so configs only list what they change.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Safety factor in (0, 1] multiplying the CFL-limited step.
    pub cfl_safety: f64,
    /// Detection threshold for positivity loss (default 0: any non-positive
    /// cell trips the guard).
    pub positivity_floor: f64,
    /// Relative max-norm residual target for the elliptic and implicit
    /// diffusion solves inside a step.
    pub solve_tol: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            dt_init: 1e-3,
            dt_min: 1e-9,
            dt_max: 0.1,
            cfl_safety: 0.9,
            positivity_floor: 0.0,
            solve_tol: 1e-10,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return Err(Error::Config(format!(
                "need 0 < dt_min ≤ dt_init ≤ dt_max, got {} / {} / {}",
                self.dt_min, self.dt_init, self.dt_max
            )));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(Error::Config(format!(
                "cfl_safety must lie in (0, 1], got {}",
                self.cfl_safety
            )));
        }
        if !(self.positivity_floor >= 0.0 && self.positivity_floor.is_finite()) {
            return Err(Error::Config(format!(
                "positivity_floor must be a nonnegative real, got {}",
                self.positivity_floor
            )));
        }
        if !(self.solve_tol > 0.0 && self.solve_tol.is_finite()) {
            return Err(Error::Config(format!(
                "solve_tol must be positive, got {}",
                self.solve_tol
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Face velocities and upwind divergence
// ---------------------------------------------------------------------------

/// Per-face scalar data on the staggered grid. `x` holds (nx+1)·ny values
/// indexed iy·(nx+1) + fx; `y` holds nx·(ny+1) values indexed fy·nx + ix
/// (empty in 1D). Wall faces always carry zero.
#[derive(Debug, Clone)]
pub struct FaceField {
    nx: usize,
    ny: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FaceField {
    pub fn max_abs(&self) -> f64 {
        self.x
            .iter()
            .chain(&self.y)
            .fold(0.0_f64, |m, &v| m.max(v.abs()))
    }
}

/// Chemotactic face velocity χ·(∂v)_face / v_face with the arithmetic face
/// average of v. Wall faces carry zero (Neumann).
pub fn chemo_velocity(u: &ScalarField, v: &ScalarField, chi: f64) -> Result<FaceField> {
    assert_eq!(u.domain(), v.domain(), "u and v live on different grids");
    if !(chi >= 0.0 && chi.is_finite()) {
        return Err(Error::Config(format!(
            "sensitivity chi must be a nonnegative real, got {chi}"
        )));
    }
    let min_v = v.min();
    if !(min_v > 0.0) {
        return Err(Error::SingularSignal { min_v });
    }
    let d = v.domain();
    let [nx, ny] = d.cells();
    let h = d.h();
    let vv = v.values();
    let mut x = vec![0.0; (nx + 1) * ny];
    let mut y = vec![0.0; nx * (ny + 1)];
    for iy in 0..ny {
        for fx in 1..nx {
            let l = iy * nx + fx - 1;
            let r = iy * nx + fx;
            let grad = (vv[r] - vv[l]) / h;
            let vface = 0.5 * (vv[l] + vv[r]);
            x[iy * (nx + 1) + fx] = chi * grad / vface;
        }
    }
    for fy in 1..ny {
        for ix in 0..nx {
            let l = (fy - 1) * nx + ix;
            let r = fy * nx + ix;
            let grad = (vv[r] - vv[l]) / h;
            let vface = 0.5 * (vv[l] + vv[r]);
            y[fy * nx + ix] = chi * grad / vface;
        }
    }
    Ok(FaceField { nx, ny, x, y })
}

/// Divergence of the upwind advective flux vel·u_upwind, per cell.
/// The same face flux enters both neighbors with opposite signs, so the
/// weighted sum over all cells telescopes to zero.
pub fn upwind_divergence(u: &ScalarField, vel: &FaceField) -> Vec<f64> {
    let d = u.domain();
    let [nx, ny] = d.cells();
    assert_eq!((vel.nx, vel.ny), (nx, ny), "face field shape mismatch");
    let h = d.h();
    let uu = u.values();
    let mut div = vec![0.0; uu.len()];
    // Flux through an interior face: velocity ≥ 0 transports the left/lower
    // cell value, velocity < 0 the right/upper one.
    let flux = |w: f64, ul: f64, ur: f64| if w >= 0.0 { w * ul } else { w * ur };
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            let mut net = 0.0;
            if ix > 0 {
                let w = vel.x[iy * (nx + 1) + ix];
                net -= flux(w, uu[i - 1], uu[i]);
            }
            if ix + 1 < nx {
                let w = vel.x[iy * (nx + 1) + ix + 1];
                net += flux(w, uu[i], uu[i + 1]);
            }
            if iy > 0 {
                let w = vel.y[iy * nx + ix];
                net -= flux(w, uu[i - nx], uu[i]);
            }
            if iy + 1 < ny {
                let w = vel.y[(iy + 1) * nx + ix];
                net += flux(w, uu[i], uu[i + nx]);
            }
            div[i] = net / h;
        }
    }
    div
}

// ---------------------------------------------------------------------------
// Single step and step-size control
// ---------------------------------------------------------------------------

/// CFL-limited step size:
/// dt = cfl_safety · min(h/max|vel|, 1/(a_sup + 2·b_sup·max u), dt_max),
/// guaranteed ≥ dt_min or a stiffness error.
pub fn adaptive_dt(
    state: &State,
    coeffs: &Coefficients,
    v: &ScalarField,
    ctrl: &StepControl,
) -> Result<f64> {
    let vel = chemo_velocity(state.u(), v, coeffs.chi)?;
    let vmax = vel.max_abs();
    let h = state.u().domain().h();
    let advect = if vmax > 0.0 { h / vmax } else { f64::INFINITY };
    let react = 1.0 / (coeffs.a_sup + 2.0 * coeffs.b_sup * state.u().max());
    let dt = ctrl.cfl_safety * advect.min(react).min(ctrl.dt_max);
    if dt < ctrl.dt_min {
        return Err(Error::Stiffness {
            t: state.t,
            required: dt,
            dt_min: ctrl.dt_min,
        });
    }
    Ok(dt)
}

/// Explicit advection + reaction then implicit diffusion, given the already
/// solved signal. Shared by [`step`] and [`evolve`] (which solves v once per
/// step for both the diagnostics row and the advance).
fn advance(
    state: &State,
    v: &ScalarField,
    coeffs: &Coefficients,
    dt: f64,
    ctrl: &StepControl,
) -> Result<State> {
    let domain = state.u().domain().clone();
    let vel = chemo_velocity(state.u(), v, coeffs.chi)?;
    let div = upwind_divergence(state.u(), &vel);
    let a = eval_coeff(&coeffs.a, state.t, &domain);
    let b = eval_coeff(&coeffs.b, state.t, &domain);
    let u = state.u().values();
    let star: Vec<f64> = (0..u.len())
        .map(|i| u[i] + dt * (-div[i] + u[i] * (a.values()[i] - b.values()[i] * u[i])))
        .collect();
    let star = ScalarField::new(domain.clone(), star)
        .map_err(|_| Error::Numerical("explicit stage produced non-finite values".into()))?;
    let new_u = implicit_diffusion_solve(&domain, dt, &star, ctrl.solve_tol)?;
    let (cell, value) = new_u.argmin();
    if value <= ctrl.positivity_floor {
        return Err(Error::PositivityLoss {
            t: state.t + dt,
            cell,
            value,
        });
    }
    State::new(state.t + dt, new_u)
}

/// One full IMEX step of size dt (solves the signal internally).
pub fn step(
    state: &State,
    coeffs: &Coefficients,
    op: &EllipticOperator,
    dt: f64,
    ctrl: &StepControl,
) -> Result<State> {
    if !(dt > 0.0 && dt <= ctrl.dt_max) {
        return Err(Error::Config(format!(
            "step size must lie in (0, dt_max]; got dt = {dt}, dt_max = {}",
            ctrl.dt_max
        )));
    }
    let v = solve_v(op, state.u(), coeffs.nu, ctrl.solve_tol)?;
    advance(state, &v, coeffs, dt, ctrl)
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// Why a trajectory ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// A cell dropped to or below the positivity floor; mirrors the
    /// blow-up/zero-signal alternative of the continuum theory.
    PositivityLoss { t: f64, cell: usize, value: f64 },
    /// The CFL controller demanded a step below dt_min.
    Stiffness { t: f64, required: f64 },
    /// An elliptic or diffusion solve failed (stall or singular signal).
    SolverFailure { t: f64, message: String },
}

impl RunStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, RunStatus::Completed)
    }
}

/// Checkpointed solution path with its diagnostics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Checkpoints at strictly increasing times: the initial state, a
    /// geometrically thinning cadence (factor 1.2), every forced time, and
    /// the final state reached.
    pub states: Vec<State>,
    pub diagnostics: DiagnosticsSeries,
    pub status: RunStatus,
    /// True when zero-cell initial data was positivized by one implicit
    /// diffusion prestep of size dt_min.
    pub prestep_applied: bool,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory stores at least the initial state")
    }

    /// Checkpoint at exactly time t, if one was recorded.
    pub fn state_at(&self, t: f64) -> Option<&State> {
        let eps = 1e-9 * t.abs().max(1.0);
        self.states.iter().find(|s| (s.t - t).abs() <= eps)
    }
}

/// Map a mid-run failure to a terminal status; caller-side errors bubble.
fn status_from_error(t: f64, e: Error) -> Result<RunStatus> {
    match e {
        Error::PositivityLoss { t, cell, value } => Ok(RunStatus::PositivityLoss { t, cell, value }),
        Error::Stiffness { t, required, .. } => Ok(RunStatus::Stiffness { t, required }),
        Error::SingularSignal { .. } | Error::SolveStalled { .. } | Error::Numerical(_) => {
            Ok(RunStatus::SolverFailure {
                t,
                message: e.to_string(),
            })
        }
        other => Err(other),
    }
}

/// Advance u0 from time s to t_end, sampling the monitors at every accepted
/// step and landing exactly on every requested forced time.
///
/// Mid-run numerical failures truncate the trajectory and are reported in
/// `status`; only malformed inputs return Err. Initial data must be ≥ 0 with
/// positive mass; zero cells are positivized by one diffusion prestep of
/// size dt_min (flagged on the trajectory and in run manifests).
pub fn evolve(
    u0: &ScalarField,
    s: f64,
    t_end: f64,
    coeffs: &Coefficients,
    ctrl: &StepControl,
    monitors: &MonitorSet,
) -> Result<Trajectory> {
    let domain = u0.domain().clone();
    ctrl.validate()?;
    coeffs.validate(&domain)?;
    if !(t_end > s) {
        return Err(Error::Config(format!(
            "time span must be nontrivial: s = {s}, t_end = {t_end}"
        )));
    }
    if u0.min() < 0.0 {
        let (cell, value) = u0.argmin();
        return Err(Error::Config(format!(
            "initial density has a negative cell: u0[{cell}] = {value}"
        )));
    }
    if !(integrate(u0) > 0.0) {
        return Err(Error::Config("initial density must carry positive mass".into()));
    }

    let mut prestep_applied = false;
    let mut u = u0.clone();
    if u.min() <= 0.0 {
        u = implicit_diffusion_solve(&domain, ctrl.dt_min, &u, ctrl.solve_tol)?;
        prestep_applied = true;
        if u.min() <= 0.0 {
            return Err(Error::Numerical(
                "diffusion prestep failed to positivize the initial data".into(),
            ));
        }
    }

    let op = EllipticOperator::assemble(&domain, coeffs.mu)?;
    let mut state = State::new(s, u)?;
    let time_eps = 1e-12 * t_end.abs().max(1.0);

    // Forced landing times, strictly inside (s, t_end], ending with t_end.
    let mut forced: Vec<f64> = monitors
        .forced_times
        .iter()
        .copied()
        .filter(|&t| t > s + time_eps && t < t_end - time_eps)
        .collect();
    forced.push(t_end);
    forced.sort_by(|a, b| a.partial_cmp(b).expect("forced times are finite"));
    forced.dedup_by(|a, b| (*a - *b).abs() <= time_eps);
    let mut forced_idx = 0;

    let mut diagnostics = DiagnosticsSeries::new(monitors);
    let mut states = vec![state.clone()];
    let mut status = RunStatus::Completed;

    // Geometric checkpoint cadence.
    let mut cp_gap = ctrl.dt_init.max((t_end - s) / 4096.0);
    let mut next_cp = s + cp_gap;

    let step_cap = (((t_end - s) / ctrl.dt_min).ceil() as usize)
        .saturating_mul(2)
        .saturating_add(16);
    let mut steps = 0usize;

    loop {
        let v = match solve_v(&op, state.u(), coeffs.nu, ctrl.solve_tol) {
            Ok(v) => v,
            Err(e) => {
                status = status_from_error(state.t, e)?;
                break;
            }
        };
        diagnostics.rows.push(diag_row(state.u(), &v, state.t, monitors)?);
        if state.t >= t_end - time_eps {
            break;
        }
        if steps >= step_cap {
            status = RunStatus::SolverFailure {
                t: state.t,
                message: format!("step budget exhausted after {steps} steps"),
            };
            break;
        }
        let mut dt = match adaptive_dt(&state, coeffs, &v, ctrl) {
            Ok(dt) => dt,
            Err(e) => {
                status = status_from_error(state.t, e)?;
                break;
            }
        };
        // Clip onto the next forced time and land exactly.
        let target = forced[forced_idx];
        let landing = state.t + dt >= target - time_eps;
        if landing {
            dt = target - state.t;
        }
        state = match advance(&state, &v, coeffs, dt, ctrl) {
            Ok(mut next) => {
                if landing {
                    next.t = target;
                }
                next
            }
            Err(e) => {
                status = status_from_error(state.t, e)?;
                break;
            }
        };
        steps += 1;
        if landing {
            while forced_idx + 1 < forced.len() && forced[forced_idx] <= state.t + time_eps {
                forced_idx += 1;
            }
        }
        if landing || state.t >= next_cp {
            states.push(state.clone());
            while next_cp <= state.t {
                next_cp += cp_gap;
                cp_gap *= 1.2;
            }
        }
    }

    // Always close with the last reached state (truncation keeps progress).
    if let Some(last) = states.last() {
        if (last.t - state.t).abs() > time_eps {
            states.push(state.clone());
        }
    }
    Ok(Trajectory {
        states,
        diagnostics,
        status,
        prestep_applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::solve_v;
    use crate::model::Domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_coeffs() -> Coefficients {
        Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0)
    }

    fn tight_ctrl() -> StepControl {
        StepControl {
            solve_tol: 1e-12,
            ..StepControl::default()
        }
    }

    #[test]
    fn control_validation() {
        assert!(StepControl::default().validate().is_ok());
        let mut bad = StepControl::default();
        bad.dt_min = 1.0; // dt_min > dt_init
        assert!(bad.validate().is_err());
        let mut bad = StepControl::default();
        bad.cfl_safety = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = StepControl::default();
        bad.positivity_floor = -0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn velocity_zero_for_constant_v_and_zero_chi() {
        let d = Domain::interval(1.0, 32).unwrap();
        let u = ScalarField::constant(&d, 1.0);
        let v = ScalarField::constant(&d, 0.7);
        assert_eq!(chemo_velocity(&u, &v, 2.0).unwrap().max_abs(), 0.0);
        let v2 = ScalarField::from_fn(&d, |x| 1.0 + x[0]).unwrap();
        assert_eq!(chemo_velocity(&u, &v2, 0.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn velocity_linear_signal_two_cell_stencil() {
        // v = x: interior face gradient is exactly 1, so vel = χ / v_face
        // with v_face the face-center value of x.
        let d = Domain::interval(1.0, 8).unwrap();
        let u = ScalarField::constant(&d, 1.0);
        let v = ScalarField::from_fn(&d, |x| x[0]).unwrap();
        let vel = chemo_velocity(&u, &v, 1.0).unwrap();
        let h = d.h();
        for fxi in 1..8 {
            let face_x = fxi as f64 * h;
            let got = vel.x[fxi];
            assert!((got - 1.0 / face_x).abs() <= 1e-12, "face {fxi}");
        }
        // Walls carry zero.
        assert_eq!(vel.x[0], 0.0);
        assert_eq!(vel.x[8], 0.0);
    }

    #[test]
    fn velocity_rejects_nonpositive_signal() {
        let d = Domain::interval(1.0, 4).unwrap();
        let u = ScalarField::constant(&d, 1.0);
        let v = ScalarField::new(d, vec![0.5, 0.0, 0.5, 0.5]).unwrap();
        match chemo_velocity(&u, &v, 1.0) {
            Err(Error::SingularSignal { min_v }) => assert_eq!(min_v, 0.0),
            other => panic!("expected SingularSignal, got {other:?}"),
        }
    }

    #[test]
    fn upwind_divergence_telescopes() {
        let d = Domain::rectangle(1.0, 1.0, 12, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let u = ScalarField::new(
            d.clone(),
            (0..d.n_cells()).map(|_| rng.gen_range(0.2..3.0)).collect(),
        )
        .unwrap();
        let v = ScalarField::new(
            d.clone(),
            (0..d.n_cells()).map(|_| rng.gen_range(0.5..2.0)).collect(),
        )
        .unwrap();
        let vel = chemo_velocity(&u, &v, 1.7).unwrap();
        let div = upwind_divergence(&u, &vel);
        let total: f64 = crate::model::kahan_sum(div.iter().copied()) * d.cell_weight();
        assert!(total.abs() <= 1e-12, "divergence mass = {total:e}");
    }

    #[test]
    fn step_preserves_constant_equilibrium() {
        let d = Domain::interval(1.0, 64).unwrap();
        let coeffs = unit_coeffs();
        let op = EllipticOperator::assemble(&d, coeffs.mu).unwrap();
        let state = State::new(0.0, ScalarField::constant(&d, 1.0)).unwrap();
        let next = step(&state, &coeffs, &op, 0.05, &tight_ctrl()).unwrap();
        for &ui in next.u().values() {
            assert!((ui - 1.0).abs() <= 1e-13);
        }
    }

    #[test]
    fn step_matches_logistic_increment() {
        // χ = 0, u ≡ 0.5, a = b = 1: one Euler step of u' = u(1 − u).
        let d = Domain::interval(1.0, 32).unwrap();
        let mut coeffs = unit_coeffs();
        coeffs.chi = 1e-300; // chi must be positive for Coefficients, but the
                             // velocity is zero for constant u anyway
        let op = EllipticOperator::assemble(&d, coeffs.mu).unwrap();
        let state = State::new(0.0, ScalarField::constant(&d, 0.5)).unwrap();
        let dt = 1e-3;
        let next = step(&state, &coeffs, &op, dt, &tight_ctrl()).unwrap();
        let expect = 0.5 + dt * 0.25;
        for &ui in next.u().values() {
            assert!((ui - expect).abs() <= 1e-14);
        }
    }

    #[test]
    fn step_mass_identity() {
        let d = Domain::interval(1.0, 64).unwrap();
        let coeffs = Coefficients::constant(1.5, 1.0, 1.0, 1.2, 0.8);
        let op = EllipticOperator::assemble(&d, coeffs.mu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let u = ScalarField::new(
            d.clone(),
            (0..64).map(|_| rng.gen_range(0.3..2.0)).collect(),
        )
        .unwrap();
        let state = State::new(0.0, u).unwrap();
        let dt = 1e-3;
        let next = step(&state, &coeffs, &op, dt, &tight_ctrl()).unwrap();
        let mass0 = integrate(state.u());
        let mass1 = integrate(next.u());
        // Reaction budget at step start.
        let a = eval_coeff(&coeffs.a, 0.0, &d);
        let b = eval_coeff(&coeffs.b, 0.0, &d);
        let reaction = ScalarField::new(
            d.clone(),
            state
                .u()
                .values()
                .iter()
                .enumerate()
                .map(|(i, &ui)| a.values()[i] * ui - b.values()[i] * ui * ui)
                .collect(),
        )
        .unwrap();
        let budget = dt * integrate(&reaction);
        assert!(
            (mass1 - mass0 - budget).abs() <= 1e-10 * (1.0 + mass0),
            "mass defect {:e}",
            mass1 - mass0 - budget
        );
    }

    #[test]
    fn adaptive_dt_formula_and_guards() {
        let d = Domain::interval(1.0, 16).unwrap();
        let coeffs = unit_coeffs();
        let state = State::new(0.0, ScalarField::constant(&d, 1.0)).unwrap();
        let op = EllipticOperator::assemble(&d, coeffs.mu).unwrap();
        let v = solve_v(&op, state.u(), coeffs.nu, 1e-12).unwrap();
        // Constant state ⇒ zero velocity ⇒ reaction limit 1/3 binds.
        let mut ctrl = StepControl {
            cfl_safety: 0.9,
            dt_max: 10.0,
            ..StepControl::default()
        };
        let dt = adaptive_dt(&state, &coeffs, &v, &ctrl).unwrap();
        assert!((dt - 0.9 / 3.0).abs() <= 1e-12);
        // dt_max clamp (cfl_safety = 1 so the clamp is exactly dt_max).
        ctrl.cfl_safety = 1.0;
        ctrl.dt_max = 0.01;
        let dt = adaptive_dt(&state, &coeffs, &v, &ctrl).unwrap();
        assert_eq!(dt, 0.01);
        // Stiffness guard.
        ctrl.dt_max = 10.0;
        ctrl.dt_min = 0.4;
        ctrl.dt_init = 0.4;
        match adaptive_dt(&state, &coeffs, &v, &ctrl) {
            Err(Error::Stiffness { required, .. }) => assert!(required < 0.4),
            other => panic!("expected stiffness, got {other:?}"),
        }
    }

    #[test]
    fn evolve_holds_equilibrium() {
        let d = Domain::interval(1.0, 32).unwrap();
        let coeffs = unit_coeffs();
        let u0 = ScalarField::constant(&d, 1.0);
        let traj = evolve(&u0, 0.0, 10.0, &coeffs, &tight_ctrl(), &MonitorSet::default()).unwrap();
        assert!(traj.status.is_completed());
        for s in &traj.states {
            assert!(s.u().linf_diff(&u0) <= 1e-10);
        }
        assert!((traj.final_state().t - 10.0).abs() <= 1e-12);
    }

    #[test]
    fn evolve_matches_logistic_closed_form() {
        let d = Domain::interval(1.0, 16).unwrap();
        let mut coeffs = unit_coeffs();
        coeffs.chi = 1e-300;
        let u0 = ScalarField::constant(&d, 0.5);
        let ctrl = StepControl {
            dt_max: 1e-3,
            ..tight_ctrl()
        };
        let traj = evolve(&u0, 0.0, 5.0, &coeffs, &ctrl, &MonitorSet::default()).unwrap();
        assert!(traj.status.is_completed());
        let exact = 1.0 / (1.0 + (-5.0_f64).exp());
        let got = traj.final_state().u().values()[0];
        assert!((got - exact).abs() <= 1e-3, "{got} vs {exact}");
    }

    #[test]
    fn evolve_first_order_in_dt() {
        // Fixed-step runs against the logistic closed form at t = 2; halving
        // dt halves the error.
        let d = Domain::interval(1.0, 8).unwrap();
        let mut coeffs = unit_coeffs();
        coeffs.chi = 1e-300;
        let u0 = ScalarField::constant(&d, 0.5);
        let exact = 1.0 / (1.0 + (-2.0_f64).exp());
        let mut errors = Vec::new();
        for dt in [4e-3, 2e-3, 1e-3] {
            let ctrl = StepControl {
                dt_max: dt,
                ..tight_ctrl()
            };
            let traj = evolve(&u0, 0.0, 2.0, &coeffs, &ctrl, &MonitorSet::default()).unwrap();
            errors.push((traj.final_state().u().values()[0] - exact).abs());
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn evolve_rejects_bad_initial_data() {
        let d = Domain::interval(1.0, 8).unwrap();
        let coeffs = unit_coeffs();
        let negative = ScalarField::new(d.clone(), vec![1.0, -0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            evolve(&negative, 0.0, 1.0, &coeffs, &tight_ctrl(), &MonitorSet::default()),
            Err(Error::Config(_))
        ));
        let empty = ScalarField::constant(&d, 0.0);
        assert!(evolve(&empty, 0.0, 1.0, &coeffs, &tight_ctrl(), &MonitorSet::default()).is_err());
    }

    #[test]
    fn evolve_positivizes_zero_cells_with_prestep() {
        let d = Domain::interval(1.0, 16).unwrap();
        let coeffs = unit_coeffs();
        let mut vals = vec![0.0; 16];
        for (i, v) in vals.iter_mut().enumerate() {
            if i >= 4 && i < 12 {
                *v = 1.0;
            }
        }
        let u0 = ScalarField::new(d, vals).unwrap();
        // dt_min sets the prestep size; keep it large enough that the
        // diffusion tail clears round-off in every cell of this 16-cell grid.
        let ctrl = StepControl {
            dt_min: 1e-3,
            ..tight_ctrl()
        };
        let traj = evolve(&u0, 0.0, 1.0, &coeffs, &ctrl, &MonitorSet::default()).unwrap();
        assert!(traj.prestep_applied);
        assert!(traj.status.is_completed());
        assert!(traj.states[0].u().min() > 0.0);
        // The prestep conserves mass up to solver residual.
        assert!((integrate(traj.states[0].u()) - 0.5).abs() <= 1e-10);
    }

    #[test]
    fn evolve_truncates_on_stiffness() {
        let d = Domain::interval(1.0, 16).unwrap();
        let coeffs = unit_coeffs();
        let u0 = ScalarField::constant(&d, 1.0);
        // Reaction limit is cfl·(1/3) < dt_min = 0.4 ⇒ stiffness on step one.
        let ctrl = StepControl {
            dt_min: 0.4,
            dt_init: 0.4,
            dt_max: 1.0,
            ..StepControl::default()
        };
        let traj = evolve(&u0, 0.0, 5.0, &coeffs, &ctrl, &MonitorSet::default()).unwrap();
        match &traj.status {
            RunStatus::Stiffness { t, .. } => assert_eq!(*t, 0.0),
            other => panic!("expected stiffness status, got {other:?}"),
        }
        // Truncated but not discarded: the initial row exists.
        assert_eq!(traj.diagnostics.rows.len(), 1);
        assert_eq!(traj.states.len(), 1);
    }

    #[test]
    fn evolve_lands_on_forced_times() {
        let d = Domain::interval(1.0, 24).unwrap();
        let coeffs = unit_coeffs();
        let u0 = ScalarField::from_fn(&d, |x| 1.0 + 0.2 * (std::f64::consts::PI * x[0]).cos()).unwrap();
        let monitors = MonitorSet {
            forced_times: vec![0.37, 1.0, 0.37], // duplicates welcome
            ..MonitorSet::default()
        };
        let traj = evolve(&u0, 0.0, 2.0, &coeffs, &tight_ctrl(), &monitors).unwrap();
        assert!(traj.status.is_completed());
        assert!(traj.state_at(0.37).is_some());
        assert!(traj.state_at(1.0).is_some());
        assert!(traj.state_at(2.0).is_some());
        // Diagnostics times strictly increase.
        for w in traj.diagnostics.rows.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        // Checkpoint times strictly increase.
        for w in traj.states.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn evolve_mass_stays_under_logistic_ceiling() {
        // Carrying-capacity comparison: ∫u(t) ≤ max(∫u(τ), (a_sup/b_inf)|Ω|)
        // along the discrete flow.
        let d = Domain::interval(1.0, 48).unwrap();
        let coeffs = Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..3 {
            let u0 = ScalarField::new(
                d.clone(),
                (0..48).map(|_| rng.gen_range(0.2..4.0)).collect(),
            )
            .unwrap();
            let traj = evolve(&u0, 0.0, 8.0, &coeffs, &tight_ctrl(), &MonitorSet::default()).unwrap();
            assert!(traj.status.is_completed());
            let ceiling = integrate(&u0).max(1.0);
            for r in &traj.diagnostics.rows {
                assert!(r.mass <= ceiling * (1.0 + 1e-6), "t = {}: {}", r.t, r.mass);
            }
        }
    }
}
