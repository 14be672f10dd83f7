//! Browser bindings: three JSON-in/JSON-out operations over the core crate.
//! The `*_json` functions are plain Rust (unit-tested on the host); the
//! `#[wasm_bindgen]` exports are thin wrappers that stringify errors.

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;
use wasm_bindgen::JsValue;

use chemotax::analysis::{default_eps_grid, default_q_grid, threshold_report, MonitorSet};
use chemotax::elliptic::{delta0_h, EllipticOperator, DELTA0_EXHAUSTIVE_CAP};
use chemotax::entire::fixed_point_periodic;
use chemotax::error::{Error, Result};
use chemotax::model::{CoeffExpr, Coefficients, Domain, ScalarField};
use chemotax::stepper::{evolve, StepControl};

fn interval(cells: u32) -> Result<Domain> {
    if !(8..=512).contains(&cells) {
        return Err(Error::Config(format!(
            "cells must lie in [8, 512] for the browser demo, got {cells}"
        )));
    }
    Domain::interval(1.0, cells as usize)
}

/// Threshold report for constant coefficients on the unit interval, with the
/// certified grid kernel floor and C* = 1.
pub fn thresholds_json(chi: f64, mu: f64, nu: f64, a: f64, b: f64, cells: u32) -> Result<String> {
    let domain = interval(cells)?;
    let coeffs = Coefficients::constant(chi, mu, nu, a, b);
    let op = EllipticOperator::assemble(&domain, mu)?;
    let d0 = delta0_h(&op, nu, DELTA0_EXHAUSTIVE_CAP)?;
    let report = threshold_report(
        &coeffs,
        &domain,
        d0,
        1.0,
        &default_q_grid(),
        &default_eps_grid(),
        None,
    )?;
    serde_json::to_string(&report).map_err(|e| Error::Numerical(e.to_string()))
}

#[derive(Serialize)]
struct Frame {
    t: f64,
    u: Vec<f64>,
}

#[derive(Serialize)]
struct EnvelopePoint {
    t: f64,
    observed: f64,
    bound: f64,
}

#[derive(Serialize)]
struct SimulationResponse {
    x: Vec<f64>,
    frames: Vec<Frame>,
    /// Negative-moment track with its exponential bound; empty when γ ≤ 0.
    envelope: Vec<EnvelopePoint>,
    status: String,
    mass_first: f64,
    mass_last: f64,
}

/// Integrate from u₀(x) = center·(1 + bump·cos(πx)) and return evenly spaced
/// frames plus the negative-moment envelope track.
pub fn simulate_json(
    chi: f64,
    mu: f64,
    nu: f64,
    a: f64,
    b: f64,
    cells: u32,
    center: f64,
    bump: f64,
    t_end: f64,
    frames: u32,
) -> Result<String> {
    let domain = interval(cells)?;
    if !(center > 0.0 && bump.abs() < 1.0) {
        return Err(Error::Config(
            "initial profile needs center > 0 and |bump| < 1".into(),
        ));
    }
    if !(t_end > 0.0 && t_end <= 200.0 && (2..=64).contains(&frames)) {
        return Err(Error::Config(
            "t_end must lie in (0, 200] and frames in [2, 64]".into(),
        ));
    }
    let coeffs = Coefficients::constant(chi, mu, nu, a, b);
    let u0 = ScalarField::from_fn(&domain, |x| {
        center * (1.0 + bump * (std::f64::consts::PI * x[0]).cos())
    })?;
    let frame_times: Vec<f64> = (0..frames)
        .map(|k| t_end * (k + 1) as f64 / frames as f64)
        .collect();
    let monitors = MonitorSet {
        forced_times: frame_times.clone(),
        ..MonitorSet::default()
    };
    let traj = evolve(&u0, 0.0, t_end, &coeffs, &StepControl::default(), &monitors)?;

    let x = (0..domain.n_cells())
        .map(|i| (i as f64 + 0.5) * domain.h())
        .collect();
    let mut out_frames = vec![Frame {
        t: 0.0,
        u: u0.values().to_vec(),
    }];
    for &t in &frame_times {
        if let Some(state) = traj.state_at(t) {
            out_frames.push(Frame {
                t: state.t,
                u: state.u().values().to_vec(),
            });
        }
    }

    let op = EllipticOperator::assemble(&domain, mu)?;
    let d0 = delta0_h(&op, nu, DELTA0_EXHAUSTIVE_CAP)?;
    let report = threshold_report(
        &coeffs,
        &domain,
        d0,
        1.0,
        &default_q_grid(),
        &default_eps_grid(),
        None,
    )?;
    let rows = &traj.diagnostics.rows;
    let envelope = match report.m1 {
        Some(m1) if !rows.is_empty() => {
            let neg0 = rows[0].neg_p_moment;
            rows.iter()
                .map(|r| EnvelopePoint {
                    t: r.t,
                    observed: r.neg_p_moment,
                    bound: (-report.gamma * r.t).exp() * neg0 + m1,
                })
                .collect()
        }
        _ => Vec::new(),
    };
    let status = serde_json::to_value(&traj.status)
        .map(|v| v["kind"].as_str().unwrap_or("completed").to_string())
        .unwrap_or_else(|_| "completed".into());
    let response = SimulationResponse {
        x,
        frames: out_frames,
        envelope,
        status,
        mass_first: rows.first().map(|r| r.mass).unwrap_or(0.0),
        mass_last: rows.last().map(|r| r.mass).unwrap_or(0.0),
    };
    serde_json::to_string(&response).map_err(|e| Error::Numerical(e.to_string()))
}

#[derive(Serialize)]
struct OrbitResponse {
    converged: bool,
    residual: f64,
    iterations: usize,
    orbit_mismatch: Option<f64>,
    x: Vec<f64>,
    /// Orbit sampled at eighth-period times over one period.
    slices: Vec<Frame>,
}

/// Poincaré fixed point under a(t) = a_mean + a_amp·sin(2πt/T), started from
/// the spatially flat state at a_mean/b.
pub fn periodic_orbit_json(
    chi: f64,
    mu: f64,
    nu: f64,
    a_mean: f64,
    a_amp: f64,
    b: f64,
    t_period: f64,
    cells: u32,
    tol: f64,
    max_iter: u32,
) -> Result<String> {
    let domain = interval(cells)?;
    if !(a_amp.abs() < a_mean) {
        return Err(Error::Config("need |a_amp| < a_mean so inf a > 0".into()));
    }
    if !(0.0..=120.0).contains(&(max_iter as f64)) {
        return Err(Error::Config("max_iter must be at most 120".into()));
    }
    let mut coeffs = Coefficients::constant(chi, mu, nu, a_mean, b);
    coeffs.a = CoeffExpr::sinusoid(a_mean, a_amp, t_period);
    coeffs.a_inf = a_mean - a_amp.abs();
    coeffs.a_sup = a_mean + a_amp.abs();
    let init = ScalarField::constant(&domain, a_mean / b);
    let ctrl = StepControl::default();
    let res = fixed_point_periodic(
        &coeffs,
        t_period,
        &init,
        1.0,
        tol,
        max_iter as usize,
        &ctrl,
        None,
    )?;

    // One period of the orbit through the returned state.
    let slice_times: Vec<f64> = (1..=8).map(|k| k as f64 * t_period / 8.0).collect();
    let monitors = MonitorSet {
        forced_times: slice_times.clone(),
        ..MonitorSet::default()
    };
    let traj = evolve(&res.u_star, 0.0, t_period, &coeffs, &ctrl, &monitors)?;
    let mut slices = vec![Frame {
        t: 0.0,
        u: res.u_star.values().to_vec(),
    }];
    for &t in &slice_times {
        if let Some(state) = traj.state_at(t) {
            slices.push(Frame {
                t: state.t,
                u: state.u().values().to_vec(),
            });
        }
    }
    let response = OrbitResponse {
        converged: res.converged,
        residual: res.residual,
        iterations: res.iterations,
        orbit_mismatch: res.orbit_mismatch,
        x: (0..domain.n_cells())
            .map(|i| (i as f64 + 0.5) * domain.h())
            .collect(),
        slices,
    };
    serde_json::to_string(&response).map_err(|e| Error::Numerical(e.to_string()))
}

fn to_js<T>(r: Result<T>) -> std::result::Result<T, JsValue> {
    r.map_err(|e| JsValue::from(e.to_string()))
}

#[wasm_bindgen]
pub fn thresholds(
    chi: f64,
    mu: f64,
    nu: f64,
    a: f64,
    b: f64,
    cells: u32,
) -> std::result::Result<String, JsValue> {
    to_js(thresholds_json(chi, mu, nu, a, b, cells))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    chi: f64,
    mu: f64,
    nu: f64,
    a: f64,
    b: f64,
    cells: u32,
    center: f64,
    bump: f64,
    t_end: f64,
    frames: u32,
) -> std::result::Result<String, JsValue> {
    to_js(simulate_json(chi, mu, nu, a, b, cells, center, bump, t_end, frames))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn periodic_orbit(
    chi: f64,
    mu: f64,
    nu: f64,
    a_mean: f64,
    a_amp: f64,
    b: f64,
    t_period: f64,
    cells: u32,
    tol: f64,
    max_iter: u32,
) -> std::result::Result<String, JsValue> {
    to_js(periodic_orbit_json(
        chi, mu, nu, a_mean, a_amp, b, t_period, cells, tol, max_iter,
    ))
}
