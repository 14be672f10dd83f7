//! Threshold constants, envelope checks, and trajectory diagnostics.
//!
//! Everything here evaluates closed-form expressions in the model constants
//! (χ, μ, ν, coefficient bounds, |Ω|, δ₀ʰ) or scans diagnostic series
//! produced by the stepper. Naming follows the persistence theory for the
//! singular-sensitivity chemotaxis system: the damping gap γ = a_inf − a_χ,μ
//! controls the exponential envelope of the negative moment ∫u⁻¹, and the
//! absorbing rectangle is the box {mass ≤ M₀*, ∫u⁻¹ ≤ M₁*, ∫u^q ≤ M₂*}.

use serde::{Deserialize, Serialize};

use crate::elliptic::Delta0;
use crate::error::{Error, Result};
use crate::model::{integrate, integrate_pow, Coefficients, Domain, ScalarField};

/// Default relative slack for empirical envelope/absorption checks.
pub const ENVELOPE_SLACK: f64 = 0.05;

// ---------------------------------------------------------------------------
// Closed-form constants
// ---------------------------------------------------------------------------

/// The damping constant a_χ,μ = 2(χ + 2 − 2√(χ+1))·μ.
///
/// With β = χ + 2 − 2√(χ+1) this is the optimal choice closing the
/// differential inequality for ∫u⁻¹: (χ−β)²/4 = β, so a_χ,μ = 2βμ.
pub fn a_chi_mu(chi: f64, mu: f64) -> f64 {
    2.0 * (chi + 2.0 - 2.0 * (chi + 1.0).sqrt()) * mu
}

/// The classical smallness threshold: μχ²/4 for 0 < χ ≤ 2, μ(χ−1) for χ > 2.
pub fn classical_threshold(chi: f64, mu: f64) -> f64 {
    if chi <= 2.0 {
        mu * chi * chi / 4.0
    } else {
        mu * (chi - 1.0)
    }
}

/// Damping gap γ = a_inf − a_χ,μ. Positive iff the main assumption holds.
pub fn gamma(coeffs: &Coefficients) -> f64 {
    coeffs.a_inf - a_chi_mu(coeffs.chi, coeffs.mu)
}

/// Envelope offset M₁ = b_sup·|Ω|/γ (the p = 1 constant; the companion
/// M̃₁ term vanishes identically at p = 1). Requires γ > 0.
pub fn m1(coeffs: &Coefficients, domain: &Domain) -> Option<f64> {
    let g = gamma(coeffs);
    (g > 0.0).then(|| coeffs.b_sup * domain.measure() / g)
}

/// Carrying-capacity mass scale m* = max(mass_at_tau, (a_sup/b_inf)·|Ω|):
/// once the mass drops under the logistic ceiling it never exceeds m*.
pub fn m_star(mass_at_tau: f64, coeffs: &Coefficients, domain: &Domain) -> f64 {
    mass_at_tau.max(coeffs.a_sup / coeffs.b_inf * domain.measure())
}

/// Mass floor from the Hölder bound: once ∫u⁻¹ ≤ 2M₁ the mass is at least
/// |Ω|²/(2M₁) (p = 1 form).
pub fn mass_floor(m1: f64, domain: &Domain) -> f64 {
    domain.measure() * domain.measure() / (2.0 * m1)
}

// ---------------------------------------------------------------------------
// Threshold report
// ---------------------------------------------------------------------------

/// Outcome of the q-moment admissibility search.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QSearch {
    pub q: f64,
    pub eps: f64,
    /// Left-hand side at the admissible pair; strict inequality lhs < b_inf.
    pub lhs: f64,
}

/// The absorbing rectangle {u ≥ 0 : ∫u ≤ m0, ∫u⁻ᵖ ≤ m1, ∫u^q ≤ m2}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Rectangle {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
    pub p: f64,
    pub q: f64,
}

impl Rectangle {
    /// Strict membership. Fields with a non-positive cell are never members
    /// (the negative moment is undefined there).
    pub fn member(&self, u: &ScalarField) -> bool {
        self.member_with_slack(u, 0.0)
    }

    /// Membership with a relative slack on each face of the box.
    pub fn member_with_slack(&self, u: &ScalarField, slack: f64) -> bool {
        if u.min() <= 0.0 {
            return false;
        }
        let mass = integrate(u);
        let neg = match integrate_pow(u, -self.p) {
            Ok(v) => v,
            Err(_) => return false,
        };
        let high = match integrate_pow(u, self.q) {
            Ok(v) => v,
            Err(_) => return false,
        };
        mass <= self.m0 * (1.0 + slack)
            && neg <= self.m1 * (1.0 + slack)
            && high <= self.m2 * (1.0 + slack)
    }
}

/// How the high-moment radius M₂* was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum M2Source {
    Configured { value: f64 },
    /// max tail q-moment over a calibration ensemble, times 1.5.
    Estimated { value: f64, ensemble: usize },
}

impl M2Source {
    pub fn value(&self) -> f64 {
        match *self {
            M2Source::Configured { value } => value,
            M2Source::Estimated { value, .. } => value,
        }
    }
}

/// All threshold verdicts for one parameter point, with the constants that
/// produced them. Everything needed to audit a verdict by hand is embedded;
/// it round-trips through JSON so ledger consumers can read it back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub chi: f64,
    pub mu: f64,
    pub nu: f64,
    pub a_inf: f64,
    pub a_sup: f64,
    pub b_inf: f64,
    pub b_sup: f64,
    pub dim: usize,
    pub measure: f64,
    pub delta0: Delta0,
    /// Interpolation constant left opaque by the theory; config knob.
    pub c_star: f64,
    pub a_chi_mu: f64,
    pub gamma: f64,
    /// Negative moment exponent; the implementation fixes p = 1.
    pub p: f64,
    /// Sobolev-side exponent p_N = max{2, N}.
    pub p_n: u32,
    /// Classical threshold μχ²/4 (χ ≤ 2) or μ(χ−1) (χ > 2).
    pub classical_threshold: f64,
    pub classical_ok: bool,
    /// Main assumption a_inf > a_χ,μ and its margin γ.
    pub main_ok: bool,
    /// Logistic mass ceiling M₀* = (a_sup/b_inf)·|Ω|.
    pub m0_star: f64,
    /// Right-hand side of the sharpened condition with the Green floor δ₀.
    pub rhs_sharp: f64,
    pub sharp_ok: bool,
    pub margin_sharp: f64,
    /// Threshold the negative moment must cross to certify the entry time
    /// τ₀: b_sup·|Ω|·max{1, 1/χ}/γ. None when γ ≤ 0.
    pub neg_moment_threshold: Option<f64>,
    pub m1: Option<f64>,
    pub q_star: Option<QSearch>,
    pub rectangle: Option<Rectangle>,
    pub m2_source: Option<M2Source>,
}

/// Default grids for the q-moment admissibility search.
pub fn default_q_grid() -> Vec<f64> {
    (0..28).map(|k| 1.25 + 0.25 * k as f64).collect()
}

pub fn default_eps_grid() -> Vec<f64> {
    vec![1e-3, 1e-2, 0.1]
}

/// Left-hand side of the q-admissibility inequality
/// b_sup·|Ω|·(q−1)·{C*^(1/(q+1)) + ε}·max{χ, χ²} / (4·δ₀·γ) < b_inf.
pub fn q_lhs(coeffs: &Coefficients, domain: &Domain, delta0: f64, c_star: f64, q: f64, eps: f64) -> f64 {
    let g = gamma(coeffs);
    coeffs.b_sup * domain.measure() * (q - 1.0) * (c_star.powf(1.0 / (q + 1.0)) + eps)
        * coeffs.chi.max(coeffs.chi * coeffs.chi)
        / (4.0 * delta0 * g)
}

/// Smallest admissible (q, ε) on the given grids, smallest q first.
pub fn q_search(
    coeffs: &Coefficients,
    domain: &Domain,
    delta0: f64,
    c_star: f64,
    q_grid: &[f64],
    eps_grid: &[f64],
) -> Option<QSearch> {
    if gamma(coeffs) <= 0.0 {
        return None;
    }
    for &q in q_grid {
        if q <= 1.0 {
            continue;
        }
        for &eps in eps_grid {
            if eps <= 0.0 {
                continue;
            }
            let lhs = q_lhs(coeffs, domain, delta0, c_star, q, eps);
            if lhs < coeffs.b_inf {
                return Some(QSearch { q, eps, lhs });
            }
        }
    }
    None
}

/// Build the full threshold report for one parameter point.
///
/// `m2` supplies the high-moment radius of the rectangle (configured or
/// estimated elsewhere); pass None to omit the rectangle.
pub fn threshold_report(
    coeffs: &Coefficients,
    domain: &Domain,
    delta0: Delta0,
    c_star: f64,
    q_grid: &[f64],
    eps_grid: &[f64],
    m2: Option<M2Source>,
) -> Result<ThresholdReport> {
    coeffs.validate(domain)?;
    if !(c_star.is_finite() && c_star > 0.0) {
        return Err(Error::Config(format!(
            "interpolation constant c_star must be positive, got {c_star}"
        )));
    }
    let acm = a_chi_mu(coeffs.chi, coeffs.mu);
    let g = coeffs.a_inf - acm;
    let classical = classical_threshold(coeffs.chi, coeffs.mu);
    // Sharpened right-hand side with the discrete Green floor:
    // a_χ,μ + b_sup·|Ω|·(p_N − 1)·C*^(1/(p_N+1))·max{χ, χ²}/(4·b_inf·δ₀),
    // where p_N = max{2, N}.
    let p_n = 2.0_f64.max(domain.dim() as f64);
    let rhs_sharp = acm
        + coeffs.b_sup * domain.measure() * (p_n - 1.0) * c_star.powf(1.0 / (p_n + 1.0))
            * coeffs.chi.max(coeffs.chi * coeffs.chi)
            / (4.0 * coeffs.b_inf * delta0.value);
    let neg_moment_threshold = (g > 0.0)
        .then(|| coeffs.b_sup * domain.measure() * 1.0_f64.max(1.0 / coeffs.chi) / g);
    let m1_val = m1(coeffs, domain);
    let q_star = q_search(coeffs, domain, delta0.value, c_star, q_grid, eps_grid);
    let rectangle = match (m1_val, q_star, m2) {
        (Some(m1v), Some(qs), Some(src)) => Some(Rectangle {
            m0: coeffs.a_sup / coeffs.b_inf * domain.measure(),
            m1: m1v,
            m2: src.value(),
            p: 1.0,
            q: qs.q,
        }),
        _ => None,
    };
    Ok(ThresholdReport {
        chi: coeffs.chi,
        mu: coeffs.mu,
        nu: coeffs.nu,
        a_inf: coeffs.a_inf,
        a_sup: coeffs.a_sup,
        b_inf: coeffs.b_inf,
        b_sup: coeffs.b_sup,
        dim: domain.dim(),
        measure: domain.measure(),
        delta0,
        c_star,
        a_chi_mu: acm,
        gamma: g,
        p: 1.0,
        p_n: p_n as u32,
        classical_threshold: classical,
        classical_ok: coeffs.a_inf > classical,
        main_ok: g > 0.0,
        m0_star: coeffs.a_sup / coeffs.b_inf * domain.measure(),
        rhs_sharp,
        sharp_ok: coeffs.a_inf > rhs_sharp,
        margin_sharp: coeffs.a_inf - rhs_sharp,
        neg_moment_threshold,
        m1: m1_val,
        q_star,
        rectangle,
        m2_source: m2,
    })
}

// ---------------------------------------------------------------------------
// Diagnostics series
// ---------------------------------------------------------------------------

/// What the stepper samples at every accepted step.
#[derive(Debug, Clone)]
pub struct MonitorSet {
    /// Negative moment exponent; the theory default is p = 1.
    pub p: f64,
    /// High moment exponent (from the q-search, or a configured default).
    pub q: f64,
    /// Hölder exponent θ ∈ (0, 1) for the seminorm column.
    pub theta: f64,
    /// Cell-distance cap for the 2D Hölder scan (1D scans are exhaustive).
    pub holder_cap: usize,
    /// Rectangle for the membership column, when one is known.
    pub rectangle: Option<Rectangle>,
    /// Times the integrator must land on exactly.
    pub forced_times: Vec<f64>,
}

impl Default for MonitorSet {
    fn default() -> Self {
        MonitorSet {
            p: 1.0,
            q: 2.0,
            theta: 0.5,
            holder_cap: 16,
            rectangle: None,
            forced_times: Vec::new(),
        }
    }
}

/// One diagnostics row. Column order is part of the output contract.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiagRow {
    pub t: f64,
    pub mass: f64,
    pub neg_p_moment: f64,
    pub q_moment: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub holder_seminorm: f64,
    pub rectangle_member: bool,
}

/// Fixed CSV schema (version bumps if the column set ever changes).
pub const DIAG_COLUMNS: [&str; 9] = [
    "t",
    "mass",
    "neg_p_moment",
    "q_moment",
    "min_u",
    "max_u",
    "min_v",
    "holder_seminorm",
    "rectangle_member",
];

/// Diagnostic functionals sampled along one trajectory.
#[derive(Debug, Clone)]
pub struct DiagnosticsSeries {
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub rows: Vec<DiagRow>,
}

impl DiagnosticsSeries {
    pub fn new(monitors: &MonitorSet) -> Self {
        DiagnosticsSeries {
            p: monitors.p,
            q: monitors.q,
            theta: monitors.theta,
            rows: Vec::new(),
        }
    }

    /// Render the fixed-schema CSV (shortest-roundtrip float formatting,
    /// `\n` line endings, booleans as 0/1). Byte-stable for identical runs.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(&DIAG_COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.mass,
                r.neg_p_moment,
                r.q_moment,
                r.min_u,
                r.max_u,
                r.min_v,
                r.holder_seminorm,
                u8::from(r.rectangle_member),
            ));
        }
        out
    }
}

/// Build one diagnostics row from a strictly positive density and its signal.
pub fn diag_row(u: &ScalarField, v: &ScalarField, t: f64, monitors: &MonitorSet) -> Result<DiagRow> {
    let neg = integrate_pow(u, -monitors.p)?;
    let high = integrate_pow(u, monitors.q)?;
    Ok(DiagRow {
        t,
        mass: integrate(u),
        neg_p_moment: neg,
        q_moment: high,
        min_u: u.min(),
        max_u: u.max(),
        min_v: v.min(),
        holder_seminorm: holder_seminorm(u, monitors.theta, monitors.holder_cap),
        rectangle_member: monitors
            .rectangle
            .map(|r| r.member_with_slack(u, ENVELOPE_SLACK))
            .unwrap_or(false),
    })
}

/// Discrete Hölder seminorm sup |u(x) − u(y)|/|x−y|^θ over cell centers.
///
/// 1D scans every pair; 2D restricts to pairs within `cap` cells (Euclidean)
/// to stay near-linear in the cell count. The restricted scan is still an
/// honest lower bound of the full seminorm and equals it for fields whose
/// extreme increments are local.
pub fn holder_seminorm(u: &ScalarField, theta: f64, cap: usize) -> f64 {
    let d = u.domain();
    let h = d.h();
    let vals = u.values();
    let mut best = 0.0_f64;
    if d.dim() == 1 {
        let n = vals.len();
        for i in 0..n {
            for j in i + 1..n {
                let dist = (j - i) as f64 * h;
                let s = (vals[j] - vals[i]).abs() / dist.powf(theta);
                best = best.max(s);
            }
        }
    } else {
        let [nx, ny] = d.cells();
        let cap = cap.max(1) as isize;
        // Half-disc of offsets so each unordered pair is visited once.
        let mut offsets = Vec::new();
        for dy in 0..=cap {
            let dx_lo = if dy == 0 { 1 } else { -cap };
            for dx in dx_lo..=cap {
                if dx * dx + dy * dy <= cap * cap {
                    offsets.push((dx, dy, h * ((dx * dx + dy * dy) as f64).sqrt()));
                }
            }
        }
        for iy in 0..ny as isize {
            for ix in 0..nx as isize {
                let i = (iy * nx as isize + ix) as usize;
                for &(dx, dy, dist) in &offsets {
                    let jx = ix + dx;
                    let jy = iy + dy;
                    if jx < 0 || jx >= nx as isize || jy >= ny as isize {
                        continue;
                    }
                    let j = (jy * nx as isize + jx) as usize;
                    let s = (vals[j] - vals[i]).abs() / dist.powf(theta);
                    best = best.max(s);
                }
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Series scans: entry time, envelopes, floors, row invariants
// ---------------------------------------------------------------------------

/// First time the negative moment crosses its certification threshold:
/// returns (t, t − s). None if the series never crosses.
pub fn entry_time(series: &DiagnosticsSeries, threshold: f64) -> Option<(f64, f64)> {
    let s = series.rows.first()?.t;
    series
        .rows
        .iter()
        .find(|r| r.neg_p_moment <= threshold)
        .map(|r| (r.t, r.t - s))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnvelopeViolation {
    pub t: f64,
    pub lhs: f64,
    pub bound: f64,
}

/// Result of checking the exponential envelope of ∫u⁻¹ along a series.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeCheck {
    /// Exponential-sum form: ∫u⁻¹(t) ≤ e^(−γ(t−τ))·∫u⁻¹(τ) + M₁.
    pub exp_ok: bool,
    /// Max form: ∫u⁻¹(t) ≤ max{∫u⁻¹(τ), M₁}.
    pub max_ok: bool,
    /// Tail form: ∫u⁻¹ ≤ M₁ on the trailing fraction of the series.
    pub tail_ok: bool,
    pub tail_max: f64,
    pub m1: f64,
    pub gamma: f64,
    pub slack: f64,
    /// Worst offenders against the exponential form, capped at 16.
    pub violations: Vec<EnvelopeViolation>,
}

/// Check both envelope forms from the row at `tau_index` onward, with a
/// relative slack, and the M₁ limit bound over the trailing `tail_fraction`.
pub fn envelope_neg_p(
    series: &DiagnosticsSeries,
    gamma: f64,
    m1: f64,
    tau_index: usize,
    tail_fraction: f64,
    slack: f64,
) -> Result<EnvelopeCheck> {
    if series.rows.len() <= tau_index {
        return Err(Error::Config(format!(
            "envelope anchor index {tau_index} outside a series of {} rows",
            series.rows.len()
        )));
    }
    let tau_row = &series.rows[tau_index];
    let (tau_t, tau_neg) = (tau_row.t, tau_row.neg_p_moment);
    let mut exp_ok = true;
    let mut max_ok = true;
    let mut violations = Vec::new();
    for r in &series.rows[tau_index..] {
        let exp_bound = (-gamma * (r.t - tau_t)).exp() * tau_neg + m1;
        if r.neg_p_moment > exp_bound * (1.0 + slack) {
            exp_ok = false;
            if violations.len() < 16 {
                violations.push(EnvelopeViolation {
                    t: r.t,
                    lhs: r.neg_p_moment,
                    bound: exp_bound,
                });
            }
        }
        if r.neg_p_moment > tau_neg.max(m1) * (1.0 + slack) {
            max_ok = false;
        }
    }
    let tail_start = tail_index(series.rows.len(), tail_fraction);
    let tail_max = series.rows[tail_start..]
        .iter()
        .map(|r| r.neg_p_moment)
        .fold(0.0_f64, f64::max);
    Ok(EnvelopeCheck {
        exp_ok,
        max_ok,
        tail_ok: tail_max <= m1 * (1.0 + slack),
        tail_max,
        m1,
        gamma,
        slack,
        violations,
    })
}

fn tail_index(len: usize, tail_fraction: f64) -> usize {
    let f = tail_fraction.clamp(0.0, 1.0);
    let keep = ((len as f64) * f).ceil() as usize;
    len.saturating_sub(keep.max(1))
}

/// Uniform floors over the trailing fraction of a series.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PersistenceFloors {
    pub from_t: f64,
    pub tail_rows: usize,
    pub min_u: f64,
    pub min_v: f64,
    pub min_mass: f64,
}

pub fn persistence_floor(series: &DiagnosticsSeries, tail_fraction: f64) -> Result<PersistenceFloors> {
    if series.rows.is_empty() {
        return Err(Error::Config("persistence floor of an empty series".into()));
    }
    let start = tail_index(series.rows.len(), tail_fraction);
    let tail = &series.rows[start..];
    Ok(PersistenceFloors {
        from_t: tail[0].t,
        tail_rows: tail.len(),
        min_u: tail.iter().map(|r| r.min_u).fold(f64::INFINITY, f64::min),
        min_v: tail.iter().map(|r| r.min_v).fold(f64::INFINITY, f64::min),
        min_mass: tail.iter().map(|r| r.mass).fold(f64::INFINITY, f64::min),
    })
}

/// Per-row structural invariants every trajectory must satisfy:
/// mass ≥ |Ω|^((p+1)/p)·(∫u⁻ᵖ)^(−1/p) − tol (discrete Hölder) and
/// min_v ≥ δ₀ʰ·mass − tol (Green kernel floor).
#[derive(Debug, Clone, Serialize)]
pub struct RowInvariantReport {
    pub rows: usize,
    pub holder_ok: bool,
    pub green_ok: bool,
    /// Most negative margin seen for each invariant (≥ −tol when ok).
    pub worst_holder_margin: f64,
    pub worst_green_margin: f64,
}

pub fn verify_rows(series: &DiagnosticsSeries, measure: f64, delta0: f64, tol: f64) -> RowInvariantReport {
    let p = series.p;
    let mut worst_holder = f64::INFINITY;
    let mut worst_green = f64::INFINITY;
    for r in &series.rows {
        let holder_floor = measure.powf((p + 1.0) / p) * r.neg_p_moment.powf(-1.0 / p);
        worst_holder = worst_holder.min(r.mass - holder_floor);
        worst_green = worst_green.min(r.min_v - delta0 * r.mass);
    }
    RowInvariantReport {
        rows: series.rows.len(),
        holder_ok: worst_holder >= -tol,
        green_ok: worst_green >= -tol,
        worst_holder_margin: worst_holder,
        worst_green_margin: worst_green,
    }
}
