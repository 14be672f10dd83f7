//! Spatial grid, coefficient descriptors, and cell-average fields.
//!
//! The domain is an axis-aligned interval (1D) or rectangle (2D) split into
//! uniform square cells. Fields are vectors of cell averages; coefficients
//! are closed-form descriptors evaluated at cell centers (the midpoint rule,
//! second-order consistent with cell averages). All quadrature runs over the
//! same uniform weights, so discrete Hölder-type inequalities hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for "these two grid spacings are the same length".
const CELL_MATCH_TOL: f64 = 1e-12;

/// Compensated (Kahan) sum. Cell counts stay modest (≤ ~10^6) so this keeps
/// quadrature exact to a few ulps regardless of ordering.
pub(crate) fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

// ---------------------------------------------------------------------------
// Domain
// ---------------------------------------------------------------------------

/// Uniform cell-average grid on an interval or rectangle with Neumann walls.
///
/// 2D grids must have square cells: the stencils, CFL bound, and quadrature
/// all assume a single spacing `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
    lengths: [f64; 2],
    cells: [usize; 2],
    h: f64,
    measure: f64,
}

impl Domain {
    /// 1D domain (0, length) with `n` cells.
    pub fn interval(length: f64, n: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::Config(format!(
                "domain length must be positive and finite, got {length}"
            )));
        }
        if n == 0 {
            return Err(Error::Config("domain needs at least one cell".into()));
        }
        Ok(Domain {
            dim: 1,
            lengths: [length, 1.0],
            cells: [n, 1],
            h: length / n as f64,
            measure: length,
        })
    }

    /// 2D domain (0, lx) x (0, ly) with `nx` x `ny` cells. Cells must come
    /// out square: lx/nx and ly/ny have to agree to a relative 1e-12.
    pub fn rectangle(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Self> {
        for (l, n) in [(lx, nx), (ly, ny)] {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!(
                    "domain side must be positive and finite, got {l}"
                )));
            }
            if n == 0 {
                return Err(Error::Config("domain needs at least one cell per axis".into()));
            }
        }
        let hx = lx / nx as f64;
        let hy = ly / ny as f64;
        if (hx - hy).abs() > CELL_MATCH_TOL * hx.max(hy) {
            return Err(Error::Config(format!(
                "cells must be square: lx/nx = {hx} but ly/ny = {hy}"
            )));
        }
        Ok(Domain {
            dim: 2,
            lengths: [lx, ly],
            cells: [nx, ny],
            h: hx,
            measure: lx * ly,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Side lengths; `lengths()[1]` is meaningless in 1D.
    pub fn lengths(&self) -> [f64; 2] {
        self.lengths
    }

    /// Cell counts per axis; `cells()[1] == 1` in 1D.
    pub fn cells(&self) -> [usize; 2] {
        self.cells
    }

    /// Total number of cells.
    pub fn n_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    /// Uniform grid spacing.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Lebesgue measure |Ω| (product of side lengths, exact).
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Quadrature weight of a single cell, h^dim.
    pub fn cell_weight(&self) -> f64 {
        match self.dim {
            1 => self.h,
            _ => self.h * self.h,
        }
    }

    /// Flattened index of cell (ix, iy); iy must be 0 in 1D.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.cells[0] && iy < self.cells[1]);
        iy * self.cells[0] + ix
    }

    /// Cell-center coordinates of the flattened cell `idx`.
    pub fn center(&self, idx: usize) -> [f64; 2] {
        let ix = idx % self.cells[0];
        let iy = idx / self.cells[0];
        [
            (ix as f64 + 0.5) * self.h,
            (iy as f64 + 0.5) * self.h,
        ]
    }
}

// ---------------------------------------------------------------------------
// Coefficient descriptors
// ---------------------------------------------------------------------------

/// One harmonic of a truncated Fourier series in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    /// Harmonic index k ≥ 1 (frequency 2πk/period).
    pub harmonic: u32,
    #[serde(default)]
    pub cos_amp: f64,
    #[serde(default)]
    pub sin_amp: f64,
}

/// Truncated Fourier series: mean + Σ_k cos_amp·cos(2πkt/T) + sin_amp·sin(2πkt/T).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierSeries {
    pub mean: f64,
    /// Fundamental period T; must be positive when `terms` is non-empty.
    #[serde(default)]
    pub period: f64,
    #[serde(default)]
    pub terms: Vec<FourierTerm>,
}

impl FourierSeries {
    pub fn constant(mean: f64) -> Self {
        FourierSeries {
            mean,
            period: 0.0,
            terms: Vec::new(),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.mean;
        for term in &self.terms {
            let w = 2.0 * std::f64::consts::PI * term.harmonic as f64 * t / self.period;
            v += term.cos_amp * w.cos() + term.sin_amp * w.sin();
        }
        v
    }

    fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() {
            return Err(Error::Config("fourier mean must be finite".into()));
        }
        if !self.terms.is_empty() && !(self.period.is_finite() && self.period > 0.0) {
            return Err(Error::Config(format!(
                "fourier series with harmonics needs a positive period, got {}",
                self.period
            )));
        }
        for term in &self.terms {
            if term.harmonic == 0 {
                return Err(Error::Config(
                    "fourier harmonic index must be ≥ 1 (use `mean` for the constant part)".into(),
                ));
            }
            if !(term.cos_amp.is_finite() && term.sin_amp.is_finite()) {
                return Err(Error::Config("fourier amplitudes must be finite".into()));
            }
        }
        Ok(())
    }
}

/// One Neumann-compatible cosine mode amp·cos(mode·π·x_axis/L_axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineMode {
    pub axis: usize,
    pub mode: u32,
    pub amp: f64,
}

/// Low-order spatial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceProfile {
    Constant { value: f64 },
    /// base + Σ amp·cos(mode·π·x_axis/L_axis); compatible with Neumann walls.
    CosineModes { base: f64, modes: Vec<CosineMode> },
    /// Σ coeffs[i]·x_axis^i, for analytic cross-checks.
    Polynomial { axis: usize, coeffs: Vec<f64> },
}

impl SpaceProfile {
    pub fn eval(&self, x: [f64; 2], domain: &Domain) -> f64 {
        match self {
            SpaceProfile::Constant { value } => *value,
            SpaceProfile::CosineModes { base, modes } => {
                let mut v = *base;
                for m in modes {
                    let l = domain.lengths()[m.axis];
                    v += m.amp * (m.mode as f64 * std::f64::consts::PI * x[m.axis] / l).cos();
                }
                v
            }
            SpaceProfile::Polynomial { axis, coeffs } => {
                // Horner on the requested coordinate.
                let xi = x[*axis];
                coeffs.iter().rev().fold(0.0, |acc, c| acc * xi + c)
            }
        }
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        match self {
            SpaceProfile::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Config("space profile constant must be finite".into()));
                }
            }
            SpaceProfile::CosineModes { base, modes } => {
                if !base.is_finite() {
                    return Err(Error::Config("space profile base must be finite".into()));
                }
                for m in modes {
                    if m.axis >= domain.dim() {
                        return Err(Error::Config(format!(
                            "cosine mode axis {} out of range for a {}D domain",
                            m.axis,
                            domain.dim()
                        )));
                    }
                    if !m.amp.is_finite() {
                        return Err(Error::Config("cosine mode amplitude must be finite".into()));
                    }
                }
            }
            SpaceProfile::Polynomial { axis, coeffs } => {
                if *axis >= domain.dim() {
                    return Err(Error::Config(format!(
                        "polynomial axis {} out of range for a {}D domain",
                        axis,
                        domain.dim()
                    )));
                }
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config("polynomial coefficients must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Time interpolation rule for tabulated coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    #[default]
    Linear,
    Nearest,
}

/// Space-time coefficient descriptor. Evaluation is deterministic and
/// closed-form; anything data-driven goes through `Tabulated`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoeffExpr {
    Constant {
        value: f64,
    },
    /// time(t) · space(x).
    Separable {
        time: FourierSeries,
        space: SpaceProfile,
    },
    /// Per-cell samples at increasing times, interpolated in t and held
    /// constant outside the sampled range.
    Tabulated {
        times: Vec<f64>,
        /// `values[j]` is the full cell vector at `times[j]`.
        values: Vec<Vec<f64>>,
        #[serde(default)]
        interp: Interp,
    },
}

impl CoeffExpr {
    pub fn constant(value: f64) -> Self {
        CoeffExpr::Constant { value }
    }

    /// Shortcut for the purely time-periodic profile mean + amp·sin(2πt/T).
    pub fn sinusoid(mean: f64, sin_amp: f64, period: f64) -> Self {
        CoeffExpr::Separable {
            time: FourierSeries {
                mean,
                period,
                terms: vec![FourierTerm {
                    harmonic: 1,
                    cos_amp: 0.0,
                    sin_amp,
                }],
            },
            space: SpaceProfile::Constant { value: 1.0 },
        }
    }

    /// Structural validation against a target domain. Cheap; run it once at
    /// config time so later `eval` calls cannot fail.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        match self {
            CoeffExpr::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::Config("constant coefficient must be finite".into()));
                }
            }
            CoeffExpr::Separable { time, space } => {
                time.validate()?;
                space.validate(domain)?;
            }
            CoeffExpr::Tabulated {
                times,
                values,
                interp: _,
            } => {
                if times.is_empty() {
                    return Err(Error::Config("tabulated coefficient needs at least one time".into()));
                }
                if times.len() != values.len() {
                    return Err(Error::Config(format!(
                        "tabulated coefficient has {} times but {} value rows",
                        times.len(),
                        values.len()
                    )));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::Config(
                        "tabulated coefficient times must be strictly increasing".into(),
                    ));
                }
                for (j, row) in values.iter().enumerate() {
                    if row.len() != domain.n_cells() {
                        return Err(Error::Config(format!(
                            "tabulated row {} has {} cells, domain has {}",
                            j,
                            row.len(),
                            domain.n_cells()
                        )));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Config(format!("tabulated row {j} has non-finite samples")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fundamental time period declared by the descriptor, if any.
    pub fn period(&self) -> Option<f64> {
        match self {
            CoeffExpr::Separable { time, .. } if !time.terms.is_empty() => Some(time.period),
            _ => None,
        }
    }

    /// Point evaluation at time t and position x.
    fn eval_at(&self, t: f64, x: [f64; 2], cell: usize, domain: &Domain) -> f64 {
        match self {
            CoeffExpr::Constant { value } => *value,
            CoeffExpr::Separable { time, space } => time.eval(t) * space.eval(x, domain),
            CoeffExpr::Tabulated {
                times,
                values,
                interp,
            } => {
                // Clamp outside the tabulated range.
                if t <= times[0] {
                    return values[0][cell];
                }
                if t >= *times.last().unwrap() {
                    return values.last().unwrap()[cell];
                }
                let j = times.partition_point(|&tj| tj <= t) - 1;
                match interp {
                    Interp::Nearest => {
                        if t - times[j] <= times[j + 1] - t {
                            values[j][cell]
                        } else {
                            values[j + 1][cell]
                        }
                    }
                    Interp::Linear => {
                        let w = (t - times[j]) / (times[j + 1] - times[j]);
                        (1.0 - w) * values[j][cell] + w * values[j + 1][cell]
                    }
                }
            }
        }
    }
}

/// Evaluate a coefficient descriptor on the grid at time t.
///
/// Samples at cell centers; callers must have run `expr.validate(domain)`
/// (the harness does) — malformed descriptors surface there, not here.
pub fn eval_coeff(expr: &CoeffExpr, t: f64, domain: &Domain) -> ScalarField {
    let values = (0..domain.n_cells())
        .map(|i| expr.eval_at(t, domain.center(i), i, domain))
        .collect();
    ScalarField {
        domain: domain.clone(),
        values,
    }
}

// ---------------------------------------------------------------------------
// Coefficient bundle and audit
// ---------------------------------------------------------------------------

/// Model coefficients: sensitivity χ, signal decay μ, signal production ν,
/// logistic profiles a and b with their declared uniform bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub chi: f64,
    pub mu: f64,
    pub nu: f64,
    pub a: CoeffExpr,
    pub b: CoeffExpr,
    /// Declared bounds: a_inf ≤ a(t,x) ≤ a_sup, b_inf ≤ b(t,x) ≤ b_sup.
    pub a_inf: f64,
    pub a_sup: f64,
    pub b_inf: f64,
    pub b_sup: f64,
}

impl Coefficients {
    /// Constant-in-space-and-time coefficients with tight bounds.
    pub fn constant(chi: f64, mu: f64, nu: f64, a: f64, b: f64) -> Self {
        Coefficients {
            chi,
            mu,
            nu,
            a: CoeffExpr::constant(a),
            b: CoeffExpr::constant(b),
            a_inf: a,
            a_sup: a,
            b_inf: b,
            b_sup: b,
        }
    }

    /// Structural checks: positive χ, μ, ν and ordered positive bounds.
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        for (name, v) in [("chi", self.chi), ("mu", self.mu), ("nu", self.nu)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, lo, hi) in [
            ("a", self.a_inf, self.a_sup),
            ("b", self.b_inf, self.b_sup),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi) {
                return Err(Error::Config(format!(
                    "{name} bounds must satisfy 0 < {name}_inf ≤ {name}_sup, got [{lo}, {hi}]"
                )));
            }
        }
        self.a.validate(domain)?;
        self.b.validate(domain)
    }

    /// Common period of the a/b descriptors, if they declare one. Two
    /// distinct declared periods is a config error (callers that need
    /// periodicity check this).
    pub fn period(&self) -> Result<Option<f64>> {
        match (self.a.period(), self.b.period()) {
            (None, None) => Ok(None),
            (Some(t), None) | (None, Some(t)) => Ok(Some(t)),
            (Some(ta), Some(tb)) => {
                if (ta - tb).abs() <= 1e-12 * ta.max(tb) {
                    Ok(Some(ta))
                } else {
                    Err(Error::Config(format!(
                        "a and b declare different periods: {ta} vs {tb}"
                    )))
                }
            }
        }
    }

    /// True when both coefficients are independent of time.
    pub fn is_autonomous(&self) -> bool {
        fn autonomous(e: &CoeffExpr) -> bool {
            match e {
                CoeffExpr::Constant { .. } => true,
                CoeffExpr::Separable { time, .. } => time.terms.is_empty(),
                CoeffExpr::Tabulated { times, .. } => times.len() <= 1,
            }
        }
        autonomous(&self.a) && autonomous(&self.b)
    }
}

/// One bound violation found by [`coeff_audit`].
#[derive(Debug, Clone, Serialize)]
pub struct AuditViolation {
    pub coeff: &'static str,
    pub t: f64,
    pub cell: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Result of sampling the declared coefficient bounds.
#[derive(Debug, Clone, Serialize)]
pub struct CoeffAudit {
    pub ok: bool,
    /// Worst offenders, capped at 16 entries.
    pub violations: Vec<AuditViolation>,
    pub time_samples: usize,
}

/// Check the declared bounds of a and b by sampling every cell center over a
/// time grid: one declared period if there is one, otherwise `[0, horizon]`.
pub fn coeff_audit(
    coeffs: &Coefficients,
    domain: &Domain,
    horizon: f64,
    time_samples: usize,
) -> Result<CoeffAudit> {
    coeffs.validate(domain)?;
    let span = match coeffs.period()? {
        Some(t) => t,
        None => horizon.max(0.0),
    };
    let nt = time_samples.max(1);
    let mut violations = Vec::new();
    // Slack for pure round-off in descriptor evaluation.
    let slack = 1e-12;
    for j in 0..=nt {
        let t = if nt == 0 { 0.0 } else { span * j as f64 / nt as f64 };
        for (name, expr, lo, hi) in [
            ("a", &coeffs.a, coeffs.a_inf, coeffs.a_sup),
            ("b", &coeffs.b, coeffs.b_inf, coeffs.b_sup),
        ] {
            let field = eval_coeff(expr, t, domain);
            for (cell, &v) in field.values().iter().enumerate() {
                if v < lo - slack * lo.abs().max(1.0) || v > hi + slack * hi.abs().max(1.0) {
                    if violations.len() < 16 {
                        violations.push(AuditViolation {
                            coeff: name,
                            t,
                            cell,
                            value: v,
                            lo,
                            hi,
                        });
                    }
                }
            }
        }
    }
    Ok(CoeffAudit {
        ok: violations.is_empty(),
        violations,
        time_samples: nt + 1,
    })
}

// ---------------------------------------------------------------------------
// Fields and state
// ---------------------------------------------------------------------------

/// Vector of cell averages tied to its domain. Values are always finite;
/// constructors reject NaN/inf so min/max/quadrature stay total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    domain: Domain,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(domain: Domain, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.n_cells() {
            return Err(Error::Config(format!(
                "field has {} values, domain has {} cells",
                values.len(),
                domain.n_cells()
            )));
        }
        if let Some((cell, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!(
                "field value at cell {cell} is not finite: {value}"
            )));
        }
        Ok(ScalarField { domain, values })
    }

    pub fn constant(domain: &Domain, c: f64) -> Self {
        ScalarField {
            values: vec![c; domain.n_cells()],
            domain: domain.clone(),
        }
    }

    /// Sample a function of the cell-center position.
    pub fn from_fn(domain: &Domain, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..domain.n_cells()).map(|i| f(domain.center(i))).collect();
        ScalarField::new(domain.clone(), values)
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index and value of the minimum cell.
    pub fn argmin(&self) -> (usize, f64) {
        let mut best = (0, self.values[0]);
        for (i, &v) in self.values.iter().enumerate() {
            if v < best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Max-norm distance to another field on the same domain.
    pub fn linf_diff(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.domain, other.domain, "fields live on different domains");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Quadrature of a cell-average field: Σ u_i · h^dim, compensated.
pub fn integrate(field: &ScalarField) -> f64 {
    kahan_sum(field.values.iter().copied()) * field.domain.cell_weight()
}

/// Power moment ∫ u^r. Errors when the power is undefined on some cell:
/// r < 0 needs strictly positive values, fractional r ≥ 0 needs nonnegative
/// ones. r = 1 is routed through [`integrate`] so the two agree exactly.
pub fn integrate_pow(field: &ScalarField, r: f64) -> Result<f64> {
    if r == 1.0 {
        return Ok(integrate(field));
    }
    let fractional = r.fract() != 0.0;
    for (cell, &v) in field.values.iter().enumerate() {
        if (r < 0.0 && v <= 0.0) || (fractional && v < 0.0) {
            return Err(Error::UndefinedMoment {
                exponent: r,
                cell,
                value: v,
            });
        }
    }
    let sum = kahan_sum(field.values.iter().map(|&v| v.powf(r)));
    Ok(sum * field.domain.cell_weight())
}

/// Time-stamped strictly positive density. Construction is the positivity
/// gate: a non-positive cell is an error, never silently clipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    u: ScalarField,
}

impl State {
    pub fn new(t: f64, u: ScalarField) -> Result<Self> {
        let (cell, value) = u.argmin();
        if !(value > 0.0) {
            return Err(Error::PositivityLoss { t, cell, value });
        }
        Ok(State { t, u })
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    pub fn into_u(self) -> ScalarField {
        self.u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid64() -> Domain {
        Domain::interval(1.0, 64).unwrap()
    }

    #[test]
    fn interval_basics() {
        let d = Domain::interval(2.0, 100).unwrap();
        assert_eq!(d.dim(), 1);
        assert_eq!(d.n_cells(), 100);
        assert!((d.h() - 0.02).abs() < 1e-15);
        assert_eq!(d.measure(), 2.0);
        // Quadrature weights sum back to the measure.
        let total = d.cell_weight() * d.n_cells() as f64;
        assert!((total - d.measure()).abs() <= 4.0 * f64::EPSILON * d.measure());
    }

    #[test]
    fn rectangle_requires_square_cells() {
        assert!(Domain::rectangle(1.0, 1.0, 32, 32).is_ok());
        assert!(Domain::rectangle(2.0, 1.0, 64, 32).is_ok());
        let err = Domain::rectangle(1.0, 1.0, 32, 48);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn zero_or_degenerate_domains_rejected() {
        assert!(Domain::interval(0.0, 16).is_err());
        assert!(Domain::interval(-1.0, 16).is_err());
        assert!(Domain::interval(1.0, 0).is_err());
        assert!(Domain::rectangle(1.0, 0.0, 4, 4).is_err());
        assert!(Domain::interval(f64::INFINITY, 4).is_err());
    }

    #[test]
    fn centers_and_indexing() {
        let d = Domain::rectangle(1.0, 1.0, 4, 4).unwrap();
        assert_eq!(d.index(0, 0), 0);
        assert_eq!(d.index(3, 0), 3);
        assert_eq!(d.index(0, 1), 4);
        let c = d.center(d.index(2, 3));
        assert!((c[0] - 0.625).abs() < 1e-15);
        assert!((c[1] - 0.875).abs() < 1e-15);
    }

    #[test]
    fn field_construction_guards() {
        let d = grid64();
        assert!(ScalarField::new(d.clone(), vec![1.0; 63]).is_err());
        assert!(ScalarField::new(d.clone(), vec![f64::NAN; 64]).is_err());
        assert!(ScalarField::new(d.clone(), vec![1.0; 64]).is_ok());
    }

    #[test]
    fn integrate_constant_matches_measure() {
        for n in [3, 64, 1000] {
            let d = Domain::interval(0.7, n).unwrap();
            let f = ScalarField::constant(&d, 2.5);
            let exact = 2.5 * d.measure();
            assert!(
                (integrate(&f) - exact).abs() <= 1e-12 * exact,
                "n = {n}"
            );
        }
    }

    #[test]
    fn integrate_pow_unit_exponent_is_integrate() {
        let d = grid64();
        let f = ScalarField::from_fn(&d, |x| 1.0 + 0.3 * (3.0 * x[0]).sin()).unwrap();
        assert_eq!(integrate_pow(&f, 1.0).unwrap(), integrate(&f));
    }

    #[test]
    fn integrate_pow_guards_nonpositive_cells() {
        let d = Domain::interval(1.0, 4).unwrap();
        let f = ScalarField::new(d.clone(), vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        match integrate_pow(&f, -1.0) {
            Err(Error::UndefinedMoment { cell, .. }) => assert_eq!(cell, 2),
            other => panic!("expected UndefinedMoment, got {other:?}"),
        }
        // Fractional power of a negative cell is also undefined.
        let g = ScalarField::new(d, vec![1.0, -2.0, 1.0, 3.0]).unwrap();
        assert!(integrate_pow(&g, 0.5).is_err());
        // ...but an integer power of a signed field is fine.
        assert!(integrate_pow(&g, 2.0).is_ok());
    }

    #[test]
    fn holder_bound_on_positive_fields() {
        // ∫u ≥ |Ω|^((p+1)/p) (∫u^-p)^(-1/p): discrete Hölder with p = 1
        // is exact on the shared uniform weights.
        let d = grid64();
        let f = ScalarField::from_fn(&d, |x| 0.5 + x[0] * x[0]).unwrap();
        let mass = integrate(&f);
        let neg = integrate_pow(&f, -1.0).unwrap();
        let p = 1.0;
        let floor = d.measure().powf((p + 1.0) / p) * neg.powf(-1.0 / p);
        assert!(mass >= floor * (1.0 - 1e-12));
    }

    #[test]
    fn state_demands_strict_positivity() {
        let d = Domain::interval(1.0, 4).unwrap();
        let ok = ScalarField::new(d.clone(), vec![0.1, 1.0, 2.0, 0.5]).unwrap();
        assert!(State::new(0.0, ok).is_ok());
        let bad = ScalarField::new(d, vec![0.1, 0.0, 2.0, 0.5]).unwrap();
        match State::new(1.5, bad) {
            Err(Error::PositivityLoss { t, cell, .. }) => {
                assert_eq!(t, 1.5);
                assert_eq!(cell, 1);
            }
            other => panic!("expected PositivityLoss, got {other:?}"),
        }
    }

    #[test]
    fn coeff_constant_and_sinusoid_eval() {
        let d = grid64();
        let c = CoeffExpr::constant(2.0);
        assert_eq!(eval_coeff(&c, 3.7, &d).values()[10], 2.0);

        let s = CoeffExpr::sinusoid(1.0, 0.1, 1.0);
        let at_quarter = eval_coeff(&s, 0.25, &d);
        assert!((at_quarter.values()[0] - 1.1).abs() < 1e-12);
        assert_eq!(s.period(), Some(1.0));
    }

    #[test]
    fn coeff_separable_space_modes() {
        let d = grid64();
        let e = CoeffExpr::Separable {
            time: FourierSeries::constant(1.0),
            space: SpaceProfile::CosineModes {
                base: 1.0,
                modes: vec![CosineMode {
                    axis: 0,
                    mode: 1,
                    amp: 0.2,
                }],
            },
        };
        e.validate(&d).unwrap();
        let f = eval_coeff(&e, 0.0, &d);
        let x0 = d.center(0)[0];
        let expect = 1.0 + 0.2 * (std::f64::consts::PI * x0).cos();
        assert!((f.values()[0] - expect).abs() < 1e-14);
        assert!(e.period().is_none());
    }

    #[test]
    fn coeff_tabulated_interpolates_and_clamps() {
        let d = Domain::interval(1.0, 2).unwrap();
        let e = CoeffExpr::Tabulated {
            times: vec![0.0, 1.0],
            values: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            interp: Interp::Linear,
        };
        e.validate(&d).unwrap();
        let mid = eval_coeff(&e, 0.5, &d);
        assert!((mid.values()[0] - 2.0).abs() < 1e-15);
        assert!((mid.values()[1] - 3.0).abs() < 1e-15);
        // Clamped outside the table.
        assert_eq!(eval_coeff(&e, -5.0, &d).values()[1], 2.0);
        assert_eq!(eval_coeff(&e, 7.0, &d).values()[0], 3.0);
    }

    #[test]
    fn coeff_tabulated_shape_errors() {
        let d = Domain::interval(1.0, 3).unwrap();
        let wrong_cells = CoeffExpr::Tabulated {
            times: vec![0.0],
            values: vec![vec![1.0, 2.0]],
            interp: Interp::Linear,
        };
        assert!(matches!(wrong_cells.validate(&d), Err(Error::Config(_))));
        let unsorted = CoeffExpr::Tabulated {
            times: vec![0.0, 0.0],
            values: vec![vec![1.0; 3], vec![1.0; 3]],
            interp: Interp::Linear,
        };
        assert!(unsorted.validate(&d).is_err());
    }

    #[test]
    fn audit_accepts_tight_bounds_and_flags_violations() {
        let d = grid64();
        let good = Coefficients {
            chi: 1.0,
            mu: 1.0,
            nu: 1.0,
            a: CoeffExpr::sinusoid(1.0, 0.1, 1.0),
            b: CoeffExpr::constant(1.0),
            a_inf: 0.9,
            a_sup: 1.1,
            b_inf: 1.0,
            b_sup: 1.0,
        };
        let audit = coeff_audit(&good, &d, 10.0, 64).unwrap();
        assert!(audit.ok, "violations: {:?}", audit.violations);

        let mut bad = good.clone();
        bad.a_sup = 1.05; // declared ceiling below the actual peak 1.1
        let audit = coeff_audit(&bad, &d, 10.0, 64).unwrap();
        assert!(!audit.ok);
        assert!(audit.violations.iter().all(|v| v.coeff == "a"));
    }

    #[test]
    fn coefficient_bound_ordering_enforced() {
        let d = grid64();
        let mut c = Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
        c.a_inf = 2.0; // now a_inf > a_sup
        assert!(c.validate(&d).is_err());
        let mut c = Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
        c.chi = 0.0;
        assert!(c.validate(&d).is_err());
        let mut c = Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
        c.b_inf = 0.0;
        c.b_sup = 0.0;
        assert!(c.validate(&d).is_err());
    }

    #[test]
    fn period_consistency() {
        let mut c = Coefficients::constant(1.0, 1.0, 1.0, 1.0, 1.0);
        assert_eq!(c.period().unwrap(), None);
        assert!(c.is_autonomous());
        c.a = CoeffExpr::sinusoid(1.0, 0.1, 2.0);
        assert_eq!(c.period().unwrap(), Some(2.0));
        assert!(!c.is_autonomous());
        c.b = CoeffExpr::sinusoid(1.0, 0.05, 3.0);
        assert!(c.period().is_err());
    }
}
