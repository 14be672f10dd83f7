//! Run configuration: one TOML file per run, schema-versioned, with every
//! defaulted field materialized after parsing so the manifest echo is
//! complete. Validation errors name the offending field path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coefficients, Domain, ScalarField, SpaceProfile};
use crate::stepper::StepControl;

pub const SCHEMA_VERSION: u32 = 1;

/// Complete description of one run. The per-experiment sections are only
/// consulted by their experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub domain: DomainSpec,
    pub coefficients: Coefficients,
    #[serde(default)]
    pub step_control: StepControl,
    pub initial: InitialSpec,
    #[serde(default)]
    pub monitor: MonitorSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub thresholds: ThresholdSpec,
    #[serde(default)]
    pub periodic: Option<PeriodicSpec>,
    #[serde(default)]
    pub steady: Option<SteadySpec>,
    #[serde(default)]
    pub entire: Option<EntireSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// 1 or 2.
    pub dim: usize,
    /// Side lengths, one per axis.
    pub lengths: Vec<f64>,
    /// Cell counts, one per axis.
    pub cells: Vec<usize>,
}

impl DomainSpec {
    pub fn build(&self) -> Result<Domain> {
        if !(self.dim == 1 || self.dim == 2) {
            return Err(Error::Config(format!(
                "domain.dim: must be 1 or 2, got {}",
                self.dim
            )));
        }
        if self.lengths.len() != self.dim {
            return Err(Error::Config(format!(
                "domain.lengths: expected {} entries, got {}",
                self.dim,
                self.lengths.len()
            )));
        }
        if self.cells.len() != self.dim {
            return Err(Error::Config(format!(
                "domain.cells: expected {} entries, got {}",
                self.dim,
                self.cells.len()
            )));
        }
        if let Some(&n) = self.cells.iter().find(|&&n| n < 3) {
            return Err(Error::Config(format!(
                "domain.cells: each axis needs at least 3 cells, got {n}"
            )));
        }
        let d = match self.dim {
            1 => Domain::interval(self.lengths[0], self.cells[0]),
            _ => Domain::rectangle(
                self.lengths[0],
                self.lengths[1],
                self.cells[0],
                self.cells[1],
            ),
        };
        d.map_err(|e| Error::Config(format!("domain: {e}")))
    }
}

/// Initial density u0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: f64,
    },
    /// Cell values center·exp(σz − σ²/2) with z standard normal from the run
    /// seed; strictly positive with mean `center`.
    Lognormal {
        center: f64,
        sigma: f64,
    },
    /// Deterministic profile sampled at cell centers.
    Expression {
        profile: SpaceProfile,
    },
    /// Single-column CSV (header `u`, one value per cell, row-major),
    /// resolved relative to the config file.
    File {
        path: String,
    },
}

impl InitialSpec {
    pub fn build(&self, domain: &Domain, seed: u64, base_dir: &Path) -> Result<ScalarField> {
        match self {
            InitialSpec::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::Config(format!(
                        "initial.value: constant initial data must be positive, got {value}"
                    )));
                }
                Ok(ScalarField::constant(domain, *value))
            }
            InitialSpec::Lognormal { center, sigma } => {
                if !(center.is_finite() && *center > 0.0) {
                    return Err(Error::Config(format!(
                        "initial.center: must be positive, got {center}"
                    )));
                }
                if !(sigma.is_finite() && *sigma >= 0.0) {
                    return Err(Error::Config(format!(
                        "initial.sigma: must be ≥ 0, got {sigma}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let values = (0..domain.n_cells())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        center * (sigma * z - 0.5 * sigma * sigma).exp()
                    })
                    .collect();
                ScalarField::new(domain.clone(), values)
            }
            InitialSpec::Expression { profile } => {
                profile
                    .validate(domain)
                    .map_err(|e| Error::Config(format!("initial.profile: {e}")))?;
                ScalarField::from_fn(domain, |x| profile.eval(x, domain))
                    .map_err(|e| Error::Config(format!("initial.profile: {e}")))
            }
            InitialSpec::File { path } => {
                let full = base_dir.join(path);
                let mut reader = csv::Reader::from_path(&full)
                    .map_err(|e| Error::Config(format!("initial.path: {e}")))?;
                let mut values = Vec::new();
                for record in reader.records() {
                    let record =
                        record.map_err(|e| Error::Config(format!("initial.path: {e}")))?;
                    let cell = record.get(0).ok_or_else(|| {
                        Error::Config("initial.path: empty row in initial-data CSV".into())
                    })?;
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Config(format!("initial.path: non-numeric value `{cell}`"))
                    })?;
                    values.push(v);
                }
                if values.len() != domain.n_cells() {
                    return Err(Error::Config(format!(
                        "initial.path: file holds {} values, domain has {} cells",
                        values.len(),
                        domain.n_cells()
                    )));
                }
                ScalarField::new(domain.clone(), values)
            }
        }
    }
}

/// Diagnostics monitors and the rectangle's configured high-moment radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSpec {
    pub p: f64,
    pub q: f64,
    pub theta: f64,
    pub holder_cap: usize,
    /// Trailing fraction of rows used for tail statistics.
    pub tail_fraction: f64,
    pub forced_times: Vec<f64>,
    /// M₂* for the invariant rectangle; omitted means no membership column
    /// unless an experiment estimates one.
    pub m2_star: Option<f64>,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        MonitorSpec {
            p: 1.0,
            q: 2.0,
            theta: 0.5,
            holder_cap: 16,
            tail_fraction: 0.25,
            forced_times: Vec::new(),
            m2_star: None,
        }
    }
}

impl MonitorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("monitor.p: must be positive, got {}", self.p)));
        }
        if !(self.q > 1.0 && self.q.is_finite()) {
            return Err(Error::Config(format!("monitor.q: must exceed 1, got {}", self.q)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!(
                "monitor.theta: must lie in (0, 1), got {}",
                self.theta
            )));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "monitor.tail_fraction: must lie in (0, 1], got {}",
                self.tail_fraction
            )));
        }
        if let Some(m2) = self.m2_star {
            if !(m2 > 0.0 && m2.is_finite()) {
                return Err(Error::Config(format!(
                    "monitor.m2_star: must be positive, got {m2}"
                )));
            }
        }
        if self.forced_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Config("monitor.forced_times: entries must be finite".into()));
        }
        Ok(())
    }
}

/// Time span, seed, and artifact directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Optional experiment name; when present it must match the invoked
    /// subcommand (a config written for one experiment cannot silently feed
    /// another).
    pub experiment: Option<String>,
    pub s: f64,
    pub t_end: f64,
    pub seed: u64,
    pub out_dir: String,
    /// Dump every trajectory checkpoint as its own CSV, not just the final
    /// state.
    pub save_checkpoints: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            experiment: None,
            s: 0.0,
            t_end: 10.0,
            seed: 0,
            out_dir: "runs/out".into(),
            save_checkpoints: false,
        }
    }
}

/// Threshold-evaluation knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSpec {
    /// Interpolation constant C*; the theory leaves it opaque.
    pub c_star: f64,
    /// Prescribed δ₀ (skips the Green-column computation). Reports built
    /// from an override are marked uncertified.
    pub delta0: Option<f64>,
    /// Cell-count limit for exhaustive Green columns; larger grids fall back
    /// to deterministic sampling.
    pub exhaustive_cap: usize,
    pub q_grid: Option<Vec<f64>>,
    pub eps_grid: Option<Vec<f64>>,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec {
            c_star: 1.0,
            delta0: None,
            exhaustive_cap: 4096,
            q_grid: None,
            eps_grid: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicSpec {
    /// Defaults to the period declared by the coefficients.
    pub t_period: Option<f64>,
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PeriodicSpec {
    fn default() -> Self {
        PeriodicSpec {
            t_period: None,
            omega: 1.0,
            tol: 1e-8,
            max_iter: 60,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadySpec {
    pub tol: f64,
    pub t_cap: f64,
    /// Also run the period-map diagonal T ∈ {1, 1/2, 1/4} and report the
    /// pairwise spread.
    pub cross_check: bool,
    pub cross_max_iter: usize,
}

impl Default for SteadySpec {
    fn default() -> Self {
        SteadySpec {
            tol: 1e-8,
            t_cap: 100.0,
            cross_check: false,
            cross_max_iter: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntireSpec {
    /// Backward window length T_w; checkpoints are returned on [−T_w, 0].
    pub window: f64,
    /// Increasing backward start times.
    pub n_schedule: Vec<f64>,
    #[serde(default = "default_entire_tol")]
    pub tol: f64,
}

fn default_entire_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Parameter path → value grid. Paths: coefficients.chi, coefficients.mu,
    /// coefficients.nu, coefficients.a, coefficients.b, initial.sigma,
    /// domain.cells.
    pub axes: BTreeMap<String, Vec<f64>>,
    #[serde(default = "default_sweep_cap")]
    pub cap: usize,
}

fn default_sweep_cap() -> usize {
    10_000
}

/// Parse and structurally validate a config file. The returned struct has
/// every default filled in, ready for the manifest echo.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "schema_version: expected {SCHEMA_VERSION}, got {}",
            cfg.schema_version
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Structural validation with field-path error messages. Experiment
    /// sections are validated by their experiments.
    pub fn validate(&self) -> Result<()> {
        let domain = self.domain.build()?;
        self.coefficients
            .validate(&domain)
            .map_err(|e| Error::Config(format!("coefficients: {e}")))?;
        self.step_control
            .validate()
            .map_err(|e| Error::Config(format!("step_control: {e}")))?;
        self.monitor.validate()?;
        if !(self.run.t_end > self.run.s) {
            return Err(Error::Config(format!(
                "run.t_end: must exceed run.s = {}, got {}",
                self.run.s, self.run.t_end
            )));
        }
        if !(self.thresholds.c_star > 0.0 && self.thresholds.c_star.is_finite()) {
            return Err(Error::Config(format!(
                "thresholds.c_star: must be positive, got {}",
                self.thresholds.c_star
            )));
        }
        if let Some(d) = self.thresholds.delta0 {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::Config(format!(
                    "thresholds.delta0: must be positive, got {d}"
                )));
            }
        }
        if self.run.out_dir.is_empty() {
            return Err(Error::Config("run.out_dir: must not be empty".into()));
        }
        Ok(())
    }

    /// Output directory as a path.
    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.run.out_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1

[domain]
dim = 1
lengths = [1.0]
cells = [64]

[coefficients]
chi = 1.0
mu = 1.0
nu = 1.0
a_inf = 1.0
a_sup = 1.0
b_inf = 1.0
b_sup = 1.0

[coefficients.a]
kind = "constant"
value = 1.0

[coefficients.b]
kind = "constant"
value = 1.0

[initial]
kind = "constant"
value = 1.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.step_control.dt_max, 0.1);
        assert_eq!(cfg.monitor.p, 1.0);
        assert_eq!(cfg.run.seed, 0);
        assert_eq!(cfg.thresholds.c_star, 1.0);
        // Defaults materialize into the echo.
        let echo = serde_json::to_value(&cfg).unwrap();
        assert_eq!(echo["step_control"]["cfl_safety"], 0.9);
        assert_eq!(echo["monitor"]["tail_fraction"], 0.25);
    }

    #[test]
    fn tiny_grid_names_the_field() {
        let text = MINIMAL.replace("cells = [64]", "cells = [2]");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("domain.cells"), "message: {err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[run]\nbogus_knob = 3\n");
        assert!(toml::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn lognormal_initial_is_positive_and_seeded() {
        let d = Domain::interval(1.0, 256).unwrap();
        let spec = InitialSpec::Lognormal {
            center: 1.0,
            sigma: 0.3,
        };
        let a = spec.build(&d, 7, Path::new(".")).unwrap();
        let b = spec.build(&d, 7, Path::new(".")).unwrap();
        let c = spec.build(&d, 8, Path::new(".")).unwrap();
        assert!(a.min() > 0.0);
        assert_eq!(a.values(), b.values());
        assert!(a.linf_diff(&c) > 0.0);
        // Mean-one correction keeps the average near the center.
        let mean = crate::model::integrate(&a) / d.measure();
        assert!((mean - 1.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn file_initial_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u0.csv");
        std::fs::write(&path, "u\n1.5\n2.5\n0.5\n1.25\n").unwrap();
        let d = Domain::interval(1.0, 4).unwrap();
        let spec = InitialSpec::File {
            path: "u0.csv".into(),
        };
        let u = spec.build(&d, 0, dir.path()).unwrap();
        assert_eq!(u.values(), &[1.5, 2.5, 0.5, 1.25]);
        // Wrong length reported against the field.
        let d8 = Domain::interval(1.0, 8).unwrap();
        let err = spec.build(&d8, 0, dir.path()).unwrap_err().to_string();
        assert!(err.contains("initial.path"), "message: {err}");
    }

    #[test]
    fn expression_initial_samples_centers() {
        let d = Domain::interval(1.0, 4).unwrap();
        let spec = InitialSpec::Expression {
            profile: SpaceProfile::Polynomial {
                axis: 0,
                coeffs: vec![1.0, 2.0],
            },
        };
        let u = spec.build(&d, 0, Path::new(".")).unwrap();
        for (i, &v) in u.values().iter().enumerate() {
            let x = (i as f64 + 0.5) * 0.25;
            assert!((v - (1.0 + 2.0 * x)).abs() <= 1e-15);
        }
    }
}
