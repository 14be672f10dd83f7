//! Run ledger: a per-run directory holding the manifest (written before the
//! run starts), the diagnostics CSV, optional field/checkpoint dumps, and a
//! result JSON written atomically at the end — a missing result file marks a
//! partial run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::analysis::{DiagnosticsSeries, ThresholdReport};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::model::{ScalarField, State};

/// Everything knowable before the first step, echoed for reproducibility.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub code_version: String,
    pub experiment: String,
    /// Run start, seconds since the Unix epoch (wall time lives in the
    /// result file, which is written when it is known).
    pub started_unix: u64,
    /// True when the initial data has zero cells, so the integrator will
    /// apply its diffusion prestep.
    pub prestep_planned: bool,
    /// Full config with defaults materialized.
    pub config: RunConfig,
    /// Closed-form constants and verdicts for this parameter point.
    pub constants: ThresholdReport,
}

impl Manifest {
    pub fn new(
        experiment: &str,
        config: &RunConfig,
        constants: &ThresholdReport,
        prestep_planned: bool,
    ) -> Self {
        Manifest {
            schema_version: config.schema_version,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            prestep_planned,
            config: config.clone(),
            constants: constants.clone(),
        }
    }
}

/// Handle on one run directory.
#[derive(Debug)]
pub struct RunLedger {
    pub dir: PathBuf,
    pub manifest_path: PathBuf,
    pub diagnostics_path: Option<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub result_path: PathBuf,
}

impl RunLedger {
    /// Create the directory, write the manifest, and clear any stale result
    /// file so a crash mid-run is detectable.
    pub fn create(dir: &Path, manifest: &Manifest) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::Numerical(format!("manifest serialization: {e}")))?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        let result_path = dir.join("result.json");
        if result_path.exists() {
            fs::remove_file(&result_path).map_err(|e| Error::io(&result_path, e))?;
        }
        Ok(RunLedger {
            dir: dir.to_path_buf(),
            manifest_path,
            diagnostics_path: None,
            checkpoints: Vec::new(),
            result_path,
        })
    }

    pub fn write_diagnostics(&mut self, series: &DiagnosticsSeries) -> Result<PathBuf> {
        let path = self.dir.join("diagnostics.csv");
        fs::write(&path, series.to_csv()).map_err(|e| Error::io(&path, e))?;
        self.diagnostics_path = Some(path.clone());
        Ok(path)
    }

    /// Dump one field as `cell,x,y,u`.
    pub fn write_field(&mut self, name: &str, field: &ScalarField) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, field_csv(field)).map_err(|e| Error::io(&path, e))?;
        self.checkpoints.push(path.clone());
        Ok(path)
    }

    /// Dump a sequence of time-stamped states as `t,cell,u` rows.
    pub fn write_states(&mut self, name: &str, states: &[State]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut out = String::from("t,cell,u\n");
        for s in states {
            for (i, &v) in s.u().values().iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", s.t, i, v));
            }
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        self.checkpoints.push(path.clone());
        Ok(path)
    }

    /// Write an arbitrary CSV payload into the run directory.
    pub fn write_csv(&mut self, name: &str, payload: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, payload).map_err(|e| Error::io(&path, e))?;
        self.checkpoints.push(path.clone());
        Ok(path)
    }

    /// Atomically publish the result: write to a temp name, then rename.
    pub fn finish<S: Serialize>(&self, result: &S) -> Result<()> {
        let tmp = self.dir.join("result.json.tmp");
        let text = serde_json::to_string_pretty(result)
            .map_err(|e| Error::Numerical(format!("result serialization: {e}")))?;
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &self.result_path).map_err(|e| Error::io(&self.result_path, e))?;
        Ok(())
    }
}

/// Render a field as the fixed `cell,x,y,u` CSV (shortest-roundtrip floats,
/// `\n` endings — byte-stable for identical fields).
pub fn field_csv(field: &ScalarField) -> String {
    let d = field.domain();
    let mut out = String::from("cell,x,y,u\n");
    for (i, &v) in field.values().iter().enumerate() {
        let c = d.center(i);
        out.push_str(&format!("{},{},{},{}\n", i, c[0], c[1], v));
    }
    out
}

/// Load a manifest back from a ledger directory.
pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Minimal diagnostics row for ledger consumers (plot-data emission).
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct DiagRecord {
    pub t: f64,
    pub mass: f64,
    pub neg_p_moment: f64,
    pub q_moment: f64,
    pub min_u: f64,
    pub max_u: f64,
    pub min_v: f64,
    pub holder_seminorm: f64,
    pub rectangle_member: u8,
}

/// Read a diagnostics CSV back.
pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!(
        "{}: {e}",
        path.display()
    )))?;
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: DiagRecord =
            record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}
