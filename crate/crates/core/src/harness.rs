//! Reproducible experiment harness: TOML run configs, append-only run
//! ledgers (manifest → artifacts → result), and the experiment dispatch the
//! CLI binary calls into.
//!
//! Layout of one run directory:
//!
//! ```text
//! out_dir/
//!   manifest.json      written before the run starts
//!   diagnostics.csv    one row per accepted step (simulate)
//!   *.csv              experiment artifacts (final_state, u_star, sweep, …)
//!   result.json        written atomically last; absent ⇒ run died midway
//! ```

pub mod config;
pub mod experiments;
pub mod ledger;

pub use config::{load_config, RunConfig, SCHEMA_VERSION};
pub use experiments::{
    emit_plotdata, execute, ExperimentKind, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_VERDICT,
};
pub use ledger::{load_manifest, Manifest, RunLedger};
