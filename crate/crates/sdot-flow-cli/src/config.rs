//! Flat key=value run configuration shared by every subcommand.
//!
//! Resolution order: built-in defaults, then the `--config FILE` key=value
//! file, then explicit command-line flags. Unknown keys are rejected. The
//! fully resolved table is echoed next to the outputs as
//! `resolved-<command>.cfg` with sorted keys; re-running a command from that
//! echo reproduces the run.

use std::path::Path;
use std::str::FromStr;

use sdot_flow::{Error, Result};

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("config key {key}: cannot parse value {value:?}")))
}

macro_rules! run_config {
    ($(($field:ident, $key:literal, $ty:ty, $default:expr, $doc:literal),)+) => {
        /// Every tunable setting of the pipeline, one flat namespace.
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $field: $ty,)+
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default.into(),)+ }
            }
        }

        impl RunConfig {
            /// Sets one key from its text form; unknown keys are errors.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$field = parse_value(key, value)?,)+
                    _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
                }
                Ok(())
            }

            /// `(key, canonical value)` rows, sorted by key.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                let mut rows = vec![$(($key, self.$field.to_string()),)+];
                rows.sort_by_key(|&(k, _)| k);
                rows
            }

            /// `(key, default, documentation)` rows, sorted by key.
            pub fn documentation() -> Vec<(&'static str, String, &'static str)> {
                let defaults = RunConfig::default();
                let mut rows = vec![$(($key, defaults.$field.to_string(), $doc),)+];
                rows.sort_by_key(|&(k, _, _)| k);
                rows
            }
        }
    };
}

run_config![
    (out, "out", String, "out", "output directory; relative file keys resolve inside it"),
    (master_seed, "master_seed", u64, 0u64, "seed for data generation, the sdot solve, pairs, and training"),
    (dataset, "dataset", String, "data.pts", "dataset point file"),
    (duals, "duals", String, "duals.alnw", "dual-weight file"),
    (pairs, "pairs", String, "pairs.alnf", "pair file"),
    (checkpoint, "checkpoint", String, "model.alnp", "network checkpoint file"),
    (loss_csv, "loss_csv", String, "loss.csv", "per-step training loss log"),
    (samples, "samples", String, "samples.pts", "sampled-endpoint point file"),
    (trajectories, "trajectories", String, "trajectories.csv", "trajectory log file"),
    (reference, "reference", String, "data.pts", "reference point file compared against by eval"),
    (checker_count, "checker_count", usize, 10_000usize, "points drawn by checkerboard"),
    (stages, "stages", String, "500:0.5:1024:0.9:1,1500:0.2:4096:0.99:0.01,1000:0.05:8192:0.99:0,1000:0.01:16384:0.999:0,1500:0.002:16384:0.999:0", "sdot schedule, comma-separated steps:lr:batch:beta:eps stages; the cooling tail keeps the returned weights close to the trajectory average"),
    (threshold, "threshold", f64, 0.2f64, "sdot success bound: final mre_est must fall below this"),
    (adam_beta1, "adam_beta1", f64, 0.9f64, "Adam first-moment decay (sdot solve and training)"),
    (adam_beta2, "adam_beta2", f64, 0.999f64, "Adam second-moment decay (sdot solve and training)"),
    (adam_eps, "adam_eps", f64, 1e-8f64, "Adam denominator guard (sdot solve and training)"),
    (pair_count, "pair_count", usize, 0usize, "pair records to generate; 0 means train_steps * batch_size"),
    (rebalance, "rebalance", bool, true, "rebalance pair indices within each class after generation"),
    (hidden, "hidden", String, "128,128,128", "hidden-layer widths, comma separated"),
    (embed_width, "embed_width", usize, 16usize, "sine/cosine features per conditioning scalar (even; 0 disables)"),
    (activation, "activation", String, "tanh", "hidden-layer activation: tanh | silu"),
    (batch_size, "batch_size", usize, 256usize, "training batch size"),
    (train_steps, "train_steps", usize, 20_000usize, "training optimizer steps"),
    (learning_rate, "learning_rate", f64, 1e-3f64, "training step size"),
    (loss_exponent, "loss_exponent", f64, 2f64, "per-coordinate loss exponent, at least 1"),
    (coupling, "coupling", String, "independent", "training coupling: independent | aligned"),
    (target, "target", String, "vanilla", "regression target: vanilla | shortcut | meanflow"),
    (shortcut_kappa, "shortcut_kappa", usize, 192usize, "batch slots trained on the plain target (shortcut only)"),
    (shortcut_steps, "shortcut_steps", String, "0.0078125,0.015625,0.03125,0.0625", "candidate bootstrap step sizes (shortcut only)"),
    (meanflow_equal_prob, "meanflow_equal_prob", f64, 0.75f64, "probability a span collapses to a point (meanflow only)"),
    (sample_count, "sample_count", usize, 1024usize, "trajectories drawn by sample"),
    (sample_seed, "sample_seed", u64, 1u64, "seed for sampling-time noise draws"),
    (sample_steps, "sample_steps", usize, 8usize, "integration steps per trajectory"),
    (scheme, "scheme", String, "euler", "integrator: euler | midpoint | rk4"),
    (extra, "extra", String, "none", "sampling-time conditioning: none | step | span"),
    (slices, "slices", bool, false, "also write ten time-slice density grids during sample"),
    (w2_max, "w2_max", usize, 2048usize, "largest point count per side in the eval transport metric"),
];

impl RunConfig {
    /// Applies a key=value file on top of the current values. Blank lines
    /// and `#` comments are ignored; keys and values are trimmed; later
    /// lines win.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::invalid(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The canonical echo: sorted `key=value` lines.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            out.push_str(key);
            out.push('=');
            out.push_str(&value);
            out.push('\n');
        }
        out
    }
}
