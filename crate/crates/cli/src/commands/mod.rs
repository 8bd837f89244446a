pub mod bench;
pub mod eval;
pub mod factor;
pub mod project;
pub mod synth;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ratnmf::data::{format_csv, format_signals_csv, load_signals_csv, read_csv, signal_header};
use ratnmf::polybasis::Grid;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::settings::{load_config, resolve, Layer};

/// Global options shared by every subcommand.
pub struct Context {
    pub argv: Vec<String>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Context {
    /// Resolves the settings of `subcommand`; the global `--seed` and
    /// `--threads` count as flags.
    pub fn resolve<S>(&self, subcommand: &str, flags: &impl Serialize) -> CliResult<(S, Layer)>
    where
        S: Serialize + DeserializeOwned + Default,
    {
        let config = self
            .config
            .as_deref()
            .map(|p| load_config(p, subcommand))
            .transpose()?;
        let mut layer = match serde_json::to_value(flags) {
            Ok(Value::Object(m)) => m,
            _ => Layer::new(),
        };
        if let Some(s) = self.seed {
            layer.insert("seed".into(), s.into());
        }
        if let Some(t) = self.threads {
            layer.insert("threads".into(), t.into());
        }
        let (settings, merged) = resolve::<S>(config.as_ref(), &layer)?;
        let threads = merged.get("threads").and_then(Value::as_u64);
        configure_threads(threads.map(|t| t as usize))?;
        Ok((settings, merged))
    }
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        Some(0) => Err(CliError::Usage("threads must be at least 1".into())),
        Some(n) => {
            // a second call in the same process keeps the first pool
            if rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .is_err()
            {
                log::debug!("thread pool already configured");
            }
            Ok(())
        }
        None => Ok(()),
    }
}

pub fn required(path: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    path.clone()
        .ok_or_else(|| CliError::Usage(format!("--{name} is required")))
}

/// Reads a `tau, s1, s2, ...` file.
pub fn read_signals(path: &Path) -> CliResult<(Grid, DMatrix<f64>)> {
    let (tau, data) = load_signals_csv(path)?;
    Ok((Grid::new(tau)?, data))
}

/// Reads a matrix, dropping a leading `tau` column when the header has one.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let table = read_csv(path)?;
    let has_tau = table
        .header
        .as_ref()
        .and_then(|h| h.first())
        .is_some_and(|h| h.trim().eq_ignore_ascii_case("tau"));
    Ok(if has_tau {
        table.data.columns(1, table.data.ncols() - 1).into_owned()
    } else {
        table.data
    })
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}{k}")).collect()
}

pub fn signals_text(grid: &Grid, data: &DMatrix<f64>, prefix: &str) -> CliResult<String> {
    Ok(format_signals_csv(
        grid.tau(),
        data,
        Some(&signal_header(prefix, data.ncols())),
    )?)
}

pub fn matrix_text(data: &DMatrix<f64>, prefix: &str) -> String {
    format_csv(data, Some(&names(prefix, data.ncols())))
}
