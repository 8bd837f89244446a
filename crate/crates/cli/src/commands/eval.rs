use std::fs;
use std::path::PathBuf;

use clap::Args;
use ratnmf::factorize::RunReport;
use ratnmf::metrics::evaluate;
use serde::{Deserialize, Serialize};

use super::{read_matrix, required, Context};
use crate::error::{CliError, CliResult};
use crate::manifest::{to_json, Recorder, RunStatus};

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    /// True spectra (A_true.csv)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_true: Option<PathBuf>,
    /// True weights (X_true.csv)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_true: Option<PathBuf>,
    /// Estimated spectra (A.csv)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_est: Option<PathBuf>,
    /// Estimated weights (X.csv)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_est: Option<PathBuf>,
    /// Run report of the estimate, for convergence statistics
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct EvalSettings {
    pub a_true: Option<PathBuf>,
    pub x_true: Option<PathBuf>,
    pub a_est: Option<PathBuf>,
    pub x_est: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            a_true: None,
            x_true: None,
            a_est: None,
            x_est: None,
            report: None,
            out: PathBuf::from("."),
            seed: 0,
            threads: None,
        }
    }
}

pub fn run(ctx: &Context, args: &EvalArgs) -> CliResult<String> {
    let (s, layer) = ctx.resolve::<EvalSettings>("eval", args)?;
    let paths = [
        required(&s.a_true, "a-true")?,
        required(&s.x_true, "x-true")?,
        required(&s.a_est, "a-est")?,
        required(&s.x_est, "x-est")?,
    ];
    let rec = Recorder::new("eval", &ctx.argv, s.seed, layer, &s.out)?;
    rec.run(|rec| {
        for p in paths.iter().chain(&s.report) {
            rec.input(p)?;
        }
        let [a_true, x_true, a_est, x_est] = [0, 1, 2, 3].map(|k| read_matrix(&paths[k]));
        let (a_true, x_true, a_est, x_est) = (a_true?, x_true?, a_est?, x_est?);
        if a_true.ncols() != x_true.ncols() || a_est.ncols() != x_est.ncols() {
            return Err(CliError::Usage("A and X must have the same number of columns".into()));
        }
        let report: Option<RunReport> = match &s.report {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p.display(), e))?;
                Some(
                    serde_json::from_str(&text)
                        .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
                )
            }
            None => None,
        };
        let reference = &a_true * x_true.transpose();
        let traces = report
            .as_ref()
            .map(|r| (r.sc_trace.as_slice(), r.wall_times.as_slice()));
        let result = evaluate(&reference, &a_true, &a_est, &x_est, traces)?;
        rec.write("metrics.json", &to_json(&result))?;
        Ok((
            RunStatus::Complete,
            format!(
                "eval: residue {:e}, mean SIR {:.2} dB, permutation {:?}",
                result.rel_residue, result.mean_sir_db, result.permutation
            ),
        ))
    })
}
