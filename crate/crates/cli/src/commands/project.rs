use std::path::PathBuf;

use clap::Args;
use nalgebra::DMatrix;
use ratnmf::project::{project, Method, ProjectorConfig};
use ratnmf::rational::{half_degrees, RationalModel, DEFAULT_EPS};
use serde::{Deserialize, Serialize};

use super::{read_signals, required, signals_text, Context};
use crate::error::{CliError, CliResult};
use crate::manifest::{to_json, Recorder, RunStatus};

pub const METHOD_NAMES: [&str; 5] = ["ls", "als", "conic", "rkfit+", "linproj"];

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ProjectArgs {
    /// Signals to project, `tau,z1,z2,...`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Projection method
    #[arg(long, value_parser = METHOD_NAMES)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Numerator degree (even)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<usize>,
    /// Denominator degree (even)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Denominator offset keeping poles off the interval
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Project only this signal (1-based); default all
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct ProjectSettings {
    pub input: Option<PathBuf>,
    pub method: String,
    pub d1: usize,
    pub d2: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub eps: f64,
    pub column: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for ProjectSettings {
    fn default() -> Self {
        ProjectSettings {
            input: None,
            method: "ls".into(),
            d1: 4,
            d2: 4,
            tol: 1e-8,
            max_iter: 1000,
            eps: DEFAULT_EPS,
            column: None,
            out: PathBuf::from("."),
            seed: 0,
            threads: None,
        }
    }
}

#[derive(Serialize)]
struct ColumnReport {
    column: usize,
    rel_err: f64,
    iters: usize,
    seconds: f64,
}

#[derive(Serialize)]
struct ProjectReport {
    method: String,
    d1: usize,
    d2: usize,
    m: usize,
    columns: Vec<ColumnReport>,
}

#[derive(Serialize)]
struct ColumnModel<'a> {
    column: usize,
    model: &'a RationalModel,
}

pub fn run(ctx: &Context, args: &ProjectArgs) -> CliResult<String> {
    let (s, layer) = ctx.resolve::<ProjectSettings>("project", args)?;
    let input = required(&s.input, "input")?;
    let method: Method = s.method.parse()?;
    let (d1p, d2p) = half_degrees(s.d1, s.d2)?;
    let cfg = ProjectorConfig {
        tol: s.tol,
        max_iter: s.max_iter,
        eps: s.eps,
        ..ProjectorConfig::new(method, d1p, d2p)
    };
    cfg.validate()?;
    let rec = Recorder::new("project", &ctx.argv, s.seed, layer, &s.out)?;
    rec.run(|rec| {
        rec.input(&input)?;
        let (grid, signals) = read_signals(&input)?;
        let columns: Vec<usize> = match s.column {
            Some(c) if c >= 1 && c <= signals.ncols() => vec![c - 1],
            Some(c) => {
                return Err(CliError::Usage(format!(
                    "column {c} out of range 1..={}",
                    signals.ncols()
                )))
            }
            None => (0..signals.ncols()).collect(),
        };
        let mut fitted = DMatrix::zeros(grid.len(), columns.len());
        let mut models = Vec::new();
        let mut reports = Vec::new();
        for (k, &c) in columns.iter().enumerate() {
            let p = project(&signals.column(c).into_owned(), &grid, &cfg)?;
            fitted.set_column(k, &p.fitted);
            reports.push(ColumnReport {
                column: c + 1,
                rel_err: p.rel_err,
                iters: p.iters,
                seconds: p.seconds,
            });
            models.push(p.model);
        }
        let model_list: Vec<ColumnModel> = columns
            .iter()
            .zip(&models)
            .map(|(&c, model)| ColumnModel { column: c + 1, model })
            .collect();
        rec.write("model.json", &to_json(&model_list))?;
        rec.write("fitted.csv", &signals_text(&grid, &fitted, "fit")?)?;
        let worst = reports.iter().map(|r| r.rel_err).fold(0.0, f64::max);
        let n = reports.len();
        rec.write(
            "report.json",
            &to_json(&ProjectReport {
                method: method.name().into(),
                d1: s.d1,
                d2: s.d2,
                m: grid.len(),
                columns: reports,
            }),
        )?;
        Ok((
            RunStatus::Complete,
            format!("project: {method} on {n} signal(s), max rel_err {worst:e}"),
        ))
    })
}
