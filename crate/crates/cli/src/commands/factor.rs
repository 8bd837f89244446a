use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use ratnmf::factorize::{
    combine, factor, Algorithm, RunReport, RunStatus as SolverStatus, SolveConfig,
    DEFAULT_SWITCH_RESIDUE,
};
use ratnmf::project::{Method, ProjectorConfig};
use ratnmf::rational::DEFAULT_EPS;
use serde::{Deserialize, Serialize};

use super::project::METHOD_NAMES;
use super::{matrix_text, read_signals, required, signals_text, Context};
use crate::error::{CliError, CliResult};
use crate::manifest::{to_json, Recorder, RunStatus};

pub const ALGORITHM_NAMES: [&str; 4] = ["rnls", "ranls", "rhanls", "hals"];

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FactorArgs {
    /// Data matrix, `tau,y1,y2,...`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long, value_parser = ALGORITHM_NAMES)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
    /// Projection method used by rhanls
    #[arg(long, value_parser = METHOD_NAMES)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Final tolerance of the rhanls projection schedule
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proj_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
    /// Seconds per solver; defaults depend on the algorithm
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_outer: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_max_iter: Option<usize>,
    /// Continue with this algorithm once the residue falls below --switch-residue
    #[arg(long, value_parser = ALGORITHM_NAMES)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub combine: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch_residue: Option<f64>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct FactorSettings {
    pub input: Option<PathBuf>,
    pub algorithm: String,
    pub rank: usize,
    pub d1: usize,
    pub d2: usize,
    pub method: String,
    pub proj_tol: f64,
    pub stop_tol: f64,
    pub time_budget: Option<f64>,
    pub max_outer: usize,
    pub inner_max_iter: usize,
    pub combine: Option<String>,
    pub switch_residue: f64,
    pub eps: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for FactorSettings {
    fn default() -> Self {
        let base = SolveConfig::default();
        FactorSettings {
            input: None,
            algorithm: base.algorithm.name().into(),
            rank: 3,
            d1: base.d1,
            d2: base.d2,
            method: base.projector.method.name().into(),
            proj_tol: base.projector.tol,
            stop_tol: base.stop_tol,
            time_budget: None,
            max_outer: base.max_outer,
            inner_max_iter: base.inner_max_iter,
            combine: None,
            switch_residue: DEFAULT_SWITCH_RESIDUE,
            eps: DEFAULT_EPS,
            out: PathBuf::from("."),
            seed: 0,
            threads: None,
        }
    }
}

impl FactorSettings {
    pub fn solve_config(&self, algorithm: &str) -> CliResult<SolveConfig> {
        let algorithm: Algorithm = algorithm.parse()?;
        let method: Method = self.method.parse()?;
        let cfg = SolveConfig {
            algorithm,
            projector: ProjectorConfig {
                tol: self.proj_tol,
                eps: self.eps,
                ..ProjectorConfig::new(method, self.d1 / 2, self.d2 / 2)
            },
            rank: self.rank,
            d1: self.d1,
            d2: self.d2,
            stop_tol: self.stop_tol,
            time_budget: self.time_budget,
            seed: self.seed,
            max_outer: self.max_outer,
            inner_max_iter: self.inner_max_iter,
            ..SolveConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn trace_text(rep: &RunReport) -> String {
    let mut s = String::from("iter,residue,sc,seconds\n");
    for (k, res) in rep.residue_trace.iter().enumerate() {
        let sc = rep.sc_trace.get(k).copied().unwrap_or(f64::NAN);
        let t = rep.wall_times.get(k).copied().unwrap_or(f64::NAN);
        writeln!(s, "{},{res:?},{sc:?},{t:?}", k + 1).expect("string write");
    }
    s
}

pub fn run(ctx: &Context, args: &FactorArgs) -> CliResult<String> {
    let (s, layer) = ctx.resolve::<FactorSettings>("factor", args)?;
    let input = required(&s.input, "input")?;
    let first = s.solve_config(&s.algorithm)?;
    let second = s.combine.as_deref().map(|a| s.solve_config(a)).transpose()?;
    if second.as_ref().is_some_and(|c| c.algorithm == first.algorithm) {
        return Err(CliError::Usage("--combine must name a different algorithm".into()));
    }
    let rec = Recorder::new("factor", &ctx.argv, s.seed, layer, &s.out)?;
    rec.run(|rec| {
        rec.input(&input)?;
        let (grid, y) = read_signals(&input)?;
        let (fp, report) = match &second {
            Some(second) => combine(&y, Some(&grid), &first, second, s.switch_residue)?,
            None => factor(&y, Some(&grid), &first, None)?,
        };
        rec.write("A.csv", &signals_text(&grid, &fp.a, "a")?)?;
        rec.write("X.csv", &matrix_text(&fp.x, "x"))?;
        if let Some(models) = &fp.models {
            rec.write("models.json", &to_json(models))?;
        }
        rec.write("report.json", &to_json(&report))?;
        rec.write("trace.csv", &trace_text(&report))?;
        let status = match report.status {
            SolverStatus::TimeBudget | SolverStatus::MaxOuter => RunStatus::Partial,
            _ => RunStatus::Complete,
        };
        let summary = format!(
            "factor: {} rank {} on {}x{}, residue {:e} after {} iterations ({:?})",
            report.algorithm,
            s.rank,
            y.nrows(),
            y.ncols(),
            report.final_residue(),
            report.iterations(),
            report.status
        );
        Ok((status, summary))
    })
}
