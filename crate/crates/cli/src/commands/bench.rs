use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use log::info;
use ratnmf::data::{projection_instance, synthesize, SynthSpec};
use ratnmf::factorize::{factor, Algorithm, SolveConfig};
use ratnmf::metrics::{relative_residue, sir};
use ratnmf::project::{project, Method, ProjectorConfig};
use ratnmf::rational::half_degrees;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::error::{CliError, CliResult};
use crate::manifest::{Recorder, RunStatus};

pub const BENCH_HEADER: &str =
    "kind,method,n,m,r,d1,d2,snr_db,seed,seconds,iters,rel_err,mean_sir_db,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchKind {
    Projection,
    Factorization,
}

fn parse_snr(s: &str) -> Result<Option<f64>, String> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "none" | "exact" => Ok(None),
        v => v.parse::<f64>().map(Some).map_err(|e| e.to_string()),
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchArgs {
    /// Sweep to run
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<BenchKind>,
    /// Projection methods
    #[arg(long, value_delimiter = ',', value_parser = super::project::METHOD_NAMES)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    /// Factorization algorithms
    #[arg(long, value_delimiter = ',', value_parser = super::factor::ALGORITHM_NAMES)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithms: Option<Vec<String>>,
    /// Degrees d, used as (d, d)
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees: Option<Vec<usize>>,
    /// Numbers of discretization points
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<usize>>,
    /// Noise levels in dB; `inf` for exact data
    #[arg(long, value_delimiter = ',', value_parser = parse_snr)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<Vec<Option<f64>>>,
    /// Numbers of observations (factorization)
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    /// Ranks (factorization)
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
    /// Trials per setting; trial t uses seed + t
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    /// Projection tolerance
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Seconds per factorization run
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_budget: Option<f64>,
    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Unset list fields take the defaults of the chosen sweep.
#[derive(Debug, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case")]
pub struct BenchSettings {
    pub kind: BenchKind,
    pub methods: Vec<String>,
    pub algorithms: Vec<String>,
    pub degrees: Option<Vec<usize>>,
    pub points: Vec<usize>,
    pub snr: Vec<Option<f64>>,
    pub n: Vec<usize>,
    pub ranks: Vec<usize>,
    pub trials: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub time_budget: Option<f64>,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            kind: BenchKind::Projection,
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            algorithms: Algorithm::ALL.iter().map(|a| a.name().to_string()).collect(),
            degrees: None,
            points: vec![250],
            snr: vec![None],
            n: vec![20, 50, 100],
            ranks: vec![3],
            trials: 10,
            tol: 1e-8,
            max_iter: 1000,
            time_budget: None,
            out: PathBuf::from("."),
            seed: 0,
            threads: None,
        }
    }
}

struct Row {
    kind: &'static str,
    method: String,
    n: Option<usize>,
    m: usize,
    r: Option<usize>,
    d: usize,
    snr: Option<f64>,
    seed: u64,
    seconds: f64,
    outcome: Result<(usize, f64, Option<f64>), String>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    fn write(&self, out: &mut String) {
        let (iters, err, sir, status) = match &self.outcome {
            Ok((i, e, s)) => (i.to_string(), format!("{e:?}"), opt(s.map(|x| format!("{x:?}"))), "ok".to_string()),
            Err(msg) => (String::new(), String::new(), String::new(), format!("error: {}", msg.replace([',', '\n'], ";"))),
        };
        let snr = self.snr.map_or("inf".to_string(), |s| format!("{s:?}"));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{snr},{},{:?},{iters},{err},{sir},{status}",
            self.kind,
            self.method,
            opt(self.n),
            self.m,
            opt(self.r),
            self.d,
            self.d,
            self.seed,
            self.seconds
        )
        .expect("string write");
    }
}

fn projection_rows(s: &BenchSettings, out: &mut String) -> CliResult<usize> {
    let methods = s
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    let degrees = s.degrees.clone().unwrap_or_else(|| vec![16]);
    let mut count = 0;
    for &d in &degrees {
        let (d1p, d2p) = half_degrees(d, d)?;
        for &m in &s.points {
            for &snr in &s.snr {
                for t in 0..s.trials {
                    let seed = s.seed + t;
                    let inst = projection_instance(d, d, m, snr, seed)?;
                    for &method in &methods {
                        let cfg = ProjectorConfig {
                            tol: s.tol,
                            max_iter: s.max_iter,
                            ..ProjectorConfig::new(method, d1p, d2p)
                        };
                        let start = Instant::now();
                        let outcome = project(&inst.z, &inst.grid, &cfg)
                            .map(|p| (p.iters, p.rel_err, None))
                            .map_err(|e| e.to_string());
                        let row = Row {
                            kind: "projection",
                            method: method.name().into(),
                            n: None,
                            m,
                            r: None,
                            d,
                            snr,
                            seed,
                            seconds: start.elapsed().as_secs_f64(),
                            outcome,
                        };
                        info!("projection d={d} m={m} {method} seed {seed}: {:?}", row.outcome);
                        row.write(out);
                        count += 1;
                    }
                }
            }
        }
    }
    Ok(count)
}

fn factorization_rows(s: &BenchSettings, out: &mut String) -> CliResult<usize> {
    let algorithms = s
        .algorithms
        .iter()
        .map(|a| a.parse::<Algorithm>())
        .collect::<Result<Vec<_>, _>>()?;
    let degrees = s.degrees.clone().unwrap_or_else(|| vec![4]);
    let mut count = 0;
    for &d in &degrees {
        for &m in &s.points {
            for &n in &s.n {
                for &r in &s.ranks {
                    for &snr in &s.snr {
                        for t in 0..s.trials {
                            let seed = s.seed + t;
                            let data = synthesize(&SynthSpec::synthetic(n, m, r, d, d, snr, seed))?;
                            for &alg in &algorithms {
                                let cfg = SolveConfig {
                                    seed,
                                    time_budget: s.time_budget,
                                    ..SolveConfig::new(alg, r, d, d)
                                };
                                let start = Instant::now();
                                let outcome = factor(&data.y, Some(&data.grid), &cfg, None)
                                    .and_then(|(fp, rep)| {
                                        let res = relative_residue(&data.y_clean, &fp.a, &fp.x)?;
                                        let sir = sir(&data.a_true, &fp.a)?;
                                        Ok((rep.iterations(), res, Some(sir.mean_db)))
                                    })
                                    .map_err(|e| e.to_string());
                                let row = Row {
                                    kind: "factorization",
                                    method: alg.name().into(),
                                    n: Some(n),
                                    m,
                                    r: Some(r),
                                    d,
                                    snr,
                                    seed,
                                    seconds: start.elapsed().as_secs_f64(),
                                    outcome,
                                };
                                info!("factorization n={n} r={r} d={d} {alg} seed {seed}: {:?}", row.outcome);
                                row.write(out);
                                count += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(count)
}

pub fn run(ctx: &Context, args: &BenchArgs) -> CliResult<String> {
    let (s, layer) = ctx.resolve::<BenchSettings>("bench", args)?;
    if s.tol <= 0.0 || s.max_iter == 0 {
        return Err(CliError::Usage("tol and max-iter must be positive".into()));
    }
    let rec = Recorder::new("bench", &ctx.argv, s.seed, layer, &s.out)?;
    rec.run(|rec| {
        let mut out = format!("{BENCH_HEADER}\n");
        let rows = match s.kind {
            BenchKind::Projection => projection_rows(&s, &mut out)?,
            BenchKind::Factorization => factorization_rows(&s, &mut out)?,
        };
        let path = rec.write("bench.csv", &out)?;
        Ok((
            RunStatus::Complete,
            format!("bench: {rows} rows -> {}", path.display()),
        ))
    })
}
