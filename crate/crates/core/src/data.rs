//! Synthetic and semi-synthetic datasets, noise injection and CSV I/O.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::polybasis::{ChebPoly, Grid};
use crate::project::{project_least_squares, Method, ProjectorConfig};
use crate::rational::{
    check_uniqueness, eval_rational, half_degrees, RationalModel, UniquenessMode, UniquenessReport,
    DEFAULT_EPS,
};

/// Projection tolerance used when generating factors.
pub const GENERATION_TOL: f64 = 1e-8;
pub const MAX_GENERATION_ATTEMPTS: usize = 10;

// independent random streams per generator
const STREAM_WEIGHTS: u64 = 1;
const STREAM_FACTORS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_COLUMNS: u64 = 4;
const STREAM_MODEL: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    PurelySynthetic,
    FromSignalsCsv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub d1: usize,
    pub d2: usize,
    pub snr_db: Option<f64>,
    pub seed: u64,
    pub kind: SynthKind,
}

impl SynthSpec {
    pub fn synthetic(
        n: usize,
        m: usize,
        r: usize,
        d1: usize,
        d2: usize,
        snr_db: Option<f64>,
        seed: u64,
    ) -> Self {
        SynthSpec {
            n,
            m,
            r,
            d1,
            d2,
            snr_db,
            seed,
            kind: SynthKind::PurelySynthetic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.r == 0 {
            return Err(Error::InvalidConfig("n and r must be at least 1".into()));
        }
        if self.m == 0 && self.kind == SynthKind::PurelySynthetic {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        half_degrees(self.d1, self.d2)?;
        if let Some(s) = self.snr_db {
            if s.is_nan() {
                return Err(Error::InvalidConfig("snr is NaN".into()));
            }
        }
        Ok(())
    }
}

/// Generated factors with the uniqueness diagnosis of the final attempt.
#[derive(Debug, Clone)]
pub struct GeneratedFactors {
    pub models: Vec<RationalModel>,
    pub uniqueness: UniquenessReport,
    pub attempts: usize,
    /// Set when no attempt satisfied the uniqueness condition.
    pub uniqueness_warning: bool,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub grid: Grid,
    pub models: Vec<RationalModel>,
    pub a_true: DMatrix<f64>,
    pub x_true: DMatrix<f64>,
    /// Noiseless product `A X^T`, `m x n`.
    pub y_clean: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub uniqueness: UniquenessReport,
    pub attempts: usize,
    pub uniqueness_warning: bool,
}

/// `n x r` matrix whose rows are i.i.d. Dirichlet(1/r, ..., 1/r).
pub fn gen_weights(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
    if r == 1 {
        return DMatrix::from_element(n, 1, 1.0);
    }
    let mut rng = rng_for(seed, STREAM_WEIGHTS);
    let gamma = Gamma::new(1.0 / r as f64, 1.0).expect("positive shape");
    let mut x = DMatrix::zeros(n, r);
    for i in 0..n {
        loop {
            let row: Vec<f64> = (0..r).map(|_| gamma.sample(&mut rng)).collect();
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                for (j, v) in row.into_iter().enumerate() {
                    x[(i, j)] = v / s;
                }
                break;
            }
        }
    }
    x
}

fn random_target(rng: &mut ChaCha8Rng, d1: usize, grid: &Grid) -> DVector<f64> {
    let q = ChebPoly::new(
        (0..=d1 / 2)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect(),
    );
    let p = q.square();
    let t = grid.tau_std();
    let pv: Vec<f64> = t.iter().map(|&s| p.eval(s)).collect();
    let pmax = pv
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let a: f64 = rng.random_range(-1.0..=1.0);
    let b: f64 = rng.random_range(0.05..=0.3);
    let frac: f64 = rng.random_range(0.1..=0.5);
    // peak value c / b^2 is `frac` of the polynomial's maximum
    let c = frac * pmax * b * b;
    DVector::from_iterator(
        t.len(),
        t.iter()
            .zip(&pv)
            .map(|(&s, &v)| v + c / ((s - a).powi(2) + b * b)),
    )
}

/// `r` random nonnegative rational functions of degree `(d1, d2)` sampled on `grid`.
pub fn gen_rational_factors(
    r: usize,
    d1: usize,
    d2: usize,
    grid: &Grid,
    seed: u64,
) -> Result<GeneratedFactors> {
    let (d1p, d2p) = half_degrees(d1, d2)?;
    let mut rng = rng_for(seed, STREAM_FACTORS);
    let mut cfg = ProjectorConfig::new(Method::LeastSquares, d1p, d2p);
    cfg.tol = GENERATION_TOL;
    let mut last = None;
    for attempt in 1..=MAX_GENERATION_ATTEMPTS {
        let models = (0..r)
            .map(|_| {
                let z = random_target(&mut rng, d1, grid);
                project_least_squares(&z, grid, &cfg).map(|p| p.model)
            })
            .collect::<Result<Vec<_>>>()?;
        // badly scaled fits can defeat the pole computation; draw again
        let report = match check_uniqueness(&models, grid.len(), UniquenessMode::Corollary) {
            Ok(rep) => rep,
            Err(e) if attempt < MAX_GENERATION_ATTEMPTS || last.is_some() => {
                warn!("attempt {attempt}: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        if report.holds {
            return Ok(GeneratedFactors {
                models,
                uniqueness: report,
                attempts: attempt,
                uniqueness_warning: false,
            });
        }
        last = Some((models, report));
    }
    let (models, uniqueness) = last.expect("at least one attempt");
    warn!("uniqueness condition not met after {MAX_GENERATION_ATTEMPTS} attempts");
    Ok(GeneratedFactors {
        models,
        uniqueness,
        attempts: MAX_GENERATION_ATTEMPTS,
        uniqueness_warning: true,
    })
}

/// Adds Gaussian noise scaled so that the realized SNR equals `snr_db`.
/// An infinite SNR returns the input unchanged.
pub fn add_noise(yc: &DMatrix<f64>, snr_db: f64, seed: u64) -> Result<DMatrix<f64>> {
    let ny = yc.norm();
    if ny == 0.0 {
        return Err(Error::ZeroSignal);
    }
    if snr_db == f64::INFINITY {
        return Ok(yc.clone());
    }
    let mut rng = rng_for(seed, STREAM_NOISE);
    let noise = DMatrix::from_fn(yc.nrows(), yc.ncols(), |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let scale = ny / (noise.norm() * 10f64.powf(snr_db / 20.0));
    Ok(yc + noise * scale)
}

/// Model with i.i.d. standard normal free parameters.
pub fn random_model(d1: usize, d2: usize, interval: (f64, f64), seed: u64) -> Result<RationalModel> {
    let (d1p, d2p) = half_degrees(d1, d2)?;
    let base = RationalModel::zeros(d1p, d2p, DEFAULT_EPS, interval);
    let mut rng = rng_for(seed, STREAM_MODEL);
    let theta: Vec<f64> = (0..base.n_params())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(base.with_params(&theta))
}

/// A sampled random rational function, optionally with noise, for projection benchmarks.
#[derive(Debug, Clone)]
pub struct ProjectionInstance {
    pub grid: Grid,
    pub model: RationalModel,
    pub clean: DVector<f64>,
    pub z: DVector<f64>,
}

/// Degree-`(d1, d2)` instance on `m` equispaced points of `[-1, 1]`.
pub fn projection_instance(
    d1: usize,
    d2: usize,
    m: usize,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<ProjectionInstance> {
    let grid = Grid::equispaced(m, -1.0, 1.0)?;
    let model = random_model(d1, d2, grid.interval(), seed)?;
    let clean = eval_rational(&model, &grid)?;
    let z = match snr_db {
        Some(snr) => {
            let noisy = add_noise(&DMatrix::from_column_slice(m, 1, clean.as_slice()), snr, seed)?;
            noisy.column(0).into_owned()
        }
        None => clean.clone(),
    };
    Ok(ProjectionInstance { grid, model, clean, z })
}

/// Builds `Y = A X^T + N` according to `spec`.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (grid, models, uniqueness, attempts, uniqueness_warning) = match &spec.kind {
        SynthKind::PurelySynthetic => {
            let grid = Grid::equispaced(spec.m, -1.0, 1.0)?;
            let g = gen_rational_factors(spec.r, spec.d1, spec.d2, &grid, spec.seed)?;
            (
                grid,
                g.models,
                g.uniqueness,
                g.attempts,
                g.uniqueness_warning,
            )
        }
        SynthKind::FromSignalsCsv(path) => {
            let (tau, signals) = load_signals_csv(path)?;
            if signals.ncols() < spec.r {
                return Err(Error::InvalidConfig(format!(
                    "{} signals available, r = {}",
                    signals.ncols(),
                    spec.r
                )));
            }
            let grid = Grid::new(tau)?;
            let (d1p, d2p) = half_degrees(spec.d1, spec.d2)?;
            let mut cfg = ProjectorConfig::new(Method::LeastSquares, d1p, d2p);
            cfg.tol = GENERATION_TOL;
            let mut cols: Vec<usize> = (0..signals.ncols()).collect();
            cols.shuffle(&mut rng_for(spec.seed, STREAM_COLUMNS));
            let models = cols[..spec.r]
                .iter()
                .map(|&c| {
                    project_least_squares(&signals.column(c).into_owned(), &grid, &cfg)
                        .map(|p| p.model)
                })
                .collect::<Result<Vec<_>>>()?;
            let report = check_uniqueness(&models, grid.len(), UniquenessMode::Corollary)?;
            let warn_flag = !report.holds;
            if warn_flag {
                warn!("selected signals do not satisfy the uniqueness condition");
            }
            (grid, models, report, 1, warn_flag)
        }
    };
    let m = grid.len();
    let mut a_true = DMatrix::zeros(m, spec.r);
    for (j, model) in models.iter().enumerate() {
        a_true.set_column(j, &eval_rational(model, &grid)?);
    }
    let x_true = gen_weights(spec.n, spec.r, spec.seed);
    let y_clean = &a_true * x_true.transpose();
    let y = match spec.snr_db {
        Some(snr) => add_noise(&y_clean, snr, spec.seed)?,
        None => y_clean.clone(),
    };
    Ok(SynthData {
        spec: spec.clone(),
        grid,
        models,
        a_true,
        x_true,
        y_clean,
        y,
        uniqueness,
        attempts,
        uniqueness_warning,
    })
}

// ---------------------------------------------------------------- CSV

/// Parsed CSV table: optional header and numeric body.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(vals) => rows.push(vals),
            Err(_) if rows.is_empty() && header.is_none() => {
                header = Some(fields.iter().map(|s| s.to_string()).collect());
            }
            Err(_) => {
                return Err(Error::MalformedCsv(format!(
                    "non-numeric field on line {}",
                    lineno + 1
                )));
            }
        }
    }
    let ncols = rows
        .first()
        .map(Vec::len)
        .or_else(|| header.as_ref().map(Vec::len))
        .unwrap_or(0);
    if let Some(h) = &header {
        if h.len() != ncols {
            return Err(Error::MalformedCsv(format!(
                "header has {} fields, rows have {ncols}",
                h.len()
            )));
        }
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::MalformedCsv(format!(
            "row {} has {} fields, expected {ncols}",
            i + 1,
            rows[i].len()
        )));
    }
    let data = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    Ok(CsvTable { header, data })
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn format_csv(data: &DMatrix<f64>, header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_f64(data[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_csv(&text)
}

pub fn write_csv(path: &Path, data: &DMatrix<f64>, header: Option<&[String]>) -> Result<()> {
    std::fs::write(path, format_csv(data, header))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Splits a table into a strictly increasing `tau` column and the signals.
pub fn split_signals(table: &CsvTable) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = &table.data;
    if d.ncols() < 2 || d.nrows() == 0 {
        return Err(Error::MalformedCsv(
            "need a tau column and at least one signal".into(),
        ));
    }
    let tau: Vec<f64> = d.column(0).iter().copied().collect();
    if let Some(i) = tau.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::NonMonotoneTau(i + 1));
    }
    Ok((tau, d.columns(1, d.ncols() - 1).into_owned()))
}

pub fn load_signals_csv(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>)> {
    split_signals(&read_csv(path)?)
}

/// Writes `tau` as the first column followed by one column per signal.
pub fn save_signals_csv(
    path: &Path,
    tau: &[f64],
    signals: &DMatrix<f64>,
    header: Option<&[String]>,
) -> Result<()> {
    std::fs::write(path, format_signals_csv(tau, signals, header)?)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn format_signals_csv(
    tau: &[f64],
    signals: &DMatrix<f64>,
    header: Option<&[String]>,
) -> Result<String> {
    if tau.len() != signals.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} tau values, {} rows",
            tau.len(),
            signals.nrows()
        )));
    }
    let mut full = DMatrix::zeros(tau.len(), signals.ncols() + 1);
    full.set_column(0, &DVector::from_column_slice(tau));
    full.columns_mut(1, signals.ncols()).copy_from(signals);
    Ok(format_csv(&full, header))
}

/// Header `tau, prefix1, prefix2, ...`.
pub fn signal_header(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once("tau".to_string())
        .chain((1..=n).map(|k| format!("{prefix}{k}")))
        .collect()
}
