//! R-NMF solvers: joint nonlinear least squares (R-NLS), alternating
//! nonlinear least squares (R-ANLS), hierarchical updates with projection
//! (R-HANLS), and the vector HALS baseline.
//!
//! Conventions: `Y` is `m x n` (one signal per column, sampled on the grid),
//! `A` is `m x r` and `X` is `n x r`, so that `Y ~ A X^T`. Residues are
//! relative to `||Y||_F`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics;
use crate::nls::{self, FnProblem, NlsOptions, NlsStatus};
use crate::par::{self, ExecMode};
use crate::polybasis::{ChebPoly, Grid};
use crate::project::{project, Method, ProjectorConfig, WarmState};
use crate::rational::{eval_rational, eval_with_jacobian, half_degrees, RationalModel};

/// Relative residue at which [`combine`] hands over to the second solver.
pub const DEFAULT_SWITCH_RESIDUE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Rnls,
    Ranls,
    Rhanls,
    Hals,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Rnls, Algorithm::Ranls, Algorithm::Rhanls, Algorithm::Hals];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Rnls => "rnls",
            Algorithm::Ranls => "ranls",
            Algorithm::Rhanls => "rhanls",
            Algorithm::Hals => "hals",
        }
    }

    /// Seconds allowed when no budget is configured.
    pub fn default_budget(self) -> f64 {
        match self {
            Algorithm::Rhanls | Algorithm::Hals => 200.0,
            Algorithm::Rnls | Algorithm::Ranls => 1000.0,
        }
    }

    pub fn is_rational(self) -> bool {
        self != Algorithm::Hals
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "rnls" => Ok(Algorithm::Rnls),
            "ranls" => Ok(Algorithm::Ranls),
            "rhanls" => Ok(Algorithm::Rhanls),
            "hals" => Ok(Algorithm::Hals),
            _ => Err(Error::InvalidConfig(format!("unknown algorithm '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub algorithm: Algorithm,
    /// Projection settings for R-HANLS; `tol` is the final tolerance of the
    /// schedule and `eps` is used for every model. Degrees are taken from `d1`, `d2`.
    pub projector: ProjectorConfig,
    pub rank: usize,
    pub d1: usize,
    pub d2: usize,
    pub stop_tol: f64,
    /// Seconds; `None` selects the algorithm default.
    pub time_budget: Option<f64>,
    pub seed: u64,
    pub max_outer: usize,
    /// Iteration cap of each R-ANLS subproblem.
    pub inner_max_iter: usize,
    pub exec: ExecMode,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            algorithm: Algorithm::Ranls,
            projector: ProjectorConfig::default(),
            rank: 1,
            d1: 4,
            d2: 4,
            stop_tol: 1e-12,
            time_budget: None,
            seed: 0,
            max_outer: 10_000,
            inner_max_iter: 50,
            exec: ExecMode::default(),
        }
    }
}

impl SolveConfig {
    pub fn new(algorithm: Algorithm, rank: usize, d1: usize, d2: usize) -> Self {
        SolveConfig {
            algorithm,
            rank,
            d1,
            d2,
            ..Default::default()
        }
    }

    pub fn budget(&self) -> f64 {
        self.time_budget.unwrap_or_else(|| self.algorithm.default_budget())
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.budget() > 0.0) {
            return Err(Error::InvalidConfig("time budget must be positive".into()));
        }
        if self.max_outer == 0 || self.inner_max_iter == 0 {
            return Err(Error::InvalidConfig("iteration limits must be at least 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidConfig("stop_tol must be nonnegative".into()));
        }
        if self.algorithm.is_rational() {
            half_degrees(self.d1, self.d2)?;
            self.projector.validate()?;
        }
        Ok(())
    }

    fn half(&self) -> (usize, usize) {
        (self.d1 / 2, self.d2 / 2)
    }

    fn eps(&self) -> f64 {
        self.projector.eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    /// Absent for the HALS baseline.
    pub models: Option<Vec<RationalModel>>,
    pub a: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl FactorPair {
    pub fn product(&self) -> DMatrix<f64> {
        &self.a * self.x.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    /// Stopping criterion below `stop_tol`, or the inner solver converged.
    Converged,
    ZeroResidual,
    TimeBudget,
    MaxOuter,
    /// Residue fell below the hand-over threshold of [`combine`].
    Switched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: String,
    pub initial_residue: f64,
    /// `||Y - A X^T|| / ||Y||` after each outer iteration.
    pub residue_trace: Vec<f64>,
    pub sc_trace: Vec<f64>,
    /// Seconds since the start of the run, per trace entry.
    pub wall_times: Vec<f64>,
    pub status: RunStatus,
    pub converged_at: Option<usize>,
    pub seconds_to_converge: Option<f64>,
    pub reseeds: usize,
    /// Trace index where the second solver of a combined run starts.
    pub switch_at: Option<usize>,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn final_residue(&self) -> f64 {
        self.residue_trace.last().copied().unwrap_or(self.initial_residue)
    }

    pub fn iterations(&self) -> usize {
        self.residue_trace.len()
    }

    fn finalize(&mut self, seconds: f64) {
        self.converged_at = metrics::converged_at(&self.sc_trace);
        self.seconds_to_converge = metrics::seconds_to_converge(&self.wall_times, self.converged_at);
        self.total_seconds = seconds;
    }
}

/// `(prev - curr) / curr`.
pub fn stopping_criterion(prev_err: f64, curr_err: f64) -> Result<f64> {
    if curr_err == 0.0 {
        return Err(Error::ZeroError);
    }
    Ok((prev_err - curr_err) / curr_err)
}

// ------------------------------------------------------------ tracking

struct Tracker {
    start: Instant,
    ny: f64,
    prev_err: f64,
    budget: f64,
    stop_tol: f64,
    max_outer: usize,
    until: Option<f64>,
    report: RunReport,
}

impl Tracker {
    fn new(start: Instant, y: &DMatrix<f64>, cfg: &SolveConfig, until: Option<f64>, err0: f64) -> Self {
        let ny = y.norm();
        Tracker {
            start,
            ny,
            prev_err: err0,
            budget: cfg.budget(),
            stop_tol: cfg.stop_tol,
            max_outer: cfg.max_outer,
            until,
            report: RunReport {
                algorithm: cfg.algorithm.name().into(),
                initial_residue: residue_of(err0, ny),
                residue_trace: Vec::new(),
                sc_trace: Vec::new(),
                wall_times: Vec::new(),
                status: RunStatus::MaxOuter,
                converged_at: None,
                seconds_to_converge: None,
                reseeds: 0,
                switch_at: None,
                total_seconds: 0.0,
            },
        }
    }

    /// Stop reason before any iteration.
    fn initial_stop(&self) -> Option<RunStatus> {
        if self.prev_err == 0.0 {
            Some(RunStatus::ZeroResidual)
        } else if self.until.is_some_and(|u| self.report.initial_residue < u) {
            Some(RunStatus::Switched)
        } else {
            None
        }
    }

    /// Checked at the top of each outer iteration.
    fn boundary_stop(&self) -> Option<RunStatus> {
        if self.report.residue_trace.len() >= self.max_outer {
            Some(RunStatus::MaxOuter)
        } else if self.start.elapsed().as_secs_f64() >= self.budget {
            Some(RunStatus::TimeBudget)
        } else {
            None
        }
    }

    fn record(&mut self, err: f64, may_stop: bool) -> Option<RunStatus> {
        let residue = residue_of(err, self.ny);
        let sc = stopping_criterion(self.prev_err, err);
        self.report.residue_trace.push(residue);
        self.report.sc_trace.push(*sc.as_ref().unwrap_or(&0.0));
        self.report.wall_times.push(self.start.elapsed().as_secs_f64());
        self.prev_err = err;
        debug!("{} iter {}: residue {residue:e}", self.report.algorithm, self.report.residue_trace.len());
        match sc {
            Err(_) => Some(RunStatus::ZeroResidual),
            Ok(_) if self.until.is_some_and(|u| residue < u) => Some(RunStatus::Switched),
            Ok(v) if may_stop && v < self.stop_tol => Some(RunStatus::Converged),
            Ok(_) => None,
        }
    }

    fn finish(mut self, status: RunStatus, reseeds: usize) -> RunReport {
        self.report.status = status;
        self.report.reseeds = reseeds;
        self.report.finalize(self.start.elapsed().as_secs_f64());
        info!(
            "{}: {:?} after {} iterations, residue {:e}",
            self.report.algorithm,
            status,
            self.report.iterations(),
            self.report.final_residue()
        );
        self.report
    }
}

fn residue_of(err: f64, ny: f64) -> f64 {
    if ny == 0.0 {
        0.0
    } else {
        err / ny
    }
}

fn residual_norm(y: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (y - a * x.transpose()).norm()
}

// ------------------------------------------------------------ setup

fn check_inputs(y: &DMatrix<f64>, grid: Option<&Grid>, cfg: &SolveConfig) -> Result<()> {
    cfg.validate()?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    if y.ncols() == 0 || y.nrows() == 0 {
        return Err(Error::ShapeMismatch("data matrix is empty".into()));
    }
    match grid {
        Some(g) if g.len() != y.nrows() => Err(Error::ShapeMismatch(format!(
            "data has {} rows, grid has {} points",
            y.nrows(),
            g.len()
        ))),
        None if cfg.algorithm.is_rational() => {
            Err(Error::InvalidConfig(format!("{} needs a discretization grid", cfg.algorithm)))
        }
        _ => Ok(()),
    }
}

fn sample_models(models: &[RationalModel], grid: &Grid) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(grid.len(), models.len());
    for (j, model) in models.iter().enumerate() {
        a.set_column(j, &eval_rational(model, grid)?);
    }
    Ok(a)
}

fn random_model(rng: &mut ChaCha8Rng, d1p: usize, d2p: usize, eps: f64, interval: (f64, f64)) -> RationalModel {
    let mut normal = |s: f64| -> f64 { s * rng.sample::<f64, _>(StandardNormal) };
    let base = RationalModel::zeros(d1p, d2p, eps, interval);
    let h1 = ChebPoly::new((0..=d1p).map(|_| normal(1.0)).collect());
    let h2 = ChebPoly::new((0..d1p).map(|_| normal(0.1)).collect());
    let g1 = ChebPoly::new(base.g1.coeffs.iter().map(|c| c + normal(0.1)).collect());
    let g2 = ChebPoly::new(base.g2.coeffs.iter().map(|c| c + normal(0.1)).collect());
    RationalModel { h1, h2, g1, g2, ..base }.normalize_monic()
}

/// One thresholded HALS pass over the columns of `X`, from zero.
fn hals_x_from_zero(y: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(y.ncols(), a.ncols());
    for s in 0..a.ncols() {
        update_x_column(y, a, &mut x, s);
    }
    x
}

/// Closed-form thresholded update of `X[:, s]`; returns false when `A[:, s] = 0`.
fn update_x_column(y: &DMatrix<f64>, a: &DMatrix<f64>, x: &mut DMatrix<f64>, s: usize) -> bool {
    let a_s = a.column(s);
    let na2 = a_s.norm_squared();
    if na2 == 0.0 {
        return false;
    }
    let ata_s = a.tr_mul(&a_s);
    let num = y.tr_mul(&a_s) - &*x * ata_s + x.column(s) * na2;
    let col = num.map(|v| (v / na2).max(0.0));
    x.set_column(s, &col);
    true
}

/// Unconstrained minimizer for `A[:, s]`; `None` when `X[:, s] = 0`.
fn a_column_target(y: &DMatrix<f64>, a: &DMatrix<f64>, x: &DMatrix<f64>, s: usize) -> Option<DVector<f64>> {
    let x_s = x.column(s);
    let nx2 = x_s.norm_squared();
    if nx2 == 0.0 {
        return None;
    }
    let xtx_s = x.tr_mul(&x_s);
    Some((y * x_s - a * xtx_s + a.column(s) * nx2) / nx2)
}

/// Initial factors: seeded random models (or random nonnegative columns for
/// HALS) followed by one closed-form X pass.
pub fn initialize(y: &DMatrix<f64>, grid: Option<&Grid>, cfg: &SolveConfig) -> Result<FactorPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let r = cfg.rank;
    if cfg.algorithm.is_rational() {
        let grid = grid.ok_or_else(|| Error::InvalidConfig("a grid is required".into()))?;
        let (d1p, d2p) = cfg.half();
        let models: Vec<RationalModel> = (0..r)
            .map(|_| random_model(&mut rng, d1p, d2p, cfg.eps(), grid.interval()))
            .collect();
        let a = sample_models(&models, grid)?;
        let x = hals_x_from_zero(y, &a);
        Ok(FactorPair {
            models: Some(models),
            a,
            x,
        })
    } else {
        let a = DMatrix::from_fn(y.nrows(), r, |_, _| rng.random_range(0.0..1.0));
        let x = hals_x_from_zero(y, &a);
        Ok(FactorPair { models: None, a, x })
    }
}

/// Brings a supplied starting point to the form required by `cfg`.
fn adopt_init(y: &DMatrix<f64>, grid: Option<&Grid>, cfg: &SolveConfig, init: FactorPair) -> Result<FactorPair> {
    if init.a.shape() != (y.nrows(), cfg.rank) || init.x.shape() != (y.ncols(), cfg.rank) {
        return Err(Error::ShapeMismatch(format!(
            "initial factors {:?} and {:?} do not fit data {:?} at rank {}",
            init.a.shape(),
            init.x.shape(),
            y.shape(),
            cfg.rank
        )));
    }
    if !cfg.algorithm.is_rational() {
        return Ok(FactorPair { models: None, ..init });
    }
    let grid = grid.ok_or_else(|| Error::InvalidConfig("a grid is required".into()))?;
    let (d1p, d2p) = cfg.half();
    let fits = init
        .models
        .as_ref()
        .is_some_and(|ms| ms.iter().all(|m| m.d1p == d1p && m.d2p == d2p && grid.matches_interval(m.interval)));
    if fits {
        return Ok(init);
    }
    // fit each column with a model of the requested degree
    let mut pc = ProjectorConfig::new(Method::LeastSquares, d1p, d2p);
    pc.tol = cfg.projector.tol;
    pc.eps = cfg.eps();
    let mut models = Vec::with_capacity(cfg.rank);
    let mut a = DMatrix::zeros(y.nrows(), cfg.rank);
    for s in 0..cfg.rank {
        let p = project(&init.a.column(s).into_owned(), grid, &pc)?;
        a.set_column(s, &p.fitted);
        models.push(p.model);
    }
    Ok(FactorPair {
        models: Some(models),
        a,
        x: init.x,
    })
}

fn zero_solution(y: &DMatrix<f64>, grid: Option<&Grid>, cfg: &SolveConfig) -> Result<FactorPair> {
    let models = if cfg.algorithm.is_rational() {
        let grid = grid.ok_or_else(|| Error::InvalidConfig("a grid is required".into()))?;
        let (d1p, d2p) = cfg.half();
        Some(vec![RationalModel::zeros(d1p, d2p, cfg.eps(), grid.interval()); cfg.rank])
    } else {
        None
    };
    Ok(FactorPair {
        models,
        a: DMatrix::zeros(y.nrows(), cfg.rank),
        x: DMatrix::zeros(y.ncols(), cfg.rank),
    })
}

// ------------------------------------------------------------ reseeding

/// Replacement `(a, x)` for a degenerate column `s`, from the dominant
/// nonnegative direction of the residual without that column.
fn reseed_direction(
    y: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> (DVector<f64>, DVector<f64>) {
    let mut rest = y - a * x.transpose();
    rest += a.column(s) * x.column(s).transpose();
    let (m, n) = rest.shape();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut u = DVector::zeros(m);
    for _ in 0..50 {
        u = &rest * &v;
        let nu = u.norm();
        if nu == 0.0 {
            break;
        }
        u /= nu;
        v = rest.tr_mul(&u);
        let nv = v.norm();
        if nv == 0.0 {
            break;
        }
        v /= nv;
    }
    let pos = u.map(|t| t.max(0.0));
    let neg = u.map(|t| (-t).max(0.0));
    let mut cand = if pos.norm() >= neg.norm() { pos } else { neg };
    if cand.norm() == 0.0 {
        cand = DVector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
    }
    let xs = rest.tr_mul(&cand).map(|t| (t / cand.norm_squared()).max(0.0));
    (cand, xs)
}

// ------------------------------------------------------------ R-NLS

fn split_models(theta: &DVector<f64>, templates: &[RationalModel]) -> Vec<RationalModel> {
    let mut off = 0;
    templates
        .iter()
        .map(|t| {
            let p = t.n_params();
            let m = t.with_params(&theta.as_slice()[off..off + p]);
            off += p;
            m
        })
        .collect()
}

fn models_with_jacobians(models: &[RationalModel], grid: &Grid) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    models
        .iter()
        .map(|m| eval_with_jacobian(m, grid, None).expect("models share the grid interval"))
        .collect()
}

/// Keeps accepted iterations (strict cost decrease) of an NLS trace.
fn accepted_steps(res: &nls::NlsResult) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut last = res.trace[0];
    for (&c, &t) in res.trace.iter().zip(&res.times).skip(1) {
        if c < last {
            out.push((c, t));
            last = c;
        }
    }
    out
}

/// Square-root parametrization of `X`, floored so that no entry starts at the
/// stationary point `C = 0`.
fn sqrt_weights(x: &DMatrix<f64>) -> DMatrix<f64> {
    let floor = 1e-3 * x.max().max(0.0);
    x.map(|v| v.max(floor).sqrt())
}

pub fn factor_rnls(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    init: Option<FactorPair>,
) -> Result<(FactorPair, RunReport)> {
    run(y, Some(grid), &SolveConfig { algorithm: Algorithm::Rnls, ..cfg.clone() }, init, None)
}

fn rnls_impl(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    start: Instant,
    state: FactorPair,
    until: Option<f64>,
) -> Result<(FactorPair, RunReport)> {
    let (m, n) = y.shape();
    let r = cfg.rank;
    let templates = state.models.clone().expect("rational state");
    let ny = y.norm();
    let p_models: usize = templates.iter().map(|t| t.n_params()).sum();
    let mut theta0 = DVector::zeros(p_models + n * r);
    let mut off = 0;
    for t in &templates {
        theta0.rows_mut(off, t.n_params()).copy_from(&t.params());
        off += t.n_params();
    }
    let c0 = sqrt_weights(&state.x);
    theta0.rows_mut(p_models, n * r).copy_from_slice(c0.as_slice());

    let err0 = residual_norm(y, &state.a, &state.x);
    let mut tracker = Tracker::new(start, y, cfg, until, err0);
    if let Some(st) = tracker.initial_stop() {
        return Ok((state, tracker.finish(st, 0)));
    }

    let unpack = |theta: &DVector<f64>| -> (Vec<RationalModel>, DMatrix<f64>) {
        let models = split_models(theta, &templates);
        let c = DMatrix::from_column_slice(n, r, &theta.as_slice()[p_models..]);
        (models, c)
    };
    let residual = |theta: &DVector<f64>| -> DVector<f64> {
        let (models, c) = unpack(theta);
        let a = sample_models(&models, grid).expect("models share the grid interval");
        let x = c.map(|v| v * v);
        let res = (&a * x.transpose() - y) / ny;
        DVector::from_column_slice(res.as_slice())
    };
    let jacobian = |theta: &DVector<f64>| -> DMatrix<f64> {
        let (models, c) = unpack(theta);
        let vj = models_with_jacobians(&models, grid);
        let mut jac = DMatrix::zeros(m * n, p_models + n * r);
        for i in 0..n {
            let mut off = 0;
            for (j, (f, jm)) in vj.iter().enumerate() {
                let p = jm.ncols();
                let xij = c[(i, j)] * c[(i, j)];
                jac.view_mut((m * i, off), (m, p)).copy_from(&(jm * (xij / ny)));
                off += p;
                let w = 2.0 * c[(i, j)] / ny;
                jac.view_mut((m * i, p_models + i + n * j), (m, 1)).copy_from(&(f * w));
            }
        }
        jac
    };
    let problem = FnProblem {
        n_params: theta0.len(),
        n_residuals: m * n,
        residual,
        jacobian,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let mut opts = NlsOptions::default().with_max_iter(cfg.max_outer).with_tol(cfg.stop_tol.max(1e-15));
    opts.time_budget = Some(std::time::Duration::from_secs_f64((cfg.budget() - elapsed).max(0.0)));
    opts.cost_target = until.map(|u| 0.5 * u * u);
    let res = nls::solve(&problem, &theta0, &opts)?;

    let offset = start.elapsed().as_secs_f64() - res.times.last().copied().unwrap_or(0.0);
    let steps = accepted_steps(&res);
    for &(cost, t) in &steps {
        tracker.record((2.0 * cost).sqrt() * ny, false);
        *tracker.report.wall_times.last_mut().expect("just pushed") = t + offset;
    }
    let status = if res.cost == 0.0 {
        RunStatus::ZeroResidual
    } else {
        match res.status {
            NlsStatus::Ftol | NlsStatus::Xtol | NlsStatus::Gtol => RunStatus::Converged,
            NlsStatus::MaxIter => RunStatus::MaxOuter,
            NlsStatus::TimeBudget => RunStatus::TimeBudget,
            NlsStatus::CostTarget => RunStatus::Switched,
        }
    };
    let (models, c) = unpack(&res.theta);
    let a = sample_models(&models, grid)?;
    let x = c.map(|v| v * v);
    Ok((
        FactorPair {
            models: Some(models),
            a,
            x,
        },
        tracker.finish(status, 0),
    ))
}

// ------------------------------------------------------------ R-ANLS

/// A-update with `X` fixed. The objective is compressed to `m x r` residuals
/// using `||A X^T - Y||^2 = ||(A - B) L||^2 + const` with `X^T X = L L^T` and
/// `B = Y X (X^T X)^+`.
fn ranls_a_step(
    y: &DMatrix<f64>,
    grid: &Grid,
    models: &[RationalModel],
    x: &DMatrix<f64>,
    opts: &NlsOptions,
) -> Result<Vec<RationalModel>> {
    let r = x.ncols();
    let m = y.nrows();
    let eig = (x.transpose() * x).symmetric_eigen();
    let smax = eig.eigenvalues.amax();
    let cut = 1e-12 * smax;
    let l = DMatrix::from_fn(r, r, |i, k| eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt());
    let pinv = DMatrix::from_fn(r, r, |i, k| {
        (0..r)
            .filter(|&q| eig.eigenvalues[q] > cut)
            .map(|q| eig.eigenvectors[(i, q)] * eig.eigenvectors[(k, q)] / eig.eigenvalues[q])
            .sum()
    });
    let b = y * x * pinv;
    let scale = (y * x).norm().max(f64::MIN_POSITIVE) / smax.max(f64::MIN_POSITIVE).sqrt();
    let p_total: usize = models.iter().map(|t| t.n_params()).sum();
    let mut theta0 = DVector::zeros(p_total);
    let mut off = 0;
    for t in models {
        theta0.rows_mut(off, t.n_params()).copy_from(&t.params());
        off += t.n_params();
    }
    let problem = FnProblem {
        n_params: p_total,
        n_residuals: m * r,
        residual: |theta: &DVector<f64>| {
            let ms = split_models(theta, models);
            let a = sample_models(&ms, grid).expect("models share the grid interval");
            let res = (a - &b) * &l / scale;
            DVector::from_column_slice(res.as_slice())
        },
        jacobian: |theta: &DVector<f64>| {
            let ms = split_models(theta, models);
            let vj = models_with_jacobians(&ms, grid);
            let mut jac = DMatrix::zeros(m * r, p_total);
            for k in 0..r {
                let mut off = 0;
                for (j, (_, jm)) in vj.iter().enumerate() {
                    let p = jm.ncols();
                    let w = l[(j, k)] / scale;
                    if w != 0.0 {
                        jac.view_mut((m * k, off), (m, p)).copy_from(&(jm * w));
                    }
                    off += p;
                }
            }
            jac
        },
    };
    let res = nls::solve(&problem, &theta0, opts)?;
    Ok(split_models(&res.theta, models))
}

/// X-update with `A` fixed: `n` independent problems `min_c ||A (c o c) - y_i||`,
/// compressed through the thin QR factorization of `A`.
fn ranls_x_step(y: &DMatrix<f64>, a: &DMatrix<f64>, c: &DMatrix<f64>, opts: &NlsOptions, mode: ExecMode) -> DMatrix<f64> {
    let r = a.ncols();
    let qr = a.clone().qr();
    let rmat = qr.r();
    let w = qr.q().tr_mul(y); // r x n
    let scale = w.norm().max(f64::MIN_POSITIVE);
    let solve_row = |i: usize| -> Vec<f64> {
        let wi = w.column(i).into_owned() / scale;
        let problem = FnProblem {
            n_params: r,
            n_residuals: r,
            residual: |cv: &DVector<f64>| &rmat * cv.map(|v| v * v) / scale - &wi,
            jacobian: |cv: &DVector<f64>| {
                let mut j = rmat.clone() / scale;
                for (mut col, cj) in j.column_iter_mut().zip(cv.iter()) {
                    col *= 2.0 * cj;
                }
                j
            },
        };
        let cost = |cv: &DVector<f64>| (problem.residual)(cv).norm_squared();
        let c0: DVector<f64> = c.row(i).transpose();
        let mut best = match nls::solve(&problem, &c0, opts) {
            Ok(res) => res.theta,
            Err(_) => c0.clone(),
        };
        // entries at zero never move under the squared parametrization
        if c0.iter().any(|&v| v == 0.0) {
            let lift = c0.amax().max(1e-3);
            let c1 = c0.map(|v| if v == 0.0 { 1e-2 * lift } else { v });
            if let Ok(res) = nls::solve(&problem, &c1, opts) {
                if cost(&res.theta) < cost(&best) {
                    best = res.theta;
                }
            }
        }
        best.iter().copied().collect()
    };
    let rows = par::map_indexed(mode, y.ncols(), solve_row);
    DMatrix::from_fn(y.ncols(), r, |i, j| rows[i][j])
}

pub fn factor_ranls(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    init: Option<FactorPair>,
) -> Result<(FactorPair, RunReport)> {
    run(y, Some(grid), &SolveConfig { algorithm: Algorithm::Ranls, ..cfg.clone() }, init, None)
}

fn ranls_impl(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    start: Instant,
    state: FactorPair,
    until: Option<f64>,
) -> Result<(FactorPair, RunReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut models = state.models.expect("rational state");
    let mut a = state.a;
    let mut x = state.x;
    let mut c = sqrt_weights(&x);
    x = c.map(|v| v * v);
    let opts = NlsOptions::default().with_max_iter(cfg.inner_max_iter).with_tol(1e-12);
    let mut tracker = Tracker::new(start, y, cfg, until, residual_norm(y, &a, &x));
    let mut reseeds = 0;
    let status = match tracker.initial_stop() {
        Some(st) => st,
        None => loop {
            if let Some(st) = tracker.boundary_stop() {
                break st;
            }
            models = ranls_a_step(y, grid, &models, &x, &opts)?;
            a = sample_models(&models, grid)?;
            c = ranls_x_step(y, &a, &c, &opts, cfg.exec);
            x = c.map(|v| v * v);
            for s in 0..cfg.rank {
                if x.column(s).norm_squared() == 0.0 || a.column(s).norm_squared() == 0.0 {
                    reseed_rational(y, grid, cfg, &mut models, &mut a, &mut x, s, &mut rng)?;
                    c.set_column(s, &x.column(s).map(f64::sqrt));
                    reseeds += 1;
                }
            }
            if let Some(st) = tracker.record(residual_norm(y, &a, &x), true) {
                break st;
            }
        },
    };
    Ok((
        FactorPair {
            models: Some(models),
            a,
            x,
        },
        tracker.finish(status, reseeds),
    ))
}

#[allow(clippy::too_many_arguments)]
fn reseed_rational(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    models: &mut [RationalModel],
    a: &mut DMatrix<f64>,
    x: &mut DMatrix<f64>,
    s: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (dir, _) = reseed_direction(y, a, x, s, rng);
    let (d1p, d2p) = cfg.half();
    let mut pc = ProjectorConfig::new(Method::LeastSquares, d1p, d2p);
    pc.eps = cfg.eps();
    pc.tol = cfg.projector.tol;
    let p = project(&dir, grid, &pc)?;
    models[s] = p.model;
    a.set_column(s, &p.fitted);
    x.set_column(s, &DVector::zeros(x.nrows()));
    update_x_column(y, a, x, s);
    debug!("reseeded column {s}");
    Ok(())
}

// ------------------------------------------------------------ R-HANLS

/// Projection tolerance at outer iteration `k`.
pub fn tolerance_schedule(k: usize, final_tol: f64) -> f64 {
    (1e-2 * 0.1f64.powi(k.min(300) as i32)).max(final_tol)
}

fn warm_from_model(method: Method, model: &RationalModel, fitted: &DVector<f64>, grid: &Grid) -> WarmState {
    match method {
        Method::LeastSquares | Method::AlternatingLs => WarmState::Model(model.clone()),
        Method::Conic | Method::RkfitPlus => {
            let g = model.denominator();
            let last = grid.tau_std().last().copied().unwrap_or(1.0);
            let v = g.eval(last);
            WarmState::Denominator(if v > 0.0 { g.scale(1.0 / v) } else { g })
        }
        Method::LinProj => WarmState::Fitted(fitted.clone()),
    }
}

pub fn factor_rhanls(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    init: Option<FactorPair>,
) -> Result<(FactorPair, RunReport)> {
    run(y, Some(grid), &SolveConfig { algorithm: Algorithm::Rhanls, ..cfg.clone() }, init, None)
}

fn rhanls_impl(
    y: &DMatrix<f64>,
    grid: &Grid,
    cfg: &SolveConfig,
    start: Instant,
    state: FactorPair,
    until: Option<f64>,
) -> Result<(FactorPair, RunReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut models = state.models.expect("rational state");
    let mut a = state.a;
    let mut x = state.x;
    let method = cfg.projector.method;
    let (d1p, d2p) = cfg.half();
    let mut warm: Vec<Option<WarmState>> = (0..cfg.rank)
        .map(|s| Some(warm_from_model(method, &models[s], &a.column(s).into_owned(), grid)))
        .collect();
    let mut tracker = Tracker::new(start, y, cfg, until, residual_norm(y, &a, &x));
    let mut reseeds = 0;
    let mut k = 0;
    let status = match tracker.initial_stop() {
        Some(st) => st,
        None => loop {
            if let Some(st) = tracker.boundary_stop() {
                break st;
            }
            let tol = tolerance_schedule(k, cfg.projector.tol);
            let mut pc = ProjectorConfig {
                d1p,
                d2p,
                tol,
                ..cfg.projector.clone()
            };
            if matches!(method, Method::Conic | Method::RkfitPlus) {
                pc.max_iter = 1;
            }
            for s in 0..cfg.rank {
                match a_column_target(y, &a, &x, s) {
                    Some(z) => {
                        pc.warm = warm[s].take();
                        let p = project(&z, grid, &pc)?;
                        a.set_column(s, &p.fitted);
                        models[s] = p.model;
                        warm[s] = Some(p.warm);
                    }
                    None => {
                        reseed_rational(y, grid, cfg, &mut models, &mut a, &mut x, s, &mut rng)?;
                        warm[s] = Some(warm_from_model(method, &models[s], &a.column(s).into_owned(), grid));
                        reseeds += 1;
                    }
                }
            }
            for s in 0..cfg.rank {
                if !update_x_column(y, &a, &mut x, s) || x.column(s).norm_squared() == 0.0 {
                    reseed_rational(y, grid, cfg, &mut models, &mut a, &mut x, s, &mut rng)?;
                    warm[s] = Some(warm_from_model(method, &models[s], &a.column(s).into_owned(), grid));
                    reseeds += 1;
                }
            }
            k += 1;
            // the stopping rule is only meaningful once the projections are accurate
            let ramped = tol <= cfg.projector.tol;
            if let Some(st) = tracker.record(residual_norm(y, &a, &x), ramped) {
                break st;
            }
        },
    };
    Ok((
        FactorPair {
            models: Some(models),
            a,
            x,
        },
        tracker.finish(status, reseeds),
    ))
}

// ------------------------------------------------------------ HALS

pub fn factor_hals(
    y: &DMatrix<f64>,
    grid: Option<&Grid>,
    cfg: &SolveConfig,
    init: Option<FactorPair>,
) -> Result<(FactorPair, RunReport)> {
    run(y, grid, &SolveConfig { algorithm: Algorithm::Hals, ..cfg.clone() }, init, None)
}

fn hals_impl(
    y: &DMatrix<f64>,
    cfg: &SolveConfig,
    start: Instant,
    state: FactorPair,
    until: Option<f64>,
) -> Result<(FactorPair, RunReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut a = state.a;
    let mut x = state.x;
    let mut tracker = Tracker::new(start, y, cfg, until, residual_norm(y, &a, &x));
    let mut reseeds = 0;
    let mut reseed = |a: &mut DMatrix<f64>, x: &mut DMatrix<f64>, s: usize| {
        let (col, xs) = reseed_direction(y, a, x, s, &mut rng);
        a.set_column(s, &col);
        x.set_column(s, &xs);
        reseeds += 1;
    };
    let status = match tracker.initial_stop() {
        Some(st) => st,
        None => loop {
            if let Some(st) = tracker.boundary_stop() {
                break st;
            }
            for s in 0..cfg.rank {
                match a_column_target(y, &a, &x, s) {
                    Some(z) => a.set_column(s, &z.map(|v| v.max(0.0))),
                    None => reseed(&mut a, &mut x, s),
                }
                if a.column(s).norm_squared() == 0.0 {
                    reseed(&mut a, &mut x, s);
                }
            }
            for s in 0..cfg.rank {
                if !update_x_column(y, &a, &mut x, s) || x.column(s).norm_squared() == 0.0 {
                    reseed(&mut a, &mut x, s);
                }
            }
            if let Some(st) = tracker.record(residual_norm(y, &a, &x), true) {
                break st;
            }
        },
    };
    Ok((FactorPair { models: None, a, x }, tracker.finish(status, reseeds)))
}

// ------------------------------------------------------------ drivers

fn run(
    y: &DMatrix<f64>,
    grid: Option<&Grid>,
    cfg: &SolveConfig,
    init: Option<FactorPair>,
    until: Option<f64>,
) -> Result<(FactorPair, RunReport)> {
    let start = Instant::now();
    check_inputs(y, grid, cfg)?;
    if y.norm() == 0.0 {
        let state = zero_solution(y, grid, cfg)?;
        let tracker = Tracker::new(start, y, cfg, until, 0.0);
        return Ok((state, tracker.finish(RunStatus::ZeroResidual, 0)));
    }
    let state = match init {
        Some(init) => adopt_init(y, grid, cfg, init)?,
        None => initialize(y, grid, cfg)?,
    };
    match (cfg.algorithm, grid) {
        (Algorithm::Hals, _) => hals_impl(y, cfg, start, state, until),
        (Algorithm::Rnls, Some(g)) => rnls_impl(y, g, cfg, start, state, until),
        (Algorithm::Ranls, Some(g)) => ranls_impl(y, g, cfg, start, state, until),
        (Algorithm::Rhanls, Some(g)) => rhanls_impl(y, g, cfg, start, state, until),
        (_, None) => unreachable!("checked by check_inputs"),
    }
}

/// Runs the configured algorithm, optionally from a given starting point.
pub fn factor(
    y: &DMatrix<f64>,
    grid: Option<&Grid>,
    cfg: &SolveConfig,
    init: Option<FactorPair>,
) -> Result<(FactorPair, RunReport)> {
    run(y, grid, cfg, init, None)
}

/// Runs `first` until the relative residue drops below `switch_residue` (or
/// it stops otherwise), then `second` from the resulting factors.
pub fn combine(
    y: &DMatrix<f64>,
    grid: Option<&Grid>,
    first: &SolveConfig,
    second: &SolveConfig,
    switch_residue: f64,
) -> Result<(FactorPair, RunReport)> {
    if first.algorithm == second.algorithm {
        return Err(Error::InvalidConfig("combined algorithms must differ".into()));
    }
    if first.rank != second.rank {
        return Err(Error::InvalidConfig("combined runs must share the rank".into()));
    }
    let (fp1, r1) = run(y, grid, first, None, Some(switch_residue))?;
    let (fp2, r2) = run(y, grid, second, Some(fp1), None)?;
    let offset = r1.total_seconds;
    let mut rep = RunReport {
        algorithm: format!("{}+{}", r1.algorithm, r2.algorithm),
        initial_residue: r1.initial_residue,
        residue_trace: r1.residue_trace.iter().chain(&r2.residue_trace).copied().collect(),
        sc_trace: r1.sc_trace.iter().chain(&r2.sc_trace).copied().collect(),
        wall_times: r1
            .wall_times
            .iter()
            .copied()
            .chain(r2.wall_times.iter().map(|t| t + offset))
            .collect(),
        status: r2.status,
        converged_at: None,
        seconds_to_converge: None,
        reseeds: r1.reseeds + r2.reseeds,
        switch_at: Some(r1.residue_trace.len()),
        total_seconds: 0.0,
    };
    rep.finalize(offset + r2.total_seconds);
    Ok((fp2, rep))
}
