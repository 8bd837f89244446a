//! Projection of a sampled signal onto sampled nonnegative rational functions
//! of fixed degree.
//!
//! Nonnegativity constraints inside the convex subproblems are imposed at the
//! grid points only; the returned models are built from those polynomials
//! after a check on a denser grid (see [`RationalModel::from_ratio`]).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nls::{self, FnProblem, NlsOptions};
use crate::polybasis::{ChebPoly, Grid};
use crate::qpcone::{feasibility_lp, solve_constrained_lsq, svd_compress, ConstrainedLsq};
use crate::rational::{
    eval_jacobian, eval_rational, eval_with_jacobian, RationalModel, DEFAULT_EPS,
};

const QP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ls")]
    LeastSquares,
    #[serde(rename = "als")]
    AlternatingLs,
    #[serde(rename = "conic")]
    Conic,
    #[serde(rename = "rkfit+")]
    RkfitPlus,
    #[serde(rename = "linproj")]
    LinProj,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::LeastSquares,
        Method::AlternatingLs,
        Method::Conic,
        Method::RkfitPlus,
        Method::LinProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LeastSquares => "ls",
            Method::AlternatingLs => "als",
            Method::Conic => "conic",
            Method::RkfitPlus => "rkfit+",
            Method::LinProj => "linproj",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ls" | "least-squares" | "leastsquares" => Ok(Method::LeastSquares),
            "als" | "alternating-ls" | "alternatingls" => Ok(Method::AlternatingLs),
            "conic" => Ok(Method::Conic),
            "rkfit+" | "rkfit-plus" | "rkfitplus" => Ok(Method::RkfitPlus),
            "linproj" => Ok(Method::LinProj),
            other => Err(Error::InvalidConfig(format!(
                "unknown projection method '{other}'"
            ))),
        }
    }
}

/// Per-column state carried between successive projections.
#[derive(Debug, Clone, PartialEq)]
pub enum WarmState {
    /// Previous model (Least Squares and Alternating LS).
    Model(RationalModel),
    /// Previous denominator estimate of degree `2 d2'`, normalized to one at the last grid point.
    Denominator(ChebPoly),
    /// Previous fitted values (LinProj).
    Fitted(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectorConfig {
    pub method: Method,
    pub d1p: usize,
    pub d2p: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub eps: f64,
    #[serde(skip)]
    pub warm: Option<WarmState>,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig {
            method: Method::LeastSquares,
            d1p: 2,
            d2p: 2,
            tol: 1e-8,
            max_iter: 1000,
            eps: DEFAULT_EPS,
            warm: None,
        }
    }
}

impl ProjectorConfig {
    pub fn new(method: Method, d1p: usize, d2p: usize) -> Self {
        ProjectorConfig {
            method,
            d1p,
            d2p,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eps must be nonnegative, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub model: RationalModel,
    pub fitted: DVector<f64>,
    pub rel_err: f64,
    pub iters: usize,
    pub seconds: f64,
    /// State to pass to the next projection of the same column.
    pub warm: WarmState,
    /// Conic only: surrogate objective at the returned iterate.
    pub surrogate: Option<f64>,
}

fn rel_err(z: &DVector<f64>, fitted: &DVector<f64>) -> f64 {
    let nz = z.norm_squared();
    if nz == 0.0 {
        if fitted.norm_squared() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (z - fitted).norm_squared() / nz
    }
}

/// Projects `z` with the configured method.
pub fn project(z: &DVector<f64>, grid: &Grid, cfg: &ProjectorConfig) -> Result<Projection> {
    cfg.validate()?;
    if z.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "signal has {} samples, grid has {}",
            z.len(),
            grid.len()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteResidual);
    }
    if grid.len() <= 2 * (cfg.d1p + cfg.d2p) {
        warn!(
            "{} samples for degrees ({}, {}): the projection is underdetermined",
            grid.len(),
            2 * cfg.d1p,
            2 * cfg.d2p
        );
    }
    let start = Instant::now();
    if z.norm_squared() == 0.0 {
        let model = RationalModel::zeros(cfg.d1p, cfg.d2p, cfg.eps, grid.interval());
        let fitted = eval_rational(&model, grid)?;
        let warm = match cfg.method {
            Method::LeastSquares | Method::AlternatingLs => WarmState::Model(model.clone()),
            Method::Conic | Method::RkfitPlus => WarmState::Denominator(unit_denominator(cfg.d2p)),
            Method::LinProj => WarmState::Fitted(fitted.clone()),
        };
        return Ok(Projection {
            model,
            fitted,
            rel_err: 0.0,
            iters: 0,
            seconds: start.elapsed().as_secs_f64(),
            warm,
            surrogate: None,
        });
    }
    let mut out = match cfg.method {
        Method::LeastSquares => project_least_squares(z, grid, cfg),
        Method::AlternatingLs => project_alternating(z, grid, cfg),
        Method::Conic => project_conic(z, grid, cfg),
        Method::RkfitPlus => project_rkfit_plus(z, grid, cfg),
        Method::LinProj => project_linproj(z, grid, cfg),
    }?;
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

fn finish(
    z: &DVector<f64>,
    grid: &Grid,
    model: RationalModel,
    iters: usize,
    warm: WarmState,
    surrogate: Option<f64>,
) -> Result<Projection> {
    let fitted = eval_rational(&model, grid)?;
    let rel_err = rel_err(z, &fitted);
    Ok(Projection {
        model,
        fitted,
        rel_err,
        iters,
        seconds: 0.0,
        warm,
        surrogate,
    })
}

/// Cold start: default denominator, `h1` fitted to `sqrt(max(z, 0) g)`.
pub fn cold_init(z: &DVector<f64>, grid: &Grid, d1p: usize, d2p: usize, eps: f64) -> RationalModel {
    let mut model = RationalModel::zeros(d1p, d2p, eps, grid.interval());
    let den = model.denominator();
    let target = DVector::from_iterator(
        z.len(),
        z.iter()
            .zip(grid.tau_std())
            .map(|(&v, &t)| (v.max(0.0) * den.eval(t)).sqrt()),
    );
    let v = grid.vandermonde(d1p);
    if let Ok(h1) = v.as_ref().clone().svd(true, true).solve(&target, 1e-14) {
        model.h1 = ChebPoly::new(h1.as_slice().to_vec());
    }
    model
}

fn warm_model(cfg: &ProjectorConfig, grid: &Grid) -> Option<RationalModel> {
    match &cfg.warm {
        Some(WarmState::Model(m))
            if m.d1p == cfg.d1p && m.d2p == cfg.d2p && grid.matches_interval(m.interval) =>
        {
            Some(RationalModel {
                eps: cfg.eps,
                ..m.clone()
            })
        }
        _ => None,
    }
}

/// [`cold_init`] and, when it converts, a polynomial fit over a constant denominator.
fn cold_starts(z: &DVector<f64>, grid: &Grid, cfg: &ProjectorConfig) -> Vec<RationalModel> {
    let mut starts = vec![cold_init(z, grid, cfg.d1p, cfg.d2p, cfg.eps)];
    let v = grid.vandermonde(2 * cfg.d1p);
    let poly = v
        .as_ref()
        .clone()
        .svd(true, true)
        .solve(z, 1e-14)
        .ok()
        .and_then(|c| {
            let h = ChebPoly::new(c.as_slice().to_vec());
            RationalModel::from_ratio(&h, &ChebPoly::constant(1.0), cfg.d1p, cfg.d2p, cfg.eps, grid).ok()
        });
    starts.extend(poly);
    starts
}

fn fit_error(z: &DVector<f64>, grid: &Grid, m: &RationalModel) -> f64 {
    eval_rational(m, grid)
        .map(|f| (f - z).norm_squared())
        .unwrap_or(f64::INFINITY)
}

/// The cold start with the smaller initial error.
fn best_cold_start(z: &DVector<f64>, grid: &Grid, cfg: &ProjectorConfig) -> RationalModel {
    cold_starts(z, grid, cfg)
        .into_iter()
        .map(|m| (fit_error(z, grid, &m), m))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start")
        .1
}

fn least_squares_from(
    z: &DVector<f64>,
    grid: &Grid,
    cfg: &ProjectorConfig,
    base: &RationalModel,
) -> Result<(RationalModel, f64, usize)> {
    let problem = FnProblem {
        n_params: base.n_params(),
        n_residuals: z.len(),
        residual: |th: &DVector<f64>| {
            eval_rational(&base.with_params(th.as_slice()), grid).expect("interval checked") - z
        },
        jacobian: |th: &DVector<f64>| {
            eval_jacobian(&base.with_params(th.as_slice()), grid, None).expect("interval checked")
        },
    };
    let opts = NlsOptions::default()
        .with_tol(cfg.tol)
        .with_max_iter(cfg.max_iter);
    let res = nls::solve(&problem, &base.params(), &opts)?;
    Ok((base.with_params(res.theta.as_slice()), res.cost, res.n_iter))
}

/// Without a warm model every cold start is solved and the best fit kept;
/// a smaller initial error does not predict a better local minimum.
pub fn project_least_squares(
    z: &DVector<f64>,
    grid: &Grid,
    cfg: &ProjectorConfig,
) -> Result<Projection> {
    let starts = match warm_model(cfg, grid) {
        Some(m) => vec![m],
        None => cold_starts(z, grid, cfg),
    };
    let mut best: Option<(RationalModel, f64)> = None;
    let mut iters = 0;
    for base in &starts {
        let (model, cost, n) = least_squares_from(z, grid, cfg, base)?;
        iters += n;
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((model, cost));
        }
    }
    let (model, _) = best.expect("at least one start");
    finish(
        z,
        grid,
        model.clone(),
        iters,
        WarmState::Model(model),
        None,
    )
}

/// `min ||z - h(tau) / g(tau)||^2` over `h` of degree `d1` with `h(tau_i) >= 0`.
pub fn numerator_step(
    z: &DVector<f64>,
    grid: &Grid,
    g_vals: &DVector<f64>,
    d1: usize,
) -> Result<ChebPoly> {
    let v1 = grid.vandermonde(d1);
    let mut m = v1.as_ref().clone();
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row /= g_vals[i];
    }
    let c = svd_compress(&m, z);
    let p = ConstrainedLsq::new(
        c.m_tilde,
        c.b_tilde,
        -v1.as_ref().clone(),
        DVector::zeros(z.len()),
    )?;
    let sol = solve_constrained_lsq(&p, QP_TOL)?;
    Ok(ChebPoly::new(sol.theta.as_slice().to_vec()))
}

pub fn project_alternating(
    z: &DVector<f64>,
    grid: &Grid,
    cfg: &ProjectorConfig,
) -> Result<Projection> {
    let d1 = 2 * cfg.d1p;
    let mut den_model = warm_model(cfg, grid).unwrap_or_else(|| best_cold_start(z, grid, cfg));
    // the probe has numerator 1, so its values are 1/g and its Jacobian scaled by h(tau) is d(h/g)
    den_model.d1p = 0;
    den_model.h1 = ChebPoly::constant(1.0);
    den_model.h2 = ChebPoly::default();
    let n_den = 2 * cfg.d2p;
    let full = |th: &DVector<f64>| {
        let mut p = vec![1.0];
        p.extend_from_slice(th.as_slice());
        den_model.with_params(&p)
    };
    let mut theta = den_model.params().rows(1, n_den).into_owned();

    let mut err = f64::INFINITY;
    let mut err_prev;
    let mut iters = 0;
    let mut h = ChebPoly::zeros(d1);
    let mut best: Option<(f64, ChebPoly, DVector<f64>)> = None;
    loop {
        iters += 1;
        let probe = full(&theta);
        let inv_g = eval_rational(&probe, grid)?;
        let g_vals = inv_g.map(|v| 1.0 / v);
        h = numerator_step(z, grid, &g_vals, d1).unwrap_or(h);
        let h_vals = &*grid.vandermonde(d1) * h.to_vector();

        if n_den > 0 {
            let problem = FnProblem {
                n_params: n_den,
                n_residuals: z.len(),
                residual: |th: &DVector<f64>| {
                    eval_rational(&full(th), grid)
                        .expect("interval checked")
                        .component_mul(&h_vals)
                        - z
                },
                jacobian: |th: &DVector<f64>| {
                    let j =
                        eval_jacobian(&full(th), grid, Some(&h_vals)).expect("interval checked");
                    j.columns(1, n_den).into_owned()
                },
            };
            let opts = NlsOptions::default().with_tol(cfg.tol).with_max_iter(50);
            theta = nls::solve(&problem, &theta, &opts)?.theta;
        }
        let fitted = eval_rational(&full(&theta), grid)?.component_mul(&h_vals);
        err_prev = err;
        err = (z - &fitted).norm_squared();
        if best.as_ref().is_none_or(|(e, _, _)| err < *e) {
            best = Some((err, h.clone(), theta.clone()));
        }
        debug!("als iteration {iters}: err {err:e}");
        if err == 0.0 || (err_prev - err) / err <= cfg.tol || iters >= cfg.max_iter {
            break;
        }
    }
    let (_, h, theta) = best.expect("at least one iteration");
    let den = full(&theta).denominator();
    let model = RationalModel::from_ratio(&h, &den, cfg.d1p, cfg.d2p, cfg.eps, grid)?;
    finish(z, grid, model.clone(), iters, WarmState::Model(model), None)
}

fn unit_denominator(d2p: usize) -> ChebPoly {
    let mut g = ChebPoly::zeros(2 * d2p);
    g.coeffs[0] = 1.0;
    g
}

fn warm_denominator(cfg: &ProjectorConfig, grid: &Grid) -> ChebPoly {
    let d2 = 2 * cfg.d2p;
    let g = match &cfg.warm {
        Some(WarmState::Denominator(g)) if g.coeffs.len() == d2 + 1 => g.clone(),
        Some(WarmState::Model(m)) if m.d2p == cfg.d2p => m.denominator(),
        _ => return unit_denominator(cfg.d2p),
    };
    let last = g.eval(*grid.tau_std().last().expect("grid has points"));
    let positive = grid.tau_std().iter().all(|&t| g.eval(t) > 0.0);
    if positive && last > 0.0 {
        g.scale(1.0 / last)
    } else {
        unit_denominator(cfg.d2p)
    }
}

fn row_scaled(v: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = v.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

pub fn project_conic(z: &DVector<f64>, grid: &Grid, cfg: &ProjectorConfig) -> Result<Projection> {
    let (d1, d2) = (2 * cfg.d1p, 2 * cfg.d2p);
    let m = z.len();
    let v1 = grid.vandermonde(d1);
    let v2 = grid.vandermonde(d2);
    let t_last = *grid.tau_std().last().expect("grid has points");
    let mut g_tilde = warm_denominator(cfg, grid);

    // constraints -V1 h <= 0 and -V2 delta <= 0
    let k = d1 + d2 + 2;
    let mut gmat = DMatrix::zeros(2 * m, k);
    gmat.view_mut((0, 0), (m, d1 + 1))
        .copy_from(&(-v1.as_ref()));
    gmat.view_mut((m, d1 + 1), (m, d2 + 1))
        .copy_from(&(-v2.as_ref()));
    let hvec = DVector::zeros(2 * m);

    let mut nb = f64::INFINITY;
    let mut err = f64::INFINITY;
    let mut err_prev = f64::INFINITY;
    let mut iters = 0;
    let mut best: Option<(f64, ChebPoly, ChebPoly, f64, ChebPoly)> = None;
    while iters == 0 || (nb > cfg.tol && (err_prev - err) / err > cfg.tol && iters < cfg.max_iter) {
        iters += 1;
        let gt_vals = &*v2 * g_tilde.to_vector();
        let inv = gt_vals.map(|v| 1.0 / v);
        let mut a = DMatrix::zeros(m, k);
        a.view_mut((0, 0), (m, d1 + 1))
            .copy_from(&(-row_scaled(&v1, &inv)));
        a.view_mut((0, d1 + 1), (m, d2 + 1))
            .copy_from(&row_scaled(&v2, &z.component_mul(&inv)));
        let c = svd_compress(&a, &(-z));
        let p = ConstrainedLsq::new(c.m_tilde, c.b_tilde, gmat.clone(), hvec.clone())?;
        let sol = solve_constrained_lsq(&p, QP_TOL)?;
        let surrogate = (&a * &sol.theta + z).norm_squared();
        let h = ChebPoly::new(sol.theta.rows(0, d1 + 1).iter().copied().collect());
        let delta = ChebPoly::new(sol.theta.rows(d1 + 1, d2 + 1).iter().copied().collect());
        let g = g_tilde.add(&delta);
        let g_vals = &*v2 * g.to_vector();
        let fitted = (&*v1 * h.to_vector()).component_div(&g_vals);
        let g_norm = g.scale(1.0 / g.eval(t_last));
        nb = g_tilde
            .coeffs
            .iter()
            .zip(&g_norm.coeffs)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        g_tilde = g_norm;
        err_prev = err;
        err = (z - fitted).norm_squared();
        debug!("conic iteration {iters}: err {err:e}, nb {nb:e}");
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, h, g, surrogate, g_tilde.clone()));
        }
        if err == 0.0 {
            break;
        }
    }
    let (_, h, g, surrogate, g_next) = best.expect("at least one iteration");
    let model = RationalModel::from_ratio(&h, &g, cfg.d1p, cfg.d2p, cfg.eps, grid)?;
    finish(
        z,
        grid,
        model,
        iters,
        WarmState::Denominator(g_next),
        Some(surrogate),
    )
}

pub fn project_rkfit_plus(
    z: &DVector<f64>,
    grid: &Grid,
    cfg: &ProjectorConfig,
) -> Result<Projection> {
    let (d1, d2) = (2 * cfg.d1p, 2 * cfg.d2p);
    let m = z.len();
    let v1 = grid.vandermonde(d1);
    let v2 = grid.vandermonde(d2);
    let t_last = *grid.tau_std().last().expect("grid has points");
    let mut g_tilde = warm_denominator(cfg, grid);
    let cons = -v2.as_ref().clone();
    let zero = DVector::zeros(m);

    let mut nb = f64::INFINITY;
    let mut iters = 0;
    while nb > cfg.tol && iters < cfg.max_iter {
        iters += 1;
        let gt_vals = &*v2 * g_tilde.to_vector();
        let inv = gt_vals.map(|v| 1.0 / v);
        let v1s = row_scaled(&v1, &inv);
        let svd = v1s.clone().svd(true, false);
        let s = &svd.singular_values;
        let ratio = s.min() / s.max();
        if !(ratio >= 1e-12) || s.len() < d1 + 1 {
            return Err(Error::RankDeficientV1(if ratio.is_finite() {
                ratio
            } else {
                0.0
            }));
        }
        let u = svd.u.expect("requested U");
        let project_out = |x: &DMatrix<f64>| x - &u * (u.transpose() * x);
        let v2s = row_scaled(&v2, &z.component_mul(&inv));
        let pv2 = project_out(&v2s);
        let pz = z - &u * (u.transpose() * z);
        let c = svd_compress(&pv2, &(-pz));
        // directions of delta that the projection annihilates stay at zero
        let kd = d2 + 1;
        let lambda = 1e-10 * v2s.norm();
        let mut mt = DMatrix::zeros(c.m_tilde.nrows() + kd, kd);
        mt.rows_mut(0, c.m_tilde.nrows()).copy_from(&c.m_tilde);
        mt.rows_mut(c.m_tilde.nrows(), kd).fill_diagonal(lambda);
        let mut bt = DVector::zeros(c.b_tilde.len() + kd);
        bt.rows_mut(0, c.b_tilde.len()).copy_from(&c.b_tilde);
        let p = ConstrainedLsq::new(mt, bt, cons.clone(), zero.clone())?;
        let sol = solve_constrained_lsq(&p, QP_TOL)?;
        let delta = ChebPoly::new(sol.theta.iter().copied().collect());
        let g = g_tilde.add(&delta);
        let g_norm = g.scale(1.0 / g.eval(t_last));
        nb = g_tilde
            .coeffs
            .iter()
            .zip(&g_norm.coeffs)
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        g_tilde = g_norm;
        debug!("rkfit+ iteration {iters}: nb {nb:e}");
    }
    let g_vals = &*v2 * g_tilde.to_vector();
    let h = numerator_step(z, grid, &g_vals, d1)?;
    let model = RationalModel::from_ratio(&h, &g_tilde, cfg.d1p, cfg.d2p, cfg.eps, grid)?;
    finish(z, grid, model, iters, WarmState::Denominator(g_tilde), None)
}

/// Constraint system of the LinProj feasibility problem at level `u`, in the
/// variables `(h, g)` (coefficients of degrees `d1`, `d2`).
fn linproj_system(
    z: &DVector<f64>,
    v1: &DMatrix<f64>,
    v2: &DMatrix<f64>,
    u: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = z.len();
    let (k1, k2) = (v1.ncols(), v2.ncols());
    let mut a = DMatrix::zeros(4 * m, k1 + k2);
    let mut b = DVector::zeros(4 * m);
    for i in 0..m {
        for j in 0..k1 {
            a[(i, j)] = -v1[(i, j)];
            a[(2 * m + i, j)] = -v1[(i, j)];
            a[(3 * m + i, j)] = v1[(i, j)];
        }
        for j in 0..k2 {
            a[(m + i, k1 + j)] = -v2[(i, j)];
            a[(2 * m + i, k1 + j)] = (z[i] - u) * v2[(i, j)];
            a[(3 * m + i, k1 + j)] = -(z[i] + u) * v2[(i, j)];
        }
        b[m + i] = -1.0;
    }
    (a, b)
}

/// Smallest `u` (to within `tol`) such that some `h(tau) >= 0`, `g(tau) >= 1`
/// satisfy `|z_i g(tau_i) - h(tau_i)| <= u g(tau_i)` for all `i`, with the witness.
pub fn linproj_bisection(
    z: &DVector<f64>,
    grid: &Grid,
    d1: usize,
    d2: usize,
    tol: f64,
    u_start: f64,
) -> Result<(f64, DVector<f64>, usize)> {
    let v1 = grid.vandermonde(d1);
    let v2 = grid.vandermonde(d2);
    let feasible = |u: f64| -> Result<Option<DVector<f64>>> {
        let (a, b) = linproj_system(z, &v1, &v2, u);
        Ok(feasibility_lp(&a, &b)?.witness)
    };
    let mut u_max = u_start.max(0.0);
    let mut witness = feasible(u_max)?;
    let mut doublings = 0;
    while witness.is_none() {
        doublings += 1;
        if doublings > 60 {
            return Err(Error::InfeasibleAtUmax);
        }
        u_max = if u_max > 0.0 {
            2.0 * u_max
        } else {
            z.amax().max(f64::MIN_POSITIVE)
        };
        witness = feasible(u_max)?;
    }
    let mut u_min = 0.0;
    let mut steps = 0;
    while u_max - u_min > tol {
        steps += 1;
        let med = 0.5 * (u_max + u_min);
        match feasible(med)? {
            Some(w) => {
                u_max = med;
                witness = Some(w);
            }
            None => u_min = med,
        }
    }
    Ok((u_max, witness.expect("feasible bracket"), steps))
}

pub fn project_linproj(z: &DVector<f64>, grid: &Grid, cfg: &ProjectorConfig) -> Result<Projection> {
    let (d1, d2) = (2 * cfg.d1p, 2 * cfg.d2p);
    let mean = z.mean();
    let u_start = match &cfg.warm {
        Some(WarmState::Fitted(f)) if f.len() == z.len() => (z - f).amax(),
        _ => z.iter().map(|v| v - mean).fold(0.0, f64::max),
    };
    let (_, w, steps) = linproj_bisection(z, grid, d1, d2, cfg.tol, u_start)?;
    let h = ChebPoly::new(w.rows(0, d1 + 1).iter().copied().collect());
    let g = ChebPoly::new(w.rows(d1 + 1, d2 + 1).iter().copied().collect());
    let model = RationalModel::from_ratio(&h, &g, cfg.d1p, cfg.d2p, cfg.eps, grid)?;
    let out = finish(
        z,
        grid,
        model,
        steps,
        WarmState::Fitted(DVector::zeros(0)),
        None,
    )?;
    Ok(Projection {
        warm: WarmState::Fitted(out.fitted.clone()),
        ..out
    })
}

/// Values and Jacobian of a model; re-exported for the factorization solvers.
pub fn model_values(model: &RationalModel, grid: &Grid) -> Result<(DVector<f64>, DMatrix<f64>)> {
    eval_with_jacobian(model, grid, None)
}
