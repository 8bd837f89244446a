//! Trust-region Levenberg–Marquardt solver for unconstrained nonlinear least
//! squares, `min_theta 1/2 ||r(theta)||^2`.
//!
//! Each iteration factors the column-scaled Jacobian once (QR, then an SVD of
//! the small triangular factor) and searches the damping parameter so that the
//! step lies on the trust-region boundary. Steps are only accepted when they
//! strictly decrease the cost.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A least-squares problem given by its residual vector and Jacobian.
pub trait NlsProblem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    fn residual(&self, theta: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64>;
}

/// Adapter turning a pair of closures into an [`NlsProblem`].
pub struct FnProblem<R, J> {
    pub n_params: usize,
    pub n_residuals: usize,
    pub residual: R,
    pub jacobian: J,
}

impl<R, J> NlsProblem for FnProblem<R, J>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn n_params(&self) -> usize {
        self.n_params
    }
    fn n_residuals(&self) -> usize {
        self.n_residuals
    }
    fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        (self.residual)(theta)
    }
    fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        (self.jacobian)(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlsOptions {
    pub max_iter: usize,
    pub ftol: f64,
    pub xtol: f64,
    pub gtol: f64,
    /// Initial radius as a multiple of `max(||D theta0||, 1)`.
    pub initial_radius: f64,
    #[serde(with = "opt_secs")]
    pub time_budget: Option<Duration>,
    /// Stop as soon as the cost drops to this value.
    #[serde(default)]
    pub cost_target: Option<f64>,
}

impl Default for NlsOptions {
    fn default() -> Self {
        NlsOptions {
            max_iter: 300,
            ftol: 1e-8,
            xtol: 1e-8,
            gtol: 1e-8,
            initial_radius: 100.0,
            time_budget: None,
            cost_target: None,
        }
    }
}

impl NlsOptions {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.ftol = tol;
        self.xtol = tol;
        self.gtol = tol;
        self
    }

    pub fn with_max_iter(mut self, n: usize) -> Self {
        self.max_iter = n;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NlsStatus {
    Ftol,
    Xtol,
    Gtol,
    MaxIter,
    TimeBudget,
    CostTarget,
}

#[derive(Debug, Clone)]
pub struct NlsResult {
    pub theta: DVector<f64>,
    pub cost: f64,
    pub status: NlsStatus,
    pub n_iter: usize,
    /// Cost at the start and after every iteration.
    pub trace: Vec<f64>,
    /// Seconds since the start for each `trace` entry.
    pub times: Vec<f64>,
}

fn all_finite_v(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn all_finite_m(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Factorization of the scaled Jacobian, `Js = Q U S V^T`, with `b = U^T Q^T r`.
struct Factored {
    s: DVector<f64>,
    v: DMatrix<f64>,
    b: DVector<f64>,
}

impl Factored {
    fn new(js: &DMatrix<f64>, r: &DVector<f64>) -> Self {
        let (rows, cols) = js.shape();
        let (small, qtr) = if rows > cols {
            let qr = js.clone().qr();
            let mut qtr = r.clone();
            qr.q_tr_mul(&mut qtr);
            let qtr = qtr.rows(0, cols).into_owned();
            (qr.r(), qtr)
        } else {
            (js.clone(), r.clone())
        };
        let svd = small.svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let b = u.transpose() * qtr;
        Factored {
            s: svd.singular_values,
            v: v_t.transpose(),
            b,
        }
    }

    fn cutoff(&self) -> f64 {
        self.s.max() * 1e-12
    }

    /// Scaled step `-V diag(s / (s^2 + lambda)) b` (singular directions dropped when lambda = 0).
    fn step(&self, lambda: f64) -> DVector<f64> {
        let cut = self.cutoff();
        let coef = DVector::from_iterator(
            self.s.len(),
            self.s.iter().zip(self.b.iter()).map(|(&s, &b)| {
                if lambda == 0.0 && s <= cut {
                    0.0
                } else {
                    -s * b / (s * s + lambda)
                }
            }),
        );
        &self.v * coef
    }

    fn step_norm2(&self, lambda: f64) -> (f64, f64) {
        let cut = self.cutoff();
        let mut n2 = 0.0;
        let mut dn2 = 0.0;
        for (&s, &b) in self.s.iter().zip(self.b.iter()) {
            if lambda == 0.0 && s <= cut {
                continue;
            }
            let den = s * s + lambda;
            n2 += (s * b / den).powi(2);
            dn2 -= 2.0 * (s * b).powi(2) / den.powi(3);
        }
        (n2, dn2)
    }

    /// Damping parameter placing the step on (approximately) the trust-region boundary.
    fn lambda_for_radius(&self, delta: f64) -> f64 {
        let (n0, _) = self.step_norm2(0.0);
        if n0.sqrt() <= delta {
            return 0.0;
        }
        let gnorm = self
            .s
            .iter()
            .zip(self.b.iter())
            .map(|(s, b)| (s * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut lo = 0.0;
        let mut hi = (gnorm / delta).max(f64::MIN_POSITIVE);
        let mut lambda = hi.min(1e-3 * hi + self.s.min().powi(2));
        for _ in 0..60 {
            if !(lambda > lo && lambda < hi) {
                lambda = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
            }
            let (n2, dn2) = self.step_norm2(lambda);
            let norm = n2.sqrt();
            if (norm - delta).abs() <= 0.1 * delta {
                return lambda;
            }
            if norm > delta {
                lo = lambda;
            } else {
                hi = lambda;
            }
            // Newton step on 1/||p|| - 1/delta
            let dphi = -0.5 * dn2 / (n2 * norm);
            let phi = 1.0 / norm - 1.0 / delta;
            lambda -= phi / dphi;
        }
        lambda.clamp(lo, hi)
    }
}

/// Minimizes `1/2 ||r(theta)||^2` from `theta0`.
pub fn solve<P: NlsProblem + ?Sized>(
    problem: &P,
    theta0: &DVector<f64>,
    opts: &NlsOptions,
) -> Result<NlsResult> {
    let start = Instant::now();
    let mut theta = theta0.clone();
    if !all_finite_v(&theta) {
        return Err(Error::NonFiniteResidual);
    }
    let mut r = problem.residual(&theta);
    let mut jac = problem.jacobian(&theta);
    if !all_finite_v(&r) || !all_finite_m(&jac) {
        return Err(Error::NonFiniteResidual);
    }
    let n = theta.len();
    let mut cost = 0.5 * r.norm_squared();
    let mut trace = vec![cost];
    let mut times = vec![start.elapsed().as_secs_f64()];

    let col_norms = |j: &DMatrix<f64>| -> DVector<f64> {
        DVector::from_iterator(j.ncols(), j.column_iter().map(|c| c.norm()))
    };
    // near-zero columns would otherwise allow unbounded steps in their direction
    let norms0 = col_norms(&jac);
    let floor = if norms0.amax() > 0.0 { 1e-6 * norms0.amax() } else { 1.0 };
    let mut diag = norms0.map(|x| x.max(floor));
    let scaled_norm = |d: &DVector<f64>, v: &DVector<f64>| d.component_mul(v).norm();
    let mut delta = opts.initial_radius * scaled_norm(&diag, &theta).max(1.0);

    let mut status = NlsStatus::MaxIter;
    let mut n_iter = 0;
    let mut factored: Option<Factored> = None;
    while n_iter < opts.max_iter {
        if opts.cost_target.is_some_and(|t| cost <= t) {
            status = NlsStatus::CostTarget;
            break;
        }
        let grad = jac.tr_mul(&r);
        if grad.amax() <= opts.gtol * r.norm().max(1.0) {
            status = NlsStatus::Gtol;
            break;
        }
        if let Some(budget) = opts.time_budget {
            if start.elapsed() >= budget {
                status = NlsStatus::TimeBudget;
                break;
            }
        }
        n_iter += 1;
        if factored.is_none() {
            let mut js = jac.clone();
            for (mut col, d) in js.column_iter_mut().zip(diag.iter()) {
                col /= *d;
            }
            factored = Some(Factored::new(&js, &r));
        }
        let fac = factored.as_ref().expect("factored above");
        let lambda = fac.lambda_for_radius(delta);
        let p = fac.step(lambda);
        let pnorm = p.norm();
        let step = p.component_div(&diag);
        let jstep = &jac * &step;
        let predicted = -(r.dot(&jstep) + 0.5 * jstep.norm_squared());

        let trial = &theta + &step;
        let r_new = problem.residual(&trial);
        let cost_new = if all_finite_v(&r_new) {
            0.5 * r_new.norm_squared()
        } else {
            f64::INFINITY
        };
        let actual = cost - cost_new;
        let rho = if predicted > 0.0 {
            actual / predicted
        } else {
            -1.0
        };

        if rho < 0.25 {
            delta = 0.5 * pnorm.min(delta);
        } else if rho > 0.75 && pnorm >= 0.99 * delta {
            delta *= 2.0;
        }

        let accepted = cost_new < cost;
        let xtol_hit = step.norm() <= opts.xtol * (opts.xtol + theta.norm());
        if accepted {
            let jac_new = problem.jacobian(&trial);
            if !all_finite_m(&jac_new) {
                delta *= 0.25;
                trace.push(cost);
                times.push(start.elapsed().as_secs_f64());
                continue;
            }
            theta = trial;
            r = r_new;
            jac = jac_new;
            let cost_old = cost;
            cost = cost_new;
            trace.push(cost);
            times.push(start.elapsed().as_secs_f64());
            diag = diag.zip_map(&col_norms(&jac), |a, b| a.max(b));
            factored = None;
            if opts.cost_target.is_some_and(|t| cost <= t) {
                status = NlsStatus::CostTarget;
                break;
            }
            if cost == 0.0 || (actual <= opts.ftol * cost_old && rho > 0.25) {
                status = NlsStatus::Ftol;
                break;
            }
        } else {
            trace.push(cost);
            times.push(start.elapsed().as_secs_f64());
        }
        if xtol_hit {
            status = NlsStatus::Xtol;
            break;
        }
        if delta <= f64::EPSILON * scaled_norm(&diag, &theta).max(1.0) {
            status = NlsStatus::Xtol;
            break;
        }
    }
    debug_assert_eq!(theta.len(), n);
    Ok(NlsResult {
        theta,
        cost,
        status,
        n_iter,
        trace,
        times,
    })
}

mod opt_secs {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        v.map(|d| d.as_secs_f64()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map(Duration::from_secs_f64))
    }
}
