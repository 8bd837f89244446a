//! Nonnegative rational functions in sum-of-squares form,
//!
//! ```text
//!          h1(t)^2 + (1 - t^2) h2(t)^2
//! f(t) = -------------------------------
//!        g1(t)^2 + (1 - t^2) g2(t)^2 + eps
//! ```
//!
//! on the standardized interval `[-1, 1]`, together with pole/zero analysis and
//! the essential-uniqueness conditions for collections of such functions.
//!
//! The denominator is normalized so that the top Chebyshev coefficient of `g1`
//! equals `sqrt(8 + g2_top^2) / 2`. That coefficient is therefore not a free
//! parameter: the free parameter vector is `(h1, h2, g1 without its top
//! coefficient, g2)`, of length `2 d1' + 2 d2' + 1`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nls::{self, FnProblem, NlsOptions};
use crate::polybasis::{cheb_roots, chebyshev_matrix, ChebPoly, Grid};
use crate::sos;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_MATCH_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalModel {
    pub d1p: usize,
    pub d2p: usize,
    pub eps: f64,
    pub h1: ChebPoly,
    pub h2: ChebPoly,
    pub g1: ChebPoly,
    pub g2: ChebPoly,
    pub interval: (f64, f64),
}

/// Top coefficient of `g1` implied by the top coefficient of `g2`.
pub fn monic_top(g2_top: f64) -> f64 {
    (8.0 + g2_top * g2_top).sqrt() / 2.0
}

/// Half degrees `(d1', d2')` for the full degrees `(d1, d2)`; odd degrees are rejected.
pub fn half_degrees(d1: usize, d2: usize) -> Result<(usize, usize)> {
    if d1 % 2 == 1 {
        return Err(Error::OddDegree(d1));
    }
    if d2 % 2 == 1 {
        return Err(Error::OddDegree(d2));
    }
    Ok((d1 / 2, d2 / 2))
}

/// Vandermonde matrices and `1 - t^2` at a set of standardized points.
struct Bases {
    vh1: Arc<DMatrix<f64>>,
    vh2: Option<Arc<DMatrix<f64>>>,
    vg1: Arc<DMatrix<f64>>,
    vg2: Option<Arc<DMatrix<f64>>>,
    w: DVector<f64>,
}

impl Bases {
    fn on_grid(grid: &Grid, d1p: usize, d2p: usize) -> Self {
        Bases {
            vh1: grid.vandermonde(d1p),
            vh2: (d1p > 0).then(|| grid.vandermonde(d1p - 1)),
            vg1: grid.vandermonde(d2p),
            vg2: (d2p > 0).then(|| grid.vandermonde(d2p - 1)),
            w: grid.one_minus_t2(),
        }
    }

    fn on_points(x: &[f64], d1p: usize, d2p: usize) -> Self {
        Bases {
            vh1: Arc::new(chebyshev_matrix(x, d1p)),
            vh2: (d1p > 0).then(|| Arc::new(chebyshev_matrix(x, d1p - 1))),
            vg1: Arc::new(chebyshev_matrix(x, d2p)),
            vg2: (d2p > 0).then(|| Arc::new(chebyshev_matrix(x, d2p - 1))),
            w: DVector::from_iterator(x.len(), x.iter().map(|t| 1.0 - t * t)),
        }
    }
}

struct Parts {
    vh1: DVector<f64>,
    vh2: DVector<f64>,
    vg1: DVector<f64>,
    vg2: DVector<f64>,
    den: DVector<f64>,
    f: DVector<f64>,
}

fn mat_vec(v: &Option<Arc<DMatrix<f64>>>, c: &ChebPoly, m: usize) -> DVector<f64> {
    match v {
        Some(v) if !c.is_empty() => &**v * c.to_vector(),
        _ => DVector::zeros(m),
    }
}

impl RationalModel {
    /// Zero numerator over the default denominator.
    pub fn zeros(d1p: usize, d2p: usize, eps: f64, interval: (f64, f64)) -> Self {
        let (g1, g2) = Self::default_denominator(d2p);
        RationalModel {
            d1p,
            d2p,
            eps,
            h1: ChebPoly::zeros(d1p),
            h2: ChebPoly::new(vec![0.0; d1p]),
            g1,
            g2,
            interval,
        }
    }

    /// Denominator `2 + T_{2d}`, written as `3 T_d^2 + (1 - t^2) U_{d-1}^2`.
    /// It lies in `[1, 3]` on the interval and satisfies the normalization.
    pub fn default_denominator(d2p: usize) -> (ChebPoly, ChebPoly) {
        if d2p == 0 {
            return (ChebPoly::constant(monic_top(0.0)), ChebPoly::default());
        }
        let mut g1 = ChebPoly::zeros(d2p);
        g1.coeffs[d2p] = 3f64.sqrt();
        let g2 = ChebPoly::second_kind(d2p - 1);
        let m = RationalModel {
            d1p: 0,
            d2p,
            eps: 0.0,
            h1: ChebPoly::zeros(0),
            h2: ChebPoly::default(),
            g1,
            g2,
            interval: (-1.0, 1.0),
        }
        .normalize_monic();
        (m.g1, m.g2)
    }

    pub fn n_params_for(d1p: usize, d2p: usize) -> usize {
        2 * d1p + 1 + 2 * d2p
    }

    pub fn n_params(&self) -> usize {
        Self::n_params_for(self.d1p, self.d2p)
    }

    /// Full degrees `(2 d1', 2 d2')`.
    pub fn degrees(&self) -> (usize, usize) {
        (2 * self.d1p, 2 * self.d2p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.h1.coeffs.len() == self.d1p + 1
            && self.h2.coeffs.len() == self.d1p
            && self.g1.coeffs.len() == self.d2p + 1
            && self.g2.coeffs.len() == self.d2p
            && self.eps >= 0.0
            && self.interval.1 > self.interval.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "rational model has inconsistent coefficient lengths".into(),
            ))
        }
    }

    pub fn params(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&self.h1.coeffs);
        out.extend_from_slice(&self.h2.coeffs);
        out.extend_from_slice(&self.g1.coeffs[..self.d2p]);
        out.extend_from_slice(&self.g2.coeffs);
        DVector::from_vec(out)
    }

    /// Model with the given free parameters; the normalized coefficient is recomputed.
    pub fn with_params(&self, theta: &[f64]) -> Self {
        let (d1p, d2p) = (self.d1p, self.d2p);
        assert_eq!(theta.len(), self.n_params(), "parameter vector length");
        let mut k = 0;
        let mut take = |n: usize| {
            let v = theta[k..k + n].to_vec();
            k += n;
            v
        };
        let h1 = take(d1p + 1);
        let h2 = take(d1p);
        let mut g1 = take(d2p);
        let g2 = take(d2p);
        g1.push(0.0);
        RationalModel {
            h1: ChebPoly::new(h1),
            h2: ChebPoly::new(h2),
            g1: ChebPoly::new(g1),
            g2: ChebPoly::new(g2),
            ..self.clone()
        }
        .normalize_monic()
    }

    pub fn normalize_monic(&self) -> Self {
        let mut out = self.clone();
        let b = self.g2.coeffs.last().copied().unwrap_or(0.0);
        if let Some(top) = out.g1.coeffs.last_mut() {
            *top = monic_top(b);
        }
        out
    }

    /// Expanded numerator `h1^2 + (1 - t^2) h2^2`.
    pub fn numerator(&self) -> ChebPoly {
        self.h1
            .square()
            .add(&self.h2.square().times_one_minus_t2())
            .resized(2 * self.d1p)
    }

    /// Expanded denominator `g1^2 + (1 - t^2) g2^2 + eps`.
    pub fn denominator(&self) -> ChebPoly {
        let mut g = self
            .g1
            .square()
            .add(&self.g2.square().times_one_minus_t2())
            .resized(2 * self.d2p);
        g.coeffs[0] += self.eps;
        g
    }

    /// Value at a standardized abscissa.
    pub fn eval_std(&self, t: f64) -> f64 {
        let w = 1.0 - t * t;
        let num = self.h1.eval(t).powi(2) + w * self.h2.eval(t).powi(2);
        let den = self.g1.eval(t).powi(2) + w * self.g2.eval(t).powi(2) + self.eps;
        num / den
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.matches_interval(self.interval) {
            Ok(())
        } else {
            let (grid_min, grid_max) = grid.interval();
            Err(Error::IntervalMismatch {
                grid_min,
                grid_max,
                model_min: self.interval.0,
                model_max: self.interval.1,
            })
        }
    }

    fn parts(&self, b: &Bases) -> Parts {
        let m = b.w.len();
        let vh1 = &*b.vh1 * self.h1.to_vector();
        let vh2 = mat_vec(&b.vh2, &self.h2, m);
        let vg1 = &*b.vg1 * self.g1.to_vector();
        let vg2 = mat_vec(&b.vg2, &self.g2, m);
        let num = vh1.component_mul(&vh1) + b.w.component_mul(&vh2.component_mul(&vh2));
        let den = vg1.component_mul(&vg1)
            + b.w.component_mul(&vg2.component_mul(&vg2))
            + DVector::from_element(m, self.eps);
        let f = num.component_div(&den);
        Parts {
            vh1,
            vh2,
            vg1,
            vg2,
            den,
            f,
        }
    }

    fn jacobian_on(&self, b: &Bases, weight: Option<&DVector<f64>>) -> DMatrix<f64> {
        let m = b.w.len();
        let p = self.parts(b);
        let (d1p, d2p) = (self.d1p, self.d2p);
        let mut jac = DMatrix::zeros(m, self.n_params());
        let g2_top = self.g2.coeffs.last().copied().unwrap_or(0.0);
        let dtop = g2_top / (4.0 * monic_top(g2_top));
        for i in 0..m {
            let wt = weight.map_or(1.0, |w| w[i]);
            let inv = wt / p.den[i];
            let fd = -wt * p.f[i] / p.den[i];
            let mut col = 0;
            for k in 0..=d1p {
                jac[(i, col)] = 2.0 * p.vh1[i] * b.vh1[(i, k)] * inv;
                col += 1;
            }
            if let Some(v) = &b.vh2 {
                for k in 0..d1p {
                    jac[(i, col)] = 2.0 * b.w[i] * p.vh2[i] * v[(i, k)] * inv;
                    col += 1;
                }
            }
            for k in 0..d2p {
                jac[(i, col)] = fd * 2.0 * p.vg1[i] * b.vg1[(i, k)];
                col += 1;
            }
            if let Some(v) = &b.vg2 {
                for k in 0..d2p {
                    let mut dden = 2.0 * b.w[i] * p.vg2[i] * v[(i, k)];
                    if k + 1 == d2p {
                        dden += 2.0 * p.vg1[i] * b.vg1[(i, d2p)] * dtop;
                    }
                    jac[(i, col)] = fd * dden;
                    col += 1;
                }
            }
        }
        jac
    }

    /// Rational model of the ratio `h / g` of two polynomials that are
    /// nonnegative (respectively positive) on the grid.
    ///
    /// Both are checked on a ten-times denser grid and shifted by a constant
    /// when they dip below zero between grid points. The pair is then scaled
    /// jointly so that the denominator satisfies the normalization and each
    /// polynomial is rewritten in sum-of-squares form.
    pub fn from_ratio(
        h: &ChebPoly,
        g: &ChebPoly,
        d1p: usize,
        d2p: usize,
        eps: f64,
        grid: &Grid,
    ) -> Result<Self> {
        let first = Self::from_ratio_capped(h, g, d1p, d2p, eps, grid, 1e8)?;
        if d2p < 2 {
            return Ok(first);
        }
        // a tighter cap is exact on nearly-constant ratios but ill-conditioned elsewhere
        let second = Self::from_ratio_capped(h, g, d1p, d2p, eps, grid, 1e12)?;
        let dense = grid.refined(10);
        let x = dense.tau_std();
        let ratio_err = |m: &RationalModel| {
            let (num, den) = (m.numerator(), m.denominator());
            x.iter().fold(0.0f64, |acc, &t| {
                let want = h.eval(t) / g.eval(t);
                acc.max((num.eval(t) / den.eval(t) - want).abs())
            })
        };
        let (e1, e2) = (ratio_err(&first), ratio_err(&second));
        Ok(if e2.is_finite() && !(e2 >= e1) { second } else { first })
    }

    fn from_ratio_capped(
        h: &ChebPoly,
        g: &ChebPoly,
        d1p: usize,
        d2p: usize,
        eps: f64,
        grid: &Grid,
        cap: f64,
    ) -> Result<Self> {
        let dense = grid.refined(10);
        let x = dense.tau_std();
        let min_on = |p: &ChebPoly| x.iter().fold(f64::INFINITY, |a, &t| a.min(p.eval(t)));
        let mut h = h.resized(2 * d1p);
        let mut g = g.resized(2 * d2p);
        let hmin = min_on(&h);
        if hmin < 0.0 {
            h.coeffs[0] -= hmin;
        }
        let gmax = g.max_abs().max(f64::MIN_POSITIVE);
        let gmin = min_on(&g);
        if gmin <= 1e-10 * gmax {
            g.coeffs[0] += 1e-10 * gmax - gmin;
        }
        if g.max_abs() == 0.0 {
            g.coeffs[0] = 1.0;
        }

        let gmin = min_on(&g);
        let interval = grid.interval();
        let blank = |g1: ChebPoly, g2: ChebPoly| RationalModel {
            d1p,
            d2p,
            eps,
            h1: ChebPoly::zeros(d1p),
            h2: ChebPoly::new(vec![0.0; d1p]),
            g1,
            g2,
            interval,
        };
        // `target` is the denominator to reproduce; the numerator is scaled by `scale`
        let (mut model, mut scale, target) = match d2p {
            0 => {
                let s = (2.0 + eps) / g.coeffs[0];
                (
                    blank(ChebPoly::constant(monic_top(0.0)), ChebPoly::default()),
                    s,
                    g.scale(s),
                )
            }
            1 => match quadratic_denominator(&g, eps) {
                Some((g1, g2, s)) => (blank(g1, g2), s, g.scale(s)),
                None => {
                    let s = (8.0 / 3.0) / g.coeffs[0];
                    let start = blank(ChebPoly::new(vec![0.0, 0.0]), ChebPoly::constant(1.0))
                        .normalize_monic();
                    (start, s, g.scale(s))
                }
            },
            _ => {
                // the normalization fixes the top coefficient of the denominator to one;
                // when g's is too small, add beta (1 + T_2d') >= 0 with a scale that makes it negligible
                let top = g.coeffs[2 * d2p];
                let s_cap = cap / gmin;
                let s = if top > 0.0 {
                    (1.0 / top).min(s_cap)
                } else {
                    s_cap
                };
                let beta = 1.0 - s * top;
                let mut t = g.scale(s);
                if beta > 0.0 {
                    t.coeffs[0] += beta;
                    t.coeffs[2 * d2p] += beta;
                }
                let mut shifted = t.clone();
                shifted.coeffs[0] -= eps;
                let fit = sos::lukacs(&shifted, d2p);
                let mut g1 = fit.a;
                if g1.coeffs[d2p] < 0.0 {
                    g1 = g1.scale(-1.0);
                }
                (blank(g1, fit.b).normalize_monic(), s, t)
            }
        };

        let cheb: Vec<f64> = {
            let n = 8 * (d1p + d2p) + 16;
            (0..n)
                .map(|k| -(std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos())
                .collect()
        };
        let den_err = |m: &RationalModel, sigma: f64| {
            let gd = m.denominator();
            let mut err: f64 = 0.0;
            let mut sc: f64 = 0.0;
            for &t in &cheb {
                let v = sigma * target.eval(t);
                sc = sc.max(v.abs());
                err = err.max((gd.eval(t) - v).abs());
            }
            err / sc.max(f64::MIN_POSITIVE)
        };
        if d2p > 0 && den_err(&model, 1.0) > 1e-10 {
            let (polished, sigma) = polish_denominator(&model, &target, 1.0, &cheb);
            if den_err(&polished, sigma) < den_err(&model, 1.0) {
                model = polished;
                scale *= sigma;
            }
        }

        let num_fit = sos::lukacs(&h.scale(scale), d1p);
        model.h1 = num_fit.a;
        model.h2 = num_fit.b;
        Ok(model)
    }
}

/// Exact normalized representation of a positive quadratic `s g`, when one exists.
///
/// With `g1 = a0 + a T_1` and `g2 = b`, the denominator is
/// `a0^2 + b^2 + eps + 2 a0 a t + (a^2 - b^2) t^2` with `a^2 = 2 + b^2 / 4`,
/// which leaves a scalar equation in `s`.
fn quadratic_denominator(g: &ChebPoly, eps: f64) -> Option<(ChebPoly, ChebPoly, f64)> {
    let c = &g.coeffs;
    let (p, r, q) = (c[0] - c[2], c[1], 2.0 * c[2]);
    let f = |s: f64| {
        3.0 * s * s * r * r / (4.0 * (8.0 - s * q)) + (8.0 - 4.0 * s * q) / 3.0 + eps - s * p
    };
    let s_hi = if q > 0.0 { 2.0 / q } else { 1e12 / g.max_abs() };
    let mut lo = 0.0;
    let mut hi = None;
    for k in 0..=600 {
        let s = s_hi * 10f64.powf(-12.0 + 12.0 * k as f64 / 600.0);
        if f(s) <= 0.0 {
            hi = Some(s);
            break;
        }
        lo = s;
    }
    let mut hi = hi?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = hi;
    let b2 = ((8.0 - 4.0 * s * q) / 3.0).max(0.0);
    let b = b2.sqrt();
    let a = monic_top(b);
    let a0 = s * r / (2.0 * a);
    Some((ChebPoly::new(vec![a0, a]), ChebPoly::constant(b), s))
}

/// Least-squares fit of the normalized denominator (and the joint scale) to `s g`.
fn polish_denominator(
    model: &RationalModel,
    g: &ChebPoly,
    scale: f64,
    x: &[f64],
) -> (RationalModel, f64) {
    let basis = Bases::on_points(x, 0, model.d2p);
    let gv = DVector::from_iterator(x.len(), x.iter().map(|&t| g.eval(t)));
    let norm = (gv.amax() * scale).max(f64::MIN_POSITIVE);
    let probe = RationalModel {
        d1p: 0,
        h1: ChebPoly::constant(1.0),
        h2: ChebPoly::default(),
        ..model.clone()
    };
    let np = 2 * model.d2p;
    let build = |th: &DVector<f64>| {
        let mut full = vec![1.0];
        full.extend_from_slice(&th.as_slice()[..np]);
        probe.with_params(&full)
    };
    let problem = FnProblem {
        n_params: np + 1,
        n_residuals: x.len(),
        residual: |th: &DVector<f64>| {
            let m = build(th);
            let p = m.parts(&basis);
            (p.den - &gv * th[np]) / norm
        },
        jacobian: |th: &DVector<f64>| {
            let m = build(th);
            let p = m.parts(&basis);
            // d f / d theta = -f / den * d den / d theta with f = 1 / den
            let jf = m.jacobian_on(&basis, None);
            let mut j = DMatrix::zeros(x.len(), np + 1);
            for i in 0..x.len() {
                let factor = -p.den[i] * p.den[i];
                for k in 0..np {
                    j[(i, k)] = jf[(i, k + 1)] * factor / norm;
                }
                j[(i, np)] = -gv[i] / norm;
            }
            j
        },
    };
    let mut theta0 = DVector::zeros(np + 1);
    theta0
        .rows_mut(0, np)
        .copy_from_slice(&model.params().as_slice()[model.n_params() - np..]);
    theta0[np] = scale;
    let opts = NlsOptions::default().with_tol(1e-15).with_max_iter(200);
    match nls::solve(&problem, &theta0, &opts) {
        Ok(res) if res.theta[np] > 0.0 => {
            let fitted = build(&res.theta);
            let out = RationalModel {
                g1: fitted.g1,
                g2: fitted.g2,
                ..model.clone()
            };
            (out, res.theta[np])
        }
        _ => (model.clone(), scale),
    }
}

/// Values of the model at the grid points.
pub fn eval_rational(model: &RationalModel, grid: &Grid) -> Result<DVector<f64>> {
    model.check_grid(grid)?;
    Ok(model.parts(&Bases::on_grid(grid, model.d1p, model.d2p)).f)
}

/// Jacobian of the sampled model with respect to the free parameters, rows
/// scaled by `weight` when given.
pub fn eval_jacobian(
    model: &RationalModel,
    grid: &Grid,
    weight: Option<&DVector<f64>>,
) -> Result<DMatrix<f64>> {
    model.check_grid(grid)?;
    Ok(model.jacobian_on(&Bases::on_grid(grid, model.d1p, model.d2p), weight))
}

/// Values and Jacobian in one pass.
pub fn eval_with_jacobian(
    model: &RationalModel,
    grid: &Grid,
    weight: Option<&DVector<f64>>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    model.check_grid(grid)?;
    let b = Bases::on_grid(grid, model.d1p, model.d2p);
    let f = model.parts(&b).f;
    Ok((f, model.jacobian_on(&b, weight)))
}

pub fn normalize_monic(model: &RationalModel) -> RationalModel {
    model.normalize_monic()
}

/// Zeros and poles in standardized coordinates (the interval maps to `[-1, 1]`).
pub fn poles_and_zeros(model: &RationalModel) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let zeros = if model.d1p == 0 {
        Vec::new()
    } else {
        cheb_roots(&model.numerator())?
    };
    let poles = if model.d2p == 0 {
        Vec::new()
    } else {
        cheb_roots(&model.denominator())?
    };
    Ok((zeros, poles))
}

#[derive(Debug, Clone, Serialize)]
pub struct PoleReport {
    pub per_function: Vec<Vec<Complex64>>,
    /// Multiset union: each distinct pole with its largest multiplicity over functions.
    pub all_poles: Vec<Complex64>,
    /// Poles appearing in exactly one function, tagged with that function's index.
    pub unique_poles: Vec<(usize, Complex64)>,
    pub unique_per_function: Vec<usize>,
    pub match_tol: f64,
}

struct Clusters {
    reps: Vec<Complex64>,
    /// `counts[c][l]`: copies of cluster `c` among the poles of function `l`.
    counts: Vec<Vec<usize>>,
}

fn cluster_poles(poles: &[Vec<Complex64>], tol: f64) -> Clusters {
    let flat: Vec<(usize, Complex64)> = poles
        .iter()
        .enumerate()
        .flat_map(|(l, ps)| ps.iter().map(move |&p| (l, p)))
        .collect();
    let n = flat.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (flat[i].1, flat[j].1);
            if (p - q).norm() <= tol * (1.0 + p.norm().max(q.norm())) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut index = vec![usize::MAX; n];
    let mut reps = Vec::new();
    let mut counts: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        if index[root] == usize::MAX {
            index[root] = reps.len();
            reps.push(flat[root].1);
            counts.push(vec![0; poles.len()]);
        }
        counts[index[root]][flat[i].0] += 1;
    }
    Clusters { reps, counts }
}

/// Unique copies of one pole value among the functions selected by `mask`:
/// the largest multiplicity minus the second largest, owned by the function
/// holding the largest one (lowest index on ties, which then yields zero).
fn unique_copies(counts: &[usize], mask: u64) -> (usize, usize) {
    let mut best = (0usize, usize::MAX);
    let mut second = 0usize;
    for (l, &c) in counts.iter().enumerate() {
        if mask >> l & 1 == 0 {
            continue;
        }
        if c > best.0 {
            second = best.0;
            best = (c, l);
        } else if c > second {
            second = c;
        }
    }
    (best.0 - second, best.1)
}

pub fn unique_pole_report_from_poles(poles: Vec<Vec<Complex64>>, match_tol: f64) -> PoleReport {
    let clusters = cluster_poles(&poles, match_tol);
    let all_mask = if poles.len() >= 64 {
        u64::MAX
    } else {
        (1u64 << poles.len()) - 1
    };
    let mut all_poles = Vec::new();
    let mut unique_poles = Vec::new();
    let mut unique_per_function = vec![0; poles.len()];
    for (rep, counts) in clusters.reps.iter().zip(&clusters.counts) {
        let max = counts.iter().copied().max().unwrap_or(0);
        all_poles.extend(std::iter::repeat_n(*rep, max));
        let (u, owner) = unique_copies(counts, all_mask);
        if u > 0 {
            unique_poles.extend(std::iter::repeat_n((owner, *rep), u));
            unique_per_function[owner] += u;
        }
    }
    PoleReport {
        per_function: poles,
        all_poles,
        unique_poles,
        unique_per_function,
        match_tol,
    }
}

pub fn unique_pole_report(models: &[RationalModel], match_tol: f64) -> Result<PoleReport> {
    let poles = models
        .iter()
        .map(|m| poles_and_zeros(m).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    Ok(unique_pole_report_from_poles(poles, match_tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UniquenessMode {
    Corollary,
    Exhaustive,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub holds: bool,
    pub mode: UniquenessMode,
    pub r: usize,
    pub m: usize,
    pub degrees: (usize, usize),
    /// `m > d1 + r d2`.
    pub enough_points: bool,
    /// Real poles inside the interval (possible only when `eps = 0`).
    pub real_poles_in_interval: usize,
    pub required_per_function: usize,
    pub unique_per_function: Vec<usize>,
    pub corollary_holds: bool,
    /// Subset condition, evaluated in exhaustive mode only.
    pub subset_condition_holds: Option<bool>,
    pub failing_subset: Option<Vec<usize>>,
}

/// Uniqueness conditions from explicit pole lists of functions of degree `(d1, d2)`.
pub fn check_uniqueness_poles(
    poles: &[Vec<Complex64>],
    d1: usize,
    d2: usize,
    m: usize,
    mode: UniquenessMode,
    match_tol: f64,
) -> Result<UniquenessReport> {
    let r = poles.len();
    if mode == UniquenessMode::Exhaustive && r > 20 {
        return Err(Error::SubsetExplosion(r));
    }
    let report = unique_pole_report_from_poles(poles.to_vec(), match_tol);
    let enough_points = m > d1 + r * d2;
    let real_poles_in_interval = poles
        .iter()
        .flatten()
        .filter(|p| p.im.abs() <= 1e-9 * (1.0 + p.norm()) && (-1.0..=1.0).contains(&p.re))
        .count();
    let required = (d2 + 2) / 2;
    let corollary_holds = r == 1 || report.unique_per_function.iter().all(|&u| u >= required);

    let (subset_condition_holds, failing_subset) = if mode == UniquenessMode::Exhaustive {
        let clusters = cluster_poles(poles, match_tol);
        let mut failing = None;
        for mask in 0u64..(1u64 << r) {
            if mask.count_ones() < 2 {
                continue;
            }
            let unique: usize = clusters
                .counts
                .iter()
                .map(|c| unique_copies(c, mask).0)
                .sum();
            if unique < d2 + 1 {
                failing = Some((0..r).filter(|l| mask >> l & 1 == 1).collect());
                break;
            }
        }
        (Some(failing.is_none()), failing)
    } else {
        (None, None)
    };

    let base = enough_points && real_poles_in_interval == 0;
    let holds = base
        && match mode {
            UniquenessMode::Corollary => corollary_holds,
            UniquenessMode::Exhaustive => subset_condition_holds == Some(true),
        };
    Ok(UniquenessReport {
        holds,
        mode,
        r,
        m,
        degrees: (d1, d2),
        enough_points,
        real_poles_in_interval,
        required_per_function: required,
        unique_per_function: report.unique_per_function,
        corollary_holds,
        subset_condition_holds,
        failing_subset,
    })
}

/// Checks the essential-uniqueness conditions for sampled functions on `m` points.
pub fn check_uniqueness(
    models: &[RationalModel],
    m: usize,
    mode: UniquenessMode,
) -> Result<UniquenessReport> {
    let first = models.first().ok_or(Error::DegreeMismatch)?;
    if models
        .iter()
        .any(|x| x.d1p != first.d1p || x.d2p != first.d2p || x.interval != first.interval)
    {
        return Err(Error::DegreeMismatch);
    }
    if mode == UniquenessMode::Exhaustive && models.len() > 20 {
        return Err(Error::SubsetExplosion(models.len()));
    }
    let poles = models
        .iter()
        .map(|x| poles_and_zeros(x).map(|(_, p)| p))
        .collect::<Result<Vec<_>>>()?;
    let (d1, d2) = first.degrees();
    check_uniqueness_poles(&poles, d1, d2, m, mode, DEFAULT_MATCH_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, d1p: usize, d2p: usize) -> RationalModel {
        let base = RationalModel::zeros(d1p, d2p, DEFAULT_EPS, (-1.0, 1.0));
        let theta: Vec<f64> = (0..base.n_params())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        base.with_params(&theta)
    }

    fn grid() -> Grid {
        Grid::equispaced(60, -1.0, 1.0).unwrap()
    }

    #[test]
    fn constant_model() {
        let mut m = RationalModel::zeros(0, 0, 1e-6, (-1.0, 1.0));
        m.h1 = ChebPoly::constant(1.0);
        let f = eval_rational(&m, &grid()).unwrap();
        let expected = 1.0 / (2.0 + 1e-6);
        assert!(f.iter().all(|v| (v - expected).abs() < 1e-15));
    }

    #[test]
    fn zero_numerator_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = random_model(&mut rng, 3, 2);
        m.h1 = ChebPoly::zeros(3);
        m.h2 = ChebPoly::zeros(2);
        assert!(eval_rational(&m, &grid())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn eval_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Grid::equispaced(45, 2.0, 9.0).unwrap();
        for _ in 0..20 {
            let (a, b) = (rng.random_range(0..5), rng.random_range(0..5));
            let mut m = random_model(&mut rng, a, b);
            m.interval = (2.0, 9.0);
            let f = eval_rational(&m, &g).unwrap();
            for (i, &t) in g.tau().iter().enumerate() {
                // independent scalar evaluation through the trigonometric definition
                let s = (2.0 * t - 11.0) / 7.0;
                let th = s.clamp(-1.0, 1.0).acos();
                let cheb = |c: &ChebPoly| -> f64 {
                    c.coeffs
                        .iter()
                        .enumerate()
                        .map(|(k, a)| a * (k as f64 * th).cos())
                        .sum()
                };
                let w = 1.0 - s * s;
                let num = cheb(&m.h1).powi(2) + w * cheb(&m.h2).powi(2);
                let den = cheb(&m.g1).powi(2) + w * cheb(&m.g2).powi(2) + m.eps;
                assert_abs_diff_eq!(f[i], num / den, epsilon = 1e-12 * (1.0 + f[i].abs()));
            }
        }
    }

    #[test]
    fn interval_mismatch() {
        let m = RationalModel::zeros(1, 1, 1e-6, (0.0, 2.0));
        assert!(matches!(
            eval_rational(&m, &grid()),
            Err(Error::IntervalMismatch { .. })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid();
        for _ in 0..30 {
            let (a, b) = (rng.random_range(0..5), rng.random_range(0..5));
            let m = random_model(&mut rng, a, b);
            let weight = DVector::from_fn(g.len(), |_, _| rng.random_range(0.5..2.0));
            let jac = eval_jacobian(&m, &g, Some(&weight)).unwrap();
            let theta = m.params();
            let h = 1e-6;
            for k in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let fp = eval_rational(&m.with_params(tp.as_slice()), &g).unwrap();
                let fm = eval_rational(&m.with_params(tm.as_slice()), &g).unwrap();
                let fd = (fp - fm).component_mul(&weight) / (2.0 * h);
                let col = jac.column(k);
                let err = (&fd - col).norm() / fd.norm().max(1e-8);
                assert!(err <= 1e-5, "column {k}: relative error {err}");
            }
        }
    }

    #[test]
    fn jacobian_degree_zero_and_zero_numerator() {
        let g = grid();
        let mut m = RationalModel::zeros(0, 0, 1e-6, (-1.0, 1.0));
        m.h1 = ChebPoly::constant(0.7);
        let j = eval_jacobian(&m, &g, None).unwrap();
        assert_eq!(j.ncols(), 1);
        for v in j.iter() {
            assert_abs_diff_eq!(*v, 2.0 * 0.7 / (2.0 + 1e-6), epsilon = 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = random_model(&mut rng, 2, 3);
        m.h1 = ChebPoly::zeros(2);
        m.h2 = ChebPoly::zeros(1);
        let j = eval_jacobian(&m, &g, None).unwrap();
        let n_num = 2 * 2 + 1;
        assert!(j
            .columns(n_num, j.ncols() - n_num)
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn monic_normalization() {
        let mut m = RationalModel::zeros(1, 2, 1e-6, (-1.0, 1.0));
        m.g2.coeffs[1] = 0.0;
        assert_abs_diff_eq!(
            m.normalize_monic().g1.coeffs[2],
            2f64.sqrt(),
            epsilon = 1e-15
        );
        m.g2.coeffs[1] = 1.0;
        let n = m.normalize_monic();
        assert_abs_diff_eq!(n.g1.coeffs[2], 1.5, epsilon = 1e-15);
        assert_eq!(n.normalize_monic(), n);
        // for d2' >= 2 the normalization makes the denominator's top Chebyshev coefficient one
        let d = n.denominator();
        assert_abs_diff_eq!(d.coeffs[4], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn default_denominator_is_between_one_and_three() {
        for d2p in 0..6 {
            let m = RationalModel::zeros(0, d2p, 0.0, (-1.0, 1.0));
            for k in 0..=200 {
                let t = -1.0 + k as f64 / 100.0;
                let v = m.denominator().eval(t);
                if d2p == 0 {
                    assert_abs_diff_eq!(v, 2.0, epsilon = 1e-14);
                } else if d2p >= 2 {
                    assert!(
                        (1.0 - 1e-12..=3.0 + 1e-12).contains(&v),
                        "d2p={d2p} t={t} v={v}"
                    );
                } else {
                    assert!(v > 0.0);
                }
            }
        }
    }

    #[test]
    fn zeros_of_t_squared() {
        let mut m = RationalModel::zeros(1, 1, 1e-6, (-1.0, 1.0));
        m.h1 = ChebPoly::new(vec![0.0, 1.0]);
        m.h2 = ChebPoly::constant(0.0);
        let (zeros, _) = poles_and_zeros(&m).unwrap();
        assert_eq!(zeros.len(), 2);
        assert!(zeros.iter().all(|z| z.norm() < 1e-7));
    }

    #[test]
    fn poles_avoid_the_interval_and_are_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let d2p = rng.random_range(1..5);
            let m = random_model(&mut rng, 2, d2p);
            let (_, poles) = poles_and_zeros(&m).unwrap();
            assert_eq!(poles.len(), 2 * m.d2p);
            let den = m.denominator();
            for p in &poles {
                assert!(!(p.im.abs() < 1e-12 && p.re.abs() <= 1.0));
                assert!(den.eval_complex(*p).norm() <= 1e-6 * den.norm());
            }
        }
    }

    #[test]
    fn worked_example_of_unique_poles() {
        let p = Complex64::new(2.0, 0.5);
        let report = unique_pole_report_from_poles(vec![vec![p, p, p], vec![p, p]], 1e-6);
        assert_eq!(report.all_poles.len(), 3);
        assert_eq!(report.unique_poles, vec![(0, p)]);
    }

    #[test]
    fn disjoint_and_identical_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_model(&mut rng, 2, 2);
        let b = random_model(&mut rng, 2, 2);
        let rep = unique_pole_report(&[a.clone(), b], 1e-6).unwrap();
        assert_eq!(rep.unique_poles.len(), 8);
        let rep = unique_pole_report(&[a.clone(), a], 1e-6).unwrap();
        assert_eq!(rep.unique_poles.len(), 0);
    }

    #[test]
    fn uniqueness_for_two_disjoint_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_model(&mut rng, 2, 2);
        let b = random_model(&mut rng, 2, 2);
        let m = 4 + 2 * 4 + 1;
        for mode in [UniquenessMode::Corollary, UniquenessMode::Exhaustive] {
            let rep = check_uniqueness(&[a.clone(), b.clone()], m, mode).unwrap();
            assert!(rep.holds, "{rep:?}");
            let rep = check_uniqueness(&[a.clone(), b.clone()], m - 1, mode).unwrap();
            assert!(!rep.holds);
            let rep = check_uniqueness(&[a.clone(), a.clone()], m, mode).unwrap();
            assert!(!rep.holds);
        }
    }

    #[test]
    fn degree_mismatch_and_subset_explosion() {
        let a = RationalModel::zeros(1, 1, 1e-6, (-1.0, 1.0));
        let b = RationalModel::zeros(1, 2, 1e-6, (-1.0, 1.0));
        assert_eq!(
            check_uniqueness(&[a, b], 50, UniquenessMode::Corollary).unwrap_err(),
            Error::DegreeMismatch
        );
        let poles = vec![vec![Complex64::new(3.0, 0.0)]; 21];
        assert_eq!(
            check_uniqueness_poles(&poles, 0, 1, 100, UniquenessMode::Exhaustive, 1e-6)
                .unwrap_err(),
            Error::SubsetExplosion(21)
        );
    }

    /// Brute-force unique count over a subset: expand every pole copy and
    /// keep a copy when no other selected function holds that many copies.
    fn brute_unique(poles: &[Vec<Complex64>], subset: &[usize]) -> usize {
        let mut values: Vec<Complex64> = Vec::new();
        for &l in subset {
            for p in &poles[l] {
                if !values.iter().any(|v| (v - p).norm() < 1e-9) {
                    values.push(*p);
                }
            }
        }
        let mut total = 0;
        for v in values {
            let mut counts: Vec<usize> = subset
                .iter()
                .map(|&l| poles[l].iter().filter(|p| (*p - v).norm() < 1e-9).count())
                .collect();
            counts.sort_unstable();
            counts.reverse();
            for copy in 1..=counts[0] {
                if counts.iter().filter(|&&c| c >= copy).count() == 1 {
                    total += 1;
                }
            }
        }
        total
    }

    #[test]
    fn pairwise_sharing_passes_pairs_but_fails_the_triple() {
        // d2 = 6: two own poles per function and two shared with each other function
        let c = |x: f64, y: f64| Complex64::new(x, y);
        let s12 = [c(2.0, 1.0), c(2.0, -1.0)];
        let s13 = [c(-2.0, 1.0), c(-2.0, -1.0)];
        let s23 = [c(0.0, 3.0), c(0.0, -3.0)];
        let own = |k: f64| [c(1.5 + k, 0.2), c(1.5 + k, -0.2)];
        let poles = vec![
            [own(0.0), s12, s13].concat(),
            [own(1.0), s12, s23].concat(),
            [own(2.0), s13, s23].concat(),
        ];
        let d2 = 6;
        for pair in [[0, 1], [0, 2], [1, 2]] {
            assert!(brute_unique(&poles, &pair) >= d2 + 1);
        }
        assert!(brute_unique(&poles, &[0, 1, 2]) < d2 + 1);
        let m = 100;
        let rep =
            check_uniqueness_poles(&poles, 6, d2, m, UniquenessMode::Exhaustive, 1e-6).unwrap();
        assert!(!rep.holds);
        assert_eq!(rep.failing_subset, Some(vec![0, 1, 2]));
        // the subset oracle agrees with the clustered counts on every subset
        for mask in 3u64..8 {
            let subset: Vec<usize> = (0..3).filter(|l| mask >> l & 1 == 1).collect();
            if subset.len() < 2 {
                continue;
            }
            let clusters = cluster_poles(&poles, 1e-6);
            let fast: usize = clusters
                .counts
                .iter()
                .map(|c| unique_copies(c, mask).0)
                .sum();
            assert_eq!(fast, brute_unique(&poles, &subset));
        }
    }

    // ---- monomial-basis complex polynomials for the linear-combination oracles ----

    fn poly_from_roots(roots: &[Complex64], lead: Complex64) -> Vec<Complex64> {
        let mut p = vec![lead];
        for r in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); p.len() + 1];
            for (k, c) in p.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= c * r;
            }
            p = next;
        }
        p
    }

    fn poly_eval(p: &[Complex64], t: Complex64) -> Complex64 {
        p.iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * t + c)
    }

    fn poly_add(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); a.len().max(b.len())];
        for (k, c) in a.iter().enumerate() {
            out[k] += c;
        }
        for (k, c) in b.iter().enumerate() {
            out[k] += c;
        }
        out
    }

    /// Divides by `(t - q)` by synthetic division, dropping the remainder.
    fn deflate(p: &[Complex64], q: Complex64) -> Vec<Complex64> {
        let n = p.len() - 1;
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        let mut carry = Complex64::new(0.0, 0.0);
        for k in (0..n).rev() {
            carry = p[k + 1] + carry * q;
            out[k] = carry;
        }
        out
    }

    #[test]
    fn linear_combinations_keep_unique_poles() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let c = |rng: &mut ChaCha8Rng| {
            Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(0.2..1.5))
        };
        for _ in 0..40 {
            let r = rng.random_range(2..=3);
            let d2 = rng.random_range(1..=4);
            let d1 = rng.random_range(0..=4);
            let shared = c(&mut rng);
            let mut poles: Vec<Vec<Complex64>> = Vec::new();
            let mut zeros: Vec<Vec<Complex64>> = Vec::new();
            for _ in 0..r {
                let mut ps = vec![shared];
                for _ in 1..d2 {
                    ps.push(c(&mut rng));
                }
                poles.push(ps);
                zeros.push((0..d1).map(|_| c(&mut rng)).collect());
            }
            let report = unique_pole_report_from_poles(poles.clone(), 1e-9);
            // common denominator over the union of poles (the shared pole once)
            let mut union: Vec<Complex64> = vec![shared];
            for ps in &poles {
                union.extend_from_slice(&ps[1..]);
            }
            let mut num = vec![Complex64::new(0.0, 0.0)];
            for l in 0..r {
                let beta = Complex64::new(rng.random_range(0.5..2.0), 0.0);
                let others: Vec<Complex64> = union
                    .iter()
                    .copied()
                    .filter(|u| !poles[l].iter().any(|p| (p - u).norm() < 1e-12))
                    .collect();
                let mut roots = zeros[l].clone();
                roots.extend(others);
                num = poly_add(&num, &poly_from_roots(&roots, beta));
            }
            // cancel common factors
            let mut den_deg = union.len();
            let scale = num.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for q in &union {
                if poly_eval(&num, *q).norm()
                    <= 1e-8 * scale * (1.0 + q.norm()).powi(num.len() as i32)
                {
                    num = deflate(&num, *q);
                    den_deg -= 1;
                }
            }
            assert!(
                den_deg >= report.unique_poles.len(),
                "{den_deg} < {}",
                report.unique_poles.len()
            );
        }
    }

    #[test]
    fn agreement_on_enough_points_implies_identity() {
        // f1, f2 share a denominator, so f* = b1 f1 + b2 f2 has degree (d1, d2);
        // fit f* on m > d1 + r d2 points by a linearized solve and compare elsewhere.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let (d1, d2, r) = (3usize, 2usize, 2usize);
            let den_roots = [Complex64::new(0.3, 1.1), Complex64::new(0.3, -1.1)];
            let den = poly_from_roots(&den_roots, Complex64::new(1.0, 0.0));
            let nums: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..=d1).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let betas: Vec<f64> = (0..r).map(|_| rng.random_range(0.5..1.5)).collect();
            let target = |t: f64| -> f64 {
                let dv = poly_eval(&den, Complex64::new(t, 0.0)).re;
                nums.iter()
                    .zip(&betas)
                    .map(|(n, b)| b * n.iter().rev().fold(0.0, |a, c| a * t + c) / dv)
                    .sum()
            };
            let m = d1 + r * d2 + 1;
            let pts: Vec<f64> = (0..m)
                .map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64)
                .collect();
            // unknowns: numerator (d1+1) and denominator (d2, monic)
            let n_unk = d1 + 1 + d2;
            let a = DMatrix::from_fn(m, n_unk, |i, j| {
                let t = pts[i];
                if j <= d1 {
                    t.powi(j as i32)
                } else {
                    -target(t) * t.powi((j - d1 - 1) as i32)
                }
            });
            let b = DVector::from_fn(m, |i, _| target(pts[i]) * pts[i].powi(d2 as i32));
            let sol = a.svd(true, true).solve(&b, 1e-14).unwrap();
            let fstar = |t: f64| {
                let nv: f64 = (0..=d1).map(|j| sol[j] * t.powi(j as i32)).sum();
                let dv: f64 = (0..d2)
                    .map(|j| sol[d1 + 1 + j] * t.powi(j as i32))
                    .sum::<f64>()
                    + t.powi(d2 as i32);
                nv / dv
            };
            for _ in 0..100 {
                let t = rng.random_range(-1.0..1.0);
                assert_abs_diff_eq!(fstar(t), target(t), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn from_ratio_reproduces_the_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = Grid::equispaced(120, -1.0, 1.0).unwrap();
        for (d1p, d2p) in [(0, 0), (1, 0), (2, 1), (3, 2), (4, 4), (8, 8)] {
            let m = random_model(&mut rng, d1p, d2p);
            let h = m.numerator();
            let den = m.denominator().scale(3.7);
            let converted =
                RationalModel::from_ratio(&h.scale(3.7), &den, d1p, d2p, DEFAULT_EPS, &g).unwrap();
            converted.validate().unwrap();
            let a = eval_rational(&m, &g).unwrap();
            let b = eval_rational(&converted, &g).unwrap();
            let err = (&a - &b).norm() / a.norm();
            assert!(err < 1e-8, "degrees ({d1p},{d2p}): {err}");
            assert_eq!(
                converted.g1.coeffs[d2p],
                monic_top(converted.g2.coeffs.last().copied().unwrap_or(0.0))
            );
        }
    }

    #[test]
    fn same_function_same_denominator_top() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = Grid::equispaced(80, -1.0, 1.0).unwrap();
        for _ in 0..5 {
            let m = random_model(&mut rng, 2, 3);
            let other =
                RationalModel::from_ratio(&m.numerator(), &m.denominator(), 2, 3, m.eps, &g)
                    .unwrap();
            assert_abs_diff_eq!(
                m.denominator().coeffs[6],
                other.denominator().coeffs[6],
                epsilon = 1e-8
            );
        }
    }

    proptest! {
        #[test]
        fn models_are_nonnegative(seed in 0u64..1000, d1p in 0usize..6, d2p in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, d1p, d2p);
            let den = m.denominator();
            for k in 0..10_000 {
                let t = -1.0 + 2.0 * k as f64 / 9_999.0;
                prop_assert!(m.eval_std(t) >= 0.0);
                prop_assert!(den.eval(t) >= m.eps * (1.0 - 1e-9) - 1e-12);
            }
        }
    }
}
