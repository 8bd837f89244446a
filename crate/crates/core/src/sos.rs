//! Writing a polynomial that is nonnegative on `[-1, 1]` as `A^2 + (1 - t^2) B^2`.
//!
//! With `t = cos(theta)`, `p(cos theta)` is a nonnegative cosine polynomial and
//! admits a spectral factor `|Q(e^{i theta})|^2` (Fejér–Riesz). The real and
//! imaginary parts of `e^{-i d theta} Q(e^{i theta})` are `A(cos theta)` and
//! `sin(theta) B(cos theta)`. The factor is built from the roots of the
//! associated palindromic polynomial lying inside the unit disk, then polished
//! by a short least-squares fit when root selection was ambiguous.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::nls::{self, FnProblem, NlsOptions};
use crate::polybasis::{chebyshev_matrix, eigenvalues, ChebPoly};

/// Result of a decomposition; `rel_err` is the max deviation on Chebyshev
/// points relative to `max |p|` there.
#[derive(Debug, Clone)]
pub struct SosFit {
    pub a: ChebPoly,
    pub b: ChebPoly,
    pub rel_err: f64,
}

fn check_points(d: usize) -> Vec<f64> {
    let n = 4 * d + 8;
    (0..n)
        .map(|k| -(std::f64::consts::PI * (k as f64 + 0.5) / n as f64).cos())
        .collect()
}

fn sos_values(a: &ChebPoly, b: &ChebPoly, x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&t| {
            let av = a.eval(t);
            let bv = b.eval(t);
            av * av + (1.0 - t * t) * bv * bv
        })
        .collect()
}

fn relative_error(p: &ChebPoly, a: &ChebPoly, b: &ChebPoly, x: &[f64]) -> f64 {
    let vals = sos_values(a, b, x);
    let mut scale: f64 = 0.0;
    let mut err: f64 = 0.0;
    for (t, v) in x.iter().zip(vals) {
        let pv = p.eval(*t);
        scale = scale.max(pv.abs());
        err = err.max((pv - v).abs());
    }
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

/// Decomposes `p` (degree at most `2d`) into `A` of degree `d` and `B` of degree `d - 1`.
pub fn lukacs(p: &ChebPoly, d: usize) -> SosFit {
    let p = p.resized(2 * d);
    let x = check_points(d);
    if d == 0 {
        let a = ChebPoly::constant(p.coeffs[0].max(0.0).sqrt());
        let b = ChebPoly::default();
        let rel_err = relative_error(&p, &a, &b, &x);
        return SosFit { a, b, rel_err };
    }
    let (a, b) = spectral_factor(&p, d);
    let rel_err = relative_error(&p, &a, &b, &x);
    if rel_err <= 1e-12 {
        return SosFit { a, b, rel_err };
    }
    let (a2, b2) = polish(&p, d, &a, &b, &x);
    let rel2 = relative_error(&p, &a2, &b2, &x);
    if rel2 < rel_err {
        SosFit {
            a: a2,
            b: b2,
            rel_err: rel2,
        }
    } else {
        SosFit { a, b, rel_err }
    }
}

fn spectral_factor(p: &ChebPoly, d: usize) -> (ChebPoly, ChebPoly) {
    let max = p.max_abs();
    let zero = (ChebPoly::zeros(d), ChebPoly::zeros(d - 1));
    if max == 0.0 {
        return zero;
    }
    let deg = (0..p.coeffs.len())
        .rev()
        .find(|&k| p.coeffs[k].abs() > 1e-14 * max)
        .unwrap_or(0);
    if deg == 0 {
        let mut a = ChebPoly::zeros(d);
        a.coeffs[0] = p.coeffs[0].max(0.0).sqrt();
        return (a, ChebPoly::zeros(d - 1));
    }
    // z^deg * sum_k c_k z^k with c_0 = a_0 and c_{+-k} = a_k / 2
    let n = 2 * deg;
    let coef = |j: usize| -> f64 {
        let k = j.abs_diff(deg);
        if k == 0 {
            p.coeffs[0]
        } else {
            0.5 * p.coeffs[k]
        }
    };
    let lead = coef(n);
    let mut comp = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = 1.0;
    }
    for i in 0..n {
        comp[(i, n - 1)] = -coef(i) / lead;
    }
    let Some(mut roots) = eigenvalues(comp) else {
        let mut a = ChebPoly::zeros(d);
        a.coeffs[0] = p.coeffs[0].max(0.0).sqrt();
        return (a, ChebPoly::zeros(d - 1));
    };
    roots.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.im.total_cmp(&b.im)));
    roots.truncate(deg);

    let mut q = vec![Complex64::new(1.0, 0.0)];
    for rho in &roots {
        let mut next = vec![Complex64::new(0.0, 0.0); q.len() + 1];
        for (k, c) in q.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * rho;
        }
        q = next;
    }

    // scale so that |Q|^2 matches p(cos theta) in least squares
    let samples = 4 * deg + 4;
    let mut num = 0.0;
    let mut den = 0.0;
    for s in 0..samples {
        let th = std::f64::consts::PI * (s as f64 + 0.5) / samples as f64;
        let z = Complex64::from_polar(1.0, th);
        let mut qz = Complex64::new(0.0, 0.0);
        for c in q.iter().rev() {
            qz = qz * z + c;
        }
        let w = qz.norm_sqr();
        num += p.eval(th.cos()) * w;
        den += w * w;
    }
    let alpha = if den > 0.0 {
        (num / den).max(0.0).sqrt()
    } else {
        0.0
    };
    let mut qr = vec![0.0; 2 * d + 1];
    for (k, c) in q.iter().enumerate() {
        qr[k] = alpha * c.re;
    }

    let mut a = ChebPoly::zeros(d);
    a.coeffs[0] = qr[d];
    let mut b = ChebPoly::zeros(d - 1);
    for j in 1..=d {
        a.coeffs[j] = qr[d + j] + qr[d - j];
        let bj = qr[d + j] - qr[d - j];
        if bj != 0.0 {
            b = b.add(&ChebPoly::second_kind(j - 1).scale(bj));
        }
    }
    (a, b.resized(d - 1))
}

fn polish(p: &ChebPoly, d: usize, a: &ChebPoly, b: &ChebPoly, x: &[f64]) -> (ChebPoly, ChebPoly) {
    let va = chebyshev_matrix(x, d);
    let vb = chebyshev_matrix(x, d - 1);
    let target: DVector<f64> = DVector::from_iterator(x.len(), x.iter().map(|&t| p.eval(t)));
    let scale = target.amax().max(f64::MIN_POSITIVE);
    let w: DVector<f64> = DVector::from_iterator(x.len(), x.iter().map(|t| 1.0 - t * t));
    let na = d + 1;
    let split = |th: &DVector<f64>| (th.rows(0, na).into_owned(), th.rows(na, d).into_owned());
    let problem = FnProblem {
        n_params: 2 * d + 1,
        n_residuals: x.len(),
        residual: |th: &DVector<f64>| {
            let (ca, cb) = split(th);
            let av = &va * ca;
            let bv = &vb * cb;
            (av.component_mul(&av) + w.component_mul(&bv.component_mul(&bv)) - &target) / scale
        },
        jacobian: |th: &DVector<f64>| {
            let (ca, cb) = split(th);
            let av = &va * ca;
            let bv = &vb * cb;
            let mut j = DMatrix::zeros(x.len(), 2 * d + 1);
            for i in 0..x.len() {
                for k in 0..na {
                    j[(i, k)] = 2.0 * av[i] * va[(i, k)] / scale;
                }
                for k in 0..d {
                    j[(i, na + k)] = 2.0 * w[i] * bv[i] * vb[(i, k)] / scale;
                }
            }
            j
        },
    };
    let mut theta0 = DVector::zeros(2 * d + 1);
    theta0.rows_mut(0, na).copy_from_slice(&a.coeffs);
    theta0.rows_mut(na, d).copy_from_slice(&b.coeffs);
    let opts = NlsOptions::default().with_tol(1e-15).with_max_iter(200);
    match nls::solve(&problem, &theta0, &opts) {
        Ok(res) => {
            let (ca, cb) = split(&res.theta);
            (
                ChebPoly::new(ca.as_slice().to_vec()),
                ChebPoly::new(cb.as_slice().to_vec()),
            )
        }
        Err(_) => (a.clone(), b.clone()),
    }
}
