//! Chebyshev polynomials on a sampling grid.
//!
//! All polynomials are stored as coefficient vectors in the Chebyshev basis of
//! the first kind, constant term first, and are evaluated on the standard
//! interval `[-1, 1]`. A [`Grid`] carries the affine map from the user's
//! interval onto `[-1, 1]` together with a cache of Vandermonde-like matrices.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Sampling points of the signals and the interval they live on.
#[derive(Debug)]
pub struct Grid {
    tau: Vec<f64>,
    t_min: f64,
    t_max: f64,
    tau_std: Vec<f64>,
    cache: RwLock<HashMap<usize, Arc<DMatrix<f64>>>>,
}

impl Clone for Grid {
    fn clone(&self) -> Self {
        let cache = self.cache.read().map(|c| c.clone()).unwrap_or_default();
        Grid {
            tau: self.tau.clone(),
            t_min: self.t_min,
            t_max: self.t_max,
            tau_std: self.tau_std.clone(),
            cache: RwLock::new(cache),
        }
    }
}

impl Grid {
    /// Grid whose interval is `[tau[0], tau[m-1]]`.
    pub fn new(tau: Vec<f64>) -> Result<Self> {
        let (lo, hi) = match (tau.first(), tau.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::InvalidGrid("empty grid".into())),
        };
        Self::with_interval(tau, lo, hi)
    }

    pub fn with_interval(tau: Vec<f64>, t_min: f64, t_max: f64) -> Result<Self> {
        if tau.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need m >= 2 points, got {}",
                tau.len()
            )));
        }
        if !(t_min.is_finite() && t_max.is_finite()) || t_max <= t_min {
            return Err(Error::InvalidGrid(format!(
                "bad interval [{t_min}, {t_max}]"
            )));
        }
        for (i, w) in tau.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::NonMonotoneTau(i + 1));
            }
        }
        if tau[0] < t_min || tau[tau.len() - 1] > t_max {
            return Err(Error::InvalidGrid("points outside the interval".into()));
        }
        let half = 0.5 * (t_max - t_min);
        let mid = 0.5 * (t_max + t_min);
        let last = tau.len() - 1;
        let tau_std = tau
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                // pin the end points exactly so that T_k(+-1) = (+-1)^k holds bit-exactly
                if i == 0 && t == t_min {
                    -1.0
                } else if i == last && t == t_max {
                    1.0
                } else {
                    ((t - mid) / half).clamp(-1.0, 1.0)
                }
            })
            .collect();
        Ok(Grid {
            tau,
            t_min,
            t_max,
            tau_std,
            cache: RwLock::new(HashMap::new()),
        })
    }

    /// `m` equally spaced points covering `[a, b]`.
    pub fn equispaced(m: usize, a: f64, b: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!("need m >= 2 points, got {m}")));
        }
        let tau = (0..m)
            .map(|i| {
                if i == m - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (m - 1) as f64
                }
            })
            .collect();
        Self::with_interval(tau, a, b)
    }

    /// Chebyshev extreme points `cos(pi k / (m-1))` on `[-1, 1]`, increasing.
    pub fn chebyshev_points(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidGrid(format!("need m >= 2 points, got {m}")));
        }
        let n = (m - 1) as f64;
        let tau = (0..m)
            .map(|k| -(std::f64::consts::PI * k as f64 / n).cos())
            .collect();
        Self::with_interval(tau, -1.0, 1.0)
    }

    /// An equispaced grid on the same interval with `factor` times as many points.
    pub fn refined(&self, factor: usize) -> Self {
        let m = (self.len() * factor.max(1)).max(2);
        Self::equispaced(m, self.t_min, self.t_max).expect("interval already validated")
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn tau_std(&self) -> &[f64] {
        &self.tau_std
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn to_std(&self, t: f64) -> f64 {
        (2.0 * t - self.t_min - self.t_max) / (self.t_max - self.t_min)
    }

    pub fn from_std(&self, s: f64) -> f64 {
        0.5 * (self.t_max + self.t_min) + 0.5 * (self.t_max - self.t_min) * s
    }

    /// `1 - t^2` at the standardized points.
    pub fn one_minus_t2(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.tau_std.iter().map(|s| 1.0 - s * s))
    }

    pub fn matches_interval(&self, interval: (f64, f64)) -> bool {
        let scale = self.t_max.abs().max(self.t_min.abs()).max(1.0);
        (self.t_min - interval.0).abs() <= 1e-12 * scale
            && (self.t_max - interval.1).abs() <= 1e-12 * scale
    }

    /// Vandermonde-like matrix with entries `T_k(tau_std[i])`, shape `m x (d+1)`.
    pub fn vandermonde(&self, d: usize) -> Arc<DMatrix<f64>> {
        if let Some(v) = self.cache.read().ok().and_then(|c| c.get(&d).cloned()) {
            return v;
        }
        let v = Arc::new(chebyshev_matrix(&self.tau_std, d));
        if let Ok(mut cache) = self.cache.write() {
            cache.entry(d).or_insert_with(|| v.clone()).clone()
        } else {
            v
        }
    }
}

/// `T_k(x_i)` for arbitrary abscissae in `[-1, 1]` via the three-term recurrence.
pub fn chebyshev_matrix(x: &[f64], d: usize) -> DMatrix<f64> {
    let m = x.len();
    let mut v = DMatrix::zeros(m, d + 1);
    for (i, &t) in x.iter().enumerate() {
        v[(i, 0)] = 1.0;
        if d >= 1 {
            v[(i, 1)] = t;
        }
        for k in 2..=d {
            v[(i, k)] = 2.0 * t * v[(i, k - 1)] - v[(i, k - 2)];
        }
    }
    v
}

/// A polynomial in the Chebyshev basis, constant term first.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct ChebPoly {
    pub coeffs: Vec<f64>,
}

impl ChebPoly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        ChebPoly { coeffs }
    }

    pub fn zeros(d: usize) -> Self {
        ChebPoly {
            coeffs: vec![0.0; d + 1],
        }
    }

    pub fn constant(c: f64) -> Self {
        ChebPoly { coeffs: vec![c] }
    }

    /// Nominal degree (length minus one). The empty polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Clenshaw evaluation at a single standardized abscissa.
    pub fn eval(&self, t: f64) -> f64 {
        clenshaw(&self.coeffs, t)
    }

    /// Complex Clenshaw evaluation, used to check roots.
    pub fn eval_complex(&self, t: Complex64) -> Complex64 {
        let mut b1 = Complex64::new(0.0, 0.0);
        let mut b2 = Complex64::new(0.0, 0.0);
        let n = self.coeffs.len();
        if n == 0 {
            return b1;
        }
        for k in (1..n).rev() {
            let b0 = 2.0 * t * b1 - b2 + self.coeffs[k];
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> ChebPoly {
        ChebPoly::new(self.coeffs.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &ChebPoly) -> ChebPoly {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = vec![0.0; n];
        for (k, c) in self.coeffs.iter().enumerate() {
            out[k] += c;
        }
        for (k, c) in other.coeffs.iter().enumerate() {
            out[k] += c;
        }
        ChebPoly::new(out)
    }

    /// Product using `T_i T_j = (T_{i+j} + T_{|i-j|}) / 2`.
    pub fn mul(&self, other: &ChebPoly) -> ChebPoly {
        if self.is_empty() || other.is_empty() {
            return ChebPoly::default();
        }
        let mut out = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                let p = 0.5 * a * b;
                out[i + j] += p;
                out[i.abs_diff(j)] += p;
            }
        }
        ChebPoly::new(out)
    }

    pub fn square(&self) -> ChebPoly {
        self.mul(self)
    }

    /// Multiplication by `1 - t^2 = (T_0 - T_2) / 2`.
    pub fn times_one_minus_t2(&self) -> ChebPoly {
        self.mul(&ChebPoly::new(vec![0.5, 0.0, -0.5]))
    }

    /// Copy padded or truncated to exactly `d + 1` coefficients.
    pub fn resized(&self, d: usize) -> ChebPoly {
        let mut c = self.coeffs.clone();
        c.resize(d + 1, 0.0);
        ChebPoly::new(c)
    }

    /// Drops trailing coefficients below `tol * max|c|`.
    pub fn trimmed(&self, tol: f64) -> ChebPoly {
        let cut = tol * self.max_abs();
        let mut c = self.coeffs.clone();
        while c.len() > 1 && c.last().is_some_and(|x| x.abs() <= cut) {
            c.pop();
        }
        ChebPoly::new(c)
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    /// Chebyshev polynomial of the second kind `U_n` expressed in the `T` basis.
    pub fn second_kind(n: usize) -> ChebPoly {
        let mut c = vec![0.0; n + 1];
        let mut k = n as isize;
        while k >= 0 {
            c[k as usize] = if k == 0 { 1.0 } else { 2.0 };
            k -= 2;
        }
        ChebPoly::new(c)
    }
}

/// Clenshaw recurrence for `sum_k c_k T_k(t)`.
pub fn clenshaw(c: &[f64], t: f64) -> f64 {
    let n = c.len();
    if n == 0 {
        return 0.0;
    }
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    for k in (1..n).rev() {
        let b0 = 2.0 * t * b1 - b2 + c[k];
        b2 = b1;
        b1 = b0;
    }
    t * b1 - b2 + c[0]
}

/// Values of `p` at the grid points: `V^d p`.
pub fn eval_poly(p: &ChebPoly, grid: &Grid) -> DVector<f64> {
    if p.is_empty() {
        return DVector::zeros(grid.len());
    }
    let v = grid.vandermonde(p.degree());
    &*v * p.to_vector()
}

/// Roots of `p` as eigenvalues of the colleague matrix, sorted by (real, imag).
pub fn cheb_roots(p: &ChebPoly) -> Result<Vec<Complex64>> {
    let max = p.max_abs();
    let d = p.degree();
    if d == 0 || p.is_empty() {
        return Ok(Vec::new());
    }
    let lead = p.coeffs[d];
    if lead.abs() <= 1e-12 * max || max == 0.0 {
        return Err(Error::DegenerateLeadingCoefficient { lead, max });
    }
    let mut roots = if d == 1 {
        vec![Complex64::new(-p.coeffs[0] / p.coeffs[1], 0.0)]
    } else {
        // x T_0 = T_1, x T_k = (T_{k-1} + T_{k+1}) / 2, and T_d is eliminated with p(x) = 0
        let mut c = DMatrix::<f64>::zeros(d, d);
        c[(0, 1)] = 1.0;
        for k in 1..d - 1 {
            c[(k, k - 1)] = 0.5;
            c[(k, k + 1)] = 0.5;
        }
        c[(d - 1, d - 2)] += 0.5;
        for k in 0..d {
            c[(d - 1, k)] -= p.coeffs[k] / (2.0 * lead);
        }
        eigenvalues(c).ok_or(Error::MaxIterations(EIG_MAX_SWEEPS * d))?
    };
    sort_complex(&mut roots);
    Ok(roots)
}

/// Iteration cap per dimension for the Schur decomposition.
pub const EIG_MAX_SWEEPS: usize = 200;

/// Eigenvalues of a general real matrix after diagonal balancing; `None`
/// when the QR iteration does not converge.
pub fn eigenvalues(mut m: DMatrix<f64>) -> Option<Vec<Complex64>> {
    let n = m.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    balance(&mut m);
    let schur = nalgebra::linalg::Schur::try_new(m, f64::EPSILON, EIG_MAX_SWEEPS * n)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Parlett–Reinsch balancing with power-of-two scalings.
fn balance(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for _ in 0..100 {
        let mut converged = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| m[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let (mut cc, mut rr) = (c, r);
            let s = c + r;
            while cc < rr / 2.0 {
                cc *= 2.0;
                rr /= 2.0;
                f *= 2.0;
            }
            while cc >= rr * 2.0 {
                cc /= 2.0;
                rr *= 2.0;
                f /= 2.0;
            }
            if (cc + rr) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                    m[(j, i)] *= f;
                }
            }
        }
        if converged {
            break;
        }
    }
}

pub(crate) fn sort_complex(v: &mut [Complex64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid3() -> Grid {
        Grid::new(vec![-1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn vandermonde_degree_two_on_three_points() {
        let v = grid3().vandermonde(2);
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 1.0, 1.0, 0.0, -1.0, 1.0, 1.0, 1.0]);
        assert_eq!(*v, expected);
    }

    #[test]
    fn vandermonde_degree_zero_is_ones() {
        let g = Grid::equispaced(7, 2.0, 5.0).unwrap();
        let v = g.vandermonde(0);
        assert_eq!(v.shape(), (7, 1));
        assert!(v.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn vandermonde_on_chebyshev_points_is_well_conditioned() {
        let g = Grid::chebyshev_points(9).unwrap();
        let v = g.vandermonde(8);
        let s = v.as_ref().clone().svd(false, false).singular_values;
        let cond = s.max() / s.min();
        assert!(cond < 1e3, "condition number {cond}");
    }

    #[test]
    fn grid_maps_endpoints_exactly() {
        let g = Grid::new(vec![3.0, 3.5, 4.2, 7.0]).unwrap();
        assert_eq!(g.tau_std()[0], -1.0);
        assert_eq!(g.tau_std()[3], 1.0);
        assert!(g.tau_std().iter().all(|s| (-1.0..=1.0).contains(s)));
        assert_abs_diff_eq!(g.from_std(g.to_std(4.2)), 4.2, epsilon = 1e-14);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(Grid::new(vec![1.0]).is_err());
        assert_eq!(
            Grid::new(vec![0.0, 2.0, 1.0]).unwrap_err(),
            Error::NonMonotoneTau(2)
        );
    }

    #[test]
    fn eval_constant_and_t2() {
        let g = grid3();
        assert_eq!(
            eval_poly(&ChebPoly::constant(2.5), &g).as_slice(),
            &[2.5, 2.5, 2.5]
        );
        let t2 = ChebPoly::new(vec![0.0, 0.0, 1.0]);
        assert_eq!(eval_poly(&t2, &g).as_slice(), &[1.0, -1.0, 1.0]);
    }

    #[test]
    fn eval_matches_clenshaw_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = rng.random_range(0..15);
            let p = ChebPoly::new((0..=d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let mut tau: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            tau.sort_by(f64::total_cmp);
            tau.dedup();
            let g = Grid::with_interval(tau, -1.0, 1.0).unwrap();
            let vals = eval_poly(&p, &g);
            for (i, &t) in g.tau_std().iter().enumerate() {
                // oracle: direct trigonometric definition T_k(cos th) = cos(k th)
                let th = t.acos();
                let direct: f64 = p
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * (k as f64 * th).cos())
                    .sum();
                assert_abs_diff_eq!(vals[i], direct, epsilon = 1e-12);
                assert_abs_diff_eq!(vals[i], clenshaw(&p.coeffs, t), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn product_and_one_minus_t2() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = ChebPoly::new((0..5).map(|_| rng.random_range(-1.0..1.0)).collect());
        let b = ChebPoly::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
        let ab = a.mul(&b);
        let w = a.times_one_minus_t2();
        for t in [-0.9, -0.3, 0.0, 0.4, 1.0] {
            assert_abs_diff_eq!(ab.eval(t), a.eval(t) * b.eval(t), epsilon = 1e-13);
            assert_abs_diff_eq!(w.eval(t), (1.0 - t * t) * a.eval(t), epsilon = 1e-13);
        }
    }

    #[test]
    fn second_kind_matches_recurrence() {
        for n in 0..8 {
            let u = ChebPoly::second_kind(n);
            for t in [-0.7, 0.1, 0.55] {
                let th: f64 = f64::acos(t);
                let expected = ((n as f64 + 1.0) * th).sin() / th.sin();
                assert_abs_diff_eq!(u.eval(t), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn roots_of_t2_and_t1() {
        let r = cheb_roots(&ChebPoly::new(vec![0.0, 0.0, 1.0])).unwrap();
        assert_eq!(r.len(), 2);
        assert_abs_diff_eq!(r[0].re, -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1].re, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-14);
        let r = cheb_roots(&ChebPoly::new(vec![0.0, 1.0])).unwrap();
        assert_eq!(r, vec![Complex64::new(0.0, 0.0)]);
    }

    #[test]
    fn degenerate_leading_coefficient() {
        let err = cheb_roots(&ChebPoly::new(vec![1.0, 2.0, 1e-15])).unwrap_err();
        assert!(matches!(err, Error::DegenerateLeadingCoefficient { .. }));
    }

    /// Chebyshev to monomial conversion, used only as a root-finding oracle.
    fn to_monomial(c: &[f64]) -> Vec<f64> {
        let n = c.len();
        let mut out = vec![0.0; n];
        let mut tkm1 = vec![0.0; n];
        let mut tk = vec![0.0; n];
        tkm1[0] = 1.0;
        if n > 1 {
            tk[1] = 1.0;
        }
        for (k, &ck) in c.iter().enumerate() {
            let basis = if k == 0 { &tkm1 } else { &tk };
            for j in 0..n {
                out[j] += ck * basis[j];
            }
            if k >= 1 && k + 1 < n {
                let mut next = vec![0.0; n];
                for j in 0..n - 1 {
                    next[j + 1] += 2.0 * tk[j];
                }
                for j in 0..n {
                    next[j] -= tkm1[j];
                }
                tkm1 = std::mem::replace(&mut tk, next);
            }
        }
        out
    }

    #[test]
    fn roots_match_companion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let c: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mono = to_monomial(&c);
            // companion matrix of the monic monomial polynomial
            let d = 6;
            let mut comp = DMatrix::<f64>::zeros(d, d);
            for i in 1..d {
                comp[(i, i - 1)] = 1.0;
            }
            for i in 0..d {
                comp[(i, d - 1)] = -mono[i] / mono[d];
            }
            let mut oracle: Vec<Complex64> = comp.complex_eigenvalues().iter().copied().collect();
            sort_complex(&mut oracle);
            let roots = cheb_roots(&ChebPoly::new(c)).unwrap();
            for (a, b) in roots.iter().zip(&oracle) {
                assert!((a - b).norm() < 1e-8, "{a} vs {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn vandermonde_entries_bounded(d in 0usize..=64, m in 2usize..40) {
            let g = Grid::equispaced(m, -3.0, 11.0).unwrap();
            prop_assert!(g.vandermonde(d).iter().all(|x| x.abs() <= 1.0 + 1e-12));
        }

        #[test]
        fn eval_is_linear(
            p in proptest::collection::vec(-1.0f64..1.0, 6),
            q in proptest::collection::vec(-1.0f64..1.0, 6),
            a in -3.0f64..3.0, b in -3.0f64..3.0,
        ) {
            let g = Grid::equispaced(25, 0.0, 1.0).unwrap();
            let p = ChebPoly::new(p);
            let q = ChebPoly::new(q);
            let lhs = eval_poly(&p.scale(a).add(&q.scale(b)), &g);
            let rhs = eval_poly(&p, &g) * a + eval_poly(&q, &g) * b;
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }

        #[test]
        fn roots_are_roots(c in proptest::collection::vec(-1.0f64..1.0, 2..10)) {
            let p = ChebPoly::new(c);
            prop_assume!(p.coeffs.last().unwrap().abs() > 0.05);
            let roots = cheb_roots(&p).unwrap();
            prop_assert_eq!(roots.len(), p.degree());
            for r in roots {
                prop_assert!(p.eval_complex(r).norm() <= 1e-6 * p.norm());
            }
        }
    }
}
