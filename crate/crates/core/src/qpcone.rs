//! Convex subproblems of the projection methods: linearly constrained least
//! squares, LP feasibility, and SVD compression of tall systems.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `min ||M theta - b||^2` subject to `G theta <= h` elementwise.
#[derive(Debug, Clone)]
pub struct ConstrainedLsq {
    pub m: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub theta: DVector<f64>,
    pub cost: f64,
    /// Indices of the constraints active at the solution.
    pub active_set: Vec<usize>,
    /// Multipliers of the active constraints for the objective `1/2 ||M theta - b||^2`.
    pub multipliers: Vec<f64>,
    pub pivots: usize,
}

impl ConstrainedLsq {
    pub fn new(m: DMatrix<f64>, b: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if m.nrows() != b.len() || g.nrows() != h.len() || g.ncols() != m.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "M {}x{}, b {}, G {}x{}, h {}",
                m.nrows(),
                m.ncols(),
                b.len(),
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        Ok(ConstrainedLsq { m, b, g, h })
    }

    pub fn unconstrained(m: DMatrix<f64>, b: DVector<f64>) -> Self {
        let k = m.ncols();
        ConstrainedLsq {
            m,
            b,
            g: DMatrix::zeros(0, k),
            h: DVector::zeros(0),
        }
    }

    pub fn cost(&self, theta: &DVector<f64>) -> f64 {
        (&self.m * theta - &self.b).norm_squared()
    }
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub m_tilde: DMatrix<f64>,
    pub b_tilde: DVector<f64>,
    pub offset: f64,
}

/// `||M theta - b||^2 = ||M~ theta - b~||^2 + offset` with `M~ = Sigma W^T`, `b~ = U^T b`.
pub fn svd_compress(m: &DMatrix<f64>, b: &DVector<f64>) -> Compressed {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let m_tilde = DMatrix::from_diagonal(&svd.singular_values) * vt;
    let b_tilde = u.transpose() * b;
    let offset = (b.norm_squared() - b_tilde.norm_squared()).max(0.0);
    Compressed {
        m_tilde,
        b_tilde,
        offset,
    }
}

/// Dual active-set (Goldfarb–Idnani) solver.
///
/// With `M = U Sigma W^T` and a tiny ridge folded into `Sigma`, the problem
/// becomes a least-distance problem `min 1/2 ||y - y0||^2` s.t. `G' y <= h` in
/// `y = Sigma W^T theta`, which starts from the unconstrained minimizer and
/// adds the most violated constraint at each major step.
pub fn solve_constrained_lsq(p: &ConstrainedLsq, tol: f64) -> Result<LsqSolution> {
    let k = p.m.ncols();
    let n_con = p.g.nrows();
    let (mm, bb) = if p.m.nrows() < k {
        let mut mm = DMatrix::zeros(k, k);
        mm.rows_mut(0, p.m.nrows()).copy_from(&p.m);
        let mut bb = DVector::zeros(k);
        bb.rows_mut(0, p.b.len()).copy_from(&p.b);
        (mm, bb)
    } else {
        (p.m.clone(), p.b.clone())
    };
    let svd = mm.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let sig = &svd.singular_values;
    let smax = sig.max();
    let ridge = if smax > 0.0 { 1e-10 * smax } else { 1.0 };
    let ub = u.transpose() * &bb;
    let sig_r: DVector<f64> = sig.map(|s| (s * s + ridge * ridge).sqrt());
    let y0 = DVector::from_fn(k, |i, _| sig[i] * ub[i] / sig_r[i]);
    // theta = W diag(1/sig_r) y
    let back = vt.transpose() * DMatrix::from_diagonal(&sig_r.map(|s| 1.0 / s));
    let gy = &p.g * &back;

    let row_norm: Vec<f64> = (0..n_con).map(|i| gy.row(i).norm()).collect();
    let mut y = y0.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut mult: Vec<f64> = Vec::new();
    let max_pivots = 10 * (k + n_con).max(1);
    let mut pivots = 0;
    let y_scale = |y: &DVector<f64>| 1.0 + y.norm();

    loop {
        // most violated constraint, normalized by row norm
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n_con {
            if active.contains(&i) || row_norm[i] == 0.0 {
                if row_norm[i] == 0.0 && p.h[i] < -tol {
                    return Err(Error::Infeasible);
                }
                continue;
            }
            let s = (gy.row(i) * &y)[0] - p.h[i];
            let viol = s / row_norm[i];
            if viol > tol * y_scale(&y) && worst.is_none_or(|(_, w)| viol > w) {
                worst = Some((i, viol));
            }
        }
        let Some((pidx, _)) = worst else { break };
        let a_p: DVector<f64> = gy.row(pidx).transpose();
        let mut u_new = 0.0;
        loop {
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::MaxIterations(max_pivots));
            }
            // z: component of a_p orthogonal to the active normals; r: coefficients on them
            let (z, r) = if active.is_empty() {
                (a_p.clone(), DVector::zeros(0))
            } else {
                let n = DMatrix::from_fn(k, active.len(), |i, j| gy[(active[j], i)]);
                let qr = n.clone().qr();
                let r_mat = qr.r();
                let qtn = qr.q().transpose() * &a_p;
                let r = r_mat
                    .solve_upper_triangular(&qtn)
                    .unwrap_or_else(|| DVector::zeros(active.len()));
                (&a_p - &n * &r, r)
            };
            // moving y along -z decreases a_p^T y; multipliers move as (-r, 1)
            let zz = z.norm_squared();
            let s_p = a_p.dot(&y) - p.h[pidx];
            let t2 = if zz > 1e-24 * a_p.norm_squared().max(f64::MIN_POSITIVE) {
                s_p / zz
            } else {
                f64::INFINITY
            };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > 0.0 {
                    let t = mult[j] / rj;
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible);
            }
            if t2.is_finite() {
                y -= &z * t;
            }
            for (j, rj) in r.iter().enumerate() {
                mult[j] -= t * rj;
            }
            u_new += t;
            if t2 <= t1 {
                active.push(pidx);
                mult.push(u_new);
                break;
            }
            let j = drop.expect("partial step has a blocking multiplier");
            active.remove(j);
            mult.remove(j);
        }
    }

    let theta = &back * &y;
    let cost = p.cost(&theta);
    Ok(LsqSolution {
        theta,
        cost,
        active_set: active,
        multipliers: mult,
        pivots,
    })
}

#[derive(Debug, Clone)]
pub struct LpFeasibility {
    pub feasible: bool,
    pub witness: Option<DVector<f64>>,
    /// Optimal total violation of the phase-1 problem.
    pub phase1: f64,
}

/// Decides whether `{x : A x <= b}` is nonempty.
///
/// Phase 1 minimizes the total violation `sum_i max(0, a_i^T x - b_i)`. It is
/// solved through its dual `max -b^T y` s.t. `A^T y = 0`, `0 <= y <= 1` with a
/// bounded-variable primal simplex (Bland's rule), whose basis has only as many
/// rows as `A` has columns. The simplex multipliers give the witness.
///
/// A feasible verdict always carries a verified witness. Systems on the
/// boundary of feasibility, where no run reaches an exact answer, are
/// reported infeasible.
pub fn feasibility_lp(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpFeasibility> {
    let (p, k) = a.shape();
    if b.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "A has {p} rows, b has {}",
            b.len()
        )));
    }
    if k == 0 || p == 0 {
        let phase1: f64 = b.iter().map(|v| (-v).max(0.0)).sum();
        let feasible = phase1 <= 1e-9;
        return Ok(LpFeasibility {
            feasible,
            witness: feasible.then(|| DVector::zeros(k)),
            phase1,
        });
    }
    // reparametrize onto the row space when A is rank deficient
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-12 * smax.max(f64::MIN_POSITIVE))
        .count();
    if rank == 0 {
        let phase1: f64 = b.iter().map(|v| (-v).max(0.0)).sum();
        let feasible = phase1 <= 1e-9;
        return Ok(LpFeasibility {
            feasible,
            witness: feasible.then(|| DVector::zeros(k)),
            phase1,
        });
    }
    let (ar, basis_map) = if rank < k {
        let w = DMatrix::from_fn(k, rank, |i, j| vt[(j, i)]);
        (a * &w, Some(w))
    } else {
        (a.clone(), None)
    };
    // unit rows leave the feasible set unchanged and balance the phase-1 weights
    let (mut an, mut bn) = (ar, b.clone());
    for i in 0..p {
        let nrm = an.row(i).norm().hypot(bn[i]);
        if nrm > 0.0 {
            an.row_mut(i).unscale_mut(nrm);
            bn[i] /= nrm;
        }
    }
    let lift = |z: DVector<f64>| match &basis_map {
        Some(w) => w * z,
        None => z,
    };
    let is_feasible = |x: &DVector<f64>| {
        let ax = a * x;
        (0..p).all(|i| {
            let size: f64 = a.row(i).iter().zip(x.iter()).map(|(c, v)| (c * v).abs()).sum::<f64>() + b[i].abs();
            ax[i] - b[i] <= FEASIBILITY_RTOL * size
        })
    };
    let mut verdict = None;
    let mut uncertain = None;
    for perturb in PERTURBATIONS {
        let (z, certified) = match simplex_phase1(&an, &bn, perturb) {
            // a stalled perturbed run falls through to the next offset
            Err(Error::MaxIterations(_)) if perturb > 0.0 => continue,
            // borderline systems can stall the exact run; keep the perturbed answer
            Err(Error::MaxIterations(n)) if uncertain.is_some() => {
                debug!("exact phase 1 stalled after {n} pivots; using a perturbed basis");
                break;
            }
            r => r?,
        };
        let x = lift(z);
        let feasible = is_feasible(&x);
        // a witness settles feasibility; infeasibility needs a Farkas certificate
        if feasible || certified || perturb == 0.0 {
            verdict = Some((x, feasible));
            break;
        }
        uncertain = Some(x);
    }
    let (x, feasible) = verdict.unwrap_or_else(|| (uncertain.expect("some run returned"), false));
    let phase1: f64 = (a * &x - b).iter().map(|v| v.max(0.0)).sum();
    Ok(LpFeasibility {
        feasible,
        witness: feasible.then_some(x),
        phase1,
    })
}

/// Starting offsets of the basic variables, tried in turn; the last is exact.
const PERTURBATIONS: [f64; 4] = [1e-7, 1e-10, 1e-13, 0.0];

/// Relative row violation accepted as feasible.
const FEASIBILITY_RTOL: f64 = 1e-9;

/// Runs the bounded dual simplex and returns the primal point `x = -pi`.
///
/// With `perturb > 0` the basic variables start off zero to break degenerate ties.
/// The flag tells whether the final dual point, recomputed without the
/// perturbation, certifies infeasibility; unperturbed runs are always trusted.
fn simplex_phase1(a: &DMatrix<f64>, b: &DVector<f64>, perturb: f64) -> Result<(DVector<f64>, bool)> {
    let (p, k) = a.shape();
    let scale = 1.0 + b.amax() + a.amax();
    let dtol = 1e-12 * scale;

    // initial basis: k independent rows chosen by largest residual after projection
    let mut basis: Vec<usize> = Vec::with_capacity(k);
    let mut resid = a.clone();
    let norm0 = (0..p).map(|i| a.row(i).norm()).fold(0.0, f64::max);
    for _ in 0..k {
        let (best, nrm) = (0..p)
            .filter(|i| !basis.contains(i))
            .map(|i| (i, resid.row(i).norm()))
            .fold(
                (usize::MAX, 0.0),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            );
        if best == usize::MAX || nrm <= 1e-10 * norm0 {
            break;
        }
        let q: DVector<f64> = resid.row(best).transpose() / nrm;
        let coef = &resid * &q;
        resid -= coef * q.transpose();
        basis.push(best);
    }
    if basis.len() < k {
        return Err(Error::Unbounded);
    }
    // Every basic variable starts at zero, which makes the first pivots
    // degenerate; starting them at small distinct positive values instead
    // perturbs the right-hand side of A^T y = 0 and breaks the ties.
    let mut y = vec![0.0f64; p];
    let mut is_basic = vec![false; p];
    for (n, &i) in basis.iter().enumerate() {
        is_basic[i] = true;
        if perturb > 0.0 {
            y[i] = perturb * (1.0 + (0.618_033_988_75 * (n + 1) as f64).fract());
        }
    }
    let c = |j: usize| -b[j];
    let max_iter = 50 * (p + k);
    let mut degenerate_run = 0usize;
    for _ in 0..max_iter {
        let bmat = DMatrix::from_fn(k, k, |r, col| a[(basis[col], r)]);
        let lu = bmat.clone().lu();
        let cb = DVector::from_fn(k, |i, _| c(basis[i]));
        let pi = bmat.transpose().lu().solve(&cb).ok_or(Error::Unbounded)?;
        // entering variable: largest reduced cost, or Bland's rule during a degenerate stall
        let bland = degenerate_run >= 50;
        let mut entering: Option<(usize, f64)> = None;
        let mut best_d = 0.0;
        for j in 0..p {
            if is_basic[j] {
                continue;
            }
            let d = c(j) - (a.row(j) * &pi)[0];
            let gain = if y[j] <= 0.5 { d } else { -d };
            if gain > dtol && (bland || gain > best_d) {
                best_d = gain;
                entering = Some((j, if y[j] <= 0.5 { 1.0 } else { -1.0 }));
                if bland {
                    break;
                }
            }
        }
        let Some((j, dir)) = entering else {
            if perturb == 0.0 {
                return Ok((-pi, true));
            }
            // exact basic values for the nonbasic bounds: A_B^T y_B = -A_N^T y_N
            let mut rhs = DVector::zeros(k);
            for (i, &yi) in y.iter().enumerate() {
                if !is_basic[i] && yi != 0.0 {
                    rhs -= a.row(i).transpose() * yi;
                }
            }
            let yb = lu.solve(&rhs).ok_or(Error::Unbounded)?;
            let mut y_exact = y.clone();
            for (ib, &bi) in basis.iter().enumerate() {
                y_exact[bi] = yb[ib];
            }
            // y >= 0, A^T y = 0 and b^T y < 0 prove A x <= b infeasible
            let by: f64 = y_exact.iter().zip(b.iter()).map(|(u, v)| u * v).sum();
            let certified = yb.iter().all(|&v| v >= -1e-9) && by < -1e-9;
            return Ok((-pi, certified));
        };
        let aj: DVector<f64> = a.row(j).transpose();
        let w = lu.solve(&aj).ok_or(Error::Unbounded)?;
        // y_j += dir * t, y_B -= dir * t * w
        // ratio test; the entering variable itself can move by at most 1
        let mut t_max = 1.0;
        let mut leave: Option<(usize, f64)> = None;
        let wmax = w.amax();
        for (ib, &bi) in basis.iter().enumerate() {
            let rate = -dir * w[ib];
            if rate.abs() <= 1e-9 * wmax {
                continue;
            }
            let room = if rate > 0.0 { 1.0 - y[bi] } else { y[bi] };
            let t = room.max(0.0) / rate.abs();
            let tie = leave.is_some_and(|(lb, _)| {
                t == t_max
                    && if bland {
                        bi < basis[lb]
                    } else {
                        rate.abs() > (dir * w[lb]).abs()
                    }
            });
            if t < t_max || tie {
                t_max = t;
                leave = Some((ib, if rate > 0.0 { 1.0 } else { 0.0 }));
            }
        }
        if t_max > 0.0 {
            degenerate_run = 0;
        } else {
            degenerate_run += 1;
        }
        for (ib, &bi) in basis.iter().enumerate() {
            y[bi] = (y[bi] - dir * t_max * w[ib]).clamp(0.0, 1.0);
        }
        y[j] = (y[j] + dir * t_max).clamp(0.0, 1.0);
        if let Some((ib, bound)) = leave {
            let out = basis[ib];
            y[out] = bound;
            is_basic[out] = false;
            is_basic[j] = true;
            basis[ib] = j;
        }
    }
    Err(Error::MaxIterations(max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn unconstrained_matches_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_matrix(&mut rng, 30, 6);
        let b = random_vector(&mut rng, 30);
        let sol =
            solve_constrained_lsq(&ConstrainedLsq::unconstrained(m.clone(), b.clone()), 1e-12)
                .unwrap();
        let qr = m.qr();
        let x = qr
            .r()
            .solve_upper_triangular(&(qr.q().transpose() * &b))
            .unwrap();
        assert!((sol.theta - x).amax() < 1e-10);
    }

    #[test]
    fn identity_with_nonnegativity_clips() {
        let p = ConstrainedLsq::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-1.0, 2.0]),
            -DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let sol = solve_constrained_lsq(&p, 1e-12).unwrap();
        assert_abs_diff_eq!(sol.theta[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.theta[1], 2.0, epsilon = 1e-12);
        assert_eq!(sol.active_set, vec![0]);
    }

    /// Enumerates active sets, solves the equality-constrained KKT system for
    /// each and keeps the best feasible point with nonnegative multipliers.
    fn brute_force(p: &ConstrainedLsq) -> DVector<f64> {
        let k = p.m.ncols();
        let n = p.g.nrows();
        let h = p.m.transpose() * &p.m;
        let c = p.m.transpose() * &p.b;
        let mut best: Option<(f64, DVector<f64>)> = None;
        for mask in 0u32..(1 << n) {
            let act: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            if act.len() > k {
                continue;
            }
            let q = act.len();
            let mut kkt = DMatrix::zeros(k + q, k + q);
            kkt.view_mut((0, 0), (k, k)).copy_from(&h);
            let mut rhs = DVector::zeros(k + q);
            rhs.rows_mut(0, k).copy_from(&c);
            for (j, &i) in act.iter().enumerate() {
                for col in 0..k {
                    kkt[(k + j, col)] = p.g[(i, col)];
                    kkt[(col, k + j)] = p.g[(i, col)];
                }
                rhs[k + j] = p.h[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else {
                continue;
            };
            let x = sol.rows(0, k).into_owned();
            let lam = sol.rows(k, q);
            if lam.iter().any(|&l| l < -1e-9) {
                continue;
            }
            if (&p.g * &x - &p.h).iter().any(|&v| v > 1e-9) {
                continue;
            }
            let cost = p.cost(&x);
            if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                best = Some((cost, x));
            }
        }
        best.expect("a feasible KKT point").1
    }

    #[test]
    fn matches_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 20, 5);
            let b = random_vector(&mut rng, 20) * 3.0;
            let g = random_matrix(&mut rng, 10, 5);
            // constraints satisfied at the origin so the set is nonempty
            let h = DVector::from_fn(10, |_, _| rng.random_range(0.0..0.5));
            let p = ConstrainedLsq::new(m, b, g, h).unwrap();
            let sol = solve_constrained_lsq(&p, 1e-12).unwrap();
            let oracle = brute_force(&p);
            assert!(
                (&sol.theta - &oracle).amax() < 1e-8,
                "{} vs {}: costs {} {} viol {} {}",
                sol.theta,
                oracle,
                sol.cost,
                p.cost(&oracle),
                (&p.g * &sol.theta - &p.h).max(),
                (&p.g * &oracle - &p.h).max()
            );
            assert!(sol.multipliers.iter().all(|&u| u >= -1e-10));
        }
    }

    #[test]
    fn reports_infeasible_constraints() {
        let p = ConstrainedLsq::new(
            DMatrix::identity(1, 1),
            DVector::from_vec(vec![0.0]),
            DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
        )
        .unwrap();
        assert_eq!(
            solve_constrained_lsq(&p, 1e-12).unwrap_err(),
            Error::Infeasible
        );
    }

    #[test]
    fn compress_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 200, 12);
        let b = random_vector(&mut rng, 200);
        let c = svd_compress(&m, &b);
        assert!(c.offset >= 0.0);
        for _ in 0..100 {
            let th = random_vector(&mut rng, 12) * 5.0;
            let full = (&m * &th - &b).norm_squared();
            let comp = (&c.m_tilde * &th - &c.b_tilde).norm_squared() + c.offset;
            assert_abs_diff_eq!(full, comp, epsilon = 1e-10 * full.max(1.0));
        }
        let sq = random_matrix(&mut rng, 6, 6);
        let bs = random_vector(&mut rng, 6);
        assert!(svd_compress(&sq, &bs).offset < 1e-12);
        let q = m.clone().qr().q();
        let c = svd_compress(&q, &b);
        let expected = b.norm_squared() - (q.transpose() * &b).norm_squared();
        assert_abs_diff_eq!(c.offset, expected, epsilon = 1e-12);
    }

    #[test]
    fn compression_preserves_constrained_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let m = random_matrix(&mut rng, 80, 6);
            let b = random_vector(&mut rng, 80);
            let g = -DMatrix::identity(6, 6);
            let h = DVector::zeros(6);
            let full = solve_constrained_lsq(
                &ConstrainedLsq::new(m.clone(), b.clone(), g.clone(), h.clone()).unwrap(),
                1e-12,
            )
            .unwrap();
            let c = svd_compress(&m, &b);
            let comp = solve_constrained_lsq(
                &ConstrainedLsq::new(c.m_tilde, c.b_tilde, g, h).unwrap(),
                1e-12,
            )
            .unwrap();
            assert!((&full.theta - &comp.theta).amax() < 1e-8);
        }
    }

    #[test]
    fn lp_trivial_cases() {
        let a = DMatrix::from_vec(2, 1, vec![1.0, -1.0]);
        let r = feasibility_lp(&a, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(r.feasible);
        let x = r.witness.unwrap();
        assert!(x[0] <= 1.0 + 1e-9 && x[0] >= -1e-9);
        let r = feasibility_lp(&a, &DVector::from_vec(vec![-1.0, -1.0])).unwrap();
        assert!(!r.feasible);
        assert!(r.witness.is_none());
    }

    fn vertex_feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> bool {
        let p = a.nrows();
        for i in 0..p {
            for j in i + 1..p {
                for k in j + 1..p {
                    let sub = DMatrix::from_fn(3, 3, |r, c| a[([i, j, k][r], c)]);
                    let rhs = DVector::from_vec(vec![b[i], b[j], b[k]]);
                    if sub.determinant().abs() < 1e-10 {
                        continue;
                    }
                    let x = sub.lu().solve(&rhs).unwrap();
                    if (a * &x - b).iter().all(|&v| v <= 1e-9) {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn lp_agrees_with_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0, 0];
        for _ in 0..200 {
            let p = rng.random_range(4..9);
            let a = random_matrix(&mut rng, p, 3);
            let b = DVector::from_fn(p, |_, _| rng.random_range(-0.6..1.0));
            let r = feasibility_lp(&a, &b).unwrap();
            assert_eq!(r.feasible, vertex_feasible(&a, &b), "A={a} b={b}");
            counts[r.feasible as usize] += 1;
            if let Some(x) = r.witness {
                assert!((&a * &x - &b).iter().all(|&v| v <= 1e-9));
            }
        }
        assert!(counts[0] > 10 && counts[1] > 10, "{counts:?}");
    }

    #[test]
    fn lp_rank_deficient_rows() {
        // x1 + x2 <= 1 and -(x1 + x2) <= 0 in two variables
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, -1.0]);
        let r = feasibility_lp(&a, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert!(r.feasible);
        let r = feasibility_lp(&a, &DVector::from_vec(vec![-1.0, 0.0])).unwrap();
        assert!(!r.feasible);
    }

    #[test]
    fn larger_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (p, k) in [(200, 10), (1000, 34)] {
            let a = random_matrix(&mut rng, p, k);
            let x0 = random_vector(&mut rng, k);
            let slack = DVector::from_fn(p, |_, _| rng.random_range(0.0..0.1));
            let r = feasibility_lp(&a, &(&a * &x0 + &slack)).unwrap();
            assert!(r.feasible);
            let r = feasibility_lp(&a, &(&a * &x0 - &slack)).unwrap();
            assert!(!r.feasible && r.phase1 > 1.0);
        }
    }

    proptest! {
        #[test]
        fn solution_is_feasible_and_complementary(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..7);
            let m = random_matrix(&mut rng, 15, k);
            let b = random_vector(&mut rng, 15) * 2.0;
            let nc = rng.random_range(0..12);
            let g = random_matrix(&mut rng, nc, k);
            let h = DVector::from_fn(nc, |_, _| rng.random_range(0.0..1.0));
            let p = ConstrainedLsq::new(m.clone(), b.clone(), g.clone(), h.clone()).unwrap();
            let sol = solve_constrained_lsq(&p, 1e-12).unwrap();
            let slack = &g * &sol.theta - &h;
            prop_assert!(slack.iter().all(|&v| v <= 1e-9));
            for (&i, &u) in sol.active_set.iter().zip(&sol.multipliers) {
                prop_assert!(u >= -1e-9);
                prop_assert!(slack[i].abs() <= 1e-8);
            }
            // stationarity: M^T (M x - b) + G_A^T u = 0
            let mut grad = m.transpose() * (&m * &sol.theta - &b);
            for (&i, &u) in sol.active_set.iter().zip(&sol.multipliers) {
                grad += g.row(i).transpose() * u;
            }
            prop_assert!(grad.amax() <= 1e-7 * (1.0 + b.norm() * m.norm()));
        }
    }
}
