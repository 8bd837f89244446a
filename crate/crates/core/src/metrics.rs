//! Relative residue, SIR under the best column assignment, and convergence
//! detection on stopping-criterion traces.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// SIR reported for (numerically) exact matches.
pub const SIR_CAP_DB: f64 = 150.0;

/// Relative band used by [`converged_at`].
pub const CONVERGENCE_BAND: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub rel_residue: f64,
    pub sir_db: Vec<f64>,
    pub mean_sir_db: f64,
    /// `permutation[j]`: estimated column matched with true column `j`.
    pub permutation: Vec<usize>,
    pub converged_at: Option<usize>,
    pub seconds_to_converge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirResult {
    pub sir_db: Vec<f64>,
    pub mean_db: f64,
    pub permutation: Vec<usize>,
}

/// `||P - A_k X_k^T||_F / ||P||_F` where `P` is the noiseless product.
pub fn relative_residue(
    reference: &DMatrix<f64>,
    a: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    if a.nrows() != reference.nrows() || x.nrows() != reference.ncols() || a.ncols() != x.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "reference {}x{}, A {}x{}, X {}x{}",
            reference.nrows(),
            reference.ncols(),
            a.nrows(),
            a.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let nref = reference.norm();
    if nref == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((reference - a * x.transpose()).norm() / nref)
}

fn pair_sir(a: &[f64], b: &[f64]) -> f64 {
    let na: f64 = a.iter().map(|v| v * v).sum();
    let nb: f64 = b.iter().map(|v| v * v).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let beta = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / nb;
    let res: f64 = a.iter().zip(b).map(|(x, y)| (x - beta * y).powi(2)).sum();
    if res <= 0.0 {
        return SIR_CAP_DB;
    }
    (10.0 * (na / res).log10()).clamp(0.0, SIR_CAP_DB)
}

/// `S[j, k]`: SIR of estimated column `k` against true column `j`.
pub fn sir_matrix(a_true: &DMatrix<f64>, a_est: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a_true.shape() != a_est.shape() {
        return Err(Error::ShapeMismatch(format!(
            "true {:?} vs estimate {:?}",
            a_true.shape(),
            a_est.shape()
        )));
    }
    let r = a_true.ncols();
    for (side, m) in [("true", a_true), ("estimated", a_est)] {
        for (j, c) in m.column_iter().enumerate() {
            if c.norm() == 0.0 {
                warn!("{side} column {j} is zero; its pairings score 0 dB");
            }
        }
    }
    Ok(DMatrix::from_fn(r, r, |j, k| {
        pair_sir(a_true.column(j).as_slice(), a_est.column(k).as_slice())
    }))
}

/// SIR per true column under the assignment maximizing the total SIR.
pub fn sir(a_true: &DMatrix<f64>, a_est: &DMatrix<f64>) -> Result<SirResult> {
    let s = sir_matrix(a_true, a_est)?;
    let permutation = hungarian(&(-&s));
    let sir_db: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(j, &k)| s[(j, k)])
        .collect();
    let mean_db = if sir_db.is_empty() {
        0.0
    } else {
        sir_db.iter().sum::<f64>() / sir_db.len() as f64
    };
    Ok(SirResult {
        sir_db,
        mean_db,
        permutation,
    })
}

/// Minimum-cost assignment on a square matrix; `out[row] = column`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square matrix");
    // potentials over 1-based indices, column 0 is a sentinel
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// First index `k` with `(sc_k - sc_o) / sc_k < 1e-3` for every `o >= k`.
///
/// The ratio is evaluated literally in floating point; an undefined ratio
/// (`0 / 0`) counts as satisfied.
pub fn converged_at(sc_trace: &[f64]) -> Option<usize> {
    let n = sc_trace.len();
    let mut tail_min = f64::INFINITY;
    let mut tail_max = f64::NEG_INFINITY;
    let mut first = None;
    for k in (0..n).rev() {
        let sk = sc_trace[k];
        tail_min = tail_min.min(sk);
        tail_max = tail_max.max(sk);
        // the worst tail entry is the minimum for sk >= 0 and the maximum otherwise
        let worst = if sk < 0.0 { tail_max } else { tail_min };
        let q = (sk - worst) / sk;
        let ok = q.is_nan() || q < CONVERGENCE_BAND;
        if ok {
            first = Some(k);
        }
    }
    first
}

/// Cumulative wall time through iteration `k`.
pub fn seconds_to_converge(wall_times: &[f64], k: Option<usize>) -> Option<f64> {
    k.and_then(|k| wall_times.get(k).copied())
}

/// Bundles residue, SIR and convergence into one record.
pub fn evaluate(
    reference: &DMatrix<f64>,
    a_true: &DMatrix<f64>,
    a_est: &DMatrix<f64>,
    x_est: &DMatrix<f64>,
    traces: Option<(&[f64], &[f64])>,
) -> Result<EvalResult> {
    let rel_residue = relative_residue(reference, a_est, x_est)?;
    let s = sir(a_true, a_est)?;
    let (converged_at, seconds_to_converge) = match traces {
        Some((sc, times)) => {
            let k = converged_at(sc);
            (k, seconds_to_converge(times, k))
        }
        None => (None, None),
    };
    Ok(EvalResult {
        rel_residue,
        sir_db: s.sir_db,
        mean_sir_db: s.mean_db,
        permutation: s.permutation,
        converged_at,
        seconds_to_converge,
    })
}
