//! Dense and Krylov eigen/singular-value routines.
//!
//! Small eigenproblems go through nalgebra's dense solver; small singular value
//! problems use a one-sided Jacobi SVD. Large ones use Lanczos
//! with full reorthogonalisation (symmetric eigenproblems) and Golub-Kahan-Lanczos
//! bidiagonalisation (leading singular triplets). Starting vectors come from a
//! fixed-seed generator so results are reproducible.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("zero matrix")]
    ZeroMatrix,
    #[error("empty matrix")]
    Empty,
}

/// Entries below this magnitude are ignored by the sign convention.
pub const SIGN_EPS: f64 = 1e-12;

/// Flips `v` so its first entry of magnitude above [`SIGN_EPS`] is positive.
/// Returns whether a flip happened.
pub fn canonical_sign(v: &mut DVector<f64>) -> bool {
    if let Some(x) = v.iter().find(|x| x.abs() > SIGN_EPS) {
        if *x < 0.0 {
            v.neg_mut();
            return true;
        }
    }
    false
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = a.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..a.nrows()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(a.nrows(), a.nrows(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

fn start_vector(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5)
}

/// Modified Gram-Schmidt against `basis`, applied twice.
fn reorthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

pub struct LanczosResult {
    /// Ritz values in descending order.
    pub values: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    pub iterations: usize,
}

/// Largest `k` eigenpairs of a symmetric operator restricted to the orthogonal
/// complement of the unit vectors in `deflate`.
///
/// Convergence is declared when every wanted Ritz pair has residual at most
/// `tol * scale`.
pub fn lanczos_largest<F>(
    n: usize,
    matvec: F,
    k: usize,
    deflate: &[DVector<f64>],
    scale: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LanczosResult, LinalgError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let dim = n.saturating_sub(deflate.len());
    if dim == 0 || k == 0 {
        return Err(LinalgError::Empty);
    }
    let k = k.min(dim);
    let max_iter = max_iter.min(dim);
    let mut q = start_vector(n, 0x5eed_1a2c);
    reorthogonalize(&mut q, deflate);
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last_residual = f64::INFINITY;
    let check_every = 8;
    for j in 0..max_iter {
        let mut w = matvec(&basis[j]);
        reorthogonalize(&mut w, deflate);
        let a = basis[j].dot(&w);
        alpha.push(a);
        w.axpy(-a, &basis[j], 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &basis[j - 1], 1.0);
        }
        reorthogonalize(&mut w, deflate);
        reorthogonalize(&mut w, &basis);
        let b = w.norm();
        let steps = j + 1;
        let exhausted = b <= 1e-14 * scale.max(f64::MIN_POSITIVE) || steps == max_iter;
        if steps >= k && (steps % check_every == 0 || exhausted) {
            let t = DMatrix::from_fn(steps, steps, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let (vals, vecs) = sym_eigen_sorted(&t);
            let wanted: Vec<usize> = (0..k).map(|i| steps - 1 - i).collect();
            let residual = wanted
                .iter()
                .map(|&i| (b * vecs[(steps - 1, i)]).abs())
                .fold(0.0, f64::max);
            last_residual = residual;
            let invariant = b <= 1e-14 * scale.max(f64::MIN_POSITIVE);
            if residual <= tol * scale || invariant {
                let vectors = wanted
                    .iter()
                    .map(|&i| {
                        let mut y = DVector::zeros(n);
                        for (r, qb) in basis.iter().enumerate() {
                            y.axpy(vecs[(r, i)], qb, 1.0);
                        }
                        let nrm = y.norm();
                        y / nrm
                    })
                    .collect();
                return Ok(LanczosResult {
                    values: wanted.iter().map(|&i| vals[i]).collect(),
                    vectors,
                    iterations: steps,
                });
            }
        }
        beta.push(b);
        basis.push(w / b);
    }
    Err(LinalgError::NoConvergence {
        method: "lanczos",
        iterations: max_iter,
        residual: last_residual,
    })
}

/// Leading singular values with their left and right singular vectors.
#[derive(Clone, Debug)]
pub struct TopSingular {
    /// Descending singular values.
    pub values: Vec<f64>,
    pub left: Vec<DVector<f64>>,
    pub right: Vec<DVector<f64>>,
}

/// Work threshold (rows * cols * min(rows, cols)) below which a dense SVD is used.
pub const DENSE_SVD_WORK: usize = 8_000_000;

/// The `k` leading singular triplets of `m`, dense for small inputs and
/// Golub-Kahan-Lanczos otherwise. Singular values beyond the rank are zero.
pub fn top_singular(m: &DMatrix<f64>, k: usize) -> Result<TopSingular, LinalgError> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Err(LinalgError::Empty);
    }
    let p = r.min(c);
    if r * c * p <= DENSE_SVD_WORK {
        dense_top_singular(m, k)
    } else {
        gkl_top_singular(m, k.min(p))
    }
}

/// Thin SVD with singular values in descending order: `m = u diag(values) v^T`.
#[derive(Clone, Debug)]
pub struct Svd {
    pub values: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided (Hestenes) Jacobi SVD. Singular values are accurate to about
/// `EPS * |m|_F` in absolute terms, which the rank-one tests depend on.
pub fn jacobi_svd(m: &DMatrix<f64>) -> Svd {
    if m.ncols() > m.nrows() {
        let t = jacobi_svd(&m.transpose());
        return Svd {
            values: t.values,
            u: t.v,
            v: t.u,
        };
    }
    let (r, c) = m.shape();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(c, c);
    // Columns below this squared norm are rounding noise; rotating them only
    // burns sweeps without moving any singular value above `EPS * |m|_F`.
    let floor = (f64::EPSILON * m.norm()).powi(2);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let (cp, cq) = column_pair(a.as_mut_slice(), r, p, q);
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for (x, y) in cp.iter().zip(cq.iter()) {
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0
                    || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt()
                    || alpha.min(beta) <= floor
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate(cp, cq, cs, sn);
                let (vp, vq) = column_pair(v.as_mut_slice(), c, p, q);
                rotate(vp, vq, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..c).map(|j| a.column(j).norm()).collect();
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = DMatrix::zeros(r, c);
    let mut vs = DMatrix::zeros(c, c);
    for (k, &j) in idx.iter().enumerate() {
        if norms[j] > 0.0 {
            u.set_column(k, &(a.column(j) / norms[j]));
        }
        vs.set_column(k, &v.column(j));
    }
    Svd {
        values: idx.iter().map(|&j| norms[j]).collect(),
        u,
        v: vs,
    }
}

/// Columns `p < q` of a column-major buffer with `rows` rows.
fn column_pair(data: &mut [f64], rows: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    let (head, tail) = data.split_at_mut(q * rows);
    (&mut head[p * rows..(p + 1) * rows], &mut tail[..rows])
}

fn rotate(x: &mut [f64], y: &mut [f64], cs: f64, sn: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (u, w) = (*a, *b);
        *a = cs * u - sn * w;
        *b = sn * u + cs * w;
    }
}

fn dense_top_singular(m: &DMatrix<f64>, k: usize) -> Result<TopSingular, LinalgError> {
    let svd = jacobi_svd(m);
    let mut out = TopSingular {
        values: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
    };
    for i in 0..k.min(svd.values.len()) {
        out.values.push(svd.values[i]);
        out.left.push(svd.u.column(i).into_owned());
        out.right.push(svd.v.column(i).into_owned());
    }
    while out.values.len() < k {
        out.values.push(0.0);
        out.left.push(DVector::zeros(m.nrows()));
        out.right.push(DVector::zeros(m.ncols()));
    }
    Ok(out)
}

fn gkl_top_singular(m: &DMatrix<f64>, k: usize) -> Result<TopSingular, LinalgError> {
    let (r, c) = m.shape();
    let p = r.min(c);
    let scale = m.norm();
    if scale == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    let tol = 1e-13;
    let mut v = start_vector(c, 0x6b1_5eed);
    v /= v.norm();
    let mut vs: Vec<DVector<f64>> = vec![v];
    let mut us: Vec<DVector<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let max_iter = p.min(400);
    let mut last_residual = f64::INFINITY;
    for j in 0..max_iter {
        let mut u = m * &vs[j];
        if j > 0 {
            u.axpy(-beta[j - 1], &us[j - 1], 1.0);
        }
        reorthogonalize(&mut u, &us);
        let a = u.norm();
        if a <= 1e-15 * scale {
            // Invariant subspace: the remaining singular values are zero.
            alpha.push(0.0);
            us.push(DVector::zeros(r));
            return finish_gkl(m, &us, &vs, &alpha, &beta, k);
        }
        u /= a;
        alpha.push(a);
        us.push(u);
        let mut w = m.tr_mul(&us[j]);
        w.axpy(-a, &vs[j], 1.0);
        reorthogonalize(&mut w, &vs);
        let b = w.norm();
        let steps = j + 1;
        if steps >= k && (steps % 4 == 0 || b <= 1e-15 * scale || steps == max_iter) {
            let bmat = bidiag(&alpha, &beta, steps);
            let ub = jacobi_svd(&bmat).u;
            let residual = (0..k.min(steps))
                .map(|i| (b * ub[(steps - 1, i)]).abs())
                .fold(0.0, f64::max);
            last_residual = residual;
            if residual <= tol * scale || b <= 1e-15 * scale {
                return finish_gkl(m, &us, &vs, &alpha, &beta, k);
            }
        }
        beta.push(b);
        vs.push(w / b);
    }
    Err(LinalgError::NoConvergence {
        method: "golub-kahan-lanczos",
        iterations: max_iter,
        residual: last_residual,
    })
}

fn bidiag(alpha: &[f64], beta: &[f64], steps: usize) -> DMatrix<f64> {
    DMatrix::from_fn(steps, steps, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else {
            0.0
        }
    })
}

fn finish_gkl(
    m: &DMatrix<f64>,
    us: &[DVector<f64>],
    vs: &[DVector<f64>],
    alpha: &[f64],
    beta: &[f64],
    k: usize,
) -> Result<TopSingular, LinalgError> {
    let steps = alpha.len();
    let bmat = bidiag(alpha, beta, steps);
    let svd = jacobi_svd(&bmat);
    let (ub, vb) = (&svd.u, &svd.v);
    let mut out = TopSingular {
        values: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
    };
    for i in 0..k.min(steps) {
        let mut left = DVector::zeros(m.nrows());
        for (t, u) in us.iter().enumerate() {
            left.axpy(ub[(t, i)], u, 1.0);
        }
        let mut right = DVector::zeros(m.ncols());
        for (t, v) in vs.iter().take(steps).enumerate() {
            right.axpy(vb[(t, i)], v, 1.0);
        }
        out.values.push(svd.values[i]);
        out.left.push(left);
        out.right.push(right);
    }
    while out.values.len() < k {
        out.values.push(0.0);
        out.left.push(DVector::zeros(m.nrows()));
        out.right.push(DVector::zeros(m.ncols()));
    }
    Ok(out)
}
