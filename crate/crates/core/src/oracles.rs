//! Independent reference routes used to verify the main implementations:
//! central finite differences against the autodiff tape, and a cyclic Jacobi
//! eigensolver against the Householder/QL and Lanczos paths.
//!
//! Nothing here shares code with the implementations it checks.

use crate::error::{Error, Result};
use crate::Mat;

/// Central-difference gradient of `f` with respect to `params[which]`,
/// step `h` per entry. `f` receives the full parameter list each call.
pub fn central_diff_gradient<F>(mut f: F, params: &[Mat], which: usize, h: f64) -> Mat
where
    F: FnMut(&[Mat]) -> f64,
{
    let mut work: Vec<Mat> = params.to_vec();
    let dim = params[which].dim();
    let mut grad = Mat::zeros(dim);
    for i in 0..dim.0 {
        for j in 0..dim.1 {
            let orig = work[which][[i, j]];
            work[which][[i, j]] = orig + h;
            let plus = f(&work);
            work[which][[i, j]] = orig - h;
            let minus = f(&work);
            work[which][[i, j]] = orig;
            grad[[i, j]] = (plus - minus) / (2.0 * h);
        }
    }
    grad
}

/// Largest entry-wise relative error between two gradients, with a unit
/// floor on the denominator so near-zero entries compare absolutely.
pub fn max_rel_error(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.dim(), b.dim());
    let mut worst: f64 = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let denom = x.abs().max(y.abs()).max(1.0);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues ascending with eigenvectors in matching columns.
pub fn jacobi_eigen(a: &Mat) -> Result<(Vec<f64>, Mat)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi_eigen needs a square matrix");
    let mut m = a.clone();
    let mut v = Mat::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
    let max_sweeps = 100 * n.max(1);

    for _sweep in 0..max_sweeps {
        let mut off: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if (2.0 * off).sqrt() <= 1e-14 * scale {
            let d: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
            return Ok(sort_pairs(d, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(Error::NonConvergence { residual: f64::NAN })
}

fn sort_pairs(d: Vec<f64>, v: Mat) -> (Vec<f64>, Mat) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let mut dd = Vec::with_capacity(n);
    let mut vv = Mat::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        dd.push(d[src]);
        vv.column_mut(col).assign(&v.column(src));
    }
    (dd, vv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn jacobi_2x2_closed_form() {
        // Eigenvalues of [[2, 1], [1, 2]] are 1 and 3.
        let a = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let (d, v) = jacobi_eigen(&a).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12);
        assert!((d[1] - 3.0).abs() < 1e-12);
        for j in 0..2 {
            let col = v.column(j);
            let res = a.dot(&col) - &(&col * d[j]);
            assert!(res.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn fd_matches_simple_quadratic() {
        // f(X) = sum(X^2): gradient 2X.
        let x = arr2(&[[0.5, -1.5], [2.0, 0.0]]);
        let f = |p: &[Mat]| p[0].iter().map(|v| v * v).sum::<f64>();
        let g = central_diff_gradient(f, &[x.clone()], 0, 1e-5);
        assert!(max_rel_error(&g, &(&x * 2.0)) < 1e-9);
    }
}
