//! Truncated eigenbasis of the normalized graph Laplacian.
//!
//! Two routes with one contract: a dense Householder reduction followed by
//! implicit-shift QL for `n <= 2000`, and Lanczos with full
//! reorthogonalization above that. Returned bases always satisfy
//! per-column residual and orthonormality bounds of `1e-8` or the call fails.

use crate::error::{Error, Result};
use crate::Mat;
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Residual / orthonormality bound every returned basis must satisfy.
pub const RESIDUAL_TOL: f64 = 1e-8;

const DENSE_CUTOFF: usize = 2000;
const QL_MAX_ITER: usize = 50;

/// First `r` eigenpairs of a symmetric normalized Laplacian, ascending.
///
/// Columns of `phi` are orthonormal and sign-fixed: the largest-magnitude
/// entry of each column is positive (lowest index wins ties).
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub phi: Mat,
    pub lambda: Vec<f64>,
    pub r: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenStrategy {
    /// Dense for `n <= 2000`, Lanczos otherwise.
    Auto,
    Dense,
    Lanczos,
}

/// Computes the `r` smallest eigenpairs of a dense symmetric matrix.
///
/// `r` larger than `n` is clamped (with a warning); non-symmetric input and
/// non-convergence are errors.
pub fn eig_smallest(l_sym: &Mat, r: usize) -> Result<SpectralBasis> {
    eig_smallest_with(l_sym, r, EigenStrategy::Auto)
}

pub fn eig_smallest_with(l_sym: &Mat, r: usize, strategy: EigenStrategy) -> Result<SpectralBasis> {
    let n = l_sym.nrows();
    if n == 0 || l_sym.ncols() != n {
        return Err(Error::invalid(format!(
            "expected a square matrix, got {}x{}",
            l_sym.nrows(),
            l_sym.ncols()
        )));
    }
    if r == 0 {
        return Err(Error::invalid("basis size r must be positive"));
    }
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((l_sym[[i, j]] - l_sym[[j, i]]).abs());
        }
    }
    if asym > 1e-10 {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let r = if r > n {
        log::warn!("basis size {r} exceeds matrix order {n}; clamping");
        n
    } else {
        r
    };

    let (lambda, phi) = match strategy {
        EigenStrategy::Dense => dense_smallest(l_sym, r)?,
        EigenStrategy::Lanczos => lanczos_smallest(l_sym, r)?,
        EigenStrategy::Auto => {
            if n <= DENSE_CUTOFF {
                dense_smallest(l_sym, r)?
            } else {
                lanczos_smallest(l_sym, r)?
            }
        }
    };

    let mut basis = SpectralBasis { phi, lambda, r };
    fix_signs(&mut basis.phi);
    validate(l_sym, &basis)?;
    Ok(basis)
}

fn dense_smallest(a: &Mat, r: usize) -> Result<(Vec<f64>, Mat)> {
    let n = a.nrows();
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e);
    ql_implicit(&mut d, &mut e, &mut z).map_err(|_| non_convergence(a, &d, &z, r))?;
    Ok(take_smallest(&d, &z, r))
}

/// Sorts eigenpairs ascending and keeps the first `r`.
fn take_smallest(d: &[f64], z: &Mat, r: usize) -> (Vec<f64>, Mat) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
    let mut lambda = Vec::with_capacity(r);
    let mut phi = Mat::zeros((n, r));
    for (col, &src) in order.iter().take(r).enumerate() {
        lambda.push(d[src]);
        phi.column_mut(col).assign(&z.column(src));
    }
    (lambda, phi)
}

fn non_convergence(a: &Mat, d: &[f64], z: &Mat, r: usize) -> Error {
    let (lambda, phi) = take_smallest(d, z, r.min(d.len()));
    let mut worst: f64 = 0.0;
    for (j, &lam) in lambda.iter().enumerate() {
        let col = phi.column(j);
        let res = a.dot(&col) - &(&col * lam);
        worst = worst.max(res.dot(&res).sqrt());
    }
    Error::NonConvergence { residual: worst }
}

/// Householder reduction of a symmetric matrix to tridiagonal form with
/// accumulated transformations (classic tred2). On return `a` holds the
/// orthogonal matrix, `d` the diagonal, and `e[1..]` the subdiagonal.
fn tridiagonalize(a: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = a.nrows();
    if n == 1 {
        d[0] = a[[0, 0]];
        e[0] = 0.0;
        a[[0, 0]] = 1.0;
        return;
    }
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[[i, k]].abs()).sum();
            if scale == 0.0 {
                e[i] = a[[i, l]];
            } else {
                for k in 0..=l {
                    a[[i, k]] /= scale;
                    h += a[[i, k]] * a[[i, k]];
                }
                let f = a[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[[i, l]] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    a[[j, i]] = a[[i, j]] / h;
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[[j, k]] * a[[i, k]];
                    }
                    for k in (j + 1)..=l {
                        g += a[[k, j]] * a[[i, k]];
                    }
                    e[j] = g / h;
                    f_acc += e[j] * a[[i, j]];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a[[i, j]];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[[j, k]] -= f * e[k] + g * a[[i, k]];
                    }
                }
            }
        } else {
            e[i] = a[[i, l]];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a[[i, k]] * a[[k, j]];
                }
                for k in 0..i {
                    a[[k, j]] -= g * a[[k, i]];
                }
            }
        }
        d[i] = a[[i, i]];
        a[[i, i]] = 1.0;
        for j in 0..i {
            a[[j, i]] = 0.0;
            a[[i, j]] = 0.0;
        }
    }
}

/// Implicit-shift QL on a tridiagonal matrix, rotations accumulated into `z`
/// (classic tql2). `e[0]` is unused on entry.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut Mat) -> std::result::Result<(), ()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_ITER {
                return Err(());
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Lanczos with full reorthogonalization. The Krylov basis grows until the
/// first `r` Ritz pairs meet [`RESIDUAL_TOL`] or the basis spans the whole
/// space; the loop is capped at `10 * r` extension rounds.
fn lanczos_smallest(a: &Mat, r: usize) -> Result<(Vec<f64>, Mat)> {
    let n = a.nrows();
    let mut rng = ChaCha20Rng::seed_from_u64(0x5EED_BA5E);
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new(); // beta[j] couples v_j and v_{j+1}

    let mut v = random_unit(n, &mut rng);
    let mut m_goal = (2 * r + 30).min(n);
    let grow = (r / 2).max(20);
    let max_rounds = 10 * r;

    for _round in 0..max_rounds {
        while basis.len() < m_goal {
            let j = basis.len();
            basis.push(v.clone());
            let mut w = a.dot(&v);
            if j > 0 {
                w.scaled_add(-beta[j - 1], &basis[j - 1]);
            }
            let aj = v.dot(&w);
            alpha.push(aj);
            w.scaled_add(-aj, &v);
            // Full reorthogonalization, twice.
            for _ in 0..2 {
                for u in &basis {
                    let proj = u.dot(&w);
                    w.scaled_add(-proj, u);
                }
            }
            let bj = w.dot(&w).sqrt();
            if bj < 1e-13 {
                // Invariant subspace found; continue in its complement.
                beta.push(0.0);
                v = fresh_direction(n, &basis, &mut rng)?;
            } else {
                beta.push(bj);
                v = w / bj;
            }
        }

        let m = basis.len();
        let mut d = alpha.clone();
        let mut e = vec![0.0; m];
        e[1..m].copy_from_slice(&beta[..m - 1]);
        let mut s = Mat::eye(m);
        if ql_implicit(&mut d, &mut e, &mut s).is_err() {
            return Err(Error::NonConvergence { residual: f64::NAN });
        }

        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| d[i].total_cmp(&d[j]).then(i.cmp(&j)));
        let wanted = r.min(m);
        // Residual bound |beta_m * s[m-1, j]| for the candidate pairs.
        let tail = beta[m - 1];
        let mut worst: f64 = 0.0;
        for &col in order.iter().take(wanted) {
            worst = worst.max((tail * s[[m - 1, col]]).abs());
        }
        if (worst <= RESIDUAL_TOL * 0.1 && wanted == r) || m >= n {
            let mut lambda = Vec::with_capacity(wanted);
            let mut phi = Mat::zeros((n, wanted));
            for (out, &col) in order.iter().take(wanted).enumerate() {
                lambda.push(d[col]);
                let mut x = Array1::zeros(n);
                for (j, u) in basis.iter().enumerate() {
                    x.scaled_add(s[[j, col]], u);
                }
                phi.column_mut(out).assign(&x);
            }
            return Ok((lambda, phi));
        }
        m_goal = (m + grow).min(n);
    }
    Err(Error::NonConvergence { residual: f64::NAN })
}

fn random_unit(n: usize, rng: &mut ChaCha20Rng) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0f64..1.0));
    let norm = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm);
    v
}

fn fresh_direction(n: usize, basis: &[Array1<f64>], rng: &mut ChaCha20Rng) -> Result<Array1<f64>> {
    for _ in 0..32 {
        let mut v = random_unit(n, rng);
        for u in basis {
            let proj = u.dot(&v);
            v.scaled_add(-proj, u);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return Ok(v / norm);
        }
    }
    Err(Error::invalid(
        "could not find a direction orthogonal to the Krylov basis",
    ))
}

/// Makes the largest-magnitude entry of each column positive; the lowest
/// index decides ties.
fn fix_signs(phi: &mut Mat) {
    for mut col in phi.columns_mut() {
        let mut best = 0;
        let mut best_abs = 0.0;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

fn validate(l_sym: &Mat, basis: &SpectralBasis) -> Result<()> {
    let mut worst: f64 = 0.0;
    for (j, &lam) in basis.lambda.iter().enumerate() {
        let col = basis.phi.column(j);
        let res = l_sym.dot(&col) - &(&col * lam);
        worst = worst.max(res.dot(&res).sqrt());
    }
    let gram = basis.phi.t().dot(&basis.phi);
    let mut orth = 0.0;
    for i in 0..basis.r {
        for j in 0..basis.r {
            let want = if i == j { 1.0 } else { 0.0 };
            orth += (gram[[i, j]] - want) * (gram[[i, j]] - want);
        }
    }
    let orth = orth.sqrt();
    if worst > RESIDUAL_TOL || orth > RESIDUAL_TOL {
        return Err(Error::NonConvergence {
            residual: worst.max(orth),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_laplacian, random_gnm_graph, ring_graph};

    #[test]
    fn ring_c8_closed_form() {
        // Self-loop convention: degree 3, eigenvalues 1 - (1 + 2cos(2 pi j/8))/3.
        let l = normalized_laplacian(&ring_graph(8));
        let basis = eig_smallest(&l, 8).unwrap();
        let mut want: Vec<f64> = (0..8)
            .map(|j| 1.0 - (1.0 + 2.0 * (2.0 * std::f64::consts::PI * j as f64 / 8.0).cos()) / 3.0)
            .collect();
        want.sort_by(f64::total_cmp);
        for (got, want) in basis.lambda.iter().zip(&want) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
        assert!(basis.lambda[0].abs() < 1e-12);
    }

    #[test]
    fn connected_graph_null_eigenvector() {
        let g = ring_graph(12);
        let l = normalized_laplacian(&g);
        let basis = eig_smallest(&l, 3).unwrap();
        assert!(basis.lambda[0].abs() < 1e-10);
        // Null eigenvector is proportional to sqrt(deg + 1).
        let d: Vec<f64> = g.degrees().iter().map(|&d| (d as f64 + 1.0).sqrt()).collect();
        let norm: f64 = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (i, &di) in d.iter().enumerate() {
            assert!((basis.phi[[i, 0]].abs() - di / norm).abs() < 1e-8);
        }
    }

    #[test]
    fn clamps_r_and_rejects_bad_input() {
        let l = normalized_laplacian(&ring_graph(5));
        let basis = eig_smallest(&l, 300).unwrap();
        assert_eq!(basis.r, 5);
        assert!(eig_smallest(&l, 0).is_err());

        let mut asym = l.clone();
        asym[[0, 1]] += 1e-3;
        assert!(eig_smallest(&asym, 2).is_err());
    }

    #[test]
    fn eigenvalues_in_laplacian_range() {
        for seed in 0..5 {
            let g = random_gnm_graph(30, 60, seed).unwrap();
            let l = normalized_laplacian(&g);
            let basis = eig_smallest(&l, 30).unwrap();
            for &lam in &basis.lambda {
                assert!(lam > -1e-9 && lam < 2.0 + 1e-9);
            }
            for w in basis.lambda.windows(2) {
                assert!(w[0] <= w[1] + 1e-12);
            }
        }
    }

    #[test]
    fn lanczos_matches_dense_on_small_graphs() {
        for seed in 0..3 {
            let g = random_gnm_graph(40, 100, seed).unwrap();
            let l = normalized_laplacian(&g);
            let dense = eig_smallest_with(&l, 10, EigenStrategy::Dense).unwrap();
            let lan = eig_smallest_with(&l, 10, EigenStrategy::Lanczos).unwrap();
            for (a, b) in dense.lambda.iter().zip(&lan.lambda) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lanczos_handles_disconnected_graphs() {
        // Two components force an invariant-subspace restart.
        let mut edges: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
        edges.extend((10..20).map(|i| (i, 10 + (i + 1 - 10) % 10)));
        let g = crate::graph::Graph::new(20, edges).unwrap();
        let l = normalized_laplacian(&g);
        let lan = eig_smallest_with(&l, 4, EigenStrategy::Lanczos).unwrap();
        let dense = eig_smallest_with(&l, 4, EigenStrategy::Dense).unwrap();
        // Two zero eigenvalues, one per component.
        assert!(lan.lambda[0].abs() < 1e-9);
        assert!(lan.lambda[1].abs() < 1e-9);
        for (a, b) in dense.lambda.iter().zip(&lan.lambda) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn deterministic_output() {
        let g = random_gnm_graph(25, 70, 9).unwrap();
        let l = normalized_laplacian(&g);
        let b1 = eig_smallest(&l, 10).unwrap();
        let b2 = eig_smallest(&l, 10).unwrap();
        assert_eq!(b1.lambda, b2.lambda);
        assert_eq!(b1.phi, b2.phi);
    }

    #[test]
    fn single_node() {
        let l = Mat::zeros((1, 1));
        let basis = eig_smallest(&l, 1).unwrap();
        assert_eq!(basis.lambda, vec![0.0]);
        assert_eq!(basis.phi[[0, 0]], 1.0);
    }
}
