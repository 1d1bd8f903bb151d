//! Latent-space communication: spectral projection of embeddings and the
//! functional-map loss terms (descriptor alignment, Laplacian commutativity,
//! bijectivity, orthogonality) over the trainable maps C12 and C21.

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::spectral::SpectralBasis;
use crate::Mat;

/// Trainable square maps between the two spectral latent spaces.
#[derive(Debug, Clone)]
pub struct FunctionalMaps {
    pub c12: Mat,
    pub c21: Mat,
}

/// Both maps start at the identity: bijectivity and orthogonality losses are
/// exactly zero there, and so is commutativity when the spectra agree.
pub fn init_maps(r: usize) -> FunctionalMaps {
    FunctionalMaps {
        c12: Mat::eye(r),
        c21: Mat::eye(r),
    }
}

impl FunctionalMaps {
    pub fn r(&self) -> usize {
        self.c12.nrows()
    }
}

/// Weights of the two terms inside each directed functional-map loss:
/// `alpha` for descriptor alignment, `beta` for Laplacian commutativity.
#[derive(Debug, Clone, Copy)]
pub struct FmHyper {
    pub alpha: f64,
    pub beta: f64,
}

/// The maps registered as trainable leaves on a tape.
pub struct MapTensors {
    pub c12: Tensor,
    pub c21: Tensor,
}

pub fn register_maps(tape: &Tape, maps: &FunctionalMaps) -> MapTensors {
    MapTensors {
        c12: tape.leaf(maps.c12.clone()),
        c21: tape.leaf(maps.c21.clone()),
    }
}

/// Projects embeddings onto the reduced spectral subspace: `Phi^T Z`,
/// an `r x d` coefficient matrix. The basis is a constant, not trainable.
pub fn project_spectral(z: &Tensor, basis: &SpectralBasis) -> Result<Tensor> {
    let (rows, _) = z.shape();
    if rows != basis.phi.nrows() {
        return Err(Error::ShapeMismatch {
            op: "project_spectral",
            lhs: format!("{}x{}", basis.phi.nrows(), basis.r),
            rhs: format!("{rows}x{}", z.shape().1),
        });
    }
    let phi_t = z.tape().constant(basis.phi.t().to_owned());
    phi_t.matmul(z)
}

/// One directed functional-map loss:
/// `alpha ||C f_src - f_tgt||_F^2 + beta ||diag(l_tgt) C - C diag(l_src)||_F^2`.
/// The eigenvalue diagonals enter as row/column scalings of C.
fn directed_loss(
    c: &Tensor,
    f_src: &Tensor,
    f_tgt: &Tensor,
    lambda_src: &[f64],
    lambda_tgt: &[f64],
    hyper: &FmHyper,
) -> Result<Tensor> {
    let align = c.matmul(f_src)?.sub(f_tgt)?.frobenius_sq()?.scale(hyper.alpha)?;
    let comm = c
        .scale_rows(lambda_tgt)?
        .sub(&c.scale_cols(lambda_src)?)?
        .frobenius_sq()?
        .scale(hyper.beta)?;
    align.add(&comm)
}

/// The two directed losses `(L12, L21)` as separate scalars so the caller
/// can log them individually.
pub fn fm_align_parts(
    maps: &MapTensors,
    f1_hat: &Tensor,
    f2_hat: &Tensor,
    lambda1: &[f64],
    lambda2: &[f64],
    hyper: &FmHyper,
) -> Result<(Tensor, Tensor)> {
    let l12 = directed_loss(&maps.c12, f1_hat, f2_hat, lambda1, lambda2, hyper)?;
    let l21 = directed_loss(&maps.c21, f2_hat, f1_hat, lambda2, lambda1, hyper)?;
    Ok((l12, l21))
}

/// Sum of both directed losses.
pub fn fm_align_loss(
    maps: &MapTensors,
    f1_hat: &Tensor,
    f2_hat: &Tensor,
    lambda1: &[f64],
    lambda2: &[f64],
    hyper: &FmHyper,
) -> Result<Tensor> {
    let (l12, l21) = fm_align_parts(maps, f1_hat, f2_hat, lambda1, lambda2, hyper)?;
    l12.add(&l21)
}

/// `||C12 C21 - I||_F^2 + ||C21 C12 - I||_F^2`: both compositions should
/// reproduce the identity.
pub fn bijectivity_loss(maps: &MapTensors) -> Result<Tensor> {
    let r = maps.c12.shape().0;
    let eye = maps.c12.tape().constant(Mat::eye(r));
    let a = maps.c12.matmul(&maps.c21)?.sub(&eye)?.frobenius_sq()?;
    let b = maps.c21.matmul(&maps.c12)?.sub(&eye)?.frobenius_sq()?;
    a.add(&b)
}

/// `||C12 C12^T - I||_F^2 + ||C21^T C21 - I||_F^2`: the maps should act as
/// partial isometries.
pub fn orthogonality_loss(maps: &MapTensors) -> Result<Tensor> {
    let r = maps.c12.shape().0;
    let eye = maps.c12.tape().constant(Mat::eye(r));
    let a = maps
        .c12
        .matmul(&maps.c12.transpose()?)?
        .sub(&eye)?
        .frobenius_sq()?;
    let b = maps
        .c21
        .transpose()?
        .matmul(&maps.c21)?
        .sub(&eye)?
        .frobenius_sq()?;
    a.add(&b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_laplacian, random_gnm_graph};
    use crate::spectral::eig_smallest;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn on_tape(c12: Mat, c21: Mat) -> (Tape, MapTensors) {
        let tape = Tape::new();
        let maps = MapTensors {
            c12: tape.leaf(c12),
            c21: tape.leaf(c21),
        };
        (tape, maps)
    }

    #[test]
    fn init_is_identity_with_zero_regularizers() {
        let maps = init_maps(5);
        assert_eq!(maps.c12, Mat::eye(5));
        let (_t, mt) = on_tape(maps.c12.clone(), maps.c21.clone());
        assert_eq!(bijectivity_loss(&mt).unwrap().scalar(), 0.0);
        assert_eq!(orthogonality_loss(&mt).unwrap().scalar(), 0.0);
    }

    #[test]
    fn bijectivity_examples() {
        let (_t, exact) = on_tape(Mat::eye(3) * 2.0, Mat::eye(3) * 0.5);
        assert!(bijectivity_loss(&exact).unwrap().scalar() < 1e-12);

        let (_t, zero) = on_tape(Mat::zeros((3, 3)), Mat::zeros((3, 3)));
        assert_eq!(bijectivity_loss(&zero).unwrap().scalar(), 6.0);
    }

    #[test]
    fn orthogonality_examples() {
        // Permutation matrices are orthogonal.
        let mut p = Mat::zeros((3, 3));
        p[[0, 1]] = 1.0;
        p[[1, 2]] = 1.0;
        p[[2, 0]] = 1.0;
        let (_t, maps) = on_tape(p.clone(), p.t().to_owned());
        assert!(orthogonality_loss(&maps).unwrap().scalar() < 1e-12);

        // C12 = 2I (r=2): first term is ||4I - I||_F^2 = 18.
        let (_t, maps) = on_tape(Mat::eye(2) * 2.0, Mat::eye(2));
        assert!((orthogonality_loss(&maps).unwrap().scalar() - 18.0).abs() < 1e-12);
    }

    #[test]
    fn align_loss_zero_on_matched_inputs() {
        let tape = Tape::new();
        let maps = MapTensors {
            c12: tape.leaf(Mat::eye(3)),
            c21: tape.leaf(Mat::eye(3)),
        };
        let f = tape.constant(ndarray::arr2(&[[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]]));
        let lambda = [0.1, 0.5, 1.2];
        let hyper = FmHyper {
            alpha: 1e-3,
            beta: 1e-2,
        };
        let loss = fm_align_loss(&maps, &f, &f, &lambda, &lambda, &hyper).unwrap();
        assert!(loss.scalar() < 1e-15);

        // Zero weights kill the loss regardless of the inputs.
        let g = tape.constant(ndarray::arr2(&[[9.0, 9.0], [9.0, 9.0], [9.0, 9.0]]));
        let off = FmHyper { alpha: 0.0, beta: 0.0 };
        let loss = fm_align_loss(&maps, &f, &g, &lambda, &[1.0, 1.0, 1.0], &off).unwrap();
        assert_eq!(loss.scalar(), 0.0);
    }

    #[test]
    fn align_loss_matches_scalar_loop_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let r = 4;
        let d = 3;
        let mut rand_mat = |rows: usize, cols: usize| {
            Mat::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
        };
        let c12 = rand_mat(r, r);
        let c21 = rand_mat(r, r);
        let f1 = rand_mat(r, d);
        let f2 = rand_mat(r, d);
        let l1: Vec<f64> = (0..r).map(|i| 0.3 * i as f64).collect();
        let l2: Vec<f64> = (0..r).map(|i| 0.1 + 0.4 * i as f64).collect();
        let hyper = FmHyper {
            alpha: 0.7,
            beta: 0.2,
        };

        // Scalar-loop evaluation of both Frobenius terms, both directions.
        let direction = |c: &Mat, fs: &Mat, ft: &Mat, ls: &[f64], lt: &[f64]| {
            let mut align = 0.0;
            for i in 0..r {
                for j in 0..d {
                    let mut cf = 0.0;
                    for k in 0..r {
                        cf += c[[i, k]] * fs[[k, j]];
                    }
                    align += (cf - ft[[i, j]]).powi(2);
                }
            }
            let mut comm = 0.0;
            for i in 0..r {
                for j in 0..r {
                    let x = lt[i] * c[[i, j]] - c[[i, j]] * ls[j];
                    comm += x * x;
                }
            }
            hyper.alpha * align + hyper.beta * comm
        };
        let want = direction(&c12, &f1, &f2, &l1, &l2) + direction(&c21, &f2, &f1, &l2, &l1);

        let tape = Tape::new();
        let maps = MapTensors {
            c12: tape.leaf(c12),
            c21: tape.leaf(c21),
        };
        let f1t = tape.constant(f1);
        let f2t = tape.constant(f2);
        let got = fm_align_loss(&maps, &f1t, &f2t, &l1, &l2, &hyper)
            .unwrap()
            .scalar();
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }

    #[test]
    fn projection_of_basis_is_identity() {
        let g = random_gnm_graph(12, 30, 8).unwrap();
        let l = normalized_laplacian(&g);
        let basis = eig_smallest(&l, 6).unwrap();

        let tape = Tape::new();
        let z = tape.constant(basis.phi.clone());
        let f = project_spectral(&z, &basis).unwrap().value();
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((f[[i, j]] - want).abs() < 1e-8);
            }
        }

        let zero = tape.constant(Mat::zeros((12, 4)));
        assert!(project_spectral(&zero, &basis)
            .unwrap()
            .value()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn full_basis_round_trip() {
        let g = random_gnm_graph(10, 25, 13).unwrap();
        let l = normalized_laplacian(&g);
        let basis = eig_smallest(&l, 10).unwrap();
        let z_val = Mat::from_shape_fn((10, 3), |(i, j)| ((i * 5 + j * 11) % 7) as f64 - 3.0);

        let tape = Tape::new();
        let z = tape.constant(z_val.clone());
        let f = project_spectral(&z, &basis).unwrap().value();
        let back = basis.phi.dot(&f);
        let err: f64 = (&back - &z_val).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err < 1e-8, "round-trip error {err}");
    }

    #[test]
    fn gradient_descent_reaches_closed_form_optimum() {
        // With beta = 0 and invertible F1 the minimizer is C12 = F2 F1^{-1}
        // with zero loss. Use a well-conditioned F1 so 200 plain gradient
        // steps from the identity get within 1e-6.
        let r = 4;
        let mut rng = ChaCha20Rng::seed_from_u64(4242);
        // F1 = Q D with Q a random rotation (via Jacobi on a random
        // symmetric matrix) and D diag(1..2): condition number about 2.
        let sym = {
            let m = Mat::from_shape_fn((r, r), |_| rng.random_range(-1.0..1.0));
            (&m + &m.t()) * 0.5
        };
        let (_, q) = crate::oracles::jacobi_eigen(&sym).unwrap();
        let mut f1 = q.clone();
        for (j, mut col) in f1.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| x * (1.0 + j as f64 / 3.0));
        }
        let f2 = Mat::from_shape_fn((r, r), |_| rng.random_range(-1.0..1.0));
        let hyper = FmHyper { alpha: 1.0, beta: 0.0 };

        let mut c12 = Mat::eye(r);
        let lr = 0.05;
        for _ in 0..200 {
            let tape = Tape::new();
            let maps = MapTensors {
                c12: tape.leaf(c12.clone()),
                c21: tape.leaf(Mat::eye(r)),
            };
            let f1t = tape.constant(f1.clone());
            let f2t = tape.constant(f2.clone());
            let lambda = vec![0.0; r];
            let (l12, _) = fm_align_parts(&maps, &f1t, &f2t, &lambda, &lambda, &hyper).unwrap();
            let grads = l12.backward().unwrap();
            c12 -= &(grads.get(&maps.c12) * lr);
        }
        let final_loss: f64 = (&c12.dot(&f1) - &f2).iter().map(|x| x * x).sum();
        assert!(final_loss < 1e-6, "loss after 200 steps: {final_loss:.3e}");
    }
}
