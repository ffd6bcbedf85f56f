use bwlab::linalg::{cholesky, sym_eig, sym_eig_with, tri_lower_inverse, EigenSolver, Matrix};
use bwlab::rng::{standard_normal_matrix, stream, uniform_matrix};
use proptest::prelude::*;
use rand::Rng;

fn random_symmetric(seed: u64, d: usize) -> Matrix {
    let mut rng = stream(seed, &[d as u64]);
    uniform_matrix(&mut rng, d, d, -1.0, 1.0).symmetrize()
}

fn check_decomposition(sigma: &Matrix, solver: EigenSolver) {
    let d = sigma.rows();
    let e = sym_eig_with(sigma, solver).unwrap();
    let recon = (&e.reconstruct() - sigma).frobenius_norm();
    assert!(
        recon <= 1e-10 * sigma.frobenius_norm(),
        "{solver:?} d={d}: reconstruction {recon:e}"
    );
    let ortho = (&e.eigenvectors.t_matmul(&e.eigenvectors) - &Matrix::identity(d)).frobenius_norm();
    assert!(ortho <= 1e-10 * (d as f64).sqrt(), "{solver:?} d={d}: orthogonality {ortho:e}");
    assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    for k in 0..d {
        let col = e.eigenvectors.column(k);
        let lead = col.iter().cloned().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        assert!(lead >= 0.0);
    }
}

#[test]
fn jacobi_reconstruction_and_orthogonality_1000_matrices() {
    let mut rng = stream(2024, &[]);
    for case in 0..1000u64 {
        let d = rng.gen_range(2..=64);
        let sigma = random_symmetric(case, d);
        check_decomposition(&sigma, EigenSolver::Jacobi);
    }
}

#[test]
fn tridiagonal_reconstruction_and_orthogonality() {
    for (case, d) in [2usize, 3, 5, 17, 64, 65, 128, 200].into_iter().enumerate() {
        let sigma = random_symmetric(10_000 + case as u64, d);
        check_decomposition(&sigma, EigenSolver::Tridiagonal);
    }
}

#[test]
fn solvers_agree_on_well_separated_spectra() {
    for d in [2usize, 4, 9, 32, 64] {
        let mut rng = stream(77, &[d as u64]);
        let a = standard_normal_matrix(&mut rng, d, d);
        let sigma = a.matmul_t(&a);
        let j = sym_eig_with(&sigma, EigenSolver::Jacobi).unwrap();
        let t = sym_eig_with(&sigma, EigenSolver::Tridiagonal).unwrap();
        let scale = j.eigenvalues[0];
        for (x, y) in j.eigenvalues.iter().zip(&t.eigenvalues) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
        // the sign convention pins eigenvectors when the spectrum is simple
        assert!((&j.eigenvectors - &t.eigenvectors).max_abs() < 1e-6, "d={d}");
    }
}

#[test]
fn sym_eig_is_bitwise_deterministic() {
    for d in [3usize, 30, 100] {
        let sigma = random_symmetric(5, d);
        let a = sym_eig(&sigma).unwrap();
        let b = sym_eig(&sigma).unwrap();
        let bits = |e: &bwlab::linalg::EigenDecomposition| -> Vec<u64> {
            e.eigenvalues
                .iter()
                .chain(e.eigenvectors.as_slice())
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cholesky_then_inverse_whitens(seed in any::<u64>(), d in 1usize..=48) {
        let mut rng = stream(seed, &[]);
        let a = standard_normal_matrix(&mut rng, d, d);
        let mut sigma = a.matmul_t(&a);
        sigma.add_diagonal(1e-3);
        let l = cholesky(&sigma).unwrap();
        prop_assert!(l.is_lower_triangular());
        prop_assert!(l.diag_extract().iter().all(|&v| v > 0.0));
        let recon = (&l.matmul_t(&l) - &sigma).frobenius_norm();
        prop_assert!(recon <= 1e-10 * sigma.frobenius_norm());
        let w = tri_lower_inverse(&l).unwrap();
        prop_assert!(w.is_lower_triangular());
        let white = (&w * &sigma).matmul_t(&w);
        let err = (&white - &Matrix::identity(d)).frobenius_norm();
        prop_assert!(err <= 1e-9 * (d as f64).sqrt(), "err {:e}", err);
    }
}
