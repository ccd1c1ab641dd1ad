use approx::assert_relative_eq;
use forge_core::cluster::reduce_dim;
use forge_core::symmetric_eigen;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

proptest! {
    #[test]
    fn jacobi_matches_nalgebra(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
        let m = &b + b.transpose();
        let flat: Vec<f64> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        let (vals, vecs) = symmetric_eigen(&flat, n);
        for (a, b) in vals.iter().zip(sorted_eigenvalues(&m)) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()));
        }
        // each row is a unit eigenvector
        for k in 0..n {
            let v = DMatrix::from_row_slice(n, 1, &vecs[k * n..(k + 1) * n]);
            prop_assert!(((&m * &v) - &v * vals[k]).norm() <= 1e-7 * (1.0 + vals[k].abs()));
            prop_assert!((v.norm() - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn captured_variance_matches_nalgebra_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (n, d, k) = (300, 6, 2);
    let scales = [5.0, 3.0, 1.0, 0.5, 0.2, 0.1];
    let xs: Vec<Vec<f64>> = (0..n).map(|_| scales.iter().map(|s| s * rng.random_range(-1.0..1.0)).collect()).collect();
    let red = reduce_dim(&xs, k).unwrap();

    let x = DMatrix::from_fn(n, d, |i, j| xs[i][j]);
    let mean = x.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let ev = sorted_eigenvalues(&cov);
    let want = ev[..k].iter().sum::<f64>() / ev.iter().sum::<f64>();
    assert_relative_eq!(red.captured_variance_ratio, want, epsilon = 1e-9);

    // projections carry the top eigenvalues as their variances
    for (c, lambda) in ev.iter().take(k).enumerate() {
        let var = red.vectors.iter().map(|v| v[c] * v[c]).sum::<f64>() / n as f64;
        assert_relative_eq!(var, *lambda, max_relative = 1e-9);
    }
}
