use approx::assert_relative_eq;
use minv_core::maps::{linear_map, pseudoinverse, tikhonov_operator};
use minv_core::solvers::{augmented_objective_identity_check, moment_solution, reg_wp_solution, tikhonov_bound};
use minv_core::transport::wasserstein_p;
use minv_core::{Domain, OtMethod, ParticleMeasure, RegularizationConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn cloud(dim: usize, n: usize) -> impl Strategy<Value = ParticleMeasure> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, dim), n)
        .prop_map(move |pts| ParticleMeasure::uniform(dim, pts).unwrap())
}

fn apply(a: &DMatrix<f64>, m: &ParticleMeasure) -> ParticleMeasure {
    m.map_points(a.nrows(), |x| (a * DVector::from_column_slice(x)).as_slice().to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmented_identity_holds_for_p2(a in matrix(2, 2), x in cloud(2, 5), y in cloud(2, 5), alpha in 0.01..3.0f64) {
        let g = linear_map(a, Domain::Whole(2)).unwrap();
        let cfg = RegularizationConfig::new(alpha, 2.0).unwrap();
        let (lhs, rhs) = augmented_objective_identity_check(&g, &x, &y, &cfg).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9);
    }

    #[test]
    fn tikhonov_bound_dominates(a in matrix(3, 2), x in cloud(2, 6), noise in cloud(3, 6), alpha in 1e-2..5.0f64) {
        prop_assume!(a.clone().svd(false, false).singular_values.min() > 0.05);
        let y_true = apply(&a, &x);
        let y_noisy = ParticleMeasure::uniform(
            3,
            y_true.points().zip(noise.points()).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + 0.1 * q).collect()).collect(),
        ).unwrap();
        let w2 = wasserstein_p(&y_true, &y_noisy, 2.0, OtMethod::Exact).unwrap();
        let bound = tikhonov_bound(&a, alpha, w2, y_true.moment(2.0).unwrap()).unwrap();
        let recon = apply(&tikhonov_operator(&a, alpha).unwrap(), &y_noisy);
        let measured = wasserstein_p(&x, &recon, 2.0, OtMethod::Exact).unwrap();
        prop_assert!(measured <= bound.full + 1e-9);
        prop_assert!(bound.full <= bound.simplified + 1e-9);
    }
}

#[test]
fn linear_least_norm_is_the_pseudoinverse() {
    let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
    let y = ParticleMeasure::uniform(2, vec![vec![1.0, 2.0], vec![-0.5, 0.3], vec![0.0, 0.0]]).unwrap();
    let g = linear_map(a.clone(), Domain::Whole(3)).unwrap();
    let report = moment_solution(&g, &y).unwrap();
    let expected = apply(&pseudoinverse(&a).unwrap(), &y);
    let got = report.optimizer.as_particles().unwrap();
    for (u, v) in got.points().zip(expected.points()) {
        for (p, q) in u.iter().zip(v) {
            assert_relative_eq!(*p, *q, epsilon = 1e-10);
        }
    }
}

#[test]
fn linear_reg_wp_is_tikhonov() {
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let y = ParticleMeasure::uniform(3, vec![vec![1.0, 2.0, 3.5], vec![-0.5, 0.3, 0.0]]).unwrap();
    let g = linear_map(a.clone(), Domain::Whole(2)).unwrap();
    let alpha = 0.7;
    let report = reg_wp_solution(&g, &y, &RegularizationConfig::new(alpha, 2.0).unwrap()).unwrap();
    let expected = apply(&tikhonov_operator(&a, alpha).unwrap(), &y);
    for (u, v) in report.optimizer.as_particles().unwrap().points().zip(expected.points()) {
        for (p, q) in u.iter().zip(v) {
            assert_relative_eq!(*p, *q, epsilon = 1e-10);
        }
    }
}
