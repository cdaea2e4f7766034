mod common;

use common::{
    aitken_accelerator_second_iterate, aitken_scalar_second_iterate, anderson_affine_run,
    anderson_identity_errors, broyden_identity_errors, iterate, random_matrix, random_vector,
    scalar_affine_problem, AffineMap,
};
use glic::accel::{
    anderson_step, AcceleratorConfig, AcceleratorKind, AcceleratorState, InterfaceLayout,
    InterfaceVector, LowRankInverseJacobian, SecantHistory,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{RngAlgorithm, RngSeed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 200,
        rng_algorithm: RngAlgorithm::ChaCha,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn anderson_coefficients_solve_normal_equations(seed in any::<u64>()) {
        let (normal, combination) = anderson_identity_errors(seed);
        prop_assert!(normal <= 1e-10, "{:e}", normal);
        prop_assert!(combination <= 1e-12, "{:e}", combination);
    }

    #[test]
    fn broyden_update_satisfies_secant_equations(seed in any::<u64>()) {
        let (secant, fold) = broyden_identity_errors(seed);
        prop_assert!(secant <= 1e-10, "{:e}", secant);
        prop_assert!(fold <= 1e-10, "{:e}", fold);
    }

    #[test]
    fn anderson_solves_affine_maps_in_n_plus_two(seed in any::<u64>()) {
        let (n, iters, ratio) = anderson_affine_run(seed);
        prop_assert!(ratio <= 1e-12, "n={} ratio {:e}", n, ratio);
        prop_assert!(iters <= n + 2, "n={} took {}", n, iters);
    }

    #[test]
    fn aitken_is_the_secant_method_in_one_dimension(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, p0, omega0) = scalar_affine_problem(&mut rng);
        let exact = b / (1.0 - a);
        let p2 = aitken_scalar_second_iterate(a, b, p0, omega0, -1.0);
        prop_assert!((p2 - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        let p2b = aitken_accelerator_second_iterate(a, b, p0, omega0);
        prop_assert!((p2b - exact).abs() <= 1e-12 * exact.abs().max(1.0));
    }

    #[test]
    fn anderson_is_exact_with_a_square_history(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=10);
        let mut h = SecantHistory::new(100, 1e-8);
        for _ in 0..n {
            h.push(random_vector(&mut rng, n), random_vector(&mut rng, n), 0);
        }
        let r = random_vector(&mut rng, n);
        let step = anderson_step(&mut h, &r, &random_vector(&mut rng, n)).unwrap();
        prop_assume!(step.qr.rank() == n);
        let res = &step.qr.v * &step.coefficients + &r;
        prop_assert!(res.norm() <= 1e-12 * r.norm(), "{:e}", res.norm() / r.norm());
    }

    #[test]
    fn broyden_solves_three_dimensional_affine_maps(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = AffineMap::random(&mut rng, 3);
        let exact = map.fixed_point();
        let layout = InterfaceLayout::anonymous(3);
        let mut acc = AcceleratorState::new(AcceleratorConfig::new(AcceleratorKind::Broyden)).unwrap();
        let mut p = InterfaceVector::zeros(layout.clone());
        for _ in 0..5 {
            let pt = map.apply(p.as_dvector());
            let pt = InterfaceVector::new(layout.clone(), pt.as_slice().to_vec()).unwrap();
            p = acc.accelerate(&p, &pt).unwrap();
        }
        let err = (p.as_dvector() - &exact).norm();
        prop_assert!(err <= 1e-10 * exact.norm(), "{:e}", err / exact.norm());
    }

    #[test]
    fn low_rank_jacobian_matches_dense_accumulation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=25);
        let base = rng.gen_range(-1.0..1.0);
        let mut jac = LowRankInverseJacobian::new(n, base, 50, 1e-12);
        let mut dense = DMatrix::identity(n, n) * base;
        for _ in 0..rng.gen_range(1..5) {
            let k = rng.gen_range(1..4);
            let a = random_matrix(&mut rng, n, k);
            let b = random_matrix(&mut rng, n, k);
            dense += &a * b.transpose();
            jac.add_low_rank(&a, &b);
        }
        let err = (jac.to_dense() - &dense).amax();
        prop_assert!(err <= 1e-12 * dense.amax().max(1.0), "{:e}", err);
    }

    #[test]
    fn multi_secant_steps_are_scale_equivariant(seed in any::<u64>(), c in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..=8);
        let map = AffineMap::random(&mut rng, n);
        let scaled = AffineMap { g: map.g.clone(), b: &map.b * c };
        for kind in [AcceleratorKind::Anderson, AcceleratorKind::Broyden, AcceleratorKind::Aitken] {
            let a = iterate(kind, 0.5, &map, 0.0, 4);
            let b = iterate(kind, 0.5, &scaled, 0.0, 4);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - c * x).abs() <= 1e-9 * (c * x).abs().max(1e-300), "{:?}", kind);
            }
        }
    }
}

#[test]
fn printed_aitken_sign_is_not_a_secant_step() {
    let (a, b, p0, omega0) = (0.3, 2.0, 0.0, 0.5);
    let exact = b / (1.0 - a);
    let secant = aitken_scalar_second_iterate(a, b, p0, omega0, -1.0);
    let printed = aitken_scalar_second_iterate(a, b, p0, omega0, 1.0);
    assert!((secant - exact).abs() <= 1e-12 * exact);
    assert!((printed - exact).abs() > 0.1 * exact);
}
