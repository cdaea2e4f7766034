mod common;

use glic::fem::material::reference_hardening;
use glic::fem::{dof, FeModel, InterfaceDrive, Material, Mesh, NewtonControls, PlasticState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn tangent_matches_finite_differences_on_random_states() {
    let (worst, plastic_states) = common::tangent_sweep(7, 50);
    assert!(
        plastic_states > 10,
        "only {plastic_states} plastic committed states"
    );
    assert!(worst <= 1e-5, "worst relative tangent error {worst:e}");
}

#[test]
fn springs_in_series_share_the_stiffness() {
    // two unit elements in a row, nu = 0: each is a spring EA/L, in series k/2
    let e = 1000.0;
    let mesh = Mesh::rectangle(0.0, 0.0, 2.0, 1.0, 2, 1);
    let left = mesh.node_sets["left"].clone();
    let right = mesh.node_sets["right"].clone();
    let mut m = FeModel::homogeneous(mesh, Material::elastic(e, 0.0), 1.0).unwrap();
    for &n in &left {
        m.add_dirichlet(dof(n, 0), 0.0).unwrap();
    }
    m.add_dirichlet(dof(left[0], 1), 0.0).unwrap();
    let u = 0.01;
    for &n in &right {
        m.add_dirichlet(dof(n, 0), u).unwrap();
    }
    m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).unwrap();
    let k = e * 1.0 * 1.0 / 1.0;
    let dofs: Vec<usize> = right.iter().map(|&n| dof(n, 0)).collect();
    // reactions are read from the trial solution, before commit
    let reaction: f64 = m.extract_reactions(&dofs).unwrap().iter().sum();
    assert!(
        (reaction.abs() - k * u / 2.0).abs() <= 1e-10 * k * u,
        "reaction {reaction}"
    );
}

#[test]
fn elastic_solve_matches_dense_oracle() {
    let mut m = common::block(Material::elastic(210_000.0, 0.3), (0.002, 0.01));
    m.add_load(dof(5, 0), 30.0).unwrap();
    m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).unwrap();
    m.commit_increment().unwrap();
    let n = m.num_dofs();
    let k = m.assemble_tangent(&vec![0.0; n]).unwrap().to_dense();
    let mut fixed = vec![None; n];
    for p in m.dirichlet() {
        fixed[p.dof] = Some(p.value);
    }
    let free: Vec<usize> = (0..n).filter(|&d| fixed[d].is_none()).collect();
    let kff = DMatrix::from_fn(free.len(), free.len(), |i, j| k[(free[i], free[j])]);
    let rhs = DVector::from_fn(free.len(), |i, _| {
        let d = free[i];
        m.external_loads()[d]
            - (0..n)
                .filter_map(|c| fixed[c].map(|v| k[(d, c)] * v))
                .sum::<f64>()
    });
    let uf = kff.lu().solve(&rhs).unwrap();
    let u = m.committed_displacements();
    let scale = uf.amax();
    for (i, &d) in free.iter().enumerate() {
        assert!(
            (u[d] - uf[i]).abs() <= 1e-10 * scale,
            "dof {d}: {} vs {}",
            u[d],
            uf[i]
        );
    }
}

#[test]
fn return_mapping_reproduces_table_anchors() {
    let m = common::steel();
    let e = m.youngs_modulus;
    let at_yield = common::uniaxial(&m, 400.0 / e, &PlasticState::default());
    assert_eq!(at_yield.state.eqps, 0.0);
    assert_eq!(at_yield.stress[0], 400.0);
    assert!(common::table_anchors_exact());
    let (stress_err, eqps_err) = common::table_anchor_errors();
    assert!(stress_err <= 1e-12, "{stress_err:e}");
    assert!(eqps_err <= 1e-12, "{eqps_err:e}");
}

#[test]
fn elastic_internal_forces_are_linear_in_displacement() {
    let m = common::block(Material::elastic(210_000.0, 0.3), (0.0, 0.0));
    let n = m.num_dofs();
    let k = m.assemble_tangent(&vec![0.0; n]).unwrap().to_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let u = DVector::from_fn(n, |_, _| rng.gen_range(-0.01..0.01));
        let f = DVector::from_vec(m.assemble_internal_forces(u.as_slice()).unwrap());
        let expect = -(&k * &u);
        assert!((&f - &expect).amax() <= 1e-12 * expect.amax());
    }
}

/// Uniaxial stress from the hardening table alone: bisection on the
/// plastic strain of `E (eps - ep) = flow(ep)`.
fn scalar_uniaxial_stress(e: f64, eps: f64) -> (f64, f64) {
    let h = reference_hardening();
    if e * eps <= h.initial_yield() {
        return (e * eps, 0.0);
    }
    let (mut lo, mut hi) = (0.0, eps);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if e * (eps - mid) > h.evaluate(mid).0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let ep = 0.5 * (lo + hi);
    (e * (eps - ep), ep)
}

#[test]
fn single_element_pull_matches_scalar_oracle() {
    let (e, len, height) = (210_000.0, 2.0, 1.0);
    let mesh = Mesh::rectangle(0.0, 0.0, len, height, 1, 1);
    let left = mesh.node_sets["left"].clone();
    let right = mesh.node_sets["right"].clone();
    let mut m = FeModel::homogeneous(mesh, common::steel(), 1.0).unwrap();
    // the default Newton controls stop at a 0.5% flux ratio
    m.set_controls(NewtonControls {
        residual_ratio_tol: 1e-12,
        correction_ratio_tol: 1e-12,
        max_iterations: 50,
    });
    for &n in &left {
        m.add_dirichlet(dof(n, 0), 0.0).unwrap();
    }
    m.add_dirichlet(dof(left[0], 1), 0.0).unwrap();
    let eps = 0.01;
    for &n in &right {
        m.add_dirichlet(dof(n, 0), eps * len).unwrap();
    }
    m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).unwrap();
    let dofs: Vec<usize> = right.iter().map(|&n| dof(n, 0)).collect();
    let force: f64 = m.extract_reactions(&dofs).unwrap().iter().sum();
    m.commit_increment().unwrap();
    let (stress, ep) = scalar_uniaxial_stress(e, eps);
    assert!(ep > 0.0);
    assert!(
        (force.abs() / height - stress).abs() <= 1e-8 * stress,
        "{} vs {stress}",
        force.abs()
    );
    assert!((m.max_committed_eqps() - ep).abs() <= 1e-8 * ep);
}
