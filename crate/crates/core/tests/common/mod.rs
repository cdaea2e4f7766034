#![allow(dead_code)]

use std::sync::Arc;

use glic::accel::{
    anderson_step, broyden_step, AcceleratorConfig, AcceleratorKind, AcceleratorState,
    InterfaceLayout, InterfaceVector, LowRankInverseJacobian, SecantHistory,
};
use glic::fem::material::reference_hardening;
use glic::fem::{
    dof, return_mapping, FeModel, InterfaceDrive, Material, Mesh, PlasticState, StressUpdate,
};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniaxial stress driver: adjusts the lateral strain until only the axial
/// stress remains.
pub fn uniaxial(material: &Material, e11: f64, state: &PlasticState) -> StressUpdate {
    let mut e = Vector3::new(e11, -0.3 * e11, 0.0);
    for _ in 0..100 {
        let up = return_mapping(material, &e, state).unwrap();
        if up.stress[1].abs() <= 1e-13 * up.stress[0].abs().max(1.0) {
            return up;
        }
        e[1] -= up.stress[1] / up.tangent[(1, 1)];
    }
    panic!("uniaxial driver did not converge");
}

pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// Secant pairs `(w, v)` of dimension `n`; some `v` columns are nearly
/// dependent on earlier ones to exercise the filter.
pub fn random_history(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut cols: Vec<(DVector<f64>, DVector<f64>)> = Vec::with_capacity(m);
    for _ in 0..m {
        // pairs from one map share a scale: |w| ~ |v|
        let s = 10f64.powf(rng.gen_range(-3.0..3.0));
        let w = random_vector(rng, n) * s;
        let v = if !cols.is_empty() && rng.gen_bool(0.2) {
            let k = rng.gen_range(0..cols.len());
            &cols[k].1 * (s * rng.gen_range(0.5..2.0) / cols[k].1.norm())
                + random_vector(rng, n) * (1e-13 * s)
        } else {
            random_vector(rng, n) * s
        };
        cols.push((w, v));
    }
    cols
}

/// Affine fixed-point map `H(p) = G p + b` with `I - G` well conditioned.
pub struct AffineMap {
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl AffineMap {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        loop {
            let g = random_matrix(rng, n, n) * (1.5 / (n as f64).sqrt());
            let a = DMatrix::identity(n, n) - &g;
            let sv = a.clone().svd(false, false).singular_values;
            let cond = sv.max() / sv.min();
            if cond < 1e3 {
                return Self {
                    g,
                    b: random_vector(rng, n),
                };
            }
        }
    }

    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.g * p + &self.b
    }

    pub fn fixed_point(&self) -> DVector<f64> {
        let n = self.b.len();
        (DMatrix::identity(n, n) - &self.g)
            .lu()
            .solve(&self.b)
            .unwrap()
    }
}

/// Runs `kind` on `map` from zero; returns the residual norms of every
/// evaluation until `|r| <= tol |r_0|` or `max_evals` evaluations.
pub fn iterate(
    kind: AcceleratorKind,
    omega: f64,
    map: &AffineMap,
    tol: f64,
    max_evals: usize,
) -> Vec<f64> {
    let n = map.b.len();
    let layout: Arc<InterfaceLayout> = InterfaceLayout::anonymous(n);
    let mut acc = AcceleratorState::new(AcceleratorConfig::new(kind).with_omega(omega)).unwrap();
    let mut p = InterfaceVector::zeros(layout.clone());
    let mut norms = Vec::new();
    for _ in 0..max_evals {
        let pt = map.apply(p.as_dvector());
        let r = (&pt - p.as_dvector()).norm();
        norms.push(r);
        if r <= tol * norms[0] {
            break;
        }
        let ptv = InterfaceVector::new(layout.clone(), pt.as_slice().to_vec()).unwrap();
        p = acc.accelerate(&p, &ptv).unwrap();
    }
    norms
}

/// Second Aitken iterate on the scalar map `H(p) = a p + b` from `p0`,
/// with the relaxation update sign `sign` (`-1` is the secant form).
pub fn aitken_scalar_second_iterate(a: f64, b: f64, p0: f64, omega0: f64, sign: f64) -> f64 {
    let r = |p: f64| a * p + b - p;
    let r0 = r(p0);
    let p1 = p0 + omega0 * r0;
    let r1 = r(p1);
    let omega1 = sign * omega0 * r0 * (r1 - r0) / ((r1 - r0) * (r1 - r0));
    p1 + omega1 * r1
}

pub fn steel() -> Material {
    Material::plastic(210_000.0, 0.3, reference_hardening())
}

/// Block clamped at the bottom, pulled and sheared at the top.
pub fn block(material: Material, top: (f64, f64)) -> FeModel {
    let mesh = Mesh::rectangle(0.0, 0.0, 2.0, 1.0, 3, 2);
    let bottom = mesh.node_sets["bottom"].clone();
    let upper = mesh.node_sets["top"].clone();
    let mut m = FeModel::homogeneous(mesh, material, 1.0).unwrap();
    for &n in &bottom {
        m.add_dirichlet(dof(n, 0), 0.0).unwrap();
        m.add_dirichlet(dof(n, 1), 0.0).unwrap();
    }
    for &n in &upper {
        m.add_dirichlet(dof(n, 0), top.0).unwrap();
        m.add_dirichlet(dof(n, 1), top.1).unwrap();
    }
    m
}

pub fn fd_tangent_error(m: &FeModel, u: &[f64]) -> f64 {
    let k = m.assemble_tangent(u).unwrap().to_dense();
    let h = 1e-8;
    let mut worst = 0.0f64;
    for j in 0..m.num_dofs() {
        let mut up = u.to_vec();
        let mut um = u.to_vec();
        up[j] += h;
        um[j] -= h;
        let fp = m.assemble_internal_forces(&up).unwrap();
        let fm = m.assemble_internal_forces(&um).unwrap();
        for i in 0..m.num_dofs() {
            let fd = -(fp[i] - fm[i]) / (2.0 * h);
            worst = worst.max((fd - k[(i, j)]).abs());
        }
    }
    worst / k.amax()
}

/// Worst relative tangent error over `count` seeded states (some plastic,
/// all perturbed off equilibrium) and the number of plastic states.
pub fn tangent_sweep(seed: u64, count: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut plastic_states = 0;
    for _ in 0..count {
        let top = (rng.gen_range(-0.004..0.004), rng.gen_range(-0.006..0.012));
        let mut m = block(steel(), top);
        if rng.gen_bool(0.7) {
            m.solve_increment(InterfaceDrive::None, (0.0, 1.0)).unwrap();
            m.commit_increment().unwrap();
        }
        let mut u = m.committed_displacements().to_vec();
        for v in u.iter_mut() {
            *v += rng.gen_range(-0.003..0.003);
        }
        if m.max_committed_eqps() > 0.0 {
            plastic_states += 1;
        }
        worst = worst.max(fd_tangent_error(&m, &u));
    }
    (worst, plastic_states)
}

/// Flow stress at the two leading hardening anchors, bit for bit.
pub fn table_anchors_exact() -> bool {
    let h = reference_hardening();
    h.evaluate(0.0).0 == 400.0 && h.evaluate(0.02).0 == 420.0
}

/// Largest relative stress error and absolute plastic strain error of the
/// uniaxial return mapping at the hardening anchors and between them.
pub fn table_anchor_errors() -> (f64, f64) {
    let m = steel();
    let e = m.youngs_modulus;
    let mut stress_err = 0.0f64;
    let mut eqps_err = 0.0f64;
    let points = [
        (0.0, 400.0),
        (0.02, 420.0),
        (0.1, 420.0 + 80.0 * 0.08 / 0.18),
        (0.35, 550.0),
        (0.55, 612.5),
        (0.7, 637.5),
    ];
    for (eqps, stress) in points {
        let up = uniaxial(&m, stress / e + eqps, &PlasticState::default());
        stress_err = stress_err.max((up.stress[0] - stress).abs() / stress);
        eqps_err = eqps_err.max((up.state.eqps - eqps).abs());
    }
    (stress_err, eqps_err)
}

fn filled_history(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SecantHistory {
    let mut h = SecantHistory::new(100, 1e-8);
    for (w, v) in random_history(rng, n, m) {
        h.push(w, v, 0);
    }
    h
}

/// Anderson step on a random history: relative residual of the normal
/// equations `V^T (V α + r) = 0` and the gap of `p = p̃ + W α`.
pub fn anderson_identity_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=30);
    let m = rng.gen_range(1..=n.min(12));
    let mut h = filled_history(&mut rng, n, m);
    let r = random_vector(&mut rng, n);
    let pt = random_vector(&mut rng, n);
    let step = anderson_step(&mut h, &r, &pt).unwrap();
    let v = &step.qr.v;
    let normal = v.transpose() * (v * &step.coefficients + &r);
    let scale = v.norm() * (v.norm() * step.coefficients.norm() + r.norm());
    let expect = &pt + &step.qr.w * &step.coefficients;
    (
        normal.norm() / scale,
        (step.p_next - expect).norm() / (1.0 + pt.norm()),
    )
}

/// Broyden update on a random history over a random prior: worst
/// column-wise `|J V - W| / |W|`, and the gap between the folded factors
/// and the unfolded update on a random vector.
pub fn broyden_identity_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=30);
    let m = rng.gen_range(1..=n.min(12));
    let mut jac = LowRankInverseJacobian::new(n, rng.gen_range(-1.0..1.0), 50, 1e-12);
    let k = rng.gen_range(0..4);
    jac.add_low_rank(
        &random_matrix(&mut rng, n, k),
        &random_matrix(&mut rng, n, k),
    );
    let mut h = filled_history(&mut rng, n, m);
    let r = random_vector(&mut rng, n);
    let pt = random_vector(&mut rng, n);
    let (_, update) = broyden_step(&jac, &mut h, &r, &pt).unwrap();
    let mut secant = 0.0f64;
    for c in 0..update.qr.rank() {
        let v = update.qr.v.column(c).into_owned();
        let w = update.qr.w.column(c).into_owned();
        let jv = update.apply(&jac, &v);
        secant = secant.max((&jv - &w).norm() / w.norm().max(1e-300));
    }
    let mut folded = jac.clone();
    update.fold_into(&mut folded);
    let x = random_vector(&mut rng, n);
    let b = update.apply(&jac, &x);
    (secant, (folded.apply(&x) - &b).norm() / b.norm().max(1.0))
}

/// Anderson on a random affine map of dimension 3 to 10: `(n, iterations,
/// final residual / initial residual)`, stopping at `1e-12` relative.
pub fn anderson_affine_run(seed: u64) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..=10);
    let map = AffineMap::random(&mut rng, n);
    let norms = iterate(AcceleratorKind::Anderson, 0.5, &map, 1e-12, n + 3);
    let iters = norms.len() - 1;
    (n, iters, norms[iters] / norms[0])
}

/// Random scalar affine problem `(a, b, p0, omega0)` with a contraction
/// factor away from 1 and a nonzero first residual.
pub fn scalar_affine_problem(rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    loop {
        let a: f64 = rng.gen_range(-0.45..0.45);
        let b = rng.gen_range(-10.0..10.0);
        let p0 = rng.gen_range(-5.0..5.0);
        let omega0 = rng.gen_range(0.05..1.0);
        if (a * p0 + b - p0).abs() > 1e-3 {
            return (a, b, p0, omega0);
        }
    }
}

/// Second iterate of the Aitken accelerator itself on `H(p) = a p + b`.
pub fn aitken_accelerator_second_iterate(a: f64, b: f64, p0: f64, omega0: f64) -> f64 {
    let layout = InterfaceLayout::anonymous(1);
    let mut acc =
        AcceleratorState::new(AcceleratorConfig::new(AcceleratorKind::Aitken).with_omega(omega0))
            .unwrap();
    let iv = |x: f64| InterfaceVector::new(layout.clone(), vec![x]).unwrap();
    let p1 = acc.accelerate(&iv(p0), &iv(a * p0 + b)).unwrap();
    let q = p1.values()[0];
    acc.accelerate(&p1, &iv(a * q + b)).unwrap().values()[0]
}
