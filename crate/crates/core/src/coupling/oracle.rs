//! Linear-case oracles for the interface fixed-point map.

use nalgebra::{DMatrix, DVector};

use super::{CouplingError, CouplingProblem};
use crate::accel::{InterfaceLayout, InterfaceVector};

/// Columns of `M = dr/dp` by finite differences of unit size around `p = 0`.
/// Exact when every model is linear.
pub fn interface_jacobian(
    problem: &mut CouplingProblem,
    range: (f64, f64),
) -> Result<DMatrix<f64>, CouplingError> {
    let layout = problem.layout().clone();
    let n = layout.len();
    let zero = InterfaceVector::zeros(layout.clone());
    let r0 = problem.picard_residual(&zero, range)?;
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = vec![0.0; n];
        e[k] = 1.0;
        let rk = problem.picard_residual(&InterfaceVector::new(layout.clone(), e)?, range)?;
        let col = rk.sub(&r0)?;
        m.set_column(k, col.as_dvector());
    }
    Ok(m)
}

/// Iteration matrix `G = I + ω M` of constant relaxation.
pub fn relaxation_matrix(m: &DMatrix<f64>, omega: f64) -> DMatrix<f64> {
    DMatrix::identity(m.nrows(), m.ncols()) + m * omega
}

/// Largest eigenvalue modulus. nalgebra's complex Schur iteration can
/// stall on these matrices, so the eigenvalues come from faer.
pub fn spectral_radius(g: &DMatrix<f64>) -> f64 {
    let m = faer::Mat::<f64>::from_fn(g.nrows(), g.ncols(), |i, j| g[(i, j)]);
    m.eigenvalues()
        .expect("eigenvalues of a finite matrix")
        .iter()
        .map(|z| z.re.hypot(z.im))
        .fold(0.0, f64::max)
}

/// Rigid interface motions (two translations and the in-plane rotation
/// about the centroid) as columns over the interface layout.
pub fn rigid_modes(layout: &InterfaceLayout) -> DMatrix<f64> {
    let n = layout.len();
    let coords = layout.coords();
    let c = coords
        .iter()
        .fold([0.0, 0.0], |a, x| [a[0] + x[0], a[1] + x[1]]);
    let c = [c[0] / n as f64, c[1] / n as f64];
    DMatrix::from_fn(n, 3, |k, j| {
        let comp = layout.dofs()[k] % 2;
        let x = coords[k];
        match (j, comp) {
            (0, 0) | (1, 1) => 1.0,
            (2, 0) => -(x[1] - c[1]),
            (2, 1) => x[0] - c[0],
            _ => 0.0,
        }
    })
}

/// Spectral radius of `G` on the complement of the rigid modes. Interface
/// residuals carry no net force or moment, so constant relaxation never
/// excites the rigid directions and contracts at this rate.
pub fn equilibrated_spectral_radius(g: &DMatrix<f64>, layout: &InterfaceLayout) -> f64 {
    let r = rigid_modes(layout);
    let q = r.qr().q();
    let p = DMatrix::identity(g.nrows(), g.ncols()) - &q * q.transpose();
    spectral_radius(&(&p * g * &p))
}

/// Power-iteration estimate of the spectral radius: geometric mean growth
/// over the last `window` of `iterations` applications, from a fixed
/// start vector.
pub fn power_iteration(g: &DMatrix<f64>, iterations: usize, window: usize) -> f64 {
    let n = g.nrows();
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    x /= x.norm();
    let mut logs = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let y = g * &x;
        let s = y.norm();
        if s == 0.0 {
            return 0.0;
        }
        logs.push(s.ln());
        x = y / s;
    }
    let w = window.min(logs.len()).max(1);
    (logs[logs.len() - w..].iter().sum::<f64>() / w as f64).exp()
}
