//! Bilinear quadrilateral with 2x2 Gauss quadrature.

use nalgebra::{Matrix2, SMatrix};

pub const GAUSS_POINTS: usize = 4;

const G: f64 = 0.577_350_269_189_625_8; // 1/sqrt(3)
const GAUSS: [(f64, f64); GAUSS_POINTS] = [(-G, -G), (G, -G), (G, G), (-G, G)];
const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

pub type BMatrix = SMatrix<f64, 3, 8>;

/// Strain-displacement operator and integration weight (`det J * w * t`)
/// at one Gauss point.
#[derive(Debug, Clone, Copy)]
pub struct GaussPoint {
    pub b: BMatrix,
    pub weight: f64,
}

pub fn shape_functions(xi: f64, eta: f64) -> [f64; 4] {
    let mut n = [0.0; 4];
    for (a, &(xa, ya)) in CORNERS.iter().enumerate() {
        n[a] = 0.25 * (1.0 + xa * xi) * (1.0 + ya * eta);
    }
    n
}

fn shape_derivatives(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    let mut d = [[0.0; 2]; 4];
    for (a, &(xa, ya)) in CORNERS.iter().enumerate() {
        d[a][0] = 0.25 * xa * (1.0 + ya * eta);
        d[a][1] = 0.25 * ya * (1.0 + xa * xi);
    }
    d
}

/// Jacobian determinant at each Gauss point.
pub fn jacobian_determinants(coords: &[[f64; 2]; 4]) -> [f64; GAUSS_POINTS] {
    let mut out = [0.0; GAUSS_POINTS];
    for (q, &(xi, eta)) in GAUSS.iter().enumerate() {
        out[q] = jacobian(coords, xi, eta).determinant();
    }
    out
}

fn jacobian(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> Matrix2<f64> {
    let d = shape_derivatives(xi, eta);
    let mut j = Matrix2::zeros();
    for a in 0..4 {
        for r in 0..2 {
            for c in 0..2 {
                // J[r][c] = d x_c / d xi_r
                j[(r, c)] += d[a][r] * coords[a][c];
            }
        }
    }
    j
}

pub fn gauss_points(coords: &[[f64; 2]; 4], thickness: f64) -> [GaussPoint; GAUSS_POINTS] {
    let mut out = [GaussPoint {
        b: BMatrix::zeros(),
        weight: 0.0,
    }; GAUSS_POINTS];
    for (q, &(xi, eta)) in GAUSS.iter().enumerate() {
        let j = jacobian(coords, xi, eta);
        let det = j.determinant();
        let inv = j.try_inverse().unwrap_or_else(Matrix2::zeros);
        let d = shape_derivatives(xi, eta);
        let mut b = BMatrix::zeros();
        for a in 0..4 {
            let dx = inv[(0, 0)] * d[a][0] + inv[(0, 1)] * d[a][1];
            let dy = inv[(1, 0)] * d[a][0] + inv[(1, 1)] * d[a][1];
            b[(0, 2 * a)] = dx;
            b[(1, 2 * a + 1)] = dy;
            b[(2, 2 * a)] = dy;
            b[(2, 2 * a + 1)] = dx;
        }
        out[q] = GaussPoint {
            b,
            weight: det * thickness,
        };
    }
    out
}
