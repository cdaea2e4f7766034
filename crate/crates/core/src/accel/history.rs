use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// One secant pair: `w = Δp̃`, `v = Δr`, tagged with the increment that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SecantColumn {
    pub w: DVector<f64>,
    pub v: DVector<f64>,
    pub increment: usize,
}

/// Thin QR factorization of the retained `V` columns, taken newest first.
/// `w` and `v` hold the matching columns in the same order.
#[derive(Debug, Clone)]
pub struct FilteredQr {
    pub q: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl FilteredQr {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// `Z x = U^{-1} Q^T x`, the least-squares coefficients of `x` on `V`.
    pub fn z_apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = self.q.tr_mul(x);
        back_substitute(&self.u, &mut y);
        y
    }

    /// `Z^T = Q U^{-T}` as an `n x k` matrix.
    pub fn z_transpose(&self) -> DMatrix<f64> {
        let k = self.rank();
        let mut uinv = DMatrix::<f64>::identity(k, k);
        for c in 0..k {
            let mut col = uinv.column(c).into_owned();
            back_substitute(&self.u, &mut col);
            uinv.set_column(c, &col);
        }
        &self.q * uinv.transpose()
    }
}

/// Solves `U x = b` in place for upper-triangular `U`.
fn back_substitute(u: &DMatrix<f64>, b: &mut DVector<f64>) {
    let k = u.ncols();
    for i in (0..k).rev() {
        let mut s = b[i];
        for j in i + 1..k {
            s -= u[(i, j)] * b[j];
        }
        b[i] = s / u[(i, i)];
    }
}

/// Input/output secant datasets `W` and `V`, oldest column first.
#[derive(Debug, Clone)]
pub struct SecantHistory {
    columns: VecDeque<SecantColumn>,
    max_columns: usize,
    drop_tolerance: f64,
}

impl SecantHistory {
    pub fn new(max_columns: usize, drop_tolerance: f64) -> Self {
        Self {
            columns: VecDeque::new(),
            max_columns,
            drop_tolerance,
        }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn max_columns(&self) -> usize {
        self.max_columns
    }

    pub fn drop_tolerance(&self) -> f64 {
        self.drop_tolerance
    }

    pub fn columns(&self) -> impl Iterator<Item = &SecantColumn> {
        self.columns.iter()
    }

    pub fn clear(&mut self) {
        self.columns.clear();
    }

    /// Appends a pair, discarding the oldest once `max_columns` is exceeded.
    pub fn push(&mut self, w: DVector<f64>, v: DVector<f64>, increment: usize) {
        debug_assert_eq!(w.len(), v.len());
        self.columns.push_back(SecantColumn { w, v, increment });
        while self.columns.len() > self.max_columns {
            self.columns.pop_front();
        }
    }

    /// Keeps only columns produced at or after increment `first`.
    pub fn retain_from(&mut self, first: usize) {
        self.columns.retain(|c| c.increment >= first);
    }

    pub fn remove_increment(&mut self, increment: usize) {
        self.columns.retain(|c| c.increment != increment);
    }

    /// QR of `V` by modified Gram-Schmidt with one reorthogonalization pass,
    /// processing the newest column first. Columns whose diagonal falls below
    /// `drop_tolerance` times the largest diagonal are removed from the
    /// history for good and the factorization is redone. `None` when nothing
    /// survives.
    pub fn filter(&mut self) -> Option<FilteredQr> {
        loop {
            if self.columns.is_empty() {
                return None;
            }
            let order: Vec<usize> = (0..self.columns.len()).rev().collect();
            let n = self.columns[0].v.len();
            let k = order.len();
            let mut q = DMatrix::<f64>::zeros(n, k);
            let mut u = DMatrix::<f64>::zeros(k, k);
            for (c, &idx) in order.iter().enumerate() {
                let mut x = self.columns[idx].v.clone();
                for _ in 0..2 {
                    for i in 0..c {
                        let qi = q.column(i);
                        let proj = qi.dot(&x);
                        u[(i, c)] += proj;
                        x.axpy(-proj, &qi, 1.0);
                    }
                }
                let d = x.norm();
                u[(c, c)] = d;
                if d > 0.0 {
                    q.set_column(c, &(x / d));
                }
            }
            let largest = (0..k).fold(0.0f64, |m, i| m.max(u[(i, i)]));
            let weak = (0..k).find(|&i| !(u[(i, i)] > self.drop_tolerance * largest));
            match weak {
                Some(c) => {
                    self.columns.remove(order[c]);
                }
                None => {
                    let w = DMatrix::from_columns(
                        &order
                            .iter()
                            .map(|&i| self.columns[i].w.clone())
                            .collect::<Vec<_>>(),
                    );
                    let v = DMatrix::from_columns(
                        &order
                            .iter()
                            .map(|&i| self.columns[i].v.clone())
                            .collect::<Vec<_>>(),
                    );
                    return Some(FilteredQr { q, u, w, v });
                }
            }
        }
    }
}
