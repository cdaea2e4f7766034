use nalgebra::{DMatrix, DVector};

/// `J = c I + L diag(σ) R^T`, with `L` and `R` orthonormal and `σ`
/// non-increasing. The identity part is never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankInverseJacobian {
    n: usize,
    base: f64,
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    sigma: Vec<f64>,
    max_rank: usize,
    truncation_tolerance: f64,
}

impl LowRankInverseJacobian {
    pub fn new(n: usize, base: f64, max_rank: usize, truncation_tolerance: f64) -> Self {
        Self {
            n,
            base,
            left: DMatrix::zeros(n, 0),
            right: DMatrix::zeros(n, 0),
            sigma: Vec::new(),
            max_rank,
            truncation_tolerance,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn left_factors(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right_factors(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x * self.base;
        if self.rank() > 0 {
            let mut t = self.right.tr_mul(x);
            for (ti, s) in t.iter_mut().zip(&self.sigma) {
                *ti *= s;
            }
            y += &self.left * t;
        }
        y
    }

    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.base;
        if self.rank() > 0 {
            let mut t = self.right.tr_mul(x);
            for (i, s) in self.sigma.iter().enumerate() {
                t.row_mut(i).scale_mut(*s);
            }
            y += &self.left * t;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.apply_matrix(&DMatrix::identity(self.n, self.n))
    }

    /// `J += a b^T`, then recompresses through thin QR of both factor blocks
    /// and an SVD of the small core, truncating to `max_rank` and to
    /// `σ_k ≥ truncation_tolerance σ_1`.
    pub fn add_low_rank(&mut self, a: &DMatrix<f64>, b: &DMatrix<f64>) {
        debug_assert_eq!(a.ncols(), b.ncols());
        if a.ncols() == 0 {
            return;
        }
        let k = self.rank();
        let m = k + a.ncols();
        let mut big_a = DMatrix::<f64>::zeros(self.n, m);
        let mut big_b = DMatrix::<f64>::zeros(self.n, m);
        for i in 0..k {
            big_a.set_column(i, &(self.left.column(i) * self.sigma[i]));
            big_b.set_column(i, &self.right.column(i));
        }
        big_a.columns_mut(k, a.ncols()).copy_from(a);
        big_b.columns_mut(k, b.ncols()).copy_from(b);

        let qa = big_a.qr();
        let qb = big_b.qr();
        let core = qa.r() * qb.r().transpose();
        let (u, sv, v) = svd(&core);
        let s1 = sv.first().copied().unwrap_or(0.0);
        let keep: Vec<usize> = (0..sv.len())
            .filter(|&i| sv[i] > 0.0 && sv[i] >= self.truncation_tolerance * s1)
            .take(self.max_rank)
            .collect();
        let ql = qa.q();
        let qr = qb.q();
        self.left =
            DMatrix::from_columns(&keep.iter().map(|&i| &ql * u.column(i)).collect::<Vec<_>>());
        self.right =
            DMatrix::from_columns(&keep.iter().map(|&i| &qr * v.column(i)).collect::<Vec<_>>());
        self.sigma = keep.iter().map(|&i| sv[i]).collect();
        if keep.is_empty() {
            self.left = DMatrix::zeros(self.n, 0);
            self.right = DMatrix::zeros(self.n, 0);
        }
    }
}

/// Singular values in non-increasing order with both factor sets. nalgebra's
/// SVD reconstructs only to about 1e-12 on well-conditioned cores, which
/// breaks the secant equations, so the small core goes through faer.
fn svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    let d = fm.thin_svd().expect("svd of a finite core");
    let k = r.min(c);
    let u = DMatrix::from_fn(r, k, |i, j| d.U()[(i, j)]);
    let v = DMatrix::from_fn(c, k, |i, j| d.V()[(i, j)]);
    let s = (0..k).map(|i| d.S()[i]).collect();
    (u, s, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_part_is_implicit() {
        let j = LowRankInverseJacobian::new(3, 0.9, 5, 1e-12);
        let x = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(j.apply(&x), &x * 0.9);
        assert_eq!(j.rank(), 0);
    }

    #[test]
    fn low_rank_update_matches_dense() {
        let mut j = LowRankInverseJacobian::new(4, 0.5, 10, 1e-12);
        let a = DMatrix::from_fn(4, 2, |i, k| (i + 2 * k) as f64 * 0.3 - 0.4);
        let b = DMatrix::from_fn(4, 2, |i, k| ((i * k) as f64).sin() + 0.1);
        let mut dense = DMatrix::identity(4, 4) * 0.5 + &a * b.transpose();
        j.add_low_rank(&a, &b);
        assert!((j.to_dense() - &dense).amax() < 1e-12);
        j.add_low_rank(&b, &a);
        dense += &b * a.transpose();
        assert!((j.to_dense() - &dense).amax() < 1e-12);
        assert!(j.singular_values().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn truncation_caps_rank() {
        let mut j = LowRankInverseJacobian::new(6, 0.0, 2, 1e-12);
        let a = DMatrix::from_fn(6, 4, |i, k| if i == k { (4 - k) as f64 } else { 0.0 });
        j.add_low_rank(&a, &DMatrix::identity(6, 4));
        assert_eq!(j.rank(), 2);
        assert_eq!(j.singular_values(), &[4.0, 3.0]);
    }
}
