//! Compressed-row symmetric storage for assembled tangents and a profile
//! (skyline) Cholesky factorization for the reduced systems.

use std::collections::VecDeque;

use super::FemError;

/// Square sparse matrix in compressed-row form. Both triangles are stored so
/// that symmetry can be checked after assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Zero matrix whose pattern couples every pair of DOFs sharing an element.
    pub fn from_element_dofs<'a>(
        n: usize,
        element_dofs: impl Iterator<Item = &'a [usize]>,
    ) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for dofs in element_dofs {
            for &i in dofs {
                adj[i].extend_from_slice(dofs);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for (i, row) in adj.iter_mut().enumerate() {
            row.push(i);
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let values = vec![0.0; cols.len()];
        Self {
            n,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    /// Adds `v` at `(i, j)`; the entry must belong to the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.values[k]))
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|K_ij - K_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric adjacency structure.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    while order.len() < n {
        // lowest-degree unvisited node starts the next component
        let start = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node");
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&w| !visited[w])
                .collect();
            next.sort_unstable_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// Lower-triangular profile storage: row `i` holds columns `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct Skyline {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    values: Vec<f64>,
    factored: bool,
}

impl Skyline {
    /// Empty profile from the (already permuted) lower-triangle pattern.
    pub fn with_profile(first: Vec<usize>) -> Self {
        let n = first.len();
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            let last = *start.last().expect("non-empty");
            start.push(last + (i - f + 1));
        }
        let len = *start.last().expect("non-empty");
        Self {
            n,
            first,
            start,
            values: vec![0.0; len],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn profile_len(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    /// Adds to the lower-triangle entry `(i, j)`, `i >= j`.
    #[inline]
    pub fn add_lower(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i >= j && j >= self.first[i]);
        let k = self.start[i] + (j - self.first[i]);
        self.values[k] += v;
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.start[i] + (j - self.first[i])]
    }

    /// In-place `L L^T` factorization. A pivot below `1e-13` times the
    /// original diagonal signals a singular (or indefinite) system.
    pub fn factor(&mut self) -> Result<(), FemError> {
        for i in 0..self.n {
            let fi = self.first[i];
            let diag_orig = self.at(i, i);
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = self.at(i, j);
                let ri = self.start[i] - fi;
                let rj = self.start[j] - fj;
                for k in k0..j {
                    s -= self.values[ri + k] * self.values[rj + k];
                }
                if j < i {
                    let d = self.values[self.start[j] + (j - fj)];
                    self.values[ri + j] = s / d;
                } else {
                    if !(s > 1e-13 * diag_orig.abs()) || !s.is_finite() {
                        return Err(FemError::Singular { pivot: i });
                    }
                    self.values[ri + i] = s.sqrt();
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve before factor");
        // forward: L y = b
        for i in 0..self.n {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            let mut s = b[i];
            for k in fi..i {
                s -= self.values[ri + k] * b[k];
            }
            b[i] = s / self.values[ri + i];
        }
        // backward: L^T x = y
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let ri = self.start[i] - fi;
            b[i] /= self.values[ri + i];
            let xi = b[i];
            for k in fi..i {
                b[k] -= self.values[ri + k] * xi;
            }
        }
    }
}
