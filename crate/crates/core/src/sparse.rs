//! Minimal compressed-sparse-row matrix for stochastic matrices.

use rayon::prelude::*;

/// Entries at or below this value are dropped on assembly and treated as
/// structural zeros everywhere else.
pub const ZERO_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row entry lists. Duplicate columns are summed, entries
    /// `<= ZERO_THRESHOLD` dropped and columns sorted.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n_rows = rows.len();
        let mut indptr = Vec::with_capacity(n_rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == col {
                    v += row[k].1;
                    k += 1;
                }
                debug_assert!(col < n_cols);
                if v > ZERO_THRESHOLD {
                    indices.push(col);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n_cols = rows.first().map_or(0, Vec::len);
        Self::from_rows(
            n_cols,
            rows.iter()
                .map(|r| r.iter().copied().enumerate().collect())
                .collect(),
        )
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |i| {
            let (c, v) = self.row(i);
            c.iter().zip(v).map(move |(&j, &x)| (i, j, x))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).1.iter().sum())
            .collect()
    }

    /// `max_i |Σ_j A[i][j] - 1|`.
    pub fn max_row_sum_deviation(&self) -> f64 {
        self.row_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.n_cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for (i, j, v) in self.iter() {
            let k = next[j];
            indices[k] = i;
            values[k] = v;
            next[j] += 1;
        }
        Self {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            indptr,
            indices,
            values,
        }
    }

    /// `A x` for a column vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        (0..self.n_rows)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    /// `f A` for a row vector `f` (densities act from the left).
    pub fn left_mul(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.n_rows);
        let mut out = vec![0.0; self.n_cols];
        for (i, &fi) in f.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += fi * a;
            }
        }
        out
    }

    /// Sparse product `A B`, assembled row by row in parallel.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let rows: Vec<Vec<(usize, f64)>> = (0..self.n_rows)
            .into_par_iter()
            .map(|i| {
                let (c, v) = self.row(i);
                let mut acc = Vec::new();
                for (&j, &a) in c.iter().zip(v) {
                    let (c2, v2) = other.row(j);
                    acc.extend(c2.iter().zip(v2).map(|(&k, &b)| (k, a * b)));
                }
                acc
            })
            .collect();
        CsrMatrix::from_rows(other.n_cols, rows)
    }

    /// Principal submatrix on `cells` (sorted), re-indexed to `0..cells.len()`.
    pub fn restrict(&self, cells: &[usize]) -> CsrMatrix {
        let mut pos = vec![usize::MAX; self.n_cols];
        for (k, &c) in cells.iter().enumerate() {
            pos[c] = k;
        }
        let rows = cells
            .iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                c.iter()
                    .zip(v)
                    .filter(|(j, _)| pos[**j] != usize::MAX)
                    .map(|(&j, &x)| (pos[j], x))
                    .collect()
            })
            .collect();
        CsrMatrix::from_rows(cells.len(), rows)
    }

    /// Support digraph as adjacency lists: `i -> j` iff `A[i][j] > ZERO_THRESHOLD`.
    pub fn support_graph(&self) -> Vec<Vec<usize>> {
        (0..self.n_rows)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter()
                    .zip(v)
                    .filter(|(_, x)| **x > ZERO_THRESHOLD)
                    .map(|(&j, _)| j)
                    .collect()
            })
            .collect()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.iter() {
            m[(i, j)] = v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_dense(&[
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.25, 0.0, 0.75],
        ])
    }

    #[test]
    fn duplicates_summed_and_zeros_dropped() {
        let m = CsrMatrix::from_rows(3, vec![vec![(2, 0.25), (0, 0.5), (2, 0.25), (1, 0.0)]]);
        assert_eq!(m.row(0), (&[0usize, 2][..], &[0.5, 0.5][..]));
    }

    #[test]
    fn left_and_right_products_agree_with_dense() {
        let m = sample();
        let d = m.to_dense();
        let f = [0.2, 0.3, 0.5];
        let fl = m.left_mul(&f);
        let fd = nalgebra::RowDVector::from_row_slice(&f) * &d;
        for j in 0..3 {
            assert!((fl[j] - fd[j]).abs() < 1e-15);
        }
        let x = m.mul_vec(&f);
        let xd = &d * nalgebra::DVector::from_row_slice(&f);
        for j in 0..3 {
            assert!((x[j] - xd[j]).abs() < 1e-15);
        }
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().left_mul(&f), x);
    }

    #[test]
    fn matmul_matches_dense() {
        let m = sample();
        let p = m.matmul(&m);
        let d = m.to_dense();
        let dd = &d * &d;
        for i in 0..3 {
            for j in 0..3 {
                assert!((p.get(i, j) - dd[(i, j)]).abs() < 1e-15);
            }
        }
        assert!(p.max_row_sum_deviation() < 1e-15);
    }

    #[test]
    fn restriction_reindexes() {
        let r = sample().restrict(&[0, 2]);
        assert_eq!(r.n_rows(), 2);
        assert_eq!(r.get(0, 0), 0.5);
        assert_eq!(r.get(1, 1), 0.75);
        assert_eq!(r.get(1, 0), 0.25);
    }
}
