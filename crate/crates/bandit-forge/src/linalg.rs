//! Dense row-major matrices and an LU solver with partial pivoting.
//!
//! State spaces in this crate are small (a few hundred states per chain,
//! a few thousand multi-states in the oracle), so everything is dense.

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from nested rows. Panics if the rows are ragged.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Mat {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// y = self · x
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, ready for repeated back-solves.
#[derive(Debug, Clone)]
pub struct LuFactors {
    lu: Mat,
    perm: Vec<usize>,
}

/// Factor a square matrix. Returns `None` when a pivot column is numerically
/// zero (singular matrix).
pub fn lu_factor(a: &Mat) -> Option<LuFactors> {
    assert_eq!(a.n_rows(), a.n_cols());
    let n = a.n_rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (pivot_row, pivot_abs) = (col..n)
            .map(|r| (r, lu[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pivot_abs < 1e-300 {
            return None;
        }
        if pivot_row != col {
            perm.swap(pivot_row, col);
            for j in 0..n {
                let tmp = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = lu[(col, j)];
                lu[(col, j)] = tmp;
            }
        }
        let pivot = lu[(col, col)];
        for r in col + 1..n {
            let factor = lu[(r, col)] / pivot;
            lu[(r, col)] = factor;
            for j in col + 1..n {
                lu[(r, j)] -= factor * lu[(col, j)];
            }
        }
    }
    Some(LuFactors { lu, perm })
}

impl LuFactors {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n_rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward: L y = Pb
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[(i, j)] * x[j];
            }
        }
        // backward: U x = y
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[(i, j)] * x[j];
            }
            x[i] /= self.lu[(i, i)];
        }
        x
    }
}

/// One-shot solve of `a x = b`. `None` when `a` is singular.
pub fn lu_solve(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    lu_factor(a).map(|f| f.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = Mat::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = lu_solve(&a, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let a = Mat::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let x = lu_solve(&a, &[3.0, 7.0]).unwrap();
        assert_eq!(x, vec![7.0, 3.0]);
    }

    #[test]
    fn singular_returns_none() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(lu_solve(&a, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn factor_reuse_matches_one_shot() {
        let a = Mat::from_rows(&[
            vec![4.0, -2.0, 1.0],
            vec![-2.0, 4.0, -2.0],
            vec![1.0, -2.0, 4.0],
        ]);
        let f = lu_factor(&a).unwrap();
        for b in [[1.0, 0.0, 0.0], [0.5, -1.0, 2.0]] {
            let x1 = f.solve(&b);
            let x2 = lu_solve(&a, &b).unwrap();
            assert_eq!(x1, x2);
            let r = a.mul_vec(&x1);
            for i in 0..3 {
                assert!((r[i] - b[i]).abs() < 1e-12);
            }
        }
    }
}
