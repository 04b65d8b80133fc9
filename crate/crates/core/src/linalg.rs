//! Dense LU factorization with partial pivoting.
//!
//! Kept in-crate because the adjoint gradient needs solves with both `A` and
//! `Aᵀ` against one factorization.

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `‖A x − b‖∞`
    pub fn residual_norm(&self, x: &[f64], b: &[f64]) -> f64 {
        self.mul_vec(x)
            .iter()
            .zip(b)
            .map(|(ax, bi)| (ax - bi).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
pub struct Singular {
    pub column: usize,
    pub pivot: f64,
}

/// `P A = L U` with unit lower-triangular `L`, both packed in one matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    /// `perm[i]` is the original row placed at position `i`.
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(mut a: DenseMatrix) -> Result<Self, Singular> {
        let n = a.n;
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.data.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, a[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= f64::EPSILON * scale * n as f64 {
                return Err(Singular { column: k, pivot });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
            }
            let (head, tail) = a.data.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..];
            let d = pivot_row[k];
            for row in tail.chunks_exact_mut(n) {
                let f = row[k] / d;
                if f == 0.0 {
                    continue;
                }
                row[k] = f;
                for (x, &u) in row[k + 1..].iter_mut().zip(&pivot_row[k + 1..]) {
                    *x -= f * u;
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            let s: f64 = row[..i].iter().zip(&x[..i]).map(|(l, y)| l * y).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s: f64 = row[i + 1..].iter().zip(&x[i + 1..]).map(|(u, y)| u * y).sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.n;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ z = b, Lᵀ w = z, x = Pᵀ w.
        let mut z = b.to_vec();
        for i in 0..n {
            z[i] /= self.lu[(i, i)];
            let zi = z[i];
            if zi != 0.0 {
                let row = self.lu.row(i);
                for (zj, &u) in z[i + 1..].iter_mut().zip(&row[i + 1..]) {
                    *zj -= u * zi;
                }
            }
        }
        for i in (0..n).rev() {
            let zi = z[i];
            if zi != 0.0 {
                let row = self.lu.row(i);
                for (zj, &l) in z[..i].iter_mut().zip(&row[..i]) {
                    *zj -= l * zi;
                }
            }
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = z[i];
        }
        x
    }
}

/// Solution of `A x = b` after one step of iterative refinement, together
/// with the final residual `‖A x − b‖∞`.
pub fn solve_refined(a: &DenseMatrix, lu: &Lu, b: &[f64]) -> (Vec<f64>, f64) {
    let mut x = lu.solve(b);
    let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ax)| bi - ax).collect();
    let dx = lu.solve(&r);
    x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    let res = a.residual_norm(&x, b);
    (x, res)
}

/// Transposed counterpart of [`solve_refined`].
pub fn solve_transposed_refined(a: &DenseMatrix, lu: &Lu, b: &[f64]) -> (Vec<f64>, f64) {
    let at_mul = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; a.n];
        for i in 0..a.n {
            let xi = x[i];
            for (o, &aij) in out.iter_mut().zip(a.row(i)) {
                *o += aij * xi;
            }
        }
        out
    };
    let mut x = lu.solve_transposed(b);
    let r: Vec<f64> = b.iter().zip(at_mul(&x)).map(|(bi, ax)| bi - ax).collect();
    let dx = lu.solve_transposed(&r);
    x.iter_mut().zip(dx).for_each(|(xi, d)| *xi += d);
    let res = at_mul(&x)
        .iter()
        .zip(b)
        .map(|(ax, bi)| (ax - bi).abs())
        .fold(0.0, f64::max);
    (x, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_rows(rows: &[&[f64]]) -> DenseMatrix {
        let n = rows.len();
        let mut m = DenseMatrix::zeros(n);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    #[test]
    fn needs_pivoting() {
        let a = from_rows(&[&[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0], &[3.0, 0.0, 1.0]]);
        let lu = Lu::factor(a.clone()).unwrap();
        let x = lu.solve(&[5.0, 3.0, 6.0]);
        assert!(a.residual_norm(&x, &[5.0, 3.0, 6.0]) < 1e-14);
        let y = lu.solve_transposed(&[1.0, -2.0, 0.5]);
        let mut at = DenseMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                at[(i, j)] = a[(j, i)];
            }
        }
        assert!(at.residual_norm(&y, &[1.0, -2.0, 0.5]) < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a = from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(Lu::factor(a).is_err());
    }

    proptest! {
        #[test]
        fn random_diagonally_dominant(n in 1usize..12, entries in prop::collection::vec(-1.0f64..1.0, 144), rhs in prop::collection::vec(-10.0f64..10.0, 12)) {
            let mut a = DenseMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = entries[i * 12 + j];
                }
                a[(i, i)] += n as f64;
            }
            let lu = Lu::factor(a.clone()).unwrap();
            let (x, res) = solve_refined(&a, &lu, &rhs[..n]);
            prop_assert!(res < 1e-12);
            prop_assert!(a.residual_norm(&x, &rhs[..n]) < 1e-12);
            let (_, tres) = solve_transposed_refined(&a, &lu, &rhs[..n]);
            prop_assert!(tres < 1e-12);
        }
    }
}
