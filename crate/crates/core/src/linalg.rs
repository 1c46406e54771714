//! Dense 6x6 LU factorization with partial pivoting.

pub type Mat6 = [[f64; 6]; 6];

#[derive(Debug, Clone)]
pub struct Lu6 {
    lu: Mat6,
    perm: [usize; 6],
}

impl Lu6 {
    /// Factors `a`; `None` when a pivot vanishes.
    pub fn factor(a: &Mat6) -> Option<Self> {
        let mut lu = *a;
        let mut perm = [0, 1, 2, 3, 4, 5];
        for col in 0..6 {
            // Ties keep the earliest row.
            let mut pivot = col;
            for row in col + 1..6 {
                if lu[row][col].abs() > lu[pivot][col].abs() {
                    pivot = row;
                }
            }
            if lu[pivot][col] == 0.0 || !lu[pivot][col].is_finite() {
                return None;
            }
            lu.swap(col, pivot);
            perm.swap(col, pivot);
            for row in col + 1..6 {
                let f = lu[row][col] / lu[col][col];
                lu[row][col] = f;
                for k in col + 1..6 {
                    lu[row][k] -= f * lu[col][k];
                }
            }
        }
        Some(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64; 6]) -> [f64; 6] {
        let mut x = [0.0; 6];
        for i in 0..6 {
            x[i] = b[self.perm[i]];
        }
        for i in 0..6 {
            for k in 0..i {
                x[i] -= self.lu[i][k] * x[k];
            }
        }
        for i in (0..6).rev() {
            for k in i + 1..6 {
                x[i] -= self.lu[i][k] * x[k];
            }
            x[i] /= self.lu[i][i];
        }
        x
    }

    pub fn inverse(&self) -> Mat6 {
        let mut inv = [[0.0; 6]; 6];
        for j in 0..6 {
            let mut e = [0.0; 6];
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..6 {
                inv[i][j] = col[i];
            }
        }
        inv
    }
}

fn norm1(a: &Mat6) -> f64 {
    (0..6).map(|j| (0..6).map(|i| a[i][j].abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// 1-norm condition number; infinite for singular matrices.
pub fn condition_number(a: &Mat6) -> f64 {
    match Lu6::factor(a) {
        Some(lu) => norm1(a) * norm1(&lu.inverse()),
        None => f64::INFINITY,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_permuted_system() {
        let mut a = [[0.0; 6]; 6];
        for i in 0..6 {
            a[i][(i + 2) % 6] = (i + 1) as f64;
        }
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let x = Lu6::factor(&a).unwrap().solve(&b);
        for i in 0..6 {
            let r: f64 = (0..6).map(|j| a[i][j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_is_rejected() {
        let a = [[1.0; 6]; 6];
        assert!(Lu6::factor(&a).is_none());
        assert!(condition_number(&a).is_infinite());
    }
}
