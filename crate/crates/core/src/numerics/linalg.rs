use super::matrix::{norm_inf, SmallMatrix};
use crate::error::{Error, Result};

const PIVOT_FLOOR: f64 = 1e-12;

/// LU factorisation with partial pivoting, `P A = L U`.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: SmallMatrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn factor(a: &SmallMatrix) -> Result<Self> {
        let n = a.dim();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let floor = PIVOT_FLOOR * a.max_abs().max(1.0);
        for col in 0..n {
            let (p, pmag) = (col..n)
                .map(|r| (r, lu[(r, col)].abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pmag > floor) {
                return Err(Error::SingularMatrix {
                    column: col,
                    pivot: pmag,
                });
            }
            if p != col {
                perm.swap(p, col);
                sign = -sign;
                let data = lu.as_mut_slice();
                for j in 0..n {
                    data.swap(p * n + j, col * n + j);
                }
            }
            let pivot = lu[(col, col)];
            for r in col + 1..n {
                let factor = lu[(r, col)] / pivot;
                lu[(r, col)] = factor;
                if factor == 0.0 {
                    continue;
                }
                for j in col + 1..n {
                    let v = lu[(col, j)];
                    lu[(r, j)] -= factor * v;
                }
            }
        }
        Ok(Self { lu, perm, sign })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.dim();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    pub fn determinant(&self) -> f64 {
        (0..self.lu.dim())
            .map(|i| self.lu[(i, i)])
            .product::<f64>()
            * self.sign
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_linear(a: &SmallMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            got: b.len(),
        });
    }
    let lu = Lu::factor(a)?;
    let mut x = lu.solve(b);
    // one step of iterative refinement
    let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(ax, bi)| bi - ax).collect();
    if norm_inf(&r) > 0.0 {
        let dx = lu.solve(&r);
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
    }
    Ok(x)
}

/// Determinant via LU; returns 0 for matrices the factorisation rejects as singular.
pub fn determinant(a: &SmallMatrix) -> f64 {
    match Lu::factor(a) {
        Ok(lu) => lu.determinant(),
        Err(_) => 0.0,
    }
}

pub fn inverse(a: &SmallMatrix) -> Result<SmallMatrix> {
    let n = a.dim();
    let lu = Lu::factor(a)?;
    let mut inv = SmallMatrix::zeros(n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = lu.solve(&e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_solve_returns_rhs() {
        let x = solve_linear(&SmallMatrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn upper_triangular_back_substitution() {
        // C(N=2, k=0)
        let a = SmallMatrix::from_rows(&[vec![-1.0, 1.0], vec![0.0, -1.0]]);
        let s1 = 1f64.sin();
        let x = solve_linear(&a, &[0.0, s1]).unwrap();
        assert!((x[0] + s1).abs() < 1e-15);
        assert!((x[1] + s1).abs() < 1e-15);
    }

    #[test]
    fn coupling_matrix_k2_multiply_back() {
        let a = SmallMatrix::from_rows(&[vec![-3.0, 1.0], vec![2.0, -3.0]]);
        let b = [0.3, -1.7];
        let x = solve_linear(&a, &b).unwrap();
        let r = a.mul_vec(&x);
        assert!((r[0] - b[0]).abs() < 1e-14 && (r[1] - b[1]).abs() < 1e-14);
        assert!((determinant(&a) - 7.0).abs() < 1e-13);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = SmallMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            solve_linear(&a, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    fn well_conditioned() -> impl Strategy<Value = (SmallMatrix, Vec<f64>)> {
        (1usize..=16).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1.0f64..1.0, n * n),
                proptest::collection::vec(-10.0f64..10.0, n),
            )
                .prop_map(move |(mut data, b)| {
                    // diagonal dominance keeps the condition number bounded
                    for i in 0..n {
                        data[i * n + i] += if data[i * n + i] >= 0.0 { n as f64 } else { -(n as f64) };
                    }
                    (SmallMatrix::from_row_major(n, data), b)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn residual_bound_on_random_systems((a, b) in well_conditioned()) {
            let x = solve_linear(&a, &b).unwrap();
            let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(ax, bi)| ax - bi).collect();
            prop_assert!(norm_inf(&r) <= 1e-10 * (1.0 + norm_inf(&b)));
        }
    }
}
