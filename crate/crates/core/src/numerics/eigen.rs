//! Eigenvalues of small dense real matrices.
//!
//! Balancing, Householder reduction to upper Hessenberg form and the
//! Francis double-shift QR iteration (after the EISPACK `balanc`/`orthes`/`hqr`
//! routines). Eigenvectors for real eigenvalues come from inverse iteration.

use super::linalg::Lu;
use super::matrix::{norm2, SmallMatrix};
use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub const MAX_EIGEN_DIM: usize = 512;
const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

/// Multiset of eigenvalues; complex values of real input come in conjugate pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(eigenvalues: Vec<Complex64>) -> Self {
        Self { eigenvalues }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self {
            eigenvalues: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.eigenvalues.iter()
    }

    /// Sorted by descending real part, then descending imaginary part.
    pub fn sorted(&self) -> Vec<Complex64> {
        let mut v = self.eigenvalues.clone();
        v.sort_by(|a, b| {
            b.re.partial_cmp(&a.re)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
        });
        v
    }

    pub fn min_abs_real_part(&self) -> f64 {
        self.eigenvalues
            .iter()
            .map(|z| z.re.abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the eigenvalue closest to `target`.
    pub fn closest_to(&self, target: Complex64) -> Option<usize> {
        self.eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - target)
                    .norm()
                    .partial_cmp(&(b.1 - target).norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
    }

    /// Greedy multiset distance: max over matched pairs of |a - b|.
    pub fn matching_distance(&self, other: &Spectrum) -> f64 {
        if self.len() != other.len() {
            return f64::INFINITY;
        }
        let mut pool = other.eigenvalues.clone();
        let mut worst: f64 = 0.0;
        for z in self.sorted() {
            let (idx, d) = pool
                .iter()
                .enumerate()
                .map(|(i, w)| (i, (z - w).norm()))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
            worst = worst.max(d);
            pool.swap_remove(idx);
        }
        worst
    }
}

/// Computes all eigenvalues of `a`.
pub fn eigenvalues(a: &SmallMatrix) -> Result<Spectrum> {
    let n = a.dim();
    if n > MAX_EIGEN_DIM {
        return Err(Error::InvalidInput(format!(
            "eigenvalue solver supports n <= {MAX_EIGEN_DIM}, got {n}"
        )));
    }
    if !a.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Spectrum::new(Vec::new()));
    }
    if n == 1 {
        return Ok(Spectrum::from_real(&[a[(0, 0)]]));
    }
    let mut h = a.as_slice().to_vec();
    balance(&mut h, n);
    hessenberg(&mut h, n);
    let (wr, wi) = hqr(&mut h, n)?;
    let mut values: Vec<Complex64> = wr
        .iter()
        .zip(&wi)
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    enforce_conjugate_pairs(&mut values);
    Ok(Spectrum::new(values))
}

fn enforce_conjugate_pairs(values: &mut [Complex64]) {
    // hqr stores complex pairs adjacently as (re, +im), (re, -im)
    let mut i = 0;
    while i < values.len() {
        if values[i].im != 0.0 && i + 1 < values.len() {
            let re = 0.5 * (values[i].re + values[i + 1].re);
            let im = 0.5 * (values[i].im.abs() + values[i + 1].im.abs());
            values[i] = Complex64::new(re, im);
            values[i + 1] = Complex64::new(re, -im);
            i += 2;
        } else {
            i += 1;
        }
    }
}

/// Diagonal similarity scaling by powers of two so rows and columns have comparable norms.
fn balance(h: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += h[j * n + i].abs();
                    r += h[i * n + j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        h[i * n + j] *= g;
                    }
                    for j in 0..n {
                        h[j * n + i] *= f;
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form, in place.
fn hessenberg(h: &mut [f64], n: usize) {
    let mut ort = vec![0.0; n];
    if n < 3 {
        return;
    }
    let high = n - 1;
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[i * n + m - 1].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[i * n + m - 1] / scale;
            hh += ort[i] * ort[i];
        }
        let g = if ort[m] > 0.0 { -hh.sqrt() } else { hh.sqrt() };
        hh -= ort[m] * g;
        ort[m] -= g;
        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h[i * n + j];
            }
            f /= hh;
            for i in m..=high {
                h[i * n + j] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h[i * n + j];
            }
            f /= hh;
            for j in m..=high {
                h[i * n + j] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[m * n + m - 1] = scale * g;
        for i in m + 1..=high {
            h[i * n + m - 1] = 0.0;
        }
    }
}

/// Shifted double-step QR on an upper Hessenberg matrix; returns (real parts, imaginary parts).
#[allow(clippy::many_single_char_names, unused_assignments)]
fn hqr(hm: &mut [f64], nn: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let idx = |i: isize, j: isize| (i as usize) * nn + (j as usize);
    let mut wr = vec![0.0; nn];
    let mut wi = vec![0.0; nn];
    let eps = f64::EPSILON;
    let mut exshift = 0.0;
    let (mut p, mut q, mut r, mut s, mut z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut w, mut x, mut y);

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += hm[i * nn + j].abs();
        }
    }

    let mut n = nn as isize - 1;
    let low: isize = 0;
    let mut iter = 0usize;
    let mut total_iter = 0usize;
    let cap = MAX_SWEEPS_PER_EIGENVALUE * nn.max(1);
    while n >= low {
        let mut l = n;
        while l > low {
            s = hm[idx(l - 1, l - 1)].abs() + hm[idx(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if hm[idx(l, l - 1)].abs() < eps * s {
                break;
            }
            l -= 1;
        }
        if l == n {
            hm[idx(n, n)] += exshift;
            wr[n as usize] = hm[idx(n, n)];
            wi[n as usize] = 0.0;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            w = hm[idx(n, n - 1)] * hm[idx(n - 1, n)];
            p = (hm[idx(n - 1, n - 1)] - hm[idx(n, n)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            hm[idx(n, n)] += exshift;
            hm[idx(n - 1, n - 1)] += exshift;
            x = hm[idx(n, n)];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                wr[(n - 1) as usize] = x + z;
                wr[n as usize] = if z != 0.0 { x - w / z } else { x + z };
                wi[(n - 1) as usize] = 0.0;
                wi[n as usize] = 0.0;
            } else {
                wr[(n - 1) as usize] = x + p;
                wr[n as usize] = x + p;
                wi[(n - 1) as usize] = z;
                wi[n as usize] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = hm[idx(n, n)];
            y = 0.0;
            w = 0.0;
            if l < n {
                y = hm[idx(n - 1, n - 1)];
                w = hm[idx(n, n - 1)] * hm[idx(n - 1, n)];
            }
            if iter == 10 {
                exshift += x;
                for i in low..=n {
                    hm[idx(i, i)] -= x;
                }
                s = hm[idx(n, n - 1)].abs() + hm[idx(n - 1, n - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in low..=n {
                        hm[idx(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total_iter += 1;
            if total_iter > cap {
                return Err(Error::NoConvergence {
                    iterations: total_iter,
                    residual: hm[idx(n, n - 1)].abs(),
                });
            }

            let mut m = n - 2;
            while m >= l {
                z = hm[idx(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / hm[idx(m + 1, m)] + hm[idx(m, m + 1)];
                q = hm[idx(m + 1, m + 1)] - z - r - s;
                r = hm[idx(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if hm[idx(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps
                        * (p.abs()
                            * (hm[idx(m - 1, m - 1)].abs() + z.abs() + hm[idx(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=n {
                hm[idx(i, i - 2)] = 0.0;
                if i > m + 2 {
                    hm[idx(i, i - 3)] = 0.0;
                }
            }

            let mut k = m;
            while k <= n - 1 {
                let notlast = k != n - 1;
                if k != m {
                    p = hm[idx(k, k - 1)];
                    q = hm[idx(k + 1, k - 1)];
                    r = if notlast { hm[idx(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        hm[idx(k, k - 1)] = -s * x;
                    } else if l != m {
                        hm[idx(k, k - 1)] = -hm[idx(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..nn as isize {
                        p = hm[idx(k, j)] + q * hm[idx(k + 1, j)];
                        if notlast {
                            p += r * hm[idx(k + 2, j)];
                            hm[idx(k + 2, j)] -= p * z;
                        }
                        hm[idx(k, j)] -= p * x;
                        hm[idx(k + 1, j)] -= p * y;
                    }
                    let upper = n.min(k + 3);
                    for i in 0..=upper {
                        p = x * hm[idx(i, k)] + y * hm[idx(i, k + 1)];
                        if notlast {
                            p += z * hm[idx(i, k + 2)];
                            hm[idx(i, k + 2)] -= p * r;
                        }
                        hm[idx(i, k)] -= p;
                        hm[idx(i, k + 1)] -= p * q;
                    }
                }
                k += 1;
            }
        }
    }
    Ok((wr, wi))
}

/// Unit eigenvector for a real eigenvalue by inverse iteration.
pub fn real_eigenvector(a: &SmallMatrix, lambda: f64) -> Result<Vec<f64>> {
    let n = a.dim();
    let scale = a.max_abs().max(1.0);
    let mut shift = lambda + 1e-10 * scale;
    let mut lu = None;
    for _ in 0..8 {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] -= shift;
        }
        if let Ok(f) = Lu::factor(&m) {
            lu = Some(f);
            break;
        }
        shift += 1e-9 * scale;
    }
    let lu = lu.ok_or(Error::SingularMatrix {
        column: 0,
        pivot: 0.0,
    })?;
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    for _ in 0..6 {
        let w = lu.solve(&v);
        let nrm = norm2(&w);
        if !nrm.is_finite() || nrm == 0.0 {
            return Err(Error::NoConvergence {
                iterations: 0,
                residual: f64::NAN,
            });
        }
        v = w.into_iter().map(|x| x / nrm).collect();
    }
    // fix sign: largest component positive
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, 0.0), |b, (i, &x)| if x.abs() > b.1 { (i, x.abs()) } else { b });
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

/// Smallest singular value of `A - lambda I` (complex shift), via the
/// eigenvalues of the Hermitian product embedded as a real 2n x 2n symmetric matrix.
pub fn smallest_singular_value_shifted(a: &SmallMatrix, lambda: Complex64) -> f64 {
    let n = a.dim();
    // B = A - lambda I as complex; real embedding [[Br, -Bi],[Bi, Br]] has the
    // singular values of B, each doubled.
    let m = 2 * n;
    let mut emb = SmallMatrix::zeros(m);
    for i in 0..n {
        for j in 0..n {
            let br = a[(i, j)] - if i == j { lambda.re } else { 0.0 };
            let bi = if i == j { -lambda.im } else { 0.0 };
            emb[(i, j)] = br;
            emb[(i + n, j + n)] = br;
            emb[(i, j + n)] = -bi;
            emb[(i + n, j)] = bi;
        }
    }
    one_sided_jacobi_min_singular_value(&emb)
}

/// Smallest singular value by one-sided (Hestenes) Jacobi orthogonalisation of the columns.
fn one_sided_jacobi_min_singular_value(a: &SmallMatrix) -> f64 {
    let n = a.dim();
    let mut u = a.clone();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    alpha += u[(i, p)] * u[(i, p)];
                    beta += u[(i, q)] * u[(i, q)];
                    gamma += u[(i, p)] * u[(i, q)];
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..n {
                    let up = u[(i, p)];
                    let uq = u[(i, q)];
                    u[(i, p)] = c * up - s * uq;
                    u[(i, q)] = s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (0..n)
        .map(|j| (0..n).map(|i| u[(i, j)] * u[(i, j)]).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_spectrum(s: &Spectrum, expected: &[Complex64], tol: f64) {
        let e = Spectrum::new(expected.to_vec());
        let d = s.matching_distance(&e);
        assert!(d < tol, "spectrum {:?} vs {:?} (distance {d})", s.sorted(), expected);
    }

    #[test]
    fn diagonal() {
        let a = SmallMatrix::from_diagonal(&[2.0, -3.0]);
        let s = eigenvalues(&a).unwrap();
        assert_spectrum(&s, &[Complex64::new(2.0, 0.0), Complex64::new(-3.0, 0.0)], 1e-14);
    }

    #[test]
    fn symmetric_coupling_matrix() {
        // C(N=2, k=1)
        let a = SmallMatrix::from_rows(&[vec![-2.0, 1.0], vec![1.0, -2.0]]);
        let s = eigenvalues(&a).unwrap();
        assert_spectrum(&s, &[Complex64::new(-1.0, 0.0), Complex64::new(-3.0, 0.0)], 1e-13);
    }

    #[test]
    fn upper_triangular_jacobian() {
        let c = 1f64.cos();
        let a = SmallMatrix::from_rows(&[vec![c, c], vec![0.0, -c]]);
        let s = eigenvalues(&a).unwrap();
        assert_spectrum(&s, &[Complex64::new(c, 0.0), Complex64::new(-c, 0.0)], 1e-14);
    }

    #[test]
    fn rotation_block_gives_conjugate_pair() {
        let a = SmallMatrix::from_rows(&[
            vec![0.0, -2.0, 0.0],
            vec![2.0, 0.0, 0.0],
            vec![0.0, 0.0, 5.0],
        ]);
        let s = eigenvalues(&a).unwrap();
        assert_spectrum(
            &s,
            &[
                Complex64::new(0.0, 2.0),
                Complex64::new(0.0, -2.0),
                Complex64::new(5.0, 0.0),
            ],
            1e-13,
        );
    }

    #[test]
    fn companion_matrix_roots() {
        // x^4 - 10x^3 + 35x^2 - 50x + 24 = (x-1)(x-2)(x-3)(x-4)
        let a = SmallMatrix::from_rows(&[
            vec![10.0, -35.0, 50.0, -24.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        let s = eigenvalues(&a).unwrap();
        let expected: Vec<Complex64> = (1..=4).map(|v| Complex64::new(v as f64, 0.0)).collect();
        assert_spectrum(&s, &expected, 1e-9);
    }

    #[test]
    fn inverse_iteration_eigenvector() {
        let a = SmallMatrix::from_rows(&[vec![2.0, 1.0], vec![0.0, -1.0]]);
        let v = real_eigenvector(&a, -1.0).unwrap();
        let av = a.mul_vec(&v);
        assert!((av[0] + v[0]).abs() < 1e-9 && (av[1] + v[1]).abs() < 1e-9);
    }

    #[test]
    fn singular_value_residual_is_small_at_eigenvalues() {
        let a = SmallMatrix::from_rows(&[vec![0.0, -2.0], vec![2.0, 0.0]]);
        assert!(smallest_singular_value_shifted(&a, Complex64::new(0.0, 2.0)) < 1e-12);
        assert!((smallest_singular_value_shifted(&a, Complex64::new(0.0, 0.0)) - 2.0).abs() < 1e-12);
    }

    fn random_matrix() -> impl Strategy<Value = SmallMatrix> {
        (1usize..=8).prop_flat_map(|n| {
            proptest::collection::vec(-5.0f64..5.0, n * n)
                .prop_map(move |d| SmallMatrix::from_row_major(n, d))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn eigenvalues_are_singular_points_and_transpose_invariant(a in random_matrix()) {
            let s = eigenvalues(&a).unwrap();
            prop_assert_eq!(s.len(), a.dim());
            let scale = a.norm_frobenius().max(1.0);
            for &z in s.iter() {
                prop_assert!(smallest_singular_value_shifted(&a, z) <= 1e-8 * scale);
            }
            // conjugate symmetry
            for &z in s.iter().filter(|z| z.im != 0.0) {
                prop_assert!(s.iter().any(|w| (w - z.conj()).norm() < 1e-12));
            }
            let st = eigenvalues(&a.transpose()).unwrap();
            // multiple (defective) eigenvalues are only determined to O(sqrt(eps))
            prop_assert!(s.matching_distance(&st) < 1e-8 * scale || defective_pair(&s));
        }
    }

    fn defective_pair(s: &Spectrum) -> bool {
        let v = &s.eigenvalues;
        (0..v.len()).any(|i| (0..i).any(|j| (v[i] - v[j]).norm() < 1e-5))
    }
}
