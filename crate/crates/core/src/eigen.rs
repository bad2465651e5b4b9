//! Dense eigenvalues for small real matrices.
//!
//! Balancing, reduction to upper Hessenberg form by stabilized elementary
//! similarity transforms, then Francis double-shift QR. Every eigenvalue is
//! checked by computing an eigenvector of the original matrix with complex
//! inverse iteration and bounding its residual.

use nalgebra::{Complex, DMatrix};

use crate::error::EigenError;

pub type C64 = Complex<f64>;

/// Residual bound, relative to `max(1, ||M||_F)`.
pub const RESIDUAL_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: C64,
    /// Unit-norm eigenvector.
    pub vector: Vec<C64>,
    /// `||(M - value I) v|| / ||v||`.
    pub residual: f64,
}

/// All eigenvalues sorted by descending modulus.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>, EigenError> {
    Ok(eigenpairs(m)?.into_iter().map(|p| p.value).collect())
}

/// Eigenvalues with verified eigenvectors, sorted by descending modulus.
pub fn eigenpairs(m: &DMatrix<f64>) -> Result<Vec<EigenPair>, EigenError> {
    let values = raw_eigenvalues(m)?;
    let scale = m.norm().max(1.0);
    let tol = RESIDUAL_TOL * scale;
    let mut pairs = Vec::with_capacity(values.len());
    for value in values {
        let (vector, residual) = inverse_iteration(m, value);
        if !(residual < tol) {
            return Err(EigenError::Residual {
                residual,
                tolerance: tol,
            });
        }
        pairs.push(EigenPair {
            value,
            vector,
            residual,
        });
    }
    pairs.sort_by(|a, b| {
        b.value
            .norm()
            .partial_cmp(&a.value.norm())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(pairs)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64, EigenError> {
    Ok(raw_eigenvalues(m)?
        .iter()
        .map(|e| e.norm())
        .fold(0.0, f64::max))
}

/// Eigenvalues without eigenvector verification, unsorted.
pub fn raw_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>, EigenError> {
    if m.nrows() != m.ncols() {
        return Err(EigenError::NotSquare(m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based working copy keeps the index arithmetic of the classic routines.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    balance(&mut a, n);
    to_hessenberg(&mut a, n);
    hessenberg_qr(&mut a, n)
}

fn balance(a: &mut [Vec<f64>], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
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
                    for j in 1..=n {
                        a[i][j] *= g;
                    }
                    for j in 1..=n {
                        a[j][i] *= f;
                    }
                }
            }
        }
    }
}

fn to_hessenberg(a: &mut [Vec<f64>], n: usize) {
    for m in 2..n {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            for j in (m - 1)..=n {
                let t = a[i][j];
                a[i][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().take(n + 1).skip(1) {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for j in 1..=n {
                        a[j][m] += y * a[j][i];
                    }
                }
            }
        }
    }
    for i in 3..=n {
        for j in 1..(i - 1) {
            a[i][j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

#[allow(clippy::many_single_char_names)]
fn hessenberg_qr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<C64>, EigenError> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    while nn >= 1 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 2 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            y = a[nu - 1][nu - 1];
            w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == MAX_SWEEPS {
                return Err(EigenError::NoConvergence(MAX_SWEEPS));
            }
            if its == 10 || its == 20 || its == 40 {
                // exceptional shift
                t += x;
                for i in 1..=nu {
                    a[i][i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nu - 2;
            loop {
                z = a[m][m];
                r = x - z;
                let s0 = y - z;
                p = (r * s0 - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s0;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k + 1 <= nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k != nu - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nu - 1 {
                            p += z * a[i][k + 2];
                            a[i][k + 2] -= p * r;
                        }
                        a[i][k + 1] -= p * q;
                        a[i][k] -= p;
                    }
                }
                k += 1;
            }
            if l >= nu - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| C64::new(wr[i], wi[i])).collect())
}

/// Eigenvector for `value` by shifted inverse iteration on the original
/// matrix. Returns the unit vector and its residual.
fn inverse_iteration(m: &DMatrix<f64>, value: C64) -> (Vec<C64>, f64) {
    let n = m.nrows();
    let scale = m.norm().max(1.0);
    let shift = value + C64::new(1e-10 * scale, 1e-10 * scale);
    let mut shifted: Vec<Vec<C64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = if i == j { shift } else { C64::new(0.0, 0.0) };
                    C64::new(m[(i, j)], 0.0) - d
                })
                .collect()
        })
        .collect();
    let perm = lu_in_place(&mut shifted, 1e-300 * scale);
    let mut v: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0 + 0.1 * i as f64, 0.05 * i as f64))
        .collect();
    normalize(&mut v);
    let mut best = (v.clone(), residual(m, value, &v));
    for _ in 0..4 {
        v = lu_solve(&shifted, &perm, &v);
        normalize(&mut v);
        let res = residual(m, value, &v);
        if res < best.1 {
            best = (v.clone(), res);
        }
    }
    best
}

fn normalize(v: &mut [C64]) {
    let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm > 0.0 && norm.is_finite() {
        for c in v.iter_mut() {
            *c /= norm;
        }
    }
}

fn residual(m: &DMatrix<f64>, value: C64, v: &[C64]) -> f64 {
    let n = m.nrows();
    let vnorm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut acc = 0.0;
    for i in 0..n {
        let mut s = -value * v[i];
        for j in 0..n {
            s += v[j] * m[(i, j)];
        }
        acc += s.norm_sqr();
    }
    acc.sqrt() / vnorm
}

/// In-place LU with partial pivoting; zero pivots are replaced by `tiny`.
fn lu_in_place(a: &mut [Vec<C64>], tiny: f64) -> Vec<usize> {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let piv = (k..n)
            .max_by(|&i, &j| a[i][k].norm().partial_cmp(&a[j][k].norm()).unwrap())
            .unwrap_or(k);
        a.swap(k, piv);
        perm.swap(k, piv);
        if a[k][k].norm() < tiny {
            a[k][k] = C64::new(tiny, 0.0);
        }
        for i in (k + 1)..n {
            let f = a[i][k] / a[k][k];
            a[i][k] = f;
            for j in (k + 1)..n {
                let t = a[k][j];
                a[i][j] -= f * t;
            }
        }
    }
    perm
}

fn lu_solve(lu: &[Vec<C64>], perm: &[usize], b: &[C64]) -> Vec<C64> {
    let n = lu.len();
    let mut y: Vec<C64> = perm.iter().map(|&p| b[p]).collect();
    for i in 0..n {
        for j in 0..i {
            let t = lu[i][j] * y[j];
            y[i] -= t;
        }
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            let t = lu[i][j] * y[j];
            y[i] -= t;
        }
        y[i] /= lu[i][i];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_spectrum() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            0.5, 0.4, 0.3, 0.2, 0.1, 0.0,
        ]));
        let ev = eigenvalues(&m).unwrap();
        let expect = [0.5, 0.4, 0.3, 0.2, 0.1, 0.0];
        for (e, x) in ev.iter().zip(expect) {
            assert_eq!(e.im, 0.0);
            assert!((e.re - x).abs() < 1e-15);
        }
    }

    #[test]
    fn rotation_block_gives_unit_pair() {
        let theta: f64 = 0.7;
        let mut m = DMatrix::<f64>::identity(6, 6);
        m[(2, 2)] = theta.cos();
        m[(2, 3)] = -theta.sin();
        m[(3, 2)] = theta.sin();
        m[(3, 3)] = theta.cos();
        let ev = eigenvalues(&m).unwrap();
        let complex: Vec<_> = ev.iter().filter(|e| e.im.abs() > 1e-12).collect();
        assert_eq!(complex.len(), 2);
        for e in complex {
            assert!((e.norm() - 1.0).abs() < 1e-12);
            assert!((e.im.abs() - theta.sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let m = DMatrix::from_row_slice(3, 3, &[6.0, -11.0, 6.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        for (e, x) in ev.iter().zip([3.0, 2.0, 1.0]) {
            assert!((e.re - x).abs() < 1e-10 && e.im.abs() < 1e-10);
        }
    }

    #[test]
    fn badly_scaled_matrix_passes_residual_check() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[0.95, 0.0, 0.0, -3.0e6, 0.9, 0.01, 1.0e5, -0.02, 0.5],
        );
        let pairs = eigenpairs(&m).unwrap();
        assert_eq!(pairs.len(), 3);
        assert!(pairs.iter().any(|p| (p.value.re - 0.95).abs() < 1e-9));
    }

    #[test]
    fn rejects_non_finite() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(0, 1)] = f64::NAN;
        assert_eq!(eigenvalues(&m), Err(EigenError::NonFinite));
    }
}
