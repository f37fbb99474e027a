//! Small dense factorizations: Householder QR, one-sided Jacobi SVD and LU.
//!
//! Every block of a tree tensor network is at most a few hundred entries, so
//! these routines favour accuracy and determinism over blocking.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dot, Matrix};

/// Thin QR `A = Q R` of a tall matrix with `R` carrying a nonnegative diagonal.
///
/// `Q` always has orthonormal columns; for rank-deficient input some diagonal
/// entries of `R` are (numerically) zero, see [`qr_full_rank`].
pub fn qr<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return shape_err(format!("thin QR needs rows >= cols, got {m}x{n}"));
    }
    let mut work = a.clone();
    let mut reflectors: Vec<Option<Vec<T>>> = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<T> = (j..m).map(|i| work.get(i, j)).collect();
        let norm = dot(&x, &x).sqrt();
        if norm == T::zero() {
            reflectors.push(None);
            continue;
        }
        let alpha = if x[0] >= T::zero() { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vn = dot(&v, &v).sqrt();
        if vn == T::zero() {
            reflectors.push(None);
            continue;
        }
        for e in v.iter_mut() {
            *e /= vn;
        }
        for c in j..n {
            let s = (j..m).map(|i| v[i - j] * work.get(i, c)).sum::<T>() * T::of(2.0);
            for i in j..m {
                let val = work.get(i, c) - s * v[i - j];
                work.set(i, c, val);
            }
        }
        reflectors.push(Some(v));
    }
    let mut r = Matrix::from_fn(n, n, |i, j| if i <= j { work.get(i, j) } else { T::zero() });
    let mut q = Matrix::from_fn(m, n, |i, j| if i == j { T::one() } else { T::zero() });
    for (j, refl) in reflectors.iter().enumerate().rev() {
        if let Some(v) = refl {
            for c in 0..n {
                let s = (j..m).map(|i| v[i - j] * q.get(i, c)).sum::<T>() * T::of(2.0);
                for i in j..m {
                    let val = q.get(i, c) - s * v[i - j];
                    q.set(i, c, val);
                }
            }
        }
    }
    for j in 0..n {
        if r.get(j, j) < T::zero() {
            for c in j..n {
                r.set(j, c, -r.get(j, c));
            }
            for i in 0..m {
                q.set(i, j, -q.get(i, j));
            }
        }
    }
    Ok((q, r))
}

/// [`qr`] that fails when a diagonal entry of `R` drops below
/// `rel_tol * max_i |R_ii|`.
pub fn qr_full_rank<T: Scalar>(a: &Matrix<T>, rel_tol: T, context: &str) -> Result<(Matrix<T>, Matrix<T>)> {
    let (q, r) = qr(a)?;
    let n = r.rows();
    let dmax = (0..n).fold(T::zero(), |acc, i| acc.max(r.get(i, i).abs()));
    let dmin = (0..n).fold(T::infinity(), |acc, i| acc.min(r.get(i, i).abs()));
    let tol = rel_tol * dmax;
    if n > 0 && (dmax == T::zero() || dmin <= tol) {
        return Err(Error::RankDeficient { context: context.to_string(), pivot: dmin.as_f64(), tol: tol.as_f64() });
    }
    Ok((q, r))
}

/// Thin singular value decomposition `A = U diag(s) V^T`.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub s: Vec<T>,
    pub v: Matrix<T>,
}

/// One-sided Jacobi SVD; singular values are sorted in descending order.
pub fn svd<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    svd_tall(a)
}

fn svd_tall<T: Scalar>(a: &Matrix<T>) -> Svd<T> {
    let (m, n) = (a.rows(), a.cols());
    let mut u = a.clone();
    let mut v = Matrix::<T>::identity(n);
    let eps = T::epsilon();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (up, uq) = (u.col(p), u.col(q));
                    (dot(up, up), dot(uq, uq), dot(up, uq))
                };
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut u, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<T> = (0..n).map(|j| dot(u.col(j), u.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    let smax = order.first().map_or(T::zero(), |&i| s[i]);
    let mut uu = Matrix::zeros(m, n);
    let mut vv = Matrix::zeros(n, n);
    let mut sorted = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sv = s[src];
        sorted.push(sv);
        for i in 0..n {
            vv.set(i, dst, v.get(i, src));
        }
        if sv > T::epsilon() * smax * T::of(m as f64) && sv > T::zero() {
            for i in 0..m {
                uu.set(i, dst, u.get(i, src) / sv);
            }
        } else {
            missing.push(dst);
        }
    }
    complete_orthonormal(&mut uu, &missing);
    s.clear();
    Svd { u: uu, s: sorted, v: vv }
}

fn rotate_cols<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let rows = m.rows();
    let data = m.data_mut();
    for i in 0..rows {
        let (xp, xq) = (data[i + p * rows], data[i + q * rows]);
        data[i + p * rows] = c * xp - s * xq;
        data[i + q * rows] = s * xp + c * xq;
    }
}

/// Fills the listed columns with unit vectors orthogonal to all others.
fn complete_orthonormal<T: Scalar>(u: &mut Matrix<T>, missing: &[usize]) {
    let m = u.rows();
    for &j in missing {
        for e in 0..m {
            let mut cand: Vec<T> = (0..m).map(|i| if i == e { T::one() } else { T::zero() }).collect();
            for _pass in 0..2 {
                for c in 0..u.cols() {
                    if c == j || (missing.contains(&c) && c > j) {
                        continue;
                    }
                    let proj = dot(u.col(c), &cand);
                    for (x, &b) in cand.iter_mut().zip(u.col(c)) {
                        *x -= proj * b;
                    }
                }
            }
            let nrm = dot(&cand, &cand).sqrt();
            if nrm > T::of(0.5) {
                for i in 0..m {
                    u.set(i, j, cand[i] / nrm);
                }
                break;
            }
        }
    }
}

/// Orthogonal polar factor `U W^T` of `A = U S W^T`.
pub fn polar_factor<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let d = svd(a);
    d.u.matmul_t(&d.v)
}

/// Numerical rank with threshold `rel_tol * s_max`.
pub fn rank<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> usize {
    let s = svd(a).s;
    let smax = s.first().copied().unwrap_or(T::zero());
    s.iter().filter(|&&v| v > rel_tol * smax && v > T::zero()).count()
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n {
        return shape_err(format!("solve {}x{} with rhs {}x{}", a.rows(), a.cols(), b.rows(), b.cols()));
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = lu.max_abs();
    for k in 0..n {
        let (p, pv) = (k..n).map(|i| (i, lu.get(i, k).abs())).fold((k, T::zero()), |acc, e| {
            if e.1 > acc.1 { e } else { acc }
        });
        if pv <= T::epsilon() * scale * T::of(n as f64) || pv == T::zero() {
            return Err(Error::RankDeficient { context: "LU solve".into(), pivot: pv.as_f64(), tol: 0.0 });
        }
        if p != k {
            for c in 0..n {
                let tmp = lu.get(k, c);
                lu.set(k, c, lu.get(p, c));
                lu.set(p, c, tmp);
            }
            for c in 0..x.cols() {
                let tmp = x.get(k, c);
                x.set(k, c, x.get(p, c));
                x.set(p, c, tmp);
            }
        }
        let piv = lu.get(k, k);
        for i in k + 1..n {
            let f = lu.get(i, k) / piv;
            lu.set(i, k, f);
            for c in k + 1..n {
                let val = lu.get(i, c) - f * lu.get(k, c);
                lu.set(i, c, val);
            }
            for c in 0..x.cols() {
                let val = x.get(i, c) - f * x.get(k, c);
                x.set(i, c, val);
            }
        }
    }
    for c in 0..x.cols() {
        for i in (0..n).rev() {
            let mut acc = x.get(i, c);
            for j in i + 1..n {
                acc -= lu.get(i, j) * x.get(j, c);
            }
            x.set(i, c, acc / lu.get(i, i));
        }
    }
    Ok(x)
}

/// `||A^T A - I||_F`.
pub fn orthonormality_defect<T: Scalar>(a: &Matrix<T>) -> T {
    let g = a.t_matmul(a).expect("gram matrix of a matrix with itself");
    g.sub(&Matrix::identity(a.cols())).expect("square").norm()
}
