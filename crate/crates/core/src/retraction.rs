//! Stiefel retractions and the Cartesian retraction on orthogonal TTNs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::geometry::TtnTangent;
use crate::linalg::{self, orthonormality_defect};
use crate::scalar::Scalar;
use crate::tensor::{DenseTensor, Matrix};
use crate::ttn::{block_matrix, TtnParam, DEFAULT_RANK_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetractionKind {
    Qr,
    Polar,
    Cayley,
}

impl RetractionKind {
    pub const ALL: [RetractionKind; 3] = [RetractionKind::Qr, RetractionKind::Polar, RetractionKind::Cayley];

    /// Whether `R_{θ(x,A)}(dθ_A ξ) = θ(R_x(ξ), A)`, i.e. whether the
    /// retraction descends to the quotient. QR does not: its result depends
    /// on the representative.
    pub fn is_gauge_equivariant(self) -> bool {
        !matches!(self, RetractionKind::Qr)
    }

    pub fn name(self) -> &'static str {
        match self {
            RetractionKind::Qr => "qr",
            RetractionKind::Polar => "polar",
            RetractionKind::Cayley => "cayley",
        }
    }
}

impl fmt::Display for RetractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RetractionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qr" => Ok(RetractionKind::Qr),
            "polar" => Ok(RetractionKind::Polar),
            "cayley" => Ok(RetractionKind::Cayley),
            other => domain_err(format!("unknown retraction {other:?} (expected qr, polar or cayley)")),
        }
    }
}

fn tol<T: Scalar>(base: f64) -> T {
    T::of(base).max(T::of(10.0) * T::epsilon().sqrt())
}

/// Retraction on the Stiefel manifold `St(n, k)` at `x` in direction `v`.
pub fn stiefel_retract<T: Scalar>(kind: RetractionKind, x: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
    if x.rows() != v.rows() || x.cols() != v.cols() {
        return shape_err(format!("direction is {}x{}, point is {}x{}", v.rows(), v.cols(), x.rows(), x.cols()));
    }
    if orthonormality_defect(x) > tol(1e-10) {
        return domain_err("base point does not have orthonormal columns");
    }
    if v.data().iter().all(|&e| e == T::zero()) {
        return Ok(x.clone());
    }
    match kind {
        RetractionKind::Qr => {
            let (q, _) = linalg::qr_full_rank(&x.add(v)?, T::of(DEFAULT_RANK_TOL), "QR retraction")?;
            Ok(q)
        }
        RetractionKind::Polar => linalg::polar_factor(&x.add(v)?),
        RetractionKind::Cayley => cayley(x, v),
    }
}

/// `(I - W/2)^{-1} (I + W/2) X` with `W = P Xᵀ - X Pᵀ`, `P = V - X XᵀV / 2`,
/// evaluated through a `2k x 2k` solve.
///
/// `W` only sees the tangent part of `V` (a normal direction `X S` with `S`
/// symmetric gives `W = 0`), so non-tangent directions are accepted.
fn cayley<T: Scalar>(x: &Matrix<T>, v: &Matrix<T>) -> Result<Matrix<T>> {
    let xtv = x.t_matmul(v)?;
    let (n, k) = (x.rows(), x.cols());
    let p = v.sub(&x.matmul(&xtv)?.scale(T::of(0.5)))?;
    // U = [P, X], Z = [X, -P], W = U Zᵀ
    let u = Matrix::from_fn(n, 2 * k, |i, j| if j < k { p.get(i, j) } else { x.get(i, j - k) });
    let z = Matrix::from_fn(n, 2 * k, |i, j| if j < k { x.get(i, j) } else { -p.get(i, j - k) });
    let ztu = z.t_matmul(&u)?;
    let lhs = Matrix::from_fn(2 * k, 2 * k, |i, j| {
        let id = if i == j { T::one() } else { T::zero() };
        id - T::of(0.5) * ztu.get(i, j)
    });
    let rhs = z.t_matmul(x)?;
    let sol = linalg::solve(&lhs, &rhs)?;
    x.add(&u.matmul(&sol)?)
}

/// Stiefel retraction on every non-root block, additive update at the root.
pub fn cartesian_retract<T: Scalar>(kind: RetractionKind, x: &TtnParam<T>, xi: &TtnTangent<T>) -> Result<TtnParam<T>> {
    let tree = x.tree();
    if xi.deltas().len() != tree.num_blocks() {
        return shape_err("tangent does not match the parameter's tree");
    }
    let root = tree.root_block();
    let mut blocks = Vec::with_capacity(tree.num_blocks());
    for b in 0..tree.num_blocks() {
        let dims = x.block(b).dims();
        if xi.delta(b).dims() != dims {
            return shape_err(format!("tangent block {b} has dims {:?}, expected {dims:?}", xi.delta(b).dims()));
        }
        let out = if b == root {
            let mut data = x.block(b).data().to_vec();
            for (p, q) in data.iter_mut().zip(xi.delta(b).data()) {
                *p += *q;
            }
            data
        } else {
            stiefel_retract(kind, &x.block_matrix(b), &block_matrix(xi.delta(b)))?.into_data()
        };
        blocks.push(DenseTensor::from_data(dims, out)?);
    }
    TtnParam::new(tree.clone(), blocks)
}
