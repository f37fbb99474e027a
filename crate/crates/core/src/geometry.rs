//! Tangent vectors of the orthogonal TTN manifold, its vertical and
//! horizontal spaces, and the projectors between them.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, matricize, mode_product, DenseTensor, Matrix};
use crate::tree::DimensionTree;
use crate::ttn::{block_matrix, check_blocks, gauge_blocks, GaugeElement, TtnParam};

/// Relative CG residual used by [`proj_orth_horizontal`] unless told otherwise.
pub const DEFAULT_CG_TOL: f64 = 1e-10;

/// Orthogonality slack accepted by the projectors' precondition checks (f64).
pub const ORTHO_CHECK_TOL: f64 = 1e-8;

/// Tangent (or ambient) vector `(δB_t)`, one block per internal node.
#[derive(Clone, Debug)]
pub struct TtnTangent<T> {
    tree: Arc<DimensionTree>,
    deltas: Vec<DenseTensor<T>>,
}

impl<T: Scalar> TtnTangent<T> {
    pub fn new(tree: Arc<DimensionTree>, deltas: Vec<DenseTensor<T>>) -> Result<Self> {
        check_blocks(&tree, &deltas)?;
        Ok(Self { tree, deltas })
    }

    pub fn zeros(tree: Arc<DimensionTree>) -> Self {
        TtnParam::zeros(tree.clone()).into_tangent()
    }

    pub fn random_normal(tree: Arc<DimensionTree>, rng: &mut impl rand::Rng) -> Self {
        TtnParam::random_normal(tree, rng).into_tangent()
    }

    /// Flat vector of length `N`, blocks concatenated in block order.
    pub fn from_vec(tree: Arc<DimensionTree>, v: &[T]) -> Result<Self> {
        if v.len() != tree.param_count() {
            return shape_err(format!("vector of length {} for {} parameters", v.len(), tree.param_count()));
        }
        let mut off = 0;
        let mut deltas = Vec::with_capacity(tree.num_blocks());
        for b in 0..tree.num_blocks() {
            let dims = tree.block_dims(b);
            let n = dims.iter().product::<usize>();
            deltas.push(DenseTensor::from_data(&dims, v[off..off + n].to_vec())?);
            off += n;
        }
        Ok(Self { tree, deltas })
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.deltas.iter().flat_map(|d| d.data().iter().copied()).collect()
    }

    pub fn tree(&self) -> &Arc<DimensionTree> {
        &self.tree
    }

    pub fn deltas(&self) -> &[DenseTensor<T>] {
        &self.deltas
    }

    pub fn delta(&self, b: usize) -> &DenseTensor<T> {
        &self.deltas[b]
    }

    pub fn delta_mut(&mut self, b: usize) -> &mut DenseTensor<T> {
        &mut self.deltas[b]
    }

    pub fn into_deltas(self) -> Vec<DenseTensor<T>> {
        self.deltas
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        let same = Arc::ptr_eq(&self.tree, &other.tree)
            || (self.deltas.len() == other.deltas.len()
                && self.deltas.iter().zip(&other.deltas).all(|(a, b)| a.dims() == b.dims()));
        if same {
            Ok(())
        } else {
            shape_err("tangent vectors live on different trees")
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same(other)?;
        Ok(self.deltas.iter().zip(&other.deltas).map(|(a, b)| tensor::dot(a.data(), b.data())).sum())
    }

    pub fn norm_sq(&self) -> T {
        self.deltas.iter().map(|a| tensor::dot(a.data(), a.data())).sum()
    }

    pub fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self { tree: self.tree.clone(), deltas: self.deltas.iter().map(|d| d.scale(s)).collect() }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: T, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (d, o) in self.deltas.iter_mut().zip(&other.deltas) {
            for (p, q) in d.data_mut().iter_mut().zip(o.data()) {
                *p += a * *q;
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(T::one(), other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.axpy(-T::one(), other)?;
        Ok(out)
    }

    /// Differential of the gauge action, which is the action itself since it is linear.
    pub fn apply_gauge(&self, g: &GaugeElement<T>) -> Result<Self> {
        Ok(Self { tree: self.tree.clone(), deltas: gauge_blocks(&self.tree, &self.deltas, g)? })
    }
}

impl<T: Scalar> TtnParam<T> {
    /// The blocks read as an ambient vector.
    pub fn into_tangent(self) -> TtnTangent<T> {
        let tree = self.tree().clone();
        TtnTangent { tree, deltas: self.into_blocks() }
    }

    pub fn to_tangent(&self) -> TtnTangent<T> {
        self.clone().into_tangent()
    }

    /// Ambient step `x + h ξ` (no retraction).
    pub fn offset(&self, xi: &TtnTangent<T>, h: T) -> Result<TtnParam<T>> {
        let mut v = self.to_tangent();
        v.axpy(h, xi)?;
        TtnParam::new(self.tree().clone(), v.into_deltas())
    }
}

/// `g(ξ, η) = Σ_t <δB_t, δC_t>`.
pub fn metric<T: Scalar>(xi: &TtnTangent<T>, eta: &TtnTangent<T>) -> Result<T> {
    xi.dot(eta)
}

/// Skew-symmetric `G_t` per non-root internal node; zero on leaves and root.
#[derive(Clone, Debug)]
pub struct SkewFamily<T> {
    mats: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> SkewFamily<T> {
    pub fn zeros(tree: &DimensionTree) -> Self {
        let root = tree.root_block();
        let mats = (0..tree.num_blocks())
            .map(|b| (b != root).then(|| Matrix::zeros(tree.block_dims(b)[2], tree.block_dims(b)[2])))
            .collect();
        Self { mats }
    }

    pub fn random(tree: &DimensionTree, rng: &mut impl rand::Rng) -> Self {
        let mut out = Self::zeros(tree);
        for m in out.mats.iter_mut().flatten() {
            let k = m.rows();
            *m = Matrix::from_fn(k, k, |_, _| {
                let v: f64 = StandardNormal.sample(rng);
                T::of(v)
            })
            .skew();
        }
        out
    }

    /// One matrix per non-root block, in block order.
    pub fn from_matrices(tree: &DimensionTree, mats: Vec<Matrix<T>>) -> Result<Self> {
        if mats.len() + 1 != tree.num_blocks() {
            return shape_err(format!("{} matrices for {} non-root nodes", mats.len(), tree.num_blocks() - 1));
        }
        let mut out = Self::zeros(tree);
        for (b, m) in mats.into_iter().enumerate() {
            out.set(tree, b, m)?;
        }
        Ok(out)
    }

    pub fn set(&mut self, tree: &DimensionTree, block: usize, m: Matrix<T>) -> Result<()> {
        if block == tree.root_block() {
            return domain_err("the root carries no skew matrix");
        }
        let k = tree.block_dims(block)[2];
        if m.rows() != k || m.cols() != k {
            return shape_err(format!("skew matrix for block {block} must be {k}x{k}"));
        }
        if m.add(&m.transpose())?.max_abs() > T::of(1e-12) {
            return domain_err(format!("matrix for block {block} is not skew-symmetric"));
        }
        self.mats[block] = Some(m);
        Ok(())
    }

    pub fn matrix(&self, block: usize) -> Option<&Matrix<T>> {
        self.mats.get(block).and_then(|m| m.as_ref())
    }
}

fn check_tol<T: Scalar>() -> T {
    T::of(ORTHO_CHECK_TOL).max(T::of(10.0) * T::epsilon().sqrt())
}

fn require_orthogonal<T: Scalar>(x: &TtnParam<T>) -> Result<()> {
    let defect = x.orthogonality_defect();
    if defect > check_tol() {
        return domain_err(format!("base point is not orthogonal (defect {:e})", defect.as_f64()));
    }
    Ok(())
}

fn require_compatible<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<()> {
    check_blocks(x.tree(), v.deltas())
}

fn require_tangent<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<()> {
    let defect = tangent_defect(x, v)?;
    if defect > check_tol::<T>() * (T::one() + v.norm()) {
        return domain_err(format!("vector is not tangent (defect {:e})", defect.as_f64()));
    }
    Ok(())
}

/// `max_t ||B_t^T δB_t + δB_t^T B_t||_F` over non-root blocks.
pub fn tangent_defect<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<T> {
    require_compatible(x, v)?;
    let root = x.tree().root_block();
    let mut worst = T::zero();
    for b in (0..x.blocks().len()).filter(|&b| b != root) {
        let m = x.block_matrix(b).t_matmul(&block_matrix(v.delta(b)))?;
        worst = worst.max(m.add(&m.transpose())?.norm());
    }
    Ok(worst)
}

/// `max_t ||B_t^T δB_t||_F` over non-root blocks: distance from the Cartesian horizontal space.
pub fn cart_horizontal_defect<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<T> {
    require_compatible(x, v)?;
    let root = x.tree().root_block();
    let mut worst = T::zero();
    for b in (0..x.blocks().len()).filter(|&b| b != root) {
        worst = worst.max(x.block_matrix(b).t_matmul(&block_matrix(v.delta(b)))?.norm());
    }
    Ok(worst)
}

/// Largest `||M - M^T||_F` over the child conditions
/// `M = δB_c^T B_c - B_t^(s) (δB_t^(s))^T` defining the orthogonal horizontal space.
pub fn symmetry_defect<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<T> {
    require_compatible(x, v)?;
    let tree = x.tree();
    let mut worst = T::zero();
    for b in 0..tree.num_blocks() {
        let (l, r) = tree.block_children(b);
        for (slot, child) in [(0, l), (1, r)] {
            let Some(cb) = tree.block_of(child) else { continue };
            let bs = matricize(x.block(b), &[slot])?;
            let ds = matricize(v.delta(b), &[slot])?;
            let m = block_matrix(v.delta(cb)).t_matmul(&x.block_matrix(cb))?.sub(&bs.matmul_t(&ds)?)?;
            worst = worst.max(m.sub(&m.transpose())?.norm());
        }
    }
    Ok(worst)
}

/// Orthogonal projection onto `T_x`: `δB - ½ B (B^T δB + δB^T B)` per non-root
/// block, identity on the root.
pub fn proj_tangent<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<TtnTangent<T>> {
    require_orthogonal(x)?;
    require_compatible(x, v)?;
    Ok(proj_tangent_unchecked(x, v))
}

pub(crate) fn proj_tangent_unchecked<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> TtnTangent<T> {
    let root = x.tree().root_block();
    map_blocks(x, v, |b, bm, dm| {
        if b == root {
            return dm.clone();
        }
        let s = bm.t_matmul(dm).expect("block shapes").sym();
        dm.sub(&bm.matmul(&s).expect("block shapes")).expect("block shapes")
    })
}

/// Cartesian horizontal projection `(I - B B^T) δB` per non-root block.
pub fn proj_cart_horizontal<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<TtnTangent<T>> {
    require_orthogonal(x)?;
    require_compatible(x, v)?;
    Ok(proj_cart_unchecked(x, v))
}

pub(crate) fn proj_cart_unchecked<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> TtnTangent<T> {
    let root = x.tree().root_block();
    map_blocks(x, v, |b, bm, dm| {
        if b == root {
            return dm.clone();
        }
        let c = bm.t_matmul(dm).expect("block shapes");
        dm.sub(&bm.matmul(&c).expect("block shapes")).expect("block shapes")
    })
}

fn map_blocks<T: Scalar>(
    x: &TtnParam<T>,
    v: &TtnTangent<T>,
    mut f: impl FnMut(usize, &Matrix<T>, &Matrix<T>) -> Matrix<T>,
) -> TtnTangent<T> {
    let deltas = (0..x.blocks().len())
        .map(|b| {
            let out = f(b, &x.block_matrix(b), &block_matrix(v.delta(b)));
            DenseTensor::from_data(x.block(b).dims(), out.into_data()).expect("block shapes")
        })
        .collect();
    TtnTangent { tree: x.tree().clone(), deltas }
}

/// `δB_t = -G_L ×₁ B_t - G_R ×₂ B_t + G_t^T ×₃ B_t`, the velocity of the gauge orbit.
pub fn vertical_vector<T: Scalar>(x: &TtnParam<T>, g: &SkewFamily<T>) -> Result<TtnTangent<T>> {
    require_orthogonal(x)?;
    let tree = x.tree();
    if g.mats.len() != tree.num_blocks() {
        return shape_err("skew family does not match tree");
    }
    let mut deltas = Vec::with_capacity(tree.num_blocks());
    for b in 0..tree.num_blocks() {
        let blk = x.block(b);
        let (l, r) = tree.block_children(b);
        let mut d = DenseTensor::zeros(blk.dims())?;
        if let Some(gl) = tree.block_of(l).and_then(|lb| g.matrix(lb)) {
            sub_assign(&mut d, &mode_product(gl, 0, blk)?);
        }
        if let Some(gr) = tree.block_of(r).and_then(|rb| g.matrix(rb)) {
            sub_assign(&mut d, &mode_product(gr, 1, blk)?);
        }
        if let Some(gt) = g.matrix(b) {
            add_assign(&mut d, &mode_product(&gt.transpose(), 2, blk)?);
        }
        deltas.push(d);
    }
    Ok(TtnTangent { tree: tree.clone(), deltas })
}

fn add_assign<T: Scalar>(a: &mut DenseTensor<T>, b: &DenseTensor<T>) {
    for (p, q) in a.data_mut().iter_mut().zip(b.data()) {
        *p += *q;
    }
}

fn sub_assign<T: Scalar>(a: &mut DenseTensor<T>, b: &DenseTensor<T>) {
    for (p, q) in a.data_mut().iter_mut().zip(b.data()) {
        *p -= *q;
    }
}

/// Oblique projection onto the Cartesian horizontal space along the vertical space.
pub fn proj_oblique<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<TtnTangent<T>> {
    require_orthogonal(x)?;
    require_tangent(x, v)?;
    Ok(oblique_unchecked(x, v))
}

pub(crate) fn oblique_unchecked<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> TtnTangent<T> {
    let tree = x.tree();
    let root = tree.root_block();
    let mut g: Vec<Option<Matrix<T>>> = vec![None; tree.num_blocks()];
    let mut deltas = Vec::with_capacity(tree.num_blocks());
    for b in 0..tree.num_blocks() {
        let blk = x.block(b);
        let (l, r) = tree.block_children(b);
        let mut z = v.delta(b).clone();
        if let Some(gl) = tree.block_of(l).and_then(|lb| g[lb].as_ref()) {
            add_assign(&mut z, &mode_product(gl, 0, blk).expect("block shapes"));
        }
        if let Some(gr) = tree.block_of(r).and_then(|rb| g[rb].as_ref()) {
            add_assign(&mut z, &mode_product(gr, 1, blk).expect("block shapes"));
        }
        if b != root {
            let bm = block_matrix(blk);
            let zm = block_matrix(&z);
            let gt = bm.t_matmul(&zm).expect("block shapes");
            let out = zm.sub(&bm.matmul(&gt).expect("block shapes")).expect("block shapes");
            z = DenseTensor::from_data(blk.dims(), out.into_data()).expect("block shapes");
            g[b] = Some(gt);
        }
        deltas.push(z);
    }
    TtnTangent { tree: tree.clone(), deltas }
}

/// Metric adjoint of [`proj_oblique`]; its image is the orthogonal horizontal space.
pub fn proj_oblique_transpose<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> Result<TtnTangent<T>> {
    require_orthogonal(x)?;
    require_tangent(x, v)?;
    Ok(oblique_transpose_unchecked(x, v))
}

pub(crate) fn oblique_transpose_unchecked<T: Scalar>(x: &TtnParam<T>, v: &TtnTangent<T>) -> TtnTangent<T> {
    let tree = x.tree();
    let nb = tree.num_blocks();
    let mut g: Vec<Option<Matrix<T>>> = vec![None; nb];
    for b in (0..nb).rev() {
        let blk = x.block(b);
        let y = g[b].as_ref().map(|gp| {
            let ym = block_matrix(blk).matmul(gp).expect("block shapes");
            DenseTensor::from_data(blk.dims(), ym.into_data()).expect("block shapes")
        });
        let (l, r) = tree.block_children(b);
        for (slot, child) in [(0, l), (1, r)] {
            let Some(cb) = tree.block_of(child) else { continue };
            let bs = matricize(blk, &[slot]).expect("order-3 block");
            let ds = matricize(v.delta(b), &[slot]).expect("order-3 block");
            let cross = block_matrix(v.delta(cb)).t_matmul(&x.block_matrix(cb)).expect("block shapes");
            let mut gc = bs.matmul_t(&ds).expect("block shapes").sub(&cross).expect("block shapes").skew();
            if let Some(y) = &y {
                let ys = matricize(y, &[slot]).expect("order-3 block");
                gc = gc.add(&ys.matmul_t(&bs).expect("block shapes")).expect("block shapes");
            }
            g[cb] = Some(gc);
        }
    }
    let deltas = (0..nb)
        .map(|b| match &g[b] {
            Some(gt) => {
                let out = block_matrix(v.delta(b)).sub(&x.block_matrix(b).matmul(gt).expect("block shapes"));
                DenseTensor::from_data(x.block(b).dims(), out.expect("block shapes").into_data()).expect("block shapes")
            }
            None => v.delta(b).clone(),
        })
        .collect();
    TtnTangent { tree: tree.clone(), deltas }
}

/// Iteration count and final relative residual of the inner CG solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Orthogonal projection onto the orthogonal horizontal space, `Pᵀ (P Pᵀ)⁻¹ P`
/// with `P` the oblique projector; the inverse is applied by CG on the
/// Cartesian horizontal space.
pub fn proj_orth_horizontal<T: Scalar>(
    x: &TtnParam<T>,
    v: &TtnTangent<T>,
    tol: T,
    max_iter: usize,
) -> Result<TtnTangent<T>> {
    proj_orth_horizontal_with_stats(x, v, tol, max_iter).map(|(out, _)| out)
}

pub fn proj_orth_horizontal_with_stats<T: Scalar>(
    x: &TtnParam<T>,
    v: &TtnTangent<T>,
    tol: T,
    max_iter: usize,
) -> Result<(TtnTangent<T>, CgStats)> {
    require_orthogonal(x)?;
    require_tangent(x, v)?;
    // Re-projecting cleans the rounding noise that leaves H^≡.
    let b = proj_cart_unchecked(x, &oblique_unchecked(x, v));
    let b_norm = b.norm();
    // v is vertical up to rounding.
    if b_norm <= T::of(10.0) * T::epsilon() * v.norm() {
        return Ok((TtnTangent::zeros(x.tree().clone()), CgStats { iterations: 0, relative_residual: 0.0 }));
    }
    let mut z = TtnTangent::zeros(x.tree().clone());
    let mut r = b.clone();
    let mut p = b;
    let mut rr = r.norm_sq();
    for it in 1..=max_iter {
        let ap = oblique_unchecked(x, &oblique_transpose_unchecked(x, &p));
        let pap = p.dot(&ap)?;
        if pap <= T::zero() {
            return Err(Error::Solver { iterations: it, residual: (rr.sqrt() / b_norm).as_f64() });
        }
        let alpha = rr / pap;
        z.axpy(alpha, &p)?;
        r.axpy(-alpha, &ap)?;
        let rr_new = r.norm_sq();
        let rel = rr_new.sqrt() / b_norm;
        if rel <= tol {
            let stats = CgStats { iterations: it, relative_residual: rel.as_f64() };
            return Ok((oblique_transpose_unchecked(x, &z), stats));
        }
        let beta = rr_new / rr;
        rr = rr_new;
        let mut next = r.clone();
        next.axpy(beta, &p)?;
        p = next;
    }
    Err(Error::Solver { iterations: max_iter, residual: (rr.sqrt() / b_norm).as_f64() })
}

/// Forward-difference step `√ε (1 + ||x||) / ||ξ||`.
pub fn default_fd_step<T: Scalar>(x_norm: T, xi_norm: T) -> T {
    T::epsilon().sqrt() * (T::one() + x_norm) / xi_norm
}

/// Finite-difference Hessian-vector product
/// `project([grad_field(R_x(hξ)) - grad_x] / h)`, with the gradient at the
/// retracted point identified block-wise with one at `x`.
pub fn hess_fd<T, G, R, P>(
    mut grad_field: G,
    retract: R,
    project: P,
    x: &TtnParam<T>,
    grad_x: &TtnTangent<T>,
    xi: &TtnTangent<T>,
    h: Option<T>,
) -> Result<TtnTangent<T>>
where
    T: Scalar,
    G: FnMut(&TtnParam<T>) -> Result<TtnTangent<T>>,
    R: Fn(&TtnParam<T>, &TtnTangent<T>) -> Result<TtnParam<T>>,
    P: Fn(&TtnTangent<T>) -> Result<TtnTangent<T>>,
{
    require_compatible(x, xi)?;
    let xi_norm = xi.norm();
    if xi_norm == T::zero() {
        return domain_err("finite-difference Hessian needs a nonzero direction");
    }
    let h = h.unwrap_or_else(|| default_fd_step(x.norm(), xi_norm));
    if !(h > T::zero()) || !h.is_finite() {
        return domain_err(format!("invalid finite-difference step {h}"));
    }
    let x_h = retract(x, &xi.scale(h))?;
    let g_h = grad_field(&x_h)?;
    let diff = g_h.sub(grad_x)?.scale(T::one() / h);
    project(&diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::retraction::{cartesian_retract, RetractionKind};
    use crate::ttn::{phi_dense, DEFAULT_ORACLE_CAP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trees() -> Vec<Arc<DimensionTree>> {
        vec![
            Arc::new(DimensionTree::build_balanced(&[2, 2, 2, 2], 3, 4).unwrap()),
            Arc::new(DimensionTree::build_balanced(&[2, 2, 3, 2, 2], 3, 5).unwrap()),
            Arc::new(DimensionTree::build_balanced(&[2; 8], 4, 3).unwrap()),
        ]
    }

    fn setup(tree: &Arc<DimensionTree>, seed: u64) -> (TtnParam<f64>, ChaCha8Rng) {
        (TtnParam::random_orthogonal(tree.clone(), seed), ChaCha8Rng::seed_from_u64(seed + 100))
    }

    fn rand_tangent(x: &TtnParam<f64>, rng: &mut ChaCha8Rng) -> TtnTangent<f64> {
        proj_tangent(x, &TtnTangent::random_normal(x.tree().clone(), rng)).unwrap()
    }

    fn dist(a: &TtnTangent<f64>, b: &TtnTangent<f64>) -> f64 {
        a.sub(b).unwrap().norm()
    }

    fn orth(x: &TtnParam<f64>, v: &TtnTangent<f64>) -> TtnTangent<f64> {
        proj_orth_horizontal(x, v, 1e-12, 10 * x.tree().horizontal_dim()).unwrap()
    }

    #[test]
    fn metric_basics_and_gauge_isometry() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 1);
            let xi = rand_tangent(&x, &mut rng);
            let eta = rand_tangent(&x, &mut rng);
            assert_eq!(metric(&xi, &TtnTangent::zeros(tree.clone())).unwrap(), 0.0);
            assert!(metric(&xi, &xi).unwrap() > 0.0);
            assert_eq!(metric(&TtnTangent::<f64>::zeros(tree.clone()), &TtnTangent::zeros(tree.clone())).unwrap(), 0.0);
            let a = GaugeElement::random(&tree, &mut rng);
            let lhs = metric(&xi.apply_gauge(&a).unwrap(), &eta.apply_gauge(&a).unwrap()).unwrap();
            assert!((lhs - metric(&xi, &eta).unwrap()).abs() < 1e-13 * (1.0 + lhs.abs()));
        }
        let other = TtnTangent::<f64>::zeros(trees()[1].clone());
        assert!(metric(&TtnTangent::zeros(trees()[0].clone()), &other).is_err());
    }

    #[test]
    fn tangent_projection() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 2);
            let v = TtnTangent::random_normal(tree.clone(), &mut rng);
            let p = proj_tangent(&x, &v).unwrap();
            assert!(tangent_defect(&x, &p).unwrap() < 1e-12);
            assert!(dist(&proj_tangent(&x, &p).unwrap(), &p) < 1e-13);
            let w = TtnTangent::random_normal(tree.clone(), &mut rng);
            let lhs = metric(&proj_tangent(&x, &w).unwrap(), &v).unwrap();
            let rhs = metric(&w, &p).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
            // x read as a tangent: non-root parts vanish, the root passes through
            let px = proj_tangent(&x, &x.to_tangent()).unwrap();
            for b in 0..tree.num_blocks() {
                if b == tree.root_block() {
                    assert_eq!(px.delta(b), x.block(b));
                } else {
                    assert!(px.delta(b).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn projectors_reject_non_orthogonal_points() {
        let tree = &trees()[0];
        let (x, mut rng) = setup(tree, 3);
        let mut y = x.clone();
        *y.block_mut(0) = y.block(0).scale(2.0);
        let v = TtnTangent::random_normal(tree.clone(), &mut rng);
        assert!(proj_tangent(&y, &v).is_err());
        assert!(proj_cart_horizontal(&y, &v).is_err());
        // non-tangent input to the oblique projectors
        assert!(proj_oblique(&x, &v).is_err());
        assert!(proj_oblique_transpose(&x, &v).is_err());
        assert!(proj_orth_horizontal(&x, &v, 1e-10, 100).is_err());
    }

    #[test]
    fn cartesian_horizontal_projection() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 4);
            let v = TtnTangent::random_normal(tree.clone(), &mut rng);
            let h = proj_cart_horizontal(&x, &v).unwrap();
            assert!(cart_horizontal_defect(&x, &h).unwrap() < 1e-12);
            assert!(dist(&proj_cart_horizontal(&x, &h).unwrap(), &h) < 1e-13);
            let via_tangent = proj_cart_horizontal(&x, &proj_tangent(&x, &v).unwrap()).unwrap();
            assert!(dist(&via_tangent, &h) < 1e-12);
            // δB_t = B_t M is annihilated at non-root blocks
            let deltas = (0..tree.num_blocks())
                .map(|b| {
                    let k = tree.block_dims(b)[2];
                    let m = Matrix::from_fn(k, k, |i, j| (i as f64 + 1.0) * 0.3 - j as f64);
                    let bm = x.block_matrix(b).matmul(&m).unwrap();
                    DenseTensor::from_data(x.block(b).dims(), bm.into_data()).unwrap()
                })
                .collect();
            let bm = TtnTangent::new(tree.clone(), deltas).unwrap();
            let out = proj_cart_horizontal(&x, &bm).unwrap();
            for b in 0..tree.num_blocks() - 1 {
                assert!(out.delta(b).norm() < 1e-12);
            }
            // self-adjoint on the tangent space
            let (u, w) = (rand_tangent(&x, &mut rng), rand_tangent(&x, &mut rng));
            let lhs = metric(&proj_cart_horizontal(&x, &u).unwrap(), &w).unwrap();
            let rhs = metric(&u, &proj_cart_horizontal(&x, &w).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_vectors() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 5);
            let zero = vertical_vector(&x, &SkewFamily::zeros(&tree)).unwrap();
            assert_eq!(zero.norm(), 0.0);
            let g = SkewFamily::random(&tree, &mut rng);
            let v = vertical_vector(&x, &g).unwrap();
            assert!(v.norm() > 0.0);
            assert!(dist(&proj_tangent(&x, &v).unwrap(), &v) < 1e-12);
        }
        // locality: only the leaf-pair node and its parent move
        let tree = &trees()[1];
        let (x, mut rng) = setup(tree, 6);
        let leaf_pair = (0..tree.num_blocks()).find(|&b| tree.is_leaf_pair(b)).unwrap();
        let mut g = SkewFamily::zeros(tree);
        let k = tree.block_dims(leaf_pair)[2];
        let m = Matrix::from_fn(k, k, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0)).skew();
        g.set(tree, leaf_pair, m).unwrap();
        let v = vertical_vector(&x, &g).unwrap();
        let (parent, _) = tree.parent_slot(tree.block_node(leaf_pair)).unwrap();
        for b in 0..tree.num_blocks() {
            let moved = v.delta(b).norm() > 0.0;
            assert_eq!(moved, b == leaf_pair || b == parent, "block {b}");
        }
        let bad = Matrix::identity(k);
        assert!(g.set(tree, leaf_pair, bad).is_err());
    }

    #[test]
    fn vertical_vectors_do_not_change_phi() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 7);
            let v = vertical_vector(&x, &SkewFamily::random(&tree, &mut rng)).unwrap();
            let h = 1e-5;
            let plus = phi_dense(&x.offset(&v, h).unwrap(), DEFAULT_ORACLE_CAP).unwrap();
            let minus = phi_dense(&x.offset(&v, -h).unwrap(), DEFAULT_ORACLE_CAP).unwrap();
            let phi = phi_dense(&x, DEFAULT_ORACLE_CAP).unwrap();
            let d: f64 =
                plus.data().iter().zip(minus.data()).map(|(a, b)| ((a - b) / (2.0 * h)).powi(2)).sum::<f64>().sqrt();
            assert!(d <= 1e-6 * phi.norm(), "dφ[v] = {d}");
            // a generic tangent does move φ
            let w = rand_tangent(&x, &mut rng);
            let plus = phi_dense(&x.offset(&w, h).unwrap(), DEFAULT_ORACLE_CAP).unwrap();
            let dw: f64 = plus.data().iter().zip(phi.data()).map(|(a, b)| ((a - b) / h).powi(2)).sum::<f64>().sqrt();
            assert!(dw > 1e-3);
        }
    }

    #[test]
    fn oblique_projection() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 8);
            let vert = vertical_vector(&x, &SkewFamily::random(&tree, &mut rng)).unwrap();
            assert!(proj_oblique(&x, &vert).unwrap().norm() < 1e-11);
            let h = proj_cart_horizontal(&x, &rand_tangent(&x, &mut rng)).unwrap();
            assert!(dist(&proj_oblique(&x, &h).unwrap(), &h) < 1e-12);
            let v = rand_tangent(&x, &mut rng);
            let p = proj_oblique(&x, &v).unwrap();
            assert!(cart_horizontal_defect(&x, &p).unwrap() < 1e-12);
            assert!(dist(&proj_oblique(&x, &p).unwrap(), &p) < 1e-11);
            // v - P v is vertical
            let rest = v.sub(&p).unwrap();
            assert!(proj_oblique(&x, &rest).unwrap().norm() < 1e-11);
        }
    }

    #[test]
    fn oblique_projection_is_not_self_adjoint() {
        let tree = &trees()[1];
        let (x, mut rng) = setup(tree, 9);
        let worst = (0..10)
            .map(|_| {
                let (u, w) = (rand_tangent(&x, &mut rng), rand_tangent(&x, &mut rng));
                let lhs = metric(&proj_oblique(&x, &u).unwrap(), &w).unwrap();
                let rhs = metric(&u, &proj_oblique(&x, &w).unwrap()).unwrap();
                (lhs - rhs).abs() / (u.norm() * w.norm())
            })
            .fold(0.0, f64::max);
        assert!(worst > 1e-3, "{worst}");
    }

    #[test]
    fn oblique_transpose_is_the_adjoint() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 10);
            for _ in 0..20 {
                let (u, w) = (rand_tangent(&x, &mut rng), rand_tangent(&x, &mut rng));
                let lhs = metric(&proj_oblique(&x, &u).unwrap(), &w).unwrap();
                let rhs = metric(&u, &proj_oblique_transpose(&x, &w).unwrap()).unwrap();
                assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(u.norm() * w.norm()), "{lhs} vs {rhs}");
            }
            let v = rand_tangent(&x, &mut rng);
            let t = proj_oblique_transpose(&x, &v).unwrap();
            assert!(tangent_defect(&x, &t).unwrap() < 1e-12);
            assert!(symmetry_defect(&x, &t).unwrap() < 1e-11);
            assert!(symmetry_defect(&x, &v).unwrap() > 1e-3);
            for _ in 0..5 {
                let vert = vertical_vector(&x, &SkewFamily::random(&tree, &mut rng)).unwrap();
                assert!(metric(&t, &vert).unwrap().abs() < 1e-11 * t.norm() * vert.norm());
            }
        }
    }

    #[test]
    fn orthogonal_horizontal_projection() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 11);
            let vert = vertical_vector(&x, &SkewFamily::random(&tree, &mut rng)).unwrap();
            assert!(orth(&x, &vert).norm() < 1e-9);
            let v = rand_tangent(&x, &mut rng);
            let h = orth(&x, &v);
            assert!(symmetry_defect(&x, &h).unwrap() < 1e-10);
            assert!(dist(&orth(&x, &h), &h) < 1e-9 * v.norm());
            let rest = v.sub(&h).unwrap();
            assert!(metric(&rest, &h).unwrap().abs() <= 1e-9 * v.norm_sq());
            assert!(proj_oblique(&x, &rest).unwrap().norm() < 1e-9 * v.norm());
            let u = orth(&x, &proj_oblique_transpose(&x, &v).unwrap());
            let u = u.scale(1.0 / u.norm());
            assert!(dist(&orth(&x, &u), &u) < 1e-9);
            let w = rand_tangent(&x, &mut rng);
            let lhs = metric(&orth(&x, &w), &v).unwrap();
            let rhs = metric(&w, &h).unwrap();
            assert!((lhs - rhs).abs() < 1e-9 * v.norm() * w.norm());
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let tree = &trees()[1];
        let (x, mut rng) = setup(tree, 12);
        let v = rand_tangent(&x, &mut rng);
        assert!(matches!(proj_orth_horizontal(&x, &v, 1e-14, 1), Err(Error::Solver { iterations: 1, .. })));
        let (_, stats) = proj_orth_horizontal_with_stats(&x, &v, 1e-10, tree.horizontal_dim()).unwrap();
        assert!(stats.iterations > 0 && stats.relative_residual <= 1e-10);
    }

    #[test]
    fn horizontal_projectors_commute_with_the_gauge() {
        for tree in trees() {
            let (x, mut rng) = setup(&tree, 13);
            let a = GaugeElement::random(&tree, &mut rng);
            let y = x.apply_gauge(&a).unwrap();
            let v = TtnTangent::random_normal(tree.clone(), &mut rng);
            let lhs = proj_cart_horizontal(&x, &v).unwrap().apply_gauge(&a).unwrap();
            let rhs = proj_cart_horizontal(&y, &v.apply_gauge(&a).unwrap()).unwrap();
            assert!(dist(&lhs, &rhs) < 1e-11);
            let t = proj_tangent(&x, &v).unwrap();
            let lhs = orth(&x, &t).apply_gauge(&a).unwrap();
            let rhs = orth(&y, &t.apply_gauge(&a).unwrap());
            assert!(dist(&lhs, &rhs) < 1e-9 * t.norm());
        }
    }

    fn image_rank(
        tree: &Arc<DimensionTree>,
        cols: impl Iterator<Item = TtnTangent<f64>>,
        extra: &[Vec<f64>],
    ) -> (usize, Vec<Vec<f64>>) {
        let mut vecs: Vec<Vec<f64>> = cols.map(|c| c.to_vec()).collect();
        vecs.extend(extra.iter().cloned());
        let m = Matrix::from_fn(tree.param_count(), vecs.len(), |i, j| vecs[j][i]);
        (linalg::rank(&m, 1e-9), vecs)
    }

    fn unit(tree: &Arc<DimensionTree>, i: usize) -> TtnTangent<f64> {
        let mut v = vec![0.0; tree.param_count()];
        v[i] = 1.0;
        TtnTangent::from_vec(tree.clone(), &v).unwrap()
    }

    #[test]
    fn subspace_dimensions_match_counting_formulas() {
        for tree in trees().into_iter().take(2) {
            let (x, _) = setup(&tree, 14);
            let n = tree.param_count();
            let tangent: Vec<_> = (0..n).map(|i| proj_tangent(&x, &unit(&tree, i)).unwrap()).collect();
            let (dim_t, _) = image_rank(&tree, tangent.iter().cloned(), &[]);
            assert_eq!(dim_t, tree.tangent_dim());

            let mut vert = Vec::new();
            for b in 0..tree.num_blocks() - 1 {
                let k = tree.block_dims(b)[2];
                for i in 0..k {
                    for j in i + 1..k {
                        let mut g = SkewFamily::zeros(&tree);
                        let mut m = Matrix::zeros(k, k);
                        m.set(i, j, 1.0);
                        m.set(j, i, -1.0);
                        g.set(&tree, b, m).unwrap();
                        vert.push(vertical_vector(&x, &g).unwrap());
                    }
                }
            }
            let (dim_v, vert_vecs) = image_rank(&tree, vert.into_iter(), &[]);
            assert_eq!(dim_v, tree.vertical_dim());

            let cart = tangent.iter().map(|t| proj_cart_horizontal(&x, t).unwrap());
            let (dim_h, _) = image_rank(&tree, cart.clone(), &[]);
            assert_eq!(dim_h, tree.horizontal_dim());
            let (dim_sum, _) = image_rank(&tree, cart, &vert_vecs);
            assert_eq!(dim_sum, tree.tangent_dim());

            let ortho = tangent.iter().map(|t| orth(&x, t));
            let (dim_hx, _) = image_rank(&tree, ortho.clone(), &[]);
            assert_eq!(dim_hx, tree.horizontal_dim());
            let (dim_sum, _) = image_rank(&tree, ortho, &vert_vecs);
            assert_eq!(dim_sum, tree.tangent_dim());
        }
    }

    #[test]
    fn fd_hessian() {
        let tree = &trees()[1];
        let (x, mut rng) = setup(tree, 15);
        let x0 = TtnParam::random_orthogonal(tree.clone(), 99);
        let grad = |p: &TtnParam<f64>| p.to_tangent().sub(&x0.to_tangent());
        let retract = |p: &TtnParam<f64>, v: &TtnTangent<f64>| cartesian_retract(RetractionKind::Qr, p, v);
        let project = |v: &TtnTangent<f64>| proj_tangent(&x, v);
        let gx = grad(&x).unwrap();
        let xi = rand_tangent(&x, &mut rng);
        assert!(hess_fd(grad, retract, project, &x, &gx, &TtnTangent::zeros(tree.clone()), None).is_err());
        let hx = hess_fd(grad, retract, project, &x, &gx, &xi, None).unwrap();
        assert!(dist(&hx, &xi) < 1e-6 * xi.norm());
        let h2 = hess_fd(grad, retract, project, &x, &gx, &xi.scale(2.0), None).unwrap();
        assert!(dist(&h2.scale(0.5), &hx) < 1e-5 * hx.norm());
    }

    #[test]
    fn f32_projectors() {
        let tree = trees()[0].clone();
        let x = TtnParam::<f32>::random_orthogonal(tree.clone(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = proj_tangent(&x, &TtnTangent::random_normal(tree, &mut rng)).unwrap();
        let p = proj_oblique(&x, &v).unwrap();
        assert!(cart_horizontal_defect(&x, &p).unwrap() < 1e-4);
    }
}
