//! Kernel learning with a TTN: feature encoding, forward and backward
//! propagation, losses and the batched objective with its Euclidean gradient.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand_distr::Distribution;

use crate::error::{domain_err, shape_err, Result};
use crate::geometry::TtnTangent;
use crate::scalar::Scalar;
use crate::tensor::{gemm, DenseTensor, MatView, Matrix};
use crate::tree::DimensionTree;
use crate::ttn::TtnParam;

static CLAMPED: AtomicUsize = AtomicUsize::new(0);

/// `v -> (cos(πv/2), sin(πv/2))`. Inputs outside `[0, 1]` are clamped and
/// counted, see [`clamped_feature_count`].
pub fn spin_feature_map<T: Scalar>(v: T) -> [T; 2] {
    let c = if v < T::zero() || v > T::one() || v.is_nan() {
        if CLAMPED.fetch_add(1, Ordering::Relaxed) == 0 {
            log::warn!("feature value {v} outside [0, 1] clamped");
        }
        if v > T::one() {
            T::one()
        } else {
            T::zero()
        }
    } else {
        v
    };
    let a = T::FRAC_PI_2() * c;
    [a.cos(), a.sin()]
}

/// Number of inputs [`spin_feature_map`] had to clamp in this process.
pub fn clamped_feature_count() -> usize {
    CLAMPED.load(Ordering::Relaxed)
}

/// One local feature vector per leaf, in mode order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub features: Vec<Vec<T>>,
}

impl<T: Scalar> Sample<T> {
    pub fn new(features: Vec<Vec<T>>) -> Self {
        Self { features }
    }

    fn check(&self, tree: &DimensionTree) -> Result<()> {
        if self.features.len() != tree.num_modes() {
            return domain_err(format!("sample has {} features, tree has {} leaves", self.features.len(), tree.num_modes()));
        }
        for (i, f) in self.features.iter().enumerate() {
            let n = tree.dim(tree.leaf(i));
            if f.len() != n {
                return domain_err(format!("feature {} has length {}, leaf dimension is {n}", i + 1, f.len()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample<T> {
    pub sample: Sample<T>,
    pub expected: Vec<T>,
}

/// Effective samples `s_t` of every node (indexed by node id) from one forward pass.
#[derive(Clone, Debug)]
pub struct PropagationTrace<T> {
    pub effective: Vec<Vec<T>>,
    root: usize,
}

impl<T: Scalar> PropagationTrace<T> {
    /// Response `y = s_root`.
    pub fn response(&self) -> &[T] {
        &self.effective[self.root]
    }
}

/// `s_t = B_tᵀ (s_L ⊗ s_R)` leaves-up, where the pair index is `a + k_L b`.
pub fn forward<T: Scalar>(x: &TtnParam<T>, s: &Sample<T>) -> Result<PropagationTrace<T>> {
    let tree = x.tree();
    s.check(tree)?;
    let mut eff: Vec<Vec<T>> = vec![Vec::new(); tree.nodes().len()];
    for mode in 0..tree.num_modes() {
        eff[tree.leaf(mode)] = s.features[mode].clone();
    }
    for b in 0..tree.num_blocks() {
        let [kl, kr, k] = tree.block_dims(b);
        let (l, r) = tree.block_children(b);
        let blk = x.block(b).data();
        let mut out = vec![T::zero(); k];
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for bb in 0..kr {
                let sr = eff[r][bb];
                for a in 0..kl {
                    acc += blk[a + kl * (bb + kr * c)] * eff[l][a] * sr;
                }
            }
            *o = acc;
        }
        eff[tree.block_node(b)] = out;
    }
    Ok(PropagationTrace { effective: eff, root: tree.root() })
}

/// Effective loss gradients `l_t` for every internal node (indexed by node
/// id; leaves hold empty vectors), root-down from `l_root = l`.
pub fn backward<T: Scalar>(x: &TtnParam<T>, trace: &PropagationTrace<T>, l: &[T]) -> Result<Vec<Vec<T>>> {
    let tree = x.tree();
    if l.len() != tree.label_dim() {
        return domain_err(format!("loss gradient has length {}, expected {}", l.len(), tree.label_dim()));
    }
    if trace.effective.len() != tree.nodes().len() {
        return shape_err("trace does not belong to this tree");
    }
    let mut grads: Vec<Vec<T>> = vec![Vec::new(); tree.nodes().len()];
    grads[tree.root()] = l.to_vec();
    for b in (0..tree.num_blocks()).rev() {
        let [kl, kr, k] = tree.block_dims(b);
        let (lc, rc) = tree.block_children(b);
        let lt = &grads[tree.block_node(b)];
        if lt.len() != k || trace.effective[lc].len() != kl || trace.effective[rc].len() != kr {
            return shape_err("trace does not match parameter shapes");
        }
        let blk = x.block(b).data();
        // v = B_t l_t as a k_L x k_R matrix
        let mut v = vec![T::zero(); kl * kr];
        for (c, &lc_val) in lt.iter().enumerate() {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi += blk[i + kl * kr * c] * lc_val;
            }
        }
        let (sl, sr) = (&trace.effective[lc], &trace.effective[rc]);
        if !tree.is_leaf(lc) {
            grads[lc] = (0..kl).map(|a| (0..kr).map(|bb| v[a + kl * bb] * sr[bb]).sum()).collect();
        }
        if !tree.is_leaf(rc) {
            grads[rc] = (0..kr).map(|bb| (0..kl).map(|a| v[a + kl * bb] * sl[a]).sum()).collect();
        }
    }
    Ok(grads)
}

/// Per-sample Euclidean gradient `δB_t = s_L ⊗ s_R ⊗ l_t`.
pub fn sample_gradient<T: Scalar>(x: &TtnParam<T>, trace: &PropagationTrace<T>, grads: &[Vec<T>]) -> Result<TtnTangent<T>> {
    let tree = x.tree();
    let mut deltas = Vec::with_capacity(tree.num_blocks());
    for b in 0..tree.num_blocks() {
        let (lc, rc) = tree.block_children(b);
        let (sl, sr, lt) = (&trace.effective[lc], &trace.effective[rc], &grads[tree.block_node(b)]);
        deltas.push(DenseTensor::from_fn(&tree.block_dims(b), |i| sl[i[0]] * sr[i[1]] * lt[i[2]])?);
    }
    TtnTangent::new(tree.clone(), deltas)
}

/// A loss with value and gradient in the response.
pub trait Loss<T: Scalar>: Send + Sync {
    fn value_and_gradient(&self, y: &[T], expected: &[T]) -> Result<(T, Vec<T>)>;
}

/// `½ ||y - y*||²` with gradient `y - y*`.
#[derive(Clone, Copy, Debug, Default)]
pub struct L2Loss;

impl<T: Scalar> Loss<T> for L2Loss {
    fn value_and_gradient(&self, y: &[T], expected: &[T]) -> Result<(T, Vec<T>)> {
        l2_loss(y, expected)
    }
}

pub fn l2_loss<T: Scalar>(y: &[T], expected: &[T]) -> Result<(T, Vec<T>)> {
    if y.len() != expected.len() {
        return domain_err(format!("response has length {}, expected response {}", y.len(), expected.len()));
    }
    let g: Vec<T> = y.iter().zip(expected).map(|(a, b)| *a - *b).collect();
    let v = g.iter().map(|e| *e * *e).sum::<T>() * T::of(0.5);
    Ok((v, g))
}

/// Objective on orthogonal parameters.
pub trait Objective<T: Scalar> {
    fn value(&self, x: &TtnParam<T>) -> Result<T>;
    /// Value and ambient Euclidean gradient.
    fn value_and_gradient(&self, x: &TtnParam<T>) -> Result<(T, TtnTangent<T>)>;
}

/// Mean loss over a fixed batch, evaluated with one GEMM per node.
///
/// Samples are stored as per-leaf `N x n_i` matrices and every node works on
/// the row-wise Kronecker product of its children's effective samples.
pub struct BatchObjective<T, L = L2Loss> {
    tree: Arc<DimensionTree>,
    leaves: Vec<Matrix<T>>,
    targets: Matrix<T>,
    loss: L,
}

impl<T: Scalar> BatchObjective<T, L2Loss> {
    pub fn l2(tree: Arc<DimensionTree>, batch: &[LabeledSample<T>]) -> Result<Self> {
        Self::new(tree, batch, L2Loss)
    }
}

impl<T: Scalar, L: Loss<T>> BatchObjective<T, L> {
    pub fn new(tree: Arc<DimensionTree>, batch: &[LabeledSample<T>], loss: L) -> Result<Self> {
        if batch.is_empty() {
            return domain_err("empty batch");
        }
        let n = batch.len();
        let k = tree.label_dim();
        for s in batch {
            s.sample.check(&tree)?;
            if s.expected.len() != k {
                return domain_err(format!("expected response has length {}, label dimension is {k}", s.expected.len()));
            }
        }
        let leaves = (0..tree.num_modes())
            .map(|m| Matrix::from_fn(n, tree.dim(tree.leaf(m)), |i, j| batch[i].sample.features[m][j]))
            .collect();
        let targets = Matrix::from_fn(n, k, |i, j| batch[i].expected[j]);
        Ok(Self { tree, leaves, targets, loss })
    }

    pub fn len(&self) -> usize {
        self.targets.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tree(&self) -> &Arc<DimensionTree> {
        &self.tree
    }

    /// Effective samples of every node, `N x k_t` each (indexed by node id).
    fn propagate(&self, x: &TtnParam<T>) -> Result<Vec<Matrix<T>>> {
        if !Arc::ptr_eq(x.tree(), &self.tree) && x.tree().as_ref() != self.tree.as_ref() {
            return domain_err("parameter tree does not match the data");
        }
        let tree = &self.tree;
        let mut eff: Vec<Option<Matrix<T>>> = vec![None; tree.nodes().len()];
        for m in 0..tree.num_modes() {
            eff[tree.leaf(m)] = Some(self.leaves[m].clone());
        }
        let mut w = Vec::new();
        for b in 0..tree.num_blocks() {
            let [kl, kr, k] = tree.block_dims(b);
            let (l, r) = tree.block_children(b);
            let (sl, sr) = (eff[l].as_ref().expect("children first"), eff[r].as_ref().expect("children first"));
            row_kron(sl, sr, &mut w);
            let mut out = vec![T::zero(); self.len() * k];
            gemm(
                self.len(),
                kl * kr,
                k,
                T::one(),
                MatView::col_major(&w, self.len()),
                MatView::col_major(x.block(b).data(), kl * kr),
                T::zero(),
                &mut out,
            );
            eff[tree.block_node(b)] = Some(Matrix::from_col_major(self.len(), k, out)?);
        }
        Ok(eff.into_iter().map(|m| m.unwrap_or_else(|| Matrix::zeros(0, 0))).collect())
    }

    /// Responses `y(s_n)` as rows of an `N x K` matrix. No orthogonality needed.
    pub fn responses(&self, x: &TtnParam<T>) -> Result<Matrix<T>> {
        let mut eff = self.propagate(x)?;
        Ok(eff.swap_remove(self.tree.root()))
    }

    pub fn targets(&self) -> &Matrix<T> {
        &self.targets
    }

    /// Orthogonal start point adapted to the data.
    ///
    /// Bottom-up, every non-root block takes the `k_t` leading left singular
    /// vectors of its input Gram matrix `W_tᵀ W_t` (uncentered principal
    /// directions), so effective samples keep most of their norm. The root is
    /// standard normal from `rng`.
    pub fn principal_start(&self, rng: &mut impl rand::Rng) -> Result<TtnParam<T>> {
        let tree = &self.tree;
        let n = self.len();
        let root = tree.root_block();
        let mut eff: Vec<Option<Matrix<T>>> = vec![None; tree.nodes().len()];
        for m in 0..tree.num_modes() {
            eff[tree.leaf(m)] = Some(self.leaves[m].clone());
        }
        let mut blocks = Vec::with_capacity(tree.num_blocks());
        let mut w = Vec::new();
        for b in 0..tree.num_blocks() {
            let dims = tree.block_dims(b);
            let [kl, kr, k] = dims;
            if b == root {
                blocks.push(DenseTensor::from_fn(&dims, |_| {
                    let v: f64 = rand_distr::StandardNormal.sample(rng);
                    T::of(v)
                })?);
                break;
            }
            let (l, r) = tree.block_children(b);
            row_kron(eff[l].as_ref().expect("children first"), eff[r].as_ref().expect("children first"), &mut w);
            let m = kl * kr;
            let mut gram = vec![T::zero(); m * m];
            gemm(m, n, m, T::one(), MatView::col_major_t(&w, n), MatView::col_major(&w, n), T::zero(), &mut gram);
            let u = crate::linalg::svd(&Matrix::from_col_major(m, m, gram)?).u;
            let basis = Matrix::from_fn(m, k, |i, j| u.get(i, j));
            let mut out = vec![T::zero(); n * k];
            gemm(n, m, k, T::one(), MatView::col_major(&w, n), MatView::normal(&basis), T::zero(), &mut out);
            eff[tree.block_node(b)] = Some(Matrix::from_col_major(n, k, out)?);
            blocks.push(DenseTensor::from_data(&dims, basis.into_data())?);
        }
        TtnParam::new(tree.clone(), blocks)
    }

    /// Mean loss and per-sample loss gradients (unscaled, `N x K`).
    fn losses(&self, y: &Matrix<T>) -> Result<(T, Matrix<T>)> {
        let (n, k) = (y.rows(), y.cols());
        let mut grad = Matrix::zeros(n, k);
        let mut total = T::zero();
        let mut row = vec![T::zero(); k];
        let mut target = vec![T::zero(); k];
        for i in 0..n {
            for j in 0..k {
                row[j] = y.get(i, j);
                target[j] = self.targets.get(i, j);
            }
            let (v, g) = self.loss.value_and_gradient(&row, &target)?;
            total += v;
            for (j, gj) in g.into_iter().enumerate() {
                grad.set(i, j, gj);
            }
        }
        Ok((total / T::of(n as f64), grad))
    }
}

fn require_orthogonal<T: Scalar>(x: &TtnParam<T>) -> Result<()> {
    let tol = T::of(crate::geometry::ORTHO_CHECK_TOL).max(T::of(10.0) * T::epsilon().sqrt());
    if x.orthogonality_defect() > tol {
        return domain_err("objective evaluated at a non-orthogonal parameter");
    }
    Ok(())
}

/// `w[n, a + k_L b] = l[n, a] r[n, b]`, column-major into `w`.
fn row_kron<T: Scalar>(l: &Matrix<T>, r: &Matrix<T>, w: &mut Vec<T>) {
    let (n, kl, kr) = (l.rows(), l.cols(), r.cols());
    w.clear();
    w.resize(n * kl * kr, T::zero());
    for b in 0..kr {
        let rc = r.col(b);
        for a in 0..kl {
            let lc = l.col(a);
            let dst = &mut w[(a + kl * b) * n..(a + kl * b + 1) * n];
            for ((d, p), q) in dst.iter_mut().zip(lc).zip(rc) {
                *d = *p * *q;
            }
        }
    }
}

impl<T: Scalar, L: Loss<T>> Objective<T> for BatchObjective<T, L> {
    fn value(&self, x: &TtnParam<T>) -> Result<T> {
        require_orthogonal(x)?;
        let y = self.responses(x)?;
        Ok(self.losses(&y)?.0)
    }

    fn value_and_gradient(&self, x: &TtnParam<T>) -> Result<(T, TtnTangent<T>)> {
        require_orthogonal(x)?;
        let tree = &self.tree;
        let n = self.len();
        let eff = self.propagate(x)?;
        let (value, root_grad) = self.losses(&eff[tree.root()])?;
        let scale = T::one() / T::of(n as f64);
        let mut lam: Vec<Option<Matrix<T>>> = vec![None; tree.nodes().len()];
        lam[tree.root()] = Some(root_grad);
        let mut deltas: Vec<Option<DenseTensor<T>>> = vec![None; tree.num_blocks()];
        let mut w = Vec::new();
        for b in (0..tree.num_blocks()).rev() {
            let [kl, kr, k] = tree.block_dims(b);
            let (l, r) = tree.block_children(b);
            let lt = lam[tree.block_node(b)].take().expect("parents first");
            let (sl, sr) = (&eff[l], &eff[r]);
            row_kron(sl, sr, &mut w);
            // δB_t = W_tᵀ Λ_t / N
            let mut grad = vec![T::zero(); kl * kr * k];
            gemm(kl * kr, n, k, scale, MatView::col_major_t(&w, n), MatView::normal(&lt), T::zero(), &mut grad);
            deltas[b] = Some(DenseTensor::from_data(&[kl, kr, k], grad)?);
            let need_l = !tree.is_leaf(l);
            let need_r = !tree.is_leaf(r);
            if !(need_l || need_r) {
                continue;
            }
            // V = Λ_t B_tᵀ, rows are the k_L x k_R matrices v of the per-sample rule
            let mut v = vec![T::zero(); n * kl * kr];
            gemm(
                n,
                k,
                kl * kr,
                T::one(),
                MatView::normal(&lt),
                MatView::col_major_t(x.block(b).data(), kl * kr),
                T::zero(),
                &mut v,
            );
            if need_l {
                let mut out = Matrix::zeros(n, kl);
                for bb in 0..kr {
                    let src = sr.col(bb);
                    for a in 0..kl {
                        let vc = &v[(a + kl * bb) * n..(a + kl * bb + 1) * n];
                        let dst = &mut out.data_mut()[a * n..(a + 1) * n];
                        for ((d, p), q) in dst.iter_mut().zip(vc).zip(src) {
                            *d += *p * *q;
                        }
                    }
                }
                lam[l] = Some(out);
            }
            if need_r {
                let mut out = Matrix::zeros(n, kr);
                for bb in 0..kr {
                    let dst = &mut out.data_mut()[bb * n..(bb + 1) * n];
                    for a in 0..kl {
                        let vc = &v[(a + kl * bb) * n..(a + kl * bb + 1) * n];
                        for ((d, p), q) in dst.iter_mut().zip(vc).zip(sl.col(a)) {
                            *d += *p * *q;
                        }
                    }
                }
                lam[r] = Some(out);
            }
        }
        let grad = TtnTangent::new(tree.clone(), deltas.into_iter().map(|d| d.expect("all blocks visited")).collect())?;
        Ok((value, grad))
    }
}

/// Mean L2 loss and Euclidean gradient over `batch`.
pub fn euclidean_gradient<T: Scalar>(x: &TtnParam<T>, batch: &[LabeledSample<T>]) -> Result<(T, TtnTangent<T>)> {
    BatchObjective::l2(x.tree().clone(), batch)?.value_and_gradient(x)
}
