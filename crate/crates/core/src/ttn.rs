//! Tree tensor network parameters, the gauge group acting on them, and the
//! dense contraction used as a verification oracle.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain_err, shape_err, Error, Result};
use crate::linalg::{self, orthonormality_defect};
use crate::scalar::Scalar;
use crate::tensor::{mode_product, DenseTensor, Matrix};
use crate::tree::{DimensionTree, TreeSpec};

/// Largest dense tensor [`phi_dense`] builds unless told otherwise.
pub const DEFAULT_ORACLE_CAP: usize = 10_000_000;

/// Relative singular value threshold used by [`TtnParam::is_full_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Point `x = (B_t)_{t in J}`: one order-3 block of dims
/// `(k_{t_L}, k_{t_R}, k_t)` per internal node, indexed by block index.
#[derive(Clone, Debug)]
pub struct TtnParam<T> {
    tree: Arc<DimensionTree>,
    blocks: Vec<DenseTensor<T>>,
}

impl<T: Scalar> TtnParam<T> {
    pub fn new(tree: Arc<DimensionTree>, blocks: Vec<DenseTensor<T>>) -> Result<Self> {
        check_blocks(&tree, &blocks)?;
        Ok(Self { tree, blocks })
    }

    pub fn zeros(tree: Arc<DimensionTree>) -> Self {
        let blocks = (0..tree.num_blocks())
            .map(|b| DenseTensor::zeros(&tree.block_dims(b)).expect("tree dims are positive"))
            .collect();
        Self { tree, blocks }
    }

    /// Standard normal blocks, not orthogonalized.
    pub fn random_normal(tree: Arc<DimensionTree>, rng: &mut impl rand::Rng) -> Self {
        let blocks = (0..tree.num_blocks())
            .map(|b| {
                DenseTensor::from_fn(&tree.block_dims(b), |_| {
                    let v: f64 = StandardNormal.sample(rng);
                    T::of(v)
                })
                .expect("tree dims are positive")
            })
            .collect();
        Self { tree, blocks }
    }

    /// Gaussian blocks, each non-root block replaced by the Q factor of its
    /// matricization; the root stays Gaussian. Deterministic in `seed`.
    ///
    /// Unlike [`TtnParam::orthogonalize`] no R factor reaches the root, which
    /// would otherwise grow with the tree depth.
    pub fn random_orthogonal(tree: Arc<DimensionTree>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = tree.root_block();
        let mut blocks = Vec::with_capacity(tree.num_blocks());
        for b in 0..tree.num_blocks() {
            let dims = tree.block_dims(b);
            loop {
                let g = DenseTensor::from_fn(&dims, |_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    T::of(v)
                })
                .expect("tree dims are positive");
                if b == root {
                    blocks.push(g);
                    break;
                }
                // Gaussian matrices are full rank with probability one.
                if let Ok((q, _)) = linalg::qr_full_rank(&block_matrix(&g), T::of(DEFAULT_RANK_TOL), "random block") {
                    blocks.push(DenseTensor::from_data(&dims, q.into_data()).expect("same size"));
                    break;
                }
            }
        }
        Self { tree, blocks }
    }

    pub fn tree(&self) -> &Arc<DimensionTree> {
        &self.tree
    }

    pub fn blocks(&self) -> &[DenseTensor<T>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &DenseTensor<T> {
        &self.blocks[b]
    }

    pub fn into_blocks(self) -> Vec<DenseTensor<T>> {
        self.blocks
    }

    /// Mutable access for callers that keep block shapes intact.
    pub fn block_mut(&mut self, b: usize) -> &mut DenseTensor<T> {
        &mut self.blocks[b]
    }

    /// `B_t = B_t^(1,2)`, a `(k_L k_R) x k_t` matrix.
    pub fn block_matrix(&self, b: usize) -> Matrix<T> {
        block_matrix(&self.blocks[b])
    }

    pub fn norm(&self) -> T {
        self.blocks.iter().map(|b| crate::tensor::dot(b.data(), b.data())).sum::<T>().sqrt()
    }

    /// Definition-level full-rank check with per-node diagnostics.
    pub fn is_full_rank(&self, rel_tol: T) -> FullRankReport {
        let tree = &self.tree;
        let root = tree.root_block();
        let mut failures = Vec::new();
        for b in 0..tree.num_blocks() {
            let [kl, kr, k] = tree.block_dims(b);
            let label: Vec<usize> = tree.node(tree.block_node(b)).label.iter().map(|m| m + 1).collect();
            if b != root {
                let r = linalg::rank(&self.block_matrix(b), rel_tol);
                if r < k {
                    failures.push(RankFailure { label: label.clone(), matricization: "(1,2)", rank: r, required: k });
                }
            }
            if !tree.is_leaf_pair(b) {
                let m1 = Matrix::from_col_major(kl, kr * k, self.blocks[b].data().to_vec()).expect("block size");
                let r1 = linalg::rank(&m1, rel_tol);
                let need1 = kl.min(kr * k);
                if r1 < need1 {
                    failures.push(RankFailure { label: label.clone(), matricization: "(1)", rank: r1, required: need1 });
                }
                let m2 = crate::tensor::matricize(&self.blocks[b], &[1]).expect("order-3 block");
                let r2 = linalg::rank(&m2, rel_tol);
                let need2 = kr.min(kl * k);
                if r2 < need2 {
                    failures.push(RankFailure { label, matricization: "(2)", rank: r2, required: need2 });
                }
            }
        }
        FullRankReport { failures }
    }

    /// `B_t^T B_t = I` at every non-root block, within `tol` in Frobenius norm.
    pub fn is_orthogonal(&self, tol: T) -> bool {
        self.orthogonality_defect() <= tol
    }

    /// Largest `||B_t^T B_t - I||_F` over non-root blocks.
    pub fn orthogonality_defect(&self) -> T {
        let root = self.tree.root_block();
        (0..self.blocks.len())
            .filter(|&b| b != root)
            .map(|b| orthonormality_defect(&self.block_matrix(b)))
            .fold(T::zero(), T::max)
    }

    /// Leaves-up QR sweep: every non-root block is replaced by its Q factor
    /// and R is absorbed into the matching mode of the parent block.
    pub fn orthogonalize(&self) -> Result<Self> {
        let report = self.is_full_rank(T::of(DEFAULT_RANK_TOL));
        if !report.is_full_rank() {
            return domain_err(format!("cannot orthogonalize a rank-deficient parameter: {report}"));
        }
        let tree = &self.tree;
        let mut blocks = self.blocks.clone();
        for b in 0..tree.num_blocks() {
            if b == tree.root_block() {
                break;
            }
            let dims = tree.block_dims(b);
            let (q, r) = linalg::qr_full_rank(&block_matrix(&blocks[b]), T::of(DEFAULT_RANK_TOL), "orthogonalize")?;
            blocks[b] = DenseTensor::from_data(&dims, q.into_data())?;
            let (pb, slot) = tree.parent_slot(tree.block_node(b)).expect("non-root node has a parent");
            blocks[pb] = mode_product(&r, slot, &blocks[pb])?;
        }
        Self::new(tree.clone(), blocks)
    }

    /// Gauge action `B_t -> (A_L^T ⊗ A_R^T ⊗ A_t^T) B_t`, identity on leaves and root.
    pub fn apply_gauge(&self, g: &GaugeElement<T>) -> Result<Self> {
        Ok(Self { tree: self.tree.clone(), blocks: gauge_blocks(&self.tree, &self.blocks, g)? })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        Self::from_checkpoint(&ck)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let tree = &self.tree;
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layout: "column-major".into(),
            tree: tree.to_spec(),
            blocks: (0..tree.num_blocks())
                .map(|b| BlockRecord {
                    node: tree.node(tree.block_node(b)).label.iter().map(|m| m + 1).collect(),
                    dims: tree.block_dims(b),
                    data: self.blocks[b].data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown format tag {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", ck.version)));
        }
        if ck.layout != "column-major" {
            return Err(Error::Format(format!("unsupported layout {:?}", ck.layout)));
        }
        let tree = Arc::new(DimensionTree::from_spec(&ck.tree)?);
        if ck.blocks.len() != tree.num_blocks() {
            return Err(Error::Format(format!("{} blocks for {} internal nodes", ck.blocks.len(), tree.num_blocks())));
        }
        let mut blocks = Vec::with_capacity(ck.blocks.len());
        for (b, rec) in ck.blocks.iter().enumerate() {
            let label: Vec<usize> = tree.node(tree.block_node(b)).label.iter().map(|m| m + 1).collect();
            if rec.node != label || rec.dims != tree.block_dims(b) {
                return Err(Error::Format(format!("block {b} does not match node {label:?}")));
            }
            if rec.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("block {b} holds non-finite values")));
            }
            let data = rec.data.iter().map(|&v| T::of(v)).collect();
            blocks.push(DenseTensor::from_data(&rec.dims, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        Self::new(tree, blocks)
    }
}

pub(crate) fn block_matrix<T: Scalar>(b: &DenseTensor<T>) -> Matrix<T> {
    let d = b.dims();
    Matrix::from_col_major(d[0] * d[1], d[2], b.data().to_vec()).expect("order-3 block")
}

pub(crate) fn check_blocks<T: Scalar>(tree: &DimensionTree, blocks: &[DenseTensor<T>]) -> Result<()> {
    if blocks.len() != tree.num_blocks() {
        return shape_err(format!("{} blocks for {} internal nodes", blocks.len(), tree.num_blocks()));
    }
    for (b, blk) in blocks.iter().enumerate() {
        if blk.dims() != tree.block_dims(b) {
            return shape_err(format!("block {b} has dims {:?}, expected {:?}", blk.dims(), tree.block_dims(b)));
        }
    }
    Ok(())
}

pub(crate) fn gauge_blocks<T: Scalar>(
    tree: &DimensionTree,
    blocks: &[DenseTensor<T>],
    g: &GaugeElement<T>,
) -> Result<Vec<DenseTensor<T>>> {
    g.check(tree)?;
    let mut out = Vec::with_capacity(blocks.len());
    for (b, blk) in blocks.iter().enumerate() {
        let (l, r) = tree.block_children(b);
        let mut cur = blk.clone();
        if let Some(a) = tree.block_of(l).and_then(|lb| g.mats[lb].as_ref()) {
            cur = mode_product(&a.transpose(), 0, &cur)?;
        }
        if let Some(a) = tree.block_of(r).and_then(|rb| g.mats[rb].as_ref()) {
            cur = mode_product(&a.transpose(), 1, &cur)?;
        }
        if let Some(a) = g.mats[b].as_ref() {
            cur = mode_product(&a.transpose(), 2, &cur)?;
        }
        out.push(cur);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankFailure {
    /// One-based node label.
    pub label: Vec<usize>,
    pub matricization: &'static str,
    pub rank: usize,
    pub required: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FullRankReport {
    pub failures: Vec<RankFailure>,
}

impl FullRankReport {
    pub fn is_full_rank(&self) -> bool {
        self.failures.is_empty()
    }
}

impl std::fmt::Display for FullRankReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.failures.is_empty() {
            return write!(f, "full rank");
        }
        for (i, fail) in self.failures.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "node {:?} {} rank {} < {}", fail.label, fail.matricization, fail.rank, fail.required)?;
        }
        Ok(())
    }
}

/// Element `(A_t)_{t in J^-}` of the gauge group; the root slot stays `None`.
#[derive(Clone, Debug)]
pub struct GaugeElement<T> {
    mats: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> GaugeElement<T> {
    pub fn identity(tree: &DimensionTree) -> Self {
        let root = tree.root_block();
        let mats = (0..tree.num_blocks())
            .map(|b| (b != root).then(|| Matrix::identity(tree.block_dims(b)[2])))
            .collect();
        Self { mats }
    }

    /// Haar-like random orthogonal matrices (QR of Gaussian matrices).
    pub fn random(tree: &DimensionTree, rng: &mut impl rand::Rng) -> Self {
        let root = tree.root_block();
        let mats = (0..tree.num_blocks())
            .map(|b| {
                (b != root).then(|| {
                    let k = tree.block_dims(b)[2];
                    let g = Matrix::from_fn(k, k, |_, _| {
                        let v: f64 = StandardNormal.sample(rng);
                        T::of(v)
                    });
                    linalg::qr(&g).expect("square").0
                })
            })
            .collect();
        Self { mats }
    }

    /// Builds from explicit matrices, one per non-root block (block order).
    pub fn from_matrices(tree: &DimensionTree, mats: Vec<Matrix<T>>) -> Result<Self> {
        if mats.len() + 1 != tree.num_blocks() {
            return shape_err(format!("{} gauge matrices for {} non-root nodes", mats.len(), tree.num_blocks() - 1));
        }
        let mut slots: Vec<Option<Matrix<T>>> = mats.into_iter().map(Some).collect();
        slots.push(None);
        let g = Self { mats: slots };
        g.check(tree)?;
        for m in g.mats.iter().flatten() {
            if orthonormality_defect(m) > T::of(1e-12) {
                return domain_err("gauge matrix is not orthogonal");
            }
        }
        Ok(g)
    }

    pub fn matrix(&self, block: usize) -> Option<&Matrix<T>> {
        self.mats[block].as_ref()
    }

    /// Elementwise product `(A_t B_t)`, matching `θ(θ(x, A), B) = θ(x, AB)`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if self.mats.len() != other.mats.len() {
            return shape_err("gauge elements of different trees");
        }
        let mats = self
            .mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.matmul(b).map(Some),
                (None, None) => Ok(None),
                _ => shape_err("gauge elements of different trees"),
            })
            .collect::<Result<_>>()?;
        Ok(Self { mats })
    }

    fn check(&self, tree: &DimensionTree) -> Result<()> {
        if self.mats.len() != tree.num_blocks() {
            return shape_err("gauge element does not match tree");
        }
        for (b, m) in self.mats.iter().enumerate() {
            let k = tree.block_dims(b)[2];
            match m {
                Some(m) if m.rows() != k || m.cols() != k => {
                    return shape_err(format!("gauge matrix {b} is {}x{}, expected {k}x{k}", m.rows(), m.cols()));
                }
                None if b != tree.root_block() => return shape_err("missing gauge matrix"),
                Some(_) if b == tree.root_block() => return shape_err("root carries no gauge matrix"),
                _ => {}
            }
        }
        Ok(())
    }
}

/// Dense tensor `X` of shape `(n_1, ..., n_d, K)` from the `U_t` recursion.
///
/// Verification oracle only; refuses to build more than `cap` entries.
pub fn phi_dense<T: Scalar>(x: &TtnParam<T>, cap: usize) -> Result<DenseTensor<T>> {
    let tree = x.tree();
    let mut dims = tree.external_dims();
    dims.push(tree.label_dim());
    let entries = dims.iter().fold(1u128, |acc, &n| acc.saturating_mul(n as u128));
    if entries > cap as u128 {
        return Err(Error::OracleCap { entries, cap });
    }
    let mut u: Vec<Option<Matrix<T>>> = vec![None; tree.nodes().len()];
    for (id, node) in tree.nodes().iter().enumerate() {
        if node.children.is_none() {
            u[id] = Some(Matrix::identity(node.dim));
        }
    }
    for b in 0..tree.num_blocks() {
        let id = tree.block_node(b);
        let (l, r) = tree.block_children(b);
        let ul = u[l].take().expect("children computed first");
        let ur = u[r].take().expect("children computed first");
        let t1 = mode_product(&ul, 0, x.block(b))?;
        let t2 = mode_product(&ur, 1, &t1)?;
        let d = t2.dims().to_vec();
        u[id] = Some(Matrix::from_col_major(d[0] * d[1], d[2], t2.into_data())?);
    }
    let root = u[tree.root()].take().expect("root computed");
    DenseTensor::from_data(&dims, root.into_data())
}

const CHECKPOINT_FORMAT: &str = "ttn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// On-disk parameter container (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layout: String,
    pub tree: TreeSpec,
    pub blocks: Vec<BlockRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    /// One-based label of the owning node.
    pub node: Vec<usize>,
    pub dims: [usize; 3],
    pub data: Vec<f64>,
}
