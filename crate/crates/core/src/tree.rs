//! Labeled binary dimension trees.
//!
//! Nodes are stored in post-order, so internal nodes appear children first.
//! Every internal node owns one parameter block; the block index of a node is
//! its rank among internal nodes in that order, which makes iterating blocks
//! front to back a leaves-up traversal and back to front a root-down one.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{domain_err, Error, Result};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    /// Zero-based modes covered by the node, ascending.
    pub label: Vec<usize>,
    pub parent: Option<NodeId>,
    pub children: Option<(NodeId, NodeId)>,
    /// `k_t`: external dimension at leaves, bond dimension inside, `K` at the root.
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Traversal {
    /// Children before parents.
    LeavesUp,
    /// Parents before children.
    RootDown,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimensionTree {
    nodes: Vec<Node>,
    root: NodeId,
    leaf_of_mode: Vec<NodeId>,
    internal: Vec<NodeId>,
    block_of_node: Vec<Option<usize>>,
}

impl DimensionTree {
    /// Balanced tree over `d = external_dims.len()` modes: each internal node
    /// splits its contiguous range with the left part of size `ceil(|t|/2)`,
    /// bond dimensions are `min(n_t, k_max)` and the root carries `label_dim`.
    pub fn build_balanced(external_dims: &[usize], label_dim: usize, k_max: usize) -> Result<Self> {
        let d = external_dims.len();
        if d < 2 {
            return domain_err(format!("dimension tree needs at least 2 leaves, got {d}"));
        }
        if external_dims.contains(&0) || label_dim == 0 || k_max == 0 {
            return domain_err("all dimensions and the bond cap must be positive");
        }
        let mut nodes = Vec::with_capacity(2 * d - 1);
        let root = build_range(&mut nodes, external_dims, 0, d, k_max);
        nodes[root].dim = label_dim;
        Self::from_nodes(nodes, root)
    }

    /// Builds a tree from a nested description, validating every invariant.
    pub fn from_spec(spec: &TreeSpec) -> Result<Self> {
        let mut nodes = Vec::new();
        let root = push_spec(&mut nodes, spec)?;
        Self::from_nodes(nodes, root)
    }

    fn from_nodes(nodes: Vec<Node>, root: NodeId) -> Result<Self> {
        let d = nodes[root].label.len();
        if nodes[root].label != (0..d).collect::<Vec<_>>() {
            return Err(Error::Domain("root label must be the full mode set".into()));
        }
        if d < 2 {
            return domain_err("dimension tree needs at least 2 leaves");
        }
        let mut leaf_of_mode = vec![usize::MAX; d];
        let mut internal = Vec::new();
        let mut block_of_node = vec![None; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            if node.dim == 0 {
                return domain_err(format!("node {:?} has zero dimension", one_based(&node.label)));
            }
            match node.children {
                None => {
                    if node.label.len() != 1 {
                        return domain_err(format!("leaf label {:?} is not a singleton", one_based(&node.label)));
                    }
                    let m = node.label[0];
                    if m >= d || leaf_of_mode[m] != usize::MAX {
                        return domain_err(format!("leaf {} is out of range or repeated", m + 1));
                    }
                    leaf_of_mode[m] = id;
                }
                Some((l, r)) => {
                    let (ll, rl) = (&nodes[l].label, &nodes[r].label);
                    let ordered = ll.last() < rl.first();
                    let mut union = ll.clone();
                    union.extend(rl);
                    if !ordered || union != node.label {
                        return domain_err(format!(
                            "children {:?} and {:?} are no ordered partition of {:?}",
                            one_based(ll),
                            one_based(rl),
                            one_based(&node.label)
                        ));
                    }
                    if l >= id || r >= id {
                        return domain_err("nodes must be stored children first");
                    }
                    block_of_node[id] = Some(internal.len());
                    internal.push(id);
                }
            }
        }
        if leaf_of_mode.contains(&usize::MAX) {
            return domain_err("every mode needs exactly one leaf");
        }
        if internal.last() != Some(&root) {
            return domain_err("root must be the last internal node");
        }
        Ok(Self { nodes, root, leaf_of_mode, internal, block_of_node })
    }

    pub fn num_modes(&self) -> usize {
        self.leaf_of_mode.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.nodes[id].dim
    }

    pub fn label_dim(&self) -> usize {
        self.nodes[self.root].dim
    }

    pub fn external_dims(&self) -> Vec<usize> {
        self.leaf_of_mode.iter().map(|&id| self.nodes[id].dim).collect()
    }

    pub fn leaf(&self, mode: usize) -> NodeId {
        self.leaf_of_mode[mode]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id].children.is_none()
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id].children
    }

    /// Internal nodes `J` in leaves-up order; position equals block index.
    pub fn internal_nodes(&self) -> &[NodeId] {
        &self.internal
    }

    pub fn num_blocks(&self) -> usize {
        self.internal.len()
    }

    pub fn block_of(&self, id: NodeId) -> Option<usize> {
        self.block_of_node[id]
    }

    pub fn block_node(&self, block: usize) -> NodeId {
        self.internal[block]
    }

    pub fn root_block(&self) -> usize {
        self.internal.len() - 1
    }

    /// Node ids of the children of an internal node.
    pub fn block_children(&self, block: usize) -> (NodeId, NodeId) {
        self.nodes[self.internal[block]].children.expect("internal node has children")
    }

    /// `(k_{t_L}, k_{t_R}, k_t)` of a block.
    pub fn block_dims(&self, block: usize) -> [usize; 3] {
        let id = self.internal[block];
        let (l, r) = self.nodes[id].children.expect("internal node has children");
        [self.nodes[l].dim, self.nodes[r].dim, self.nodes[id].dim]
    }

    /// Parent block and which slot (0 = left, 1 = right) the node occupies there.
    pub fn parent_slot(&self, id: NodeId) -> Option<(usize, usize)> {
        let p = self.nodes[id].parent?;
        let (l, _) = self.nodes[p].children.expect("parent is internal");
        Some((self.block_of_node[p].expect("parent is internal"), if l == id { 0 } else { 1 }))
    }

    /// Whether a block belongs to `L`, i.e. both children are leaves.
    pub fn is_leaf_pair(&self, block: usize) -> bool {
        let (l, r) = self.block_children(block);
        self.is_leaf(l) && self.is_leaf(r)
    }

    pub fn traverse(&self, order: Traversal) -> Vec<NodeId> {
        match order {
            Traversal::LeavesUp => self.internal.clone(),
            Traversal::RootDown => self.internal.iter().rev().copied().collect(),
        }
    }

    /// `N = sum_t k_{t_L} k_{t_R} k_t`.
    pub fn param_count(&self) -> usize {
        (0..self.num_blocks()).map(|b| self.block_dims(b).iter().product::<usize>()).sum()
    }

    /// `sum_{t in J^-} k_t (k_t + 1) / 2`, the Stiefel constraint count.
    fn non_root_sum(&self, f: impl Fn(usize) -> usize) -> usize {
        let root = self.root_block();
        (0..self.num_blocks()).filter(|&b| b != root).map(|b| f(self.block_dims(b)[2])).sum()
    }

    pub fn tangent_dim(&self) -> usize {
        self.param_count() - self.non_root_sum(|k| k * (k + 1) / 2)
    }

    pub fn vertical_dim(&self) -> usize {
        self.non_root_sum(|k| k * (k - 1) / 2)
    }

    pub fn horizontal_dim(&self) -> usize {
        self.tangent_dim() - self.vertical_dim()
    }

    pub fn to_spec(&self) -> TreeSpec {
        self.spec_of(self.root)
    }

    fn spec_of(&self, id: NodeId) -> TreeSpec {
        let node = &self.nodes[id];
        TreeSpec {
            label: one_based(&node.label),
            dim: node.dim,
            children: node.children.map_or_else(Vec::new, |(l, r)| vec![self.spec_of(l), self.spec_of(r)]),
        }
    }

    /// Nested text form, e.g. `{1,2}:3({1}:2 {2}:2)`, with one-based labels.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_text(self.root, &mut out);
        out
    }

    fn write_text(&self, id: NodeId, out: &mut String) {
        let node = &self.nodes[id];
        let label: Vec<String> = node.label.iter().map(|m| (m + 1).to_string()).collect();
        let _ = write!(out, "{{{}}}:{}", label.join(","), node.dim);
        if let Some((l, r)) = node.children {
            out.push('(');
            self.write_text(l, out);
            out.push(' ');
            self.write_text(r, out);
            out.push(')');
        }
    }
}

fn one_based(label: &[usize]) -> Vec<usize> {
    label.iter().map(|m| m + 1).collect()
}

fn build_range(nodes: &mut Vec<Node>, ext: &[usize], lo: usize, hi: usize, k_max: usize) -> NodeId {
    if hi - lo == 1 {
        nodes.push(Node { label: vec![lo], parent: None, children: None, dim: ext[lo] });
        return nodes.len() - 1;
    }
    let mid = lo + (hi - lo).div_ceil(2);
    let l = build_range(nodes, ext, lo, mid, k_max);
    let r = build_range(nodes, ext, mid, hi, k_max);
    let n_t = ext[lo..hi].iter().fold(1usize, |acc, &n| acc.saturating_mul(n));
    nodes.push(Node { label: (lo..hi).collect(), parent: None, children: Some((l, r)), dim: n_t.min(k_max) });
    let id = nodes.len() - 1;
    nodes[l].parent = Some(id);
    nodes[r].parent = Some(id);
    id
}

/// Serializable nested tree description with one-based labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub label: Vec<usize>,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<TreeSpec>,
}

fn push_spec(nodes: &mut Vec<Node>, spec: &TreeSpec) -> Result<NodeId> {
    if spec.label.contains(&0) {
        return domain_err("tree spec labels are one-based");
    }
    let label: Vec<usize> = spec.label.iter().map(|m| m - 1).collect();
    let children = match spec.children.as_slice() {
        [] => None,
        [l, r] => {
            let li = push_spec(nodes, l)?;
            let ri = push_spec(nodes, r)?;
            Some((li, ri))
        }
        other => return domain_err(format!("node with {} children; binary trees only", other.len())),
    };
    nodes.push(Node { label, parent: None, children, dim: spec.dim });
    let id = nodes.len() - 1;
    if let Some((l, r)) = children {
        nodes[l].parent = Some(id);
        nodes[r].parent = Some(id);
    }
    Ok(id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_structure(tree: &DimensionTree) {
        let d = tree.num_modes();
        assert_eq!(tree.node(tree.root()).label, (0..d).collect::<Vec<_>>());
        for (id, node) in tree.nodes().iter().enumerate() {
            assert!(node.dim >= 1);
            match node.children {
                None => assert_eq!(node.label.len(), 1),
                Some((l, r)) => {
                    let (ll, rl) = (&tree.node(l).label, &tree.node(r).label);
                    assert!(ll.last().unwrap() < rl.first().unwrap());
                    let mut u = ll.clone();
                    u.extend(rl);
                    assert_eq!(&u, &node.label);
                    assert_eq!(tree.node(l).parent, Some(id));
                }
            }
        }
        assert_eq!(tree.num_blocks(), d - 1);
        let pairs = (0..tree.num_blocks()).filter(|&b| tree.is_leaf_pair(b)).count();
        let by_label = tree.internal_nodes().iter().filter(|&&id| tree.node(id).label.len() == 2).count();
        assert_eq!(pairs, by_label);
    }

    #[test]
    fn two_leaves_single_root() {
        let t = DimensionTree::build_balanced(&[2, 2], 3, 8).unwrap();
        assert_eq!(t.num_blocks(), 1);
        assert_eq!(t.block_dims(0), [2, 2, 3]);
        assert_eq!(t.traverse(Traversal::LeavesUp), t.traverse(Traversal::RootDown));
        assert_eq!(t.param_count(), 12);
        check_structure(&t);
    }

    #[test]
    fn four_leaves_bonds() {
        let t = DimensionTree::build_balanced(&[2, 2, 2, 2], 3, 8).unwrap();
        check_structure(&t);
        let order = t.traverse(Traversal::LeavesUp);
        let labels: Vec<_> = order.iter().map(|&id| t.node(id).label.clone()).collect();
        assert_eq!(labels, vec![vec![0, 1], vec![2, 3], vec![0, 1, 2, 3]]);
        assert_eq!(t.block_dims(0), [2, 2, 4]);
        assert_eq!(t.block_dims(1), [2, 2, 4]);
        assert_eq!(t.block_dims(2), [4, 4, 3]);
    }

    #[test]
    fn digits_tree_sizes() {
        let t = DimensionTree::build_balanced(&[2; 64], 10, 8).unwrap();
        check_structure(&t);
        assert_eq!(t.num_blocks(), 63);
        for &id in t.internal_nodes() {
            if id != t.root() {
                let n = t.node(id).label.len();
                assert_eq!(t.dim(id), (1usize << n).min(8));
            }
        }
        // 32 * (2*2*4) + 16 * (4*4*8) + 8 * (8*8*8) + 4 * 512 + 2 * 512 + 8*8*10
        assert_eq!(t.param_count(), 32 * 16 + 16 * 128 + 8 * 512 + 4 * 512 + 2 * 512 + 640);
        assert_eq!(t.param_count(), 10368);
    }

    #[test]
    fn saturating_products_at_the_root() {
        let t = DimensionTree::build_balanced(&[1000; 64], 2, 5).unwrap();
        check_structure(&t);
        assert_eq!(t.block_dims(t.root_block()), [5, 5, 2]);
    }

    #[test]
    fn odd_leaf_counts_split_ceil_floor() {
        let t = DimensionTree::build_balanced(&[2, 3, 2, 3, 2], 4, 8).unwrap();
        check_structure(&t);
        let (l, r) = t.children(t.root()).unwrap();
        assert_eq!(t.node(l).label, vec![0, 1, 2]);
        assert_eq!(t.node(r).label, vec![3, 4]);
        assert_eq!(t.dim(l), 8);
        assert_eq!(t.dim(r), 6);
    }

    #[test]
    fn traversal_orders_respect_tree() {
        for d in 2..=16 {
            let t = DimensionTree::build_balanced(&vec![2; d], 3, 4).unwrap();
            check_structure(&t);
            let up = t.traverse(Traversal::LeavesUp);
            let down = t.traverse(Traversal::RootDown);
            let pos = |order: &[NodeId], id| order.iter().position(|&x| x == id);
            for &id in &up {
                let (l, r) = t.children(id).unwrap();
                for c in [l, r] {
                    if !t.is_leaf(c) {
                        assert!(pos(&up, c) < pos(&up, id));
                        assert!(pos(&down, c) > pos(&down, id));
                    }
                }
            }
        }
    }

    #[test]
    fn param_count_identity() {
        for d in 2..=64 {
            let t = DimensionTree::build_balanced(&vec![2; d], 10, 8).unwrap();
            check_structure(&t);
            let n: usize = t
                .internal_nodes()
                .iter()
                .map(|&id| {
                    let (l, r) = t.children(id).unwrap();
                    t.dim(l) * t.dim(r) * t.dim(id)
                })
                .sum();
            assert_eq!(n, t.param_count());
            assert_eq!(t.tangent_dim(), t.horizontal_dim() + t.vertical_dim());
        }
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(DimensionTree::build_balanced(&[2], 3, 8).is_err());
        assert!(DimensionTree::build_balanced(&[2, 0], 3, 8).is_err());
        assert!(DimensionTree::build_balanced(&[2, 2], 3, 0).is_err());
    }

    #[test]
    fn text_and_spec_round_trip() {
        let t = DimensionTree::build_balanced(&[2, 2, 2], 3, 8).unwrap();
        assert_eq!(t.to_text(), "{1,2,3}:3({1,2}:4({1}:2 {2}:2) {3}:2)");
        let spec = t.to_spec();
        assert_eq!(DimensionTree::from_spec(&spec).unwrap(), t);
        let mut bad = spec.clone();
        bad.children.swap(0, 1);
        assert!(DimensionTree::from_spec(&bad).is_err());
        let mut bad = spec;
        bad.label = vec![1, 2];
        assert!(DimensionTree::from_spec(&bad).is_err());
    }
}
