//! Boosted decision trees.
//!
//! Every node carries its own `(w_l, w_r)`. A point follows the usual path
//! and the value comes from the deepest node it reaches: `w_l` if it leaves
//! through an empty left slot, `w_l + w_r` through an empty right slot.

mod build;

pub use build::{build_robust_tree, prune_tree, training_bound, TreeFitMode, TreeParams, TreeRoundOutcome, TreeTrainer, TreeTrainerParams};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ModelError};
use crate::loss::LossKind;
use crate::stumps::CertResult;
use crate::MarginModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub coord: usize,
    pub threshold: f64,
    pub w_l: f64,
    pub w_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<Box<TreeNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<Box<TreeNode>>,
}

impl TreeNode {
    pub fn leaf(coord: usize, threshold: f64, w_l: f64, w_r: f64) -> Self {
        TreeNode {
            coord,
            threshold,
            w_l,
            w_r,
            left: None,
            right: None,
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a TreeNode)) {
        f(self);
        if let Some(l) = &self.left {
            l.visit(f);
        }
        if let Some(r) = &self.right {
            r.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut TreeNode)) {
        f(self);
        if let Some(l) = &mut self.left {
            l.visit_mut(f);
        }
        if let Some(r) = &mut self.right {
            r.visit_mut(f);
        }
    }

    fn depth(&self) -> usize {
        1 + self
            .left
            .as_ref()
            .map_or(0, |n| n.depth())
            .max(self.right.as_ref().map_or(0, |n| n.depth()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub root: TreeNode,
}

impl Tree {
    pub fn new(root: TreeNode) -> Self {
        Tree { root }
    }

    /// Number of nodes on the longest path; a single split has depth 1.
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Number of empty child slots, i.e. terminal values.
    pub fn n_leaves(&self) -> usize {
        let mut n = 0;
        self.root.visit(&mut |node| {
            n += usize::from(node.left.is_none()) + usize::from(node.right.is_none());
        });
        n
    }

    pub fn n_nodes(&self) -> usize {
        let mut n = 0;
        self.root.visit(&mut |_| n += 1);
        n
    }

    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.visit(&mut |node| out.push(node));
        out
    }

    /// All terminal values.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.visit(&mut |node| {
            if node.left.is_none() {
                out.push(node.w_l);
            }
            if node.right.is_none() {
                out.push(node.w_l + node.w_r);
            }
        });
        out
    }

    pub fn scale(&mut self, a: f64) {
        self.root.visit_mut(&mut |node| {
            node.w_l *= a;
            node.w_r *= a;
        });
    }

    pub fn scaled(&self, a: f64) -> Tree {
        let mut t = self.clone();
        t.scale(a);
        t
    }

    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            if x[node.coord] >= node.threshold {
                match &node.right {
                    Some(n) => node = n,
                    None => return node.w_l + node.w_r,
                }
            } else {
                match &node.left {
                    Some(n) => node = n,
                    None => return node.w_l,
                }
            }
        }
    }

    /// Minimum of `y f(x + d)` over `|d|_inf <= eps` by visiting every
    /// terminal slot whose region meets the box. Along a path the box is
    /// narrowed per coordinate, so a coordinate reused deeper in the tree
    /// cannot revive a region the path already excluded.
    pub fn min_margin(&self, x: &[f64], y: f64, eps: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut path: Vec<(usize, Interval)> = Vec::with_capacity(16);
        min_rec(&self.root, x, y, eps, &mut path, &mut best);
        best
    }
}

/// `[lo, hi]`, or `[lo, hi)` when `open`.
#[derive(Clone, Copy)]
struct Interval {
    lo: f64,
    hi: f64,
    open: bool,
}

fn min_rec(n: &TreeNode, x: &[f64], y: f64, eps: f64, path: &mut Vec<(usize, Interval)>, best: &mut f64) {
    let j = n.coord;
    let iv = path
        .iter()
        .rev()
        .find(|(k, _)| *k == j)
        .map(|&(_, iv)| iv)
        .unwrap_or(Interval {
            lo: x[j] - eps,
            hi: x[j] + eps,
            open: false,
        });
    let b = n.threshold;
    if iv.lo < b {
        match &n.left {
            Some(c) => {
                let narrowed = if b <= iv.hi { Interval { hi: b, open: true, ..iv } } else { iv };
                path.push((j, narrowed));
                min_rec(c, x, y, eps, path, best);
                path.pop();
            }
            None => *best = best.min(y * n.w_l),
        }
    }
    if b < iv.hi || (b == iv.hi && !iv.open) {
        match &n.right {
            Some(c) => {
                path.push((j, Interval { lo: iv.lo.max(b), ..iv }));
                min_rec(c, x, y, eps, path, best);
                path.pop();
            }
            None => *best = best.min(y * (n.w_l + n.w_r)),
        }
    }
}

pub fn tree_min_margin(tree: &Tree, x: &[f64], y: f64, eps: f64) -> f64 {
    tree.min_margin(x, y, eps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    pub trees: Vec<Tree>,
    n_features: usize,
    pub loss_kind: LossKind,
    pub eps_trained: f64,
    pub w_max: f64,
    pub shrinkage: f64,
}

impl TreeEnsemble {
    pub fn new(n_features: usize, loss_kind: LossKind, eps_trained: f64, w_max: f64, shrinkage: f64) -> Self {
        TreeEnsemble {
            trees: Vec::new(),
            n_features,
            loss_kind,
            eps_trained,
            w_max,
            shrinkage,
        }
    }

    /// Validates split coordinates against `n_features`.
    pub fn from_trees(
        n_features: usize,
        trees: Vec<Tree>,
        loss_kind: LossKind,
        eps_trained: f64,
        w_max: f64,
        shrinkage: f64,
    ) -> Result<Self, ModelError> {
        for t in &trees {
            if let Some(bad) = t.nodes().iter().find(|n| n.coord >= n_features) {
                return Err(ModelError::DimensionMismatch {
                    expected: n_features,
                    found: bad.coord + 1,
                });
            }
        }
        Ok(TreeEnsemble {
            trees,
            n_features,
            loss_kind,
            eps_trained,
            w_max,
            shrinkage,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn push(&mut self, t: Tree) {
        self.trees.push(t);
    }

    pub fn negated(&self) -> TreeEnsemble {
        TreeEnsemble {
            trees: self.trees.iter().map(|t| t.scaled(-1.0)).collect(),
            ..self.clone()
        }
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum()
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(self.n_features, x)?;
        Ok(self.score(x))
    }

    /// Tree-wise lower bound on the minimum margin.
    pub fn bound_margin(&self, x: &[f64], y: f64, eps: f64) -> f64 {
        self.trees.iter().map(|t| t.min_margin(x, y, eps)).sum()
    }

    pub fn certify_bound(&self, x: &[f64], y: f64, eps: f64) -> Result<CertResult, ModelError> {
        check_dim(self.n_features, x)?;
        let m = self.bound_margin(x, y, eps);
        Ok(CertResult {
            margin_min: m,
            robust: m > 0.0,
            delta_star: vec![0.0; self.n_features],
            exact: false,
        })
    }
}

impl MarginModel for TreeEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f64]) -> f64 {
        TreeEnsemble::score(self, x)
    }

    fn split_points(&self) -> Vec<(usize, f64)> {
        self.trees
            .iter()
            .flat_map(|t| t.nodes().into_iter().map(|n| (n.coord, n.threshold)))
            .collect()
    }
}

pub fn certify_trees_bound(ens: &TreeEnsemble, x: &[f64], y: f64, eps: f64) -> Result<CertResult, ModelError> {
    ens.certify_bound(x, y, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump_tree(b: f64, w_l: f64, w_r: f64) -> Tree {
        Tree::new(TreeNode::leaf(0, b, w_l, w_r))
    }

    #[test]
    fn min_margin_examples() {
        let t = stump_tree(0.5, -1.0, 2.0);
        assert_eq!(t.min_margin(&[0.9], 1.0, 0.3), 1.0);
        assert_eq!(t.min_margin(&[0.9], 1.0, 0.5), -1.0);
    }

    #[test]
    fn deepest_node_wins() {
        let mut root = TreeNode::leaf(0, 0.5, 0.3, 0.4);
        root.right = Some(Box::new(TreeNode::leaf(1, 0.5, -0.2, 0.5)));
        let t = Tree::new(root);
        assert_eq!(t.predict(&[0.2, 0.9]), 0.3);
        assert_eq!(t.predict(&[0.7, 0.2]), -0.2);
        assert_eq!(t.predict(&[0.7, 0.9]), 0.3);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.n_leaves(), 3);
        let mut vals = t.leaf_values();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![-0.2, 0.3, 0.3]);
    }

    #[test]
    fn bound_and_dimension() {
        let e = TreeEnsemble::from_trees(1, vec![stump_tree(0.5, -1.0, 2.0)], LossKind::Exponential, 0.3, 1.0, 1.0).unwrap();
        let c = e.certify_bound(&[0.9], 1.0, 0.3).unwrap();
        assert!(c.robust && !c.exact);
        assert!(matches!(e.certify_bound(&[0.9, 0.1], 1.0, 0.3), Err(ModelError::DimensionMismatch { .. })));
        assert!(TreeEnsemble::from_trees(1, vec![Tree::new(TreeNode::leaf(3, 0.5, 0.0, 0.0))], LossKind::Exponential, 0.0, 1.0, 1.0).is_err());
    }
}
