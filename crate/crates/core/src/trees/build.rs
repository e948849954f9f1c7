use ndarray::Array2;

use super::{Tree, TreeEnsemble, TreeNode};
use crate::attack::{make_adversarial_batch, AttackConfig, WarmStart};
use crate::error::ModelError;
use crate::loss::LossKind;
use crate::split::{best_split, column_orders, NodeView, ScanParams};
use crate::stumps::round_seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub eps: f64,
    pub loss_kind: LossKind,
    pub w_max: f64,
    pub tol: f64,
}

fn grow(
    x: &Array2<f64>,
    y: &[f64],
    offsets: &[f64],
    orders: &[Vec<u32>],
    depth: usize,
    p: &TreeParams,
    min_leaf: usize,
) -> Option<TreeNode> {
    let view = NodeView::new(x, y, offsets, orders);
    if view.len() == 0 {
        return None;
    }
    let sp = ScanParams {
        eps: p.eps,
        kind: p.loss_kind,
        w_max: p.w_max,
        tol: p.tol,
        min_leaf,
    };
    let s = best_split(&view, &sp)?;
    let mut node = TreeNode::leaf(s.coord, s.threshold, s.w_l, s.w_r);
    if depth < p.max_depth {
        let (j, b) = (s.coord, s.threshold);
        let upper = b + p.eps;
        let lower = b - p.eps;
        let child = |keep: &dyn Fn(f64) -> bool| -> Option<Box<TreeNode>> {
            let sub: Vec<Vec<u32>> = orders
                .iter()
                .map(|o| o.iter().copied().filter(|&i| keep(x[[i as usize, j]])).collect())
                .collect();
            grow(x, y, offsets, &sub, depth + 1, p, p.min_samples_leaf).map(Box::new)
        };
        node.left = child(&|v| v <= upper);
        node.right = child(&|v| v >= lower);
    }
    Some(node)
}

pub(crate) fn build_with_orders(
    x: &Array2<f64>,
    y: &[f64],
    offsets: &[f64],
    orders: &[Vec<u32>],
    p: &TreeParams,
) -> Option<Tree> {
    grow(x, y, offsets, orders, 1, p, p.min_samples_leaf.max(1))
        .or_else(|| grow(x, y, offsets, orders, p.max_depth, p, 1))
        .map(Tree::new)
}

/// Greedy tree minimising the worst-case loss of every split given the
/// residual margins `offsets`. Points whose eps-box straddles a threshold
/// are passed to both children. If no root split leaves `min_samples_leaf`
/// points on each side, a single unconstrained split is returned.
pub fn build_robust_tree(x: &Array2<f64>, y: &[f64], offsets: &[f64], p: &TreeParams) -> Option<Tree> {
    let rows: Vec<u32> = (0..x.nrows() as u32).collect();
    let orders = column_orders(x, &rows);
    build_with_orders(x, y, offsets, &orders, p)
}

/// `sum_i L(offsets_i + min-margin of tree at x_i)`.
pub fn training_bound(tree: &Tree, x: &Array2<f64>, y: &[f64], offsets: &[f64], eps: f64, kind: LossKind) -> f64 {
    (0..y.len())
        .map(|i| {
            let row = x.row(i);
            kind.value(offsets[i] + tree.min_margin(row.as_slice().unwrap(), y[i], eps))
        })
        .sum()
}

fn post_order(node: &TreeNode, path: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
    if let Some(l) = &node.left {
        path.push(false);
        post_order(l, path, out);
        path.pop();
    }
    if let Some(r) = &node.right {
        path.push(true);
        post_order(r, path, out);
        path.pop();
    }
    if node.left.is_some() || node.right.is_some() {
        out.push(path.clone());
    }
}

fn at_path<'a>(root: &'a mut TreeNode, path: &[bool]) -> &'a mut TreeNode {
    let mut node = root;
    for &right in path {
        node = if right {
            node.right.as_mut().expect("valid path")
        } else {
            node.left.as_mut().expect("valid path")
        };
    }
    node
}

/// Visits internal nodes bottom-up and turns a node into a leaf whenever the
/// training bound of the whole tree does not increase.
pub fn prune_tree(
    mut tree: Tree,
    x: &Array2<f64>,
    y: &[f64],
    offsets: &[f64],
    eps: f64,
    kind: LossKind,
) -> Tree {
    let mut paths = Vec::new();
    post_order(&tree.root, &mut Vec::new(), &mut paths);
    let mut current = training_bound(&tree, x, y, offsets, eps, kind);
    for path in paths {
        let node = at_path(&mut tree.root, &path);
        let saved = (node.left.take(), node.right.take());
        let trial = training_bound(&tree, x, y, offsets, eps, kind);
        if trial <= current {
            current = trial;
        } else {
            let node = at_path(&mut tree.root, &path);
            node.left = saved.0;
            node.right = saved.1;
        }
    }
    tree
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TreeFitMode {
    Plain,
    Adversarial,
    RobustBound,
}

#[derive(Clone, Debug)]
pub struct TreeTrainerParams {
    pub mode: TreeFitMode,
    pub tree: TreeParams,
    pub shrinkage: f64,
    pub prune: bool,
    pub attack: AttackConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeRoundOutcome {
    pub added: bool,
    /// The root-stump fallback replaced the pruned tree.
    pub fallback: bool,
    /// Training objective after the round.
    pub objective: f64,
}

/// Boosting state for a tree ensemble on a fixed training set.
pub struct TreeTrainer<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    params: TreeTrainerParams,
    ens: TreeEnsemble,
    orders: Vec<Vec<u32>>,
    /// Robust mode: tree-wise minima. Otherwise clean margins.
    offsets: Vec<f64>,
    warm: WarmStart,
    rounds: usize,
}

impl<'a> TreeTrainer<'a> {
    pub fn new(x: &'a Array2<f64>, y: &'a [f64], params: TreeTrainerParams) -> Result<Self, ModelError> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(ModelError::InvalidConfig("training set is empty or ragged".into()));
        }
        if params.tree.max_depth == 0 {
            return Err(ModelError::InvalidConfig("max_depth must be at least 1".into()));
        }
        if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
            return Err(ModelError::InvalidConfig("shrinkage must lie in (0, 1]".into()));
        }
        let eps = match params.mode {
            TreeFitMode::Plain => 0.0,
            _ => params.tree.eps,
        };
        let ens = TreeEnsemble::new(x.ncols(), params.tree.loss_kind, eps, params.tree.w_max, params.shrinkage);
        let rows: Vec<u32> = (0..x.nrows() as u32).collect();
        let orders = match params.mode {
            TreeFitMode::Adversarial => Vec::new(),
            _ => column_orders(x, &rows),
        };
        Ok(TreeTrainer {
            x,
            y,
            params,
            ens,
            orders,
            offsets: vec![0.0; x.nrows()],
            warm: WarmStart::default(),
            rounds: 0,
        })
    }

    pub fn ensemble(&self) -> &TreeEnsemble {
        &self.ens
    }

    pub fn into_ensemble(self) -> TreeEnsemble {
        self.ens
    }

    fn eval_eps(&self) -> f64 {
        match self.params.mode {
            TreeFitMode::RobustBound => self.params.tree.eps,
            _ => 0.0,
        }
    }

    pub fn objective(&self) -> f64 {
        let kind = self.params.tree.loss_kind;
        self.offsets.iter().map(|&m| kind.value(m)).sum()
    }

    fn contributions(&self, tree: &Tree) -> Vec<f64> {
        let eps = self.eval_eps();
        (0..self.y.len())
            .map(|i| {
                let row = self.x.row(i);
                let x = row.as_slice().unwrap();
                if self.params.mode == TreeFitMode::RobustBound {
                    tree.min_margin(x, self.y[i], eps)
                } else {
                    self.y[i] * tree.predict(x)
                }
            })
            .collect()
    }

    fn candidate(&mut self) -> Option<Tree> {
        let p = &self.params;
        match p.mode {
            TreeFitMode::RobustBound => {
                let tree = build_with_orders(self.x, self.y, &self.offsets, &self.orders, &p.tree)?;
                Some(if p.prune {
                    prune_tree(tree, self.x, self.y, &self.offsets, p.tree.eps, p.tree.loss_kind)
                } else {
                    tree
                })
            }
            TreeFitMode::Plain => {
                let tp = TreeParams { eps: 0.0, ..p.tree.clone() };
                build_with_orders(self.x, self.y, &self.offsets, &self.orders, &tp)
            }
            TreeFitMode::Adversarial => {
                let mut cfg = p.attack.clone();
                cfg.seed = round_seed(cfg.seed, self.rounds);
                let batch = make_adversarial_batch(&self.ens, self.x, self.y, p.tree.eps, &cfg, &mut self.warm);
                let margins: Vec<f64> = (0..batch.y.len())
                    .map(|i| batch.y[i] * self.ens.score(batch.x.row(i).as_slice().unwrap()))
                    .collect();
                let tp = TreeParams { eps: 0.0, ..self.params.tree.clone() };
                build_robust_tree(&batch.x, &batch.y, &margins, &tp)
            }
        }
    }

    /// Fits, prunes and appends one tree scaled by the shrinkage. If the
    /// training objective would grow, the root split alone is tried, and
    /// failing that the round is a no-op.
    pub fn round(&mut self) -> TreeRoundOutcome {
        let before = self.objective();
        let cand = self.candidate();
        self.rounds += 1;
        let kind = self.params.tree.loss_kind;
        let Some(mut tree) = cand else {
            return TreeRoundOutcome {
                added: false,
                fallback: false,
                objective: before,
            };
        };
        tree.scale(self.params.shrinkage);
        let guarded = self.params.mode != TreeFitMode::Adversarial;
        let try_tree = |t: &Tree| -> (Vec<f64>, f64) {
            let c = self.contributions(t);
            let v = self.offsets.iter().zip(&c).map(|(o, m)| kind.value(o + m)).sum();
            (c, v)
        };
        let (mut contrib, mut after) = try_tree(&tree);
        let mut fallback = false;
        if guarded && after > before {
            let mut root = tree.root.clone();
            root.left = None;
            root.right = None;
            let stump = Tree::new(root);
            let (c, v) = try_tree(&stump);
            if v > before {
                return TreeRoundOutcome {
                    added: false,
                    fallback: false,
                    objective: before,
                };
            }
            tree = stump;
            contrib = c;
            after = v;
            fallback = true;
        }
        for (o, m) in self.offsets.iter_mut().zip(&contrib) {
            *o += m;
        }
        self.ens.push(tree);
        if !guarded {
            after = self.objective();
        }
        TreeRoundOutcome {
            added: true,
            fallback,
            objective: after,
        }
    }
}
