mod common;

use ndarray::{array, Array2};
use rand::Rng;

use common::*;
use robust_boost::attack::AttackConfig;
use robust_boost::loss::LossKind;
use robust_boost::stumps::{StumpFitMode, StumpTrainer, TrainerParams};
use robust_boost::trees::{
    build_robust_tree, prune_tree, tree_min_margin, training_bound, Tree, TreeEnsemble, TreeFitMode, TreeNode,
    TreeParams, TreeTrainer, TreeTrainerParams,
};

fn tree_params(depth: usize, eps: f64) -> TreeParams {
    TreeParams {
        max_depth: depth,
        min_samples_leaf: 1,
        eps,
        loss_kind: LossKind::Exponential,
        w_max: 1.0,
        tol: 1e-10,
    }
}

#[test]
fn depth_one_examples() {
    let t = Tree::new(TreeNode::leaf(0, 0.5, -1.0, 2.0));
    assert_eq!(t.predict(&[0.9]), 1.0);
    assert_eq!(t.predict(&[0.1]), -1.0);
    assert_eq!(tree_min_margin(&t, &[0.9], 1.0, 0.3), 1.0);
    assert_eq!(tree_min_margin(&t, &[0.9], 1.0, 0.5), -1.0);
}

#[test]
fn deepest_node_decides() {
    let mut root = TreeNode::leaf(0, 0.5, 0.25, 0.5);
    root.right = Some(Box::new(TreeNode::leaf(1, 0.5, -1.0, 0.5)));
    let t = Tree::new(root);
    assert_eq!(t.predict(&[0.2, 0.9]), 0.25);
    assert_eq!(t.predict(&[0.7, 0.2]), -1.0);
    assert_eq!(t.predict(&[0.7, 0.9]), -0.5);
    assert_eq!((t.depth(), t.n_leaves()), (2, 3));
}

#[test]
fn single_tree_minimum_is_exact() {
    let mut r = rng(21);
    for _ in 0..300 {
        let d = r.gen_range(1..4);
        let e = random_trees(&mut r, d, 1, 3);
        let x = random_point(&mut r, d);
        let y = sign(&mut r);
        let eps = radius(&mut r);
        assert_eq!(tree_min_margin(&e.trees[0], &x, y, eps), brute_trees(&e, &x, y, eps));
        assert_eq!(e.trees[0].predict(&x), tree_value(&e.trees[0].root, &x));
    }
}

#[test]
fn ensemble_bound_is_sound_and_monotone() {
    let mut r = rng(22);
    for _ in 0..200 {
        let t = r.gen_range(1..5);
        let e = random_trees(&mut r, 2, t, 3);
        let x = random_point(&mut r, 2);
        let y = sign(&mut r);
        let eps = radius(&mut r);
        let b = e.bound_margin(&x, y, eps);
        assert!(b <= brute_trees(&e, &x, y, eps));
        assert!(b <= y * trees_value(&e, &x));
        assert!(e.bound_margin(&x, y, eps + 0.05) <= b);
    }
}

#[test]
fn xor_corners_are_all_certified_at_depth_two() {
    let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let y = vec![1.0, 1.0, -1.0, -1.0];
    let t = build_robust_tree(&x, &y, &[0.0; 4], &tree_params(2, 0.1)).unwrap();
    for i in 0..4 {
        let row = [x[[i, 0]], x[[i, 1]]];
        assert!(tree_min_margin(&t, &row, y[i], 0.1) > 0.0, "{t:?}");
    }
}

#[test]
fn depth_one_tree_matches_the_bound_stump_round() {
    let (x, y) = toy_noisy(23, 60);
    let eps = 0.05;
    let t = build_robust_tree(&x, &y, &[0.0; 60], &tree_params(1, eps)).unwrap();
    assert_eq!(t.depth(), 1);
    let tree_loss = training_bound(&t, &x, &y, &[0.0; 60], eps, LossKind::Exponential);
    let mut s = StumpTrainer::new(
        &x,
        &y,
        TrainerParams {
            mode: StumpFitMode::Bound,
            eps,
            loss_kind: LossKind::Exponential,
            w_max: 1.0,
            shrinkage: 1.0,
            tol: 1e-10,
            attack: AttackConfig::training(0),
        },
    )
    .unwrap();
    let o = s.round();
    assert!((o.objective - tree_loss).abs() <= 1e-9 * tree_loss, "{} {tree_loss}", o.objective);
}

/// Exponential-loss leaf value with no radius. `off` holds margins, so every
/// point is weighted by `exp(-off)` whatever its label.
fn leaf(rows: &[usize], y: &[f64], off: &[f64], w_max: f64) -> f64 {
    let pos: f64 = rows.iter().filter(|&&i| y[i] > 0.0).map(|&i| (-off[i]).exp()).sum();
    let neg: f64 = rows.iter().filter(|&&i| y[i] < 0.0).map(|&i| (-off[i]).exp()).sum();
    (0.5 * (pos.ln() - neg.ln())).clamp(-w_max, w_max)
}

fn side_loss(rows: &[usize], y: &[f64], off: &[f64], u: f64) -> f64 {
    rows.iter().map(|&i| (-off[i] - y[i] * u).exp()).sum()
}

/// Plain greedy split over midpoints of distinct values: `(coord, b, u_l, u_r)`.
fn greedy_split(x: &Array2<f64>, y: &[f64], off: &[f64], rows: &[usize]) -> Option<(usize, f64, f64, f64)> {
    let mut best: Option<(f64, (usize, f64, f64, f64))> = None;
    for j in 0..x.ncols() {
        let mut vals: Vec<f64> = rows.iter().map(|&i| x[[i, j]]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let b = 0.5 * (w[0] + w[1]);
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, j]] < b);
            let (ul, ur) = (leaf(&l, y, off, 1.0), leaf(&r, y, off, 1.0));
            let loss = side_loss(&l, y, off, ul) + side_loss(&r, y, off, ur);
            if best.as_ref().is_none_or(|(v, _)| loss < *v) {
                best = Some((loss, (j, b, ul, ur)));
            }
        }
    }
    best.map(|(_, s)| s)
}

/// Depth-two training predictions of the independent greedy fitter.
fn greedy_depth_two(x: &Array2<f64>, y: &[f64], off: &[f64]) -> Vec<f64> {
    let all: Vec<usize> = (0..y.len()).collect();
    let (j, b, ul, ur) = greedy_split(x, y, off, &all).unwrap();
    let mut pred = vec![0.0; y.len()];
    let (l, r): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[[i, j]] < b);
    for (side, u) in [(l, ul), (r, ur)] {
        match greedy_split(x, y, off, &side) {
            Some((k, c, vl, vr)) => {
                for &i in &side {
                    pred[i] = if x[[i, k]] < c { vl } else { vr };
                }
            }
            None => side.iter().for_each(|&i| pred[i] = u),
        }
    }
    pred
}

#[test]
fn zero_radius_tree_matches_a_plain_greedy_fit() {
    let mut r = rng(24);
    for (k, (x, y)) in [toy_xor(31, 60), toy_blobs(32, 60), toy_noisy(33, 60)].into_iter().enumerate() {
        // random offsets keep split losses apart
        let off: Vec<f64> = (0..60).map(|_| r.gen_range(-0.3..0.3)).collect();
        let t = build_robust_tree(&x, &y, &off, &tree_params(2, 0.0)).unwrap();
        let want = greedy_depth_two(&x, &y, &off);
        for i in 0..60 {
            let row = x.row(i).to_vec();
            assert!((t.predict(&row) - want[i]).abs() < 1e-9, "set {k} row {i}");
        }
        let mine: f64 = (0..60).map(|i| (-off[i] - y[i] * want[i]).exp()).sum();
        let got = training_bound(&t, &x, &y, &off, 0.0, LossKind::Exponential);
        assert!((mine - got).abs() <= 1e-9 * mine);
    }
}

#[test]
fn leaves_respect_the_weight_cap() {
    let (x, y) = toy_blobs(26, 60);
    let mut p = tree_params(3, 0.05);
    p.w_max = 0.4;
    let t = build_robust_tree(&x, &y, &[0.0; 60], &p).unwrap();
    for v in t.leaf_values() {
        assert!(v.abs() <= 0.4 + 1e-12, "{v}");
    }
}

fn bad_subtree_data() -> (Array2<f64>, Vec<f64>) {
    let x = array![[0.1], [0.2], [0.8], [0.9]];
    (x, vec![-1.0, -1.0, 1.0, 1.0])
}

#[test]
fn pruning_removes_harmful_subtrees() {
    let (x, y) = bad_subtree_data();
    let mut root = TreeNode::leaf(0, 0.5, -1.0, 2.0);
    // flips the right side to the wrong sign
    root.right = Some(Box::new(TreeNode::leaf(0, 0.7, -0.5, -0.5)));
    let t = Tree::new(root);
    let before = training_bound(&t, &x, &y, &[0.0; 4], 0.0, LossKind::Exponential);
    let p = prune_tree(t, &x, &y, &[0.0; 4], 0.0, LossKind::Exponential);
    let after = training_bound(&p, &x, &y, &[0.0; 4], 0.0, LossKind::Exponential);
    assert_eq!(p, Tree::new(TreeNode::leaf(0, 0.5, -1.0, 2.0)));
    assert!(after < before);
}

#[test]
fn pruning_keeps_helpful_subtrees_and_never_hurts() {
    let (x, y) = bad_subtree_data();
    let mut root = TreeNode::leaf(0, 0.5, -0.5, 0.5);
    root.left = Some(Box::new(TreeNode::leaf(0, 0.15, -1.0, 0.0)));
    let t = Tree::new(root);
    let p = prune_tree(t.clone(), &x, &y, &[0.0; 4], 0.0, LossKind::Exponential);
    assert_eq!(p, t);

    let mut r = rng(27);
    let (x, y) = toy_noisy(28, 40);
    for _ in 0..30 {
        let t = random_trees(&mut r, 3, 1, 4).trees.remove(0);
        let eps = radius(&mut r) / 4.0;
        let before = training_bound(&t, &x, &y, &[0.0; 40], eps, LossKind::Logistic);
        let p = prune_tree(t, &x, &y, &[0.0; 40], eps, LossKind::Logistic);
        assert!(training_bound(&p, &x, &y, &[0.0; 40], eps, LossKind::Logistic) <= before);
    }
}

#[test]
fn robust_rounds_never_increase_the_bound() {
    let (x, y) = toy_blobs(29, 60);
    let params = TreeTrainerParams {
        mode: TreeFitMode::RobustBound,
        tree: TreeParams {
            min_samples_leaf: 5,
            ..tree_params(3, 0.08)
        },
        shrinkage: 0.5,
        prune: true,
        attack: AttackConfig::training(0),
    };
    let mut t = TreeTrainer::new(&x, &y, params).unwrap();
    let mut prev = t.objective();
    for _ in 0..15 {
        let o = t.round();
        assert!(o.objective <= prev);
        prev = o.objective;
    }
    let e: &TreeEnsemble = t.ensemble();
    let recomputed: f64 = (0..60)
        .map(|i| LossKind::Exponential.value(e.bound_margin(&[x[[i, 0]], x[[i, 1]]], y[i], 0.08)))
        .sum();
    assert!((recomputed - prev).abs() <= 1e-9 * prev);
}
