//! Generators and brute-force references shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_boost::loss::LossKind;
use robust_boost::stumps::{Stump, StumpEnsemble};
use robust_boost::trees::{Tree, TreeEnsemble, TreeNode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Multiples of 1/32 strictly inside (0, 1). Sums of such values and of
/// `weight` draws are exact in binary floating point, so summation order
/// never matters.
pub fn grid_point(r: &mut impl Rng) -> f64 {
    r.gen_range(1..32) as f64 / 32.0
}

/// Multiples of 1/64 in [-1, 1].
pub fn weight(r: &mut impl Rng) -> f64 {
    r.gen_range(-64..=64) as f64 / 64.0
}

pub fn sign(r: &mut impl Rng) -> f64 {
    if r.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// A point on the threshold grid half the time, otherwise anywhere in [0, 1].
pub fn coordinate(r: &mut impl Rng) -> f64 {
    if r.gen_bool(0.5) {
        r.gen_range(0..=32) as f64 / 32.0
    } else {
        r.gen::<f64>()
    }
}

pub fn radius(r: &mut impl Rng) -> f64 {
    match r.gen_range(0..3) {
        0 => 0.0,
        1 => r.gen_range(1..16) as f64 / 32.0,
        _ => r.gen_range(0.0..0.5),
    }
}

pub fn random_stumps(r: &mut impl Rng, d: usize, t: usize) -> StumpEnsemble {
    let stumps = (0..t)
        .map(|_| Stump {
            coord: r.gen_range(0..d),
            threshold: grid_point(r),
            w_l: weight(r),
            w_r: weight(r),
        })
        .collect();
    StumpEnsemble::from_stumps(d, stumps, LossKind::Exponential, 0.0, 2.0).unwrap()
}

pub fn random_node(r: &mut impl Rng, coords: &[usize], depth: usize) -> TreeNode {
    let mut n = TreeNode::leaf(coords[r.gen_range(0..coords.len())], grid_point(r), weight(r), 0.0);
    // keep the right leaf value on the 1/64 grid inside [-1, 1]
    n.w_r = weight(r) - n.w_l;
    if depth > 1 {
        if r.gen_bool(0.7) {
            n.left = Some(Box::new(random_node(r, coords, depth - 1)));
        }
        if r.gen_bool(0.7) {
            n.right = Some(Box::new(random_node(r, coords, depth - 1)));
        }
    }
    n
}

pub fn random_trees(r: &mut impl Rng, d: usize, t: usize, depth: usize) -> TreeEnsemble {
    let coords: Vec<usize> = (0..d).collect();
    let trees = (0..t).map(|_| Tree::new(random_node(r, &coords, depth))).collect();
    TreeEnsemble::from_trees(d, trees, LossKind::Exponential, 0.0, 1.0, 1.0).unwrap()
}

pub fn random_point(r: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| coordinate(r)).collect()
}

/// Tree value by direct descent: the deepest node on the path decides.
pub fn tree_value(n: &TreeNode, x: &[f64]) -> f64 {
    if x[n.coord] >= n.threshold {
        match &n.right {
            Some(c) => tree_value(c, x),
            None => n.w_l + n.w_r,
        }
    } else {
        match &n.left {
            Some(c) => tree_value(c, x),
            None => n.w_l,
        }
    }
}

pub fn trees_value(e: &TreeEnsemble, x: &[f64]) -> f64 {
    e.trees.iter().map(|t| tree_value(&t.root, x)).sum()
}

pub fn stumps_value(e: &StumpEnsemble, x: &[f64]) -> f64 {
    e.stumps()
        .iter()
        .map(|s| s.w_l + if x[s.coord] >= s.threshold { s.w_r } else { 0.0 })
        .sum()
}

/// Points to evaluate on coordinate `k`: the lower end of the box and every
/// threshold inside `(lo, hi]`. Each piece of the `>=` split rule that meets
/// the closed box contains one of them.
pub fn representatives(thresholds: &[f64], x: f64, eps: f64) -> Vec<f64> {
    let lo = (x - eps).max(0.0);
    let hi = (x + eps).min(1.0);
    let mut v = vec![lo];
    v.extend(thresholds.iter().copied().filter(|&b| lo < b && b <= hi));
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Minimum of `f` over the product of per-coordinate representatives.
pub fn brute_min(per_coord: &[Vec<f64>], x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let reps: Vec<Vec<f64>> = per_coord
        .iter()
        .zip(x)
        .map(|(ts, &xk)| representatives(ts, xk, eps))
        .collect();
    let mut best = f64::INFINITY;
    let mut z = vec![0.0; x.len()];
    fn rec(k: usize, reps: &[Vec<f64>], z: &mut Vec<f64>, best: &mut f64, f: &dyn Fn(&[f64]) -> f64) {
        if k == reps.len() {
            *best = best.min(f(z));
            return;
        }
        for &v in &reps[k] {
            z[k] = v;
            rec(k + 1, reps, z, best, f);
        }
    }
    rec(0, &reps, &mut z, &mut best, &f);
    best
}

pub fn stump_thresholds(e: &StumpEnsemble) -> Vec<Vec<f64>> {
    let mut v = vec![Vec::new(); e.n_features()];
    for s in e.stumps() {
        v[s.coord].push(s.threshold);
    }
    v
}

pub fn tree_thresholds(e: &TreeEnsemble) -> Vec<Vec<f64>> {
    let mut v = vec![Vec::new(); e.n_features()];
    for t in &e.trees {
        for n in t.nodes() {
            v[n.coord].push(n.threshold);
        }
    }
    v
}

pub fn brute_stumps(e: &StumpEnsemble, x: &[f64], y: f64, eps: f64) -> f64 {
    brute_min(&stump_thresholds(e), x, eps, |z| y * stumps_value(e, z))
}

pub fn brute_trees(e: &TreeEnsemble, x: &[f64], y: f64, eps: f64) -> f64 {
    brute_min(&tree_thresholds(e), x, eps, |z| y * trees_value(e, z))
}

/// Toy binary sets in `[0, 1]^d` used by the training suites.
pub fn toy_blobs(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = if i % 2 == 0 { 1.0 } else { -1.0 };
        let centre = if c > 0.0 { 0.65 } else { 0.35 };
        for k in 0..2 {
            let v: f64 = centre + r.gen_range(-0.25..0.25);
            x[[i, k]] = v.clamp(0.0, 1.0);
        }
        y.push(c);
    }
    (x, y)
}

pub fn toy_xor(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, 2));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let a: f64 = r.gen();
        let b: f64 = r.gen();
        x[[i, 0]] = a;
        x[[i, 1]] = b;
        y.push(if (a >= 0.5) == (b >= 0.5) { 1.0 } else { -1.0 });
    }
    (x, y)
}

/// Label set by the first coordinate with 15% flipped; two noise columns.
pub fn toy_noisy(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let mut x = Array2::zeros((n, 3));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        for k in 0..3 {
            x[[i, k]] = r.gen();
        }
        let mut c = if x[[i, 0]] > 0.4 { 1.0 } else { -1.0 };
        if r.gen_bool(0.15) {
            c = -c;
        }
        y.push(c);
    }
    (x, y)
}
