mod common;

use ndarray::{array, Array2};
use rand::Rng;

use common::*;
use robust_boost::attack::AttackConfig;
use robust_boost::loss::LossKind;
use robust_boost::split::NU;
use robust_boost::stumps::{
    certify_stumps_exact, min_perturbation_stumps, robust_stump_objective_terms, stump_margin, Stump, StumpEnsemble,
    StumpFitMode, StumpTrainer, TrainerParams,
};

fn params(mode: StumpFitMode, eps: f64) -> TrainerParams {
    TrainerParams {
        mode,
        eps,
        loss_kind: LossKind::Exponential,
        w_max: 1.0,
        shrinkage: 1.0,
        tol: 1e-10,
        attack: AttackConfig::training(3),
    }
}

fn one(b: f64, w_l: f64, w_r: f64) -> StumpEnsemble {
    StumpEnsemble::from_stumps(1, vec![Stump { coord: 0, threshold: b, w_l, w_r }], LossKind::Exponential, 0.0, 1.0).unwrap()
}

#[test]
fn margin_is_the_sum_of_members() {
    let empty = StumpEnsemble::new(2, LossKind::Exponential, 0.0, 1.0);
    assert_eq!(stump_margin(&empty, &[0.3, 0.4]).unwrap(), 0.0);
    assert_eq!(stump_margin(&one(0.5, -1.0, 2.0), &[0.9]).unwrap(), 1.0);
    let mut r = rng(11);
    for _ in 0..50 {
        let e = random_stumps(&mut r, 3, 5);
        let x = random_point(&mut r, 3);
        let each: f64 = e
            .stumps()
            .iter()
            .map(|s| s.w_l + if x[s.coord] >= s.threshold { s.w_r } else { 0.0 })
            .sum();
        assert_eq!(stump_margin(&e, &x).unwrap(), each);
    }
    assert!(stump_margin(&empty, &[0.1]).is_err());
}

#[test]
fn certificate_examples() {
    let e = one(0.5, 0.0, 1.0);
    let c = certify_stumps_exact(&e, &[0.9], 1.0, 0.3).unwrap();
    assert_eq!((c.margin_min, c.robust, c.exact), (1.0, true, true));
    let c = certify_stumps_exact(&e, &[0.9], 1.0, 0.5).unwrap();
    assert_eq!((c.margin_min, c.robust), (0.0, false));
}

#[test]
fn certificate_matches_region_product() {
    let mut r = rng(12);
    let e = random_stumps(&mut r, 3, 8);
    for _ in 0..100 {
        let x = random_point(&mut r, 3);
        let y = sign(&mut r);
        let eps = radius(&mut r);
        assert_eq!(certify_stumps_exact(&e, &x, y, eps).unwrap().margin_min, brute_stumps(&e, &x, y, eps));
    }
}

#[test]
fn stump_wise_bound_never_exceeds_exact_minimum() {
    let mut r = rng(13);
    for _ in 0..300 {
        let d = r.gen_range(1..4);
        let t = r.gen_range(1..12);
        let e = random_stumps(&mut r, d, t);
        let x = random_point(&mut r, d);
        let y = sign(&mut r);
        let eps = radius(&mut r);
        assert!(e.bound_margin(&x, y, eps) <= e.exact_min_margin(&x, y, eps));
    }
}

#[test]
fn minimal_perturbation_examples() {
    let m = min_perturbation_stumps(&one(0.5, -1.0, 2.0), &[0.9], 1.0, NU).unwrap();
    assert!((m.radius - (0.4 + NU)).abs() < 1e-12);
    let d = m.delta.unwrap();
    assert!((d[0] + 0.4 + NU).abs() < 1e-12);

    let unanimous = StumpEnsemble::from_stumps(
        2,
        vec![
            Stump { coord: 0, threshold: 0.5, w_l: 1.0, w_r: 0.5 },
            Stump { coord: 1, threshold: 0.2, w_l: 0.3, w_r: 0.1 },
        ],
        LossKind::Exponential,
        0.0,
        1.0,
    )
    .unwrap();
    let m = min_perturbation_stumps(&unanimous, &[0.1, 0.9], 1.0, NU).unwrap();
    assert!(m.radius.is_infinite() && m.delta.is_none());
}

#[test]
fn minimal_radius_matches_a_fine_scan() {
    let mut r = rng(14);
    let step = 1e-4;
    let mut checked = 0;
    while checked < 15 {
        let e = random_stumps(&mut r, 2, 6);
        let x = random_point(&mut r, 2);
        let y = sign(&mut r);
        if y * stumps_value(&e, &x) <= 0.0 {
            continue;
        }
        let m = min_perturbation_stumps(&e, &x, y, NU).unwrap();
        let scan = (0..=10_000)
            .map(|k| k as f64 * step)
            .find(|&eps| !certify_stumps_exact(&e, &x, y, eps).unwrap().robust);
        match scan {
            Some(s) => assert!((m.radius - s).abs() <= step, "radius {} scan {s}", m.radius),
            None => assert!(m.radius.is_infinite()),
        }
        checked += 1;
    }
}

#[test]
fn misclassified_point_has_no_radius() {
    let e = one(0.5, -1.0, 2.0);
    assert!(min_perturbation_stumps(&e, &[0.2], 1.0, NU).is_err());
}

#[test]
fn objective_term_examples() {
    assert_eq!(robust_stump_objective_terms(&[], 0.5, 1.0, 0.1, 0.55), (0.0, 0.0));
    let s = Stump { coord: 0, threshold: 0.5, w_l: 0.0, w_r: -2.0 };
    let (h_l, h_r) = robust_stump_objective_terms(&[s], 0.5, 1.0, 0.1, 0.7);
    assert_eq!(h_l, -2.0);
    assert!(h_r.is_infinite() && h_r > 0.0);
}

#[test]
fn objective_terms_match_a_dense_grid() {
    let mut r = rng(15);
    let step = 1.0 / 1024.0;
    for _ in 0..200 {
        let stumps: Vec<Stump> = (0..5)
            .map(|_| Stump {
                coord: 0,
                threshold: grid_point(&mut r),
                w_l: weight(&mut r),
                w_r: weight(&mut r),
            })
            .collect();
        let x = r.gen_range(0..=64) as f64 / 64.0;
        let eps = r.gen_range(0..=24) as f64 / 64.0;
        let b = r.gen_range(1..128) as f64 / 128.0;
        let y = sign(&mut r);
        let part = |z: f64| -> f64 {
            stumps
                .iter()
                .map(|s| if z >= s.threshold { y * s.w_r } else { 0.0 })
                .sum()
        };
        let (mut left, mut right) = (f64::INFINITY, f64::INFINITY);
        let n = (2.0 * eps / step).round() as i64;
        for k in 0..=n {
            let z = x - eps + k as f64 * step;
            if z < b {
                left = left.min(part(z));
            } else {
                right = right.min(part(z));
            }
        }
        assert_eq!(robust_stump_objective_terms(&stumps, x, y, eps, b), (left, right), "x={x} eps={eps} b={b}");
    }
}

#[test]
fn plain_fit_separates_two_clusters() {
    let x = array![[0.3], [0.3], [0.7], [0.7]];
    let y = vec![-1.0, -1.0, 1.0, 1.0];
    let mut t = StumpTrainer::new(&x, &y, params(StumpFitMode::Plain, 0.0)).unwrap();
    let s = t.round().stump.unwrap();
    assert!(s.threshold > 0.3 && s.threshold < 0.7);
    assert!(s.w_r > 0.0);
    for i in 0..4 {
        assert!(y[i] * t.ensemble().score(&[x[[i, 0]]]) > 0.0);
    }
}

#[test]
fn exact_fit_centres_the_threshold_and_is_optimal() {
    let x = array![[0.3], [0.7]];
    let y = vec![-1.0, 1.0];
    // the two boxes are disjoint, so a threshold between them certifies both
    let eps = 0.15;
    let t = StumpTrainer::new(&x, &y, params(StumpFitMode::Exact, eps)).unwrap();
    let c = t.fit_coordinate(0).unwrap();
    assert!(c.threshold > 0.45 && c.threshold < 0.55, "{c:?}");
    let e = one(c.threshold, c.w_l, c.w_r);
    for i in 0..2 {
        assert!(certify_stumps_exact(&e, &[x[[i, 0]]], y[i], eps).unwrap().robust, "{c:?}");
    }
    // with |leaf| <= 1 no point can do better than exp(-1)
    assert!((c.loss - 2.0 * (-1.0f64).exp()).abs() < 1e-9);
}

#[test]
fn overlapping_boxes_cannot_beat_the_empty_stump() {
    // [0.05, 0.55] and [0.45, 0.95] overlap: any stump leaves one point free to
    // take the other's leaf, so the loss is at least exp(u) + exp(-u) >= 2
    let x = array![[0.3], [0.7]];
    let y = vec![-1.0, 1.0];
    let t = StumpTrainer::new(&x, &y, params(StumpFitMode::Exact, 0.25)).unwrap();
    let c = t.fit_coordinate(0).unwrap();
    assert!((c.loss - 2.0).abs() < 1e-12, "{c:?}");
}

#[test]
fn exact_fit_at_zero_radius_is_the_plain_fit() {
    let (x, y) = toy_noisy(16, 60);
    let exact = StumpTrainer::new(&x, &y, params(StumpFitMode::Exact, 0.0)).unwrap();
    let plain = StumpTrainer::new(&x, &y, params(StumpFitMode::Plain, 0.0)).unwrap();
    for j in 0..3 {
        let a = exact.fit_coordinate(j).unwrap();
        let b = plain.fit_coordinate(j).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-9 * b.loss, "{a:?} {b:?}");
    }
}

#[test]
fn exact_rounds_never_increase_the_robust_loss() {
    let (x, y) = toy_blobs(17, 40);
    let mut t = StumpTrainer::new(&x, &y, params(StumpFitMode::Exact, 0.08)).unwrap();
    let mut prev = t.objective();
    for _ in 0..20 {
        let o = t.round();
        assert!(o.objective <= prev);
        prev = o.objective;
    }
}

fn trained(mode: StumpFitMode, x: &Array2<f64>, y: &[f64]) -> StumpEnsemble {
    let mut t = StumpTrainer::new(x, y, params(mode, 0.1)).unwrap();
    for _ in 0..8 {
        t.round();
    }
    t.into_ensemble()
}

#[test]
fn rounds_do_not_depend_on_the_thread_count() {
    let (x, y) = toy_noisy(18, 50);
    for mode in [StumpFitMode::Plain, StumpFitMode::Bound, StumpFitMode::Exact, StumpFitMode::Adversarial] {
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let a = pool(1).install(|| trained(mode, &x, &y));
        let b = pool(4).install(|| trained(mode, &x, &y));
        assert_eq!(a, b, "{mode:?}");
    }
}
