mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use robust_boost::loss::LossKind;
use robust_boost::model::{Ensemble, Model, MultiClassModel};
use robust_boost::model_io::{export_report, load_model, model_from_json, model_to_json, save_model};
use robust_boost::stumps::{Stump, StumpEnsemble};
use robust_boost::trees::{Tree, TreeEnsemble, TreeNode};
use robust_boost::MarginModel;

fn same_margins(a: &Model, b: &Model, points: &[Vec<f64>]) {
    assert_eq!(a.ensembles.len(), b.ensembles.len());
    for (ea, eb) in a.ensembles.iter().zip(&b.ensembles) {
        for p in points {
            assert_eq!(ea.score(p).to_bits(), eb.score(p).to_bits());
        }
    }
}

fn round_trip(m: &Model) -> Model {
    model_from_json(&model_to_json(m)).unwrap()
}

#[test]
fn stump_model_round_trips_bit_exactly() {
    let stumps = vec![
        Stump { coord: 0, threshold: 0.1 + 0.2, w_l: -1.0 / 3.0, w_r: 2.0f64.sqrt() },
        Stump { coord: 1, threshold: 0.5, w_l: 1e-300, w_r: -0.7 },
        Stump { coord: 0, threshold: 0.9999999999999999, w_l: 0.0, w_r: std::f64::consts::PI / 4.0 },
    ];
    let m = Model::binary(3, Ensemble::Stumps(StumpEnsemble::from_stumps(2, stumps, LossKind::Logistic, 0.1, 2.0).unwrap()));
    let back = round_trip(&m);
    assert_eq!(back, m);
    let mut r = rng(61);
    let pts: Vec<Vec<f64>> = (0..200).map(|_| random_point(&mut r, 2)).collect();
    same_margins(&m, &back, &pts);
}

#[test]
fn deep_tree_and_multiclass_models_round_trip() {
    let mut r = rng(62);
    let trees = random_trees(&mut r, 3, 5, 4);
    let m = Model::binary(1, Ensemble::Trees(trees));
    let pts: Vec<Vec<f64>> = (0..200).map(|_| random_point(&mut r, 3)).collect();
    let back = round_trip(&m);
    assert_eq!(back, m);
    same_margins(&m, &back, &pts);

    let per_class = (0..3).map(|_| Ensemble::Trees(random_trees(&mut r, 3, 3, 3))).collect();
    let mc = Model::one_vs_all(MultiClassModel::new(per_class, vec![0, 5, 8]).unwrap());
    let back = round_trip(&mc);
    assert_eq!(back, mc);
    same_margins(&mc, &back, &pts);
}

#[test]
fn saved_files_reload() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(63);
    let m = Model::binary(2, Ensemble::Stumps(random_stumps(&mut r, 4, 12)));
    let path = dir.path().join("m.json");
    save_model(&m, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), m);
    assert!(load_model(&dir.path().join("missing.json")).is_err());
}

proptest! {
    #[test]
    fn arbitrary_weights_survive(
        raw in prop::collection::vec((0usize..3, 0.0f64..1.0, any::<f64>(), any::<f64>()), 1..20),
        depth_weights in prop::collection::vec(-1e3f64..1e3, 6),
    ) {
        let stumps: Vec<Stump> = raw
            .iter()
            .filter(|s| s.2.is_finite() && s.3.is_finite())
            .map(|&(coord, threshold, w_l, w_r)| Stump { coord, threshold, w_l, w_r })
            .collect();
        prop_assume!(!stumps.is_empty());
        let m = Model::binary(1, Ensemble::Stumps(StumpEnsemble::from_stumps(3, stumps, LossKind::Exponential, 0.0, 1.0).unwrap()));
        prop_assert_eq!(&round_trip(&m), &m);

        let w = &depth_weights;
        let mut root = TreeNode::leaf(0, raw[0].1, w[0], w[1]);
        root.right = Some(Box::new(TreeNode::leaf(2, 0.25, w[2], w[3])));
        root.left = Some(Box::new(TreeNode::leaf(1, 0.75, w[4], w[5])));
        let t = TreeEnsemble::from_trees(3, vec![Tree::new(root)], LossKind::Exponential, 0.0, 1.0, 0.5).unwrap();
        let m = Model::binary(1, Ensemble::Trees(t));
        prop_assert_eq!(&round_trip(&m), &m);
    }
}

fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn report_lists_thresholds_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let one = StumpEnsemble::from_stumps(5, vec![Stump { coord: 3, threshold: 0.5, w_l: 0.0, w_r: 1.0 }], LossKind::Exponential, 0.0, 1.0)
        .unwrap();
    export_report(&Model::binary(1, Ensemble::Stumps(one)), None, None, dir.path()).unwrap();
    assert_eq!(read(&dir.path().join("thresholds.csv")), "coord,threshold\n3,0.5\n");
    assert_eq!(read(&dir.path().join("split_counts.csv")), "coord,count\n0,0\n1,0\n2,0\n3,1\n4,0\n");
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn report_is_deterministic_and_counts_every_split() {
    let mut r = rng(64);
    let t = r.gen_range(5..10);
    let m = Model::binary(1, Ensemble::Trees(random_trees(&mut r, 4, t, 3)));
    let n_nodes: usize = match &m.ensembles[0] {
        Ensemble::Trees(e) => e.trees.iter().map(|t| t.n_nodes()).sum(),
        _ => unreachable!(),
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_report(&m, None, None, a.path()).unwrap();
    export_report(&m, None, None, b.path()).unwrap();
    for f in ["thresholds.csv", "split_counts.csv"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)));
    }
    let counts = read(&a.path().join("split_counts.csv"));
    let total: usize = counts.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, n_nodes);
    assert_eq!(read(&a.path().join("thresholds.csv")).lines().count(), n_nodes + 1);
}
