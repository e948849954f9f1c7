//! Model containers shared by training, evaluation and serialization.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ModelError};
use crate::loss::LossKind;
use crate::stumps::{CertResult, StumpEnsemble};
use crate::trees::TreeEnsemble;
use crate::MarginModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Stumps,
    Trees,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stumps" => Ok(ModelKind::Stumps),
            "trees" => Ok(ModelKind::Trees),
            _ => Err(format!("unknown model kind '{s}' (expected stumps or trees)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Binary,
    OneVsAll,
}

/// A binary ensemble of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Ensemble {
    Stumps(StumpEnsemble),
    Trees(TreeEnsemble),
}

impl Ensemble {
    pub fn kind(&self) -> ModelKind {
        match self {
            Ensemble::Stumps(_) => ModelKind::Stumps,
            Ensemble::Trees(_) => ModelKind::Trees,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Ensemble::Stumps(e) => e.len(),
            Ensemble::Trees(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn truncate(&mut self, len: usize) {
        match self {
            Ensemble::Stumps(e) => e.truncate(len),
            Ensemble::Trees(e) => e.trees.truncate(len),
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self {
            Ensemble::Stumps(e) => e.loss_kind,
            Ensemble::Trees(e) => e.loss_kind,
        }
    }

    pub fn eps_trained(&self) -> f64 {
        match self {
            Ensemble::Stumps(e) => e.eps_trained,
            Ensemble::Trees(e) => e.eps_trained,
        }
    }

    pub fn w_max(&self) -> f64 {
        match self {
            Ensemble::Stumps(e) => e.w_max,
            Ensemble::Trees(e) => e.w_max,
        }
    }

    pub fn shrinkage(&self) -> f64 {
        match self {
            Ensemble::Stumps(e) => e.shrinkage,
            Ensemble::Trees(e) => e.shrinkage,
        }
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(MarginModel::n_features(self), x)?;
        Ok(self.score(x))
    }

    /// Exact certificate for stumps, tree-wise bound for trees.
    pub fn certify(&self, x: &[f64], y: f64, eps: f64) -> Result<CertResult, ModelError> {
        match self {
            Ensemble::Stumps(e) => e.certify_exact(x, y, eps),
            Ensemble::Trees(e) => e.certify_bound(x, y, eps),
        }
    }

    /// `self - other` as one ensemble of the same kind.
    pub fn difference(&self, other: &Ensemble) -> Result<Ensemble, ModelError> {
        match (self, other) {
            (Ensemble::Stumps(a), Ensemble::Stumps(b)) => {
                let mut out = a.clone();
                out.extend_from(&b.negated());
                Ok(Ensemble::Stumps(out))
            }
            (Ensemble::Trees(a), Ensemble::Trees(b)) => {
                let mut out = a.clone();
                out.trees.extend(b.negated().trees);
                Ok(Ensemble::Trees(out))
            }
            _ => Err(ModelError::InvalidConfig("cannot mix stump and tree ensembles".into())),
        }
    }
}

impl MarginModel for Ensemble {
    fn n_features(&self) -> usize {
        match self {
            Ensemble::Stumps(e) => e.n_features(),
            Ensemble::Trees(e) => e.n_features(),
        }
    }

    #[inline]
    fn score(&self, x: &[f64]) -> f64 {
        match self {
            Ensemble::Stumps(e) => e.score(x),
            Ensemble::Trees(e) => e.score(x),
        }
    }

    fn split_points(&self) -> Vec<(usize, f64)> {
        match self {
            Ensemble::Stumps(e) => e.split_points(),
            Ensemble::Trees(e) => e.split_points(),
        }
    }
}

/// One-vs-all model: `per_class[c]` scores class `class_names[c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiClassModel {
    pub per_class: Vec<Ensemble>,
    pub class_names: Vec<i64>,
}

impl MultiClassModel {
    pub fn new(per_class: Vec<Ensemble>, class_names: Vec<i64>) -> Result<Self, ModelError> {
        if per_class.len() != class_names.len() || per_class.len() < 2 {
            return Err(ModelError::InvalidConfig(
                "need at least two classes and one ensemble per class".into(),
            ));
        }
        let first = &per_class[0];
        let d = MarginModel::n_features(first);
        for e in &per_class {
            if e.kind() != first.kind() || e.loss_kind() != first.loss_kind() || e.eps_trained() != first.eps_trained() {
                return Err(ModelError::InvalidConfig(
                    "member ensembles must share kind, loss and eps".into(),
                ));
            }
            if MarginModel::n_features(e) != d {
                return Err(ModelError::DimensionMismatch {
                    expected: d,
                    found: MarginModel::n_features(e),
                });
            }
        }
        Ok(MultiClassModel { per_class, class_names })
    }

    pub fn n_features(&self) -> usize {
        MarginModel::n_features(&self.per_class[0])
    }

    pub fn class_index(&self, class: i64) -> Result<usize, ModelError> {
        self.class_names
            .iter()
            .position(|&c| c == class)
            .ok_or(ModelError::UnknownClass(class))
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        check_dim(self.n_features(), x)?;
        Ok(self.per_class.iter().map(|e| e.score(x)).collect())
    }

    /// Class with the largest score; the first one on ties.
    pub fn predict(&self, x: &[f64]) -> Result<i64, ModelError> {
        let s = self.scores(x)?;
        let mut best = 0;
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        Ok(self.class_names[best])
    }

    /// `F_y - F_c` for every `c != y`, in class order.
    pub fn differences(&self, y: usize) -> Vec<Ensemble> {
        (0..self.per_class.len())
            .filter(|&c| c != y)
            .map(|c| {
                self.per_class[y]
                    .difference(&self.per_class[c])
                    .expect("members share a kind")
            })
            .collect()
    }
}

/// A trained model: one ensemble for binary tasks, one per class otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub task: Task,
    /// Positive class of each ensemble.
    pub classes: Vec<i64>,
    pub ensembles: Vec<Ensemble>,
}

impl Model {
    pub fn binary(positive_class: i64, ensemble: Ensemble) -> Model {
        Model {
            task: Task::Binary,
            classes: vec![positive_class],
            ensembles: vec![ensemble],
        }
    }

    pub fn one_vs_all(m: MultiClassModel) -> Model {
        Model {
            task: Task::OneVsAll,
            classes: m.class_names,
            ensembles: m.per_class,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.ensembles[0].kind()
    }

    pub fn n_features(&self) -> usize {
        MarginModel::n_features(&self.ensembles[0])
    }

    pub fn multiclass(&self) -> Option<MultiClassModel> {
        match self.task {
            Task::OneVsAll => MultiClassModel::new(self.ensembles.clone(), self.classes.clone()).ok(),
            Task::Binary => None,
        }
    }

    pub fn split_points(&self) -> Vec<(usize, f64)> {
        self.ensembles.iter().flat_map(|e| e.split_points()).collect()
    }
}
