//! Boosting loops with validation-based round selection.

use log::{debug, info};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::dataset::PreparedTask;
use crate::error::ModelError;
use crate::loss::LossKind;
use crate::model::{Ensemble, Model, ModelKind};
use crate::stumps::{StumpFitMode, StumpTrainer, TrainerParams};
use crate::trees::{Tree, TreeFitMode, TreeParams, TreeTrainer, TreeTrainerParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Plain,
    Adversarial,
    RobustBound,
    RobustExact,
}

impl std::str::FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(TrainMode::Plain),
            "adversarial" => Ok(TrainMode::Adversarial),
            "robust_bound" => Ok(TrainMode::RobustBound),
            "robust_exact" => Ok(TrainMode::RobustExact),
            _ => Err(format!(
                "unknown mode '{s}' (expected plain, adversarial, robust_bound or robust_exact)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    pub mode: TrainMode,
    pub eps: f64,
    pub n_rounds: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub w_max: f64,
    pub shrinkage: f64,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub val_frac: f64,
    /// Bound-tightening pruning after each robust tree.
    pub prune: bool,
    /// Bracket width at which the one-dimensional solvers stop.
    pub tol: f64,
}

/// Default round budget: 300 for stumps and shallow trees, fewer for
/// deeper trees.
pub fn default_rounds(kind: ModelKind, max_depth: usize) -> usize {
    match kind {
        ModelKind::Stumps => 300,
        ModelKind::Trees if max_depth <= 2 => 300,
        ModelKind::Trees if max_depth <= 4 => 150,
        ModelKind::Trees => 75,
    }
}

impl TrainConfig {
    pub fn new(model_kind: ModelKind, mode: TrainMode, eps: f64) -> Self {
        TrainConfig {
            model_kind,
            mode,
            eps,
            n_rounds: default_rounds(model_kind, 4),
            max_depth: 4,
            min_samples_leaf: 10,
            w_max: 1.0,
            shrinkage: 0.2,
            loss_kind: LossKind::Exponential,
            seed: 0,
            val_frac: 0.2,
            prune: true,
            tol: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.into()));
        if self.mode == TrainMode::RobustExact && self.model_kind != ModelKind::Stumps {
            return bad("robust_exact is only available for stumps");
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad("eps must be a finite non-negative number");
        }
        if self.n_rounds == 0 {
            return bad("at least one round is required");
        }
        if self.model_kind == ModelKind::Trees && self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if !(self.w_max > 0.0 && self.w_max.is_finite()) {
            return bad("w_max must be positive");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return bad("val_frac must lie in [0, 1)");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        Ok(())
    }

    /// Radius used for validation selection: 0 for plain training.
    pub fn selection_eps(&self) -> f64 {
        match self.mode {
            TrainMode::Plain => 0.0,
            _ => self.eps,
        }
    }
}

/// Per-round trace of one binary run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Training objective after each round.
    pub objective: Vec<f64>,
    /// Ensemble size after each round.
    pub size: Vec<usize>,
    /// Validation robust error after each round.
    pub val_error: Vec<f64>,
    /// Ensemble size kept by validation selection.
    pub selected: usize,
}

/// Validation margins maintained incrementally as members are added.
struct ValTracker<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    eps: f64,
    /// Tree-wise bound per point.
    sums: Vec<f64>,
}

impl<'a> ValTracker<'a> {
    fn new(x: &'a Array2<f64>, y: &'a [f64], eps: f64) -> Self {
        ValTracker {
            x,
            y,
            eps,
            sums: vec![0.0; y.len()],
        }
    }

    fn error_of(margins: impl Iterator<Item = f64>, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        margins.filter(|&m| m <= 0.0).count() as f64 / n as f64
    }

    fn stumps(&self, ens: &crate::stumps::StumpEnsemble) -> f64 {
        let n = self.y.len();
        let m = (0..n).map(|i| ens.exact_min_margin(self.x.row(i).as_slice().unwrap(), self.y[i], self.eps));
        Self::error_of(m, n)
    }

    fn add_tree(&mut self, t: &Tree) -> f64 {
        for (i, s) in self.sums.iter_mut().enumerate() {
            *s += t.min_margin(self.x.row(i).as_slice().unwrap(), self.y[i], self.eps);
        }
        Self::error_of(self.sums.iter().copied(), self.y.len())
    }
}

fn attack_cfg(cfg: &TrainConfig) -> AttackConfig {
    AttackConfig::training(cfg.seed)
}

/// First index of the minimum.
fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &e) in v.iter().enumerate() {
        if best.is_none_or(|b| e < v[b]) {
            best = Some(i);
        }
    }
    best
}

/// Boosts one binary ensemble on `(x, y)` and truncates it to the size with
/// the lowest validation robust error (earliest on ties). With an empty
/// validation set the full ensemble is kept.
pub fn train_binary(
    x: &Array2<f64>,
    y: &[f64],
    val_x: &Array2<f64>,
    val_y: &[f64],
    cfg: &TrainConfig,
) -> Result<(Ensemble, History), ModelError> {
    cfg.validate()?;
    let sel_eps = cfg.selection_eps();
    let mut val = ValTracker::new(val_x, val_y, sel_eps);
    let mut h = History::default();
    let use_val = !val_y.is_empty();
    let mut ens = match cfg.model_kind {
        ModelKind::Stumps => {
            let mode = match cfg.mode {
                TrainMode::Plain => StumpFitMode::Plain,
                TrainMode::Adversarial => StumpFitMode::Adversarial,
                TrainMode::RobustBound => StumpFitMode::Bound,
                TrainMode::RobustExact => StumpFitMode::Exact,
            };
            let params = TrainerParams {
                mode,
                eps: cfg.eps,
                loss_kind: cfg.loss_kind,
                w_max: cfg.w_max,
                shrinkage: cfg.shrinkage,
                tol: cfg.tol,
                attack: attack_cfg(cfg),
            };
            let mut tr = StumpTrainer::new(x, y, params)?;
            let mut last_err = val.stumps(tr.ensemble());
            for r in 0..cfg.n_rounds {
                let out = tr.round();
                if out.stump.is_some() && use_val {
                    last_err = val.stumps(tr.ensemble());
                }
                h.objective.push(out.objective);
                h.size.push(tr.ensemble().len());
                h.val_error.push(last_err);
                if r % 50 == 0 {
                    debug!("round {r}: objective {:.6}, val error {:.4}", out.objective, last_err);
                }
            }
            Ensemble::Stumps(tr.into_ensemble())
        }
        ModelKind::Trees => {
            let mode = match cfg.mode {
                TrainMode::Plain => TreeFitMode::Plain,
                TrainMode::Adversarial => TreeFitMode::Adversarial,
                TrainMode::RobustBound => TreeFitMode::RobustBound,
                TrainMode::RobustExact => unreachable!("rejected by validate"),
            };
            let params = TreeTrainerParams {
                mode,
                tree: TreeParams {
                    max_depth: cfg.max_depth,
                    min_samples_leaf: cfg.min_samples_leaf,
                    eps: cfg.eps,
                    loss_kind: cfg.loss_kind,
                    w_max: cfg.w_max,
                    tol: cfg.tol,
                },
                shrinkage: cfg.shrinkage,
                prune: cfg.prune,
                attack: attack_cfg(cfg),
            };
            let mut tr = TreeTrainer::new(x, y, params)?;
            let mut last_err = if use_val { 1.0 } else { 0.0 };
            for r in 0..cfg.n_rounds {
                let out = tr.round();
                if out.added && use_val {
                    let t = tr.ensemble().trees.last().expect("tree was added");
                    last_err = val.add_tree(t);
                }
                h.objective.push(out.objective);
                h.size.push(tr.ensemble().len());
                h.val_error.push(last_err);
                if r % 25 == 0 {
                    debug!("round {r}: objective {:.6}, val error {:.4}", out.objective, last_err);
                }
            }
            Ensemble::Trees(tr.into_ensemble())
        }
    };
    h.selected = if use_val {
        argmin(&h.val_error).map_or(ens.len(), |k| h.size[k])
    } else {
        ens.len()
    };
    ens.truncate(h.selected);
    Ok((ens, h))
}

/// Trains every task of `task` (one for binary data, one per class for
/// one-vs-all) and returns the assembled model.
pub fn train(task: &PreparedTask, cfg: &TrainConfig) -> Result<(Model, Vec<History>), ModelError> {
    cfg.validate()?;
    let mut ensembles = Vec::with_capacity(task.n_tasks());
    let mut histories = Vec::with_capacity(task.n_tasks());
    for (k, &class) in task.classes.iter().enumerate() {
        let (e, h) = train_binary(&task.train.x, &task.train.y[k], &task.val.x, &task.val.y[k], cfg)?;
        info!(
            "class {class}: kept {} of {} rounds, val error {:.4}, final objective {:.6}",
            h.selected,
            cfg.n_rounds,
            h.val_error.iter().copied().fold(f64::INFINITY, f64::min),
            h.objective.last().copied().unwrap_or(f64::NAN)
        );
        ensembles.push(e);
        histories.push(h);
    }
    let model = if task.one_vs_all {
        Model {
            task: crate::model::Task::OneVsAll,
            classes: task.classes.clone(),
            ensembles,
        }
    } else {
        Model::binary(task.classes[0], ensembles.pop().expect("one task"))
    };
    Ok((model, histories))
}
