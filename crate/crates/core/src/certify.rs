//! Robustness metrics, the cell-enumeration oracle and multi-class
//! certification.

use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::attack::{attack_point, AttackConfig};
use crate::error::{check_dim, ModelError};
use crate::model::{Ensemble, MultiClassModel};
use crate::MarginModel;

/// Largest cross product the oracle will enumerate.
pub const MAX_ORACLE_CELLS: u128 = 1_000_000;

/// Exact minimum of `y F` over `[x - eps, x + eps] ∩ [0, 1]^d` by evaluating
/// one point in every cell of the threshold grid.
pub fn exact_margin_oracle<M: MarginModel + ?Sized>(model: &M, x: &[f64], y: f64, eps: f64) -> Result<f64, ModelError> {
    check_dim(model.n_features(), x)?;
    let d = x.len();
    let mut per_coord: Vec<Vec<f64>> = vec![Vec::new(); d];
    for (c, t) in model.split_points() {
        per_coord[c].push(t);
    }
    let mut reps: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut cells: u128 = 1;
    for (k, ts) in per_coord.iter_mut().enumerate() {
        let lo = (x[k] - eps).max(0.0);
        let hi = (x[k] + eps).min(1.0);
        if lo > hi {
            reps.push(vec![x[k].clamp(0.0, 1.0)]);
            continue;
        }
        ts.retain(|&t| lo < t && t <= hi);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut r = Vec::with_capacity(ts.len() + 1);
        let mut a = lo;
        for &t in ts.iter() {
            let mid = 0.5 * (a + t);
            r.push(if mid < t { mid } else { a });
            a = t;
        }
        r.push(if a < hi { 0.5 * (a + hi) } else { hi });
        cells = cells.saturating_mul(r.len() as u128);
        if cells > MAX_ORACLE_CELLS {
            return Err(ModelError::TooManyCells(cells, MAX_ORACLE_CELLS));
        }
        reps.push(r);
    }
    let mut idx = vec![0usize; d];
    let mut z: Vec<f64> = reps.iter().map(|r| r[0]).collect();
    let mut best = y * model.score(&z);
    loop {
        let mut k = 0;
        while k < d {
            idx[k] += 1;
            if idx[k] < reps[k].len() {
                z[k] = reps[k][idx[k]];
                break;
            }
            idx[k] = 0;
            z[k] = reps[k][0];
            k += 1;
        }
        if k == d {
            return Ok(best);
        }
        best = best.min(y * model.score(&z));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointReport {
    pub index: usize,
    /// Class id for multi-class reports, sign label otherwise.
    pub label: i64,
    pub clean_margin: f64,
    pub attack_margin: f64,
    pub bound_margin: f64,
    pub exact_margin: Option<f64>,
}

/// Seconds spent in each phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WallTimes {
    pub clean: f64,
    pub attack: f64,
    pub bound: f64,
    pub exact: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessReport {
    pub eps: f64,
    pub te: f64,
    pub lrte: f64,
    pub urte: f64,
    pub rte_exact: Option<f64>,
    pub per_point: Vec<PointReport>,
    pub wall_times: WallTimes,
}

impl RobustnessReport {
    pub fn n(&self) -> usize {
        self.per_point.len()
    }

    fn from_points(eps: f64, per_point: Vec<PointReport>, exact_complete: bool, wall_times: WallTimes) -> Self {
        let n = per_point.len().max(1) as f64;
        let frac = |f: &dyn Fn(&PointReport) -> bool| per_point.iter().filter(|p| f(p)).count() as f64 / n;
        let te = frac(&|p| p.clean_margin <= 0.0);
        let lrte = frac(&|p| p.clean_margin <= 0.0 || p.attack_margin <= 0.0);
        let urte = frac(&|p| p.clean_margin <= 0.0 || p.bound_margin <= 0.0);
        let rte_exact = exact_complete
            .then(|| frac(&|p| p.clean_margin <= 0.0 || p.exact_margin.is_some_and(|m| m <= 0.0)));
        RobustnessReport {
            eps,
            te,
            lrte,
            urte,
            rte_exact,
            per_point,
            wall_times,
        }
    }
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot = t.elapsed().as_secs_f64();
    out
}

fn row(x: &Array2<f64>, i: usize) -> Vec<f64> {
    x.row(i).to_vec()
}

/// Clean, attacked and certified margins of every row. Exact margins are
/// always produced for stumps; for trees only when `want_exact` is set, and
/// the exact column is dropped if the oracle refuses any point.
pub fn evaluate(
    model: &Ensemble,
    x: &Array2<f64>,
    y: &[f64],
    eps: f64,
    attack_cfg: &AttackConfig,
    want_exact: bool,
) -> Result<RobustnessReport, ModelError> {
    if x.nrows() != y.len() {
        return Err(ModelError::InvalidConfig("features and labels differ in length".into()));
    }
    if x.nrows() > 0 {
        check_dim(MarginModel::n_features(model), x.row(0).as_slice().unwrap_or(&row(x, 0)))?;
    }
    let n = x.nrows();
    let mut wall = WallTimes::default();
    let clean: Vec<f64> = timed(&mut wall.clean, || {
        (0..n).into_par_iter().map(|i| y[i] * model.score(&row(x, i))).collect()
    });
    let attack: Vec<f64> = timed(&mut wall.attack, || {
        (0..n)
            .into_par_iter()
            .map(|i| attack_point(model, &row(x, i), y[i], eps, attack_cfg, i as u64).margin)
            .collect()
    });
    let bound: Vec<f64> = timed(&mut wall.bound, || {
        (0..n)
            .into_par_iter()
            .map(|i| model.certify(&row(x, i), y[i], eps).map(|c| c.margin_min))
            .collect::<Result<_, _>>()
    })?;
    let exact: Vec<Option<f64>> = match model {
        Ensemble::Stumps(_) => bound.iter().map(|&b| Some(b)).collect(),
        Ensemble::Trees(_) if want_exact => timed(&mut wall.exact, || {
            (0..n)
                .into_par_iter()
                .map(|i| exact_margin_oracle(model, &row(x, i), y[i], eps).ok())
                .collect()
        }),
        Ensemble::Trees(_) => vec![None; n],
    };
    let complete = exact.iter().all(Option::is_some);
    let per_point = (0..n)
        .map(|i| PointReport {
            index: i,
            label: y[i] as i64,
            clean_margin: clean[i],
            attack_margin: attack[i],
            bound_margin: bound[i],
            exact_margin: exact[i],
        })
        .collect();
    Ok(RobustnessReport::from_points(eps, per_point, complete, wall))
}

/// Certifies `x` against every `F_y - F_c`; the margin is the smallest of
/// the `K - 1` binary certificates.
pub fn certify_multiclass(model: &MultiClassModel, x: &[f64], y: i64, eps: f64) -> Result<(bool, f64), ModelError> {
    let yi = model.class_index(y)?;
    check_dim(model.n_features(), x)?;
    let mut m = f64::INFINITY;
    for diff in model.differences(yi) {
        m = m.min(diff.certify(x, 1.0, eps)?.margin_min);
    }
    Ok((m > 0.0, m))
}

/// Multi-class counterpart of [`evaluate`]. Each margin column is the
/// minimum over the difference models `F_y - F_c`.
pub fn evaluate_multiclass(
    model: &MultiClassModel,
    x: &Array2<f64>,
    class_ids: &[i64],
    eps: f64,
    attack_cfg: &AttackConfig,
    want_exact: bool,
) -> Result<RobustnessReport, ModelError> {
    if x.nrows() != class_ids.len() {
        return Err(ModelError::InvalidConfig("features and labels differ in length".into()));
    }
    let k = model.per_class.len();
    let diffs: Vec<Vec<Ensemble>> = (0..k).map(|c| model.differences(c)).collect();
    let idx: Vec<usize> = class_ids
        .iter()
        .map(|&c| model.class_index(c))
        .collect::<Result<_, _>>()?;
    let n = x.nrows();
    let min_over = |i: usize, f: &(dyn Fn(&Ensemble, &[f64]) -> Result<f64, ModelError> + Sync)| {
        let r = row(x, i);
        diffs[idx[i]].iter().try_fold(f64::INFINITY, |m, d| Ok::<_, ModelError>(m.min(f(d, &r)?)))
    };
    let mut wall = WallTimes::default();
    let clean: Vec<f64> = timed(&mut wall.clean, || {
        (0..n)
            .into_par_iter()
            .map(|i| min_over(i, &|d, r| d.margin(r)))
            .collect::<Result<_, _>>()
    })?;
    let attack: Vec<f64> = timed(&mut wall.attack, || {
        (0..n)
            .into_par_iter()
            .map(|i| min_over(i, &|d, r| Ok(attack_point(d, r, 1.0, eps, attack_cfg, i as u64).margin)))
            .collect::<Result<_, _>>()
    })?;
    let bound: Vec<f64> = timed(&mut wall.bound, || {
        (0..n)
            .into_par_iter()
            .map(|i| min_over(i, &|d, r| d.certify(r, 1.0, eps).map(|c| c.margin_min)))
            .collect::<Result<_, _>>()
    })?;
    let exact: Vec<Option<f64>> = match model.per_class[0] {
        Ensemble::Stumps(_) => bound.iter().map(|&b| Some(b)).collect(),
        Ensemble::Trees(_) if want_exact => timed(&mut wall.exact, || {
            (0..n)
                .into_par_iter()
                .map(|i| min_over(i, &|d, r| exact_margin_oracle(d, r, 1.0, eps)).ok())
                .collect()
        }),
        Ensemble::Trees(_) => vec![None; n],
    };
    let complete = exact.iter().all(Option::is_some);
    let per_point = (0..n)
        .map(|i| PointReport {
            index: i,
            label: class_ids[i],
            clean_margin: clean[i],
            attack_margin: attack[i],
            bound_margin: bound[i],
            exact_margin: exact[i],
        })
        .collect();
    Ok(RobustnessReport::from_points(eps, per_point, complete, wall))
}
