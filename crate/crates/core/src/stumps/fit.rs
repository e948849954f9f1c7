use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;

use super::{CoordTable, Stump, StumpEnsemble};
use crate::attack::{make_adversarial_batch, AttackConfig, WarmStart};
use crate::error::ModelError;
use crate::loss::{fit_stump_cases, LeafFit, LossKind, StumpCase};
use crate::split::{
    best_split, candidate_thresholds, cmp_splits, column_orders, eval_threshold, first_min, refine_threshold,
    scan_coordinate, CandidateSplit, NodeView, ScanParams,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StumpFitMode {
    /// Clean margins, no perturbation.
    Plain,
    /// Plain stumps on clean points plus attacked copies.
    Adversarial,
    /// Stump-wise upper bound on the robust loss.
    Bound,
    /// Exact robust loss.
    Exact,
}

#[derive(Clone, Debug)]
pub struct TrainerParams {
    pub mode: StumpFitMode,
    pub eps: f64,
    pub loss_kind: LossKind,
    pub w_max: f64,
    pub shrinkage: f64,
    pub tol: f64,
    /// Attack used to build adversarial batches.
    pub attack: AttackConfig,
}

/// Per-point, per-coordinate exact minima `G_k(x_i, y_i)`.
#[derive(Clone, Debug)]
pub struct ExactCache {
    g: Array2<f64>,
}

impl ExactCache {
    pub fn new(ens: &StumpEnsemble, x: &Array2<f64>, y: &[f64], eps: f64) -> Self {
        let mut c = ExactCache {
            g: Array2::zeros((x.nrows(), x.ncols())),
        };
        for k in 0..x.ncols() {
            c.update(ens, x, y, eps, k);
        }
        c
    }

    pub fn update(&mut self, ens: &StumpEnsemble, x: &Array2<f64>, y: &[f64], eps: f64, k: usize) {
        let t = ens.table(k);
        for i in 0..x.nrows() {
            self.g[[i, k]] = if t.is_empty() && t.w_l == 0.0 {
                0.0
            } else {
                t.min_contribution(x[[i, k]], y[i], eps)
            };
        }
    }

    /// Exact minimum margin of point `i`.
    pub fn total(&self, i: usize) -> f64 {
        let mut s = 0.0;
        for v in self.g.row(i) {
            s += v;
        }
        s
    }

    /// Sum over all coordinates except `j`.
    pub fn rest(&self, i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for (k, v) in self.g.row(i).iter().enumerate() {
            if k != j {
                s += v;
            }
        }
        s
    }
}

/// Region structure of one point on one coordinate.
struct PointRegions {
    offset: f64,
    y: f64,
    lo: f64,
    hi: f64,
    i0: usize,
    i1: usize,
    /// Running minima from `i0` upwards and from `i1` downwards.
    pre_min: Vec<f64>,
    suf_min: Vec<f64>,
}

struct ExactCoord<'a> {
    table: &'a CoordTable,
    points: Vec<PointRegions>,
    kind: LossKind,
    w_max: f64,
    tol: f64,
}

impl<'a> ExactCoord<'a> {
    fn new(
        table: &'a CoordTable,
        col: impl Iterator<Item = f64>,
        y: &[f64],
        rest: impl Iterator<Item = f64>,
        eps: f64,
        p: &TrainerParams,
    ) -> Self {
        let points = col
            .zip(rest)
            .zip(y)
            .map(|((x, r), &yi)| {
                let lo = x - eps;
                let hi = x + eps;
                let (i0, i1) = (table.count_le(lo), table.count_le(hi));
                let vals: Vec<f64> = (i0..=i1).map(|q| yi * table.prefix[q]).collect();
                let mut pre_min = vals.clone();
                for q in 1..pre_min.len() {
                    pre_min[q] = pre_min[q].min(pre_min[q - 1]);
                }
                let mut suf_min = vals;
                for q in (0..suf_min.len().saturating_sub(1)).rev() {
                    suf_min[q] = suf_min[q].min(suf_min[q + 1]);
                }
                PointRegions {
                    offset: r + yi * table.w_l,
                    y: yi,
                    lo,
                    hi,
                    i0,
                    i1,
                    pre_min,
                    suf_min,
                }
            })
            .collect();
        ExactCoord {
            table,
            points,
            kind: p.loss_kind,
            w_max: p.w_max,
            tol: p.tol,
        }
    }

    fn cases_at(&self, b: f64) -> Vec<StumpCase> {
        let lt = self.table.count_lt(b);
        let le = self.table.count_le(b);
        self.points
            .iter()
            .map(|q| {
                let h_left = if q.lo < b {
                    q.pre_min[lt.min(q.i1).max(q.i0) - q.i0]
                } else {
                    f64::INFINITY
                };
                let h_right = if b <= q.hi {
                    q.suf_min[le.max(q.i0).min(q.i1) - q.i0]
                } else {
                    f64::INFINITY
                };
                StumpCase {
                    offset: q.offset,
                    label: q.y,
                    h_left,
                    h_right,
                }
            })
            .collect()
    }

    fn fit_at(&self, b: f64) -> Option<LeafFit> {
        fit_stump_cases(&self.cases_at(b), self.kind, self.w_max, self.tol).ok()
    }
}

/// Outcome of one boosting round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// The stump appended this round, already scaled by the shrinkage.
    pub stump: Option<Stump>,
    /// Training objective after the round (exact robust loss, stump-wise
    /// bound or clean loss depending on the mode).
    pub objective: f64,
}

/// Boosting state for a stump ensemble on a fixed training set.
pub struct StumpTrainer<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    params: TrainerParams,
    ens: StumpEnsemble,
    orders: Vec<Vec<u32>>,
    exact: Option<ExactCache>,
    /// Bound mode: stump-wise minima. Plain modes: clean margins.
    offsets: Vec<f64>,
    warm: WarmStart,
    rounds: usize,
}

impl<'a> StumpTrainer<'a> {
    pub fn new(x: &'a Array2<f64>, y: &'a [f64], params: TrainerParams) -> Result<Self, ModelError> {
        if x.nrows() != y.len() || x.nrows() == 0 {
            return Err(ModelError::InvalidConfig("training set is empty or ragged".into()));
        }
        if !(params.shrinkage > 0.0 && params.shrinkage <= 1.0) {
            return Err(ModelError::InvalidConfig("shrinkage must lie in (0, 1]".into()));
        }
        let eps = if matches!(params.mode, StumpFitMode::Plain) { 0.0 } else { params.eps };
        let mut ens = StumpEnsemble::new(x.ncols(), params.loss_kind, eps, params.w_max);
        ens.shrinkage = params.shrinkage;
        let rows: Vec<u32> = (0..x.nrows() as u32).collect();
        let orders = match params.mode {
            StumpFitMode::Plain | StumpFitMode::Bound => column_orders(x, &rows),
            _ => Vec::new(),
        };
        let exact = matches!(params.mode, StumpFitMode::Exact).then(|| ExactCache::new(&ens, x, y, params.eps));
        Ok(StumpTrainer {
            x,
            y,
            params,
            ens,
            orders,
            exact,
            offsets: vec![0.0; x.nrows()],
            warm: WarmStart::default(),
            rounds: 0,
        })
    }

    pub fn ensemble(&self) -> &StumpEnsemble {
        &self.ens
    }

    pub fn into_ensemble(self) -> StumpEnsemble {
        self.ens
    }

    fn scan_params(&self, eps: f64) -> ScanParams {
        ScanParams {
            eps,
            kind: self.params.loss_kind,
            w_max: self.params.w_max,
            tol: self.params.tol,
            min_leaf: 0,
        }
    }

    /// Current training objective of the mode.
    pub fn objective(&self) -> f64 {
        let kind = self.params.loss_kind;
        match &self.exact {
            Some(c) => (0..self.y.len()).map(|i| kind.value(c.total(i))).sum(),
            None => self.offsets.iter().map(|&m| kind.value(m)).sum(),
        }
    }

    fn exact_coord(&self, j: usize) -> ExactCoord<'_> {
        let cache = self.exact.as_ref().expect("exact mode");
        ExactCoord::new(
            self.ens.table(j),
            self.x.column(j).iter().copied(),
            self.y,
            (0..self.y.len()).map(|i| cache.rest(i, j)),
            self.params.eps,
            &self.params,
        )
    }

    fn exact_scan(&self, j: usize) -> (ExactCoord<'_>, Vec<f64>, Vec<Option<LeafFit>>) {
        let prob = self.exact_coord(j);
        let mut xs: Vec<f64> = self.x.column(j).to_vec();
        xs.sort_by(f64::total_cmp);
        let cands = candidate_thresholds(&xs, self.params.eps);
        let fits = cands.iter().map(|&b| prob.fit_at(b)).collect();
        (prob, cands, fits)
    }

    /// Best split on coordinate `j` for the current residuals.
    pub fn fit_coordinate(&self, j: usize) -> Result<CandidateSplit, ModelError> {
        if j >= self.x.ncols() {
            return Err(ModelError::NoValidThreshold(j));
        }
        let found = match self.params.mode {
            StumpFitMode::Exact => {
                let (prob, cands, fits) = self.exact_scan(j);
                refine_threshold(&cands, &fits, |b| prob.fit_at(b))
            }
            StumpFitMode::Plain | StumpFitMode::Bound => {
                let eps = if self.params.mode == StumpFitMode::Bound { self.params.eps } else { 0.0 };
                let p = self.scan_params(eps);
                let view = NodeView::new(self.x, self.y, &self.offsets, &self.orders);
                let (cands, fits) = scan_coordinate(&view, j, &p);
                refine_threshold(&cands, &fits, |b| eval_threshold(&view, j, b, &p))
            }
            StumpFitMode::Adversarial => {
                return Err(ModelError::InvalidConfig(
                    "adversarial stumps are fitted per round on a fresh batch".into(),
                ))
            }
        };
        let (threshold, f) = found.ok_or(ModelError::NoValidThreshold(j))?;
        Ok(CandidateSplit {
            coord: j,
            threshold,
            w_l: f.w_l,
            w_r: f.w_r,
            loss: f.loss,
        })
    }

    fn search(&mut self) -> Option<CandidateSplit> {
        match self.params.mode {
            StumpFitMode::Exact => {
                let d = self.x.ncols();
                let per: Vec<Option<CandidateSplit>> = (0..d)
                    .into_par_iter()
                    .map(|j| {
                        let (_, cands, fits) = self.exact_scan(j);
                        let k = first_min(&fits)?;
                        let f = fits[k]?;
                        Some(CandidateSplit {
                            coord: j,
                            threshold: cands[k],
                            w_l: f.w_l,
                            w_r: f.w_r,
                            loss: f.loss,
                        })
                    })
                    .collect();
                let mut best: Option<CandidateSplit> = None;
                for c in per.into_iter().flatten() {
                    if best.is_none_or(|b| cmp_splits(&c, &b) == Ordering::Less) {
                        best = Some(c);
                    }
                }
                self.fit_coordinate(best?.coord).ok()
            }
            StumpFitMode::Plain | StumpFitMode::Bound => {
                let eps = if self.params.mode == StumpFitMode::Bound { self.params.eps } else { 0.0 };
                let p = self.scan_params(eps);
                let view = NodeView::new(self.x, self.y, &self.offsets, &self.orders);
                best_split(&view, &p)
            }
            StumpFitMode::Adversarial => {
                let mut cfg = self.params.attack.clone();
                cfg.seed = round_seed(cfg.seed, self.rounds);
                let batch = make_adversarial_batch(&self.ens, self.x, self.y, self.params.eps, &cfg, &mut self.warm);
                let margins: Vec<f64> = (0..batch.y.len())
                    .map(|i| batch.y[i] * self.ens.score(batch.x.row(i).as_slice().unwrap()))
                    .collect();
                let rows: Vec<u32> = (0..batch.y.len() as u32).collect();
                let orders = column_orders(&batch.x, &rows);
                let view = NodeView::new(&batch.x, &batch.y, &margins, &orders);
                best_split(&view, &self.scan_params(0.0))
            }
        }
    }

    fn apply(&mut self, s: &Stump, sign: f64) {
        match self.params.mode {
            StumpFitMode::Exact => {}
            StumpFitMode::Bound => {
                for i in 0..self.y.len() {
                    let row = self.x.row(i);
                    self.offsets[i] += sign * s.min_margin(row.as_slice().unwrap(), self.y[i], self.params.eps);
                }
            }
            StumpFitMode::Plain | StumpFitMode::Adversarial => {
                for i in 0..self.y.len() {
                    let row = self.x.row(i);
                    self.offsets[i] += sign * self.y[i] * s.predict(row.as_slice().unwrap());
                }
            }
        }
    }

    fn recompute_offsets(&mut self) {
        let eps = self.params.eps;
        for i in 0..self.y.len() {
            let row = self.x.row(i);
            let x = row.as_slice().unwrap();
            self.offsets[i] = match self.params.mode {
                StumpFitMode::Bound => self.ens.bound_margin(x, self.y[i], eps),
                _ => self.y[i] * self.ens.score(x),
            };
        }
    }

    /// Adds the best stump over all coordinates, scaled by the shrinkage.
    /// A round that would increase the training objective leaves the
    /// ensemble unchanged.
    pub fn round(&mut self) -> RoundOutcome {
        let before = self.objective();
        let found = self.search();
        self.rounds += 1;
        let Some(c) = found else {
            return RoundOutcome {
                stump: None,
                objective: before,
            };
        };
        let s = Stump {
            coord: c.coord,
            threshold: c.threshold,
            w_l: c.w_l,
            w_r: c.w_r,
        }
        .scaled(self.params.shrinkage);
        self.ens.push(s);
        self.refresh_after(&s, 1.0);
        let after = self.objective();
        if after > before && self.params.mode != StumpFitMode::Adversarial {
            self.ens.pop();
            self.refresh_after(&s, -1.0);
            return RoundOutcome {
                stump: None,
                objective: self.objective(),
            };
        }
        RoundOutcome {
            stump: Some(s),
            objective: after,
        }
    }

    fn refresh_after(&mut self, s: &Stump, sign: f64) {
        if let Some(mut cache) = self.exact.take() {
            cache.update(&self.ens, self.x, self.y, self.params.eps, s.coord);
            self.exact = Some(cache);
        } else if sign > 0.0 {
            self.apply(s, sign);
        } else {
            self.recompute_offsets();
        }
    }
}

pub(crate) fn round_seed(seed: u64, round: usize) -> u64 {
    seed ^ (round as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
