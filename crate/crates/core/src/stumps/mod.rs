//! Ensembles of axis-aligned decision stumps.
//!
//! The margin of a stump ensemble separates over coordinates, so the minimum
//! over the eps-box is the sum of one-dimensional minima. Each coordinate keeps
//! a merged, sorted table of its thresholds with prefix sums of `w_r`; region
//! `r` of a coordinate is the set of values with exactly `r` thresholds at or
//! below them.

mod fit;

pub(crate) use fit::round_seed;
pub use fit::{ExactCache, RoundOutcome, StumpFitMode, StumpTrainer, TrainerParams};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ModelError};
use crate::loss::LossKind;
use crate::MarginModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub coord: usize,
    pub threshold: f64,
    pub w_l: f64,
    pub w_r: f64,
}

impl Stump {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        if x[self.coord] >= self.threshold {
            self.w_l + self.w_r
        } else {
            self.w_l
        }
    }

    /// Minimum of `y f(x + d)` over `|d| <= eps`: left is reachable when
    /// `x - eps < b`, right when `x + eps >= b`.
    #[inline]
    pub fn min_margin(&self, x: &[f64], y: f64, eps: f64) -> f64 {
        let v = x[self.coord];
        let mut m = f64::INFINITY;
        if v - eps < self.threshold {
            m = m.min(y * self.w_l);
        }
        if v + eps >= self.threshold {
            m = m.min(y * (self.w_l + self.w_r));
        }
        m
    }

    pub fn scaled(&self, a: f64) -> Stump {
        Stump {
            w_l: self.w_l * a,
            w_r: self.w_r * a,
            ..*self
        }
    }
}

/// Outcome of a certification.
#[derive(Clone, Debug, PartialEq)]
pub struct CertResult {
    /// Minimum margin over the box (exact) or a lower bound on it.
    pub margin_min: f64,
    pub robust: bool,
    /// Per-coordinate perturbation attaining `margin_min` when exact.
    pub delta_star: Vec<f64>,
    pub exact: bool,
}

/// Merged thresholds of one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct CoordTable {
    pub thresholds: Vec<f64>,
    /// `prefix[r]` is the sum of `w_r` over the first `r` thresholds.
    pub prefix: Vec<f64>,
    pub w_l: f64,
}

impl Default for CoordTable {
    fn default() -> Self {
        CoordTable {
            thresholds: Vec::new(),
            prefix: vec![0.0],
            w_l: 0.0,
        }
    }
}

impl CoordTable {
    pub fn build<'a>(stumps: impl Iterator<Item = &'a Stump>) -> CoordTable {
        let mut items: Vec<(f64, f64)> = Vec::new();
        let mut w_l = 0.0;
        for s in stumps {
            w_l += s.w_l;
            items.push((s.threshold, s.w_r));
        }
        items.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut thresholds: Vec<f64> = Vec::with_capacity(items.len());
        let mut merged: Vec<f64> = Vec::with_capacity(items.len());
        for (t, w) in items {
            if thresholds.last() == Some(&t) {
                *merged.last_mut().unwrap() += w;
            } else {
                thresholds.push(t);
                merged.push(w);
            }
        }
        let mut prefix = Vec::with_capacity(merged.len() + 1);
        prefix.push(0.0);
        for w in merged {
            prefix.push(prefix.last().unwrap() + w);
        }
        CoordTable {
            thresholds,
            prefix,
            w_l,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Number of thresholds `<= v`.
    #[inline]
    pub fn count_le(&self, v: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= v)
    }

    #[inline]
    pub fn count_lt(&self, v: f64) -> usize {
        self.thresholds.partition_point(|&t| t < v)
    }

    /// Regions reachable from `x` within `eps`.
    #[inline]
    pub fn reach(&self, x: f64, eps: f64) -> (usize, usize) {
        (self.count_le(x - eps), self.count_le(x + eps))
    }

    /// `y * prefix[r]` minimised over `r in [a, b]`, first minimiser.
    pub fn min_range(&self, y: f64, a: usize, b: usize) -> (f64, usize) {
        let mut best = y * self.prefix[a];
        let mut arg = a;
        for r in a + 1..=b {
            let v = y * self.prefix[r];
            if v < best {
                best = v;
                arg = r;
            }
        }
        (best, arg)
    }

    /// Exact minimum of this coordinate's contribution over the box.
    pub fn min_contribution(&self, x: f64, y: f64, eps: f64) -> f64 {
        if self.is_empty() {
            return y * self.w_l;
        }
        let (a, b) = self.reach(x, eps);
        y * self.w_l + self.min_range(y, a, b).0
    }

    /// `(h_l, h_r)`: minima of `y * sum w_r [x + d >= b_s]` over `d < b - x`
    /// and over `d >= b - x` within `|d| <= eps`; `+inf` for an empty side.
    pub fn split_terms(&self, x: f64, y: f64, eps: f64, b: f64) -> (f64, f64) {
        let lo = x - eps;
        let hi = x + eps;
        let (i0, i1) = (self.count_le(lo), self.count_le(hi));
        let h_l = if lo < b {
            let top = i1.min(self.count_lt(b)).max(i0);
            self.min_range(y, i0, top).0
        } else {
            f64::INFINITY
        };
        let h_r = if b <= hi {
            let bottom = i0.max(self.count_le(b)).min(i1);
            self.min_range(y, bottom, i1).0
        } else {
            f64::INFINITY
        };
        (h_l, h_r)
    }
}

/// Result of the minimal-perturbation search.
#[derive(Clone, Debug, PartialEq)]
pub struct MinPerturbation {
    /// Smallest candidate radius at which the point stops being robust;
    /// `+inf` when no radius flips it.
    pub radius: f64,
    pub delta: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct StumpEnsemble {
    stumps: Vec<Stump>,
    coord_index: Vec<Vec<usize>>,
    tables: Vec<CoordTable>,
    n_features: usize,
    pub loss_kind: LossKind,
    pub eps_trained: f64,
    pub w_max: f64,
    /// Shrinkage used in training; already folded into the weights.
    pub shrinkage: f64,
}

impl PartialEq for StumpEnsemble {
    fn eq(&self, other: &Self) -> bool {
        self.stumps == other.stumps
            && self.n_features == other.n_features
            && self.loss_kind == other.loss_kind
            && self.eps_trained == other.eps_trained
            && self.w_max == other.w_max
            && self.shrinkage == other.shrinkage
    }
}

impl StumpEnsemble {
    pub fn new(n_features: usize, loss_kind: LossKind, eps_trained: f64, w_max: f64) -> Self {
        StumpEnsemble {
            stumps: Vec::new(),
            coord_index: vec![Vec::new(); n_features],
            tables: vec![CoordTable::default(); n_features],
            n_features,
            loss_kind,
            eps_trained,
            w_max,
            shrinkage: 1.0,
        }
    }

    pub fn from_stumps(
        n_features: usize,
        stumps: Vec<Stump>,
        loss_kind: LossKind,
        eps_trained: f64,
        w_max: f64,
    ) -> Result<Self, ModelError> {
        let mut e = StumpEnsemble::new(n_features, loss_kind, eps_trained, w_max);
        for s in &stumps {
            if s.coord >= n_features {
                return Err(ModelError::DimensionMismatch {
                    expected: n_features,
                    found: s.coord + 1,
                });
            }
        }
        for (t, s) in stumps.iter().enumerate() {
            e.coord_index[s.coord].push(t);
        }
        e.stumps = stumps;
        for k in 0..n_features {
            e.rebuild(k);
        }
        Ok(e)
    }

    fn rebuild(&mut self, k: usize) {
        self.tables[k] = CoordTable::build(self.coord_index[k].iter().map(|&t| &self.stumps[t]));
    }

    /// Appends a stump. Panics if its coordinate is out of range.
    pub fn push(&mut self, s: Stump) {
        assert!(s.coord < self.n_features, "stump coordinate out of range");
        self.coord_index[s.coord].push(self.stumps.len());
        self.stumps.push(s);
        self.rebuild(s.coord);
    }

    pub fn pop(&mut self) -> Option<Stump> {
        let s = self.stumps.pop()?;
        self.coord_index[s.coord].pop();
        self.rebuild(s.coord);
        Some(s)
    }

    pub fn truncate(&mut self, len: usize) {
        while self.stumps.len() > len {
            self.pop();
        }
    }

    pub fn stumps(&self) -> &[Stump] {
        &self.stumps
    }

    /// Indices of the stumps on each coordinate, in insertion order.
    pub fn coord_index(&self) -> &[Vec<usize>] {
        &self.coord_index
    }

    pub fn len(&self) -> usize {
        self.stumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stumps.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub(crate) fn table(&self, k: usize) -> &CoordTable {
        &self.tables[k]
    }

    /// Same model with every weight negated.
    pub fn negated(&self) -> StumpEnsemble {
        let stumps = self.stumps.iter().map(|s| s.scaled(-1.0)).collect();
        let mut e = StumpEnsemble::from_stumps(self.n_features, stumps, self.loss_kind, self.eps_trained, self.w_max)
            .expect("coordinates already validated");
        e.shrinkage = self.shrinkage;
        e
    }

    pub fn extend_from(&mut self, other: &StumpEnsemble) {
        for s in &other.stumps {
            self.push(*s);
        }
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|s| s.predict(x)).sum()
    }

    pub fn margin(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(self.n_features, x)?;
        Ok(self.score(x))
    }

    /// Exact minimum margin over the eps-box via per-coordinate scans.
    pub fn certify_exact(&self, x: &[f64], y: f64, eps: f64) -> Result<CertResult, ModelError> {
        check_dim(self.n_features, x)?;
        let mut delta = vec![0.0; self.n_features];
        for (k, t) in self.tables.iter().enumerate() {
            if t.is_empty() {
                continue;
            }
            let (a, b) = t.reach(x[k], eps);
            if a == b {
                continue;
            }
            let (_, arg) = t.min_range(y, a, b);
            delta[k] = if arg == a {
                -eps
            } else {
                step_onto(x[k], t.thresholds[arg - 1])
            };
        }
        let z: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let margin_min = y * self.score(&z);
        Ok(CertResult {
            margin_min,
            robust: margin_min > 0.0,
            delta_star: delta,
            exact: true,
        })
    }

    /// Sum of per-coordinate minima; equals `certify_exact` up to rounding.
    pub fn exact_min_margin(&self, x: &[f64], y: f64, eps: f64) -> f64 {
        self.tables
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.is_empty())
            .map(|(k, t)| t.min_contribution(x[k], y, eps))
            .sum()
    }

    /// Stump-wise lower bound: each stump minimised separately.
    pub fn bound_margin(&self, x: &[f64], y: f64, eps: f64) -> f64 {
        self.stumps.iter().map(|s| s.min_margin(x, y, eps)).sum()
    }

    /// Smallest radius among `|b_t - x_{c_t}| + nu` at which the exact
    /// certificate fails, with the perturbation realising it.
    pub fn min_perturbation(&self, x: &[f64], y: f64, nu: f64) -> Result<MinPerturbation, ModelError> {
        check_dim(self.n_features, x)?;
        if y * self.score(x) <= 0.0 {
            return Err(ModelError::AlreadyMisclassified);
        }
        let mut radii: Vec<f64> = self
            .stumps
            .iter()
            .map(|s| (s.threshold - x[s.coord]).abs() + nu)
            .collect();
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        let robust_at = |r: f64| self.certify_exact(x, y, r).map(|c| c.robust);
        if radii.is_empty() || robust_at(*radii.last().unwrap())? {
            return Ok(MinPerturbation {
                radius: f64::INFINITY,
                delta: None,
            });
        }
        // robustness only gets lost as the radius grows
        let (mut lo, mut hi) = (0usize, radii.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if robust_at(radii[mid])? {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let cert = self.certify_exact(x, y, radii[lo])?;
        Ok(MinPerturbation {
            radius: radii[lo],
            delta: Some(cert.delta_star),
        })
    }
}

/// Smallest `d` with `x + d >= t`, starting from `t - x`.
fn step_onto(x: f64, t: f64) -> f64 {
    let mut d = t - x;
    while x + d < t {
        d = d.next_up();
    }
    d
}

impl MarginModel for StumpEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, x: &[f64]) -> f64 {
        StumpEnsemble::score(self, x)
    }

    fn split_points(&self) -> Vec<(usize, f64)> {
        self.stumps.iter().map(|s| (s.coord, s.threshold)).collect()
    }
}

pub fn stump_margin(ens: &StumpEnsemble, x: &[f64]) -> Result<f64, ModelError> {
    ens.margin(x)
}

pub fn certify_stumps_exact(ens: &StumpEnsemble, x: &[f64], y: f64, eps: f64) -> Result<CertResult, ModelError> {
    ens.certify_exact(x, y, eps)
}

pub fn min_perturbation_stumps(
    ens: &StumpEnsemble,
    x: &[f64],
    y: f64,
    nu: f64,
) -> Result<MinPerturbation, ModelError> {
    ens.min_perturbation(x, y, nu)
}

/// `(h_l, h_r)` for the stumps of one coordinate at a new threshold `b`.
pub fn robust_stump_objective_terms(stumps_j: &[Stump], x_ij: f64, y: f64, eps: f64, b: f64) -> (f64, f64) {
    CoordTable::build(stumps_j.iter()).split_terms(x_ij, y, eps, b)
}
