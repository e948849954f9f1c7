//! Candidate thresholds and the sorted sweep that scores every threshold of
//! a coordinate under the worst-case side assignment.
//!
//! A point `x` relative to a threshold `b` is *left-only* when
//! `x < b - eps`, *right-only* when `x > b + eps`, and reaches both sides
//! otherwise. The same predicates drive [`crate::trees::tree_min_margin`].

use std::cmp::Ordering;

use ndarray::Array2;
use rayon::prelude::*;

use crate::loss::{
    clamped_exp, fit_exponential_aggregates, fit_leaf_weights, LeafFit, LossKind, SigmaAggregates,
    SignDomain, WeightedCase,
};

/// Offset that places candidate thresholds just outside the eps-box.
pub const NU: f64 = 1e-6;

const TIE_RTOL: f64 = 1e-12;

/// A scored split: coordinate, threshold, weights and objective value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateSplit {
    pub coord: usize,
    pub threshold: f64,
    pub w_l: f64,
    pub w_r: f64,
    pub loss: f64,
}

/// `{v - eps - NU, v + eps + NU}` for sorted `values`, restricted to (0, 1),
/// sorted and deduplicated.
pub fn candidate_thresholds(sorted_values: &[f64], eps: f64) -> Vec<f64> {
    let off = eps + NU;
    let mut out = Vec::with_capacity(2 * sorted_values.len());
    let (mut i, mut k) = (0, 0);
    let n = sorted_values.len();
    while i < n || k < n {
        let lo = (i < n).then(|| sorted_values[i] - off);
        let hi = (k < n).then(|| sorted_values[k] + off);
        let v = match (lo, hi) {
            (Some(a), Some(b)) if a <= b => {
                i += 1;
                a
            }
            (Some(a), None) => {
                i += 1;
                a
            }
            (_, Some(b)) => {
                k += 1;
                b
            }
            (None, None) => unreachable!(),
        };
        if v > 0.0 && v < 1.0 && out.last() != Some(&v) {
            out.push(v);
        }
    }
    out
}

pub(crate) fn ties(a: f64, best: f64) -> bool {
    a <= best + TIE_RTOL * best.abs()
}

/// Lowest loss first; near-equal losses fall back to coordinate, then threshold.
pub(crate) fn cmp_splits(a: &CandidateSplit, b: &CandidateSplit) -> Ordering {
    let scale = a.loss.abs().max(b.loss.abs());
    if (a.loss - b.loss).abs() <= TIE_RTOL * scale {
        a.coord
            .cmp(&b.coord)
            .then(a.threshold.total_cmp(&b.threshold))
    } else {
        a.loss.total_cmp(&b.loss)
    }
}

/// Index of the first minimum.
pub(crate) fn first_min(fits: &[Option<LeafFit>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, f) in fits.iter().enumerate() {
        if let Some(f) = f {
            if best.is_none_or(|(_, v)| f.loss < v) {
                best = Some((k, f.loss));
            }
        }
    }
    best.map(|(k, _)| k)
}

/// Takes the first run of equal-loss thresholds, widens it to the half-way
/// points of its neighbours when those tie too, and returns the centre of the
/// run if it still attains the minimum. Otherwise the first minimiser.
pub(crate) fn refine_threshold(
    cands: &[f64],
    fits: &[Option<LeafFit>],
    mut eval: impl FnMut(f64) -> Option<LeafFit>,
) -> Option<(f64, LeafFit)> {
    let a = first_min(fits)?;
    let best = fits[a]?.loss;
    let eq = |f: &Option<LeafFit>| f.is_some_and(|f| ties(f.loss, best));
    let mut c = a;
    while c + 1 < cands.len() && eq(&fits[c + 1]) {
        c += 1;
    }
    let base = (cands[a], fits[a]?);
    let mut lo = cands[a];
    let mut hi = cands[c];
    if a > 0 {
        let m = 0.5 * (cands[a - 1] + cands[a]);
        if eq(&eval(m)) {
            lo = m;
        }
    }
    if c + 1 < cands.len() {
        let m = 0.5 * (cands[c] + cands[c + 1]);
        if eq(&eval(m)) {
            hi = m;
        }
    }
    let mid = 0.5 * (lo + hi);
    if mid == cands[a] {
        return Some(base);
    }
    match eval(mid) {
        Some(f) if ties(f.loss, best) => Some((mid, f)),
        _ => Some(base),
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ScanParams {
    pub eps: f64,
    pub kind: LossKind,
    pub w_max: f64,
    pub tol: f64,
    /// Minimum number of reachable points on each side.
    pub min_leaf: usize,
}

/// The members of one node together with their residual offsets.
pub(crate) struct NodeView<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a [f64],
    pub offsets: &'a [f64],
    /// Per coordinate, the node's members sorted by that coordinate.
    pub orders: &'a [Vec<u32>],
    /// Common log-shift for the exponential weights of this node.
    pub shift: f64,
}

impl<'a> NodeView<'a> {
    pub fn new(x: &'a Array2<f64>, y: &'a [f64], offsets: &'a [f64], orders: &'a [Vec<u32>]) -> Self {
        let shift = orders
            .first()
            .map(|o| {
                o.iter()
                    .map(|&i| -offsets[i as usize])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .filter(|s| s.is_finite())
            .unwrap_or(0.0);
        NodeView {
            x,
            y,
            offsets,
            orders,
            shift,
        }
    }

    pub fn len(&self) -> usize {
        self.orders.first().map_or(0, Vec::len)
    }

    fn gamma(&self, i: usize) -> f64 {
        clamped_exp(-self.offsets[i] - self.shift)
    }
}

/// Bucket totals for the three reachability classes, split by label.
#[derive(Clone, Copy, Debug, Default)]
struct ClassSums {
    lp: f64,
    ln: f64,
    mp: f64,
    mn: f64,
    rp: f64,
    rn: f64,
}

fn fit_exponential_classes(s: &ClassSums, shift: f64, w_max: f64) -> LeafFit {
    let pos = SigmaAggregates {
        sigma_11: s.rp,
        sigma_1m1: s.rn + s.mn,
        sigma_01: s.lp + s.mp,
        sigma_0m1: s.ln,
        log_shift: shift,
    };
    let neg = SigmaAggregates {
        sigma_11: s.rp + s.mp,
        sigma_1m1: s.rn,
        sigma_01: s.lp,
        sigma_0m1: s.ln + s.mn,
        log_shift: shift,
    };
    let (a_l, a_r) = fit_exponential_aggregates(&pos, SignDomain::NonNeg, w_max);
    let (b_l, b_r) = fit_exponential_aggregates(&neg, SignDomain::NonPos, w_max);
    let va = pos.scaled_loss(a_l, a_r);
    let vb = neg.scaled_loss(b_l, b_r);
    if va <= vb {
        LeafFit { w_l: a_l, w_r: a_r, loss: va }
    } else {
        LeafFit { w_l: b_l, w_r: b_r, loss: vb }
    }
}

/// Fits both sign branches with the case bits frozen per branch.
/// `class` maps a member to 0 (left-only), 1 (both) or 2 (right-only).
fn fit_generic_classes(
    view: &NodeView,
    members: &[u32],
    class: impl Fn(usize) -> u8,
    p: &ScanParams,
) -> Option<LeafFit> {
    let mut best: Option<LeafFit> = None;
    for domain in [SignDomain::NonNeg, SignDomain::NonPos] {
        let cases: Vec<WeightedCase> = members
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let i = i as usize;
                let y = view.y[i];
                let indicator = match class(k) {
                    0 => false,
                    2 => true,
                    // worst case takes the w_r side iff y * w_r < 0
                    _ => (domain == SignDomain::NonNeg) == (y < 0.0),
                };
                WeightedCase {
                    offset: view.offsets[i],
                    indicator,
                    label: y,
                }
            })
            .collect();
        let fit = fit_leaf_weights(&cases, p.kind, domain, p.w_max, p.tol).ok()?;
        if best.is_none_or(|b| fit.loss < b.loss) {
            best = Some(fit);
        }
    }
    best
}

/// Scores every candidate threshold of coordinate `j`.
pub(crate) fn scan_coordinate(view: &NodeView, j: usize, p: &ScanParams) -> (Vec<f64>, Vec<Option<LeafFit>>) {
    let order = &view.orders[j];
    let m = order.len();
    let xs: Vec<f64> = order.iter().map(|&i| view.x[[i as usize, j]]).collect();
    let cands = candidate_thresholds(&xs, p.eps);
    let mut fits = Vec::with_capacity(cands.len());

    let mut cum_p = vec![0.0; m + 1];
    let mut cum_n = vec![0.0; m + 1];
    let mut suf_p = vec![0.0; m + 1];
    let mut suf_n = vec![0.0; m + 1];
    let exponential = p.kind == LossKind::Exponential;
    if exponential {
        for (k, &i) in order.iter().enumerate() {
            let i = i as usize;
            let g = view.gamma(i);
            let pos = view.y[i] > 0.0;
            cum_p[k + 1] = cum_p[k] + if pos { g } else { 0.0 };
            cum_n[k + 1] = cum_n[k] + if pos { 0.0 } else { g };
        }
        for k in (0..m).rev() {
            let i = order[k] as usize;
            let g = view.gamma(i);
            let pos = view.y[i] > 0.0;
            suf_p[k] = suf_p[k + 1] + if pos { g } else { 0.0 };
            suf_n[k] = suf_n[k + 1] + if pos { 0.0 } else { g };
        }
    }

    let (mut pl, mut qr) = (0usize, 0usize);
    for &b in &cands {
        let lo_cut = b - p.eps;
        let hi_cut = b + p.eps;
        while pl < m && xs[pl] < lo_cut {
            pl += 1;
        }
        while qr < m && xs[qr] <= hi_cut {
            qr += 1;
        }
        let n_left = qr;
        let n_right = m - pl;
        if n_left < p.min_leaf || n_right < p.min_leaf {
            fits.push(None);
            continue;
        }
        let fit = if exponential {
            let s = ClassSums {
                lp: cum_p[pl],
                ln: cum_n[pl],
                mp: (cum_p[qr] - cum_p[pl]).max(0.0),
                mn: (cum_n[qr] - cum_n[pl]).max(0.0),
                rp: suf_p[qr],
                rn: suf_n[qr],
            };
            Some(fit_exponential_classes(&s, view.shift, p.w_max))
        } else {
            fit_generic_classes(
                view,
                order,
                |k| {
                    if k < pl {
                        0
                    } else if k >= qr {
                        2
                    } else {
                        1
                    }
                },
                p,
            )
        };
        fits.push(fit);
    }
    (cands, fits)
}

/// Scores a single threshold by direct summation.
pub(crate) fn eval_threshold(view: &NodeView, j: usize, b: f64, p: &ScanParams) -> Option<LeafFit> {
    let order = &view.orders[j];
    let lo_cut = b - p.eps;
    let hi_cut = b + p.eps;
    let class = |i: usize| -> u8 {
        let v = view.x[[i, j]];
        if v < lo_cut {
            0
        } else if v > hi_cut {
            2
        } else {
            1
        }
    };
    let n_left = order.iter().filter(|&&i| class(i as usize) != 2).count();
    let n_right = order.iter().filter(|&&i| class(i as usize) != 0).count();
    if n_left < p.min_leaf || n_right < p.min_leaf {
        return None;
    }
    if p.kind == LossKind::Exponential {
        let mut s = ClassSums::default();
        for &i in order {
            let i = i as usize;
            let g = view.gamma(i);
            let pos = view.y[i] > 0.0;
            let slot = match (class(i), pos) {
                (0, true) => &mut s.lp,
                (0, false) => &mut s.ln,
                (1, true) => &mut s.mp,
                (1, false) => &mut s.mn,
                (_, true) => &mut s.rp,
                (_, false) => &mut s.rn,
            };
            *slot += g;
        }
        Some(fit_exponential_classes(&s, view.shift, p.w_max))
    } else {
        fit_generic_classes(view, order, |k| class(order[k] as usize), p)
    }
}

/// Best split over all coordinates with the deterministic tie-break and the
/// midpoint refinement applied to the winning coordinate.
pub(crate) fn best_split(view: &NodeView, p: &ScanParams) -> Option<CandidateSplit> {
    let d = view.x.ncols();
    let per_coord: Vec<Option<CandidateSplit>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let (cands, fits) = scan_coordinate(view, j, p);
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
    for c in per_coord.into_iter().flatten() {
        if best.is_none_or(|b| cmp_splits(&c, &b) == Ordering::Less) {
            best = Some(c);
        }
    }
    let winner = best?;
    let j = winner.coord;
    let (cands, fits) = scan_coordinate(view, j, p);
    let (b, f) = refine_threshold(&cands, &fits, |t| eval_threshold(view, j, t, p))?;
    Some(CandidateSplit {
        coord: j,
        threshold: b,
        w_l: f.w_l,
        w_r: f.w_r,
        loss: f.loss,
    })
}

/// Per-coordinate sort of the given rows.
pub(crate) fn column_orders(x: &Array2<f64>, rows: &[u32]) -> Vec<Vec<u32>> {
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut o = rows.to_vec();
            o.sort_by(|&a, &b| x[[a as usize, j]].total_cmp(&x[[b as usize, j]]).then(a.cmp(&b)));
            o
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_sorted_unique_inside_unit_interval() {
        let c = candidate_thresholds(&[0.0, 0.2, 0.2, 0.9], 0.1);
        let expect = [0.1 - NU, 0.1 + NU, 0.3 + NU, 0.8 - NU];
        assert_eq!(c.len(), expect.len(), "{c:?}");
        for (a, b) in c.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tie_break_prefers_low_coordinate() {
        let a = CandidateSplit { coord: 2, threshold: 0.1, w_l: 0.0, w_r: 0.0, loss: 1.0 };
        let b = CandidateSplit { coord: 1, threshold: 0.9, w_l: 0.0, w_r: 0.0, loss: 1.0 + 1e-15 };
        assert_eq!(cmp_splits(&b, &a), Ordering::Less);
        let c = CandidateSplit { loss: 0.5, ..a };
        assert_eq!(cmp_splits(&c, &b), Ordering::Less);
    }

    #[test]
    fn refinement_centres_equal_run() {
        let cands = [0.1, 0.2, 0.3, 0.4, 0.5];
        let fit = |l: f64| Some(LeafFit { w_l: 0.0, w_r: 1.0, loss: l });
        let fits = [fit(3.0), fit(1.0), fit(1.0), fit(2.0), fit(1.0)];
        // neighbours' midpoints 0.15 and 0.35 do not tie
        let (b, _) = refine_threshold(&cands, &fits, |t| fit(if (0.2..=0.3).contains(&t) { 1.0 } else { 5.0 })).unwrap();
        assert!((b - 0.25).abs() < 1e-12);
        // midpoints tie as well: run extends to [0.15, 0.35]
        let (b, _) = refine_threshold(&cands, &fits, |t| fit(if (0.15..=0.35).contains(&t) { 1.0 } else { 5.0 })).unwrap();
        assert!((b - 0.25).abs() < 1e-12);
        // a refit that loses falls back to the first minimiser
        let (b, _) = refine_threshold(&cands, &fits, |_| fit(9.0)).unwrap();
        assert_eq!(b, 0.2);
    }
}
