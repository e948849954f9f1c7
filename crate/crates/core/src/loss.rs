//! Margin losses and the small convex problems that produce leaf weights.
//!
//! Weights are parametrised by the two leaf values `u_l = w_l` and
//! `u_r = w_l + w_r`. With the case bits frozen the objective separates in
//! `(u_l, u_r)`, and the clamp `|u_l|, |u_r| <= w_max` is a box, so each leaf
//! is a one-dimensional problem.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponents are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 700.0;

const BISECTION_ITERS: usize = 60;
const GOLDEN_ITERS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("no cases to fit")]
    EmptyCases,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Exponential,
    Logistic,
}

impl LossKind {
    /// Loss of a functional margin `y F(x)`.
    pub fn value(self, margin: f64) -> f64 {
        match self {
            LossKind::Exponential => clamped_exp(-margin),
            LossKind::Logistic => {
                if margin >= 0.0 {
                    (-margin).exp().ln_1p()
                } else {
                    -margin + margin.exp().ln_1p()
                }
            }
        }
    }

    /// Derivative of [`LossKind::value`] with respect to the margin.
    pub fn derivative(self, margin: f64) -> f64 {
        match self {
            LossKind::Exponential => -clamped_exp(-margin),
            LossKind::Logistic => {
                if margin >= 0.0 {
                    let e = (-margin).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + margin.exp())
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Exponential => "exponential",
            LossKind::Logistic => "logistic",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exponential" | "exp" => Ok(LossKind::Exponential),
            "logistic" => Ok(LossKind::Logistic),
            other => Err(format!("unknown loss '{other}'")),
        }
    }
}

pub fn margin_loss(kind: LossKind, margin: f64) -> f64 {
    kind.value(margin)
}

#[inline]
pub fn clamped_exp(z: f64) -> f64 {
    z.clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// Allowed sign of `w_r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignDomain {
    Free,
    NonNeg,
    NonPos,
}

impl SignDomain {
    fn admits(self, w_r: f64) -> bool {
        match self {
            SignDomain::Free => true,
            SignDomain::NonNeg => w_r >= 0.0,
            SignDomain::NonPos => w_r <= 0.0,
        }
    }
}

/// One point of a frozen-indicator problem. Its term is
/// `L(offset + label * (w_l + w_r * indicator))`, so for the exponential
/// loss `gamma = exp(-offset)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedCase {
    pub offset: f64,
    pub indicator: bool,
    pub label: f64,
}

impl WeightedCase {
    pub fn margin(&self, w_l: f64, w_r: f64) -> f64 {
        let w = if self.indicator { w_l + w_r } else { w_l };
        self.offset + self.label * w
    }
}

/// Bucket sums of `gamma_i`, stored relative to `exp(log_shift)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SigmaAggregates {
    pub sigma_11: f64,
    pub sigma_1m1: f64,
    pub sigma_01: f64,
    pub sigma_0m1: f64,
    pub log_shift: f64,
}

impl SigmaAggregates {
    pub fn from_cases(cases: &[WeightedCase]) -> Self {
        let shift = cases
            .iter()
            .map(|c| -c.offset)
            .fold(f64::NEG_INFINITY, f64::max);
        let shift = if shift.is_finite() { shift } else { 0.0 };
        let mut s = SigmaAggregates {
            log_shift: shift,
            ..Default::default()
        };
        for c in cases {
            let g = clamped_exp(-c.offset - shift);
            match (c.indicator, c.label > 0.0) {
                (true, true) => s.sigma_11 += g,
                (true, false) => s.sigma_1m1 += g,
                (false, true) => s.sigma_01 += g,
                (false, false) => s.sigma_0m1 += g,
            }
        }
        s
    }

    /// Objective divided by `exp(log_shift)`.
    pub fn scaled_loss(&self, w_l: f64, w_r: f64) -> f64 {
        let u_r = w_l + w_r;
        term(self.sigma_01, self.sigma_0m1, w_l) + term(self.sigma_11, self.sigma_1m1, u_r)
    }

    pub fn loss(&self, w_l: f64, w_r: f64) -> f64 {
        self.scaled_loss(w_l, w_r) * clamped_exp(self.log_shift)
    }
}

#[inline]
fn term(a: f64, b: f64, u: f64) -> f64 {
    let mut t = 0.0;
    if a > 0.0 {
        t += a * (-u).exp();
    }
    if b > 0.0 {
        t += b * u.exp();
    }
    t
}

/// Result of a weight fit. `loss` is the objective at `(w_l, w_r)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeafFit {
    pub w_l: f64,
    pub w_r: f64,
    pub loss: f64,
}

/// `v` clamped to `[lo, hi]`. Bounds computed from differences can cross by
/// an ulp when the interval is a single point; `hi` wins then.
#[inline]
fn clamp_to(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Minimiser of `a e^{-u} + b e^{u}` on `[lo, hi]`; `None` when both are zero.
fn exp_leaf(a: f64, b: f64, lo: f64, hi: f64) -> Option<f64> {
    match (a > 0.0, b > 0.0) {
        (true, true) => Some(clamp_to(0.5 * (a / b).ln(), lo, hi)),
        (true, false) => Some(hi),
        (false, true) => Some(lo),
        (false, false) => None,
    }
}

/// Closed-form exponential fit on aggregates. Returns `(w_l, w_r)`.
pub fn fit_exponential_aggregates(s: &SigmaAggregates, domain: SignDomain, w_max: f64) -> (f64, f64) {
    let ul = exp_leaf(s.sigma_01, s.sigma_0m1, -w_max, w_max);
    let ur = exp_leaf(s.sigma_11, s.sigma_1m1, -w_max, w_max);
    let (u_l, u_r) = match (ul, ur) {
        (Some(l), Some(r)) => (l, r),
        (Some(l), None) => (l, l),
        (None, Some(r)) => (r, r),
        (None, None) => (0.0, 0.0),
    };
    if domain.admits(u_r - u_l) {
        return (u_l, u_r - u_l);
    }
    let u = exp_leaf(
        s.sigma_01 + s.sigma_11,
        s.sigma_0m1 + s.sigma_1m1,
        -w_max,
        w_max,
    )
    .unwrap_or(0.0);
    (u, 0.0)
}

fn check_params(n: usize, w_max: f64, tol: f64) -> Result<(), LossError> {
    if n == 0 {
        return Err(LossError::EmptyCases);
    }
    if !(w_max > 0.0 && w_max.is_finite()) {
        return Err(LossError::InvalidParameter("w_max must be positive and finite"));
    }
    if !(tol > 0.0) {
        return Err(LossError::InvalidParameter("tol must be positive"));
    }
    Ok(())
}

pub fn frozen_loss(cases: &[WeightedCase], kind: LossKind, w_l: f64, w_r: f64) -> f64 {
    cases.iter().map(|c| kind.value(c.margin(w_l, w_r))).sum()
}

/// Fits `(w_l, w_r)` for frozen case bits: closed form for the exponential
/// loss, bisection for the logistic loss.
pub fn fit_leaf_weights(
    cases: &[WeightedCase],
    kind: LossKind,
    domain: SignDomain,
    w_max: f64,
    tol: f64,
) -> Result<LeafFit, LossError> {
    check_params(cases.len(), w_max, tol)?;
    match kind {
        LossKind::Exponential => {
            let s = SigmaAggregates::from_cases(cases);
            let (w_l, w_r) = fit_exponential_aggregates(&s, domain, w_max);
            Ok(LeafFit {
                w_l,
                w_r,
                loss: frozen_loss(cases, kind, w_l, w_r),
            })
        }
        LossKind::Logistic => fit_leaf_weights_bisection(cases, kind, domain, w_max, tol),
    }
}

/// Per-leaf bisection on the derivative; valid for either loss.
pub fn fit_leaf_weights_bisection(
    cases: &[WeightedCase],
    kind: LossKind,
    domain: SignDomain,
    w_max: f64,
    tol: f64,
) -> Result<LeafFit, LossError> {
    check_params(cases.len(), w_max, tol)?;
    // Shifting every offset by a constant leaves the exponential minimiser unchanged.
    let shift = match kind {
        LossKind::Exponential => cases.iter().map(|c| -c.offset).fold(f64::NEG_INFINITY, f64::max),
        LossKind::Logistic => 0.0,
    };
    let leaf = |pick: &dyn Fn(&WeightedCase) -> bool| -> Option<f64> {
        let sel: Vec<(f64, f64)> = cases
            .iter()
            .filter(|c| pick(c))
            .map(|c| (c.offset + shift, c.label))
            .collect();
        if sel.is_empty() {
            return None;
        }
        Some(bisect_leaf(&sel, kind, -w_max, w_max, tol))
    };
    let ul = leaf(&|c| !c.indicator);
    let ur = leaf(&|c| c.indicator);
    let (u_l, u_r) = match (ul, ur) {
        (Some(l), Some(r)) => (l, r),
        (Some(l), None) => (l, l),
        (None, Some(r)) => (r, r),
        (None, None) => (0.0, 0.0),
    };
    let (w_l, w_r) = if domain.admits(u_r - u_l) {
        (u_l, u_r - u_l)
    } else {
        (leaf(&|_| true).unwrap_or(0.0), 0.0)
    };
    Ok(LeafFit {
        w_l,
        w_r,
        loss: frozen_loss(cases, kind, w_l, w_r),
    })
}

/// Minimises `sum L(o_i + y_i u)` over `u in [lo, hi]`.
fn bisect_leaf(cases: &[(f64, f64)], kind: LossKind, lo: f64, hi: f64, tol: f64) -> f64 {
    let slope = |u: f64| -> f64 { cases.iter().map(|&(o, y)| y * kind.derivative(o + y * u)).sum() };
    if slope(lo) >= 0.0 {
        return lo;
    }
    if slope(hi) <= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..BISECTION_ITERS {
        if b - a <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if slope(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    0.5 * (a + b)
}

/// One sweep of coordinate descent on the exponential objective: `w_l` given
/// `w_r`, then `w_r` given `w_l`, each projected onto the feasible set.
pub fn coordinate_descent_sweep(
    s: &SigmaAggregates,
    w_l: f64,
    w_r: f64,
    domain: SignDomain,
    w_max: f64,
) -> (f64, f64) {
    let lo = (-w_max).max(-w_max - w_r);
    let hi = w_max.min(w_max - w_r);
    let a = s.sigma_11 * (-w_r).exp() + s.sigma_01;
    let b = s.sigma_1m1 * w_r.exp() + s.sigma_0m1;
    let w_l = exp_leaf(a, b, lo, hi).unwrap_or(clamp_to(w_l, lo, hi));

    let (mut lo, mut hi) = (-w_max - w_l, w_max - w_l);
    match domain {
        SignDomain::Free => {}
        SignDomain::NonNeg => lo = lo.max(0.0),
        SignDomain::NonPos => hi = hi.min(0.0),
    }
    let a = s.sigma_11 * (-w_l).exp();
    let b = s.sigma_1m1 * w_l.exp();
    let w_r = exp_leaf(a, b, lo, hi).unwrap_or(clamp_to(w_r, lo, hi));
    (w_l, w_r)
}

/// One point of the exact stump problem. Its term is
/// `L(offset + label * w_l + min(h_left, h_right + label * w_r))`; an
/// unreachable side carries `+inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StumpCase {
    pub offset: f64,
    pub label: f64,
    pub h_left: f64,
    pub h_right: f64,
}

impl StumpCase {
    pub fn margin(&self, w_l: f64, w_r: f64) -> f64 {
        self.offset + self.label * w_l + self.h_left.min(self.h_right + self.label * w_r)
    }
}

pub fn stump_case_loss(cases: &[StumpCase], kind: LossKind, w_l: f64, w_r: f64) -> f64 {
    cases.iter().map(|c| kind.value(c.margin(w_l, w_r))).sum()
}

/// Exact minimiser of the stump objective over the clamped box.
///
/// Exponential loss: on each interval of `w_r` between consecutive
/// breakpoints the active side of every point is fixed, which leaves a
/// separable problem restricted to a band `lo <= u_r - u_l <= hi`, solved in
/// closed form. Logistic loss: golden-section search on the profile in `w_r`.
pub fn fit_stump_cases(
    cases: &[StumpCase],
    kind: LossKind,
    w_max: f64,
    tol: f64,
) -> Result<LeafFit, LossError> {
    check_params(cases.len(), w_max, tol)?;
    match kind {
        LossKind::Exponential => Ok(fit_stump_cases_intervals(cases, w_max)),
        LossKind::Logistic => fit_stump_cases_profile(cases, kind, w_max, tol),
    }
}

fn fit_stump_cases_intervals(cases: &[StumpCase], w_max: f64) -> LeafFit {
    let shift = cases
        .iter()
        .map(|c| -c.offset - c.h_left.min(c.h_right))
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let weight = |c: &StumpCase, h: f64| clamped_exp(-c.offset - h - shift);

    // Fixed parts and switching events. Before its breakpoint a positive
    // point sits on the right side and a negative point on the left.
    let (mut a0, mut b0, mut a1, mut b1) = (0.0, 0.0, 0.0, 0.0);
    struct Event {
        tau: f64,
        pos: bool,
        alpha: f64,
        beta: f64,
    }
    let mut events = Vec::new();
    for c in cases {
        let pos = c.label > 0.0;
        if c.h_left.is_infinite() {
            let g = weight(c, c.h_right);
            if pos { a1 += g } else { b1 += g }
        } else if c.h_right.is_infinite() {
            let g = weight(c, c.h_left);
            if pos { a0 += g } else { b0 += g }
        } else {
            events.push(Event {
                tau: c.label * (c.h_left - c.h_right),
                pos,
                alpha: weight(c, c.h_left),
                beta: weight(c, c.h_right),
            });
        }
    }
    events.sort_by(|p, q| p.tau.total_cmp(&q.tau));
    let m = events.len();
    // prefix over the first k events, suffix over the rest
    let mut pre_a0 = vec![0.0; m + 1];
    let mut pre_b1 = vec![0.0; m + 1];
    for (k, e) in events.iter().enumerate() {
        pre_a0[k + 1] = pre_a0[k] + if e.pos { e.alpha } else { 0.0 };
        pre_b1[k + 1] = pre_b1[k] + if e.pos { 0.0 } else { e.beta };
    }
    let mut suf_a1 = vec![0.0; m + 1];
    let mut suf_b0 = vec![0.0; m + 1];
    for k in (0..m).rev() {
        let e = &events[k];
        suf_a1[k] = suf_a1[k + 1] + if e.pos { e.beta } else { 0.0 };
        suf_b0[k] = suf_b0[k + 1] + if e.pos { 0.0 } else { e.alpha };
    }

    let span = 2.0 * w_max;
    let mut best: Option<(f64, f64, f64)> = None;
    for k in 0..=m {
        let lo = if k == 0 { -span } else { events[k - 1].tau.max(-span) };
        let hi = if k == m { span } else { events[k].tau.min(span) };
        if lo > hi {
            continue;
        }
        let (u_l, u_r, v) = solve_band(
            a0 + pre_a0[k],
            b0 + suf_b0[k],
            a1 + suf_a1[k],
            b1 + pre_b1[k],
            lo,
            hi,
            w_max,
        );
        if best.is_none_or(|(_, _, bv)| v < bv) {
            best = Some((u_l, u_r, v));
        }
    }
    let (u_l, u_r, _) = best.unwrap_or((0.0, 0.0, 0.0));
    let (w_l, w_r) = (u_l, u_r - u_l);
    LeafFit {
        w_l,
        w_r,
        loss: stump_case_loss(cases, LossKind::Exponential, w_l, w_r),
    }
}

/// Minimises `a0 e^{-u_l} + b0 e^{u_l} + a1 e^{-u_r} + b1 e^{u_r}` over the
/// box `|u_l|, |u_r| <= w` intersected with `lo <= u_r - u_l <= hi`.
fn solve_band(a0: f64, b0: f64, a1: f64, b1: f64, lo: f64, hi: f64, w: f64) -> (f64, f64, f64) {
    let value = |ul: f64, ur: f64| term(a0, b0, ul) + term(a1, b1, ur);
    let ul = exp_leaf(a0, b0, -w, w);
    let ur = exp_leaf(a1, b1, -w, w);
    let (u_l, u_r) = match (ul, ur) {
        (Some(l), Some(r)) => {
            let gap = r - l;
            if gap >= lo && gap <= hi {
                (l, r)
            } else {
                let t = if gap < lo { lo } else { hi };
                let (l_lo, l_hi) = ((-w).max(-w - t), w.min(w - t));
                let u = exp_leaf(a0 + a1 * (-t).exp(), b0 + b1 * t.exp(), l_lo, l_hi)
                    .unwrap_or(clamp_to(0.0f64, l_lo, l_hi));
                (u, u + t)
            }
        }
        (Some(l), None) => {
            let l = clamp_to(l, (-w).max(-w - hi), w.min(w - lo));
            let t = clamp_to(0.0f64, lo.max(-w - l), hi.min(w - l));
            (l, l + t)
        }
        (None, Some(r)) => {
            let r = clamp_to(r, (-w).max(-w + lo), w.min(w + hi));
            let t = clamp_to(0.0f64, lo.max(r - w), hi.min(r + w));
            (r - t, r)
        }
        (None, None) => {
            let t = clamp_to(0.0f64, lo, hi);
            let l = clamp_to(0.0f64, (-w).max(-w - t), w.min(w - t));
            (l, l + t)
        }
    };
    (u_l, u_r, value(u_l, u_r))
}

/// Golden-section search over `w_r` with an inner bisection over `w_l`.
pub fn fit_stump_cases_profile(
    cases: &[StumpCase],
    kind: LossKind,
    w_max: f64,
    tol: f64,
) -> Result<LeafFit, LossError> {
    check_params(cases.len(), w_max, tol)?;
    let shift = match kind {
        LossKind::Exponential => cases
            .iter()
            .map(|c| -c.offset - c.h_left.min(c.h_right))
            .fold(f64::NEG_INFINITY, f64::max),
        LossKind::Logistic => 0.0,
    };
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let inner = |w_r: f64| -> (f64, f64) {
        let pts: Vec<(f64, f64)> = cases
            .iter()
            .map(|c| (c.offset + shift + c.h_left.min(c.h_right + c.label * w_r), c.label))
            .collect();
        let lo = (-w_max).max(-w_max - w_r);
        let hi = w_max.min(w_max - w_r);
        let w_l = bisect_leaf(&pts, kind, lo, hi, tol * 1e-3);
        let v = pts.iter().map(|&(o, y)| kind.value(o + y * w_l)).sum();
        (w_l, v)
    };
    let span = 2.0 * w_max;
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (-span, span);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = inner(c).1;
    let mut fd = inner(d).1;
    for _ in 0..GOLDEN_ITERS {
        if b - a <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = inner(c).1;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = inner(d).1;
        }
    }
    let mut best_r = 0.5 * (a + b);
    let mut best = inner(best_r);
    for r in [-span, 0.0, span] {
        let cand = inner(r);
        if cand.1 < best.1 {
            best = cand;
            best_r = r;
        }
    }
    let w_l = best.0;
    Ok(LeafFit {
        w_l,
        w_r: best_r,
        loss: stump_case_loss(cases, kind, w_l, best_r),
    })
}
