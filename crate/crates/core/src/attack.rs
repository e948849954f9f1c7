//! Random corner search in the eps-box and what is built on it: radius
//! estimates and adversarial batches for training.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ModelError};
use crate::MarginModel;

/// Resolution of [`min_radius_estimate`].
pub const RADIUS_RESOLUTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub n_iters: usize,
    pub flip_prob: f64,
    pub seed: u64,
}

impl AttackConfig {
    /// 20 iterations, p = 0.5: used for lower bounds on the robust error.
    pub fn evaluation(seed: u64) -> Self {
        AttackConfig {
            n_iters: 20,
            flip_prob: 0.5,
            seed,
        }
    }

    /// 10 iterations, p = 0.5: used inside adversarial training.
    pub fn training(seed: u64) -> Self {
        AttackConfig {
            n_iters: 10,
            flip_prob: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_iters == 0 {
            return Err(ModelError::InvalidConfig("attack needs at least one iteration".into()));
        }
        if !(self.flip_prob > 0.0 && self.flip_prob <= 1.0) {
            return Err(ModelError::InvalidConfig("flip probability must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult {
    /// Best point found; inside `[0, 1]^d` and within `eps` of the input.
    pub point: Vec<f64>,
    /// `point - x`.
    pub delta: Vec<f64>,
    /// `y F(point)`.
    pub margin: f64,
    pub success: bool,
    /// Number of model evaluations.
    pub queries: usize,
}

/// Independent generator for stream `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Projects `v` onto `[x - eps, x + eps] ∩ [0, 1]` so that the float
/// difference `v - x` also stays within `eps`.
#[inline]
pub fn project(x: f64, v: f64, eps: f64) -> f64 {
    let mut z = v.clamp(x - eps, x + eps).clamp(0.0, 1.0);
    while z - x > eps && z > 0.0 {
        z = z.next_down();
    }
    while x - z > eps && z < 1.0 {
        z = z.next_up();
    }
    z
}

/// Accept-if-better random search over steps `{-2 eps, 0, 2 eps}` per
/// coordinate, drawn with probabilities `{p/2, 1-p, p/2}`. An optional
/// `init` perturbation warm-starts the search.
pub fn cube_attack<M: MarginModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    eps: f64,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
    init: Option<&[f64]>,
) -> AttackResult {
    let d = x.len();
    let mut best: Vec<f64> = match init {
        Some(delta) => x.iter().zip(delta).map(|(&a, &b)| project(a, a + b, eps)).collect(),
        None => x.iter().map(|&a| project(a, a, eps)).collect(),
    };
    let mut v_best = y * model.score(&best);
    let mut queries = 1;
    let mut cand = best.clone();
    let half = 0.5 * cfg.flip_prob;
    for _ in 0..cfg.n_iters {
        let mut moved = false;
        for k in 0..d {
            let u: f64 = rng.gen();
            let step = if u < half {
                -2.0 * eps
            } else if u < cfg.flip_prob {
                2.0 * eps
            } else {
                0.0
            };
            cand[k] = if step == 0.0 { best[k] } else { project(x[k], best[k] + step, eps) };
            moved |= cand[k] != best[k];
        }
        if !moved {
            continue;
        }
        let v = y * model.score(&cand);
        queries += 1;
        if v < v_best {
            v_best = v;
            std::mem::swap(&mut best, &mut cand);
        }
    }
    let delta = best.iter().zip(x).map(|(a, b)| a - b).collect();
    AttackResult {
        point: best,
        delta,
        margin: v_best,
        success: v_best <= 0.0,
        queries,
    }
}

/// Seeded attack on point `index`.
pub fn attack_point<M: MarginModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    eps: f64,
    cfg: &AttackConfig,
    index: u64,
) -> AttackResult {
    let mut rng = rng_for(cfg.seed, index);
    cube_attack(model, x, y, eps, cfg, &mut rng, None)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusEstimate {
    /// Smallest probed radius where the attack succeeded, or `eps_max`.
    pub radius: f64,
    /// `false` when even `eps_max` could not be broken.
    pub success: bool,
}

/// Bisection over the radius on top of the attack. Each probe uses the
/// stream keyed by its radius index on the `RADIUS_RESOLUTION` grid.
pub fn min_radius_estimate<M: MarginModel + ?Sized>(
    model: &M,
    x: &[f64],
    y: f64,
    eps_max: f64,
    cfg: &AttackConfig,
) -> Result<RadiusEstimate, ModelError> {
    check_dim(model.n_features(), x)?;
    if y * model.score(x) <= 0.0 {
        return Err(ModelError::AlreadyMisclassified);
    }
    let probe = |r: f64| -> bool {
        let idx = (r / RADIUS_RESOLUTION).round() as u64;
        let mut rng = rng_for(cfg.seed, idx);
        cube_attack(model, x, y, r, cfg, &mut rng, None).success
    };
    if !probe(eps_max) {
        return Ok(RadiusEstimate {
            radius: eps_max,
            success: false,
        });
    }
    let (mut lo, mut hi) = (0.0, eps_max);
    while hi - lo > RADIUS_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if probe(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(RadiusEstimate {
        radius: hi,
        success: true,
    })
}

/// Perturbations from the previous adversarial batch, keyed by the index of
/// the training point. Reset when `eps` changes.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    eps: Option<f64>,
    deltas: Vec<Option<Vec<f64>>>,
}

impl WarmStart {
    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.deltas.get(i).and_then(|d| d.as_deref())
    }

    pub fn clear(&mut self) {
        self.eps = None;
        self.deltas.clear();
    }
}

/// Clean rows followed by one attacked copy of each.
#[derive(Clone, Debug)]
pub struct AdversarialBatch {
    pub x: Array2<f64>,
    pub y: Vec<f64>,
}

pub fn make_adversarial_batch<M: MarginModel + ?Sized>(
    model: &M,
    x: &Array2<f64>,
    y: &[f64],
    eps: f64,
    cfg: &AttackConfig,
    warm: &mut WarmStart,
) -> AdversarialBatch {
    let n = x.nrows();
    if warm.eps != Some(eps) || warm.deltas.len() != n {
        warm.eps = Some(eps);
        warm.deltas = vec![None; n];
    }
    let results: Vec<AttackResult> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = x.row(i).to_vec();
            let mut rng = rng_for(cfg.seed, i as u64);
            cube_attack(model, &row, y[i], eps, cfg, &mut rng, warm.get(i))
        })
        .collect();
    let d = x.ncols();
    let mut out = Array2::zeros((2 * n, d));
    out.slice_mut(ndarray::s![..n, ..]).assign(x);
    for (i, r) in results.into_iter().enumerate() {
        out.row_mut(n + i).assign(&ndarray::ArrayView1::from(&r.point));
        warm.deltas[i] = Some(r.delta);
    }
    let mut labels = y.to_vec();
    labels.extend_from_slice(y);
    AdversarialBatch { x: out, y: labels }
}
