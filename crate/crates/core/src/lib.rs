//! Boosted decision stumps and trees trained against `l_inf` perturbations,
//! with exact certificates for stump ensembles and sound lower bounds for
//! tree ensembles.
//!
//! Inputs are expected in `[0, 1]^d`; see [`dataset`] for loading and
//! scaling. Labels are `+1 / -1` and a point is correct when `y F(x) > 0`.

pub mod attack;
pub mod certify;
pub mod dataset;
mod error;
pub mod loss;
pub mod model;
pub mod model_io;
pub mod split;
pub mod stumps;
pub mod train;
pub mod trees;

pub use error::ModelError;
pub use model::{Ensemble, Model, ModelKind, MultiClassModel, Task};

/// Anything with a real-valued score on `[0, 1]^d` that is piecewise
/// constant on the grid spanned by its split points.
pub trait MarginModel: Sync {
    fn n_features(&self) -> usize;

    /// `F(x)`; no dimension check.
    fn score(&self, x: &[f64]) -> f64;

    /// Every `(coordinate, threshold)` the model splits on, with repeats.
    fn split_points(&self) -> Vec<(usize, f64)>;
}
