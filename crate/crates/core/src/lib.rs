//! Q-valued function calculus on grids and quantitative stratification.
//!
//! The crate covers the space `A_Q(R^m)` of unordered Q-tuples with its
//! matching metric, discrete Q-valued fields with Dirichlet energy and
//! frequency analytics, a Dirichlet-energy minimizer, a catalog of
//! homogeneous planar competitors, the covering machinery behind
//! tubular-neighborhood bounds for singular strata, and Minkowski-dimension
//! estimation of point sets.

pub mod aq_space;
pub mod assignment;
pub mod dir_min;
pub mod error;
pub mod frequency;
pub mod grid;
pub mod homogeneous;
pub mod io;
pub mod minkowski;
pub mod qfield;
pub mod strat;

pub use aq_space::{eta_mean, g_distance, norm, recenter, support_multiplicities, QPoint};
pub use error::{Error, Result};
pub use grid::{BallSpec, GridSpec};
pub use io::{load_field, save_field};
pub use minkowski::{minkowski_fit, tubular_volume, vitali_cover, TubularEstimate, Window};
pub use qfield::{
    boundary_h, decompose_local, default_zero_tol, dirichlet_energy, make_branch_field,
    max_multiplicity_nodes, sphere_trace, Decomposition, QField,
};
pub use strat::{FnInstance, Instance, QFieldInstance, StratParams};
