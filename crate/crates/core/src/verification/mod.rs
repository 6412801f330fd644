//! Certification of trained models: lattice error bounds, empirical
//! Lipschitz estimates and rollout comparison.

mod bound;
mod kdtree;
mod lattice;
mod rollout;

pub use bound::{
    empirical_lipschitz, estimation_error_bound, prop3_bound, residual_norms, sup_error_on,
    trajectory_deviation_bound, CoverBall, VerifyReport, DEFAULT_Q, EMPIRICAL_MIN_DIST,
};
pub use kdtree::KdTree;
pub use lattice::{max_vertex_distance, LatticeGrid};
pub use rollout::{rollout_compare, rollout_initial_states, Rollout, RolloutBundle, RolloutSpec};
