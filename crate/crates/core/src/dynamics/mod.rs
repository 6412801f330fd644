//! Benchmark systems, trajectory collection and dataset assembly.

mod data;
mod signal;
mod systems;

pub use data::{
    build_dataset, generate_dataset, simulate_trajectories, simulate_trajectory, SamplingSpec,
    Trajectory,
};
pub use signal::{add_noise, central_diff4, lowpass_filter, rk4_integrate, rk4_sampled, rk4_step, DEFAULT_DT};
pub use systems::{
    arm_controller, f_arm, f_linear, f_vdp, solve2, ArmController, ArmParams, Mat2, SystemKind,
    SystemSpec, ROLLOUT_EXCITATION, TRAIN_EXCITATION,
};
