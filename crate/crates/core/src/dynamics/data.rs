use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::signal::{add_noise, central_diff4, lowpass_filter, rk4_sampled, DEFAULT_DT};
use super::systems::{f_arm, ArmController, SystemKind, SystemSpec, TRAIN_EXCITATION};
use crate::error::{Error, Result};
use crate::rng;
use crate::training::{Dataset, DatasetMeta, Sample};

/// How trajectories are collected.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SamplingSpec {
    pub rate_hz: f64,
    /// Length of the kept part of each trajectory, seconds.
    pub duration: f64,
    pub trajectories: usize,
    pub noise_variance: f64,
    pub seed: u64,
    /// Odd moving-average width applied before differentiation.
    pub filter_window: usize,
    pub dt_internal: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            rate_hz: 100.0,
            duration: 12.0,
            trajectories: 100,
            noise_variance: 1e-4,
            seed: 0,
            filter_window: 5,
            dt_internal: DEFAULT_DT,
        }
    }
}

impl SamplingSpec {
    /// Full-scale collection settings for a system.
    pub fn preset(system: &SystemSpec) -> Self {
        let base = SamplingSpec::default();
        match system.kind {
            SystemKind::Linear => base,
            SystemKind::VanDerPol { .. } => SamplingSpec {
                duration: 5.0,
                trajectories: 400,
                noise_variance: 5e-5,
                ..base
            },
            SystemKind::TwoLinkArm(_) => SamplingSpec {
                duration: 3.0,
                trajectories: 400,
                noise_variance: 5e-5,
                ..base
            },
        }
    }

    /// Same settings with the trajectory count multiplied by `scale`.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
        }
        let n = crate::math::round(self.trajectories as f64 * scale).max(1.0) as usize;
        Ok(SamplingSpec {
            trajectories: n,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.duration > 0.0 && self.dt_internal > 0.0) {
            return Err(Error::InvalidArgument(
                "rate, duration and internal step must be positive".into(),
            ));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::InvalidArgument("noise variance must be non-negative".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidArgument("need at least one trajectory".into()));
        }
        if self.filter_window == 0 || self.filter_window % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "filter window must be odd, got {}",
                self.filter_window
            )));
        }
        Ok(())
    }

    pub fn sample_dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Samples kept per trajectory.
    pub fn samples_per_trajectory(&self) -> usize {
        crate::math::round(self.duration * self.rate_hz) as usize
    }

    /// Samples discarded at each end: the filter half-width plus the
    /// differencing stencil half-width, so no kept label sees a truncated
    /// window.
    pub fn edge_trim(&self) -> usize {
        edge_trim(self.filter_window)
    }
}

fn edge_trim(window: usize) -> usize {
    window / 2 + 2
}

/// One simulated run on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub clean: Vec<Vec<f64>>,
    pub noisy: Vec<Vec<f64>>,
    /// Applied torques at each sample (arm only, otherwise empty).
    pub torques: Vec<[f64; 2]>,
    /// Controller phases (arm only).
    pub phase: Option<[f64; 2]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Simulates trajectory `index` of a collection. Each index owns its own
/// random streams, so the result does not depend on generation order.
pub fn simulate_trajectory(system: &SystemSpec, s: &SamplingSpec, index: usize) -> Result<Trajectory> {
    let n = s.samples_per_trajectory() + 2 * s.edge_trim();
    let mut init = rng::substream(s.seed, rng::STREAM_INITIAL_STATE, index as u64);
    let (times, clean, torques, phase) = match &system.kind {
        SystemKind::TwoLinkArm(p) => {
            let q0 = [
                rng::uniform(&mut init, system.bounds[0].0, system.bounds[0].1),
                rng::uniform(&mut init, system.bounds[1].0, system.bounds[1].1),
            ];
            let mut ph = rng::substream(s.seed, rng::STREAM_PHASE, index as u64);
            let phase = [rng::uniform(&mut ph, 0.0, 2.0 * PI), rng::uniform(&mut ph, 0.0, 2.0 * PI)];
            let ctl = ArmController::new(q0, phase, TRAIN_EXCITATION);
            let field = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
                let (q, qd) = ([x[0], x[1]], [x[2], x[3]]);
                Ok(f_arm(q, qd, ctl.torque(t, q, qd, p), p)?.to_vec())
            };
            let (times, clean) =
                rk4_sampled(field, &[q0[0], q0[1], 0.0, 0.0], n, s.sample_dt(), s.dt_internal)?;
            let torques = times
                .iter()
                .zip(&clean)
                .map(|(t, x)| ctl.torque(*t, [x[0], x[1]], [x[2], x[3]], p))
                .collect();
            (times, clean, torques, Some(phase))
        }
        _ => {
            let x0: Vec<f64> = system
                .bounds
                .iter()
                .map(|(lo, hi)| rng::uniform(&mut init, *lo, *hi))
                .collect();
            let field = |_: f64, x: &[f64]| -> Result<Vec<f64>> {
                Ok(system.autonomous_field(x).unwrap_or_default())
            };
            let (times, clean) = rk4_sampled(field, &x0, n, s.sample_dt(), s.dt_internal)?;
            (times, clean, Vec::new(), None)
        }
    };
    let mut noise = rng::substream(s.seed, rng::STREAM_NOISE, index as u64);
    let noisy = add_noise(&clean, s.noise_variance, &mut noise);
    Ok(Trajectory {
        times,
        clean,
        noisy,
        torques,
        phase,
    })
}

pub fn simulate_trajectories(system: &SystemSpec, s: &SamplingSpec) -> Result<Vec<Trajectory>> {
    system.validate()?;
    s.validate()?;
    (0..s.trajectories)
        .map(|i| simulate_trajectory(system, s, i))
        .collect()
}

/// Filters each noisy trajectory, differentiates it and pairs states with
/// derivative labels. For the arm the label is the friction residual
/// `M⁻¹(τ − Cq̇ − g) − q̈̂`.
///
/// Samples within `window/2 + 2` of either end are dropped.
pub fn build_dataset(
    trajectories: &[Trajectory],
    system: &SystemSpec,
    s: &SamplingSpec,
) -> Result<Dataset> {
    let dt = s.sample_dt();
    let trim = s.edge_trim();
    let n_dim = system.state_dim();
    let mut samples = Vec::new();
    for (k, tr) in trajectories.iter().enumerate() {
        if tr.len() < 2 * trim + 1 {
            return Err(Error::InvalidArgument(format!(
                "trajectory {k} has {} samples, needs more than {}",
                tr.len(),
                2 * trim
            )));
        }
        let channels: Vec<Vec<f64>> = (0..n_dim)
            .map(|c| {
                let series: Vec<f64> = tr.noisy.iter().map(|x| x[c]).collect();
                lowpass_filter(&series, s.filter_window)
            })
            .collect::<Result<_>>()?;
        let derivs: Vec<Vec<f64>> = channels
            .iter()
            .map(|c| central_diff4(c, dt))
            .collect::<Result<_>>()?;
        for i in trim..tr.len() - trim {
            let x: Vec<f64> = channels.iter().map(|c| c[i]).collect();
            let y = match &system.kind {
                SystemKind::TwoLinkArm(p) => {
                    let (q, qd) = ([x[0], x[1]], [x[2], x[3]]);
                    let tau = *tr.torques.get(i).ok_or_else(|| {
                        Error::InvalidArgument(format!("trajectory {k} has no torque record"))
                    })?;
                    let model = p.frictionless_accel(q, qd, tau)?;
                    vec![model[0] - derivs[2][i - 2], model[1] - derivs[3][i - 2]]
                }
                _ => derivs.iter().map(|d| d[i - 2]).collect(),
            };
            samples.push(Sample {
                traj: k,
                t: tr.times[i],
                x,
                y,
            });
        }
    }
    let meta = DatasetMeta {
        system: system.name(),
        noise_variance: s.noise_variance,
        rate_hz: s.rate_hz,
        seed: s.seed,
        filter_window: s.filter_window,
    };
    Dataset::new(samples, meta)
}

/// Simulate and assemble in one call.
pub fn generate_dataset(system: &SystemSpec, s: &SamplingSpec) -> Result<Dataset> {
    let trajectories = simulate_trajectories(system, s)?;
    build_dataset(&trajectories, system, s)
}
