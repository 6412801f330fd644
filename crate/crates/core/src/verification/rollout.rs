use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::bound::trajectory_deviation_bound;
use crate::dynamics::{f_arm, rk4_step, ArmController, SystemKind, SystemSpec, ROLLOUT_EXCITATION};
use crate::error::{Error, Result};
use crate::networks::Model;
use crate::{math, rng};

/// Time grid of a rollout comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSpec {
    pub t_end: f64,
    pub sample_dt: f64,
    pub dt_internal: f64,
}

impl Default for RolloutSpec {
    fn default() -> Self {
        RolloutSpec {
            t_end: 5.0,
            sample_dt: 0.01,
            dt_internal: 0.01,
        }
    }
}

/// True and simulated trajectories from one shared initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub x0: Vec<f64>,
    pub times: Vec<f64>,
    pub truth: Vec<Vec<f64>>,
    pub model: Vec<Vec<f64>>,
    /// `‖x(t) − z(t)‖₂`
    pub deviation: Vec<f64>,
    /// First sample time at which either trajectory is outside the box.
    pub exit_time: Option<f64>,
    /// Set when a state became non-finite; the rollout stops there.
    pub diverged_at: Option<f64>,
}

impl Rollout {
    /// Samples taken while both trajectories were inside the box.
    pub fn inside_len(&self) -> usize {
        match self.exit_time {
            Some(te) => self.times.iter().take_while(|t| **t < te).count(),
            None => self.times.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBundle {
    pub times: Vec<f64>,
    pub rollouts: Vec<Rollout>,
    /// Mean and population standard deviation of `d(t)` over the
    /// rollouts still running at each time.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `(a, γ)` of the deviation envelope, when requested.
    pub envelope_params: Option<(f64, f64)>,
    pub envelope: Vec<f64>,
}

impl RolloutBundle {
    /// Largest `d(t) − envelope(t)` over samples taken inside the box;
    /// non-positive when the envelope holds everywhere.
    pub fn worst_envelope_margin(&self) -> Option<f64> {
        if self.envelope.is_empty() {
            return None;
        }
        let mut worst = f64::NEG_INFINITY;
        for r in &self.rollouts {
            for i in 0..r.inside_len() {
                worst = worst.max(r.deviation[i] - self.envelope[i]);
            }
        }
        Some(worst)
    }
}

/// Initial states and controller phases for `count` rollouts: uniform over
/// the box, except the arm, which starts at rest at uniform joint angles.
pub fn rollout_initial_states(system: &SystemSpec, count: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<[f64; 2]>) {
    let mut r = rng::stream(seed, rng::STREAM_INITIAL_STATE);
    let mut ph = rng::stream(seed, rng::STREAM_PHASE);
    let mut x0s = Vec::with_capacity(count);
    let mut phases = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x: Vec<f64> = system
            .bounds
            .iter()
            .map(|(lo, hi)| rng::uniform(&mut r, *lo, *hi))
            .collect();
        if matches!(system.kind, SystemKind::TwoLinkArm(_)) {
            x[2] = 0.0;
            x[3] = 0.0;
            phases.push([rng::uniform(&mut ph, 0.0, 2.0 * PI), rng::uniform(&mut ph, 0.0, 2.0 * PI)]);
        }
        x0s.push(x);
    }
    (x0s, phases)
}

/// Integrates the true system and `ż = Φ(z)` from each shared `x₀`.
///
/// For the arm, the model supplies the friction term: `z̈ = M⁻¹(τ − Cż − g) − Φ(z)`,
/// with each trajectory driven by its own copy of the evaluation controller
/// (same `q₀` and phases). `envelope` is `(a, γ)` for the deviation bound.
pub fn rollout_compare<M: Model + ?Sized>(
    system: &SystemSpec,
    model: &M,
    x0s: &[Vec<f64>],
    phases: &[[f64; 2]],
    spec: &RolloutSpec,
    envelope: Option<(f64, f64)>,
) -> Result<RolloutBundle> {
    system.validate()?;
    let n = system.state_dim();
    let is_arm = matches!(system.kind, SystemKind::TwoLinkArm(_));
    if is_arm && phases.len() != x0s.len() {
        return Err(Error::InvalidArgument(format!(
            "arm rollouts need one phase pair per initial state ({} vs {})",
            phases.len(),
            x0s.len()
        )));
    }
    let steps = math::round(spec.t_end / spec.sample_dt) as usize;
    let ratio = spec.sample_dt / spec.dt_internal;
    let sub = math::round(ratio);
    if !(sub >= 1.0 && (ratio - sub).abs() <= 1e-9 * ratio) {
        return Err(Error::InvalidArgument(
            "internal step must divide the sample interval".into(),
        ));
    }
    let sub = sub as usize;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * spec.sample_dt).collect();

    let mut rollouts = Vec::with_capacity(x0s.len());
    for (ri, x0) in x0s.iter().enumerate() {
        if x0.len() != n {
            return Err(Error::shape("rollout_compare", format!("x0 has {} entries, expected {n}", x0.len())));
        }
        let ctl = is_arm.then(|| ArmController::new([x0[0], x0[1]], phases[ri], ROLLOUT_EXCITATION));
        let mut field = |t: f64, s: &[f64]| -> Result<Vec<f64>> {
            let (x, z) = s.split_at(n);
            let phi = model.forward_one(z)?;
            let mut out = Vec::with_capacity(2 * n);
            match (&system.kind, &ctl) {
                (SystemKind::TwoLinkArm(p), Some(c)) => {
                    let (q, qd) = ([x[0], x[1]], [x[2], x[3]]);
                    out.extend_from_slice(&f_arm(q, qd, c.torque(t, q, qd, p), p)?);
                    let (zq, zqd) = ([z[0], z[1]], [z[2], z[3]]);
                    let acc = p.frictionless_accel(zq, zqd, c.torque(t, zq, zqd, p))?;
                    out.extend_from_slice(&[zqd[0], zqd[1], acc[0] - phi[0], acc[1] - phi[1]]);
                }
                _ => {
                    out.extend(system.autonomous_field(x).unwrap_or_default());
                    out.extend(phi);
                }
            }
            Ok(out)
        };
        let mut state: Vec<f64> = x0.iter().chain(x0.iter()).copied().collect();
        let mut r = Rollout {
            x0: x0.clone(),
            times: Vec::with_capacity(steps + 1),
            truth: Vec::with_capacity(steps + 1),
            model: Vec::with_capacity(steps + 1),
            deviation: Vec::with_capacity(steps + 1),
            exit_time: None,
            diverged_at: None,
        };
        for (s, &t0) in times.iter().enumerate() {
            if state.iter().any(|v| !v.is_finite()) {
                r.diverged_at = Some(t0);
                break;
            }
            let (x, z) = state.split_at(n);
            if r.exit_time.is_none() && !(system.contains(x) && system.contains(z)) {
                r.exit_time = Some(t0);
            }
            r.times.push(t0);
            r.truth.push(x.to_vec());
            r.model.push(z.to_vec());
            r.deviation.push(math::dist2(x, z));
            if s == steps {
                break;
            }
            let mut next = state.clone();
            let mut failed = false;
            for k in 0..sub {
                match rk4_step(&mut field, t0 + k as f64 * spec.dt_internal, &next, spec.dt_internal) {
                    Ok(v) => next = v,
                    Err(Error::Singular(_)) => {
                        failed = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
            if failed {
                r.diverged_at = Some(t0 + spec.sample_dt);
                break;
            }
            state = next;
        }
        rollouts.push(r);
    }

    let mut mean = Vec::with_capacity(times.len());
    let mut std = Vec::with_capacity(times.len());
    for i in 0..times.len() {
        let vals: Vec<f64> = rollouts.iter().filter_map(|r| r.deviation.get(i).copied()).collect();
        if vals.is_empty() {
            mean.push(f64::NAN);
            std.push(f64::NAN);
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / vals.len() as f64;
        mean.push(m);
        std.push(math::sqrt(v));
    }
    let envelope_params = envelope;
    let envelope = match envelope {
        Some((a, g)) => times.iter().map(|t| trajectory_deviation_bound(a, g, *t)).collect(),
        None => Vec::new(),
    };
    Ok(RolloutBundle {
        times,
        rollouts,
        mean,
        std,
        envelope_params,
        envelope,
    })
}
