use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::math;

/// `ẋ₁ = −0.2x₁ + 2x₂`, `ẋ₂ = −2x₁ − 0.2x₂` (poles `−0.2 ± 2i`).
pub fn f_linear(x: &[f64]) -> [f64; 2] {
    [-0.2 * x[0] + 2.0 * x[1], -2.0 * x[0] - 0.2 * x[1]]
}

/// Van der Pol: `ẋ₁ = x₂`, `ẋ₂ = μ(1 − x₁²)x₂ − x₁`.
pub fn f_vdp(x: &[f64], mu: f64) -> [f64; 2] {
    [x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]]
}

/// Physical parameters of the two-link planar arm with geared motors.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArmParams {
    /// Link lengths.
    pub a: [f64; 2],
    /// Joint axis to link centre of mass.
    pub l: [f64; 2],
    pub m_link: [f64; 2],
    pub i_link: [f64; 2],
    /// Gear reduction ratios.
    pub k_r: [f64; 2],
    pub m_motor: [f64; 2],
    pub i_motor: [f64; 2],
    /// Diagonal of the viscous friction matrix.
    pub f_v: [f64; 2],
    /// Diagonal of the Coulomb friction matrix.
    pub f_c: [f64; 2],
    /// Sharpness of the `tanh` Coulomb approximation.
    pub s_c: f64,
    pub gravity: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        ArmParams {
            a: [0.8, 0.8],
            l: [0.4, 0.4],
            m_link: [20.0, 20.0],
            i_link: [5.0, 5.0],
            k_r: [100.0, 100.0],
            m_motor: [2.0, 2.0],
            i_motor: [0.01, 0.01],
            f_v: [40.0, 40.0],
            f_c: [2.0, 2.0],
            s_c: 10.0,
            gravity: 9.81,
        }
    }
}

pub type Mat2 = [[f64; 2]; 2];

fn mat2_vec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// `M⁻¹ v` for a 2×2 `M`.
pub fn solve2(m: &Mat2, v: [f64; 2]) -> Result<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !(det.abs() > 1e-12) || !det.is_finite() {
        return Err(Error::Singular("arm inertia matrix"));
    }
    Ok([
        (m[1][1] * v[0] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ])
}

impl ArmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = self
            .a
            .iter()
            .chain(&self.l)
            .chain(&self.m_link)
            .chain(&self.i_link)
            .chain(&self.k_r)
            .chain(&self.m_motor)
            .chain(&self.i_motor)
            .all(|v| *v > 0.0 && v.is_finite());
        let friction_ok = self.f_v.iter().chain(&self.f_c).all(|v| *v >= 0.0) && self.s_c > 0.0;
        if !positive || !friction_ok {
            return Err(Error::InvalidArgument(
                "arm physical parameters must be positive (friction non-negative)".into(),
            ));
        }
        Ok(())
    }

    /// Joint-space inertia matrix including rotor inertias.
    pub fn inertia(&self, q: [f64; 2]) -> Mat2 {
        let c2 = math::cos(q[1]);
        let [a1, _] = self.a;
        let [l1, l2] = self.l;
        let [ml1, ml2] = self.m_link;
        let [il1, il2] = self.i_link;
        let [kr1, kr2] = self.k_r;
        let [_, mm2] = self.m_motor;
        let [im1, im2] = self.i_motor;
        let b11 = il1
            + ml1 * l1 * l1
            + kr1 * kr1 * im1
            + il2
            + ml2 * (a1 * a1 + l2 * l2 + 2.0 * a1 * l2 * c2)
            + im2
            + mm2 * a1 * a1;
        let b12 = il2 + ml2 * (l2 * l2 + a1 * l2 * c2) + kr2 * im2;
        let b22 = il2 + ml2 * l2 * l2 + kr2 * kr2 * im2;
        [[b11, b12], [b12, b22]]
    }

    /// Centrifugal/Coriolis matrix `C(q, q̇)` (Christoffel form).
    pub fn coriolis(&self, q: [f64; 2], qd: [f64; 2]) -> Mat2 {
        let h = -self.m_link[1] * self.a[0] * self.l[1] * math::sin(q[1]);
        [[h * qd[1], h * (qd[0] + qd[1])], [-h * qd[0], 0.0]]
    }

    pub fn gravity_torque(&self, q: [f64; 2]) -> [f64; 2] {
        let g = self.gravity;
        let c1 = math::cos(q[0]);
        let c12 = math::cos(q[0] + q[1]);
        let [a1, _] = self.a;
        let [l1, l2] = self.l;
        let [ml1, ml2] = self.m_link;
        let mm2 = self.m_motor[1];
        let g2 = ml2 * l2 * g * c12;
        [(ml1 * l1 + mm2 * a1 + ml2 * a1) * g * c1 + g2, g2]
    }

    /// `F_v q̇ + F_c tanh(s_c q̇)`
    pub fn friction(&self, qd: [f64; 2]) -> [f64; 2] {
        core::array::from_fn(|i| self.f_v[i] * qd[i] + self.f_c[i] * math::tanh(self.s_c * qd[i]))
    }

    /// `M⁻¹(q)(τ − C(q,q̇)q̇ − g(q))`: acceleration without friction.
    pub fn frictionless_accel(&self, q: [f64; 2], qd: [f64; 2], tau: [f64; 2]) -> Result<[f64; 2]> {
        let cqd = mat2_vec(&self.coriolis(q, qd), qd);
        let g = self.gravity_torque(q);
        solve2(&self.inertia(q), [tau[0] - cqd[0] - g[0], tau[1] - cqd[1] - g[1]])
    }

    /// `M⁻¹(q) F_f(q̇)`, the term learned from data.
    pub fn friction_accel(&self, q: [f64; 2], qd: [f64; 2]) -> Result<[f64; 2]> {
        solve2(&self.inertia(q), self.friction(qd))
    }
}

/// Full arm dynamics: returns `(q̇, q̈)`.
pub fn f_arm(q: [f64; 2], qd: [f64; 2], tau: [f64; 2], p: &ArmParams) -> Result<[f64; 4]> {
    let cqd = mat2_vec(&p.coriolis(q, qd), qd);
    let g = p.gravity_torque(q);
    let ff = p.friction(qd);
    let rhs: [f64; 2] = core::array::from_fn(|i| tau[i] - cqd[i] - ff[i] - g[i]);
    let qdd = solve2(&p.inertia(q), rhs)?;
    Ok([qd[0], qd[1], qdd[0], qdd[1]])
}

/// PD-around-`q₀` computed-torque controller with sinusoidal excitation
/// `amp · sin(2π·freq·t + φᵢ)`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArmController {
    pub q0: [f64; 2],
    pub phase: [f64; 2],
    pub kp: f64,
    pub kd: f64,
    pub amp: f64,
    pub freq: f64,
}

/// Excitation used when collecting training data.
pub const TRAIN_EXCITATION: (f64, f64) = (100.0, 1.0);
/// Gentler excitation used for rollout evaluation (`30 sin(0.5πt + φ)`).
pub const ROLLOUT_EXCITATION: (f64, f64) = (30.0, 0.25);

impl ArmController {
    pub fn new(q0: [f64; 2], phase: [f64; 2], (amp, freq): (f64, f64)) -> Self {
        ArmController {
            q0,
            phase,
            kp: 1.0,
            kd: 2.0,
            amp,
            freq,
        }
    }

    pub fn excitation(&self, t: f64) -> [f64; 2] {
        let w = 2.0 * PI * self.freq * t;
        [
            self.amp * math::sin(w + self.phase[0]),
            self.amp * math::sin(w + self.phase[1]),
        ]
    }

    pub fn torque(&self, t: f64, q: [f64; 2], qd: [f64; 2], p: &ArmParams) -> [f64; 2] {
        arm_controller(t, q, qd, self, p)
    }
}

/// `τ = g(q) + C(q,q̇)q̇ + M(q)[−K_p(q − q₀) − K_d q̇] + ε(t)`
pub fn arm_controller(
    t: f64,
    q: [f64; 2],
    qd: [f64; 2],
    c: &ArmController,
    p: &ArmParams,
) -> [f64; 2] {
    let g = p.gravity_torque(q);
    let cqd = mat2_vec(&p.coriolis(q, qd), qd);
    let v = [
        -c.kp * (q[0] - c.q0[0]) - c.kd * qd[0],
        -c.kp * (q[1] - c.q0[1]) - c.kd * qd[1],
    ];
    let mv = mat2_vec(&p.inertia(q), v);
    let e = c.excitation(t);
    core::array::from_fn(|i| g[i] + cqd[i] + mv[i] + e[i])
}

/// Benchmark system selector.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SystemKind {
    Linear,
    VanDerPol { mu: f64 },
    TwoLinkArm(ArmParams),
}

/// A system plus its state-space box.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// Per-coordinate `(lo, hi)` bounds of the state space.
    pub bounds: Vec<(f64, f64)>,
}

impl SystemSpec {
    pub fn linear() -> Self {
        SystemSpec {
            kind: SystemKind::Linear,
            bounds: alloc::vec![(-3.0, 3.0); 2],
        }
    }

    pub fn van_der_pol(mu: f64) -> Self {
        SystemSpec {
            kind: SystemKind::VanDerPol { mu },
            bounds: alloc::vec![(-2.5, 2.5); 2],
        }
    }

    pub fn arm(params: ArmParams) -> Self {
        let q = 3.0 * FRAC_PI_4;
        SystemSpec {
            kind: SystemKind::TwoLinkArm(params),
            bounds: alloc::vec![(-q, q), (-q, q), (-0.1, 0.1), (-0.1, 0.1)],
        }
    }

    /// `"linear"`, `"vdp"` or `"arm"` with the default parameters.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(Self::linear()),
            "vdp" => Ok(Self::van_der_pol(0.02)),
            "arm" => Ok(Self::arm(ArmParams::default())),
            other => Err(Error::InvalidArgument(format!("unknown system '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            SystemKind::Linear => "linear".into(),
            SystemKind::VanDerPol { .. } => "vdp".into(),
            SystemKind::TwoLinkArm(_) => "arm".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SystemKind::Linear => {}
            SystemKind::VanDerPol { mu } => {
                if !(*mu > 0.0) {
                    return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
                }
            }
            SystemKind::TwoLinkArm(p) => p.validate()?,
        }
        if self.bounds.len() != self.state_dim()
            || self
                .bounds
                .iter()
                .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(Error::InvalidArgument(format!(
                "state-space bounds {:?} must be finite intervals, one per state",
                self.bounds
            )));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            SystemKind::TwoLinkArm(_) => 4,
            _ => 2,
        }
    }

    /// Dimension of the learned map's output.
    pub fn label_dim(&self) -> usize {
        2
    }

    /// Autonomous vector field; `None` for the controlled arm.
    pub fn autonomous_field(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self.kind {
            SystemKind::Linear => Some(f_linear(x).to_vec()),
            SystemKind::VanDerPol { mu } => Some(f_vdp(x, mu).to_vec()),
            SystemKind::TwoLinkArm(_) => None,
        }
    }

    /// Default certified bound of the Lipschitz network for this system.
    pub fn default_gamma(&self) -> f64 {
        match self.kind {
            SystemKind::Linear => 2.01,
            SystemKind::VanDerPol { .. } => 4.02,
            SystemKind::TwoLinkArm(_) => 2.55,
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.bounds).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}
