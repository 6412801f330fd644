//! Experiment configuration.
//!
//! A config file is TOML with one flat table per section. Every key is
//! optional; missing keys take the defaults below, unknown keys are errors.

use std::path::Path;

use anyhow::{bail, Context, Result};
use lipsysid_core::dynamics::{SamplingSpec, SystemSpec};
use lipsysid_core::training::TrainConfig;
use lipsysid_core::verification::{RolloutSpec, DEFAULT_Q};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub sampling: SamplingSection,
    pub train: TrainSection,
    pub lipnet: LipnetSection,
    pub fcn: FcnSection,
    pub lrn: LrnSection,
    pub verify: VerifySection,
    pub rollout: RolloutSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    /// `linear`, `vdp` or `arm`.
    pub system: String,
    /// Seeds network initialization, batch order and rollout initial states.
    pub seed: u64,
    /// Training seeds swept by `report`.
    pub seeds: Vec<u64>,
    /// Training-set shares swept by `report`.
    pub subsamples: Vec<f64>,
    /// Multiplies the preset trajectory count.
    pub scale: f64,
    pub out: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            system: "linear".into(),
            seed: 0,
            seeds: vec![0, 100, 200, 300],
            subsamples: vec![0.25, 0.5, 1.0],
            scale: 1.0,
            out: "out".into(),
        }
    }
}

/// Overrides on top of the system's sampling preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub rate_hz: Option<f64>,
    pub duration: Option<f64>,
    pub trajectories: Option<usize>,
    pub noise_variance: Option<f64>,
    /// Data seed, kept apart from the training seed so seed sweeps share data.
    pub seed: u64,
    pub filter_window: Option<usize>,
    pub dt_internal: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub step_size: usize,
    pub lr_decay: f64,
    pub clip_norm: f64,
    pub split_fraction: f64,
    pub split_seed: u64,
    pub train_subsample: f64,
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            step_size: t.step_size,
            lr_decay: t.lr_decay,
            clip_norm: t.clip_norm,
            split_fraction: t.split_fraction,
            split_seed: t.split_seed,
            train_subsample: t.train_subsample,
            validation_fraction: t.validation_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipnetSection {
    pub hidden: Vec<usize>,
    /// Certified bound; the system preset when absent.
    pub gamma: Option<f64>,
    pub lr0: f64,
    /// Bounds trained by `sweep-gamma`.
    pub sweep_gammas: Vec<f64>,
}

impl Default for LipnetSection {
    fn default() -> Self {
        LipnetSection {
            hidden: vec![64; 7],
            gamma: None,
            lr0: 0.3,
            sweep_gammas: vec![0.25, 0.5, 1.0, 2.01, 4.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FcnSection {
    pub hidden: Vec<usize>,
    pub lr0: f64,
    pub weight_decay: f64,
    /// When nonempty, one run per value; the lowest test MSE is kept.
    pub grid: Vec<f64>,
}

impl Default for FcnSection {
    fn default() -> Self {
        FcnSection {
            hidden: vec![64; 7],
            lr0: 0.1,
            weight_decay: 1e-4,
            grid: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrnSection {
    pub hidden: Vec<usize>,
    pub lr0: f64,
    pub beta: f64,
    pub grid: Vec<f64>,
}

impl Default for LrnSection {
    fn default() -> Self {
        LrnSection {
            hidden: vec![64; 7],
            lr0: 0.1,
            beta: 1e-2,
            grid: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub deltas: Vec<f64>,
    /// Per-dimension multipliers of each δ; empty means 1 everywhere.
    pub delta_scale: Vec<f64>,
    /// System Lipschitz bound; estimated from noiseless data when absent.
    pub k: Option<f64>,
    /// Neighbours per sample in the empirical estimate of K.
    pub k_neighbors: usize,
    pub c: f64,
    pub q: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            deltas: vec![0.05, 0.025],
            delta_scale: Vec::new(),
            k: None,
            k_neighbors: 5,
            c: 0.0,
            q: DEFAULT_Q,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    pub count: usize,
    pub t_end: f64,
    pub sample_dt: f64,
    pub dt_internal: f64,
}

impl Default for RolloutSection {
    fn default() -> Self {
        let r = RolloutSpec::default();
        RolloutSection {
            count: 100,
            t_end: r.t_end,
            sample_dt: r.sample_dt,
            dt_internal: r.dt_internal,
        }
    }
}

/// Model families trained by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lipnet,
    Fcn,
    Lrn,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Lipnet, Family::Fcn, Family::Lrn];

    pub fn name(self) -> &'static str {
        match self {
            Family::Lipnet => "lipnet",
            Family::Fcn => "fcn",
            Family::Lrn => "lrn",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML form of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.system()?;
        self.sampling()?.validate()?;
        self.train_config(Family::Lipnet, self.experiment.seed)?.validate()?;
        if !(self.experiment.scale > 0.0 && self.experiment.scale.is_finite()) {
            bail!("experiment.scale must be positive");
        }
        for (name, h) in [("lipnet", &self.lipnet.hidden), ("fcn", &self.fcn.hidden), ("lrn", &self.lrn.hidden)] {
            if h.is_empty() || h.contains(&0) {
                bail!("{name}.hidden must list nonzero widths");
            }
        }
        if let Some(g) = self.lipnet.gamma {
            if !(g > 0.0 && g.is_finite()) {
                bail!("lipnet.gamma must be positive, got {g}");
            }
        }
        if self.verify.deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            bail!("verify.deltas must be positive");
        }
        let n = self.system()?.state_dim();
        if !self.verify.delta_scale.is_empty() && self.verify.delta_scale.len() != n {
            bail!("verify.delta_scale needs {n} entries");
        }
        if self.verify.q == 0 || self.verify.k_neighbors == 0 {
            bail!("verify.q and verify.k_neighbors must be positive");
        }
        if self.rollout.count == 0 {
            bail!("rollout.count must be positive");
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SystemSpec> {
        Ok(SystemSpec::preset(&self.experiment.system)?)
    }

    /// Preset for the system, overridden per key, then scaled.
    pub fn sampling(&self) -> Result<SamplingSpec> {
        let s = &self.sampling;
        let mut spec = SamplingSpec::preset(&self.system()?);
        if let Some(v) = s.rate_hz {
            spec.rate_hz = v;
        }
        if let Some(v) = s.duration {
            spec.duration = v;
        }
        if let Some(v) = s.trajectories {
            spec.trajectories = v;
        }
        if let Some(v) = s.noise_variance {
            spec.noise_variance = v;
        }
        if let Some(v) = s.filter_window {
            spec.filter_window = v;
        }
        if let Some(v) = s.dt_internal {
            spec.dt_internal = v;
        }
        spec.seed = s.seed;
        Ok(spec.scaled(self.experiment.scale)?)
    }

    pub fn gamma(&self) -> Result<f64> {
        Ok(self.lipnet.gamma.unwrap_or(self.system()?.default_gamma()))
    }

    pub fn hidden(&self, family: Family) -> &[usize] {
        match family {
            Family::Lipnet => &self.lipnet.hidden,
            Family::Fcn => &self.fcn.hidden,
            Family::Lrn => &self.lrn.hidden,
        }
    }

    /// Training settings for one family and seed.
    pub fn train_config(&self, family: Family, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let mut cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            step_size: t.step_size,
            lr_decay: t.lr_decay,
            clip_norm: t.clip_norm,
            split_fraction: t.split_fraction,
            split_seed: t.split_seed,
            train_subsample: t.train_subsample,
            validation_fraction: t.validation_fraction,
            seed,
            ..TrainConfig::default()
        };
        match family {
            Family::Lipnet => cfg.lr0 = self.lipnet.lr0,
            Family::Fcn => {
                cfg.lr0 = self.fcn.lr0;
                cfg.weight_decay = self.fcn.weight_decay;
            }
            Family::Lrn => {
                cfg.lr0 = self.lrn.lr0;
                cfg.beta = self.lrn.beta;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rollout_spec(&self) -> RolloutSpec {
        RolloutSpec {
            t_end: self.rollout.t_end,
            sample_dt: self.rollout.sample_dt,
            dt_internal: self.rollout.dt_internal,
        }
    }

    /// Per-dimension lattice radii for one δ.
    pub fn lattice_deltas(&self, delta: f64) -> Result<Vec<f64>> {
        let n = self.system()?.state_dim();
        Ok(if self.verify.delta_scale.is_empty() {
            vec![delta; n]
        } else {
            self.verify.delta_scale.iter().map(|s| s * delta).collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_and_unknown_keys() {
        let c = ExperimentConfig::parse("[experiment]\nsystem = \"vdp\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(c.experiment.system, "vdp");
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.sampling().unwrap().trajectories, 400);
        assert!(ExperimentConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(ExperimentConfig::parse("[bogus]\n").is_err());
        assert!(ExperimentConfig::parse("[experiment]\nsystem = \"pendulum\"\n").is_err());
    }

    #[test]
    fn sampling_overrides_then_scale() {
        let mut c = ExperimentConfig::default();
        c.experiment.scale = 0.1;
        assert_eq!(c.sampling().unwrap().trajectories, 10);
        c.sampling.trajectories = Some(50);
        c.sampling.noise_variance = Some(0.0);
        let s = c.sampling().unwrap();
        assert_eq!((s.trajectories, s.noise_variance), (5, 0.0));
    }

    #[test]
    fn family_train_configs() {
        let c = ExperimentConfig::default();
        let f = c.train_config(Family::Fcn, 7).unwrap();
        assert_eq!((f.seed, f.weight_decay, f.beta), (7, 1e-4, 0.0));
        let l = c.train_config(Family::Lrn, 0).unwrap();
        assert_eq!((l.weight_decay, l.beta), (0.0, 1e-2));
        assert_eq!(c.gamma().unwrap(), 2.01);
    }
}
