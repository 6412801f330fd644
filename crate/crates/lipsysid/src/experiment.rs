//! Experiment stages shared by the CLI and the acceptance tests. Each
//! `run_*` function computes one stage and writes its artifacts to `out`.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use lipsysid_core::diffcore::Activation;
use lipsysid_core::dynamics::{generate_dataset, SamplingSpec, SystemSpec};
use lipsysid_core::networks::{AffineNormalizer, LipschitzNet, Mlp, Model, LEAKY_SLOPE};
use lipsysid_core::training::{train, train_fcn, train_lrn, Dataset, EpochRecord, TrainReport};
use lipsysid_core::verification::{
    empirical_lipschitz, estimation_error_bound, rollout_compare, rollout_initial_states, LatticeGrid,
    RolloutBundle, VerifyReport,
};

use crate::config::{ExperimentConfig, Family};
use crate::io::{self, ModelFile, Network, MODEL_FORMAT_VERSION};
use crate::svg::{Plot, Series};

/// A resolved config together with its system.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub system: SystemSpec,
}

/// Outcome of training one model.
#[derive(Clone, Debug)]
pub struct Trained {
    pub family: Family,
    pub seed: u64,
    pub network: Network,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_test_mse: f64,
    /// Weight decay or `β` of the kept run; 0 for the Lipschitz network.
    pub regularization: f64,
}

impl Trained {
    fn from_report<M>(family: Family, seed: u64, r: TrainReport<M>, wrap: fn(M) -> Network, reg: f64) -> Self {
        Trained {
            family,
            seed,
            network: wrap(r.best_model),
            epochs: r.epochs,
            best_epoch: r.best_epoch,
            best_test_mse: r.best_test_mse,
            regularization: reg,
        }
    }

    /// Train MSE of the kept checkpoint.
    pub fn best_train_mse(&self) -> f64 {
        self.epochs[self.best_epoch].train_mse
    }

    pub fn file_stem(&self) -> String {
        format!("{}_seed{}", self.family, self.seed)
    }
}

/// Verification of one model at one δ.
#[derive(Clone, Debug)]
pub struct BoundRow {
    pub model: String,
    pub delta: f64,
    pub report: VerifyReport,
}

/// One cell of the test-MSE table.
#[derive(Clone, Debug, PartialEq)]
pub struct MseRow {
    pub family: Family,
    pub subsample: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub best_test_mse: f64,
    pub regularization: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let system = cfg.system()?;
        Ok(Experiment { cfg, system })
    }

    /// Header embedded in every artifact.
    pub fn comment(&self) -> String {
        format!("lipsysid resolved config\n{}", self.cfg.to_toml())
    }

    pub fn sampling(&self) -> Result<SamplingSpec> {
        self.cfg.sampling()
    }

    pub fn dataset(&self) -> Result<Dataset> {
        Ok(generate_dataset(&self.system, &self.sampling()?)?)
    }

    /// Same trajectories with the measurement noise switched off.
    pub fn noiseless_dataset(&self) -> Result<Dataset> {
        let s = SamplingSpec { noise_variance: 0.0, ..self.sampling()? };
        Ok(generate_dataset(&self.system, &s)?)
    }

    /// The configured K, or the empirical estimate on noiseless data.
    pub fn system_k(&self) -> Result<f64> {
        if let Some(k) = self.cfg.verify.k {
            return Ok(k);
        }
        let clean = self.noiseless_dataset()?;
        let k = empirical_lipschitz(&clean, self.cfg.verify.k_neighbors)?;
        log::info!("empirical system Lipschitz estimate K = {k:.6}");
        Ok(k)
    }

    pub fn normalizer(&self, d: &Dataset) -> Result<AffineNormalizer> {
        Ok(AffineNormalizer::fit(d.inputs())?)
    }

    fn mlp_dims(&self, family: Family) -> Vec<usize> {
        let mut dims = self.cfg.hidden(family).to_vec();
        dims.push(self.system.label_dim());
        dims
    }

    /// Trains one family on `d` with the given training seed.
    pub fn train(&self, family: Family, d: &Dataset, seed: u64) -> Result<Trained> {
        match family {
            Family::Lipnet => self.train_lipnet(d, seed, self.cfg.gamma()?),
            Family::Fcn | Family::Lrn => self.train_baseline(family, d, seed),
        }
    }

    pub fn train_lipnet(&self, d: &Dataset, seed: u64, gamma: f64) -> Result<Trained> {
        let norm = self.normalizer(d)?;
        let cfg = self.cfg.train_config(Family::Lipnet, seed)?;
        let net = LipschitzNet::with_bound(norm, &self.cfg.lipnet.hidden, self.system.label_dim(), gamma, seed)?;
        let t = Instant::now();
        let r = train(net, d, &cfg)?;
        log::info!("lipnet seed {seed} gamma {gamma}: best test MSE {:.6e} ({:.1?})", r.best_test_mse, t.elapsed());
        Ok(Trained::from_report(Family::Lipnet, seed, r, Network::Lipnet, 0.0))
    }

    fn train_baseline(&self, family: Family, d: &Dataset, seed: u64) -> Result<Trained> {
        let norm = self.normalizer(d)?;
        let base = self.cfg.train_config(family, seed)?;
        let (grid, act) = match family {
            Family::Fcn => (&self.cfg.fcn.grid, Activation::Relu),
            _ => (&self.cfg.lrn.grid, Activation::LeakyRelu(LEAKY_SLOPE)),
        };
        let values = if grid.is_empty() {
            vec![if family == Family::Fcn { base.weight_decay } else { base.beta }]
        } else {
            grid.clone()
        };
        let mut best: Option<Trained> = None;
        for reg in values {
            let mut cfg = base.clone();
            let net = Mlp::new(norm.clone(), &self.mlp_dims(family), act, seed)?;
            let t = Instant::now();
            let r = if family == Family::Fcn {
                cfg.weight_decay = reg;
                train_fcn(net, d, &cfg)?
            } else {
                cfg.beta = reg;
                train_lrn(net, d, &cfg)?
            };
            log::info!("{family} seed {seed} reg {reg:e}: best test MSE {:.6e} ({:.1?})", r.best_test_mse, t.elapsed());
            let run = Trained::from_report(family, seed, r, Network::Mlp, reg);
            if best.as_ref().map_or(true, |b| run.best_test_mse < b.best_test_mse) {
                best = Some(run);
            }
        }
        Ok(best.expect("at least one regularization value"))
    }

    /// Verifies `model` at every configured δ.
    pub fn verify(&self, model: &dyn Model, d: &Dataset, k: f64) -> Result<Vec<(f64, VerifyReport)>> {
        let v = &self.cfg.verify;
        let mut out = Vec::with_capacity(v.deltas.len());
        for &delta in &v.deltas {
            let grid = LatticeGrid::with_deltas(&self.system.bounds, &self.cfg.lattice_deltas(delta)?)?;
            let t = Instant::now();
            let mut r = estimation_error_bound(model, d, k, &grid, v.q, v.c)?;
            r.wall_time_s = Some(t.elapsed().as_secs_f64());
            log::info!("delta {delta}: {} lattices, bound {:.6}", r.lattice_count(), r.delta_bound);
            out.push((delta, r));
        }
        Ok(out)
    }

    /// Rollouts of `model` against the true system, with the deviation
    /// envelope for error bound `a` when given.
    pub fn rollout(&self, model: &dyn Model, a: Option<f64>) -> Result<RolloutBundle> {
        let (x0s, phases) = rollout_initial_states(&self.system, self.cfg.rollout.count, self.cfg.experiment.seed);
        let env = a.map(|a| (a, model.lipschitz_bound()));
        Ok(rollout_compare(&self.system, model, &x0s, &phases, &self.cfg.rollout_spec(), env)?)
    }

    pub fn model_file(&self, t: &Trained) -> ModelFile {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            kind: t.family,
            system: self.system.name(),
            seed: t.seed,
            lipschitz_bound: t.network.lipschitz_bound(),
            best_epoch: t.best_epoch,
            best_test_mse: t.best_test_mse,
            config: self.cfg.to_toml(),
            network: t.network.clone(),
        }
    }
}

/// Writes `dataset.csv` and its sidecar.
pub fn run_simulate(exp: &Experiment, out: &Path) -> Result<Dataset> {
    ensure_dir(out)?;
    let d = exp.dataset()?;
    let outside = d.count_outside(&exp.system.bounds);
    if outside > 0 {
        log::info!("{outside} of {} samples lie outside the state-space box", d.len());
    }
    io::write_dataset(&out.join("dataset.csv"), &d, &exp.sampling()?, &exp.comment())?;
    Ok(d)
}

/// Writes `<family>_seed<seed>.json` and the matching `_train.csv`.
pub fn run_train(exp: &Experiment, family: Family, d: &Dataset, seed: u64, out: &Path) -> Result<Trained> {
    ensure_dir(out)?;
    let t = exp.train(family, d, seed)?;
    save_trained(exp, &t, out)?;
    Ok(t)
}

fn save_trained(exp: &Experiment, t: &Trained, out: &Path) -> Result<()> {
    let stem = t.file_stem();
    io::write_model(&out.join(format!("{stem}.json")), &exp.model_file(t))?;
    io::write_train_report(&out.join(format!("{stem}_train.csv")), &t.epochs, &exp.comment())
}

/// Writes per-lattice CSVs, a bound table and a summary for one model.
pub fn run_verify(exp: &Experiment, name: &str, model: &dyn Model, d: &Dataset, k: f64, out: &Path) -> Result<Vec<BoundRow>> {
    ensure_dir(out)?;
    let reports = exp.verify(model, d, k)?;
    let comment = exp.comment();
    let mut summary = String::new();
    for (delta, r) in &reports {
        io::write_lattice_csv(&out.join(format!("verify_{name}_delta{delta}.csv")), r, &comment)?;
        summary.push_str(&format!("[{name} delta {delta}]\n"));
        summary.push_str(&io::verify_summary(*delta, r));
        summary.push('\n');
    }
    let rows: Vec<BoundRow> = reports
        .into_iter()
        .map(|(delta, report)| BoundRow { model: name.to_string(), delta, report })
        .collect();
    write_bounds(&out.join(format!("verify_{name}_bounds.csv")), &rows, &comment)?;
    std::fs::write(out.join(format!("verify_{name}.txt")), summary)?;
    Ok(rows)
}

fn write_bounds(path: &Path, rows: &[BoundRow], comment: &str) -> Result<()> {
    let table: Vec<(String, f64, &VerifyReport)> = rows.iter().map(|r| (r.model.clone(), r.delta, &r.report)).collect();
    io::write_bound_table(path, &table, comment)
}

/// Writes rollout curves, per-run summaries and an SVG plot.
pub fn run_rollout(exp: &Experiment, name: &str, model: &dyn Model, a: Option<f64>, out: &Path) -> Result<RolloutBundle> {
    ensure_dir(out)?;
    let b = exp.rollout(model, a)?;
    let comment = exp.comment();
    io::write_rollout_curves(&out.join(format!("rollout_{name}.csv")), &b, &comment)?;
    io::write_rollout_runs(&out.join(format!("rollout_{name}_runs.csv")), &b, &comment)?;
    let pts = |v: &[f64]| b.times.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
    let upper: Vec<f64> = b.mean.iter().zip(&b.std).map(|(m, s)| m + s).collect();
    let mut series = vec![Series::new("mean", pts(&b.mean)), Series::new("mean + std", pts(&upper)).dashed()];
    if !b.envelope.is_empty() {
        series.push(Series::new("envelope", pts(&b.envelope)).dashed());
    }
    let data_max = upper.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let plot = Plot {
        title: format!("{} rollouts: {}", exp.system.name(), name),
        x_label: "t [s]".into(),
        y_label: "||x(t) - z(t)||".into(),
        series,
        y_max: Some(if data_max > 0.0 { 4.0 * data_max } else { 1.0 }),
        description: comment,
    };
    std::fs::write(out.join(format!("rollout_{name}.svg")), plot.render())?;
    Ok(b)
}

/// Trains one Lipschitz network per configured γ; writes `sweep_gamma.csv`
/// and `sweep_gamma.svg`.
pub fn run_sweep_gamma(exp: &Experiment, d: &Dataset, out: &Path) -> Result<Vec<SweepPoint>> {
    ensure_dir(out)?;
    let comment = exp.comment();
    let seed = exp.cfg.experiment.seed;
    let mut points = Vec::new();
    for &gamma in &exp.cfg.lipnet.sweep_gammas {
        let t = exp.train_lipnet(d, seed, gamma)?;
        io::write_train_report(&out.join(format!("sweep_gamma{gamma}_train.csv")), &t.epochs, &comment)?;
        points.push(SweepPoint {
            gamma,
            best_epoch: t.best_epoch,
            train_mse: t.best_train_mse(),
            test_mse: t.best_test_mse,
        });
    }
    let header = ["gamma", "best_epoch", "train_mse", "test_mse"].map(String::from);
    let rows = points
        .iter()
        .map(|p| vec![p.gamma.to_string(), p.best_epoch.to_string(), p.train_mse.to_string(), p.test_mse.to_string()]);
    io::write_csv(&out.join("sweep_gamma.csv"), &comment, &header, rows)?;
    let plot = Plot {
        title: format!("{}: MSE against the certified bound", exp.system.name()),
        x_label: "gamma".into(),
        y_label: "MSE".into(),
        series: vec![
            Series::new("train", points.iter().map(|p| (p.gamma, p.train_mse)).collect()),
            Series::new("test", points.iter().map(|p| (p.gamma, p.test_mse)).collect()).dashed(),
        ],
        y_max: None,
        description: comment,
    };
    std::fs::write(out.join("sweep_gamma.svg"), plot.render())?;
    Ok(points)
}

/// Trains every family at the experiment seed and verifies each with a
/// shared K; writes the models, their training curves and `bounds.csv`.
pub fn run_bound_comparison(exp: &Experiment, d: &Dataset, k: f64, out: &Path) -> Result<(Vec<Trained>, Vec<BoundRow>)> {
    ensure_dir(out)?;
    let seed = exp.cfg.experiment.seed;
    let mut trained = Vec::new();
    let mut rows = Vec::new();
    for family in Family::ALL {
        let t = run_train(exp, family, d, seed, out)?;
        rows.extend(run_verify(exp, family.name(), &t.network, d, k, out)?);
        trained.push(t);
    }
    write_bounds(&out.join("bounds.csv"), &rows, &exp.comment())?;
    Ok((trained, rows))
}

/// Best test MSE for every family, training share and seed; writes
/// `mse_table.csv` and the per-family mean and standard deviation in
/// `mse_summary.csv`.
pub fn run_mse_table(exp: &Experiment, d: &Dataset, out: &Path) -> Result<Vec<MseRow>> {
    ensure_dir(out)?;
    let mut rows = Vec::new();
    for &subsample in &exp.cfg.experiment.subsamples {
        let mut cfg = exp.cfg.clone();
        cfg.train.train_subsample = subsample;
        let sub = Experiment::new(cfg)?;
        for &seed in &exp.cfg.experiment.seeds {
            for family in Family::ALL {
                let t = sub.train(family, d, seed)?;
                rows.push(MseRow {
                    family,
                    subsample,
                    seed,
                    best_epoch: t.best_epoch,
                    best_test_mse: t.best_test_mse,
                    regularization: t.regularization,
                });
            }
        }
    }
    let comment = exp.comment();
    let header = ["model", "subsample", "seed", "best_epoch", "test_mse", "regularization"].map(String::from);
    io::write_csv(
        &out.join("mse_table.csv"),
        &comment,
        &header,
        rows.iter().map(|r| {
            vec![
                r.family.to_string(),
                r.subsample.to_string(),
                r.seed.to_string(),
                r.best_epoch.to_string(),
                r.best_test_mse.to_string(),
                r.regularization.to_string(),
            ]
        }),
    )?;
    let mut summary = Vec::new();
    for &subsample in &exp.cfg.experiment.subsamples {
        for family in Family::ALL {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.family == family && r.subsample == subsample)
                .map(|r| r.best_test_mse)
                .collect();
            let (m, s) = mean_std(&v);
            summary.push(vec![family.to_string(), subsample.to_string(), m.to_string(), s.to_string()]);
        }
    }
    let header = ["model", "subsample", "mean_test_mse", "std_test_mse"].map(String::from);
    io::write_csv(&out.join("mse_summary.csv"), &comment, &header, summary)?;
    Ok(rows)
}

/// Every stage in sequence: dataset, bound comparison, test-MSE table,
/// rollouts of the Lipschitz network and the γ sweep.
pub fn run_report(exp: &Experiment, out: &Path) -> Result<()> {
    let d = run_simulate(exp, out)?;
    let k = exp.system_k()?;
    let (trained, rows) = run_bound_comparison(exp, &d, k, out)?;
    run_mse_table(exp, &d, out)?;
    let lip = trained.iter().find(|t| t.family == Family::Lipnet).expect("lipnet trained");
    let a = rows.iter().find(|r| r.model == "lipnet").map(|r| r.report.delta_bound);
    run_rollout(exp, "lipnet", &lip.network, a, out)?;
    run_sweep_gamma(exp, &d, out)?;
    Ok(())
}
