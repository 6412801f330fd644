use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lipsysid::experiment::{self, Experiment};
use lipsysid::io;
use lipsysid::{ExperimentConfig, Family};
use lipsysid_core::networks::Model;
use lipsysid_core::training::Dataset;

/// Lipschitz-bounded system identification: simulate, train, verify.
#[derive(Parser, Debug)]
#[command(name = "lipsysid", version)]
struct Cli {
    #[command(flatten)]
    o: Overrides,
    #[command(subcommand)]
    cmd: Command,
}

/// Flags that override config-file values.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Training, initialization and rollout seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Seed of the simulated measurements.
    #[arg(long, global = true)]
    data_seed: Option<u64>,
    /// Multiplier on the preset trajectory count.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Share of the training split used for fitting.
    #[arg(long, global = true)]
    subsample: Option<f64>,
    /// Certified Lipschitz bound of the Lipschitz network.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Lattice radius; repeat for a sweep.
    #[arg(long, global = true)]
    delta: Vec<f64>,
    #[arg(long, global = true, value_parser = ["linear", "vdp", "arm"])]
    system: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// System Lipschitz bound used by verification.
    #[arg(long, global = true)]
    k: Option<f64>,
    /// Label error bound added to the certified bound.
    #[arg(long, global = true)]
    c: Option<f64>,
    /// Nearest-neighbour fallback count for empty lattices.
    #[arg(long, global = true)]
    q: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the system and write the dataset.
    Simulate,
    /// Train one model family.
    Train {
        #[arg(long, value_enum)]
        model: Family,
        /// Dataset CSV; simulated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Certify the estimation error of a trained model.
    Verify {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare model and true trajectories from shared initial states.
    Rollout {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Error bound for the deviation envelope; verified at the first
        /// configured radius when absent.
        #[arg(long)]
        bound: Option<f64>,
        /// Skip the envelope.
        #[arg(long)]
        no_envelope: bool,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Train one Lipschitz network per bound and plot train and test MSE.
    SweepGamma {
        /// Comma-separated bounds.
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run every stage: dataset, bound table, MSE table, rollouts, sweep.
    Report,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let e = &mut cfg.experiment;
        if let Some(v) = self.seed {
            e.seed = v;
        }
        if let Some(v) = self.scale {
            e.scale = v;
        }
        if let Some(v) = &self.system {
            e.system = v.clone();
        }
        if let Some(v) = &self.out {
            e.out = v.to_string_lossy().into_owned();
        }
        if let Some(v) = self.data_seed {
            cfg.sampling.seed = v;
        }
        if let Some(v) = self.subsample {
            cfg.train.train_subsample = v;
            cfg.experiment.subsamples = vec![v];
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.gamma {
            cfg.lipnet.gamma = Some(v);
        }
        if !self.delta.is_empty() {
            cfg.verify.deltas = self.delta.clone();
        }
        if let Some(v) = self.k {
            cfg.verify.k = Some(v);
        }
        if let Some(v) = self.c {
            cfg.verify.c = v;
        }
        if let Some(v) = self.q {
            cfg.verify.q = v;
        }
    }
}

/// Base config: the `--config` file, else the one embedded in the model
/// file, else defaults. Flags are applied on top.
fn resolve(o: &Overrides, model: Option<&io::ModelFile>) -> Result<ExperimentConfig> {
    let mut cfg = match (&o.config, model) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(m)) => ExperimentConfig::parse(&m.config).context("config embedded in the model file")?,
        (None, None) => ExperimentConfig::default(),
    };
    o.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(exp: &Experiment, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(p) => {
            let (d, side) = io::read_dataset(p)?;
            if side.system != exp.system.name() {
                bail!("dataset {} is for system {}, config says {}", p.display(), side.system, exp.system.name());
            }
            Ok(d)
        }
        None => exp.dataset(),
    }
}

fn check_system(exp: &Experiment, m: &io::ModelFile) -> Result<()> {
    if m.system != exp.system.name() {
        bail!("model is for system {}, config says {}", m.system, exp.system.name());
    }
    Ok(())
}

fn run(cli: &Cli, marker_dir: &mut PathBuf) -> Result<()> {
    let model = match &cli.cmd {
        Command::Verify { model_file, .. } | Command::Rollout { model_file, .. } => Some(io::read_model(model_file)?),
        _ => None,
    };
    let mut cfg = resolve(&cli.o, model.as_ref())?;
    match &cli.cmd {
        Command::Rollout { count, t_end, .. } => {
            if let Some(c) = count {
                cfg.rollout.count = *c;
            }
            if let Some(t) = t_end {
                cfg.rollout.t_end = *t;
            }
        }
        Command::SweepGamma { gammas, .. } if !gammas.is_empty() => cfg.lipnet.sweep_gammas = gammas.clone(),
        _ => {}
    }
    let exp = Experiment::new(cfg)?;
    let out = PathBuf::from(&exp.cfg.experiment.out);
    *marker_dir = out.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("config.toml"), exp.cfg.to_toml())?;

    match &cli.cmd {
        Command::Simulate => {
            let d = experiment::run_simulate(&exp, &out)?;
            println!("wrote {} samples to {}", d.len(), out.join("dataset.csv").display());
        }
        Command::Train { model: family, data } => {
            let d = load_data(&exp, data.as_deref())?;
            let t = experiment::run_train(&exp, *family, &d, exp.cfg.experiment.seed, &out)?;
            println!(
                "{}: best test MSE {} at epoch {}, Lipschitz bound {}",
                t.family,
                t.best_test_mse,
                t.best_epoch,
                t.network.lipschitz_bound()
            );
        }
        Command::Verify { data, .. } => {
            let m = model.as_ref().expect("loaded above");
            check_system(&exp, m)?;
            let d = load_data(&exp, data.as_deref())?;
            let k = exp.system_k()?;
            let rows = experiment::run_verify(&exp, m.kind.name(), &m.network, &d, k, &out)?;
            for r in rows {
                print!("{}", io::verify_summary(r.delta, &r.report));
            }
        }
        Command::Rollout { data, bound, no_envelope, .. } => {
            let m = model.as_ref().expect("loaded above");
            check_system(&exp, m)?;
            let a = match (bound, no_envelope) {
                (_, true) => None,
                (Some(a), false) => Some(*a),
                (None, false) => {
                    let d = load_data(&exp, data.as_deref())?;
                    let k = exp.system_k()?;
                    let first = exp.verify(&m.network, &d, k)?.into_iter().next();
                    first.map(|(_, r)| r.delta_bound)
                }
            };
            let b = experiment::run_rollout(&exp, m.kind.name(), &m.network, a, &out)?;
            let exits = b.rollouts.iter().filter(|r| r.exit_time.is_some()).count();
            let diverged = b.rollouts.iter().filter(|r| r.diverged_at.is_some()).count();
            println!("{} rollouts, {exits} left the box, {diverged} diverged", b.rollouts.len());
            if let Some(m) = b.worst_envelope_margin() {
                println!("worst deviation minus envelope inside the box: {m}");
            }
        }
        Command::SweepGamma { data, .. } => {
            let d = load_data(&exp, data.as_deref())?;
            for p in experiment::run_sweep_gamma(&exp, &d, &out)? {
                println!("gamma {}: train MSE {}, test MSE {}", p.gamma, p.train_mse, p.test_mse);
            }
        }
        Command::Report => experiment::run_report(&exp, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    // Until the config resolves, failures are reported next to `--out`.
    let mut out = cli.o.out.clone().unwrap_or_else(|| PathBuf::from(ExperimentConfig::default().experiment.out));
    let result = run(&cli, &mut out);
    let marker = out.join("FAILED");
    match result {
        Ok(()) => {
            let _ = std::fs::remove_file(&marker);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if std::fs::create_dir_all(&out).is_ok() {
                let _ = std::fs::write(&marker, format!("{e:#}\n"));
            }
            ExitCode::FAILURE
        }
    }
}
