//! File formats: dataset CSV with metadata sidecar, model JSON, and the
//! CSV reports written by each command.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every value bit for bit. Lines starting with `#` carry
//! the resolved config and are skipped by readers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lipsysid_core::diffcore::Matrix;
use lipsysid_core::dynamics::SamplingSpec;
use lipsysid_core::networks::{LipschitzNet, Mlp, Model};
use lipsysid_core::training::{Dataset, DatasetMeta, EpochRecord, Sample};
use lipsysid_core::verification::{RolloutBundle, VerifyReport};
use serde::{Deserialize, Serialize};

use crate::config::Family;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Writes a CSV file whose first lines are `# `-prefixed comments.
pub fn write_csv<I>(path: &Path, comment: &str, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for line in comment.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn parse(field: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|e| anyhow!("line {line}: bad number {field:?}: {e}"))
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Sidecar describing how a dataset was collected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub system: String,
    pub noise_variance: f64,
    pub rate_hz: f64,
    pub seed: u64,
    pub filter_window: usize,
    pub rows: usize,
    pub sampling: SamplingSpec,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

pub fn write_dataset(path: &Path, d: &Dataset, sampling: &SamplingSpec, comment: &str) -> Result<()> {
    let n = d.input_dim();
    let m = d.output_dim();
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend((1..=m).map(|i| format!("y{i}")));
    let rows = d.samples.iter().map(|s| {
        let mut r = vec![s.traj.to_string(), num(s.t)];
        r.extend(s.x.iter().map(|v| num(*v)));
        r.extend(s.y.iter().map(|v| num(*v)));
        r
    });
    write_csv(path, comment, &header, rows)?;
    let side = DatasetSidecar {
        system: d.meta.system.clone(),
        noise_variance: d.meta.noise_variance,
        rate_hz: d.meta.rate_hz,
        seed: d.meta.seed,
        filter_window: d.meta.filter_window,
        rows: d.len(),
        sampling: sampling.clone(),
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, toml::to_string(&side)?).with_context(|| format!("writing {}", sp.display()))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetSidecar)> {
    let sp = sidecar_path(path);
    let side: DatasetSidecar = toml::from_str(
        &std::fs::read_to_string(&sp).with_context(|| format!("reading {}", sp.display()))?,
    )
    .with_context(|| format!("parsing {}", sp.display()))?;
    let mut r = reader(path)?;
    let header = r.headers()?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('y')).count();
    if header.len() != 2 + n + m || header.get(0) != Some("traj_id") || header.get(1) != Some("t") {
        bail!("{}: unexpected dataset header {:?}", path.display(), header);
    }
    let mut samples = Vec::with_capacity(side.rows);
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let traj = rec[0].trim().parse().map_err(|e| anyhow!("line {line}: bad traj_id: {e}"))?;
        let vals: Vec<f64> = rec.iter().skip(1).map(|f| parse(f, line)).collect::<Result<_>>()?;
        samples.push(Sample {
            traj,
            t: vals[0],
            x: vals[1..=n].to_vec(),
            y: vals[1 + n..].to_vec(),
        });
    }
    if samples.len() != side.rows {
        bail!("{}: {} rows, sidecar says {}", path.display(), samples.len(), side.rows);
    }
    let meta = DatasetMeta {
        system: side.system.clone(),
        noise_variance: side.noise_variance,
        rate_hz: side.rate_hz,
        seed: side.seed,
        filter_window: side.filter_window,
    };
    Ok((Dataset::new(samples, meta)?, side))
}

/// A trained network of either kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    Lipnet(LipschitzNet),
    Mlp(Mlp),
}

impl Model for Network {
    fn input_dim(&self) -> usize {
        match self {
            Network::Lipnet(n) => n.input_dim(),
            Network::Mlp(n) => n.input_dim(),
        }
    }
    fn output_dim(&self) -> usize {
        match self {
            Network::Lipnet(n) => Model::output_dim(n),
            Network::Mlp(n) => n.output_dim(),
        }
    }
    fn forward_columns(&self, xs: &Matrix) -> lipsysid_core::Result<Matrix> {
        match self {
            Network::Lipnet(n) => Model::forward_columns(n, xs),
            Network::Mlp(n) => Model::forward_columns(n, xs),
        }
    }
    fn lipschitz_bound(&self) -> f64 {
        match self {
            Network::Lipnet(n) => Model::lipschitz_bound(n),
            Network::Mlp(n) => Model::lipschitz_bound(n),
        }
    }
}

/// On-disk model: the network plus what produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: Family,
    pub system: String,
    pub seed: u64,
    pub lipschitz_bound: f64,
    pub best_epoch: usize,
    pub best_test_mse: f64,
    /// Resolved config, TOML.
    pub config: String,
    pub network: Network,
}

pub fn write_model(path: &Path, m: &ModelFile) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, m)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: ModelFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if m.format_version != MODEL_FORMAT_VERSION {
        bail!("{}: model format {} is not supported", path.display(), m.format_version);
    }
    match (&m.kind, &m.network) {
        (Family::Lipnet, Network::Lipnet(n)) => n.validate()?,
        (Family::Fcn | Family::Lrn, Network::Mlp(n)) => n.validate()?,
        _ => bail!("{}: kind {} does not match the stored network", path.display(), m.kind),
    }
    Ok(m)
}

/// `epoch, lr, train_mse, test_mse` and, when used, `validation_mse`.
pub fn write_train_report(path: &Path, epochs: &[EpochRecord], comment: &str) -> Result<()> {
    let with_val = epochs.iter().any(|e| e.validation_mse.is_some());
    let mut header: Vec<String> = ["epoch", "lr", "train_mse", "test_mse"].map(String::from).to_vec();
    if with_val {
        header.push("validation_mse".into());
    }
    let rows = epochs.iter().map(|e| {
        let mut r = vec![e.epoch.to_string(), num(e.lr), num(e.train_mse), num(e.test_mse)];
        if with_val {
            r.push(opt(e.validation_mse));
        }
        r
    });
    write_csv(path, comment, &header, rows)
}

pub fn read_train_report(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = reader(path)?;
    let with_val = r.headers()?.len() == 5;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(EpochRecord {
            epoch: rec[0].parse()?,
            lr: parse(&rec[1], line)?,
            train_mse: parse(&rec[2], line)?,
            test_mse: parse(&rec[3], line)?,
            validation_mse: if with_val && !rec[4].is_empty() { Some(parse(&rec[4], line)?) } else { None },
        });
    }
    Ok(out)
}

/// Lattice centers and their bounds `e_i`.
pub fn write_lattice_csv(path: &Path, r: &VerifyReport, comment: &str) -> Result<()> {
    let n = r.grid.dim();
    let mut header: Vec<String> = (1..=n).map(|i| format!("c{i}")).collect();
    header.push("e".into());
    let rows = r.per_lattice.iter().enumerate().map(|(i, e)| {
        let mut row: Vec<String> = r.grid.center(i).into_iter().map(num).collect();
        row.push(num(*e));
        row
    });
    write_csv(path, comment, &header, rows)
}

/// One row per δ: a compact summary of a verification sweep.
pub fn write_bound_table(path: &Path, rows: &[(String, f64, &VerifyReport)], comment: &str) -> Result<()> {
    let header = ["model", "delta", "lattices", "fallback", "gamma", "k", "c", "q", "bound"].map(String::from);
    let rows = rows.iter().map(|(name, delta, r)| {
        vec![
            name.clone(),
            num(*delta),
            r.lattice_count().to_string(),
            r.fallback_count.to_string(),
            num(r.gamma),
            num(r.k),
            num(r.c),
            r.q.to_string(),
            num(r.delta_bound),
        ]
    });
    write_csv(path, comment, &header, rows)
}

/// Plain-text summary block for one verification run.
pub fn verify_summary(delta: f64, r: &VerifyReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("delta = {delta}\n"));
    s.push_str(&format!("gamma = {}\n", r.gamma));
    s.push_str(&format!("k = {}\n", r.k));
    s.push_str(&format!("c = {}\n", r.c));
    s.push_str(&format!("q = {}\n", r.q));
    s.push_str(&format!("lattices = {}\n", r.lattice_count()));
    s.push_str(&format!("fallback_lattices = {}\n", r.fallback_count));
    s.push_str(&format!("bound = {}\n", r.delta_bound));
    if let Some(w) = r.wall_time_s {
        s.push_str(&format!("wall_time_s = {w}\n"));
    }
    s
}

/// `t, mean, std, envelope, running` per time step.
pub fn write_rollout_curves(path: &Path, b: &RolloutBundle, comment: &str) -> Result<()> {
    let header = ["t", "mean", "std", "envelope", "running"].map(String::from);
    let rows = b.times.iter().enumerate().map(|(i, t)| {
        let running = b.rollouts.iter().filter(|r| r.deviation.len() > i).count();
        vec![
            num(*t),
            num(b.mean[i]),
            num(b.std[i]),
            b.envelope.get(i).map(|v| num(*v)).unwrap_or_default(),
            running.to_string(),
        ]
    });
    write_csv(path, comment, &header, rows)
}

/// One row per rollout: initial state, exit and divergence times, and the
/// worst deviation and envelope margin while inside the box.
pub fn write_rollout_runs(path: &Path, b: &RolloutBundle, comment: &str) -> Result<()> {
    let n = b.rollouts.first().map_or(0, |r| r.x0.len());
    let mut header = vec!["run".to_string()];
    header.extend((1..=n).map(|i| format!("x0_{i}")));
    header.extend(["exit_time", "diverged_at", "max_deviation", "max_margin"].map(String::from));
    let rows = b.rollouts.iter().enumerate().map(|(k, r)| {
        let mut row = vec![k.to_string()];
        row.extend(r.x0.iter().map(|v| num(*v)));
        row.push(opt(r.exit_time));
        row.push(opt(r.diverged_at));
        let inside = r.inside_len();
        row.push(num(r.deviation[..inside].iter().copied().fold(0.0, f64::max)));
        let margin = (!b.envelope.is_empty() && inside > 0).then(|| {
            (0..inside)
                .map(|i| r.deviation[i] - b.envelope[i])
                .fold(f64::NEG_INFINITY, f64::max)
        });
        row.push(opt(margin));
        row
    });
    write_csv(path, comment, &header, rows)
}
