//! Acceptance suite: twelve end-to-end criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines are always shown. The
//! process exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use lipsysid::config::{ExperimentConfig, Family};
use lipsysid::experiment::{run_bound_comparison, run_mse_table, run_sweep_gamma, Experiment, MseRow, Trained};
use lipsysid::io::Network;
use lipsysid_core::diffcore::{cayley, Matrix};
use lipsysid_core::dynamics::{central_diff4, f_linear};
use lipsysid_core::networks::{AffineNormalizer, LipschitzNet, Model, Trainable};
use lipsysid_core::training::{loss_and_grad, train, Dataset, Regularizer, TrainConfig};
use lipsysid_core::verification::{empirical_lipschitz, estimation_error_bound, sup_error_on, LatticeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// State handed from criteria 8 and 11 to 10 and 12.
#[derive(Default)]
struct Shared {
    bound_dir: Option<PathBuf>,
    mse_dir: Option<PathBuf>,
    bound_csvs: BTreeMap<String, Vec<u8>>,
    mse_csvs: BTreeMap<String, Vec<u8>>,
    lipnet: Option<(Network, f64)>,
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Linear-system experiment at 10% scale with three-layer, 32-wide nets.
fn scaled_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.experiment.name = "acceptance".into();
    c.experiment.scale = 0.1;
    c.lipnet.hidden = vec![32; 3];
    c.fcn.hidden = vec![32; 3];
    c.lrn.hidden = vec![32; 3];
    c
}

fn csvs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn c1_cayley() -> Outcome {
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (n, m) = if i == 0 { (64, 64) } else { (r.random_range(1..=64), r.random_range(1..=64)) };
        let x = random(&mut r, n, n);
        let y = random(&mut r, m, n);
        let (a, b) = cayley(&x, &y).unwrap();
        let defect = a.matmul_nt(&a).add(&b.matmul_nt(&b)).sub(&Matrix::identity(n));
        worst = worst.max(defect.frobenius_norm());
    }
    outcome(worst <= 1e-9, format!("max ||AA^T + BB^T - I||_F = {worst:.3e} over 100 pairs"))
}

fn c2_gradients() -> Outcome {
    let mut r = rng(2);
    let xs = random(&mut r, 2, 16).scale(3.0);
    let ys = random(&mut r, 2, 16);
    let norm = AffineNormalizer::new(vec![0.6, 1.3], vec![0.1, -0.2]).unwrap();
    let net = LipschitzNet::with_bound(norm, &[8, 8], 2, 2.01, 5).unwrap();
    let (_, grads) = loss_and_grad(&net, &xs, &ys, Regularizer::default()).unwrap();
    let direct = |m: &LipschitzNet| {
        let p = m.forward_columns(&xs).unwrap();
        p.as_slice().iter().zip(ys.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xs.cols() as f64
    };
    let sizes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (mut block, mut k) = (0, r.random_range(0..total));
        while k >= sizes[block] {
            k -= sizes[block];
            block += 1;
        }
        let mut p = net.clone();
        p.params_mut()[block][k] += h;
        let mut m = net.clone();
        m.params_mut()[block][k] -= h;
        let fd = (direct(&p) - direct(&m)) / (2.0 * h);
        let an = grads[block].as_slice()[k];
        worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-5));
    }
    outcome(worst <= 1e-4, format!("max relative error {worst:.3e} over 50 of {total} parameters"))
}

/// Largest `‖Φ(a) − Φ(b)‖ / ‖a − b‖` over random pairs, half of them close.
fn max_quotient(net: &LipschitzNet, pairs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let chunk = 5000;
    for _ in 0..pairs / chunk {
        let a = random(&mut r, 2, chunk).scale(4.5);
        let mut b = random(&mut r, 2, chunk).scale(4.5);
        for j in 0..chunk / 2 {
            let s = 10f64.powf(r.random_range(-6.0..0.0));
            b.as_mut_slice()[j] = a.as_slice()[j] + s * r.random_range(-1.0..1.0);
            b.as_mut_slice()[chunk + j] = a.as_slice()[chunk + j] + s * r.random_range(-1.0..1.0);
        }
        let fa = net.forward_columns(&a).unwrap();
        let fb = net.forward_columns(&b).unwrap();
        for j in 0..chunk {
            let dx = ((a[(0, j)] - b[(0, j)]).powi(2) + (a[(1, j)] - b[(1, j)]).powi(2)).sqrt();
            let dy = ((fa[(0, j)] - fb[(0, j)]).powi(2) + (fa[(1, j)] - fb[(1, j)]).powi(2)).sqrt();
            if dx > 0.0 {
                worst = worst.max(dy / dx);
            }
        }
    }
    worst
}

fn c3_architectural_bound() -> Outcome {
    let mut cfg = scaled_config();
    cfg.experiment.scale = 0.05;
    let exp = Experiment::new(cfg).unwrap();
    let d = exp.dataset().unwrap();
    let norm = AffineNormalizer::fit(d.inputs()).unwrap();
    let net = LipschitzNet::with_bound(norm, &[32, 32], 2, 2.01, 3).unwrap();
    let before = max_quotient(&net, 100_000, 30);
    let tc = TrainConfig { epochs: 10, lr0: 0.3, ..TrainConfig::default() };
    let trained = train(net.clone(), &d, &tc).unwrap().final_model;
    let after = max_quotient(&trained, 100_000, 31);
    let g = net.lipschitz_bound();
    let same = trained.lipschitz_bound() == g;
    outcome(
        before <= g + 1e-7 && after <= g + 1e-7 && same,
        format!("quotient {before:.6} before, {after:.6} after 10 epochs; bound {g}"),
    )
}

fn c4_zero_at_zero() -> Outcome {
    let mut r = rng(4);
    let mut bad = 0;
    for i in 0..100 {
        let n_in = r.random_range(1..=4);
        let n_out = r.random_range(1..=4);
        let widths: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(1..=16)).collect();
        let scale = (0..n_in).map(|_| r.random_range(0.1..3.0)).collect();
        let offset = (0..n_in).map(|_| r.random_range(-2.0..2.0)).collect();
        let norm = AffineNormalizer::new(scale, offset).unwrap();
        let net = LipschitzNet::with_bound(norm, &widths, n_out, r.random_range(0.1..5.0), i).unwrap();
        if net.forward(&vec![0.0; n_in]).unwrap().iter().any(|v| *v != 0.0) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} of 100 random networks nonzero at the origin"))
}

fn c5_differentiation() -> Outcome {
    let mut cfg = scaled_config();
    cfg.sampling.noise_variance = Some(0.0);
    let d = Experiment::new(cfg).unwrap().dataset().unwrap();
    let label_err = d
        .samples
        .iter()
        .flat_map(|s| {
            let f = f_linear(&s.x);
            [(s.y[0] - f[0]).abs(), (s.y[1] - f[1]).abs()]
        })
        .fold(0.0, f64::max);
    let mut r = rng(5);
    let mut poly_err: f64 = 0.0;
    for _ in 0..50 {
        let c: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
        let dt = r.random_range(0.005..0.05);
        let ts: Vec<f64> = (0..40).map(|i| i as f64 * dt).collect();
        let series: Vec<f64> = ts.iter().map(|t| c[0] + c[1] * t + c[2] * t * t + c[3] * t.powi(3) + c[4] * t.powi(4)).collect();
        let dv = central_diff4(&series, dt).unwrap();
        for (i, v) in dv.iter().enumerate() {
            let t = ts[i + 2];
            let exact = c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t + 4.0 * c[4] * t.powi(3);
            poly_err = poly_err.max((v - exact).abs());
        }
    }
    outcome(
        label_err <= 1e-6 && poly_err <= 1e-8,
        format!("max label error {label_err:.3e} over {} samples; quartic stencil error {poly_err:.3e}", d.len()),
    )
}

/// 10 000 noiseless linear-system samples.
fn noiseless_10k() -> Dataset {
    let mut cfg = scaled_config();
    cfg.experiment.scale = 1.0;
    cfg.sampling.trajectories = Some(9);
    cfg.sampling.noise_variance = Some(0.0);
    let d = Experiment::new(cfg).unwrap().dataset().unwrap();
    let idx: Vec<usize> = (0..10_000).collect();
    d.subset(&idx)
}

fn c6_empirical_k() -> Outcome {
    let d = noiseless_10k();
    let k = empirical_lipschitz(&d, 5).unwrap();
    outcome((1.97..=2.03).contains(&k), format!("K = {k:.5} on {} samples", d.len()))
}

/// The true field plus a smooth bounded perturbation.
struct Perturbed;

const EPS: f64 = 0.05;

fn perturbed(x: &[f64]) -> [f64; 2] {
    let f = f_linear(x);
    [f[0] + EPS * (3.0 * x[1]).sin(), f[1] + EPS * (2.0 * x[0]).cos()]
}

impl Model for Perturbed {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn forward_columns(&self, xs: &Matrix) -> lipsysid_core::Result<Matrix> {
        let cols: Vec<[f64; 2]> = (0..xs.cols()).map(|c| perturbed(&xs.col(c))).collect();
        Ok(Matrix::from_columns(2, cols.iter().map(|c| c.as_slice())))
    }
    fn lipschitz_bound(&self) -> f64 {
        // ‖A‖₂ plus the perturbation's Jacobian bound 3ε.
        4.04f64.sqrt() + 3.0 * EPS
    }
}

fn c7_bound_soundness() -> Outcome {
    let mut d = noiseless_10k();
    for s in &mut d.samples {
        s.y = f_linear(&s.x).to_vec();
    }
    let d = Dataset::new(d.samples, d.meta).unwrap();
    let grid = LatticeGrid::new(&[(-3.0, 3.0); 2], 0.05).unwrap();
    let k = 4.04f64.sqrt();
    let r = estimation_error_bound(&Perturbed, &d, k, &grid, 5, 0.0).unwrap();
    let pts: Vec<Vec<f64>> = (0..201)
        .flat_map(|i| (0..201).map(move |j| vec![-3.0 + 0.03 * i as f64, -3.0 + 0.03 * j as f64]))
        .collect();
    let m = Matrix::from_columns(2, pts.iter().map(|p| p.as_slice()));
    let sup = sup_error_on(&Perturbed, |x| f_linear(x).to_vec(), &m).unwrap();
    outcome(r.delta_bound >= sup, format!("bound {:.4} vs measured sup error {sup:.4}", r.delta_bound))
}

fn c8_bound_pattern(sh: &mut Shared, dir: &Path) -> Outcome {
    let mut cfg = scaled_config();
    cfg.train.epochs = 50;
    let exp = Experiment::new(cfg).unwrap();
    let d = exp.dataset().unwrap();
    let k = exp.system_k().unwrap();
    let (trained, rows) = run_bound_comparison(&exp, &d, k, dir).unwrap();
    let at = |m: &str, delta: f64| rows.iter().find(|r| r.model == m && r.delta == delta).unwrap().report.delta_bound;
    let (l, f, r) = (at("lipnet", 0.05), at("fcn", 0.05), at("lrn", 0.05));
    let smallest = l < f && l < r;
    let refine = Family::ALL.iter().all(|m| at(m.name(), 0.025) <= at(m.name(), 0.05));
    let lip: &Trained = trained.iter().find(|t| t.family == Family::Lipnet).unwrap();
    sh.lipnet = Some((lip.network.clone(), l));
    sh.bound_dir = Some(dir.to_path_buf());
    sh.bound_csvs = csvs(dir);
    let detail = format!(
        "K {k:.4}; bound at 0.05 / 0.025: lipnet {l} / {}, fcn {f} / {}, lrn {r} / {}",
        at("lipnet", 0.025),
        at("fcn", 0.025),
        at("lrn", 0.025)
    );
    outcome(smallest && refine, detail)
}

fn c9_underfitting(dir: &Path) -> Outcome {
    let mut cfg = scaled_config();
    cfg.train.epochs = 100;
    let exp = Experiment::new(cfg).unwrap();
    let d = exp.dataset().unwrap();
    let pts = run_sweep_gamma(&exp, &d, dir).unwrap();
    let at = |g: f64| pts.iter().find(|p| p.gamma == g).unwrap().train_mse;
    let curve: Vec<String> = pts.iter().map(|p| format!("{}:{:.4}", p.gamma, p.train_mse)).collect();
    outcome(at(0.25) >= 2.0 * at(2.01), format!("train MSE by gamma {}", curve.join(" ")))
}

fn c10_envelope(sh: &Shared) -> Outcome {
    let Some((net, a)) = &sh.lipnet else {
        return outcome(false, "criterion 8 did not produce a model".into());
    };
    let exp = Experiment::new(scaled_config()).unwrap();
    let b = exp.rollout(net, Some(*a)).unwrap();
    let margin = b.worst_envelope_margin().unwrap();
    let exits = b.rollouts.iter().filter(|r| r.exit_time.is_some()).count();
    let diverged = b.rollouts.iter().filter(|r| r.diverged_at.is_some()).count();
    outcome(
        b.rollouts.len() == 100 && margin <= 1e-6 && diverged == 0,
        format!("a = {a:.4}, gamma = {}; worst d(t) - envelope = {margin:.3e}; {exits} rollouts left the box", net.lipschitz_bound()),
    )
}

fn mse_config() -> ExperimentConfig {
    let mut cfg = scaled_config();
    cfg.experiment.seeds = vec![0, 100];
    cfg.experiment.subsamples = vec![0.25];
    cfg
}

fn c11_low_data(sh: &mut Shared, dir: &Path) -> Outcome {
    let exp = Experiment::new(mse_config()).unwrap();
    let d = exp.dataset().unwrap();
    let rows = run_mse_table(&exp, &d, dir).unwrap();
    sh.mse_dir = Some(dir.to_path_buf());
    sh.mse_csvs = csvs(dir);
    let get = |f: Family, s: u64| rows.iter().find(|r: &&MseRow| r.family == f && r.seed == s).unwrap().best_test_mse;
    let le = |a: f64, b: f64| a <= b * 1.02;
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in [0, 100] {
        let (l, f, r) = (get(Family::Lipnet, seed), get(Family::Fcn, seed), get(Family::Lrn, seed));
        ok &= le(l, f) && le(f, r);
        parts.push(format!("seed {seed}: lipnet {l:.5} fcn {f:.5} lrn {r:.5}"));
    }
    outcome(ok, format!("{} (2% tie allowance)", parts.join("; ")))
}

fn c12_determinism(sh: &Shared) -> Outcome {
    let (Some(bd), Some(md)) = (&sh.bound_dir, &sh.mse_dir) else {
        return outcome(false, "criteria 8 and 11 did not run".into());
    };
    let mut sh2 = Shared::default();
    c8_bound_pattern(&mut sh2, bd);
    c11_low_data(&mut sh2, md);
    let same_b = sh2.bound_csvs == sh.bound_csvs;
    let same_m = sh2.mse_csvs == sh.mse_csvs;
    let files = sh.bound_csvs.len() + sh.mse_csvs.len();
    outcome(
        same_b && same_m && files > 0,
        format!("{files} CSV files compared; bound run identical: {same_b}, MSE run identical: {same_m}"),
    )
}

fn main() {
    let root = tempfile::tempdir().unwrap();
    let mut sh = Shared::default();
    let crit_8_dir = root.path().join("c8");
    let crit_9_dir = root.path().join("c9");
    let crit_11_dir = root.path().join("c11");
    type Run<'a> = Box<dyn FnMut(&mut Shared) -> Outcome + 'a>;
    let criteria: Vec<(u32, &str, u64, Run)> = vec![
        (1, "Cayley orthogonality", 5, Box::new(|_| c1_cayley())),
        (2, "gradient correctness", 30, Box::new(|_| c2_gradients())),
        (3, "architectural Lipschitz guarantee", 60, Box::new(|_| c3_architectural_bound())),
        (4, "zero at zero", 60, Box::new(|_| c4_zero_at_zero())),
        (5, "differentiation pipeline", 60, Box::new(|_| c5_differentiation())),
        (6, "empirical K", 30, Box::new(|_| c6_empirical_k())),
        (7, "bound soundness", 120, Box::new(|_| c7_bound_soundness())),
        (8, "bound pattern", 900, Box::new(|s| c8_bound_pattern(s, &crit_8_dir))),
        (9, "underfitting curve", 1200, Box::new(|_| c9_underfitting(&crit_9_dir))),
        (10, "deviation envelope", 300, Box::new(|s| c10_envelope(s))),
        (11, "low-data ordering", 1800, Box::new(|s| c11_low_data(s, &crit_11_dir))),
        (12, "determinism", 2700, Box::new(|s| c12_determinism(s))),
    ];
    let mut failed = 0;
    let mut lines = Vec::new();
    for (n, name, limit, mut run) in criteria {
        let t = Instant::now();
        let res = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&mut sh)));
        let took = t.elapsed();
        let (pass, detail) = match res {
            Ok(o) => (o.pass && took < Duration::from_secs(limit), o.detail),
            Err(_) => (false, "panicked".into()),
        };
        if !pass {
            failed += 1;
        }
        let line = format!(
            "{} criterion {n:>2} ({name}): {detail} [{:.1}s, limit {limit}s]",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
        println!("{line}");
        lines.push(line);
    }
    let report = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance.txt");
    let _ = std::fs::write(&report, lines.join("\n") + "\n");
    println!("{} of 12 criteria passed; summary in {}", 12 - failed, report.display());
    if failed > 0 {
        std::process::exit(1);
    }
}
