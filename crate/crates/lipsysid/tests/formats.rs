use lipsysid::config::{ExperimentConfig, Family};
use lipsysid::experiment::{run_simulate, run_train, Experiment};
use lipsysid::io;
use lipsysid_core::diffcore::Matrix;
use lipsysid_core::networks::Model;

fn small(system: &str) -> Experiment {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.system = system.into();
    cfg.sampling.trajectories = Some(3);
    cfg.sampling.duration = Some(1.0);
    cfg.train.epochs = 2;
    cfg.train.batch_size = 64;
    cfg.lipnet.hidden = vec![6, 6];
    cfg.fcn.hidden = vec![6, 6];
    cfg.lrn.hidden = vec![6, 6];
    Experiment::new(cfg).unwrap()
}

#[test]
fn dataset_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for system in ["linear", "vdp", "arm"] {
        let exp = small(system);
        let out = dir.path().join(system);
        let d = run_simulate(&exp, &out).unwrap();
        let (back, side) = io::read_dataset(&out.join("dataset.csv")).unwrap();
        assert_eq!(side.rows, d.len());
        assert_eq!(side.sampling, exp.sampling().unwrap());
        assert_eq!(back.meta, d.meta);
        assert_eq!(back.len(), d.len());
        for (a, b) in back.samples.iter().zip(&d.samples) {
            assert_eq!(a.traj, b.traj);
            assert_eq!(a.t.to_bits(), b.t.to_bits());
            assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
            assert!(a.y.iter().zip(&b.y).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
    }
}

#[test]
fn dataset_files_are_deterministic_and_carry_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small("linear");
    run_simulate(&exp, &dir.path().join("a")).unwrap();
    run_simulate(&exp, &dir.path().join("b")).unwrap();
    let a = std::fs::read(dir.path().join("a/dataset.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/dataset.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# lipsysid resolved config\n"));
    assert!(text.contains("# [experiment]"));
    assert!(text.lines().any(|l| l == "traj_id,t,x1,x2,y1,y2"));
}

#[test]
fn model_and_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small("linear");
    let d = exp.dataset().unwrap();
    let probe = Matrix::from_rows(&[&[0.3, -1.2, 2.5], &[1.0, 0.0, -2.9]]).unwrap();
    for family in Family::ALL {
        let t = run_train(&exp, family, &d, 4, dir.path()).unwrap();
        let m = io::read_model(&dir.path().join(format!("{family}_seed4.json"))).unwrap();
        assert_eq!(m.kind, family);
        assert_eq!(m.network, t.network);
        assert_eq!(m.lipschitz_bound, t.network.lipschitz_bound());
        assert_eq!(ExperimentConfig::parse(&m.config).unwrap(), exp.cfg);
        let y0 = t.network.forward_columns(&probe).unwrap();
        let y1 = m.network.forward_columns(&probe).unwrap();
        assert_eq!(y0, y1);
        let back = io::read_train_report(&dir.path().join(format!("{family}_seed4_train.csv"))).unwrap();
        assert_eq!(back, t.epochs);
    }
}

#[test]
fn rejects_mismatched_model_files() {
    let dir = tempfile::tempdir().unwrap();
    let exp = small("linear");
    let d = exp.dataset().unwrap();
    run_train(&exp, Family::Fcn, &d, 0, dir.path()).unwrap();
    let path = dir.path().join("fcn_seed0.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"kind\": \"fcn\"", "\"kind\": \"lipnet\"", 1)).unwrap();
    assert!(io::read_model(&path).is_err());
    std::fs::write(&path, text.replacen("\"format_version\": 1", "\"format_version\": 9", 1)).unwrap();
    assert!(io::read_model(&path).is_err());
}
