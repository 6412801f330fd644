use lipsysid_core::diffcore::{cayley, spectral_norm, Matrix, SPECTRAL_TOL};
use lipsysid_core::dynamics::{central_diff4, f_linear, f_vdp, lowpass_filter, SystemSpec};
use lipsysid_core::networks::{AffineNormalizer, LipschitzNet, Model};
use lipsysid_core::training::{split_dataset, Dataset, DatasetMeta, Sample};
use lipsysid_core::verification::{
    estimation_error_bound, trajectory_deviation_bound, KdTree, LatticeGrid,
};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
}

fn cayley_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..8, 1usize..8).prop_flat_map(|(n, m)| (matrix(n, n), matrix(m, n)))
}

fn points(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cayley_pairs_are_coorthogonal((x, y) in cayley_pair()) {
        let (a, b) = cayley(&x, &y).unwrap();
        let defect = a.matmul_nt(&a).add(&b.matmul_nt(&b)).sub(&Matrix::identity(a.rows()));
        prop_assert!(defect.frobenius_norm() <= 1e-9);
    }

    #[test]
    fn spectral_norm_dominates_vector_gains(m in matrix(3, 4), v in prop::collection::vec(-1.0f64..1.0, 4)) {
        let s = spectral_norm(&m, SPECTRAL_TOL);
        let nv: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(nv > 1e-6);
        let mv = m.matvec(&v);
        let nmv: f64 = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(nmv <= s * nv * (1.0 + 1e-7));
        prop_assert!(s <= m.frobenius_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn lipnet_is_zero_at_zero_and_respects_bound(
        seed in 0u64..10_000,
        gamma in 0.1f64..5.0,
        x1 in prop::collection::vec(-3.0f64..3.0, 2),
        x2 in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let norm = AffineNormalizer::new(vec![0.7, 1.9], vec![0.2, -0.4]).unwrap();
        let net = LipschitzNet::with_bound(norm, &[6, 5], 2, gamma, seed).unwrap();
        prop_assert_eq!(net.forward(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let d_in: f64 = x1.iter().zip(&x2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let y1 = net.forward(&x1).unwrap();
        let y2 = net.forward(&x2).unwrap();
        let d_out: f64 = y1.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d_out <= net.lipschitz_bound() * d_in + 1e-9);
        prop_assert!((net.lipschitz_bound() - gamma).abs() <= 1e-12 * gamma);
    }

    #[test]
    fn kd_tree_matches_linear_scan(pts in points(3, 200), q in prop::collection::vec(-1.2f64..1.2, 3), r in 0.0f64..0.8, k in 1usize..10) {
        let tree = KdTree::new(3, pts.iter().map(|p| p.as_slice()));
        let lo: Vec<f64> = q.iter().map(|v| v - r).collect();
        let hi: Vec<f64> = q.iter().map(|v| v + r).collect();
        let brute: Vec<usize> = (0..pts.len())
            .filter(|&i| pts[i].iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| v >= l && v <= h))
            .collect();
        prop_assert_eq!(tree.range(&lo, &hi), brute);
        let mut all: Vec<(usize, f64)> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| (i, p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum()))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        prop_assert_eq!(tree.nearest(&q, k), all);
    }

    #[test]
    fn lattices_cover_the_box(
        lo in prop::collection::vec(-3.0f64..0.0, 2),
        width in prop::collection::vec(0.01f64..3.0, 2),
        delta in 0.01f64..0.5,
        u in prop::collection::vec(0.0f64..=1.0, 2),
    ) {
        let bounds: Vec<(f64, f64)> = lo.iter().zip(&width).map(|(l, w)| (*l, l + w)).collect();
        let g = LatticeGrid::new(&bounds, delta).unwrap();
        let x: Vec<f64> = bounds.iter().zip(&u).map(|((l, h), u)| l + u * (h - l)).collect();
        let i = g.locate(&x);
        prop_assert!(i.is_some());
        let (clo, chi) = g.cell(i.unwrap());
        for d in 0..2 {
            prop_assert!(x[d] >= clo[d] - 1e-12 && x[d] <= chi[d] + 1e-12);
        }
    }

    #[test]
    fn error_bound_is_monotone_in_k_and_gamma(
        pts in points(2, 40),
        k in 0.0f64..3.0,
        dk in 0.0f64..1.0,
        gamma in 0.1f64..3.0,
        dg in 0.0f64..1.0,
    ) {
        let samples: Vec<Sample> = pts
            .iter()
            .enumerate()
            .map(|(i, x)| Sample { traj: i, t: 0.0, x: x.clone(), y: f_linear(x).to_vec() })
            .collect();
        let d = Dataset::new(samples, DatasetMeta::default()).unwrap();
        let grid = LatticeGrid::new(&[(-1.0, 1.0); 2], 0.25).unwrap();
        let bound = |k: f64, g: f64| {
            let net = LipschitzNet::with_bound(AffineNormalizer::identity(2), &[4], 2, g, 3).unwrap();
            estimation_error_bound(&net, &d, k, &grid, 3, 0.0).unwrap().delta_bound
        };
        let base = bound(k, gamma);
        prop_assert!(bound(k + dk, gamma) >= base - 1e-12);
        prop_assert!(bound(k, gamma + dg) >= base - 1e-9 * base.max(1.0));
    }

    #[test]
    fn deviation_envelope_monotone_in_time(a in 0.0f64..2.0, g in 0.0f64..4.0, t in 0.0f64..5.0, dt in 0.0f64..1.0) {
        prop_assert!(trajectory_deviation_bound(a, g, t + dt) >= trajectory_deviation_bound(a, g, t));
        prop_assert!(trajectory_deviation_bound(a, g, t) >= a * t * (1.0 - 1e-12));
    }

    #[test]
    fn diff4_exact_on_quartics(c in prop::collection::vec(-2.0f64..2.0, 5), dt in 0.005f64..0.05) {
        let f = |t: f64| c[0] + c[1] * t + c[2] * t * t + c[3] * t.powi(3) + c[4] * t.powi(4);
        let df = |t: f64| c[1] + 2.0 * c[2] * t + 3.0 * c[3] * t * t + 4.0 * c[4] * t.powi(3);
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * dt).collect();
        let series: Vec<f64> = ts.iter().map(|t| f(*t)).collect();
        let d = central_diff4(&series, dt).unwrap();
        for (i, v) in d.iter().enumerate() {
            prop_assert!((v - df(ts[i + 2])).abs() <= 1e-8);
        }
    }

    #[test]
    fn moving_average_preserves_constants_and_lines(c in -5.0f64..5.0, s in -1.0f64..1.0, w in 0usize..4) {
        let window = 2 * w + 1;
        let series: Vec<f64> = (0..25).map(|i| c + s * i as f64).collect();
        let f = lowpass_filter(&series, window).unwrap();
        for (a, b) in f.iter().zip(&series) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn split_partitions_samples(n in 4usize..200, frac in 0.2f64..0.8, seed in 0u64..1000) {
        let samples: Vec<Sample> = (0..n)
            .map(|i| Sample { traj: 0, t: i as f64, x: vec![i as f64], y: vec![0.0] })
            .collect();
        let d = Dataset::new(samples, DatasetMeta::default()).unwrap();
        let (tr, te) = split_dataset(&d, frac, 1.0, seed).unwrap();
        prop_assert_eq!(tr.len() + te.len(), n);
        let mut ts: Vec<u64> = tr.samples.iter().chain(&te.samples).map(|s| s.t as u64).collect();
        ts.sort_unstable();
        prop_assert_eq!(ts, (0..n as u64).collect::<Vec<_>>());
    }
}

#[test]
fn fields_vanish_at_origin() {
    assert_eq!(f_linear(&[0.0, 0.0]), [0.0, 0.0]);
    assert_eq!(f_vdp(&[0.0, 0.0], 0.02), [0.0, 0.0]);
}

#[test]
fn arm_friction_residual_vanishes_at_rest() {
    let sys = SystemSpec::preset("arm").unwrap();
    let lipsysid_core::dynamics::SystemKind::TwoLinkArm(p) = &sys.kind else { unreachable!() };
    for q in [[0.0, 0.0], [1.0, -2.0], [-2.3, 0.4]] {
        assert_eq!(p.friction_accel(q, [0.0, 0.0]).unwrap(), [0.0, 0.0]);
    }
}

#[test]
fn lattice_cover_dense_sample() {
    // Corners and a million random points of the linear-system box.
    let g = LatticeGrid::new(&[(-3.0, 3.0); 2], 0.05).unwrap();
    let inside = |x: &[f64]| {
        g.locate(x).is_some_and(|i| {
            let (lo, hi) = g.cell(i);
            x.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| *v >= l - 1e-12 && *v <= h + 1e-12)
        })
    };
    for c in [[-3.0, -3.0], [-3.0, 3.0], [3.0, -3.0], [3.0, 3.0]] {
        assert!(inside(&c));
    }
    let mut state = 0x9e3779b97f4a7c15u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for _ in 0..1_000_000 {
        let x = [-3.0 + 6.0 * next(), -3.0 + 6.0 * next()];
        assert!(inside(&x));
    }
}

#[test]
fn model_trait_is_object_safe() {
    let net = LipschitzNet::with_bound(AffineNormalizer::identity(2), &[3], 2, 1.0, 0).unwrap();
    let m: &dyn Model = &net;
    assert_eq!(m.forward_one(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
}
