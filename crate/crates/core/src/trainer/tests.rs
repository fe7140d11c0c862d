use super::*;
use crate::model::{read_checkpoint, write_checkpoint};
use crate::mesh::Vec3;

fn tiny_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        warmup_iters: 5,
        total_iters: 10,
        batch_any: 1,
        batch_iso: 1,
        batch_noniso: 1,
        latent_dim: 8,
        conv: vec![16, 32],
        head: vec![16],
        decoder: vec![32],
        landmarks: 8,
        checkpoint_every: 4,
        ..TrainConfig::default()
    }
}

fn tiny_family() -> Dataset {
    gen_synthetic_family(2, 2, 12, 3).unwrap()
}

/// Asymptotic Kolmogorov p-value of the one-sample KS statistic `d` at sample size `n`.
fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let sign = if k as i64 % 2 == 1 { 1.0 } else { -1.0 };
        p += 2.0 * sign * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

#[test]
fn isometric_pairs_share_subject_and_missing_kinds_error() {
    let single = gen_synthetic_family(1, 3, 12, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = sample_pair(&single, &mut rng, PairKind::Isometric).unwrap();
        assert_ne!(p.i, p.j);
        assert_eq!(single.records()[p.i].subject_id, single.records()[p.j].subject_id);
    }
    assert!(sample_pair(&single, &mut rng, PairKind::NonIsometric).is_err());
    let family = tiny_family();
    for _ in 0..50 {
        let p = sample_pair(&family, &mut rng, PairKind::NonIsometric).unwrap();
        assert_ne!(family.records()[p.i].subject_id, family.records()[p.j].subject_id);
    }
}

#[test]
fn alpha_is_uniform() {
    let family = tiny_family();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut a: Vec<f64> = (0..10_000).map(|_| sample_pair(&family, &mut rng, PairKind::Any).unwrap().alpha).collect();
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    let d = a
        .iter()
        .enumerate()
        .map(|(k, &x)| ((k + 1) as f64 / n - x).max(x - k as f64 / n))
        .fold(0.0, f64::max);
    assert!(a.iter().all(|&x| x > 0.0 && x < 1.0));
    assert!(ks_p_value(d, a.len()) > 0.01, "KS statistic {d}");
}

#[test]
fn pairs_are_uniform_over_eligible() {
    let family = tiny_family();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut counts = [[0usize; 4]; 4];
    for _ in 0..12_000 {
        let p = sample_pair(&family, &mut rng, PairKind::Any).unwrap();
        counts[p.i][p.j] += 1;
    }
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if i == j {
                assert_eq!(c, 0);
            } else {
                assert!((c as f64 - 1000.0).abs() < 150.0, "pair ({i},{j}) drawn {c} times");
            }
        }
    }
}

#[test]
fn adam_zero_gradient_keeps_params() {
    let mut p = vec![DenseMatrix::from_rows(&[vec![1.0, -2.0]]).unwrap()];
    let before = p.clone();
    let mut st = AdamState::default();
    adam_step(p.iter_mut(), &[DenseMatrix::zeros(1, 2)], &mut st, 0.1).unwrap();
    assert_eq!(p, before);
    assert_eq!(st.steps(), 1);
}

#[test]
fn adam_first_step_has_size_lr() {
    let mut p = vec![DenseMatrix::zeros(2, 2)];
    let g = DenseMatrix::from_rows(&[vec![3.0, -0.5], vec![1e-3, 40.0]]).unwrap();
    adam_step(p.iter_mut(), &[g.clone()], &mut AdamState::default(), 0.01).unwrap();
    for (x, gv) in p[0].as_slice().iter().zip(g.as_slice()) {
        assert!((x + 0.01 * gv.signum()).abs() < 1e-7, "{x} for gradient {gv}");
    }
}

#[test]
fn adam_descends_quadratic_bowl() {
    let mut p = vec![DenseMatrix::from_rows(&[vec![1.5, -2.0, 0.7]]).unwrap()];
    let mut st = AdamState::default();
    for _ in 0..2000 {
        let g = p[0].scale(2.0);
        adam_step(p.iter_mut(), &[g], &mut st, 1e-2).unwrap();
    }
    assert!(p[0].frobenius_norm() < 1e-3, "{}", p[0].frobenius_norm());
}

#[test]
fn adam_rejects_mismatched_shapes() {
    let mut p = vec![DenseMatrix::zeros(2, 2)];
    assert!(adam_step(p.iter_mut(), &[DenseMatrix::zeros(2, 1)], &mut AdamState::default(), 0.1).is_err());
    assert!(adam_step(p.iter_mut(), &[], &mut AdamState::default(), 0.1).is_err());
}

#[test]
fn config_parses_and_round_trips() {
    let cfg = TrainConfig::parse("# run\nlearning_rate = 3e-4 # comment\nconv_layers = 8, 16\n\nlandmarks=12\nw_disent_ext = 0\n").unwrap();
    assert_eq!(cfg.learning_rate, 3e-4);
    assert_eq!(cfg.conv, vec![8, 16]);
    assert_eq!(cfg.landmarks, 12);
    assert_eq!(cfg.weights.disent_ext, 0.0);
    assert_eq!(cfg.total_iters, 6000);
    assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    assert_eq!(TrainConfig::parse("").unwrap(), TrainConfig::default());
}

#[test]
fn config_errors_name_the_line() {
    for (text, needle) in [
        ("seed = 1\nlearnign_rate = 1", "line 2: unknown key"),
        ("seed = x", "line 1: bad value"),
        ("seed", "expected `key = value`"),
        ("seed = 1\nseed = 2", "duplicate"),
        ("warmup_iters = 10\ntotal_iters = 10", "warmup_iters"),
        ("learning_rate = 0", "learning_rate"),
        ("beta = -1", "beta"),
    ] {
        let e = TrainConfig::parse(text).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains(needle), "{e}");
    }
}

#[test]
fn generation_is_deterministic_and_corresponded() {
    let a = gen_synthetic_family(2, 3, 12, 11).unwrap();
    let b = gen_synthetic_family(2, 3, 12, 11).unwrap();
    assert_eq!(a.len(), 6);
    for (x, y) in a.records().iter().zip(b.records()) {
        assert_eq!(x.mesh, y.mesh);
        assert_eq!(x.d_geo, y.d_geo);
        assert_eq!(x.mesh.faces(), a.faces());
    }
    let c = gen_synthetic_family(2, 3, 12, 12).unwrap();
    assert_ne!(a.records()[0].mesh, c.records()[0].mesh);
    assert_eq!(a.find(1, 2), Some(5));
}

#[test]
fn poses_of_one_subject_are_near_isometric() {
    let d = gen_synthetic_family(1, 2, 12, 5).unwrap();
    let f = family_distortion(&d).unwrap();
    assert!(f.intra_mean_relative <= 0.05, "{f:?}");
    assert!(f.inter_k.is_infinite());
    let two = gen_synthetic_family(2, 5, 12, 5).unwrap();
    assert_eq!(two.n_vertices(), 300);
    let f = family_distortion(&two).unwrap();
    assert!(f.inter_k > f.intra_k && f.intra_k <= 0.2 * f.inter_k, "{f:?}");
}

#[test]
fn generation_rejects_degenerate_requests() {
    assert!(gen_synthetic_family(2, 1, 12, 0).is_err());
    assert!(gen_synthetic_family(0, 3, 12, 0).is_err());
    assert!(gen_synthetic_family(2, 3, 2, 0).is_err());
}

#[test]
fn farthest_points_spread_out() {
    let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
    assert_eq!(farthest_point_sampling(&pts, 3), vec![0, 9, 4]);
    assert_eq!(farthest_point_sampling(&pts, 50).len(), 10);
    assert!(farthest_point_sampling(&pts, 0).is_empty());
}

#[test]
fn dataset_directory_round_trip() {
    let d = tiny_family();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&d, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), d.len());
    for (x, y) in d.records().iter().zip(back.records()) {
        assert_eq!((x.subject_id, x.pose_id), (y.subject_id, y.pose_id));
        assert_eq!(x.mesh.faces(), y.mesh.faces());
        assert!(x.d_geo.values().sub(y.d_geo.values()).max_abs() < 1e-9);
    }
    std::fs::write(dir.path().join("labels.csv"), "file,subject,pose\nshape_0000.off,zero,0\n").unwrap();
    assert!(matches!(load_dataset(dir.path()).unwrap_err(), Error::Parse { line: 2, .. }));
}

#[test]
fn warmup_boundary_shows_in_trace() {
    let d = tiny_family();
    let cfg = tiny_config();
    let out = train(&d, &cfg, None).unwrap();
    assert_eq!(out.trace.len(), 10);
    for row in &out.trace {
        let l = &row.loss;
        let pair_terms = [l.interp_geo, l.interp_local, l.disent_int, l.disent_ext];
        if row.iteration <= cfg.warmup_iters {
            assert_eq!(row.stage, Stage::Warmup);
            assert!(pair_terms.iter().all(|&v| v == 0.0), "{row:?}");
        } else {
            assert_eq!(row.stage, Stage::Full);
            assert!(l.interp_geo > 0.0, "{row:?}");
        }
    }
    assert_eq!(out.trace.iter().position(|r| r.loss.interp_geo > 0.0), Some(cfg.warmup_iters));
}

#[test]
fn training_is_deterministic_and_writes_files() {
    let d = tiny_family();
    let cfg = tiny_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&d, &cfg, Some(a.path())).unwrap();
    train(&d, &cfg, Some(b.path())).unwrap();
    let ca = std::fs::read(a.path().join("model.ckpt")).unwrap();
    assert_eq!(ca, std::fs::read(b.path().join("model.ckpt")).unwrap());
    assert!(a.path().join("step_0000004.ckpt").exists() && a.path().join("step_0000008.ckpt").exists());
    let trace = std::fs::read_to_string(a.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
    assert!(trace.starts_with(TRACE_HEADER));
    assert_eq!(trace, std::fs::read_to_string(b.path().join("trace.csv")).unwrap());
    let params = read_checkpoint(&ca).unwrap();
    assert_eq!(params.config().latent_dim, 8);
    assert_eq!(write_checkpoint(&params), ca);
}

#[test]
fn divergence_aborts_with_last_good_checkpoint() {
    let d = tiny_family();
    let cfg = TrainConfig { learning_rate: 1e30, warmup_iters: 2, total_iters: 50, ..tiny_config() };
    let dir = tempfile::tempdir().unwrap();
    let e = train(&d, &cfg, Some(dir.path())).unwrap_err();
    assert!(e.is_numerical(), "{e}");
    let kept = crate::model::load_checkpoint(dir.path().join("model.ckpt")).unwrap();
    assert!(kept.is_finite());
}

#[test]
fn reconstruction_drops_on_two_shapes() {
    let full = tiny_family();
    let recs = vec![full.records()[0].clone(), full.records()[2].clone()];
    let d = Dataset::new(recs, full.geodesic_config().clone()).unwrap();
    let cfg = TrainConfig {
        warmup_iters: 500,
        total_iters: 1000,
        batch_iso: 0,
        checkpoint_every: 0,
        ..tiny_config()
    };
    let out = train(&d, &cfg, None).unwrap();
    let first = out.trace[0].loss.recon;
    let last = out.trace.last().unwrap().loss.recon;
    assert!(last <= 0.1 * first, "recon {first} -> {last}");
}
