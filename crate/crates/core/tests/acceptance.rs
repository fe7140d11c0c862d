//! End-to-end acceptance criteria. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fail.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use limp::apps::{eval_disentanglement_error, eval_interpolation_error, default_alphas, evaluate, fit_to_metric, gradient_checks, GRAD_CHECK_TOLERANCE};
use limp::geodesics::{bounded_distortion, heat_distance_all, heat_distance_vjp, interp_metric, DistanceMatrix, GeodesicConfig};
use limp::linalg::{factor_spd, factor_spd_dense, DenseMatrix};
use limp::losses::{loss_recon, rel_dist_err};
use limp::mesh::{flat_grid, icosphere, rotation_matrix, TriMesh};
use limp::model::points_matrix;
use limp::operators::assemble_operators;
use limp::trainer::{gen_synthetic_family, save_dataset, train, TrainConfig};
use limp::autodiff::Tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn unit(p: [f64; 3]) -> [f64; 3] {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n]
}

/// Mean and max of `|d - oracle| / oracle` over pairs with `oracle > 0`.
fn relative_errors(d: &DistanceMatrix, oracle: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let (mut sum, mut max, mut count) = (0.0, 0.0f64, 0usize);
    for i in 0..d.n() {
        for j in 0..d.n() {
            let o = oracle(i, j);
            if o > 1e-12 {
                let e = (d.get(i, j) - o).abs() / o;
                sum += e;
                max = max.max(e);
                count += 1;
            }
        }
    }
    (sum / count as f64, max)
}

fn geodesic_accuracy() -> Vec<(&'static str, Outcome)> {
    let cfg = GeodesicConfig::default();
    let start = Instant::now();
    let sphere = icosphere(3);
    let ds = heat_distance_all(&sphere, &cfg).expect("sphere distances");
    let grid = flat_grid(20, 20, 1.0);
    let dg = heat_distance_all(&grid, &cfg).expect("grid distances");
    let elapsed = start.elapsed().as_secs_f64();

    let v = sphere.vertices();
    let (s_mean, s_max) = relative_errors(&ds, |i, j| {
        let (a, b) = (unit(v[i]), unit(v[j]));
        (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0).acos()
    });
    let g = grid.vertices();
    let (_, g_max) = relative_errors(&dg, |i, j| ((g[i][0] - g[j][0]).powi(2) + (g[i][1] - g[j][1]).powi(2)).sqrt());
    vec![
        ("geodesic accuracy: icosphere(3) mean relative error <= 5%", outcome(s_mean <= 0.05, format!("{:.2}% on {} vertices", 100.0 * s_mean, v.len()))),
        ("geodesic accuracy: icosphere(3) max relative error <= 15%", outcome(s_max <= 0.15, format!("{:.2}%", 100.0 * s_max))),
        ("geodesic accuracy: 20x20 grid max relative error <= 2%", outcome(g_max <= 0.02, format!("{:.2}%", 100.0 * g_max))),
        ("geodesic accuracy: runtime < 10 s", outcome(elapsed < 10.0, format!("{elapsed:.2} s"))),
    ]
}

fn creased_patch(seed: u64) -> TriMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = flat_grid(7, 7, 1.0);
    let v = g.vertices().iter().map(|p| [p[0], p[1], 0.3 * (p[0] - 0.5).powi(2) + 0.05 * rng.random::<f64>()]).collect();
    g.with_vertices(v).expect("same faces")
}

fn differentiability() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..5 {
        for (name, r) in gradient_checks(seed).expect("gradient checks run") {
            worst = worst.max(r.max_deviation);
            if !r.passed() {
                failures.push(format!("{name}@{seed}"));
            }
        }
        // direct check of the all-pairs VJP on a 49-vertex patch
        let mesh = creased_patch(seed);
        let cfg = GeodesicConfig::default();
        let n = mesh.n_vertices();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let c = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let f = |m: &TriMesh| heat_distance_all(m, &cfg).expect("distances").values().dot(&c);
        let grad = heat_distance_vjp(&mesh, &cfg, &c).expect("vjp");
        let h = 1e-6;
        let (mut dev, mut scale) = (0.0f64, 0.0f64);
        for i in 0..n {
            for k in 0..3 {
                let mut p = mesh.vertices().to_vec();
                p[i][k] += h;
                let fp = f(&mesh.with_vertices(p.clone()).expect("same faces"));
                p[i][k] -= 2.0 * h;
                let fm = f(&mesh.with_vertices(p).expect("same faces"));
                let num = (fp - fm) / (2.0 * h);
                dev = dev.max((num - grad[i][k]).abs());
                scale = scale.max(num.abs()).max(grad[i][k].abs());
            }
        }
        let rel = dev / scale;
        worst = worst.max(rel);
        if rel > GRAD_CHECK_TOLERANCE {
            failures.push(format!("heat_distance_vjp@{seed}"));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && elapsed < 60.0,
        format!("worst relative deviation {worst:.2e} (tol {GRAD_CHECK_TOLERANCE:.0e}), 5 seeds, {elapsed:.1} s{}", if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join(" ")) }),
    )
}

fn operator_identities() -> Vec<(&'static str, Outcome)> {
    let meshes = [icosphere(2), creased_patch(7), gen_synthetic_family(1, 2, 12, 0).expect("family").records()[1].mesh.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut div_grad, mut ones, mut sparse_dense) = (0.0f64, 0.0f64, 0.0f64);
    for mesh in &meshes {
        let ops = assemble_operators(mesh).expect("operators");
        let n = mesh.n_vertices();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lu = ops.laplacian().matvec(&u);
        let dgu = ops.apply_divergence(&ops.apply_gradient(&u).expect("grad")).expect("div");
        div_grad = div_grad.max(dgu.iter().zip(&lu).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max));
        ones = ones.max(ops.laplacian().matvec(&vec![1.0; n]).iter().map(|x| x.abs()).fold(0.0, f64::max));

        let dense = ops.laplacian().to_dense();
        let dv = dense.matvec(&u);
        sparse_dense = sparse_dense.max(dv.iter().zip(&lu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let gu = ops.gradient_matrix().matvec(&u);
        let gf = ops.apply_gradient(&u).expect("grad");
        sparse_dense = sparse_dense.max(gf.iter().flatten().zip(&gu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let heat = ops.heat_matrix(mesh.mean_edge_length().powi(2));
        let xs = factor_spd(&heat).expect("sparse factor").solve(&u).expect("solve");
        let xd = factor_spd_dense(&heat.to_dense()).expect("dense factor").solve(&u).expect("solve");
        let scale = xd.iter().map(|x| x.abs()).fold(0.0, f64::max);
        sparse_dense = sparse_dense.max(xs.iter().zip(&xd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale);
    }
    vec![
        ("operator identities: Div(G u) = -L u to 1e-9", outcome(div_grad <= 1e-9, format!("max abs {div_grad:.2e}"))),
        ("operator identities: L 1 = 0 to 1e-10", outcome(ones <= 1e-10, format!("max abs {ones:.2e}"))),
        ("operator identities: sparse and dense paths agree to 1e-9", outcome(sparse_dense <= 1e-9, format!("max deviation {sparse_dense:.2e}"))),
    ]
}

fn loss_zero_cases() -> Vec<(&'static str, Outcome)> {
    let family = gen_synthetic_family(1, 2, 12, 5).expect("family");
    let mesh = &family.records()[0].mesh;
    let d = DistanceMatrix::euclidean(mesh.vertices()).into_values();
    let tape = Tape::new();
    let same = loss_recon(tape.constant(points_matrix(mesh.vertices())), &d).expect("recon").item();
    let moved = mesh.transformed(&rotation_matrix([0.3, -0.5, 0.8], 2.1), 1.0, [0.4, -1.0, 2.5]);
    let rotated = loss_recon(tape.constant(points_matrix(moved.vertices())), &d).expect("recon").item();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 40;
    let a = DenseMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random_range(0.5..2.0) });
    let doubled = rel_dist_err(tape.constant(a.scale(2.0)), &a).expect("rel err").item();
    let entries = (n * n - n) as f64;
    vec![
        ("loss zero cases: loss_recon(X, X) = 0", outcome(same == 0.0, format!("{same:e}"))),
        ("loss zero cases: rigid-motion invariance <= 1e-9", outcome(rotated <= 1e-9, format!("{rotated:.2e}"))),
        ("loss zero cases: rel_dist_err(2A, A) = entry count", outcome(doubled == entries, format!("{doubled} vs {entries}"))),
    ]
}

fn interpolation_linearity() -> Outcome {
    let family = gen_synthetic_family(2, 2, 12, 9).expect("family");
    let dx = &family.records()[0].d_geo;
    let dy = &family.records()[3].d_geo;
    let k = bounded_distortion(dx, dy).expect("k").k;
    let mut worst = 0.0f64;
    for step in 0..=20 {
        let alpha = step as f64 / 20.0;
        let ka = bounded_distortion(dx, &interp_metric(dx, dy, alpha).expect("interp")).expect("k").k;
        worst = worst.max((ka - alpha * k).abs());
    }
    outcome(worst <= 1e-12, format!("max |K_a - a K| = {worst:.2e} over 21 alphas, K = {k:.4}"))
}

/// Recon-only baseline: the same schedule with no interpolation or
/// disentanglement pairs.
fn baseline_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        warmup_iters: 1000,
        total_iters: 6000,
        batch_any: 0,
        batch_iso: 0,
        batch_noniso: 0,
        ..TrainConfig::default()
    }
}

fn full_config() -> TrainConfig {
    let mut cfg = TrainConfig { batch_any: 4, batch_iso: 2, batch_noniso: 2, landmarks: 64, ..baseline_config() };
    cfg.weights.interp_geo = 1e3;
    cfg.weights.interp_local = 1.0;
    cfg.weights.disent_int = 1.0;
    cfg.weights.disent_ext = 1e3;
    cfg
}

fn ablation() -> Vec<(&'static str, Outcome)> {
    let start = Instant::now();
    let data = gen_synthetic_family(2, 5, 12, 0).expect("family");
    let mut scores = Vec::new();
    for cfg in [baseline_config(), full_config()] {
        let model = train(&data, &cfg, None).expect("training").params;
        let (interp, _, _, _) = eval_interpolation_error(&model, &data, &default_alphas(), data.geodesic_config()).expect("interp eval");
        let (disent, _) = eval_disentanglement_error(&model, &data).expect("disent eval");
        scores.push((interp, disent));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let ((ib, db), (if_, df)) = (scores[0], scores[1]);
    vec![
        ("ablation: interpolation error(full) <= 0.5 x baseline", outcome(if_ <= 0.5 * ib, format!("full {if_:.4e}, baseline {ib:.4e}, ratio {:.3}", if_ / ib))),
        ("ablation: disentanglement error(full) < baseline", outcome(df < db, format!("full {df:.4e}, baseline {db:.4e}"))),
        ("ablation: both runs < 30 min", outcome(elapsed < 1800.0, format!("{:.1} min on {} shapes of {} vertices", elapsed / 60.0, data.len(), data.n_vertices()))),
    ]
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .expect("readable dir")
        .map(|e| {
            let e = e.expect("entry");
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).expect("readable file"))
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        warmup_iters: 10,
        total_iters: 30,
        batch_any: 1,
        batch_iso: 1,
        batch_noniso: 1,
        latent_dim: 8,
        conv: vec![16, 16],
        head: vec![16],
        decoder: vec![32],
        landmarks: 16,
        checkpoint_every: 10,
        seed: 42,
        ..TrainConfig::default()
    };
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().expect("tempdir");
            let data = gen_synthetic_family(2, 2, 12, 17).expect("family");
            save_dataset(&data, tmp.path().join("data")).expect("save data");
            let out = train(&data, &cfg, Some(&tmp.path().join("run"))).expect("training");
            let report = evaluate(&out.params, &data, data.geodesic_config()).expect("eval").to_csv();
            (dir_bytes(&tmp.path().join("data")), dir_bytes(&tmp.path().join("run")), report)
        })
        .collect();
    let files = runs[0].1.len();
    let same = runs[0] == runs[1];
    outcome(same, format!("{} data files, {files} run files (checkpoints, trace) and the eval report {}", runs[0].0.len(), if same { "bit-identical" } else { "DIFFER" }))
}

fn deflated_ball() -> Outcome {
    let cfg = GeodesicConfig::default();
    let sphere = icosphere(2);
    let target = heat_distance_all(&sphere, &cfg).expect("target");
    let flat = sphere.with_vertices(sphere.vertices().iter().map(|p| [p[0], p[1], 0.3 * p[2]]).collect()).expect("same faces");
    let fit = fit_to_metric(&flat, &target, 2000, 1e-3, &cfg).expect("fit");
    let ratio = fit.initial_objective / fit.objective;
    let first = fit.history.iter().position(|&v| v * 10.0 <= fit.initial_objective);
    outcome(
        ratio >= 10.0,
        format!("objective {:.3e} -> {:.3e} ({ratio:.0}x), 10x reached at iteration {}", fit.initial_objective, fit.objective, first.map_or("never".into(), |i| i.to_string())),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&'static str, Outcome)> = Vec::new();
    let mut run = |batch: Vec<(&'static str, Outcome)>| {
        for (name, o) in batch {
            println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((name, o));
        }
    };
    run(geodesic_accuracy());
    run(vec![("differentiability: VJPs and loss gradients vs central differences", differentiability())]);
    run(operator_identities());
    run(loss_zero_cases());
    run(vec![("interpolation linearity: K(Dx, interp(Dx, Dy, a)) = a K(Dx, Dy)", interpolation_linearity())]);
    run(vec![("determinism: identical seeds give identical artifacts", determinism())]);
    run(vec![("deflated ball: fit_to_metric reduces objective >= 10x in 2000 iterations", deflated_ball())]);
    run(ablation());
    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
