use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use limp::apps::{
    complete_partial, evaluate, fit_to_metric, gradient_checks, latent_analogy, latent_interpolate, latent_swap,
    vertex_distortion, CompletionConfig, ShapeCodec,
};
use limp::geodesics::{heat_distance_all, heat_distance_single, DistanceMatrix, GeodesicConfig};
use limp::mesh::{load_off, save_off, TriMesh, Vec3};
use limp::model::load_checkpoint;
use limp::trainer::{gen_synthetic_family, load_dataset, save_dataset, train, Dataset, TrainConfig};
use limp::{Error, Result};

#[derive(Parser)]
#[command(name = "limp", version, about = "Deformable shape generation with metric-preservation priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// `synthetic` for the built-in hinged-tube family, or a dataset directory.
    #[arg(long, default_value = "synthetic")]
    data: String,
    /// Seed of the synthetic family.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hinged-tube family as OFF files plus labels.csv.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        subjects: usize,
        #[arg(long, default_value_t = 5)]
        poses: usize,
        /// Vertices per ring.
        #[arg(long, default_value_t = 12)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; writes model.ckpt, step checkpoints and trace.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print (or write) the mean and log-variance codes of a mesh.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a code given inline (comma separated) or as a file from `encode`.
    Decode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        code: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode codes along the segment between two encoded meshes.
    Interpolate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Receives interp_XX.off, colored by per-vertex geodesic distortion.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Style (intrinsic code) of one mesh with the pose (extrinsic code) of another.
    Swap {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode enc(a) - enc(b) + enc(c).
    Analogy {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        c: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete a partial point set (.xyz or .off) by latent search.
    Complete {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        partial: PathBuf,
        /// Training shapes whose codes seed the restarts.
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deform a mesh until its geodesic distances match those of a target mesh.
    FitMetric {
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long)]
        out: PathBuf,
        /// Objective per iteration as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Heat-method geodesic distances as CSV.
    Geodesic {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long, conflicts_with = "all", required_unless_present = "all")]
        source: Option<usize>,
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
        /// Diffusion time in units of the squared mean edge length.
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        t: f64,
        /// With --source, also write the mesh colored by distance.
        #[arg(long)]
        colored: Option<PathBuf>,
    },
    /// Interpolation and disentanglement errors of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference checks of the geodesic operator and the loss terms.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    if args.data == "synthetic" {
        gen_synthetic_family(2, 5, 12, args.data_seed)
    } else {
        load_dataset(&args.data)
    }
}

fn parse_numbers(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad number {v:?} in {what}"))))
        .collect()
}

fn read_code(arg: &str) -> Result<Vec<f64>> {
    if Path::new(arg).is_file() {
        let text = fs::read_to_string(arg)?;
        let first = text.lines().next().ok_or_else(|| Error::InvalidArgument(format!("{arg} is empty")))?;
        parse_numbers(first, arg)
    } else {
        parse_numbers(arg, "code")
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

fn read_points(path: &Path) -> Result<Vec<Vec3>> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
        return Ok(load_off(path)?.vertices().to_vec());
    }
    let text = fs::read_to_string(path)?;
    let mut pts = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse { path: path.to_path_buf(), line: k + 1, msg: format!("bad point {line:?}") })?;
        let [x, y, z] = vals[..] else {
            return Err(Error::Parse { path: path.to_path_buf(), line: k + 1, msg: "expected `x y z`".into() });
        };
        pts.push([x, y, z]);
    }
    Ok(pts)
}

fn matrix_csv(d: &DistanceMatrix) -> String {
    let v = d.values();
    (0..v.rows()).map(|r| join(v.row(r)) + "\n").collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { out, subjects, poses, resolution, seed } => {
            let d = gen_synthetic_family(subjects, poses, resolution, seed)?;
            save_dataset(&d, &out)?;
            println!("wrote {} shapes ({} vertices) to {}", d.len(), d.n_vertices(), out.display());
        }
        Command::Train { config, data, out, seed } => {
            let mut cfg = match config {
                Some(p) => TrainConfig::load(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let d = load_data(&data)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("config.cfg"), cfg.to_text())?;
            let res = train(&d, &cfg, Some(&out))?;
            let last = res.trace.last().expect("total_iters > 0");
            println!("trained {} iterations; final total loss {:e}; checkpoint {}", last.iteration, last.loss.total, out.join("model.ckpt").display());
        }
        Command::Encode { ckpt, mesh, out } => {
            let m = load_checkpoint(ckpt)?;
            let (mu, lv) = m.encode(load_off(mesh)?.vertices())?;
            let text = format!("{}\n{}\n", join(&mu), join(&lv));
            match out {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Decode { ckpt, code, out } => {
            let m = load_checkpoint(ckpt)?;
            save_off(&m.decode(&read_code(&code)?)?, out, None)?;
        }
        Command::Interpolate { ckpt, a, b, steps, out_dir } => {
            let m = load_checkpoint(ckpt)?;
            let (ma, mb) = (load_off(a)?, load_off(b)?);
            let meshes = latent_interpolate(&m, ma.vertices(), mb.vertices(), steps)?;
            let geo = GeodesicConfig::default();
            let da = heat_distance_all(&meshes[0], &geo)?;
            let db = heat_distance_all(&meshes[steps - 1], &geo)?;
            let diam = ma.diameter().max(mb.diameter());
            fs::create_dir_all(&out_dir)?;
            for (k, mesh) in meshes.iter().enumerate() {
                let alpha = k as f64 / (steps - 1) as f64;
                let target = limp::geodesics::interp_metric(&da, &db, alpha)?;
                let colors = vertex_distortion(&heat_distance_all(mesh, &geo)?, &target, diam)?;
                save_off(mesh, out_dir.join(format!("interp_{k:02}.off")), Some(&colors))?;
            }
            println!("wrote {steps} meshes to {}", out_dir.display());
        }
        Command::Swap { ckpt, style, pose, out } => {
            let m = load_checkpoint(ckpt)?;
            save_off(&latent_swap(&m, load_off(style)?.vertices(), load_off(pose)?.vertices())?, out, None)?;
        }
        Command::Analogy { ckpt, a, b, c, out } => {
            let m = load_checkpoint(ckpt)?;
            let z = |p: PathBuf| -> Result<Vec<f64>> { m.encode_mean(load_off(p)?.vertices()) };
            save_off(&latent_analogy(&m, &z(a)?, &z(b)?, &z(c)?)?, out, None)?;
        }
        Command::Complete { ckpt, partial, data, iters, restarts, seed, out } => {
            let m = load_checkpoint(ckpt)?;
            let pts = read_points(&partial)?;
            let d = load_data(&data)?;
            let codes: Vec<Vec<f64>> = d.records().iter().map(|r| m.encode_mean(r.mesh.vertices())).collect::<Result<_>>()?;
            let cfg = CompletionConfig { iters, restarts, ..CompletionConfig::default() };
            let c = complete_partial(&m, &pts, &codes, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
            save_off(&c.mesh, out, None)?;
            println!("objective {:e}", c.objective);
        }
        Command::FitMetric { init, target, iters, lr, out, history } => {
            let geo = GeodesicConfig::default();
            let init = load_off(init)?;
            let target: TriMesh = load_off(target)?;
            let d = heat_distance_all(&target, &geo)?;
            let fit = fit_to_metric(&init, &d, iters, lr, &geo)?;
            save_off(&fit.mesh, out, None)?;
            if let Some(h) = history {
                let text: String = fit.history.iter().enumerate().map(|(k, v)| format!("{k},{v:e}\n")).collect();
                fs::write(h, format!("iteration,objective\n{text}"))?;
            }
            println!("objective {:e} -> {:e}", fit.initial_objective, fit.objective);
        }
        Command::Geodesic { mesh, source, all, out, t, colored } => {
            let mesh = load_off(mesh)?;
            let geo = GeodesicConfig { t, ..GeodesicConfig::default() };
            geo.validate()?;
            if all {
                fs::write(out, matrix_csv(&heat_distance_all(&mesh, &geo)?))?;
            } else {
                let s = source.expect("clap requires --source without --all");
                let d = heat_distance_single(&mesh, s, &geo)?;
                let text: String = d.iter().enumerate().map(|(k, v)| format!("{k},{v:e}\n")).collect();
                fs::write(out, format!("vertex,distance\n{text}"))?;
                if let Some(p) = colored {
                    save_off(&mesh, p, Some(&d))?;
                }
            }
        }
        Command::Eval { ckpt, data, out } => {
            let m = load_checkpoint(ckpt)?;
            let d = load_data(&data)?;
            let r = evaluate(&m, &d, d.geodesic_config())?;
            println!("interpolation_error {:e}", r.interpolation_error);
            println!("interpolation_error_decoded {:e}", r.interpolation_error_decoded);
            println!("disentanglement_error {:e}", r.disentanglement_error);
            if let Some(p) = out {
                fs::write(p, r.to_csv())?;
            }
        }
        Command::CheckGrad { seed } => {
            let mut failed = Vec::new();
            for (name, r) in gradient_checks(seed)? {
                let verdict = if r.passed() { "pass" } else { "FAIL" };
                println!("{name:<14} max relative deviation {:.3e} (tol {:.0e}) {verdict}", r.max_deviation, r.tolerance);
                if !r.passed() {
                    failed.push(name);
                }
            }
            if !failed.is_empty() {
                eprintln!("gradient check failed for {}", failed.join(", "));
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
