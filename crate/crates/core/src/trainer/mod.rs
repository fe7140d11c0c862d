//! Datasets of corresponded shapes, pair sampling, Adam and the staged
//! training loop.

mod config;
mod dataset;
pub mod synthetic;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::losses::{loss_total, BatchCodes, LossBreakdown, LossConfig, PairKind, PairSample, ShapeTargets, Stage};
use crate::model::{init_params, reparameterize_var, save_checkpoint, ModelConfig, ModelParams};

pub use config::TrainConfig;
pub use dataset::{
    farthest_point_sampling, family_distortion, gen_synthetic_family, load_dataset, save_dataset, Dataset, FamilyDistortion,
    ShapeRecord, DEFAULT_MASK_RADIUS,
};

/// Uniform draw over ordered pairs `(i, j)`, `i != j`, of the requested kind,
/// with a fresh `alpha ~ U(0, 1)`.
pub fn sample_pair(dataset: &Dataset, rng: &mut impl Rng, kind: PairKind) -> Result<PairSample> {
    let recs = dataset.records();
    let eligible = |i: usize, j: usize| {
        i != j
            && match kind {
                PairKind::Any => true,
                PairKind::Isometric => recs[i].subject_id == recs[j].subject_id,
                PairKind::NonIsometric => recs[i].subject_id != recs[j].subject_id,
            }
    };
    let n = recs.len();
    let count = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| eligible(i, j)).count();
    if count == 0 {
        return Err(Error::InvalidArgument(format!("dataset has no {kind:?} pair")));
    }
    let pick = rng.random_range(0..count);
    let (i, j) = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| eligible(i, j))
        .nth(pick)
        .expect("pick < count");
    let alpha = loop {
        let a: f64 = rng.random();
        if a > 0.0 {
            break a;
        }
    };
    Ok(PairSample { i, j, alpha, kind })
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates; empty until the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<DenseMatrix>,
    v: Vec<DenseMatrix>,
    t: u64,
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut DenseMatrix>,
    grads: &[DenseMatrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let params: Vec<&mut DenseMatrix> = params.into_iter().collect();
    if params.len() != grads.len() {
        return Err(Error::Shape(format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!("parameter {k}: {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    if state.t == 0 {
        state.m = grads.iter().map(|g| DenseMatrix::zeros(g.rows(), g.cols())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != grads.len() || state.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
        return Err(Error::Shape("gradients do not match the optimizer state".into()));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (k, p) in params.into_iter().enumerate() {
        let g = grads[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        for (idx, x) in p.as_mut_slice().iter_mut().enumerate() {
            m[idx] = ADAM_BETA1 * m[idx] + (1.0 - ADAM_BETA1) * g[idx];
            v[idx] = ADAM_BETA2 * v[idx] + (1.0 - ADAM_BETA2) * g[idx] * g[idx];
            *x -= lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// One row of the loss trace; `iteration` counts from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub stage: Stage,
    pub loss: LossBreakdown,
}

pub const TRACE_HEADER: &str = "iteration,stage,recon,interp_geo,interp_local,disent_int,disent_ext,kl,total";

impl TraceRow {
    pub fn csv(&self) -> String {
        let l = &self.loss;
        let stage = match self.stage {
            Stage::Warmup => "warmup",
            Stage::Full => "full",
        };
        format!(
            "{},{stage},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.iteration, l.recon, l.interp_geo, l.interp_local, l.disent_int, l.disent_ext, l.kl, l.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
}

/// Where `train` writes its files.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    pub fn step_checkpoint(&self, iteration: usize) -> PathBuf {
        self.dir.join(format!("step_{iteration:07}.ckpt"))
    }

    pub fn trace(&self) -> PathBuf {
        self.dir.join("trace.csv")
    }
}

/// Warmup (recon + kl) for `warmup_iters` steps, then the full objective.
/// Every step encodes all dataset shapes. With `out`, the trace, periodic
/// checkpoints and the final checkpoint are written there; a non-finite
/// loss or gradient aborts after saving the last good parameters.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let n = dataset.n_vertices();
    let faces = dataset.faces().to_vec();
    let model_cfg = ModelConfig {
        conv: cfg.conv.clone(),
        head: cfg.head.clone(),
        latent_dim: cfg.latent_dim,
        decoder: cfg.decoder.clone(),
        n_vertices: n,
    };
    let mut params = init_params(&model_cfg, &faces, cfg.seed)?;
    let landmarks = match cfg.landmarks {
        0 => None,
        k => Some(farthest_point_sampling(dataset.records()[0].mesh.vertices(), k.min(n))),
    };
    let loss_cfg = LossConfig { weights: cfg.weights, geodesic: dataset.geodesic_config().clone(), landmarks };
    let targets: Vec<ShapeTargets> = dataset.records().iter().map(|r| r.targets(&loss_cfg)).collect();
    let mut points = DenseMatrix::zeros(dataset.len() * n, 3);
    for (k, r) in dataset.records().iter().enumerate() {
        for (i, v) in r.mesh.vertices().iter().enumerate() {
            points.row_mut(k * n + i).copy_from_slice(v);
        }
    }
    let batch_plan = [(PairKind::Any, cfg.batch_any), (PairKind::Isometric, cfg.batch_iso), (PairKind::NonIsometric, cfg.batch_noniso)];
    for &(kind, count) in &batch_plan {
        if count > 0 && cfg.total_iters > cfg.warmup_iters {
            // fail before training if the dataset cannot supply this kind
            sample_pair(dataset, &mut ChaCha8Rng::seed_from_u64(0), kind)?;
        }
    }

    let output = out.map(|d| TrainOutput { dir: d.to_path_buf() });
    let mut trace_file = match &output {
        Some(o) => {
            fs::create_dir_all(&o.dir)?;
            let mut f = fs::File::create(o.trace())?;
            writeln!(f, "{TRACE_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = AdamState::default();
    let mut trace = Vec::with_capacity(cfg.total_iters);
    let all_shapes: Vec<usize> = (0..dataset.len()).collect();
    for iteration in 1..=cfg.total_iters {
        let stage = if iteration <= cfg.warmup_iters { Stage::Warmup } else { Stage::Full };
        let mut batch = Vec::new();
        if stage == Stage::Full {
            for &(kind, count) in &batch_plan {
                for _ in 0..count {
                    batch.push(sample_pair(dataset, &mut rng, kind)?);
                }
            }
        }
        let eta = DenseMatrix::from_fn(dataset.len(), cfg.latent_dim, |_, _| rng.sample(StandardNormal));

        let step = (|| -> Result<(LossBreakdown, Vec<DenseMatrix>)> {
            let tape = Tape::new();
            let model = params.bind(&tape, true);
            let (mu, logvar) = model.encode(tape.constant(points.clone()), dataset.len())?;
            let z = reparameterize_var(mu, logvar, eta)?;
            let codes = BatchCodes { shapes: all_shapes.clone(), z, mu, logvar };
            let (loss, breakdown) = loss_total(&model, &codes, &targets, &faces, &batch, &loss_cfg, stage)?;
            let grads = tape.backward(loss)?;
            Ok((breakdown, model.vars().iter().map(|v| grads.wrt(*v)).collect()))
        })();
        let failure = match &step {
            Ok((b, g)) if b.is_finite() && g.iter().all(|g| g.is_finite()) => None,
            Ok(_) => Some(Error::NonFinite(format!("loss or gradient at iteration {iteration}"))),
            Err(e) if e.is_numerical() => Some(Error::NonFinite(format!("iteration {iteration}: {e}"))),
            Err(_) => None,
        };
        if let Some(err) = failure {
            if let Some(o) = &output {
                save_checkpoint(&params, o.final_checkpoint())?;
            }
            return Err(err);
        }
        let (breakdown, grads) = step?;
        adam_step(params.tensors_mut(), &grads, &mut adam, cfg.learning_rate)?;
        let row = TraceRow { iteration, stage, loss: breakdown };
        if let Some(f) = trace_file.as_mut() {
            writeln!(f, "{}", row.csv())?;
        }
        trace.push(row);
        if let Some(o) = &output {
            if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 && iteration < cfg.total_iters {
                save_checkpoint(&params, o.step_checkpoint(iteration))?;
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after training".into()));
    }
    if let Some(o) = &output {
        save_checkpoint(&params, o.final_checkpoint())?;
    }
    Ok(TrainOutcome { params, trace })
}

#[cfg(test)]
mod tests;
