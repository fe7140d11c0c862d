use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Training hyperparameters. Text form: one `key = value` per line, `#`
/// starts a comment, list values are comma separated.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_iters: usize,
    pub total_iters: usize,
    pub batch_any: usize,
    pub batch_iso: usize,
    pub batch_noniso: usize,
    pub latent_dim: usize,
    pub conv: Vec<usize>,
    pub head: Vec<usize>,
    pub decoder: Vec<usize>,
    pub weights: LossWeights,
    pub seed: u64,
    /// Geodesic source vertices used by the losses; 0 means all vertices.
    pub landmarks: usize,
    /// Iterations between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            warmup_iters: 1000,
            total_iters: 6000,
            batch_any: 4,
            batch_iso: 2,
            batch_noniso: 2,
            latent_dim: 32,
            conv: vec![64, 64, 128],
            head: vec![64, 64],
            decoder: vec![64, 128],
            weights: LossWeights::default(),
            seed: 0,
            landmarks: 0,
            checkpoint_every: 1000,
        }
    }
}

const KEYS: &[&str] = &[
    "learning_rate",
    "warmup_iters",
    "total_iters",
    "batch_any",
    "batch_iso",
    "batch_noniso",
    "latent_dim",
    "conv_layers",
    "head_layers",
    "decoder_layers",
    "w_recon",
    "w_interp_geo",
    "w_interp_local",
    "w_disent_int",
    "w_disent_ext",
    "beta",
    "seed",
    "landmarks",
    "checkpoint_every",
];

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("line {line}: bad value {value:?} for {key}")))
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse_value(line, key, v.trim())).collect()
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Parses config text over the defaults. Unknown or repeated keys are
    /// errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected `key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {line}: unknown key {key:?}")));
            }
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            seen.push(key);
            let w = &mut cfg.weights;
            match key {
                "learning_rate" => cfg.learning_rate = parse_value(line, key, value)?,
                "warmup_iters" => cfg.warmup_iters = parse_value(line, key, value)?,
                "total_iters" => cfg.total_iters = parse_value(line, key, value)?,
                "batch_any" => cfg.batch_any = parse_value(line, key, value)?,
                "batch_iso" => cfg.batch_iso = parse_value(line, key, value)?,
                "batch_noniso" => cfg.batch_noniso = parse_value(line, key, value)?,
                "latent_dim" => cfg.latent_dim = parse_value(line, key, value)?,
                "conv_layers" => cfg.conv = parse_list(line, key, value)?,
                "head_layers" => cfg.head = parse_list(line, key, value)?,
                "decoder_layers" => cfg.decoder = parse_list(line, key, value)?,
                "w_recon" => w.recon = parse_value(line, key, value)?,
                "w_interp_geo" => w.interp_geo = parse_value(line, key, value)?,
                "w_interp_local" => w.interp_local = parse_value(line, key, value)?,
                "w_disent_int" => w.disent_int = parse_value(line, key, value)?,
                "w_disent_ext" => w.disent_ext = parse_value(line, key, value)?,
                "beta" => w.beta = parse_value(line, key, value)?,
                "seed" => cfg.seed = parse_value(line, key, value)?,
                "landmarks" => cfg.landmarks = parse_value(line, key, value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_value(line, key, value)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    /// Text that parses back to `self`.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        put("learning_rate", format!("{:e}", self.learning_rate));
        put("warmup_iters", self.warmup_iters.to_string());
        put("total_iters", self.total_iters.to_string());
        put("batch_any", self.batch_any.to_string());
        put("batch_iso", self.batch_iso.to_string());
        put("batch_noniso", self.batch_noniso.to_string());
        put("latent_dim", self.latent_dim.to_string());
        put("conv_layers", list(&self.conv));
        put("head_layers", list(&self.head));
        put("decoder_layers", list(&self.decoder));
        put("w_recon", format!("{:e}", w.recon));
        put("w_interp_geo", format!("{:e}", w.interp_geo));
        put("w_interp_local", format!("{:e}", w.interp_local));
        put("w_disent_int", format!("{:e}", w.disent_int));
        put("w_disent_ext", format!("{:e}", w.disent_ext));
        put("beta", format!("{:e}", w.beta));
        put("seed", self.seed.to_string());
        put("landmarks", self.landmarks.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.warmup_iters >= self.total_iters {
            return Err(Error::Config(format!(
                "warmup_iters ({}) must be below total_iters ({})",
                self.warmup_iters, self.total_iters
            )));
        }
        if self.latent_dim < 2 {
            return Err(Error::Config(format!("latent_dim must be >= 2, got {}", self.latent_dim)));
        }
        if self.conv.is_empty() || self.conv.iter().chain(&self.head).chain(&self.decoder).any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive with at least one conv layer".into()));
        }
        let w = &self.weights;
        for (name, v) in [
            ("w_recon", w.recon),
            ("w_interp_geo", w.interp_geo),
            ("w_interp_local", w.interp_local),
            ("w_disent_int", w.disent_int),
            ("w_disent_ext", w.disent_ext),
            ("beta", w.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}
