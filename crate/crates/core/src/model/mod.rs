//! Variational autoencoder over corresponded meshes.
//!
//! Encoder: a shared per-point MLP (`3 -> conv...`), max-pooled over points,
//! followed by a head MLP producing `2d` values split into mean and log-variance.
//! Decoder: an MLP from the `d`-dimensional code to `3n` coordinates. Hidden
//! layers use elu; output layers are linear.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::mesh::{TriMesh, Vec3};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Widths of the shared per-point layers.
    pub conv: Vec<usize>,
    /// Hidden widths of the post-pool head; its output has `2 * latent_dim` units.
    pub head: Vec<usize>,
    pub latent_dim: usize,
    /// Hidden widths of the decoder; its output has `3 * n_vertices` units.
    pub decoder: Vec<usize>,
    pub n_vertices: usize,
}

impl ModelConfig {
    /// Small-mesh layer sizes: conv 64, 64, 128; head 64, 64; latent 32;
    /// decoder 64, 128.
    pub fn standard(n_vertices: usize) -> Self {
        Self { conv: vec![64, 64, 128], head: vec![64, 64], latent_dim: 32, decoder: vec![64, 128], n_vertices }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self.conv.iter().chain(&self.head).chain(&self.decoder);
        if self.conv.is_empty() || widths.into_iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(format!("layer sizes must be positive with at least one conv layer: {self:?}")));
        }
        if self.latent_dim < 2 || self.n_vertices < 4 {
            return Err(Error::InvalidArgument(format!(
                "latent_dim must be >= 2 and n_vertices >= 4, got {} and {}",
                self.latent_dim, self.n_vertices
            )));
        }
        Ok(())
    }

    /// Start of the extrinsic block: `d - floor(d / 4)`.
    pub fn split_index(&self) -> usize {
        split_index(self.latent_dim)
    }

    fn layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut push = |prefix: &str, dims: &[usize]| {
            for (k, w) in dims.windows(2).enumerate() {
                out.push((format!("{prefix}{k}"), w[0], w[1]));
            }
        };
        let conv: Vec<usize> = std::iter::once(3).chain(self.conv.iter().copied()).collect();
        push("enc.conv", &conv);
        let head: Vec<usize> = std::iter::once(*self.conv.last().unwrap())
            .chain(self.head.iter().copied())
            .chain(std::iter::once(2 * self.latent_dim))
            .collect();
        push("enc.head", &head);
        let dec: Vec<usize> = std::iter::once(self.latent_dim)
            .chain(self.decoder.iter().copied())
            .chain(std::iter::once(3 * self.n_vertices))
            .collect();
        push("dec.fc", &dec);
        out
    }
}

pub fn split_index(latent_dim: usize) -> usize {
    latent_dim - latent_dim / 4
}

/// Model weights plus the shared mesh topology of the data they were trained on.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    /// `(name, value)` in layer order, weight before bias.
    tensors: Vec<(String, DenseMatrix)>,
    faces: Vec<[usize; 3]>,
}

/// Uniform in `+-sqrt(3 / fan_in)` (unit output variance for unit inputs),
/// zero biases.
pub fn init_params(config: &ModelConfig, faces: &[[usize; 3]], seed: u64) -> Result<ModelParams> {
    config.validate()?;
    if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= config.n_vertices)) {
        return Err(Error::InvalidArgument(format!("face {f:?} out of range for {} vertices", config.n_vertices)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, fan_in, fan_out) in config.layers() {
        let limit = (3.0 / fan_in as f64).sqrt();
        let w = DenseMatrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit));
        tensors.push((format!("{name}.w"), w));
        tensors.push((format!("{name}.b"), DenseMatrix::zeros(1, fan_out)));
    }
    Ok(ModelParams { config: config.clone(), tensors, faces: faces.to_vec() })
}

impl ModelParams {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn tensors(&self) -> &[(String, DenseMatrix)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut DenseMatrix> {
        self.tensors.iter_mut().map(|(_, t)| t)
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.is_finite())
    }

    /// Puts every tensor on the tape, as leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(_, t)| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        BoundModel { config: self.config.clone(), vars }
    }

    /// Mean and log-variance of one shape.
    pub fn encode(&self, points: &[Vec3]) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        let x = tape.constant(points_matrix(points));
        let (mu, lv) = m.encode(x, 1)?;
        Ok((mu.value().as_slice().to_vec(), lv.value().as_slice().to_vec()))
    }

    pub fn decode_points(&self, z: &[f64]) -> Result<Vec<Vec3>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Shape(format!("code has {} entries, model expects {}", z.len(), self.config.latent_dim)));
        }
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        let out = m.decode(tape.constant(DenseMatrix::row_vector(z)))?;
        Ok(matrix_points(&out.value()))
    }

    /// Decoded mesh with the model's topology; the result is not validated.
    pub fn decode(&self, z: &[f64]) -> Result<TriMesh> {
        TriMesh::from_parts(self.decode_points(z)?, self.faces.clone())
    }

    /// Decoding of the mean code.
    pub fn reconstruct(&self, points: &[Vec3]) -> Result<Vec<Vec3>> {
        let (mu, _) = self.encode(points)?;
        self.decode_points(&mu)
    }
}

/// Model tensors placed on a tape.
pub struct BoundModel<'t> {
    config: ModelConfig,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundModel<'t> {
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn layer(&self, k: usize, x: Var<'t>, activate: bool) -> Result<Var<'t>> {
        let y = x.matmul(&self.vars[2 * k])?.add_row(&self.vars[2 * k + 1])?;
        Ok(if activate { y.elu() } else { y })
    }

    /// Encodes `batch` shapes stacked as `(batch * n) x 3` rows; returns
    /// `batch x d` means and log-variances.
    pub fn encode(&self, points: Var<'t>, batch: usize) -> Result<(Var<'t>, Var<'t>)> {
        let (rows, cols) = points.shape();
        if cols != 3 || batch == 0 || rows % batch != 0 {
            return Err(Error::Shape(format!("encoder input {rows}x{cols} for {batch} shapes")));
        }
        if !points.value().is_finite() {
            return Err(Error::NonFinite("encoder input".into()));
        }
        let nc = self.config.conv.len();
        let nh = self.config.head.len() + 1;
        let mut h = points;
        for k in 0..nc {
            h = self.layer(k, h, true)?;
        }
        h = h.group_max(rows / batch)?;
        for k in 0..nh {
            h = self.layer(nc + k, h, k + 1 < nh)?;
        }
        let d = self.config.latent_dim;
        Ok((h.slice_cols(0, d)?, h.slice_cols(d, d)?))
    }

    /// Decodes `batch x d` codes into `batch x 3n` coordinates.
    pub fn decode(&self, z: Var<'t>) -> Result<Var<'t>> {
        if z.shape().1 != self.config.latent_dim {
            return Err(Error::Shape(format!("decoder input {:?}, latent_dim {}", z.shape(), self.config.latent_dim)));
        }
        let first = self.config.conv.len() + self.config.head.len() + 1;
        let nd = self.config.decoder.len() + 1;
        let mut h = z;
        for k in 0..nd {
            h = self.layer(first + k, h, k + 1 < nd)?;
        }
        Ok(h)
    }
}

/// `z = mu + exp(logvar / 2) * eta` on the tape, with `eta` given.
pub fn reparameterize_var<'t>(mu: Var<'t>, logvar: Var<'t>, eta: DenseMatrix) -> Result<Var<'t>> {
    let noise = logvar.scale(0.5).exp().mul(&mu.tape().constant(eta))?;
    mu.add(&noise)
}

/// Latent code with its intrinsic/extrinsic split point.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub split: usize,
}

impl LatentCode {
    pub fn new(z: Vec<f64>) -> Self {
        let split = split_index(z.len());
        Self { z, split }
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }
}

/// Draws `z = mu + exp(logvar / 2) * eta` with standard normal `eta`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: &mut impl Rng) -> Result<LatentCode> {
    if mu.len() != logvar.len() {
        return Err(Error::Shape(format!("mu has {} entries, logvar {}", mu.len(), logvar.len())));
    }
    if !mu.iter().chain(logvar).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("reparameterize input".into()));
    }
    let z = mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| {
            let eta: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv).exp() * eta
        })
        .collect();
    Ok(LatentCode::new(z))
}

/// `(z_int, z_ext)`.
pub fn split_latent(code: &LatentCode) -> (Vec<f64>, Vec<f64>) {
    (code.z[..code.split].to_vec(), code.z[code.split..].to_vec())
}

pub fn merge_latent(z_int: &[f64], z_ext: &[f64]) -> Result<LatentCode> {
    let d = z_int.len() + z_ext.len();
    if z_int.len() != split_index(d) {
        return Err(Error::Shape(format!(
            "intrinsic part has {} entries, a {d}-dimensional code splits at {}",
            z_int.len(),
            split_index(d)
        )));
    }
    Ok(LatentCode::new([z_int, z_ext].concat()))
}

pub fn points_matrix(points: &[Vec3]) -> DenseMatrix {
    DenseMatrix::from_fn(points.len(), 3, |r, c| points[r][c])
}

/// Rows of an `n x 3` matrix, or of a `1 x 3n` row.
pub fn matrix_points(m: &DenseMatrix) -> Vec<Vec3> {
    m.as_slice().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}
