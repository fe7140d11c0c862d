//! Binary checkpoint format. All integers are u64 little-endian:
//!
//! ```text
//! "LIMPCKPT1" count { name_len name rank dims[rank] f64_le[prod(dims)] }*count
//! ```
//!
//! The mesh topology travels as the tensor `topology.faces` (`m x 3`, indices
//! stored as f64). Layer sizes are recovered from the tensor shapes.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"LIMPCKPT1";
const FACES: &str = "topology.faces";

pub fn write_checkpoint(params: &ModelParams) -> Vec<u8> {
    let faces = DenseMatrix::from_fn(params.faces.len(), 3, |r, c| params.faces[r][c] as f64);
    let mut out = Vec::with_capacity(16 + 8 * params.n_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put(&mut out, params.tensors.len() as u64 + 1);
    for (name, t) in params.tensors.iter().map(|(n, t)| (n.as_str(), t)).chain([(FACES, &faces)]) {
        put(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        put(&mut out, 2);
        put(&mut out, t.rows() as u64);
        put(&mut out, t.cols() as u64);
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("implausible {what} {v}")))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("unknown magic, not a checkpoint file".into()));
    }
    let mut r = Reader { bytes, pos: CHECKPOINT_MAGIC.len() };
    let count = r.usize("tensor count")?;
    let mut tensors = Vec::with_capacity(count);
    let mut faces = None;
    for _ in 0..count {
        let len = r.usize("name length")?;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.usize("rank")?;
        let dims = (0..rank).map(|_| r.usize("dimension")).collect::<Result<Vec<_>>>()?;
        let (rows, cols) = match dims[..] {
            [a] => (1, a),
            [a, b] => (a, b),
            _ => return Err(Error::Checkpoint(format!("{name}: unsupported rank {rank}"))),
        };
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = DenseMatrix::from_vec(rows, cols, data)?;
        if name == FACES {
            faces = Some(t);
        } else {
            tensors.push((name, t));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let faces = faces.ok_or_else(|| Error::Checkpoint(format!("missing {FACES}")))?;
    if faces.cols() != 3 {
        return Err(Error::Checkpoint(format!("{FACES} must have 3 columns")));
    }
    let faces: Vec<[usize; 3]> = (0..faces.rows()).map(|i| [0, 1, 2].map(|c| faces[(i, c)] as usize)).collect();
    let config = infer_config(&tensors)?;
    let expected = super::init_params(&config, &faces, 0)?;
    for ((en, et), (n, t)) in expected.tensors.iter().zip(&tensors) {
        if en != n || et.shape() != t.shape() {
            return Err(Error::Checkpoint(format!("unexpected tensor {n} {:?}, wanted {en} {:?}", t.shape(), et.shape())));
        }
    }
    Ok(ModelParams { config, tensors, faces })
}

fn infer_config(tensors: &[(String, DenseMatrix)]) -> Result<ModelConfig> {
    let outs = |prefix: &str| -> Vec<usize> {
        (0..)
            .map_while(|k| tensors.iter().find(|(n, _)| *n == format!("{prefix}{k}.w")).map(|(_, t)| t.cols()))
            .collect()
    };
    let conv = outs("enc.conv");
    let mut head = outs("enc.head");
    let mut decoder = outs("dec.fc");
    let expected = 2 * (conv.len() + head.len() + decoder.len());
    if conv.is_empty() || head.is_empty() || decoder.is_empty() || expected != tensors.len() {
        return Err(Error::Checkpoint("tensor names do not describe an encoder/decoder".into()));
    }
    let two_d = head.pop().expect("nonempty");
    let three_n = decoder.pop().expect("nonempty");
    if two_d % 2 != 0 || three_n % 3 != 0 {
        return Err(Error::Checkpoint(format!("bad output widths {two_d} / {three_n}")));
    }
    let config = ModelConfig { conv, head, latent_dim: two_d / 2, decoder, n_vertices: three_n / 3 };
    config.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(config)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(&fs::read(path)?)
}
