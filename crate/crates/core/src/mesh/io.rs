use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

/// Per-vertex scalar to RGB mapping used for COFF export.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ColorMap {
    /// `s = 0` is white, `s = 1` is pure red; values are normalized by their
    /// maximum (negative values clamp to 0).
    #[default]
    WhiteRed,
}

impl ColorMap {
    pub fn rgb(self, s: f64) -> [u8; 3] {
        match self {
            ColorMap::WhiteRed => {
                let s = s.clamp(0.0, 1.0);
                let gb = (255.0 * (1.0 - s)).round() as u8;
                [255, gb, gb]
            }
        }
    }
}

/// Reads an ASCII OFF (or COFF, colors ignored) file and validates the mesh.
pub fn load_off(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_off(&text, path)
}

/// Parses OFF text; `origin` only labels error messages.
pub fn parse_off(text: &str, origin: &Path) -> Result<TriMesh> {
    let err = |line: usize, msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };

    // (line number, tokens) with comments and blank lines dropped
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
    });

    let (hline, mut header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let magic = header.remove(0);
    if !matches!(magic, "OFF" | "COFF") {
        return Err(err(hline, format!("expected OFF header, found {magic:?}")));
    }
    let (cline, counts) = if header.is_empty() {
        lines.next().ok_or_else(|| err(hline, "missing counts line".into()))?
    } else {
        (hline, header)
    };
    let parse_usize = |tok: &str, line: usize| tok.parse::<usize>().map_err(|_| err(line, format!("bad count {tok:?}")));
    if counts.len() < 2 {
        return Err(err(cline, "counts line needs vertex and face counts".into()));
    }
    let nv = parse_usize(counts[0], cline)?;
    let nf = parse_usize(counts[1], cline)?;

    let mut vertices: Vec<Vec3> = Vec::with_capacity(nv);
    for k in 0..nv {
        let (line, toks) = lines.next().ok_or_else(|| err(cline, format!("file ends at vertex {k} of {nv}")))?;
        if toks.len() < 3 {
            return Err(err(line, format!("vertex line has {} values", toks.len())));
        }
        let mut p = [0.0; 3];
        for (c, tok) in toks[..3].iter().enumerate() {
            p[c] = tok.parse().map_err(|_| err(line, format!("bad coordinate {tok:?}")))?;
        }
        vertices.push(p);
    }

    let mut faces = Vec::with_capacity(nf);
    for k in 0..nf {
        let (line, toks) = lines.next().ok_or_else(|| err(cline, format!("file ends at face {k} of {nf}")))?;
        let arity = parse_usize(toks[0], line)?;
        if arity != 3 {
            return Err(err(line, format!("only triangles are supported, face has {arity} vertices")));
        }
        if toks.len() < 4 {
            return Err(err(line, "face line has fewer than 3 indices".into()));
        }
        let mut f = [0usize; 3];
        for (c, tok) in toks[1..4].iter().enumerate() {
            f[c] = parse_usize(tok, line)?;
            if f[c] >= nv {
                return Err(err(line, format!("face {k}: index {} out of range (n = {nv})", f[c])));
            }
        }
        faces.push(f);
    }
    TriMesh::new(vertices, faces)
}

/// Writes an OFF file, or a COFF file colored by `vertex_scalar`.
pub fn save_off(mesh: &TriMesh, path: impl AsRef<Path>, vertex_scalar: Option<&[f64]>) -> Result<()> {
    let text = write_off(mesh, vertex_scalar, ColorMap::WhiteRed)?;
    fs::write(path, text)?;
    Ok(())
}

pub fn write_off(mesh: &TriMesh, vertex_scalar: Option<&[f64]>, cmap: ColorMap) -> Result<String> {
    let n = mesh.n_vertices();
    let colors = match vertex_scalar {
        Some(s) if s.len() != n => {
            return Err(Error::Shape(format!("{} scalars for {n} vertices", s.len())));
        }
        Some(s) => {
            let max = s.iter().copied().fold(0.0_f64, f64::max);
            let norm = if max > 0.0 { max } else { 1.0 };
            Some(s.iter().map(|&v| cmap.rgb(v / norm)).collect::<Vec<_>>())
        }
        None => None,
    };
    let mut out = String::with_capacity(n * 64);
    out.push_str(if colors.is_some() { "COFF\n" } else { "OFF\n" });
    let _ = writeln!(out, "{} {} 0", n, mesh.n_faces());
    for (i, p) in mesh.vertices().iter().enumerate() {
        let _ = write!(out, "{} {} {}", p[0], p[1], p[2]);
        if let Some(c) = &colors {
            let [r, g, b] = c[i];
            let _ = write!(out, " {r} {g} {b} 255");
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    Ok(out)
}
