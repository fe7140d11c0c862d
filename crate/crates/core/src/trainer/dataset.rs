use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::synthetic::{hinged_tube, pose_angles, subject_styles, TubeParams};
use crate::error::{Error, Result};
use crate::geodesics::{bounded_distortion, heat_distance_all, DistanceMatrix, GeodesicConfig};
use crate::losses::{LossConfig, ShapeTargets};
use crate::mesh::{dist2, load_off, neighborhood_mask, save_off, NeighborhoodMask, TriMesh, Vec3};

/// Neighborhood radius of the local interpolation term, as a fraction of the
/// shape diameter.
pub const DEFAULT_MASK_RADIUS: f64 = 0.1;

/// A training shape with its precomputed ground truth.
#[derive(Clone, Debug)]
pub struct ShapeRecord {
    pub mesh: TriMesh,
    /// Isometry class ("style").
    pub subject_id: usize,
    pub pose_id: usize,
    pub d_euclid: DistanceMatrix,
    pub d_geo: DistanceMatrix,
    pub mask: NeighborhoodMask,
}

impl ShapeRecord {
    pub fn new(mesh: TriMesh, subject_id: usize, pose_id: usize, geodesic: &GeodesicConfig) -> Result<Self> {
        let d_euclid = DistanceMatrix::euclidean(mesh.vertices());
        let d_geo = heat_distance_all(&mesh, geodesic)?;
        let mask = neighborhood_mask(&mesh, DEFAULT_MASK_RADIUS)?;
        Ok(Self { mesh, subject_id, pose_id, d_euclid, d_geo, mask })
    }

    /// Loss-side view; geodesic rows follow `cfg.landmarks`.
    pub fn targets(&self, cfg: &LossConfig) -> ShapeTargets {
        let d_geo = match &cfg.landmarks {
            None => self.d_geo.values().clone(),
            Some(l) => self.d_geo.select_rows(l),
        };
        ShapeTargets { subject: self.subject_id, d_euclid: self.d_euclid.values().clone(), d_geo, mask: self.mask.clone() }
    }
}

/// Shapes sharing one vertex count and face list, corresponded by index.
#[derive(Clone, Debug)]
pub struct Dataset {
    records: Vec<ShapeRecord>,
    geodesic: GeodesicConfig,
}

impl Dataset {
    pub fn new(records: Vec<ShapeRecord>, geodesic: GeodesicConfig) -> Result<Self> {
        if let Some(first) = records.first() {
            for (k, r) in records.iter().enumerate() {
                if r.mesh.n_vertices() != first.mesh.n_vertices() || r.mesh.faces() != first.mesh.faces() {
                    return Err(Error::InvalidArgument(format!("shape {k} does not share the topology of shape 0")));
                }
            }
        }
        Ok(Self { records, geodesic })
    }

    pub fn records(&self) -> &[ShapeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.records.first().map_or(0, |r| r.mesh.n_vertices())
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        self.records.first().map_or(&[], |r| r.mesh.faces())
    }

    pub fn geodesic_config(&self) -> &GeodesicConfig {
        &self.geodesic
    }

    /// Index of the record with this subject and pose.
    pub fn find(&self, subject_id: usize, pose_id: usize) -> Option<usize> {
        self.records.iter().position(|r| r.subject_id == subject_id && r.pose_id == pose_id)
    }
}

/// Distortion summary of a dataset's ground-truth geodesics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FamilyDistortion {
    /// Largest K between two poses of one subject.
    pub intra_k: f64,
    /// Smallest K between shapes of different subjects; infinite with one subject.
    pub inter_k: f64,
    /// Largest mean relative deviation between two poses of one subject.
    pub intra_mean_relative: f64,
}

pub fn family_distortion(dataset: &Dataset) -> Result<FamilyDistortion> {
    let recs = dataset.records();
    let mut out = FamilyDistortion { intra_k: 0.0, inter_k: f64::INFINITY, intra_mean_relative: 0.0 };
    for (i, a) in recs.iter().enumerate() {
        for b in &recs[i + 1..] {
            let k = bounded_distortion(&a.d_geo, &b.d_geo)?.k;
            if a.subject_id == b.subject_id {
                out.intra_k = out.intra_k.max(k);
                out.intra_mean_relative = out.intra_mean_relative.max(mean_relative_deviation(&a.d_geo, &b.d_geo));
            } else {
                out.inter_k = out.inter_k.min(k);
            }
        }
    }
    Ok(out)
}

fn mean_relative_deviation(a: &DistanceMatrix, b: &DistanceMatrix) -> f64 {
    let (a, b) = (a.values().as_slice(), b.values().as_slice());
    let (mut sum, mut count) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        if *x > 0.0 {
            sum += (x - y).abs() / x;
            count += 1;
        }
    }
    if count == 0 { 0.0 } else { sum / count as f64 }
}

/// Ratio bound between intra- and inter-subject distortion enforced at generation.
pub const FAMILY_DISTORTION_RATIO: f64 = 0.2;
/// Bound on the mean relative geodesic deviation between poses of one subject.
pub const FAMILY_POSE_DEVIATION: f64 = 0.05;

/// Hinged-tube family: `n_subjects` styles times `n_poses` bend angles, ring
/// size `resolution` (`resolution * (2 * resolution + 1)` vertices). Records
/// are ordered subject-major. Fails when the generated poses are not
/// near-isometric relative to the style differences.
pub fn gen_synthetic_family(n_subjects: usize, n_poses: usize, resolution: usize, seed: u64) -> Result<Dataset> {
    if n_subjects == 0 || n_poses < 2 {
        return Err(Error::InvalidArgument(format!("need >= 1 subject and >= 2 poses, got {n_subjects} x {n_poses}")));
    }
    let params = TubeParams { resolution, ..TubeParams::default() };
    let geodesic = GeodesicConfig::default();
    let styles = subject_styles(n_subjects, &mut ChaCha8Rng::seed_from_u64(seed));
    let angles = pose_angles(n_poses, params.bend_range);
    let mut records = Vec::with_capacity(n_subjects * n_poses);
    for (s, style) in styles.iter().enumerate() {
        for (p, &angle) in angles.iter().enumerate() {
            records.push(ShapeRecord::new(hinged_tube(style, angle, &params)?, s, p, &geodesic)?);
        }
    }
    let data = Dataset::new(records, geodesic)?;
    let d = family_distortion(&data)?;
    if d.intra_mean_relative > FAMILY_POSE_DEVIATION || d.intra_k > FAMILY_DISTORTION_RATIO * d.inter_k {
        return Err(Error::InvalidArgument(format!(
            "degenerate family: intra-subject K {:.4}, inter-subject K {:.4}, pose deviation {:.4}",
            d.intra_k, d.inter_k, d.intra_mean_relative
        )));
    }
    Ok(data)
}

/// Greedy farthest-point sampling from vertex 0 (Euclidean).
pub fn farthest_point_sampling(points: &[Vec3], k: usize) -> Vec<usize> {
    let k = k.min(points.len());
    if k == 0 {
        return Vec::new();
    }
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = points.iter().map(|p| dist2(*p, points[0])).collect();
    while chosen.len() < k {
        let (next, _) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(*p, points[next]));
        }
    }
    chosen
}

const LABELS: &str = "labels.csv";

/// Writes `shape_XXXX.off` files and `labels.csv` (`file,subject,pose`).
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut labels = String::from("file,subject,pose\n");
    for (k, r) in dataset.records().iter().enumerate() {
        let name = format!("shape_{k:04}.off");
        save_off(&r.mesh, dir.join(&name), None)?;
        labels.push_str(&format!("{name},{},{}\n", r.subject_id, r.pose_id));
    }
    fs::write(dir.join(LABELS), labels)?;
    Ok(())
}

/// Reads a directory written by [`save_dataset`] (or laid out the same way)
/// and precomputes ground truth with the default geodesic settings.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(LABELS);
    let text = fs::read_to_string(&path)?;
    let geodesic = GeodesicConfig::default();
    let mut records = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.clone(), line: k + 1, msg };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [file, subject, pose] = fields[..] else {
            return Err(err(format!("expected `file,subject,pose`, got {line:?}")));
        };
        let subject = subject.parse().map_err(|_| err(format!("bad subject {subject:?}")))?;
        let pose = pose.parse().map_err(|_| err(format!("bad pose {pose:?}")))?;
        records.push(ShapeRecord::new(load_off(dir.join(file))?, subject, pose, &geodesic)?);
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!("{} lists no shapes", path.display())));
    }
    Dataset::new(records, geodesic)
}
