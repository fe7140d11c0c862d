//! Hinged tubes: two straight segments joined by a narrow neck that carries
//! the bend. Style is the segment lengths and tube radius; pose is the bend
//! angle. Because the bend is confined to the neck, changing the pose moves
//! geodesic distances by roughly `neck_radius * angle_change`, while changing
//! the style changes lengths and circumferences outright.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mesh::{TriMesh, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct TubeStyle {
    pub lengths: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TubeParams {
    /// Vertices per ring; the tube has `2 * resolution + 1` rings.
    pub resolution: usize,
    pub neck_radius: f64,
    /// Arc length of the bent centerline section.
    pub bend_length: f64,
    /// Half-width of the radius taper around the hinge.
    pub taper: f64,
    /// Bend angles of the first and last pose, radians.
    pub bend_range: [f64; 2],
}

impl Default for TubeParams {
    fn default() -> Self {
        Self { resolution: 12, neck_radius: 0.02, bend_length: 0.3, taper: 0.35, bend_range: [PI / 9.0, 5.0 * PI / 9.0] }
    }
}

/// Style of subject `s` out of `n`: radius `0.1 + 0.1 s / (n - 1)`, segment
/// lengths uniform in `[0.9, 1.3]`.
pub fn subject_styles(n_subjects: usize, rng: &mut impl Rng) -> Vec<TubeStyle> {
    (0..n_subjects)
        .map(|s| {
            let radius = 0.1 + 0.1 * s as f64 / (n_subjects.max(2) - 1) as f64;
            let lengths = [rng.random_range(0.9..1.3), rng.random_range(0.9..1.3)];
            TubeStyle { lengths, radius }
        })
        .collect()
}

/// Bend angles of `n` poses, evenly spaced over `range`.
pub fn pose_angles(n_poses: usize, range: [f64; 2]) -> Vec<f64> {
    let [lo, hi] = range;
    (0..n_poses).map(|p| if n_poses == 1 { lo } else { lo + (hi - lo) * p as f64 / (n_poses - 1) as f64 }).collect()
}

/// Tube mesh bent by `angle` radians, centered at its vertex centroid.
pub fn hinged_tube(style: &TubeStyle, angle: f64, params: &TubeParams) -> Result<TriMesh> {
    let res = params.resolution;
    if res < 3 {
        return Err(Error::InvalidArgument(format!("tube resolution {res} < 3")));
    }
    let [l1, l2] = style.lengths;
    let r = style.radius;
    let (lb, w) = (params.bend_length, params.taper);
    if !(r > 0.0 && params.neck_radius > 0.0 && params.neck_radius <= r && lb > 0.0 && w >= lb / 2.0) {
        return Err(Error::InvalidArgument(format!("degenerate tube parameters: {style:?} {params:?}")));
    }
    if !(w < l1.min(l2)) || !(0.0..PI).contains(&angle) {
        return Err(Error::InvalidArgument(format!("bend {angle} or taper {w} incompatible with lengths {:?}", style.lengths)));
    }
    let total = l1 + lb + l2;
    let hinge = l1 + lb / 2.0;
    let radius_at = |s: f64| {
        let d = (s - hinge).abs();
        if d >= w {
            r
        } else {
            let t = (0.5 * PI * d / w).sin();
            params.neck_radius + (r - params.neck_radius) * t * t
        }
    };
    // largest radius on the bent section must stay inside the bend's curvature radius
    let curvature_radius = if angle > 0.0 { lb / angle } else { f64::INFINITY };
    if radius_at(l1) >= curvature_radius {
        return Err(Error::InvalidArgument(format!("bend {angle} too sharp for the neck taper")));
    }

    let rings = 2 * res + 1;
    let mut vertices: Vec<Vec3> = Vec::with_capacity(rings * res);
    for k in 0..rings {
        // the middle ring sits on the hinge so every style samples the neck alike
        let s = if k <= res { hinge * k as f64 / res as f64 } else { hinge + (total - hinge) * (k - res) as f64 / res as f64 };
        let (c, tangent) = centerline(s, l1, lb, angle);
        let normal = [-tangent[1], tangent[0], 0.0];
        let rad = radius_at(s);
        for j in 0..res {
            let phi = 2.0 * PI * j as f64 / res as f64;
            let (cp, sp) = (phi.cos(), phi.sin());
            vertices.push([c[0] + rad * cp * normal[0], c[1] + rad * cp * normal[1], rad * sp]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (rings - 1) * res);
    for k in 0..rings - 1 {
        for j in 0..res {
            let a = k * res + j;
            let b = k * res + (j + 1) % res;
            let (c, d) = (a + res, b + res);
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    let n = vertices.len() as f64;
    let mut centroid = [0.0; 3];
    for v in &vertices {
        for a in 0..3 {
            centroid[a] += v[a] / n;
        }
    }
    for v in &mut vertices {
        for a in 0..3 {
            v[a] -= centroid[a];
        }
    }
    TriMesh::new(vertices, faces)
}

/// Point and unit tangent of the centerline at arc length `s`: straight along
/// +x, a circular arc of length `lb` turning by `angle`, straight again.
fn centerline(s: f64, l1: f64, lb: f64, angle: f64) -> (Vec3, Vec3) {
    if s <= l1 || angle == 0.0 {
        return ([s, 0.0, 0.0], [1.0, 0.0, 0.0]);
    }
    let rc = lb / angle;
    let u = (s - l1).min(lb);
    let th = u / rc;
    let p = [l1 + rc * th.sin(), rc * (1.0 - th.cos()), 0.0];
    let t = [th.cos(), th.sin(), 0.0];
    if s <= l1 + lb {
        (p, t)
    } else {
        let e = s - l1 - lb;
        ([p[0] + e * t[0], p[1] + e * t[1], 0.0], t)
    }
}
