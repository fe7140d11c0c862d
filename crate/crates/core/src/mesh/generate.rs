use std::collections::HashMap;

use crate::mesh::{norm, scale, TriMesh, Vec3};

/// Unit-radius icosphere. `subdivisions = 3` gives 642 vertices and 1280 faces.
pub fn icosphere(subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .into_iter()
    .map(|v| scale(v, 1.0 / norm(v)))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let p = [
                    0.5 * (vertices[a][0] + vertices[b][0]),
                    0.5 * (vertices[a][1] + vertices[b][1]),
                    0.5 * (vertices[a][2] + vertices[b][2]),
                ];
                vertices.push(scale(p, 1.0 / norm(p)));
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    TriMesh::new(vertices, faces).expect("icosphere is valid")
}

/// Flat `nx` x `ny` vertex grid spanning `[0, size]^2` in the xy-plane.
/// Vertex `(i, j)` has index `j * nx + i`.
pub fn flat_grid(nx: usize, ny: usize, size: f64) -> TriMesh {
    assert!(nx >= 2 && ny >= 2, "grid needs at least 2x2 vertices");
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push([size * i as f64 / (nx - 1) as f64, size * j as f64 / (ny - 1) as f64, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v = j * nx + i;
            faces.push([v, v + 1, v + nx + 1]);
            faces.push([v, v + nx + 1, v + nx]);
        }
    }
    TriMesh::new(vertices, faces).expect("grid is valid")
}
