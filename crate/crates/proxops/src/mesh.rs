//! Watertight triangle meshes with the per-face and per-edge geometry the
//! polyhedral gravity field and the raycaster need.

use std::io::BufRead;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("OBJ parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mesh is not closed: {0}")]
    OpenMesh(String),
    #[error("mesh is inverted or degenerate: signed volume {0} m^3 is not positive")]
    InvertedMesh(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Geometry attached to one undirected mesh edge.
#[derive(Debug, Clone)]
pub struct EdgeGeom {
    /// Endpoint vertex indices.
    pub a: usize,
    pub b: usize,
    /// Werner-Scheeres edge dyad `n_A m_A^T + n_B m_B^T`.
    pub dyad: Matrix3<f64>,
    pub length: f64,
}

/// A closed, consistently wound triangle mesh, immutable after load.
///
/// All geometry used by gravity evaluation (face normals, face dyads, edge
/// dyads) is precomputed here so queries are read-only and thread-safe.
#[derive(Debug, Clone)]
pub struct AsteroidMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    face_normals: Vec<Vector3<f64>>,
    face_dyads: Vec<Matrix3<f64>>,
    edges: Vec<EdgeGeom>,
    bounding_radius: f64,
    volume: f64,
    centroid: Vector3<f64>,
    surface_tol: f64,
}

/// Fractional surface tolerance: queries closer than this times the bounding
/// radius to any face are rejected as singular.
pub const SURFACE_TOL_FRACTION: f64 = 1e-6;

impl AsteroidMesh {
    /// Parse an ASCII OBJ stream (`v`/`f` records, 1-based indices, polygons
    /// fan-triangulated) and validate closedness, winding and volume.
    pub fn load_obj<R: BufRead>(reader: R) -> Result<Self, MeshError> {
        let mut vertices: Vec<Vector3<f64>> = Vec::new();
        let mut faces: Vec<[usize; 3]> = Vec::new();

        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line_num = lineno + 1;
            let mut tokens = line.split_whitespace();
            let Some(keyword) = tokens.next() else {
                continue;
            };
            match keyword {
                "v" => {
                    let mut coords = [0.0f64; 3];
                    for c in coords.iter_mut() {
                        let tok = tokens.next().ok_or_else(|| MeshError::Parse {
                            line: line_num,
                            msg: "vertex record needs 3 coordinates".into(),
                        })?;
                        *c = tok.parse().map_err(|_| MeshError::Parse {
                            line: line_num,
                            msg: format!("bad vertex coordinate {tok:?}"),
                        })?;
                    }
                    if coords.iter().any(|c| !c.is_finite()) {
                        return Err(MeshError::Parse {
                            line: line_num,
                            msg: "non-finite vertex coordinate".into(),
                        });
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                "f" => {
                    let mut idx = Vec::with_capacity(4);
                    for tok in tokens {
                        // "f v", "f v/vt", "f v/vt/vn", "f v//vn" all start
                        // with the vertex index.
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| MeshError::Parse {
                            line: line_num,
                            msg: format!("bad face index {tok:?}"),
                        })?;
                        if i < 1 || i as usize > vertices.len() {
                            return Err(MeshError::Parse {
                                line: line_num,
                                msg: format!("face index {i} out of range (1-based)"),
                            });
                        }
                        idx.push(i as usize - 1);
                    }
                    if idx.len() < 3 {
                        return Err(MeshError::Parse {
                            line: line_num,
                            msg: "face record needs at least 3 indices".into(),
                        });
                    }
                    for k in 1..idx.len() - 1 {
                        faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                // comments and unsupported records (vn, vt, o, g, s, ...)
                _ => {}
            }
        }

        Self::from_parts(vertices, faces)
    }

    /// Load from a filesystem path.
    pub fn load_obj_path(path: &std::path::Path) -> Result<Self, MeshError> {
        let file = std::fs::File::open(path)?;
        Self::load_obj(std::io::BufReader::new(file))
    }

    /// Build and validate a mesh from raw vertices and triangle indices.
    pub fn from_parts(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        if faces.len() < 4 {
            return Err(MeshError::OpenMesh(format!(
                "{} faces cannot bound a volume",
                faces.len()
            )));
        }

        let scale = vertices
            .iter()
            .map(|v| v.norm())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);

        for (fi, f) in faces.iter().enumerate() {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::Parse {
                    line: 0,
                    msg: format!("face {fi} repeats a vertex index"),
                });
            }
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(MeshError::Parse {
                    line: 0,
                    msg: format!("face {fi} index out of range"),
                });
            }
            let area2 = (vertices[f[1]] - vertices[f[0]])
                .cross(&(vertices[f[2]] - vertices[f[0]]))
                .norm();
            if area2 <= 1e-14 * scale * scale {
                return Err(MeshError::Parse {
                    line: 0,
                    msg: format!("face {fi} is degenerate (zero area)"),
                });
            }
        }

        // Watertightness: every undirected edge must be traversed exactly
        // twice, once in each direction.
        use std::collections::HashMap;
        let mut edge_uses: HashMap<(usize, usize), Vec<(usize, bool)>> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                edge_uses.entry(key).or_default().push((fi, a < b));
            }
        }
        for (&(a, b), uses) in &edge_uses {
            match uses.len() {
                2 => {
                    if uses[0].1 == uses[1].1 {
                        return Err(MeshError::OpenMesh(format!(
                            "edge ({a},{b}) traversed twice in the same direction (inconsistent winding)"
                        )));
                    }
                }
                1 => {
                    return Err(MeshError::OpenMesh(format!(
                        "boundary edge ({a},{b}) belongs to a single face"
                    )));
                }
                n => {
                    return Err(MeshError::OpenMesh(format!(
                        "edge ({a},{b}) shared by {n} faces (non-manifold)"
                    )));
                }
            }
        }

        // Divergence-theorem volume; positive iff normals point outward.
        let mut volume = 0.0;
        let mut centroid_acc = Vector3::zeros();
        for f in &faces {
            let (p0, p1, p2) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            let v6 = p0.dot(&p1.cross(&p2));
            volume += v6 / 6.0;
            centroid_acc += (p0 + p1 + p2) * (v6 / 24.0);
        }
        if volume <= 0.0 {
            return Err(MeshError::InvertedMesh(volume));
        }
        let centroid = centroid_acc / volume;

        let mut face_normals = Vec::with_capacity(faces.len());
        let mut face_dyads = Vec::with_capacity(faces.len());
        for f in &faces {
            let n = (vertices[f[1]] - vertices[f[0]])
                .cross(&(vertices[f[2]] - vertices[f[0]]))
                .normalize();
            face_normals.push(n);
            face_dyads.push(n * n.transpose());
        }

        let mut edges = Vec::with_capacity(edge_uses.len());
        let mut edge_keys: Vec<(usize, usize)> = edge_uses.keys().copied().collect();
        edge_keys.sort_unstable();
        for key in edge_keys {
            let uses = &edge_uses[&key];
            let (a, b) = key;
            let dir = (vertices[b] - vertices[a]).normalize();
            let length = (vertices[b] - vertices[a]).norm();
            let mut dyad = Matrix3::zeros();
            for &(fi, forward) in uses {
                // Traversal direction of this edge within face fi; the
                // in-plane outward edge normal is (edge dir) x (face normal).
                let e_dir = if forward { dir } else { -dir };
                let n = face_normals[fi];
                let m = e_dir.cross(&n);
                dyad += n * m.transpose();
            }
            edges.push(EdgeGeom { a, b, dyad, length });
        }

        let bounding_radius = scale;

        Ok(Self {
            vertices,
            faces,
            face_normals,
            face_dyads,
            edges,
            bounding_radius,
            volume,
            centroid,
            surface_tol: SURFACE_TOL_FRACTION * bounding_radius,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_normals(&self) -> &[Vector3<f64>] {
        &self.face_normals
    }

    pub fn face_dyads(&self) -> &[Matrix3<f64>] {
        &self.face_dyads
    }

    pub fn edges(&self) -> &[EdgeGeom] {
        &self.edges
    }

    /// Vertex positions of face `fi`.
    pub fn triangle(&self, fi: usize) -> [Vector3<f64>; 3] {
        let f = self.faces[fi];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    /// Radius of the origin-centered sphere containing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    /// Enclosed volume in m^3 (divergence-theorem sum).
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Volume centroid.
    pub fn centroid(&self) -> Vector3<f64> {
        self.centroid
    }

    /// Absolute surface tolerance band in meters.
    pub fn surface_tol(&self) -> f64 {
        self.surface_tol
    }

    /// Euclidean distance from `p` to the nearest point of the surface.
    pub fn distance_to_surface(&self, p: &Vector3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for fi in 0..self.faces.len() {
            let [a, b, c] = self.triangle(fi);
            let d2 = point_triangle_distance_sq(p, &a, &b, &c);
            if d2 < best {
                best = d2;
            }
        }
        best.sqrt()
    }

    /// Per-axis extent relative to a center point.
    pub fn extents_about(&self, center: &Vector3<f64>) -> Vector3<f64> {
        let mut ext = Vector3::<f64>::zeros();
        for v in &self.vertices {
            let d = v - center;
            for i in 0..3 {
                ext[i] = ext[i].max(d[i].abs());
            }
        }
        ext
    }
}

/// Squared distance from point `p` to triangle `(a, b, c)`.
pub fn point_triangle_distance_sq(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    // Ericson, Real-Time Collision Detection, closest-point-on-triangle.
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm_squared();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm_squared();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm_squared();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm_squared();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm_squared();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm_squared();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ((a + ab * v + ac * w) - p).norm_squared()
}
