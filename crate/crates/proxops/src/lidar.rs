//! Spherical lidar simulation: a fan of planar scanners rotated about a
//! common axis, synthesized by ray-mesh intersection, with misses written as
//! the constant sentinel `-100`.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gravity::{self, PointClass};
use crate::mesh::AsteroidMesh;

/// Sentinel stored for rays that hit nothing within range.
pub const MISS_SENTINEL: f32 = -100.0;

#[derive(Debug, Error)]
pub enum LidarError {
    #[error("bad lidar configuration: {0}")]
    Config(String),
    #[error("scan pose is inside the body")]
    InsideBody,
    #[error("bad frame data: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Direction table of the scanning array.
///
/// Plane `k` is the base fan rotated by `k * 180 deg / n_planes` about the
/// common z axis; within a plane, ray `j` sits at `j * 360 deg /
/// rays_per_plane`. Directions are stored row-major with azimuth as the row
/// index and plane as the column index.
#[derive(Debug, Clone)]
pub struct LidarArrayGeometry {
    pub n_planes: usize,
    pub rays_per_plane: usize,
    pub max_range: f64,
    directions: Vec<Vector3<f64>>,
}

impl LidarArrayGeometry {
    pub fn build(
        n_planes: usize,
        rays_per_plane: usize,
        max_range: f64,
    ) -> Result<Self, LidarError> {
        if n_planes < 1 {
            return Err(LidarError::Config("n_planes must be >= 1".into()));
        }
        if rays_per_plane < 3 {
            return Err(LidarError::Config("rays_per_plane must be >= 3".into()));
        }
        if !(max_range > 0.0) {
            return Err(LidarError::Config("max_range must be positive".into()));
        }
        let mut directions = Vec::with_capacity(n_planes * rays_per_plane);
        for az in 0..rays_per_plane {
            let theta = 2.0 * std::f64::consts::PI * az as f64 / rays_per_plane as f64;
            let (sin_t, cos_t) = theta.sin_cos();
            for k in 0..n_planes {
                let phi = std::f64::consts::PI * k as f64 / n_planes as f64;
                let (sin_p, cos_p) = phi.sin_cos();
                directions.push(Vector3::new(cos_t * cos_p, cos_t * sin_p, sin_t));
            }
        }
        Ok(Self {
            n_planes,
            rays_per_plane,
            max_range,
            directions,
        })
    }

    /// 12 planes x 360 rays, 200 km range.
    pub fn default_array() -> Self {
        Self::build(12, 360, 200_000.0).expect("default geometry")
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, azimuth: usize, plane: usize) -> Vector3<f64> {
        self.directions[azimuth * self.n_planes + plane]
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }
}

/// Moller-Trumbore ray/triangle intersection. Returns the ray parameter of
/// the hit (dir assumed unit-norm, so this is the distance).
#[inline]
fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    v0: &Vector3<f64>,
    v1: &Vector3<f64>,
    v2: &Vector3<f64>,
) -> Option<f64> {
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() <= 1e-16 * e1.norm() * e2.norm() {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - v0;
    let u = tvec.dot(&pvec) * inv_det;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t > 0.0 {
        Some(t)
    } else {
        None
    }
}

/// Nearest hit distance over every face, or `None` for a miss.
///
/// This is the reference path; [`Bvh::raycast`] must return bit-identical
/// results.
pub fn raycast(mesh: &AsteroidMesh, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
    let mut best: Option<f64> = None;
    for fi in 0..mesh.faces().len() {
        let [a, b, c] = mesh.triangle(fi);
        if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
            if best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn of_triangle(tri: &[Vector3<f64>; 3]) -> Self {
        let mut min = tri[0];
        let mut max = tri[0];
        for v in &tri[1..] {
            for i in 0..3 {
                min[i] = min[i].min(v[i]);
                max[i] = max[i].max(v[i]);
            }
        }
        Self { min, max }
    }

    fn union(&self, other: &Aabb) -> Self {
        Self {
            min: self.min.zip_map(&other.min, f64::min),
            max: self.max.zip_map(&other.max, f64::max),
        }
    }

    /// Slab test; returns the entry distance if the ray touches the box.
    #[inline]
    fn entry_distance(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>) -> Option<f64> {
        let mut t_near = 0.0f64;
        let mut t_far = f64::INFINITY;
        for i in 0..3 {
            let t1 = (self.min[i] - origin[i]) * inv_dir[i];
            let t2 = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            t_near = t_near.max(lo);
            t_far = t_far.min(hi);
            if t_near > t_far {
                return None;
            }
        }
        Some(t_near)
    }
}

enum BvhNode {
    Leaf {
        aabb: Aabb,
        faces: Vec<usize>,
    },
    Inner {
        aabb: Aabb,
        left: usize,
        right: usize,
    },
}

/// Median-split bounding-volume hierarchy over mesh faces.
///
/// Purely an accelerator: traversal evaluates the same triangle test as the
/// brute-force path and prunes only subtrees that provably cannot contain a
/// nearer hit, so results are bit-identical to [`raycast`].
pub struct Bvh {
    nodes: Vec<BvhNode>,
    root: usize,
}

const BVH_LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: &AsteroidMesh) -> Self {
        let tris: Vec<[Vector3<f64>; 3]> =
            (0..mesh.faces().len()).map(|fi| mesh.triangle(fi)).collect();
        let boxes: Vec<Aabb> = tris.iter().map(Aabb::of_triangle).collect();
        let centroids: Vec<Vector3<f64>> = tris
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / 3.0)
            .collect();
        let mut nodes = Vec::new();
        let mut indices: Vec<usize> = (0..tris.len()).collect();
        let root = Self::build_node(&mut nodes, &mut indices, &boxes, &centroids);
        Self { nodes, root }
    }

    fn build_node(
        nodes: &mut Vec<BvhNode>,
        faces: &mut [usize],
        boxes: &[Aabb],
        centroids: &[Vector3<f64>],
    ) -> usize {
        let aabb = faces
            .iter()
            .map(|&f| boxes[f])
            .reduce(|a, b| a.union(&b))
            .expect("non-empty face set");

        if faces.len() <= BVH_LEAF_SIZE {
            nodes.push(BvhNode::Leaf {
                aabb,
                faces: faces.to_vec(),
            });
            return nodes.len() - 1;
        }

        let extent = aabb.max - aabb.min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        faces.sort_unstable_by(|&a, &b| {
            centroids[a][axis]
                .partial_cmp(&centroids[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mid = faces.len() / 2;
        let (lo, hi) = faces.split_at_mut(mid);
        let left = Self::build_node(nodes, lo, boxes, centroids);
        let right = Self::build_node(nodes, hi, boxes, centroids);
        nodes.push(BvhNode::Inner { aabb, left, right });
        nodes.len() - 1
    }

    pub fn raycast(
        &self,
        mesh: &AsteroidMesh,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<f64> {
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<f64> = None;
        let mut stack = vec![self.root];
        while let Some(ni) = stack.pop() {
            let aabb = match &self.nodes[ni] {
                BvhNode::Leaf { aabb, .. } => aabb,
                BvhNode::Inner { aabb, .. } => aabb,
            };
            match aabb.entry_distance(origin, &inv_dir) {
                None => continue,
                Some(t_near) => {
                    // Conservative prune: keep the node on any near-tie so the
                    // same triangle set decides the minimum as in brute force.
                    if let Some(b) = best {
                        if t_near > b * (1.0 + 1e-9) {
                            continue;
                        }
                    }
                }
            }
            match &self.nodes[ni] {
                BvhNode::Leaf { faces, .. } => {
                    for &fi in faces {
                        let [a, b, c] = mesh.triangle(fi);
                        if let Some(t) = ray_triangle(origin, dir, &a, &b, &c) {
                            if best.is_none_or(|bt| t < bt) {
                                best = Some(t);
                            }
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(*left);
                    stack.push(*right);
                }
            }
        }
        best
    }
}

/// Raycasting strategy for scans: plain per-triangle loop or BVH-accelerated.
pub enum Raycaster {
    BruteForce,
    Accelerated(Bvh),
}

impl Raycaster {
    pub fn cast(
        &self,
        mesh: &AsteroidMesh,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
    ) -> Option<f64> {
        match self {
            Raycaster::BruteForce => raycast(mesh, origin, dir),
            Raycaster::Accelerated(bvh) => bvh.raycast(mesh, origin, dir),
        }
    }
}

/// One complete range image: `rays_per_plane x n_planes` entries, stored
/// row-major by azimuth. Entries are positive hit ranges in meters or
/// exactly [`MISS_SENTINEL`]; nothing non-finite survives a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub azimuth_count: u32,
    pub plane_count: u32,
    pub ranges: Vec<f32>,
    pub pose_position: Vector3<f64>,
    pub t: f64,
}

impl LidarFrame {
    pub fn range(&self, azimuth: usize, plane: usize) -> f32 {
        self.ranges[azimuth * self.plane_count as usize + plane]
    }

    pub fn is_miss(&self, azimuth: usize, plane: usize) -> bool {
        self.range(azimuth, plane) == MISS_SENTINEL
    }

    /// Check the frame invariants: finite, and either in (0, max_range] or
    /// exactly the sentinel.
    pub fn check_invariants(&self, max_range: f64) -> Result<(), LidarError> {
        if self.ranges.len() != (self.azimuth_count * self.plane_count) as usize {
            return Err(LidarError::Format("range count mismatch".into()));
        }
        for (i, &r) in self.ranges.iter().enumerate() {
            if !r.is_finite() {
                return Err(LidarError::Format(format!("non-finite range at {i}")));
            }
            if r != MISS_SENTINEL && !(r > 0.0 && f64::from(r) <= max_range) {
                return Err(LidarError::Format(format!(
                    "range {r} at {i} outside (0, {max_range}]"
                )));
            }
        }
        Ok(())
    }
}

/// Magic bytes of the binary frame format.
pub const FRAME_MAGIC: [u8; 4] = *b"PXLF";
/// Version of the binary frame format.
pub const FRAME_FORMAT_VERSION: u32 = 1;

impl LidarFrame {
    /// Serialize as the 16-byte header (magic, version, azimuth count, plane
    /// count) followed by little-endian f32 ranges, row-major.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), LidarError> {
        w.write_all(&FRAME_MAGIC)?;
        w.write_all(&FRAME_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&self.azimuth_count.to_le_bytes())?;
        w.write_all(&self.plane_count.to_le_bytes())?;
        for r in &self.ranges {
            w.write_all(&r.to_le_bytes())?;
        }
        Ok(())
    }

    /// Read one frame written by [`LidarFrame::write_to`]. Pose and time are
    /// not part of the wire format; they live in the record metadata.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, LidarError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if header[0..4] != FRAME_MAGIC {
            return Err(LidarError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != FRAME_FORMAT_VERSION {
            return Err(LidarError::Format(format!("unsupported version {version}")));
        }
        let azimuth_count = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let plane_count = u32::from_le_bytes(header[12..16].try_into().unwrap());
        let n = (azimuth_count as usize) * (plane_count as usize);
        let mut buf = vec![0u8; 4 * n];
        r.read_exact(&mut buf)?;
        let ranges = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            azimuth_count,
            plane_count,
            ranges,
            pose_position: Vector3::zeros(),
            t: 0.0,
        })
    }
}

/// Scan the full array from `pose`: one raycast per direction, with hits
/// beyond `max_range` and outright misses written as the sentinel.
pub fn scan(
    mesh: &AsteroidMesh,
    geometry: &LidarArrayGeometry,
    caster: &Raycaster,
    pose: &Vector3<f64>,
    t: f64,
) -> Result<LidarFrame, LidarError> {
    match gravity::classify_point(mesh, pose) {
        Ok(PointClass::Outside) => {}
        _ => return Err(LidarError::InsideBody),
    }

    let mut ranges = Vec::with_capacity(geometry.len());
    for dir in geometry.directions() {
        let r = match caster.cast(mesh, pose, dir) {
            Some(d) if d <= geometry.max_range => (d as f32).min(geometry.max_range as f32),
            _ => MISS_SENTINEL,
        };
        ranges.push(r);
    }
    Ok(LidarFrame {
        azimuth_count: geometry.rays_per_plane as u32,
        plane_count: geometry.n_planes as u32,
        ranges,
        pose_position: *pose,
        t,
    })
}

/// Affine normalization fitted on training-set hit ranges; the sentinel maps
/// to a fixed out-of-band constant recorded here.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NormalizationSpec {
    /// Mean of in-range cells over the training split, meters.
    pub mean: f64,
    /// Standard deviation of in-range cells, meters.
    pub std: f64,
    /// Normalized value written for sentinel cells; strictly below the image
    /// of any legal range under the affine map.
    pub sentinel_value: f64,
}

impl NormalizationSpec {
    pub fn fit(in_range_values: impl Iterator<Item = f64>) -> Self {
        let mut n = 0u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for v in in_range_values {
            n += 1;
            sum += v;
            sum_sq += v * v;
        }
        let (mean, std) = if n == 0 {
            (0.0, 1.0)
        } else {
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            (mean, var.sqrt().max(1e-9))
        };
        Self {
            mean,
            std,
            // Legal ranges are positive, so normalized values stay above
            // -mean/std; one unit below that is unreachable.
            sentinel_value: -mean / std - 1.0,
        }
    }

    pub fn normalize_value(&self, range: f32) -> f64 {
        if range == MISS_SENTINEL {
            self.sentinel_value
        } else {
            (f64::from(range) - self.mean) / self.std
        }
    }

    pub fn denormalize_value(&self, v: f64) -> f64 {
        v * self.std + self.mean
    }
}

/// Map a frame to the normalized grid the networks consume.
pub fn frame_to_model_input(frame: &LidarFrame, norm: &NormalizationSpec) -> Vec<f64> {
    frame
        .ranges
        .iter()
        .map(|&r| norm.normalize_value(r))
        .collect()
}
