//! Splitting non-frontal scenes into sub-scenes that are each close enough to
//! frontal to be modeled by one light slab.
//!
//! Object-centric 360° captures use five hyperplanes forming a trapezoidal
//! prism around the object; unbounded captures cluster cameras by position
//! and viewing direction. Training poses may belong to several sub-scenes so
//! that neighbouring models overlap, while a query is always answered by
//! exactly one model.

use std::cmp::Ordering;

use nalgebra::{Isometry3, Translation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{frame_with_z_axis, Pose, RaySpace, SlabPlanes};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Row `i` is the normal of face `i`; a camera at `p` belongs to face `i`
/// when `row_i · p ≥ r`.
pub const PRISM_ROWS: [[f64; 3]; 5] = [
    [0.0, 0.0, SQRT_2],
    [SQRT_2, 0.0, SQRT_2 - 1.0],
    [-SQRT_2, 0.0, SQRT_2 - 1.0],
    [0.0, SQRT_2, SQRT_2 - 1.0],
    [0.0, -SQRT_2, SQRT_2 - 1.0],
];

/// Relative slack on the face inequalities; boundary cameras are inside.
pub const FACE_TOLERANCE: f64 = 1e-9;

/// Right-hand-side multiplier that moves the top splitting plane from
/// `r/√2` to `r/√3` from the origin.
pub const PLANE_OFFSET_SQRT3: f64 = 0.816_496_580_927_726; // √2/√3

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrismPartition {
    pub radius: f64,
    /// Multiplier on the inequalities' right-hand side (1 = the default placement).
    #[serde(default = "one")]
    pub plane_offset: f64,
}

fn one() -> f64 {
    1.0
}

impl PrismPartition {
    pub fn new(radius: f64) -> Result<Self> {
        Self::with_offset(radius, 1.0)
    }

    pub fn with_offset(radius: f64, plane_offset: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("prism radius must be positive, got {radius}")));
        }
        if !(plane_offset > 0.0 && plane_offset.is_finite()) {
            return Err(Error::invalid("plane offset multiplier must be positive"));
        }
        Ok(Self { radius, plane_offset })
    }

    pub fn matrix(&self) -> [[f64; 3]; 5] {
        PRISM_ROWS
    }

    pub fn rhs(&self) -> f64 {
        self.radius * self.plane_offset
    }

    /// `row_i · position` for every face.
    pub fn products(&self, position: &Vector3<f64>) -> [f64; 5] {
        PRISM_ROWS.map(|row| Vector3::from(row).dot(position))
    }

    /// Every face whose inequality the position satisfies.
    pub fn assign(&self, position: &Vector3<f64>) -> Result<Vec<usize>> {
        let rhs = self.rhs();
        let ids: Vec<usize> = self
            .products(position)
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= rhs - FACE_TOLERANCE * rhs)
            .map(|(i, _)| i)
            .collect();
        if ids.is_empty() {
            return Err(Error::UncoveredPose { position: [position.x, position.y, position.z] });
        }
        Ok(ids)
    }

    /// The face with the largest product; lowest index on ties.
    pub fn route(&self, position: &Vector3<f64>) -> usize {
        argmax(&self.products(position))
    }

    /// Outward unit normal of face `id`.
    pub fn face_normal(&self, id: usize) -> Vector3<f64> {
        Vector3::from(PRISM_ROWS[id]).normalize()
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Centroids in feature space `[position · position_scale, forward]`.
    pub centroids: Vec<[f64; 6]>,
    pub overlap_margin: f64,
    pub position_scale: f64,
}

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;
pub const DEFAULT_OVERLAP_MARGIN: f64 = 0.1;

fn pose_features(pose: &Pose, scale: f64) -> [f64; 6] {
    let p = pose.position() * scale;
    let f = pose.forward().normalize();
    [p.x, p.y, p.z, f.x, f.y, f.z]
}

fn dist(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lex_cmp(a: &[f64; 6], b: &[f64; 6]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn nearest(point: &[f64; 6], centroids: &[[f64; 6]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Nearest index plus every index within `(1 + margin)` of the nearest distance.
pub fn assign_by_distances(distances: &[f64], margin: f64) -> Vec<usize> {
    let Some(best) = distances.iter().copied().min_by(f64::total_cmp) else {
        return Vec::new();
    };
    let limit = (1.0 + margin) * best;
    distances.iter().enumerate().filter(|(_, &d)| d <= limit).map(|(i, _)| i).collect()
}

impl ClusterPartition {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn features(&self, pose: &Pose) -> [f64; 6] {
        pose_features(pose, self.position_scale)
    }

    pub fn distances(&self, pose: &Pose) -> Vec<f64> {
        let f = self.features(pose);
        self.centroids.iter().map(|c| dist(&f, c)).collect()
    }

    pub fn assign(&self, pose: &Pose) -> Vec<usize> {
        assign_by_distances(&self.distances(pose), self.overlap_margin)
    }

    pub fn route(&self, pose: &Pose) -> usize {
        nearest(&self.features(pose), &self.centroids).0
    }

    /// Camera-facing slab for cluster `id`: origin at the centroid position,
    /// looking along the centroid's forward axis, warped into NDC.
    pub fn ray_space(&self, id: usize) -> Result<RaySpace> {
        let c = &self.centroids[id];
        let center = Vector3::new(c[0], c[1], c[2]) / self.position_scale;
        let forward = Vector3::new(c[3], c[4], c[5]);
        let rotation = frame_with_z_axis(-forward)?;
        let to_world = Isometry3::from_parts(Translation3::from(center), rotation);
        Ok(RaySpace { slab: SlabPlanes { frame: to_world.inverse(), ..SlabPlanes::ndc() }, ndc: true })
    }
}

/// Lloyd's k-means on `[position / max‖position‖, forward]` with k-means++
/// seeding. Features are sorted before seeding so the result does not depend
/// on the input order.
pub fn fit_kmeans_partition(poses: &[Pose], k: usize, overlap_margin: f64, seed: u64) -> Result<ClusterPartition> {
    if k == 0 || k > poses.len() {
        return Err(Error::invalid(format!("k = {k} must be in 1..={}", poses.len())));
    }
    if !(overlap_margin >= 0.0) {
        return Err(Error::invalid("overlap margin must be non-negative"));
    }
    let max_norm = poses.iter().map(|p| p.position().norm()).fold(0.0, f64::max);
    let position_scale = if max_norm > 0.0 { 1.0 / max_norm } else { 1.0 };
    let mut points: Vec<[f64; 6]> = poses.iter().map(|p| pose_features(p, position_scale)).collect();
    points.sort_by(lex_cmp);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1.powi(2)).collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = weights.len() - 1;
            for (i, &w) in weights.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // all points coincide with existing centroids
            centroids.len() % points.len()
        };
        centroids.push(points[pick]);
    }

    let mut labels = vec![0usize; points.len()];
    for _ in 0..KMEANS_MAX_ITERS {
        for (l, p) in labels.iter_mut().zip(&points) {
            *l = nearest(p, &centroids).0;
        }
        let mut sums = vec![[0.0; 6]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(&points) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].map(|s| s / counts[c] as f64)
            } else {
                // re-seed at the point worst served by its centroid
                let far = points
                    .iter()
                    .zip(&labels)
                    .map(|(p, &l)| dist(p, &centroids[l]))
                    .enumerate()
                    .fold((0, -1.0), |best, (i, d)| if d > best.1 { (i, d) } else { best })
                    .0;
                labels[far] = c;
                points[far]
            };
            moved = moved.max(dist(&next, &centroids[c]));
            centroids[c] = next;
        }
        if moved < KMEANS_TOL {
            break;
        }
    }
    Ok(ClusterPartition { centroids, overlap_margin, position_scale })
}

/// Median distance of the camera positions from the scene origin.
pub fn estimate_radius(poses: &[Pose]) -> Result<f64> {
    if poses.is_empty() {
        return Err(Error::invalid("cannot estimate a radius from zero poses"));
    }
    let mut d: Vec<f64> = poses.iter().map(|p| p.position().norm()).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    if !(median > 0.0) {
        return Err(Error::invalid("camera positions are all at the origin"));
    }
    Ok(median)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Partition {
    /// A single forward-facing slab.
    Frontal,
    Prism(PrismPartition),
    Kmeans(ClusterPartition),
}

impl Partition {
    pub fn kind(&self) -> &'static str {
        match self {
            Partition::Frontal => "frontal",
            Partition::Prism(_) => "prism",
            Partition::Kmeans(_) => "kmeans",
        }
    }

    pub fn sub_scene_count(&self) -> usize {
        match self {
            Partition::Frontal => 1,
            Partition::Prism(_) => PRISM_ROWS.len(),
            Partition::Kmeans(c) => c.k(),
        }
    }

    /// Training-time assignment: every sub-scene the pose belongs to.
    pub fn assign(&self, pose: &Pose) -> Result<Vec<usize>> {
        match self {
            Partition::Frontal => Ok(vec![0]),
            Partition::Prism(p) => p.assign(&pose.position()),
            Partition::Kmeans(c) => Ok(c.assign(pose)),
        }
    }

    /// Query-time routing: the single sub-scene that answers this camera.
    pub fn route(&self, pose: &Pose) -> usize {
        match self {
            Partition::Frontal => 0,
            Partition::Prism(p) => p.route(&pose.position()),
            Partition::Kmeans(c) => c.route(pose),
        }
    }

    /// Slab geometry used by sub-scene `id`.
    pub fn ray_space(&self, id: usize) -> Result<RaySpace> {
        if id >= self.sub_scene_count() {
            return Err(Error::invalid(format!("sub-scene {id} does not exist")));
        }
        match self {
            Partition::Frontal => Ok(RaySpace::frontal()),
            Partition::Prism(p) => Ok(RaySpace { slab: SlabPlanes::facing(p.face_normal(id), p.radius)?, ndc: false }),
            Partition::Kmeans(c) => c.ray_space(id),
        }
    }

    /// Assigns every pose, failing on the first uncovered one.
    pub fn assign_all(&self, poses: &[Pose]) -> Result<Assignment> {
        let per_pose = poses.iter().map(|p| self.assign(p)).collect::<Result<Vec<_>>>()?;
        Ok(Assignment { per_pose, sub_scenes: self.sub_scene_count() })
    }
}

/// How to split a scene, as written in configuration files.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartitionConfig {
    #[default]
    Frontal,
    Prism {
        /// Defaults to the median camera distance.
        #[serde(default)]
        radius: Option<f64>,
        #[serde(default = "one")]
        plane_offset: f64,
    },
    Kmeans {
        k: usize,
        #[serde(default = "default_margin")]
        overlap_margin: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_margin() -> f64 {
    DEFAULT_OVERLAP_MARGIN
}

impl PartitionConfig {
    pub fn build(&self, poses: &[Pose]) -> Result<Partition> {
        match *self {
            PartitionConfig::Frontal => Ok(Partition::Frontal),
            PartitionConfig::Prism { radius, plane_offset } => {
                let r = match radius {
                    Some(r) => r,
                    None => estimate_radius(poses)?,
                };
                Ok(Partition::Prism(PrismPartition::with_offset(r, plane_offset)?))
            }
            PartitionConfig::Kmeans { k, overlap_margin, seed } => {
                Ok(Partition::Kmeans(fit_kmeans_partition(poses, k, overlap_margin, seed)?))
            }
        }
    }
}

/// Sub-scene memberships of a set of poses.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub per_pose: Vec<Vec<usize>>,
    pub sub_scenes: usize,
}

impl Assignment {
    /// Pose indices belonging to each sub-scene.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sub_scenes];
        for (pose, ids) in self.per_pose.iter().enumerate() {
            for &id in ids {
                out[id].push(pose);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubSceneEntry {
    pub id: usize,
    /// Face normal row and right-hand side, for prism partitions.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hyperplane: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rhs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub centroid: Option<[f64; 6]>,
    pub frames: Vec<String>,
}

/// Human-readable description of a partition and its training frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    pub partition: Partition,
    pub sub_scenes: Vec<SubSceneEntry>,
}

impl PartitionManifest {
    pub fn build(partition: &Partition, poses: &[Pose], frame_names: &[String]) -> Result<Self> {
        if poses.len() != frame_names.len() {
            return Err(Error::invalid("one frame name per pose is required"));
        }
        let members = partition.assign_all(poses)?.members();
        let sub_scenes = members
            .into_iter()
            .enumerate()
            .map(|(id, idx)| {
                let (hyperplane, rhs, centroid) = match partition {
                    Partition::Frontal => (None, None, None),
                    Partition::Prism(p) => (Some(PRISM_ROWS[id]), Some(p.rhs()), None),
                    Partition::Kmeans(c) => (None, None, Some(c.centroids[id])),
                };
                SubSceneEntry {
                    id,
                    hyperplane,
                    rhs,
                    centroid,
                    frames: idx.into_iter().map(|i| frame_names[i].clone()).collect(),
                }
            })
            .collect();
        Ok(Self { partition: partition.clone(), sub_scenes })
    }
}
