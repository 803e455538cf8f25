//! Camera models, ray generation, the forward-facing NDC warp and the
//! two-plane (light slab) ray parameterization.
//!
//! Cameras follow the OpenGL convention used by synthetic-scene manifests:
//! the camera looks down its local −z axis, +x points right and +y up.

use nalgebra::{Isometry3, Matrix3, Matrix4, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rays whose direction has a smaller component along the slab normal are
/// treated as parallel to the slab planes.
pub const PARALLEL_EPS: f64 = 1e-12;

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    pub near: f64,
}

impl CameraModel {
    pub fn new(
        width: usize,
        height: usize,
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        near: f64,
    ) -> Result<Self> {
        let cam = Self { width, height, focal_x, focal_y, principal_x, principal_y, near };
        cam.validate()?;
        Ok(cam)
    }

    /// Square pixels, principal point at the image center.
    pub fn centered(width: usize, height: usize, focal: f64, near: f64) -> Result<Self> {
        Self::new(width, height, focal, focal, width as f64 / 2.0, height as f64 / 2.0, near)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera dimensions must be at least 1"));
        }
        if !(self.focal_x > 0.0 && self.focal_y > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0) {
            return Err(Error::invalid("near distance must be positive"));
        }
        if !(self.principal_x.is_finite() && self.principal_y.is_finite()) {
            return Err(Error::invalid("principal point must be finite"));
        }
        Ok(())
    }

    /// Direction of the ray through full-resolution pixel coordinates
    /// `(px, py)` in the camera frame.
    pub fn pixel_direction(&self, px: f64, py: f64) -> Vector3<f64> {
        Vector3::new((px - self.principal_x) / self.focal_x, -(py - self.principal_y) / self.focal_y, -1.0)
    }
}

/// Camera-to-world rigid transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub const ORTHONORMAL_TOL: f64 = 1e-5;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Self::with_tolerance(rotation, translation, Self::ORTHONORMAL_TOL)
    }

    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let err = (gram - Matrix3::identity()).abs().max();
        if !err.is_finite() || err > tol {
            return Err(Error::invalid(format!("rotation is not orthonormal (max |RᵀR − I| = {err:e})")));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > tol {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation must be finite"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    /// Builds a pose from a 4×4 camera-to-world matrix.
    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        let rotation = m.fixed_view::<3, 3>(0, 0).into_owned();
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        Self::with_tolerance(rotation, translation, tol)
    }

    /// Parses 16 row-major numbers (the HTTP pose wire format).
    pub fn from_row_major(values: &[f64]) -> Result<Self> {
        if values.len() != 16 {
            return Err(Error::invalid(format!("pose needs 16 row-major numbers, got {}", values.len())));
        }
        let m = Matrix4::from_row_slice(values);
        Self::from_matrix(&m, 1e-3)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn position(&self) -> Vector3<f64> {
        self.translation
    }

    /// Unit viewing direction in world space (camera −z).
    pub fn forward(&self) -> Vector3<f64> {
        -self.rotation.column(2).into_owned()
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        let back = eye - target;
        if back.norm() < 1e-12 {
            return Err(Error::invalid("look_at eye and target coincide"));
        }
        let z = back.normalize();
        let x = up.cross(&z);
        if x.norm() < 1e-9 {
            return Err(Error::invalid("look_at up vector is parallel to the view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Self::new(rotation, eye)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray3 {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray3 {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self> {
        if !(direction.norm() > 0.0) {
            return Err(Error::DegenerateRay("zero-length direction".into()));
        }
        Ok(Self { origin, direction })
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Two-plane ray coordinates: `(x, y)` on the near plane, `(u, v)` on the far plane.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ray4 {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl Ray4 {
    pub fn new(x: f64, y: f64, u: f64, v: f64) -> Self {
        Self { x, y, u, v }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.u, self.v]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { x: a[0], y: a[1], u: a[2], v: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

/// Two parallel planes `z = z_near` and `z = z_far` in a slab frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabPlanes {
    /// World → slab rigid transform.
    pub frame: Isometry3<f64>,
    pub z_near: f64,
    pub z_far: f64,
}

impl SlabPlanes {
    pub fn new(frame: Isometry3<f64>, z_near: f64, z_far: f64) -> Result<Self> {
        if z_near == z_far || !z_near.is_finite() || !z_far.is_finite() {
            return Err(Error::invalid("slab planes must be distinct and finite"));
        }
        Ok(Self { frame, z_near, z_far })
    }

    /// The NDC slab: identity frame, near plane at −1, far plane (infinity) at +1.
    pub fn ndc() -> Self {
        Self { frame: Isometry3::identity(), z_near: -1.0, z_far: 1.0 }
    }

    /// Slab whose +z axis is `normal` (pointing from the scene towards the
    /// cameras), with planes straddling a sphere of radius `radius` around
    /// the origin.
    pub fn facing(normal: Vector3<f64>, radius: f64) -> Result<Self> {
        let rotation = frame_with_z_axis(normal)?;
        let frame = Isometry3::from_parts(Translation3::identity(), rotation.inverse());
        Self::new(frame, 0.9 * radius, -1.1 * radius)
    }

    pub fn to_slab(&self, ray: &Ray3) -> Ray3 {
        Ray3 {
            origin: self.frame.transform_point(&ray.origin.into()).coords,
            direction: self.frame.transform_vector(&ray.direction),
        }
    }
}

/// Rotation whose third column is the unit `z_axis`; the other two axes are
/// chosen deterministically.
pub(crate) fn frame_with_z_axis(z_axis: Vector3<f64>) -> Result<UnitQuaternion<f64>> {
    let n = z_axis.norm();
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::invalid("slab normal must be non-zero"));
    }
    let z = z_axis / n;
    let helper = if z.y.abs() < 0.9 { Vector3::y() } else { Vector3::x() };
    let x = helper.cross(&z).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    Ok(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m)))
}

/// Row-major grid of rays, one per (downsampled) pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle<R> {
    pub rows: usize,
    pub cols: usize,
    pub rays: Vec<R>,
}

impl<R> RayBundle<R> {
    pub fn new(rows: usize, cols: usize, rays: Vec<R>) -> Result<Self> {
        if rays.len() != rows * cols {
            return Err(Error::invalid(format!("bundle {rows}x{cols} needs {} rays, got {}", rows * cols, rays.len())));
        }
        Ok(Self { rows, cols, rays })
    }

    pub fn get(&self, row: usize, col: usize) -> &R {
        &self.rays[row * self.cols + col]
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Low-resolution bundle size for a camera and downsample factor.
pub fn bundle_shape(camera: &CameraModel, downsample: usize) -> (usize, usize) {
    (camera.height.div_ceil(downsample), camera.width.div_ceil(downsample))
}

/// One ray per downsampled pixel. Downsampled pixel `(i, j)` has its center at
/// full-resolution pixel coordinates `((j + 0.5)·d, (i + 0.5)·d)`.
pub fn generate_ray_bundle(camera: &CameraModel, pose: &Pose, downsample: usize) -> Result<RayBundle<Ray3>> {
    if downsample == 0 {
        return Err(Error::invalid("downsample factor must be positive"));
    }
    camera.validate()?;
    let (rows, cols) = bundle_shape(camera, downsample);
    let d = downsample as f64;
    let mut rays = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let dir = camera.pixel_direction((j as f64 + 0.5) * d, (i as f64 + 0.5) * d);
            rays.push(Ray3 { origin: pose.translation, direction: pose.rotation * dir });
        }
    }
    RayBundle::new(rows, cols, rays)
}

fn ndc_scale(camera: &CameraModel) -> (f64, f64) {
    (camera.focal_x / (camera.width as f64 / 2.0), camera.focal_y / (camera.height as f64 / 2.0))
}

/// Forward-facing NDC map of a camera-frame point (depth along −z).
pub fn ndc_point(point: &Vector3<f64>, camera: &CameraModel) -> Vector3<f64> {
    let (ax, ay) = ndc_scale(camera);
    Vector3::new(-ax * point.x / point.z, -ay * point.y / point.z, 1.0 + 2.0 * camera.near / point.z)
}

/// Shifts the ray onto the plane `z = −near`, then warps it into NDC where
/// that plane lands on `z = −1` and infinity on `z = +1`.
pub fn world_to_ndc(ray: &Ray3, camera: &CameraModel) -> Result<Ray3> {
    let (o, d) = (ray.origin, ray.direction);
    if d.z.abs() < PARALLEL_EPS || !d.z.is_finite() {
        return Err(Error::DegenerateRay("direction parallel to the image plane".into()));
    }
    let t = -(camera.near + o.z) / d.z;
    let o = o + d * t;
    let (ax, ay) = ndc_scale(camera);
    let origin = Vector3::new(-ax * o.x / o.z, -ay * o.y / o.z, 1.0 + 2.0 * camera.near / o.z);
    let direction =
        Vector3::new(-ax * (d.x / d.z - o.x / o.z), -ay * (d.y / d.z - o.y / o.z), -2.0 * camera.near / o.z);
    Ok(Ray3 { origin, direction })
}

/// Intersections of a slab-frame ray with the near and far planes.
pub fn two_plane_parameterize(ray: &Ray3, slab: &SlabPlanes) -> Result<Ray4> {
    let (o, d) = (ray.origin, ray.direction);
    if d.z.abs() < PARALLEL_EPS || !d.z.is_finite() {
        return Err(Error::DegenerateRay("ray is parallel to the slab planes".into()));
    }
    let t_near = (slab.z_near - o.z) / d.z;
    let t_far = (slab.z_far - o.z) / d.z;
    let r = Ray4 { x: o.x + t_near * d.x, y: o.y + t_near * d.y, u: o.x + t_far * d.x, v: o.y + t_far * d.y };
    if !r.is_finite() {
        return Err(Error::DegenerateRay("non-finite slab coordinates".into()));
    }
    Ok(r)
}

/// Per-axis `[lo, hi]` extents of slab coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordBounds(pub [[f64; 2]; 4]);

impl CoordBounds {
    pub fn unit() -> Self {
        Self([[0.0, 1.0]; 4])
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &[lo, hi]) in self.0.iter().enumerate() {
            if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidBounds { axis, lo, hi });
            }
        }
        Ok(())
    }

    /// Min/max over `rays`, widened on each side by `margin` times the extent.
    pub fn from_rays<'a>(rays: impl IntoIterator<Item = &'a Ray4>, margin: f64) -> Result<Self> {
        let mut b = [[f64::INFINITY, f64::NEG_INFINITY]; 4];
        for r in rays {
            for (axis, c) in r.to_array().into_iter().enumerate() {
                b[axis][0] = b[axis][0].min(c);
                b[axis][1] = b[axis][1].max(c);
            }
        }
        for (axis, [lo, hi]) in b.iter_mut().enumerate() {
            if !lo.is_finite() {
                return Err(Error::InvalidBounds { axis, lo: *lo, hi: *hi });
            }
            let pad = ((*hi - *lo) * margin).max(1e-6);
            *lo -= pad;
            *hi += pad;
        }
        let bounds = Self(b);
        bounds.validate()?;
        Ok(bounds)
    }
}

/// Affine map of each coordinate from `[lo, hi]` onto `[0, 1]`, clamped.
pub fn normalize_ray_coords(r: &Ray4, bounds: &CoordBounds) -> Result<Ray4> {
    bounds.validate()?;
    let mut out = [0.0; 4];
    for (axis, c) in r.to_array().into_iter().enumerate() {
        let [lo, hi] = bounds.0[axis];
        out[axis] = ((c - lo) / (hi - lo)).clamp(0.0, 1.0);
    }
    Ok(Ray4::from_array(out))
}

/// How world rays become slab coordinates for one light field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RaySpace {
    pub slab: SlabPlanes,
    /// Warp into forward-facing NDC (after the slab frame) before intersecting.
    pub ndc: bool,
}

impl RaySpace {
    /// Single-slab forward-facing scene whose world frame already faces −z.
    pub fn frontal() -> Self {
        Self { slab: SlabPlanes::ndc(), ndc: true }
    }

    pub fn parameterize(&self, ray: &Ray3, camera: &CameraModel) -> Result<Ray4> {
        let local = self.slab.to_slab(ray);
        let local = if self.ndc { world_to_ndc(&local, camera)? } else { local };
        two_plane_parameterize(&local, &self.slab)
    }

    /// Slab coordinates of a whole bundle; failures list the offending pixels.
    pub fn parameterize_bundle(&self, bundle: &RayBundle<Ray3>, camera: &CameraModel) -> Result<RayBundle<Ray4>> {
        let mut bad = Vec::new();
        let mut rays = Vec::with_capacity(bundle.len());
        for (idx, ray) in bundle.rays.iter().enumerate() {
            match self.parameterize(ray, camera) {
                Ok(r) => rays.push(r),
                Err(_) => {
                    bad.push((idx / bundle.cols, idx % bundle.cols));
                    rays.push(Ray4::default());
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::DegenerateView { pixels: bad });
        }
        RayBundle::new(bundle.rows, bundle.cols, rays)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;
    use proptest::prelude::*;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn slab_pm1() -> SlabPlanes {
        SlabPlanes::ndc()
    }

    #[test]
    fn bundle_sizes_for_dataset_pairings() {
        let llff = CameraModel::centered(1008, 756, 800.0, 1.0).unwrap();
        let b = generate_ray_bundle(&llff, &Pose::identity(), 12).unwrap();
        assert_eq!((b.rows, b.cols), (63, 84));

        let blender = CameraModel::centered(800, 800, 1111.0, 2.0).unwrap();
        let b = generate_ray_bundle(&blender, &Pose::identity(), 8).unwrap();
        assert_eq!((b.rows, b.cols), (100, 100));
    }

    #[test]
    fn tiny_bundle_origins_at_camera() {
        let cam = CameraModel::centered(2, 2, 1.0, 0.5).unwrap();
        let pose = Pose::from_translation(Vector3::new(1.0, -2.0, 3.0));
        let b = generate_ray_bundle(&cam, &pose, 1).unwrap();
        assert_eq!(b.len(), 4);
        for r in &b.rays {
            assert_eq!(r.origin, pose.translation);
        }
        // pixel centers at ±0.5 around the principal point
        assert_eq!(b.get(0, 0).direction, Vector3::new(-0.5, 0.5, -1.0));
        assert_eq!(b.get(1, 1).direction, Vector3::new(0.5, -0.5, -1.0));
    }

    #[test]
    fn zero_downsample_rejected() {
        let cam = CameraModel::centered(4, 4, 1.0, 0.5).unwrap();
        assert!(matches!(generate_ray_bundle(&cam, &Pose::identity(), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn downsampled_bundle_matches_full_resolution_at_odd_factor() {
        // With an odd factor d, downsampled center (j+0.5)·d is full pixel j·d + (d−1)/2.
        let cam = CameraModel::new(9, 6, 7.0, 6.5, 4.2, 3.1, 0.3).unwrap();
        let pose = Pose::look_at(Vector3::new(0.3, 0.2, 2.0), Vector3::zeros(), Vector3::y()).unwrap();
        let full = generate_ray_bundle(&cam, &pose, 1).unwrap();
        let down = generate_ray_bundle(&cam, &pose, 3).unwrap();
        assert_eq!((down.rows, down.cols), (2, 3));
        for i in 0..down.rows {
            for j in 0..down.cols {
                assert_eq!(down.get(i, j), full.get(3 * i + 1, 3 * j + 1));
            }
        }
    }

    #[test]
    fn ndc_depth_mapping() {
        let cam = CameraModel::centered(64, 64, 50.0, 1.5).unwrap();
        assert_close!(ndc_point(&Vector3::new(0.0, 0.0, -1.5), &cam).z, -1.0, 1e-15);
        assert_close!(ndc_point(&Vector3::new(0.0, 0.0, -1e12), &cam).z, 1.0, 1e-9);

        let ray = Ray3 { origin: Vector3::new(0.1, 0.0, 0.0), direction: Vector3::new(0.1, 0.2, -1.0) };
        let ndc = world_to_ndc(&ray, &cam).unwrap();
        assert_close!(ndc.origin.z, -1.0, 1e-15);
        assert_close!((ndc.origin + ndc.direction).z, 1.0, 1e-15);
        // the NDC origin is the image of the near-plane point
        let p = ray.at(1.5);
        let np = ndc_point(&p, &cam);
        assert_close!((np - ndc.origin).norm(), 0.0, 1e-12);
    }

    #[test]
    fn ndc_rejects_parallel_ray() {
        let cam = CameraModel::centered(4, 4, 2.0, 1.0).unwrap();
        let ray = Ray3 { origin: Vector3::zeros(), direction: Vector3::new(1.0, 0.0, 0.0) };
        assert!(matches!(world_to_ndc(&ray, &cam), Err(Error::DegenerateRay(_))));
    }

    #[test]
    fn two_plane_examples() {
        let s = slab_pm1();
        let r = two_plane_parameterize(
            &Ray3 { origin: Vector3::new(0.2, 0.3, -1.0), direction: Vector3::new(0.0, 0.0, 1.0) },
            &s,
        )
        .unwrap();
        assert_eq!(r, Ray4::new(0.2, 0.3, 0.2, 0.3));

        let r = two_plane_parameterize(
            &Ray3 { origin: Vector3::new(0.0, 0.0, -1.0), direction: Vector3::new(0.5, 0.0, 1.0) },
            &s,
        )
        .unwrap();
        assert_eq!(r, Ray4::new(0.0, 0.0, 1.0, 0.0));

        let err =
            two_plane_parameterize(&Ray3 { origin: Vector3::zeros(), direction: Vector3::new(1.0, 0.0, 0.0) }, &s);
        assert!(matches!(err, Err(Error::DegenerateRay(_))));
    }

    #[test]
    fn normalization_examples() {
        let b = CoordBounds([[-1.0, 1.0]; 4]);
        assert_eq!(normalize_ray_coords(&Ray4::default(), &b).unwrap(), Ray4::new(0.5, 0.5, 0.5, 0.5));
        assert_eq!(
            normalize_ray_coords(&Ray4::new(-1.0, -1.0, -1.0, -1.0), &b).unwrap(),
            Ray4::new(0.0, 0.0, 0.0, 0.0)
        );
        assert_eq!(normalize_ray_coords(&Ray4::new(2.0, 0.0, 0.0, 0.0), &b).unwrap(), Ray4::new(1.0, 0.5, 0.5, 0.5));
        let mut bad = b;
        bad.0[2] = [1.0, 1.0];
        assert!(matches!(normalize_ray_coords(&Ray4::default(), &bad), Err(Error::InvalidBounds { axis: 2, .. })));
    }

    #[test]
    fn bounds_from_rays_include_margin() {
        let rays = [Ray4::new(0.0, 1.0, 2.0, 3.0), Ray4::new(1.0, 3.0, 2.0, 4.0)];
        let b = CoordBounds::from_rays(&rays, 0.05).unwrap();
        assert_close!(b.0[0][0], -0.05, 1e-12);
        assert_close!(b.0[0][1], 1.05, 1e-12);
        assert_close!(b.0[1][1], 3.1, 1e-12);
        // zero-extent axis still gets a valid interval
        assert!(b.0[2][1] > b.0[2][0]);
    }

    #[test]
    fn pose_validation() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 2.0;
        assert!(Pose::new(r, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
        let p = Pose::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::y()).unwrap();
        assert_close!((p.forward() - Vector3::new(0.0, 0.0, -1.0)).norm(), 0.0, 1e-12);
        let back = Pose::from_row_major(p.to_matrix().transpose().as_slice()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn facing_slab_maps_normal_to_z() {
        let n = Vector3::new(1.0, 0.0, 1.0).normalize();
        let slab = SlabPlanes::facing(n, 2.0).unwrap();
        let local = slab.frame.transform_vector(&n);
        assert_close!((local - Vector3::z()).norm(), 0.0, 1e-12);
        assert_close!(slab.z_near, 1.8, 1e-12);
        assert_close!(slab.z_far, -2.2, 1e-12);
    }

    fn arb_ray() -> impl Strategy<Value = Ray3> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform2(-1.0f64..1.0),
            prop_oneof![0.2f64..2.0, -2.0f64..-0.2],
        )
            .prop_map(|(o, dxy, dz)| Ray3 { origin: Vector3::from(o), direction: Vector3::new(dxy[0], dxy[1], dz) })
    }

    proptest! {
        #[test]
        fn parameterization_ignores_direction_scale(ray in arb_ray(), scale in 0.01f64..100.0) {
            let s = slab_pm1();
            let a = two_plane_parameterize(&ray, &s).unwrap();
            let b = two_plane_parameterize(&Ray3 { direction: ray.direction * scale, ..ray }, &s).unwrap();
            for (p, q) in a.to_array().iter().zip(b.to_array()) {
                prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
            }
        }

        #[test]
        fn parameterization_ignores_origin_slide(ray in arb_ray(), t in -5.0f64..5.0) {
            let s = slab_pm1();
            let a = two_plane_parameterize(&ray, &s).unwrap();
            let b = two_plane_parameterize(&Ray3 { origin: ray.at(t), ..ray }, &s).unwrap();
            for (p, q) in a.to_array().iter().zip(b.to_array()) {
                prop_assert!((p - q).abs() <= 1e-9 * (1.0 + p.abs()));
            }
        }

        #[test]
        fn ray4_determines_the_line(ray in arb_ray()) {
            let s = slab_pm1();
            let r = two_plane_parameterize(&ray, &s).unwrap();
            let p_near = Vector3::new(r.x, r.y, s.z_near);
            let p_far = Vector3::new(r.u, r.v, s.z_far);
            let rebuilt = Ray3 { origin: p_near, direction: p_far - p_near };
            let again = two_plane_parameterize(&rebuilt, &s).unwrap();
            for (p, q) in r.to_array().iter().zip(again.to_array()) {
                prop_assert!((p - q).abs() <= 1e-6);
            }
        }
    }
}
