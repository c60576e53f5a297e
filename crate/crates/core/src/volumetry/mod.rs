//! Geometry from a single RGB-D frame: point clouds, the tray plane, a
//! Delaunay surface over each food segment, plate base surfaces and the
//! resulting per-item volumes.

mod base;
mod cloud;
mod delaunay;
mod ransac;
mod volume;

use serde::{Deserialize, Serialize};

pub use base::{plate_base_surface, BaseSurface, PlatePose};
pub use cloud::{depth_to_cloud, PointCloud};
pub use delaunay::{delaunay_triangulate, Triangulation};
pub use ransac::{fit_tray_plane, RansacParams};
pub use volume::{
    connected_components, consumed_volumes, item_volume, ConsumedVolume, ItemStatus,
    ItemVolumes, TriMesh, VolumeEstimate,
};

pub(crate) type Vec3 = [f64; 3];

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `normal · x + offset = 0`, with the normal facing the camera so that
/// [`Plane::height`] is positive for points between tray and camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    /// Normalizes `normal` and flips the plane to face the camera
    /// (negative z component).
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let n = norm(normal);
        let (mut normal, mut offset) = (scale(normal, 1.0 / n), offset / n);
        if normal[2] > 0.0 || (normal[2] == 0.0 && offset < 0.0) {
            normal = scale(normal, -1.0);
            offset = -offset;
        }
        Self { normal, offset }
    }

    pub fn from_point_normal(point: Vec3, normal: Vec3) -> Self {
        let n = norm(normal);
        let u = scale(normal, 1.0 / n);
        Self::new(u, -dot(u, point))
    }

    /// Signed distance along the normal.
    #[inline]
    pub fn height(&self, p: Vec3) -> f64 {
        dot(self.normal, p) + self.offset
    }

    /// Foot of the perpendicular from `p`.
    #[inline]
    pub fn project(&self, p: Vec3) -> Vec3 {
        sub(p, scale(self.normal, self.height(p)))
    }

    /// Orthonormal in-plane axes, a deterministic function of the normal.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let reference = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let mut e1 = cross(reference, n);
        e1 = scale(e1, 1.0 / norm(e1));
        let e2 = cross(n, e1);
        (e1, e2)
    }

    /// Point of the plane closest to the camera center.
    pub fn origin(&self) -> Vec3 {
        scale(self.normal, -self.offset)
    }

    /// 2D coordinates of the projection of `p` in the plane's basis.
    #[inline]
    pub fn to_plane_coords(&self, p: Vec3, basis: &(Vec3, Vec3)) -> [f64; 2] {
        let d = sub(p, self.origin());
        [dot(d, basis.0), dot(d, basis.1)]
    }

    /// Angle between two planes' normals, in degrees.
    pub fn angle_deg(&self, other: &Plane) -> f64 {
        dot(self.normal, other.normal).clamp(-1.0, 1.0).acos().to_degrees()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_faces_camera() {
        let p = Plane::new([0.0, 0.0, 2.0], -0.8);
        assert_eq!(p.normal, [0.0, 0.0, -1.0]);
        assert!((p.offset - 0.4).abs() < 1e-15);
        assert!((p.height([0.1, 0.2, 0.38]) - 0.02).abs() < 1e-12);
        let (e1, e2) = p.basis();
        assert!(dot(e1, e2).abs() < 1e-15 && dot(e1, p.normal).abs() < 1e-15);
        let q = p.to_plane_coords([0.1, -0.2, 0.3], &(e1, e2));
        assert!((q[0].hypot(q[1]) - 0.1f64.hypot(0.2)).abs() < 1e-12);
    }
}
