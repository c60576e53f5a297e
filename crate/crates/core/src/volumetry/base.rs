use serde::{Deserialize, Serialize};

use super::{dot, norm, scale, sub, Plane, Vec3};
use crate::data::{CameraIntrinsics, PlateModel};
use crate::error::{Error, Result};

/// Plate location on the tray. Orientation is always the tray normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlatePose {
    pub center: Vec3,
    pub orientation: Vec3,
}

/// Height of the surface food rests on, above the tray plane.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseSurface {
    /// Food directly on the tray.
    Tray(Plane),
    Plate {
        tray: Plane,
        model: PlateModel,
        pose: PlatePose,
    },
}

impl BaseSurface {
    pub fn tray(&self) -> &Plane {
        match self {
            BaseSurface::Tray(t) | BaseSurface::Plate { tray: t, .. } => t,
        }
    }

    /// Distance from the plate axis, measured in the tray plane.
    pub fn radius_at(&self, p: Vec3) -> Option<f64> {
        match self {
            BaseSurface::Tray(_) => None,
            BaseSurface::Plate { tray, pose, .. } => Some(norm(sub(tray.project(p), pose.center))),
        }
    }

    /// Base height above the tray below the point `p` (camera frame).
    pub fn height_at(&self, p: Vec3) -> f64 {
        match self {
            BaseSurface::Tray(_) => 0.0,
            BaseSurface::Plate { model, .. } => {
                model.surface_height(self.radius_at(p).unwrap_or(0.0))
            }
        }
    }

    /// Fraction of `points` lying outside the plate rim (0 for the tray).
    pub fn beyond_rim_fraction(&self, points: &[Vec3]) -> f64 {
        let BaseSurface::Plate { model, .. } = self else {
            return 0.0;
        };
        if points.is_empty() {
            return 0.0;
        }
        let outside = points
            .iter()
            .filter(|p| self.radius_at(**p).is_some_and(|r| r > model.rim_radius))
            .count();
        outside as f64 / points.len() as f64
    }
}

/// Base surface of a plate whose pixels are marked in `plate_mask`.
///
/// Seen from above, a plate's silhouette is its rim disc, while parts of
/// its interior hide behind the rim. The pose center is therefore the
/// centroid of the mask's pixel rays intersected with the rim plane (each
/// weighted by its pixel's area there), projected onto the tray plane. No
/// depth is needed, so holes in the depth map do not bias it.
pub fn plate_base_surface(
    plate_mask: &[bool],
    width: usize,
    intrinsics: &CameraIntrinsics,
    model: &PlateModel,
    tray: &Plane,
) -> Result<BaseSurface> {
    model.validate()?;
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for (idx, _) in plate_mask.iter().enumerate().filter(|(_, m)| **m) {
        let (u, v) = ((idx % width) as f64, (idx / width) as f64);
        let d = intrinsics.unproject(u, v, 1.0);
        let nd = dot(tray.normal, d);
        // n·(λd) + offset = rim height
        let lam = (model.rim_height - tray.offset) / nd;
        if !(lam > 0.0) || !lam.is_finite() {
            continue;
        }
        let w = lam * lam / nd.abs();
        let q = tray.project(scale(d, lam));
        for k in 0..3 {
            acc[k] += w * q[k];
        }
        wsum += w;
    }
    if wsum == 0.0 {
        return Err(Error::Empty(format!("the {} mask is empty", model.category)));
    }
    Ok(BaseSurface::Plate {
        tray: *tray,
        model: model.clone(),
        pose: PlatePose {
            center: scale(acc, 1.0 / wsum),
            orientation: tray.normal,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PlateCategory;

    const W: usize = 200;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 250.0,
            fy: 250.0,
            cx: 100.0,
            cy: 100.0,
            depth_scale: 0.001,
        }
    }

    fn tray() -> Plane {
        Plane::new([0.0, 0.0, -1.0], 0.4)
    }

    /// Pixels whose ray meets the plane `rim_height` above the tray inside
    /// the rim circle.
    fn disc_mask(center: [f64; 2], radius: f64, rim_height: f64) -> Vec<bool> {
        let z = 0.4 - rim_height;
        (0..W * W)
            .map(|i| {
                let p = intr().unproject((i % W) as f64, (i / W) as f64, z);
                (p[0] - center[0]).hypot(p[1] - center[1]) <= radius
            })
            .collect()
    }

    #[test]
    fn flat_plate_is_the_tray() {
        let mask = disc_mask([0.0, 0.0], 0.1, 0.0);
        let model = PlateModel::flat(PlateCategory::MainPlate, 0.1);
        let base = plate_base_surface(&mask, W, &intr(), &model, &tray()).unwrap();
        for p in [[0.0, 0.0, 0.4], [0.05, -0.02, 0.39], [0.3, 0.3, 0.4]] {
            assert_eq!(base.height_at(p), 0.0);
        }
    }

    #[test]
    fn bowl_center_sits_below_the_rim() {
        let model = PlateModel::new(
            PlateCategory::SoupBowl,
            0.08,
            0.04,
            vec![[0.0, -0.03], [0.05, -0.03], [0.08, 0.0]],
        )
        .unwrap();
        let mask = disc_mask([0.02, -0.03], 0.08, 0.04);
        let base = plate_base_surface(&mask, W, &intr(), &model, &tray()).unwrap();
        let BaseSurface::Plate { pose, .. } = &base else { panic!() };
        assert!((pose.center[0] - 0.02).abs() < 1e-3 && (pose.center[1] + 0.03).abs() < 1e-3);
        assert!((pose.center[2] - 0.4).abs() < 1e-12);
        // 3 cm below a rim that is 4 cm above the tray
        assert!((base.height_at(pose.center) - 0.01).abs() < 1e-12);
        // past the rim the surface is held at the rim level
        assert!((base.height_at([0.3, 0.0, 0.4]) - 0.04).abs() < 1e-12);
        assert_eq!(base.beyond_rim_fraction(&[[0.3, 0.0, 0.4], pose.center]), 0.5);
    }

    #[test]
    fn empty_mask_fails() {
        let model = PlateModel::flat(PlateCategory::MainPlate, 0.1);
        assert!(matches!(
            plate_base_surface(&vec![false; W * W], W, &intr(), &model, &tray()),
            Err(Error::Empty(_))
        ));
    }
}
