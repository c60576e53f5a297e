use crate::data::RgbdFrame;
use crate::error::{Error, Result};

/// Back-projected points with the pixel each came from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub pixels: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points whose pixel is set in `mask`.
    pub fn select(&self, mask: &[bool]) -> PointCloud {
        let (points, pixels) = self
            .points
            .iter()
            .zip(&self.pixels)
            .filter(|(_, &px)| mask[px])
            .map(|(p, &px)| (*p, px))
            .unzip();
        PointCloud { points, pixels }
    }
}

/// Pinhole back-projection of every valid pixel (optionally restricted to
/// `mask`).
pub fn depth_to_cloud(frame: &RgbdFrame, mask: Option<&[bool]>) -> Result<PointCloud> {
    if let Some(m) = mask {
        if m.len() != frame.depth.len() {
            return Err(Error::Dimension(format!(
                "mask has {} pixels, frame has {}",
                m.len(),
                frame.depth.len()
            )));
        }
    }
    let intr = &frame.intrinsics;
    let mut cloud = PointCloud::default();
    for v in 0..frame.height {
        for u in 0..frame.width {
            let idx = v * frame.width + u;
            if mask.is_some_and(|m| !m[idx]) || !frame.is_valid(idx) {
                continue;
            }
            cloud.points.push(intr.unproject(u as f64, v as f64, frame.depth[idx]));
            cloud.pixels.push(idx);
        }
    }
    if cloud.is_empty() {
        return Err(Error::Empty("no valid depth under the mask".into()));
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::CameraIntrinsics;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            depth_scale: 0.001,
        }
    }

    #[test]
    fn principal_point_and_corner() {
        let mut depth = vec![0.0; 640 * 480];
        depth[0] = 0.4;
        depth[240 * 640 + 320] = 0.4;
        let f = RgbdFrame::new(640, 480, vec![0; 640 * 480 * 3], depth, intr()).unwrap();
        let c = depth_to_cloud(&f, None).unwrap();
        assert_eq!(c.len(), 2);
        let p0 = c.points[0];
        assert!((p0[0] + 0.256).abs() < 1e-12 && (p0[1] + 0.192).abs() < 1e-12);
        assert_eq!(c.points[1], [0.0, 0.0, 0.4]);
    }

    #[test]
    fn invalid_only_mask_is_empty() {
        let mut depth = vec![0.4; 4];
        depth[1] = 0.0;
        let i = CameraIntrinsics { cx: 1.0, cy: 1.0, ..intr() };
        let f = RgbdFrame::new(2, 2, vec![0; 12], depth, i).unwrap();
        let mask = [false, true, false, false];
        assert!(matches!(depth_to_cloud(&f, Some(&mask)), Err(Error::Empty(_))));
    }

    proptest! {
        #[test]
        fn project_unproject_round_trip(x in -0.3f64..0.3, y in -0.2f64..0.2, z in 0.2f64..1.5) {
            let i = intr();
            let (u, v) = i.project([x, y, z]);
            let p = i.unproject(u, v, z);
            prop_assert!((p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9 && p[2] == z);
        }
    }
}
