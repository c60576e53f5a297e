use std::collections::HashSet;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{delaunay_triangulate, BaseSurface, Plane, Vec3};
use crate::data::{FoodCategory, PlateCategory, RgbdFrame};
use crate::error::{Error, Result};

/// Triangulated food surface in camera coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    /// `v x y z` / `f i j k` lines, 1-based face indices.
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    fn append(&mut self, vertices: &[Vec3], triangles: &[[usize; 3]]) {
        let off = self.vertices.len();
        self.vertices.extend_from_slice(vertices);
        self.triangles
            .extend(triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VolumeEstimate {
    pub volume_ml: f64,
    /// Valid-depth pixels that entered the surface.
    pub points: usize,
    pub invalid_fraction: f64,
    pub warnings: Vec<String>,
    pub mesh: TriMesh,
}

/// 8-connected components of `mask`, ordered by their first pixel in
/// raster order; pixel lists are ascending.
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), width * height, "mask size");
    let mut seen = vec![false; mask.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Back-projected footprint corners on the outer edges of the component's
/// outline pixels, first occurrence kept.
///
/// An edge facing away from the camera's foot point on the tray is a
/// silhouette: the food hides what lies behind it, so its corners stay at
/// the pixel's depth. An edge facing the foot point shows the food meeting
/// its base; there the corners go where their rays reach the base height,
/// unless the neighbor outside is nearer (something occludes the food).
fn outline_corners(frame: &RgbdFrame, mask: &[bool], comp: &[usize], base: &BaseSurface, tray: &Plane) -> Vec<Vec3> {
    let (w, h) = (frame.width, frame.height);
    let intr = &frame.intrinsics;
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask[y as usize * w + x as usize]
    };
    let foot = tray.project([0.0; 3]);
    let foot_px = (foot[2] > 0.0).then(|| intr.project(foot));
    let h0 = tray.height([0.0; 3]);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &i in comp {
        if !frame.is_valid(i) {
            continue;
        }
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        let d_in = frame.depth[i];
        let base_h = base.height_at(intr.unproject(x as f64, y as f64, d_in));
        // corner (cx, cy) sits at pixel coordinates (cx - 0.5, cy - 0.5)
        let edges = [
            ((-1, 0), [(0, 0), (0, 1)]),
            ((1, 0), [(1, 0), (1, 1)]),
            ((0, -1), [(0, 0), (1, 0)]),
            ((0, 1), [(0, 1), (1, 1)]),
        ];
        for ((dx, dy), corners) in edges {
            if inside(x + dx, y + dy) {
                continue;
            }
            let (ox, oy) = (x + dx, y + dy);
            let d_out = (ox >= 0 && oy >= 0 && (ox as usize) < w && (oy as usize) < h)
                .then(|| oy as usize * w + ox as usize)
                .filter(|&j| frame.is_valid(j))
                .map(|j| frame.depth[j]);
            let facing = foot_px.is_some_and(|(fu, fv)| dx as f64 * (fu - x as f64) + dy as f64 * (fv - y as f64) > 0.0);
            let contact = match d_out {
                Some(d) if facing && d >= d_in => Some(d),
                _ => None,
            };
            for (cx, cy) in corners {
                let key = (x + cx, y + cy);
                if !seen.insert(key) {
                    continue;
                }
                let (u, v) = (key.0 as f64 - 0.5, key.1 as f64 - 0.5);
                let mut depth = d_in;
                if let Some(d_out) = contact {
                    let dh = tray.height(intr.unproject(u, v, 1.0)) - h0;
                    let z = (base_h - h0) / dh;
                    if z.is_finite() {
                        depth = z.clamp(d_in, 0.5 * (d_in + d_out));
                    }
                }
                out.push(intr.unproject(u, v, depth));
            }
        }
    }
    out
}

/// Σ area × mean vertex height over the triangulation of `plane_xy`,
/// skipping triangles with an edge longer than `max_edge`. Returns the
/// volume in m³ and the kept triangles, or `None` when the points are
/// degenerate.
pub(crate) fn prism_volume(
    plane_xy: &[[f64; 2]],
    heights: &[f64],
    max_edge: f64,
) -> Option<(f64, Vec<[usize; 3]>)> {
    let tri = delaunay_triangulate(plane_xy).ok()?;
    let long = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]) > max_edge;
    let mut vol = 0.0;
    let mut kept = Vec::with_capacity(tri.triangles.len());
    for t in tri.triangles {
        let [a, b, c] = t.map(|i| plane_xy[i]);
        if long(a, b) || long(b, c) || long(c, a) {
            continue;
        }
        let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]));
        vol += area * (heights[t[0]] + heights[t[1]] + heights[t[2]]) / 3.0;
        kept.push(t);
    }
    Some((vol, kept))
}

/// Longest triangle edge kept in a food surface, in pixel footprints.
/// Longer edges only arise where the triangulation's convex hull bridges
/// across concave or empty parts of the segment.
pub const MAX_EDGE_PIXELS: f64 = 4.0;

/// Volume between the food surface seen in `frame` under `food_mask` and
/// the base surface, in milliliters.
///
/// The mask is split into 8-connected components, each triangulated on the
/// tray plane separately, so separate pieces never bridge across empty
/// space; triangles longer than [`MAX_EDGE_PIXELS`] are dropped for the
/// same reason. Besides the pixel centers, every pixel on the mask outline adds
/// the outer corners of its footprint, so the surface spans the segment's
/// full extent rather than stopping half a pixel short. Heights below the
/// base count as zero.
pub fn item_volume(
    frame: &RgbdFrame,
    food_mask: &[bool],
    base: &BaseSurface,
    tray: &Plane,
) -> Result<VolumeEstimate> {
    if food_mask.len() != frame.width * frame.height {
        return Err(Error::Dimension(format!(
            "food mask has {} pixels, frame has {}",
            food_mask.len(),
            frame.width * frame.height
        )));
    }
    let basis = tray.basis();
    let intr = &frame.intrinsics;
    let mut est = VolumeEstimate::default();
    let mut masked = 0usize;
    let mut all_points = Vec::new();
    for comp in connected_components(food_mask, frame.width, frame.height) {
        masked += comp.len();
        let mut pts = Vec::with_capacity(comp.len());
        for &i in &comp {
            if frame.is_valid(i) {
                let (u, v) = ((i % frame.width) as f64, (i / frame.width) as f64);
                pts.push(intr.unproject(u, v, frame.depth[i]));
            }
        }
        let centers = pts.len();
        if centers < 3 {
            all_points.extend(pts);
            continue;
        }
        let mean_depth = pts.iter().map(|p| p[2]).sum::<f64>() / centers as f64;
        let max_edge = MAX_EDGE_PIXELS * mean_depth / intr.fx.min(intr.fy);
        pts.extend(outline_corners(frame, food_mask, &comp, base, tray));
        let xy: Vec<[f64; 2]> = pts.iter().map(|p| tray.to_plane_coords(*p, &basis)).collect();
        let h: Vec<f64> = pts
            .iter()
            .map(|p| (tray.height(*p) - base.height_at(*p)).max(0.0))
            .collect();
        if let Some((vol, tris)) = prism_volume(&xy, &h, max_edge) {
            est.volume_ml += vol * 1e6;
            est.mesh.append(&pts, &tris);
        }
        pts.truncate(centers);
        all_points.extend(pts);
    }
    est.points = all_points.len();
    if masked == 0 || est.points < 3 {
        return Err(Error::Empty(format!(
            "food mask has {} valid depth pixels, need at least 3",
            est.points
        )));
    }
    est.invalid_fraction = 1.0 - est.points as f64 / masked as f64;
    if est.invalid_fraction > 0.5 {
        est.warnings.push(format!(
            "{:.0}% of the food pixels have no depth",
            100.0 * est.invalid_fraction
        ));
    }
    let beyond = base.beyond_rim_fraction(&all_points);
    if beyond > 0.2 {
        est.warnings.push(format!(
            "{:.0}% of the food lies outside the plate rim",
            100.0 * beyond
        ));
    }
    Ok(est)
}

/// Before/after volumes of one served item.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemVolumes {
    pub food_category: FoodCategory,
    pub plate_category: PlateCategory,
    pub before_ml: f64,
    pub after_ml: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Measured,
    /// Nothing was measured before the meal.
    EmptyServed,
    /// Sealed container; ratio borrowed from the salad item.
    FromSalad,
    /// Sealed container without a salad to borrow from; ratio 0.
    NoSignal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumedVolume {
    pub consumed_ml: f64,
    pub ratio: f64,
    pub status: ItemStatus,
}

/// Relative change at or below which a packaged item counts as unreadable.
pub const NO_SIGNAL_TOLERANCE: f64 = 0.02;

/// Consumed volume and ratio per item.
///
/// Items in packaged containers show an unchanged lid whether or not the
/// content was eaten; when their measured change is within
/// [`NO_SIGNAL_TOLERANCE`], the ratio is copied from the (first) salad item.
pub fn consumed_volumes(items: &[ItemVolumes]) -> Vec<ConsumedVolume> {
    let measured = |it: &ItemVolumes| -> ConsumedVolume {
        if !(it.before_ml > 0.0) {
            return ConsumedVolume {
                consumed_ml: 0.0,
                ratio: 0.0,
                status: ItemStatus::EmptyServed,
            };
        }
        let ratio = (1.0 - it.after_ml / it.before_ml).clamp(0.0, 1.0);
        ConsumedVolume {
            consumed_ml: ratio * it.before_ml,
            ratio,
            status: ItemStatus::Measured,
        }
    };
    let mut out: Vec<ConsumedVolume> = items.iter().map(measured).collect();
    let salad = items
        .iter()
        .zip(&out)
        .find(|(it, c)| it.food_category == FoodCategory::Salad && c.status == ItemStatus::Measured)
        .map(|(_, c)| c.ratio);
    for (it, c) in items.iter().zip(out.iter_mut()) {
        let sealed = it.plate_category == PlateCategory::Packaged
            && it.before_ml > 0.0
            && (it.before_ml - it.after_ml).abs() <= NO_SIGNAL_TOLERANCE * it.before_ml;
        if !sealed {
            if c.status == ItemStatus::EmptyServed {
                warn!("{} item: empty served item", it.food_category);
            }
            continue;
        }
        let ratio = match salad {
            Some(r) if it.food_category == FoodCategory::Sauce => {
                c.status = ItemStatus::FromSalad;
                r
            }
            _ => {
                warn!(
                    "{} item in a packaged container shows no change and has no salad to follow",
                    it.food_category
                );
                c.status = ItemStatus::NoSignal;
                0.0
            }
        };
        c.ratio = ratio;
        c.consumed_ml = ratio * it.before_ml;
    }
    out
}
