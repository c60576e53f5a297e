//! Synthetic RGB-D meal scenes with exact ground truth: label maps,
//! analytic food volumes, tray plane and plate poses.
//!
//! A scene is a height field over a (possibly tilted) tray: plates are
//! surfaces of revolution from their [`PlateModel`], foods are simple solids
//! resting on a plate's flat bottom. Rendering ray-marches that height field
//! from a pinhole camera.

mod dataset;
mod render;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::{CameraIntrinsics, FoodCategory, PlateCategory, PlateModel};
use crate::error::{Error, Result};

pub use dataset::{
    default_plate_library, make_dataset, DatasetManifest, MealTruth, SynthOptions, TruthItem,
};
pub use render::{render_scene, SceneTruth};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FoodShape {
    SphericalCap { sphere_radius: f64, height: f64 },
    Box { size_x: f64, size_y: f64, height: f64 },
    Cone { radius: f64, height: f64 },
}

impl FoodShape {
    pub fn volume_m3(&self) -> f64 {
        match *self {
            FoodShape::SphericalCap { sphere_radius: r, height: h } => PI * h * h * (3.0 * r - h) / 3.0,
            FoodShape::Box { size_x, size_y, height } => size_x * size_y * height,
            FoodShape::Cone { radius, height } => PI * radius * radius * height / 3.0,
        }
    }

    pub fn volume_ml(&self) -> f64 {
        self.volume_m3() * 1e6
    }

    pub fn height(&self) -> f64 {
        match *self {
            FoodShape::SphericalCap { height, .. }
            | FoodShape::Box { height, .. }
            | FoodShape::Cone { height, .. } => height,
        }
    }

    /// Radius of the smallest disc around the center covering the base.
    pub fn footprint_radius(&self) -> f64 {
        match *self {
            FoodShape::SphericalCap { sphere_radius: r, height: h } => (h * (2.0 * r - h)).max(0.0).sqrt(),
            FoodShape::Box { size_x, size_y, .. } => 0.5 * size_x.hypot(size_y),
            FoodShape::Cone { radius, .. } => radius,
        }
    }

    /// Height above the base at offset `(dx, dy)` from the center; zero
    /// outside the footprint.
    pub fn height_at(&self, dx: f64, dy: f64) -> f64 {
        match *self {
            FoodShape::SphericalCap { sphere_radius: r, height: h } => {
                let rho2 = dx * dx + dy * dy;
                if rho2 >= r * r {
                    return 0.0;
                }
                ((r * r - rho2).sqrt() - (r - h)).max(0.0)
            }
            FoodShape::Box { size_x, size_y, height } => {
                if dx.abs() <= size_x / 2.0 && dy.abs() <= size_y / 2.0 {
                    height
                } else {
                    0.0
                }
            }
            FoodShape::Cone { radius, height } => {
                let rho = dx.hypot(dy);
                if rho >= radius {
                    0.0
                } else {
                    height * (1.0 - rho / radius)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            FoodShape::SphericalCap { sphere_radius, height } => {
                sphere_radius > 0.0 && (0.0..=sphere_radius).contains(&height)
            }
            FoodShape::Box { size_x, size_y, height } => size_x > 0.0 && size_y > 0.0 && height >= 0.0,
            FoodShape::Cone { radius, height } => radius >= 0.0 && height >= 0.0 && (radius > 0.0 || height == 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid food shape {self:?}")))
        }
    }

    /// The same kind of shape holding `1 - fraction` of the volume.
    ///
    /// Caps keep their sphere and lower their height (found by bisection),
    /// boxes lower their height, cones shrink uniformly.
    pub fn eaten(&self, fraction: f64) -> FoodShape {
        if fraction <= 0.0 {
            return *self;
        }
        let keep = (1.0 - fraction).max(0.0);
        match *self {
            FoodShape::SphericalCap { sphere_radius: r, height: h0 } => {
                let target = keep * self.volume_m3();
                let vol = |h: f64| PI * h * h * (3.0 * r - h) / 3.0;
                let (mut lo, mut hi) = (0.0, h0);
                // volume is increasing in h on [0, R]
                while hi - lo > 1e-13 {
                    let mid = 0.5 * (lo + hi);
                    if vol(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let h = if keep == 0.0 { 0.0 } else { 0.5 * (lo + hi) };
                FoodShape::SphericalCap { sphere_radius: r, height: h }
            }
            FoodShape::Box { size_x, size_y, height } => FoodShape::Box {
                size_x,
                size_y,
                height: height * keep,
            },
            FoodShape::Cone { radius, height } => {
                let s = keep.cbrt();
                FoodShape::Cone {
                    radius: radius * s,
                    height: height * s,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraySpec {
    /// Distance from the camera to the tray along the optical axis, meters.
    pub distance: f64,
    /// Rotation of the tray about the camera x axis, degrees.
    pub tilt_x_deg: f64,
    /// Rotation of the tray about the camera y axis, degrees.
    pub tilt_y_deg: f64,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedPlate {
    pub model: PlateModel,
    /// Center in tray coordinates, meters.
    pub center: [f64; 2],
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedFood {
    /// Index into [`SceneSpec::plates`].
    pub plate: usize,
    /// Offset of the shape center from the plate center, meters.
    pub offset: [f64; 2],
    pub shape: FoodShape,
    pub category: FoodCategory,
    pub color: [u8; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation of additive depth noise, meters.
    pub depth_sigma: f64,
    /// Probability that a pixel has no depth.
    pub dropout: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        depth_sigma: 0.0,
        dropout: 0.0,
    };
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            depth_sigma: 0.001,
            dropout: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub tray: TraySpec,
    pub plates: Vec<PlacedPlate>,
    pub foods: Vec<PlacedFood>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// Flat color per food category (index 0 unused).
pub const FOOD_COLORS: [[u8; 3]; 8] = [
    [0, 0, 0],
    [214, 160, 40],
    [150, 70, 40],
    [230, 230, 200],
    [40, 150, 50],
    [240, 200, 120],
    [120, 210, 90],
    [200, 60, 140],
];

/// Flat color per plate category (index 0 unused).
pub const PLATE_COLORS: [[u8; 3]; 6] = [
    [0, 0, 0],
    [245, 245, 245],
    [170, 200, 230],
    [230, 200, 170],
    [200, 170, 230],
    [90, 90, 100],
];

pub const TRAY_COLOR: [u8; 3] = [60, 110, 160];

pub fn food_color(c: FoodCategory) -> [u8; 3] {
    FOOD_COLORS[c.index() as usize]
}

pub fn plate_color(c: PlateCategory) -> [u8; 3] {
    PLATE_COLORS[c.index() as usize]
}

/// Largest radius over which the plate interior stays at its center depth.
pub fn flat_bottom_radius(model: &PlateModel) -> f64 {
    let z0 = model.profile[0][1];
    let mut r = model.profile[0][0];
    for s in &model.profile[1..] {
        if s[1] != z0 {
            break;
        }
        r = s[0];
    }
    r
}

impl SceneSpec {
    /// Checks everything except the camera frustum, which needs the
    /// projection and is checked at render time.
    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate(self.width, self.height)?;
        if !(self.tray.distance > 0.0) || self.tray.tilt_x_deg.abs() >= 60.0 || self.tray.tilt_y_deg.abs() >= 60.0 {
            return Err(Error::Invalid("tray must be in front of the camera and tilted < 60 degrees".into()));
        }
        if !(self.noise.depth_sigma >= 0.0) || !(0.0..=1.0).contains(&self.noise.dropout) {
            return Err(Error::Invalid("noise sigma must be >= 0 and dropout in [0, 1]".into()));
        }
        for p in &self.plates {
            p.model.validate()?;
        }
        for (i, f) in self.foods.iter().enumerate() {
            f.shape.validate()?;
            let plate = self.plates.get(f.plate).ok_or_else(|| {
                Error::Invalid(format!("food {i} refers to missing plate {}", f.plate))
            })?;
            let reach = f.offset[0].hypot(f.offset[1]) + f.shape.footprint_radius();
            let flat = flat_bottom_radius(&plate.model);
            if reach > flat + 1e-12 {
                return Err(Error::Invalid(format!(
                    "food {i} ({}) reaches {reach:.4} m from the plate center, past the flat bottom at {flat:.4} m",
                    f.category
                )));
            }
        }
        Ok(())
    }
}

/// Spec with every food shrunk by its eaten fraction.
pub fn make_eaten_scene(spec: &SceneSpec, fractions: &[f64]) -> Result<SceneSpec> {
    if fractions.len() != spec.foods.len() {
        return Err(Error::Dimension(format!(
            "{} eaten fractions for {} foods",
            fractions.len(),
            spec.foods.len()
        )));
    }
    if let Some(f) = fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::Invalid(format!("eaten fraction {f} outside [0, 1]")));
    }
    let mut out = spec.clone();
    for (food, &f) in out.foods.iter_mut().zip(fractions) {
        food.shape = food.shape.eaten(f);
    }
    Ok(out)
}
