//! Domain types shared by every stage, plus file I/O and dataset splitting.

mod io;
mod meal;
mod plate;
mod split;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_prob_map, encode_prob_map, load_annotation, load_frame, load_intrinsics,
    load_label_map, load_prob_map, read_json, save_frame, save_intrinsics, save_label_map,
    save_prob_map, write_atomic_bytes, write_json,
};
pub use meal::{load_meal_record, FramePaths, MealItem, MealRecord, NutrientVector, NUTRIENT_NAMES};
pub use plate::{PlateLibrary, PlateModel};
pub use split::{split_dataset, DatasetSplit};

/// Food output width: background plus seven hyper categories.
pub const FOOD_CLASSES: usize = 8;
/// Plate output width: background plus five plate categories.
pub const PLATE_CLASSES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoodCategory {
    Soup = 1,
    MainCourse = 2,
    Sauce = 3,
    Vegetable = 4,
    SideDish = 5,
    Salad = 6,
    Dessert = 7,
}

impl FoodCategory {
    pub const ALL: [FoodCategory; 7] = [
        FoodCategory::Soup,
        FoodCategory::MainCourse,
        FoodCategory::Sauce,
        FoodCategory::Vegetable,
        FoodCategory::SideDish,
        FoodCategory::Salad,
        FoodCategory::Dessert,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get((i as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FoodCategory::Soup => "soup",
            FoodCategory::MainCourse => "main_course",
            FoodCategory::Sauce => "sauce",
            FoodCategory::Vegetable => "vegetable",
            FoodCategory::SideDish => "side_dish",
            FoodCategory::Salad => "salad",
            FoodCategory::Dessert => "dessert",
        }
    }
}

impl fmt::Display for FoodCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FoodCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown food category name `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateCategory {
    MainPlate = 1,
    SaladBowl = 2,
    SoupBowl = 3,
    DessertBowl = 4,
    Packaged = 5,
}

impl PlateCategory {
    pub const ALL: [PlateCategory; 5] = [
        PlateCategory::MainPlate,
        PlateCategory::SaladBowl,
        PlateCategory::SoupBowl,
        PlateCategory::DessertBowl,
        PlateCategory::Packaged,
    ];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get((i as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PlateCategory::MainPlate => "main_plate",
            PlateCategory::SaladBowl => "salad_bowl",
            PlateCategory::SoupBowl => "soup_bowl",
            PlateCategory::DessertBowl => "dessert_bowl",
            PlateCategory::Packaged => "packaged",
        }
    }
}

impl fmt::Display for PlateCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlateCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown plate category name `{s}`")))
    }
}

/// Pinhole intrinsics of the depth-registered color camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Meters per stored depth unit.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::Invalid(format!(
                "depth_scale must be positive, got {}",
                self.depth_scale
            )));
        }
        if !(self.cx >= 0.0 && self.cx <= width as f64 && self.cy >= 0.0 && self.cy <= height as f64)
        {
            return Err(Error::Invalid(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Back-projects pixel `(u, v)` at metric depth `z`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z]
    }

    /// Projects a camera-frame point to pixel coordinates.
    #[inline]
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy)
    }
}

/// Registered color + metric depth.
///
/// `depth` is in meters, `0.0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub color: Vec<u8>,
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
}

impl RgbdFrame {
    pub fn new(
        width: usize,
        height: usize,
        color: Vec<u8>,
        depth: Vec<f64>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        if color.len() != width * height * 3 || depth.len() != width * height {
            return Err(Error::Dimension(format!(
                "frame {width}x{height} needs {} color bytes and {} depths, got {} and {}",
                width * height * 3,
                width * height,
                color.len(),
                depth.len()
            )));
        }
        if let Some(bad) = depth.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::Invalid(format!("depth value {bad} is not a valid distance")));
        }
        intrinsics.validate(width, height)?;
        Ok(Self {
            width,
            height,
            color,
            depth,
            intrinsics,
        })
    }

    #[inline]
    pub fn is_valid(&self, idx: usize) -> bool {
        self.depth[idx] > 0.0
    }

    #[inline]
    pub fn rgb(&self, idx: usize) -> [u8; 3] {
        [self.color[3 * idx], self.color[3 * idx + 1], self.color[3 * idx + 2]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelDomain {
    Food,
    Plate,
}

impl LabelDomain {
    pub fn classes(self) -> usize {
        match self {
            LabelDomain::Food => FOOD_CLASSES,
            LabelDomain::Plate => PLATE_CLASSES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LabelDomain::Food => "food",
            LabelDomain::Plate => "plate",
        }
    }
}

/// Per-pixel class indices; 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub domain: LabelDomain,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, domain: LabelDomain) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "label map {width}x{height} has {} entries",
                labels.len()
            )));
        }
        let max = (domain.classes() - 1) as u8;
        if let Some(&value) = labels.iter().find(|&&l| l > max) {
            return Err(Error::LabelOutOfRange {
                domain: domain.name(),
                value,
                max,
            });
        }
        Ok(Self {
            width,
            height,
            labels,
            domain,
        })
    }

    pub fn background(width: usize, height: usize, domain: LabelDomain) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            domain,
        }
    }

    pub fn mask_of(&self, class: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class).collect()
    }
}

/// Dense H×W×C per-pixel class distribution, channel-last.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbs {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub data: Vec<f64>,
}

impl ClassProbs {
    pub fn new(width: usize, height: usize, classes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * classes {
            return Err(Error::Dimension(format!(
                "probability map {width}x{height}x{classes} has {} entries",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, classes: usize) -> Self {
        Self {
            width,
            height,
            classes,
            data: vec![1.0 / classes as f64; width * height * classes],
        }
    }

    /// One-hot distributions from a label map.
    pub fn one_hot(labels: &LabelMap) -> Self {
        let classes = labels.domain.classes();
        let mut data = vec![0.0; labels.labels.len() * classes];
        for (i, &l) in labels.labels.iter().enumerate() {
            data[i * classes + l as usize] = 1.0;
        }
        Self {
            width: labels.width,
            height: labels.height,
            classes,
            data,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.classes..(idx + 1) * self.classes]
    }

    /// Largest deviation of any pixel's sum from 1, or infinity when some
    /// entry is negative or non-finite.
    pub fn normalization_error(&self) -> f64 {
        self.data
            .chunks(self.classes)
            .map(|p| {
                if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    f64::INFINITY
                } else {
                    (p.iter().sum::<f64>() - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let err = self.normalization_error();
        if err > tol {
            return Err(Error::Invalid(format!(
                "probability map not normalized (max error {err:e})"
            )));
        }
        Ok(())
    }

    /// Per-pixel argmax; ties resolve to the lowest class index.
    pub fn argmax(&self, domain: LabelDomain) -> LabelMap {
        let labels = self
            .data
            .chunks(self.classes)
            .map(|p| {
                let mut best = 0;
                for (k, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            width: self.width,
            height: self.height,
            labels,
            domain,
        }
    }
}

/// Softmax outputs of both heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMaps {
    pub food: ClassProbs,
    pub plate: ClassProbs,
}

impl ProbabilityMaps {
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        self.food.check_normalized(tol)?;
        self.plate.check_normalized(tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn category_names_round_trip() {
        for c in FoodCategory::ALL {
            assert_eq!(c.name().parse::<FoodCategory>().unwrap(), c);
            assert_eq!(FoodCategory::from_index(c.index()), Some(c));
        }
        for c in PlateCategory::ALL {
            assert_eq!(c.name().parse::<PlateCategory>().unwrap(), c);
        }
        assert!("pizza".parse::<FoodCategory>().is_err());
        assert_eq!(FoodCategory::from_index(0), None);
        assert_eq!(PlateCategory::from_index(6), None);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(intr().validate(640, 480).is_ok());
        let mut bad = intr();
        bad.depth_scale = 0.0;
        assert!(bad.validate(640, 480).is_err());
        let mut bad = intr();
        bad.cx = 700.0;
        assert!(bad.validate(640, 480).is_err());
        let mut bad = intr();
        bad.fy = -1.0;
        assert!(bad.validate(640, 480).is_err());
    }

    #[test]
    fn corner_pixel_back_projection() {
        let p = intr().unproject(0.0, 0.0, 0.4);
        assert!((p[0] + 0.256).abs() < 1e-12);
        assert!((p[1] + 0.192).abs() < 1e-12);
        assert_eq!(p[2], 0.4);
        assert_eq!(intr().unproject(320.0, 240.0, 0.4), [0.0, 0.0, 0.4]);
    }

    #[test]
    fn label_range_checked() {
        assert!(LabelMap::new(3, 1, vec![0, 1, 6], LabelDomain::Food).is_ok());
        let err = LabelMap::new(1, 1, vec![7], LabelDomain::Plate).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { value: 7, .. }));
        assert!(LabelMap::new(2, 2, vec![0; 4], LabelDomain::Plate).is_ok());
    }

    #[test]
    fn argmax_and_normalization() {
        let probs = ClassProbs::new(2, 1, 3, vec![0.2, 0.5, 0.3, 0.4, 0.4, 0.2]).unwrap();
        assert!(probs.normalization_error() < 1e-15);
        assert_eq!(probs.argmax(LabelDomain::Food).labels, vec![1, 0]);
        let bad = ClassProbs::new(1, 1, 2, vec![0.7, 0.7]).unwrap();
        assert!(bad.check_normalized(1e-5).is_err());
    }
}
