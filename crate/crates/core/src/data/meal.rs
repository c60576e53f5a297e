use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    load_annotation, load_frame, load_intrinsics, read_json, CameraIntrinsics, FoodCategory,
    LabelMap, PlateCategory, RgbdFrame,
};
use crate::error::{Error, Result};

pub const NUTRIENT_NAMES: [&str; 7] = ["calories", "cho", "fat", "protein", "salt", "fiber", "sodium"];

/// Calories in kcal, everything else in grams.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NutrientVector {
    pub calories: f64,
    pub cho: f64,
    pub fat: f64,
    pub protein: f64,
    pub salt: f64,
    pub fiber: f64,
    pub sodium: f64,
}

impl NutrientVector {
    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            calories: a[0],
            cho: a[1],
            fat: a[2],
            protein: a[3],
            salt: a[4],
            fiber: a[5],
            sodium: a[6],
        }
    }

    pub fn to_array(self) -> [f64; 7] {
        [
            self.calories,
            self.cho,
            self.fat,
            self.protein,
            self.salt,
            self.fiber,
            self.sodium,
        ]
    }

    pub fn scale(self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in NUTRIENT_NAMES.iter().zip(self.to_array()) {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("nutrient `{name}` must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Add for NutrientVector {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        let (a, b) = (self.to_array(), rhs.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + b[i]))
    }
}

impl AddAssign for NutrientVector {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for NutrientVector {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// One served item from the kitchen's menu and recipe sheet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealItem {
    pub food_category: FoodCategory,
    pub plate_category: PlateCategory,
    pub nutrients: NutrientVector,
    pub served_weight_g: f64,
}

/// Image files of one capture under a meal directory.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePaths {
    pub color: PathBuf,
    pub depth: PathBuf,
    pub food: Option<PathBuf>,
    pub plate: Option<PathBuf>,
}

impl FramePaths {
    fn discover(dir: &Path) -> Option<Self> {
        let color = dir.join("color.png");
        let depth = dir.join("depth.png");
        if !color.is_file() || !depth.is_file() {
            return None;
        }
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.is_file());
        Some(Self {
            color,
            depth,
            food: opt("food.png"),
            plate: opt("plate.png"),
        })
    }

    pub fn has_annotation(&self) -> bool {
        self.food.is_some() && self.plate.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MealRecord {
    pub meal_id: String,
    pub items: Vec<MealItem>,
    pub dir: PathBuf,
    pub before: Option<FramePaths>,
    pub after: Option<FramePaths>,
}

#[derive(Deserialize)]
struct MealFile {
    meal_id: String,
    items: Vec<MealItem>,
}

impl MealRecord {
    pub fn intrinsics_path(&self) -> PathBuf {
        self.dir.join("intrinsics.json")
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        load_intrinsics(&self.intrinsics_path())
    }

    fn frame_paths(&self, after: bool) -> Result<&FramePaths> {
        let (paths, which) = if after {
            (&self.after, "after")
        } else {
            (&self.before, "before")
        };
        paths.as_ref().ok_or_else(|| {
            Error::Invalid(format!("meal {} has no {which} frame", self.meal_id))
        })
    }

    pub fn load_frame(&self, after: bool) -> Result<RgbdFrame> {
        let p = self.frame_paths(after)?;
        load_frame(&p.color, &p.depth, self.intrinsics()?)
    }

    pub fn load_annotation(&self, after: bool) -> Result<(LabelMap, LabelMap)> {
        let p = self.frame_paths(after)?;
        match (&p.food, &p.plate) {
            (Some(f), Some(pl)) => load_annotation(f, pl),
            _ => Err(Error::Invalid(format!(
                "meal {} is missing annotations for its {} frame",
                self.meal_id,
                if after { "after" } else { "before" }
            ))),
        }
    }
}

/// Reads `meal.json` and discovers the `before/` and `after/` captures next
/// to it. `path` may name the JSON file or the meal directory.
pub fn load_meal_record(path: &Path) -> Result<MealRecord> {
    let json = if path.is_dir() {
        path.join("meal.json")
    } else {
        path.to_path_buf()
    };
    let file: MealFile = read_json(&json)?;
    if file.items.is_empty() {
        return Err(Error::Invalid(format!("meal {} has no items", file.meal_id)));
    }
    for item in &file.items {
        item.nutrients.validate()?;
        if !(item.served_weight_g > 0.0) {
            return Err(Error::Invalid(format!(
                "meal {}: served_weight_g must be positive",
                file.meal_id
            )));
        }
    }
    let dir = json.parent().map(Path::to_path_buf).unwrap_or_default();
    let before = FramePaths::discover(&dir.join("before"));
    let after = FramePaths::discover(&dir.join("after"));
    if after.is_some() && before.is_none() {
        return Err(Error::Invalid(format!(
            "meal {} has an after frame but no before frame",
            file.meal_id
        )));
    }
    Ok(MealRecord {
        meal_id: file.meal_id,
        items: file.items,
        dir,
        before,
        after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ITEM: &str = r#"{"food_category": "main_course", "plate_category": "main_plate",
        "nutrients": {"calories": 506, "cho": 50, "fat": 20, "protein": 30, "salt": 2,
                      "fiber": 4, "sodium": 0.8}, "served_weight_g": 350}"#;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("meal.json");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_items() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), &format!(r#"{{"meal_id": "m1", "items": [{ITEM}]}}"#));
        let rec = load_meal_record(&p).unwrap();
        assert_eq!(rec.items[0].nutrients.calories, 506.0);
        assert_eq!(rec.items[0].food_category, FoodCategory::MainCourse);
        assert_eq!(rec.items[0].plate_category, PlateCategory::MainPlate);
        assert!(rec.before.is_none());
    }

    #[test]
    fn missing_nutrient_is_named() {
        let d = tempfile::tempdir().unwrap();
        let item = ITEM.replace(r#", "sodium": 0.8"#, "");
        let p = write(d.path(), &format!(r#"{{"meal_id": "m1", "items": [{item}]}}"#));
        let msg = load_meal_record(&p).unwrap_err().to_string();
        assert!(msg.contains("sodium"), "{msg}");
    }

    #[test]
    fn unknown_category_rejected() {
        let d = tempfile::tempdir().unwrap();
        let item = ITEM.replace("main_course", "pizza");
        let p = write(d.path(), &format!(r#"{{"meal_id": "m1", "items": [{item}]}}"#));
        let msg = load_meal_record(&p).unwrap_err().to_string();
        assert!(msg.contains("pizza"), "{msg}");
    }

    #[test]
    fn empty_meal_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), r#"{"meal_id": "m1", "items": []}"#);
        let msg = load_meal_record(&p).unwrap_err().to_string();
        assert!(msg.contains("meal m1 has no items"), "{msg}");
    }

    #[test]
    fn nutrient_arithmetic() {
        let a = NutrientVector::from_array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let s: NutrientVector = [a, a.scale(2.0)].into_iter().sum();
        assert_eq!(s.to_array(), [3.0, 6.0, 9.0, 12.0, 15.0, 18.0, 21.0]);
        assert!(NutrientVector::from_array([0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .validate()
            .is_err());
    }
}
