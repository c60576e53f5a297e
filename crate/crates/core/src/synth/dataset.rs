use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    flat_bottom_radius, food_color, make_eaten_scene, plate_color, render_scene, FoodShape,
    NoiseSpec, PlacedFood, PlacedPlate, SceneSpec, TraySpec, TRAY_COLOR,
};
use crate::data::{
    save_frame, save_intrinsics, save_label_map, write_json, CameraIntrinsics, FoodCategory,
    MealItem, NutrientVector, PlateCategory, PlateLibrary, PlateModel,
};
use crate::error::{Error, Result};
use crate::par;
use crate::volumetry::{Plane, PlatePose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthOptions {
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    pub noise: NoiseSpec,
    /// Tray tilt is drawn uniformly from ±this many degrees per axis.
    pub max_tilt_deg: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            focal_px: 460.0,
            noise: NoiseSpec::default(),
            max_tilt_deg: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthItem {
    pub food_category: FoodCategory,
    pub plate_category: PlateCategory,
    pub eaten_fraction: f64,
    /// Shape served before the meal.
    pub shape: FoodShape,
    /// Placement on the tray: plate center plus food offset, meters.
    pub position: [f64; 2],
    pub volume_before_ml: f64,
    pub volume_after_ml: f64,
    pub nutrients: NutrientVector,
    pub consumed: NutrientVector,
}

/// `truth.json` of one synthetic meal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealTruth {
    pub meal_id: String,
    pub tray: Plane,
    pub plate_poses: Vec<PlatePose>,
    pub items: Vec<TruthItem>,
    pub consumed_total: NutrientVector,
}

/// `manifest.json` at the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub options: SynthOptions,
    pub meals: Vec<String>,
}

/// Plate and bowl models used by generated scenes.
pub fn default_plate_library() -> PlateLibrary {
    let m = |c, rim, h, flat: f64, depth: f64| PlateModel {
        category: c,
        rim_radius: rim,
        rim_height: h,
        profile: vec![[0.0, -depth], [flat, -depth], [rim, 0.0]],
    };
    PlateLibrary {
        plates: vec![
            m(PlateCategory::MainPlate, 0.085, 0.015, 0.055, 0.012),
            m(PlateCategory::SaladBowl, 0.075, 0.045, 0.040, 0.040),
            m(PlateCategory::SoupBowl, 0.070, 0.050, 0.038, 0.045),
            m(PlateCategory::DessertBowl, 0.060, 0.035, 0.032, 0.030),
            m(PlateCategory::Packaged, 0.040, 0.030, 0.032, 0.028),
        ],
    }
}

fn plate_for(food: FoodCategory) -> PlateCategory {
    match food {
        FoodCategory::Soup => PlateCategory::SoupBowl,
        FoodCategory::MainCourse | FoodCategory::Vegetable | FoodCategory::SideDish => {
            PlateCategory::MainPlate
        }
        FoodCategory::Salad => PlateCategory::SaladBowl,
        FoodCategory::Dessert => PlateCategory::DessertBowl,
        FoodCategory::Sauce => PlateCategory::Packaged,
    }
}

/// Shape that fits in a disc of radius `room`.
fn random_shape(rng: &mut ChaCha8Rng, food: FoodCategory, room: f64) -> FoodShape {
    let a = room * rng.gen_range(0.6..0.95);
    let kind = match food {
        FoodCategory::Soup => 0,
        FoodCategory::Salad | FoodCategory::Vegetable => 2,
        FoodCategory::Sauce | FoodCategory::Dessert => 1,
        _ => rng.gen_range(0..3),
    };
    match kind {
        0 => {
            let h = rng.gen_range(0.010..0.022f64).min(a);
            FoodShape::SphericalCap {
                sphere_radius: 0.5 * (a * a / h + h),
                height: h,
            }
        }
        1 => {
            // aspect at most 1.5:1
            let angle = rng.gen_range(0.59..0.98f64);
            let h = if food == FoodCategory::Sauce {
                rng.gen_range(0.010..0.020)
            } else {
                rng.gen_range(0.012..0.028)
            };
            FoodShape::Box {
                size_x: 2.0 * a * angle.cos(),
                size_y: 2.0 * a * angle.sin(),
                height: h,
            }
        }
        _ => FoodShape::Cone {
            radius: a,
            height: rng.gen_range(0.015..0.032),
        },
    }
}

/// Recipe totals with rough per-category magnitudes.
fn random_nutrients(rng: &mut ChaCha8Rng, food: FoodCategory) -> NutrientVector {
    let kcal = match food {
        FoodCategory::MainCourse => rng.gen_range(250.0..600.0),
        FoodCategory::Soup | FoodCategory::SideDish => rng.gen_range(80.0..250.0),
        FoodCategory::Sauce => rng.gen_range(40.0..120.0),
        FoodCategory::Vegetable | FoodCategory::Salad => rng.gen_range(20.0..120.0),
        FoodCategory::Dessert => rng.gen_range(120.0..350.0),
    };
    let salt = rng.gen_range(0.1..2.5);
    NutrientVector {
        calories: kcal,
        cho: kcal * rng.gen_range(0.05..0.15),
        fat: kcal * rng.gen_range(0.01..0.05),
        protein: kcal * rng.gen_range(0.01..0.08),
        salt,
        fiber: rng.gen_range(0.2..6.0),
        sodium: salt * 0.393,
    }
}

struct MealPlan {
    spec: SceneSpec,
    fractions: Vec<f64>,
    nutrients: Vec<NutrientVector>,
}

fn plan_meal(seed: u64, opts: &SynthOptions, lib: &PlateLibrary) -> MealPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut menu = vec![
        FoodCategory::Soup,
        FoodCategory::MainCourse,
        FoodCategory::Vegetable,
        FoodCategory::SideDish,
        FoodCategory::Salad,
        FoodCategory::Dessert,
    ];
    menu.shuffle(&mut rng);
    let k = rng.gen_range(2..=4);
    let mut foods: Vec<FoodCategory> = menu[..k].to_vec();
    if k < 4 && foods.contains(&FoodCategory::Salad) && rng.gen_bool(0.7) {
        foods.push(FoodCategory::Sauce);
    }
    let mut quadrants = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
    quadrants.shuffle(&mut rng);

    let mut plates = Vec::new();
    let mut placed = Vec::new();
    for (i, &food) in foods.iter().enumerate() {
        let pc = plate_for(food);
        let model = lib.get(pc).expect("library covers every category").clone();
        let q = quadrants[i];
        let center = [
            0.1 * q[0] + rng.gen_range(-0.006..0.006),
            0.1 * q[1] + rng.gen_range(-0.006..0.006),
        ];
        let room = flat_bottom_radius(&model) - 0.004;
        let shape = random_shape(&mut rng, food, room);
        let slack = (room - shape.footprint_radius()).max(0.0);
        let (r, a) = (rng.gen_range(0.0..=slack), rng.gen_range(0.0..std::f64::consts::TAU));
        plates.push(PlacedPlate {
            model,
            center,
            color: plate_color(pc),
        });
        placed.push(PlacedFood {
            plate: i,
            offset: [r * a.cos(), r * a.sin()],
            shape,
            category: food,
            color: food_color(food),
        });
    }
    let mut fractions: Vec<f64> = foods
        .iter()
        .map(|_| match rng.gen_range(0..10) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen_range(0.05..0.95),
        })
        .collect();
    if let Some(s) = foods.iter().position(|f| *f == FoodCategory::Sauce) {
        let salad = foods.iter().position(|f| *f == FoodCategory::Salad).expect("sauce implies salad");
        fractions[s] = fractions[salad];
    }
    let nutrients = foods.iter().map(|f| random_nutrients(&mut rng, *f)).collect();
    let tilt = opts.max_tilt_deg.abs();
    let tray = TraySpec {
        distance: rng.gen_range(0.44..0.48),
        tilt_x_deg: if tilt > 0.0 { rng.gen_range(-tilt..tilt) } else { 0.0 },
        tilt_y_deg: if tilt > 0.0 { rng.gen_range(-tilt..tilt) } else { 0.0 },
        color: TRAY_COLOR,
    };
    let spec = SceneSpec {
        width: opts.width,
        height: opts.height,
        intrinsics: CameraIntrinsics {
            fx: opts.focal_px,
            fy: opts.focal_px,
            cx: (opts.width as f64 - 1.0) / 2.0,
            cy: (opts.height as f64 - 1.0) / 2.0,
            depth_scale: 0.001,
        },
        tray,
        plates,
        foods: placed,
        noise: opts.noise,
        seed: rng.gen(),
    };
    MealPlan {
        spec,
        fractions,
        nutrients,
    }
}

fn meal_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct RenderedMeal {
    id: String,
    plan: MealPlan,
    before: (crate::data::RgbdFrame, super::SceneTruth),
    after: (crate::data::RgbdFrame, super::SceneTruth),
}

fn write_meal(root: &Path, m: &RenderedMeal) -> Result<PathBuf> {
    let dir = root.join(&m.id);
    for (name, (frame, truth)) in [("before", &m.before), ("after", &m.after)] {
        let d = dir.join(name);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        save_frame(frame, &d.join("color.png"), &d.join("depth.png"))?;
        save_label_map(&truth.food, &d.join("food.png"))?;
        save_label_map(&truth.plate, &d.join("plate.png"))?;
    }
    save_intrinsics(&m.plan.spec.intrinsics, &dir.join("intrinsics.json"))?;
    let spec = &m.plan.spec;
    let items: Vec<MealItem> = spec
        .foods
        .iter()
        .zip(&m.plan.nutrients)
        .zip(&m.before.1.volumes_ml)
        .map(|((f, n), v)| MealItem {
            food_category: f.category,
            plate_category: spec.plates[f.plate].model.category,
            nutrients: *n,
            // unit density
            served_weight_g: (v * 10.0).round() / 10.0,
        })
        .collect();
    #[derive(Serialize)]
    struct MealFile<'a> {
        meal_id: &'a str,
        items: &'a [MealItem],
    }
    write_json(&dir.join("meal.json"), &MealFile { meal_id: &m.id, items: &items })?;
    let truth_items: Vec<TruthItem> = items
        .iter()
        .enumerate()
        .map(|(i, it)| TruthItem {
            food_category: it.food_category,
            plate_category: it.plate_category,
            eaten_fraction: m.plan.fractions[i],
            shape: spec.foods[i].shape,
            position: {
                let f = &spec.foods[i];
                let c = spec.plates[f.plate].center;
                [c[0] + f.offset[0], c[1] + f.offset[1]]
            },
            volume_before_ml: m.before.1.volumes_ml[i],
            volume_after_ml: m.after.1.volumes_ml[i],
            nutrients: it.nutrients,
            consumed: it.nutrients.scale(m.plan.fractions[i]),
        })
        .collect();
    let truth = MealTruth {
        meal_id: m.id.clone(),
        tray: m.before.1.tray,
        plate_poses: m.before.1.plate_poses.clone(),
        consumed_total: truth_items.iter().map(|t| t.consumed).sum(),
        items: truth_items,
    };
    write_json(&dir.join("truth.json"), &truth)?;
    Ok(dir)
}

/// Generates `n` meals under `out` (`meal_0000`, ...) with before/after
/// captures, annotations, recipes and truth, plus `plates.json` and
/// `manifest.json` at the root. Returns the meal directories.
pub fn make_dataset(out: &Path, n: usize, seed: u64, opts: &SynthOptions) -> Result<Vec<PathBuf>> {
    if n < 3 {
        return Err(Error::Invalid(format!("a dataset needs at least 3 meals, got {n}")));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let lib = default_plate_library();
    let rendered: Vec<Result<RenderedMeal>> = par::map_range(n, |i| {
        let plan = plan_meal(meal_seed(seed, i), opts, &lib);
        let before = render_scene(&plan.spec)?;
        let mut eaten = make_eaten_scene(&plan.spec, &plan.fractions)?;
        eaten.seed = plan.spec.seed.wrapping_add(1);
        let after = render_scene(&eaten)?;
        Ok(RenderedMeal {
            id: format!("meal_{i:04}"),
            plan,
            before,
            after,
        })
    });
    let mut dirs = Vec::with_capacity(n);
    let mut ids = Vec::with_capacity(n);
    for r in rendered {
        let m = r?;
        dirs.push(write_meal(out, &m)?);
        ids.push(m.id);
    }
    lib.save(&out.join("plates.json"))?;
    write_json(
        &out.join("manifest.json"),
        &DatasetManifest {
            seed,
            options: opts.clone(),
            meals: ids,
        },
    )?;
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planned_meals_render() {
        let opts = SynthOptions::default();
        let lib = default_plate_library();
        for i in 0..12 {
            let plan = plan_meal(meal_seed(1, i), &opts, &lib);
            plan.spec.validate().unwrap();
            assert!((2..=4).contains(&plan.spec.foods.len()));
            if let Some(s) = plan.spec.foods.iter().position(|f| f.category == FoodCategory::Sauce) {
                let salad = plan.spec.foods.iter().position(|f| f.category == FoodCategory::Salad).unwrap();
                assert_eq!(plan.fractions[s], plan.fractions[salad]);
            }
        }
    }
}
