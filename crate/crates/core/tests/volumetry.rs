use std::time::Instant;

use platewise::data::{CameraIntrinsics, FoodCategory, PlateCategory, PlateModel};
use platewise::synth::{
    food_color, plate_color, render_scene, FoodShape, NoiseSpec, PlacedFood, PlacedPlate,
    SceneSpec, TraySpec, TRAY_COLOR,
};
use platewise::volumetry::{
    depth_to_cloud, fit_tray_plane, item_volume, plate_base_surface, BaseSurface, RansacParams,
};

fn scene(shape: FoodShape, model: PlateModel, noise: NoiseSpec) -> SceneSpec {
    SceneSpec {
        width: 640,
        height: 480,
        intrinsics: CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            depth_scale: 0.001,
        },
        tray: TraySpec {
            distance: 0.4,
            tilt_x_deg: 0.0,
            tilt_y_deg: 0.0,
            color: TRAY_COLOR,
        },
        plates: vec![PlacedPlate {
            color: plate_color(model.category),
            model,
            center: [0.0, 0.0],
        }],
        foods: vec![PlacedFood {
            plate: 0,
            offset: [0.0, 0.0],
            shape,
            category: FoodCategory::MainCourse,
            color: food_color(FoodCategory::MainCourse),
        }],
        noise,
        seed: 11,
    }
}

/// Renders the scene and measures the single food item end to end:
/// tray plane from background pixels, plate pose from the plate mask.
fn measured_volume(spec: &SceneSpec) -> (f64, f64) {
    let (frame, truth) = render_scene(spec).unwrap();
    let cloud = depth_to_cloud(&frame, None).unwrap();
    let background: Vec<bool> = truth.plate.labels.iter().map(|l| *l == 0).collect();
    let (tray, _) = fit_tray_plane(&cloud.select(&background), &RansacParams::default()).unwrap();
    let plate_mask = truth.plate.mask_of(spec.plates[0].model.category.index());
    let base = plate_base_surface(&plate_mask, spec.width, &spec.intrinsics, &spec.plates[0].model, &tray).unwrap();
    let food = truth.food.mask_of(FoodCategory::MainCourse.index());
    let est = item_volume(&frame, &food, &base, &tray).unwrap();
    (est.volume_ml, truth.volumes_ml[0])
}

fn flat() -> PlateModel {
    PlateModel::flat(PlateCategory::MainPlate, 0.11)
}

#[test]
fn noiseless_cap_and_box_match_closed_form() {
    for shape in [
        FoodShape::SphericalCap { sphere_radius: 0.05, height: 0.02 },
        FoodShape::Box { size_x: 0.1, size_y: 0.1, height: 0.02 },
    ] {
        let t = Instant::now();
        let (got, want) = measured_volume(&scene(shape, flat(), NoiseSpec::NONE));
        let rel = (got - want).abs() / want;
        println!("{shape:?}: {got:.3} mL vs {want:.3} mL ({:.2}%) in {:?}", 100.0 * rel, t.elapsed());
        assert!(rel < 0.02);
    }
}

#[test]
fn noisy_cap_within_five_percent() {
    let (got, want) = measured_volume(&scene(
        FoodShape::SphericalCap { sphere_radius: 0.05, height: 0.02 },
        flat(),
        NoiseSpec { depth_sigma: 0.001, dropout: 0.0 },
    ));
    assert!((got - want).abs() / want < 0.05, "{got} vs {want}");
}

#[test]
fn bowl_pose_recovered() {
    let bowl = PlateModel::new(
        PlateCategory::SoupBowl,
        0.08,
        0.05,
        vec![[0.0, -0.045], [0.045, -0.045], [0.08, 0.0]],
    )
    .unwrap();
    let mut spec = scene(FoodShape::SphericalCap { sphere_radius: 0.05, height: 0.015 }, bowl, NoiseSpec::NONE);
    spec.plates[0].center = [0.03, -0.02];
    let (frame, truth) = render_scene(&spec).unwrap();
    let cloud = depth_to_cloud(&frame, None).unwrap();
    let background: Vec<bool> = truth.plate.labels.iter().map(|l| *l == 0).collect();
    let (tray, _) = fit_tray_plane(&cloud.select(&background), &RansacParams::default()).unwrap();
    let mask = truth.plate.mask_of(PlateCategory::SoupBowl.index());
    let base = plate_base_surface(&mask, spec.width, &spec.intrinsics, &spec.plates[0].model, &tray).unwrap();
    let BaseSurface::Plate { pose, .. } = &base else { panic!() };
    let c = truth.plate_poses[0].center;
    let err = ((pose.center[0] - c[0]).powi(2) + (pose.center[1] - c[1]).powi(2) + (pose.center[2] - c[2]).powi(2)).sqrt();
    println!("center error {err}");
    assert!(err < 0.002, "center error {err}");
    let food = truth.food.mask_of(FoodCategory::MainCourse.index());
    let v = item_volume(&frame, &food, &base, &tray).unwrap().volume_ml;
    assert!((v - truth.volumes_ml[0]).abs() / truth.volumes_ml[0] < 0.02, "{v} vs {}", truth.volumes_ml[0]);
}
