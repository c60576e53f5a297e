//! Data-parallel kernels with and without rayon.
//!
//! With the default `parallel` feature each kernel runs on the global pool
//! and on a one-thread pool. Built with `--no-default-features` the same
//! kernels run on the sequential fallback; compare the two builds with
//! `--save-baseline` / `--baseline`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use platewise::crf::{refine_crf, CrfParams};
use platewise::data::{CameraIntrinsics, ClassProbs, FoodCategory, PlateCategory, PlateModel};
use platewise::par;
use platewise::segnet::{Network, NetworkConfig};
use platewise::synth::{
    food_color, plate_color, render_scene, FoodShape, NoiseSpec, PlacedFood, PlacedPlate, SceneSpec, TraySpec,
    TRAY_COLOR,
};
use platewise::volumetry::{item_volume, BaseSurface};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(width: usize, height: usize, f: f64) -> SceneSpec {
    let model = PlateModel::flat(PlateCategory::MainPlate, 0.11);
    SceneSpec {
        width,
        height,
        intrinsics: CameraIntrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            depth_scale: 0.001,
        },
        tray: TraySpec { distance: 0.45, tilt_x_deg: 1.0, tilt_y_deg: -2.0, color: TRAY_COLOR },
        plates: vec![PlacedPlate { color: plate_color(model.category), model, center: [0.0, 0.0] }],
        foods: vec![PlacedFood {
            plate: 0,
            offset: [0.01, -0.005],
            shape: FoodShape::SphericalCap { sphere_radius: 0.06, height: 0.025 },
            category: FoodCategory::MainCourse,
            color: food_color(FoodCategory::MainCourse),
        }],
        noise: NoiseSpec { depth_sigma: 0.001, dropout: 0.01 },
        seed: 1,
    }
}

fn random_probs(w: usize, h: usize, c: usize) -> ClassProbs {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut data = Vec::with_capacity(w * h * c);
    for _ in 0..w * h {
        let p: Vec<f64> = (0..c).map(|_| rng.gen_range(0.01..1.0)).collect();
        let z: f64 = p.iter().sum();
        data.extend(p.iter().map(|v| v / z));
    }
    ClassProbs::new(w, h, c, data).unwrap()
}

/// Runs `f` on the ambient pool and, when rayon is enabled, on one thread.
fn both_ways(c: &mut Criterion, name: &str, f: impl Fn() + Sync + Send) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    let label = if par::is_parallel() { "rayon" } else { "sequential" };
    group.bench_function(BenchmarkId::from_parameter(label), |b| b.iter(&f));
    #[cfg(feature = "parallel")]
    {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function(BenchmarkId::from_parameter("rayon-1-thread"), |b| {
            b.iter(|| one.install(&f))
        });
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let (frame, _) = render_scene(&scene(128, 96, 92.0)).unwrap();
    let probs = random_probs(128, 96, 8);
    let crf = CrfParams::default();
    both_ways(c, "crf_128x96", || {
        std::hint::black_box(refine_crf(&probs, &frame.color, &crf).unwrap());
    });

    let net = Network::new(NetworkConfig::default(), 0).unwrap();
    let x = net.frame_tensor(&frame).unwrap();
    both_ways(c, "segnet_forward_128x96", || {
        std::hint::black_box(net.forward(&x).unwrap());
    });

    let spec = scene(640, 480, 460.0);
    let (big, truth) = render_scene(&spec).unwrap();
    let mask = truth.food.mask_of(FoodCategory::MainCourse.index());
    let tray = truth.tray;
    both_ways(c, "item_volume_640x480", || {
        std::hint::black_box(item_volume(&big, &mask, &BaseSurface::Tray(tray), &tray).unwrap());
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
