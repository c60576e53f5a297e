use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SceneSpec, TraySpec};
use crate::data::{LabelDomain, LabelMap, PlateCategory, RgbdFrame};
use crate::error::{Error, Result};
use crate::par;
use crate::volumetry::{Plane, PlatePose};

type Vec3 = [f64; 3];

/// Ground truth extracted before noise is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub food: LabelMap,
    pub plate: LabelMap,
    /// Analytic volume of each food, in spec order.
    pub volumes_ml: Vec<f64>,
    pub tray: Plane,
    pub plate_poses: Vec<PlatePose>,
}

/// Camera-frame axes of the tray: in-plane `u`, `v`, and `up` toward the
/// camera, with the tray origin on the optical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct TrayFrame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub up: Vec3,
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl TrayFrame {
    pub fn new(t: &TraySpec) -> Self {
        let (sx, cx) = t.tilt_x_deg.to_radians().sin_cos();
        let (sy, cy) = t.tilt_y_deg.to_radians().sin_cos();
        // R = Ry * Rx applied to the camera axes
        let rot = |p: Vec3| -> Vec3 {
            let q = [p[0], cx * p[1] - sx * p[2], sx * p[1] + cx * p[2]];
            [cy * q[0] + sy * q[2], q[1], -sy * q[0] + cy * q[2]]
        };
        Self {
            origin: [0.0, 0.0, t.distance],
            u: rot([1.0, 0.0, 0.0]),
            v: rot([0.0, 1.0, 0.0]),
            up: rot([0.0, 0.0, -1.0]),
        }
    }

    pub fn to_camera(&self, s: f64, t: f64, h: f64) -> Vec3 {
        std::array::from_fn(|k| self.origin[k] + s * self.u[k] + t * self.v[k] + h * self.up[k])
    }

    pub fn plane(&self) -> Plane {
        Plane::from_point_normal(self.origin, self.up)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Owner {
    Tray,
    Plate(usize),
    Food(usize),
}

/// Height of the scene above the tray at tray coordinates `(s, t)` and the
/// object that attains it.
fn height_field(spec: &SceneSpec, s: f64, t: f64) -> (f64, Owner) {
    let mut best = (0.0, Owner::Tray);
    for (i, p) in spec.plates.iter().enumerate() {
        let r = (s - p.center[0]).hypot(t - p.center[1]);
        if r > p.model.rim_radius {
            continue;
        }
        let h = if p.model.category == PlateCategory::Packaged {
            p.model.rim_height
        } else {
            p.model.surface_height(r)
        };
        if h >= best.0 || matches!(best.1, Owner::Tray) {
            best = (h, Owner::Plate(i));
        }
    }
    for (j, f) in spec.foods.iter().enumerate() {
        let p = &spec.plates[f.plate];
        if p.model.category == PlateCategory::Packaged {
            continue;
        }
        let (dx, dy) = (s - p.center[0] - f.offset[0], t - p.center[1] - f.offset[1]);
        let sh = f.shape.height_at(dx, dy);
        if sh <= 0.0 {
            continue;
        }
        let h = p.model.surface_height((s - p.center[0]).hypot(t - p.center[1])) + sh;
        if h > best.0 {
            best = (h, Owner::Food(j));
        }
    }
    best
}

fn max_height(spec: &SceneSpec) -> f64 {
    let plates = spec.plates.iter().map(|p| p.model.rim_height);
    let foods = spec.foods.iter().map(|f| {
        let m = &spec.plates[f.plate].model;
        m.surface_height(0.0) + f.shape.height()
    });
    plates.chain(foods).fold(0.0, f64::max)
}

/// Step of the ray march along the ray, meters.
const MARCH_STEP: f64 = 5e-4;

struct Hit {
    depth: f64,
    owner: Owner,
    st: [f64; 2],
}

fn cast(spec: &SceneSpec, frame: &TrayFrame, top: f64, u: usize, v: usize) -> Hit {
    let k = &spec.intrinsics;
    let d = [(u as f64 - k.cx) / k.fx, (v as f64 - k.cy) / k.fy, 1.0];
    let a = dot(d, frame.up);
    let b = -dot(frame.origin, frame.up);
    let at = |lam: f64| {
        let x = [lam * d[0], lam * d[1], lam * d[2]];
        let rel = [x[0] - frame.origin[0], x[1] - frame.origin[1], x[2] - frame.origin[2]];
        let (s, t, h) = (dot(rel, frame.u), dot(rel, frame.v), dot(rel, frame.up));
        let (surf, owner) = height_field(spec, s, t);
        (h <= surf, owner, [s, t])
    };
    let lam_top = (top - b) / a;
    let lam_tray = -b / a;
    let len = (d[0] * d[0] + d[1] * d[1] + 1.0).sqrt();
    let dl = MARCH_STEP / len;
    let steps = ((lam_tray - lam_top) / dl).ceil() as usize;
    let mut prev = lam_top;
    for i in 1..=steps {
        let lam = if i == steps { lam_tray } else { lam_top + i as f64 * dl };
        if at(lam).0 {
            let (mut lo, mut hi) = (prev, lam);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if at(mid).0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (_, owner, st) = at(hi);
            return Hit { depth: hi, owner, st };
        }
        prev = lam;
    }
    let (_, owner, st) = at(lam_tray);
    Hit {
        depth: lam_tray,
        owner,
        st,
    }
}

fn check_frustum(spec: &SceneSpec, frame: &TrayFrame) -> Result<()> {
    let k = &spec.intrinsics;
    for (i, p) in spec.plates.iter().enumerate() {
        for n in 0..32 {
            let a = n as f64 * std::f64::consts::TAU / 32.0;
            let r = p.model.rim_radius;
            let x = frame.to_camera(p.center[0] + r * a.cos(), p.center[1] + r * a.sin(), p.model.rim_height);
            let (u, v) = k.project(x);
            if !(x[2] > 0.0 && u >= 0.0 && v >= 0.0 && u <= (spec.width - 1) as f64 && v <= (spec.height - 1) as f64) {
                return Err(Error::Invalid(format!(
                    "plate {i} ({}) extends outside the camera frustum",
                    p.model.category
                )));
            }
        }
    }
    Ok(())
}

/// Renders depth, color and exact labels, then applies the scene's depth noise.
pub fn render_scene(spec: &SceneSpec) -> Result<(RgbdFrame, SceneTruth)> {
    spec.validate()?;
    let frame = TrayFrame::new(&spec.tray);
    if dot(frame.up, [0.0, 0.0, -1.0]) <= 0.0 {
        return Err(Error::Invalid("tray faces away from the camera".into()));
    }
    check_frustum(spec, &frame)?;
    let top = max_height(spec) + 1e-3;
    let (w, h) = (spec.width, spec.height);
    let rows: Vec<Vec<Hit>> = par::map_range(h, |v| (0..w).map(|u| cast(spec, &frame, top, u, v)).collect());

    let mut depth = Vec::with_capacity(w * h);
    let mut color = Vec::with_capacity(3 * w * h);
    let mut food = Vec::with_capacity(w * h);
    let mut plate = Vec::with_capacity(w * h);
    for hit in rows.iter().flatten() {
        depth.push(hit.depth);
        let under = spec.plates.iter().position(|p| {
            (hit.st[0] - p.center[0]).hypot(hit.st[1] - p.center[1]) <= p.model.rim_radius
        });
        plate.push(under.map_or(0, |i| spec.plates[i].model.category.index()));
        let (rgb, f) = match hit.owner {
            Owner::Tray => (spec.tray.color, 0),
            Owner::Food(j) => (spec.foods[j].color, spec.foods[j].category.index()),
            Owner::Plate(i) => {
                let sealed = spec.plates[i].model.category == PlateCategory::Packaged;
                match spec.foods.iter().find(|f| sealed && f.plate == i) {
                    Some(f) => (spec.plates[i].color, f.category.index()),
                    None => (spec.plates[i].color, 0),
                }
            }
        };
        color.extend_from_slice(&rgb);
        food.push(f);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    if spec.noise.depth_sigma > 0.0 || spec.noise.dropout > 0.0 {
        let normal = Normal::new(0.0, spec.noise.depth_sigma.max(0.0))
            .map_err(|e| Error::Invalid(format!("depth noise: {e}")))?;
        for d in depth.iter_mut() {
            let drop = rng.gen::<f64>() < spec.noise.dropout;
            let n = normal.sample(&mut rng);
            *d = if drop { 0.0 } else { (*d + n).max(0.0) };
        }
    }

    let truth = SceneTruth {
        food: LabelMap::new(w, h, food, LabelDomain::Food)?,
        plate: LabelMap::new(w, h, plate, LabelDomain::Plate)?,
        volumes_ml: spec.foods.iter().map(|f| f.shape.volume_ml()).collect(),
        tray: frame.plane(),
        plate_poses: spec
            .plates
            .iter()
            .map(|p| PlatePose {
                center: frame.to_camera(p.center[0], p.center[1], 0.0),
                orientation: frame.up,
            })
            .collect(),
    };
    let rgbd = RgbdFrame::new(w, h, color, depth, spec.intrinsics)?;
    Ok((rgbd, truth))
}
