use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross, norm, sub, Plane, PointCloud, Vec3};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    /// Maximum point-to-plane distance of an inlier, meters.
    pub inlier_threshold: f64,
    /// Minimum consensus as a fraction of the candidate points.
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 500,
            inlier_threshold: 0.002,
            min_inlier_fraction: 0.3,
            seed: 0,
        }
    }
}

/// Least-squares plane through `points` (smallest-eigenvalue direction of
/// the scatter matrix).
fn fit_least_squares(points: &[Vec3], idx: &[usize]) -> Plane {
    let n = idx.len() as f64;
    let mut c = [0.0; 3];
    for &i in idx {
        for k in 0..3 {
            c[k] += points[i][k];
        }
    }
    c = c.map(|v| v / n);
    let mut m = Matrix3::<f64>::zeros();
    for &i in idx {
        let d = sub(points[i], c);
        for r in 0..3 {
            for s in 0..3 {
                m[(r, s)] += d[r] * d[s];
            }
        }
    }
    let eig = SymmetricEigen::new(m);
    let k = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(k);
    Plane::from_point_normal(c, [v[0], v[1], v[2]])
}

fn inliers(points: &[Vec3], plane: &Plane, threshold: f64) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| plane.height(**p).abs() <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC plane with least-squares refinement over the consensus set.
/// Returns the camera-facing plane and its inlier count.
pub fn fit_tray_plane(cloud: &PointCloud, params: &RansacParams) -> Result<(Plane, usize)> {
    let pts = &cloud.points;
    if params.iterations == 0 || !(params.inlier_threshold > 0.0) {
        return Err(Error::Invalid("RANSAC needs iterations > 0 and threshold > 0".into()));
    }
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "plane fit needs at least 3 points, got {}",
            pts.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Plane, usize)> = None;
    let threshold = params.inlier_threshold;
    for _ in 0..params.iterations {
        let a = rng.gen_range(0..pts.len());
        let b = rng.gen_range(0..pts.len());
        let c = rng.gen_range(0..pts.len());
        let nrm = cross(sub(pts[b], pts[a]), sub(pts[c], pts[a]));
        let scale = norm(sub(pts[b], pts[a])) * norm(sub(pts[c], pts[a]));
        if !(norm(nrm) > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            continue;
        }
        let plane = Plane::from_point_normal(pts[a], nrm);
        let count = pts.iter().filter(|p| plane.height(**p).abs() <= threshold).count();
        if best.as_ref().map_or(true, |(_, c)| count > *c) {
            best = Some((plane, count));
        }
    }
    let Some((plane, _)) = best else {
        return Err(Error::Degenerate("all sampled point triples are collinear".into()));
    };
    let need = ((params.min_inlier_fraction * pts.len() as f64).ceil() as usize).max(3);
    let mut set = inliers(pts, &plane, threshold);
    if set.len() < need {
        return Err(Error::Degenerate(format!(
            "plane consensus {} below the required {need} of {} points",
            set.len(),
            pts.len()
        )));
    }
    let mut refined = fit_least_squares(pts, &set);
    let again = inliers(pts, &refined, threshold);
    if again.len() >= set.len() && again != set {
        set = again;
        refined = fit_least_squares(pts, &set);
    }
    Ok((refined, set.len()))
}
