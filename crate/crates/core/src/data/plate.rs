use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, PlateCategory};
use crate::error::{Error, Result};

/// Rotationally symmetric plate or bowl.
///
/// `profile` holds `(radius, z)` samples of the interior surface, with `z`
/// measured from the rim plane (non-positive: the interior lies below the
/// rim). The rim plane itself sits `rim_height` above the tray.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateModel {
    pub category: PlateCategory,
    pub rim_radius: f64,
    #[serde(default)]
    pub rim_height: f64,
    pub profile: Vec<[f64; 2]>,
}

impl PlateModel {
    pub fn new(
        category: PlateCategory,
        rim_radius: f64,
        rim_height: f64,
        profile: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let m = Self {
            category,
            rim_radius,
            rim_height,
            profile,
        };
        m.validate()?;
        Ok(m)
    }

    /// A flat disc lying on the tray.
    pub fn flat(category: PlateCategory, rim_radius: f64) -> Self {
        Self {
            category,
            rim_radius,
            rim_height: 0.0,
            profile: vec![[0.0, 0.0], [rim_radius, 0.0]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("plate model {}: {m}", self.category)));
        if self.profile.len() < 2 {
            return bad("profile needs at least 2 samples".into());
        }
        if !(self.rim_radius > 0.0) || !(self.rim_height >= 0.0) {
            return bad("rim radius must be positive and rim height non-negative".into());
        }
        if self.profile.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return bad("profile radii must be strictly increasing".into());
        }
        if self.profile.iter().any(|s| !(s[1] <= 0.0) || !(s[0] >= 0.0)) {
            return bad("profile heights must be <= 0 and radii >= 0".into());
        }
        if self.profile[self.profile.len() - 1][0] > self.rim_radius + 1e-12 {
            return bad("profile extends past the rim".into());
        }
        Ok(())
    }

    /// Profile depth below the rim plane at radial distance `r`, linearly
    /// interpolated and held constant past either end.
    pub fn profile_z(&self, r: f64) -> f64 {
        let p = &self.profile;
        if r <= p[0][0] {
            return p[0][1];
        }
        let last = p[p.len() - 1];
        if r >= last[0] {
            return last[1];
        }
        let i = p.partition_point(|s| s[0] <= r);
        let (a, b) = (p[i - 1], p[i]);
        let t = (r - a[0]) / (b[0] - a[0]);
        a[1] + t * (b[1] - a[1])
    }

    /// Height of the interior surface above the tray at radius `r`.
    pub fn surface_height(&self, r: f64) -> f64 {
        self.rim_height + self.profile_z(r.min(self.rim_radius))
    }
}

/// Plate models keyed by category, serialized as `{"plates": [...]}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlateLibrary {
    pub plates: Vec<PlateModel>,
}

impl PlateLibrary {
    pub fn get(&self, category: PlateCategory) -> Option<&PlateModel> {
        self.plates.iter().find(|m| m.category == category)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lib: Self = read_json(path)?;
        for m in &lib.plates {
            m.validate()?;
        }
        Ok(lib)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}
