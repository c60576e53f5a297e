//! Plate-context relabeling of food segments: each connected food segment
//! takes the class maximizing a mix of its summed marginals and the
//! food-given-plate prior of the plate beneath it.

use serde::{Deserialize, Serialize};

use crate::data::{ClassProbs, LabelDomain, LabelMap, FOOD_CLASSES, PLATE_CLASSES};
use crate::error::{Error, Result};
use crate::par;
use crate::volumetry::connected_components;

const FOODS: usize = FOOD_CLASSES - 1;
const PLATES: usize = PLATE_CLASSES - 1;

/// p(food | plate) over the five plate and seven food categories
/// (background excluded), with the raw pixel counts it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceTable {
    pub p_food_given_plate: [[f64; FOODS]; PLATES],
    pub counts: [[u64; FOODS]; PLATES],
}

impl CooccurrenceTable {
    /// Add-one smoothed, row-normalized table from raw counts.
    pub fn from_counts(counts: [[u64; FOODS]; PLATES]) -> Self {
        let mut p = [[0.0; FOODS]; PLATES];
        for (row, c) in p.iter_mut().zip(&counts) {
            let total: f64 = c.iter().map(|v| *v as f64 + 1.0).sum();
            for (x, v) in row.iter_mut().zip(c) {
                *x = (*v as f64 + 1.0) / total;
            }
        }
        Self {
            p_food_given_plate: p,
            counts,
        }
    }

    /// p(food | plate) for 1-based plate and food labels.
    pub fn prob(&self, plate: u8, food: u8) -> f64 {
        self.p_food_given_plate[plate as usize - 1][food as usize - 1]
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.p_food_given_plate.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(p.is_finite() && *p > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "co-occurrence row {} is not a positive distribution (sums to {sum})",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Counts food pixels per (plate, food) class pair across annotated frames.
pub fn estimate_cooccurrence(annotated: &[(LabelMap, LabelMap)]) -> Result<CooccurrenceTable> {
    if annotated.is_empty() {
        return Err(Error::Empty("no annotations to count co-occurrences from".into()));
    }
    let mut counts = [[0u64; FOODS]; PLATES];
    for (food, plate) in annotated {
        if food.labels.len() != plate.labels.len() {
            return Err(Error::Dimension(format!(
                "food map {}x{} vs plate map {}x{}",
                food.width, food.height, plate.width, plate.height
            )));
        }
        for (&f, &p) in food.labels.iter().zip(&plate.labels) {
            if f as usize >= FOOD_CLASSES {
                return Err(Error::LabelOutOfRange { domain: "food", value: f, max: FOODS as u8 });
            }
            if p as usize >= PLATE_CLASSES {
                return Err(Error::LabelOutOfRange { domain: "plate", value: p, max: PLATES as u8 });
            }
            if f > 0 && p > 0 {
                counts[p as usize - 1][f as usize - 1] += 1;
            }
        }
    }
    Ok(CooccurrenceTable::from_counts(counts))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextParams {
    /// Weight of the summed network marginals.
    pub alpha: f64,
    /// Weight of the plate prior.
    pub beta: f64,
    /// Smallest kept segment at 64×64; scaled with image area.
    pub min_region_px: usize,
}

impl Default for ContextParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
            min_region_px: 25,
        }
    }
}

impl ContextParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.alpha) || !ok(self.beta) || self.alpha + self.beta == 0.0 {
            return Err(Error::Invalid(format!(
                "context weights must be >= 0 and not both zero (alpha {}, beta {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    /// Minimum segment size for a `width`×`height` map.
    pub fn min_region_for(&self, width: usize, height: usize) -> usize {
        (self.min_region_px as f64 * (width * height) as f64 / 4096.0).round() as usize
    }
}

/// Relabels every 8-connected non-background segment of `food_labels`.
pub fn refine_context(
    food_probs: &ClassProbs,
    food_labels: &LabelMap,
    plate_labels: &LabelMap,
    table: &CooccurrenceTable,
    params: &ContextParams,
) -> Result<LabelMap> {
    params.validate()?;
    let (w, h) = (food_labels.width, food_labels.height);
    for (what, ww, hh) in [
        ("probabilities", food_probs.width, food_probs.height),
        ("plate labels", plate_labels.width, plate_labels.height),
    ] {
        if (ww, hh) != (w, h) {
            return Err(Error::Dimension(format!("food labels {w}x{h} vs {what} {ww}x{hh}")));
        }
    }
    if food_probs.classes != FOOD_CLASSES {
        return Err(Error::Dimension(format!(
            "expected {FOOD_CLASSES} food classes, got {}",
            food_probs.classes
        )));
    }
    let mask: Vec<bool> = food_labels.labels.iter().map(|l| *l != 0).collect();
    let comps = connected_components(&mask, w, h);
    let min_px = params.min_region_for(w, h);
    let labels = par::map_slice(&comps, |comp| {
        if comp.len() < min_px {
            return 0;
        }
        segment_label(comp, food_probs, plate_labels, table, params)
    });
    let mut out = LabelMap::background(w, h, LabelDomain::Food);
    for (comp, label) in comps.iter().zip(labels) {
        for &i in comp {
            out.labels[i] = label;
        }
    }
    Ok(out)
}

fn segment_label(
    comp: &[usize],
    probs: &ClassProbs,
    plates: &LabelMap,
    table: &CooccurrenceTable,
    params: &ContextParams,
) -> u8 {
    let mut plate_votes = [0usize; PLATE_CLASSES];
    let mut mass = [0.0; FOOD_CLASSES];
    for &i in comp {
        plate_votes[(plates.labels[i] as usize).min(PLATE_CLASSES - 1)] += 1;
        for (m, p) in mass.iter_mut().zip(probs.pixel(i)) {
            *m += p;
        }
    }
    // majority plate; ties go to the lower label
    let plate = (0..PLATE_CLASSES).fold(0, |best, k| if plate_votes[k] > plate_votes[best] { k } else { best }) as u8;
    let n = comp.len() as f64;
    let mut best = (1u8, f64::NEG_INFINITY);
    for k in 1..FOOD_CLASSES as u8 {
        let prior = if plate == 0 { 0.0 } else { params.beta * n * table.prob(plate, k) };
        let score = params.alpha * mass[k as usize] + prior;
        if score > best.1 {
            best = (k, score);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn salad_only_on_salad_bowls() {
        let mk = |fl: u8, pl: u8, n: usize| {
            (
                LabelMap::new(n, 1, vec![fl; n], LabelDomain::Food).unwrap(),
                LabelMap::new(n, 1, vec![pl; n], LabelDomain::Plate).unwrap(),
            )
        };
        let t = estimate_cooccurrence(&[mk(6, 2, 600), mk(6, 2, 400), mk(2, 1, 50)]).unwrap();
        assert_eq!(t.prob(2, 6), 1001.0 / 1007.0);
        assert_eq!(t.prob(2, 2), 1.0 / 1007.0);
        assert_eq!(t.counts[0][1], 50);
        for k in 1..=7 {
            assert_eq!(t.prob(4, k), 1.0 / 7.0);
        }
        t.validate().unwrap();
    }

    #[test]
    fn empty_input_fails() {
        assert!(matches!(estimate_cooccurrence(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn rejects_both_weights_zero() {
        let p = ContextParams { alpha: 0.0, beta: 0.0, ..ContextParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn min_region_scales_with_area() {
        let p = ContextParams::default();
        assert_eq!(p.min_region_for(64, 64), 25);
        assert_eq!(p.min_region_for(256, 256), 400);
    }
}
