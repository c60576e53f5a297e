//! Nutrient accounting from before/after volumes, intake error metrics and
//! segmentation F-scores, plus text/CSV report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{FoodCategory, LabelMap, MealItem, NutrientVector, PlateCategory, FOOD_CLASSES, NUTRIENT_NAMES};
use crate::error::{Error, Result};
use crate::volumetry::ItemStatus;

/// Fraction of an item eaten: 1 − after/before, clamped to [0, 1].
pub fn consumed_ratio(v_before: f64, v_after: f64) -> Result<f64> {
    if !(v_before > 0.0) || !v_after.is_finite() {
        return Err(Error::Invalid(format!(
            "empty served item (volume before {v_before} mL, after {v_after} mL)"
        )));
    }
    Ok((1.0 - v_after / v_before).clamp(0.0, 1.0))
}

/// The item's recipe totals scaled by its consumed ratio.
pub fn consumed_nutrients(item: &MealItem, v_before: f64, v_after: f64) -> Result<NutrientVector> {
    Ok(item.nutrients.scale(consumed_ratio(v_before, v_after)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntakeItem {
    pub food_category: FoodCategory,
    pub plate_category: PlateCategory,
    pub v_before_ml: f64,
    pub v_after_ml: f64,
    pub ratio: f64,
    pub status: ItemStatus,
    pub consumed: NutrientVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntakeResult {
    pub meal_id: String,
    pub items: Vec<IntakeItem>,
    pub totals: NutrientVector,
}

impl IntakeResult {
    /// Builds the result from per-item records and already-decided ratios,
    /// summing consumed nutrients in item order.
    pub fn new(meal_id: impl Into<String>, items: Vec<IntakeItem>) -> Self {
        let totals = items.iter().map(|i| i.consumed).sum();
        Self {
            meal_id: meal_id.into(),
            items,
            totals,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FScores {
    /// Worst per-class Dice score, percent.
    pub f_min: f64,
    /// Dice over all food pixels pooled, percent.
    pub f_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meals: usize,
    /// Per nutrient, in [`NUTRIENT_NAMES`] order, native units.
    pub mae: [f64; 7],
    /// Per nutrient, percent.
    pub mre_pct: [f64; 7],
    /// Meals skipped from each MRE because the true value was zero.
    pub mre_skipped: [usize; 7],
    pub segmentation: Option<FScores>,
}

/// Mean absolute and mean relative error of predicted against true intake.
pub fn evaluate_intake(predicted: &[NutrientVector], truth: &[NutrientVector]) -> Result<EvalReport> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} ground-truth meals",
            predicted.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("no meals to evaluate".into()));
    }
    let mut abs = [0.0; 7];
    let mut rel = [0.0; 7];
    let mut rel_n = [0usize; 7];
    for (p, t) in predicted.iter().zip(truth) {
        let (p, t) = (p.to_array(), t.to_array());
        for k in 0..7 {
            let e = (p[k] - t[k]).abs();
            abs[k] += e;
            if t[k] != 0.0 {
                rel[k] += e / t[k].abs();
                rel_n[k] += 1;
            }
        }
    }
    let n = truth.len();
    let mut report = EvalReport {
        meals: n,
        mae: [0.0; 7],
        mre_pct: [0.0; 7],
        mre_skipped: [0; 7],
        segmentation: None,
    };
    for k in 0..7 {
        report.mae[k] = abs[k] / n as f64;
        report.mre_pct[k] = if rel_n[k] > 0 { 100.0 * rel[k] / rel_n[k] as f64 } else { 0.0 };
        report.mre_skipped[k] = n - rel_n[k];
    }
    Ok(report)
}

/// Per-class Dice scores for the food classes present in `gt`.
pub fn class_fscores(pred: &LabelMap, gt: &LabelMap) -> Result<Vec<(u8, f64)>> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mut p = [0usize; FOOD_CLASSES];
    let mut g = [0usize; FOOD_CLASSES];
    let mut both = [0usize; FOOD_CLASSES];
    for (&a, &b) in pred.labels.iter().zip(&gt.labels) {
        let (a, b) = (a as usize, b as usize);
        if a >= FOOD_CLASSES || b >= FOOD_CLASSES {
            return Err(Error::LabelOutOfRange {
                domain: "food",
                value: a.max(b) as u8,
                max: (FOOD_CLASSES - 1) as u8,
            });
        }
        p[a] += 1;
        g[b] += 1;
        if a == b {
            both[a] += 1;
        }
    }
    Ok((1..FOOD_CLASSES)
        .filter(|&k| g[k] > 0)
        .map(|k| (k as u8, 100.0 * 2.0 * both[k] as f64 / (p[k] + g[k]) as f64))
        .collect())
}

/// Worst per-class Dice and pooled Dice over all food pixels, in percent.
pub fn segmentation_fscores(pred: &LabelMap, gt: &LabelMap) -> Result<FScores> {
    let per_class = class_fscores(pred, gt)?;
    if per_class.is_empty() {
        return Err(Error::Empty("ground truth has no food pixels".into()));
    }
    let f_min = per_class.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let (mut hit, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels.iter().zip(&gt.labels) {
        np += (a != 0) as usize;
        ng += (b != 0) as usize;
        hit += (a != 0 && a == b) as usize;
    }
    Ok(FScores {
        f_min,
        f_sum: 100.0 * 2.0 * hit as f64 / (np + ng) as f64,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Invalid(format!("unknown report format {other:?} (text or csv)"))),
        }
    }
}

pub const CSV_HEADER: &str = "meal_id,item,food_category,plate_category,v_before_ml,v_after_ml,ratio,\
calories_kcal,cho_g,fat_g,protein_g,salt_g,fiber_g,sodium_g";

const NUTRIENT_UNITS: [&str; 7] = ["kcal", "g", "g", "g", "g", "g", "g"];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-item intake table with a totals row.
pub fn render_intake_report(results: &[IntakeResult], format: ReportFormat) -> String {
    let mut rows: Vec<[String; 14]> = Vec::new();
    let mut grand = NutrientVector::default();
    for r in results {
        for (i, it) in r.items.iter().enumerate() {
            let n = it.consumed.to_array();
            rows.push([
                r.meal_id.clone(),
                (i + 1).to_string(),
                it.food_category.name().to_string(),
                it.plate_category.name().to_string(),
                format!("{:.3}", it.v_before_ml),
                format!("{:.3}", it.v_after_ml),
                format!("{:.4}", it.ratio),
                format!("{:.3}", n[0]),
                format!("{:.3}", n[1]),
                format!("{:.3}", n[2]),
                format!("{:.3}", n[3]),
                format!("{:.3}", n[4]),
                format!("{:.3}", n[5]),
                format!("{:.3}", n[6]),
            ]);
        }
        grand += r.totals;
    }
    let t = grand.to_array();
    let mut total_row: [String; 14] = Default::default();
    total_row[0] = if results.len() == 1 { results[0].meal_id.clone() } else { String::new() };
    total_row[1] = "total".into();
    for k in 0..7 {
        total_row[7 + k] = format!("{:.3}", t[k]);
    }
    rows.push(total_row);

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for row in &rows {
                let line: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let header: Vec<&str> = CSV_HEADER.split(',').collect();
            let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
            for row in &rows {
                for (w, f) in width.iter_mut().zip(row) {
                    *w = (*w).max(f.len());
                }
            }
            let line = |cells: &mut dyn Iterator<Item = &str>, out: &mut String| {
                let parts: Vec<String> = cells
                    .zip(&width)
                    .enumerate()
                    .map(|(i, (c, w))| if i < 4 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                    .collect();
                out.push_str(parts.join("  ").trim_end());
                out.push('\n');
            };
            line(&mut header.iter().copied(), &mut out);
            for row in &rows {
                line(&mut row.iter().map(String::as_str), &mut out);
            }
        }
    }
    out
}

/// Published nutrient-intake errors on the original hospital dataset, shown
/// for context next to local results: (MAE, MRE %) per nutrient.
pub const REFERENCE_INTAKE_ERRORS: [(f64, f64); 7] = [
    (63.78, 12.71),
    (6.37, 12.08),
    (3.60, 13.78),
    (2.80, 17.19),
    (0.74, 15.89),
    (1.06, 16.87),
    (0.32, 16.47),
];
/// Published segmentation scores on the same dataset: (F_min, F_sum) %.
pub const REFERENCE_FSCORES: (f64, f64) = (71.59, 87.04);
pub const REFERENCE_LABEL: &str = "published reference (INIMD, not reproduced)";

const FSCORE_NOTE: &str = "F-scores: per-class Dice 2|P∩G|/(|P|+|G|) over food classes present in the \
ground truth; F_min is the worst class, F_sum pools all food pixels. Both are averaged over before-meal frames.";

/// Intake error table (MAE, MRE per nutrient) with segmentation scores and
/// the published reference row.
pub fn render_eval_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    let reference: Vec<String> = REFERENCE_INTAKE_ERRORS
        .iter()
        .zip(NUTRIENT_UNITS)
        .map(|((mae, mre), unit)| format!("{mae:.2}{unit} / {mre:.2}"))
        .collect();
    match format {
        ReportFormat::Csv => {
            out.push_str("row,nutrient,mae,unit,mre_pct,mre_skipped\n");
            for k in 0..7 {
                let _ = writeln!(
                    out,
                    "measured,{},{:.6},{},{:.6},{}",
                    NUTRIENT_NAMES[k], report.mae[k], NUTRIENT_UNITS[k], report.mre_pct[k], report.mre_skipped[k]
                );
            }
            for k in 0..7 {
                let (mae, mre) = REFERENCE_INTAKE_ERRORS[k];
                let _ = writeln!(out, "{},{},{mae:.2},{},{mre:.2},", csv_field(REFERENCE_LABEL), NUTRIENT_NAMES[k], NUTRIENT_UNITS[k]);
            }
            if let Some(f) = report.segmentation {
                let _ = writeln!(out, "measured,f_min,{:.6},%,,", f.f_min);
                let _ = writeln!(out, "measured,f_sum,{:.6},%,,", f.f_sum);
            }
            let _ = writeln!(out, "{},f_min,{:.2},%,,", csv_field(REFERENCE_LABEL), REFERENCE_FSCORES.0);
            let _ = writeln!(out, "{},f_sum,{:.2},%,,", csv_field(REFERENCE_LABEL), REFERENCE_FSCORES.1);
        }
        ReportFormat::Text => {
            let _ = writeln!(out, "Nutrient intake error over {} meals (MAE / MRE %)", report.meals);
            let label_w = REFERENCE_LABEL.len();
            let _ = write!(out, "{:<label_w$}", "");
            for name in NUTRIENT_NAMES {
                let _ = write!(out, "  {name:>20}");
            }
            out.push('\n');
            let _ = write!(out, "{:<label_w$}", "measured");
            for k in 0..7 {
                let cell = format!("{:.2}{} / {:.2}", report.mae[k], NUTRIENT_UNITS[k], report.mre_pct[k]);
                let _ = write!(out, "  {cell:>20}");
            }
            out.push('\n');
            let _ = write!(out, "{REFERENCE_LABEL}");
            for cell in &reference {
                let _ = write!(out, "  {cell:>20}");
            }
            out.push('\n');
            if report.mre_skipped.iter().any(|s| *s > 0) {
                let skipped: Vec<String> = NUTRIENT_NAMES
                    .iter()
                    .zip(report.mre_skipped)
                    .filter(|(_, s)| *s > 0)
                    .map(|(n, s)| format!("{n} {s}"))
                    .collect();
                let _ = writeln!(out, "MRE skipped zero-truth meals: {}", skipped.join(", "));
            }
            out.push('\n');
            let _ = writeln!(out, "Segmentation (before-meal frames)  F_min %  F_sum %");
            match report.segmentation {
                Some(f) => {
                    let _ = writeln!(out, "{:<label_w$}  {:>7.2}  {:>7.2}", "measured", f.f_min, f.f_sum);
                }
                None => {
                    let _ = writeln!(out, "{:<label_w$}  {:>7}  {:>7}", "measured", "n/a", "n/a");
                }
            }
            let _ = writeln!(out, "{REFERENCE_LABEL}  {:>7.2}  {:>7.2}", REFERENCE_FSCORES.0, REFERENCE_FSCORES.1);
            let _ = writeln!(out, "{FSCORE_NOTE}");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(protein: f64) -> MealItem {
        MealItem {
            food_category: FoodCategory::MainCourse,
            plate_category: PlateCategory::MainPlate,
            nutrients: NutrientVector { protein, calories: 300.0, ..NutrientVector::default() },
            served_weight_g: 250.0,
        }
    }

    #[test]
    fn empty_served_item_is_an_error() {
        assert!(consumed_nutrients(&item(20.0), 0.0, 0.0).is_err());
        assert!(consumed_ratio(-1.0, 0.0).is_err());
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }

    #[test]
    fn format_parses() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
