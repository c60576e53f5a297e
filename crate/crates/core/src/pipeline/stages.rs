//! Per-frame segmentation and per-meal measurement, free of file I/O.

use log::warn;
use serde::{Deserialize, Serialize};

use super::resample::{downsample_frame, upsample_labels};
use crate::context::{refine_context, ContextParams, CooccurrenceTable};
use crate::crf::{refine_crf, CrfParams};
use crate::data::{
    ClassProbs, FoodCategory, LabelDomain, LabelMap, MealItem, PlateCategory, PlateLibrary, ProbabilityMaps,
    RgbdFrame,
};
use crate::error::{Error, Result};
use crate::intake::{consumed_nutrients, IntakeItem, IntakeResult};
use crate::segnet::Network;
use crate::volumetry::{
    connected_components, consumed_volumes, depth_to_cloud, fit_tray_plane, item_volume, plate_base_surface,
    BaseSurface, ItemStatus, ItemVolumes, Plane, RansacParams, TriMesh,
};

/// Food and plate label maps of one frame at capture resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabels {
    pub food: LabelMap,
    pub plate: LabelMap,
}

/// Segmentation of one frame with its intermediate maps.
#[derive(Clone, Debug)]
pub struct Segmentation {
    /// Network outputs at network resolution.
    pub network: ProbabilityMaps,
    /// Food marginals after the CRF, network resolution.
    pub crf_food: ClassProbs,
    /// Food labels after context refinement, network resolution.
    pub context_food: LabelMap,
    /// Final labels at capture resolution.
    pub labels: FrameLabels,
}

#[derive(Clone, Copy, Debug)]
pub struct Refinement<'a> {
    pub crf: &'a CrfParams,
    pub context: &'a ContextParams,
    pub table: &'a CooccurrenceTable,
}

/// Network forward pass, CRF on the food map, plate-context relabeling,
/// then nearest-neighbor upsampling to the frame's resolution.
pub fn segment_frame(net: &Network, frame: &RgbdFrame, refine: Refinement<'_>) -> Result<Segmentation> {
    let (h, w) = net.config.input_size;
    let small = downsample_frame(frame, w, h)?;
    let network = net
        .forward_frames(&[&small])?
        .pop()
        .ok_or_else(|| Error::Invalid("network returned no output".into()))?;
    let crf_food = refine_crf(&network.food, &small.color, refine.crf)?;
    let food_labels = crf_food.argmax(LabelDomain::Food);
    let plate_labels = network.plate.argmax(LabelDomain::Plate);
    let context_food = refine_context(&crf_food, &food_labels, &plate_labels, refine.table, refine.context)?;
    let labels = FrameLabels {
        food: upsample_labels(&context_food, frame.width, frame.height)?,
        plate: upsample_labels(&plate_labels, frame.width, frame.height)?,
    };
    Ok(Segmentation {
        network,
        crf_food,
        context_food,
        labels,
    })
}

/// Measured before/after state of one served item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMeasurement {
    pub food_category: FoodCategory,
    pub plate_category: PlateCategory,
    pub before_ml: f64,
    pub after_ml: f64,
    pub before_points: usize,
    pub after_points: usize,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub meshes: [Option<TriMesh>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MealMeasurement {
    pub tray_before: Plane,
    pub tray_after: Plane,
    pub items: Vec<ItemMeasurement>,
    pub warnings: Vec<String>,
}

/// RANSAC tray plane from pixels labeled neither food nor plate, falling
/// back to the whole frame when too few remain.
pub fn fit_frame_tray(frame: &RgbdFrame, labels: &FrameLabels, params: &RansacParams) -> Result<Plane> {
    let cloud = depth_to_cloud(frame, None)?;
    let bg: Vec<bool> = labels
        .food
        .labels
        .iter()
        .zip(&labels.plate.labels)
        .map(|(f, p)| *f == 0 && *p == 0)
        .collect();
    match fit_tray_plane(&cloud.select(&bg), params) {
        Ok((plane, _)) => Ok(plane),
        Err(e) => {
            warn!("tray fit on background pixels failed ({e}); retrying on the whole frame");
            Ok(fit_tray_plane(&cloud, params)?.0)
        }
    }
}

/// Pixels of the plate(s) under `food`: components of the plate label map
/// touching the food mask, preferring those of the expected category.
/// Returns the region and the plate category it was taken from.
fn plate_region(food: &[bool], plate: &LabelMap, expected: PlateCategory) -> Option<(Vec<bool>, PlateCategory)> {
    let mut votes = [0usize; 6];
    for (f, p) in food.iter().zip(&plate.labels) {
        if *f && *p != 0 {
            votes[*p as usize] += 1;
        }
    }
    let category = if votes[expected.index() as usize] > 0 {
        expected
    } else {
        let best = (1..6).fold(0, |b, k| if votes[k] > votes[b] { k } else { b });
        PlateCategory::from_index(best as u8)?
    };
    let mask = plate.mask_of(category.index());
    let mut region = vec![false; mask.len()];
    for comp in connected_components(&mask, plate.width, plate.height) {
        if comp.iter().any(|&i| food[i]) {
            for i in comp {
                region[i] = true;
            }
        }
    }
    Some((region, category))
}

fn base_for(
    region: Option<&(Vec<bool>, PlateCategory)>,
    frame: &RgbdFrame,
    tray: &Plane,
    library: &PlateLibrary,
) -> Result<BaseSurface> {
    let Some((mask, category)) = region else {
        return Ok(BaseSurface::Tray(*tray));
    };
    let model = library
        .get(*category)
        .ok_or_else(|| Error::Invalid(format!("no plate model for {category}")))?;
    plate_base_surface(mask, frame.width, &frame.intrinsics, model, tray)
}

/// Per-item volumes before and after the meal.
///
/// Items follow `items` (the served recipe list) and are found by food
/// category. The after-meal mask of an item is limited to the plate region
/// found under it before the meal, because leftovers can be scattered.
pub fn measure_meal(
    items: &[MealItem],
    before: (&RgbdFrame, &FrameLabels),
    after: (&RgbdFrame, &FrameLabels),
    library: &PlateLibrary,
    ransac: &RansacParams,
) -> Result<MealMeasurement> {
    let (bf, bl) = before;
    let (af, al) = after;
    if (bf.width, bf.height) != (af.width, af.height) {
        return Err(Error::Dimension("before and after frames differ in size".into()));
    }
    if !bl.food.labels.iter().any(|l| *l != 0) {
        return Err(Error::Empty("no food found in the before-meal frame".into()));
    }
    let tray_before = fit_frame_tray(bf, bl, ransac)?;
    let tray_after = fit_frame_tray(af, al, ransac)?;
    let mut warnings = Vec::new();
    for k in 1..8u8 {
        let cat = FoodCategory::from_index(k).expect("food label");
        if bl.food.labels.contains(&k) && !items.iter().any(|it| it.food_category == cat) {
            warnings.push(format!("segmented {cat} matches no served item; ignored"));
        }
    }
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        let k = item.food_category.index();
        let mut m = ItemMeasurement {
            food_category: item.food_category,
            plate_category: item.plate_category,
            before_ml: 0.0,
            after_ml: 0.0,
            before_points: 0,
            after_points: 0,
            warnings: Vec::new(),
            meshes: [None, None],
        };
        let food_b = bl.food.mask_of(k);
        if !food_b.iter().any(|b| *b) {
            m.warnings.push(format!("{} not found before the meal", item.food_category));
            out.push(m);
            continue;
        }
        let region = plate_region(&food_b, &bl.plate, item.plate_category);
        match &region {
            None => m.warnings.push("no plate under the food; measuring from the tray".into()),
            Some((_, c)) if *c != item.plate_category => {
                m.warnings.push(format!("served on {} but segmented on {c}", item.plate_category))
            }
            _ => {}
        }
        let base_b = base_for(region.as_ref(), bf, &tray_before, library)?;
        match item_volume(bf, &food_b, &base_b, &tray_before) {
            Ok(est) => {
                m.before_ml = est.volume_ml;
                m.before_points = est.points;
                m.warnings.extend(est.warnings);
                m.meshes[0] = Some(est.mesh);
            }
            Err(Error::Empty(msg)) => m.warnings.push(format!("before: {msg}")),
            Err(e) => return Err(e),
        }
        let mut food_a = al.food.mask_of(k);
        if let Some((reg, _)) = &region {
            let outside = food_a.iter().zip(reg).filter(|(f, r)| **f && !**r).count();
            if outside > 0 {
                m.warnings.push(format!("{outside} after-meal pixels outside the plate ignored"));
            }
            for (f, r) in food_a.iter_mut().zip(reg) {
                *f &= *r;
            }
        }
        if food_a.iter().any(|f| *f) {
            let base_a = base_for(region.as_ref(), af, &tray_after, library)?;
            match item_volume(af, &food_a, &base_a, &tray_after) {
                Ok(est) => {
                    m.after_ml = est.volume_ml;
                    m.after_points = est.points;
                    m.warnings.extend(est.warnings);
                    m.meshes[1] = Some(est.mesh);
                }
                Err(Error::Empty(msg)) => m.warnings.push(format!("after: {msg}")),
                Err(e) => return Err(e),
            }
        }
        for w in &m.warnings {
            warn!("{}: {w}", item.food_category);
        }
        out.push(m);
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(MealMeasurement {
        tray_before,
        tray_after,
        items: out,
        warnings,
    })
}

/// Consumed ratios and nutrients for measured items.
pub fn intake_from_measurement(meal_id: &str, items: &[MealItem], m: &MealMeasurement) -> Result<IntakeResult> {
    let vols: Vec<ItemVolumes> = m
        .items
        .iter()
        .map(|it| ItemVolumes {
            food_category: it.food_category,
            plate_category: it.plate_category,
            before_ml: it.before_ml,
            after_ml: it.after_ml,
        })
        .collect();
    let consumed = consumed_volumes(&vols);
    let mut out = Vec::with_capacity(items.len());
    for ((item, v), c) in items.iter().zip(&vols).zip(&consumed) {
        let nutrients = match c.status {
            ItemStatus::Measured => consumed_nutrients(item, v.before_ml, v.after_ml)?,
            _ => item.nutrients.scale(c.ratio),
        };
        out.push(IntakeItem {
            food_category: item.food_category,
            plate_category: item.plate_category,
            v_before_ml: v.before_ml,
            v_after_ml: v.after_ml,
            ratio: c.ratio,
            status: c.status,
            consumed: nutrients,
        });
    }
    Ok(IntakeResult::new(meal_id, out))
}
