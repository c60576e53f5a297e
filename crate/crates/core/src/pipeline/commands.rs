//! File-level commands behind the CLI. Every output lands under the given
//! output directory and is written atomically.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::config::{EvalSplit, PipelineConfig};
use super::resample::{downsample_frame, downsample_labels};
use super::stages::{intake_from_measurement, measure_meal, segment_frame, FrameLabels, MealMeasurement, Refinement, Segmentation};
use crate::context::{estimate_cooccurrence, CooccurrenceTable};
use crate::data::{
    load_meal_record, read_json, save_label_map, save_prob_map, split_dataset, write_atomic_bytes, write_json,
    LabelMap, MealRecord, NutrientVector, PlateLibrary,
};
use crate::error::{Error, Result};
use crate::intake::{
    evaluate_intake, render_eval_report, render_intake_report, segmentation_fscores, EvalReport, FScores,
    IntakeResult, ReportFormat,
};
use crate::par;
use crate::segnet::{evaluate_loss, load_checkpoint, pixel_accuracy, save_checkpoint, train, Network, TrainHistory, TrainSample};
use crate::synth::{default_plate_library, make_dataset, MealTruth};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.json";

fn ext(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Text => "txt",
        ReportFormat::Csv => "csv",
    }
}

/// Meal directories (those holding `meal.json`) under `root`, sorted.
pub fn list_meals(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join("meal.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Invalid(format!("no meal directories under {}", root.display())));
    }
    Ok(dirs)
}

fn dataset_root(cfg: &PipelineConfig) -> Result<&Path> {
    cfg.dataset
        .as_deref()
        .ok_or_else(|| Error::Invalid("no dataset given (--dataset or \"dataset\" in the config)".into()))
}

fn load_records(root: &Path) -> Result<Vec<MealRecord>> {
    list_meals(root)?.iter().map(|d| load_meal_record(d)).collect()
}

/// Plate models from the config, else `plates.json` beside the meal
/// directory, else the built-in library.
pub fn plate_library_for(cfg: &PipelineConfig, meal_dir: &Path) -> Result<PlateLibrary> {
    if let Some(p) = &cfg.plate_library {
        return PlateLibrary::load(p);
    }
    if let Some(p) = meal_dir.parent().map(|d| d.join("plates.json")).filter(|p| p.is_file()) {
        return PlateLibrary::load(&p);
    }
    Ok(default_plate_library())
}

pub fn cmd_synth(cfg: &PipelineConfig, n: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let dirs = make_dataset(out, n, cfg.seed, &cfg.synth)?;
    info!("wrote {} meals to {}", dirs.len(), out.display());
    Ok(dirs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub train_meals: Vec<String>,
    pub val_meals: Vec<String>,
    pub test_meals: Vec<String>,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    /// Pixel accuracy of the kept parameters on the training set,
    /// `(food, plate)`.
    pub train_accuracy: (f64, f64),
    pub history: TrainHistory,
}

fn samples_for(net: &Network, records: &[MealRecord]) -> Result<(Vec<TrainSample>, Vec<(LabelMap, LabelMap)>)> {
    let (h, w) = net.config.input_size;
    let per_meal = par::map_slice(records, |r| -> Result<Vec<(TrainSample, (LabelMap, LabelMap))>> {
        let mut out = Vec::new();
        for after in [false, true] {
            let has = if after { &r.after } else { &r.before };
            if has.is_none() {
                continue;
            }
            let frame = r.load_frame(after)?;
            let (food, plate) = r.load_annotation(after)?;
            let small = downsample_frame(&frame, w, h)?;
            let sample = TrainSample::new(
                net,
                &small,
                &downsample_labels(&food, w, h)?,
                &downsample_labels(&plate, w, h)?,
            )?;
            out.push((sample, (food, plate)));
        }
        Ok(out)
    });
    let mut samples = Vec::new();
    let mut annotations = Vec::new();
    for meal in per_meal {
        for (s, a) in meal? {
            samples.push(s);
            annotations.push(a);
        }
    }
    Ok((samples, annotations))
}

/// Trains the network on the training split with early stopping on the
/// validation split, and counts food/plate co-occurrences on the training
/// annotations. Writes the checkpoint, the table and a training summary.
pub fn cmd_train(cfg: &PipelineConfig, out: &Path) -> Result<TrainSummary> {
    let records = load_records(dataset_root(cfg)?)?;
    let split = split_dataset(records, cfg.seed)?;
    let ids = |v: &[MealRecord]| v.iter().map(|r| r.meal_id.clone()).collect::<Vec<_>>();
    let net = Network::new(cfg.network.clone(), cfg.seed)?;
    let (train_set, annotations) = samples_for(&net, &split.train)?;
    let (val_set, _) = samples_for(&net, &split.val)?;
    info!(
        "training on {} frames from {} meals, validating on {} frames",
        train_set.len(),
        split.train.len(),
        val_set.len()
    );
    let initial_val_loss = evaluate_loss(&net, &val_set, cfg.train.loss_weights, cfg.train.batch_size);
    let (net, history) = train(net, &train_set, &val_set, &cfg.train, cfg.seed)?;
    let final_val_loss = evaluate_loss(&net, &val_set, cfg.train.loss_weights, cfg.train.batch_size);
    let table = estimate_cooccurrence(&annotations)?;
    save_checkpoint(&net, &out.join(CHECKPOINT_FILE))?;
    write_json(&out.join(COOCCURRENCE_FILE), &table)?;
    let summary = TrainSummary {
        train_meals: ids(&split.train),
        val_meals: ids(&split.val),
        test_meals: ids(&split.test),
        initial_val_loss,
        final_val_loss,
        train_accuracy: pixel_accuracy(&net, &train_set),
        history,
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    info!("validation loss {initial_val_loss:.5} -> {final_val_loss:.5}");
    Ok(summary)
}

/// Network and co-occurrence table for the segmentation stages.
pub struct Models {
    pub net: Network,
    pub table: CooccurrenceTable,
}

pub fn load_models(cfg: &PipelineConfig) -> Result<Option<Models>> {
    if cfg.use_gt_labels {
        return Ok(None);
    }
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::Invalid(format!("segmentation needs a {what} (or --use-gt-labels)")))
    };
    let net = load_checkpoint(&need(&cfg.checkpoint, "checkpoint")?)?;
    let table: CooccurrenceTable = read_json(&need(&cfg.cooccurrence, "co-occurrence table")?)?;
    table.validate()?;
    Ok(Some(Models { net, table }))
}

fn frame_labels(
    cfg: &PipelineConfig,
    models: Option<&Models>,
    record: &MealRecord,
    after: bool,
) -> Result<(FrameLabels, Option<Segmentation>)> {
    match models {
        None => {
            let (food, plate) = record.load_annotation(after)?;
            Ok((FrameLabels { food, plate }, None))
        }
        Some(m) => {
            let frame = record.load_frame(after)?;
            let seg = segment_frame(
                &m.net,
                &frame,
                Refinement {
                    crf: &cfg.crf,
                    context: &cfg.context,
                    table: &m.table,
                },
            )?;
            Ok((seg.labels.clone(), Some(seg)))
        }
    }
}

fn dump_segmentation(dir: &Path, labels: &FrameLabels, seg: Option<&Segmentation>) -> Result<()> {
    save_label_map(&labels.food, &dir.join("food.png"))?;
    save_label_map(&labels.plate, &dir.join("plate.png"))?;
    if let Some(s) = seg {
        save_prob_map(&s.network.food, &dir.join("network_food.pwpm"))?;
        save_prob_map(&s.network.plate, &dir.join("network_plate.pwpm"))?;
        save_prob_map(&s.crf_food, &dir.join("crf_food.pwpm"))?;
        save_label_map(&s.context_food, &dir.join("context_food.png"))?;
    }
    Ok(())
}

/// Labels both frames of a meal and writes them as PNGs.
pub fn cmd_segment(cfg: &PipelineConfig, meal_dir: &Path, out: &Path) -> Result<()> {
    let models = load_models(cfg)?;
    let record = load_meal_record(meal_dir)?;
    let dir = out.join(&record.meal_id);
    for (after, name) in [(false, "before"), (true, "after")] {
        let present = if after { &record.after } else { &record.before };
        if present.is_none() {
            continue;
        }
        let (labels, seg) = frame_labels(cfg, models.as_ref(), &record, after)?;
        if cfg.dump_stages {
            dump_segmentation(&dir.join("stages").join(name), &labels, seg.as_ref())?;
        }
        save_label_map(&labels.food, &dir.join(name).join("food.png"))?;
        save_label_map(&labels.plate, &dir.join(name).join("plate.png"))?;
    }
    Ok(())
}

/// Results of running one meal through every stage.
pub struct MealRun {
    pub measurement: MealMeasurement,
    pub intake: IntakeResult,
    pub before_labels: FrameLabels,
}

/// Segments (or loads annotations for) both frames, measures every item
/// and applies the consumed ratios. Writes `volumes.json` and
/// `intake.json` under `out/<meal_id>`, plus stage dumps when enabled.
pub fn run_meal(cfg: &PipelineConfig, models: Option<&Models>, meal_dir: &Path, out: &Path) -> Result<MealRun> {
    let record = load_meal_record(meal_dir)?;
    let before = record.load_frame(false)?;
    let after = record.load_frame(true)?;
    let (bl, bseg) = frame_labels(cfg, models, &record, false)?;
    let (al, aseg) = frame_labels(cfg, models, &record, true)?;
    let library = plate_library_for(cfg, meal_dir)?;
    let measurement = measure_meal(&record.items, (&before, &bl), (&after, &al), &library, &cfg.ransac)
        .map_err(|e| match e {
            Error::Empty(m) => Error::Empty(format!("meal {}: {m}", record.meal_id)),
            e => e,
        })?;
    let intake = intake_from_measurement(&record.meal_id, &record.items, &measurement)?;
    let dir = out.join(&record.meal_id);
    if cfg.dump_stages {
        let stages = dir.join("stages");
        dump_segmentation(&stages.join("before"), &bl, bseg.as_ref())?;
        dump_segmentation(&stages.join("after"), &al, aseg.as_ref())?;
        for (i, item) in measurement.items.iter().enumerate() {
            for (mesh, when) in item.meshes.iter().zip(["before", "after"]) {
                if let Some(mesh) = mesh {
                    let name = format!("item{}_{}_{when}.obj", i + 1, item.food_category);
                    write_atomic_bytes(&stages.join("meshes").join(name), mesh.to_ascii().as_bytes())?;
                }
            }
        }
    }
    write_json(&dir.join("volumes.json"), &measurement)?;
    write_json(&dir.join("intake.json"), &intake)?;
    Ok(MealRun {
        measurement,
        intake,
        before_labels: bl,
    })
}

/// Volumes only.
pub fn cmd_volume(cfg: &PipelineConfig, meal_dir: &Path, out: &Path) -> Result<MealMeasurement> {
    let models = load_models(cfg)?;
    Ok(run_meal(cfg, models.as_ref(), meal_dir, out)?.measurement)
}

/// Full intake for one meal, with its report.
pub fn cmd_intake(cfg: &PipelineConfig, meal_dir: &Path, out: &Path) -> Result<IntakeResult> {
    let models = load_models(cfg)?;
    let run = run_meal(cfg, models.as_ref(), meal_dir, out)?;
    let report = render_intake_report(std::slice::from_ref(&run.intake), cfg.report_format);
    let path = out
        .join(&run.intake.meal_id)
        .join(format!("intake.{}", ext(cfg.report_format)));
    write_atomic_bytes(&path, report.as_bytes())?;
    Ok(run.intake)
}

/// Scores intake estimates against the synthetic truth of each meal and
/// segmentation against the before-meal annotations.
pub fn cmd_eval(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    let root = dataset_root(cfg)?;
    let mut meals = list_meals(root)?;
    if cfg.eval_split == EvalSplit::Test {
        meals = split_dataset(meals, cfg.seed)?.test;
        meals.sort();
    }
    if meals.is_empty() {
        return Err(Error::Empty("evaluation split is empty".into()));
    }
    let models = load_models(cfg)?;
    info!("evaluating {} meals", meals.len());
    let runs = par::map_slice(&meals, |dir| -> Result<(NutrientVector, NutrientVector, Option<IntakeResult>, Option<FScores>)> {
        let truth: MealTruth = read_json(&dir.join("truth.json"))?;
        let record = load_meal_record(dir)?;
        let fscore = |labels: &LabelMap| -> Result<Option<FScores>> {
            let (gt, _) = record.load_annotation(false)?;
            match segmentation_fscores(labels, &gt) {
                Ok(f) => Ok(Some(f)),
                Err(Error::Empty(_)) => Ok(None),
                Err(e) => Err(e),
            }
        };
        match run_meal(cfg, models.as_ref(), dir, out) {
            Ok(run) => {
                let f = fscore(&run.before_labels.food)?;
                Ok((run.intake.totals, truth.consumed_total, Some(run.intake), f))
            }
            Err(Error::Empty(msg)) => {
                warn!("{msg}; counting zero intake");
                let f = match models.as_ref() {
                    Some(_) => Some(FScores::default()),
                    None => None,
                };
                Ok((NutrientVector::default(), truth.consumed_total, None, f))
            }
            Err(e) => Err(e),
        }
    });
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut results = Vec::new();
    let mut scores = Vec::new();
    for r in runs {
        let (p, t, res, f) = r?;
        pred.push(p);
        truth.push(t);
        results.extend(res);
        scores.extend(f);
    }
    let mut report = evaluate_intake(&pred, &truth)?;
    if !scores.is_empty() {
        let n = scores.len() as f64;
        report.segmentation = Some(FScores {
            f_min: scores.iter().map(|f| f.f_min).sum::<f64>() / n,
            f_sum: scores.iter().map(|f| f.f_sum).sum::<f64>() / n,
        });
    }
    let e = ext(cfg.report_format);
    write_json(&out.join("eval.json"), &report)?;
    write_atomic_bytes(&out.join(format!("eval.{e}")), render_eval_report(&report, cfg.report_format).as_bytes())?;
    write_atomic_bytes(
        &out.join(format!("intake.{e}")),
        render_intake_report(&results, cfg.report_format).as_bytes(),
    )?;
    Ok(report)
}

/// Re-renders the combined intake report from `intake.json` files found
/// one level below `input`.
pub fn cmd_report(cfg: &PipelineConfig, input: &Path, out: &Path) -> Result<String> {
    let entries = std::fs::read_dir(input).map_err(|e| Error::io(input, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(input, e))?.path().join("intake.json");
        if p.is_file() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no intake.json files under {}", input.display())));
    }
    let results = files.iter().map(|p| read_json(p)).collect::<Result<Vec<IntakeResult>>>()?;
    let doc = render_intake_report(&results, cfg.report_format);
    write_atomic_bytes(&out.join(format!("report.{}", ext(cfg.report_format))), doc.as_bytes())?;
    Ok(doc)
}
