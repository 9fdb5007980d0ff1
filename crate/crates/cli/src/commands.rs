//! The four operator commands: generate, train, eval, predict.
//!
//! Every command is a pure function of (config, input files): output files
//! carry no timestamps, so reruns are byte-identical.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use numstr_core::datagen::corpus::{synthesize_corpus, CorpusConfig};
use numstr_core::datagen::idx::{save_idx_images, save_idx_labels};
use numstr_core::datagen::{
    generate_dataset, load_idx_with_writers, load_manifests, load_split, resize_to_input,
    DatasetRecord, GrayImage, InkConvention, Split,
};
use numstr_core::error::{Error, Result};
use numstr_core::eval::{
    confusion, emit_report, summarize_pipeline, topk_accuracy, ClassifierRates, ConfusionMatrix,
    EvalReport, ReportFormat,
};
use numstr_core::fusion::{
    pipeline_dynamic, pipeline_end_to_end, pipeline_end_to_end_l, write_decisions, DecisionRecord,
    FusionConfig, FusionDecision, ModelBank, ModelSet, Pipeline,
};
use numstr_core::modelzoo::{build_spec, class_to_local, ClassifierKind};
use numstr_core::nncore::{
    load_model, predict, save_model, train, SampleSet, Tensor,
};

use crate::config::ExperimentConfig;

/// Generate the configured dataset splits, synthesizing the digit corpus
/// first when requested and absent.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Value> {
    if let Some(count) = cfg.corpus.synthesize {
        if !cfg.corpus.images.exists() || !cfg.corpus.labels.exists() {
            let corpus = synthesize_corpus(&CorpusConfig {
                count,
                seed: cfg.seed,
                ..CorpusConfig::default()
            });
            if let Some(dir) = cfg.corpus.images.parent() {
                fs::create_dir_all(dir)?;
            }
            if let Some(dir) = cfg.corpus.labels.parent() {
                fs::create_dir_all(dir)?;
            }
            save_idx_images(&cfg.corpus.images, &corpus.images)?;
            save_idx_labels(&cfg.corpus.labels, &corpus.labels)?;
            eprintln!(
                "synthesized a {count}-digit corpus at {}",
                cfg.corpus.images.display()
            );
        }
    }
    let pool = load_idx_with_writers(
        &cfg.corpus.images,
        &cfg.corpus.labels,
        cfg.corpus.writers.as_deref(),
    )?;
    eprintln!("loaded {} corpus glyphs", pool.len());
    // the master seed governs generation regardless of how the config was
    // constructed
    let gen = numstr_core::datagen::GenConfig {
        seed: cfg.seed,
        ..cfg.gen.clone()
    };
    let manifests = generate_dataset(&pool, &gen, &cfg.data_dir())?;
    for m in &manifests {
        eprintln!(
            "{}: {} samples -> {}",
            m.split,
            m.counts_per_length.total(),
            m.images_path.display()
        );
    }
    Ok(serde_json::to_value(&manifests)?)
}

fn split_records(cfg: &ExperimentConfig, split: Split) -> Result<Vec<DatasetRecord>> {
    let manifests = load_manifests(&cfg.data_dir())?;
    let manifest = manifests
        .iter()
        .find(|m| m.split == split)
        .ok_or_else(|| {
            Error::Usage(format!(
                "split {split} is not part of the generated dataset; run generate first"
            ))
        })?;
    load_split(manifest)
}

/// Class label of a record for one classifier kind, if the record belongs
/// to that classifier's training domain.
fn label_for(kind: ClassifierKind, record: &DatasetRecord) -> Option<usize> {
    let length = record.sample.length;
    match kind {
        ClassifierKind::Length => Some(length - 1),
        ClassifierKind::C1110 => record.sample.omega.map(|o| o.value() as usize),
        ClassifierKind::C1 | ClassifierKind::C2 | ClassifierKind::C3 => {
            let omega = record.sample.omega?;
            class_to_local(kind, omega).ok()
        }
    }
}

/// Assemble the (inputs, labels) rows for one classifier, honoring the
/// per-length cap in record order.
fn training_rows(
    records: &[DatasetRecord],
    kind: ClassifierKind,
    per_length_cap: Option<usize>,
) -> Result<SampleSet<f32>> {
    let mut taken_per_length = [0usize; 4];
    let mut rows: Vec<&DatasetRecord> = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let Some(label) = label_for(kind, record) else {
            continue;
        };
        let cap_slot = &mut taken_per_length[record.sample.length - 1];
        if per_length_cap.is_some_and(|cap| *cap_slot >= cap) {
            continue;
        }
        *cap_slot += 1;
        rows.push(record);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Usage(format!(
            "no samples available to train classifier {kind}"
        )));
    }
    let images = numstr_core::datagen::stack_inputs(&rows)?;
    SampleSet::new(images, labels)
}

/// Train one classifier from the generated dataset and save the model.
pub fn cmd_train(cfg: &ExperimentConfig, kind: ClassifierKind) -> Result<Value> {
    let section = cfg.train_for(kind);
    let train_records = split_records(cfg, Split::Train)?;
    let val_records = split_records(cfg, Split::Validation)?;
    let train_set = training_rows(&train_records, kind, section.per_length_cap)?;
    let val_set = training_rows(&val_records, kind, section.per_length_cap)?;
    eprintln!(
        "training {kind}: {} train / {} validation samples",
        train_set.len(),
        val_set.len()
    );
    let spec = build_spec(kind);
    let (state, log) = train(&spec, &train_set, &val_set, &section.config)?;
    fs::create_dir_all(cfg.models_dir())?;
    let model_path = cfg.model_path(kind);
    save_model(&model_path, &spec, &state)?;
    let log_path = cfg.models_dir().join(format!("{}.trainlog.json", kind.name()));
    fs::write(&log_path, serde_json::to_string_pretty(&log)? + "\n")?;
    eprintln!(
        "{kind}: best validation accuracy {:.4} at epoch {} ({} epochs run)",
        log.best_val_accuracy,
        log.best_epoch,
        log.epochs.len()
    );
    Ok(json!({
        "kind": kind.name(),
        "model": model_path,
        "trainlog": log_path,
        "best_epoch": log.best_epoch,
        "best_val_accuracy": log.best_val_accuracy,
        "epochs_run": log.epochs.len(),
        "stop_reason": log.stop_reason,
    }))
}

/// Load every model file present under the models directory.
pub fn load_model_set(models_dir: &Path) -> Result<ModelSet> {
    let mut set = ModelSet::new();
    for kind in ClassifierKind::all() {
        let path = models_dir.join(format!("{}.nstr", kind.name()));
        if path.exists() {
            let (spec, state) = load_model(&path)?;
            set.insert(kind, spec, state);
        }
    }
    Ok(set)
}

fn run_pipeline(
    models: &ModelSet,
    fusion: &FusionConfig,
    pipeline: Pipeline,
    input: Tensor<f32>,
) -> Result<FusionDecision> {
    // (1, 64, 64) sample -> (1, 1, 64, 64) batch
    let side = numstr_core::modelzoo::INPUT_SIDE;
    let input = input.reshaped(&[1, 1, side, side])?;
    let mut bank = ModelBank::new(models, input);
    match pipeline {
        Pipeline::DynamicSelection => pipeline_dynamic(&mut bank, fusion),
        Pipeline::EndToEnd => pipeline_end_to_end(&mut bank),
        Pipeline::EndToEndLength => pipeline_end_to_end_l(&mut bank, fusion),
    }
}

/// Chunked forward passes over arbitrary records for one classifier.
fn probability_log(
    models: &ModelSet,
    kind: ClassifierKind,
    rows: &[&DatasetRecord],
) -> Result<Vec<Vec<f32>>> {
    let (spec, state) = models
        .get(kind)
        .ok_or_else(|| Error::Usage(format!("model for {kind} is not loaded")))?;
    let chunks: Vec<&[&DatasetRecord]> = rows.chunks(64).collect();
    let per_chunk: Vec<Result<Vec<Vec<f32>>>> = chunks
        .par_iter()
        .map(|chunk| {
            let inputs = numstr_core::datagen::stack_inputs(chunk)?;
            let probs = predict(state, spec, &inputs)?;
            Ok((0..chunk.len()).map(|i| probs.row(i).to_vec()).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(rows.len());
    for c in per_chunk {
        out.extend(c?);
    }
    Ok(out)
}

/// Top-1/Top-2 rates for every loaded classifier on its slice of the test
/// split, plus the length classifier's confusion matrix.
fn classifier_section(
    models: &ModelSet,
    records: &[DatasetRecord],
) -> Result<(
    std::collections::BTreeMap<String, ClassifierRates>,
    Option<ConfusionMatrix>,
)> {
    let mut rates = std::collections::BTreeMap::new();
    let mut length_confusion = None;
    for kind in ClassifierKind::all() {
        if !models.contains(kind) {
            continue;
        }
        let rows: Vec<&DatasetRecord> = records
            .iter()
            .filter(|r| label_for(kind, r).is_some())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let truths: Vec<usize> = rows.iter().map(|r| label_for(kind, r).unwrap()).collect();
        let probs = probability_log(models, kind, &rows)?;
        rates.insert(
            kind.name().to_string(),
            ClassifierRates {
                top1_pct: topk_accuracy(&probs, &truths, 1)?,
                top2_pct: topk_accuracy(&probs, &truths, 2)?,
            },
        );
        if kind == ClassifierKind::Length {
            let preds: Vec<usize> = probs
                .iter()
                .map(|p| numstr_core::nncore::topk(p, 1)[0].0)
                .collect();
            length_confusion = Some(confusion(&truths, &preds, 4)?);
        }
    }
    Ok((rates, length_confusion))
}

/// Evaluate the requested pipelines on the test split: decision logs,
/// per-pipeline summaries, classifier rates, and rendered reports.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    pipelines: &[Pipeline],
    stdout_format: ReportFormat,
) -> Result<String> {
    let records = split_records(cfg, Split::Test)?;
    let models = load_model_set(&cfg.models_dir())?;
    fs::create_dir_all(cfg.eval_dir())?;

    // pipelines answer 1-3 digit strings; 4-digit samples exist to train
    // the length classifier and are excluded from recognition scoring
    let scored: Vec<&DatasetRecord> = records
        .iter()
        .filter(|r| r.sample.length <= 3)
        .collect();
    if scored.is_empty() {
        return Err(Error::Usage(
            "test split has no 1-3 digit samples to evaluate".into(),
        ));
    }

    let mut report = EvalReport::default();
    for &pipeline in pipelines {
        let decisions: Vec<Result<DecisionRecord>> = scored
            .par_iter()
            .map(|record| {
                let input = resize_to_input(&record.sample.image)?;
                let decision = run_pipeline(&models, &cfg.fusion, pipeline, input)?;
                Ok(DecisionRecord::new(
                    record.id.clone(),
                    &decision,
                    record.sample.label.clone(),
                    record.sample.connection_type,
                ))
            })
            .collect();
        let decisions: Vec<DecisionRecord> = decisions.into_iter().collect::<Result<_>>()?;
        let log_path = cfg
            .eval_dir()
            .join(format!("{}.decisions.jsonl", pipeline.name()));
        write_decisions(&log_path, &decisions)?;
        let summary = summarize_pipeline(pipeline, &decisions);
        eprintln!(
            "{pipeline}: accuracy {:.2}% over {} samples ({} rejects)",
            summary.accuracy_pct(),
            summary.samples,
            summary.rejects
        );
        report.pipelines.push(summary);
    }

    let (rates, length_confusion) = classifier_section(&models, &records)?;
    report.classifier_rates = rates;
    report.length_confusion = length_confusion;

    for (format, name) in [
        (ReportFormat::Markdown, "report.md"),
        (ReportFormat::Csv, "report.csv"),
        (ReportFormat::Json, "report.json"),
    ] {
        fs::write(cfg.eval_dir().join(name), emit_report(&report, format)?)?;
    }
    emit_report(&report, stdout_format)
}

/// Decode an image file into an ink-high binary raster.
pub fn load_prediction_image(path: &Path, ink: &str) -> Result<GrayImage> {
    let decoded = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::Io(io),
            other => Error::format(0, format!("cannot decode {}: {other}", path.display())),
        })?
        .to_luma8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = decoded.into_raw();
    let convention = match ink {
        "light" => InkConvention::InkHigh,
        "dark" => InkConvention::InkLow,
        "auto" => {
            let mean: u64 = pixels.iter().map(|&p| p as u64).sum::<u64>() / pixels.len() as u64;
            if mean > 127 {
                // mostly bright: dark ink on a light background
                InkConvention::InkLow
            } else {
                InkConvention::InkHigh
            }
        }
        other => {
            return Err(Error::Config(format!(
                "--ink must be auto, dark, or light, got '{other}'"
            )))
        }
    };
    let raw = GrayImage::from_raw(w, h, pixels, convention)?;
    raw.binarize(128)
        .tight_crop()
        .ok_or_else(|| Error::Usage(format!("image {} contains no ink", path.display())))
}

/// Classify one image file through a pipeline.
pub fn cmd_predict(
    models_dir: &Path,
    image_path: &Path,
    pipeline: Pipeline,
    fusion: &FusionConfig,
    ink: &str,
) -> Result<Value> {
    fusion.validate()?;
    let models = load_model_set(models_dir)?;
    let image = load_prediction_image(image_path, ink)?;
    let input = resize_to_input(&image)?;
    let decision = run_pipeline(&models, fusion, pipeline, input)?;
    Ok(serde_json::to_value(&decision)?)
}
