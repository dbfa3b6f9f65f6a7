//! Data sources and training protocols shared by the acceptance suite.
//!
//! Every protocol runs on any directory of annotated WFDB records, so the
//! same code scores the real QT database and the synthetic stand-in.

use std::path::{Path, PathBuf};

use ecg_delineation::dataset::{
    prepare_record, record_segments, stratified_kfold, PreparedRecord, PreprocessConfig, SampleClass, Segment,
};
use ecg_delineation::delineate::{label_record, waves_from_labels, ModelClassifier, PostprocessConfig};
use ecg_delineation::eval::{
    class_metrics, match_events, tolerance_samples, BeatMatchResult, EvalReport, FScoreMode,
};
use ecg_delineation::nn::{ArchConfig, Model};
use ecg_delineation::synth::{synthesize_database, SynthConfig};
use ecg_delineation::train::{fit, predict_segments, TrainConfig, TrainReport};
use ecg_delineation::wfdb;

pub type Error = Box<dyn std::error::Error>;
pub type Result<T> = std::result::Result<T, Error>;

/// `$QTDB_DIR`, or `data/qtdb` under the workspace root.
pub fn qtdb_dir() -> PathBuf {
    std::env::var_os("QTDB_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
            root.canonicalize().unwrap_or(root).join("data/qtdb")
        })
}

/// Record names in `dir` that carry a `.q1c` or `.pu0` annotation file.
pub fn annotated_records(dir: &Path) -> Vec<String> {
    let Ok(names) = wfdb::list_records(dir) else {
        return Vec::new();
    };
    names
        .into_iter()
        .filter(|n| ["q1c", "pu0"].iter().any(|a| dir.join(format!("{n}.{a}")).exists()))
        .collect()
}

/// Writes `n` synthetic QT-style records into `dir`.
pub fn write_synthetic(dir: &Path, n: usize, duration_s: f64, seed: u64) -> Result<Vec<String>> {
    let base = SynthConfig {
        duration_s,
        seed,
        ..SynthConfig::default()
    };
    let mut names = Vec::new();
    for rec in synthesize_database(n, &base) {
        rec.write_wfdb(dir, "q1c")?;
        names.push(rec.name);
    }
    Ok(names)
}

pub fn load_prepared(dir: &Path, names: &[String], pre: &PreprocessConfig) -> Result<Vec<PreparedRecord>> {
    let ann: Vec<&str> = pre.annotators.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for n in names {
        match wfdb::load_record(dir, n, &ann).map_err(Error::from).and_then(|r| Ok(prepare_record(&r, pre)?)) {
            Ok(p) => out.push(p),
            Err(e) => log::warn!("skipping {n}: {e}"),
        }
    }
    Ok(out)
}

pub fn segments_of(records: &[PreparedRecord], pre: &PreprocessConfig) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(record_segments(r, pre)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OverfitOutcome {
    pub accuracy: f64,
    pub epochs: usize,
    pub report: TrainReport,
}

/// Trains the default model on `segments` (also used for early stopping)
/// and scores it on the same segments.
pub fn overfit(segments: &[Segment], cfg: &TrainConfig) -> Result<OverfitOutcome> {
    let refs: Vec<&Segment> = segments.iter().collect();
    let mut model = Model::init(&ArchConfig::default(), cfg.seed)?;
    let report = fit(&mut model, &refs, &refs, cfg)?;
    let pred = predict_segments(&model, &refs, cfg.batch_size)?;
    let hits = pred.truth.iter().zip(&pred.predicted).filter(|(a, b)| a == b).count();
    Ok(OverfitOutcome {
        accuracy: hits as f64 / pred.truth.len() as f64,
        epochs: report.epochs.len(),
        report,
    })
}

#[derive(Debug, Clone)]
pub struct ScaledOutcome {
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    pub qrs_f1: Option<f64>,
    pub beats: BeatMatchResult,
    pub report: TrainReport,
    /// Sample-level scores on the test segments.
    pub evaluation: EvalReport,
}

/// Train on `train`, hold out the first fold for early stopping, then score
/// sample-level QRS F1 on the segments of `test` and beat detection on the
/// annotated part of each whole `test` record.
pub fn scaled_run(
    train: &[PreparedRecord],
    test: &[PreparedRecord],
    arch: &ArchConfig,
    pre: &PreprocessConfig,
    cfg: &TrainConfig,
    tolerance_s: f64,
) -> Result<ScaledOutcome> {
    let segments = segments_of(train, pre)?;
    let folds = stratified_kfold(&segments, 5, cfg.seed)?;
    let val: Vec<&Segment> = folds[0].iter().map(|&i| &segments[i]).collect();
    let tr: Vec<&Segment> = folds[1..].iter().flatten().map(|&i| &segments[i]).collect();
    let mut model = Model::init(arch, cfg.seed)?;
    let report = fit(&mut model, &tr, &val, cfg)?;

    let test_segments = segments_of(test, pre)?;
    let refs: Vec<&Segment> = test_segments.iter().collect();
    let evaluation = predict_segments(&model, &refs, cfg.batch_size)?.report()?;
    let qrs_f1 = class_metrics(&evaluation.confusion, 1.0, FScoreMode::Standard).classes[SampleClass::Qrs.code()].f_score;

    let classifier = ModelClassifier::new(&model, pre.zscore);
    let mut beats: Option<BeatMatchResult> = None;
    for rec in test {
        let fs = rec.sampling_frequency;
        let tol = tolerance_samples(tolerance_s, fs);
        let labels = label_record(&classifier, &rec.signal)?;
        let waves = waves_from_labels(&rec.signal, &labels, fs, &PostprocessConfig::default());
        let (lo, hi) = rec.annotated_span.unwrap_or((0, rec.signal.len().saturating_sub(1)));
        let reference: Vec<usize> = rec
            .annotations
            .iter()
            .filter(|a| a.is_beat())
            .map(|a| a.sample_index as usize)
            .collect();
        let predicted: Vec<usize> = waves
            .iter()
            .filter(|w| w.class == SampleClass::Qrs && w.peak + tol >= lo && w.peak <= hi + tol)
            .map(|w| w.peak)
            .collect();
        let m = match_events(&reference, &predicted, tol);
        match &mut beats {
            Some(b) => b.merge(&m),
            None => beats = Some(m),
        }
    }
    Ok(ScaledOutcome {
        train_records: train.iter().map(|r| r.name.clone()).collect(),
        test_records: test.iter().map(|r| r.name.clone()).collect(),
        qrs_f1,
        beats: beats.ok_or("no test records")?,
        report,
        evaluation,
    })
}
