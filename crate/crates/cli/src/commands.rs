use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ecg_delineation::dataset::{
    self, prepare_record, read_segment_cache, record_segments, split_records, stratified_kfold, CacheManifest,
    PreparedRecord, PreprocessConfig, SampleClass, Segment, SplitPlan,
};
use ecg_delineation::delineate::{label_record, waves_from_labels, DelineationResult, ModelClassifier};
use ecg_delineation::eval::{
    boundary_metrics, class_metrics, match_events, merge_boundary_rows, tolerance_samples, BeatMatchResult,
    ConfusionMatrix, EvalReport,
};
use ecg_delineation::nn::Model;
use ecg_delineation::train::{
    self, checkpoint::CheckpointManifest, fit, load_checkpoint, predict_segments, random_search, run_cv,
    save_checkpoint, SearchResult, TrainReport,
};
use ecg_delineation::synth::{synthesize_database, SynthConfig};
use ecg_delineation::wfdb;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::RunManifest;
use crate::{Cli, Command, Db, GlobalArgs, RecordSource, Task};

const SEGMENTS_FILE: &str = "segments.bin";
const RECORDS_FILE: &str = "records.json";

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), &cli.global.overrides)?;
    if cli.global.threads == 0 {
        bail!("--threads must be at least 1");
    }
    if cli.global.threads > 1 {
        log::warn!("threads={} requested; computation runs on one thread", cli.global.threads);
    }
    let g = &cli.global;
    match cli.command {
        Command::Preprocess { source, out } => preprocess(&cfg, g, &source, &out),
        Command::Split { cache, out } => split(&cfg, g, &cache, out),
        Command::Train { cache, split, out, cv } => train_cmd(&cfg, g, &cache, &split, &out, cv),
        Command::Search { cache, split, out } => search(&cfg, g, &cache, &split, &out),
        Command::Evaluate {
            checkpoint,
            task,
            cache,
            source,
            out,
        } => evaluate(&cfg, g, &checkpoint, task, cache.as_deref(), &source, &out),
        Command::Delineate { checkpoint, source, out } => delineate(&cfg, g, &checkpoint, &source, &out),
        Command::Synth {
            out,
            records,
            duration_s,
            seed,
        } => synth(&out, records, duration_s, seed),
        Command::Export { report, out } => export(&report, &out),
    }
}

/// Opens a command: prepares `out` and returns `None` when an identical
/// run already produced its outputs.
fn begin(m: &RunManifest, out: &Path, force: bool) -> Result<bool> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    if !force && m.up_to_date(out) {
        log::info!("{} outputs in {} are up to date; use --force to recompute", m.command, out.display());
        return Ok(false);
    }
    Ok(true)
}

fn write_text(out: &Path, name: &str, text: &str, m: &mut RunManifest) -> Result<()> {
    let p = out.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
    m.outputs.push(name.to_string());
    Ok(())
}

fn write_with(
    out: &Path,
    name: &str,
    m: &mut RunManifest,
    f: impl FnOnce(&mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    let p = out.join(name);
    fs::write(&p, buf).with_context(|| format!("writing {}", p.display()))?;
    m.outputs.push(name.to_string());
    Ok(())
}

fn annotators_for(db: Db, cfg: &PreprocessConfig) -> Vec<String> {
    match db {
        Db::Qtdb => cfg.annotators.clone(),
        Db::Mitdb => vec!["atr".into()],
    }
}

fn input_dir(source: &RecordSource) -> Result<&Path> {
    source
        .input
        .as_deref()
        .ok_or_else(|| anyhow!("no record directory: pass --in DIR or set ECGDL_DATA"))
}

/// Record names in `dir` selected by `--records` or `--split`.
fn select_records(source: &RecordSource, dir: &Path) -> Result<Vec<String>> {
    let all = wfdb::list_records(dir)?;
    if all.is_empty() {
        bail!(
            "no records found in {}: expected WFDB files <name>.hea, <name>.dat and annotation files such as <name>.q1c (QTDB) or <name>.atr (MITDB)",
            dir.display()
        );
    }
    let wanted: Vec<String> = if !source.records.is_empty() {
        source.records.clone()
    } else if let Some(split) = &source.split {
        read_split(split)?.plan.test_records
    } else {
        return Ok(all);
    };
    for w in &wanted {
        if !all.contains(w) {
            bail!("record {w} not found in {} (looked for {w}.hea)", dir.display());
        }
    }
    Ok(wanted)
}

fn hash_record_files(m: &mut RunManifest, dir: &Path, name: &str, annotators: &[String]) -> Result<()> {
    let header = wfdb::read_header(dir, name)?;
    let mut files = vec![dir.join(format!("{name}.hea"))];
    if let Some(s) = header.signals.first() {
        files.push(dir.join(&s.file_name));
    }
    files.extend(annotators.iter().map(|a| dir.join(format!("{name}.{a}"))));
    m.input_files_if_present(files)
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordInfo {
    name: String,
    native_fs: f64,
    fs: f64,
    n_samples: usize,
    annotator: String,
    waves: [usize; 3],
    annotated_span: Option<(usize, usize)>,
    segments: usize,
    label_conflicts: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Inventory {
    records: Vec<RecordInfo>,
    skipped: Vec<(String, String)>,
}

fn load_prepared(dir: &Path, name: &str, annotators: &[String], pre: &PreprocessConfig) -> Result<PreparedRecord> {
    let ann: Vec<&str> = annotators.iter().map(String::as_str).collect();
    let record = wfdb::load_record(dir, name, &ann).with_context(|| format!("loading record {name}"))?;
    let cfg = PreprocessConfig {
        annotators: annotators.to_vec(),
        ..pre.clone()
    };
    Ok(prepare_record(&record, &cfg)?)
}

fn preprocess(cfg: &RunConfig, g: &GlobalArgs, source: &RecordSource, out: &Path) -> Result<()> {
    let dir = input_dir(source)?;
    let names = select_records(source, dir)?;
    let annotators = annotators_for(source.db, &cfg.preprocess);
    let mut m = RunManifest::new("preprocess", cfg, g.threads);
    m.arg("in", dir.display());
    m.arg("db", format!("{:?}", source.db));
    m.arg("records", names.join(","));
    for n in &names {
        hash_record_files(&mut m, dir, n, &annotators)?;
    }
    if !begin(&m, out, g.force)? {
        return Ok(());
    }
    let pre = PreprocessConfig {
        annotators: annotators.clone(),
        ..cfg.preprocess.clone()
    };
    let mut segments: Vec<Segment> = Vec::new();
    let mut inv = Inventory {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for (i, name) in names.iter().enumerate() {
        let prepared = match load_prepared(dir, name, &annotators, &pre) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping record {name}: {e:#}");
                inv.skipped.push((name.clone(), format!("{e:#}")));
                continue;
            }
        };
        let segs = record_segments(&prepared, &pre)?;
        let header = wfdb::read_header(dir, name)?;
        let mut waves = [0usize; 3];
        for w in &prepared.waves {
            if w.class != SampleClass::Nw {
                waves[w.class.code()] += 1;
            }
        }
        log::info!("record={} progress={}/{} segments={}", name, i + 1, names.len(), segs.len());
        inv.records.push(RecordInfo {
            name: name.clone(),
            native_fs: header.sampling_frequency,
            fs: prepared.sampling_frequency,
            n_samples: prepared.signal.len(),
            annotator: annotators
                .iter()
                .find(|a| dir.join(format!("{name}.{a}")).exists())
                .cloned()
                .unwrap_or_default(),
            waves,
            annotated_span: prepared.annotated_span,
            segments: segs.len(),
            label_conflicts: prepared.labels.conflicts,
        });
        segments.extend(segs);
    }
    if inv.records.is_empty() {
        bail!("no record in {} could be read", dir.display());
    }
    let manifest = CacheManifest {
        format_version: 1,
        split: "all".into(),
        seed: 0,
        split_mode: "none".into(),
        preprocess: pre,
        records: inv.records.iter().map(|r| r.name.clone()).collect(),
        segments: Vec::new(),
        data_sha256: String::new(),
    };
    dataset::write_segment_cache(&out.join(SEGMENTS_FILE), &segments, manifest)?;
    m.outputs.push(SEGMENTS_FILE.into());
    m.outputs.push(format!("{SEGMENTS_FILE}.manifest.json"));
    write_text(out, RECORDS_FILE, &(serde_json::to_string_pretty(&inv)? + "\n"), &mut m)?;
    m.write(out)?;
    println!(
        "preprocessed {} records ({} skipped) into {} segments",
        inv.records.len(),
        inv.skipped.len(),
        segments.len()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    plan: SplitPlan,
    hash: String,
}

fn read_split(path: &Path) -> Result<SplitFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading split file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing split file {}", path.display()))
}

fn read_inventory(cache: &Path) -> Result<Inventory> {
    let p = cache.join(RECORDS_FILE);
    let text = fs::read_to_string(&p)
        .with_context(|| format!("reading {} (run `ecgdl preprocess` first)", p.display()))?;
    Ok(serde_json::from_str(&text)?)
}

fn split(cfg: &RunConfig, g: &GlobalArgs, cache: &Path, out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| cache.join("split.json"));
    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = out.file_name().and_then(|f| f.to_str()).unwrap_or("split.json").to_string();
    let mut m = RunManifest::new("split", cfg, g.threads);
    m.input_file(&cache.join(RECORDS_FILE))?;
    m.arg("out", &file_name);
    if !begin(&m, out_dir, g.force)? {
        return Ok(());
    }
    let inv = read_inventory(cache)?;
    let names: Vec<String> = inv.records.iter().map(|r| r.name.clone()).collect();
    let plan = split_records(&names, cfg.split_mode, cfg.split_seed).with_context(|| {
        format!(
            "splitting {} records (for other record counts use e.g. --set split.mode=ratio:0.8)",
            names.len()
        )
    })?;
    let hash = plan.hash();
    println!(
        "split {}: {} train / {} test records, hash {}",
        plan.mode.label(),
        plan.train_records.len(),
        plan.test_records.len(),
        hash
    );
    let text = serde_json::to_string_pretty(&SplitFile { plan, hash })? + "\n";
    write_text(out_dir, &file_name, &text, &mut m)?;
    m.write(out_dir)
}

struct TrainData {
    segments: Vec<Segment>,
    cache: CacheManifest,
    split: SplitFile,
}

fn load_train_data(cache: &Path, split: &Path, m: &mut RunManifest, test: bool) -> Result<TrainData> {
    let seg_path = cache.join(SEGMENTS_FILE);
    m.input_file(&seg_path)?;
    m.input_file(split)?;
    let (all, manifest) = read_segment_cache(&seg_path)
        .with_context(|| format!("reading segment cache {} (run `ecgdl preprocess`)", seg_path.display()))?;
    let split = read_split(split)?;
    let keep = if test { &split.plan.test_records } else { &split.plan.train_records };
    let segments: Vec<Segment> = all.into_iter().filter(|s| keep.contains(&s.record_name)).collect();
    if segments.is_empty() {
        bail!("the cache holds no segments of the selected records");
    }
    Ok(TrainData {
        segments,
        cache: manifest,
        split,
    })
}

fn checkpoint_manifest(model: &Model<f32>, seed: u64, data: &TrainData) -> CheckpointManifest {
    let mut cm = CheckpointManifest::new(model, seed);
    cm.split_hash = Some(data.split.hash.clone());
    cm.preprocess = Some(data.cache.preprocess.clone());
    cm
}

fn save_model(out: &Path, name: &str, model: &Model<f32>, cm: &CheckpointManifest, m: &mut RunManifest) -> Result<()> {
    save_checkpoint(&out.join(name), model, cm)?;
    m.outputs.push(name.into());
    Ok(())
}

fn write_train_report(out: &Path, stem: &str, r: &TrainReport, m: &mut RunManifest) -> Result<()> {
    write_with(out, &format!("{stem}.csv"), m, |b| Ok(r.write_csv(b)?))?;
    write_text(out, &format!("{stem}.json"), &(serde_json::to_string_pretty(r)? + "\n"), m)
}

fn write_eval_report(out: &Path, stem: &str, rep: &EvalReport, m: &mut RunManifest) -> Result<()> {
    let mut slim = rep.clone();
    slim.roc = rep.roc.as_ref().map(|r| r.decimated(1001));
    write_text(out, &format!("{stem}.json"), &(slim.to_json()? + "\n"), m)?;
    write_with(out, &format!("{stem}_confusion.csv"), m, |b| Ok(rep.confusion.write_csv(b)?))?;
    write_with(out, &format!("{stem}_metrics.csv"), m, |b| Ok(rep.write_metrics_csv(b)?))?;
    if rep.roc.is_some() {
        write_with(out, &format!("{stem}_roc.csv"), m, |b| Ok(slim.write_roc_csv(b)?))?;
    }
    if rep.beats.is_some() || !rep.boundaries.is_empty() {
        write_with(out, &format!("{stem}_events.csv"), m, |b| Ok(rep.write_boundaries_csv(b)?))?;
    }
    Ok(())
}

fn with_metrics(mut rep: EvalReport, cfg: &RunConfig) -> EvalReport {
    rep.metrics = class_metrics(&rep.confusion, cfg.beta, cfg.f_mode);
    rep
}

fn train_cmd(cfg: &RunConfig, g: &GlobalArgs, cache: &Path, split: &Path, out: &Path, cv: bool) -> Result<()> {
    let mut m = RunManifest::new(if cv { "train-cv" } else { "train" }, cfg, g.threads);
    let data = load_train_data(cache, split, &mut m, false)?;
    if !begin(&m, out, g.force)? {
        return Ok(());
    }
    let folds = stratified_kfold(&data.segments, cfg.folds, cfg.split_seed)?;
    log::info!("segments={} folds={}", data.segments.len(), folds.len());
    if cv {
        let outcome = run_cv(&data.segments, &folds, &cfg.arch, &cfg.train)?;
        for (k, (model, report)) in outcome.models.iter().zip(&outcome.reports).enumerate() {
            let seed = train::derived_seed(cfg.train.seed, k);
            save_model(out, &format!("fold{}.ckpt", k + 1), model, &checkpoint_manifest(model, seed, &data), &mut m)?;
            write_train_report(out, &format!("fold{}_history", k + 1), report, &mut m)?;
        }
        let rep = with_metrics(outcome.evaluation, cfg);
        write_eval_report(out, "cv_report", &rep, &mut m)?;
        print_summary("cross-validation", &rep);
    } else {
        let val: Vec<&Segment> = folds[0].iter().map(|&i| &data.segments[i]).collect();
        let tr: Vec<&Segment> = folds[1..].iter().flatten().map(|&i| &data.segments[i]).collect();
        let mut model = Model::init(&cfg.arch, cfg.train.seed)?;
        let report = fit(&mut model, &tr, &val, &cfg.train)?;
        save_model(out, "model.ckpt", &model, &checkpoint_manifest(&model, cfg.train.seed, &data), &mut m)?;
        write_train_report(out, "history", &report, &mut m)?;
        let rep = with_metrics(predict_segments(&model, &val, cfg.train.batch_size)?.report()?, cfg);
        write_eval_report(out, "validation_report", &rep, &mut m)?;
        println!(
            "stopped after epoch {} (best epoch {}, validation loss {:.5})",
            report.stopped_epoch, report.best_epoch, report.best_val_loss
        );
        print_summary("validation", &rep);
    }
    m.write(out)
}

fn print_summary(what: &str, rep: &EvalReport) {
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    println!("{what}: accuracy {}%", pct(rep.metrics.accuracy));
    for s in &rep.metrics.classes {
        println!(
            "  {:<3} Se {:>6}  P+ {:>6}  F {:>6}",
            s.class.name(),
            pct(s.sensitivity),
            pct(s.precision),
            pct(s.f_score)
        );
    }
    if let Some(b) = &rep.beats {
        println!(
            "  beats {} TP {} FP {} FN {} Se {} P+ {} Err {}",
            b.n_beats,
            b.tp,
            b.fp,
            b.fn_,
            pct(b.sensitivity()),
            pct(b.precision()),
            b.error_rate().map_or("n/a".into(), |e| format!("{e:.2}"))
        );
    }
}

fn search(cfg: &RunConfig, g: &GlobalArgs, cache: &Path, split: &Path, out: &Path) -> Result<()> {
    let mut m = RunManifest::new("search", cfg, g.threads);
    let data = load_train_data(cache, split, &mut m, false)?;
    if !begin(&m, out, g.force)? {
        return Ok(());
    }
    let folds = stratified_kfold(&data.segments, cfg.folds, cfg.split_seed)?;
    let val: Vec<&Segment> = folds[0].iter().map(|&i| &data.segments[i]).collect();
    let tr: Vec<&Segment> = folds[1..].iter().flatten().map(|&i| &data.segments[i]).collect();
    let result: SearchResult = random_search(&cfg.search, &tr, &val, &cfg.arch, &cfg.train)?;
    write_text(out, "search.json", &(serde_json::to_string_pretty(&result)? + "\n"), &mut m)?;
    let mut best = cfg.clone();
    best.train = result.best.clone();
    write_text(out, "best.cfg", &best.to_text(), &mut m)?;
    write_with(out, "trials.csv", &mut m, |b| Ok(write_trials(b, &result)?))?;
    let t = &result.trials[result.best_trial];
    println!(
        "best trial {} of {}: alpha {:e} beta1 {} beta2 {} epsilon {:e} loss {:.5}",
        result.best_trial + 1,
        result.trials.len(),
        t.adam.alpha,
        t.adam.beta1,
        t.adam.beta2,
        t.adam.epsilon,
        t.best_val_loss.unwrap_or(f64::NAN)
    );
    m.write(out)
}

fn write_trials(w: &mut Vec<u8>, r: &SearchResult) -> std::io::Result<()> {
    use std::io::Write;
    writeln!(w, "trial,alpha,beta1,beta2,epsilon,best_val_loss,error")?;
    for (i, t) in r.trials.iter().enumerate() {
        writeln!(
            w,
            "{},{:e},{},{},{:e},{},{}",
            i + 1,
            t.adam.alpha,
            t.adam.beta1,
            t.adam.beta2,
            t.adam.epsilon,
            t.best_val_loss.map_or(String::new(), |l| format!("{l:.6}")),
            t.error.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

fn load_model(path: &Path, m: &mut RunManifest) -> Result<(Model<f32>, CheckpointManifest)> {
    m.input_file(path)?;
    load_checkpoint::<f32>(path, None).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn record_pre(ckpt: &CheckpointManifest, cfg: &RunConfig) -> PreprocessConfig {
    ckpt.preprocess.clone().unwrap_or_else(|| cfg.preprocess.clone())
}

fn evaluate(
    cfg: &RunConfig,
    g: &GlobalArgs,
    checkpoint: &Path,
    task: Task,
    cache: Option<&Path>,
    source: &RecordSource,
    out: &Path,
) -> Result<()> {
    let mut m = RunManifest::new("evaluate", cfg, g.threads);
    m.arg("task", format!("{task:?}"));
    let (model, ckpt) = load_model(checkpoint, &mut m)?;
    match task {
        Task::Samples => {
            let cache = cache.ok_or_else(|| anyhow!("--task samples needs --cache"))?;
            let split = source.split.as_deref().ok_or_else(|| anyhow!("--task samples needs --split"))?;
            let data = load_train_data(cache, split, &mut m, true)?;
            if !begin(&m, out, g.force)? {
                return Ok(());
            }
            let refs: Vec<&Segment> = data.segments.iter().collect();
            let rep = with_metrics(predict_segments(&model, &refs, cfg.train.batch_size)?.report()?, cfg);
            write_eval_report(out, "eval_report", &rep, &mut m)?;
            print_summary("test segments", &rep);
        }
        Task::Qrs | Task::Boundaries => {
            let dir = input_dir(source)?;
            let names = select_records(source, dir)?;
            let annotators = annotators_for(source.db, &cfg.preprocess);
            m.arg("in", dir.display());
            m.arg("db", format!("{:?}", source.db));
            m.arg("records", names.join(","));
            for n in &names {
                hash_record_files(&mut m, dir, n, &annotators)?;
            }
            if !begin(&m, out, g.force)? {
                return Ok(());
            }
            let pre = record_pre(&ckpt, cfg);
            let classifier = ModelClassifier::new(&model, pre.zscore);
            let mut cm = ConfusionMatrix::default();
            let mut beats: Option<BeatMatchResult> = None;
            let mut boundaries = Vec::new();
            let mut per_record = Vec::new();
            for (i, name) in names.iter().enumerate() {
                let rec = load_prepared(dir, name, &annotators, &pre)?;
                let fs = rec.sampling_frequency;
                let tol = tolerance_samples(cfg.tolerance_ms / 1000.0, fs);
                let labels = label_record(&classifier, &rec.signal)?;
                let waves = waves_from_labels(&rec.signal, &labels, fs, &cfg.postprocess);
                let (lo, hi) = match (task, rec.annotated_span) {
                    (Task::Boundaries, Some(span)) => span,
                    _ => (0, labels.len().saturating_sub(1)),
                };
                cm.add(&rec.labels.labels[lo..=hi], &labels[lo..=hi])?;
                let result = if task == Task::Qrs {
                    let reference: Vec<usize> = rec
                        .annotations
                        .iter()
                        .filter(|a| a.is_beat())
                        .map(|a| a.sample_index as usize)
                        .collect();
                    let predicted: Vec<usize> =
                        waves.iter().filter(|w| w.class == SampleClass::Qrs).map(|w| w.peak).collect();
                    match_events(&reference, &predicted, tol)
                } else {
                    let rows = boundary_metrics(&waves, &rec.waves, tol, rec.annotated_span);
                    merge_boundary_rows(&mut boundaries, &rows);
                    let qrs_peaks: Vec<usize> = rec
                        .waves
                        .iter()
                        .filter(|w| w.class == SampleClass::Qrs)
                        .map(|w| w.peak as usize)
                        .collect();
                    let predicted: Vec<usize> = waves
                        .iter()
                        .filter(|w| w.class == SampleClass::Qrs && (lo..=hi).contains(&w.peak))
                        .map(|w| w.peak)
                        .collect();
                    match_events(&qrs_peaks, &predicted, tol)
                };
                log::info!(
                    "record={} progress={}/{} tp={} fp={} fn={}",
                    name,
                    i + 1,
                    names.len(),
                    result.tp,
                    result.fp,
                    result.fn_
                );
                match &mut beats {
                    Some(b) => b.merge(&result),
                    None => beats = Some(result.clone()),
                }
                per_record.push((name.clone(), result));
            }
            let mut rep = with_metrics(EvalReport::from_confusion(cm), cfg);
            rep.tolerance_ms = Some(cfg.tolerance_ms);
            rep.beats = beats;
            rep.boundaries = boundaries;
            write_eval_report(out, "eval_report", &rep, &mut m)?;
            write_with(out, "beats_by_record.csv", &mut m, |b| Ok(write_beat_table(b, &per_record)?))?;
            print_summary("records", &rep);
        }
    }
    m.write(out)
}

/// One row per record plus a total: record, beats, TP, FP, FN, Se, P+, Err.
fn write_beat_table(w: &mut Vec<u8>, rows: &[(String, BeatMatchResult)]) -> std::io::Result<()> {
    use std::io::Write;
    writeln!(w, "record,n_beats,tp,fp,fn,sensitivity_pct,precision_pct,error_pct")?;
    let pct = |v: Option<f64>| v.map_or(String::new(), |x| format!("{:.2}", 100.0 * x));
    let mut total: Option<BeatMatchResult> = None;
    let line = |w: &mut Vec<u8>, name: &str, r: &BeatMatchResult| {
        writeln!(
            w,
            "{name},{},{},{},{},{},{},{}",
            r.n_beats,
            r.tp,
            r.fp,
            r.fn_,
            pct(r.sensitivity()),
            pct(r.precision()),
            r.error_rate().map_or(String::new(), |e| format!("{e:.2}"))
        )
    };
    for (name, r) in rows {
        line(w, name, r)?;
        match &mut total {
            Some(t) => t.merge(r),
            None => total = Some(r.clone()),
        }
    }
    if let Some(t) = total {
        line(w, "total", &t)?;
    }
    Ok(())
}

fn delineate(cfg: &RunConfig, g: &GlobalArgs, checkpoint: &Path, source: &RecordSource, out: &Path) -> Result<()> {
    let dir = input_dir(source)?;
    let names = select_records(source, dir)?;
    let mut m = RunManifest::new("delineate", cfg, g.threads);
    let (model, ckpt) = load_model(checkpoint, &mut m)?;
    m.arg("in", dir.display());
    m.arg("records", names.join(","));
    for n in &names {
        hash_record_files(&mut m, dir, n, &[])?;
    }
    if !begin(&m, out, g.force)? {
        return Ok(());
    }
    let pre = record_pre(&ckpt, cfg);
    let classifier = ModelClassifier::new(&model, pre.zscore);
    let mut all = Vec::new();
    let mut results = Vec::new();
    for name in &names {
        let rec = load_prepared(dir, name, &[], &pre)?;
        let labels = label_record(&classifier, &rec.signal)?;
        let result = DelineationResult {
            record_name: name.clone(),
            sampling_frequency: rec.sampling_frequency,
            waves: waves_from_labels(&rec.signal, &labels, rec.sampling_frequency, &cfg.postprocess),
        };
        result.write_csv(&mut all, results.is_empty())?;
        log::info!("record={} waves={}", name, result.waves.len());
        write_with(out, &format!("{name}.waves.csv"), &mut m, |b| Ok(result.write_csv(b, true)?))?;
        results.push(result);
    }
    write_text(out, "waves.csv", &String::from_utf8(all)?, &mut m)?;
    write_text(out, "waves.json", &(serde_json::to_string_pretty(&results)? + "\n"), &mut m)?;
    println!(
        "delineated {} records, {} waves",
        results.len(),
        results.iter().map(|r| r.waves.len()).sum::<usize>()
    );
    m.write(out)
}

fn synth(out: &Path, n: usize, duration_s: f64, seed: u64) -> Result<()> {
    if n == 0 || !(duration_s >= 5.0) {
        bail!("need at least one record of at least 5 s");
    }
    fs::create_dir_all(out)?;
    let base = SynthConfig {
        duration_s,
        seed,
        ..SynthConfig::default()
    };
    for rec in synthesize_database(n, &base) {
        rec.write_wfdb(out, "q1c")?;
    }
    println!("wrote {n} records to {}", out.display());
    Ok(())
}

fn export(report: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    fs::create_dir_all(out)?;
    let stem = report
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report")
        .to_string();
    let mut written = Vec::new();
    let mut put = |name: String, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        fs::write(out.join(&name), buf)?;
        written.push(name);
        Ok(())
    };
    if let Ok(rep) = serde_json::from_str::<EvalReport>(&text) {
        put(format!("{stem}_confusion.csv"), &|b| Ok(rep.confusion.write_csv(b)?))?;
        put(format!("{stem}_metrics.csv"), &|b| Ok(rep.write_metrics_csv(b)?))?;
        put(format!("{stem}_roc.csv"), &|b| Ok(rep.write_roc_csv(b)?))?;
        put(format!("{stem}_events.csv"), &|b| Ok(rep.write_boundaries_csv(b)?))?;
    } else if let Ok(r) = serde_json::from_str::<TrainReport>(&text) {
        put(format!("{stem}.csv"), &|b| Ok(r.write_csv(b)?))?;
    } else if let Ok(r) = serde_json::from_str::<SearchResult>(&text) {
        put(format!("{stem}_trials.csv"), &|b| Ok(write_trials(b, &r)?))?;
    } else if let Ok(r) = serde_json::from_str::<Vec<DelineationResult>>(&text) {
        put(format!("{stem}.csv"), &|b| {
            for (i, d) in r.iter().enumerate() {
                d.write_csv(&mut *b, i == 0)?;
            }
            Ok(())
        })?;
    } else {
        bail!(
            "{} is not an evaluation, training, search or delineation report",
            report.display()
        );
    }
    for w in written {
        println!("{}", out.join(w).display());
    }
    Ok(())
}
