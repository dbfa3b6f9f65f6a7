//! Labelled 1000-sample segments, record-disjoint train/test splits and the
//! stratified k-fold plan.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::{self, FilterSpec};
use crate::wfdb::{self, AnnotationEvent, Record};

/// Samples per training segment.
pub const SEGMENT_LEN: usize = 1000;
pub const N_CLASSES: usize = 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate record name '{0}'")]
    DuplicateName(String),
    #[error("split needs {needed} records, got {got}")]
    SplitSize { needed: usize, got: usize },
    #[error("k-fold needs k >= 2, got {0}")]
    FoldCount(usize),
    #[error("{n} segments cannot fill {k} folds")]
    TooFewSegments { n: usize, k: usize },
    #[error("signal and label lengths differ ({signal} vs {labels})")]
    LengthMismatch { signal: usize, labels: usize },
    #[error("cache file: {0}")]
    Cache(String),
    #[error(transparent)]
    Wfdb(#[from] wfdb::WfdbError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum SampleClass {
    P = 0,
    Qrs = 1,
    T = 2,
    /// No wave.
    Nw = 3,
}

impl SampleClass {
    pub const ALL: [SampleClass; N_CLASSES] =
        [SampleClass::P, SampleClass::Qrs, SampleClass::T, SampleClass::Nw];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SampleClass::P => "P",
            SampleClass::Qrs => "QRS",
            SampleClass::T => "T",
            SampleClass::Nw => "NW",
        }
    }

    /// Wave class of a peak annotation: `p`, `t` or any beat code.
    pub fn of_peak(event: &AnnotationEvent) -> Option<Self> {
        match event.symbol() {
            'p' => Some(SampleClass::P),
            't' => Some(SampleClass::T),
            _ if event.is_beat() => Some(SampleClass::Qrs),
            _ => None,
        }
    }
}

impl std::fmt::Display for SampleClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-sample labels painted from annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSequence {
    pub labels: Vec<SampleClass>,
    /// Intervals skipped because they overlapped an earlier wave of another
    /// class.
    pub conflicts: usize,
}

/// One annotated wave: the `(`, peak, `)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnnotatedWave {
    pub class: SampleClass,
    pub onset: Option<u64>,
    pub peak: u64,
    pub offset: Option<u64>,
}

/// Groups annotations into waves. A `(` directly before a peak is its
/// onset, a `)` directly after it its offset.
pub fn annotated_waves(events: &[AnnotationEvent]) -> Vec<AnnotatedWave> {
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let Some(class) = SampleClass::of_peak(e) else {
            continue;
        };
        let onset = i
            .checked_sub(1)
            .map(|j| &events[j])
            .filter(|p| p.symbol() == '(')
            .map(|p| p.sample_index);
        let offset = events
            .get(i + 1)
            .filter(|n| n.symbol() == ')')
            .map(|n| n.sample_index);
        out.push(AnnotatedWave {
            class,
            onset,
            peak: e.sample_index,
            offset,
        });
    }
    out
}

/// Paints per-sample classes from `(`/peak/`)` triples.
///
/// Samples in `[onset, offset]` (inclusive) take the peak's class; waves
/// lacking either boundary are dropped. A wave overlapping an already painted
/// wave of a different class is skipped and counted in `conflicts`.
pub fn build_sample_labels(events: &[AnnotationEvent], n_samples: usize) -> LabelSequence {
    let mut labels = vec![SampleClass::Nw; n_samples];
    let mut conflicts = 0;
    for w in annotated_waves(events) {
        let (Some(on), Some(off)) = (w.onset, w.offset) else {
            continue;
        };
        if n_samples == 0 || on as usize >= n_samples {
            continue;
        }
        let (on, off) = (on as usize, (off as usize).min(n_samples - 1));
        let span = &mut labels[on..=off];
        if span.iter().any(|&c| c != SampleClass::Nw && c != w.class) {
            log::warn!(
                "overlapping {} wave at [{on}, {off}] skipped",
                w.class.name()
            );
            conflicts += 1;
            continue;
        }
        span.fill(w.class);
    }
    LabelSequence { labels, conflicts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub samples: Vec<f32>,
    pub labels: Vec<SampleClass>,
    pub record_name: String,
    pub start_offset: usize,
}

impl Segment {
    pub fn class_counts(&self) -> [usize; N_CLASSES] {
        class_histogram(&self.labels)
    }
}

pub fn class_histogram(labels: &[SampleClass]) -> [usize; N_CLASSES] {
    let mut h = [0; N_CLASSES];
    for l in labels {
        h[l.code()] += 1;
    }
    h
}

/// Consecutive non-overlapping windows of [`SEGMENT_LEN`] samples; the tail
/// shorter than a window is dropped.
pub fn segment_record(
    record_name: &str,
    signal: &[f64],
    labels: &[SampleClass],
) -> Result<Vec<Segment>> {
    if signal.len() != labels.len() {
        return Err(DatasetError::LengthMismatch {
            signal: signal.len(),
            labels: labels.len(),
        });
    }
    Ok(signal
        .chunks_exact(SEGMENT_LEN)
        .zip(labels.chunks_exact(SEGMENT_LEN))
        .enumerate()
        .map(|(i, (s, l))| Segment {
            samples: s.iter().map(|&v| v as f32).collect(),
            labels: l.to_vec(),
            record_name: record_name.to_string(),
            start_offset: i * SEGMENT_LEN,
        })
        .collect())
}

/// Row-wise one-hot matrix, `[len x 4]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotLabels {
    pub rows: Vec<[u8; N_CLASSES]>,
}

pub fn one_hot_encode(labels: &[SampleClass]) -> OneHotLabels {
    OneHotLabels {
        rows: labels
            .iter()
            .map(|l| {
                let mut r = [0u8; N_CLASSES];
                r[l.code()] = 1;
                r
            })
            .collect(),
    }
}

/// How many records go to training and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Fixed counts; the record list must hold exactly `train + test` names.
    Counts { train: usize, test: usize },
    /// Fraction of records used for training, the rest for test.
    Ratio(f64),
}

impl SplitMode {
    /// 84 training and 21 test records out of 105.
    pub const QTDB_84_21: SplitMode = SplitMode::Counts { train: 84, test: 21 };
    /// 79 training and 26 test records out of 105.
    pub const QTDB_79_26: SplitMode = SplitMode::Counts { train: 79, test: 26 };

    pub fn label(&self) -> String {
        match self {
            SplitMode::Counts { train, test } => format!("{train}/{test}"),
            SplitMode::Ratio(r) => format!("ratio {r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_records: Vec<String>,
    pub test_records: Vec<String>,
    pub mode: SplitMode,
    pub seed: u64,
}

impl SplitPlan {
    /// Hex SHA-256 over the sorted record lists, for manifests.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.train_records {
            h.update(b"train:");
            h.update(r.as_bytes());
            h.update(b"\n");
        }
        for r in &self.test_records {
            h.update(b"test:");
            h.update(r.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Record-disjoint split: sort, seeded shuffle, first part trains.
pub fn split_records(names: &[String], mode: SplitMode, seed: u64) -> Result<SplitPlan> {
    let mut seen = BTreeSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(DatasetError::DuplicateName(n.clone()));
        }
    }
    let n_train = match mode {
        SplitMode::Counts { train, test } => {
            if names.len() != train + test {
                return Err(DatasetError::SplitSize {
                    needed: train + test,
                    got: names.len(),
                });
            }
            train
        }
        SplitMode::Ratio(r) => (names.len() as f64 * r).round() as usize,
    };
    let mut sorted: Vec<String> = seen.into_iter().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let test_records = sorted.split_off(n_train.min(sorted.len()));
    let mut train_records = sorted;
    train_records.sort();
    let mut test_records = test_records;
    test_records.sort();
    Ok(SplitPlan {
        train_records,
        test_records,
        mode,
        seed,
    })
}

/// Assigns whole segments to `k` folds so every fold's per-class sample
/// histogram tracks the global class proportions.
///
/// Segments are visited in a seeded random order, rarest-class-heavy first,
/// and each goes to the non-full fold whose histogram moves closest to its
/// target. Fold sizes differ by at most one segment.
pub fn stratified_kfold(segments: &[Segment], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let hists: Vec<[usize; N_CLASSES]> = segments.iter().map(Segment::class_counts).collect();
    stratified_kfold_histograms(&hists, k, seed)
}

pub fn stratified_kfold_histograms(
    hists: &[[usize; N_CLASSES]],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(DatasetError::FoldCount(k));
    }
    let n = hists.len();
    if n < k {
        return Err(DatasetError::TooFewSegments { n, k });
    }
    let mut total = [0f64; N_CLASSES];
    for h in hists {
        for c in 0..N_CLASSES {
            total[c] += h[c] as f64;
        }
    }
    let target: Vec<f64> = total.iter().map(|t| t / k as f64).collect();
    // rarer classes weigh more when ordering segments
    let weight: Vec<f64> = total
        .iter()
        .map(|&t| if t > 0.0 { 1.0 / t } else { 0.0 })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let key = |i: usize| -> f64 {
        hists[i]
            .iter()
            .zip(&weight)
            .map(|(&c, w)| c as f64 * w)
            .sum()
    };
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)));

    let cap_hi = n.div_ceil(k);
    let n_big = n - (cap_hi - 1) * k; // folds allowed to reach cap_hi
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut counts = vec![[0f64; N_CLASSES]; k];
    let mut big_used = 0;
    for &i in &order {
        let h = &hists[i];
        let mut best: Option<(usize, f64)> = None;
        for f in 0..k {
            let len = folds[f].len();
            let full = len >= cap_hi || (len == cap_hi - 1 && big_used >= n_big && cap_hi > 1);
            if full {
                continue;
            }
            let gain: f64 = (0..N_CLASSES)
                .filter(|&c| target[c] > 0.0)
                .map(|c| {
                    let before = counts[f][c] - target[c];
                    let after = before + h[c] as f64;
                    (after * after - before * before) / target[c]
                })
                .sum();
            if best.is_none_or(|(_, g)| gain < g) {
                best = Some((f, gain));
            }
        }
        let (f, _) = best.expect("fold capacity covers all segments");
        if folds[f].len() == cap_hi - 1 {
            big_used += 1;
        }
        folds[f].push(i);
        for c in 0..N_CLASSES {
            counts[f][c] += h[c] as f64;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Preprocessing options for turning a record into segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub filter: FilterSpec,
    /// Signal (lead) index used.
    pub channel: usize,
    /// Annotator extensions, tried in order.
    pub annotators: Vec<String>,
    /// Keep only windows lying between the first and last annotation.
    pub annotated_span_only: bool,
    /// Per-segment z-score normalisation.
    pub zscore: bool,
    /// Records at other rates are resampled to this rate before filtering.
    pub target_fs: Option<f64>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            filter: FilterSpec::ecg(250.0),
            channel: 0,
            annotators: vec!["q1c".into(), "pu0".into()],
            annotated_span_only: true,
            zscore: false,
            target_fs: Some(250.0),
        }
    }
}

/// Filtered channel plus per-sample labels for one record.
#[derive(Debug, Clone)]
pub struct PreparedRecord {
    pub name: String,
    pub sampling_frequency: f64,
    pub signal: Vec<f64>,
    pub labels: LabelSequence,
    pub waves: Vec<AnnotatedWave>,
    /// `[first, last]` annotated sample, if any.
    pub annotated_span: Option<(usize, usize)>,
    /// Annotations on the prepared sample grid.
    pub annotations: Vec<AnnotationEvent>,
}

/// Filters the configured channel of `record` and paints its labels.
pub fn prepare_record(record: &Record, cfg: &PreprocessConfig) -> Result<PreparedRecord> {
    if cfg.channel >= record.signals.n_signals() {
        return Err(DatasetError::Wfdb(wfdb::WfdbError::Record {
            record: record.header.record_name.clone(),
            msg: format!(
                "channel {} requested but record has {} signals",
                cfg.channel,
                record.signals.n_signals()
            ),
        }));
    }
    let native_fs = record.header.sampling_frequency;
    let mut raw = record.signals.channel(cfg.channel);
    let mut annotations = record.annotations.clone();
    let fs = match cfg.target_fs {
        Some(target) if target != native_fs => {
            raw = dsp::resample(&raw, native_fs, target)?;
            let last = raw.len().saturating_sub(1) as u64;
            for a in &mut annotations {
                a.sample_index = ((a.sample_index as f64 * target / native_fs).round() as u64).min(last);
            }
            target
        }
        _ => native_fs,
    };
    let spec = FilterSpec {
        sampling_frequency: fs,
        ..cfg.filter
    };
    let coeffs = dsp::design_butterworth_bandpass(&spec)?;
    let signal = dsp::filtfilt(&coeffs, &raw)?;
    let labels = build_sample_labels(&annotations, signal.len());
    let waves = annotated_waves(&annotations);
    let annotated_span = match (annotations.first(), annotations.last()) {
        (Some(a), Some(b)) => Some((a.sample_index as usize, b.sample_index as usize)),
        _ => None,
    };
    Ok(PreparedRecord {
        name: record.header.record_name.clone(),
        sampling_frequency: fs,
        signal,
        labels,
        waves,
        annotated_span,
        annotations,
    })
}

/// Segments a prepared record, honouring the span and normalisation options.
pub fn record_segments(rec: &PreparedRecord, cfg: &PreprocessConfig) -> Result<Vec<Segment>> {
    let mut segs = segment_record(&rec.name, &rec.signal, &rec.labels.labels)?;
    if cfg.annotated_span_only {
        match rec.annotated_span {
            Some((lo, hi)) => {
                segs.retain(|s| s.start_offset >= lo && s.start_offset + SEGMENT_LEN - 1 <= hi)
            }
            None => segs.clear(),
        }
    }
    if cfg.zscore {
        segs.iter_mut().for_each(|s| zscore_in_place(&mut s.samples));
    }
    Ok(segs)
}

pub fn zscore_in_place(x: &mut [f32]) {
    let n = x.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    x.iter_mut().for_each(|v| *v = ((*v as f64 - mean) / sd) as f32);
}

const CACHE_MAGIC: &[u8; 8] = b"ECGSEG01";

/// Manifest stored next to a segment cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub format_version: u32,
    pub split: String,
    pub seed: u64,
    pub split_mode: String,
    pub preprocess: PreprocessConfig,
    pub records: Vec<String>,
    /// `(record, start_offset)` per stored segment, in file order.
    pub segments: Vec<(String, usize)>,
    pub data_sha256: String,
}

/// Writes segments as little-endian f32 samples followed by byte labels,
/// with a JSON manifest at `path.manifest.json`.
pub fn write_segment_cache(
    path: &Path,
    segments: &[Segment],
    mut manifest: CacheManifest,
) -> Result<CacheManifest> {
    let mut buf = Vec::with_capacity(16 + segments.len() * SEGMENT_LEN * 5);
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(segments.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(SEGMENT_LEN as u32).to_le_bytes());
    for s in segments {
        for v in &s.samples {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend(s.labels.iter().map(|&l| l as u8));
    }
    manifest.format_version = 1;
    manifest.segments = segments
        .iter()
        .map(|s| (s.record_name.clone(), s.start_offset))
        .collect();
    manifest.data_sha256 = hex(&Sha256::digest(&buf));
    std::fs::File::create(path)?.write_all(&buf)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Cache(e.to_string()))?;
    std::fs::write(manifest_path(path), json)?;
    Ok(manifest)
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.json");
    p.into()
}

pub fn read_segment_cache(path: &Path) -> Result<(Vec<Segment>, CacheManifest)> {
    let json = std::fs::read_to_string(manifest_path(path))?;
    let manifest: CacheManifest =
        serde_json::from_str(&json).map_err(|e| DatasetError::Cache(e.to_string()))?;
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if hex(&Sha256::digest(&buf)) != manifest.data_sha256 {
        return Err(DatasetError::Cache("checksum mismatch".into()));
    }
    if buf.len() < 16 || &buf[..8] != CACHE_MAGIC {
        return Err(DatasetError::Cache("bad magic".into()));
    }
    let n = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let len = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    if buf.len() != 16 + n * len * 5 || manifest.segments.len() != n {
        return Err(DatasetError::Cache("size does not match header".into()));
    }
    let mut segs = Vec::with_capacity(n);
    let mut pos = 16;
    for (name, offset) in &manifest.segments {
        let samples = buf[pos..pos + 4 * len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * len;
        let labels = buf[pos..pos + len]
            .iter()
            .map(|&b| {
                SampleClass::from_code(b as usize)
                    .ok_or_else(|| DatasetError::Cache(format!("bad label byte {b}")))
            })
            .collect::<Result<Vec<_>>>()?;
        pos += len;
        segs.push(Segment {
            samples,
            labels,
            record_name: name.clone(),
            start_offset: *offset,
        });
    }
    Ok((segs, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfdb::symbol_code;

    fn ev(sample: u64, sym: char) -> AnnotationEvent {
        AnnotationEvent {
            sample_index: sample,
            code: symbol_code(sym).unwrap(),
            subtype: 0,
            chan: 0,
            num: 0,
            aux: None,
        }
    }

    fn paint(n: usize, spans: &[(usize, usize, SampleClass)]) -> Vec<SampleClass> {
        let mut v = vec![SampleClass::Nw; n];
        for &(a, b, c) in spans {
            for x in &mut v[a..=b] {
                *x = c;
            }
        }
        v
    }

    #[test]
    fn single_p_wave() {
        let l = build_sample_labels(&[ev(10, '('), ev(15, 'p'), ev(20, ')')], 30);
        assert_eq!(l.labels, paint(30, &[(10, 20, SampleClass::P)]));
        assert_eq!(l.conflicts, 0);
    }

    #[test]
    fn no_events_all_nw() {
        let l = build_sample_labels(&[], 50);
        assert_eq!(l.labels, vec![SampleClass::Nw; 50]);
    }

    #[test]
    fn qrs_and_t() {
        let e = [
            ev(5, '('),
            ev(8, 'N'),
            ev(12, ')'),
            ev(20, '('),
            ev(24, 't'),
            ev(29, ')'),
        ];
        let l = build_sample_labels(&e, 35);
        assert_eq!(
            l.labels,
            paint(35, &[(5, 12, SampleClass::Qrs), (20, 29, SampleClass::T)])
        );
    }

    #[test]
    fn unmatched_boundaries_dropped() {
        // T wave without onset, stray ')' and a beat code other than N
        let e = [ev(2, ')'), ev(10, 't'), ev(14, ')'), ev(20, '('), ev(22, 'V'), ev(25, ')')];
        let l = build_sample_labels(&e, 30);
        assert_eq!(l.labels, paint(30, &[(20, 25, SampleClass::Qrs)]));
    }

    #[test]
    fn overlap_keeps_earlier() {
        let e = [
            ev(5, '('),
            ev(8, 'N'),
            ev(12, ')'),
            ev(10, '('),
            ev(14, 't'),
            ev(18, ')'),
        ];
        // given unsorted so both triples stay adjacent
        let l = build_sample_labels(&e, 20);
        assert_eq!(l.labels, paint(20, &[(5, 12, SampleClass::Qrs)]));
        assert_eq!(l.conflicts, 1);
    }

    #[test]
    fn segmentation_counts() {
        let sig = vec![0.0; 225_000];
        let lab = vec![SampleClass::Nw; 225_000];
        assert_eq!(segment_record("r", &sig, &lab).unwrap().len(), 225);
        let s = segment_record("r", &sig[..1500], &lab[..1500]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].start_offset, 0);
        assert!(segment_record("r", &sig[..999], &lab[..999]).unwrap().is_empty());
        assert!(segment_record("r", &sig[..10], &lab[..9]).is_err());
    }

    #[test]
    fn one_hot_rows() {
        assert_eq!(one_hot_encode(&[SampleClass::P]).rows, vec![[1, 0, 0, 0]]);
        assert_eq!(
            one_hot_encode(&[SampleClass::Nw, SampleClass::Qrs]).rows,
            vec![[0, 0, 0, 1], [0, 1, 0, 0]]
        );
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("sel{i:03}")).collect()
    }

    #[test]
    fn split_is_deterministic() {
        let n = names(105);
        let a = split_records(&n, SplitMode::QTDB_84_21, 7).unwrap();
        let b = split_records(&n, SplitMode::QTDB_84_21, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train_records.len(), a.test_records.len()), (84, 21));
        let c = split_records(&n, SplitMode::QTDB_84_21, 8).unwrap();
        assert_ne!(a.test_records, c.test_records);
        let d = split_records(&n, SplitMode::QTDB_79_26, 7).unwrap();
        assert_eq!(d.test_records.len(), 26);
    }

    #[test]
    fn split_ratio_and_errors() {
        let p = split_records(&names(10), SplitMode::Ratio(0.8), 1).unwrap();
        assert_eq!((p.train_records.len(), p.test_records.len()), (8, 2));
        assert!(matches!(
            split_records(&names(100), SplitMode::QTDB_84_21, 1),
            Err(DatasetError::SplitSize { .. })
        ));
        let mut dup = names(104);
        dup.push("sel000".into());
        assert!(matches!(
            split_records(&dup, SplitMode::QTDB_84_21, 1),
            Err(DatasetError::DuplicateName(_))
        ));
    }

    #[test]
    fn uniform_folds() {
        let h = vec![[100, 200, 300, 400]; 100];
        let folds = stratified_kfold_histograms(&h, 5, 3).unwrap();
        assert!(folds.iter().all(|f| f.len() == 20));
    }

    #[test]
    fn fold_errors() {
        let h = vec![[1, 1, 1, 1]; 4];
        assert!(matches!(
            stratified_kfold_histograms(&h, 1, 0),
            Err(DatasetError::FoldCount(1))
        ));
        assert!(matches!(
            stratified_kfold_histograms(&h, 5, 0),
            Err(DatasetError::TooFewSegments { n: 4, k: 5 })
        ));
    }

    #[test]
    fn uneven_fold_sizes_differ_by_one() {
        let h: Vec<[usize; 4]> = (0..23).map(|i| [i % 3, 5, i % 7, 100]).collect();
        let folds = stratified_kfold_histograms(&h, 5, 9).unwrap();
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 23);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    }

    #[test]
    fn cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.seg");
        let segs = vec![
            Segment {
                samples: (0..SEGMENT_LEN).map(|i| i as f32 * 0.5).collect(),
                labels: (0..SEGMENT_LEN).map(|i| SampleClass::ALL[i % 4]).collect(),
                record_name: "sel100".into(),
                start_offset: 3000,
            };
            2
        ];
        let m = CacheManifest {
            format_version: 0,
            split: "train".into(),
            seed: 1,
            split_mode: "84/21".into(),
            preprocess: PreprocessConfig::default(),
            records: vec!["sel100".into()],
            segments: vec![],
            data_sha256: String::new(),
        };
        write_segment_cache(&path, &segs, m).unwrap();
        let (back, man) = read_segment_cache(&path).unwrap();
        assert_eq!(back, segs);
        assert_eq!(man.segments.len(), 2);
        // corrupt a byte
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[20] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(read_segment_cache(&path).is_err());
    }
}
