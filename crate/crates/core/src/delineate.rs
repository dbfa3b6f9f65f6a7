//! Per-sample class probabilities to wave onset/peak/offset events.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{zscore_in_place, SampleClass, N_CLASSES, SEGMENT_LEN};
use crate::nn::{Model, NnError, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum DelineateError {
    #[error("record {0} has no samples")]
    EmptyRecord(String),
    #[error("classifier returned {got} labels for a window of {want}")]
    LabelCount { got: usize, want: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DelineateError>;

/// Most probable class per row of a `[.., n_classes]` tensor; ties go to
/// the lowest class code.
pub fn argmax_decode<S: Scalar>(probs: &Tensor<S>) -> Vec<SampleClass> {
    let k = *probs.shape().last().unwrap_or(&N_CLASSES);
    probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            SampleClass::from_code(best).unwrap_or(SampleClass::Nw)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Runs shorter than this become NW.
    pub min_duration_ms: f64,
    /// Same-class runs separated by at most this much NW are joined.
    pub merge_gap_ms: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            min_duration_ms: 20.0,
            merge_gap_ms: 8.0,
        }
    }
}

impl PostprocessConfig {
    pub fn min_duration_samples(&self, fs: f64) -> usize {
        ms_to_samples(self.min_duration_ms, fs)
    }

    pub fn merge_gap_samples(&self, fs: f64) -> usize {
        ms_to_samples(self.merge_gap_ms, fs)
    }
}

fn ms_to_samples(ms: f64, fs: f64) -> usize {
    (ms * fs / 1000.0).round().max(0.0) as usize
}

/// A contiguous labelled run, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveRun {
    pub class: SampleClass,
    pub onset: usize,
    pub offset: usize,
}

impl WaveRun {
    pub fn len(&self) -> usize {
        self.offset - self.onset + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn runs(labels: &[SampleClass]) -> Vec<WaveRun> {
    let mut out: Vec<WaveRun> = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.class == c && r.offset + 1 == i => r.offset = i,
            _ => out.push(WaveRun {
                class: c,
                onset: i,
                offset: i,
            }),
        }
    }
    out
}

/// Wave runs after merging same-class runs across short NW gaps and then
/// dropping runs below the minimum duration, both in samples.
pub fn extract_runs(labels: &[SampleClass], min_duration: usize, merge_gap: usize) -> Vec<WaveRun> {
    let all = runs(labels);
    let mut merged: Vec<WaveRun> = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let r = all[i];
        i += 1;
        if r.class == SampleClass::Nw {
            continue;
        }
        if let Some(last) = merged.last_mut() {
            // the only thing between `last` and `r` is one NW run
            let between = &all[i - 2];
            if last.class == r.class
                && between.class == SampleClass::Nw
                && between.onset == last.offset + 1
                && between.len() <= merge_gap
            {
                last.offset = r.offset;
                continue;
            }
        }
        merged.push(r);
    }
    merged.retain(|r| r.len() >= min_duration.max(1));
    merged
}

/// [`extract_runs`] with durations given in milliseconds.
pub fn extract_wave_segments(labels: &[SampleClass], fs: f64, cfg: &PostprocessConfig) -> Vec<WaveRun> {
    extract_runs(labels, cfg.min_duration_samples(fs), cfg.merge_gap_samples(fs))
}

/// Label sequence of length `n` with `runs` painted over NW.
pub fn paint_runs(runs: &[WaveRun], n: usize) -> Vec<SampleClass> {
    let mut out = vec![SampleClass::Nw; n];
    for r in runs {
        for v in &mut out[r.onset..=r.offset.min(n.saturating_sub(1))] {
            *v = r.class;
        }
    }
    out
}

/// Index of the largest absolute amplitude in `signal[onset..=offset]`;
/// ties go to the earliest index.
pub fn locate_peak(signal: &[f64], onset: usize, offset: usize) -> usize {
    let hi = offset.min(signal.len().saturating_sub(1));
    let mut best = onset;
    for i in onset..=hi {
        if signal[i].abs() > signal[best].abs() {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveSegment {
    pub class: SampleClass,
    pub onset: usize,
    pub peak: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelineationResult {
    pub record_name: String,
    pub sampling_frequency: f64,
    pub waves: Vec<WaveSegment>,
}

impl DelineationResult {
    /// Sample indices of every wave of `class` at the given fiducial.
    pub fn positions(&self, class: SampleClass, pick: impl Fn(&WaveSegment) -> usize) -> Vec<usize> {
        self.waves.iter().filter(|w| w.class == class).map(pick).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "record,class,onset,peak,offset,onset_s,peak_s,offset_s")?;
        }
        let s = |i: usize| i as f64 / self.sampling_frequency;
        for wave in &self.waves {
            writeln!(
                w,
                "{},{},{},{},{},{:.4},{:.4},{:.4}",
                self.record_name,
                wave.class,
                wave.onset,
                wave.peak,
                wave.offset,
                s(wave.onset),
                s(wave.peak),
                s(wave.offset)
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Anything that labels a window of filtered samples.
pub trait SampleClassifier {
    /// One label sequence per window, each as long as its window.
    fn classify(&self, windows: &[&[f32]]) -> Result<Vec<Vec<SampleClass>>>;
}

/// Runs a trained model window by window.
pub struct ModelClassifier<'a> {
    pub model: &'a Model<f32>,
    /// Same per-window standardisation as used for training.
    pub zscore: bool,
    /// Windows per forward pass.
    pub batch: usize,
}

impl<'a> ModelClassifier<'a> {
    pub fn new(model: &'a Model<f32>, zscore: bool) -> Self {
        Self {
            model,
            zscore,
            batch: 16,
        }
    }

    fn run(&self, windows: &[&[f32]]) -> Result<Vec<Vec<SampleClass>>> {
        let t = windows[0].len();
        let mut data = Vec::with_capacity(windows.len() * t);
        for w in windows {
            let start = data.len();
            data.extend_from_slice(w);
            if self.zscore {
                zscore_in_place(&mut data[start..]);
            }
        }
        let x = Tensor::from_vec(&[windows.len(), t, 1], data)?;
        let labels = argmax_decode(&self.model.predict(&x)?);
        Ok(labels.chunks(t.max(1)).map(|c| c.to_vec()).collect())
    }
}

impl SampleClassifier for ModelClassifier<'_> {
    fn classify(&self, windows: &[&[f32]]) -> Result<Vec<Vec<SampleClass>>> {
        let mut out = Vec::with_capacity(windows.len());
        let mut i = 0;
        while i < windows.len() {
            // batch equal-length windows together
            let t = windows[i].len();
            let mut j = i;
            while j < windows.len() && j - i < self.batch.max(1) && windows[j].len() == t {
                j += 1;
            }
            out.extend(self.run(&windows[i..j])?);
            i = j;
        }
        Ok(out)
    }
}

/// Labels a whole record in consecutive 1000-sample windows.
pub fn label_record<C: SampleClassifier + ?Sized>(classifier: &C, signal: &[f64]) -> Result<Vec<SampleClass>> {
    let x: Vec<f32> = signal.iter().map(|&v| v as f32).collect();
    let windows: Vec<&[f32]> = x.chunks(SEGMENT_LEN).collect();
    let labelled = classifier.classify(&windows)?;
    let mut labels = Vec::with_capacity(x.len());
    for (w, l) in windows.iter().zip(labelled) {
        if l.len() != w.len() {
            return Err(DelineateError::LabelCount {
                got: l.len(),
                want: w.len(),
            });
        }
        labels.extend(l);
    }
    Ok(labels)
}

/// Waves from a label sequence, peaks taken on `signal`.
pub fn waves_from_labels(
    signal: &[f64],
    labels: &[SampleClass],
    fs: f64,
    cfg: &PostprocessConfig,
) -> Vec<WaveSegment> {
    let mut waves: Vec<WaveSegment> = extract_wave_segments(labels, fs, cfg)
        .into_iter()
        .map(|r| WaveSegment {
            class: r.class,
            onset: r.onset,
            peak: locate_peak(signal, r.onset, r.offset),
            offset: r.offset,
        })
        .collect();
    waves.sort_by_key(|w| (w.onset, w.class));
    waves
}

/// Filtered record to wave events.
pub fn delineate_record<C: SampleClassifier + ?Sized>(
    classifier: &C,
    record_name: &str,
    signal: &[f64],
    fs: f64,
    cfg: &PostprocessConfig,
) -> Result<DelineationResult> {
    if signal.is_empty() {
        return Err(DelineateError::EmptyRecord(record_name.to_string()));
    }
    let labels = label_record(classifier, signal)?;
    Ok(DelineationResult {
        record_name: record_name.to_string(),
        sampling_frequency: fs,
        waves: waves_from_labels(signal, &labels, fs, cfg),
    })
}
