//! Synthetic single-lead ECG with exact wave boundary annotations.
//!
//! Each beat is a sum of Gaussians (P, Q, R, S, T). Boundaries sit at
//! 2.5 standard deviations from the wave centres, so every annotated wave
//! is known exactly. Records can be written as WFDB files laid out like a
//! QT-style database (`.hea`, format-212 `.dat`, `.q1c` annotations).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{annotated_waves, AnnotatedWave};
use crate::wfdb::{
    self, symbol_code, AnnotationEvent, Record, RecordHeader, SignalData, SignalFormat, SignalSpec, WfdbError,
};

/// Boundary distance from a Gaussian centre, in standard deviations.
const EDGE_SD: f64 = 2.5;
/// ADC units per mV in written records.
pub const ADC_GAIN: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sampling_frequency: f64,
    pub duration_s: f64,
    pub heart_rate_bpm: f64,
    /// Relative beat-to-beat RR variation (uniform, +-).
    pub rr_jitter: f64,
    /// Relative per-beat amplitude variation (uniform, +-).
    pub amplitude_jitter: f64,
    /// White noise standard deviation, mV.
    pub noise_mv: f64,
    /// Amplitude of a 0.3 Hz baseline wander, mV.
    pub wander_mv: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sampling_frequency: 250.0,
            duration_s: 60.0,
            heart_rate_bpm: 70.0,
            rr_jitter: 0.05,
            amplitude_jitter: 0.15,
            noise_mv: 0.02,
            wander_mv: 0.1,
            seed: 0,
        }
    }
}

/// One Gaussian component: centre offset from R (s), amplitude (mV), width (s).
#[derive(Debug, Clone, Copy)]
struct Bump {
    offset: f64,
    amplitude: f64,
    sd: f64,
}

impl Bump {
    fn at(&self, t: f64, r: f64) -> f64 {
        let z = (t - r - self.offset) / self.sd;
        self.amplitude * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub name: String,
    pub sampling_frequency: f64,
    /// Lead signal in mV.
    pub signal: Vec<f64>,
    /// `(`, peak, `)` triples for every P, QRS and T wave, in time order.
    pub annotations: Vec<AnnotationEvent>,
}

impl SyntheticRecord {
    /// R-peak sample of every beat.
    pub fn r_peaks(&self) -> Vec<usize> {
        self.annotations
            .iter()
            .filter(|e| e.is_beat())
            .map(|e| e.sample_index as usize)
            .collect()
    }

    pub fn waves(&self) -> Vec<AnnotatedWave> {
        annotated_waves(&self.annotations)
    }

    fn header(&self) -> RecordHeader {
        RecordHeader {
            record_name: self.name.clone(),
            n_signals: 1,
            sampling_frequency: self.sampling_frequency,
            n_samples: self.signal.len(),
            signals: vec![SignalSpec {
                file_name: format!("{}.dat", self.name),
                format: SignalFormat::Packed212,
                gain: ADC_GAIN,
                baseline: 0,
                adc_zero: 0,
                units: "mV".into(),
                description: "synthetic".into(),
            }],
        }
    }

    fn adc(&self) -> Vec<i32> {
        self.signal
            .iter()
            .map(|&v| (v * ADC_GAIN).round().clamp(-2048.0, 2047.0) as i32)
            .collect()
    }

    /// The record as it reads back from disk (ADC-quantised).
    pub fn to_record(&self, annotator: &str) -> Record {
        let signal = self.adc().into_iter().map(|a| a as f64 / ADC_GAIN).collect();
        Record {
            header: self.header(),
            signals: SignalData::from_rows(1, signal).expect("one signal"),
            annotations: self.annotations.clone(),
            annotator: annotator.to_string(),
        }
    }

    /// Writes `<name>.hea`, `<name>.dat` and `<name>.<annotator>` into `dir`.
    pub fn write_wfdb(&self, dir: &Path, annotator: &str) -> Result<(), WfdbError> {
        wfdb::write_record(dir, &self.header(), &self.adc(), &[(annotator, &self.annotations)])
    }
}

fn code(symbol: char) -> u8 {
    symbol_code(symbol).expect("standard annotation symbol")
}

/// Generates one record; identical configs give identical records.
pub fn synthesize(name: &str, cfg: &SynthConfig) -> SyntheticRecord {
    let fs = cfg.sampling_frequency;
    let n = (cfg.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter = |rng: &mut ChaCha8Rng, rel: f64| if rel > 0.0 { 1.0 + rng.gen_range(-rel..rel) } else { 1.0 };
    // keep the next P clear of the previous T
    let rr_mean = (60.0 / cfg.heart_rate_bpm).max(0.7);
    let mut beats: Vec<(f64, [Bump; 5])> = Vec::new();
    let mut r = 0.35;
    loop {
        let rr = (rr_mean * jitter(&mut rng, cfg.rr_jitter)).max(0.7);
        let qt = 0.30 * (rr / 0.857).sqrt().clamp(0.85, 1.1);
        let mut a = |base: f64| base * jitter(&mut rng, cfg.amplitude_jitter);
        let bumps = [
            Bump { offset: -0.18, amplitude: a(0.15), sd: 0.022 },
            Bump { offset: -0.025, amplitude: a(-0.12), sd: 0.007 },
            Bump { offset: 0.0, amplitude: a(1.1), sd: 0.009 },
            Bump { offset: 0.027, amplitude: a(-0.25), sd: 0.008 },
            Bump { offset: qt, amplitude: a(0.3), sd: 0.04 },
        ];
        let t_end = r + qt + EDGE_SD * 0.04;
        if ((t_end + 0.05) * fs) as usize >= n {
            break;
        }
        beats.push((r, bumps));
        r += rr;
    }
    let noise = Normal::new(0.0, cfg.noise_mv.max(0.0)).expect("finite noise level");
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let signal: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let mut v = cfg.wander_mv * (std::f64::consts::TAU * 0.3 * t + phase).sin();
            for (r, bumps) in &beats {
                if (t - r).abs() < 0.6 {
                    v += bumps.iter().map(|b| b.at(t, *r)).sum::<f64>();
                }
            }
            v + if cfg.noise_mv > 0.0 { noise.sample(&mut rng) } else { 0.0 }
        })
        .collect();
    let s = |t: f64| (t * fs).round() as u64;
    let mut annotations = Vec::new();
    for (r, b) in &beats {
        let [p, q, _, sw, tw] = b;
        let triples = [
            (s(r + p.offset - EDGE_SD * p.sd), s(r + p.offset), s(r + p.offset + EDGE_SD * p.sd), 'p'),
            (s(r + q.offset - EDGE_SD * q.sd), s(*r), s(r + sw.offset + EDGE_SD * sw.sd), 'N'),
            (s(r + tw.offset - EDGE_SD * tw.sd), s(r + tw.offset), s(r + tw.offset + EDGE_SD * tw.sd), 't'),
        ];
        for (on, peak, off, sym) in triples {
            annotations.push(AnnotationEvent::new(on, code('(')));
            annotations.push(AnnotationEvent::new(peak, code(sym)));
            annotations.push(AnnotationEvent::new(off, code(')')));
        }
    }
    SyntheticRecord {
        name: name.to_string(),
        sampling_frequency: fs,
        signal,
        annotations,
    }
}

/// `n` records named `syn001`, `syn002`, ... with heart rates spread over
/// 58..=85 bpm and independent seeds derived from `base.seed`.
pub fn synthesize_database(n: usize, base: &SynthConfig) -> Vec<SyntheticRecord> {
    (0..n)
        .map(|i| {
            let cfg = SynthConfig {
                heart_rate_bpm: 58.0 + 27.0 * (i as f64 * 0.618_034).fract(),
                seed: base.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..base.clone()
            };
            synthesize(&format!("syn{:03}", i + 1), &cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SampleClass;

    #[test]
    fn deterministic_and_annotated() {
        let cfg = SynthConfig {
            duration_s: 10.0,
            ..SynthConfig::default()
        };
        let a = synthesize("x", &cfg);
        assert_eq!(a, synthesize("x", &cfg));
        assert_eq!(a.signal.len(), 2500);
        let waves = a.waves();
        let beats = a.r_peaks().len();
        assert!((10..=13).contains(&beats), "{beats} beats");
        assert_eq!(waves.len(), 3 * beats);
        for w in &waves {
            assert!(w.onset.unwrap() < w.peak && w.peak < w.offset.unwrap());
        }
        for pair in waves.windows(2) {
            assert!(pair[0].offset.unwrap() < pair[1].onset.unwrap());
        }
        let qrs: Vec<_> = waves.iter().filter(|w| w.class == SampleClass::Qrs).collect();
        for (w, r) in qrs.iter().zip(a.r_peaks()) {
            assert_eq!(w.peak as usize, r);
            assert!(a.signal[r] > 0.6);
        }
    }

    #[test]
    fn database_records_differ() {
        let cfg = SynthConfig {
            duration_s: 5.0,
            ..SynthConfig::default()
        };
        let db = synthesize_database(3, &cfg);
        assert_eq!(db[0].name, "syn001");
        assert_ne!(db[0].signal, db[1].signal);
    }
}
