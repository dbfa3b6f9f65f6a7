use ecg_delineation::dataset::{
    prepare_record, stratified_kfold, PreprocessConfig, SampleClass, Segment, SEGMENT_LEN,
};
use ecg_delineation::delineate::{delineate_record, PostprocessConfig, SampleClassifier};
use ecg_delineation::eval::match_beats;
use ecg_delineation::nn::{softmax, ArchConfig, Dropout, Model, Tensor};
use ecg_delineation::synth::{synthesize, SynthConfig};
use ecg_delineation::train::{load_checkpoint, save_checkpoint, CheckpointManifest};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-80.0f64..80.0, 4..=64)) {
        let n = logits.len() / 4 * 4;
        let x = Tensor::from_vec(&[1, n / 4, 4], logits[..n].to_vec()).unwrap();
        let p = softmax(&x);
        for row in p.data().chunks(4) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn folds_partition_segments(
        dominant in prop::collection::vec(0usize..4, 5..60),
        k in 2usize..6,
        seed in any::<u64>(),
    ) {
        prop_assume!(dominant.len() >= k);
        let segments: Vec<Segment> = dominant
            .iter()
            .enumerate()
            .map(|(i, &c)| Segment {
                samples: vec![0.0; 10],
                labels: (0..10).map(|j| SampleClass::from_code(if j < 7 { c } else { 3 }).unwrap()).collect(),
                record_name: format!("r{i}"),
                start_offset: 0,
            })
            .collect();
        let folds = stratified_kfold(&segments, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen: Vec<usize> = folds.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..segments.len()).collect::<Vec<_>>());
        prop_assert!(folds.iter().all(|f| !f.is_empty()));
        prop_assert_eq!(&folds, &stratified_kfold(&segments, k, seed).unwrap());
    }
}

#[test]
fn dropout_keeps_expected_value() {
    let d = Dropout::new(0.2).unwrap();
    let x = Tensor::from_vec(&[1, 100_000, 1], vec![1.0f64; 100_000]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (y, mask) = d.forward(&x, true, &mut rng);
    assert!(mask.is_some());
    let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / 1e5;
    let mean = y.data().iter().sum::<f64>() / 1e5;
    assert!((zeros - 0.2).abs() < 0.02, "zero fraction {zeros}");
    assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    let (inference, none) = d.forward(&x, false, &mut rng);
    assert!(none.is_none());
    assert_eq!(inference, x);
}

#[test]
fn checkpoint_file_round_trip() {
    let arch = ArchConfig {
        conv_filters: vec![3, 4, 5],
        lstm_units: vec![6, 4],
        ..ArchConfig::default()
    };
    let model: Model<f32> = Model::init(&arch, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &model, &CheckpointManifest::new(&model, 11)).unwrap();
    let (back, manifest) = load_checkpoint::<f32>(&path, Some(&arch)).unwrap();
    assert_eq!(manifest.seed, 11);
    let x = Tensor::from_vec(&[1, 50, 1], (0..50).map(|i| (i as f32 * 0.2).sin()).collect()).unwrap();
    assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(load_checkpoint::<f32>(&path, None).is_err());
}

/// Returns the reference labels of the record it was built from.
struct Oracle(Vec<SampleClass>);

impl SampleClassifier for Oracle {
    fn classify(
        &self,
        windows: &[&[f32]],
    ) -> Result<Vec<Vec<SampleClass>>, ecg_delineation::delineate::DelineateError> {
        Ok(windows
            .iter()
            .enumerate()
            .map(|(i, w)| self.0[i * SEGMENT_LEN..i * SEGMENT_LEN + w.len()].to_vec())
            .collect())
    }
}

#[test]
fn reference_labels_delineate_to_reference_beats() {
    for fs in [250.0, 360.0] {
        let syn = synthesize(
            "d",
            &SynthConfig {
                sampling_frequency: fs,
                duration_s: 20.0,
                seed: 4,
                ..SynthConfig::default()
            },
        );
        let rec = prepare_record(&syn.to_record("q1c"), &PreprocessConfig::default()).unwrap();
        assert_eq!(rec.sampling_frequency, 250.0);
        let oracle = Oracle(rec.labels.labels.clone());
        let result =
            delineate_record(&oracle, "d", &rec.signal, rec.sampling_frequency, &PostprocessConfig::default()).unwrap();
        let r_peaks: Vec<usize> = rec.annotations.iter().filter(|a| a.is_beat()).map(|a| a.sample_index as usize).collect();
        let qrs: Vec<_> = result.waves.iter().filter(|w| w.class == SampleClass::Qrs).collect();
        assert_eq!(qrs.len(), r_peaks.len());
        for (w, &r) in qrs.iter().zip(&r_peaks) {
            assert!(w.onset <= r && r <= w.offset, "R at {r} outside {}..{}", w.onset, w.offset);
            assert!(w.peak.abs_diff(r) <= 2, "peak {} vs R {r}", w.peak);
        }
        let peaks = result.positions(SampleClass::Qrs, |w| w.peak);
        let m = match_beats(&r_peaks, &peaks, 0.150, 250.0).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (r_peaks.len(), 0, 0));
        for class in [SampleClass::P, SampleClass::T] {
            assert_eq!(result.positions(class, |w| w.peak).len(), r_peaks.len());
        }
    }
}
