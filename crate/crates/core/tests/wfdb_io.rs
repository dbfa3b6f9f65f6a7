use std::path::Path;

use ecg_delineation::wfdb::{
    decode_annotations, encode_212, encode_annotation_stream, load_record, unpack_212, write_record, AnnotationEvent,
    RecordHeader, SignalFormat, SignalSpec,
};
use proptest::prelude::*;

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

#[test]
fn mitdb_excerpt_matches_reference_values() {
    let rec = load_record(fixtures(), "100", &[]).unwrap();
    assert_eq!(rec.header.sampling_frequency, 360.0);
    assert_eq!(rec.signals.n_signals(), 2);
    let text = std::fs::read_to_string(fixtures().join("100.expected.csv")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), rec.signals.n_samples());
    for (i, row) in rows.iter().enumerate() {
        for (j, &want) in row.iter().enumerate() {
            let got = rec.signals.get(i, j);
            assert!((got - want).abs() < 1e-9, "sample {i} signal {j}: {got} vs {want}");
        }
    }
}

#[test]
fn written_records_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let adc: Vec<i32> = (0..400).map(|i| ((i * 37) % 4096) - 2048).collect();
    let header = RecordHeader {
        record_name: "rt".into(),
        n_signals: 2,
        sampling_frequency: 250.0,
        n_samples: 200,
        signals: (0..2)
            .map(|k| SignalSpec {
                file_name: "rt.dat".into(),
                format: SignalFormat::Packed212,
                gain: 200.0,
                baseline: 10 * k,
                adc_zero: 0,
                units: "mV".into(),
                description: format!("lead{k}"),
            })
            .collect(),
    };
    let events = vec![
        AnnotationEvent::new(5, 39),
        AnnotationEvent::new(9, 1),
        AnnotationEvent::new(14, 40),
        AnnotationEvent::new(199, 27),
    ];
    write_record(dir.path(), &header, &adc, &[("q1c", &events)]).unwrap();
    let rec = load_record(dir.path(), "rt", &["q1c"]).unwrap();
    assert_eq!(rec.header, header);
    assert_eq!(rec.annotator, "q1c");
    assert_eq!(rec.annotations.len(), events.len());
    for (a, b) in rec.annotations.iter().zip(&events) {
        assert_eq!((a.sample_index, a.code), (b.sample_index, b.code));
    }
    for i in 0..200 {
        for k in 0..2 {
            let want = (adc[2 * i + k] - 10 * k as i32) as f64 / 200.0;
            assert!((rec.signals.get(i, k) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_annotator_falls_back_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let header = RecordHeader {
        record_name: "fb".into(),
        n_signals: 1,
        sampling_frequency: 250.0,
        n_samples: 4,
        signals: vec![SignalSpec {
            file_name: "fb.dat".into(),
            format: SignalFormat::Packed212,
            gain: 200.0,
            baseline: 0,
            adc_zero: 0,
            units: "mV".into(),
            description: String::new(),
        }],
    };
    write_record(dir.path(), &header, &[1, 2, 3, 4], &[("pu0", &[AnnotationEvent::new(2, 1)])]).unwrap();
    let rec = load_record(dir.path(), "fb", &["q1c", "pu0"]).unwrap();
    assert_eq!(rec.annotator, "pu0");
    assert!(load_record(dir.path(), "fb", &["q1c"]).is_err());
}

proptest! {
    #[test]
    fn format_212_round_trip(values in prop::collection::vec(-2048i32..=2047, 0..400)) {
        let bytes = encode_212(&values);
        prop_assert_eq!(bytes.len(), (values.len() * 3).div_ceil(2));
        prop_assert_eq!(unpack_212(&bytes, values.len()).unwrap(), values);
    }

    #[test]
    fn annotation_times_are_cumulative(
        steps in prop::collection::vec((0u64..5000, 1u8..=41), 0..60),
    ) {
        let mut t = 0;
        let events: Vec<(u64, u8)> = steps.iter().map(|&(d, c)| { t += d; (t, c) }).collect();
        let decoded = decode_annotations(&encode_annotation_stream(&events)).unwrap();
        let got: Vec<(u64, u8)> = decoded.iter().map(|e| (e.sample_index, e.code)).collect();
        prop_assert_eq!(got, events);
    }
}
