use approx::assert_abs_diff_eq;
use ecg_delineation::dsp::{design_butterworth_bandpass, filtfilt, lfilter, resample, FilterSpec};
use proptest::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn spec_strategy() -> impl Strategy<Value = FilterSpec> {
    (1usize..=6, prop::sample::select(vec![250.0, 360.0, 500.0, 1000.0]), 0.05f64..0.3, 0.35f64..0.9).prop_map(
        |(order, fs, lo, hi)| FilterSpec {
            order,
            low_cut: lo * fs / 2.0 * 0.2,
            high_cut: hi * fs / 2.0,
            sampling_frequency: fs,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn designed_filters_are_stable(spec in spec_strategy()) {
        let c = design_butterworth_bandpass(&spec).unwrap();
        prop_assert_eq!(c.order(), 2 * spec.order);
        prop_assert!(c.is_stable());
        prop_assert!(c.magnitude(0.0, spec.sampling_frequency) < 1e-6);
        // unit gain sits at the geometric centre of the prewarped edges
        let fs = spec.sampling_frequency;
        let warp = |f: f64| (std::f64::consts::PI * f / fs).tan();
        let centre = (warp(spec.low_cut) * warp(spec.high_cut)).sqrt().atan() * fs / std::f64::consts::PI;
        prop_assert!((c.magnitude(centre, spec.sampling_frequency) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filtfilt_commutes_with_time_reversal(x in prop::collection::vec(-5.0f64..5.0, 40..300)) {
        let c = design_butterworth_bandpass(&FilterSpec::ecg(250.0)).unwrap();
        let y = filtfilt(&c, &x).unwrap();
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        let mut y_rev = filtfilt(&c, &rev).unwrap();
        y_rev.reverse();
        for (a, b) in y.iter().zip(&y_rev) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn resampled_length_tracks_duration(
        n in 1usize..3000,
        fs_in in prop::sample::select(vec![128.0, 250.0, 360.0, 500.0, 1000.0]),
        fs_out in prop::sample::select(vec![125.0, 250.0, 360.0]),
    ) {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let y = resample(&x, fs_in, fs_out).unwrap();
        prop_assert_eq!(y.len(), (n as f64 * fs_out / fs_in).round() as usize);
    }
}

#[test]
fn impulse_response_spectrum_matches_design() {
    let fs = 250.0;
    let c = design_butterworth_bandpass(&FilterSpec::ecg(fs)).unwrap();
    let n = 1 << 15;
    let mut impulse = vec![0.0; n];
    impulse[0] = 1.0;
    let h = lfilter(&c, &impulse, None);
    let mut buf: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    for k in (0..n / 2).step_by(97) {
        let f = k as f64 * fs / n as f64;
        assert_abs_diff_eq!(buf[k].norm(), c.magnitude(f, fs), epsilon = 1e-6);
    }
}

#[test]
fn zero_phase_keeps_pulse_peak() {
    let c = design_butterworth_bandpass(&FilterSpec::ecg(250.0)).unwrap();
    let x: Vec<f64> = (0..1001).map(|i| (-0.5 * ((i as f64 - 500.0) / 6.0).powi(2)).exp()).collect();
    let y = filtfilt(&c, &x).unwrap();
    let peak = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b])).unwrap();
    assert_eq!(peak, 500);
}

#[test]
fn resampled_sine_keeps_amplitude_and_phase() {
    // least-squares fit of a sin + b cos at the known frequency
    for (fs_in, fs_out) in [(360.0, 250.0), (250.0, 360.0), (1000.0, 250.0)] {
        let f = 5.0;
        let n = (4.0 * fs_in) as usize;
        let x: Vec<f64> = (0..n).map(|i| (std::f64::consts::TAU * f * i as f64 / fs_in).sin()).collect();
        let y = resample(&x, fs_in, fs_out).unwrap();
        let (lo, hi) = (y.len() / 4, 3 * y.len() / 4);
        let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (m, &v) in y.iter().enumerate().take(hi).skip(lo) {
            let w = std::f64::consts::TAU * f * m as f64 / fs_out;
            let (s, c) = w.sin_cos();
            ss += s * s;
            sc += s * c;
            cc += c * c;
            ys += v * s;
            yc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        assert_abs_diff_eq!(a, 1.0, epsilon = 2e-3);
        assert_abs_diff_eq!(b, 0.0, epsilon = 2e-3);
    }
}
