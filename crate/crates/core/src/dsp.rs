//! Butterworth band-pass design, zero-phase filtering and rational
//! resampling. All arithmetic is `f64`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("signal of {len} samples is too short, need more than {required} for edge padding")]
    SignalTooShort { len: usize, required: usize },
    #[error("invalid sampling rate {0}")]
    InvalidRate(f64),
}

pub type Result<T> = std::result::Result<T, DspError>;

/// Band-pass specification: prototype order and cut-offs in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub low_cut: f64,
    pub high_cut: f64,
    pub sampling_frequency: f64,
}

impl FilterSpec {
    /// The ECG preprocessing filter: 3rd order, 0.5-40 Hz.
    pub fn ecg(sampling_frequency: f64) -> Self {
        Self {
            order: 3,
            low_cut: 0.5,
            high_cut: 40.0,
            sampling_frequency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.sampling_frequency / 2.0;
        if self.order == 0 {
            return Err(DspError::InvalidSpec("order must be >= 1".into()));
        }
        if !(self.sampling_frequency > 0.0 && self.sampling_frequency.is_finite()) {
            return Err(DspError::InvalidSpec(format!(
                "sampling frequency {} must be positive",
                self.sampling_frequency
            )));
        }
        if !(0.0 < self.low_cut && self.low_cut < self.high_cut && self.high_cut < nyq) {
            return Err(DspError::InvalidSpec(format!(
                "need 0 < low_cut ({}) < high_cut ({}) < Nyquist ({nyq})",
                self.low_cut, self.high_cut
            )));
        }
        Ok(())
    }
}

/// Transfer function `B(z)/A(z)` with `a[0] == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IirCoefficients {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
}

impl IirCoefficients {
    /// Complex response at `freq` Hz for sampling rate `fs`.
    pub fn response(&self, freq: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq / fs);
        let eval = |c: &[f64]| {
            c.iter()
                .rev()
                .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * z_inv + v)
        };
        eval(&self.b) / eval(&self.a)
    }

    pub fn magnitude(&self, freq: f64, fs: f64) -> f64 {
        self.response(freq, fs).norm()
    }

    /// Roots of the denominator polynomial.
    pub fn poles(&self) -> Vec<Complex64> {
        polynomial_roots(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    pub fn order(&self) -> usize {
        self.a.len().max(self.b.len()) - 1
    }
}

/// Zeros, poles and gain of a digital filter.
#[derive(Debug, Clone)]
pub struct ZeroPoleGain {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
}

impl ZeroPoleGain {
    pub fn to_coefficients(&self) -> IirCoefficients {
        let b: Vec<f64> = poly_from_roots(&self.zeros)
            .iter()
            .map(|c| c.re * self.gain)
            .collect();
        let a: Vec<f64> = poly_from_roots(&self.poles).iter().map(|c| c.re).collect();
        IirCoefficients { b, a }
    }
}

/// Digital Butterworth band-pass in zero/pole/gain form.
///
/// The analog low-pass prototype is shifted to band-pass around the
/// pre-warped cut-offs and mapped with the bilinear transform, so the
/// -3 dB points land on `low_cut` and `high_cut`.
pub fn butterworth_bandpass_zpk(spec: &FilterSpec) -> Result<ZeroPoleGain> {
    spec.validate()?;
    let n = spec.order;
    let fs2 = 2.0 * spec.sampling_frequency;
    let warp = |f: f64| fs2 * (PI * f / spec.sampling_frequency).tan();
    let (w_lo, w_hi) = (warp(spec.low_cut), warp(spec.high_cut));
    let bw = w_hi - w_lo;
    let w0_sq = w_lo * w_hi;

    let mut analog_poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        // s^2 - p*bw*s + w0^2 = 0
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        analog_poles.push((pb + disc) / 2.0);
        analog_poles.push((pb - disc) / 2.0);
    }
    // n zeros at s = 0, gain bw^n; the other n zeros sit at infinity
    let analog_gain = bw.powi(n as i32);

    let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);
    let poles: Vec<Complex64> = analog_poles.iter().map(|&p| bilinear(p)).collect();
    let mut zeros = vec![Complex64::new(1.0, 0.0); n];
    zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), n));
    let num = Complex64::new(fs2, 0.0).powu(n as u32);
    let den = analog_poles
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, &p| acc * (fs2 - p));
    let gain = analog_gain * (num / den).re;
    Ok(ZeroPoleGain { zeros, poles, gain })
}

pub fn design_butterworth_bandpass(spec: &FilterSpec) -> Result<IirCoefficients> {
    Ok(butterworth_bandpass_zpk(spec)?.to_coefficients())
}

fn poly_from_roots(roots: &[Complex64]) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v * r;
        }
        c = next;
    }
    c
}

/// Roots of `c[0] x^n + c[1] x^(n-1) + ... + c[n]` by Aberth-Ehrlich
/// iteration.
pub fn polynomial_roots(c: &[f64]) -> Vec<Complex64> {
    let lead = c.iter().position(|&v| v != 0.0).unwrap_or(c.len());
    let c = &c[lead..];
    if c.len() < 2 {
        return Vec::new();
    }
    let n = c.len() - 1;
    let coef: Vec<Complex64> = c.iter().map(|&v| Complex64::new(v / c[0], 0.0)).collect();
    let eval = |z: Complex64| {
        let mut p = Complex64::new(0.0, 0.0);
        let mut dp = Complex64::new(0.0, 0.0);
        for &a in &coef {
            dp = dp * z + p;
            p = p * z + a;
        }
        (p, dp)
    };
    let radius = 1.0 + coef[1..].iter().map(|a| a.norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(0.5 * radius, 2.0 * PI * k as f64 / n as f64 + 0.4))
        .collect();
    for _ in 0..500 {
        let mut max_step: f64 = 0.0;
        for i in 0..n {
            let (p, dp) = eval(z[i]);
            if p.norm() == 0.0 {
                continue;
            }
            let ratio = p / dp;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| 1.0 / (z[i] - z[j]))
                .sum();
            let step = ratio / (1.0 - ratio * repulsion);
            z[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-15 {
            break;
        }
    }
    z
}

/// Direct-form II transposed filter with optional initial state.
pub fn lfilter(coeffs: &IirCoefficients, x: &[f64], zi: Option<&[f64]>) -> Vec<f64> {
    let n = coeffs.a.len().max(coeffs.b.len());
    let a0 = coeffs.a[0];
    let mut b = coeffs.b.clone();
    let mut a = coeffs.a.clone();
    b.resize(n, 0.0);
    a.resize(n, 0.0);
    b.iter_mut().for_each(|v| *v /= a0);
    a.iter_mut().for_each(|v| *v /= a0);
    let mut z = vec![0.0; n];
    if let Some(init) = zi {
        z[..n - 1].copy_from_slice(&init[..n - 1]);
    }
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z[0];
        for k in 1..n {
            z[k - 1] = b[k] * xi + z[k] - a[k] * yi;
        }
        y.push(yi);
    }
    y
}

/// Steady-state initial state for a unit step input.
pub fn lfilter_zi(coeffs: &IirCoefficients) -> Vec<f64> {
    let n = coeffs.a.len().max(coeffs.b.len());
    let a0 = coeffs.a[0];
    let mut a: Vec<f64> = coeffs.a.iter().map(|v| v / a0).collect();
    let mut b: Vec<f64> = coeffs.b.iter().map(|v| v / a0).collect();
    a.resize(n, 0.0);
    b.resize(n, 0.0);
    let m = n - 1;
    if m == 0 {
        return Vec::new();
    }
    // (I - A^T) zi = b[1:] - a[1:] * b[0], A = companion(a)
    let mut mat = vec![vec![0.0; m + 1]; m];
    for (i, row) in mat.iter_mut().enumerate() {
        row[i] += 1.0;
        row[0] += a[i + 1];
        if i + 1 < m {
            row[i + 1] -= 1.0;
        }
        row[m] = b[i + 1] - a[i + 1] * b[0];
    }
    solve_augmented(mat)
}

fn solve_augmented(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / p;
            if f != 0.0 {
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    x
}

fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

fn forward_backward(coeffs: &IirCoefficients, zi: &[f64], x: &[f64]) -> Vec<f64> {
    let init: Vec<f64> = zi.iter().map(|z| z * x[0]).collect();
    let mut y = lfilter(coeffs, x, Some(&init));
    y.reverse();
    let init: Vec<f64> = zi.iter().map(|z| z * y[0]).collect();
    let mut y = lfilter(coeffs, &y, Some(&init));
    y.reverse();
    y
}

/// Edge padding used by [`filtfilt`].
pub fn filtfilt_padlen(coeffs: &IirCoefficients) -> usize {
    3 * coeffs.a.len().max(coeffs.b.len())
}

/// Zero-phase filtering.
///
/// The signal is extended at both ends by odd reflection, run through the
/// filter forward then backward (steady-state initial conditions each way),
/// and trimmed. The result is the mean of the forward-backward and the
/// backward-forward passes, which makes the operator commute exactly with
/// time reversal.
pub fn filtfilt(coeffs: &IirCoefficients, x: &[f64]) -> Result<Vec<f64>> {
    let pad = filtfilt_padlen(coeffs);
    if x.len() <= pad {
        return Err(DspError::SignalTooShort {
            len: x.len(),
            required: pad,
        });
    }
    let zi = lfilter_zi(coeffs);
    let mut ext = odd_extend(x, pad);
    let fb = forward_backward(coeffs, &zi, &ext);
    ext.reverse();
    let mut bf = forward_backward(coeffs, &zi, &ext);
    bf.reverse();
    Ok(fb[pad..pad + x.len()]
        .iter()
        .zip(&bf[pad..pad + x.len()])
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Best rational approximation `p/q` of `x > 0` with `q <= max_den`, by
/// continued fractions.
pub fn rational_approximation(x: f64, max_den: u64) -> (u64, u64) {
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        let ai = a as u64;
        let q2 = ai.saturating_mul(q1).saturating_add(q0);
        if q2 > max_den {
            // best semiconvergent still within the bound
            let k = (max_den - q0) / q1.max(1);
            let (ps, qs) = (p0 + k * p1, q0 + k * q1);
            let err_s = (ps as f64 / qs as f64 - x).abs();
            let err_c = (p1 as f64 / q1 as f64 - x).abs();
            return if qs > 0 && err_s < err_c { (ps, qs) } else { (p1, q1) };
        }
        let p2 = ai.saturating_mul(p1).saturating_add(p0);
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a;
        if frac.abs() < 1e-12 || (p1 as f64 / q1 as f64 - x).abs() < 1e-15 * x {
            break;
        }
        r = 1.0 / frac;
    }
    let g = gcd(p1, q1).max(1);
    (p1 / g, q1 / g)
}

/// Up/down factors for converting `fs_in` to `fs_out`, in lowest terms.
pub fn resample_factors(fs_in: f64, fs_out: f64) -> Result<(u64, u64)> {
    for fs in [fs_in, fs_out] {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(DspError::InvalidRate(fs));
        }
    }
    if fs_in.fract() == 0.0 && fs_out.fract() == 0.0 {
        let (a, b) = (fs_out as u64, fs_in as u64);
        let g = gcd(a, b);
        return Ok((a / g, b / g));
    }
    Ok(rational_approximation(fs_out / fs_in, 1000))
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass for polyphase resampling by `up/down`.
fn resampling_kernel(up: u64, down: u64) -> Vec<f64> {
    let max_rate = up.max(down) as f64;
    let half = 10 * up.max(down) as usize;
    let len = 2 * half + 1;
    let cutoff = 1.0 / max_rate; // fraction of Nyquist at the upsampled rate
    let beta = 5.0;
    let i0_beta = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let t = n as f64 - half as f64;
            let arg = cutoff * t;
            let sinc = if arg == 0.0 {
                1.0
            } else {
                (PI * arg).sin() / (PI * arg)
            };
            let r = t / half as f64;
            let w = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
            up as f64 * cutoff * sinc * w
        })
        .collect()
}

/// Rational polyphase resampling from `fs_in` to `fs_out`.
///
/// Output length is `round(len * fs_out / fs_in)`; the filter delay is
/// compensated so output sample `m` is aligned with time `m / fs_out`.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    let (up, down) = resample_factors(fs_in, fs_out)?;
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if up == down {
        return Ok(x.to_vec());
    }
    let h = resampling_kernel(up, down);
    let half = (h.len() / 2) as i64;
    let (up_i, down_i) = (up as i64, down as i64);
    let n_out = (x.len() as f64 * up as f64 / down as f64).round() as usize;
    let n_in = x.len() as i64;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out as i64 {
        // position on the upsampled grid, delay-compensated
        let pos = m * down_i + half;
        // input j contributes h[pos - j*up] when 0 <= pos - j*up < len
        let j_max = (pos / up_i).min(n_in - 1);
        let j_min = ((pos - h.len() as i64 + 1 + up_i - 1).max(0)) / up_i;
        let mut acc = 0.0;
        let mut j = j_max;
        while j >= j_min && j >= 0 {
            acc += x[j as usize] * h[(pos - j * up_i) as usize];
            j -= 1;
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ecg_filter() -> IirCoefficients {
        design_butterworth_bandpass(&FilterSpec::ecg(250.0)).unwrap()
    }

    #[test]
    fn dc_is_blocked() {
        let c = ecg_filter();
        assert_eq!(c.b.len(), 7);
        assert_eq!(c.a.len(), 7);
        assert!(c.magnitude(0.0, 250.0) < 1e-12);
    }

    #[test]
    fn passband_is_flat() {
        let c = ecg_filter();
        let m = c.magnitude(10.0, 250.0);
        assert!((m - 1.0).abs() < 0.01, "{m}");
    }

    #[test]
    fn cutoffs_at_minus_3db() {
        let c = ecg_filter();
        let target = std::f64::consts::FRAC_1_SQRT_2;
        for f in [0.5, 40.0] {
            assert!((c.magnitude(f, 250.0) - target).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_reference_coefficients() {
        // scipy.signal.butter(3, [0.5, 40], btype="band", fs=250)
        let b = [0.05616238, 0.0, -0.16848715, 0.0, 0.16848715, 0.0, -0.05616238];
        let a = [
            1.0, -4.03958858, 6.76225961, -6.1592236, 3.3119886, -0.99725397, 0.12181886,
        ];
        let c = ecg_filter();
        for (x, y) in c.b.iter().zip(b) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        for (x, y) in c.a.iter().zip(a) {
            assert!((x - y).abs() < 1e-7, "{x} vs {y}");
        }
    }

    #[test]
    fn equal_cutoffs_rejected() {
        let spec = FilterSpec {
            low_cut: 10.0,
            high_cut: 10.0,
            ..FilterSpec::ecg(250.0)
        };
        assert!(matches!(
            design_butterworth_bandpass(&spec),
            Err(DspError::InvalidSpec(_))
        ));
        let spec = FilterSpec {
            high_cut: 125.0,
            ..FilterSpec::ecg(250.0)
        };
        assert!(design_butterworth_bandpass(&spec).is_err());
    }

    #[test]
    fn denominator_roots_match_design_poles() {
        let zpk = butterworth_bandpass_zpk(&FilterSpec::ecg(250.0)).unwrap();
        let c = zpk.to_coefficients();
        let mut found = c.poles();
        for p in &zpk.poles {
            let (i, d) = found
                .iter()
                .enumerate()
                .map(|(i, q)| (i, (q - p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!(d < 1e-6, "pole {p} not recovered ({d})");
            found.remove(i);
        }
    }

    #[test]
    fn filtfilt_too_short() {
        let c = ecg_filter();
        assert_eq!(
            filtfilt(&c, &[0.0; 21]),
            Err(DspError::SignalTooShort {
                len: 21,
                required: 21
            })
        );
        assert!(filtfilt(&c, &[0.0; 22]).is_ok());
    }

    #[test]
    fn constant_input_gives_zero() {
        let c = ecg_filter();
        let y = filtfilt(&c, &vec![5.0; 2000]).unwrap();
        assert_eq!(y.len(), 2000);
        let max = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-3, "{max}");
    }

    #[test]
    fn steady_state_zi_for_step() {
        let c = ecg_filter();
        let zi = lfilter_zi(&c);
        let y = lfilter(&c, &[1.0; 50], Some(&zi));
        // band-pass steady state for DC is zero output
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn rational_factors() {
        assert_eq!(resample_factors(360.0, 250.0).unwrap(), (25, 36));
        assert_eq!(resample_factors(250.0, 250.0).unwrap(), (1, 1));
        assert_eq!(rational_approximation(std::f64::consts::PI, 1000), (355, 113));
        let (p, q) = resample_factors(250.0, 128.3).unwrap();
        assert!(q <= 1000);
        assert!((p as f64 / q as f64 - 128.3 / 250.0).abs() < 1e-5);
        assert!(resample_factors(0.0, 250.0).is_err());
    }

    #[test]
    fn resample_lengths() {
        let x = vec![0.0; 1000];
        assert_eq!(resample(&x, 360.0, 250.0).unwrap().len(), 694);
        assert!(resample(&[], 360.0, 250.0).unwrap().is_empty());
        let y: Vec<f64> = (0..17).map(|i| i as f64).collect();
        assert_eq!(resample(&y, 250.0, 250.0).unwrap(), y);
    }

    #[test]
    fn kernel_has_unit_dc_gain_per_phase() {
        let (up, down) = (25, 36);
        let h = resampling_kernel(up, down);
        for phase in 0..up as usize {
            let s: f64 = h.iter().skip(phase).step_by(up as usize).sum();
            assert!((s - 1.0).abs() < 2e-3, "phase {phase}: {s}");
        }
    }
}
