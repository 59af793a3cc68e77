//! Spectra, target-frequency detection and the zero-phase Butterworth
//! band-pass used to isolate the device's systematic activity.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Trace, TraceSet};

/// One-sided magnitude spectrum, scaled by `1/n` so the DC bin is the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    pub bin_hz: f64,
    pub sample_rate_hz: f64,
}

impl Spectrum {
    pub fn frequency_of(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }
}

/// Per-bin mean of the single-trace magnitude spectra (rectangular window).
pub fn mean_magnitude_spectrum(set: &TraceSet) -> Result<Spectrum> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = set.common_length();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); n];
    let mut sum = vec![0.0f64; n / 2 + 1];
    for t in set {
        for (b, &s) in buf.iter_mut().zip(t.samples()) {
            *b = Complex64::new(s, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (acc, c) in sum.iter_mut().zip(&buf) {
            *acc += c.norm() / n as f64;
        }
    }
    let count = set.len() as f64;
    sum.iter_mut().for_each(|m| *m /= count);
    Ok(Spectrum {
        magnitudes: sum,
        bin_hz: set.sample_rate_hz() / n as f64,
        sample_rate_hz: set.sample_rate_hz(),
    })
}

/// Default low-frequency exclusion: two bins or 1 kHz, whichever is larger.
pub fn default_dc_exclusion_hz(spec: &Spectrum) -> f64 {
    (2.0 * spec.bin_hz).max(1_000.0)
}

/// Frequency of the strongest bin above `dc_exclusion_hz`.
///
/// The DC bin is the largest component of any power trace, so excluding the
/// low bins and taking the argmax selects the second-highest peak.
pub fn detect_target_frequency(spec: &Spectrum, dc_exclusion_hz: f64) -> Result<f64> {
    let first = spec
        .magnitudes
        .iter()
        .enumerate()
        .position(|(k, _)| spec.frequency_of(k) > dc_exclusion_hz)
        .ok_or_else(|| {
            Error::NoPeak(format!(
                "every bin lies at or below the {dc_exclusion_hz} Hz exclusion"
            ))
        })?;
    let candidates = &spec.magnitudes[first..];
    let (offset, &peak) =
        candidates
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
    let floor = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    let overall = spec.magnitudes.iter().copied().fold(0.0, f64::max);
    if peak <= 1e-9 * overall || peak - floor <= 1e-9 * peak {
        return Err(Error::NoPeak(
            "spectrum is flat above the exclusion band".into(),
        ));
    }
    Ok(spec.frequency_of(first + offset))
}

/// Filter design parameters; this is the portable form stored in bundles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub center_hz: f64,
    pub bandwidth_fraction: f64,
    pub order: usize,
    pub sample_rate_hz: f64,
}

/// Second-order section with `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2)
            / (self.a[0] + self.a[1] * z_inv + self.a[2] * z2)
    }
}

/// A realized Butterworth band-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub params: FilterParams,
    pub sections: Vec<Biquad>,
    /// Samples until the impulse response stays below 1e-8 of its peak.
    pub settling_len: usize,
    pub max_pole_radius: f64,
}

const SETTLE_REL: f64 = 1e-8;

impl FilterSpec {
    pub fn from_params(p: FilterParams) -> Result<Self> {
        design_bandpass(p.center_hz, p.bandwidth_fraction, p.order, p.sample_rate_hz)
    }

    /// Lower and upper -3 dB edges.
    pub fn passband(&self) -> (f64, f64) {
        let p = &self.params;
        (
            p.center_hz * (1.0 - p.bandwidth_fraction),
            p.center_hz * (1.0 + p.bandwidth_fraction),
        )
    }

    /// Complex single-pass response at `freq_hz`.
    pub fn response_at(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.params.sample_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn gain_at(&self, freq_hz: f64) -> f64 {
        self.response_at(freq_hz).norm()
    }

    /// Shortest trace accepted by [`apply_zero_phase`].
    pub fn min_trace_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Causal single pass with zero initial state.
    pub fn filter_causal(&self, x: &mut [f64]) {
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z1;
                z1 = s.b[1] * input - s.a[1] * y + z2;
                z2 = s.b[2] * input - s.a[2] * y;
                *v = y;
            }
        }
    }
}

/// Butterworth band-pass from the analog low-pass prototype.
///
/// Both band edges are prewarped, the prototype is mapped with
/// `s -> (s^2 + w0^2) / (B s)` and then discretized with the bilinear
/// transform. Each upper-half-plane pole becomes one second-order section
/// with zeros at `z = +1` and `z = -1`. Edges land exactly on the -3 dB
/// points and the gain peaks at 1 at the geometric centre of the warped band.
pub fn design_bandpass(
    center_hz: f64,
    bandwidth_fraction: f64,
    order: usize,
    sample_rate_hz: f64,
) -> Result<FilterSpec> {
    let params = FilterParams {
        center_hz,
        bandwidth_fraction,
        order,
        sample_rate_hz,
    };
    if order == 0 {
        return Err(Error::InvalidPassband("order must be at least 1".into()));
    }
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(Error::InvalidPassband(format!(
            "sample rate {sample_rate_hz} Hz"
        )));
    }
    if !(bandwidth_fraction.is_finite() && bandwidth_fraction > 0.0) {
        return Err(Error::InvalidPassband(format!(
            "bandwidth fraction {bandwidth_fraction}"
        )));
    }
    let lo = center_hz * (1.0 - bandwidth_fraction);
    let hi = center_hz * (1.0 + bandwidth_fraction);
    let nyquist = sample_rate_hz / 2.0;
    if !(lo > 0.0 && hi < nyquist && lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidPassband(format!(
            "[{lo}, {hi}] Hz must lie strictly inside (0, {nyquist}) Hz"
        )));
    }

    let k = 2.0 * sample_rate_hz;
    let warp = |f: f64| k * (PI * f / sample_rate_hz).tan();
    let (w1, w2) = (warp(lo), warp(hi));
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    let mut poles = Vec::with_capacity(order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let half = proto * (bw / 2.0);
        let disc = (half * half - w0sq).sqrt();
        for s in [half + disc, half - disc] {
            let z = (k + s) / (k - s);
            if z.im > 0.0 {
                poles.push(z);
            }
        }
    }
    if poles.len() != order {
        return Err(Error::InvalidPassband(format!(
            "pole pairing produced {} sections for order {order}",
            poles.len()
        )));
    }
    poles.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let max_pole_radius = poles.iter().map(|p| p.norm()).fold(0.0, f64::max);
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
    if !(max_pole_radius < 1.0) {
        return Err(Error::UnstableFilter {
            radius: max_pole_radius,
        });
    }

    let mut sections: Vec<Biquad> = poles
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();

    // Unity gain at the digital image of the analog centre frequency.
    let f0 = sample_rate_hz / PI * (w0sq.sqrt() / k).atan();
    let mut spec = FilterSpec {
        params,
        sections: sections.clone(),
        settling_len: 0,
        max_pole_radius,
    };
    let g = spec.gain_at(f0);
    if !(g.is_finite() && g > 0.0) {
        return Err(Error::UnstableFilter {
            radius: max_pole_radius,
        });
    }
    let per_section = g.powf(-1.0 / order as f64);
    for s in &mut sections {
        s.b.iter_mut().for_each(|c| *c *= per_section);
    }
    spec.sections = sections;
    spec.settling_len = settling_length(&spec);
    Ok(spec)
}

/// Index one past the last impulse-response sample at or above
/// `1e-8 * peak`, searched well beyond the slowest pole's decay horizon.
fn settling_length(spec: &FilterSpec) -> usize {
    let decay = (SETTLE_REL.ln() / spec.max_pole_radius.ln()).ceil() as usize;
    let horizon = decay.saturating_mul(4).saturating_add(1024);
    let mut h = vec![0.0; horizon];
    h[0] = 1.0;
    spec.filter_causal(&mut h);
    let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let last = h
        .iter()
        .rposition(|v| v.abs() >= SETTLE_REL * peak)
        .unwrap_or(0);
    last + 1
}

/// Odd (point-symmetric) extension of `x`, folding repeatedly when `j` lies
/// more than one trace length outside `[0, n)`.
fn odd_extend(x: &[f64], j: isize) -> f64 {
    let n = x.len() as isize;
    if j < 0 {
        2.0 * x[0] - odd_extend(x, -j)
    } else if j >= n {
        2.0 * x[(n - 1) as usize] - odd_extend(x, 2 * (n - 1) - j)
    } else {
        x[j as usize]
    }
}

/// Forward-backward application with odd-reflection padding of
/// `settling_len` samples on both ends. Output is zero-phase with squared
/// magnitude response and the input's length.
pub fn apply_zero_phase(filter: &FilterSpec, trace: &Trace) -> Result<Trace> {
    let out = filter_zero_phase_samples(filter, trace.samples(), trace.sample_rate_hz())?;
    trace.map_samples(out)
}

pub(crate) fn filter_zero_phase_samples(
    filter: &FilterSpec,
    x: &[f64],
    sample_rate_hz: f64,
) -> Result<Vec<f64>> {
    let design_rate = filter.params.sample_rate_hz;
    if (sample_rate_hz - design_rate).abs() > 1e-9 * design_rate {
        return Err(Error::SampleRateMismatch {
            expected: design_rate,
            found: sample_rate_hz,
        });
    }
    let min = filter.min_trace_len();
    if x.len() < min {
        return Err(Error::TraceTooShort { len: x.len(), min });
    }
    let pad = filter.settling_len as isize;
    let n = x.len() as isize;
    let mut ext: Vec<f64> = (-pad..n + pad).map(|j| odd_extend(x, j)).collect();
    filter.filter_causal(&mut ext);
    ext.reverse();
    filter.filter_causal(&mut ext);
    ext.reverse();
    Ok(ext[pad as usize..(pad + n) as usize].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analog Butterworth band-pass magnitude evaluated at the prewarped
    /// frequency; independent of the pole/section construction.
    pub(crate) fn analytic_gain(center: f64, frac: f64, order: usize, fs: f64, f: f64) -> f64 {
        let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (w1, w2) = (warp(center * (1.0 - frac)), warp(center * (1.0 + frac)));
        let w = warp(f);
        let nu = (w * w - w1 * w2) / ((w2 - w1) * w);
        1.0 / (1.0 + nu.powi(2 * order as i32)).sqrt()
    }

    fn tone(f: f64, fs: f64, n: usize, amp: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * f * i as f64 / fs + phase).sin())
            .collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn constant_trace_spectrum() {
        let t = Trace::new(vec![0.7; 128], 1.0e6).unwrap();
        let s = mean_magnitude_spectrum(&TraceSet::new(vec![t]).unwrap()).unwrap();
        assert_eq!(s.magnitudes.len(), 65);
        assert!((s.magnitudes[0] - 0.7).abs() < 1e-12);
        assert!(s.magnitudes[1..].iter().all(|m| m.abs() < 1e-9 * 0.7));
        assert!(matches!(
            detect_target_frequency(&s, default_dc_exclusion_hz(&s)),
            Err(Error::NoPeak(_))
        ));
    }

    #[test]
    fn bin_centred_sinusoid() {
        let (n, fs) = (256usize, 256.0e3);
        let x = tone(37.0 * fs / n as f64, fs, n, 1.0, 0.3);
        let t = Trace::new(x, fs).unwrap();
        let s = mean_magnitude_spectrum(&TraceSet::new(vec![t]).unwrap()).unwrap();
        assert_eq!(s.bin_hz, 1000.0);
        let peak = (1..s.magnitudes.len())
            .max_by(|&a, &b| s.magnitudes[a].total_cmp(&s.magnitudes[b]))
            .unwrap();
        assert_eq!(peak, 37);
        assert!((s.magnitudes[37] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn detects_carrier_over_dc() {
        let (n, fs) = (4000usize, 2.0e6);
        let x: Vec<f64> = tone(225.0e3, fs, n, 0.05, 0.0)
            .into_iter()
            .map(|v| v + 0.4)
            .collect();
        let t = Trace::new(x, fs).unwrap();
        let s = mean_magnitude_spectrum(&TraceSet::new(vec![t]).unwrap()).unwrap();
        let f = detect_target_frequency(&s, default_dc_exclusion_hz(&s)).unwrap();
        assert!((f - 225.0e3).abs() <= s.bin_hz, "{f}");
    }

    /// Direct O(n) DFT magnitude at one frequency, used as the argmax oracle.
    fn dft_mag(x: &[f64], f: f64, fs: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * f * i as f64 / fs;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn two_tones_pick_stronger() {
        let (n, fs) = (2000usize, 2.0e6);
        let x: Vec<f64> = tone(100.0e3, fs, n, 1.0, 0.0)
            .iter()
            .zip(tone(300.0e3, fs, n, 0.5, 0.0))
            .map(|(a, b)| a + b + 1.0)
            .collect();
        assert!(dft_mag(&x, 100.0e3, fs) > dft_mag(&x, 300.0e3, fs));
        let t = Trace::new(x, fs).unwrap();
        let s = mean_magnitude_spectrum(&TraceSet::new(vec![t]).unwrap()).unwrap();
        assert_eq!(detect_target_frequency(&s, 1000.0).unwrap(), 100.0e3);
    }

    #[test]
    fn exclusion_covering_everything() {
        let s = Spectrum {
            magnitudes: vec![1.0, 0.5, 0.2],
            bin_hz: 10.0,
            sample_rate_hz: 40.0,
        };
        assert!(matches!(
            detect_target_frequency(&s, 100.0),
            Err(Error::NoPeak(_))
        ));
    }

    #[test]
    fn target_invariant_to_positive_scale() {
        let (n, fs) = (1000usize, 1.0e6);
        let base: Vec<f64> = tone(50.0e3, fs, n, 0.3, 0.1)
            .iter()
            .zip(tone(120.0e3, fs, n, 0.2, 0.5))
            .map(|(a, b)| 1.0 + a + b)
            .collect();
        for scale in [1e-3, 0.5, 7.0, 1e4] {
            let t = Trace::new(base.iter().map(|v| v * scale).collect(), fs).unwrap();
            let s = mean_magnitude_spectrum(&TraceSet::new(vec![t]).unwrap()).unwrap();
            assert_eq!(detect_target_frequency(&s, 1000.0).unwrap(), 50.0e3);
        }
    }

    #[test]
    fn paper_passband() {
        let f = design_bandpass(225.0e3, 0.01, 4, 96.0e6).unwrap();
        let (lo, hi) = f.passband();
        assert!((lo - 222.75e3).abs() < 1e-6);
        assert!((hi - 227.25e3).abs() < 1e-6);
        assert!(f.max_pole_radius < 1.0);
        assert_eq!(f.sections.len(), 4);
    }

    #[test]
    fn band_edges_are_minus_3db() {
        for fs in [2.0e6, 96.0e6] {
            let f = design_bandpass(225.0e3, 0.01, 4, fs).unwrap();
            let (lo, hi) = f.passband();
            let target = std::f64::consts::FRAC_1_SQRT_2;
            assert!((f.gain_at(lo) - target).abs() < 1e-6, "{}", f.gain_at(lo));
            assert!((f.gain_at(hi) - target).abs() < 1e-6);
            // -3 dB crossing located within 0.5% of each edge.
            for edge in [lo, hi] {
                let inside = if edge == lo {
                    edge * 1.005
                } else {
                    edge * 0.995
                };
                let outside = if edge == lo {
                    edge * 0.995
                } else {
                    edge * 1.005
                };
                assert!(f.gain_at(inside) > target && f.gain_at(outside) < target);
            }
        }
    }

    #[test]
    fn unity_gain_at_centre() {
        let f = design_bandpass(225.0e3, 0.01, 4, 2.0e6).unwrap();
        assert!((f.gain_at(225.0e3) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn response_matches_analytic_prototype() {
        let (c, frac, fs) = (225.0e3, 0.01, 2.0e6);
        let f = design_bandpass(c, frac, 4, fs).unwrap();
        for m in [0.9, 0.95, 0.99, 1.0, 1.005, 1.01, 1.05, 1.1] {
            let want = analytic_gain(c, frac, 4, fs, m * c);
            let got = f.gain_at(m * c);
            assert!(
                (got - want).abs() <= 0.01 * want,
                "at {m}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn design_rejects_bad_passbands() {
        assert!(design_bandpass(225.0e3, 0.01, 0, 2.0e6).is_err());
        assert!(design_bandpass(1.0e6, 0.01, 4, 2.0e6).is_err());
        assert!(design_bandpass(995.0e3, 0.01, 4, 2.0e6).is_err());
        assert!(design_bandpass(225.0e3, 1.0, 4, 2.0e6).is_err());
        assert!(design_bandpass(225.0e3, -0.1, 4, 2.0e6).is_err());
    }

    #[test]
    fn impulse_response_settles() {
        for order in [1, 2, 4, 6] {
            let f = design_bandpass(225.0e3, 0.01, order, 2.0e6).unwrap();
            let mut h = vec![0.0; f.settling_len * 2];
            h[0] = 1.0;
            f.filter_causal(&mut h);
            let peak = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tail = h[f.settling_len..]
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(tail < 1e-8 * peak, "order {order}: {tail} vs {peak}");
        }
    }

    fn lag_of_peak_xcorr(a: &[f64], b: &[f64], max_lag: isize) -> isize {
        let n = a.len() as isize;
        (-max_lag..=max_lag)
            .max_by(|&l1, &l2| {
                let xc = |l: isize| -> f64 {
                    (0..n)
                        .filter(|&i| i + l >= 0 && i + l < n)
                        .map(|i| a[i as usize] * b[(i + l) as usize])
                        .sum()
                };
                xc(l1).total_cmp(&xc(l2))
            })
            .unwrap()
    }

    #[test]
    fn in_band_tone_preserved_without_lag() {
        let fs = 2.0e6;
        let f = design_bandpass(225.0e3, 0.01, 4, fs).unwrap();
        let n = 20_000;
        let x = tone(225.0e3, fs, n, 0.1, 0.4);
        let y = apply_zero_phase(&f, &Trace::new(x.clone(), fs).unwrap()).unwrap();
        assert_eq!(y.len(), n);
        let mid = n / 4..3 * n / 4;
        let ratio = rms(&y.samples()[mid.clone()]) / rms(&x[mid.clone()]);
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
        assert_eq!(lag_of_peak_xcorr(&x, y.samples(), 6), 0);
    }

    #[test]
    fn dc_removed() {
        let fs = 2.0e6;
        let f = design_bandpass(225.0e3, 0.01, 4, fs).unwrap();
        let y = apply_zero_phase(&f, &Trace::new(vec![0.8; 4000], fs).unwrap()).unwrap();
        assert!(y.samples().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn out_of_band_tone_squared_response() {
        let (c, fs) = (225.0e3, 2.0e6);
        let f = design_bandpass(c, 0.01, 4, fs).unwrap();
        let n = 40_000;
        let ft = 1.1 * c;
        let x = tone(ft, fs, n, 1.0, 0.0);
        let y = apply_zero_phase(&f, &Trace::new(x.clone(), fs).unwrap()).unwrap();
        let mid = n / 4..3 * n / 4;
        let ratio = rms(&y.samples()[mid.clone()]) / rms(&x[mid]);
        let want = analytic_gain(c, 0.01, 4, fs, ft).powi(2);
        assert!((ratio - want).abs() <= 0.02 * want, "{ratio} vs {want}");
    }

    #[test]
    fn apply_errors() {
        let f = design_bandpass(225.0e3, 0.01, 4, 2.0e6).unwrap();
        let t = Trace::new(vec![0.0; 4000], 1.0e6).unwrap();
        assert!(matches!(
            apply_zero_phase(&f, &t),
            Err(Error::SampleRateMismatch { .. })
        ));
        let short = Trace::new(vec![0.0; f.min_trace_len() - 1], 2.0e6).unwrap();
        assert!(matches!(
            apply_zero_phase(&f, &short),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn linearity() {
        let fs = 2.0e6;
        let f = design_bandpass(225.0e3, 0.01, 4, fs).unwrap();
        let n = 3000;
        let a = tone(224.0e3, fs, n, 0.3, 0.2);
        let b: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let (ka, kb) = (1.7, -0.6);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| ka * x + kb * y).collect();
        let fa = filter_zero_phase_samples(&f, &a, fs).unwrap();
        let fb = filter_zero_phase_samples(&f, &b, fs).unwrap();
        let fm = filter_zero_phase_samples(&f, &mix, fs).unwrap();
        let scale = fm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            let want = ka * fa[i] + kb * fb[i];
            assert!((fm[i] - want).abs() <= 1e-9 * scale);
        }
    }
}
