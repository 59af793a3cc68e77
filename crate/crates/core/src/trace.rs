//! Trace representation, ADC quantization, layer segments and averaging.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled span `[start, end)` of a trace, typically one network layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

impl Marker {
    pub fn new(label: impl Into<String>, start: usize, end: usize) -> Self {
        Marker {
            label: label.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Free-form trace metadata (device id, model id, input id, seed, ...).
pub type Meta = BTreeMap<String, String>;

/// A uniformly sampled voltage-drop waveform.
///
/// Fields are private so the invariants checked in [`Trace::new`] and
/// [`Trace::with_markers`] hold for the lifetime of the value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    markers: Vec<Marker>,
    meta: Meta,
}

impl Trace {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidTrace("no samples".into()));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidTrace(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(Trace {
            samples,
            sample_rate_hz,
            markers: Vec::new(),
            meta: Meta::new(),
        })
    }

    pub fn with_markers(mut self, markers: Vec<Marker>) -> Result<Self> {
        for m in &markers {
            if m.start >= m.end || m.end > self.samples.len() {
                return Err(Error::InvalidTrace(format!(
                    "marker {:?} [{}, {}) outside trace of length {}",
                    m.label,
                    m.start,
                    m.end,
                    self.samples.len()
                )));
            }
        }
        self.markers = markers;
        Ok(self)
    }

    pub fn with_meta(mut self, meta: Meta) -> Self {
        self.meta = meta;
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; a trace holds at least one sample.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn marker(&self, label: &str) -> Option<&Marker> {
        self.markers.iter().find(|m| m.label == label)
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Builds a new trace sharing this one's rate and metadata but with
    /// replaced samples. Markers are kept when the length is unchanged.
    pub(crate) fn map_samples(&self, samples: Vec<f64>) -> Result<Trace> {
        let keep_markers = samples.len() == self.samples.len();
        let mut out = Trace::new(samples, self.sample_rate_hz)?.with_meta(self.meta.clone());
        if keep_markers {
            out.markers = self.markers.clone();
        }
        Ok(out)
    }
}

/// A non-empty collection of traces sharing length and sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    traces: Vec<Trace>,
}

impl TraceSet {
    pub fn new(traces: Vec<Trace>) -> Result<Self> {
        let first = traces.first().ok_or(Error::EmptySet)?;
        let (len, rate) = (first.len(), first.sample_rate_hz());
        for t in &traces[1..] {
            if t.len() != len {
                return Err(Error::InconsistentLength {
                    expected: len,
                    found: t.len(),
                });
            }
            if t.sample_rate_hz() != rate {
                return Err(Error::InconsistentSampleRate {
                    expected: rate,
                    found: t.sample_rate_hz(),
                });
            }
        }
        Ok(TraceSet { traces })
    }

    pub fn traces(&self) -> &[Trace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<Trace> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn common_length(&self) -> usize {
        self.traces[0].len()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.traces[0].sample_rate_hz()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trace> {
        self.traces.iter()
    }

    /// Replaces every trace by its `label` segment.
    pub fn segments(&self, label: &str) -> Result<TraceSet> {
        let segs = self
            .traces
            .iter()
            .map(|t| extract_segment(t, label))
            .collect::<Result<Vec<_>>>()?;
        TraceSet::new(segs)
    }
}

impl<'a> IntoIterator for &'a TraceSet {
    type Item = &'a Trace;
    type IntoIter = std::slice::Iter<'a, Trace>;

    fn into_iter(self) -> Self::IntoIter {
        self.traces.iter()
    }
}

/// Sample-wise arithmetic mean over the set. Markers are dropped.
pub fn average_traces(set: &TraceSet) -> Result<Trace> {
    let n = set.len();
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let mut acc = vec![0.0f64; set.common_length()];
    for t in set {
        for (a, &s) in acc.iter_mut().zip(t.samples()) {
            *a += s;
        }
    }
    let inv = n as f64;
    acc.iter_mut().for_each(|a| *a /= inv);
    Trace::new(acc, set.sample_rate_hz())
}

/// Maps each sample to the nearest of `2^adc_bits` evenly spaced levels
/// covering `[0, full_scale_volts]` (ties round up) and back to volts.
pub fn quantize(trace: &Trace, adc_bits: u32, full_scale_volts: f64) -> Result<Trace> {
    let quantized = quantize_samples(trace.samples(), adc_bits, full_scale_volts)?;
    trace.map_samples(quantized)
}

pub(crate) fn quantize_samples(
    samples: &[f64],
    adc_bits: u32,
    full_scale_volts: f64,
) -> Result<Vec<f64>> {
    if !(1..=24).contains(&adc_bits) {
        return Err(Error::InvalidBitWidth(adc_bits));
    }
    if !(full_scale_volts.is_finite() && full_scale_volts > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "ADC full scale must be positive, got {full_scale_volts}"
        )));
    }
    let steps = ((1u32 << adc_bits) - 1) as f64;
    let lsb = full_scale_volts / steps;
    samples
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if !(0.0..=full_scale_volts).contains(&value) {
                return Err(Error::OutOfRange {
                    index,
                    value,
                    full_scale: full_scale_volts,
                });
            }
            let level = (value / full_scale_volts * steps + 0.5).floor().min(steps);
            Ok(level * lsb)
        })
        .collect()
}

/// Returns the `[start, end)` span of the marker called `label`.
///
/// Markers lying entirely inside the span are carried over, re-based to the
/// segment start.
pub fn extract_segment(trace: &Trace, label: &str) -> Result<Trace> {
    let m = trace
        .marker(label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))?;
    let samples = trace.samples()[m.start..m.end].to_vec();
    let inner = trace
        .markers()
        .iter()
        .filter(|o| o.start >= m.start && o.end <= m.end)
        .map(|o| Marker::new(o.label.clone(), o.start - m.start, o.end - m.start))
        .collect();
    Trace::new(samples, trace.sample_rate_hz())?
        .with_meta(trace.meta().clone())
        .with_markers(inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(samples: &[f64]) -> Trace {
        Trace::new(samples.to_vec(), 1.0e6).unwrap()
    }

    #[test]
    fn rejects_bad_traces() {
        assert!(Trace::new(vec![], 1.0).is_err());
        assert!(matches!(
            Trace::new(vec![0.0, f64::NAN], 1.0),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(Trace::new(vec![0.0], 0.0).is_err());
        assert!(tr(&[0.0; 4])
            .with_markers(vec![Marker::new("x", 2, 5)])
            .is_err());
        assert!(tr(&[0.0; 4])
            .with_markers(vec![Marker::new("x", 2, 2)])
            .is_err());
    }

    #[test]
    fn trace_set_checks_consistency() {
        assert!(matches!(TraceSet::new(vec![]), Err(Error::EmptySet)));
        let r = TraceSet::new(vec![tr(&[1.0, 2.0]), tr(&[1.0])]);
        assert!(matches!(r, Err(Error::InconsistentLength { .. })));
        let other = Trace::new(vec![1.0, 2.0], 2.0e6).unwrap();
        let r = TraceSet::new(vec![tr(&[1.0, 2.0]), other]);
        assert!(matches!(r, Err(Error::InconsistentSampleRate { .. })));
    }

    #[test]
    fn average_examples() {
        let x = tr(&[0.25, -1.0, 3.5]);
        let set = TraceSet::new(vec![x.clone(), x.clone()]).unwrap();
        assert_eq!(average_traces(&set).unwrap().samples(), x.samples());

        let set = TraceSet::new(vec![tr(&[1.0, 3.0]), tr(&[3.0, 1.0])]).unwrap();
        let avg = average_traces(&set).unwrap();
        assert_eq!(avg.samples(), &[2.0, 2.0]);
        assert_eq!(avg.sample_rate_hz(), 1.0e6);
    }

    #[test]
    fn one_bit_quantizer() {
        let q = quantize(&tr(&[0.2, 0.8, 0.5, 0.0, 1.0]), 1, 1.0).unwrap();
        assert_eq!(q.samples(), &[0.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn ten_bit_picks_nearer_level() {
        // Adjacent levels around 0.5005 are 511/1023 and 512/1023.
        let lo: f64 = 511.0 / 1023.0;
        let hi = 512.0 / 1023.0;
        let x = 0.5005;
        let expected = if (x - lo).abs() < (hi - x).abs() {
            lo
        } else {
            hi
        };
        assert_eq!(expected, hi);
        let q = quantize(&tr(&[x]), 10, 1.0).unwrap();
        assert_eq!(q.samples()[0], hi);
    }

    #[test]
    fn quantize_errors() {
        assert!(matches!(
            quantize(&tr(&[1.5]), 10, 1.0),
            Err(Error::OutOfRange { index: 0, .. })
        ));
        assert!(matches!(
            quantize(&tr(&[-0.1]), 10, 1.0),
            Err(Error::OutOfRange { .. })
        ));
        assert!(matches!(
            quantize(&tr(&[0.1]), 0, 1.0),
            Err(Error::InvalidBitWidth(0))
        ));
        assert!(matches!(
            quantize(&tr(&[0.1]), 25, 1.0),
            Err(Error::InvalidBitWidth(25))
        ));
    }

    #[test]
    fn segment_examples() {
        let samples: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let t = tr(&samples)
            .with_markers(vec![Marker::new("fc", 0, 64), Marker::new("conv2", 10, 20)])
            .unwrap();
        assert_eq!(extract_segment(&t, "fc").unwrap().samples(), t.samples());
        let seg = extract_segment(&t, "conv2").unwrap();
        assert_eq!(seg.len(), 10);
        assert_eq!(seg.samples(), &samples[10..20]);
        assert_eq!(seg.marker("conv2"), Some(&Marker::new("conv2", 0, 10)));
        assert!(matches!(
            extract_segment(&t, "conv9"),
            Err(Error::UnknownLabel(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn average_is_permutation_invariant(
                rows in prop::collection::vec(prop::collection::vec(-1.0e3f64..1.0e3, 8), 1..6),
                rot in 0usize..6,
            ) {
                let traces: Vec<Trace> = rows.iter().map(|r| tr(r)).collect();
                let mut rotated = traces.clone();
                rotated.rotate_left(rot % traces.len());
                rotated.reverse();
                let a = average_traces(&TraceSet::new(traces).unwrap()).unwrap();
                let b = average_traces(&TraceSet::new(rotated).unwrap()).unwrap();
                for (x, y) in a.samples().iter().zip(b.samples()) {
                    prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
                }
            }

            #[test]
            fn quantizer_bounds(
                xs in prop::collection::vec(0.0f64..=2.5, 1..64),
                bits in 1u32..=16,
            ) {
                let fs = 2.5;
                let q = quantize(&tr(&xs), bits, fs).unwrap();
                let steps = ((1u32 << bits) - 1) as f64;
                // Levels span [0, fs] inclusive, so the grid pitch is fs / (2^bits - 1).
                let half = fs / steps / 2.0;
                for (x, y) in xs.iter().zip(q.samples()) {
                    prop_assert!((x - y).abs() <= half * (1.0 + 1e-12));
                    let level = y / fs * steps;
                    prop_assert!((level - level.round()).abs() < 1e-6);
                }
                let qq = quantize(&q, bits, fs).unwrap();
                prop_assert_eq!(qq.samples(), q.samples());
            }

            #[test]
            fn segment_length_matches_marker(start in 0usize..50, width in 1usize..14) {
                let t = tr(&[0.5; 64]).with_markers(vec![Marker::new("l", start, start + width)]).unwrap();
                prop_assert_eq!(extract_segment(&t, "l").unwrap().len(), width);
            }
        }
    }
}
