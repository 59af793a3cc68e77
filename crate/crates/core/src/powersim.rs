//! Deterministic power-trace simulator.
//!
//! A fixed-point surrogate network is executed one multiply-accumulate per
//! clock period. Each period contributes one raised-cosine cycle at the clock
//! frequency whose amplitude follows a Hamming-weight leakage model
//! (weight byte plus accumulator low byte). DC offset, Gaussian noise and ADC
//! quantization complete the trace. Attack injectors mutate the network the
//! way the evaluated integrity violations mutate stored parameters.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{quantize_samples, Marker, Meta, Trace, TraceSet};

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix64(base), |acc, &p| mix64(acc ^ mix64(p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

fn default_shift() -> u32 {
    7
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub label: String,
    /// `weights[out][in]`.
    pub weights: Vec<Vec<i8>>,
    pub activation: Activation,
    /// Right shift applied to the 32-bit accumulator before saturating to i8.
    #[serde(default = "default_shift")]
    pub output_shift: u32,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.weights.len()
    }

    pub fn macs(&self) -> usize {
        self.inputs() * self.outputs()
    }
}

/// Shape of one layer for [`SurrogateNet::seeded`].
#[derive(Debug, Clone, Copy)]
pub struct LayerShape<'a> {
    pub label: &'a str,
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

/// Seeded weight distribution: uniform over [-64, 63].
fn draw_weight(rng: &mut impl Rng) -> i8 {
    rng.random_range(-64i8..=63)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateNet {
    pub layers: Vec<Layer>,
    pub input_width: usize,
}

impl SurrogateNet {
    pub fn new(layers: Vec<Layer>, input_width: usize) -> Result<Self> {
        let net = SurrogateNet {
            layers,
            input_width,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch("network has no layers".into()));
        }
        let mut width = self.input_width;
        let mut labels = BTreeSet::new();
        for l in &self.layers {
            if !labels.insert(l.label.as_str()) {
                return Err(Error::DimensionMismatch(format!(
                    "duplicate layer label {:?}",
                    l.label
                )));
            }
            if l.weights.is_empty() || l.weights.iter().any(|row| row.len() != width) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {:?} expects {width} inputs in every row",
                    l.label
                )));
            }
            if l.output_shift > 31 {
                return Err(Error::DimensionMismatch(format!(
                    "layer {:?} output shift {} exceeds 31",
                    l.label, l.output_shift
                )));
            }
            width = l.outputs();
        }
        Ok(())
    }

    /// Network with weights drawn from the seeded weight distribution.
    pub fn seeded(shapes: &[LayerShape<'_>], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = shapes
            .iter()
            .map(|s| Layer {
                label: s.label.to_string(),
                weights: (0..s.outputs)
                    .map(|_| (0..s.inputs).map(|_| draw_weight(&mut rng)).collect())
                    .collect(),
                activation: s.activation,
                output_shift: default_shift(),
            })
            .collect();
        SurrogateNet::new(layers, shapes.first().map_or(0, |s| s.inputs))
    }

    /// Two dense layers, 16x16 with ReLU then 16x10.
    pub fn default_surrogate(seed: u64) -> Self {
        SurrogateNet::seeded(
            &[
                LayerShape {
                    label: "conv1",
                    inputs: 16,
                    outputs: 16,
                    activation: Activation::Relu,
                },
                LayerShape {
                    label: "fc",
                    inputs: 16,
                    outputs: 10,
                    activation: Activation::None,
                },
            ],
            seed,
        )
        .expect("static shapes compose")
    }

    /// Three layers labelled `conv1`, `conv2`, `fc` (16-16-16-10).
    pub fn three_layer_surrogate(seed: u64) -> Self {
        SurrogateNet::seeded(
            &[
                LayerShape {
                    label: "conv1",
                    inputs: 16,
                    outputs: 16,
                    activation: Activation::Relu,
                },
                LayerShape {
                    label: "conv2",
                    inputs: 16,
                    outputs: 16,
                    activation: Activation::Relu,
                },
                LayerShape {
                    label: "fc",
                    inputs: 16,
                    outputs: 10,
                    activation: Activation::None,
                },
            ],
            seed,
        )
        .expect("static shapes compose")
    }

    pub fn layer_index(&self, label: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.label == label)
            .ok_or_else(|| Error::UnknownLayer(label.to_string()))
    }

    pub fn labels(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.label.clone()).collect()
    }

    pub fn final_label(&self) -> &str {
        &self.layers.last().expect("validated non-empty").label
    }

    /// `(label, multiply-accumulate count)` per layer, in execution order.
    pub fn mac_counts(&self) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .map(|l| (l.label.clone(), l.macs()))
            .collect()
    }

    /// Runs the network, returning the leakage (in bits) of every MAC and
    /// the network output.
    pub fn leakage(&self, input: &[i8]) -> Result<(Vec<u32>, Vec<i8>)> {
        if input.len() != self.input_width {
            return Err(Error::DimensionMismatch(format!(
                "input width {} does not match network input {}",
                input.len(),
                self.input_width
            )));
        }
        let total: usize = self.layers.iter().map(Layer::macs).sum();
        let mut leak = Vec::with_capacity(total);
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut next = Vec::with_capacity(layer.outputs());
            for row in &layer.weights {
                let mut acc: i32 = 0;
                for (&w, &xi) in row.iter().zip(&x) {
                    acc = acc.wrapping_add(w as i32 * xi as i32);
                    leak.push((w as u8).count_ones() + (acc as u8).count_ones());
                }
                let mut v = acc >> layer.output_shift;
                if layer.activation == Activation::Relu {
                    v = v.max(0);
                }
                next.push(v.clamp(i8::MIN as i32, i8::MAX as i32) as i8);
            }
            x = next;
        }
        Ok((leak, x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceModel {
    pub sample_rate_hz: f64,
    pub clock_hz: f64,
    pub dc_volts: f64,
    pub hw_gain_volts_per_bit: f64,
    pub noise_sigma_volts: f64,
    pub adc_bits: u32,
    pub adc_full_scale_volts: f64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel {
            sample_rate_hz: 2.0e6,
            clock_hz: 225.0e3,
            dc_volts: 0.3,
            hw_gain_volts_per_bit: DEFAULT_HW_GAIN_VOLTS_PER_BIT,
            noise_sigma_volts: DEFAULT_NOISE_SIGMA_VOLTS,
            adc_bits: 10,
            adc_full_scale_volts: 1.0,
        }
    }
}

/// 16 bits of peak activity on the 0.3 V baseline stay below the 1 V rail.
pub const DEFAULT_HW_GAIN_VOLTS_PER_BIT: f64 = 0.04;
/// Calibrated so that four random final-layer bit flips are detected at
/// n_ra = 5 against a 500-trace pre-deployment set; see the README.
pub const DEFAULT_NOISE_SIGMA_VOLTS: f64 = 0.0005;

impl DeviceModel {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sample_rate_hz) || !positive(self.clock_hz) {
            return Err(Error::InvalidConfig(
                "sample rate and clock must be positive".into(),
            ));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        if self.clock_hz >= nyquist {
            return Err(Error::CarrierAboveNyquist {
                clock_hz: self.clock_hz,
                nyquist_hz: nyquist,
            });
        }
        if !positive(self.dc_volts)
            || !positive(self.hw_gain_volts_per_bit)
            || !positive(self.adc_full_scale_volts)
        {
            return Err(Error::InvalidConfig(
                "dc, gain and ADC full scale must be positive".into(),
            ));
        }
        if !(self.noise_sigma_volts.is_finite() && self.noise_sigma_volts >= 0.0) {
            return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
        }
        if !(1..=24).contains(&self.adc_bits) {
            return Err(Error::InvalidBitWidth(self.adc_bits));
        }
        Ok(())
    }

    /// Sample index at which clock period `period` begins.
    fn period_start(&self, period: usize) -> usize {
        // Smallest i with floor(i * clock / fs) >= period.
        let mut i = (period as f64 * self.sample_rate_hz / self.clock_hz).floor() as usize;
        while i > 0 && self.period_of(i - 1) >= period {
            i -= 1;
        }
        while self.period_of(i) < period {
            i += 1;
        }
        i
    }

    fn period_of(&self, sample: usize) -> usize {
        (sample as f64 * self.clock_hz / self.sample_rate_hz).floor() as usize
    }
}

/// Simulates one inference of `net` on `input`.
///
/// Samples outside the ADC range saturate at the rails before quantization.
pub fn simulate_inference_trace(
    device: &DeviceModel,
    net: &SurrogateNet,
    input: &[i8],
    noise_seed: u64,
) -> Result<Trace> {
    device.validate()?;
    net.validate()?;
    let (leak, _) = net.leakage(input)?;
    let total_periods = leak.len();
    let len = device.period_start(total_periods);

    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let noise = (device.noise_sigma_volts > 0.0)
        .then(|| Normal::new(0.0, device.noise_sigma_volts).expect("validated sigma"));
    let w = 2.0 * PI * device.clock_hz / device.sample_rate_hz;
    let fs = device.adc_full_scale_volts;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let amp = leak[device.period_of(i)] as f64 * device.hw_gain_volts_per_bit;
            let shape = 0.5 * (1.0 - (w * i as f64).cos());
            let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
            (device.dc_volts + amp * shape + n).clamp(0.0, fs)
        })
        .collect();
    let samples = quantize_samples(&raw, device.adc_bits, fs)?;

    let mut markers = Vec::with_capacity(net.layers.len());
    let mut period = 0;
    for layer in &net.layers {
        let start = device.period_start(period);
        period += layer.macs();
        markers.push(Marker::new(
            layer.label.clone(),
            start,
            device.period_start(period),
        ));
    }
    let mut meta = Meta::new();
    meta.insert("noise_seed".into(), noise_seed.to_string());
    Ok(Trace::new(samples, device.sample_rate_hz)?
        .with_markers(markers)?
        .with_meta(meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    TrojanRetrain,
    PoisonFinalLayer,
    BitFlip,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::TrojanRetrain => "trojan_retrain",
            AttackKind::PoisonFinalLayer => "poison_final_layer",
            AttackKind::BitFlip => "bit_flip",
        }
    }
}

/// How bit-flip positions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitPolicy {
    /// Uniform bit of each of `count` distinct weights.
    #[default]
    Random,
    /// Sign bit of distinct weights.
    Msb,
    /// A fixed bit of distinct weights.
    Fixed(u8),
}

/// One flipped bit: row-major weight index in the target layer and bit 0..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitPosition {
    pub weight: usize,
    pub bit: u8,
}

/// Kind-specific strength. Unset fields take the kind's default.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackMagnitude {
    /// Trojan: re-seed id for the retrained weights.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reseed: Option<u64>,
    /// Poison: maximum absolute weight offset (default 16).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<i32>,
    /// Bit flip: number of flipped bits (default 4).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<BitPolicy>,
    /// Bit flip: explicit positions, overriding `count` and `policy`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<BitPosition>>,
}

pub const DEFAULT_POISON_SCALE: i32 = 16;
pub const DEFAULT_FLIP_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target_layer: String,
    #[serde(default)]
    pub magnitude: AttackMagnitude,
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, target_layer: impl Into<String>, seed: u64) -> Self {
        AttackSpec {
            kind,
            target_layer: target_layer.into(),
            magnitude: AttackMagnitude::default(),
            seed,
        }
    }

    pub fn bit_flip(target_layer: impl Into<String>, count: usize, seed: u64) -> Self {
        let mut spec = AttackSpec::new(AttackKind::BitFlip, target_layer, seed);
        spec.magnitude.count = Some(count);
        spec
    }

    /// Same attack with a different instance seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        AttackSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AttackKind::BitFlip => {
                if self.magnitude.count == Some(0) {
                    return Err(Error::InvalidConfig("bit flip count must be >= 1".into()));
                }
                if let Some(BitPolicy::Fixed(b)) = self.magnitude.policy {
                    if b > 7 {
                        return Err(Error::InvalidConfig(format!("bit {b} outside 0..=7")));
                    }
                }
            }
            AttackKind::PoisonFinalLayer => {
                if matches!(self.magnitude.scale, Some(s) if s <= 0) {
                    return Err(Error::InvalidConfig("poison scale must be > 0".into()));
                }
            }
            AttackKind::TrojanRetrain => {}
        }
        Ok(())
    }
}

fn flip_positions(
    layer: &Layer,
    spec: &AttackSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BitPosition>> {
    let n_weights = layer.macs();
    if let Some(explicit) = &spec.magnitude.positions {
        let mut seen = BTreeSet::new();
        for p in explicit {
            if p.weight >= n_weights || p.bit > 7 {
                return Err(Error::InvalidConfig(format!(
                    "bit position ({}, {}) outside layer {:?}",
                    p.weight, p.bit, layer.label
                )));
            }
            if !seen.insert(*p) {
                return Err(Error::DuplicateBitPosition {
                    weight: p.weight,
                    bit: p.bit,
                });
            }
        }
        return Ok(explicit.clone());
    }
    let count = spec.magnitude.count.unwrap_or(DEFAULT_FLIP_COUNT);
    let policy = spec.magnitude.policy.unwrap_or_default();
    if count > n_weights {
        return Err(Error::InvalidConfig(format!(
            "cannot flip bits in {count} distinct weights of layer {:?}",
            layer.label
        )));
    }
    let weights = sample(rng, n_weights, count).into_vec();
    Ok(weights
        .into_iter()
        .map(|weight| {
            let bit = match policy {
                BitPolicy::Random => rng.random_range(0..8u8),
                BitPolicy::Msb => 7,
                BitPolicy::Fixed(bit) => bit,
            };
            BitPosition { weight, bit }
        })
        .collect())
}

fn flip(layer: &mut Layer, p: BitPosition) {
    let cols = layer.inputs();
    let w = &mut layer.weights[p.weight / cols][p.weight % cols];
    *w = ((*w as u8) ^ (1u8 << p.bit)) as i8;
}

/// Returns an attacked copy of `net`.
pub fn apply_attack(net: &SurrogateNet, spec: &AttackSpec) -> Result<SurrogateNet> {
    spec.validate()?;
    let target = net.layer_index(&spec.target_layer)?;
    let mut out = net.clone();
    match spec.kind {
        AttackKind::TrojanRetrain => {
            let reseed = spec.magnitude.reseed.unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1, reseed]));
            for layer in &mut out.layers {
                for w in layer.weights.iter_mut().flatten() {
                    *w = draw_weight(&mut rng);
                }
            }
        }
        AttackKind::PoisonFinalLayer => {
            let scale = spec.magnitude.scale.unwrap_or(DEFAULT_POISON_SCALE);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2]));
            let last = out.layers.last_mut().expect("validated non-empty");
            for w in last.weights.iter_mut().flatten() {
                let offset = rng.random_range(-scale..=scale);
                *w = (*w as i32 + offset).clamp(i8::MIN as i32, i8::MAX as i32) as i8;
            }
        }
        AttackKind::BitFlip => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3]));
            let positions = flip_positions(&out.layers[target], spec, &mut rng)?;
            for p in positions {
                flip(&mut out.layers[target], p);
            }
        }
    }
    Ok(out)
}

/// Violation severities used for layer-wise propagation experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Every weight of the layer re-drawn.
    SingleLayer,
    /// One weight replaced by a different value.
    SingleParameter,
    /// One bit of one weight flipped.
    SingleBit,
}

impl Severity {
    pub const ALL: [Severity; 3] = [
        Severity::SingleLayer,
        Severity::SingleParameter,
        Severity::SingleBit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Severity::SingleLayer => "single_layer",
            Severity::SingleParameter => "single_parameter",
            Severity::SingleBit => "single_bit",
        }
    }
}

pub fn inject_severity(
    net: &SurrogateNet,
    layer_label: &str,
    severity: Severity,
    seed: u64,
) -> Result<SurrogateNet> {
    let idx = net.layer_index(layer_label)?;
    let mut out = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[4, severity as u64]));
    let layer = &mut out.layers[idx];
    match severity {
        Severity::SingleLayer => {
            for w in layer.weights.iter_mut().flatten() {
                *w = draw_weight(&mut rng);
            }
        }
        Severity::SingleParameter => {
            let k = rng.random_range(0..layer.macs());
            let cols = layer.inputs();
            let w = &mut layer.weights[k / cols][k % cols];
            let old = *w;
            while *w == old {
                *w = rng.random::<i8>();
            }
        }
        Severity::SingleBit => {
            let k = rng.random_range(0..layer.macs() * 8);
            flip(
                layer,
                BitPosition {
                    weight: k / 8,
                    bit: (k % 8) as u8,
                },
            );
        }
    }
    Ok(out)
}

/// Seeded test input with post-activation-like values in [0, 127].
pub fn seeded_input(width: usize, seed: u64) -> Vec<i8> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[5]));
    (0..width).map(|_| rng.random_range(0i8..=127)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub predeploy: usize,
    pub runtime: usize,
}

/// A named group of traces captured under one model state.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub attack: Option<AttackSpec>,
    pub traces: TraceSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Benign traces for the pre-deployment stage.
    pub predeploy: Condition,
    /// Benign runtime set first, then one set per attack in input order.
    pub runtime: Vec<Condition>,
}

/// Simulates `count` traces of `net`, trace `i` using noise stream
/// `derive_seed(master_seed, [stream, i])`. Generation is parallel; output
/// order and bytes do not depend on the thread count.
pub fn simulate_many(
    device: &DeviceModel,
    net: &SurrogateNet,
    input: &[i8],
    count: usize,
    master_seed: u64,
    stream: u64,
) -> Result<TraceSet> {
    let traces = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, &[stream, i as u64]);
            simulate_inference_trace(device, net, input, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    TraceSet::new(traces)
}

/// Condition labels: `benign`, then each attack kind, suffixed `_2`, `_3`, ... on repeats.
pub fn condition_names(attacks: &[AttackSpec]) -> Vec<String> {
    let mut names = vec!["benign".to_string()];
    for (i, a) in attacks.iter().enumerate() {
        let base = a.kind.name();
        let dup = attacks[..i].iter().filter(|b| b.kind == a.kind).count();
        names.push(if dup == 0 {
            base.to_string()
        } else {
            format!("{base}_{}", dup + 1)
        });
    }
    names
}

pub fn generate_dataset(
    device: &DeviceModel,
    benign: &SurrogateNet,
    attacks: &[AttackSpec],
    test_input: &[i8],
    counts: DatasetCounts,
    master_seed: u64,
) -> Result<Dataset> {
    if counts.predeploy == 0 || counts.runtime == 0 {
        return Err(Error::InvalidConfig("trace counts must be >= 1".into()));
    }
    device.validate()?;
    let tag = |set: TraceSet, name: &str| -> Result<TraceSet> {
        let traces = set
            .into_traces()
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                let mut meta = t.meta().clone();
                meta.insert("condition".into(), name.to_string());
                meta.insert("trace_index".into(), i.to_string());
                meta.insert("master_seed".into(), master_seed.to_string());
                t.with_meta(meta)
            })
            .collect();
        TraceSet::new(traces)
    };

    let pre = simulate_many(device, benign, test_input, counts.predeploy, master_seed, 0)?;
    let predeploy = Condition {
        name: "predeploy".into(),
        attack: None,
        traces: tag(pre, "predeploy")?,
    };

    let names = condition_names(attacks);
    let mut runtime = Vec::with_capacity(names.len());
    for (idx, name) in names.iter().enumerate() {
        let attack = idx.checked_sub(1).map(|j| attacks[j].clone());
        let net = match &attack {
            Some(a) => apply_attack(benign, a)?,
            None => benign.clone(),
        };
        let set = simulate_many(
            device,
            &net,
            test_input,
            counts.runtime,
            master_seed,
            1 + idx as u64,
        )?;
        runtime.push(Condition {
            name: name.clone(),
            attack,
            traces: tag(set, name)?,
        });
    }
    Ok(Dataset { predeploy, runtime })
}
