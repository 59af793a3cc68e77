//! Pre-deployment template generation and runtime integrity verdicts.
//!
//! Pre-deployment: spectrum of N benign traces -> target frequency ->
//! band-pass design -> one randomly chosen filtered trace becomes the golden
//! template -> the other N-1 filtered traces correlated against it form the
//! similarity sample.
//!
//! Runtime: n_RA fresh traces are filtered with the same band-pass,
//! correlated with the template, and the resulting test similarities are
//! compared to the similarity sample with a two-sided Mann-Whitney U-test.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::spectral::{
    default_dc_exclusion_hz, design_bandpass, detect_target_frequency, filter_zero_phase_samples,
    mean_magnitude_spectrum, FilterParams, FilterSpec,
};
use crate::stats::{
    mann_whitney, pearson, Alternative, SimilaritySample, SimilaritySource, UMethod, UTestResult,
    MIN_VALID_GROUP,
};
use crate::trace::{Trace, TraceSet};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_P_THRESHOLD: f64 = 1e-5;
pub const MIN_PREDEPLOY_TRACES: usize = MIN_VALID_GROUP + 1;
const UNKNOWN: &str = "unknown";
const EPOCH: &str = "1970-01-01T00:00:00Z";

fn default_bandwidth() -> f64 {
    0.01
}

fn default_order() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredeployConfig {
    pub n_traces: usize,
    /// Frequencies at or below this are not considered for the target peak.
    /// Defaults to max(2 bins, 1 kHz).
    #[serde(default)]
    pub dc_exclusion_hz: Option<f64>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_fraction: f64,
    #[serde(default = "default_order")]
    pub filter_order: usize,
    #[serde(default)]
    pub template_selection_seed: u64,
    /// Layer segment to analyse. `None` selects the last marker when the
    /// traces carry markers, else the whole trace.
    #[serde(default)]
    pub layer_label: Option<String>,
}

impl PredeployConfig {
    pub fn new(n_traces: usize) -> Self {
        PredeployConfig {
            n_traces,
            dc_exclusion_hz: None,
            bandwidth_fraction: default_bandwidth(),
            filter_order: default_order(),
            template_selection_seed: 0,
            layer_label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traces < MIN_PREDEPLOY_TRACES {
            return Err(Error::InvalidConfig(format!(
                "n_traces = {} but at least {MIN_PREDEPLOY_TRACES} are needed \
                 (one template plus {MIN_VALID_GROUP} similarity values)",
                self.n_traces
            )));
        }
        if let Some(dc) = self.dc_exclusion_hz {
            if !(dc.is_finite() && dc > 0.0) {
                return Err(Error::InvalidConfig(format!("dc exclusion {dc} Hz")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBundle {
    pub format_version: u32,
    pub device_id: String,
    pub test_input_id: String,
    /// RFC 3339 timestamp. Defaults to the Unix epoch so bundles built from
    /// the same inputs are byte-identical; callers stamp real times.
    pub created_at: String,
    pub target_frequency_hz: f64,
    pub filter: FilterParams,
    /// Filtered template trace.
    pub golden_template: Trace,
    pub similarity_sample: SimilaritySample,
    /// Effective configuration; `layer_label` holds the resolved layer.
    pub predeploy_config: PredeployConfig,
}

/// The layer a stage should analyse: the explicit label, else the last
/// marker, else none (whole trace).
fn resolve_layer(set: &TraceSet, explicit: Option<&str>) -> Option<String> {
    explicit
        .map(str::to_string)
        .or_else(|| set.traces()[0].markers().last().map(|m| m.label.clone()))
}

fn select(set: &TraceSet, layer: Option<&str>) -> Result<TraceSet> {
    match layer {
        Some(label) => set.segments(label),
        None => Ok(set.clone()),
    }
}

fn filter_all(filter: &FilterSpec, set: &TraceSet) -> Result<Vec<Vec<f64>>> {
    set.traces()
        .par_iter()
        .map(|t| filter_zero_phase_samples(filter, t.samples(), t.sample_rate_hz()))
        .collect()
}

fn meta_or_unknown(set: &TraceSet, key: &str) -> String {
    set.traces()[0]
        .meta()
        .get(key)
        .cloned()
        .unwrap_or_else(|| UNKNOWN.to_string())
}

pub fn predeploy(benign_traces: &TraceSet, config: &PredeployConfig) -> Result<TemplateBundle> {
    config.validate()?;
    if benign_traces.len() != config.n_traces {
        return Err(Error::InvalidConfig(format!(
            "expected {} pre-deployment traces, got {}",
            config.n_traces,
            benign_traces.len()
        )));
    }
    let layer = resolve_layer(benign_traces, config.layer_label.as_deref());
    let set = select(benign_traces, layer.as_deref())?;

    let spectrum = mean_magnitude_spectrum(&set)?;
    let exclusion = config
        .dc_exclusion_hz
        .unwrap_or_else(|| default_dc_exclusion_hz(&spectrum));
    let target = detect_target_frequency(&spectrum, exclusion)?;
    let filter = design_bandpass(
        target,
        config.bandwidth_fraction,
        config.filter_order,
        set.sample_rate_hz(),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.template_selection_seed);
    let template_idx = rng.random_range(0..set.len());
    let filtered = filter_all(&filter, &set)?;
    let template = &filtered[template_idx];
    let values = filtered
        .par_iter()
        .enumerate()
        .filter(|(i, _)| *i != template_idx)
        .map(|(_, f)| pearson(template, f))
        .collect::<Result<Vec<_>>>()?;

    let golden_template = Trace::new(template.clone(), set.sample_rate_hz())?;
    let mut effective = config.clone();
    effective.layer_label = layer;
    Ok(TemplateBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        device_id: meta_or_unknown(benign_traces, "device_id"),
        test_input_id: meta_or_unknown(benign_traces, "test_input_id"),
        created_at: EPOCH.to_string(),
        target_frequency_hz: target,
        filter: filter.params,
        golden_template,
        similarity_sample: SimilaritySample::new(values, SimilaritySource::PreDeployment)?,
        predeploy_config: effective,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeConfig {
    pub n_ra: usize,
    pub p_threshold: f64,
    /// Overrides the bundle's layer when set.
    #[serde(default)]
    pub layer_label: Option<String>,
}

impl RuntimeConfig {
    pub fn new(n_ra: usize) -> Self {
        RuntimeConfig {
            n_ra,
            p_threshold: DEFAULT_P_THRESHOLD,
            layer_label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_ra == 0 {
            return Err(Error::InvalidConfig("n_ra must be >= 1".into()));
        }
        if !(self.p_threshold > 0.0 && self.p_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p threshold {} outside (0, 1]",
                self.p_threshold
            )));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        if self.n_ra < MIN_VALID_GROUP {
            vec![small_sample_warning(self.n_ra)]
        } else {
            Vec::new()
        }
    }
}

pub fn small_sample_warning(n_ra: usize) -> String {
    format!("n_ra = {n_ra} is below the minimum of {MIN_VALID_GROUP} for a valid U-test")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub p_value: f64,
    pub threshold: f64,
    pub violation_detected: bool,
    pub test_result: UTestResult,
    pub test_similarities: SimilaritySample,
    pub warnings: Vec<String>,
}

pub fn runtime_check(
    bundle: &TemplateBundle,
    test_traces: &TraceSet,
    config: &RuntimeConfig,
) -> Result<Verdict> {
    config.validate()?;
    if test_traces.len() != config.n_ra {
        return Err(Error::Incompatible(format!(
            "expected {} test traces, got {}",
            config.n_ra,
            test_traces.len()
        )));
    }
    let layer = config
        .layer_label
        .as_deref()
        .or(bundle.predeploy_config.layer_label.as_deref());
    let set = select(test_traces, layer)?;
    let template = &bundle.golden_template;
    if set.sample_rate_hz() != template.sample_rate_hz() {
        return Err(Error::SampleRateMismatch {
            expected: template.sample_rate_hz(),
            found: set.sample_rate_hz(),
        });
    }
    if set.common_length() != template.len() {
        return Err(Error::Incompatible(format!(
            "test segment length {} differs from template length {}",
            set.common_length(),
            template.len()
        )));
    }
    let filter = FilterSpec::from_params(bundle.filter)?;
    let values = filter_all(&filter, &set)?
        .iter()
        .map(|f| pearson(template.samples(), f))
        .collect::<Result<Vec<_>>>()?;
    let test_similarities = SimilaritySample::new(values, SimilaritySource::Runtime)?;
    let result = mann_whitney(
        test_similarities.values(),
        bundle.similarity_sample.values(),
        Alternative::TwoSided,
        UMethod::Auto,
    )?;
    Ok(Verdict {
        p_value: result.p_value,
        threshold: config.p_threshold,
        violation_detected: result.p_value < config.p_threshold,
        test_result: result,
        test_similarities,
        warnings: config.warnings(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeverityRow {
    pub layer: String,
    pub severity: String,
    pub p_value: f64,
    pub violation_detected: bool,
}

/// Runs one runtime check per (layer bundle, labelled trace set) pair.
///
/// Rows follow the bundle order (network layer order), then the order of
/// `attacked_trace_sets`.
pub fn severity_sweep(
    bundle_per_layer: &[TemplateBundle],
    attacked_trace_sets: &[(String, TraceSet)],
    config: &RuntimeConfig,
) -> Result<Vec<SeverityRow>> {
    let mut rows = Vec::with_capacity(bundle_per_layer.len() * attacked_trace_sets.len());
    for bundle in bundle_per_layer {
        let layer = bundle
            .predeploy_config
            .layer_label
            .clone()
            .ok_or_else(|| Error::Incompatible("bundle has no layer label".into()))?;
        for (severity, set) in attacked_trace_sets {
            if set.traces()[0].marker(&layer).is_none() {
                return Err(Error::Incompatible(format!(
                    "trace set {severity:?} has no {layer:?} marker"
                )));
            }
            let cfg = RuntimeConfig {
                layer_label: Some(layer.clone()),
                ..config.clone()
            };
            let v = runtime_check(bundle, set, &cfg)?;
            rows.push(SeverityRow {
                layer: layer.clone(),
                severity: severity.clone(),
                p_value: v.p_value,
                violation_detected: v.violation_detected,
            });
        }
    }
    Ok(rows)
}

fn serialize_f17<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(values.len()))?;
    for v in values {
        let raw = RawValue::from_string(format!("{v:.16e}")).map_err(S::Error::custom)?;
        seq.serialize_element(&raw)?;
    }
    seq.end()
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    sample_rate_hz: f64,
    #[serde(serialize_with = "serialize_f17")]
    samples: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    format_version: u32,
    device_id: String,
    test_input_id: String,
    created_at: String,
    target_frequency_hz: f64,
    filter: FilterParams,
    golden_template: TemplateFile,
    #[serde(serialize_with = "serialize_f17")]
    similarity_sample: Vec<f64>,
    predeploy_config: PredeployConfig,
}

impl TemplateBundle {
    /// JSON with every sample written to 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let file = BundleFile {
            format_version: self.format_version,
            device_id: self.device_id.clone(),
            test_input_id: self.test_input_id.clone(),
            created_at: self.created_at.clone(),
            target_frequency_hz: self.target_frequency_hz,
            filter: self.filter,
            golden_template: TemplateFile {
                sample_rate_hz: self.golden_template.sample_rate_hz(),
                samples: self.golden_template.samples().to_vec(),
            },
            similarity_sample: self.similarity_sample.values().to_vec(),
            predeploy_config: self.predeploy_config.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: BundleFile = serde_json::from_str(s)?;
        if f.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported bundle format version {}",
                f.format_version
            )));
        }
        // Coefficients are always re-derived; this also validates the design.
        FilterSpec::from_params(f.filter)?;
        Ok(TemplateBundle {
            format_version: f.format_version,
            device_id: f.device_id,
            test_input_id: f.test_input_id,
            created_at: f.created_at,
            target_frequency_hz: f.target_frequency_hz,
            filter: f.filter,
            golden_template: Trace::new(
                f.golden_template.samples,
                f.golden_template.sample_rate_hz,
            )?,
            similarity_sample: SimilaritySample::new(
                f.similarity_sample,
                SimilaritySource::PreDeployment,
            )?,
            predeploy_config: f.predeploy_config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TemplateBundle::from_json(&s)
    }

    pub fn layer_label(&self) -> Option<&str> {
        self.predeploy_config.layer_label.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powersim::{
        apply_attack, seeded_input, simulate_many, AttackSpec, DeviceModel, SurrogateNet,
    };

    fn setup(n: usize, seed: u64) -> (DeviceModel, SurrogateNet, Vec<i8>, TraceSet) {
        let dev = DeviceModel::default();
        let net = SurrogateNet::default_surrogate(seed);
        let input = seeded_input(16, seed);
        let set = simulate_many(&dev, &net, &input, n, seed, 0).unwrap();
        (dev, net, input, set)
    }

    #[test]
    fn identical_traces_correlate_perfectly() {
        let dev = DeviceModel {
            noise_sigma_volts: 0.0,
            ..DeviceModel::default()
        };
        let net = SurrogateNet::default_surrogate(2);
        let set = simulate_many(&dev, &net, &seeded_input(16, 2), 6, 1, 0).unwrap();
        let bundle = predeploy(&set, &PredeployConfig::new(6)).unwrap();
        assert_eq!(bundle.similarity_sample.len(), 5);
        assert!(bundle.similarity_sample.values().iter().all(|&v| v == 1.0));
        assert_eq!(bundle.layer_label(), Some("fc"));
    }

    #[test]
    fn bundle_determinism_and_seed() {
        let (_, _, _, set) = setup(40, 3);
        let mut cfg = PredeployConfig::new(40);
        cfg.template_selection_seed = 7;
        let a = predeploy(&set, &cfg).unwrap();
        let b = predeploy(&set, &cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        cfg.template_selection_seed = 8;
        let c = predeploy(&set, &cfg).unwrap();
        assert_eq!(c.similarity_sample.len(), 39);
    }

    #[test]
    fn predeploy_validation() {
        let (_, _, _, set) = setup(5, 4);
        assert!(matches!(
            predeploy(&set, &PredeployConfig::new(5)),
            Err(Error::InvalidConfig(_))
        ));
        let (_, _, _, set) = setup(8, 4);
        assert!(predeploy(&set, &PredeployConfig::new(7)).is_err());
        let mut cfg = PredeployConfig::new(8);
        cfg.layer_label = Some("missing".into());
        assert!(matches!(predeploy(&set, &cfg), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn whole_trace_without_markers() {
        let (_, _, _, set) = setup(10, 6);
        let bare = TraceSet::new(
            set.traces()
                .iter()
                .map(|t| Trace::new(t.samples().to_vec(), t.sample_rate_hz()).unwrap())
                .collect(),
        )
        .unwrap();
        let bundle = predeploy(&bare, &PredeployConfig::new(10)).unwrap();
        assert_eq!(bundle.layer_label(), None);
        assert_eq!(bundle.golden_template.len(), set.common_length());
    }

    #[test]
    fn layer_selection_sets_template_length() {
        let (_, _, _, set) = setup(10, 9);
        let mut cfg = PredeployConfig::new(10);
        cfg.layer_label = Some("conv1".into());
        let bundle = predeploy(&set, &cfg).unwrap();
        let m = set.traces()[0].marker("conv1").unwrap();
        assert_eq!(bundle.golden_template.len(), m.len());
    }

    #[test]
    fn json_round_trip_and_layout() {
        let (_, _, _, set) = setup(12, 5);
        let bundle = predeploy(&set, &PredeployConfig::new(12)).unwrap();
        let json = bundle.to_json().unwrap();
        let back = TemplateBundle::from_json(&json).unwrap();
        assert_eq!(back, bundle);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "created_at",
                "device_id",
                "filter",
                "format_version",
                "golden_template",
                "predeploy_config",
                "similarity_sample",
                "target_frequency_hz",
                "test_input_id"
            ]
        );
        let mut fkeys: Vec<_> = v["filter"].as_object().unwrap().keys().cloned().collect();
        fkeys.sort();
        assert_eq!(
            fkeys,
            ["bandwidth_fraction", "center_hz", "order", "sample_rate_hz"]
        );
        // 17 significant digits per sample.
        let needle = format!("{:.16e}", bundle.similarity_sample.values()[0]);
        assert!(json.contains(&needle));
    }

    #[test]
    fn runtime_checks() {
        let (dev, net, input, set) = setup(60, 10);
        let bundle = predeploy(&set, &PredeployConfig::new(60)).unwrap();
        let cfg = RuntimeConfig::new(5);

        // Members of the pre-deployment set are drawn from the benign population.
        let members = TraceSet::new(set.traces()[10..15].to_vec()).unwrap();
        let v = runtime_check(&bundle, &members, &cfg).unwrap();
        assert!(!v.violation_detected);
        assert!(v.warnings.is_empty());
        assert_eq!(v.test_similarities.len(), 5);

        let attacked = apply_attack(&net, &AttackSpec::bit_flip("fc", 4, 1)).unwrap();
        let bad = simulate_many(&dev, &attacked, &input, 5, 99, 1).unwrap();
        let v = runtime_check(&bundle, &bad, &cfg).unwrap();
        assert_eq!(v.violation_detected, v.p_value < 1e-5);

        let three = TraceSet::new(set.traces()[..3].to_vec()).unwrap();
        let v = runtime_check(&bundle, &three, &RuntimeConfig::new(3)).unwrap();
        assert_eq!(v.warnings.len(), 1);
        assert!(v.test_result.small_sample_warning);

        assert!(runtime_check(&bundle, &three, &cfg).is_err());
    }

    #[test]
    fn runtime_rejects_mismatched_inputs() {
        let (_, net, input, set) = setup(20, 11);
        let bundle = predeploy(&set, &PredeployConfig::new(20)).unwrap();
        let fast = DeviceModel {
            sample_rate_hz: 4.0e6,
            ..DeviceModel::default()
        };
        let other = simulate_many(&fast, &net, &input, 5, 1, 0).unwrap();
        assert!(matches!(
            runtime_check(&bundle, &other, &RuntimeConfig::new(5)),
            Err(Error::SampleRateMismatch { .. })
        ));
        let mut cfg = RuntimeConfig::new(5);
        cfg.p_threshold = 0.0;
        let five = TraceSet::new(set.traces()[..5].to_vec()).unwrap();
        assert!(runtime_check(&bundle, &five, &cfg).is_err());
    }

    #[test]
    fn threshold_semantics() {
        let (_, _, _, set) = setup(30, 12);
        let bundle = predeploy(&set, &PredeployConfig::new(30)).unwrap();
        let five = TraceSet::new(set.traces()[..5].to_vec()).unwrap();
        let p = runtime_check(&bundle, &five, &RuntimeConfig::new(5))
            .unwrap()
            .p_value;
        for th in [p / 2.0, p, p * (1.0 + 1e-12), (p * 2.0).min(1.0)] {
            let mut cfg = RuntimeConfig::new(5);
            cfg.p_threshold = th;
            let v = runtime_check(&bundle, &five, &cfg).unwrap();
            assert_eq!(v.violation_detected, p < th, "threshold {th}");
        }
    }
}
