//! Command implementations behind the `michscan` binary.

pub mod config;
pub mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use michscan_core::pipeline::{predeploy, runtime_check, PredeployConfig, RuntimeConfig, Verdict};
use michscan_core::powersim::{derive_seed, generate_dataset, AttackSpec, Condition};
use michscan_core::{load_traces, store_traces, TemplateBundle, TraceFormat, TraceSet};
use serde::Serialize;

pub use config::{NetworkConfig, Preset, SimulateConfig, SweepConfig, TestInput};
pub use sweep::{cmd_sweep, run_sweep, LayerPValue, SweepReport, SweepRow};

pub const EXIT_BENIGN: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_VIOLATION: u8 = 2;

/// Format from an explicit choice, else from the file extension.
pub fn resolve_format(path: &Path, explicit: Option<TraceFormat>) -> TraceFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => TraceFormat::Csv,
        _ => TraceFormat::Binary,
    })
}

fn extension(format: TraceFormat) -> &'static str {
    match format {
        TraceFormat::Binary => "mch",
        TraceFormat::Csv => "csv",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestFile {
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
    pub condition: String,
    pub traces: usize,
    /// Trace `i` uses noise seed `derive_seed(master_seed, [stream, i])`.
    pub stream: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub format: String,
    pub config_digest: String,
    pub device_id: String,
    pub test_input_id: String,
    pub test_input: Vec<i8>,
    pub first_noise_seed: u64,
    pub files: Vec<ManifestFile>,
}

fn with_identity(set: TraceSet, device_id: &str, input_id: &str) -> Result<TraceSet> {
    let traces = set
        .into_traces()
        .into_iter()
        .map(|t| {
            let mut meta = t.meta().clone();
            meta.insert("device_id".into(), device_id.to_string());
            meta.insert("test_input_id".into(), input_id.to_string());
            t.with_meta(meta)
        })
        .collect();
    Ok(TraceSet::new(traces)?)
}

/// Generates the dataset described by `config` into `out_dir` and writes
/// `manifest.json` next to the trace files.
pub fn cmd_simulate(
    config: &SimulateConfig,
    out_dir: &Path,
    master_seed: u64,
    format: TraceFormat,
) -> Result<Manifest> {
    config.device.validate()?;
    let net = config.network.build()?;
    let input = config.test_input.values(net.input_width)?;
    let input_id = config.test_input.id();
    let ds = generate_dataset(
        &config.device,
        &net,
        &config.attacks,
        &input,
        config.counts,
        master_seed,
    )?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;

    let mut files = Vec::new();
    let mut write = |cond: Condition, file_stem: String, stream: u64| -> Result<()> {
        let name = format!("{file_stem}.{}", extension(format));
        let path = out_dir.join(&name);
        let set = with_identity(cond.traces, &config.device_id, &input_id)?;
        store_traces(&set, &path, format)?;
        let sidecar = (format == TraceFormat::Csv).then(|| {
            michscan_core::io::csv_sidecar_path(Path::new(&name))
                .display()
                .to_string()
        });
        files.push(ManifestFile {
            path: name,
            sidecar,
            condition: cond.name,
            traces: set.len(),
            stream,
            attack: cond.attack,
        });
        Ok(())
    };
    write(ds.predeploy, "predeploy".into(), 0)?;
    for (idx, cond) in ds.runtime.into_iter().enumerate() {
        let stem = format!("runtime_{}", cond.name);
        write(cond, stem, 1 + idx as u64)?;
    }

    let manifest = Manifest {
        master_seed,
        format: format_name(format).into(),
        config_digest: config::digest(config)?,
        device_id: config.device_id.clone(),
        test_input_id: input_id,
        test_input: input,
        first_noise_seed: derive_seed(master_seed, &[0, 0]),
        files,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(manifest)
}

fn format_name(format: TraceFormat) -> &'static str {
    match format {
        TraceFormat::Binary => "binary",
        TraceFormat::Csv => "csv",
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredeployOptions {
    pub template_seed: u64,
    pub layer: Option<String>,
    pub bandwidth_fraction: Option<f64>,
    pub filter_order: Option<usize>,
    pub dc_exclusion_hz: Option<f64>,
    /// RFC 3339 timestamp recorded in the bundle.
    pub created_at: Option<String>,
}

/// Timestamp for a new bundle: the explicit value, else `SOURCE_DATE_EPOCH`,
/// else the Unix epoch. Wall-clock time is never used so runs reproduce.
pub fn resolve_created_at(explicit: Option<&str>) -> Result<String> {
    if let Some(s) = explicit {
        let t = DateTime::parse_from_rfc3339(s).with_context(|| format!("bad timestamp {s:?}"))?;
        return Ok(t
            .with_timezone(&Utc)
            .to_rfc3339_opts(SecondsFormat::Secs, true));
    }
    let secs = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse::<i64>()
            .with_context(|| format!("bad SOURCE_DATE_EPOCH {v:?}"))?,
        Err(_) => 0,
    };
    let t = DateTime::<Utc>::from_timestamp(secs, 0).context("SOURCE_DATE_EPOCH out of range")?;
    Ok(t.to_rfc3339_opts(SecondsFormat::Secs, true))
}

pub fn cmd_predeploy(
    traces_path: &Path,
    format: TraceFormat,
    options: &PredeployOptions,
    bundle_out: &Path,
) -> Result<TemplateBundle> {
    let set = load_traces(traces_path, format)?;
    let mut cfg = PredeployConfig::new(set.len());
    cfg.template_selection_seed = options.template_seed;
    cfg.layer_label = options.layer.clone();
    cfg.dc_exclusion_hz = options.dc_exclusion_hz;
    if let Some(b) = options.bandwidth_fraction {
        cfg.bandwidth_fraction = b;
    }
    if let Some(o) = options.filter_order {
        cfg.filter_order = o;
    }
    let mut bundle = predeploy(&set, &cfg)?;
    bundle.created_at = resolve_created_at(options.created_at.as_deref())?;
    bundle
        .save(bundle_out)
        .with_context(|| format!("writing {}", bundle_out.display()))?;
    Ok(bundle)
}

/// Checks the first `config.n_ra` traces of the file against the bundle.
pub fn cmd_check(
    bundle_path: &Path,
    traces_path: &Path,
    format: TraceFormat,
    config: &RuntimeConfig,
) -> Result<Verdict> {
    let bundle = TemplateBundle::load(bundle_path)?;
    let set = load_traces(traces_path, format)?;
    if set.len() < config.n_ra {
        bail!(
            "{} holds {} traces, n_ra = {}",
            traces_path.display(),
            set.len(),
            config.n_ra
        );
    }
    let set = TraceSet::new(set.into_traces().into_iter().take(config.n_ra).collect())?;
    Ok(runtime_check(&bundle, &set, config)?)
}

pub fn verdict_exit_code(v: &Verdict) -> u8 {
    if v.violation_detected {
        EXIT_VIOLATION
    } else {
        EXIT_BENIGN
    }
}

/// Pretty JSON with a trailing newline, the form every command writes.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn report_paths(out_report: &Path) -> (PathBuf, PathBuf) {
    let csv = out_report.with_extension("layers.csv");
    (out_report.to_path_buf(), csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_inferred_from_extension() {
        assert_eq!(resolve_format(Path::new("a.CSV"), None), TraceFormat::Csv);
        assert_eq!(
            resolve_format(Path::new("a.mch"), None),
            TraceFormat::Binary
        );
        assert_eq!(
            resolve_format(Path::new("a.csv"), Some(TraceFormat::Binary)),
            TraceFormat::Binary
        );
    }

    #[test]
    fn created_at_is_normalised() {
        assert_eq!(
            resolve_created_at(Some("2024-03-01T12:00:00+02:00")).unwrap(),
            "2024-03-01T10:00:00Z"
        );
        assert!(resolve_created_at(Some("yesterday")).is_err());
    }
}
