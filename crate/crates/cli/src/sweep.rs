//! Repeated end-to-end trials: one pre-deployment per layer, then fresh
//! attack instances and fresh runtime noise for every trial.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use michscan_core::pipeline::{
    predeploy, runtime_check, small_sample_warning, PredeployConfig, RuntimeConfig, TemplateBundle,
};
use michscan_core::powersim::{apply_attack, condition_names, derive_seed, simulate_many};
use michscan_core::stats::MIN_VALID_GROUP;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{digest, read_config, SweepConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub condition: String,
    pub n_ra: usize,
    pub trials: usize,
    pub detections: usize,
    pub mean_log10_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub layer: String,
    pub p_threshold: f64,
    pub rows: Vec<SweepRow>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerPValue {
    pub condition: String,
    pub n_ra: usize,
    pub trial: usize,
    pub layer: String,
    pub p_value: f64,
}

fn validate(cfg: &SweepConfig) -> Result<()> {
    if cfg.trials == 0 {
        bail!("trials must be >= 1");
    }
    if cfg.n_ra.is_empty() || cfg.n_ra.contains(&0) {
        bail!("n_ra must list sizes >= 1");
    }
    if !(cfg.p_threshold > 0.0 && cfg.p_threshold <= 1.0) {
        bail!("p_threshold {} outside (0, 1]", cfg.p_threshold);
    }
    Ok(())
}

/// Runs every (condition, n_ra, trial) combination. Report rows follow the
/// configuration order: conditions (benign first, then attacks) outer, n_ra
/// inner. Per-layer p-values cover every layer of the network.
pub fn run_sweep(cfg: &SweepConfig) -> Result<(SweepReport, Vec<LayerPValue>)> {
    validate(cfg)?;
    cfg.device.validate()?;
    let net = cfg.network.build()?;
    let input = cfg.test_input.values(net.input_width)?;
    let report_layer = cfg
        .layer
        .clone()
        .unwrap_or_else(|| net.final_label().to_string());
    net.layer_index(&report_layer)?;
    for a in &cfg.attacks {
        a.validate()?;
        net.layer_index(&a.target_layer)?;
    }

    let benign_set = simulate_many(
        &cfg.device,
        &net,
        &input,
        cfg.predeploy_traces,
        cfg.master_seed,
        0,
    )?;
    let labels = net.labels();
    let bundles = labels
        .iter()
        .map(|label| {
            let mut pc = PredeployConfig::new(cfg.predeploy_traces);
            pc.layer_label = Some(label.clone());
            pc.template_selection_seed = cfg.template_selection_seed;
            predeploy(&benign_set, &pc)
        })
        .collect::<michscan_core::Result<Vec<TemplateBundle>>>()?;
    let report_idx = labels
        .iter()
        .position(|l| *l == report_layer)
        .expect("checked above");

    let names = condition_names(&cfg.attacks);
    let mut rows = Vec::new();
    let mut layer_ps = Vec::new();
    for (ci, name) in names.iter().enumerate() {
        let attack = ci.checked_sub(1).map(|j| &cfg.attacks[j]);
        for (ni, &n_ra) in cfg.n_ra.iter().enumerate() {
            let runtime = RuntimeConfig::new(n_ra);
            let per_trial = (0..cfg.trials)
                .into_par_iter()
                .map(|trial| -> Result<Vec<f64>> {
                    let t = trial as u64;
                    let model = match attack {
                        Some(a) => apply_attack(&net, &a.with_seed(derive_seed(a.seed, &[t])))?,
                        None => net.clone(),
                    };
                    let noise = derive_seed(cfg.master_seed, &[1 + ci as u64, ni as u64, t]);
                    let traces = simulate_many(&cfg.device, &model, &input, n_ra, noise, 0)?;
                    bundles
                        .iter()
                        .map(|b| Ok(runtime_check(b, &traces, &runtime)?.p_value))
                        .collect()
                })
                .collect::<Result<Vec<_>>>()?;

            let report_ps: Vec<f64> = per_trial.iter().map(|ps| ps[report_idx]).collect();
            rows.push(SweepRow {
                condition: name.clone(),
                n_ra,
                trials: cfg.trials,
                detections: report_ps.iter().filter(|&&p| p < cfg.p_threshold).count(),
                mean_log10_p: report_ps.iter().map(|p| p.log10()).sum::<f64>()
                    / report_ps.len() as f64,
                warning: (n_ra < MIN_VALID_GROUP).then(|| small_sample_warning(n_ra)),
            });
            for (trial, ps) in per_trial.iter().enumerate() {
                for (label, &p) in labels.iter().zip(ps) {
                    layer_ps.push(LayerPValue {
                        condition: name.clone(),
                        n_ra,
                        trial,
                        layer: label.clone(),
                        p_value: p,
                    });
                }
            }
        }
    }
    Ok((
        SweepReport {
            layer: report_layer,
            p_threshold: cfg.p_threshold,
            rows,
            config_digest: digest(cfg)?,
        },
        layer_ps,
    ))
}

pub fn layer_csv(values: &[LayerPValue]) -> String {
    let mut out = String::from("condition,n_ra,trial,layer,p_value\n");
    for v in values {
        writeln!(
            out,
            "{},{},{},{},{:e}",
            v.condition, v.n_ra, v.trial, v.layer, v.p_value
        )
        .expect("writing to a String");
    }
    out
}

/// Reads the sweep config (defaults when `None`), runs it and writes the
/// JSON report plus `<report>.layers.csv`.
pub fn cmd_sweep(
    config_path: Option<&Path>,
    out_report: &Path,
    master_seed: Option<u64>,
) -> Result<SweepReport> {
    let mut cfg: SweepConfig = read_config(config_path)?;
    if let Some(seed) = master_seed {
        cfg.master_seed = seed;
    }
    let (report, layer_ps) = run_sweep(&cfg)?;
    let (json_path, csv_path) = crate::report_paths(out_report);
    fs::write(&json_path, crate::to_json_line(&report)?)
        .with_context(|| format!("writing {}", json_path.display()))?;
    fs::write(&csv_path, layer_csv(&layer_ps))
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(report)
}
