use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use michscan_cli::config::read_config;
use michscan_cli::{
    cmd_check, cmd_predeploy, cmd_simulate, cmd_sweep, resolve_format, to_json_line,
    verdict_exit_code, PredeployOptions, SimulateConfig, EXIT_BENIGN, EXIT_ERROR,
};
use michscan_core::pipeline::{RuntimeConfig, DEFAULT_P_THRESHOLD};
use michscan_core::TraceFormat;

/// Power side-channel integrity checks for neural-network inference.
///
/// Exit codes: 0 benign, 2 violation detected, 1 error.
#[derive(Parser)]
#[command(name = "michscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Binary,
    Csv,
}

impl From<FormatArg> for TraceFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Binary => TraceFormat::Binary,
            FormatArg::Csv => TraceFormat::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a pre-deployment set and runtime sets per condition.
    Simulate {
        /// JSON simulation config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "binary")]
        format: FormatArg,
    },
    /// Build a template bundle from benign traces.
    Predeploy {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the golden-template draw.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        layer: Option<String>,
        /// Inferred from the file extension when omitted.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[arg(long)]
        bandwidth_fraction: Option<f64>,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        dc_exclusion_hz: Option<f64>,
        /// RFC 3339 timestamp; defaults to SOURCE_DATE_EPOCH, then the epoch.
        #[arg(long)]
        created_at: Option<String>,
    },
    /// Check runtime traces against a bundle.
    Check {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value_t = DEFAULT_P_THRESHOLD)]
        pth: f64,
        #[arg(long, default_value_t = 5)]
        n_ra: usize,
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Run repeated trials and write a detection report.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MICHSCAN_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .with_context(|| format!("MICHSCAN_THREADS={v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            format,
        } => {
            let cfg: SimulateConfig = read_config(config.as_deref())?;
            let manifest = cmd_simulate(&cfg, &out, seed, format.into())?;
            print!("{}", to_json_line(&manifest)?);
            let total: usize = manifest.files.iter().map(|f| f.traces).sum();
            eprintln!(
                "wrote {} trace files ({total} traces) to {}",
                manifest.files.len(),
                out.display()
            );
            Ok(EXIT_BENIGN)
        }
        Command::Predeploy {
            traces,
            out,
            seed,
            layer,
            format,
            bandwidth_fraction,
            order,
            dc_exclusion_hz,
            created_at,
        } => {
            let opts = PredeployOptions {
                template_seed: seed,
                layer,
                bandwidth_fraction,
                filter_order: order,
                dc_exclusion_hz,
                created_at,
            };
            let fmt = resolve_format(&traces, format.map(Into::into));
            let bundle = cmd_predeploy(&traces, fmt, &opts, &out)?;
            let summary = serde_json::json!({
                "bundle": out.display().to_string(),
                "target_frequency_hz": bundle.target_frequency_hz,
                "layer": bundle.layer_label(),
                "template_length": bundle.golden_template.len(),
                "similarity_sample_size": bundle.similarity_sample.len(),
            });
            print!("{}", to_json_line(&summary)?);
            eprintln!(
                "bundle: carrier {:.1} Hz, {} reference similarities, layer {}",
                bundle.target_frequency_hz,
                bundle.similarity_sample.len(),
                bundle.layer_label().unwrap_or("(whole trace)")
            );
            Ok(EXIT_BENIGN)
        }
        Command::Check {
            bundle,
            traces,
            pth,
            n_ra,
            layer,
            format,
        } => {
            let cfg = RuntimeConfig {
                n_ra,
                p_threshold: pth,
                layer_label: layer,
            };
            let fmt = resolve_format(&traces, format.map(Into::into));
            let verdict = cmd_check(&bundle, &traces, fmt, &cfg)?;
            print!("{}", to_json_line(&verdict)?);
            for w in &verdict.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "{}: p = {:.3e} (threshold {:.1e})",
                if verdict.violation_detected {
                    "VIOLATION"
                } else {
                    "benign"
                },
                verdict.p_value,
                verdict.threshold
            );
            Ok(verdict_exit_code(&verdict))
        }
        Command::Sweep { config, out, seed } => {
            let report = cmd_sweep(config.as_deref(), &out, seed)?;
            print!("{}", to_json_line(&report)?);
            for r in &report.rows {
                eprintln!(
                    "{:<22} n_ra={:<3} {:>4}/{:<4} mean log10 p {:>7.2}{}",
                    r.condition,
                    r.n_ra,
                    r.detections,
                    r.trials,
                    r.mean_log10_p,
                    r.warning
                        .as_deref()
                        .map(|w| format!("  ({w})"))
                        .unwrap_or_default()
                );
            }
            Ok(EXIT_BENIGN)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors; everything else maps
            // to the error code so 2 always means a detected violation.
            return ExitCode::from(if e.use_stderr() {
                EXIT_ERROR
            } else {
                EXIT_BENIGN
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
