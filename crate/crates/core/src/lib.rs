//! Side-channel integrity checking for neural-network accelerators.
//!
//! Benign power traces of a fixed test input yield a band-pass filter around
//! the accelerator clock, a golden template, and a reference sample of
//! template correlations. At runtime a handful of fresh traces are filtered,
//! correlated with the template, and compared against the reference with a
//! two-sided Mann-Whitney U-test; a small p-value flags a modified model.
//!
//! [`powersim`] provides a deterministic trace simulator with attack
//! injection for evaluation.

pub mod error;
pub mod io;
pub mod pipeline;
pub mod powersim;
pub mod spectral;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use io::{load_traces, store_traces, TraceFormat};
pub use pipeline::{
    predeploy, runtime_check, severity_sweep, PredeployConfig, RuntimeConfig, SeverityRow,
    TemplateBundle, Verdict,
};
pub use spectral::{
    apply_zero_phase, design_bandpass, detect_target_frequency, mean_magnitude_spectrum,
    FilterParams, FilterSpec, Spectrum,
};
pub use stats::{
    mann_whitney, pearson, Alternative, SimilaritySample, SimilaritySource, UMethod, UTestResult,
};
pub use trace::{average_traces, extract_segment, quantize, Marker, Meta, Trace, TraceSet};
