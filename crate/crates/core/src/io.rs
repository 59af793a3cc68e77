//! Trace set files.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "MCH1" | version u16 | trace count u32 | samples per trace u32
//!        | sample rate f64 | metadata length u32 | metadata JSON (UTF-8)
//!        | trace_count * sample_count f32 samples, trace-major
//! ```
//!
//! The CSV variant stores one trace per row and keeps the sample rate,
//! markers and metadata in a sidecar `<name>.meta.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Marker, Meta, Trace, TraceSet};

pub const MAGIC: &[u8; 4] = b"MCH1";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Binary,
    Csv,
}

impl FromStr for TraceFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "bin" => Ok(TraceFormat::Binary),
            "csv" => Ok(TraceFormat::Csv),
            other => Err(Error::Format(format!("unknown trace format {other:?}"))),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TraceInfo {
    #[serde(default)]
    markers: Vec<Marker>,
    #[serde(default)]
    meta: Meta,
}

#[derive(Debug, Serialize, Deserialize)]
struct BinaryMeta {
    traces: Vec<TraceInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvSidecar {
    sample_rate_hz: f64,
    traces: Vec<TraceInfo>,
}

fn infos(set: &TraceSet) -> Vec<TraceInfo> {
    set.iter()
        .map(|t| TraceInfo {
            markers: t.markers().to_vec(),
            meta: t.meta().clone(),
        })
        .collect()
}

fn build_set(rows: Vec<Vec<f64>>, rate: f64, infos: Vec<TraceInfo>) -> Result<TraceSet> {
    if infos.len() != rows.len() {
        return Err(Error::Format(format!(
            "metadata describes {} traces, data holds {}",
            infos.len(),
            rows.len()
        )));
    }
    let traces = rows
        .into_iter()
        .zip(infos)
        .map(|(samples, info)| {
            Trace::new(samples, rate)?
                .with_meta(info.meta)
                .with_markers(info.markers)
        })
        .collect::<Result<Vec<_>>>()?;
    TraceSet::new(traces)
}

/// Serializes a set into the binary layout. Samples are narrowed to f32.
pub fn encode_binary(set: &TraceSet) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&BinaryMeta { traces: infos(set) })?;
    let count = u32::try_from(set.len()).map_err(|_| Error::Format("too many traces".into()))?;
    let len =
        u32::try_from(set.common_length()).map_err(|_| Error::Format("trace too long".into()))?;
    let meta_len =
        u32::try_from(meta.len()).map_err(|_| Error::Format("metadata too large".into()))?;

    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 4 * set.len() * set.common_length());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&set.sample_rate_hz().to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&meta);
    for t in set {
        for &s in t.samples() {
            out.extend_from_slice(&(s as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Format(format!(
                    "truncated file: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.buf.len() - self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<TraceSet> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.array::<4>().map_err(|_| bad_magic(bytes))?;
    if &magic != MAGIC {
        return Err(bad_magic(&magic));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let count = u32::from_le_bytes(r.array()?) as usize;
    let len = u32::from_le_bytes(r.array()?) as usize;
    let rate = f64::from_le_bytes(r.array()?);
    let meta_len = u32::from_le_bytes(r.array()?) as usize;
    if count == 0 || len == 0 {
        return Err(Error::Format(format!(
            "header declares {count} traces of {len} samples"
        )));
    }
    let meta: BinaryMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Format(format!("metadata blob: {e}")))?;

    let body_len = count
        .checked_mul(len)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("sample count overflow".into()))?;
    let body = r.take(body_len)?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after sample data",
            bytes.len() - r.pos
        )));
    }
    let rows = body
        .chunks_exact(4 * len)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                .collect()
        })
        .collect();
    build_set(rows, rate, meta.traces)
}

fn bad_magic(found: &[u8]) -> Error {
    Error::Format(format!(
        "bad magic {:?}, expected \"MCH1\"",
        String::from_utf8_lossy(&found[..found.len().min(4)])
    ))
}

/// `traces.csv` -> `traces.meta.json`.
pub fn csv_sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn store_traces(set: &TraceSet, path: &Path, format: TraceFormat) -> Result<()> {
    match format {
        TraceFormat::Binary => {
            let bytes = encode_binary(set)?;
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        TraceFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_path(path)
                .map_err(|e| csv_err(path, e))?;
            for t in set {
                w.write_record(t.samples().iter().map(|s| s.to_string()))
                    .map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
            let sidecar = CsvSidecar {
                sample_rate_hz: set.sample_rate_hz(),
                traces: infos(set),
            };
            let meta_path = csv_sidecar_path(path);
            let json = serde_json::to_vec_pretty(&sidecar)?;
            fs::write(&meta_path, json).map_err(|e| Error::io(meta_path, e))
        }
    }
}

pub fn load_traces(path: &Path, format: TraceFormat) -> Result<TraceSet> {
    match format {
        TraceFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes)
        }
        TraceFormat::Csv => {
            let meta_path = csv_sidecar_path(path);
            let sidecar: CsvSidecar = serde_json::from_slice(
                &fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
            )
            .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;

            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_path(path)
                .map_err(|e| csv_err(path, e))?;
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for record in rdr.records() {
                let record = record.map_err(|e| csv_err(path, e))?;
                let row = record
                    .iter()
                    .map(|field| {
                        field
                            .parse::<f64>()
                            .map_err(|_| Error::Format(format!("non-numeric sample {field:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(Error::InconsistentLength {
                            expected: first.len(),
                            found: row.len(),
                        });
                    }
                }
                rows.push(row);
            }
            if rows.is_empty() {
                return Err(Error::EmptySet);
            }
            build_set(rows, sidecar.sample_rate_hz, sidecar.traces)
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> TraceSet {
        let a: Vec<f64> = (0..64).map(|i| (i as f32 * 0.37).sin() as f64).collect();
        let b: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        let mut meta = Meta::new();
        meta.insert("device_id".into(), "dev-7".into());
        meta.insert("seed".into(), "42".into());
        let t0 = Trace::new(a, 2.0e6)
            .unwrap()
            .with_meta(meta)
            .with_markers(vec![Marker::new("l1", 0, 30), Marker::new("fc", 30, 64)])
            .unwrap();
        let t1 = Trace::new(b, 2.0e6).unwrap();
        TraceSet::new(vec![t0, t1]).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.mch");
        let set = sample_set();
        store_traces(&set, &path, TraceFormat::Binary).unwrap();
        let back = load_traces(&path, TraceFormat::Binary).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.csv");
        let set = sample_set();
        store_traces(&set, &path, TraceFormat::Csv).unwrap();
        assert!(dir.path().join("set.meta.json").exists());
        let back = load_traces(&path, TraceFormat::Csv).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn csv_ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,2,3\n4,5\n").unwrap();
        fs::write(
            dir.path().join("bad.meta.json"),
            r#"{"sample_rate_hz": 1000.0, "traces": [{}, {}]}"#,
        )
        .unwrap();
        let err = load_traces(&path, TraceFormat::Csv).unwrap_err();
        assert!(matches!(
            err,
            Error::InconsistentLength {
                expected: 3,
                found: 2
            }
        ));
    }

    #[test]
    fn wrong_magic_names_expected() {
        let mut bytes = encode_binary(&sample_set()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        let err = decode_binary(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
        assert!(err.to_string().contains("MCH1"), "{err}");
    }

    #[test]
    fn truncated_and_trailing_rejected() {
        let bytes = encode_binary(&sample_set()).unwrap();
        assert!(decode_binary(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode_binary(&longer).is_err());
        assert!(decode_binary(&bytes[..2]).is_err());
    }

    #[test]
    fn non_finite_sample_rejected() {
        let mut bytes = encode_binary(&sample_set()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_binary(&bytes),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn header_layout() {
        let bytes = encode_binary(&sample_set()).unwrap();
        assert_eq!(&bytes[..4], b"MCH1");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 64);
        assert_eq!(f64::from_le_bytes(bytes[14..22].try_into().unwrap()), 2.0e6);
        let meta_len = u32::from_le_bytes(bytes[22..26].try_into().unwrap()) as usize;
        assert_eq!(bytes.len(), HEADER_LEN + meta_len + 2 * 64 * 4);
    }

    proptest! {
        #[test]
        fn binary_identity_on_f32_samples(
            rows in prop::collection::vec(prop::collection::vec(-1.0e6f32..1.0e6, 16), 1..5),
            rate in 1.0f64..1.0e9,
        ) {
            let traces = rows
                .iter()
                .map(|r| Trace::new(r.iter().map(|&v| v as f64).collect(), rate).unwrap())
                .collect();
            let set = TraceSet::new(traces).unwrap();
            let bytes = encode_binary(&set).unwrap();
            let back = decode_binary(&bytes).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(encode_binary(&back).unwrap(), bytes);
        }
    }
}
