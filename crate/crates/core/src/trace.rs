//! IQ trace files for offline processing.
//!
//! A trace is raw interleaved 32-bit little-endian IEEE-754 float pairs
//! (I, Q), nothing else. A sidecar file at `<trace>.meta` holds `key=value`
//! lines: `sample_rate_hz`, `center_freq_hz`, `receiver_id`, `gain_db`.

use num_complex::Complex64;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::iq::IQBuffer;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
    #[error("trace {path} has a trailing partial sample ({len} bytes not a multiple of 8)")]
    PartialSample { path: PathBuf, len: u64 },
    #[error("sidecar {path}: {msg}")]
    BadSidecar { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceError + '_ {
    move |err| TraceError::Io { path: path.to_path_buf(), err }
}

/// Sidecar metadata accompanying a trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub receiver_id: u32,
    pub gain_db: f64,
}

impl Default for TraceMeta {
    fn default() -> Self {
        Self { sample_rate_hz: 1e6, center_freq_hz: 0.0, receiver_id: 0, gain_db: 0.0 }
    }
}

/// Path of the sidecar for a given trace path.
pub fn sidecar_path(trace: &Path) -> PathBuf {
    let mut os = trace.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

/// Write samples as f32 LE pairs plus the sidecar.
pub fn write_trace(path: &Path, buf: &IQBuffer, meta: &TraceMeta) -> Result<(), TraceError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for s in &buf.samples {
        w.write_all(&(s.re as f32).to_le_bytes()).map_err(io_err(path))?;
        w.write_all(&(s.im as f32).to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;

    let side = sidecar_path(path);
    let text = format!(
        "sample_rate_hz={}\ncenter_freq_hz={}\nreceiver_id={}\ngain_db={}\n",
        meta.sample_rate_hz, meta.center_freq_hz, meta.receiver_id, meta.gain_db
    );
    std::fs::write(&side, text).map_err(io_err(&side))?;
    Ok(())
}

/// Read a trace file and its sidecar. A missing sidecar yields defaults.
pub fn read_trace(path: &Path) -> Result<(IQBuffer, TraceMeta), TraceError> {
    let f = std::fs::File::open(path).map_err(io_err(path))?;
    let len = f.metadata().map_err(io_err(path))?.len();
    if len % 8 != 0 {
        return Err(TraceError::PartialSample { path: path.to_path_buf(), len });
    }
    let mut r = BufReader::new(f);
    let mut samples = Vec::with_capacity((len / 8) as usize);
    let mut chunk = [0u8; 8];
    loop {
        match r.read_exact(&mut chunk) {
            Ok(()) => {
                let re = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                let im = f32::from_le_bytes([chunk[4], chunk[5], chunk[6], chunk[7]]);
                samples.push(Complex64::new(re as f64, im as f64));
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(path)(e)),
        }
    }

    let meta = read_sidecar(&sidecar_path(path)).unwrap_or_default();
    Ok((IQBuffer::from_samples(samples, meta.sample_rate_hz), meta))
}

/// Parse a sidecar file. Unknown keys are ignored.
pub fn read_sidecar(path: &Path) -> Result<TraceMeta, TraceError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut meta = TraceMeta::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| TraceError::BadSidecar {
            path: path.to_path_buf(),
            msg: format!("expected key=value, got '{line}'"),
        })?;
        let parse = |v: &str| -> Result<f64, TraceError> {
            v.trim().parse().map_err(|_| TraceError::BadSidecar {
                path: path.to_path_buf(),
                msg: format!("bad number '{v}' for {key}"),
            })
        };
        match key.trim() {
            "sample_rate_hz" => meta.sample_rate_hz = parse(value)?,
            "center_freq_hz" => meta.center_freq_hz = parse(value)?,
            "receiver_id" => meta.receiver_id = parse(value)? as u32,
            "gain_db" => meta.gain_db = parse(value)?,
            _ => {}
        }
    }
    Ok(meta)
}
