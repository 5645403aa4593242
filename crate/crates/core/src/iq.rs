//! Complex baseband sample buffers.
//!
//! `IQBuffer` is the universal signal currency: every stage of the pipeline
//! consumes and produces one. Samples are complex `f64` at a stated sample
//! rate; no pulse shaping is modeled, so one sample is one symbol period.

use thiserror::Error;

pub use num_complex::Complex64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IqError {
    #[error("sample rate must be positive and finite, got {0}")]
    BadSampleRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFiniteSample(usize),
}

/// A sequence of complex baseband samples with sample-rate metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct IQBuffer {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl IQBuffer {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self, IqError> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(IqError::BadSampleRate(sample_rate_hz));
        }
        if let Some(idx) = samples.iter().position(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(IqError::NonFiniteSample(idx));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    /// Convenience constructor for buffers whose samples are known finite.
    pub fn from_samples(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        Self { samples, sample_rate_hz }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Mean per-sample power |x|^2.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Round every sample through `f32` precision. Capture hardware stores
    /// 32-bit floats, and the trace file format does too; quantizing at the
    /// point of capture makes simulated processing and trace replay see
    /// bit-identical data.
    pub fn quantize_f32(&mut self) {
        for s in &mut self.samples {
            s.re = s.re as f32 as f64;
            s.im = s.im as f32 as f64;
        }
    }
}

/// dBm-style level to linear power, with 0 dB defined as linear 1.0.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Linear power to dB relative to 1.0.
pub fn linear_to_db(p: f64) -> f64 {
    10.0 * p.log10()
}
