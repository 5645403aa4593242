//! Physical-layer frame pipeline: QPSK mapping, Zadoff-Chu preamble, frame
//! detection, carrier/phase/timing compensation, pilot-based channel and
//! noise estimation, and CRC-checked payload parsing.
//!
//! Frame layout, in symbols:
//!
//! ```text
//! [ ZC preamble | ZC preamble | pilot | length | payload | crc32 ]
//!    zc_length     zc_length    P/2      16     ceil(L/2)   16
//! ```
//!
//! The preamble is transmitted twice so the carrier frequency offset can be
//! read off the phase drift between the copies. The pilot field is a fixed
//! LFSR sequence known to every receiver, which is what lets a combining node
//! measure bit error rates without knowing the payload.

pub mod estimate;
pub mod frame;
pub mod qpsk;
pub mod sync;
pub mod zc;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("invalid frame config: {0}")]
    InvalidConfig(String),
    #[error("bit sequence length {0} is odd")]
    OddBitCount(usize),
    #[error("payload of {got} bits exceeds maximum {max}")]
    OversizePayload { got: usize, max: usize },
    #[error("no frame detected (best peak metric {best_metric:.3} below threshold {threshold:.3})")]
    NoFrameDetected { best_metric: f64, threshold: f64 },
    #[error("buffer too short: need {need} samples, have {have}")]
    BufferTooShort { need: usize, have: usize },
    #[error("timing offset {offset} beyond buffer of {len} samples")]
    OffsetBeyondBuffer { offset: usize, len: usize },
    #[error("declared payload length {declared} bits exceeds available {available}")]
    TruncatedFrame { declared: usize, available: usize },
    #[error("empty pilot field")]
    EmptyPilot,
}

/// Framing parameters. Defaults give a 127-symbol preamble and a 64-symbol
/// pilot field.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    /// Zadoff-Chu sequence length; must be odd.
    pub zc_length: usize,
    /// Zadoff-Chu root; must be coprime with `zc_length`.
    pub zc_root: usize,
    /// Pilot field size in bits; must be even (QPSK packs 2 bits/symbol).
    pub pilot_bits: usize,
    /// Maximum payload size in bits.
    pub payload_bits_max: usize,
    /// Samples per symbol; the simulation runs at symbol rate.
    pub samples_per_symbol: usize,
    /// Normalized correlation level above which a preamble is declared.
    pub detect_threshold: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            zc_length: 127,
            zc_root: 25,
            pilot_bits: 128,
            payload_bits_max: 4096,
            samples_per_symbol: 1,
            detect_threshold: 0.6,
        }
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = b;
        b = a % b;
        a = t;
    }
    a
}

impl FrameConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.zc_length == 0 || self.zc_length % 2 == 0 {
            return Err(PhyError::InvalidConfig(format!(
                "zc_length {} must be odd and positive",
                self.zc_length
            )));
        }
        if gcd(self.zc_root, self.zc_length) != 1 {
            return Err(PhyError::InvalidConfig(format!(
                "zc_root {} not coprime with zc_length {}",
                self.zc_root, self.zc_length
            )));
        }
        if self.pilot_bits == 0 || self.pilot_bits % 2 != 0 {
            return Err(PhyError::InvalidConfig(format!(
                "pilot_bits {} must be even and positive",
                self.pilot_bits
            )));
        }
        if self.samples_per_symbol != 1 {
            return Err(PhyError::InvalidConfig(
                "only symbol-rate operation (samples_per_symbol = 1) is supported".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.detect_threshold) {
            return Err(PhyError::InvalidConfig(format!(
                "detect_threshold {} outside [0, 1]",
                self.detect_threshold
            )));
        }
        Ok(())
    }

    /// Symbols in the pilot field.
    pub fn pilot_symbol_count(&self) -> usize {
        self.pilot_bits / 2
    }

    /// Symbols in the preamble (two ZC copies).
    pub fn preamble_symbol_count(&self) -> usize {
        2 * self.zc_length
    }

    /// Symbols in the data region (length field + payload + CRC) for a
    /// payload of `payload_bits`.
    pub fn data_symbol_count(&self, payload_bits: usize) -> usize {
        frame::LENGTH_FIELD_SYMBOLS + payload_bits.div_ceil(2) + frame::CRC_FIELD_SYMBOLS
    }

    /// Total frame length in symbols for a payload of `payload_bits`.
    pub fn frame_symbol_count(&self, payload_bits: usize) -> usize {
        self.preamble_symbol_count() + self.pilot_symbol_count() + self.data_symbol_count(payload_bits)
    }
}

/// Synchronization estimate produced by frame detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncEstimate {
    /// Sample index of the frame start within the searched buffer.
    pub timing_offset: usize,
    /// Carrier frequency offset in cycles per sample, |cfo| < 0.5.
    pub cfo_normalized: f64,
    /// Residual carrier phase at the frame start, radians.
    pub phase_rad: f64,
    /// Normalized correlation magnitude at the detected peak, in [0, 1].
    pub peak_metric: f64,
}

/// Pilot-derived channel estimate for one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelEstimate {
    /// Least-squares complex channel gain (transmit power factored out).
    pub h_hat: Complex64,
    /// Residual noise variance around the fitted pilots.
    pub noise_var_hat: f64,
    /// Fraction of pilot bits wrong after equalizing by `h_hat`.
    pub pilot_ber: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        FrameConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_even_zc_length() {
        let cfg = FrameConfig { zc_length: 128, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_non_coprime_root() {
        let cfg = FrameConfig { zc_length: 63, zc_root: 9, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_odd_pilot_bits() {
        let cfg = FrameConfig { pilot_bits: 7, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_payload_frame_size() {
        let cfg = FrameConfig::default();
        // 127 + 127 + 64 + 16 + 0 + 16
        assert_eq!(cfg.frame_symbol_count(0), 127 + 127 + 64 + 16 + 16);
    }

    #[test]
    fn payload_symbols_two_bits_each() {
        let cfg = FrameConfig::default();
        assert_eq!(cfg.data_symbol_count(256) - cfg.data_symbol_count(0), 128);
    }
}
