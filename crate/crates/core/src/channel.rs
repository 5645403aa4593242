//! Flat-fading SIMO channel with a jammer.
//!
//! Each receiver observes `r[k] = sqrt(p_g)*h_i*x[k] + sqrt(p_j)*h_ji*x_j[k] + n[k]`
//! where `x` is the transmitted frame, `x_j` the jammer waveform, `h_i` /
//! `h_ji` per-receiver complex gains, and `n` circular complex Gaussian noise
//! of variance `sigma2`. Gains are scalar (flat fading); jammer proximity to a
//! receiver is expressed purely through `|h_ji|`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::iq::{db_to_linear, IQBuffer};
use crate::scenario::ScenarioConfig;
use crate::seeds;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("signal and jammer buffers differ in shape: {signal} vs {jammer} samples")]
    ShapeMismatch { signal: usize, jammer: usize },
    #[error("invalid channel state: {0}")]
    InvalidChannel(String),
    #[error("invalid jammer config: {0}")]
    InvalidJammer(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
}

/// One receiver's channel during one segment: desired gain, jammer gain,
/// powers, and noise power. `sigma2 == 0` is the noise-disabled limit used by
/// deterministic tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub h_i: Complex64,
    pub h_j_i: Complex64,
    pub p_g: f64,
    pub p_j: f64,
    pub sigma2: f64,
}

impl ChannelState {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let finite = |c: Complex64| c.re.is_finite() && c.im.is_finite();
        if !finite(self.h_i) || !finite(self.h_j_i) {
            return Err(ChannelError::InvalidChannel("non-finite gain".into()));
        }
        if !(self.p_g >= 0.0) || !self.p_g.is_finite() {
            return Err(ChannelError::InvalidChannel(format!("p_g = {}", self.p_g)));
        }
        if !(self.p_j >= 0.0) || !self.p_j.is_finite() {
            return Err(ChannelError::InvalidChannel(format!("p_j = {}", self.p_j)));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(ChannelError::InvalidChannel(format!("sigma2 = {}", self.sigma2)));
        }
        Ok(())
    }
}

/// Jammer waveform kind. The interferer in the modeled setup is an external
/// generator; a tone matches that hardware, gaussian covers broadband
/// interference studies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JammerKind {
    Tone { normalized_frequency: f64 },
    Gaussian { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JammerConfig {
    pub kind: JammerKind,
    /// Per-receiver jammer gains h_ji; length must equal the receiver count.
    pub per_receiver_gain: Vec<Complex64>,
}

impl JammerConfig {
    pub fn validate(&self, n_receivers: usize) -> Result<(), ChannelError> {
        if self.per_receiver_gain.len() != n_receivers {
            return Err(ChannelError::InvalidJammer(format!(
                "per_receiver_gain has {} entries for {} receivers",
                self.per_receiver_gain.len(),
                n_receivers
            )));
        }
        if let JammerKind::Tone { normalized_frequency: f } = self.kind {
            if !(-0.5..0.5).contains(&f) {
                return Err(ChannelError::InvalidJammer(format!(
                    "normalized frequency {f} outside [-0.5, 0.5)"
                )));
            }
        }
        Ok(())
    }
}

/// Pass `x` and the jammer waveform `x_j` through one receiver's channel,
/// adding seeded circular complex Gaussian noise of variance `sigma2`.
pub fn apply_channel(
    x: &IQBuffer,
    x_j: &IQBuffer,
    ch: &ChannelState,
    seed: u64,
) -> Result<IQBuffer, ChannelError> {
    if x.len() != x_j.len() {
        return Err(ChannelError::ShapeMismatch { signal: x.len(), jammer: x_j.len() });
    }
    ch.validate()?;

    let g_sig = ch.h_i * ch.p_g.sqrt();
    let g_jam = ch.h_j_i * ch.p_j.sqrt();

    let mut out: Vec<Complex64> = x.samples.iter().map(|&s| g_sig * s).collect();
    if ch.p_j > 0.0 {
        for (o, &j) in out.iter_mut().zip(x_j.samples.iter()) {
            *o += g_jam * j;
        }
    }
    if ch.sigma2 > 0.0 {
        let mut rng = seeds::rng_from(seed);
        let dist = Normal::new(0.0, (ch.sigma2 / 2.0).sqrt()).expect("valid std dev");
        for o in out.iter_mut() {
            let re = dist.sample(&mut rng);
            let im = dist.sample(&mut rng);
            *o += Complex64::new(re, im);
        }
    }
    Ok(IQBuffer::from_samples(out, x.sample_rate_hz))
}

/// Generate `length` samples of the jammer waveform at unit mean power.
pub fn make_jammer_waveform(
    cfg: &JammerConfig,
    length: usize,
    sample_rate_hz: f64,
) -> Result<IQBuffer, ChannelError> {
    if length == 0 {
        return Err(ChannelError::InvalidJammer("length must be positive".into()));
    }
    cfg.validate(cfg.per_receiver_gain.len())?;
    let samples = match cfg.kind {
        JammerKind::Tone { normalized_frequency: f } => (0..length)
            .map(|n| Complex64::from_polar(1.0, TAU * f * n as f64))
            .collect(),
        JammerKind::Gaussian { seed } => {
            let mut rng = seeds::rng_from(seed);
            let dist = Normal::new(0.0, (0.5f64).sqrt()).expect("valid std dev");
            (0..length)
                .map(|_| Complex64::new(dist.sample(&mut rng), dist.sample(&mut rng)))
                .collect()
        }
    };
    Ok(IQBuffer::from_samples(samples, sample_rate_hz))
}

/// Channel state for one receiver during one power-schedule segment. dBm
/// values in the scenario are relative levels: 0 dBm maps to linear power 1.
pub fn schedule_channel(
    scenario: &ScenarioConfig,
    segment_index: usize,
    receiver_index: usize,
) -> Result<ChannelState, ChannelError> {
    let segment = scenario.segments.get(segment_index).ok_or_else(|| {
        ChannelError::IndexOutOfRange(format!(
            "segment {segment_index} of {}",
            scenario.segments.len()
        ))
    })?;
    if receiver_index >= scenario.n_receivers {
        return Err(ChannelError::IndexOutOfRange(format!(
            "receiver {receiver_index} of {}",
            scenario.n_receivers
        )));
    }
    Ok(ChannelState {
        h_i: segment.channel_gains[receiver_index],
        h_j_i: segment.jammer_gains[receiver_index],
        p_g: db_to_linear(segment.tx_power_dbm),
        p_j: db_to_linear(segment.jammer_power_dbm),
        sigma2: db_to_linear(scenario.noise_power_dbm),
    })
}

/// Unit-mean-power Rayleigh block-fading gain: one circular complex Gaussian
/// draw per frame.
pub fn rayleigh_block_gain(rng: &mut impl Rng) -> Complex64 {
    let dist = Normal::new(0.0, (0.5f64).sqrt()).expect("valid std dev");
    Complex64::new(dist.sample(rng), dist.sample(rng))
}
