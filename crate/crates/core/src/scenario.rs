//! Declarative experiment descriptions.
//!
//! A scenario file is line-oriented `key = value` text with `[segment]`
//! section headers. Top-level keys set receiver count, noise floor, payload
//! source, frame parameters, and seeding; each `[segment]` block describes one
//! piece of the piecewise-constant power schedule. Example:
//!
//! ```text
//! n_receivers = 3
//! noise_power_dbm = -20
//! theta = 0.1
//! mode = oracle
//! master_seed = 1
//! payload = bitstream len=2048
//! jammer = tone freq=0.07
//!
//! [segment]
//! duration_cycles = 200
//! tx_power_dbm = 10.5
//! jammer_power_dbm = -20
//! channel_gains = 1, 1, 6
//! jammer_gains = 4, 1, 0.1
//! ```
//!
//! Complex gains are written `re`, `re+imj`, or `re-imj`. Parse and
//! validation errors carry the offending line number.

use num_complex::Complex64;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::phy::FrameConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read scenario: {0}")]
    Io(String),
}

fn perr(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse { line, msg: msg.into() }
}

/// How weights learn about interference: `Oracle` uses scenario ground truth,
/// `Covariance` estimates interference statistics from signal-free guard
/// samples, which is what a deployed node can actually do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombinerModeKind {
    Oracle,
    Covariance,
}

impl fmt::Display for CombinerModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Oracle => write!(f, "oracle"),
            Self::Covariance => write!(f, "covariance"),
        }
    }
}

/// Per-frame fading model for a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FadingModel {
    /// Fixed complex gain for the whole segment (indoor line-of-sight).
    Static,
    /// Unit-variance complex Gaussian gain redrawn each frame.
    RayleighBlock { seed: u64 },
}

/// What the transmitter sends.
#[derive(Debug, Clone, PartialEq)]
pub enum PayloadSource {
    /// Seeded random bits, `bits_per_cycle` per frame.
    Bitstream { seed: u64, bits_per_cycle: usize },
    /// A grayscale image sent as fixed-size chunks, cycling through the image.
    Image { path: PathBuf, chunk_bits: usize },
}

/// One piecewise-constant stretch of the power schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub duration_cycles: u64,
    pub tx_power_dbm: f64,
    pub jammer_power_dbm: f64,
    pub channel_gains: Vec<Complex64>,
    pub jammer_gains: Vec<Complex64>,
    pub fading: FadingModel,
}

/// Jammer waveform selection for the whole scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JammerWaveform {
    Tone { normalized_frequency: f64 },
    Gaussian { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_receivers: usize,
    pub noise_power_dbm: f64,
    pub theta: f64,
    pub mode: CombinerModeKind,
    pub master_seed: u64,
    pub sample_rate_hz: f64,
    pub payload: PayloadSource,
    pub jammer: JammerWaveform,
    pub frame: FrameConfig,
    /// Injected frame-start delay range in samples; the pre-frame gap doubles
    /// as the signal-free guard window for covariance estimation.
    pub min_delay: usize,
    pub max_delay: usize,
    /// Maximum injected carrier frequency offset, cycles/sample.
    pub cfo_max: f64,
    pub segments: Vec<Segment>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_receivers: 1,
            noise_power_dbm: -20.0,
            theta: 0.1,
            mode: CombinerModeKind::Oracle,
            master_seed: 1,
            sample_rate_hz: 1e6,
            payload: PayloadSource::Bitstream { seed: 1, bits_per_cycle: 2048 },
            jammer: JammerWaveform::Tone { normalized_frequency: 0.07 },
            frame: FrameConfig::default(),
            min_delay: 64,
            max_delay: 192,
            cfo_max: 1e-3,
            segments: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn total_cycles(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_cycles).sum()
    }

    /// Segment index containing the given cycle.
    pub fn segment_of_cycle(&self, cycle: u64) -> Option<usize> {
        let mut acc = 0;
        for (i, s) in self.segments.iter().enumerate() {
            acc += s.duration_cycles;
            if cycle < acc {
                return Some(i);
            }
        }
        None
    }

    /// Payload bits carried by one frame.
    pub fn payload_bits_per_cycle(&self) -> usize {
        match &self.payload {
            PayloadSource::Bitstream { bits_per_cycle, .. } => *bits_per_cycle,
            PayloadSource::Image { chunk_bits, .. } => *chunk_bits,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_receivers == 0 {
            return Err(ScenarioError::Invalid("n_receivers must be at least 1".into()));
        }
        if self.segments.is_empty() {
            return Err(ScenarioError::Invalid("scenario needs at least one [segment]".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(ScenarioError::Invalid(format!("theta {} outside (0, 1)", self.theta)));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(ScenarioError::Invalid("sample_rate_hz must be positive".into()));
        }
        if self.min_delay > self.max_delay {
            return Err(ScenarioError::Invalid(format!(
                "min_delay {} exceeds max_delay {}",
                self.min_delay, self.max_delay
            )));
        }
        self.frame
            .validate()
            .map_err(|e| ScenarioError::Invalid(format!("frame config: {e}")))?;
        let bits = self.payload_bits_per_cycle();
        if bits == 0 {
            return Err(ScenarioError::Invalid("payload bits per cycle must be positive".into()));
        }
        if bits > self.frame.payload_bits_max {
            return Err(ScenarioError::Invalid(format!(
                "payload bits per cycle {bits} exceed frame payload_bits_max {}",
                self.frame.payload_bits_max
            )));
        }
        if let JammerWaveform::Tone { normalized_frequency } = self.jammer {
            if !(-0.5..0.5).contains(&normalized_frequency) {
                return Err(ScenarioError::Invalid(format!(
                    "jammer tone frequency {normalized_frequency} outside [-0.5, 0.5)"
                )));
            }
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.duration_cycles == 0 {
                return Err(ScenarioError::Invalid(format!(
                    "segment {i}: duration_cycles must be positive"
                )));
            }
            if seg.channel_gains.len() != self.n_receivers {
                return Err(ScenarioError::Invalid(format!(
                    "segment {i}: channel_gains has {} entries, expected n_receivers = {}",
                    seg.channel_gains.len(),
                    self.n_receivers
                )));
            }
            if seg.jammer_gains.len() != self.n_receivers {
                return Err(ScenarioError::Invalid(format!(
                    "segment {i}: jammer_gains has {} entries, expected n_receivers = {}",
                    seg.jammer_gains.len(),
                    self.n_receivers
                )));
            }
        }
        Ok(())
    }
}

/// Parse a complex literal: `1`, `-0.5`, `1+2j`, `0.3-0.7j`, `2j`.
pub fn parse_complex(text: &str) -> Result<Complex64, String> {
    let t = text.trim();
    if t.is_empty() {
        return Err("empty complex literal".into());
    }
    if let Some(body) = t.strip_suffix(['j', 'i']) {
        // Find the +/- that splits real and imaginary parts, skipping a
        // leading sign and exponent signs.
        let chars: Vec<char> = body.chars().collect();
        let mut split = None;
        for i in (1..chars.len()).rev() {
            if (chars[i] == '+' || chars[i] == '-')
                && chars[i - 1] != 'e'
                && chars[i - 1] != 'E'
            {
                split = Some(i);
                break;
            }
        }
        match split {
            Some(i) => {
                let re: f64 =
                    body[..i].trim().parse().map_err(|_| format!("bad real part in '{t}'"))?;
                let im_str = body[i..].trim();
                let im: f64 = if im_str == "+" {
                    1.0
                } else if im_str == "-" {
                    -1.0
                } else {
                    im_str.parse().map_err(|_| format!("bad imaginary part in '{t}'"))?
                };
                Ok(Complex64::new(re, im))
            }
            None => {
                let im: f64 = if body.is_empty() {
                    1.0
                } else if body == "-" {
                    -1.0
                } else {
                    body.parse().map_err(|_| format!("bad imaginary literal '{t}'"))?
                };
                Ok(Complex64::new(0.0, im))
            }
        }
    } else {
        let re: f64 = t.parse().map_err(|_| format!("bad real literal '{t}'"))?;
        Ok(Complex64::new(re, 0.0))
    }
}

fn parse_gain_list(value: &str, line: usize) -> Result<Vec<Complex64>, ScenarioError> {
    value
        .split(',')
        .map(|part| parse_complex(part).map_err(|e| perr(line, e)))
        .collect()
}

/// Parse `key=value ...` option tails like `bitstream seed=7 len=2048`.
fn parse_kv_tail(tail: &[&str], line: usize) -> Result<Vec<(String, String)>, ScenarioError> {
    tail.iter()
        .map(|part| {
            part.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| perr(line, format!("expected key=value, got '{part}'")))
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T, ScenarioError> {
    value
        .trim()
        .parse()
        .map_err(|_| perr(line, format!("invalid value '{value}' for {key}")))
}

/// Load and validate a scenario file. Relative image paths resolve against
/// the scenario file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = parse_scenario(&text, base)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parse scenario text; `base` anchors relative payload paths.
pub fn parse_scenario(text: &str, base: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let mut cfg = ScenarioConfig::default();
    let mut current: Option<Segment> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }

        if line == "[segment]" {
            if let Some(seg) = current.take() {
                cfg.segments.push(seg);
            }
            current = Some(Segment {
                duration_cycles: 0,
                tx_power_dbm: 0.0,
                jammer_power_dbm: f64::NEG_INFINITY,
                channel_gains: Vec::new(),
                jammer_gains: Vec::new(),
                fading: FadingModel::Static,
            });
            continue;
        }
        if line.starts_with('[') {
            return Err(perr(line_no, format!("unknown section '{line}'")));
        }

        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| perr(line_no, format!("expected key = value, got '{line}'")))?;

        if let Some(seg) = current.as_mut() {
            match key {
                "duration_cycles" => seg.duration_cycles = parse_num(value, line_no, key)?,
                "tx_power_dbm" => seg.tx_power_dbm = parse_num(value, line_no, key)?,
                "jammer_power_dbm" => seg.jammer_power_dbm = parse_num(value, line_no, key)?,
                "channel_gains" => seg.channel_gains = parse_gain_list(value, line_no)?,
                "jammer_gains" => seg.jammer_gains = parse_gain_list(value, line_no)?,
                "fading" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    match parts.first().copied() {
                        Some("static") => seg.fading = FadingModel::Static,
                        Some("rayleigh_block") => {
                            let mut seed = 0u64;
                            for (k, v) in parse_kv_tail(&parts[1..], line_no)? {
                                match k.as_str() {
                                    "seed" => seed = parse_num(&v, line_no, "fading seed")?,
                                    other => {
                                        return Err(perr(
                                            line_no,
                                            format!("unknown fading option '{other}'"),
                                        ))
                                    }
                                }
                            }
                            seg.fading = FadingModel::RayleighBlock { seed };
                        }
                        _ => {
                            return Err(perr(
                                line_no,
                                format!("fading must be 'static' or 'rayleigh_block', got '{value}'"),
                            ))
                        }
                    }
                }
                other => return Err(perr(line_no, format!("unknown segment key '{other}'"))),
            }
            continue;
        }

        match key {
            "n_receivers" => cfg.n_receivers = parse_num(value, line_no, key)?,
            "noise_power_dbm" => cfg.noise_power_dbm = parse_num(value, line_no, key)?,
            "theta" => cfg.theta = parse_num(value, line_no, key)?,
            "master_seed" => cfg.master_seed = parse_num(value, line_no, key)?,
            "sample_rate_hz" => cfg.sample_rate_hz = parse_num(value, line_no, key)?,
            "min_delay" => cfg.min_delay = parse_num(value, line_no, key)?,
            "max_delay" => cfg.max_delay = parse_num(value, line_no, key)?,
            "cfo_max" => cfg.cfo_max = parse_num(value, line_no, key)?,
            "mode" => {
                cfg.mode = match value {
                    "oracle" => CombinerModeKind::Oracle,
                    "covariance" => CombinerModeKind::Covariance,
                    other => {
                        return Err(perr(
                            line_no,
                            format!("mode must be 'oracle' or 'covariance', got '{other}'"),
                        ))
                    }
                }
            }
            "payload" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                match parts.first().copied() {
                    Some("bitstream") => {
                        let mut seed = 1u64;
                        let mut len = 2048usize;
                        for (k, v) in parse_kv_tail(&parts[1..], line_no)? {
                            match k.as_str() {
                                "seed" => seed = parse_num(&v, line_no, "payload seed")?,
                                "len" => len = parse_num(&v, line_no, "payload len")?,
                                other => {
                                    return Err(perr(
                                        line_no,
                                        format!("unknown bitstream option '{other}'"),
                                    ))
                                }
                            }
                        }
                        cfg.payload = PayloadSource::Bitstream { seed, bits_per_cycle: len };
                    }
                    Some("image") => {
                        let mut path = PathBuf::new();
                        let mut chunk_bits = 2048usize;
                        for (k, v) in parse_kv_tail(&parts[1..], line_no)? {
                            match k.as_str() {
                                "path" => path = PathBuf::from(v),
                                "chunk_bits" => {
                                    chunk_bits = parse_num(&v, line_no, "payload chunk_bits")?
                                }
                                other => {
                                    return Err(perr(
                                        line_no,
                                        format!("unknown image option '{other}'"),
                                    ))
                                }
                            }
                        }
                        if path.as_os_str().is_empty() {
                            return Err(perr(line_no, "image payload needs path=<file>"));
                        }
                        let resolved =
                            if path.is_relative() { base.join(&path) } else { path };
                        cfg.payload = PayloadSource::Image { path: resolved, chunk_bits };
                    }
                    _ => {
                        return Err(perr(
                            line_no,
                            format!("payload must be 'bitstream' or 'image', got '{value}'"),
                        ))
                    }
                }
            }
            "jammer" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                match parts.first().copied() {
                    Some("tone") => {
                        let mut freq = 0.07f64;
                        for (k, v) in parse_kv_tail(&parts[1..], line_no)? {
                            match k.as_str() {
                                "freq" => freq = parse_num(&v, line_no, "jammer freq")?,
                                other => {
                                    return Err(perr(
                                        line_no,
                                        format!("unknown tone option '{other}'"),
                                    ))
                                }
                            }
                        }
                        cfg.jammer = JammerWaveform::Tone { normalized_frequency: freq };
                    }
                    Some("gaussian") => {
                        let mut seed = 0u64;
                        for (k, v) in parse_kv_tail(&parts[1..], line_no)? {
                            match k.as_str() {
                                "seed" => seed = parse_num(&v, line_no, "jammer seed")?,
                                other => {
                                    return Err(perr(
                                        line_no,
                                        format!("unknown gaussian option '{other}'"),
                                    ))
                                }
                            }
                        }
                        cfg.jammer = JammerWaveform::Gaussian { seed };
                    }
                    _ => {
                        return Err(perr(
                            line_no,
                            format!("jammer must be 'tone' or 'gaussian', got '{value}'"),
                        ))
                    }
                }
            }
            "frame.zc_length" => cfg.frame.zc_length = parse_num(value, line_no, key)?,
            "frame.zc_root" => cfg.frame.zc_root = parse_num(value, line_no, key)?,
            "frame.pilot_bits" => cfg.frame.pilot_bits = parse_num(value, line_no, key)?,
            "frame.payload_bits_max" => {
                cfg.frame.payload_bits_max = parse_num(value, line_no, key)?
            }
            "frame.detect_threshold" => {
                cfg.frame.detect_threshold = parse_num(value, line_no, key)?
            }
            other => return Err(perr(line_no, format!("unknown key '{other}'"))),
        }
    }
    if let Some(seg) = current.take() {
        cfg.segments.push(seg);
    }
    Ok(cfg)
}
