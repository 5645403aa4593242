//! Deterministic end-to-end cycle engine.
//!
//! One cycle: build the frame for the cycle's payload, inject a common
//! frame-start delay and carrier offset plus a per-receiver phase, pass it
//! through each receiver's channel with seeded noise, run every receiver's
//! synchronization/estimation pipeline, then hand the collected shares to the
//! self-healing combiner at the rotating leader. All randomness fans out from
//! the scenario's master seed, so a run is reproducible sample for sample;
//! per-receiver work is embarrassingly parallel and runs on the thread pool
//! when the `parallel` feature is on.
//!
//! Captured buffers are quantized to `f32` at the antenna, exactly what the
//! trace file format stores, so dumping traces and replaying them reproduces
//! the in-process run bit for bit.

use num_complex::{Complex32, Complex64};
use rand::Rng;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::channel::{
    apply_channel, make_jammer_waveform, rayleigh_block_gain, schedule_channel, ChannelError,
    ChannelState, JammerConfig, JammerKind,
};
use crate::combining::Algorithm;
use crate::iq::{db_to_linear, IQBuffer};
use crate::par;
use crate::payload::{
    image_to_bits, psnr_bytes, read_pgm, window_datarate, GrayImage,
    PayloadError,
};
use crate::phy::estimate::estimate_channel;
use crate::phy::frame::{build_frame, parse_frame};
use crate::phy::sync::{compensate, detect_frame_in};
use crate::phy::{FrameConfig, PhyError};
use crate::scenario::{
    CombinerModeKind, FadingModel, JammerWaveform, PayloadSource, ScenarioConfig, ScenarioError,
};
use crate::seeds::{self, StreamId};
use crate::selfheal::{self, CycleMode, ReceiverShare, SelfHealError};
use crate::trace::{read_trace, write_trace, TraceError, TraceMeta};

/// Samples of settling silence appended after each frame.
pub const TAIL_PAD: usize = 32;
/// Signal-free samples preceding the frame that feed covariance estimation.
/// Kept at the minimum injected delay so simulated runs and trace replays see
/// the same guard window.
pub const GUARD_CAP: usize = 64;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    SelfHeal(#[from] SelfHealError),
    #[error(transparent)]
    Payload(#[from] PayloadError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Simulation context
// ---------------------------------------------------------------------------

/// Everything needed to synthesize any receiver's capture for any cycle.
/// Stateless per call: any node holding the same scenario produces identical
/// samples, which is what lets networked nodes and the in-process engine
/// agree bit for bit.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub scenario: ScenarioConfig,
    image: Option<ImagePayload>,
}

#[derive(Debug, Clone)]
struct ImagePayload {
    image: GrayImage,
    bits: Vec<u8>,
    chunk_bits: usize,
    n_chunks: usize,
}

impl SimContext {
    pub fn new(scenario: ScenarioConfig) -> Result<Self, EngineError> {
        scenario.validate()?;
        let image = match &scenario.payload {
            PayloadSource::Image { path, chunk_bits } => {
                let image = read_pgm(path)?;
                let bits = image_to_bits(&image);
                if bits.is_empty() {
                    return Err(EngineError::Invalid("image payload has no pixels".into()));
                }
                let n_chunks = bits.len().div_ceil(*chunk_bits);
                Some(ImagePayload { image, bits, chunk_bits: *chunk_bits, n_chunks })
            }
            PayloadSource::Bitstream { .. } => None,
        };
        Ok(Self { scenario, image })
    }

    pub fn n_receivers(&self) -> usize {
        self.scenario.n_receivers
    }

    /// The source image, when the payload is an image.
    pub fn source_image(&self) -> Option<&GrayImage> {
        self.image.as_ref().map(|p| &p.image)
    }

    fn segment_index(&self, cycle: u64) -> usize {
        // Cycles past the schedule hold the last segment's conditions.
        self.scenario
            .segment_of_cycle(cycle)
            .unwrap_or(self.scenario.segments.len() - 1)
    }

    /// Ground-truth payload bits transmitted in the given cycle.
    pub fn reference_payload(&self, cycle: u64) -> Vec<u8> {
        match (&self.scenario.payload, &self.image) {
            (PayloadSource::Bitstream { seed, bits_per_cycle }, _) => {
                let mut rng = seeds::rng_for(
                    self.scenario.master_seed ^ seed,
                    StreamId { tag: "payload", cycle, receiver: 0 },
                );
                (0..*bits_per_cycle).map(|_| rng.gen_range(0..2u8)).collect()
            }
            (PayloadSource::Image { .. }, Some(img)) => {
                let chunk = (cycle as usize % img.n_chunks) * img.chunk_bits;
                let mut bits = vec![0u8; img.chunk_bits];
                let end = (chunk + img.chunk_bits).min(img.bits.len());
                bits[..end - chunk].copy_from_slice(&img.bits[chunk..end]);
                bits
            }
            (PayloadSource::Image { .. }, None) => unreachable!("image loaded in new()"),
        }
    }

    /// Which image chunk a cycle carries, if the payload is an image.
    pub fn chunk_of_cycle(&self, cycle: u64) -> Option<usize> {
        self.image.as_ref().map(|img| cycle as usize % img.n_chunks)
    }

    fn injected_delay(&self, cycle: u64) -> usize {
        let mut rng = seeds::rng_for(
            self.scenario.master_seed,
            StreamId { tag: "delay", cycle, receiver: 0 },
        );
        rng.gen_range(self.scenario.min_delay..=self.scenario.max_delay)
    }

    fn injected_cfo(&self, cycle: u64) -> f64 {
        let mut rng = seeds::rng_for(
            self.scenario.master_seed,
            StreamId { tag: "cfo", cycle, receiver: 0 },
        );
        rng.gen_range(-self.scenario.cfo_max..=self.scenario.cfo_max)
    }

    fn injected_phase(&self, cycle: u64, receiver: u32) -> f64 {
        let mut rng = seeds::rng_for(
            self.scenario.master_seed,
            StreamId { tag: "phase", cycle, receiver },
        );
        rng.gen_range(0.0..TAU)
    }

    /// True channel state for one receiver in one cycle, fading applied.
    pub fn true_channel(&self, cycle: u64, receiver: u32) -> Result<ChannelState, EngineError> {
        let seg_idx = self.segment_index(cycle);
        let mut ch = schedule_channel(&self.scenario, seg_idx, receiver as usize)?;
        if let FadingModel::RayleighBlock { seed } = self.scenario.segments[seg_idx].fading {
            let mut rng = seeds::rng_for(
                self.scenario.master_seed ^ seed,
                StreamId { tag: "fading", cycle, receiver },
            );
            ch.h_i *= rayleigh_block_gain(&mut rng);
        }
        Ok(ch)
    }

    /// Length of one cycle's capture window in samples.
    pub fn cycle_window_samples(&self, cycle: u64) -> usize {
        let bits = self.scenario.payload_bits_per_cycle();
        self.injected_delay(cycle) + self.scenario.frame.frame_symbol_count(bits) + TAIL_PAD
    }

    pub fn cycle_duration_s(&self, cycle: u64) -> f64 {
        self.cycle_window_samples(cycle) as f64 / self.scenario.sample_rate_hz
    }

    /// Synthesize the raw capture one receiver sees during one cycle.
    pub fn capture(&self, cycle: u64, receiver: u32) -> Result<IQBuffer, EngineError> {
        let payload = self.reference_payload(cycle);
        let tx = build_frame(&payload, &self.scenario.frame)?;
        let delay = self.injected_delay(cycle);
        let cfo = self.injected_cfo(cycle);
        let phase = self.injected_phase(cycle, receiver);
        let total = delay + tx.len() + TAIL_PAD;

        let mut x = vec![Complex64::new(0.0, 0.0); total];
        for (n, s) in tx.iter().enumerate() {
            x[delay + n] = s * Complex64::from_polar(1.0, TAU * cfo * n as f64 + phase);
        }
        let x = IQBuffer::from_samples(x, self.scenario.sample_rate_hz);

        let jammer_kind = match self.scenario.jammer {
            JammerWaveform::Tone { normalized_frequency } => {
                JammerKind::Tone { normalized_frequency }
            }
            JammerWaveform::Gaussian { seed } => JammerKind::Gaussian {
                seed: seeds::derive(
                    self.scenario.master_seed ^ seed,
                    StreamId { tag: "jamwave", cycle, receiver: 0 },
                ),
            },
        };
        let jam_cfg = JammerConfig { kind: jammer_kind, per_receiver_gain: vec![] };
        let x_j = make_jammer_waveform(&jam_cfg, total, self.scenario.sample_rate_hz)?;

        let ch = self.true_channel(cycle, receiver)?;
        let noise_seed = seeds::derive(
            self.scenario.master_seed,
            StreamId { tag: "noise", cycle, receiver },
        );
        let mut rx = apply_channel(&x, &x_j, &ch, noise_seed)?;
        rx.quantize_f32();
        Ok(rx)
    }

    /// Full receive chain for one receiver in one cycle.
    pub fn produce_share(&self, cycle: u64, receiver: u32) -> Result<ReceiverShare, EngineError> {
        let rx = self.capture(cycle, receiver)?;
        let seg = self.segment_index(cycle);
        let p_g = db_to_linear(self.scenario.segments[seg].tx_power_dbm);
        Ok(receiver_process(
            &rx,
            &self.scenario.frame,
            p_g,
            self.scenario.payload_bits_per_cycle(),
            receiver,
        ))
    }

    /// Interference knowledge for the combiner, matching the given receiver
    /// subset (sorted). Oracle mode rotates the scenario's jammer gains into
    /// each receiver's compensated frame, which is where the combiner works.
    pub fn cycle_mode(&self, cycle: u64, receivers: &[u32]) -> Result<CycleMode, EngineError> {
        match self.scenario.mode {
            CombinerModeKind::Covariance => Ok(CycleMode::Covariance),
            CombinerModeKind::Oracle => {
                let seg = self.segment_index(cycle);
                let p_j = db_to_linear(self.scenario.segments[seg].jammer_power_dbm);
                let sigma2 = db_to_linear(self.scenario.noise_power_dbm);
                let mut h_j_row = Vec::with_capacity(receivers.len());
                for &rx in receivers {
                    let ch = self.true_channel(cycle, rx)?;
                    let comp_phase = self.injected_phase(cycle, rx) + ch.h_i.arg();
                    h_j_row.push(ch.h_j_i * Complex64::from_polar(1.0, -comp_phase));
                }
                Ok(CycleMode::Oracle { h_j_row, p_j, sigma2 })
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Receiver-side processing
// ---------------------------------------------------------------------------

fn to_c32(v: &[Complex64]) -> Vec<Complex32> {
    v.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect()
}

fn undetected_share(rx: &IQBuffer, payload_bits: usize, cfg: &FrameConfig, receiver: u32) -> ReceiverShare {
    let guard_len = GUARD_CAP.min(rx.len());
    ReceiverShare {
        receiver,
        detected: false,
        h_eff: Complex32::new(0.0, 0.0),
        noise_var: 0.0,
        pilot_ber: 0.5,
        pilot_syms: vec![Complex32::new(0.0, 0.0); cfg.pilot_symbol_count()],
        data_syms: vec![Complex32::new(0.0, 0.0); cfg.data_symbol_count(payload_bits)],
        guard: to_c32(&rx.samples[..guard_len]),
        decoded_bits: Vec::new(),
        crc_ok: false,
    }
}

/// Detection, compensation, estimation, and decoding for one capture window.
/// Failures to detect or decode degrade the share rather than erroring: the
/// swarm treats a blind receiver as data, not as a fault.
pub fn receiver_process(
    rx: &IQBuffer,
    cfg: &FrameConfig,
    p_g: f64,
    payload_bits: usize,
    receiver: u32,
) -> ReceiverShare {
    receiver_process_in(rx, cfg, p_g, payload_bits, receiver, 0, rx.len())
}

/// As [`receiver_process`], searching only `[from, to)` for the preamble.
pub fn receiver_process_in(
    rx: &IQBuffer,
    cfg: &FrameConfig,
    p_g: f64,
    payload_bits: usize,
    receiver: u32,
    from: usize,
    to: usize,
) -> ReceiverShare {
    let frame_syms = cfg.frame_symbol_count(payload_bits);
    let sync = match detect_frame_in(rx, cfg, from, to) {
        Ok(s) => s,
        Err(_) => return undetected_share(rx, payload_bits, cfg, receiver),
    };
    if sync.timing_offset + frame_syms > rx.len() {
        return undetected_share(rx, payload_bits, cfg, receiver);
    }
    let y = match compensate(rx, &sync) {
        Ok(y) => y,
        Err(_) => return undetected_share(rx, payload_bits, cfg, receiver),
    };

    let pilot_start = cfg.preamble_symbol_count();
    let data_start = pilot_start + cfg.pilot_symbol_count();
    let data_end = data_start + cfg.data_symbol_count(payload_bits);
    let pilot = &y.samples[pilot_start..data_start];
    let est = match estimate_channel(pilot, cfg, p_g) {
        Ok(e) => e,
        Err(_) => return undetected_share(rx, payload_bits, cfg, receiver),
    };
    let h_eff = p_g.sqrt() * est.h_hat;

    let data = &y.samples[data_start..data_end];
    let (decoded_bits, crc_ok) = match parse_frame(data, h_eff, cfg) {
        Ok((bits, crc)) => (bits, crc),
        Err(_) => (Vec::new(), false),
    };

    // Guard: the samples immediately before the frame, derotated with the
    // same correction the frame got so covariance estimates live in the same
    // frame of reference as the symbol rows.
    let guard_len = GUARD_CAP.min(sync.timing_offset);
    let guard: Vec<Complex64> = (sync.timing_offset - guard_len..sync.timing_offset)
        .map(|m| {
            let k = m as f64 - sync.timing_offset as f64;
            rx.samples[m]
                * Complex64::from_polar(1.0, -(TAU * sync.cfo_normalized * k + sync.phase_rad))
        })
        .collect();

    ReceiverShare {
        receiver,
        detected: true,
        h_eff: Complex32::new(h_eff.re as f32, h_eff.im as f32),
        noise_var: est.noise_var_hat as f32,
        pilot_ber: est.pilot_ber as f32,
        pilot_syms: to_c32(pilot),
        data_syms: to_c32(data),
        guard: to_c32(&guard),
        decoded_bits,
        crc_ok,
    }
}

// ---------------------------------------------------------------------------
// Cycle records and CSV
// ---------------------------------------------------------------------------

/// Per-receiver metrics within one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverMetrics {
    pub pilot_ber: f64,
    pub payload_ber: f64,
    pub datarate_kbps: f64,
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: u64,
    pub segment: usize,
    pub leader_id: u16,
    pub n_s: usize,
    pub algorithm: Algorithm,
    pub per_receiver: Vec<ReceiverMetrics>,
    pub combined_ber: f64,
    pub combined_datarate_kbps: f64,
}

/// Fixed CSV column set: cycle, segment, leader_id, n_s, algorithm, one
/// (pilot_ber, payload_ber, datarate_kbps) triple per receiver, then the
/// combined pair.
pub fn csv_header(n_receivers: usize) -> String {
    let mut cols = vec![
        "cycle".to_string(),
        "segment".to_string(),
        "leader_id".to_string(),
        "n_s".to_string(),
        "algorithm".to_string(),
    ];
    for i in 1..=n_receivers {
        cols.push(format!("rx{i}_pilot_ber"));
        cols.push(format!("rx{i}_payload_ber"));
        cols.push(format!("rx{i}_datarate_kbps"));
    }
    cols.push("combined_ber".to_string());
    cols.push("combined_datarate_kbps".to_string());
    cols.join(",")
}

impl CycleRecord {
    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![
            self.cycle.to_string(),
            self.segment.to_string(),
            self.leader_id.to_string(),
            self.n_s.to_string(),
            self.algorithm.name().to_string(),
        ];
        for m in &self.per_receiver {
            cols.push(format!("{:.6}", m.pilot_ber));
            cols.push(format!("{:.6}", m.payload_ber));
            cols.push(format!("{:.3}", m.datarate_kbps));
        }
        cols.push(format!("{:.6}", self.combined_ber));
        cols.push(format!("{:.3}", self.combined_datarate_kbps));
        cols.join(",")
    }
}

pub fn records_to_csv(records: &[CycleRecord], n_receivers: usize) -> String {
    let mut out = csv_header(n_receivers);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Per-segment aggregates printed after a run.
#[derive(Debug, Clone)]
pub struct SegmentSummary {
    pub segment: usize,
    pub cycles: u64,
    pub mrc_cycles: u64,
    pub lmmse_cycles: u64,
    pub sc_cycles: u64,
    pub majority: Algorithm,
    pub mean_combined_kbps: f64,
    pub mean_rx_kbps: Vec<f64>,
    /// Fraction of cycles where the combined datarate matched or beat every
    /// individual receiver.
    pub dominance_frac: f64,
}

pub fn summarize_segments(records: &[CycleRecord], n_receivers: usize) -> Vec<SegmentSummary> {
    let mut out: Vec<SegmentSummary> = Vec::new();
    for r in records {
        if out.last().map(|s| s.segment) != Some(r.segment) {
            out.push(SegmentSummary {
                segment: r.segment,
                cycles: 0,
                mrc_cycles: 0,
                lmmse_cycles: 0,
                sc_cycles: 0,
                majority: Algorithm::Sc,
                mean_combined_kbps: 0.0,
                mean_rx_kbps: vec![0.0; n_receivers],
                dominance_frac: 0.0,
            });
        }
        let s = out.last_mut().unwrap();
        s.cycles += 1;
        match r.algorithm {
            Algorithm::DMrc => s.mrc_cycles += 1,
            Algorithm::DLmmse => s.lmmse_cycles += 1,
            Algorithm::Sc => s.sc_cycles += 1,
        }
        s.mean_combined_kbps += r.combined_datarate_kbps;
        for (acc, m) in s.mean_rx_kbps.iter_mut().zip(&r.per_receiver) {
            *acc += m.datarate_kbps;
        }
        let best_rx = r
            .per_receiver
            .iter()
            .map(|m| m.datarate_kbps)
            .fold(f64::NEG_INFINITY, f64::max);
        if r.combined_datarate_kbps >= best_rx {
            s.dominance_frac += 1.0;
        }
    }
    for s in &mut out {
        let n = s.cycles as f64;
        s.mean_combined_kbps /= n;
        for v in &mut s.mean_rx_kbps {
            *v /= n;
        }
        s.dominance_frac /= n;
        s.majority = if s.mrc_cycles >= s.lmmse_cycles && s.mrc_cycles >= s.sc_cycles {
            Algorithm::DMrc
        } else if s.lmmse_cycles >= s.sc_cycles {
            Algorithm::DLmmse
        } else {
            Algorithm::Sc
        };
    }
    out
}

// ---------------------------------------------------------------------------
// Image reporting
// ---------------------------------------------------------------------------

/// Per-cycle chunk quality and per-segment reconstructions for image payloads.
#[derive(Debug, Clone)]
pub struct ImageReport {
    /// (cycle, per-receiver chunk PSNR, combined chunk PSNR).
    pub per_cycle_psnr: Vec<(u64, Vec<f64>, f64)>,
    /// Reconstructed image per segment from the combined stream.
    pub combined_per_segment: Vec<GrayImage>,
    /// Reconstructed image per segment per receiver.
    pub per_rx_per_segment: Vec<Vec<GrayImage>>,
}

struct ImageTracker {
    width: usize,
    height: usize,
    image_bits: usize,
    chunk_bits: usize,
    ref_bits: Vec<u8>,
    segment: usize,
    combined: Vec<u8>,
    per_rx: Vec<Vec<u8>>,
    report: ImageReport,
}

impl ImageTracker {
    fn new(img: &GrayImage, chunk_bits: usize, n_receivers: usize) -> Self {
        Self {
            width: img.width,
            height: img.height,
            image_bits: img.pixels.len() * 8,
            chunk_bits,
            ref_bits: image_to_bits(img),
            segment: 0,
            combined: vec![0u8; img.pixels.len()],
            per_rx: vec![vec![0u8; img.pixels.len()]; n_receivers],
            report: ImageReport {
                per_cycle_psnr: Vec::new(),
                combined_per_segment: Vec::new(),
                per_rx_per_segment: Vec::new(),
            },
        }
    }

    fn chunk_pixel_range(&self, chunk: usize) -> (usize, usize) {
        let bit_start = chunk * self.chunk_bits;
        let bit_end = (bit_start + self.chunk_bits).min(self.image_bits);
        (bit_start / 8, bit_end / 8)
    }

    fn chunk_bytes(&self, chunk: usize, bits: &[u8]) -> Option<Vec<u8>> {
        let (b0, b1) = self.chunk_pixel_range(chunk);
        let need = (b1 - b0) * 8;
        if bits.len() < need {
            return None;
        }
        Some(
            bits[..need]
                .chunks_exact(8)
                .map(|byte| byte.iter().fold(0u8, |acc, &b| (acc << 1) | b))
                .collect(),
        )
    }

    fn flush_segment(&mut self) {
        self.report.combined_per_segment.push(GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.combined.clone(),
        });
        self.report.per_rx_per_segment.push(
            self.per_rx
                .iter()
                .map(|p| GrayImage { width: self.width, height: self.height, pixels: p.clone() })
                .collect(),
        );
        self.combined.fill(0);
        for p in &mut self.per_rx {
            p.fill(0);
        }
    }

    fn observe(
        &mut self,
        cycle: u64,
        segment: usize,
        chunk: usize,
        rx_bits: &[Option<&[u8]>],
        combined_bits: Option<&[u8]>,
    ) {
        if segment != self.segment {
            self.flush_segment();
            self.segment = segment;
        }
        let (b0, b1) = self.chunk_pixel_range(chunk);
        let ref_chunk: Vec<u8> = self
            .chunk_bytes(chunk, &self.ref_bits[chunk * self.chunk_bits..])
            .expect("reference bits cover every chunk");
        let zeros = vec![0u8; b1 - b0];

        let mut rx_psnr = Vec::with_capacity(rx_bits.len());
        for (i, bits) in rx_bits.iter().enumerate() {
            let got = bits.and_then(|b| self.chunk_bytes(chunk, b));
            let got = got.as_deref().unwrap_or(&zeros);
            rx_psnr.push(psnr_bytes(&ref_chunk, got));
            self.per_rx[i][b0..b1].copy_from_slice(got);
        }
        let got_combined = combined_bits.and_then(|b| self.chunk_bytes(chunk, b));
        let got_combined = got_combined.as_deref().unwrap_or(&zeros);
        let combined_psnr = psnr_bytes(&ref_chunk, got_combined);
        self.combined[b0..b1].copy_from_slice(got_combined);

        self.report.per_cycle_psnr.push((cycle, rx_psnr, combined_psnr));
    }

    fn finish(mut self) -> ImageReport {
        self.flush_segment();
        self.report
    }
}

// ---------------------------------------------------------------------------
// Full scenario run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Run this many cycles instead of the scenario's schedule length.
    pub cycles_override: Option<u64>,
    /// Dump each receiver's raw capture stream to `<dir>/rx<i>.iq`.
    pub trace_dump: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub records: Vec<CycleRecord>,
    pub decision_lines: Vec<String>,
    pub summaries: Vec<SegmentSummary>,
    pub image: Option<ImageReport>,
    pub trace_paths: Vec<PathBuf>,
}

fn positional_matches(got: &[u8], reference: &[u8]) -> usize {
    got.iter().zip(reference).filter(|(a, b)| a == b).count()
}

/// Metrics for one decoded bit sequence against the reference.
fn metrics_for(
    decoded: &[u8],
    reference: &[u8],
    pilot_ber: f64,
    duration_s: f64,
) -> ReceiverMetrics {
    let correct = positional_matches(decoded, reference);
    let payload_ber = 1.0 - correct as f64 / reference.len() as f64;
    ReceiverMetrics {
        pilot_ber,
        payload_ber,
        datarate_kbps: window_datarate(correct, duration_s).unwrap_or(0.0),
    }
}

/// Execute a scenario start to finish in-process, with the leader role
/// rotating round-robin across receivers.
pub fn run_scenario(
    scenario: &ScenarioConfig,
    opts: &RunOptions,
) -> Result<RunOutput, EngineError> {
    let ctx = SimContext::new(scenario.clone())?;
    let n = ctx.n_receivers();
    let total = opts.cycles_override.unwrap_or_else(|| scenario.total_cycles());
    let dump = opts.trace_dump.is_some();

    let mut records = Vec::with_capacity(total as usize);
    let mut decision_lines = Vec::with_capacity(total as usize);
    let mut dumps: Vec<Vec<Complex64>> = vec![Vec::new(); if dump { n } else { 0 }];
    let mut image_tracker = ctx.image.as_ref().map(|img| {
        ImageTracker::new(&img.image, img.chunk_bits, n)
    });

    for cycle in 0..total {
        let produced: Vec<Result<(ReceiverShare, Option<Vec<Complex64>>), EngineError>> =
            par::map_indexed(n, |rx| {
                let capture = ctx.capture(cycle, rx as u32)?;
                let seg = ctx.segment_index(cycle);
                let p_g = db_to_linear(ctx.scenario.segments[seg].tx_power_dbm);
                let share = receiver_process(
                    &capture,
                    &ctx.scenario.frame,
                    p_g,
                    ctx.scenario.payload_bits_per_cycle(),
                    rx as u32,
                );
                Ok((share, dump.then_some(capture.samples)))
            });
        let mut shares = Vec::with_capacity(n);
        for (rx, item) in produced.into_iter().enumerate() {
            let (share, samples) = item?;
            if let Some(samples) = samples {
                dumps[rx].extend(samples);
            }
            shares.push(share);
        }

        let leader_id = (cycle % n as u64) as u16 + 1;
        let receivers: Vec<u32> = (0..n as u32).collect();
        let mode = ctx.cycle_mode(cycle, &receivers)?;
        let record = evaluate_cycle(
            &ctx,
            cycle,
            leader_id,
            &shares,
            &mode,
            &mut decision_lines,
            image_tracker.as_mut(),
        )?;
        records.push(record);
    }

    let mut trace_paths = Vec::new();
    if let Some(dir) = &opts.trace_dump {
        std::fs::create_dir_all(dir)?;
        for (rx, samples) in dumps.into_iter().enumerate() {
            let path = dir.join(format!("rx{rx}.iq"));
            let buf = IQBuffer::from_samples(samples, scenario.sample_rate_hz);
            let meta = TraceMeta {
                sample_rate_hz: scenario.sample_rate_hz,
                center_freq_hz: 0.0,
                receiver_id: rx as u32,
                gain_db: 0.0,
            };
            write_trace(&path, &buf, &meta)?;
            trace_paths.push(path);
        }
    }

    let summaries = summarize_segments(&records, n);
    Ok(RunOutput {
        records,
        decision_lines,
        summaries,
        image: image_tracker.map(|t| t.finish()),
        trace_paths,
    })
}

/// Shared leader-side evaluation: run the combiner, compute metrics, update
/// the image tracker, and append the canonical decision line.
#[allow(clippy::too_many_arguments)]
fn evaluate_cycle(
    ctx: &SimContext,
    cycle: u64,
    leader_id: u16,
    shares: &[ReceiverShare],
    mode: &CycleMode,
    decision_lines: &mut Vec<String>,
    image_tracker: Option<&mut ImageTracker>,
) -> Result<CycleRecord, EngineError> {
    let segment = ctx.segment_index(cycle);
    let duration = ctx.cycle_duration_s(cycle);
    let reference = ctx.reference_payload(cycle);
    let theta = ctx.scenario.theta;

    let per_receiver: Vec<ReceiverMetrics> = shares
        .iter()
        .map(|s| metrics_for(&s.decoded_bits, &reference, s.pilot_ber as f64, duration))
        .collect();

    let outcome = selfheal::run_cycle(shares, theta, mode, &ctx.scenario.frame)?;
    let (mut decision, combined_bits) = match outcome {
        Some(o) => (o.decision, o.combined_bits),
        None => {
            return Ok(CycleRecord {
                cycle,
                segment,
                leader_id,
                n_s: 0,
                algorithm: Algorithm::Sc,
                per_receiver,
                combined_ber: 1.0,
                combined_datarate_kbps: 0.0,
            })
        }
    };

    let combined_metrics = metrics_for(&combined_bits, &reference, decision.combined_ber, duration);
    decision.combined_datarate_kbps = combined_metrics.datarate_kbps;
    decision_lines.push(selfheal::decision_line(cycle, leader_id, &decision));

    if let Some(tracker) = image_tracker {
        let chunk = ctx.chunk_of_cycle(cycle).expect("image tracker implies image payload");
        let rx_bits: Vec<Option<&[u8]>> = shares
            .iter()
            .map(|s| (!s.decoded_bits.is_empty()).then_some(s.decoded_bits.as_slice()))
            .collect();
        let combined = (!combined_bits.is_empty()).then_some(combined_bits.as_slice());
        tracker.observe(cycle, segment, chunk, &rx_bits, combined);
    }

    Ok(CycleRecord {
        cycle,
        segment,
        leader_id,
        n_s: decision.n_s,
        algorithm: decision.algorithm,
        per_receiver,
        combined_ber: combined_metrics.payload_ber,
        combined_datarate_kbps: combined_metrics.datarate_kbps,
    })
}

// ---------------------------------------------------------------------------
// Trace replay
// ---------------------------------------------------------------------------

/// Options for offline trace replay.
#[derive(Debug, Clone, Default)]
pub struct ReplayOptions {
    pub theta: f64,
    /// Scenario used for ground-truth payload reference and cycle windows.
    /// Without it, payload metrics fall back to CRC-gated counting and cycle
    /// durations to inter-frame spacing.
    pub scenario: Option<ScenarioConfig>,
    /// Frame parameters when no scenario is given.
    pub frame: FrameConfig,
}

struct DetectedFrame {
    offset: usize,
    share: ReceiverShare,
}

/// Scan a whole trace for frames: first threshold crossing, refined to the
/// local correlation maximum, then jump past the frame and continue.
fn scan_trace(
    buf: &IQBuffer,
    cfg: &FrameConfig,
    receiver: u32,
    p_g_hint: impl Fn(usize) -> f64,
    expected_bits: Option<usize>,
) -> Vec<DetectedFrame> {
    let mut frames = Vec::new();
    let l = cfg.zc_length;
    let mut pos = 0usize;
    while pos + 2 * l <= buf.len() {
        // Cheap forward scan: detect within a sliding chunk so one weak
        // region does not hide a later strong frame.
        let chunk_end = (pos + 8 * l).min(buf.len());
        match detect_frame_in(buf, cfg, pos, chunk_end) {
            Err(_) => {
                if chunk_end == buf.len() {
                    break;
                }
                // Overlap by a frame's worth of preamble to avoid splitting
                // a peak across chunk boundaries.
                pos = chunk_end - 2 * l + 1;
            }
            Ok(first) => {
                // Refine: the true peak is the best lag in the neighborhood.
                let refine_end = (first.timing_offset + 2 * l).min(buf.len());
                let sync = detect_frame_in(buf, cfg, first.timing_offset, refine_end)
                    .unwrap_or(first);
                let off = sync.timing_offset;

                let bits = match expected_bits {
                    Some(b) => b,
                    None => match peek_payload_bits(buf, cfg, off) {
                        Some(b) if b <= cfg.payload_bits_max => b,
                        _ => {
                            pos = off + 2 * l;
                            continue;
                        }
                    },
                };
                let frame_len = cfg.frame_symbol_count(bits);
                if off + frame_len > buf.len() {
                    break;
                }
                let share = receiver_process_in(buf, cfg, p_g_hint(off), bits, receiver, off, off + frame_len);
                frames.push(DetectedFrame { offset: off, share });
                pos = off + frame_len;
            }
        }
    }
    frames
}

/// Read the declared payload bit count from a frame at a known offset.
fn peek_payload_bits(buf: &IQBuffer, cfg: &FrameConfig, off: usize) -> Option<usize> {
    use crate::phy::frame::LENGTH_FIELD_SYMBOLS;
    let sync = detect_frame_in(buf, cfg, off, (off + 2 * cfg.zc_length).min(buf.len())).ok()?;
    let y = compensate(buf, &sync).ok()?;
    let pilot_start = cfg.preamble_symbol_count();
    let data_start = pilot_start + cfg.pilot_symbol_count();
    if y.len() < data_start + LENGTH_FIELD_SYMBOLS {
        return None;
    }
    let est = estimate_channel(&y.samples[pilot_start..data_start], cfg, 1.0).ok()?;
    let h = est.h_hat;
    if h.norm_sqr() == 0.0 {
        return None;
    }
    let bits = crate::phy::qpsk::qpsk_demodulate(
        &y.samples[data_start..data_start + LENGTH_FIELD_SYMBOLS]
            .iter()
            .map(|s| s / h)
            .collect::<Vec<_>>(),
    );
    let declared = bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32);
    Some(declared as usize)
}

/// Replay recorded IQ traces through the full combining pipeline.
pub fn replay_traces(
    paths: &[PathBuf],
    opts: &ReplayOptions,
) -> Result<RunOutput, EngineError> {
    if paths.is_empty() {
        return Err(EngineError::Invalid("no trace files given".into()));
    }
    let mut buffers = Vec::with_capacity(paths.len());
    let mut rate = None;
    for p in paths {
        let (buf, meta) = read_trace(p)?;
        match rate {
            None => rate = Some(meta.sample_rate_hz),
            Some(r) if (r - meta.sample_rate_hz).abs() > 1e-9 => {
                return Err(EngineError::Invalid(format!(
                    "traces disagree on sample rate: {r} vs {}",
                    meta.sample_rate_hz
                )))
            }
            _ => {}
        }
        buffers.push(buf);
    }
    let sample_rate = rate.unwrap_or(1e6);

    let ctx = match &opts.scenario {
        Some(s) => Some(SimContext::new(s.clone())?),
        None => None,
    };
    let cfg = ctx.as_ref().map(|c| c.scenario.frame.clone()).unwrap_or_else(|| opts.frame.clone());
    let expected_bits = ctx.as_ref().map(|c| c.scenario.payload_bits_per_cycle());

    // Scan every trace in parallel.
    let per_trace: Vec<Vec<DetectedFrame>> = par::map_indexed(buffers.len(), |i| {
        let p_g_of = |off: usize| -> f64 {
            match &ctx {
                Some(c) => {
                    // Map a stream offset back to its cycle's transmit power.
                    let mut cycle = 0u64;
                    let mut acc = 0usize;
                    while acc + c.cycle_window_samples(cycle) <= off {
                        acc += c.cycle_window_samples(cycle);
                        cycle += 1;
                    }
                    let seg = c.segment_index(cycle);
                    db_to_linear(c.scenario.segments[seg].tx_power_dbm)
                }
                None => 1.0,
            }
        };
        scan_trace(&buffers[i], &cfg, i as u32, p_g_of, expected_bits)
    });

    let n = buffers.len();
    let total_frames: usize = per_trace.iter().map(|f| f.len()).sum();
    if total_frames == 0 {
        return Ok(RunOutput {
            records: Vec::new(),
            decision_lines: Vec::new(),
            summaries: Vec::new(),
            image: None,
            trace_paths: paths.to_vec(),
        });
    }

    // Cluster detections across traces by absolute offset: frames within half
    // a frame length of a cluster anchor belong to the same cycle.
    let min_frame = cfg.frame_symbol_count(0);
    let mut all: Vec<(usize, usize, usize)> = Vec::new(); // (offset, trace, idx)
    for (t, frames) in per_trace.iter().enumerate() {
        for (i, f) in frames.iter().enumerate() {
            all.push((f.offset, t, i));
        }
    }
    all.sort_unstable();
    let mut clusters: Vec<Vec<(usize, usize)>> = Vec::new(); // [(trace, idx)]
    let mut anchors: Vec<usize> = Vec::new();
    for (off, t, i) in all {
        match anchors.last() {
            Some(&a) if off < a + min_frame / 2 => clusters.last_mut().unwrap().push((t, i)),
            _ => {
                anchors.push(off);
                clusters.push(vec![(t, i)]);
            }
        }
    }

    let mut records = Vec::with_capacity(clusters.len());
    let mut decision_lines = Vec::new();
    let mut per_trace: Vec<Vec<Option<DetectedFrame>>> = per_trace
        .into_iter()
        .map(|v| v.into_iter().map(Some).collect())
        .collect();

    for (cycle, cluster) in clusters.iter().enumerate() {
        let cycle = cycle as u64;
        let anchor = anchors[cycle as usize];
        let mut shares: Vec<ReceiverShare> = Vec::with_capacity(n);
        for trace in 0..n {
            let found = cluster.iter().find(|(t, _)| *t == trace);
            match found {
                Some((t, i)) => shares.push(per_trace[*t][*i].take().unwrap().share),
                None => {
                    // No detection in this trace: contribute guard samples
                    // from just before the cluster anchor.
                    let start = anchor.saturating_sub(GUARD_CAP).min(buffers[trace].len());
                    let end = anchor.min(buffers[trace].len());
                    let window =
                        IQBuffer::from_samples(buffers[trace].samples[start..end].to_vec(), sample_rate);
                    let bits = expected_bits.unwrap_or(0);
                    shares.push(undetected_share(&window, bits, &cfg, trace as u32));
                }
            }
        }

        let duration = match &ctx {
            Some(c) => c.cycle_duration_s(cycle),
            None => {
                let next = anchors.get(cycle as usize + 1).copied();
                let span = next.map(|nx| nx - anchor).unwrap_or(cfg.frame_symbol_count(
                    expected_bits.unwrap_or(cfg.payload_bits_max),
                ) + GUARD_CAP + TAIL_PAD);
                span as f64 / sample_rate
            }
        };
        let reference = ctx.as_ref().map(|c| c.reference_payload(cycle));

        let outcome = selfheal::run_cycle(&shares, opts.theta, &CycleMode::Covariance, &cfg)?;
        let segment = ctx.as_ref().map(|c| c.segment_index(cycle)).unwrap_or(0);

        let per_receiver: Vec<ReceiverMetrics> = shares
            .iter()
            .map(|s| match &reference {
                Some(r) => metrics_for(&s.decoded_bits, r, s.pilot_ber as f64, duration),
                None => crc_gated_metrics(&s.decoded_bits, s.crc_ok, s.pilot_ber as f64, duration),
            })
            .collect();

        let record = match outcome {
            Some(o) => {
                let combined = match &reference {
                    Some(r) => metrics_for(&o.combined_bits, r, o.decision.combined_ber, duration),
                    None => crc_gated_metrics(
                        &o.combined_bits,
                        o.combined_crc_ok,
                        o.decision.combined_ber,
                        duration,
                    ),
                };
                let mut decision = o.decision;
                decision.combined_datarate_kbps = combined.datarate_kbps;
                decision_lines.push(selfheal::decision_line(cycle, 0, &decision));
                CycleRecord {
                    cycle,
                    segment,
                    leader_id: 0,
                    n_s: decision.n_s,
                    algorithm: decision.algorithm,
                    per_receiver,
                    combined_ber: match &reference {
                        Some(_) => combined.payload_ber,
                        None => decision.combined_ber,
                    },
                    combined_datarate_kbps: combined.datarate_kbps,
                }
            }
            None => CycleRecord {
                cycle,
                segment,
                leader_id: 0,
                n_s: 0,
                algorithm: Algorithm::Sc,
                per_receiver,
                combined_ber: 1.0,
                combined_datarate_kbps: 0.0,
            },
        };
        records.push(record);
    }

    let summaries = summarize_segments(&records, n);
    Ok(RunOutput {
        records,
        decision_lines,
        summaries,
        image: None,
        trace_paths: paths.to_vec(),
    })
}

/// Without a payload reference, count a frame's bits as correct only when its
/// CRC passed.
fn crc_gated_metrics(
    decoded: &[u8],
    crc_ok: bool,
    pilot_ber: f64,
    duration_s: f64,
) -> ReceiverMetrics {
    let correct = if crc_ok { decoded.len() } else { 0 };
    ReceiverMetrics {
        pilot_ber,
        payload_ber: if crc_ok { 0.0 } else { 1.0 },
        datarate_kbps: window_datarate(correct, duration_s).unwrap_or(0.0),
    }
}

/// Write the CSV for a run.
pub fn write_csv(out: &RunOutput, n_receivers: usize, path: &Path) -> Result<(), EngineError> {
    std::fs::write(path, records_to_csv(&out.records, n_receivers))?;
    Ok(())
}
