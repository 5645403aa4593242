//! BER-driven algorithm selection and the per-cycle combining step.
//!
//! Each cycle the leader classifies receivers by pilot BER against a
//! threshold. With `n_s` good receivers out of `n` alive: all good selects
//! MRC, exactly one good selects SC, anything in between selects LMMSE. The
//! zero-good corner falls back to SC on the least-bad receiver so the system
//! always emits output.

use num_complex::{Complex32, Complex64};
use thiserror::Error;

use crate::combining::{
    self, combine, interference_covariance, lmmse_weights, lmmse_weights_from_cov, mrc_weights,
    sc_weights, Algorithm, CombiningError, ReceiverStack, WeightVector,
};
use crate::phy::frame::{parse_frame, pilot_bits};
use crate::phy::qpsk::qpsk_demodulate;
use crate::phy::FrameConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelfHealError {
    #[error("bit sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty bit sequence")]
    EmptyBits,
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error("n_s {n_s} exceeds receiver count {n}")]
    BadCounts { n_s: usize, n: usize },
    #[error(transparent)]
    Combining(#[from] CombiningError),
}

/// Receiver health classification for one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct HealthReport {
    pub bers: Vec<f64>,
    pub threshold: f64,
    /// Indices (into the share list) with BER at or below the threshold.
    pub good_set: Vec<usize>,
    pub n_s: usize,
}

/// One receiver's processed contribution to a combining cycle. Scalars and
/// symbol vectors are stored at `f32` precision, matching the wire encoding,
/// so a leader sees bit-identical shares whether they arrived over a socket
/// or a function call.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverShare {
    /// Receiver index within the scenario (0-based).
    pub receiver: u32,
    /// Whether a frame was detected in this receiver's capture window.
    pub detected: bool,
    /// Effective complex gain a clean symbol was multiplied by (includes the
    /// transmit-power factor). Zero when nothing was detected.
    pub h_eff: Complex32,
    /// Residual noise variance around the pilot fit.
    pub noise_var: f32,
    /// Pilot bit error rate; 0.5 when nothing was detected.
    pub pilot_ber: f32,
    /// Compensated, unequalized pilot-field symbols.
    pub pilot_syms: Vec<Complex32>,
    /// Compensated, unequalized data-region symbols (length + payload + CRC).
    pub data_syms: Vec<Complex32>,
    /// Signal-free samples preceding the frame, in the same rotation frame as
    /// the symbol rows; feeds interference covariance estimation.
    pub guard: Vec<Complex32>,
    /// This receiver's own hard-decision payload (empty if undecodable).
    pub decoded_bits: Vec<u8>,
    /// Whether this receiver's own decode passed CRC.
    pub crc_ok: bool,
}

/// How the leader learns interference statistics for LMMSE weights.
#[derive(Debug, Clone)]
pub enum CycleMode {
    /// Ground truth from the simulation: jammer gains as seen in the
    /// compensated symbol rows, jammer power, and noise power.
    Oracle { h_j_row: Vec<Complex64>, p_j: f64, sigma2: f64 },
    /// Estimate the interference-plus-noise covariance from guard samples.
    Covariance,
}

/// The leader's output for one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerDecision {
    pub algorithm: Algorithm,
    pub weights: WeightVector,
    /// Receiver indices that actually contributed signal to the output.
    pub participants: Vec<u32>,
    pub n_s: usize,
    /// Combined-stream BER measured on the known pilot field.
    pub combined_ber: f64,
    /// Filled in by the caller once the cycle window duration is known.
    pub combined_datarate_kbps: f64,
}

/// Decision plus the combined stream products the caller needs for metrics.
#[derive(Debug, Clone)]
pub struct CycleOutcome {
    pub decision: CombinerDecision,
    pub combined_bits: Vec<u8>,
    pub combined_crc_ok: bool,
}

/// Fraction of positions where the two bit sequences differ.
pub fn compute_ber(rx_bits: &[u8], ref_bits: &[u8]) -> Result<f64, SelfHealError> {
    if rx_bits.len() != ref_bits.len() {
        return Err(SelfHealError::LengthMismatch(rx_bits.len(), ref_bits.len()));
    }
    if rx_bits.is_empty() {
        return Err(SelfHealError::EmptyBits);
    }
    let wrong = rx_bits.iter().zip(ref_bits).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / rx_bits.len() as f64)
}

/// Split receivers into good (BER <= theta) and bad.
pub fn classify_receivers(bers: &[f64], theta: f64) -> Result<HealthReport, SelfHealError> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(SelfHealError::InvalidThreshold(theta));
    }
    let good_set: Vec<usize> =
        bers.iter().enumerate().filter(|(_, &b)| b <= theta).map(|(i, _)| i).collect();
    Ok(HealthReport { bers: bers.to_vec(), threshold: theta, n_s: good_set.len(), good_set })
}

/// Map the good-receiver count onto a combining algorithm.
pub fn select_algorithm(n_s: usize, n: usize) -> Result<Algorithm, SelfHealError> {
    if n_s > n || n == 0 {
        return Err(SelfHealError::BadCounts { n_s, n });
    }
    Ok(if n == 1 {
        Algorithm::Sc
    } else if n_s == n {
        Algorithm::DMrc
    } else if n_s <= 1 {
        Algorithm::Sc
    } else {
        Algorithm::DLmmse
    })
}

fn to_c64(v: &[Complex32]) -> Vec<Complex64> {
    v.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect()
}

/// Run one full combining cycle over the collected shares (which must be
/// sorted by receiver index). Returns `None` for an empty share list.
pub fn run_cycle(
    shares: &[ReceiverShare],
    theta: f64,
    mode: &CycleMode,
    cfg: &FrameConfig,
) -> Result<Option<CycleOutcome>, SelfHealError> {
    if shares.is_empty() {
        return Ok(None);
    }
    let n = shares.len();
    let bers: Vec<f64> = shares.iter().map(|s| s.pilot_ber as f64).collect();
    let report = classify_receivers(&bers, theta)?;
    let algorithm = select_algorithm(report.n_s, n)?;

    let h: Vec<Complex64> =
        shares.iter().map(|s| Complex64::new(s.h_eff.re as f64, s.h_eff.im as f64)).collect();

    let weights = match algorithm {
        Algorithm::Sc => sc_weights(&bers, &report.good_set)?,
        Algorithm::DMrc => mrc_weights(&h)?,
        Algorithm::DLmmse => compute_lmmse(shares, &h, mode)?,
    };

    // Rows padded to a common length; an undetected receiver contributes a
    // zero row and a zero gain, so it drops out of the sum on its own.
    let data_len = shares.iter().map(|s| s.data_syms.len()).max().unwrap_or(0);
    let pilot_len = shares.iter().map(|s| s.pilot_syms.len()).max().unwrap_or(0);
    let pad = |v: &[Complex32], len: usize| {
        let mut row = to_c64(v);
        row.resize(len, Complex64::new(0.0, 0.0));
        row
    };
    let data_stack = ReceiverStack {
        rows: shares.iter().map(|s| pad(&s.data_syms, data_len)).collect(),
        h: h.clone(),
    };
    let pilot_stack = ReceiverStack {
        rows: shares.iter().map(|s| pad(&s.pilot_syms, pilot_len)).collect(),
        h: h.clone(),
    };

    let combined_pilot = combine(&pilot_stack, &weights)?;
    let want = pilot_bits(cfg);
    let got = qpsk_demodulate(&combined_pilot);
    let n_cmp = want.len().min(got.len());
    let combined_ber = if n_cmp == 0 {
        0.5
    } else {
        compute_ber(&got[..n_cmp], &want[..n_cmp])?
    };

    let combined_data = combine(&data_stack, &weights)?;
    let (combined_bits, combined_crc_ok) =
        match parse_frame(&combined_data, Complex64::new(1.0, 0.0), cfg) {
            Ok((bits, crc)) => (bits, crc),
            Err(_) => (Vec::new(), false),
        };

    let participants: Vec<u32> = match algorithm {
        Algorithm::Sc => combining::selected_index(&weights)
            .map(|i| vec![shares[i].receiver])
            .unwrap_or_default(),
        _ => shares.iter().filter(|s| s.detected).map(|s| s.receiver).collect(),
    };

    Ok(Some(CycleOutcome {
        decision: CombinerDecision {
            algorithm,
            weights,
            participants,
            n_s: report.n_s,
            combined_ber,
            combined_datarate_kbps: 0.0,
        },
        combined_bits,
        combined_crc_ok,
    }))
}

fn compute_lmmse(
    shares: &[ReceiverShare],
    h: &[Complex64],
    mode: &CycleMode,
) -> Result<WeightVector, SelfHealError> {
    match mode {
        CycleMode::Oracle { h_j_row, p_j, sigma2 } => {
            Ok(lmmse_weights(h, h_j_row, 1.0, *p_j, *sigma2)?)
        }
        CycleMode::Covariance => {
            let min_guard = shares.iter().map(|s| s.guard.len()).min().unwrap_or(0);
            if min_guard < shares.len() {
                // Not enough signal-free samples to estimate a covariance;
                // fall back to the matched-filter direction.
                return Ok(mrc_weights(h)?);
            }
            let guards: Vec<Vec<Complex64>> =
                shares.iter().map(|s| to_c64(&s.guard[..min_guard])).collect();
            let r_in = interference_covariance(&guards)?;
            Ok(lmmse_weights_from_cov(h, &r_in)?)
        }
    }
}

/// Canonical one-line rendering of a decision, identical for the in-process
/// engine and networked nodes so logs can be compared directly.
pub fn decision_line(cycle: u64, leader_id: u16, d: &CombinerDecision) -> String {
    let weights: Vec<String> =
        d.weights.u.iter().map(|w| format!("{:.6e}{:+.6e}j", w.re, w.im)).collect();
    let participants: Vec<String> = d.participants.iter().map(|p| p.to_string()).collect();
    format!(
        "cycle={} leader={} alg={} n_s={} participants=[{}] ber={:.6} weights=[{}]",
        cycle,
        leader_id,
        d.algorithm,
        d.n_s,
        participants.join(","),
        d.combined_ber,
        weights.join(",")
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::frame::build_frame;

    #[test]
    fn ber_basic_cases() {
        assert_eq!(compute_ber(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(
            compute_ber(&[0, 0, 0, 0, 0, 1, 1, 0, 0, 0], &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0]).unwrap(),
            0.2
        );
        assert_eq!(compute_ber(&[1, 1, 1], &[0, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn ber_error_cases() {
        assert!(matches!(compute_ber(&[1], &[1, 0]), Err(SelfHealError::LengthMismatch(1, 2))));
        assert!(matches!(compute_ber(&[], &[]), Err(SelfHealError::EmptyBits)));
    }

    #[test]
    fn classification_cases() {
        let r = classify_receivers(&[0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(r.n_s, 3);
        let r = classify_receivers(&[0.45, 0.02, 0.03], 0.1).unwrap();
        assert_eq!(r.good_set, vec![1, 2]);
        assert_eq!(r.n_s, 2);
        let r = classify_receivers(&[0.5, 0.5, 0.08], 0.1).unwrap();
        assert_eq!(r.n_s, 1);
    }

    #[test]
    fn classification_rejects_bad_threshold() {
        assert!(classify_receivers(&[0.1], 0.0).is_err());
        assert!(classify_receivers(&[0.1], 1.0).is_err());
    }

    #[test]
    fn classification_monotone_in_threshold() {
        let bers = [0.05, 0.12, 0.3, 0.01, 0.5];
        let mut last = 0;
        for theta in [0.02, 0.06, 0.15, 0.35, 0.7] {
            let n_s = classify_receivers(&bers, theta).unwrap().n_s;
            assert!(n_s >= last, "raising theta lowered n_s");
            last = n_s;
        }
    }

    #[test]
    fn algorithm_selection_map() {
        assert_eq!(select_algorithm(3, 3).unwrap(), Algorithm::DMrc);
        assert_eq!(select_algorithm(2, 3).unwrap(), Algorithm::DLmmse);
        assert_eq!(select_algorithm(1, 3).unwrap(), Algorithm::Sc);
        assert_eq!(select_algorithm(0, 3).unwrap(), Algorithm::Sc);
        assert_eq!(select_algorithm(1, 1).unwrap(), Algorithm::Sc);
        assert_eq!(select_algorithm(0, 1).unwrap(), Algorithm::Sc);
    }

    #[test]
    fn algorithm_selection_total() {
        for n in 1..=6usize {
            for n_s in 0..=n {
                select_algorithm(n_s, n).unwrap();
            }
        }
        assert!(select_algorithm(4, 3).is_err());
        assert!(select_algorithm(0, 0).is_err());
    }

    fn clean_share(cfg: &FrameConfig, receiver: u32, payload: &[u8]) -> ReceiverShare {
        let frame = build_frame(payload, cfg).unwrap();
        let pilot_start = cfg.preamble_symbol_count();
        let data_start = pilot_start + cfg.pilot_symbol_count();
        let to32 = |s: &[Complex64]| -> Vec<Complex32> {
            s.iter().map(|c| Complex32::new(c.re as f32, c.im as f32)).collect()
        };
        ReceiverShare {
            receiver,
            detected: true,
            h_eff: Complex32::new(1.0, 0.0),
            noise_var: 0.0,
            pilot_ber: 0.0,
            pilot_syms: to32(&frame[pilot_start..data_start]),
            data_syms: to32(&frame[data_start..]),
            guard: vec![Complex32::new(0.01, 0.0); 32],
            decoded_bits: payload.to_vec(),
            crc_ok: true,
        }
    }

    #[test]
    fn clean_cycle_selects_mrc_with_zero_ber() {
        let cfg = FrameConfig::default();
        let payload: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let shares: Vec<ReceiverShare> =
            (0..3).map(|i| clean_share(&cfg, i, &payload)).collect();
        let out = run_cycle(&shares, 0.1, &CycleMode::Covariance, &cfg).unwrap().unwrap();
        assert_eq!(out.decision.algorithm, Algorithm::DMrc);
        assert_eq!(out.decision.n_s, 3);
        assert_eq!(out.decision.combined_ber, 0.0);
        assert!(out.combined_crc_ok);
        assert_eq!(out.combined_bits, payload);
    }

    #[test]
    fn single_share_collapses_to_selection() {
        let cfg = FrameConfig::default();
        let payload: Vec<u8> = (0..32).map(|i| (i % 3 == 0) as u8).collect();
        let shares = vec![clean_share(&cfg, 2, &payload)];
        let out = run_cycle(&shares, 0.1, &CycleMode::Covariance, &cfg).unwrap().unwrap();
        assert_eq!(out.decision.algorithm, Algorithm::Sc);
        assert_eq!(out.decision.participants, vec![2]);
        assert_eq!(out.combined_bits, payload);
    }

    #[test]
    fn empty_shares_is_noop() {
        let cfg = FrameConfig::default();
        assert!(run_cycle(&[], 0.1, &CycleMode::Covariance, &cfg).unwrap().is_none());
    }

    #[test]
    fn jammed_share_pushes_selection_to_lmmse() {
        let cfg = FrameConfig::default();
        let payload: Vec<u8> = (0..64).map(|i| (i % 2) as u8).collect();
        let mut shares: Vec<ReceiverShare> =
            (0..3).map(|i| clean_share(&cfg, i, &payload)).collect();
        shares[0].pilot_ber = 0.48; // saturated by interference
        let out = run_cycle(&shares, 0.1, &CycleMode::Covariance, &cfg).unwrap().unwrap();
        assert_eq!(out.decision.algorithm, Algorithm::DLmmse);
        assert_eq!(out.decision.n_s, 2);
        // The clean pair dominates, so the combined stream still decodes.
        assert!(out.combined_crc_ok);
    }

    #[test]
    fn decision_line_is_stable() {
        let d = CombinerDecision {
            algorithm: Algorithm::Sc,
            weights: WeightVector {
                u: vec![Complex64::new(1.0, 0.0)],
                algorithm: Algorithm::Sc,
            },
            participants: vec![2],
            n_s: 1,
            combined_ber: 0.015625,
            combined_datarate_kbps: 0.0,
        };
        assert_eq!(
            decision_line(7, 3, &d),
            "cycle=7 leader=3 alg=SC n_s=1 participants=[2] ber=0.015625 \
             weights=[1.000000e0+0.000000e0j]"
        );
    }
}
