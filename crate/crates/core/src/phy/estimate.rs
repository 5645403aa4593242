//! Pilot-based least-squares channel and noise estimation.

use num_complex::Complex64;

use super::frame::{pilot_bits, pilot_symbols};
use super::qpsk::qpsk_demodulate;
use super::{ChannelEstimate, FrameConfig, PhyError};

/// Estimate the channel from the received (compensated) pilot field.
///
/// `h_hat = sum(conj(s)*y) / (sqrt(p_g) * sum(|s|^2))` over the known pilot
/// symbols `s`, so the transmit power is factored out of the estimate. The
/// residual around the fit gives the noise variance; re-demodulating the
/// equalized pilots against the known bits gives the pilot BER.
pub fn estimate_channel(
    rx_pilot: &[Complex64],
    cfg: &FrameConfig,
    p_g: f64,
) -> Result<ChannelEstimate, PhyError> {
    if rx_pilot.is_empty() {
        return Err(PhyError::EmptyPilot);
    }
    let reference = pilot_symbols(cfg);
    let n = rx_pilot.len().min(reference.len());
    let s = &reference[..n];
    let y = &rx_pilot[..n];

    let sqrt_pg = p_g.sqrt();
    let num: Complex64 = s.iter().zip(y).map(|(si, yi)| si.conj() * yi).sum();
    let den: f64 = s.iter().map(|si| si.norm_sqr()).sum();
    let h_hat = num / (sqrt_pg * den);

    let noise_var_hat = s
        .iter()
        .zip(y)
        .map(|(si, yi)| (yi - sqrt_pg * h_hat * si).norm_sqr())
        .sum::<f64>()
        / n as f64;

    let gain = sqrt_pg * h_hat;
    let pilot_ber = if gain.norm_sqr() > 0.0 {
        let eq: Vec<Complex64> = y.iter().map(|yi| yi / gain).collect();
        let got = qpsk_demodulate(&eq);
        let want = pilot_bits(cfg);
        let wrong = got.iter().zip(want.iter()).filter(|(a, b)| a != b).count();
        wrong as f64 / want.len().min(got.len()) as f64
    } else {
        0.5
    };

    Ok(ChannelEstimate { h_hat, noise_var_hat, pilot_ber })
}
