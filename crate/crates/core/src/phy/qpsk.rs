//! Gray-mapped QPSK at unit average power.
//!
//! Bit pair (b0, b1) maps to ((1-2*b0) + j*(1-2*b1))/sqrt(2). Hard decisions
//! are per-quadrant with the tie-break that a component >= 0 decodes to bit 0,
//! so decisions are deterministic on axis-exact symbols.

use num_complex::Complex64;
use std::f64::consts::FRAC_1_SQRT_2;

use super::PhyError;

/// Map an even-length bit sequence to QPSK symbols.
pub fn qpsk_modulate(bits: &[u8]) -> Result<Vec<Complex64>, PhyError> {
    if bits.len() % 2 != 0 {
        return Err(PhyError::OddBitCount(bits.len()));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|pair| {
            let re = if pair[0] == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            let im = if pair[1] == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
            Complex64::new(re, im)
        })
        .collect())
}

/// Hard-decide QPSK symbols back to bits, two per symbol.
pub fn qpsk_demodulate(symbols: &[Complex64]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 2);
    for s in symbols {
        bits.push(if s.re >= 0.0 { 0 } else { 1 });
        bits.push(if s.im >= 0.0 { 0 } else { 1 });
    }
    bits
}
