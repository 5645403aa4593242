//! Frame assembly and parsing.
//!
//! A frame is two Zadoff-Chu preamble copies, a known pilot field, a 32-bit
//! big-endian payload bit count, the payload, and a CRC-32 over the payload
//! bytes. The pilot field is generated by a fixed 16-bit LFSR (seed 0xACE1,
//! taps 16/14/13/11) so any node can regenerate it.

use num_complex::Complex64;

use super::qpsk::{qpsk_demodulate, qpsk_modulate};
use super::zc::generate_zc_preamble;
use super::{FrameConfig, PhyError};

/// Symbols in the payload-bit-count field (32 bits, QPSK).
pub const LENGTH_FIELD_SYMBOLS: usize = 16;
/// Symbols in the CRC-32 field.
pub const CRC_FIELD_SYMBOLS: usize = 16;

const PILOT_LFSR_SEED: u16 = 0xACE1;

/// CRC-32 (IEEE 802.3): polynomial 0x04C11DB7 in reflected form, init and
/// final xor 0xFFFFFFFF. Check value: crc32(b"123456789") == 0xCBF43926.
pub fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = crc32_table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = (crc >> 8) ^ TABLE[((crc ^ b as u32) & 0xFF) as usize];
    }
    crc ^ 0xFFFF_FFFF
}

const fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

/// Pilot bit sequence: Fibonacci LFSR over x^16+x^14+x^13+x^11+1, emitting the
/// low bit before each shift.
pub fn pilot_bits(cfg: &FrameConfig) -> Vec<u8> {
    let mut lfsr = PILOT_LFSR_SEED;
    (0..cfg.pilot_bits)
        .map(|_| {
            let out = (lfsr & 1) as u8;
            let fb = (lfsr ^ (lfsr >> 2) ^ (lfsr >> 3) ^ (lfsr >> 5)) & 1;
            lfsr = (lfsr >> 1) | (fb << 15);
            out
        })
        .collect()
}

/// The pilot field as QPSK symbols.
pub fn pilot_symbols(cfg: &FrameConfig) -> Vec<Complex64> {
    qpsk_modulate(&pilot_bits(cfg)).expect("pilot_bits is even by config invariant")
}

/// Pack bits (values 0/1) into bytes MSB-first, zero-padding the final byte.
pub fn bits_to_bytes_msb(bits: &[u8]) -> Vec<u8> {
    let mut bytes = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b != 0 {
            bytes[i / 8] |= 1 << (7 - (i % 8));
        }
    }
    bytes
}

fn u32_to_bits_be(v: u32) -> Vec<u8> {
    (0..32).map(|i| ((v >> (31 - i)) & 1) as u8).collect()
}

fn bits_to_u32_be(bits: &[u8]) -> u32 {
    bits.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32)
}

/// Assemble a complete baseband frame for the given payload bits.
pub fn build_frame(payload: &[u8], cfg: &FrameConfig) -> Result<Vec<Complex64>, PhyError> {
    cfg.validate()?;
    if payload.len() > cfg.payload_bits_max {
        return Err(PhyError::OversizePayload { got: payload.len(), max: cfg.payload_bits_max });
    }
    let zc = generate_zc_preamble(cfg.zc_root, cfg.zc_length)?;

    let mut symbols = Vec::with_capacity(cfg.frame_symbol_count(payload.len()));
    symbols.extend_from_slice(&zc);
    symbols.extend_from_slice(&zc);
    symbols.extend_from_slice(&pilot_symbols(cfg));
    symbols.extend(qpsk_modulate(&u32_to_bits_be(payload.len() as u32))?);

    // Pad odd payloads with one zero bit for modulation; the length field
    // records the true bit count so parsing trims it back off.
    if payload.len() % 2 == 0 {
        symbols.extend(qpsk_modulate(payload)?);
    } else {
        let mut padded = payload.to_vec();
        padded.push(0);
        symbols.extend(qpsk_modulate(&padded)?);
    }

    let crc = crc32(&bits_to_bytes_msb(payload));
    symbols.extend(qpsk_modulate(&u32_to_bits_be(crc))?);
    Ok(symbols)
}

/// Parse the data region of a frame (everything after the pilot field).
///
/// `h_eff` is the effective complex gain to equalize by; callers fold the
/// transmit-power scale into it. Returns the payload bits and whether the
/// CRC matched; a failed CRC still returns the (suspect) payload.
pub fn parse_frame(
    symbols: &[Complex64],
    h_eff: Complex64,
    _cfg: &FrameConfig,
) -> Result<(Vec<u8>, bool), PhyError> {
    if symbols.len() < LENGTH_FIELD_SYMBOLS {
        return Err(PhyError::BufferTooShort { need: LENGTH_FIELD_SYMBOLS, have: symbols.len() });
    }
    // Equalization is skipped entirely for a unit gain so that selection
    // combining reproduces the selected receiver's decisions bit for bit.
    let unit = h_eff == Complex64::new(1.0, 0.0);
    let eq = |s: &Complex64| if unit { *s } else { s / h_eff };

    let len_syms: Vec<Complex64> = symbols[..LENGTH_FIELD_SYMBOLS].iter().map(eq).collect();
    let declared = bits_to_u32_be(&qpsk_demodulate(&len_syms)) as usize;

    let payload_syms = declared.div_ceil(2);
    let need = LENGTH_FIELD_SYMBOLS + payload_syms + CRC_FIELD_SYMBOLS;
    if need > symbols.len() {
        return Err(PhyError::TruncatedFrame {
            declared,
            available: (symbols.len() - LENGTH_FIELD_SYMBOLS).saturating_sub(CRC_FIELD_SYMBOLS) * 2,
        });
    }

    let data: Vec<Complex64> = symbols[LENGTH_FIELD_SYMBOLS..LENGTH_FIELD_SYMBOLS + payload_syms]
        .iter()
        .map(eq)
        .collect();
    let mut payload = qpsk_demodulate(&data);
    payload.truncate(declared);

    let crc_syms: Vec<Complex64> = symbols
        [LENGTH_FIELD_SYMBOLS + payload_syms..LENGTH_FIELD_SYMBOLS + payload_syms + CRC_FIELD_SYMBOLS]
        .iter()
        .map(eq)
        .collect();
    let declared_crc = bits_to_u32_be(&qpsk_demodulate(&crc_syms));
    let crc_ok = declared_crc == crc32(&bits_to_bytes_msb(&payload));
    Ok((payload, crc_ok))
}
