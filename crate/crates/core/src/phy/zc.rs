//! Zadoff-Chu preamble sequences.
//!
//! For odd length L and root r coprime with L, `x[n] = exp(-j*pi*r*n*(n+1)/L)`
//! has unit amplitude at every sample and a cyclic autocorrelation that is
//! exactly zero at every nonzero lag, which makes the correlation peak at the
//! true frame start unambiguous.

use num_complex::Complex64;
use std::f64::consts::PI;

use super::PhyError;

/// Generate a Zadoff-Chu sequence of the given root and odd length.
pub fn generate_zc_preamble(root: usize, length: usize) -> Result<Vec<Complex64>, PhyError> {
    if length == 0 || length % 2 == 0 {
        return Err(PhyError::InvalidConfig(format!("zc length {length} must be odd")));
    }
    if gcd(root, length) != 1 {
        return Err(PhyError::InvalidConfig(format!(
            "zc root {root} not coprime with length {length}"
        )));
    }
    // Reduce the quadratic phase index modulo 2L before converting to
    // radians; the products stay exact in integer arithmetic, so the phase
    // never loses precision to large arguments.
    let two_l = 2 * length as u64;
    Ok((0..length as u64)
        .map(|n| {
            let idx = (root as u64 * n * (n + 1)) % two_l;
            Complex64::from_polar(1.0, -PI * idx as f64 / length as f64)
        })
        .collect())
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = b;
        b = a % b;
        a = t;
    }
    a
}
