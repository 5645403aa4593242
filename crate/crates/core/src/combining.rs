//! Diversity combining: MRC, LMMSE, and selection weights, weight
//! application, and SNR/SINR evaluation.
//!
//! Weights are applied as the conjugated inner product
//! `y[k] = sum_i conj(u_i) * row_i[k]`, under which the MRC optimum is simply
//! `u = h`. The combined stream is normalized by `sum_i conj(u_i)*h_i` so a
//! clean symbol maps to itself and hard decisions are independent of weight
//! scale.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CombiningError {
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("covariance needs at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("matrix not Hermitian within tolerance")]
    NotHermitian,
    #[error("singular matrix")]
    Singular,
}

/// Which combining algorithm produced a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    DMrc,
    DLmmse,
    Sc,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::DMrc => "dMRC",
            Algorithm::DLmmse => "dLMMSE",
            Algorithm::Sc => "SC",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Combining weights for N receiver branches.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub u: Vec<Complex64>,
    pub algorithm: Algorithm,
}

/// Stacked per-receiver data plus the channel knowledge needed to combine it.
#[derive(Debug, Clone)]
pub struct ReceiverStack {
    /// Aligned symbol sequences, one row per receiver, equal lengths.
    pub rows: Vec<Vec<Complex64>>,
    /// Effective complex channel gain per row (what a clean symbol was
    /// multiplied by on its way in).
    pub h: Vec<Complex64>,
}

impl ReceiverStack {
    pub fn validate(&self) -> Result<(), CombiningError> {
        if self.rows.is_empty() {
            return Err(CombiningError::Empty("no rows".into()));
        }
        if self.h.len() != self.rows.len() {
            return Err(CombiningError::ShapeMismatch(format!(
                "{} rows but {} channel estimates",
                self.rows.len(),
                self.h.len()
            )));
        }
        let len = self.rows[0].len();
        if self.rows.iter().any(|r| r.len() != len) {
            return Err(CombiningError::ShapeMismatch("rows differ in length".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Small dense complex matrices
// ---------------------------------------------------------------------------

/// Dense N x N complex matrix, row-major. Small: covariance and LMMSE solves
/// over a handful of receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub n: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn hermitian_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn trace_re(&self) -> f64 {
        (0..self.n).map(|i| self[(i, i)].re).sum()
    }

    /// Solve `A x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[Complex64]) -> Result<Vec<Complex64>, CombiningError> {
        let n = self.n;
        if b.len() != n {
            return Err(CombiningError::ShapeMismatch(format!(
                "matrix is {n}x{n} but rhs has {} entries",
                b.len()
            )));
        }
        let mut a = self.data.clone();
        let mut x = b.to_vec();
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&p, &q| {
                    a[p * n + col]
                        .norm_sqr()
                        .partial_cmp(&a[q * n + col].norm_sqr())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap();
            if a[pivot_row * n + col].norm_sqr() < 1e-300 {
                return Err(CombiningError::Singular);
            }
            if pivot_row != col {
                for j in 0..n {
                    a.swap(col * n + j, pivot_row * n + j);
                }
                x.swap(col, pivot_row);
            }
            let pivot = a[col * n + col];
            for row in col + 1..n {
                let factor = a[row * n + col] / pivot;
                if factor.norm_sqr() == 0.0 {
                    continue;
                }
                for j in col..n {
                    let v = a[col * n + j];
                    a[row * n + j] -= factor * v;
                }
                let xv = x[col];
                x[row] -= factor * xv;
            }
        }
        for col in (0..n).rev() {
            let mut acc = x[col];
            for j in col + 1..n {
                acc -= a[col * n + j] * x[j];
            }
            x[col] = acc / a[col * n + col];
        }
        Ok(x)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.n + j]
    }
}

// ---------------------------------------------------------------------------
// Weight computation
// ---------------------------------------------------------------------------

fn check_finite(label: &str, values: &[Complex64]) -> Result<(), CombiningError> {
    for v in values {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(CombiningError::NonFinite(label.into()));
        }
    }
    Ok(())
}

/// Maximal-ratio weights: `u = h`.
pub fn mrc_weights(h: &[Complex64]) -> Result<WeightVector, CombiningError> {
    if h.is_empty() {
        return Err(CombiningError::Empty("channel vector".into()));
    }
    check_finite("channel gains", h)?;
    if h.iter().all(|v| v.norm_sqr() == 0.0) {
        return Err(CombiningError::DegenerateChannel("all channel gains are zero".into()));
    }
    Ok(WeightVector { u: h.to_vec(), algorithm: Algorithm::DMrc })
}

/// LMMSE weights from explicit interference knowledge:
/// `u = p_g * inv(p_g*h*h^H + p_j*h_j*h_j^H + sigma2*I) * h`.
pub fn lmmse_weights(
    h: &[Complex64],
    h_j: &[Complex64],
    p_g: f64,
    p_j: f64,
    sigma2: f64,
) -> Result<WeightVector, CombiningError> {
    let n = h.len();
    if n == 0 {
        return Err(CombiningError::Empty("channel vector".into()));
    }
    if h_j.len() != n {
        return Err(CombiningError::ShapeMismatch(format!(
            "h has {n} entries, h_j has {}",
            h_j.len()
        )));
    }
    check_finite("channel gains", h)?;
    check_finite("jammer gains", h_j)?;
    if !p_g.is_finite() || !p_j.is_finite() || !sigma2.is_finite() || sigma2 <= 0.0 {
        return Err(CombiningError::NonFinite(format!(
            "powers p_g={p_g} p_j={p_j} sigma2={sigma2}"
        )));
    }
    let mut a = CMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = p_g * h[i] * h[j].conj() + p_j * h_j[i] * h_j[j].conj();
        }
        a[(i, i)] += sigma2;
    }
    let rhs: Vec<Complex64> = h.iter().map(|&hi| p_g * hi).collect();
    let u = a.solve(&rhs)?;
    Ok(WeightVector { u, algorithm: Algorithm::DLmmse })
}

/// LMMSE weights from an estimated interference-plus-noise covariance:
/// `u = inv(R_in) * h`. Collinear with the explicit form (the rank-one signal
/// term only rescales the solution along the same direction), so it yields
/// the same SINR and the same decisions.
pub fn lmmse_weights_from_cov(
    h: &[Complex64],
    r_in: &CMatrix,
) -> Result<WeightVector, CombiningError> {
    if h.is_empty() {
        return Err(CombiningError::Empty("channel vector".into()));
    }
    if r_in.n != h.len() {
        return Err(CombiningError::ShapeMismatch(format!(
            "covariance is {0}x{0} but h has {1} entries",
            r_in.n,
            h.len()
        )));
    }
    check_finite("channel gains", h)?;
    if r_in.hermitian_error() > 1e-10 * r_in.trace_re().abs().max(1.0) {
        return Err(CombiningError::NotHermitian);
    }
    let u = r_in.solve(h)?;
    Ok(WeightVector { u, algorithm: Algorithm::DLmmse })
}

/// Selection weights: one-hot on the receiver with the best (lowest) quality
/// metric within `good_set`, or over all receivers if the set is empty. Ties
/// break toward the lowest index.
pub fn sc_weights(quality: &[f64], good_set: &[usize]) -> Result<WeightVector, CombiningError> {
    if quality.is_empty() {
        return Err(CombiningError::Empty("quality metrics".into()));
    }
    let candidates: Vec<usize> = if good_set.is_empty() {
        (0..quality.len()).collect()
    } else {
        good_set.to_vec()
    };
    let mut best = candidates[0];
    for &i in &candidates[1..] {
        if quality[i] < quality[best] {
            best = i;
        }
    }
    let mut u = vec![Complex64::new(0.0, 0.0); quality.len()];
    u[best] = Complex64::new(1.0, 0.0);
    Ok(WeightVector { u, algorithm: Algorithm::Sc })
}

/// Index of the one-hot entry in a selection weight vector.
pub fn selected_index(w: &WeightVector) -> Option<usize> {
    w.u.iter().position(|v| v.norm_sqr() > 0.0)
}

// ---------------------------------------------------------------------------
// Application and evaluation
// ---------------------------------------------------------------------------

/// Apply weights and normalize to unit gain:
/// `y[k] = sum_i conj(u_i)*row_i[k] / sum_i conj(u_i)*h_i`.
pub fn combine(stack: &ReceiverStack, w: &WeightVector) -> Result<Vec<Complex64>, CombiningError> {
    stack.validate()?;
    if w.u.len() != stack.rows.len() {
        return Err(CombiningError::ShapeMismatch(format!(
            "{} weights for {} rows",
            w.u.len(),
            stack.rows.len()
        )));
    }
    let gain: Complex64 = w.u.iter().zip(&stack.h).map(|(u, h)| u.conj() * h).sum();
    if gain.norm_sqr() < 1e-300 {
        return Err(CombiningError::DegenerateChannel(
            "combined gain u^H h is zero".into(),
        ));
    }
    let len = stack.rows[0].len();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (u, row) in w.u.iter().zip(&stack.rows) {
        if u.norm_sqr() == 0.0 {
            continue;
        }
        let cu = u.conj();
        for (o, &s) in out.iter_mut().zip(row.iter()) {
            *o += cu * s;
        }
    }
    for o in &mut out {
        *o /= gain;
    }
    Ok(out)
}

/// Output SNR of a weight vector under AWGN:
/// `p_g*|u^H h|^2 / (sigma2*sum|u_i|^2)`.
pub fn snr(u: &[Complex64], h: &[Complex64], p_g: f64, sigma2: f64) -> Result<f64, CombiningError> {
    let u_norm2: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    if u_norm2 == 0.0 {
        return Err(CombiningError::DegenerateChannel("zero weight vector".into()));
    }
    if u.len() != h.len() {
        return Err(CombiningError::ShapeMismatch(format!(
            "{} weights for {} gains",
            u.len(),
            h.len()
        )));
    }
    let coherent: Complex64 = u.iter().zip(h).map(|(ui, hi)| ui.conj() * hi).sum();
    Ok(p_g * coherent.norm_sqr() / (sigma2 * u_norm2))
}

/// Output SINR of a weight vector with a single jammer:
/// `p_g*|u^H h|^2 / (sigma2*sum|u_i|^2 + p_j*|u^H h_j|^2)`.
pub fn sinr(
    u: &[Complex64],
    h: &[Complex64],
    h_j: &[Complex64],
    p_g: f64,
    p_j: f64,
    sigma2: f64,
) -> Result<f64, CombiningError> {
    let u_norm2: f64 = u.iter().map(|v| v.norm_sqr()).sum();
    if u_norm2 == 0.0 {
        return Err(CombiningError::DegenerateChannel("zero weight vector".into()));
    }
    if u.len() != h.len() || u.len() != h_j.len() {
        return Err(CombiningError::ShapeMismatch(format!(
            "weights {}, gains {}, jammer gains {}",
            u.len(),
            h.len(),
            h_j.len()
        )));
    }
    let sig: Complex64 = u.iter().zip(h).map(|(ui, hi)| ui.conj() * hi).sum();
    let jam: Complex64 = u.iter().zip(h_j).map(|(ui, hi)| ui.conj() * hi).sum();
    Ok(p_g * sig.norm_sqr() / (sigma2 * u_norm2 + p_j * jam.norm_sqr()))
}

/// Sample covariance of per-receiver rows captured during signal-free gaps,
/// diagonally loaded by `1e-6 * trace / N` to keep short windows invertible.
pub fn interference_covariance(guards: &[Vec<Complex64>]) -> Result<CMatrix, CombiningError> {
    let n = guards.len();
    if n == 0 {
        return Err(CombiningError::Empty("guard rows".into()));
    }
    let k = guards[0].len();
    if guards.iter().any(|g| g.len() != k) {
        return Err(CombiningError::ShapeMismatch("guard rows differ in length".into()));
    }
    if k < n {
        return Err(CombiningError::TooFewSamples { need: n, got: k });
    }
    let mut r = CMatrix::zeros(n);
    for t in 0..k {
        for i in 0..n {
            for j in i..n {
                let v = guards[i][t] * guards[j][t].conj();
                r[(i, j)] += v;
            }
        }
    }
    let scale = 1.0 / k as f64;
    for i in 0..n {
        for j in i..n {
            r[(i, j)] *= scale;
            if i != j {
                r[(j, i)] = r[(i, j)].conj();
            } else {
                r[(i, j)].im = 0.0;
            }
        }
    }
    let eps = 1e-6 * r.trace_re() / n as f64;
    for i in 0..n {
        r[(i, i)] += eps.max(0.0);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_unit_weights(rng: &mut impl Rng, n: usize) -> Vec<Complex64> {
        let dist = Normal::new(0.0, 1.0).unwrap();
        let mut v: Vec<Complex64> =
            (0..n).map(|_| c(dist.sample(rng), dist.sample(rng))).collect();
        let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        v
    }

    // ── MRC ──

    #[test]
    fn mrc_single_branch() {
        let w = mrc_weights(&[c(1.0, 0.0)]).unwrap();
        assert_eq!(w.u, vec![c(1.0, 0.0)]);
        assert_eq!(w.algorithm, Algorithm::DMrc);
    }

    #[test]
    fn mrc_matched_filter_bound() {
        let h = [c(1.0, 0.0), c(0.0, 1.0)];
        let w = mrc_weights(&h).unwrap();
        let s = snr(&w.u, &h, 1.0, 0.5).unwrap();
        assert!((s - 4.0).abs() < 1e-12, "snr {s}");
    }

    #[test]
    fn mrc_all_zero_rejected() {
        assert!(matches!(
            mrc_weights(&[c(0.0, 0.0), c(0.0, 0.0)]),
            Err(CombiningError::DegenerateChannel(_))
        ));
    }

    #[test]
    fn mrc_maximal_over_random_candidates() {
        // Random-sampling maximality oracle.
        let mut rng = seeds::rng_from(2024);
        let dist = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let h: Vec<Complex64> =
                (0..n).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect();
            let p_g = rng.gen_range(0.1..10.0);
            let sigma2 = rng.gen_range(0.01..2.0);
            let w = mrc_weights(&h).unwrap();
            let best = snr(&w.u, &h, p_g, sigma2).unwrap();
            for _ in 0..100 {
                let v = random_unit_weights(&mut rng, n);
                let s = snr(&v, &h, p_g, sigma2).unwrap();
                assert!(best >= s - 1e-9, "candidate beats MRC: {s} > {best}");
            }
        }
    }

    // ── LMMSE ──

    #[test]
    fn lmmse_worked_two_branch_example() {
        // Independent oracle: invert [[3,1],[1,2]] by adjugate/determinant.
        let h = [c(1.0, 0.0), c(1.0, 0.0)];
        let h_j = [c(1.0, 0.0), c(0.0, 0.0)];
        let (p_g, p_j, sigma2) = (1.0, 1.0, 1.0);

        let det = 3.0 * 2.0 - 1.0 * 1.0;
        let inv = [[2.0 / det, -1.0 / det], [-1.0 / det, 3.0 / det]];
        let oracle = [
            c(p_g * (inv[0][0] + inv[0][1]), 0.0),
            c(p_g * (inv[1][0] + inv[1][1]), 0.0),
        ];
        assert!((oracle[0] - c(0.2, 0.0)).norm() < 1e-15);
        assert!((oracle[1] - c(0.4, 0.0)).norm() < 1e-15);

        let w = lmmse_weights(&h, &h_j, p_g, p_j, sigma2).unwrap();
        assert!((w.u[0] - oracle[0]).norm() < 1e-12, "{:?}", w.u);
        assert!((w.u[1] - oracle[1]).norm() < 1e-12, "{:?}", w.u);

        let s = sinr(&w.u, &h, &h_j, p_g, p_j, sigma2).unwrap();
        assert!((s - 1.5).abs() < 1e-12, "sinr {s}");

        // MRC on the same channel does worse: 4/3.
        let mrc = mrc_weights(&h).unwrap();
        let s_mrc = sinr(&mrc.u, &h, &h_j, p_g, p_j, sigma2).unwrap();
        assert!((s_mrc - 4.0 / 3.0).abs() < 1e-12, "mrc sinr {s_mrc}");
        assert!(s > s_mrc);
    }

    #[test]
    fn lmmse_collapses_to_mrc_without_jammer() {
        let mut rng = seeds::rng_from(31);
        let dist = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..100 {
            let n = rng.gen_range(1..=5);
            let h: Vec<Complex64> =
                (0..n).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect();
            let h_j = vec![c(0.0, 0.0); n];
            let p_g = rng.gen_range(0.1..10.0);
            let sigma2 = rng.gen_range(0.01..2.0);
            let w = lmmse_weights(&h, &h_j, p_g, 0.0, sigma2).unwrap();
            let m = mrc_weights(&h).unwrap();
            // Cosine similarity between the weight vectors.
            let dot: Complex64 = w.u.iter().zip(&m.u).map(|(a, b)| a.conj() * b).sum();
            let na: f64 = w.u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let nb: f64 = m.u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let cos = dot.norm() / (na * nb);
            assert!(cos >= 1.0 - 1e-9, "cosine {cos}");
            let s_l = snr(&w.u, &h, p_g, sigma2).unwrap();
            let s_m = snr(&m.u, &h, p_g, sigma2).unwrap();
            assert!((s_l - s_m).abs() < 1e-9 * s_m.max(1.0));
        }
    }

    #[test]
    fn lmmse_beats_mrc_and_random_under_jamming() {
        let mut rng = seeds::rng_from(77);
        let dist = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..100 {
            let n = rng.gen_range(2..=5);
            let h: Vec<Complex64> =
                (0..n).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect();
            let h_j: Vec<Complex64> =
                (0..n).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect();
            let p_g = rng.gen_range(0.1..5.0);
            let p_j = rng.gen_range(0.1..5.0);
            let sigma2 = rng.gen_range(0.01..1.0);
            let w = lmmse_weights(&h, &h_j, p_g, p_j, sigma2).unwrap();
            let s_l = sinr(&w.u, &h, &h_j, p_g, p_j, sigma2).unwrap();
            let m = mrc_weights(&h).unwrap();
            let s_m = sinr(&m.u, &h, &h_j, p_g, p_j, sigma2).unwrap();
            assert!(s_l >= s_m - 1e-9, "lmmse {s_l} < mrc {s_m}");
            for _ in 0..50 {
                let v = random_unit_weights(&mut rng, n);
                let s = sinr(&v, &h, &h_j, p_g, p_j, sigma2).unwrap();
                assert!(s_l >= s - 1e-9, "random candidate beats lmmse: {s} > {s_l}");
            }
        }
    }

    #[test]
    fn lmmse_cov_collinear_with_explicit() {
        let h = [c(0.9, 0.2), c(0.3, -0.5), c(1.2, 0.0)];
        let h_j = [c(2.0, 0.0), c(0.5, 0.5), c(0.1, 0.0)];
        let (p_g, p_j, sigma2) = (2.0, 3.0, 0.2);
        let explicit = lmmse_weights(&h, &h_j, p_g, p_j, sigma2).unwrap();
        let mut r = CMatrix::zeros(3);
        for i in 0..3 {
            for j in 0..3 {
                r[(i, j)] = p_j * h_j[i] * h_j[j].conj();
            }
            r[(i, i)] += sigma2;
        }
        let cov = lmmse_weights_from_cov(&h, &r).unwrap();
        let dot: Complex64 = explicit.u.iter().zip(&cov.u).map(|(a, b)| a.conj() * b).sum();
        let na: f64 = explicit.u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let nb: f64 = cov.u.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!(dot.norm() / (na * nb) >= 1.0 - 1e-9);
    }

    #[test]
    fn lmmse_rejects_bad_sigma() {
        let h = [c(1.0, 0.0)];
        assert!(lmmse_weights(&h, &h, 1.0, 1.0, 0.0).is_err());
        assert!(lmmse_weights(&h, &h, 1.0, 1.0, f64::NAN).is_err());
    }

    // ── SC ──

    #[test]
    fn sc_picks_lowest_ber() {
        let w = sc_weights(&[0.4, 0.01, 0.3], &[0, 1, 2]).unwrap();
        assert_eq!(w.u, vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(selected_index(&w), Some(1));
    }

    #[test]
    fn sc_single_receiver() {
        let w = sc_weights(&[0.2], &[0]).unwrap();
        assert_eq!(w.u, vec![c(1.0, 0.0)]);
    }

    #[test]
    fn sc_tie_breaks_low_index() {
        let w = sc_weights(&[0.1, 0.1], &[0, 1]).unwrap();
        assert_eq!(selected_index(&w), Some(0));
    }

    #[test]
    fn sc_empty_good_set_falls_back_to_global_min() {
        let w = sc_weights(&[0.5, 0.45, 0.48], &[]).unwrap();
        assert_eq!(selected_index(&w), Some(1));
    }

    #[test]
    fn sc_empty_quality_rejected() {
        assert!(sc_weights(&[], &[]).is_err());
    }

    // ── combine ──

    #[test]
    fn combine_identity_single_row() {
        let stack = ReceiverStack {
            rows: vec![vec![c(0.3, 0.4), c(-1.0, 0.1)]],
            h: vec![c(1.0, 0.0)],
        };
        let w = WeightVector { u: vec![c(1.0, 0.0)], algorithm: Algorithm::Sc };
        let y = combine(&stack, &w).unwrap();
        assert_eq!(y, stack.rows[0]);
    }

    #[test]
    fn combine_selection_equalizes_by_own_gain() {
        let h2 = c(0.5, 0.5);
        let sym = c(1.0, -1.0);
        let stack = ReceiverStack {
            rows: vec![vec![c(9.0, 9.0)], vec![c(9.0, 9.0)], vec![h2 * sym]],
            h: vec![c(1.0, 0.0), c(1.0, 0.0), h2],
        };
        let w = WeightVector {
            u: vec![c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            algorithm: Algorithm::Sc,
        };
        let y = combine(&stack, &w).unwrap();
        assert!((y[0] - sym).norm() < 1e-12);
    }

    #[test]
    fn combine_coherent_sum_recovers_symbol() {
        let h = [c(1.0, 0.0), c(0.0, 1.0)];
        let s = c(0.6, -0.2);
        let stack = ReceiverStack {
            rows: vec![vec![h[0] * s], vec![h[1] * s]],
            h: h.to_vec(),
        };
        let w = mrc_weights(&h).unwrap();
        let y = combine(&stack, &w).unwrap();
        assert!((y[0] - s).norm() < 1e-12);
    }

    #[test]
    fn combine_invariant_under_weight_scaling() {
        let h = [c(0.8, 0.1), c(0.2, -0.6)];
        let stack = ReceiverStack {
            rows: vec![vec![c(1.0, 2.0), c(-0.5, 0.3)], vec![c(0.1, 0.2), c(0.7, -0.7)]],
            h: h.to_vec(),
        };
        let w = mrc_weights(&h).unwrap();
        let y1 = combine(&stack, &w).unwrap();
        let alpha = c(-2.5, 1.5);
        let w2 = WeightVector {
            u: w.u.iter().map(|x| alpha * x).collect(),
            algorithm: w.algorithm,
        };
        let y2 = combine(&stack, &w2).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn combine_degenerate_gain_rejected() {
        let stack = ReceiverStack {
            rows: vec![vec![c(1.0, 0.0)]],
            h: vec![c(0.0, 0.0)],
        };
        let w = WeightVector { u: vec![c(1.0, 0.0)], algorithm: Algorithm::Sc };
        assert!(matches!(combine(&stack, &w), Err(CombiningError::DegenerateChannel(_))));
    }

    // ── snr / sinr ──

    #[test]
    fn snr_unit_case() {
        let s = snr(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 1.0, 1.0).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn snr_direct_evaluation() {
        let u = [c(1.0, 0.0), c(1.0, 0.0)];
        let s = snr(&u, &u, 2.0, 0.5).unwrap();
        assert!((s - 8.0).abs() < 1e-12);
    }

    #[test]
    fn snr_scale_invariant() {
        let mut rng = seeds::rng_from(4);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let h: Vec<Complex64> =
            (0..4).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect();
        let u: Vec<Complex64> =
            (0..4).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect();
        let base = snr(&u, &h, 1.3, 0.4).unwrap();
        let alpha = c(0.3, -2.0);
        let scaled: Vec<Complex64> = u.iter().map(|x| alpha * x).collect();
        let s = snr(&scaled, &h, 1.3, 0.4).unwrap();
        assert!((s - base).abs() < 1e-12 * base.max(1.0));
    }

    #[test]
    fn sinr_degenerates_to_snr_without_jammer() {
        let u = [c(0.5, 0.5), c(-0.2, 0.9)];
        let h = [c(1.0, -1.0), c(0.3, 0.3)];
        let h_j = [c(0.7, 0.0), c(0.0, 0.7)];
        let a = sinr(&u, &h, &h_j, 2.0, 0.0, 0.3).unwrap();
        let b = snr(&u, &h, 2.0, 0.3).unwrap();
        assert!((a - b).abs() < 1e-12 * b.max(1.0));
    }

    #[test]
    fn sinr_nulls_orthogonal_jammer() {
        let u = [c(0.0, 0.0), c(1.0, 0.0)];
        let h = [c(1.0, 0.0), c(1.0, 0.0)];
        let h_j = [c(1.0, 0.0), c(0.0, 0.0)];
        let with_jam = sinr(&u, &h, &h_j, 1.0, 100.0, 1.0).unwrap();
        let without = sinr(&u, &h, &h_j, 1.0, 0.0, 1.0).unwrap();
        assert!((with_jam - without).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_rejected() {
        let z = [c(0.0, 0.0)];
        let h = [c(1.0, 0.0)];
        assert!(snr(&z, &h, 1.0, 1.0).is_err());
        assert!(sinr(&z, &h, &h, 1.0, 1.0, 1.0).is_err());
    }

    // ── interference covariance ──

    #[test]
    fn covariance_of_white_noise_is_identity() {
        let mut rng = seeds::rng_from(501);
        let dist = Normal::new(0.0, (0.5f64).sqrt()).unwrap();
        let k = 100_000;
        let guards: Vec<Vec<Complex64>> = (0..2)
            .map(|_| (0..k).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect())
            .collect();
        let r = interference_covariance(&guards).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (r[(i, j)].norm() - want).abs() < 0.02,
                    "R[{i}{j}] = {}",
                    r[(i, j)]
                );
            }
        }
    }

    #[test]
    fn covariance_empty_guard_rejected() {
        assert!(interference_covariance(&[]).is_err());
        let short: Vec<Vec<Complex64>> = vec![vec![], vec![]];
        assert!(matches!(
            interference_covariance(&short),
            Err(CombiningError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn covariance_single_receiver_jammer_uncorrelated_branch() {
        // Tone jammer on receiver 1 only; receiver 2 sees pure noise. The
        // off-diagonal entry should vanish relative to the diagonal.
        let mut rng = seeds::rng_from(88);
        let dist = Normal::new(0.0, (0.05f64).sqrt()).unwrap();
        let k = 50_000;
        let mut g1 = Vec::with_capacity(k);
        let mut g2 = Vec::with_capacity(k);
        for t in 0..k {
            let tone = Complex64::from_polar(1.0, std::f64::consts::TAU * 0.07 * t as f64);
            g1.push(tone + c(dist.sample(&mut rng), dist.sample(&mut rng)));
            g2.push(c(dist.sample(&mut rng), dist.sample(&mut rng)));
        }
        let r = interference_covariance(&[g1, g2]).unwrap();
        let diag = r[(0, 0)].re;
        assert!(r[(0, 1)].norm() <= 0.02 * diag, "off-diag {} vs diag {diag}", r[(0, 1)]);
    }

    #[test]
    fn covariance_is_hermitian_and_loaded() {
        let mut rng = seeds::rng_from(9);
        let dist = Normal::new(0.0, 1.0).unwrap();
        let guards: Vec<Vec<Complex64>> = (0..3)
            .map(|_| (0..64).map(|_| c(dist.sample(&mut rng), dist.sample(&mut rng))).collect())
            .collect();
        let r = interference_covariance(&guards).unwrap();
        assert!(r.hermitian_error() < 1e-12);
        // Diagonal loading keeps it solvable even for rank-deficient guards.
        let ones = vec![c(1.0, 0.0); 3];
        r.solve(&ones).unwrap();
    }

    #[test]
    fn solve_matches_known_inverse() {
        let mut a = CMatrix::zeros(2);
        a[(0, 0)] = c(3.0, 0.0);
        a[(0, 1)] = c(1.0, 0.0);
        a[(1, 0)] = c(1.0, 0.0);
        a[(1, 1)] = c(2.0, 0.0);
        let x = a.solve(&[c(1.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert!((x[0] - c(0.2, 0.0)).norm() < 1e-14);
        assert!((x[1] - c(0.4, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn n1_collapse_identical_outputs() {
        let h = vec![c(0.7, -0.4)];
        let rows = vec![vec![c(1.0, 1.0), c(-0.3, 0.2), c(0.0, -2.0)]];
        let stack = ReceiverStack { rows, h: h.clone() };

        let y_mrc = combine(&stack, &mrc_weights(&h).unwrap()).unwrap();
        let y_sc = combine(&stack, &sc_weights(&[0.0], &[0]).unwrap()).unwrap();
        let w_lmmse = lmmse_weights(&h, &[c(0.0, 0.0)], 1.0, 0.0, 0.1).unwrap();
        let y_lmmse = combine(&stack, &w_lmmse).unwrap();

        for i in 0..3 {
            assert!((y_mrc[i] - y_sc[i]).norm() < 1e-12);
            assert!((y_mrc[i] - y_lmmse[i]).norm() < 1e-12);
        }
    }
}
