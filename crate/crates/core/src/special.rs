//! Log-gamma and digamma for positive arguments.

use crate::error::{GapError, Result};

// Lanczos approximation, g = 7, n = 9 (Godfrey's coefficients).
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(GapError::DomainError(format!(
            "ln_gamma needs x > 0, got {x}"
        )));
    }
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x).
        let refl = std::f64::consts::PI / (std::f64::consts::PI * x).sin();
        return Ok(refl.ln() - ln_gamma(1.0 - x)?);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln())
}

// Asymptotic tail: psi(x) ~ ln x - 1/(2x) - sum B_{2k} / (2k x^{2k}).
const DIGAMMA_TAIL: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// Digamma psi(x) = d/dx ln Gamma(x) for x > 0, accurate to ~1e-13.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(GapError::DomainError(format!(
            "digamma needs x > 0, got {x}"
        )));
    }
    // Shift into the asymptotic regime with psi(x) = psi(x+1) - 1/x.
    let mut shift = 0.0;
    let mut y = x;
    while y < 10.0 {
        shift -= 1.0 / y;
        y += 1.0;
    }
    let inv2 = 1.0 / (y * y);
    let mut tail = 0.0;
    let mut power = inv2;
    for &c in &DIGAMMA_TAIL {
        tail += c * power;
        power *= inv2;
    }
    Ok(shift + y.ln() - 0.5 / y - tail)
}
