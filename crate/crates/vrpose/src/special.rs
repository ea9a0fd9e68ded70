//! Special-function kernel: log-factorials and the confluent hypergeometric
//! function 1F1 for positive integer parameters.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const LN_FACT_TABLE_SIZE: usize = 512;

fn ln_fact_table() -> &'static [f64; LN_FACT_TABLE_SIZE] {
    static TABLE: OnceLock<[f64; LN_FACT_TABLE_SIZE]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0f64; LN_FACT_TABLE_SIZE];
        let mut acc = 0.0f64;
        for (n, slot) in t.iter_mut().enumerate().skip(1) {
            acc += (n as f64).ln();
            *slot = acc;
        }
        t
    })
}

/// ln(n!) by cumulative summation; exact to f64 rounding for the index
/// range used by the moment series (Stirling fallback beyond the table).
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) < LN_FACT_TABLE_SIZE {
        ln_fact_table()[n as usize]
    } else {
        // Stirling series; only reachable far outside the spec'd k/n caps.
        let x = n as f64 + 1.0;
        (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
    }
}

/// ln C(n, k).
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    assert!(k <= n, "binomial with k > n");
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

const MAX_SERIES_TERMS: usize = 10_000;

/// Kummer series for 1F1(a; b; z) with z >= 0: all terms are positive, so
/// the sum is cancellation-free.
fn hyp1f1_series(a: f64, b: f64, z: f64) -> Result<f64> {
    debug_assert!(z >= 0.0);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 0..MAX_SERIES_TERMS {
        let kf = k as f64;
        term *= (a + kf) * z / ((b + kf) * (kf + 1.0));
        sum += term;
        if term < sum * 1e-17 {
            return Ok(sum);
        }
    }
    Err(Error::convergence(format!(
        "1F1({a}; {b}; {z}) series did not converge in {MAX_SERIES_TERMS} terms"
    )))
}

/// Confluent hypergeometric function of the first kind, 1F1(n; m; z), for
/// positive integers m >= n >= 1. Negative arguments are routed through the
/// Kummer transform 1F1(a;b;z) = e^z 1F1(b-a;b;-z) so every summed term
/// stays positive.
pub fn hyp1f1(n: u32, m: u32, z: f64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::domain(format!(
            "hyp1f1 requires positive integer parameters, got n={n}, m={m}"
        )));
    }
    if !z.is_finite() {
        return Err(Error::domain(format!("hyp1f1 argument must be finite, got {z}")));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    if z > 0.0 {
        hyp1f1_series(n as f64, m as f64, z)
    } else {
        // 1F1(n; m; z) = e^z * 1F1(m - n; m; -z)
        if m < n {
            return Err(Error::domain(format!(
                "hyp1f1 Kummer transform requires m >= n, got n={n}, m={m}"
            )));
        }
        let transformed = if m == n {
            1.0
        } else {
            hyp1f1_series((m - n) as f64, m as f64, -z)?
        };
        Ok(z.exp() * transformed)
    }
}

/// Same as [`hyp1f1`] but returning ln of the value, for use inside
/// log-space products. The value is always positive for our parameter range.
pub fn ln_hyp1f1(n: u32, m: u32, z: f64) -> Result<f64> {
    if z <= 0.0 {
        // e^z * series(positive terms): take logs to dodge underflow of e^z.
        if n == 0 || m == 0 {
            return Err(Error::domain(format!(
                "hyp1f1 requires positive integer parameters, got n={n}, m={m}"
            )));
        }
        if m < n {
            return Err(Error::domain(format!(
                "hyp1f1 Kummer transform requires m >= n, got n={n}, m={m}"
            )));
        }
        let series = if m == n || z == 0.0 {
            1.0
        } else {
            hyp1f1_series((m - n) as f64, m as f64, -z)?
        };
        Ok(z + series.ln())
    } else {
        Ok(hyp1f1(n, m, z)?.ln())
    }
}
