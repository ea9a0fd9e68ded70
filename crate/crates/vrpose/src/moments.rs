//! Closed-form moments of the squared viewport displacement over a window,
//! the flight-interval probability, and the displacement MGF.
//!
//! All factorial/binomial/power products are accumulated in log space and
//! exponentiated once; every factor is non-negative so no sign tracking is
//! needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::PositionModel;
use crate::special::{ln_binomial, ln_factorial, ln_hyp1f1};

/// Hard cap from the log-gamma accuracy budget; sized so a 60-term
/// distance series (needing m(61)) stays inside it.
pub const MAX_K: u32 = 62;
/// Default series cap over flight counts.
pub const DEFAULT_N_MAX: u32 = 8;
/// Default moment order cap: the 30-term distance series needs m(i+1) for
/// i <= 29.
pub const DEFAULT_K_MAX: u32 = 31;

/// A request for displacement moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentRequest {
    pub model: PositionModel,
    pub dt: f64,
    pub k_max: u32,
    pub n_max: u32,
}

impl MomentRequest {
    pub fn validate(&self) -> Result<()> {
        if self.k_max > MAX_K {
            return Err(Error::domain(format!("k_max must be <= {MAX_K}, got {}", self.k_max)));
        }
        if self.n_max < 2 {
            return Err(Error::domain(format!("n_max must be >= 2, got {}", self.n_max)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::domain(format!("dt must be finite and > 0, got {}", self.dt)));
        }
        Ok(())
    }
}

/// One conditional moment (pause-start or flight-start case) with its
/// per-flight-count breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMoment {
    pub value: f64,
    /// Per-n terms of the "window ends like it started" family, from the
    /// case's first n upward.
    pub a_terms: Vec<f64>,
    /// Per-n terms of the complementary family, from n = 1 upward.
    pub b_terms: Vec<f64>,
    /// Relative contribution of the last included n.
    pub tail_ratio: f64,
    /// False when the per-n totals stopped decreasing at the cap.
    pub tail_converged: bool,
}

/// Full moment table for one (model, dt).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub dt: f64,
    /// m(0..=k_max); m(0) = 1 by convention.
    pub m: Vec<f64>,
    /// Pause-start conditional moments, index k (entry 0 is 1).
    pub m_case1: Vec<f64>,
    /// Flight-start conditional moments, index k (entry 0 is 1).
    pub m_case2: Vec<f64>,
    pub p_flight: f64,
    /// Per-k case breakdowns (index 0 corresponds to k = 1).
    pub breakdown: Vec<(CaseMoment, CaseMoment)>,
}

impl MomentTable {
    pub fn k_max(&self) -> u32 {
        (self.m.len() - 1) as u32
    }
}

/// Probability that a uniformly drawn stationary time falls in a flight.
pub fn p_flight(model: &PositionModel) -> f64 {
    let r = model.lambda / (1.0 - model.c);
    r / (r + model.mu)
}

/// The shared log-space kernel
/// `g_{i,h,n,k,m} = (2k)! mu^i lambda^h dt^{m-1} e^{-mu dt}
///  1F1(n; m; -(lambda-mu) dt) / (m-1)! * v^{2k} C(i,h) c^{i-h} (1-c)^h`.
pub fn g_kernel(
    i: u32,
    h: u32,
    n: u32,
    k: u32,
    m_idx: u32,
    model: &PositionModel,
    dt: f64,
) -> Result<f64> {
    if h > i {
        return Err(Error::domain(format!("g_kernel requires h <= i, got i={i}, h={h}")));
    }
    if model.c == 0.0 && h < i {
        // c^(i-h) factor kills the term exactly
        return Ok(0.0);
    }
    let z = -(model.lambda - model.mu) * dt;
    let mut ln = ln_factorial(2 * k as u64);
    ln += i as f64 * model.mu.ln();
    ln += h as f64 * model.lambda.ln();
    ln += (m_idx as f64 - 1.0) * dt.ln();
    ln -= model.mu * dt;
    ln += ln_hyp1f1(n, m_idx, z)?;
    ln -= ln_factorial(m_idx as u64 - 1);
    ln += 2.0 * k as f64 * model.v.ln();
    ln += ln_binomial(i as u64, h as u64);
    if i > h {
        ln += (i - h) as f64 * model.c.ln();
    }
    ln += h as f64 * (1.0 - model.c).ln();
    let g = ln.exp();
    if !g.is_finite() {
        return Err(Error::convergence(format!(
            "g_kernel overflow at i={i}, h={h}, n={n}, k={k}, m={m_idx}: ln={ln}"
        )));
    }
    Ok(g)
}

/// ln of the direction-averaged moment constant for `m_seg` flight
/// segments: sum over compositions a of k into m_seg parts of
/// (k!)^2 prod (2a_i)!/(a_i!)^2, which the generating function
/// (1-4x)^{-m/2} collapses to k! 4^k prod_{i<k} (m/2 + i).
///
/// For a single segment this is (2k)!, and for k <= 1 it equals the
/// simpler count C(m+k-1, m-1) (2k)!; beyond that the two differ, and
/// only this constant keeps the per-event moments exact.
fn ln_direction_moment_const(m_seg: u32, k: u32) -> f64 {
    let mut ln = ln_factorial(k as u64) + k as f64 * 4.0f64.ln();
    for i in 0..k {
        ln += (m_seg as f64 / 2.0 + i as f64).ln();
    }
    ln
}

fn finish_case(a_terms: Vec<f64>, b_terms: Vec<f64>, first_a_n: u32) -> CaseMoment {
    let value: f64 = a_terms.iter().sum::<f64>() + b_terms.iter().sum::<f64>();
    // per-n totals indexed by n itself (a starts at first_a_n, b at 1)
    let n_hi = (first_a_n as usize + a_terms.len()).max(1 + b_terms.len());
    let mut per_n = vec![0.0; n_hi];
    for (j, &a) in a_terms.iter().enumerate() {
        per_n[first_a_n as usize + j] += a;
    }
    for (j, &b) in b_terms.iter().enumerate() {
        per_n[1 + j] += b;
    }
    let last = *per_n.last().unwrap_or(&0.0);
    let tail_ratio = if value > 0.0 { last / value } else { 0.0 };
    let tail_converged = per_n.len() < 2 || last <= per_n[per_n.len() - 2] || last == 0.0;
    CaseMoment { value, a_terms, b_terms, tail_ratio, tail_converged }
}

/// k-th displacement moment conditioned on the window starting in a pause.
pub fn moments_case1(model: &PositionModel, dt: f64, k: u32, n_max: u32) -> Result<CaseMoment> {
    if k < 1 {
        return Err(Error::domain("moments_case1 requires k >= 1"));
    }
    let mut a_terms = Vec::new();
    let mut b_terms = Vec::new();
    let ln_2k = ln_factorial(2 * k as u64);
    for n in 2..=n_max {
        let mut inner = 0.0;
        for h in 0..=(n - 2) {
            inner += model.mu
                * model.lambda
                * g_kernel(n - 2, h, h + 2, k, 2 * k + n + h + 1, model, dt)?;
        }
        // n - 1 complete flight segments; the final pause must be an actual
        // pause, hence the 1 - c survival factor
        let pref = (ln_direction_moment_const(n - 1, k) - ln_2k).exp() * (1.0 - model.c);
        a_terms.push(pref * inner);
    }
    for n in 1..=n_max {
        let mut inner = 0.0;
        for h in 0..=(n - 1) {
            inner += model.lambda * g_kernel(n - 1, h, h + 1, k, 2 * k + n + h + 1, model, dt)?;
        }
        // n segments: n - 1 complete flights plus the truncated last one
        let pref = (ln_direction_moment_const(n, k) - ln_2k).exp();
        b_terms.push(pref * inner);
    }
    Ok(finish_case(a_terms, b_terms, 2))
}

/// k-th displacement moment conditioned on the window starting in a flight.
pub fn moments_case2(model: &PositionModel, dt: f64, k: u32, n_max: u32) -> Result<CaseMoment> {
    if k < 1 {
        return Err(Error::domain("moments_case2 requires k >= 1"));
    }
    let mut a_terms = Vec::new();
    let mut b_terms = Vec::new();
    let ln_2k = ln_factorial(2 * k as u64);
    for n in 0..=n_max {
        // n + 1 flight segments: the residual flight, n complete ones
        let ln_dir = ln_direction_moment_const(n + 1, k);
        // all-pauses-zero branch: n direction changes without stopping
        let first = if model.c == 0.0 && n > 0 {
            0.0
        } else {
            let mut ln = ln_dir;
            if n > 0 {
                ln += n as f64 * model.c.ln();
                ln += n as f64 * model.mu.ln();
            }
            ln += (2 * k + n) as f64 * dt.ln();
            ln -= model.mu * dt;
            ln -= ln_factorial((2 * k + n) as u64);
            ln += 2.0 * k as f64 * model.v.ln();
            ln.exp()
        };
        let mut term = first;
        if n > 0 {
            let mut inner = 0.0;
            for h in 1..=n {
                inner += g_kernel(n, h, h, k, 2 * k + n + h + 1, model, dt)?;
            }
            term += (ln_dir - ln_2k).exp() * inner;
        }
        a_terms.push(term);
    }
    for n in 1..=n_max {
        let mut inner = 0.0;
        for h in 0..=(n - 1) {
            inner += model.mu * g_kernel(n - 1, h, h + 1, k, 2 * k + n + h + 1, model, dt)?;
        }
        // ends inside an actual (nonzero) pause after n flight segments
        let pref = (ln_direction_moment_const(n, k) - ln_2k).exp() * (1.0 - model.c);
        b_terms.push(pref * inner);
    }
    Ok(finish_case(a_terms, b_terms, 0))
}

/// Unconditional moments m(k) = (1-p) m_case1(k) + p m_case2(k).
pub fn moments(model: &PositionModel, dt: f64, k_max: u32, n_max: u32) -> Result<MomentTable> {
    let req = MomentRequest { model: *model, dt, k_max, n_max };
    req.validate()?;
    if k_max < 1 {
        return Err(Error::domain("k_max must be >= 1"));
    }
    let p = p_flight(model);
    let mut m = vec![1.0];
    let mut m_case1 = vec![1.0];
    let mut m_case2 = vec![1.0];
    let mut breakdown = Vec::new();
    for k in 1..=k_max {
        let c1 = moments_case1(model, dt, k, n_max)?;
        let c2 = moments_case2(model, dt, k, n_max)?;
        m.push((1.0 - p) * c1.value + p * c2.value);
        m_case1.push(c1.value);
        m_case2.push(c2.value);
        breakdown.push((c1, c2));
    }
    Ok(MomentTable { dt, m, m_case1, m_case2, p_flight: p, breakdown })
}

/// MGF partial sum with its last-term magnitude as a tail proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MgfResult {
    pub value: f64,
    pub last_term: f64,
}

/// M_psi(tau) as a truncated series over a precomputed moment table.
/// For tau <= 0 the result is clamped into [0, 1].
pub fn mgf_from_table(table: &MomentTable, tau: f64, k_terms: u32) -> Result<MgfResult> {
    if k_terms as usize > table.m.len() {
        return Err(Error::domain(format!(
            "mgf needs {k_terms} moments but the table holds {}",
            table.m.len()
        )));
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut prev_mag = f64::INFINITY;
    let mut grew = 0u32;
    let mut last = 0.0;
    for k in 0..k_terms {
        let ln_mag = if tau == 0.0 && k > 0 {
            f64::NEG_INFINITY
        } else if k == 0 {
            0.0
        } else {
            table.m[k as usize].ln() + k as f64 * tau.abs().ln() - ln_factorial(k as u64)
        };
        let mag = ln_mag.exp();
        let term = if tau < 0.0 && k % 2 == 1 { -mag } else { mag };
        // Kahan summation: the series alternates for negative tau
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if mag > prev_mag {
            grew += 1;
        } else {
            grew = 0;
        }
        prev_mag = mag;
        last = mag;
    }
    // growth early in the series is normal; growth persisting at the cap
    // means the truncation is meaningless
    if grew >= 2 && last > 1e-12 * sum.abs().max(1.0) {
        return Err(Error::convergence(format!(
            "MGF series terms still growing at k_terms={k_terms} (last magnitude {last:.3e})"
        )));
    }
    let value = if tau <= 0.0 { sum.clamp(0.0, 1.0) } else { sum };
    Ok(MgfResult { value, last_term: last })
}

/// M_psi(tau), computing the needed moments internally.
pub fn mgf(model: &PositionModel, dt: f64, tau: f64, k_terms: u32) -> Result<MgfResult> {
    let table = moments(model, dt, k_terms.max(1), DEFAULT_N_MAX)?;
    mgf_from_table(&table, tau, k_terms)
}
