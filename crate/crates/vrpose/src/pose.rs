//! Viewport orientation model: polar angle, polar-angle change, and
//! azimuth-angle change distribution families with their regime boundaries.
//!
//! Fitted parameters are stored in degrees (the convention of the source
//! tables); pose samples carry radians. Conversion happens at the boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEG_PER_RAD: f64 = 180.0 / std::f64::consts::PI;

/// A single timestamped viewport pose. Angles in radians, positions in
/// meters, `y` is the viewport height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Polar angle in [0, pi].
    pub theta: f64,
    /// Azimuth angle in [-pi, pi).
    pub phi: f64,
}

impl PoseSample {
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() || self.t < 0.0 {
            return Err(Error::domain(format!("sample time must be finite and >= 0, got {}", self.t)));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.theta) {
            return Err(Error::domain(format!("theta must be in [0, pi], got {}", self.theta)));
        }
        if !(-std::f64::consts::PI..std::f64::consts::PI).contains(&self.phi) {
            return Err(Error::domain(format!("phi must be in [-pi, pi), got {}", self.phi)));
        }
        Ok(())
    }
}

/// An ordered, non-empty pose trace with strictly increasing timestamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    samples: Vec<PoseSample>,
    pub source_tag: String,
}

impl Trajectory {
    pub fn new(samples: Vec<PoseSample>, source_tag: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::domain("trajectory must contain at least one sample"));
        }
        for (i, s) in samples.iter().enumerate() {
            s.validate()
                .map_err(|e| Error::domain(format!("sample {i}: {e}")))?;
        }
        for (i, pair) in samples.windows(2).enumerate() {
            if pair[1].t <= pair[0].t {
                return Err(Error::domain(format!(
                    "timestamps must be strictly increasing; sample {} has t={} after t={}",
                    i + 1,
                    pair[1].t,
                    pair[0].t
                )));
            }
        }
        Ok(Trajectory { samples, source_tag: source_tag.into() })
    }

    pub fn samples(&self) -> &[PoseSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().unwrap().t - self.samples[0].t
    }
}

/// Laplace location/scale pair, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceParams {
    pub mean: f64,
    pub scale: f64,
}

impl LaplaceParams {
    pub fn new(mean: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::domain(format!("Laplace scale must be > 0, got {scale}")));
        }
        Ok(LaplaceParams { mean, scale })
    }
}

/// Parameters of the logistic + Laplace mixture used for azimuth change in
/// the intermediate time-gap regime. All angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedLogisticLaplaceParams {
    pub mu_lo: f64,
    pub b_lo: f64,
    pub mu_l: f64,
    pub b_l: f64,
    pub p_l: f64,
}

impl MixedLogisticLaplaceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_lo > 0.0) || !(self.b_l > 0.0) {
            return Err(Error::domain("mixture scales must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.p_l) {
            return Err(Error::domain(format!("p_l must be in [0, 1], got {}", self.p_l)));
        }
        Ok(())
    }
}

/// Time-indexed scale table with linear interpolation and clamped
/// extrapolation. Entries are (dt seconds, value) sorted by dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    entries: Vec<(f64, f64)>,
}

impl ScaleTable {
    pub fn new(mut entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("scale table must be non-empty"));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(dt, v) in &entries {
            if !(dt > 0.0) || !(v > 0.0) {
                return Err(Error::domain(format!("scale table entries must be positive, got ({dt}, {v})")));
            }
        }
        Ok(ScaleTable { entries })
    }

    pub fn lookup(&self, dt: f64) -> f64 {
        interp_clamped(&self.entries, dt, |&(_, v)| v, |a, b, w| a + (b - a) * w)
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }
}

fn interp_clamped<T, V>(
    entries: &[(f64, T)],
    dt: f64,
    value: impl Fn(&(f64, T)) -> V,
    lerp: impl Fn(V, V, f64) -> V,
) -> V {
    if dt <= entries[0].0 {
        return value(&entries[0]);
    }
    if dt >= entries[entries.len() - 1].0 {
        return value(&entries[entries.len() - 1]);
    }
    let idx = entries.partition_point(|e| e.0 < dt);
    let (t0, t1) = (entries[idx - 1].0, entries[idx].0);
    let w = (dt - t0) / (t1 - t0);
    lerp(value(&entries[idx - 1]), value(&entries[idx]), w)
}

/// Azimuth-change family selection: Laplace below `beta1`, logistic+Laplace
/// mixture between `beta1` and `beta2`, uniform beyond `beta2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AzimuthRegimes {
    pub beta1: f64,
    pub beta2: f64,
    pub laplace: Vec<(f64, LaplaceParams)>,
    pub mixed: Vec<(f64, MixedLogisticLaplaceParams)>,
}

impl AzimuthRegimes {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta2 > self.beta1) {
            return Err(Error::domain(format!(
                "regime boundaries must satisfy 0 < beta1 < beta2, got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if self.laplace.is_empty() || self.mixed.is_empty() {
            return Err(Error::domain("azimuth tables must be non-empty"));
        }
        for &(dt, p) in &self.laplace {
            if !(dt > 0.0) || !(p.scale > 0.0) {
                return Err(Error::domain("azimuth Laplace table entries must be positive"));
            }
        }
        for &(dt, p) in &self.mixed {
            if !(dt > 0.0) {
                return Err(Error::domain("azimuth mixed table dt must be positive"));
            }
            p.validate()?;
        }
        Ok(())
    }
}

/// The full viewport orientation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationModel {
    pub theta_dist: LaplaceParams,
    pub delta_theta_scale: ScaleTable,
    pub azimuth_regimes: AzimuthRegimes,
}

/// The azimuth-change distribution in effect for a given time gap.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaPhiRegime {
    /// Zero-mean Laplace, truncated to [-180, 180] degrees.
    Laplace { scale: f64 },
    Mixed(MixedLogisticLaplaceParams),
    /// Uniform on [-180, 180) degrees.
    Uniform,
}

impl OrientationModel {
    pub fn new(
        theta_dist: LaplaceParams,
        delta_theta_scale: ScaleTable,
        azimuth_regimes: AzimuthRegimes,
    ) -> Result<Self> {
        azimuth_regimes.validate()?;
        Ok(OrientationModel { theta_dist, delta_theta_scale, azimuth_regimes })
    }

    /// Desktop-VR reference model: polar angle from the VK fit, polar-change
    /// scales from the Lite table, azimuth tables fitted jointly over games.
    pub fn desktop_vr() -> Self {
        let frames = |n: f64| n / 60.0;
        let theta_dist = LaplaceParams { mean: 90.575, scale: 7.356 };
        let delta_theta_scale = ScaleTable::new(vec![
            (frames(1.0), 0.0748),
            (frames(5.0), 0.305),
            (frames(10.0), 0.571),
            (frames(15.0), 0.826),
            (frames(20.0), 1.049),
            (frames(25.0), 1.276),
            (frames(30.0), 1.480),
            (frames(100.0), 3.407),
            (frames(200.0), 4.984),
            (frames(600.0), 8.005),
            (frames(5000.0), 9.926),
        ])
        .unwrap();
        let azimuth_regimes = AzimuthRegimes {
            beta1: frames(189.0),
            beta2: frames(1549.0),
            laplace: vec![
                (frames(10.0), LaplaceParams { mean: 0.0, scale: 3.130 }),
                (frames(60.0), LaplaceParams { mean: 0.0, scale: 13.868 }),
            ],
            mixed: vec![
                (
                    frames(200.0),
                    MixedLogisticLaplaceParams { mu_lo: -0.1, b_lo: 28.54, mu_l: 0.1, b_l: 0.24, p_l: 0.36 },
                ),
                (
                    frames(500.0),
                    MixedLogisticLaplaceParams { mu_lo: -0.4, b_lo: 53.35, mu_l: 4.2, b_l: 0.34, p_l: 0.13 },
                ),
            ],
        };
        OrientationModel { theta_dist, delta_theta_scale, azimuth_regimes }
    }

    /// Azimuth-change regime and interpolated parameters at time gap `dt`.
    pub fn delta_phi_regime(&self, dt: f64) -> Result<DeltaPhiRegime> {
        if !(dt > 0.0) {
            return Err(Error::domain(format!("dt must be > 0, got {dt}")));
        }
        let r = &self.azimuth_regimes;
        if dt < r.beta1 {
            let scale = interp_clamped(&r.laplace, dt, |&(_, p)| p.scale, |a, b, w| a + (b - a) * w);
            Ok(DeltaPhiRegime::Laplace { scale })
        } else if dt < r.beta2 {
            let p = interp_clamped(
                &r.mixed,
                dt,
                |&(_, p)| p,
                |a, b, w| MixedLogisticLaplaceParams {
                    mu_lo: a.mu_lo + (b.mu_lo - a.mu_lo) * w,
                    b_lo: a.b_lo + (b.b_lo - a.b_lo) * w,
                    mu_l: a.mu_l + (b.mu_l - a.mu_l) * w,
                    b_l: a.b_l + (b.b_l - a.b_l) * w,
                    p_l: a.p_l + (b.p_l - a.p_l) * w,
                },
            );
            Ok(DeltaPhiRegime::Mixed(p))
        } else {
            Ok(DeltaPhiRegime::Uniform)
        }
    }
}

/// Signed azimuth difference wrapped to [-pi, pi):
/// `-pi + mod(phi_nov - phi_ref + pi, 2*pi)` with `mod(a,b) = a - b*floor(a/b)`.
pub fn delta_phi_wrap(phi_ref: f64, phi_nov: f64) -> Result<f64> {
    if !phi_ref.is_finite() || !phi_nov.is_finite() {
        return Err(Error::domain("delta_phi_wrap requires finite inputs"));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let a = phi_nov - phi_ref + std::f64::consts::PI;
    let m = a - two_pi * (a / two_pi).floor();
    let mut out = -std::f64::consts::PI + m;
    // fp rounding can push mod(a, 2pi) to exactly 2pi
    if out >= std::f64::consts::PI {
        out -= two_pi;
    }
    Ok(out)
}

const HALF_SUPPORT_DEG: f64 = 180.0;

fn laplace_pdf(x: f64, mean: f64, scale: f64) -> f64 {
    (-(x - mean).abs() / scale).exp() / (2.0 * scale)
}

fn logistic_cdf(x: f64, mean: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-(x - mean) / scale).exp())
}

/// Mixed logistic+Laplace density on [-180, 180] degrees, evaluated as a
/// symmetric function of |x| with the printed truncation normalizers, then
/// renormalized by the exact total mass (the printed constants do not
/// compose to unit mass once the Laplace offset mu_l is nonzero).
#[derive(Debug, Clone)]
pub struct MixedPdf {
    params: MixedLogisticLaplaceParams,
    laplace_norm: f64,
    logistic_norm: f64,
    laplace_mass: f64,
    logistic_mass: f64,
}

impl MixedPdf {
    pub fn new(params: MixedLogisticLaplaceParams) -> Result<Self> {
        params.validate()?;
        let MixedLogisticLaplaceParams { mu_lo, b_lo, mu_l, b_l, p_l } = params;
        let laplace_norm = 1.0 / (1.0 - (-(HALF_SUPPORT_DEG - mu_l) / b_l).exp());
        let logistic_norm =
            1.0 / (2.0 / (1.0 + (-(HALF_SUPPORT_DEG - mu_lo) / b_lo).exp()) - 1.0);
        // Exact masses of the two (printed, unrenormalized) components over
        // [-180, 180]; used both for the final normalization and for exact
        // component selection when sampling.
        let laplace_mass =
            p_l * laplace_norm * (mu_l / b_l).exp() * (1.0 - (-HALF_SUPPORT_DEG / b_l).exp());
        let logistic_mass = (1.0 - p_l)
            * logistic_norm
            * 2.0
            * (logistic_cdf(HALF_SUPPORT_DEG, mu_lo, b_lo) - logistic_cdf(0.0, mu_lo, b_lo));
        Ok(MixedPdf { params, laplace_norm, logistic_norm, laplace_mass, logistic_mass })
    }

    pub fn total_mass(&self) -> f64 {
        self.laplace_mass + self.logistic_mass
    }

    pub fn params(&self) -> &MixedLogisticLaplaceParams {
        &self.params
    }

    pub fn laplace_norm(&self) -> f64 {
        self.laplace_norm
    }

    pub fn logistic_norm(&self) -> f64 {
        self.logistic_norm
    }

    /// Normalized density (per degree) at `x` degrees in [-180, 180].
    pub fn pdf(&self, x: f64) -> f64 {
        let MixedLogisticLaplaceParams { mu_lo, b_lo, mu_l, b_l, p_l } = self.params;
        let ax = x.abs();
        let lap = p_l * (-(ax - mu_l) / b_l).exp() / (2.0 * b_l) * self.laplace_norm;
        let e = (-(ax - mu_lo) / b_lo).exp();
        let lo = (1.0 - p_l) * e / (b_lo * (1.0 + e).powi(2)) * self.logistic_norm;
        (lap + lo) / self.total_mass()
    }

    /// Draw from the normalized density by exact component selection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let MixedLogisticLaplaceParams { mu_lo, b_lo, b_l, .. } = self.params;
        let pick: f64 = rng.random::<f64>() * self.total_mass();
        let mag = if pick < self.laplace_mass {
            // The renormalized Laplace component has the shape of a zero-mean
            // truncated Laplace in |x| (the mu_l offset is a constant factor).
            sample_truncated_laplace_magnitude(rng, b_l)
        } else {
            // |x| ~ logistic(mu_lo, b_lo) truncated to [0, 180], by inversion.
            let lo = logistic_cdf(0.0, mu_lo, b_lo);
            let hi = logistic_cdf(HALF_SUPPORT_DEG, mu_lo, b_lo);
            let u = lo + rng.random::<f64>() * (hi - lo);
            mu_lo + b_lo * (u / (1.0 - u)).ln()
        };
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    }
}

fn sample_truncated_laplace_magnitude<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    // |X| for zero-mean Laplace is Exp(1/scale); invert the truncated CDF.
    let cap = 1.0 - (-HALF_SUPPORT_DEG / scale).exp();
    let u: f64 = rng.random::<f64>() * cap;
    -scale * (1.0 - u).ln()
}

fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, mean: f64, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    mean - scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// Azimuth-change density at `dphi` degrees, per degree.
pub fn pdf_delta_phi(model: &OrientationModel, dt: f64, dphi: f64) -> Result<f64> {
    if !(-HALF_SUPPORT_DEG..=HALF_SUPPORT_DEG).contains(&dphi) {
        return Err(Error::domain(format!("dphi must be in [-180, 180], got {dphi}")));
    }
    match model.delta_phi_regime(dt)? {
        DeltaPhiRegime::Laplace { scale } => {
            let trunc = 1.0 - (-HALF_SUPPORT_DEG / scale).exp();
            Ok(laplace_pdf(dphi, 0.0, scale) / trunc)
        }
        DeltaPhiRegime::Mixed(p) => Ok(MixedPdf::new(p)?.pdf(dphi)),
        DeltaPhiRegime::Uniform => Ok(1.0 / 360.0),
    }
}

/// Sample the azimuth change (degrees) for time gap `dt`.
pub fn sample_delta_phi<R: Rng + ?Sized>(
    model: &OrientationModel,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    match model.delta_phi_regime(dt)? {
        DeltaPhiRegime::Laplace { scale } => {
            let mag = sample_truncated_laplace_magnitude(rng, scale);
            Ok(if rng.random::<bool>() { mag } else { -mag })
        }
        DeltaPhiRegime::Mixed(p) => Ok(MixedPdf::new(p)?.sample(rng)),
        DeltaPhiRegime::Uniform => Ok(rng.random::<f64>() * 360.0 - 180.0),
    }
}

/// Sample the polar-angle change (degrees) for time gap `dt`: zero-mean
/// Laplace with the tabulated scale.
pub fn sample_delta_theta<R: Rng + ?Sized>(
    model: &OrientationModel,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let scale = model.delta_theta_scale.lookup(dt);
    Ok(sample_laplace(rng, 0.0, scale))
}

/// Sample the polar angle (degrees), Laplace truncated to [0, 180] by
/// rejection.
pub fn sample_theta<R: Rng + ?Sized>(model: &OrientationModel, rng: &mut R) -> f64 {
    let LaplaceParams { mean, scale } = model.theta_dist;
    loop {
        let x = sample_laplace(rng, mean, scale);
        if (0.0..=HALF_SUPPORT_DEG).contains(&x) {
            return x;
        }
    }
}
