//! Analytical visibility similarity between a reference and a novel frame:
//! the field-of-view overlap term, the distance term with its truncation
//! error bound, and their product ViS(d).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::PositionModel;
use crate::moments::{self, MomentTable};
use crate::pose::{DeltaPhiRegime, MixedPdf, OrientationModel, DEG_PER_RAD};

/// Configuration for the visibility-similarity evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViSConfig {
    /// Camera angle of view, radians.
    pub w_fv: f64,
    /// Far clipping plane, meters.
    pub d_fp: f64,
    /// Series split point in meters; `None` selects v * dt automatically.
    pub epsilon: Option<f64>,
    /// Terms of the distance-term series.
    pub series_terms: u32,
    /// Terms of the MGF partial sum inside the error bound.
    pub mgf_terms: u32,
}

impl Default for ViSConfig {
    fn default() -> Self {
        ViSConfig {
            w_fv: std::f64::consts::FRAC_PI_2,
            d_fp: 50.0,
            epsilon: None,
            series_terms: 30,
            mgf_terms: 20,
        }
    }
}

impl ViSConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_fv > 0.0 && self.w_fv < std::f64::consts::PI) {
            return Err(Error::domain(format!("w_fv must be in (0, pi), got {}", self.w_fv)));
        }
        if !(self.d_fp > 0.0) {
            return Err(Error::domain(format!("d_fp must be > 0, got {}", self.d_fp)));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return Err(Error::domain(format!("epsilon must be finite and > 0, got {e}")));
            }
        }
        if self.series_terms == 0 {
            return Err(Error::domain("series_terms must be >= 1"));
        }
        Ok(())
    }
}

/// One evaluated point of a similarity curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViSPoint {
    pub d: f64,
    pub vis_fov: f64,
    pub vis_dst: f64,
    pub vis: f64,
    pub err_bound: f64,
}

/// ViS(d) samples for one frame gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViSCurve {
    pub dt: f64,
    pub points: Vec<ViSPoint>,
}

/// FoV-term decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovTerm {
    pub value: f64,
    pub p_f_phi: f64,
    pub p_f_theta: f64,
}

/// Mean absolute miss of an untruncated zero-mean Laplace inside [0, w],
/// scaled by 2/w: (b - e^{-w/b}(b + w)) / w.
fn laplace_fraction(b: f64, w: f64) -> f64 {
    if b <= 0.0 {
        return 0.0;
    }
    (b - (-w / b).exp() * (b + w)) / w
}

/// The azimuth fraction p_f = (2/w) int_0^w x p(x) dx for the mixed
/// logistic + Laplace density (degrees in, dimensionless out). Closed form
/// by parts, consistent with the normalized density to rounding error.
fn mixed_fraction(pdf: &MixedPdf, w: f64) -> f64 {
    let p = pdf.params();
    // Laplace component: int_0^w x e^{-x/b} / b dx = b - e^{-w/b}(b + w)
    let lap = p.p_l * pdf.laplace_norm() * (p.mu_l / p.b_l).exp()
        * (p.b_l - (-w / p.b_l).exp() * (p.b_l + w))
        / 2.0;
    // logistic component: int_0^w x l(x) dx = w F(w) - b ln((1+e^{(w-mu)/b})/(1+e^{-mu/b}))
    let f_w = 1.0 / (1.0 + (-(w - p.mu_lo) / p.b_lo).exp());
    let ln_ratio = ln_one_plus_exp((w - p.mu_lo) / p.b_lo) - ln_one_plus_exp(-p.mu_lo / p.b_lo);
    let log = (1.0 - p.p_l) * pdf.logistic_norm() * (w * f_w - p.b_lo * ln_ratio);
    (2.0 / w) * (lap + log) / pdf.total_mass()
}

/// ln(1 + e^x) without overflow for large x.
fn ln_one_plus_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// FoV overlap term of the similarity: (1 - p_f^theta)(1 - p_f^phi), where
/// each fraction is the mean relative angular miss within the angle of view.
pub fn vis_fov(orientation: &OrientationModel, dt: f64, cfg: &ViSConfig) -> Result<FovTerm> {
    cfg.validate()?;
    let w_deg = cfg.w_fv * DEG_PER_RAD;
    let b_theta = orientation.delta_theta_scale.lookup(dt);
    let p_f_theta = laplace_fraction(b_theta, w_deg);
    let p_f_phi = match orientation.delta_phi_regime(dt)? {
        DeltaPhiRegime::Laplace { scale } => {
            // renormalize by the [-180, 180] truncation so the closed form
            // integrates the same density the model samples from
            laplace_fraction(scale, w_deg) / (1.0 - (-180.0 / scale).exp())
        }
        DeltaPhiRegime::Mixed(p) => mixed_fraction(&MixedPdf::new(p)?, w_deg),
        DeltaPhiRegime::Uniform => w_deg / 360.0,
    };
    let value = (1.0 - p_f_theta) * (1.0 - p_f_phi);
    Ok(FovTerm { value, p_f_phi, p_f_theta })
}

/// Default series split point: v * dt makes the series ratio 1 so the
/// factorial denominator dominates within the default term count.
pub fn auto_epsilon(position: &PositionModel, dt: f64) -> f64 {
    position.v * dt
}

/// Distance term evaluated against a precomputed moment table for its dt.
/// Returns (value, err_bound).
pub fn vis_dst_from_table(
    table: &MomentTable,
    d: f64,
    epsilon: f64,
    cfg: &ViSConfig,
) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(d > 0.0) {
        return Err(Error::domain(format!("d must be > 0, got {d}")));
    }
    if table.m.len() < cfg.series_terms as usize + 2 {
        return Err(Error::domain(format!(
            "distance term needs {} moments but the table holds {}",
            cfg.series_terms + 1,
            table.m.len()
        )));
    }
    let kappa = 4.0 * (cfg.w_fv / 2.0).sin() / (cfg.w_fv * d * std::f64::consts::PI.sqrt());
    let mut eps = epsilon;
    'retry: for _ in 0..16 {
        // alternating series in log magnitude, Kahan-compensated
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        let mut prev_mag = f64::INFINITY;
        for i in 0..cfg.series_terms {
            let ln_mag = -((2 * i + 1) as f64) * eps.ln() + table.m[i as usize + 1].ln()
                - (i as f64 + 0.5).ln()
                - crate::special::ln_factorial(i as u64);
            let mag = ln_mag.exp();
            if mag > prev_mag && mag > 1e-12 * sum.abs().max(1.0) {
                // growing terms: the cap cannot represent the tail; widen
                // the split point and try again (bound grows, value stays
                // correct)
                eps *= 2.0;
                continue 'retry;
            }
            prev_mag = mag;
            let term = if i % 2 == 0 { mag } else { -mag };
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        let value = 1.0 + table.m[1] / (d * d) - kappa * sum;
        let mgf = moments::mgf_from_table(table, -1.0 / (eps * eps), cfg.mgf_terms)?;
        let err_bound = (kappa * eps * mgf.value).min(kappa * eps);
        return Ok((value, err_bound));
    }
    Err(Error::convergence(
        "distance-term series kept growing despite widening epsilon; increase series_terms",
    ))
}

/// Distance term of the similarity for viewpoint distance `d`.
pub fn vis_dst(position: &PositionModel, dt: f64, d: f64, cfg: &ViSConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let table = moments::moments(position, dt, cfg.series_terms + 1, moments::DEFAULT_N_MAX)?;
    let eps = cfg.epsilon.unwrap_or_else(|| auto_epsilon(position, dt));
    vis_dst_from_table(&table, d, eps, cfg)
}

/// Combined similarity at one (dt, d) point, reusing a moment table.
pub fn vis_from_table(
    orientation: &OrientationModel,
    table: &MomentTable,
    epsilon: f64,
    d: f64,
    cfg: &ViSConfig,
) -> Result<ViSPoint> {
    let fov = vis_fov(orientation, table.dt, cfg)?;
    let (dst, err) = vis_dst_from_table(table, d, epsilon, cfg)?;
    Ok(ViSPoint {
        d,
        vis_fov: fov.value,
        vis_dst: dst,
        vis: fov.value * dst,
        err_bound: fov.value * err,
    })
}

/// Combined similarity at one (dt, d) point.
pub fn vis(
    orientation: &OrientationModel,
    position: &PositionModel,
    dt: f64,
    d: f64,
    cfg: &ViSConfig,
) -> Result<ViSPoint> {
    cfg.validate()?;
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let table = moments::moments(position, dt, cfg.series_terms + 1, moments::DEFAULT_N_MAX)?;
    let eps = cfg.epsilon.unwrap_or_else(|| auto_epsilon(position, dt));
    vis_from_table(orientation, &table, eps, d, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{
        AzimuthRegimes, LaplaceParams, MixedLogisticLaplaceParams, ScaleTable,
    };
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        let mut acc = f(a) + f(b);
        for i in 1..panels {
            acc += if i % 2 == 0 { 2.0 } else { 4.0 } * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    fn near_static_orientation() -> OrientationModel {
        OrientationModel::new(
            LaplaceParams { mean: 90.0, scale: 1e-6 },
            ScaleTable::new(vec![(0.01, 1e-9)]).unwrap(),
            AzimuthRegimes {
                beta1: 100.0,
                beta2: 200.0,
                laplace: vec![(0.01, LaplaceParams { mean: 0.0, scale: 1e-9 })],
                mixed: vec![(
                    150.0,
                    MixedLogisticLaplaceParams {
                        mu_lo: 0.0,
                        b_lo: 1.0,
                        mu_l: 0.0,
                        b_l: 1.0,
                        p_l: 0.5,
                    },
                )],
            },
        )
        .unwrap()
    }

    #[test]
    fn fov_static_orientation_is_one() {
        let cfg = ViSConfig::default();
        let fov = vis_fov(&near_static_orientation(), 0.1, &cfg).unwrap();
        assert_abs_diff_eq!(fov.value, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn fov_uniform_regime_quarter() {
        let cfg = ViSConfig::default(); // 90 degree AoV
        let model = OrientationModel::desktop_vr();
        let fov = vis_fov(&model, 2000.0 / 60.0, &cfg).unwrap();
        assert_relative_eq!(fov.p_f_phi, 0.25, max_relative = 1e-12);
    }

    #[test]
    fn fov_laplace_regime_matches_quadrature() {
        let cfg = ViSConfig::default();
        let model = OrientationModel::desktop_vr();
        let dt = 30.0 / 60.0;
        let fov = vis_fov(&model, dt, &cfg).unwrap();
        let w = cfg.w_fv * DEG_PER_RAD;
        let quad = (2.0 / w)
            * simpson(
                |x| x * crate::pose::pdf_delta_phi(&model, dt, x).unwrap(),
                0.0,
                w,
                40_000,
            );
        assert_abs_diff_eq!(fov.p_f_phi, quad, epsilon = 1e-8);
    }

    #[test]
    fn fov_mixed_regime_matches_quadrature() {
        let cfg = ViSConfig::default();
        let model = OrientationModel::desktop_vr();
        for &dt in &[200.0 / 60.0, 350.0 / 60.0, 500.0 / 60.0] {
            let fov = vis_fov(&model, dt, &cfg).unwrap();
            let w = cfg.w_fv * DEG_PER_RAD;
            let quad = (2.0 / w)
                * simpson(
                    |x| x * crate::pose::pdf_delta_phi(&model, dt, x).unwrap(),
                    0.0,
                    w,
                    400_000,
                );
            assert_abs_diff_eq!(fov.p_f_phi, quad, epsilon = 1e-8);
        }
    }

    #[test]
    fn fov_theta_matches_quadrature() {
        let cfg = ViSConfig::default();
        let model = OrientationModel::desktop_vr();
        let dt = 10.0 / 60.0;
        let fov = vis_fov(&model, dt, &cfg).unwrap();
        let b = model.delta_theta_scale.lookup(dt);
        let w = cfg.w_fv * DEG_PER_RAD;
        let quad = (2.0 / w)
            * simpson(|x| x * (-x / b).exp() / (2.0 * b), 0.0, w, 40_000);
        assert_abs_diff_eq!(fov.p_f_theta, quad, epsilon = 1e-8);
    }

    #[test]
    fn fov_fractions_stay_in_unit_interval() {
        let cfg = ViSConfig::default();
        let model = OrientationModel::desktop_vr();
        for i in 1..200 {
            let dt = i as f64 * 0.2;
            let fov = vis_fov(&model, dt, &cfg).unwrap();
            assert!((0.0..=1.0).contains(&fov.p_f_theta), "dt={dt}");
            assert!((0.0..=1.0).contains(&fov.p_f_phi), "dt={dt}");
            assert!((0.0..=1.0).contains(&fov.value), "dt={dt}");
        }
    }

    #[test]
    fn auto_epsilon_is_v_dt() {
        let m = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        assert_relative_eq!(auto_epsilon(&m, 0.25), 0.35, max_relative = 1e-12);
    }

    #[test]
    fn dst_static_viewport_is_one() {
        let cfg = ViSConfig::default();
        let m = PositionModel::new(0.5, 1.0, 0.3, 1e-9).unwrap();
        let (value, err) = vis_dst(&m, 0.25, 20.0, &cfg).unwrap();
        assert_abs_diff_eq!(value, 1.0, epsilon = 1e-9);
        assert!(err <= 1e-9);
    }

    #[test]
    fn dst_far_field_limit() {
        let cfg = ViSConfig::default();
        let m = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        let (value, _) = vis_dst(&m, 0.25, 1.0e4, &cfg).unwrap();
        assert_abs_diff_eq!(value, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn dst_error_bound_capped_by_kappa_epsilon() {
        let cfg = ViSConfig::default();
        let m = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        for &dt in &[1.0 / 60.0, 0.25, 0.5] {
            for &d in &[5.0, 10.0, 50.0] {
                let (_, err) = vis_dst(&m, dt, d, &cfg).unwrap();
                let kappa = 4.0 * (cfg.w_fv / 2.0).sin()
                    / (cfg.w_fv * d * std::f64::consts::PI.sqrt());
                let eps = auto_epsilon(&m, dt);
                assert!(err >= 0.0 && err <= kappa * eps * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn dst_series_converged_at_default_terms() {
        let m = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        let dt = 0.25;
        let table = moments::moments(&m, dt, 40, 8).unwrap();
        let eps = auto_epsilon(&m, dt);
        let c30 = ViSConfig::default();
        let c39 = ViSConfig { series_terms: 39, ..c30 };
        let (v30, _) = vis_dst_from_table(&table, 15.0, eps, &c30).unwrap();
        let (v39, _) = vis_dst_from_table(&table, 15.0, eps, &c39).unwrap();
        assert_abs_diff_eq!(v30, v39, epsilon = 1e-9);
        // anything past the cap is bounded by eps / (i + 1/2) / i!, so the
        // remaining tail cannot reach 1e-9 either
        let tail = eps / (39.5 * (1..=39).map(f64::from).product::<f64>());
        assert!(tail < 1e-15);
    }

    #[test]
    fn dst_matches_direct_monte_carlo() {
        let cfg = ViSConfig::default();
        let m = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &(dt, d) in &[(0.25, 10.0), (0.5, 20.0), (0.1, 15.0)] {
            let (value, err) = vis_dst(&m, dt, d, &cfg).unwrap();
            let samples = crate::mobility::displacement_sample(&m, dt, 200_000, 43).unwrap();
            let mc = samples
                .iter()
                .map(|&psi| {
                    let theta = (rng.random::<f64>() - 0.5) * cfg.w_fv;
                    (d * d + psi - 2.0 * d * psi.sqrt() * theta.cos()) / (d * d)
                })
                .sum::<f64>()
                / samples.len() as f64;
            let tol = (0.01 * mc).max(err) + 3.0 * 0.01 / (samples.len() as f64).sqrt();
            assert!(
                (value - mc).abs() <= tol,
                "dt={dt} d={d}: analytic {value} vs mc {mc} (tol {tol})"
            );
        }
    }

    #[test]
    fn vis_product_and_degenerate() {
        let cfg = ViSConfig::default();
        let pos = PositionModel::new(0.5, 1.0, 0.3, 1e-9).unwrap();
        let p = vis(&near_static_orientation(), &pos, 0.1, 20.0, &cfg).unwrap();
        assert_abs_diff_eq!(p.vis, 1.0, epsilon = 1e-6);
        assert_relative_eq!(p.vis, p.vis_fov * p.vis_dst, max_relative = 1e-12);
    }

    #[test]
    fn vis_declines_with_dt() {
        let cfg = ViSConfig::default();
        let orient = OrientationModel::desktop_vr();
        let pos = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        let mut prev = f64::INFINITY;
        for frames in 1..=30 {
            let dt = frames as f64 / 60.0;
            let p = vis(&orient, &pos, dt, 20.0, &cfg).unwrap();
            assert!(p.vis <= prev + 1e-9, "dt={dt}: {} > {prev}", p.vis);
            prev = p.vis;
        }
    }

    #[test]
    fn vis_grows_with_distance() {
        let cfg = ViSConfig::default();
        let orient = OrientationModel::desktop_vr();
        let pos = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        let mut prev = -f64::INFINITY;
        for i in 0..=45 {
            let d = 5.0 + i as f64;
            let p = vis(&orient, &pos, 0.25, d, &cfg).unwrap();
            assert!(p.vis >= prev - 1e-9, "d={d}: {} < {prev}", p.vis);
            prev = p.vis;
        }
    }

    #[test]
    fn vis_point_latency() {
        let cfg = ViSConfig::default();
        let orient = OrientationModel::desktop_vr();
        let pos = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        vis(&orient, &pos, 0.25, 20.0, &cfg).unwrap(); // warm the factorial table
        let start = std::time::Instant::now();
        vis(&orient, &pos, 0.3, 20.0, &cfg).unwrap();
        assert!(start.elapsed().as_millis() <= 50);
    }

    #[test]
    fn config_validation() {
        let bad = ViSConfig { w_fv: 0.0, ..ViSConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ViSConfig { epsilon: Some(-1.0), ..ViSConfig::default() };
        assert!(bad.validate().is_err());
        let pos = PositionModel::new(0.5, 1.0, 0.3, 1.4).unwrap();
        assert!(vis_dst(&pos, 0.25, 0.0, &ViSConfig::default()).is_err());
    }
}
