//! Independent Monte-Carlo estimators for every closed form: displacement
//! moments, flight probability, and the visibility similarity, each judged
//! against its analytic counterpart at a stated tolerance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{
    burn_in, displacement_sample_phase, stream_seed, MotionTimeline, PositionModel, StartPhase,
};
use crate::moments;
use crate::pose::{sample_delta_phi, sample_delta_theta, OrientationModel, DEG_PER_RAD};
use crate::vis::{self, ViSConfig};

pub const DEFAULT_MOMENT_SAMPLES: usize = 1_000_000;
pub const DEFAULT_VIS_SAMPLES: usize = 100_000;

/// One oracle comparison. The verdict passes when the analytic value and
/// the Monte-Carlo estimate agree within `tolerance` plus three standard
/// errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub quantity: String,
    pub analytic: f64,
    pub mc_estimate: f64,
    pub mc_stderr: f64,
    pub n_samples: u64,
    pub tolerance: f64,
    pub verdict: bool,
}

impl OracleReport {
    fn judge(
        quantity: impl Into<String>,
        analytic: f64,
        estimate: &Estimate,
        tolerance: f64,
    ) -> Self {
        OracleReport {
            quantity: quantity.into(),
            analytic,
            mc_estimate: estimate.mean,
            mc_stderr: estimate.stderr,
            n_samples: estimate.n,
            tolerance,
            verdict: (analytic - estimate.mean).abs() <= tolerance + 3.0 * estimate.stderr,
        }
    }
}

/// Streaming mean/variance accumulator (Welford form, mergeable).
#[derive(Debug, Clone, Copy, Default)]
pub struct Stream {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Stream {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(mut self, other: Stream) -> Stream {
        if other.n == 0 {
            return self;
        }
        if self.n == 0 {
            return other;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * self.n as f64 * other.n as f64 / n as f64;
        self.n = n;
        self
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.m2 / (self.n - 1) as f64
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

const BATCH: usize = 5_000;

/// Squared-displacement samples drawn in independent, seed-streamed
/// parallel batches; the merge order is fixed, so the output is
/// deterministic for a given seed. The count is rounded up to whole
/// batches. Samples within a batch share timelines and are correlated, so
/// standard errors must come from the spread of batch means, never from
/// per-sample variance.
fn psi_batches(
    model: &PositionModel,
    dt: f64,
    n_samples: usize,
    seed: u64,
    phase: StartPhase,
) -> Result<Vec<Vec<f64>>> {
    let n_batches = n_samples.div_ceil(BATCH).max(2);
    (0..n_batches)
        .into_par_iter()
        .map(|b| displacement_sample_phase(model, dt, BATCH, stream_seed(seed, b as u64), phase))
        .collect()
}

/// A Monte-Carlo estimate with its standard error and total draw count.
#[derive(Debug, Clone, Copy)]
struct Estimate {
    mean: f64,
    stderr: f64,
    n: u64,
}

impl Estimate {
    /// Grand mean and standard error from equally sized batch means.
    fn from_batch_means(batch_means: impl Iterator<Item = f64>, batch_size: usize) -> Estimate {
        let mut means = Stream::default();
        for m in batch_means {
            means.push(m);
        }
        Estimate {
            mean: means.mean,
            stderr: (means.variance() / means.n as f64).sqrt(),
            n: means.n * batch_size as u64,
        }
    }
}

/// Empirical moments E[psi^k] for k = 1..k_max against the moment engine,
/// judged at 3% relative tolerance.
pub fn mc_moments(
    model: &PositionModel,
    dt: f64,
    k_max: u32,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<OracleReport>> {
    mc_moments_phase(model, dt, k_max, n_samples, seed, StartPhase::Any)
}

/// As [`mc_moments`], conditioned on the phase the window starts in, which
/// checks the two per-case moment tables separately.
pub fn mc_moments_phase(
    model: &PositionModel,
    dt: f64,
    k_max: u32,
    n_samples: usize,
    seed: u64,
    phase: StartPhase,
) -> Result<Vec<OracleReport>> {
    if k_max < 1 {
        return Err(Error::domain("k_max must be >= 1"));
    }
    let table = moments::moments(model, dt, k_max, moments::DEFAULT_N_MAX)?;
    let batches = psi_batches(model, dt, n_samples, seed, phase)?;
    let reports = (1..=k_max as usize)
        .map(|k| {
            let estimate = Estimate::from_batch_means(
                batches.iter().map(|batch| {
                    batch.iter().map(|&psi| psi.powi(k as i32)).sum::<f64>()
                        / batch.len() as f64
                }),
                BATCH,
            );
            let analytic = match phase {
                StartPhase::Any => table.m[k],
                StartPhase::Pause => table.m_case1[k],
                StartPhase::Flight => table.m_case2[k],
            };
            let label = match phase {
                StartPhase::Any => format!("m({k}) dt={dt}"),
                StartPhase::Pause => format!("m_case1({k}) dt={dt}"),
                StartPhase::Flight => format!("m_case2({k}) dt={dt}"),
            };
            OracleReport::judge(label, analytic, &estimate, 0.03 * analytic.abs())
        })
        .collect();
    Ok(reports)
}

/// Long-run fraction of time spent flying against the closed-form flight
/// probability, judged at 0.5% relative tolerance.
pub fn mc_p_flight(model: &PositionModel, n_samples: usize, seed: u64) -> Result<OracleReport> {
    let analytic = moments::p_flight(model);
    let t_burn = burn_in(model);
    let t_obs = 1.0e4 / model.mu.min(model.lambda);
    let per_timeline = 10_000;
    let n_timelines = n_samples.div_ceil(per_timeline).max(2);
    // draws on one timeline are correlated, so each timeline contributes a
    // single batch mean
    let timeline_means: Result<Vec<f64>> = (0..n_timelines)
        .into_par_iter()
        .map(|i| {
            let timeline =
                MotionTimeline::generate(model, t_burn + t_obs, stream_seed(seed, i as u64))?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(seed, (i as u64) ^ 0xa5a5_a5a5_a5a5_a5a5));
            let mut hits = 0usize;
            for _ in 0..per_timeline {
                let t = t_burn + rng.random::<f64>() * t_obs;
                if timeline.in_flight_at(t) {
                    hits += 1;
                }
            }
            Ok(hits as f64 / per_timeline as f64)
        })
        .collect();
    let estimate = Estimate::from_batch_means(timeline_means?.into_iter(), per_timeline);
    Ok(OracleReport::judge("p_flight", analytic, &estimate, 0.005 * analytic))
}

/// Empirical visibility similarity per Definitions 5 and 6: angular misses
/// sampled from the orientation model, squared displacement from the
/// mobility process, content direction uniform across the view. The
/// unclipped estimator matches the analytic product; the clipped variant
/// floors the angular overlaps at zero, which only differs once misses
/// exceed the angle of view.
pub fn mc_vis(
    orientation: &OrientationModel,
    position: &PositionModel,
    dt: f64,
    d: f64,
    n_samples: usize,
    seed: u64,
    clipped: bool,
    cfg: &ViSConfig,
) -> Result<OracleReport> {
    cfg.validate()?;
    if !(d > 0.0) {
        return Err(Error::domain(format!("d must be > 0, got {d}")));
    }
    let analytic = vis::vis(orientation, position, dt, d, cfg)?;
    let w_deg = cfg.w_fv * DEG_PER_RAD;

    let batches = psi_batches(position, dt, n_samples, seed, StartPhase::Any)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0xfeed));
    let mut means_theta = Vec::with_capacity(batches.len());
    let mut means_phi = Vec::with_capacity(batches.len());
    let mut means_dst = Vec::with_capacity(batches.len());
    for batch in &batches {
        let (mut bt, mut bp, mut bd) = (Stream::default(), Stream::default(), Stream::default());
        for &psi in batch {
            let d_theta = sample_delta_theta(orientation, dt, &mut rng)?;
            let d_phi = sample_delta_phi(orientation, dt, &mut rng)?;
            let (ot, op) = (1.0 - d_theta.abs() / w_deg, 1.0 - d_phi.abs() / w_deg);
            bt.push(if clipped { ot.max(0.0) } else { ot });
            bp.push(if clipped { op.max(0.0) } else { op });
            let vartheta = (rng.random::<f64>() - 0.5) * cfg.w_fv;
            bd.push((d * d + psi - 2.0 * d * psi.sqrt() * vartheta.cos()) / (d * d));
        }
        means_theta.push(bt.mean);
        means_phi.push(bp.mean);
        means_dst.push(bd.mean);
    }
    let e_theta = Estimate::from_batch_means(means_theta.into_iter(), BATCH);
    let e_phi = Estimate::from_batch_means(means_phi.into_iter(), BATCH);
    let e_dst = Estimate::from_batch_means(means_dst.into_iter(), BATCH);
    let estimate = e_theta.mean * e_phi.mean * e_dst.mean;
    // stderr of a product of independent means, delta method
    let rel2 = |e: &Estimate| (e.stderr / e.mean) * (e.stderr / e.mean);
    let stderr = estimate.abs() * (rel2(&e_theta) + rel2(&e_phi) + rel2(&e_dst)).sqrt();
    let mc_estimate = estimate;
    let tolerance = (0.01 * analytic.vis.abs()).max(analytic.err_bound);
    Ok(OracleReport {
        quantity: format!(
            "vis{} dt={dt} d={d}",
            if clipped { " (clipped)" } else { "" }
        ),
        analytic: analytic.vis,
        mc_estimate,
        mc_stderr: stderr,
        n_samples: e_dst.n,
        tolerance,
        verdict: (analytic.vis - mc_estimate).abs() <= tolerance + 3.0 * stderr,
    })
}

/// The full oracle suite run by the `verify` subcommand. `scale` shrinks
/// the default sample counts (1 = full size).
pub fn oracle_suite(
    orientation: &OrientationModel,
    position: &PositionModel,
    seed: u64,
    scale: f64,
) -> Result<Vec<OracleReport>> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::domain("scale must be in (0, 1]"));
    }
    let n_mom = ((DEFAULT_MOMENT_SAMPLES as f64 * scale) as usize).max(10_000);
    let n_vis = ((DEFAULT_VIS_SAMPLES as f64 * scale) as usize).max(10_000);
    let cfg = ViSConfig::default();
    let mut reports = Vec::new();
    for (i, &dt) in [1.0 / 6.0, 0.25].iter().enumerate() {
        reports.extend(mc_moments(position, dt, 4, n_mom, stream_seed(seed, 10 + i as u64))?);
    }
    reports.push(mc_p_flight(position, n_mom, stream_seed(seed, 20))?);
    for (i, clipped) in [false, true].into_iter().enumerate() {
        reports.push(mc_vis(
            orientation,
            position,
            0.25,
            20.0,
            n_vis,
            stream_seed(seed, 30 + i as u64),
            clipped,
            &cfg,
        )?);
    }
    Ok(reports)
}
