//! Paused-MRWP position process: exponential flight times, exponential
//! pause times with a point mass at zero, uniform flight directions,
//! constant speed on an infinite plane.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the paused-MRWP position model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionModel {
    /// Flight-time rate (1/s): flight durations are Exp(mu).
    pub mu: f64,
    /// Pause-time rate (1/s) for the exponential part.
    pub lambda: f64,
    /// Probability mass of a zero-length pause.
    pub c: f64,
    /// Constant movement speed (m/s).
    pub v: f64,
}

impl PositionModel {
    pub fn new(mu: f64, lambda: f64, c: f64, v: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::domain(format!("mu must be finite and > 0, got {mu}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::domain(format!("lambda must be finite and > 0, got {lambda}")));
        }
        // c = 1 makes the pause mixture degenerate and 1/(1-c) blow up;
        // reject anything within 1e-9 of it.
        if !(0.0..1.0 - 1e-9).contains(&c) {
            return Err(Error::domain(format!("c must be in [0, 1), got {c}")));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::domain(format!("v must be finite and > 0, got {v}")));
        }
        Ok(PositionModel { mu, lambda, c, v })
    }

    /// Placeholder defaults pending a fit from traces.
    pub fn placeholder() -> Self {
        PositionModel { mu: 0.5, lambda: 1.0, c: 0.3, v: 1.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    /// Straight constant-speed movement along `direction` (radians).
    Flight { direction: f64 },
    Pause,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub duration: f64,
    pub kind: SegmentKind,
}

/// A realized alternating flight/pause sequence starting at the origin
/// waypoint, with the position at every segment boundary precomputed.
#[derive(Debug, Clone)]
pub struct MotionTimeline {
    segments: Vec<Segment>,
    /// Position at the start of each segment.
    positions: Vec<(f64, f64)>,
    speed: f64,
    total: f64,
    pub origin: (f64, f64),
}

impl MotionTimeline {
    /// Generate a timeline covering at least `horizon` seconds.
    /// Deterministic for a fixed seed.
    pub fn generate(model: &PositionModel, horizon: f64, seed: u64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon must be finite and > 0, got {horizon}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut segments = Vec::new();
        let mut positions = Vec::new();
        let origin = (0.0, 0.0);
        let mut pos = origin;
        let mut t = 0.0;
        while t < horizon {
            let direction = rng.random::<f64>() * std::f64::consts::TAU;
            let flight = exp_sample(&mut rng, model.mu);
            segments.push(Segment { start: t, duration: flight, kind: SegmentKind::Flight { direction } });
            positions.push(pos);
            pos = (
                pos.0 + model.v * flight * direction.cos(),
                pos.1 + model.v * flight * direction.sin(),
            );
            t += flight;

            let pause = if rng.random::<f64>() < model.c {
                0.0
            } else {
                exp_sample(&mut rng, model.lambda)
            };
            segments.push(Segment { start: t, duration: pause, kind: SegmentKind::Pause });
            positions.push(pos);
            t += pause;
        }
        Ok(MotionTimeline { segments, positions, speed: model.v, total: t, origin })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.total
    }

    fn segment_index_at(&self, t: f64) -> usize {
        // last segment whose start <= t; zero-length pauses are skipped
        // automatically because the next segment shares the same start
        let idx = self.segments.partition_point(|s| s.start <= t);
        idx.saturating_sub(1)
    }

    /// Position at time `t` (clamped into the covered range).
    pub fn position_at(&self, t: f64) -> (f64, f64) {
        if t <= 0.0 {
            return self.origin;
        }
        let t = t.min(self.total);
        let idx = self.segment_index_at(t);
        let seg = &self.segments[idx];
        let base = self.positions[idx];
        match seg.kind {
            SegmentKind::Flight { direction } => {
                let dt = (t - seg.start).min(seg.duration);
                (
                    base.0 + self.speed * dt * direction.cos(),
                    base.1 + self.speed * dt * direction.sin(),
                )
            }
            SegmentKind::Pause => base,
        }
    }

    /// True when `t` falls strictly inside a flight segment.
    pub fn in_flight_at(&self, t: f64) -> bool {
        if t < 0.0 {
            return false;
        }
        let idx = self.segment_index_at(t);
        matches!(self.segments[idx].kind, SegmentKind::Flight { .. })
    }

    /// Direction of the flight in progress at `t`; during a pause, the
    /// direction of the most recent flight. Before the first flight the
    /// first flight's direction is returned.
    pub fn walking_direction_at(&self, t: f64) -> f64 {
        let idx = if t <= 0.0 { 0 } else { self.segment_index_at(t.min(self.total)) };
        for i in (0..=idx).rev() {
            if let SegmentKind::Flight { direction } = self.segments[i].kind {
                return direction;
            }
        }
        match self.segments[0].kind {
            SegmentKind::Flight { direction } => direction,
            SegmentKind::Pause => unreachable!("timelines start with a flight"),
        }
    }
}

fn exp_sample<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).max(f64::MIN_POSITIVE).ln() / rate
}

/// Derive an independent per-batch seed from a base seed (splitmix64 step).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which phase the observation window is conditioned to start in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartPhase {
    Any,
    /// Case 1: the window starts during a pause.
    Pause,
    /// Case 2: the window starts during a flight.
    Flight,
}

const SAMPLES_PER_TIMELINE: usize = 1_000;

/// Burn-in before sampling starts, approximating the stationary regime.
pub fn burn_in(model: &PositionModel) -> f64 {
    (100.0 / model.mu).max(100.0 / model.lambda)
}

/// Squared displacement samples over windows of length `dt`, with the start
/// time drawn uniformly from a long stationarized timeline. The observation
/// may start mid-flight or mid-pause. Fresh timelines are generated every
/// batch so batches are independent.
pub fn displacement_sample(
    model: &PositionModel,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    displacement_sample_phase(model, dt, n_samples, seed, StartPhase::Any)
}

/// As [`displacement_sample`], optionally rejecting start times that do not
/// fall in the requested phase.
pub fn displacement_sample_phase(
    model: &PositionModel,
    dt: f64,
    n_samples: usize,
    seed: u64,
    phase: StartPhase,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be finite and > 0, got {dt}")));
    }
    let t_burn = burn_in(model);
    let t_obs = 1.0e4 * dt;
    if t_obs < 10.0 * dt {
        return Err(Error::config(format!(
            "observation horizon {t_obs} shorter than 10 * dt = {}",
            10.0 * dt
        )));
    }
    let horizon = t_burn + t_obs + dt;

    let mut out = Vec::with_capacity(n_samples);
    let mut batch = 0u64;
    // a fixed number of start-time attempts per timeline, keeping whatever
    // lands in the requested phase: each timeline then contributes in
    // proportion to its own phase occupancy, which is what conditioning on
    // the phase of a uniformly drawn time point requires. Topping every
    // timeline up to a fixed accepted count would weight atypical timelines
    // too heavily and bias the estimate.
    let max_batches = 1_000 * (n_samples as u64 / SAMPLES_PER_TIMELINE as u64 + 1);
    while out.len() < n_samples {
        if batch >= max_batches {
            return Err(Error::convergence(
                "conditioned displacement sampling rejected too many start times",
            ));
        }
        let batch_seed = stream_seed(seed, batch);
        let timeline = MotionTimeline::generate(model, horizon, batch_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, batch ^ 0x5555_5555_5555_5555));
        for _ in 0..SAMPLES_PER_TIMELINE {
            let t_s = t_burn + rng.random::<f64>() * t_obs;
            let ok = match phase {
                StartPhase::Any => true,
                StartPhase::Pause => !timeline.in_flight_at(t_s),
                StartPhase::Flight => timeline.in_flight_at(t_s),
            };
            if !ok {
                continue;
            }
            let a = timeline.position_at(t_s);
            let b = timeline.position_at(t_s + dt);
            out.push((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2));
            if out.len() == n_samples {
                break;
            }
        }
        batch += 1;
    }
    Ok(out)
}
