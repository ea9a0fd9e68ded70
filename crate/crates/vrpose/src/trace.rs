//! Trace ingestion, flight/pause extraction, and histogram fitting of the
//! position and orientation models from recorded pose traces.

use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{stream_seed, MotionTimeline, PositionModel};
use crate::opt;
use crate::pose::{
    delta_phi_wrap, sample_delta_phi, sample_delta_theta, sample_theta, AzimuthRegimes,
    LaplaceParams, MixedLogisticLaplaceParams, MixedPdf, OrientationModel, PoseSample,
    ScaleTable, Trajectory, DEG_PER_RAD,
};

const CSV_HEADER: [&str; 6] = ["t", "x", "y", "z", "theta_deg", "phi_deg"];

/// Read a pose trace from CSV with header t,x,y,z,theta_deg,phi_deg.
/// Angles are converted to radians; any malformed row is rejected with its
/// line number.
pub fn load_trace(path: &Path) -> Result<Trajectory> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::domain(format!("cannot open {}: {e}", path.display())))?;
    {
        let headers = reader
            .headers()
            .map_err(|e| Error::domain(format!("cannot read header: {e}")))?;
        let got: Vec<&str> = headers.iter().collect();
        if got != CSV_HEADER {
            return Err(Error::domain(format!(
                "expected header {}, got {}",
                CSV_HEADER.join(","),
                got.join(",")
            )));
        }
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::domain(format!("malformed row: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != CSV_HEADER.len() {
            return Err(Error::domain(format!(
                "line {line}: expected {} fields, got {}",
                CSV_HEADER.len(),
                record.len()
            )));
        }
        let mut fields = [0.0f64; 6];
        for (i, raw) in record.iter().enumerate() {
            fields[i] = raw.parse().map_err(|_| {
                Error::domain(format!(
                    "line {line}: field {} ({raw:?}) is not a number",
                    CSV_HEADER[i]
                ))
            })?;
        }
        let sample = PoseSample {
            t: fields[0],
            x: fields[1],
            y: fields[2],
            z: fields[3],
            theta: fields[4] / DEG_PER_RAD,
            phi: wrap_rad(fields[5] / DEG_PER_RAD),
        };
        sample
            .validate()
            .map_err(|e| Error::domain(format!("line {line}: {e}")))?;
        if let Some(prev) = samples.last() {
            let prev: &PoseSample = prev;
            if sample.t <= prev.t {
                return Err(Error::domain(format!(
                    "line {line}: timestamps must be strictly increasing ({} after {})",
                    sample.t, prev.t
                )));
            }
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::domain(format!("{} contains no samples", path.display())));
    }
    Trajectory::new(samples, path.display().to_string())
}

/// Write a trace as CSV (angles in degrees, shortest round-trip decimals).
pub fn save_trace(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", CSV_HEADER.join(",")).unwrap();
    for s in traj.samples() {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.t,
            s.x,
            s.y,
            s.z,
            degree_repr(s.theta),
            degree_repr(s.phi)
        )
        .unwrap();
    }
    std::fs::write(path, out)
        .map_err(|e| Error::domain(format!("cannot write {}: {e}", path.display())))
}

/// Degree encoding of a radian value that survives the import division
/// exactly when one exists. Converting back and forth rounds twice, so the
/// nearest degree double is sometimes one ulp off the preimage; angles that
/// originated in degrees always have an exact representative within two
/// ulps.
fn degree_repr(rad: f64) -> f64 {
    let g0 = rad * DEG_PER_RAD;
    let mut candidates = [g0; 5];
    candidates[1] = g0.next_up();
    candidates[2] = g0.next_down();
    candidates[3] = candidates[1].next_up();
    candidates[4] = candidates[2].next_down();
    for g in candidates {
        if g / DEG_PER_RAD == rad {
            return g;
        }
    }
    g0
}

fn wrap_rad(phi: f64) -> f64 {
    // in-range values pass through untouched so angles survive a save/load
    // round trip bit for bit
    if (-std::f64::consts::PI..std::f64::consts::PI).contains(&phi) {
        phi
    } else {
        delta_phi_wrap(0.0, phi).unwrap_or(0.0)
    }
}

/// A straight constant-speed movement segment in the XZ plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub start: (f64, f64),
    pub end: (f64, f64),
    /// Seconds.
    pub duration: f64,
    /// Radians, atan2 of the net displacement.
    pub direction: f64,
}

impl Flight {
    pub fn length(&self) -> f64 {
        let dx = self.end.0 - self.start.0;
        let dz = self.end.1 - self.start.1;
        dx.hypot(dz)
    }

    pub fn speed(&self) -> f64 {
        self.length() / self.duration
    }
}

/// One inter-flight gap. Gaps shorter than the pause-detection floor are
/// only observed when the walking direction changes enough to cut the
/// flight, so they carry an inverse-detection-probability weight; longer
/// gaps are always detected and weigh 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauseObs {
    pub duration: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Radians; direction changes at least this large cut a flight.
    pub turn_threshold: f64,
    /// Meters; shorter segments are discarded.
    pub min_flight_length: f64,
    /// Meters per second; slower intervals count as standing still.
    pub pause_speed: f64,
    /// Seconds; still intervals at least this long are pauses.
    pub pause_min: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            turn_threshold: 30.0 / DEG_PER_RAD,
            min_flight_length: 0.5,
            pause_speed: 0.05,
            pause_min: 0.2,
        }
    }
}

impl ExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.turn_threshold > 0.0 && self.turn_threshold < std::f64::consts::PI) {
            return Err(Error::domain("turn_threshold must be in (0, pi)"));
        }
        if !(self.min_flight_length > 0.0)
            || !(self.pause_speed > 0.0)
            || !(self.pause_min > 0.0)
        {
            return Err(Error::domain("extraction thresholds must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExtractResult {
    pub flights: Vec<Flight>,
    pub pauses: Vec<PauseObs>,
    pub warnings: Vec<String>,
}

/// Segment a trace into flights and pauses with the standard angle model:
/// consecutive XZ steps merge into one flight while the direction change
/// stays below `turn_threshold`; still intervals of at least `pause_min`
/// become pauses.
pub fn extract_flights(traj: &Trajectory, cfg: &ExtractConfig) -> Result<ExtractResult> {
    cfg.validate()?;
    let s = traj.samples();
    if s.len() < 2 {
        return Err(Error::domain("extraction needs at least two samples"));
    }
    let mut warnings = Vec::new();
    let mut intervals: Vec<f64> = s.windows(2).map(|p| p[1].t - p[0].t).collect();
    intervals.sort_by(f64::total_cmp);
    let median_dt = intervals[intervals.len() / 2];
    if median_dt > 0.1 {
        warnings.push(format!(
            "sampling interval {median_dt:.3} s exceeds 0.1 s; segmentation may be unreliable"
        ));
    }

    // detection weight for gaps too short to register as still intervals:
    // with directions uniform on the circle, a transition is missed when
    // the turn stays under the threshold
    let miss_prob = cfg.turn_threshold / std::f64::consts::PI;
    let short_gap_weight = 1.0 / (1.0 - miss_prob);

    let moving: Vec<bool> = s
        .windows(2)
        .map(|p| {
            let d = (p[1].x - p[0].x).hypot(p[1].z - p[0].z);
            d / (p[1].t - p[0].t) >= cfg.pause_speed
        })
        .collect();

    let mut raw_flights: Vec<(usize, usize)> = Vec::new(); // sample index ranges
    let mut pauses: Vec<PauseObs> = Vec::new();
    let mut cur: Option<(usize, usize)> = None; // (start sample, end sample)
    let close = |cur: &mut Option<(usize, usize)>,
                     raw: &mut Vec<(usize, usize)>,
                     pauses: &mut Vec<PauseObs>,
                     gap: Option<PauseObs>| {
        if let Some(range) = cur.take() {
            raw.push(range);
            if let Some(g) = gap {
                pauses.push(g);
            }
        }
    };

    let mut k = 0;
    while k < moving.len() {
        if !moving[k] {
            // still run
            let run_start = k;
            while k < moving.len() && !moving[k] {
                k += 1;
            }
            let dwell = s[k.min(s.len() - 1)].t - s[run_start].t;
            if dwell >= cfg.pause_min {
                close(&mut cur, &mut raw_flights, &mut pauses, Some(PauseObs { duration: dwell, weight: 1.0 }));
            }
            // shorter dwells stay attached; the turn check below decides
            continue;
        }
        let step = (s[k + 1].x - s[k].x, s[k + 1].z - s[k].z);
        match cur {
            None => cur = Some((k, k + 1)),
            Some((start, end)) => {
                let net = (s[end].x - s[start].x, s[end].z - s[start].z);
                let turn = angle_between(net, step);
                if turn >= cfg.turn_threshold {
                    let gap = s[k].t - s[end].t;
                    let weight = if gap < cfg.pause_min { short_gap_weight } else { 1.0 };
                    close(
                        &mut cur,
                        &mut raw_flights,
                        &mut pauses,
                        Some(PauseObs { duration: gap, weight }),
                    );
                    // the cut step usually straddles the waypoint, pointing
                    // somewhere between the two flight directions; seeding
                    // the next flight with it would make the following step
                    // look like a second turn and double-count the pause
                } else {
                    cur = Some((start, k + 1));
                }
            }
        }
        k += 1;
    }
    close(&mut cur, &mut raw_flights, &mut pauses, None);

    let flights: Vec<Flight> = raw_flights
        .into_iter()
        .map(|(a, b)| {
            let (sa, sb) = (&s[a], &s[b]);
            Flight {
                start: (sa.x, sa.z),
                end: (sb.x, sb.z),
                duration: sb.t - sa.t,
                direction: (sb.z - sa.z).atan2(sb.x - sa.x),
            }
        })
        .filter(|f| f.duration > 0.0 && f.length() > cfg.min_flight_length)
        .collect();

    Ok(ExtractResult { flights, pauses, warnings })
}

fn angle_between(u: (f64, f64), v: (f64, f64)) -> f64 {
    (u.0 * v.1 - u.1 * v.0).atan2(u.0 * v.0 + u.1 * v.1).abs()
}

/// Distribution families the fitters consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFamily {
    Laplace,
    Logistic,
    Normal,
    Uniform,
    Exponential,
    MixedLogisticLaplace,
    ExpPlusDirac,
}

impl FitFamily {
    /// Parameter names in the order they appear in `FitReport::params`.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            FitFamily::Laplace => &["mean", "scale"],
            FitFamily::Logistic => &["mean", "scale"],
            FitFamily::Normal => &["mean", "sd"],
            FitFamily::Uniform => &[],
            FitFamily::Exponential => &["rate"],
            FitFamily::MixedLogisticLaplace => &["mu_lo", "b_lo", "mu_l", "b_l", "p_l"],
            FitFamily::ExpPlusDirac => &["rate", "c"],
        }
    }
}

/// Histogram layout: `n_bins` bins of `bin_width` starting at `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub lo: f64,
    pub bin_width: f64,
    pub n_bins: usize,
}

impl HistogramSpec {
    pub fn hi(&self) -> f64 {
        self.lo + self.bin_width * self.n_bins as f64
    }

    pub fn edges(&self, j: usize) -> (f64, f64) {
        (
            self.lo + self.bin_width * j as f64,
            self.lo + self.bin_width * (j + 1) as f64,
        )
    }
}

/// Empirical bin masses (weighted fractions summing to 1 when every sample
/// lands inside the range).
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub spec: HistogramSpec,
    pub masses: Vec<f64>,
}

impl Histogram {
    pub fn from_samples(samples: &[f64], spec: HistogramSpec) -> Self {
        let weighted: Vec<(f64, f64)> = samples.iter().map(|&x| (x, 1.0)).collect();
        Self::from_weighted(&weighted, spec)
    }

    pub fn from_weighted(samples: &[(f64, f64)], spec: HistogramSpec) -> Self {
        let mut masses = vec![0.0; spec.n_bins];
        let mut total = 0.0;
        for &(x, w) in samples {
            total += w;
            let j = ((x - spec.lo) / spec.bin_width).floor();
            if j >= 0.0 && (j as usize) < spec.n_bins {
                masses[j as usize] += w;
            }
        }
        if total > 0.0 {
            for m in &mut masses {
                *m /= total;
            }
        }
        Histogram { spec, masses }
    }
}

/// Result of fitting one family to one histogram. `sse` is the sum of
/// squared bin-mass errors on the histogram described by `bins`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub family: FitFamily,
    pub params: Vec<(String, f64)>,
    pub sse: f64,
    pub bins: HistogramSpec,
}

impl FitReport {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    fn from_values(family: FitFamily, values: &[f64], sse: f64, bins: HistogramSpec) -> Self {
        let params = family
            .param_names()
            .iter()
            .zip(values)
            .map(|(n, &v)| (n.to_string(), v))
            .collect();
        FitReport { family, params, sse, bins }
    }

    fn values(&self) -> Vec<f64> {
        self.params.iter().map(|&(_, v)| v).collect()
    }
}

/// The report with the smallest SSE.
pub fn winning_family<'a>(reports: &'a [FitReport]) -> &'a FitReport {
    reports
        .iter()
        .min_by(|a, b| a.sse.total_cmp(&b.sse))
        .expect("at least one candidate report")
}

fn erf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7; ample for histogram SSE
    let sign = x.signum();
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

fn laplace_cdf(x: f64, mean: f64, scale: f64) -> f64 {
    let z = (x - mean) / scale;
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

fn logistic_cdf(x: f64, mean: f64, scale: f64) -> f64 {
    1.0 / (1.0 + (-(x - mean) / scale).exp())
}

/// Model probability masses per bin, renormalized to the histogram range
/// (the truncated-density convention used throughout the angle tables).
pub fn model_bin_masses(family: FitFamily, values: &[f64], spec: &HistogramSpec) -> Result<Vec<f64>> {
    if values.len() != family.param_names().len() {
        return Err(Error::domain(format!(
            "{family:?} expects {} parameters, got {}",
            family.param_names().len(),
            values.len()
        )));
    }
    let (lo, hi) = (spec.lo, spec.hi());
    let masses = match family {
        FitFamily::Laplace => cdf_masses(spec, |x| laplace_cdf(x, values[0], values[1])),
        FitFamily::Logistic => cdf_masses(spec, |x| logistic_cdf(x, values[0], values[1])),
        FitFamily::Normal => cdf_masses(spec, |x| {
            0.5 * (1.0 + erf((x - values[0]) / (values[1] * std::f64::consts::SQRT_2)))
        }),
        FitFamily::Uniform => vec![1.0 / spec.n_bins as f64; spec.n_bins],
        FitFamily::Exponential => {
            let rate = values[0];
            cdf_masses(spec, |x| 1.0 - (-rate * (x - lo).max(0.0)).exp())
        }
        FitFamily::ExpPlusDirac => {
            let (rate, c) = (values[0], values[1]);
            let norm = 1.0 - (-rate * (hi - lo)).exp();
            let mut m: Vec<f64> = (0..spec.n_bins)
                .map(|j| {
                    let (a, b) = spec.edges(j);
                    (1.0 - c) * ((-rate * (a - lo)).exp() - (-rate * (b - lo)).exp()) / norm
                })
                .collect();
            m[0] += c;
            m
        }
        FitFamily::MixedLogisticLaplace => {
            if (lo + hi).abs() > 1e-9 {
                return Err(Error::domain(
                    "mixed family requires a histogram symmetric about zero",
                ));
            }
            let p = MixedLogisticLaplaceParams {
                mu_lo: values[0],
                b_lo: values[1],
                mu_l: values[2],
                b_l: values[3],
                p_l: values[4],
            };
            let pdf = MixedPdf::new(p)?;
            (0..spec.n_bins)
                .map(|j| {
                    let (a, b) = spec.edges(j);
                    // bins never straddle zero for the symmetric layouts in
                    // use; integrate the |x| form over the covered half
                    let (qa, qb) = if b <= 0.0 { (-b, -a) } else { (a.max(0.0), b) };
                    mixed_half_mass(&pdf, qa, qb)
                })
                .collect()
        }
    };
    Ok(masses)
}

fn cdf_masses<F: Fn(f64) -> f64>(spec: &HistogramSpec, cdf: F) -> Vec<f64> {
    let norm = cdf(spec.hi()) - cdf(spec.lo);
    (0..spec.n_bins)
        .map(|j| {
            let (a, b) = spec.edges(j);
            (cdf(b) - cdf(a)) / norm
        })
        .collect()
}

/// Mass of the normalized mixed density over [qa, qb] with 0 <= qa <= qb,
/// one side of the symmetric support.
fn mixed_half_mass(pdf: &MixedPdf, qa: f64, qb: f64) -> f64 {
    let p = pdf.params();
    let lap = p.p_l * pdf.laplace_norm() * (p.mu_l / p.b_l).exp() / 2.0
        * ((-qa / p.b_l).exp() - (-qb / p.b_l).exp());
    let lo = (1.0 - p.p_l)
        * pdf.logistic_norm()
        * (logistic_cdf(qb, p.mu_lo, p.b_lo) - logistic_cdf(qa, p.mu_lo, p.b_lo));
    (lap + lo) / pdf.total_mass()
}

/// Sum of squared bin-mass errors of a report's parameters against a
/// histogram with the report's own bin layout.
pub fn report_sse(report: &FitReport, hist: &Histogram) -> Result<f64> {
    if hist.spec != report.bins {
        return Err(Error::domain("histogram layout differs from the report's"));
    }
    let model = model_bin_masses(report.family, &report.values(), &hist.spec)?;
    Ok(model
        .iter()
        .zip(&hist.masses)
        .map(|(m, e)| (m - e) * (m - e))
        .sum())
}

fn sse_against(family: FitFamily, values: &[f64], hist: &Histogram) -> f64 {
    match model_bin_masses(family, values, &hist.spec) {
        Ok(model) => model
            .iter()
            .zip(&hist.masses)
            .map(|(m, e)| (m - e) * (m - e))
            .sum(),
        Err(_) => f64::INFINITY,
    }
}

/// Fitting configuration shared by all fitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Degrees, for angle histograms.
    pub angle_bin_deg: f64,
    /// Seconds, for duration histograms.
    pub duration_bin: f64,
    /// Random restarts of the simplex search per family.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { angle_bin_deg: 1.0, duration_bin: 0.25, restarts: 20, seed: 0 }
    }
}

fn fit_family(
    family: FitFamily,
    hist: &Histogram,
    bounds: opt::Bounds,
    seeds: Vec<Vec<f64>>,
    cfg: &FitConfig,
    stream: u64,
) -> Result<FitReport> {
    let min = opt::minimize(
        |x| sse_against(family, x, hist),
        &bounds,
        &seeds,
        cfg.restarts,
        stream_seed(cfg.seed, stream),
    )?;
    let sse = sse_against(family, &min.x, hist);
    Ok(FitReport::from_values(family, &min.x, sse, hist.spec))
}

/// Position-model fit: flight-duration exponential, pause exp-plus-point-
/// mass, length-weighted speed.
#[derive(Debug, Clone)]
pub struct PositionFit {
    pub model: PositionModel,
    pub flight_report: FitReport,
    pub pause_report: FitReport,
}

pub fn fit_position_model(
    flights: &[Flight],
    pauses: &[PauseObs],
    cfg: &FitConfig,
) -> Result<PositionFit> {
    if flights.len() < 100 {
        return Err(Error::domain(format!(
            "position fit needs at least 100 flights, got {}",
            flights.len()
        )));
    }
    let w = cfg.duration_bin;
    let total_len: f64 = flights.iter().map(Flight::length).sum();
    let total_dur: f64 = flights.iter().map(|f| f.duration).sum();
    let v = total_len / total_dur;

    // flight durations are left-truncated by the minimum-length filter; by
    // memorylessness the distribution beyond the first whole bin past the
    // shortest observation is still exponential with the same rate
    let min_dur = flights.iter().map(|f| f.duration).fold(f64::INFINITY, f64::min);
    let t_cut = w * (min_dur / w).ceil();
    let durs: Vec<f64> = flights.iter().map(|f| f.duration).filter(|&d| d >= t_cut).collect();
    if durs.len() < 50 {
        return Err(Error::domain("too few flight durations beyond the truncation point"));
    }
    let max_dur = durs.iter().fold(0.0f64, |a, &b| a.max(b));
    let spec = HistogramSpec {
        lo: t_cut,
        bin_width: w,
        n_bins: (((max_dur - t_cut) / w).floor() as usize + 1).max(2),
    };
    let hist = Histogram::from_samples(&durs, spec);
    let mean = durs.iter().sum::<f64>() / durs.len() as f64;
    let flight_report = fit_family(
        FitFamily::Exponential,
        &hist,
        opt::Bounds::new(vec![1e-3], vec![100.0])?,
        vec![vec![1.0 / (mean - t_cut).max(1e-6)]],
        cfg,
        1,
    )?;
    let mu_raw = flight_report.param("rate").unwrap();

    // transitions missed by the turn test merge adjacent flights, and a
    // geometric number of exponential flights is again exponential with
    // the rate scaled by the detection probability. The pause weights
    // estimate the true transition count, so detected / total recovers
    // that probability and undoes the merge bias.
    let n_detected = pauses.len() as f64;
    let total_weight: f64 = pauses.iter().map(|p| p.weight).sum();
    let mu = if total_weight > 0.0 && n_detected > 0.0 {
        mu_raw * total_weight / n_detected
    } else {
        mu_raw
    };

    // pause model: fit the rate on the weighted gap histogram beyond the
    // first bin, then read the point mass off the first-bin excess over
    // the exponential's prediction
    if pauses.is_empty() {
        return Err(Error::domain("position fit needs at least one pause observation"));
    }
    let weighted: Vec<(f64, f64)> = pauses.iter().map(|p| (p.duration, p.weight)).collect();
    let max_pause = weighted.iter().fold(0.0f64, |a, &(d, _)| a.max(d));
    let pspec = HistogramSpec {
        lo: 0.0,
        bin_width: w,
        n_bins: ((max_pause / w).floor() as usize + 1).max(2),
    };
    let phist = Histogram::from_weighted(&weighted, pspec);
    let h0 = phist.masses[0];
    let tail_mass: f64 = 1.0 - h0;
    let lambda = if tail_mass > 1e-9 {
        let tail_spec = HistogramSpec { lo: w, bin_width: w, n_bins: pspec.n_bins - 1 };
        let tail_hist = Histogram {
            spec: tail_spec,
            masses: phist.masses[1..].iter().map(|m| m / tail_mass).collect(),
        };
        let (tw, td): (f64, f64) = weighted
            .iter()
            .filter(|&&(d, _)| d >= w)
            .fold((0.0, 0.0), |(tw, td), &(d, wt)| (tw + wt, td + wt * d));
        let tail_mean = if tw > 0.0 { td / tw } else { 2.0 * w };
        fit_family(
            FitFamily::Exponential,
            &tail_hist,
            opt::Bounds::new(vec![1e-3], vec![100.0])?,
            vec![vec![1.0 / (tail_mean - w).max(1e-6)]],
            cfg,
            2,
        )?
        .param("rate")
        .unwrap()
    } else {
        // everything sits in the first bin; only a lower bound on the rate
        // is identifiable
        1.0 / w
    };
    // h0 = c + (1 - c)(1 - e^{-lambda w}) solved for c
    let exp_first_bin = 1.0 - (-lambda * w).exp();
    let c = ((h0 - exp_first_bin) / (-lambda * w).exp()).clamp(0.0, 0.99);
    let pause_values = [lambda, c];
    let pause_report = FitReport::from_values(
        FitFamily::ExpPlusDirac,
        &pause_values,
        sse_against(FitFamily::ExpPlusDirac, &pause_values, &phist),
        pspec,
    );

    let model = PositionModel::new(mu, lambda, c.max(0.0), v)?;
    Ok(PositionFit { model, flight_report, pause_report })
}

fn angle_spec(half_range: f64, bin: f64) -> HistogramSpec {
    let n = (2.0 * half_range / bin).round() as usize;
    HistogramSpec { lo: -half_range, bin_width: bin, n_bins: n.max(2) }
}

/// Fit a Laplace to the polar-angle marginal, degrees.
pub fn fit_theta(traj: &Trajectory, cfg: &FitConfig) -> Result<FitReport> {
    let mut deg: Vec<f64> = traj.samples().iter().map(|s| s.theta * DEG_PER_RAD).collect();
    if deg.len() < 100 {
        return Err(Error::domain("theta fit needs at least 100 samples"));
    }
    deg.sort_by(f64::total_cmp);
    let median = deg[deg.len() / 2];
    let mad = deg.iter().map(|x| (x - median).abs()).sum::<f64>() / deg.len() as f64;
    let spec = HistogramSpec {
        lo: 0.0,
        bin_width: cfg.angle_bin_deg,
        n_bins: (180.0 / cfg.angle_bin_deg).round() as usize,
    };
    let hist = Histogram::from_samples(&deg, spec);
    fit_family(
        FitFamily::Laplace,
        &hist,
        opt::Bounds::new(vec![0.0, 0.05], vec![180.0, 90.0])?,
        vec![vec![median, mad.max(0.1)]],
        cfg,
        3,
    )
}

fn lag_pairs(traj: &Trajectory, dt: f64) -> Result<(usize, f64)> {
    let s = traj.samples();
    if s.len() < 3 {
        return Err(Error::domain("lag extraction needs at least three samples"));
    }
    let base = (s[s.len() - 1].t - s[0].t) / (s.len() - 1) as f64;
    let lag = (dt / base).round().max(1.0) as usize;
    Ok((lag, base))
}

/// Non-overlapping lag-`dt` polar-angle changes fitted as a zero-mean
/// Laplace. Returns the scale (degrees) and its report.
pub fn fit_delta_theta(traj: &Trajectory, dt: f64, cfg: &FitConfig) -> Result<(f64, FitReport)> {
    let (lag, _) = lag_pairs(traj, dt)?;
    let s = traj.samples();
    let diffs: Vec<f64> = (0..)
        .map(|i| i * lag)
        .take_while(|&i| i + lag < s.len())
        .map(|i| (s[i + lag].theta - s[i].theta) * DEG_PER_RAD)
        .collect();
    if diffs.len() < 100 {
        return Err(Error::domain(format!(
            "only {} delta-theta pairs at dt = {dt}; need 100",
            diffs.len()
        )));
    }
    let mle = diffs.iter().map(|x| x.abs()).sum::<f64>() / diffs.len() as f64;
    let half = diffs.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(8.0 * mle).max(1e-6);
    let spec = angle_spec(half, half / 40.0);
    let hist = Histogram::from_samples(&diffs, spec);
    let report = fit_family(
        FitFamily::Laplace,
        &hist,
        opt::Bounds::new(vec![-1e-12, mle / 20.0], vec![1e-12, mle * 20.0])?,
        vec![vec![0.0, mle]],
        cfg,
        4,
    )?;
    Ok((report.param("scale").unwrap(), report))
}

/// Candidate-family reports for one set of azimuth changes (degrees).
/// Parameters are fitted on the even-indexed half of the samples and the
/// reported SSE comes from the odd-indexed half, so nested families gain
/// nothing from chasing histogram noise; the winner has the smallest SSE.
pub fn fit_delta_phi_families(samples_deg: &[f64], cfg: &FitConfig) -> Result<Vec<FitReport>> {
    if samples_deg.len() < 200 {
        return Err(Error::domain(format!(
            "azimuth family fit needs at least 200 samples, got {}",
            samples_deg.len()
        )));
    }
    let train: Vec<f64> = samples_deg.iter().step_by(2).copied().collect();
    let val: Vec<f64> = samples_deg.iter().skip(1).step_by(2).copied().collect();
    let spec = angle_spec(180.0, cfg.angle_bin_deg);
    let train_hist = Histogram::from_samples(&train, spec);
    let val_hist = Histogram::from_samples(&val, spec);

    let mean_abs = train.iter().map(|x| x.abs()).sum::<f64>() / train.len() as f64;
    let spike = train.iter().filter(|x| x.abs() < 1.0).count() as f64 / train.len() as f64;

    let lap = fit_family(
        FitFamily::Laplace,
        &train_hist,
        opt::Bounds::new(vec![-1e-12, 0.05], vec![1e-12, 200.0])?,
        vec![vec![0.0, mean_abs]],
        cfg,
        5,
    )?;
    let mixed = fit_family(
        FitFamily::MixedLogisticLaplace,
        &train_hist,
        opt::Bounds::new(
            vec![-60.0, 0.5, -20.0, 0.01, 0.0],
            vec![60.0, 150.0, 20.0, 30.0, 1.0],
        )?,
        vec![
            vec![0.0, (mean_abs / (2.0 * 2.0f64.ln())).max(1.0), 0.0, 0.3, spike],
            vec![0.0, mean_abs.max(1.0), 0.0, mean_abs.max(0.1), 0.5],
        ],
        cfg,
        6,
    )?;
    let uni = FitReport::from_values(FitFamily::Uniform, &[], 0.0, spec);

    // score every family on the held-out half
    let mut reports = vec![lap, mixed, uni];
    for r in &mut reports {
        r.sse = sse_against(r.family, &r.values(), &val_hist);
    }
    Ok(reports)
}

/// Non-overlapping lag-`dt` azimuth changes in degrees.
pub fn delta_phi_samples(traj: &Trajectory, dt: f64) -> Result<Vec<f64>> {
    let (lag, _) = lag_pairs(traj, dt)?;
    let s = traj.samples();
    Ok((0..)
        .map(|i| i * lag)
        .take_while(|&i| i + lag < s.len())
        .map(|i| delta_phi_wrap(s[i].phi, s[i + lag].phi).map(|d| d * DEG_PER_RAD))
        .collect::<Result<Vec<f64>>>()?)
}

/// The full orientation fit: marginal, per-gap scale table, per-gap
/// azimuth family selection, and the regime boundaries read off the
/// family winners.
#[derive(Debug, Clone)]
pub struct OrientationFit {
    pub model: OrientationModel,
    pub theta_report: FitReport,
    pub delta_theta: Vec<(f64, FitReport)>,
    pub delta_phi: Vec<(f64, Vec<FitReport>)>,
    pub beta1: f64,
    pub beta2: f64,
    pub warnings: Vec<String>,
}

pub fn fit_orientation_model(
    traj: &Trajectory,
    dt_grid: &[f64],
    cfg: &FitConfig,
) -> Result<OrientationFit> {
    if dt_grid.is_empty() {
        return Err(Error::domain("dt grid must be non-empty"));
    }
    let mut grid = dt_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    let theta_report = fit_theta(traj, cfg)?;

    // per-gap fits are independent; run them in parallel and merge in grid
    // order so the outcome does not depend on scheduling
    let per_dt: Vec<(f64, Result<((f64, FitReport), Vec<FitReport>)>)> = grid
        .par_iter()
        .map(|&dt| {
            let out = (|| {
                let dtheta = fit_delta_theta(traj, dt, cfg)?;
                let samples = delta_phi_samples(traj, dt)?;
                let families = fit_delta_phi_families(&samples, cfg)?;
                Ok((dtheta, families))
            })();
            (dt, out)
        })
        .collect();

    let mut warnings = Vec::new();
    let mut delta_theta = Vec::new();
    let mut delta_phi = Vec::new();
    for (dt, out) in per_dt {
        match out {
            Ok((dtheta, families)) => {
                delta_theta.push((dt, dtheta.1));
                delta_phi.push((dt, families));
            }
            Err(e) => warnings.push(format!("dt = {dt} omitted: {e}")),
        }
    }
    if delta_phi.is_empty() {
        return Err(Error::domain("no dt in the grid produced enough samples"));
    }

    let sse_of = |fams: &[FitReport], f: FitFamily| {
        fams.iter().find(|r| r.family == f).map(|r| r.sse).unwrap_or(f64::INFINITY)
    };
    // the mixed family nests the Laplace and approximates the uniform, so
    // held-out near-ties are optimizer noise; a family with more parameters
    // must improve on the simpler one by a clear margin to claim the regime
    const MARGIN: f64 = 0.9;
    let beta1 = delta_phi
        .iter()
        .find(|(_, fams)| {
            sse_of(fams, FitFamily::MixedLogisticLaplace)
                < MARGIN * sse_of(fams, FitFamily::Laplace)
        })
        .map(|&(dt, _)| dt);
    let beta1 = beta1.ok_or_else(|| {
        Error::domain("no regime switch detected: the mixed family never wins")
    })?;
    let beta2 = delta_phi
        .iter()
        .filter(|&&(dt, _)| dt >= beta1)
        .find(|(_, fams)| {
            MARGIN * sse_of(fams, FitFamily::Uniform)
                < sse_of(fams, FitFamily::MixedLogisticLaplace)
        })
        .map(|&(dt, _)| dt);
    let beta2 = beta2.unwrap_or_else(|| {
        warnings.push("uniform regime not reached within the grid; beta2 extrapolated".into());
        2.0 * delta_phi.last().unwrap().0
    });
    if !(beta1 < beta2) {
        return Err(Error::domain(format!(
            "regime boundaries out of order: beta1 = {beta1}, beta2 = {beta2}"
        )));
    }

    let scale_entries: Vec<(f64, f64)> = delta_theta
        .iter()
        .map(|(dt, r)| (*dt, r.param("scale").unwrap()))
        .collect();
    let laplace_entries: Vec<(f64, LaplaceParams)> = delta_phi
        .iter()
        .filter(|&&(dt, _)| dt < beta1)
        .map(|(dt, fams)| {
            let r = fams.iter().find(|r| r.family == FitFamily::Laplace).unwrap();
            (*dt, LaplaceParams { mean: 0.0, scale: r.param("scale").unwrap() })
        })
        .collect();
    let mixed_entries: Vec<(f64, MixedLogisticLaplaceParams)> = delta_phi
        .iter()
        .filter(|&&(dt, _)| dt >= beta1 && dt < beta2)
        .map(|(dt, fams)| {
            let r = fams
                .iter()
                .find(|r| r.family == FitFamily::MixedLogisticLaplace)
                .unwrap();
            (
                *dt,
                MixedLogisticLaplaceParams {
                    mu_lo: r.param("mu_lo").unwrap(),
                    b_lo: r.param("b_lo").unwrap(),
                    mu_l: r.param("mu_l").unwrap(),
                    b_l: r.param("b_l").unwrap(),
                    p_l: r.param("p_l").unwrap(),
                },
            )
        })
        .collect();
    if laplace_entries.is_empty() || mixed_entries.is_empty() {
        return Err(Error::domain(
            "regime tables incomplete: need at least one Laplace-regime and one mixed-regime dt",
        ));
    }

    let model = OrientationModel::new(
        LaplaceParams::new(theta_report.param("mean").unwrap(), theta_report.param("scale").unwrap())?,
        ScaleTable::new(scale_entries)?,
        AzimuthRegimes { beta1, beta2, laplace: laplace_entries, mixed: mixed_entries },
    )?;
    Ok(OrientationFit { model, theta_report, delta_theta, delta_phi, beta1, beta2, warnings })
}

/// Synthesize a pose trace: position sampled from the mobility process,
/// polar angle as a reflected random walk with the one-frame scale, azimuth
/// as a wrapped random walk with one-frame increments. Lag-1 statistics
/// match the model; longer-lag orientation marginals follow the walk, not
/// the per-gap tables (the fitted model specifies marginals per gap, not a
/// single consistent process).
pub fn simulate_trace(
    orientation: &OrientationModel,
    position: &PositionModel,
    duration: f64,
    fps: f64,
    eye_height: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(duration > 0.0) || !(fps > 0.0) {
        return Err(Error::domain("duration and fps must be > 0"));
    }
    let timeline = MotionTimeline::generate(position, duration, stream_seed(seed, 1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 2));
    let base_dt = 1.0 / fps;
    let n = (duration * fps).floor() as usize + 1;
    let mut theta_deg = sample_theta(orientation, &mut rng);
    let mut phi_deg = rng.random::<f64>() * 360.0 - 180.0;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * base_dt;
        let (x, z) = timeline.position_at(t);
        samples.push(PoseSample {
            t,
            x,
            y: eye_height,
            z,
            theta: theta_deg / DEG_PER_RAD,
            phi: wrap_rad(phi_deg / DEG_PER_RAD),
        });
        theta_deg = reflect_deg(theta_deg + sample_delta_theta(orientation, base_dt, &mut rng)?);
        phi_deg = wrap_deg(phi_deg + sample_delta_phi(orientation, base_dt, &mut rng)?);
    }
    Trajectory::new(samples, format!("synthetic seed {seed}"))
}

fn reflect_deg(x: f64) -> f64 {
    // fold into [0, 180] by reflecting at both ends
    let m = x.rem_euclid(360.0);
    if m > 180.0 {
        360.0 - m
    } else {
        m
    }
}

fn wrap_deg(x: f64) -> f64 {
    let m = (x + 180.0).rem_euclid(360.0) - 180.0;
    if m >= 180.0 {
        m - 360.0
    } else {
        m
    }
}
