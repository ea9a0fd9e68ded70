//! Derivative-free local minimization: a Nelder-Mead simplex with
//! deterministic multi-start, used by the histogram fitters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Box constraints per coordinate, inclusive on both ends.
#[derive(Debug, Clone)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::domain("bounds must be non-empty and of equal length"));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return Err(Error::domain(format!("invalid bound pair ({a}, {b})")));
            }
        }
        Ok(Bounds { lo, hi })
    }

    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

/// One Nelder-Mead run from a given starting point.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    start: &[f64],
    bounds: &Bounds,
    max_iter: usize,
    tol: f64,
) -> Minimum {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut p = start.to_vec();
        let span = bounds.hi[i] - bounds.lo[i];
        let step = 0.05 * span;
        p[i] = if p[i] + step <= bounds.hi[i] { p[i] + step } else { p[i] - step };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();

    for _ in 0..max_iter {
        // order best to worst
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;

        if (values[n] - values[0]).abs() <= tol * (values[0].abs() + tol) {
            break;
        }

        // centroid of all but the worst
        let mut centroid = vec![0.0; n];
        for p in simplex.iter().take(n) {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }

        let eval = |point: Vec<f64>| -> (Vec<f64>, f64) {
            let mut p = point;
            bounds.clamp(&mut p);
            let v = f(&p);
            (p, v)
        };
        let blend = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let (refl, refl_v) = eval(blend(REFLECT));
        if refl_v < values[0] {
            let (exp, exp_v) = eval(blend(EXPAND));
            if exp_v < refl_v {
                simplex[n] = exp;
                values[n] = exp_v;
            } else {
                simplex[n] = refl;
                values[n] = refl_v;
            }
        } else if refl_v < values[n - 1] {
            simplex[n] = refl;
            values[n] = refl_v;
        } else {
            let (con, con_v) = if refl_v < values[n] {
                eval(blend(CONTRACT))
            } else {
                eval(blend(-CONTRACT))
            };
            if con_v < values[n].min(refl_v) {
                simplex[n] = con;
                values[n] = con_v;
            } else {
                // shrink toward the best vertex
                let best = simplex[0].clone();
                for i in 1..=n {
                    for (p, b) in simplex[i].iter_mut().zip(&best) {
                        *p = b + SHRINK * (*p - b);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    Minimum { x: simplex[best].clone(), value: values[best] }
}

/// Multi-start minimization: the supplied seeds (closed-form estimates)
/// plus random restarts inside the bounds, all deterministic for a fixed
/// seed. Returns the best minimum found.
pub fn minimize<F: Fn(&[f64]) -> f64>(
    f: F,
    bounds: &Bounds,
    seed_points: &[Vec<f64>],
    restarts: usize,
    seed: u64,
) -> Result<Minimum> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    for s in seed_points {
        if s.len() != bounds.dim() {
            return Err(Error::domain(format!(
                "seed point has dimension {}, bounds have {}",
                s.len(),
                bounds.dim()
            )));
        }
        let mut p = s.clone();
        bounds.clamp(&mut p);
        starts.push(p);
    }
    while starts.len() < seed_points.len() + restarts {
        starts.push(bounds.random_point(&mut rng));
    }

    let mut best: Option<Minimum> = None;
    for start in &starts {
        let m = nelder_mead(&f, start, bounds, 400 * bounds.dim(), 1e-12);
        if best.as_ref().map_or(true, |b| m.value < b.value) {
            best = Some(m);
        }
    }
    best.ok_or_else(|| Error::domain("no starting points supplied"))
}
