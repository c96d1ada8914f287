//! Distances between terminal-time ensembles and repetition statistics.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::f64::consts::LN_2;
use thiserror::Error;

pub const KDE_GRID_POINTS: usize = 2048;
pub const KDE_GRID_PAD: f64 = 3.0;
pub const PROBABILITY_FLOOR: f64 = 1e-30;
/// Kernel contributions beyond this many bandwidths are dropped.
const KERNEL_CUTOFF: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("samples contain a non-finite value")]
    NonFinite,
    #[error("need at least 2 repetitions, got {0}")]
    TooFewRepetitions(usize),
}

fn check(samples: &[f64], needed: usize) -> Result<(), MetricsError> {
    if samples.len() < needed {
        return Err(MetricsError::TooFewSamples {
            needed,
            found: samples.len(),
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Unbiased sample variance.
pub fn variance(samples: &[f64]) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(samples);
    samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `W1(P, Q) = integral |F_P - F_Q| dx` between empirical distributions.
pub fn wasserstein1(p: &[f64], q: &[f64]) -> Result<f64, MetricsError> {
    check(p, 1)?;
    check(q, 1)?;
    let a = sorted(p);
    let b = sorted(q);
    if a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut x = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - x);
        x = next;
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
    }
    Ok(total)
}

/// A metric divided by a reference scale, or left absolute when the scale
/// is too small to divide by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scaled {
    pub value: f64,
    pub relative: bool,
}

fn scale_by(value: f64, denom: f64, scale: f64) -> Scaled {
    if denom.abs() < 1e-8 * scale.max(f64::MIN_POSITIVE) {
        Scaled {
            value,
            relative: false,
        }
    } else {
        Scaled {
            value: value / denom.abs(),
            relative: true,
        }
    }
}

fn magnitude(p: &[f64], q: &[f64]) -> f64 {
    p.iter().chain(q).fold(1.0f64, |m, x| m.max(x.abs()))
}

/// `W1(P, Q) / |mu_ref|`.
pub fn rel_wasserstein1(p: &[f64], q: &[f64], mu_ref: f64) -> Result<Scaled, MetricsError> {
    let w = wasserstein1(p, q)?;
    Ok(scale_by(w, mu_ref, magnitude(p, q)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentErrors {
    pub rel_mean_err: Scaled,
    pub rel_var_err: Scaled,
}

/// Relative errors of the sample mean and unbiased variance against the
/// reference ensemble.
pub fn rel_moment_errors(p: &[f64], reference: &[f64]) -> Result<MomentErrors, MetricsError> {
    check(p, 2)?;
    check(reference, 2)?;
    let (mp, mr) = (mean(p), mean(reference));
    let (vp, vr) = (variance(p), variance(reference));
    let scale = magnitude(p, reference);
    Ok(MomentErrors {
        rel_mean_err: scale_by((mp - mr).abs(), mr, scale),
        rel_var_err: if vr > 0.0 {
            Scaled {
                value: (vp - vr).abs() / vr,
                relative: true,
            }
        } else {
            Scaled {
                value: (vp - vr).abs(),
                relative: false,
            }
        },
    })
}

/// Silverman's rule `0.9 min(sd, IQR / 1.34) n^(-1/5)`, floored at
/// `1e-6 max(1, |mean|)`. The flag is set when the floor was needed.
pub fn silverman_bandwidth(samples: &[f64]) -> (f64, bool) {
    let s = sorted(samples);
    let sd = variance(&s).sqrt();
    let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (s.len() as f64).powf(-0.2);
    let floor = 1e-6 * mean(&s).abs().max(1.0);
    if h > floor {
        (h, false)
    } else {
        (floor, true)
    }
}

/// Gaussian kernel density estimate.
#[derive(Clone, Debug)]
pub struct Kde {
    sorted: Vec<f64>,
    pub bandwidth: f64,
    pub degenerate: bool,
}

impl Kde {
    pub fn new(samples: &[f64]) -> Result<Self, MetricsError> {
        check(samples, 1)?;
        let (bandwidth, degenerate) = silverman_bandwidth(samples);
        Ok(Self {
            sorted: sorted(samples),
            bandwidth,
            degenerate,
        })
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().unwrap()
    }

    pub fn density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.sorted.partition_point(|&v| v < x - KERNEL_CUTOFF * h);
        let hi = self.sorted.partition_point(|&v| v <= x + KERNEL_CUTOFF * h);
        let sum: f64 = self.sorted[lo..hi]
            .iter()
            .map(|&v| {
                let z = (x - v) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        sum / (self.sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt())
    }
}

/// Uniform evaluation grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Grid {
    /// Spans every estimate's samples padded by `KDE_GRID_PAD` of its bandwidth.
    pub fn covering(kdes: &[&Kde]) -> Self {
        let lo = kdes.iter().map(|k| k.min() - KDE_GRID_PAD * k.bandwidth).fold(f64::INFINITY, f64::min);
        let hi = kdes.iter().map(|k| k.max() + KDE_GRID_PAD * k.bandwidth).fold(f64::NEG_INFINITY, f64::max);
        Self {
            lo,
            hi,
            points: KDE_GRID_POINTS,
        }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.points {
            self.hi
        } else {
            self.lo + i as f64 * self.step()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.x(i)).collect()
    }

    pub fn evaluate(&self, kde: &Kde) -> Vec<f64> {
        (0..self.points).map(|i| kde.density(self.x(i))).collect()
    }

    /// Counts of samples in the cells centred on each grid point.
    pub fn histogram(&self, samples: &[f64]) -> Vec<u64> {
        let mut counts = vec![0u64; self.points];
        let step = self.step();
        for &x in samples {
            let i = if step > 0.0 { ((x - self.lo) / step).round() } else { 0.0 };
            if i >= 0.0 && (i as usize) < self.points {
                counts[i as usize] += 1;
            }
        }
        counts
    }
}

/// Densities on a grid turned into floored, renormalised probabilities.
fn probabilities(density: &[f64]) -> Vec<f64> {
    let total: f64 = density.iter().sum();
    let floored: Vec<f64> = density
        .iter()
        .map(|&d| if total > 0.0 { d / total } else { 0.0 }.max(PROBABILITY_FLOOR))
        .collect();
    let z: f64 = floored.iter().sum();
    floored.into_iter().map(|p| p / z).collect()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Divergences {
    /// Jensen-Shannon divergence, natural log.
    pub js: f64,
    /// `KL(method || reference)`, natural log.
    pub kl: f64,
    pub bandwidth_method: f64,
    pub bandwidth_reference: f64,
    pub degenerate: bool,
}

/// JS and KL divergences between Gaussian KDEs of the two ensembles.
pub fn kde_divergences(p: &[f64], reference: &[f64]) -> Result<Divergences, MetricsError> {
    check(p, 2)?;
    check(reference, 2)?;
    let kp = Kde::new(p)?;
    let kq = Kde::new(reference)?;
    let grid = Grid::covering(&[&kp, &kq]);
    let pp = probabilities(&grid.evaluate(&kp));
    let qq = probabilities(&grid.evaluate(&kq));
    let m: Vec<f64> = pp.iter().zip(&qq).map(|(a, b)| 0.5 * (a + b)).collect();
    let js = (0.5 * kl(&pp, &m) + 0.5 * kl(&qq, &m)).clamp(0.0, LN_2);
    Ok(Divergences {
        js,
        kl: kl(&pp, &qq),
        bandwidth_method: kp.bandwidth,
        bandwidth_reference: kq.bandwidth,
        degenerate: kp.degenerate || kq.degenerate,
    })
}

/// All per-species metrics of one repetition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpeciesMetrics {
    pub rel_w1: Scaled,
    pub rel_mean_err: Scaled,
    pub rel_var_err: Scaled,
    pub divergences: Divergences,
}

impl SpeciesMetrics {
    pub fn compare(method: &[f64], reference: &[f64]) -> Result<Self, MetricsError> {
        let moments = rel_moment_errors(method, reference)?;
        Ok(Self {
            rel_w1: rel_wasserstein1(method, reference, mean(reference))?,
            rel_mean_err: moments.rel_mean_err,
            rel_var_err: moments.rel_var_err,
            divergences: kde_divergences(method, reference)?,
        })
    }
}

/// Mean with Student-t 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary, MetricsError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooFewRepetitions(n));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let sd = variance(values).sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.975);
    Ok(Summary {
        mean: mean(values),
        ci95: t * sd / (n as f64).sqrt(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub rel_w1: Summary,
    pub rel_mean_err: Summary,
    pub rel_var_err: Summary,
    pub js_div: Summary,
    pub kl_div: Summary,
}

/// Aggregates one species' metrics over repetitions.
pub fn aggregate_repetitions(reps: &[SpeciesMetrics]) -> Result<MetricReport, MetricsError> {
    let pick = |f: fn(&SpeciesMetrics) -> f64| summarize(&reps.iter().map(f).collect::<Vec<_>>());
    Ok(MetricReport {
        rel_w1: pick(|m| m.rel_w1.value)?,
        rel_mean_err: pick(|m| m.rel_mean_err.value)?,
        rel_var_err: pick(|m| m.rel_var_err.value)?,
        js_div: pick(|m| m.divergences.js)?,
        kl_div: pick(|m| m.divergences.kl)?,
    })
}

/// Terminal states of one ensemble, one row per path.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub method: String,
    pub seed: u64,
    pub repetition: usize,
    pub samples: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn species(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|row| row[k]).collect()
    }
}
