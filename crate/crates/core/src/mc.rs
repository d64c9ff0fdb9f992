//! Seeded Monte Carlo baseline.
//!
//! Every sample draws from its own ChaCha8 stream (`seed`, stream = sample
//! index), results land in pre-allocated slots and the reduction runs in
//! index order, so the estimate does not depend on the thread count.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::{koopman_expectation, ExpectationResult, Observable, UncertaintyProblem};
use crate::quad::QuadOptions;

/// Largest tolerated fraction of failed samples.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Independent generator for sample `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub n: usize,
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Requested sample count; failed samples are excluded from the mean.
    pub n: usize,
    pub seed: u64,
    pub wall_time: f64,
    /// Prefix estimates of the first output component.
    pub convergence: Vec<Checkpoint>,
    pub failures: Vec<McFailure>,
}

/// Draws the `n` sample points used by [`mc_expectation`].
pub fn sample_points(problem: &UncertaintyProblem, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let density = problem.density()?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| density.sample(&mut substream(seed, i as u64)))
        .collect())
}

pub fn mc_expectation(
    problem: &UncertaintyProblem,
    g: &Observable,
    n: usize,
    seed: u64,
    checkpoints: &[usize],
) -> Result<MCResult> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("MC needs n >= 2, got {n}")));
    }
    let start = Instant::now();
    let density = problem.density()?;
    let action = problem.koopman_action(g);
    let samples: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = density.sample(&mut substream(seed, i as u64));
            action(&x)
        })
        .collect();

    let m = g.dim_out();
    let mut count = 0usize;
    let mut failures = Vec::new();
    let mut checkpoints: Vec<usize> = checkpoints.iter().copied().filter(|&c| c >= 1 && c <= n).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let mut next = checkpoints.iter().peekable();
    let mut convergence = Vec::with_capacity(checkpoints.len());
    // Welford keeps the running variance stable for large n.
    let mut mean = vec![0.0; m];
    let mut m2 = vec![0.0; m];
    for (i, s) in samples.into_iter().enumerate() {
        match s {
            Ok(v) => {
                count += 1;
                for j in 0..m {
                    let d = v[j] - mean[j];
                    mean[j] += d / count as f64;
                    m2[j] += d * (v[j] - mean[j]);
                }
            }
            Err(e) => failures.push(McFailure {
                index: i,
                reason: e.to_string(),
            }),
        }
        while next.peek().is_some_and(|&&c| c == i + 1) {
            next.next();
            if count > 0 && m > 0 {
                convergence.push(Checkpoint {
                    n: i + 1,
                    estimate: mean[0],
                    std_error: std_error(m2[0], count),
                });
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * n as f64 {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            n,
        });
    }
    if !failures.is_empty() {
        log::warn!("{} of {n} samples failed and were excluded", failures.len());
    }
    Ok(MCResult {
        estimate: mean,
        std_error: m2.iter().map(|&s| std_error(s, count)).collect(),
        n,
        seed,
        wall_time: start.elapsed().as_secs_f64(),
        convergence,
        failures,
    })
}

fn std_error(m2: f64, count: usize) -> f64 {
    if count < 2 {
        return f64::INFINITY;
    }
    (m2 / (count - 1) as f64 / count as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCentralMoments {
    pub mean: f64,
    /// Sample central moments of orders `2..=order`.
    pub values: Vec<f64>,
    /// Batch-means standard errors of `values`.
    pub std_errors: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub failures: usize,
}

fn central_sample_moments(x: &[f64], order: usize) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let values = (2..=order)
        .map(|k| x.iter().map(|v| (v - mean).powi(k as i32)).sum::<f64>() / n)
        .collect();
    (mean, values)
}

/// Sample central moments of a scalar observable with standard errors from
/// `batches` contiguous batch means.
pub fn mc_central_moments(
    problem: &UncertaintyProblem,
    g: &Observable,
    order: usize,
    n: usize,
    seed: u64,
    batches: usize,
) -> Result<McCentralMoments> {
    if g.dim_out() != 1 {
        return Err(Error::InvalidArgument(
            "central moments need a scalar observable".into(),
        ));
    }
    if !(2..=8).contains(&order) {
        return Err(Error::MomentOrder(order));
    }
    if batches < 2 || n < 2 * batches {
        return Err(Error::InvalidArgument(format!(
            "need at least two samples in each of {batches} batches"
        )));
    }
    let density = problem.density()?;
    let action = problem.koopman_action(g);
    let samples: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| action(&density.sample(&mut substream(seed, i as u64))))
        .collect();
    let failures = samples.iter().filter(|s| s.is_err()).count();
    if failures as f64 > MAX_FAILURE_FRACTION * n as f64 {
        return Err(Error::TooManyFailures { failed: failures, n });
    }
    let x: Vec<f64> = samples.into_iter().filter_map(|s| s.ok().map(|v| v[0])).collect();
    let (mean, values) = central_sample_moments(&x, order);
    let size = x.len() / batches;
    let per_batch: Vec<Vec<f64>> = x
        .chunks_exact(size)
        .map(|c| central_sample_moments(c, order).1)
        .collect();
    let b = per_batch.len() as f64;
    let std_errors = (0..values.len())
        .map(|j| {
            let m = per_batch.iter().map(|v| v[j]).sum::<f64>() / b;
            let var = per_batch.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / (b - 1.0);
            (var / b).sqrt()
        })
        .collect();
    Ok(McCentralMoments {
        mean,
        values,
        std_errors,
        n,
        seed,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub koopman: ExpectationResult,
    pub mc: MCResult,
    /// `mc.wall_time / koopman.wall_time`.
    pub speedup: f64,
    /// Per-component `|koopman − mc|` in units of the MC standard error.
    pub discrepancy_sigmas: Vec<f64>,
}

pub fn compare(
    problem: &UncertaintyProblem,
    g: &Observable,
    quad: &QuadOptions,
    n: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    let koopman = koopman_expectation(problem, g, quad)?;
    let mc = mc_expectation(problem, g, n, seed, &[])?;
    let discrepancy_sigmas = koopman
        .value
        .iter()
        .zip(&mc.estimate)
        .zip(&mc.std_error)
        .map(|((k, m), s)| (k - m).abs() / s)
        .collect();
    Ok(ComparisonReport {
        speedup: mc.wall_time / koopman.wall_time.max(f64::MIN_POSITIVE),
        koopman,
        mc,
        discrepancy_sigmas,
    })
}

/// Least-squares slope of `log|estimate − truth|` against `log n` per series.
pub fn log_error_slope(series: &[(usize, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|&(n, e)| ((n as f64).ln(), e.ln()))
        .collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
