//! Monte Carlo oracle for the shuffled pair.
//!
//! Sampling runs over independent ChaCha streams, one per fixed-size chunk,
//! so results depend only on `(params, samples, seed)` and not on the
//! number of worker threads.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{multinomial_moments, normal_cdf, seeded_stream, Neumaier};
use crate::error::{domain, Result};
use crate::pairdist::{build_pair, ShuffleParams, Side};
use crate::renyi::check_order;
use crate::DEFAULT_TAIL_TOL;

const CHUNK: usize = 1 << 14;
const BOOTSTRAP_RESAMPLES: u64 = 200;
const BOOTSTRAP_STREAM: u64 = 1 << 40;

/// A Monte Carlo estimate, read as `value +- stderr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub seed: u64,
}

/// One draw `(a, b)` from `P` or `Q`.
pub fn sample_pair<R: Rng + ?Sized>(params: &ShuffleParams, side: Side, rng: &mut R) -> (u64, u64) {
    let c = draw_binomial(params.n - 1, params.p(), rng);
    let a = draw_binomial(c, 0.5, rng);
    let delta = u64::from(rng.random::<f64>() < params.q());
    match side {
        Side::P => (a + delta, c - a + 1 - delta),
        Side::Q => (a + 1 - delta, c - a + delta),
    }
}

fn draw_binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    Binomial::new(trials, p).expect("valid binomial").sample(rng)
}

fn side_index(side: Side) -> u64 {
    match side {
        Side::P => 0,
        Side::Q => 1,
    }
}

/// Runs `f` over `samples` draws in chunked streams and folds the partial
/// results in chunk order.
fn chunked<T, F>(samples: u64, seed: u64, stream_base: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut crate::dist::Stream, usize) -> T + Sync,
{
    let chunks = samples.div_ceil(CHUNK as u64);
    (0..chunks)
        .into_par_iter()
        .map(|i| {
            let len = if i + 1 == chunks {
                (samples - i * CHUNK as u64) as usize
            } else {
                CHUNK
            };
            let mut rng = seeded_stream(seed, stream_base + i);
            f(&mut rng, len)
        })
        .collect()
}

fn sample_counts(params: &ShuffleParams, side: Side, samples: u64, seed: u64) -> BTreeMap<(u64, u64), u64> {
    let parts = chunked(samples, seed, side_index(side) << 32, |rng, len| {
        let mut counts = BTreeMap::new();
        for _ in 0..len {
            *counts.entry(sample_pair(params, side, rng)).or_insert(0u64) += 1;
        }
        counts
    });
    let mut total = BTreeMap::new();
    for part in parts {
        for (k, v) in part {
            *total.entry(k).or_insert(0) += v;
        }
    }
    total
}

/// Orders atoms by `a / b`; the likelihood ratio `Q/P` decreases along it.
fn cmp_ab(x: (u64, u64), y: (u64, u64)) -> Ordering {
    (x.0 as u128 * y.1 as u128).cmp(&(y.0 as u128 * x.1 as u128))
}

/// The most powerful level-`alpha` test, randomized on the boundary level.
struct NpTest {
    boundary: (u64, u64),
    gamma: f64,
}

impl NpTest {
    fn calibrate(params: &ShuffleParams, alpha: f64) -> Result<Self> {
        let pair = build_pair(params, DEFAULT_TAIL_TOL)?;
        let mut atoms: Vec<((u64, u64), f64)> = pair.p.iter().map(|(a, b, lp)| ((a, b), lp.exp())).collect();
        atoms.sort_by(|x, y| cmp_ab(x.0, y.0));
        let mut before = Neumaier::default();
        let mut i = 0;
        while i < atoms.len() {
            let level = atoms[i].0;
            let mut mass = Neumaier::default();
            while i < atoms.len() && cmp_ab(atoms[i].0, level) == Ordering::Equal {
                mass.add(atoms[i].1);
                i += 1;
            }
            let m = mass.total();
            if before.total() + m >= alpha || i == atoms.len() {
                let gamma = if m > 0.0 {
                    ((alpha - before.total()) / m).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                return Ok(Self { boundary: level, gamma });
            }
            before.add(m);
        }
        domain("empty support")
    }

    /// Rejection probability at `(a, b)`.
    fn phi(&self, x: (u64, u64)) -> f64 {
        match cmp_ab(x, self.boundary) {
            Ordering::Less => 1.0,
            Ordering::Equal => self.gamma,
            Ordering::Greater => 0.0,
        }
    }
}

/// Type-II error of the exact Neyman-Pearson test at level `alpha`,
/// estimated from `samples` draws of `Q`. The test is calibrated on the
/// exact law of `P`, randomizing on the boundary ratio, and the reported
/// error averages the rejection probability rather than a coin flip.
pub fn estimate_beta_at_alpha(params: &ShuffleParams, alpha: f64, samples: u64, seed: u64) -> Result<McEstimate> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0, 1), got {alpha}"));
    }
    if samples < 10_000 {
        return domain(format!("need at least 10^4 samples, got {samples}"));
    }
    let test = NpTest::calibrate(params, alpha)?;
    let parts = chunked(samples, seed, side_index(Side::Q) << 32, |rng, len| {
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..len {
            let accept = 1.0 - test.phi(sample_pair(params, Side::Q, rng));
            s += accept;
            s2 += accept * accept;
        }
        (s, s2)
    });
    let (s, s2) = parts.into_iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let n = samples as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(McEstimate {
        value: mean,
        stderr: (var / n).sqrt(),
        samples,
        seed,
    })
}

fn plugin(p: &[u64], q: &[u64], np: f64, nq: f64, lambda: f64) -> f64 {
    let mut terms = Vec::with_capacity(p.len());
    for (&cp, &cq) in p.iter().zip(q) {
        if cp == 0 || cq == 0 {
            continue;
        }
        let lp = (cp as f64 / np).ln();
        let lq = (cq as f64 / nq).ln();
        terms.push(lambda * lp + (1.0 - lambda) * lq);
    }
    crate::dist::log_sum_exp(terms) / (lambda - 1.0)
}

fn resample<R: Rng + ?Sized>(counts: &[u64], total: u64, rng: &mut R) -> Vec<u64> {
    // multinomial by sequential conditional binomials
    let mut left = total;
    let mut mass_left = total;
    counts
        .iter()
        .map(|&c| {
            if left == 0 || mass_left == 0 {
                return 0;
            }
            let k = if c == mass_left {
                left
            } else {
                draw_binomial(left, c as f64 / mass_left as f64, rng)
            };
            left -= k;
            mass_left -= c;
            k
        })
        .collect()
}

/// Plug-in `D^lambda(P || Q)` from empirical PMFs, one estimate per order,
/// all from the same samples. Atoms unseen on either side are dropped.
/// The plug-in is biased upward at order `1/samples`; the reported value
/// subtracts the bootstrap estimate of that bias and the stderr is the
/// bootstrap standard deviation.
pub fn estimate_renyi_plugin_orders(
    params: &ShuffleParams,
    lambdas: &[f64],
    samples: u64,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    for &l in lambdas {
        check_order(l)?;
    }
    if params.n > 200 {
        return domain(format!("plug-in estimation is limited to n <= 200, got {}", params.n));
    }
    if samples < 100_000 {
        return domain(format!("need at least 10^5 samples per side, got {samples}"));
    }
    let cp = sample_counts(params, Side::P, samples, seed);
    let cq = sample_counts(params, Side::Q, samples, seed);
    let mut keys: Vec<(u64, u64)> = cp.keys().chain(cq.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let p: Vec<u64> = keys.iter().map(|k| cp.get(k).copied().unwrap_or(0)).collect();
    let q: Vec<u64> = keys.iter().map(|k| cq.get(k).copied().unwrap_or(0)).collect();
    let n = samples as f64;

    let boot: Vec<Vec<f64>> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = seeded_stream(seed, BOOTSTRAP_STREAM + b);
            let bp = resample(&p, samples, &mut rng);
            let bq = resample(&q, samples, &mut rng);
            lambdas.iter().map(|&l| plugin(&bp, &bq, n, n, l)).collect()
        })
        .collect();

    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            let point = plugin(&p, &q, n, n, l);
            let reps: Vec<f64> = boot.iter().map(|r| r[j]).collect();
            let m = reps.iter().sum::<f64>() / reps.len() as f64;
            let var = reps.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64;
            McEstimate {
                value: 2.0 * point - m,
                stderr: var.sqrt(),
                samples,
                seed,
            }
        })
        .collect())
}

pub fn estimate_renyi_plugin(params: &ShuffleParams, lambda: f64, samples: u64, seed: u64) -> Result<McEstimate> {
    Ok(estimate_renyi_plugin_orders(params, &[lambda], samples, seed)?[0])
}

/// How far standardized multinomial counts are from a standard normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: u64,
    pub samples: u64,
    /// Sample mean of each standardized coordinate.
    pub mean: [f64; 2],
    /// Sample covariance of the standardized coordinates.
    pub covariance: [[f64; 2]; 2],
    /// `max |mean_i|`.
    pub mean_deviation: f64,
    /// `max |covariance_ij - I_ij|`.
    pub covariance_deviation: f64,
    /// Kolmogorov distance between the first standardized coordinate and `N(0, 1)`.
    pub ks_distance: f64,
}

/// Draws the counts `(n0, n1)` of `Multinom(n - 1; p/2, p/2, 1 - p)`,
/// whitens them with the exact mean and covariance, and reports moment
/// deviations and a Kolmogorov distance. No claim about the rate is made.
pub fn clt_diagnostic(params: &ShuffleParams, samples: u64, seed: u64) -> Result<CltReport> {
    if samples < 100_000 {
        return domain(format!("need at least 10^5 samples, got {samples}"));
    }
    let m = multinomial_moments(params)?;
    let s = m.covariance;
    let l11 = s[0][0].sqrt();
    let l21 = s[1][0] / l11;
    let l22_sq = s[1][1] - l21 * l21;
    if !(l11 > 0.0 && l22_sq > 1e-12 * s[1][1]) {
        return domain("the count covariance is singular at these parameters");
    }
    let l22 = l22_sq.sqrt();
    let standardize = |n0: u64, n1: u64| {
        let x0 = n0 as f64 - m.mean[0];
        let x1 = n1 as f64 - m.mean[1];
        let z0 = x0 / l11;
        (z0, (x1 - l21 * z0) / l22)
    };
    let parts = chunked(samples, seed, 2 << 32, |rng, len| {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let c = draw_binomial(params.n - 1, params.p(), rng);
            let a = draw_binomial(c, 0.5, rng);
            out.push(standardize(a, c - a));
        }
        out
    });
    let z: Vec<(f64, f64)> = parts.into_iter().flatten().collect();
    let nf = samples as f64;
    let mean = [
        z.iter().map(|v| v.0).sum::<f64>() / nf,
        z.iter().map(|v| v.1).sum::<f64>() / nf,
    ];
    let mut cov = [[0.0; 2]; 2];
    for &(a, b) in &z {
        let d = [a - mean[0], b - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= nf - 1.0;
        }
    }
    let mean_deviation = mean[0].abs().max(mean[1].abs());
    let covariance_deviation = (cov[0][0] - 1.0)
        .abs()
        .max((cov[1][1] - 1.0).abs())
        .max(cov[0][1].abs());

    let mut first: Vec<f64> = z.iter().map(|v| v.0).collect();
    first.sort_by(f64::total_cmp);
    let mut ks: f64 = 0.0;
    let mut i = 0;
    while i < first.len() {
        let x = first[i];
        let below = i as f64 / nf;
        while i < first.len() && first[i] == x {
            i += 1;
        }
        let at = i as f64 / nf;
        let phi = normal_cdf(x);
        ks = ks.max((at - phi).abs()).max((below - phi).abs());
    }
    Ok(CltReport {
        n: params.n,
        samples,
        mean,
        covariance: cov,
        mean_deviation,
        covariance_deviation,
        ks_distance: ks,
    })
}

/// [`clt_diagnostic`] at each `n`, sharing `epsilon0`, sample size and seed.
pub fn clt_trend(epsilon0: f64, ns: &[u64], samples: u64, seed: u64) -> Result<Vec<CltReport>> {
    ns.iter()
        .map(|&n| clt_diagnostic(&ShuffleParams::new(epsilon0, n)?, samples, seed))
        .collect()
}
