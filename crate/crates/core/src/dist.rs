//! Probability primitives: log-space binomial PMFs and certified tail
//! windows, the standard normal CDF/quantile, Laplace sampling on explicit
//! streams, and multinomial moments of the count vector behind the shuffled
//! pair.

use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::pairdist::ShuffleParams;

/// Random stream used throughout the crate.
pub type Stream = ChaCha12Rng;

/// Stream `id` of the family keyed by `seed`. Distinct ids give
/// independent, non-overlapping streams.
pub fn seeded_stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialSpec {
    pub trials: u64,
    pub success_prob: f64,
}

impl BinomialSpec {
    pub fn new(trials: u64, success_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&success_prob) {
            return domain(format!("success probability {success_prob} outside [0, 1]"));
        }
        Ok(Self {
            trials,
            success_prob,
        })
    }

    pub(crate) fn ln_pmf(&self, k: u64) -> f64 {
        ln_binom_raw(k, self.trials, self.success_prob, 1.0 - self.success_prob)
    }

    fn mode(&self) -> u64 {
        let m = ((self.trials + 1) as f64 * self.success_prob).floor() as u64;
        m.min(self.trials)
    }
}

/// `ln P(Bin(trials, p) = k)`.
pub fn log_binomial_pmf(k: u64, spec: &BinomialSpec) -> Result<f64> {
    if k > spec.trials {
        return domain(format!("k={k} exceeds trials={}", spec.trials));
    }
    Ok(spec.ln_pmf(k))
}

// Loader's saddle-point evaluation. Accurate to a few ulps in relative
// terms for any trial count, unlike log-gamma differences which lose
// absolute precision as the arguments grow.
fn ln_binom_raw(x: u64, n: u64, p: f64, q: f64) -> f64 {
    if p == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if q == 0.0 {
        return if x == n { 0.0 } else { f64::NEG_INFINITY };
    }
    let nf = n as f64;
    if x == 0 {
        if n == 0 {
            return 0.0;
        }
        return if p < 0.1 {
            -bd0(nf, nf * q) - nf * p
        } else {
            nf * q.ln()
        };
    }
    if x == n {
        return if q < 0.1 {
            -bd0(nf, nf * p) - nf * q
        } else {
            nf * p.ln()
        };
    }
    let xf = x as f64;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, nf * p) - bd0(nf - xf, nf * q);
    let lf = LN_2PI + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

/// `ln n! - ((n + 1/2) ln n - n + ln sqrt(2 pi))`.
fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15 {
        if n == 0 {
            return 0.0;
        }
        // n! is exact in f64 up to 15!.
        let fact: f64 = (1..=n).map(|i| i as f64).product();
        let nf = n as f64;
        return fact.ln() - ((nf + 0.5) * nf.ln() - nf + LN_SQRT_2PI);
    }
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        if s.abs() < f64::MIN_POSITIVE {
            return s;
        }
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / f64::from(2 * j + 1);
            if s1 == s {
                return s1;
            }
            s = s1;
        }
    }
    x * (x / np).ln() + np - x
}

/// Contiguous index window `[lo, hi]` of a binomial together with
/// certified upper bounds on the mass left out on each side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Window {
    pub lo: u64,
    pub hi: u64,
    pub left_tail: f64,
    pub right_tail: f64,
}

impl Window {
    pub fn neglected(&self) -> f64 {
        self.left_tail + self.right_tail
    }
}

impl BinomialSpec {
    // pmf(k+1)/pmf(k)
    fn ratio_up(&self, k: u64) -> f64 {
        let p = self.success_prob;
        (self.trials - k) as f64 / (k + 1) as f64 * (p / (1.0 - p))
    }

    // pmf(k-1)/pmf(k)
    fn ratio_down(&self, k: u64) -> f64 {
        let p = self.success_prob;
        k as f64 / (self.trials - k + 1) as f64 * ((1.0 - p) / p)
    }

    /// Geometric bound on `sum_{j >= k} pmf(j)`; valid past the mode since
    /// the successive ratios decrease.
    fn right_tail_bound(&self, k: u64) -> f64 {
        if k > self.trials {
            return 0.0;
        }
        if k == self.trials {
            return self.ln_pmf(k).exp();
        }
        let r = self.ratio_up(k);
        if r >= 1.0 {
            return f64::INFINITY;
        }
        self.ln_pmf(k).exp() / (1.0 - r)
    }

    fn left_tail_bound(&self, k: u64) -> f64 {
        if k == 0 {
            return self.ln_pmf(0).exp();
        }
        let s = self.ratio_down(k);
        if s >= 1.0 {
            return f64::INFINITY;
        }
        self.ln_pmf(k).exp() / (1.0 - s)
    }

    /// Exact sum of the first terms of the right tail from `k`, closed by
    /// the geometric bound on what remains.
    fn certified_right_tail(&self, k: u64) -> f64 {
        const TERMS: u64 = 64;
        let mut acc = 0.0;
        let mut j = k;
        while j <= self.trials && j < k + TERMS {
            acc += self.ln_pmf(j).exp();
            j += 1;
        }
        acc + self.right_tail_bound(j)
    }

    fn certified_left_tail(&self, k: u64) -> f64 {
        const TERMS: u64 = 64;
        let mut acc = 0.0;
        let mut j = k as i64;
        let stop = k as i64 - TERMS as i64;
        while j >= 0 && j > stop {
            acc += self.ln_pmf(j as u64).exp();
            j -= 1;
        }
        if j >= 0 {
            acc += self.left_tail_bound(j as u64);
        }
        acc
    }

    /// Smallest window around the mode whose tails are each certified to
    /// carry at most `tol` mass.
    pub(crate) fn central_window(&self, tol: f64) -> Window {
        let n = self.trials;
        let p = self.success_prob;
        if n == 0 || p == 0.0 {
            return Window { lo: 0, hi: 0, left_tail: 0.0, right_tail: 0.0 };
        }
        if p == 1.0 {
            return Window { lo: n, hi: n, left_tail: 0.0, right_tail: 0.0 };
        }
        let m = self.mode();
        // smallest hi in [m, n] with bound(hi + 1) <= tol
        let (mut a, mut b) = (m, n);
        while a < b {
            let mid = a + (b - a) / 2;
            if self.right_tail_bound(mid + 1) <= tol {
                b = mid;
            } else {
                a = mid + 1;
            }
        }
        let hi = a;
        // largest lo in [0, m] with bound(lo - 1) <= tol
        let (mut a, mut b) = (0u64, m);
        while a < b {
            let mid = a + (b - a).div_ceil(2);
            if self.left_tail_bound(mid - 1) <= tol {
                a = mid;
            } else {
                b = mid - 1;
            }
        }
        let lo = a;
        let right_tail = if hi >= n { 0.0 } else { self.certified_right_tail(hi + 1) };
        let left_tail = if lo == 0 { 0.0 } else { self.certified_left_tail(lo - 1) };
        Window { lo, hi, left_tail, right_tail }
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF, `erfc(-x / sqrt 2) / 2`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, finite far into the lower tail.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -35.0 {
        return normal_cdf(x).ln();
    }
    // Asymptotic Mills-ratio series; the truncation error is below 1e-12
    // relative for x <= -35.
    let z = 1.0 / (x * x);
    let series = 1.0 - z * (1.0 - 3.0 * z * (1.0 - 5.0 * z * (1.0 - 7.0 * z)));
    -0.5 * x * x - (-x).ln() - LN_SQRT_2PI + series.ln()
}

/// Inverse of [`normal_cdf`] on the open unit interval.
pub fn normal_quantile(u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return domain(format!("normal quantile argument {u} outside (0, 1)"));
    }
    if u > 0.5 {
        // 1 - u is exact here.
        return Ok(-lower_quantile(1.0 - u));
    }
    Ok(lower_quantile(u))
}

// Rational initial guess (Acklam) refined by two Halley steps; u <= 1/2.
fn lower_quantile(u: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if u < P_LOW {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    for _ in 0..2 {
        let e = normal_cdf(x) - u;
        let t = e / normal_pdf(x);
        if !t.is_finite() {
            break;
        }
        x -= t / (1.0 + 0.5 * x * t);
    }
    x
}

/// `dim` independent Laplace(0, scale) draws from `rng`.
pub fn laplace_sample<R: rand::Rng + ?Sized>(scale: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(scale > 0.0 && scale.is_finite()) {
        return domain(format!("laplace scale must be positive and finite, got {scale}"));
    }
    if dim == 0 {
        return domain("laplace dimension must be positive");
    }
    Ok((0..dim)
        .map(|_| {
            let u: f64 = Open01.sample(rng);
            let c = u - 0.5;
            -scale * c.signum() * (-2.0 * c.abs()).ln_1p()
        })
        .collect())
}

/// Mean vector and covariance of `Multinom(n - 1; p/2, p/2, 1 - p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultinomialMoments {
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

pub fn multinomial_moments(params: &ShuffleParams) -> Result<MultinomialMoments> {
    if params.n < 2 {
        return domain(format!("multinomial moments need n >= 2, got {}", params.n));
    }
    let m = (params.n - 1) as f64;
    let p = params.p();
    let half = p / 2.0;
    let diag = half * (1.0 - half);
    let cross = -p * p / 4.0;
    let edge = -p * (1.0 - p) / 2.0;
    let last = p * (1.0 - p);
    Ok(MultinomialMoments {
        mean: [m * half, m * half, m * (1.0 - p)],
        covariance: [
            [m * diag, m * cross, m * edge],
            [m * cross, m * diag, m * edge],
            [m * edge, m * edge, m * last],
        ],
    })
}

/// Mahalanobis distance `(mu1 - mu0)' Sigma^-1 (mu1 - mu0)` between the two
/// shifted count vectors `(n0 + 1, n1)` and `(n0, n1 + 1)`, using the
/// leading 2x2 block of the multinomial covariance. Equals `4 / ((n-1) p)`.
pub fn pair_quadratic_form(params: &ShuffleParams) -> Result<f64> {
    let moments = multinomial_moments(params)?;
    let s = moments.covariance;
    let (a, b, c, d) = (s[0][0], s[0][1], s[1][0], s[1][1]);
    let det = a * d - b * c;
    if !det.is_finite() || det <= 1e-300 {
        return domain(format!(
            "pair covariance is singular (p = {}, n = {})",
            params.p(),
            params.n
        ));
    }
    let inv = [[d / det, -b / det], [-c / det, a / det]];
    let mu0 = [moments.mean[0] + 1.0, moments.mean[1]];
    let mu1 = [moments.mean[0], moments.mean[1] + 1.0];
    let diff = [mu1[0] - mu0[0], mu1[1] - mu0[1]];
    let v = [
        inv[0][0] * diff[0] + inv[0][1] * diff[1],
        inv[1][0] * diff[0] + inv[1][1] * diff[1],
    ];
    Ok(diff[0] * v[0] + diff[1] * v[1])
}

/// `ln(e^a + e^b)`.
pub(crate) fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln sum exp(x_i)`.
pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let terms: Vec<f64> = terms.into_iter().collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let mut sum = Neumaier::default();
    for t in &terms {
        sum.add((t - max).exp());
    }
    max + sum.total().ln()
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}
