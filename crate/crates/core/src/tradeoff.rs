//! Trade-off functions: the exact Neyman-Pearson curve between two
//! discrete laws, the threshold closed form for the shuffled pair, and the
//! Gaussian curve `alpha -> Phi(Phi^-1(1 - alpha) - mu)`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dist::{normal_cdf, normal_quantile, BinomialSpec, Neumaier};
use crate::error::{domain, Result};
use crate::pairdist::{PairPmf, ShuffleParams};
use crate::DEFAULT_TAIL_TOL;

/// Log-ratio gap below which adjacent atoms are treated as one
/// likelihood-ratio level.
const TIE_TOL: f64 = 1e-12;
/// Slack on the validity checks of user-supplied breakpoints.
const CURVE_TOL: f64 = 1e-12;

/// One linear piece of a trade-off curve: over a type-I increase of
/// `width` the type-II error falls by `drop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub width: f64,
    pub drop: f64,
}

impl Segment {
    pub fn slope(&self) -> f64 {
        -self.drop / self.width
    }
}

/// A convex, nonincreasing, piecewise-linear trade-off function on `[0, 1]`.
///
/// Curves built from probability masses keep the exact per-segment masses
/// in [`TradeoffCurve::segments`]; the breakpoints are their cumulative sums
/// and may merge segments too thin to move `alpha` in floating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffCurve {
    points: Vec<(f64, f64)>,
    segments: Vec<Segment>,
}

impl TradeoffCurve {
    /// `f(alpha) = 1 - alpha`.
    pub fn identity() -> Self {
        Self {
            points: vec![(0.0, 1.0), (1.0, 0.0)],
            segments: vec![Segment { width: 1.0, drop: 1.0 }],
        }
    }

    /// Validates and wraps a breakpoint list running from `(0, beta0)` to `(1, 0)`.
    pub fn from_breakpoints(points: Vec<(f64, f64)>) -> Result<Self> {
        validate(&points)?;
        let segments = points
            .windows(2)
            .map(|w| Segment {
                width: w[1].0 - w[0].0,
                drop: w[0].1 - w[1].1,
            })
            .collect();
        Ok(Self { points, segments })
    }

    /// Curve whose pieces are given in order of decreasing steepness, starting
    /// at `(0, 1)`. The last breakpoint is pinned to `(1, 0)`, absorbing any
    /// mass the segments do not account for.
    pub(crate) fn from_segments(segments: Vec<Segment>) -> Self {
        let mut points = vec![(0.0, 1.0)];
        let mut cum_p = Neumaier::default();
        let mut cum_q = Neumaier::default();
        for seg in &segments {
            cum_p.add(seg.width);
            cum_q.add(seg.drop);
            let alpha = cum_p.total().min(1.0);
            let beta = (1.0 - cum_q.total()).max(0.0);
            let last = points.last_mut().expect("nonempty");
            if alpha > last.0 {
                points.push((alpha, beta));
            } else {
                last.1 = last.1.min(beta);
            }
        }
        if points.len() > 1 {
            *points.last_mut().expect("nonempty") = (1.0, 0.0);
        } else {
            points.push((1.0, 0.0));
        }
        Self { points, segments }
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Linear interpolation between breakpoints.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return domain(format!("alpha {alpha} outside [0, 1]"));
        }
        let idx = self.points.partition_point(|p| p.0 <= alpha);
        if idx == 0 {
            return Ok(self.points[0].1);
        }
        if idx == self.points.len() {
            return Ok(self.points[idx - 1].1);
        }
        let (a0, b0) = self.points[idx - 1];
        let (a1, b1) = self.points[idx];
        if alpha == a0 {
            return Ok(b0);
        }
        let t = (alpha - a0) / (a1 - a0);
        Ok(b0 + t * (b1 - b0))
    }

    /// Lower convex envelope of `min(f, f^-1)`.
    pub fn symmetrize(&self) -> Self {
        let mut all: Vec<(f64, f64)> = self.points.clone();
        // f^-1 as a point set: reflect across the diagonal.
        all.extend(self.points.iter().map(|&(a, b)| (b, a)));
        all.push((1.0, 0.0));
        all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        all.dedup_by(|later, earlier| later.0 == earlier.0);

        let mut hull: Vec<(f64, f64)> = Vec::with_capacity(all.len());
        for p in all {
            while hull.len() >= 2 {
                let o = hull[hull.len() - 2];
                let a = hull[hull.len() - 1];
                let cross = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
                if cross <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        let segments = hull
            .windows(2)
            .map(|w| Segment {
                width: w[1].0 - w[0].0,
                drop: w[0].1 - w[1].1,
            })
            .collect();
        Self { points: hull, segments }
    }

    /// `ln integral_0^1 |f'(x)|^(1 - lambda) dx`, evaluated per segment in
    /// closed form. A flat piece makes the integral diverge.
    pub fn log_slope_moment(&self, lambda: f64) -> SlopeMoment {
        let mut terms = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            if seg.width <= 0.0 {
                // vertical drop: zero measure
                continue;
            }
            if seg.drop <= 0.0 {
                return SlopeMoment::Divergent;
            }
            terms.push(lambda * seg.width.ln() + (1.0 - lambda) * seg.drop.ln());
        }
        SlopeMoment::Finite(crate::dist::log_sum_exp(terms))
    }
}

fn validate(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 2 {
        return domain("a trade-off curve needs at least two breakpoints");
    }
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return domain("breakpoints must be finite");
    }
    if points[0].0 != 0.0 {
        return domain("first breakpoint must have alpha = 0");
    }
    let last = points[points.len() - 1];
    if last != (1.0, 0.0) {
        return domain("last breakpoint must be (1, 0)");
    }
    for w in points.windows(2) {
        if w[1].0 <= w[0].0 {
            return domain("breakpoint alphas must be strictly increasing");
        }
        if w[1].1 > w[0].1 + CURVE_TOL {
            return domain("breakpoint betas must be nonincreasing");
        }
    }
    for &(a, b) in points {
        if !(-CURVE_TOL..=1.0 + CURVE_TOL).contains(&b) || b > 1.0 - a + CURVE_TOL {
            return domain(format!("breakpoint ({a}, {b}) lies above 1 - alpha or outside [0, 1]"));
        }
    }
    for w in points.windows(3) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let (x2, y2) = w[2];
        let chord = y0 + (y2 - y0) * (x1 - x0) / (x2 - x0);
        if y1 > chord + CURVE_TOL {
            return domain(format!("curve is not convex at alpha = {x1}"));
        }
    }
    Ok(())
}

/// Result of integrating `|f'|^(1 - lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeMoment {
    Finite(f64),
    Divergent,
}

/// Exact trade-off `T(P, Q)`: reject `P` on the atoms with the largest
/// likelihood ratio `Q/P` first, randomizing within a ratio level.
pub fn np_curve(p: &PairPmf, q: &PairPmf) -> Result<TradeoffCurve> {
    if !p.same_support(q) {
        return domain("np_curve needs two PMFs over a common support");
    }
    if p.is_empty() {
        return domain("np_curve on an empty support");
    }
    struct Atom {
        log_ratio: f64,
        a: u64,
        b: u64,
        lp: f64,
        lq: f64,
    }
    let mut atoms: Vec<Atom> = p
        .iter()
        .zip(q.iter())
        .map(|((a, b, lp), (_, _, lq))| Atom {
            log_ratio: lq - lp,
            a,
            b,
            lp,
            lq,
        })
        .collect();
    atoms.sort_by(|x, y| {
        y.log_ratio
            .total_cmp(&x.log_ratio)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });

    let mut segments = Vec::new();
    let mut i = 0;
    while i < atoms.len() {
        let head = atoms[i].log_ratio;
        let mut width = Neumaier::default();
        let mut drop = Neumaier::default();
        while i < atoms.len() && head - atoms[i].log_ratio <= TIE_TOL {
            width.add(atoms[i].lp.exp());
            drop.add(atoms[i].lq.exp());
            i += 1;
        }
        let seg = Segment {
            width: width.total(),
            drop: drop.total(),
        };
        if seg.width > 0.0 || seg.drop > 0.0 {
            segments.push(seg);
        }
    }
    Ok(TradeoffCurve::from_segments(segments))
}

/// One evaluation of the threshold closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormPoint {
    /// Requested type-I error.
    pub alpha: f64,
    /// Type-I error of the threshold test actually chosen (`<= alpha`).
    pub achieved_alpha: f64,
    /// Threshold `t = g(alpha)` on the statistic `a / b`; `+inf` rejects nothing.
    pub threshold: f64,
    /// Type-II error of that test.
    pub beta: f64,
}

/// Deterministic threshold tests on `a / b` for the shuffled pair.
///
/// For each requested `alpha` the smallest threshold `t` with
/// `alpha(t) <= alpha` is found among the attainable ratios, and the type-II
/// error is
/// `beta = 1 - alpha(t) - c0 * sum_v P(C = v) P(A = floor((t v + t)/(t + 1)) | C = v)`
/// with `c0 = (1 - p) / (1 + p)`. The test is non-randomized, so the point
/// lies on the Neyman-Pearson curve when `alpha` is attainable and above
/// it otherwise.
pub fn h_closed_form(params: &ShuffleParams, alpha_grid: &[f64]) -> Result<Vec<ClosedFormPoint>> {
    h_closed_form_with_tol(params, alpha_grid, DEFAULT_TAIL_TOL)
}

pub fn h_closed_form_with_tol(
    params: &ShuffleParams,
    alpha_grid: &[f64],
    tail_tol: f64,
) -> Result<Vec<ClosedFormPoint>> {
    if let Some(bad) = alpha_grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return domain(format!("alpha {bad} outside [0, 1]"));
    }
    let form = ClosedForm::new(params, tail_tol)?;
    let thresholds = form.thresholds();
    alpha_grid
        .iter()
        .map(|&alpha| Ok(form.point(alpha, &thresholds)))
        .collect()
}

struct ClosedRow {
    prob: f64,
    v: u64,
    k_lo: u64,
    pmf: Vec<f64>,
    // tail[i] = P(A >= k_lo + i | C = v) within the window
    tail: Vec<f64>,
}

struct ClosedForm {
    q: f64,
    c0: f64,
    rows: Vec<ClosedRow>,
}

impl ClosedForm {
    fn new(params: &ShuffleParams, tail_tol: f64) -> Result<Self> {
        if !(tail_tol > 0.0 && tail_tol <= 1e-6) {
            return domain(format!("tail_tol must lie in (0, 1e-6], got {tail_tol}"));
        }
        let count = params.count_spec();
        let cw = count.central_window(tail_tol / 4.0);
        let rows = (cw.lo..=cw.hi)
            .map(|v| {
                let split = BinomialSpec {
                    trials: v,
                    success_prob: 0.5,
                };
                let w = split.central_window(tail_tol / 4.0);
                let pmf: Vec<f64> = (w.lo..=w.hi).map(|k| split.ln_pmf(k).exp()).collect();
                let mut tail = vec![0.0; pmf.len() + 1];
                for i in (0..pmf.len()).rev() {
                    tail[i] = tail[i + 1] + pmf[i];
                }
                ClosedRow {
                    prob: count.ln_pmf(v).exp(),
                    v,
                    k_lo: w.lo,
                    pmf,
                    tail,
                }
            })
            .collect();
        let p = params.p();
        Ok(Self {
            q: params.q(),
            c0: (1.0 - p) / (1.0 + p),
            rows,
        })
    }

    /// Attainable values of `a / b` with `b >= 1`, ascending and distinct.
    fn thresholds(&self) -> Vec<(u64, u64)> {
        let mut out: Vec<(u64, u64)> = Vec::new();
        for row in &self.rows {
            let k_hi = row.k_lo + row.pmf.len() as u64 - 1;
            for a in row.k_lo..=(k_hi + 1).min(row.v) {
                out.push((a, row.v + 1 - a));
            }
        }
        out.sort_by(|x, y| cmp_ratio(*x, *y));
        out.dedup_by(|x, y| cmp_ratio(*x, *y) == Ordering::Equal);
        out
    }

    fn tail_above(row: &ClosedRow, m: i64) -> f64 {
        // P(A > m | C = v)
        let idx = m + 1 - row.k_lo as i64;
        if idx <= 0 {
            row.tail[0]
        } else if idx as usize >= row.tail.len() {
            0.0
        } else {
            row.tail[idx as usize]
        }
    }

    fn mass_at(row: &ClosedRow, m: i64) -> f64 {
        let idx = m - row.k_lo as i64;
        if idx < 0 || idx as usize >= row.pmf.len() {
            0.0
        } else {
            row.pmf[idx as usize]
        }
    }

    /// `(alpha(t), sum_v P(C=v) P(A = A*_v | C=v))` for `t = num / den`.
    fn evaluate(&self, (num, den): (u64, u64)) -> (f64, f64) {
        let (mut x, mut y, mut d) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
        let s = (num + den) as i128;
        for row in &self.rows {
            let v = row.v as i128;
            let upper = (num as i128 * (v + 1)).div_euclid(s) as i64;
            let lower = (num as i128 * v - den as i128).div_euclid(s) as i64;
            x.add(row.prob * Self::tail_above(row, upper));
            y.add(row.prob * Self::tail_above(row, lower));
            d.add(row.prob * Self::mass_at(row, upper));
        }
        // Null law: (A + 1, C - A) with weight 1 - q, (A, C - A + 1) with weight q.
        let alpha = self.q * x.total() + (1.0 - self.q) * y.total();
        (alpha, d.total())
    }

    fn point(&self, alpha: f64, thresholds: &[(u64, u64)]) -> ClosedFormPoint {
        // relative: attainable levels can be closer than any fixed absolute slack
        const ALPHA_SLACK: f64 = 1e-13;
        if alpha >= 1.0 {
            return ClosedFormPoint {
                alpha,
                achieved_alpha: 1.0,
                threshold: f64::NEG_INFINITY,
                beta: 0.0,
            };
        }
        // alpha(t) is nonincreasing along the ascending threshold list.
        let j = thresholds.partition_point(|&t| self.evaluate(t).0 > alpha * (1.0 + ALPHA_SLACK));
        if j == thresholds.len() {
            return ClosedFormPoint {
                alpha,
                achieved_alpha: 0.0,
                threshold: f64::INFINITY,
                beta: 1.0,
            };
        }
        let t = thresholds[j];
        let (achieved, d) = self.evaluate(t);
        ClosedFormPoint {
            alpha,
            achieved_alpha: achieved,
            threshold: t.0 as f64 / t.1 as f64,
            beta: (1.0 - achieved - self.c0 * d).clamp(0.0, 1.0),
        }
    }
}

fn cmp_ratio(x: (u64, u64), y: (u64, u64)) -> Ordering {
    (x.0 as u128 * y.1 as u128).cmp(&(y.0 as u128 * x.1 as u128))
}

/// `T(N(0, 1), N(mu, 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTradeoff {
    pub mu: f64,
}

pub fn gaussian_curve(mu: f64) -> Result<GaussianTradeoff> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return domain(format!("GDP parameter must be finite and >= 0, got {mu}"));
    }
    Ok(GaussianTradeoff { mu })
}

impl GaussianTradeoff {
    /// `Phi(Phi^-1(1 - alpha) - mu)`.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return domain(format!("alpha {alpha} outside [0, 1]"));
        }
        if alpha == 0.0 {
            return Ok(1.0);
        }
        if alpha == 1.0 {
            return Ok(0.0);
        }
        let z = -normal_quantile(alpha)?;
        Ok(normal_cdf(z - self.mu))
    }

    /// `f'(alpha) = -exp(mu z - mu^2 / 2)` with `z = Phi^-1(1 - alpha)`.
    fn derivative(&self, alpha: f64) -> f64 {
        if self.mu == 0.0 {
            return -1.0;
        }
        if alpha <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if alpha >= 1.0 {
            return 0.0;
        }
        let z = -normal_quantile(alpha).expect("alpha inside (0, 1)");
        -(self.mu * z - 0.5 * self.mu * self.mu).exp()
    }

    /// Piecewise-linear chord approximation within `tol` in sup norm. The
    /// chords sit above the curve; the gap on each piece is bounded by the
    /// tangent lines at its ends.
    pub fn to_curve(&self, tol: f64) -> Result<TradeoffCurve> {
        if tol.is_nan() || tol <= 0.0 {
            return domain("approximation tolerance must be positive");
        }
        if self.mu == 0.0 {
            return Ok(TradeoffCurve::identity());
        }
        let f = |a: f64| self.eval(a).expect("alpha in range");
        let mut points = vec![(0.0, 1.0)];
        let mut stack = vec![(0.0f64, 1.0f64, 0u32)];
        while let Some((a, b, depth)) = stack.pop() {
            let (fa, fb) = (f(a), f(b));
            let (sa, sb) = (self.derivative(a), self.derivative(b));
            let gap = tangent_gap(a, fa, sa, b, fb, sb);
            if gap <= tol || depth >= 60 {
                points.push((b, fb));
            } else {
                let m = 0.5 * (a + b);
                stack.push((m, b, depth + 1));
                stack.push((a, m, depth + 1));
            }
        }
        points.dedup_by(|x, y| x.0 <= y.0);
        TradeoffCurve::from_breakpoints(points)
    }

    /// `ln integral_0^1 |f'|^(1 - lambda)`. Substituting
    /// `alpha = 1 - Phi(z)` turns the integrand into
    /// `phi(z) exp((1 - lambda)(mu z - mu^2/2))`, which is integrated by
    /// adaptive Simpson quadrature over the real line.
    pub fn log_slope_moment(&self, lambda: f64) -> SlopeMoment {
        let mu = self.mu;
        let k = 1.0 - lambda;
        let log_integrand = |z: f64| -0.5 * z * z - 0.918_938_533_204_672_8 + k * (mu * z - 0.5 * mu * mu);
        let center = k * mu;
        let peak = log_integrand(center);
        let g = |z: f64| (log_integrand(z) - peak).exp();
        let (lo, hi) = (center - 40.0, center + 40.0);
        let mut total = 0.0;
        // split at the peak so the first bisection sees the bulk
        for (a, b) in [(lo, center), (center, hi)] {
            let fa = g(a);
            let fb = g(b);
            let fm = g(0.5 * (a + b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            total += simpson(&g, a, b, fa, fm, fb, whole, 1e-15, 50);
        }
        SlopeMoment::Finite(peak + total.ln())
    }
}

fn tangent_gap(a: f64, fa: f64, sa: f64, b: f64, fb: f64, sb: f64) -> f64 {
    if sa == f64::NEG_INFINITY {
        // tangent at b evaluated at a bounds the chord from below
        return fa - (fb + sb * (a - b));
    }
    if (sa - sb).abs() <= f64::EPSILON * sa.abs().max(1.0) {
        return 0.0;
    }
    let x = (fb - fa + sa * a - sb * b) / (sa - sb);
    let chord = fa + (fb - fa) * (x - a) / (b - a);
    (chord - (fa + sa * (x - a))).max(0.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Curves whose `ln integral |f'|^(1 - lambda)` can be evaluated.
pub trait SlopeIntegral {
    fn log_slope_moment(&self, lambda: f64) -> SlopeMoment;

    /// Relative error of the returned integral.
    fn integral_error(&self) -> f64 {
        0.0
    }
}

impl SlopeIntegral for TradeoffCurve {
    fn log_slope_moment(&self, lambda: f64) -> SlopeMoment {
        TradeoffCurve::log_slope_moment(self, lambda)
    }
}

impl SlopeIntegral for GaussianTradeoff {
    fn log_slope_moment(&self, lambda: f64) -> SlopeMoment {
        GaussianTradeoff::log_slope_moment(self, lambda)
    }

    fn integral_error(&self) -> f64 {
        1e-10
    }
}

/// Free-function form of [`TradeoffCurve::symmetrize`].
pub fn curve_symmetrize(f: &TradeoffCurve) -> TradeoffCurve {
    f.symmetrize()
}

/// Free-function form of [`TradeoffCurve::eval`].
pub fn curve_eval(f: &TradeoffCurve, alpha: f64) -> Result<f64> {
    f.eval(alpha)
}
