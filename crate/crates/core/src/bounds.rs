//! Closed-form accounting: the asymptotic GDP/RDP bounds for the shuffled
//! process, prior-work bounds for comparison, and GDP conversions.

use serde::{Deserialize, Serialize};

use crate::dist::{log_add_exp, log_normal_cdf};
use crate::error::{domain, Result};
use crate::pairdist::ShuffleParams;
use crate::renyi::{check_order, Flag, RdpPoint};

/// `mu`-GDP: testing is at least as hard as `N(0, 1)` against `N(mu, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdpParam {
    pub mu: f64,
}

impl GdpParam {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return domain(format!("GDP parameter must be finite and >= 0, got {mu}"));
        }
        Ok(Self { mu })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsDelta {
    pub epsilon: f64,
    pub delta: f64,
}

fn need_pairs(params: &ShuffleParams) -> Result<()> {
    if params.n < 2 {
        return domain("the asymptotic bounds need n >= 2");
    }
    Ok(())
}

/// `mu = 2 e^(eps0 / 2) / sqrt(n - 1)`.
pub fn theorem2_gdp(params: &ShuffleParams) -> Result<GdpParam> {
    need_pairs(params)?;
    Ok(GdpParam {
        mu: 2.0 * (0.5 * params.epsilon0).exp() / ((params.n - 1) as f64).sqrt(),
    })
}

/// `(lambda, mu^2 lambda / 2)`.
pub fn gdp_to_rdp(g: &GdpParam, lambda: f64) -> Result<RdpPoint> {
    check_order(lambda)?;
    Ok(RdpPoint::closed_form(lambda, 0.5 * g.mu * g.mu * lambda))
}

/// `(lambda, 2 e^eps0 lambda / (n - 1))` for `lambda >= 2`, obtained by
/// converting [`theorem2_gdp`].
pub fn corollary2_rdp(params: &ShuffleParams, lambda: f64) -> Result<RdpPoint> {
    if !(lambda >= 2.0 && lambda.is_finite()) {
        return domain(format!("this bound holds for lambda >= 2, got {lambda}"));
    }
    let mut point = gdp_to_rdp(&theorem2_gdp(params)?, lambda)?;
    point.flags.push(Flag::Asymptotic);
    Ok(point)
}

/// `delta(eps) = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2)`, evaluated
/// as a difference of log-CDFs so it stays accurate deep in the tail.
pub fn gdp_to_eps_delta(g: &GdpParam, epsilon: f64) -> Result<EpsDelta> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return domain(format!("epsilon must be >= 0, got {epsilon}"));
    }
    if g.mu == 0.0 || epsilon == f64::INFINITY {
        return Ok(EpsDelta { epsilon, delta: 0.0 });
    }
    let mu = g.mu;
    let la = log_normal_cdf(-epsilon / mu + 0.5 * mu);
    let lb = epsilon + log_normal_cdf(-epsilon / mu - 0.5 * mu);
    let raw = if la == f64::NEG_INFINITY {
        0.0
    } else {
        -la.exp() * (lb - la).exp_m1()
    };
    if !(-1e-12..=1.0 + 1e-12).contains(&raw) {
        return domain(format!("delta evaluated to {raw} at mu={mu}, epsilon={epsilon}"));
    }
    Ok(EpsDelta {
        epsilon,
        delta: raw.clamp(0.0, 1.0),
    })
}

/// `sqrt(sum mu_i^2)`.
pub fn gdp_compose(mus: &[f64]) -> Result<GdpParam> {
    if let Some(bad) = mus.iter().find(|m| !(**m >= 0.0 && m.is_finite())) {
        return domain(format!("GDP parameters must be finite and >= 0, got {bad}"));
    }
    // hypot chain avoids overflow in the squares
    Ok(GdpParam {
        mu: mus.iter().fold(0.0, |acc: f64, m| acc.hypot(*m)),
    })
}

/// Upper bound of Girgis et al. for integer `lambda >= 2`:
/// `1/(lambda-1) ln(exp(lambda^2 (e^eps0 - 1)^2 / nbar) + exp(eps0 lambda - (n-1)/(8 e^eps0)))`
/// with `nbar = floor((n - 1) / (2 e^eps0)) + 1`.
pub fn girgis_upper(params: &ShuffleParams, lambda: u32) -> Result<RdpPoint> {
    if lambda < 2 {
        return domain(format!("this bound holds for integer lambda >= 2, got {lambda}"));
    }
    need_pairs(params)?;
    let e0 = params.epsilon0;
    let l = lambda as f64;
    let nbar = (((params.n - 1) as f64) / (2.0 * e0.exp())).floor() + 1.0;
    let first = l * l * e0.exp_m1().powi(2) / nbar;
    let second = e0 * l - (params.n - 1) as f64 / (8.0 * e0.exp());
    Ok(RdpPoint::closed_form(l, log_add_exp(first, second) / (l - 1.0)))
}

/// Lower bound of Girgis et al.:
/// `1/(lambda-1) ln(1 + lambda (lambda-1) (e^eps0 - 1)^2 / (2 n e^eps0))`.
pub fn girgis_lower(params: &ShuffleParams, lambda: f64) -> Result<RdpPoint> {
    check_order(lambda)?;
    let e0 = params.epsilon0;
    let x = lambda * (lambda - 1.0) * e0.exp_m1().powi(2) / (2.0 * params.n as f64 * e0.exp());
    Ok(RdpPoint::closed_form(lambda, x.ln_1p() / (lambda - 1.0)))
}

/// `64 e^eps0 lambda / n`: the big-O rate of Feldman et al. with its
/// constant taken at face value. Always flagged as an approximate reference.
pub fn feldman_ref(params: &ShuffleParams, lambda: f64) -> Result<RdpPoint> {
    check_order(lambda)?;
    let mut point = RdpPoint::closed_form(lambda, 64.0 * params.epsilon0.exp() * lambda / params.n as f64);
    point.flags.push(Flag::ApproximateReference);
    Ok(point)
}
