//! Renyi divergence of the shuffled pair, by direct summation and through
//! the trade-off curve.

use serde::{Deserialize, Serialize};

use crate::dist::log_sum_exp;
use crate::error::{domain, Error, Result};
use crate::pairdist::{build_pair, PairPmf, ShufflePair, ShuffleParams};
use crate::tradeoff::{np_curve, SlopeIntegral, SlopeMoment, TradeoffCurve};

/// Annotations attached to an [`RdpPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Order-of-magnitude reference with a constant read off a table, not a certified bound.
    ApproximateReference,
    /// The divergence is infinite.
    Divergent,
    /// Valid only asymptotically in `n`.
    Asymptotic,
}

impl Flag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::ApproximateReference => "approximate_reference",
            Flag::Divergent => "divergent",
            Flag::Asymptotic => "asymptotic",
        }
    }
}

/// A guarantee `(lambda, epsilon)`; `error_bound` is the certified numerical
/// slack on `epsilon` (zero for closed forms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpPoint {
    pub lambda: f64,
    pub epsilon: f64,
    pub error_bound: f64,
    #[serde(default)]
    pub flags: Vec<Flag>,
}

impl RdpPoint {
    pub(crate) fn closed_form(lambda: f64, epsilon: f64) -> Self {
        Self {
            lambda,
            epsilon,
            error_bound: 0.0,
            flags: Vec::new(),
        }
    }

    pub fn has_flag(&self, flag: Flag) -> bool {
        self.flags.contains(&flag)
    }
}

pub(crate) fn check_order(lambda: f64) -> Result<()> {
    if !(lambda > 1.0 && lambda.is_finite()) {
        return domain(format!("Renyi order must be finite and > 1, got {lambda}"));
    }
    Ok(())
}

/// `D^lambda(P || Q) = 1/(lambda - 1) ln sum P^lambda Q^(1 - lambda)` over the
/// retained atoms. The mass dropped by truncation can add at most
/// `e^(lambda eps0) * neglected` to the sum, which is reported as
/// `error_bound`.
pub fn renyi_direct(p: &PairPmf, q: &PairPmf, lambda: f64) -> Result<RdpPoint> {
    check_order(lambda)?;
    if !p.same_support(q) {
        return domain("renyi_direct needs two PMFs from the same build");
    }
    let log_sum = log_sum_exp(
        p.iter()
            .zip(q.iter())
            .map(|((_, _, lp), (_, _, lq))| lambda * lp + (1.0 - lambda) * lq),
    );
    let eps0 = p.params().epsilon0;
    let neglected = p.neglected_mass().max(q.neglected_mass());
    let epsilon = (log_sum / (lambda - 1.0)).max(0.0);
    let slack = (lambda * eps0 + neglected.ln() - log_sum).exp();
    Ok(RdpPoint {
        lambda,
        epsilon,
        error_bound: slack.ln_1p() / (lambda - 1.0),
        flags: Vec::new(),
    })
}

/// `1/(lambda - 1) ln integral_0^1 |f'(x)|^(1 - lambda) dx`.
///
/// Exact per segment for piecewise-linear curves; quadrature for the
/// Gaussian curve. A flat piece before `alpha = 1` makes the integral
/// infinite, which is returned as `+inf` with [`Flag::Divergent`].
pub fn renyi_from_curve<C: SlopeIntegral + ?Sized>(f: &C, lambda: f64) -> Result<RdpPoint> {
    check_order(lambda)?;
    match f.log_slope_moment(lambda) {
        SlopeMoment::Divergent => Ok(RdpPoint {
            lambda,
            epsilon: f64::INFINITY,
            error_bound: 0.0,
            flags: vec![Flag::Divergent],
        }),
        SlopeMoment::Finite(log_int) => Ok(RdpPoint {
            lambda,
            epsilon: (log_int / (lambda - 1.0)).max(0.0),
            error_bound: f.integral_error().ln_1p() / (lambda - 1.0),
            flags: Vec::new(),
        }),
    }
}

/// Builds the pair and its trade-off curve once and answers RDP queries at
/// any order.
#[derive(Debug, Clone)]
pub struct ShuffleAccountant {
    params: ShuffleParams,
    pair: ShufflePair,
    curve: TradeoffCurve,
}

impl ShuffleAccountant {
    pub fn new(params: &ShuffleParams, tail_tol: f64) -> Result<Self> {
        let pair = build_pair(params, tail_tol)?;
        let curve = np_curve(&pair.p, &pair.q)?;
        Ok(Self {
            params: *params,
            pair,
            curve,
        })
    }

    pub fn params(&self) -> &ShuffleParams {
        &self.params
    }

    pub fn pair(&self) -> &ShufflePair {
        &self.pair
    }

    pub fn curve(&self) -> &TradeoffCurve {
        &self.curve
    }

    /// `max(D(P||Q), D(Q||P))`, checked against the curve route.
    pub fn rdp(&self, lambda: f64) -> Result<RdpPoint> {
        let pq = renyi_direct(&self.pair.p, &self.pair.q, lambda)?;
        let qp = renyi_direct(&self.pair.q, &self.pair.p, lambda)?;
        let via_curve = renyi_from_curve(&self.curve, lambda)?;
        let tolerance = 1e-9f64.max(pq.error_bound + via_curve.error_bound);
        let gap = (pq.epsilon - via_curve.epsilon).abs();
        if gap.is_nan() || gap > tolerance {
            return Err(Error::Consistency {
                lambda,
                direct: pq.epsilon,
                curve: via_curve.epsilon,
                tolerance,
            });
        }
        Ok(RdpPoint {
            lambda,
            epsilon: pq.epsilon.max(qp.epsilon),
            error_bound: pq.error_bound.max(qp.error_bound),
            flags: Vec::new(),
        })
    }
}

/// Exact RDP of the shuffled process at one order.
pub fn shuffle_rdp_exact(params: &ShuffleParams, lambda: f64, tail_tol: f64) -> Result<RdpPoint> {
    check_order(lambda)?;
    ShuffleAccountant::new(params, tail_tol)?.rdp(lambda)
}
