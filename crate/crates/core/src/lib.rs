//! Renyi differential privacy accounting for the shuffle model.
//!
//! A shuffled process in which each of `n` users applies an `epsilon0`-LDP
//! randomizer reduces to distinguishing two explicit binomial mixtures over
//! integer pairs ([`pairdist`]). This crate computes the exact Renyi
//! divergence between them along two independent routes (direct summation
//! in [`renyi`], and integration of the Neyman-Pearson trade-off curve from
//! [`tradeoff`]), the asymptotic GDP/RDP bounds and the prior-work bounds in
//! [`bounds`], a Monte Carlo oracle in [`mc`], and a shuffled noisy SGD with
//! budget planning in [`sgd`].
//!
//! ```
//! use shuffle_rdp::{shuffle_rdp_exact, ShuffleParams, DEFAULT_TAIL_TOL};
//!
//! let params = ShuffleParams::new(1.0, 1000).unwrap();
//! let point = shuffle_rdp_exact(&params, 4.0, DEFAULT_TAIL_TOL).unwrap();
//! assert!(point.epsilon > 0.0 && point.epsilon < 1.0);
//! ```

pub mod bounds;
pub mod dist;
pub mod error;
pub mod mc;
pub mod pairdist;
pub mod renyi;
pub mod sgd;
pub mod tradeoff;

pub use bounds::{
    corollary2_rdp, feldman_ref, gdp_compose, gdp_to_eps_delta, gdp_to_rdp, girgis_lower,
    girgis_upper, theorem2_gdp, EpsDelta, GdpParam,
};
pub use error::{Error, Result};
pub use pairdist::{build_pair, likelihood_ratio, PairPmf, ShufflePair, ShuffleParams, Side};
pub use renyi::{
    renyi_direct, renyi_from_curve, shuffle_rdp_exact, Flag, RdpPoint, ShuffleAccountant,
};
pub use tradeoff::{gaussian_curve, h_closed_form, np_curve, GaussianTradeoff, TradeoffCurve};

/// Default truncation tolerance for [`build_pair`].
pub const DEFAULT_TAIL_TOL: f64 = 1e-15;
