//! The two binomial mixtures whose distinguishability characterizes a
//! shuffled `epsilon0`-LDP process.
//!
//! With `p = exp(-epsilon0)`, `C ~ Bin(n-1, p)`, `A | C ~ Bin(C, 1/2)` and
//! `D ~ Bern(q)` for `q = e^epsilon0 / (e^epsilon0 + 1)`:
//!
//! * `P` is the law of `(A + D, C - A + 1 - D)`,
//! * `Q` is the law of `(A + 1 - D, C - A + D)`.
//!
//! An atom `(a, b)` lives on the diagonal `c = a + b - 1` and receives mass
//! from the two cells `A = a - 1` and `A = a`, so each atom is evaluated in
//! closed form rather than accumulated.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{log_add_exp, BinomialSpec, Neumaier};
use crate::error::{domain, Result};

/// A shuffled `epsilon0`-LDP process over `n` users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuffleParams {
    /// Local privacy budget in nats.
    pub epsilon0: f64,
    /// Number of users.
    pub n: u64,
}

impl ShuffleParams {
    /// `epsilon0 = 0` is accepted as the closed limit (P = Q).
    pub fn new(epsilon0: f64, n: u64) -> Result<Self> {
        if !(epsilon0 >= 0.0 && epsilon0.is_finite()) {
            return domain(format!("epsilon0 must be finite and >= 0, got {epsilon0}"));
        }
        if n == 0 {
            return domain("n must be at least 1");
        }
        Ok(Self { epsilon0, n })
    }

    /// `p = exp(-epsilon0)`.
    pub fn p(&self) -> f64 {
        (-self.epsilon0).exp()
    }

    /// Mixture weight `q = e^epsilon0 / (e^epsilon0 + 1) = 1 / (1 + p)`.
    pub fn q(&self) -> f64 {
        1.0 / (1.0 + self.p())
    }

    pub fn ln_q(&self) -> f64 {
        -self.p().ln_1p()
    }

    pub fn ln_one_minus_q(&self) -> f64 {
        -self.epsilon0 - self.p().ln_1p()
    }

    /// The law of `C`.
    pub fn count_spec(&self) -> BinomialSpec {
        BinomialSpec {
            trials: self.n - 1,
            success_prob: self.p(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    P,
    Q,
}

/// One diagonal `a + b = c + 1` of the support, atoms `a = a_lo, a_lo + 1, ...`.
#[derive(Debug, Clone, PartialEq)]
struct Row {
    c: u64,
    a_lo: u64,
    log_mass: Vec<f64>,
}

/// Truncated PMF of one side of the pair, in natural-log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPmf {
    side: Side,
    params: ShuffleParams,
    rows: Vec<Row>,
    neglected_mass: f64,
}

impl PairPmf {
    pub fn side(&self) -> Side {
        self.side
    }

    pub fn params(&self) -> &ShuffleParams {
        &self.params
    }

    /// Certified upper bound on the probability left out by truncation.
    pub fn neglected_mass(&self) -> f64 {
        self.neglected_mass
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(|r| r.log_mass.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Atoms as `(a, b, ln mass)`, ordered by `(a + b, a)`.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64, f64)> + '_ {
        self.rows.iter().flat_map(|row| {
            row.log_mass.iter().enumerate().map(move |(i, &lp)| {
                let a = row.a_lo + i as u64;
                (a, row.c + 1 - a, lp)
            })
        })
    }

    /// `ln` mass at `(a, b)`, or `None` outside the stored support.
    pub fn log_mass(&self, a: u64, b: u64) -> Option<f64> {
        let c = (a + b).checked_sub(1)?;
        let idx = self.rows.binary_search_by_key(&c, |r| r.c).ok()?;
        let row = &self.rows[idx];
        let off = a.checked_sub(row.a_lo)? as usize;
        row.log_mass.get(off).copied()
    }

    /// Sum of the stored masses.
    pub fn total_mass(&self) -> f64 {
        let mut acc = Neumaier::default();
        for (_, _, lp) in self.iter() {
            acc.add(lp.exp());
        }
        acc.total()
    }

    /// Same atoms in the same order as `other`.
    pub fn same_support(&self, other: &PairPmf) -> bool {
        self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(x, y)| x.c == y.c && x.a_lo == y.a_lo && x.log_mass.len() == y.log_mass.len())
    }

    /// Debug dump with header `a,b,log_p`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "a,b,log_p")?;
        for (a, b, lp) in self.iter() {
            writeln!(out, "{a},{b},{lp}")?;
        }
        Ok(())
    }
}

/// Both sides of the shuffled pair, built over a common support.
#[derive(Debug, Clone, PartialEq)]
pub struct ShufflePair {
    pub params: ShuffleParams,
    pub p: PairPmf,
    pub q: PairPmf,
}

impl ShufflePair {
    pub fn side(&self, side: Side) -> &PairPmf {
        match side {
            Side::P => &self.p,
            Side::Q => &self.q,
        }
    }
}

/// Builds `P` and `Q` truncated so that at most `tail_tol` probability is
/// dropped from either side; the certified bound is in
/// [`PairPmf::neglected_mass`].
pub fn build_pair(params: &ShuffleParams, tail_tol: f64) -> Result<ShufflePair> {
    if !(tail_tol > 0.0 && tail_tol <= 1e-6) {
        return domain(format!("tail_tol must lie in (0, 1e-6], got {tail_tol}"));
    }
    build(params, Some(tail_tol))
}

/// Builds `P` and `Q` over their full support with no truncation. The
/// support has `n (n + 3) / 2` atoms, so this is meant for small `n`.
pub fn build_pair_untruncated(params: &ShuffleParams) -> Result<ShufflePair> {
    if params.n > 4_000 {
        return domain(format!("untruncated build refused for n = {}", params.n));
    }
    build(params, None)
}

fn build(params: &ShuffleParams, tail_tol: Option<f64>) -> Result<ShufflePair> {
    let count = params.count_spec();
    let (c_lo, c_hi, c_tail) = match tail_tol {
        Some(tol) => {
            let w = count.central_window(tol / 4.0);
            (w.lo, w.hi, w.neglected())
        }
        None => (0, count.trials, 0.0),
    };
    let ln_q = params.ln_q();
    let ln_1mq = params.ln_one_minus_q();

    let rows: Vec<(Row, Row, f64)> = (c_lo..=c_hi)
        .into_par_iter()
        .map(|c| {
            let ln_pi = count.ln_pmf(c);
            let split = BinomialSpec {
                trials: c,
                success_prob: 0.5,
            };
            let (k_lo, k_hi, a_tail) = match tail_tol {
                Some(tol) => {
                    let w = split.central_window(tol / 4.0);
                    // keep the window mirror-symmetric so swap symmetry is structural
                    let hi = w.hi.max(c - w.lo);
                    (c - hi, hi, w.left_tail.max(w.right_tail) * 2.0)
                }
                None => (0, c, 0.0),
            };
            let ln_b = |k: i64| -> f64 {
                if k < 0 || k as u64 > c {
                    f64::NEG_INFINITY
                } else {
                    split.ln_pmf(k as u64)
                }
            };
            let a_lo = k_lo;
            let a_hi = k_hi + 1;
            let mut p_row = Vec::with_capacity((a_hi - a_lo + 1) as usize);
            let mut q_row = Vec::with_capacity((a_hi - a_lo + 1) as usize);
            let mut prev = ln_b(a_lo as i64 - 1);
            for a in a_lo..=a_hi {
                let cur = ln_b(a as i64);
                p_row.push(ln_pi + log_add_exp(ln_q + prev, ln_1mq + cur));
                q_row.push(ln_pi + log_add_exp(ln_1mq + prev, ln_q + cur));
                prev = cur;
            }
            let neglected = ln_pi.exp() * a_tail;
            (
                Row { c, a_lo, log_mass: p_row },
                Row { c, a_lo, log_mass: q_row },
                neglected,
            )
        })
        .collect();

    let mut neglected = Neumaier::default();
    neglected.add(c_tail);
    let mut p_rows = Vec::with_capacity(rows.len());
    let mut q_rows = Vec::with_capacity(rows.len());
    for (p_row, q_row, ng) in rows {
        neglected.add(ng);
        p_rows.push(p_row);
        q_rows.push(q_row);
    }
    let neglected_mass = neglected.total().min(1.0);
    Ok(ShufflePair {
        params: *params,
        p: PairPmf {
            side: Side::P,
            params: *params,
            rows: p_rows,
            neglected_mass,
        },
        q: PairPmf {
            side: Side::Q,
            params: *params,
            rows: q_rows,
            neglected_mass,
        },
    })
}

/// `Q(a, b) / P(a, b)` from the stored masses.
pub fn likelihood_ratio(pair: &ShufflePair, a: u64, b: u64) -> Result<f64> {
    match (pair.p.log_mass(a, b), pair.q.log_mass(a, b)) {
        (Some(lp), Some(lq)) => Ok((lq - lp).exp()),
        _ => domain(format!("atom ({a}, {b}) is outside the stored support")),
    }
}
