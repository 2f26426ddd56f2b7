//! Brute-force oracle: full enumeration of `(C, A, Delta)` with plain
//! products, independent of the log-space machinery in the library.
#![allow(dead_code)]

use std::collections::BTreeMap;

pub type Pmf = BTreeMap<(u64, u64), f64>;

fn choose(n: u64, k: u64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

/// `(P, Q)` as maps from atom to probability.
pub fn enumerate(epsilon0: f64, n: u64) -> (Pmf, Pmf) {
    let p = (-epsilon0).exp();
    let q = epsilon0.exp() / (epsilon0.exp() + 1.0);
    let mut pp = Pmf::new();
    let mut qq = Pmf::new();
    for c in 0..n {
        let pc = choose(n - 1, c) * p.powi(c as i32) * (1.0 - p).powi((n - 1 - c) as i32);
        for a in 0..=c {
            let pa = choose(c, a) * 0.5f64.powi(c as i32);
            for delta in 0..2u64 {
                let pd = if delta == 1 { q } else { 1.0 - q };
                let w = pc * pa * pd;
                *pp.entry((a + delta, c - a + 1 - delta)).or_insert(0.0) += w;
                *qq.entry((a + 1 - delta, c - a + delta)).or_insert(0.0) += w;
            }
        }
    }
    for k in pp.keys().copied().collect::<Vec<_>>() {
        qq.entry(k).or_insert(0.0);
    }
    for k in qq.keys().copied().collect::<Vec<_>>() {
        pp.entry(k).or_insert(0.0);
    }
    (pp, qq)
}

pub fn renyi(p: &Pmf, q: &Pmf, lambda: f64) -> f64 {
    let s: f64 = p
        .iter()
        .filter(|(_, &v)| v > 0.0)
        .map(|(k, &v)| v.powf(lambda) * q[k].powf(1.0 - lambda))
        .sum();
    s.ln() / (lambda - 1.0)
}

/// Neyman-Pearson breakpoints of `T(P, Q)`: atoms ordered by `a / b`
/// (the ratio `Q/P` falls as `a / b` grows), equal `a / b` merged.
pub fn np_breakpoints(p: &Pmf, q: &Pmf) -> Vec<(f64, f64)> {
    let mut atoms: Vec<((u64, u64), f64, f64)> = p.iter().map(|(k, &v)| (*k, v, q[k])).collect();
    atoms.sort_by(|x, y| (x.0 .0 * y.0 .1).cmp(&(y.0 .0 * x.0 .1)));
    let mut out = vec![(0.0, 1.0)];
    let (mut alpha, mut beta) = (0.0, 1.0);
    let mut i = 0;
    while i < atoms.len() {
        let head = atoms[i].0;
        while i < atoms.len() && atoms[i].0 .0 * head.1 == head.0 * atoms[i].0 .1 {
            alpha += atoms[i].1;
            beta -= atoms[i].2;
            i += 1;
        }
        out.push((alpha, beta));
    }
    out
}

/// Piecewise-linear interpolation through `points`.
pub fn interpolate(points: &[(f64, f64)], alpha: f64) -> f64 {
    for w in points.windows(2) {
        if alpha <= w[1].0 {
            let t = (alpha - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + t * (w[1].1 - w[0].1);
        }
    }
    points.last().unwrap().1
}
